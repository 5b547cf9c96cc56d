//! Log formats: JSON Lines for records, CSV for numeric series. Every file
//! starts with a `# manifest: <hash>` line tying it to its run.

use std::io::{self, BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{AdevCurve, RabiPoint};
use crate::servo::FrequencySample;

pub const MANIFEST_PREFIX: &str = "# manifest: ";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub fn write_manifest_line(w: &mut dyn Write, hash: &str) -> io::Result<()> {
    writeln!(w, "{MANIFEST_PREFIX}{hash}")
}

/// Hash from a `# manifest:` line anywhere in the leading comment block.
pub fn read_manifest_hash(text: &str) -> Option<String> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.strip_prefix(MANIFEST_PREFIX))
        .map(|h| h.trim().to_owned())
}

/// Writes one JSON document per line.
pub struct JsonlWriter<W: Write> {
    inner: W,
}

impl<W: Write> JsonlWriter<W> {
    pub fn new(mut inner: W, manifest_hash: Option<&str>) -> io::Result<Self> {
        if let Some(h) = manifest_hash {
            write_manifest_line(&mut inner, h)?;
        }
        Ok(Self { inner })
    }

    pub fn write<T: Serialize>(&mut self, rec: &T) -> io::Result<()> {
        serde_json::to_writer(&mut self.inner, rec)?;
        self.inner.write_all(b"\n")
    }

    pub fn into_inner(self) -> W {
        self.inner
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Parses JSON Lines, skipping blank and `#` lines.
pub fn read_jsonl<T: DeserializeOwned>(r: impl BufRead) -> Result<Vec<T>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(
            serde_json::from_str(trimmed).map_err(|source| FormatError::Json { line: i + 1, source })?,
        );
    }
    Ok(out)
}

fn csv_reader(r: impl io::Read) -> csv::Reader<impl io::Read> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r)
}

/// Streams frequency samples as `t_s,df1_hz,df2_hz`.
pub struct FrequencyCsvWriter<W: Write> {
    inner: W,
}

impl<W: Write> FrequencyCsvWriter<W> {
    pub fn new(mut inner: W, manifest_hash: Option<&str>) -> io::Result<Self> {
        if let Some(h) = manifest_hash {
            write_manifest_line(&mut inner, h)?;
        }
        writeln!(inner, "t_s,df1_hz,df2_hz")?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, s: &FrequencySample) -> io::Result<()> {
        writeln!(self.inner, "{},{},{}", s.t_s, s.df1_hz, s.df2_hz)
    }

    pub fn into_inner(self) -> W {
        self.inner
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

pub fn read_frequency_csv(r: impl io::Read) -> Result<Vec<FrequencySample>, FormatError> {
    let mut rd = csv_reader(r);
    let mut out = Vec::new();
    for rec in rd.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

pub fn read_rabi_csv(r: impl io::Read) -> Result<Vec<RabiPoint>, FormatError> {
    let mut rd = csv_reader(r);
    let mut out = Vec::new();
    for rec in rd.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

pub fn write_rabi_csv(w: &mut dyn Write, points: &[RabiPoint]) -> io::Result<()> {
    writeln!(w, "t_s,p_hat,n_trials")?;
    for p in points {
        writeln!(w, "{},{},{}", p.t_s, p.p_hat, p.n_trials)?;
    }
    Ok(())
}

pub fn write_adev_csv(w: &mut dyn Write, curve: &AdevCurve, manifest_hash: Option<&str>) -> io::Result<()> {
    if let Some(h) = manifest_hash {
        write_manifest_line(w, h)?;
    }
    writeln!(w, "tau_s,sigma,sigma_err,n_pairs")?;
    for p in &curve.points {
        writeln!(w, "{},{:e},{:e},{}", p.tau, p.sigma, p.sigma_err, p.n_pairs)?;
    }
    Ok(())
}
