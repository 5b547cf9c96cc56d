use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clocksim_core::analysis::{
    adev, adev_registry, first_order_shifts, fit_rabi, fit_white_fm, log_spaced_taus, qpn, shift_registry,
    single_integrator_instability, AdevCurve, FrequencySeries, ShiftReport,
};
use clocksim_core::config::{load_config, PRESET_QPN_CONTRAST};
use clocksim_core::ensemble::ShuttleEvent;
use clocksim_core::output::{
    read_frequency_csv, read_jsonl, read_manifest_hash, read_rabi_csv, write_adev_csv, write_manifest_line,
    FrequencyCsvWriter, JsonlWriter,
};
use clocksim_core::physics::{closed_form_onres, lamb_dicke};
use clocksim_core::servo::{Clock, ClockError, ClockObserver, FrequencySample, ReportRecord, SideRecord};
use clocksim_core::ValidatedConfig;

use crate::manifest::{read_verified, sha256_hex, FileEntry, RunManifest};

pub const SIDES_FILE: &str = "sides.jsonl";
pub const REPORTS_FILE: &str = "reports.jsonl";
pub const SHUTTLE_FILE: &str = "shuttle.jsonl";
pub const FREQUENCY_FILE: &str = "frequency.csv";
pub const CONFIG_FILE: &str = "config.toml";

/// A failure and the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(code: u8, error: anyhow::Error) -> Self {
        Self { code, error }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: 1, error }
    }
}

pub type CmdResult<T = ()> = std::result::Result<T, Failure>;

// run

pub struct RunArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub duration: Option<f64>,
    pub out_dir: PathBuf,
}

/// Streams every record straight to its log file.
struct LogSink {
    sides: JsonlWriter<BufWriter<File>>,
    reports: JsonlWriter<BufWriter<File>>,
    shuttle: JsonlWriter<BufWriter<File>>,
    frequency: FrequencyCsvWriter<BufWriter<File>>,
    error: Option<io::Error>,
}

impl LogSink {
    fn create(dir: &Path, hash: &str) -> io::Result<Self> {
        let open = |name: &str| File::create(dir.join(name)).map(BufWriter::new);
        Ok(Self {
            sides: JsonlWriter::new(open(SIDES_FILE)?, Some(hash))?,
            reports: JsonlWriter::new(open(REPORTS_FILE)?, Some(hash))?,
            shuttle: JsonlWriter::new(open(SHUTTLE_FILE)?, Some(hash))?,
            frequency: FrequencyCsvWriter::new(open(FREQUENCY_FILE)?, Some(hash))?,
            error: None,
        })
    }

    fn keep(&mut self, r: io::Result<()>) {
        if let (Err(e), None) = (r, &self.error) {
            self.error = Some(e);
        }
    }

    fn finish(mut self) -> io::Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.sides.flush()?;
        self.reports.flush()?;
        self.shuttle.flush()?;
        self.frequency.flush()
    }
}

impl ClockObserver for LogSink {
    fn side(&mut self, rec: &SideRecord) {
        let r = self.sides.write(rec);
        self.keep(r);
    }
    fn cycle(&mut self, sample: &FrequencySample) {
        let r = self.frequency.write(sample);
        self.keep(r);
    }
    fn report(&mut self, rec: &ReportRecord) {
        let r = self.reports.write(rec);
        self.keep(r);
    }
    fn shuttle(&mut self, event: &ShuttleEvent) {
        let r = self.shuttle.write(event);
        self.keep(r);
    }
}

fn effective_config(args: &RunArgs, seed_override: Option<u64>) -> Result<ValidatedConfig> {
    let base = load_config(&args.config).map_err(|e| anyhow!("{}: {e}", args.config.display()))?;
    let seed = seed_override.or(args.seed);
    base.modified(|c| {
        if let Some(s) = seed {
            c.simulation.seed = s;
        }
        if let Some(d) = args.duration {
            c.simulation.duration_s = d;
        }
    })
    .map_err(|e| anyhow!("{e}"))
}

/// Runs one simulation into `out_dir` and writes its manifest.
pub fn run_one(args: &RunArgs, seed: Option<u64>, out_dir: &Path) -> CmdResult {
    let cfg = effective_config(args, seed)?;
    let toml = cfg.to_toml();
    let hash = sha256_hex(toml.as_bytes());
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let mut config_text = String::new();
    writeln!(config_text, "# manifest: {hash}").expect("string write");
    config_text.push_str(&toml);
    fs::write(out_dir.join(CONFIG_FILE), &config_text).context("writing config copy")?;

    let mut sink = LogSink::create(out_dir, &hash).context("creating logs")?;
    let mut clock = Clock::new(&cfg);
    let outcome = clock.run(cfg.simulation().duration_s, &mut sink);
    sink.finish().context("writing logs")?;

    let end_time_s = clock.summary().end_time_s;
    let status = match &outcome {
        Ok(_) => "complete".to_owned(),
        Err(e) => format!("aborted: {e}"),
    };
    let files = [CONFIG_FILE, SIDES_FILE, REPORTS_FILE, SHUTTLE_FILE, FREQUENCY_FILE]
        .iter()
        .map(|name| -> Result<FileEntry> {
            let bytes = fs::read(out_dir.join(name))?;
            Ok(FileEntry {
                path: (*name).to_owned(),
                sha256: sha256_hex(&bytes),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    RunManifest {
        config_hash: hash,
        seed: cfg.simulation().seed,
        start_time_s: 0.0,
        end_time_s,
        status,
        files,
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
    }
    .write(out_dir)?;

    match outcome {
        Ok(_) => Ok(()),
        Err(e @ ClockError::AllIonsLostTimeout { .. }) => Err(Failure::new(2, e.into())),
    }
}

/// Parses `a..b` (inclusive) or a comma-separated list of seeds.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = spec.split_once("..") {
        let a: u64 = a.trim().parse().context("sweep start")?;
        let b: u64 = b.trim().parse().context("sweep end")?;
        if b < a {
            bail!("empty sweep range {spec}");
        }
        return Ok((a..=b).collect());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<u64>().with_context(|| format!("bad seed {s:?}")))
        .collect()
}

/// Runs each seed in its own `seed-<n>` directory, several at a time.
pub fn run_sweep(args: &RunArgs, seeds: &[u64]) -> CmdResult {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(seeds.len().max(1));
    let results: Vec<(u64, CmdResult)> = std::thread::scope(|scope| {
        let chunks: Vec<&[u64]> = seeds.chunks(seeds.len().div_ceil(workers).max(1)).collect();
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|chunk| {
                scope.spawn(move || {
                    chunk
                        .iter()
                        .map(|&s| (s, run_one(args, Some(s), &args.out_dir.join(format!("seed-{s}")))))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut worst: Option<Failure> = None;
    for (seed, r) in results {
        if let Err(f) = r {
            eprintln!("seed {seed}: {:#}", f.error);
            if worst.as_ref().is_none_or(|w| f.code > w.code) {
                worst = Some(f);
            }
        }
    }
    worst.map_or(Ok(()), Err)
}

// adev

pub struct AdevArgs {
    pub series: PathBuf,
    pub taus: Option<Vec<f64>>,
    pub single_integrator: bool,
    pub estimator: String,
    pub fit_min: f64,
    pub fit_max: f64,
    pub min_pairs: usize,
    pub nu: Option<f64>,
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub no_verify: bool,
}

fn load_series(path: &Path, no_verify: bool) -> Result<(Vec<FrequencySample>, Option<String>)> {
    let text = read_verified(path, no_verify)?;
    let hash = read_manifest_hash(&text);
    let samples = read_frequency_csv(text.as_bytes()).with_context(|| format!("parsing {}", path.display()))?;
    if samples.len() < 2 {
        bail!("{} holds fewer than two samples", path.display());
    }
    Ok((samples, hash))
}

/// Clock frequency from `--nu`, a config, or the config copy beside the series.
fn resolve_nu(nu: Option<f64>, config: Option<&Path>, series: &Path) -> Result<f64> {
    if let Some(v) = nu {
        return Ok(v);
    }
    let path = match config {
        Some(p) => p.to_path_buf(),
        None => series.with_file_name(CONFIG_FILE),
    };
    let cfg = load_config(&path).map_err(|e| anyhow!("need --nu or a config ({}): {e}", path.display()))?;
    Ok(cfg.nu())
}

fn default_taus(samples: &[FrequencySample]) -> Vec<f64> {
    let tau0 = (samples[samples.len() - 1].t_s - samples[0].t_s) / (samples.len() - 1) as f64;
    let total = tau0 * samples.len() as f64;
    log_spaced_taus(tau0, (total / 4.0).max(tau0), 10)
}

pub fn compute_adev(args: &AdevArgs) -> Result<(AdevCurve, Option<String>)> {
    let (samples, hash) = load_series(&args.series, args.no_verify)?;
    let nu = resolve_nu(args.nu, args.config.as_deref(), &args.series)?;
    let series = FrequencySeries::from_samples(&samples, nu)?;
    let est = adev_registry()
        .resolve("ADEV estimator", &args.estimator)
        .map_err(|e| anyhow!("{e}"))?;
    let taus = args.taus.clone().unwrap_or_else(|| default_taus(&samples));
    let curve = if args.single_integrator {
        single_integrator_instability(&series, &taus, est.as_ref())
    } else {
        let y: Vec<f64> = series.df1.iter().map(|f| f / nu).collect();
        adev(est.as_ref(), &y, series.sample_period, &taus)
    };
    Ok((curve, hash))
}

pub fn cmd_adev(args: &AdevArgs) -> CmdResult {
    let (curve, hash) = compute_adev(args)?;
    if curve.points.is_empty() {
        return Err(anyhow!("series too short for every requested tau").into());
    }
    let mut buf = Vec::new();
    write_adev_csv(&mut buf, &curve, hash.as_deref()).context("formatting")?;
    match fit_white_fm(&curve, args.fit_min, args.fit_max, args.min_pairs) {
        Some(fit) => writeln!(
            buf,
            "# fit: a = {:e} /sqrt(tau) from {} points in [{}, {}] s",
            fit.a, fit.points_used, args.fit_min, args.fit_max
        ),
        None => writeln!(buf, "# fit: none (no usable points in [{}, {}] s)", args.fit_min, args.fit_max),
    }
    .context("formatting")?;
    emit(&buf, args.out.as_deref())?;
    Ok(())
}

fn emit(bytes: &[u8], out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => io::stdout().write_all(bytes).context("writing stdout"),
    }
}

// fit-rabi

pub struct FitRabiArgs {
    pub data: PathBuf,
    pub eta: Option<f64>,
    pub species_from: Option<PathBuf>,
    pub no_verify: bool,
}

pub fn cmd_fit_rabi(args: &FitRabiArgs) -> CmdResult {
    let text = fs::read_to_string(&args.data).with_context(|| format!("reading {}", args.data.display()))?;
    // Flop data is usually hand-made; verify it only if it claims a run.
    if read_manifest_hash(&text).is_some() {
        read_verified(&args.data, args.no_verify)?;
    }
    let eta = match (args.eta, &args.species_from) {
        (Some(e), _) => e,
        (None, Some(p)) => {
            let cfg = load_config(p).map_err(|e| anyhow!("{}: {e}", p.display()))?;
            lamb_dicke(cfg.species())
        }
        (None, None) => return Err(anyhow!("give --eta or --species-from").into()),
    };
    let data = read_rabi_csv(text.as_bytes()).with_context(|| format!("parsing {}", args.data.display()))?;
    let fit = fit_rabi(&data, eta).map_err(|e| anyhow!("{e}"))?;
    let mut json = serde_json::to_string_pretty(&fit).context("formatting")?;
    json.push('\n');
    emit(json.as_bytes(), None)?;
    Ok(())
}

// shift-report

pub struct ShiftArgs {
    pub reports: PathBuf,
    pub config: PathBuf,
    pub restriction: String,
    pub no_verify: bool,
}

pub fn compute_shifts(args: &ShiftArgs) -> Result<ShiftReport> {
    let text = read_verified(&args.reports, args.no_verify)?;
    let reports: Vec<ReportRecord> =
        read_jsonl(text.as_bytes()).with_context(|| format!("parsing {}", args.reports.display()))?;
    if reports.is_empty() {
        bail!("{} holds no reports", args.reports.display());
    }
    let cfg = load_config(&args.config).map_err(|e| anyhow!("{}: {e}", args.config.display()))?;
    let restriction = shift_registry()
        .resolve("shift restriction", &args.restriction)
        .map_err(|e| anyhow!("{e}"))?;
    Ok(first_order_shifts(&reports, cfg.servo(), restriction.as_ref()))
}

pub fn shift_table(rep: &ShiftReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} {:>7} {:>10} {:>10} {:>7}",
        "group", "count", "mean_hz", "stderr_hz", "z"
    );
    for g in &rep.groups {
        let _ = writeln!(
            s,
            "{:<16} {:>7} {:>10.4} {:>10.4} {:>7.2}{}",
            g.group,
            g.count,
            g.mean_hz,
            g.stderr_hz,
            g.z,
            if g.flagged { "  > 3 sigma" } else { "" }
        );
    }
    let _ = writeln!(s, "({} reports skipped)", rep.skipped_reports);
    s
}

/// Table on stderr, JSON on stdout.
pub fn cmd_shift_report(args: &ShiftArgs) -> CmdResult {
    let rep = compute_shifts(args)?;
    eprint!("{}", shift_table(&rep));
    let mut json = serde_json::to_string_pretty(&rep).context("formatting")?;
    json.push('\n');
    emit(json.as_bytes(), None)?;
    Ok(())
}

// plot-data

pub struct PlotArgs {
    pub run_dir: PathBuf,
    pub out_dir: Option<PathBuf>,
    pub no_verify: bool,
}

/// Writes gnuplot tables: instability, flop curves, per-site shifts and
/// clock-site occupancy.
pub fn cmd_plot_data(args: &PlotArgs) -> CmdResult {
    let dir = &args.run_dir;
    let out = args.out_dir.clone().unwrap_or_else(|| dir.join("plot"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let cfg_path = dir.join(CONFIG_FILE);
    read_verified(&cfg_path, args.no_verify)?;
    let cfg = load_config(&cfg_path).map_err(|e| anyhow!("{}: {e}", cfg_path.display()))?;

    let adev_args = AdevArgs {
        series: dir.join(FREQUENCY_FILE),
        taus: None,
        single_integrator: true,
        estimator: "overlapping".into(),
        fit_min: 10.0,
        fit_max: 300.0,
        min_pairs: 10,
        nu: Some(cfg.nu()),
        config: None,
        out: None,
        no_verify: args.no_verify,
    };
    let (curve, hash) = compute_adev(&adev_args)?;
    let hash = hash.unwrap_or_default();
    let servo = cfg.servo();
    let n = cfg.simulation().n_sites;

    let mut s = header(&hash, "tau_s sigma sigma_err qpn_limit");
    for p in &curve.points {
        let limit = qpn(cfg.nu(), PRESET_QPN_CONTRAST, servo.probe_time_s, cfg.cycle_time(), n, p.tau);
        let _ = writeln!(s, "{} {:e} {:e} {:e}", p.tau, p.sigma, p.sigma_err, limit);
    }
    write_table(&out, "adev.dat", &s)?;

    let eta = lamb_dicke(cfg.species());
    let mut s = header(&hash, "t_s p_site1 .. p_siteN");
    for k in 0..=200 {
        let t = k as f64 * 5e-6;
        let _ = write!(s, "{t}");
        for site in cfg.sites() {
            let p = closed_form_onres(t, site.contrast, site.rabi_freq_rad_s, site.nbar, site.bias, eta);
            let _ = write!(s, " {p}");
        }
        s.push('\n');
    }
    write_table(&out, "rabi.dat", &s)?;

    let rep = compute_shifts(&ShiftArgs {
        reports: dir.join(REPORTS_FILE),
        config: cfg_path.clone(),
        restriction: "per-site".into(),
        no_verify: args.no_verify,
    })?;
    let mut s = header(&hash, "index mean_hz stderr_hz count \"group\"");
    for (i, g) in rep.groups.iter().enumerate() {
        let _ = writeln!(s, "{i} {} {} {} \"{}\"", g.mean_hz, g.stderr_hz, g.count, g.group);
    }
    write_table(&out, "shifts.dat", &s)?;

    let text = read_verified(&dir.join(REPORTS_FILE), args.no_verify)?;
    let reports: Vec<ReportRecord> = read_jsonl(text.as_bytes()).context("parsing reports")?;
    let mut s = header(&hash, "t_s sites_present");
    for r in &reports {
        let _ = writeln!(s, "{} {}", r.timestamp_s, r.present.iter().filter(|&&p| p).count());
    }
    write_table(&out, "occupancy.dat", &s)?;
    Ok(())
}

fn header(hash: &str, columns: &str) -> String {
    let mut buf = Vec::new();
    if !hash.is_empty() {
        write_manifest_line(&mut buf, hash).expect("in memory");
    }
    let mut s = String::from_utf8(buf).expect("ascii");
    let _ = writeln!(s, "# {columns}");
    s
}

fn write_table(dir: &Path, name: &str, body: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
}
