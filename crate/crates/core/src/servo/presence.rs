use std::collections::VecDeque;

/// Rolling average of a per-site fluorescence indicator, one sample per
/// side pair.
#[derive(Debug, Clone)]
pub struct PresenceTracker {
    window: usize,
    threshold: f64,
    sites: Vec<VecDeque<bool>>,
}

impl PresenceTracker {
    pub fn new(n_sites: usize, window: usize, threshold: f64) -> Self {
        assert!(window >= 1);
        Self {
            window,
            threshold,
            sites: vec![VecDeque::with_capacity(window); n_sites],
        }
    }

    /// `site` is 0-based here.
    pub fn push(&mut self, site: usize, bright: bool) {
        let buf = &mut self.sites[site];
        if buf.len() == self.window {
            buf.pop_front();
        }
        buf.push_back(bright);
    }

    pub fn reset(&mut self, site: usize) {
        self.sites[site].clear();
    }

    /// Mean of the samples held, `None` before the first sample.
    pub fn mean(&self, site: usize) -> Option<f64> {
        let buf = &self.sites[site];
        (!buf.is_empty()).then(|| buf.iter().filter(|&&b| b).count() as f64 / buf.len() as f64)
    }

    pub fn is_lost(&self, site: usize) -> bool {
        self.mean(site).is_some_and(|m| m < self.threshold)
    }

    /// 0-based indices of sites currently flagged.
    pub fn lost_sites(&self) -> Vec<usize> {
        (0..self.sites.len()).filter(|&s| self.is_lost(s)).collect()
    }
}

/// Feeds `indicators` (one per side pair) through a fresh tracker and returns
/// the 0-based pair indices after which the site reads as lost.
pub fn presence_update(indicators: &[bool], window: usize, threshold: f64) -> Vec<usize> {
    let mut t = PresenceTracker::new(1, window, threshold);
    let mut flagged = Vec::new();
    for (i, &b) in indicators.iter().enumerate() {
        t.push(0, b);
        if t.is_lost(0) {
            flagged.push(i);
        }
    }
    flagged
}
