use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Named scalar results of one evaluation together with what produced them.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub metrics: BTreeMap<String, f64>,
    pub dataset_id: String,
    pub checkpoint_id: String,
    pub seed: u64,
    pub wall_clock_secs: f64,
}

/// Metric names whose values must be fractions.
fn is_fraction(name: &str) -> bool {
    let n = name.to_ascii_lowercase();
    n.contains("r@") || n.contains("accuracy") || n.contains("map") || n.contains("bleu") || n.contains("rouge") || n.contains("recovery")
}

impl MetricReport {
    pub fn new(task: impl Into<String>, dataset_id: impl Into<String>, checkpoint_id: impl Into<String>, seed: u64) -> Self {
        Self { task: task.into(), metrics: BTreeMap::new(), dataset_id: dataset_id.into(), checkpoint_id: checkpoint_id.into(), seed, wall_clock_secs: 0.0 }
    }

    pub fn with(mut self, name: impl Into<String>, value: f64) -> Self {
        self.metrics.insert(name.into(), value);
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (k, &v) in &self.metrics {
            if !v.is_finite() {
                return Err(Error::Evaluation(format!("{}: metric {k} is {v}", self.task)));
            }
            if is_fraction(k) && !(0.0..=1.0).contains(&v) {
                return Err(Error::Evaluation(format!("{}: metric {k} = {v} outside [0, 1]", self.task)));
            }
        }
        Ok(())
    }

    /// Hash of everything except the wall-clock time, so reruns compare equal.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.task.as_bytes());
        h.update([0]);
        h.update(self.dataset_id.as_bytes());
        h.update([0]);
        h.update(self.checkpoint_id.as_bytes());
        h.update(self.seed.to_le_bytes());
        for (k, v) in &self.metrics {
            h.update(k.as_bytes());
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        }
        std::fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        let r: Self = serde_json::from_slice(&bytes)?;
        r.validate()?;
        Ok(r)
    }

    /// Fractions as percentages, one metric per line.
    pub fn summary(&self) -> String {
        let mut s = format!("{} (seed {}, {:.1}s)\n", self.task, self.seed, self.wall_clock_secs);
        for (k, v) in &self.metrics {
            if is_fraction(k) {
                s.push_str(&format!("  {k:<24} {:>7.2}\n", v * 100.0));
            } else {
                s.push_str(&format!("  {k:<24} {v:>9.4}\n"));
            }
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct SeedSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
    pub median: f64,
}

/// Per-metric statistics across reports of the same task.
pub fn summarize_seeds(reports: &[MetricReport]) -> Result<BTreeMap<String, SeedSummary>> {
    let first = reports.first().ok_or_else(|| Error::Statistics("no reports to summarize".into()))?;
    let mut out = BTreeMap::new();
    for name in first.metrics.keys() {
        let values: Vec<f64> = reports
            .iter()
            .map(|r| r.metrics.get(name).copied().ok_or_else(|| Error::Statistics(format!("seed {} lacks metric {name}", r.seed))))
            .collect::<Result<_>>()?;
        out.insert(name.clone(), seed_stats(values));
    }
    Ok(out)
}

pub fn seed_stats(values: Vec<f64>) -> SeedSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    SeedSummary { median: median(&values), values, mean, std }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_and_fingerprint() {
        let r = MetricReport::new("eval-retrieval", "toy", "abc", 0).with("a2t_r@1", 0.5).with("loss", 3.0);
        r.validate().unwrap();
        let mut later = r.clone();
        later.wall_clock_secs = 12.0;
        assert_eq!(r.fingerprint(), later.fingerprint());
        assert_ne!(r.fingerprint(), r.clone().with("loss", 3.1).fingerprint());
        assert!(r.clone().with("accuracy", 1.5).validate().is_err());
        assert!(r.clone().with("cider", f64::NAN).validate().is_err());
        assert!(r.clone().with("cider", 2.5).validate().is_ok());
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = MetricReport::new("t", "d", "c", 3).with("map", 0.25);
        let p = dir.path().join("r/report.json");
        r.save(&p).unwrap();
        assert_eq!(MetricReport::load(&p).unwrap(), r);
        assert!(r.summary().contains("25.00"));
    }

    #[test]
    fn seed_statistics() {
        let rs: Vec<MetricReport> = [0.2, 0.4, 0.9].iter().enumerate().map(|(i, &v)| MetricReport::new("t", "d", "c", i as u64).with("accuracy", v)).collect();
        let s = &summarize_seeds(&rs).unwrap()["accuracy"];
        assert!((s.mean - 0.5).abs() < 1e-12);
        assert_eq!(s.median, 0.4);
        assert!((s.std - (0.13f64).sqrt()).abs() < 1e-12);
        assert_eq!(median(&[1.0, 3.0]), 2.0);
    }
}
