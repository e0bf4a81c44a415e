use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Estimator;
use crate::error::Result;

/// One estimator run on one dataset. Indices `x` and `y` are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub model: usize,
    pub dataset: usize,
    pub n: usize,
    pub estimator: Estimator,
    pub x: usize,
    pub y: usize,
    pub estimate: Option<f64>,
    pub estimate_unclipped: Option<f64>,
    pub truth: f64,
    pub abs_error: Option<f64>,
    pub kappa_true: f64,
    pub kappa_hat: Option<f64>,
    pub sigma_hat: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub covered: Option<bool>,
    pub wall_time_s: f64,
    /// Set when the estimator failed on this dataset.
    pub error: Option<String>,
}

impl ReplicateRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn ci_length(&self) -> Option<f64> {
        Some(self.ci_upper? - self.ci_lower?)
    }

    /// `sqrt(n) (estimate - truth) / sigma_hat` on the unclipped estimate.
    pub fn standardized_error(&self) -> Option<f64> {
        let s = self.sigma_hat?;
        let e = self.estimate_unclipped?;
        (s > 0.0).then(|| (self.n as f64).sqrt() * (e - self.truth) / s)
    }

    /// Every field except the wall time, with floats as bit patterns.
    pub fn fingerprint(&self) -> String {
        let bits = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:016x}", v.to_bits()));
        format!(
            "{} {} {} {} {} {} {} {} {:016x} {} {:016x} {} {} {} {} {:?} {:?}",
            self.model,
            self.dataset,
            self.n,
            self.estimator,
            self.x,
            self.y,
            bits(self.estimate),
            bits(self.estimate_unclipped),
            self.truth.to_bits(),
            bits(self.abs_error),
            self.kappa_true.to_bits(),
            bits(self.kappa_hat),
            bits(self.sigma_hat),
            bits(self.ci_lower),
            bits(self.ci_upper),
            self.covered,
            self.error,
        )
    }
}

pub const RECORD_HEADER: [&str; 18] = [
    "model",
    "dataset",
    "n",
    "estimator",
    "x",
    "y",
    "estimate",
    "estimate_unclipped",
    "truth",
    "abs_error",
    "kappa_true",
    "kappa_hat",
    "sigma_hat",
    "ci_lower",
    "ci_upper",
    "covered",
    "wall_time_s",
    "error",
];

pub fn write_records<W: Write>(writer: W, records: &[ReplicateRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn records_to_string(records: &[ReplicateRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_records(&mut buf, records)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn save_records(path: &Path, records: &[ReplicateRecord]) -> Result<()> {
    Ok(proxy_transfer::io::write_atomic(path, records_to_string(records)?.as_bytes())?)
}

pub fn read_records<R: std::io::Read>(reader: R) -> Result<Vec<ReplicateRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}
