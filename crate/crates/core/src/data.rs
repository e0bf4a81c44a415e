//! Unit records and their sufficient statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CategorySpec;

/// Where a record was collected. Source domains are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    Source(usize),
    Target,
}

/// One observation. `x` and `y` are present exactly for source records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Record {
    pub domain: Domain,
    pub w: usize,
    pub x: Option<usize>,
    pub y: Option<usize>,
}

impl Record {
    pub fn source(domain: usize, w: usize, x: usize, y: usize) -> Self {
        Record {
            domain: Domain::Source(domain),
            w,
            x: Some(x),
            y: Some(y),
        }
    }

    pub fn target(w: usize) -> Self {
        Record {
            domain: Domain::Target,
            w,
            x: None,
            y: None,
        }
    }
}

/// Multi-domain sample: fully observed source records plus proxy-only target
/// records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dims: CategorySpec,
    records: Vec<Record>,
}

impl Dataset {
    pub fn new(dims: CategorySpec, records: Vec<Record>) -> Result<Self> {
        dims.validate()?;
        for (i, r) in records.iter().enumerate() {
            check_record(&dims, r).map_err(|m| Error::InvalidDataset(format!("record {i}: {m}")))?;
        }
        Ok(Dataset { dims, records })
    }

    pub fn dims(&self) -> &CategorySpec {
        &self.dims
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn source_records(&self) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(|r| r.domain != Domain::Target)
    }

    pub fn target_records(&self) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(|r| r.domain == Domain::Target)
    }

    pub fn counts(&self) -> ContingencyCounts {
        ContingencyCounts::from_dataset(self)
    }
}

pub(crate) fn check_record(dims: &CategorySpec, r: &Record) -> std::result::Result<(), String> {
    if r.w >= dims.k_w {
        return Err(format!("w index {} out of range (k_W = {})", r.w + 1, dims.k_w));
    }
    match r.domain {
        Domain::Target => {
            if r.x.is_some() || r.y.is_some() {
                return Err("target row carries x/y".into());
            }
        }
        Domain::Source(e) => {
            if e >= dims.k_e {
                return Err(format!("domain {} out of range (k_E = {})", e + 1, dims.k_e));
            }
            let (Some(x), Some(y)) = (r.x, r.y) else {
                return Err("source row is missing x or y".into());
            };
            if x >= dims.k_x {
                return Err(format!("x index {} out of range (k_X = {})", x + 1, dims.k_x));
            }
            if y >= dims.k_y {
                return Err(format!("y index {} out of range (k_Y = {})", y + 1, dims.k_y));
            }
        }
    }
    Ok(())
}

/// Treatment and outcome of target-domain records, which the estimation
/// pipeline never sees. Only the simulator emits this, for benchmark-only
/// baselines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TargetOutcomes {
    /// `(w, x, y)` per target record.
    pub records: Vec<(usize, usize, usize)>,
}

/// Cell counts `n(y, x, w, e)` over the source sample and `n(w)` over the
/// target sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyCounts {
    dims: CategorySpec,
    n_yxwe: Vec<u64>,
    n_w_target: Vec<u64>,
    n_src: u64,
    n_tgt: u64,
}

impl ContingencyCounts {
    pub fn zeros(dims: &CategorySpec) -> Self {
        ContingencyCounts {
            dims: dims.clone(),
            n_yxwe: vec![0; dims.k_y * dims.k_x * dims.k_w * dims.k_e],
            n_w_target: vec![0; dims.k_w],
            n_src: 0,
            n_tgt: 0,
        }
    }

    pub fn from_dataset(ds: &Dataset) -> Self {
        let mut counts = Self::zeros(ds.dims());
        for r in ds.records() {
            match (r.domain, r.x, r.y) {
                (Domain::Source(e), Some(x), Some(y)) => counts.add_source(y, x, r.w, e, 1),
                _ => counts.add_target(r.w, 1),
            }
        }
        counts
    }

    /// Builds from a flat source tensor (layout of [`Self::cell_index`]) and
    /// the target proxy counts.
    pub fn from_parts(dims: &CategorySpec, n_yxwe: Vec<u64>, n_w_target: Vec<u64>) -> Result<Self> {
        if n_yxwe.len() != dims.k_y * dims.k_x * dims.k_w * dims.k_e || n_w_target.len() != dims.k_w {
            return Err(Error::Shape("count tensor does not match dims".into()));
        }
        let n_src = n_yxwe.iter().sum();
        let n_tgt = n_w_target.iter().sum();
        Ok(ContingencyCounts {
            dims: dims.clone(),
            n_yxwe,
            n_w_target,
            n_src,
            n_tgt,
        })
    }

    pub fn dims(&self) -> &CategorySpec {
        &self.dims
    }

    /// Flat index of the source cell `(y, x, w, e)`; `e` varies fastest.
    pub fn cell_index(&self, y: usize, x: usize, w: usize, e: usize) -> usize {
        let d = &self.dims;
        ((y * d.k_x + x) * d.k_w + w) * d.k_e + e
    }

    pub fn add_source(&mut self, y: usize, x: usize, w: usize, e: usize, n: u64) {
        let i = self.cell_index(y, x, w, e);
        self.n_yxwe[i] += n;
        self.n_src += n;
    }

    pub fn add_target(&mut self, w: usize, n: u64) {
        self.n_w_target[w] += n;
        self.n_tgt += n;
    }

    pub fn source(&self, y: usize, x: usize, w: usize, e: usize) -> u64 {
        self.n_yxwe[self.cell_index(y, x, w, e)]
    }

    pub fn source_tensor(&self) -> &[u64] {
        &self.n_yxwe
    }

    pub fn target(&self, w: usize) -> u64 {
        self.n_w_target[w]
    }

    pub fn target_vector(&self) -> &[u64] {
        &self.n_w_target
    }

    pub fn n_src(&self) -> u64 {
        self.n_src
    }

    pub fn n_tgt(&self) -> u64 {
        self.n_tgt
    }

    pub fn n(&self) -> u64 {
        self.n_src + self.n_tgt
    }

    /// Records in source domain `e`.
    pub fn n_domain(&self, e: usize) -> u64 {
        let d = &self.dims;
        let mut total = 0;
        for y in 0..d.k_y {
            for x in 0..d.k_x {
                for w in 0..d.k_w {
                    total += self.source(y, x, w, e);
                }
            }
        }
        total
    }

    /// Visits every non-empty cell as `(domain, w, x, y, count)`; target
    /// cells come first.
    pub fn for_each_cell(&self, mut f: impl FnMut(Domain, usize, Option<usize>, Option<usize>, u64)) {
        for (w, &n) in self.n_w_target.iter().enumerate() {
            if n > 0 {
                f(Domain::Target, w, None, None, n);
            }
        }
        let d = &self.dims;
        for y in 0..d.k_y {
            for x in 0..d.k_x {
                for w in 0..d.k_w {
                    for e in 0..d.k_e {
                        let n = self.source(y, x, w, e);
                        if n > 0 {
                            f(Domain::Source(e), w, Some(x), Some(y), n);
                        }
                    }
                }
            }
        }
    }
}
