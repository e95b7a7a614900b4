use crate::simenv::EnvState;
use crate::workload::JobRequest;

use super::{AuxState, ModelConfig, OsdecError, JOB_FIELDS};

/// Column offsets inside a feature row.
pub mod col {
    pub const CORES: usize = 0;
    pub const DURATION: usize = 1;
    pub const SLACK: usize = 2;
    pub const LEAD: usize = 3;
    pub const REMAINING: usize = 4;
    pub const HISTORICAL: usize = 5;
    pub const CURRENT: usize = 6;
    pub const FUTURE: usize = 7;
    pub const GLOBAL: usize = 8;
    pub const CAPACITY: usize = 9;
    pub const FREE: usize = 10;
    /// First aux column; the low vector comes first, then the high vector.
    pub const AUX: usize = 11;
}

/// Which block of rows a job belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSet {
    Historical = 0,
    Current = 1,
    Future = 2,
}

/// Padded network input: `k_max` rows per job set followed by one global row.
#[derive(Debug, Clone, PartialEq)]
pub struct JobFeatures {
    k_max: usize,
    dim: usize,
    data: Vec<f64>,
    mask: Vec<bool>,
    /// Job id per current-set slot; `None` where the slot is padding.
    slot_ids: Vec<Option<u64>>,
}

impl JobFeatures {
    /// Builds features from raw parts; padded rows must be zero.
    pub fn from_parts(
        k_max: usize,
        dim: usize,
        data: Vec<f64>,
        mask: Vec<bool>,
        slot_ids: Vec<Option<u64>>,
    ) -> Result<Self, OsdecError> {
        let rows = 3 * k_max + 1;
        if data.len() != rows * dim || mask.len() != rows || slot_ids.len() != k_max {
            return Err(OsdecError::Features(format!(
                "expected {rows}×{dim} values, {rows} mask entries and {k_max} slots"
            )));
        }
        if !mask[rows - 1] {
            return Err(OsdecError::Features("the global row must be unmasked".into()));
        }
        for r in (0..rows).filter(|&r| !mask[r]) {
            if data[r * dim..(r + 1) * dim].iter().any(|&v| v != 0.0) {
                return Err(OsdecError::Features(format!("padded row {r} is not zero")));
            }
        }
        for (s, id) in slot_ids.iter().enumerate() {
            if id.is_some() != mask[k_max + s] {
                return Err(OsdecError::Features(format!("current slot {s} id disagrees with its mask")));
            }
        }
        Ok(Self { k_max, dim, data, mask, slot_ids })
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn rows(&self) -> usize {
        self.mask.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn slot_ids(&self) -> &[Option<u64>] {
        &self.slot_ids
    }

    /// Row index of current-set slot `s`.
    pub fn current_row(&self, s: usize) -> usize {
        self.k_max + s
    }

    pub fn global_row(&self) -> usize {
        3 * self.k_max
    }

    /// Unmasked current slots in slot order.
    pub fn active_slots(&self) -> Vec<usize> {
        (0..self.k_max).filter(|&s| self.mask[self.k_max + s]).collect()
    }

    /// Unmasked rows packed densely; returns the packed matrix, its row count,
    /// and the packed positions of the active current slots.
    pub fn compact(&self) -> (Vec<f64>, usize, Vec<usize>) {
        let mut data = Vec::new();
        let mut current = Vec::new();
        let mut n = 0;
        for r in (0..self.rows()).filter(|&r| self.mask[r]) {
            if (self.k_max..2 * self.k_max).contains(&r) {
                current.push(n);
            }
            data.extend_from_slice(self.row(r));
            n += 1;
        }
        (data, n, current)
    }
}

fn by_revenue(a: &JobRequest, b: &JobRequest) -> std::cmp::Ordering {
    b.revenue().total_cmp(&a.revenue()).then(a.id.cmp(&b.id))
}

/// Encodes `state` together with the aux vectors held in `aux`.
pub fn featurize(state: &EnvState, aux: &AuxState, cfg: &ModelConfig) -> JobFeatures {
    let k = cfg.k_max;
    let dim = cfg.feature_dim();
    let rows = cfg.feature_rows();
    let sc = cfg.scales;
    let t = f64::from(state.t);
    let mut data = vec![0.0; rows * dim];
    let mut mask = vec![false; rows];
    let mut slot_ids = vec![None; k];

    let mut historical: Vec<_> = state.historical.iter().collect();
    historical.sort_by(|a, b| by_revenue(&a.job, &b.job));
    let mut current: Vec<_> = state.current.iter().collect();
    current.sort_by(|a, b| by_revenue(a, b));
    let mut future: Vec<_> = state.future.iter().collect();
    future.sort_by(|a, b| by_revenue(a, b));
    for (name, len) in [("historical", historical.len()), ("current", current.len()), ("future", future.len())] {
        if len > k {
            log::debug!("t={}: {name} set has {len} jobs, network sees {k}", state.t);
        }
    }

    let mut put = |row: usize, job: &JobRequest, set: RowSet, extra: (usize, f64)| {
        let r = &mut data[row * dim..(row + 1) * dim];
        r[col::CORES] = f64::from(job.cores) / sc.cores;
        r[col::DURATION] = f64::from(job.duration) / sc.duration;
        r[extra.0] = extra.1;
        r[col::HISTORICAL + set as usize] = 1.0;
        mask[row] = true;
    };
    for (i, run) in historical.iter().take(k).enumerate() {
        let remaining = f64::from(run.ends_at) - t;
        put(i, &run.job, RowSet::Historical, (col::REMAINING, remaining / sc.duration));
    }
    for (i, job) in current.iter().take(k).enumerate() {
        let slack = f64::from(job.latest) - t;
        put(k + i, job, RowSet::Current, (col::SLACK, slack / sc.time));
        slot_ids[i] = Some(job.id);
    }
    for (i, job) in future.iter().take(k).enumerate() {
        let lead = f64::from(job.earliest) - t;
        put(2 * k + i, job, RowSet::Future, (col::LEAD, lead / sc.time));
    }
    let g = 3 * k;
    {
        let r = &mut data[g * dim..(g + 1) * dim];
        r[col::GLOBAL] = 1.0;
        r[col::CAPACITY] = f64::from(state.capacity_now) / sc.capacity;
        r[col::FREE] = state.free_capacity() as f64 / sc.capacity;
    }
    mask[g] = true;

    let (low_coef, high_coef) = cfg.feature_coefs();
    let low = aux.low_vec();
    let high = aux.high_vec();
    for row in (0..rows).filter(|&r| mask[r]) {
        let r = &mut data[row * dim..(row + 1) * dim];
        let tail = &mut r[JOB_FIELDS + super::MARKER_FIELDS..];
        for (d, v) in tail.iter_mut().zip(low.iter().map(|v| v * low_coef).chain(high.iter().map(|v| v * high_coef))) {
            *d = v;
        }
    }
    JobFeatures { k_max: k, dim, data, mask, slot_ids }
}
