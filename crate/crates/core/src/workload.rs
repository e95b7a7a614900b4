//! Job and capacity data: CSV ingestion, serialization and the synthetic
//! workload generator.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding::{stream_rng, Purpose};

/// Header of the job CSV format.
pub const JOBS_HEADER: [&str; 6] = ["id", "submit", "earliest", "latest", "duration", "cores"];
/// Header of the capacity CSV format.
pub const CAPACITY_HEADER: [&str; 2] = ["t", "capacity"];

/// Core-count distributions studied for sensitivity (over [`DEFAULT_CORE_VALUES`]).
pub const CORE_CASES: [[f64; 4]; 3] = [
    [0.51, 0.37, 0.08, 0.04],
    [0.25, 0.25, 0.25, 0.25],
    [0.4, 0.3, 0.2, 0.1],
];
/// Duration distributions studied for sensitivity (over [`DEFAULT_DURATION_VALUES`]).
pub const DURATION_CASES: [[f64; 6]; 3] = [
    [1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0],
    [0.4, 0.25, 0.15, 0.1, 0.05, 0.05],
    [0.6, 0.25, 0.1, 0.05, 0.0, 0.0],
];
pub const DEFAULT_CORE_VALUES: [u32; 4] = [1, 2, 4, 8];
pub const DEFAULT_DURATION_VALUES: [u32; 6] = [1, 2, 3, 4, 5, 6];

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("{0}")]
    Validation(String),
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
}

/// One deferrable request.
///
/// Revenue is `cores * duration` and is derived, not stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JobRequest {
    pub id: u64,
    pub cores: u32,
    pub duration: u32,
    pub earliest: u32,
    pub latest: u32,
    pub submit: u32,
}

impl JobRequest {
    pub fn revenue(&self) -> f64 {
        f64::from(self.cores) * f64::from(self.duration)
    }

    /// Number of admissible start times.
    pub fn window_len(&self) -> u32 {
        self.latest - self.earliest + 1
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let id = self.id;
        if self.cores == 0 {
            return Err(WorkloadError::Validation(format!("cores < 1 for job {id}")));
        }
        if self.duration == 0 {
            return Err(WorkloadError::Validation(format!("duration < 1 for job {id}")));
        }
        if self.earliest > self.latest {
            return Err(WorkloadError::Validation(format!("earliest > latest for job {id}")));
        }
        if self.submit > self.earliest {
            return Err(WorkloadError::Validation(format!("submit > earliest for job {id}")));
        }
        Ok(())
    }
}

/// A set of jobs sorted by submission time, plus the episode horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadTrace {
    jobs: Vec<JobRequest>,
    horizon: u32,
}

impl WorkloadTrace {
    /// Validates every job, checks id uniqueness and sorts by `(submit, id)`.
    pub fn new(mut jobs: Vec<JobRequest>, horizon: u32) -> Result<Self, WorkloadError> {
        let mut seen = HashSet::with_capacity(jobs.len());
        for job in &jobs {
            job.validate()?;
            if !seen.insert(job.id) {
                return Err(WorkloadError::Validation(format!("duplicate job id {}", job.id)));
            }
        }
        jobs.sort_by_key(|j| (j.submit, j.id));
        Ok(Self { jobs, horizon })
    }

    pub fn jobs(&self) -> &[JobRequest] {
        &self.jobs
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    /// Horizon long enough for every job to start at `latest` and finish.
    pub fn natural_horizon(jobs: &[JobRequest]) -> u32 {
        let max_latest = jobs.iter().map(|j| j.latest).max();
        let max_duration = jobs.iter().map(|j| j.duration).max();
        match (max_latest, max_duration) {
            (Some(l), Some(d)) => l + d,
            _ => 0,
        }
    }
}

/// Cores available to deferrable jobs at each step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapacitySeries {
    values: Vec<u32>,
}

impl CapacitySeries {
    pub fn new(values: Vec<u32>) -> Self {
        Self { values }
    }

    pub fn constant(value: u32, len: usize) -> Self {
        Self { values: vec![value; len] }
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Capacity at `t`, zero past the end of the series.
    pub fn at(&self, t: u32) -> u32 {
        self.values.get(t as usize).copied().unwrap_or(0)
    }
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
}

fn check_header(
    reader: &mut csv::Reader<&[u8]>,
    expected: &[&str],
) -> Result<bool, WorkloadError> {
    let header = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(WorkloadError::Parse { line: 1, message: e.to_string() }),
    };
    if header.is_empty() {
        return Ok(false);
    }
    if header.iter().ne(expected.iter().copied()) {
        return Err(WorkloadError::Parse {
            line: 1,
            message: format!("expected header `{}`, found `{}`", expected.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    Ok(true)
}

fn parse_field(record: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<i64, WorkloadError> {
    let raw = record.get(idx).ok_or_else(|| WorkloadError::Parse {
        line,
        message: format!("missing field `{name}`"),
    })?;
    raw.parse::<i64>().map_err(|_| WorkloadError::Parse {
        line,
        message: format!("field `{name}` is not an integer: `{raw}`"),
    })
}

fn to_u32(value: i64, field: &str, id: i64) -> Result<u32, WorkloadError> {
    u32::try_from(value).map_err(|_| WorkloadError::Validation(format!("{field} out of range for job {id}")))
}

/// Parses the job CSV; the horizon defaults to `max(latest) + max(duration)`.
pub fn parse_jobs(text: &str) -> Result<WorkloadTrace, WorkloadError> {
    parse_jobs_with_horizon(text, None)
}

pub fn parse_jobs_with_horizon(text: &str, horizon: Option<u32>) -> Result<WorkloadTrace, WorkloadError> {
    let mut reader = csv_reader(text);
    let mut jobs = Vec::new();
    if check_header(&mut reader, &JOBS_HEADER)? {
        for record in reader.records() {
            let record = record.map_err(|e| WorkloadError::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != JOBS_HEADER.len() {
                return Err(WorkloadError::Parse {
                    line,
                    message: format!("expected {} fields, found {}", JOBS_HEADER.len(), record.len()),
                });
            }
            let mut fields = [0i64; 6];
            for (i, name) in JOBS_HEADER.iter().enumerate() {
                fields[i] = parse_field(&record, i, name, line)?;
            }
            let [id, submit, earliest, latest, duration, cores] = fields;
            let id_u = u64::try_from(id)
                .map_err(|_| WorkloadError::Validation(format!("negative id {id}")))?;
            let job = JobRequest {
                id: id_u,
                submit: to_u32(submit, "submit", id)?,
                earliest: to_u32(earliest, "earliest", id)?,
                latest: to_u32(latest, "latest", id)?,
                duration: to_u32(duration, "duration", id)?,
                cores: to_u32(cores, "cores", id)?,
            };
            jobs.push(job);
        }
    }
    let horizon = horizon.unwrap_or_else(|| WorkloadTrace::natural_horizon(&jobs));
    WorkloadTrace::new(jobs, horizon)
}

/// Parses the capacity CSV. Rows may come in any order but must cover
/// `0..n` exactly once.
pub fn parse_capacity(text: &str) -> Result<CapacitySeries, WorkloadError> {
    let mut reader = csv_reader(text);
    let mut by_t: BTreeMap<i64, u32> = BTreeMap::new();
    if check_header(&mut reader, &CAPACITY_HEADER)? {
        for record in reader.records() {
            let record = record.map_err(|e| WorkloadError::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let t = parse_field(&record, 0, "t", line)?;
            let cap = parse_field(&record, 1, "capacity", line)?;
            if t < 0 {
                return Err(WorkloadError::Validation(format!("negative time step {t}")));
            }
            if cap < 0 {
                return Err(WorkloadError::Validation(format!("negative capacity at t={t}")));
            }
            let cap = u32::try_from(cap)
                .map_err(|_| WorkloadError::Validation(format!("capacity out of range at t={t}")))?;
            if by_t.insert(t, cap).is_some() {
                return Err(WorkloadError::Validation(format!("duplicate time step {t}")));
            }
        }
    }
    let mut values = Vec::with_capacity(by_t.len());
    for (expected, (t, cap)) in by_t.into_iter().enumerate() {
        if t != expected as i64 {
            return Err(WorkloadError::Validation(format!("missing time step {expected}")));
        }
        values.push(cap);
    }
    Ok(CapacitySeries::new(values))
}

pub fn write_jobs_csv(trace: &WorkloadTrace) -> String {
    let mut out = JOBS_HEADER.join(",");
    out.push('\n');
    for j in trace.jobs() {
        let _ = writeln!(out, "{},{},{},{},{},{}", j.id, j.submit, j.earliest, j.latest, j.duration, j.cores);
    }
    out
}

pub fn write_capacity_csv(capacity: &CapacitySeries) -> String {
    let mut out = CAPACITY_HEADER.join(",");
    out.push('\n');
    for (t, c) in capacity.values().iter().enumerate() {
        let _ = writeln!(out, "{t},{c}");
    }
    out
}

/// Collapses every window to the submission time: jobs must start on arrival.
pub fn to_realtime(trace: &WorkloadTrace) -> WorkloadTrace {
    let jobs = trace
        .jobs()
        .iter()
        .map(|j| JobRequest { earliest: j.submit, latest: j.submit, ..*j })
        .collect();
    WorkloadTrace { jobs, horizon: trace.horizon }
}

/// How the capacity series fluctuates around `capacity_base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CapacityNoise {
    Constant,
    /// Piecewise-constant random walk, re-drawn every `period` steps by a
    /// uniform increment in `[-step_fraction, step_fraction] * base`, clipped
    /// to `[floor_fraction * base, base]`.
    RandomWalk {
        #[serde(default = "default_period")]
        period: u32,
        #[serde(default = "default_step_fraction")]
        step_fraction: f64,
        #[serde(default = "default_floor_fraction")]
        floor_fraction: f64,
    },
}

fn default_period() -> u32 {
    8
}
fn default_step_fraction() -> f64 {
    0.25
}
fn default_floor_fraction() -> f64 {
    0.3
}

impl Default for CapacityNoise {
    fn default() -> Self {
        CapacityNoise::RandomWalk {
            period: default_period(),
            step_fraction: default_step_fraction(),
            floor_fraction: default_floor_fraction(),
        }
    }
}

/// Parameters of the synthetic workload generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub horizon: u32,
    pub arrivals_per_step: f64,
    pub core_values: Vec<u32>,
    pub core_probs: Vec<f64>,
    pub duration_values: Vec<u32>,
    pub duration_probs: Vec<f64>,
    pub max_window: u32,
    pub max_lead: u32,
    pub capacity_base: u32,
    pub capacity_noise: CapacityNoise,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            horizon: 96,
            arrivals_per_step: 40.0 / 96.0,
            core_values: DEFAULT_CORE_VALUES.to_vec(),
            core_probs: CORE_CASES[0].to_vec(),
            duration_values: DEFAULT_DURATION_VALUES.to_vec(),
            duration_probs: DURATION_CASES[0].to_vec(),
            max_window: 4,
            max_lead: 4,
            capacity_base: 8,
            capacity_noise: CapacityNoise::default(),
            seed: 0,
        }
    }
}

fn check_categorical(name: &str, values: &[u32], probs: &[f64]) -> Result<(), WorkloadError> {
    if values.is_empty() {
        return Err(WorkloadError::Spec(format!("{name}: value set is empty")));
    }
    if values.len() != probs.len() {
        return Err(WorkloadError::Spec(format!(
            "{name}: {} values but {} probabilities",
            values.len(),
            probs.len()
        )));
    }
    if values.contains(&0) {
        return Err(WorkloadError::Spec(format!("{name}: values must be positive")));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(WorkloadError::Spec(format!("{name}: probabilities must be finite and nonnegative")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(WorkloadError::Spec(format!("{name}: probabilities sum to {total}, not 1")));
    }
    Ok(())
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.horizon == 0 {
            return Err(WorkloadError::Spec("horizon must be positive".into()));
        }
        if !self.arrivals_per_step.is_finite() || self.arrivals_per_step < 0.0 {
            return Err(WorkloadError::Spec("arrivals_per_step must be finite and nonnegative".into()));
        }
        if self.capacity_base == 0 {
            return Err(WorkloadError::Spec("capacity_base must be positive".into()));
        }
        check_categorical("cores", &self.core_values, &self.core_probs)?;
        check_categorical("durations", &self.duration_values, &self.duration_probs)?;
        if let CapacityNoise::RandomWalk { period, step_fraction, floor_fraction } = self.capacity_noise {
            if period == 0 {
                return Err(WorkloadError::Spec("capacity_noise.period must be positive".into()));
            }
            if !(0.0..=1.0).contains(&floor_fraction) || !step_fraction.is_finite() || step_fraction < 0.0 {
                return Err(WorkloadError::Spec("capacity_noise fractions out of range".into()));
            }
        }
        Ok(())
    }
}

/// Draws a trace and a capacity series from `spec`. Arrivals and capacity use
/// separate random streams, so changing one never perturbs the other.
pub fn generate_workload(spec: &SyntheticSpec) -> Result<(WorkloadTrace, CapacitySeries), WorkloadError> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, Purpose::Arrivals, 0);
    let cores = WeightedIndex::new(&spec.core_probs).map_err(|e| WorkloadError::Spec(e.to_string()))?;
    let durations =
        WeightedIndex::new(&spec.duration_probs).map_err(|e| WorkloadError::Spec(e.to_string()))?;
    let arrivals = if spec.arrivals_per_step > 0.0 {
        Some(Poisson::new(spec.arrivals_per_step).map_err(|e| WorkloadError::Spec(e.to_string()))?)
    } else {
        None
    };

    let mut jobs = Vec::new();
    for submit in 0..spec.horizon {
        let count = arrivals.as_ref().map_or(0, |p| p.sample(&mut rng) as u64);
        for _ in 0..count {
            let earliest = submit + rng.random_range(0..=spec.max_lead);
            let latest = earliest + rng.random_range(0..=spec.max_window);
            jobs.push(JobRequest {
                id: jobs.len() as u64,
                cores: spec.core_values[cores.sample(&mut rng)],
                duration: spec.duration_values[durations.sample(&mut rng)],
                earliest,
                latest,
                submit,
            });
        }
    }
    let trace = WorkloadTrace::new(jobs, spec.horizon)?;
    Ok((trace, generate_capacity(spec)))
}

fn generate_capacity(spec: &SyntheticSpec) -> CapacitySeries {
    let base = f64::from(spec.capacity_base);
    match spec.capacity_noise {
        CapacityNoise::Constant => CapacitySeries::constant(spec.capacity_base, spec.horizon as usize),
        CapacityNoise::RandomWalk { period, step_fraction, floor_fraction } => {
            let mut rng = stream_rng(spec.seed, Purpose::Capacity, 0);
            let floor = floor_fraction * base;
            let mut level = base;
            let values = (0..spec.horizon)
                .map(|t| {
                    if t > 0 && t % period == 0 && step_fraction > 0.0 {
                        let delta = rng.random_range(-step_fraction..=step_fraction) * base;
                        level = (level + delta).clamp(floor, base);
                    }
                    level.round() as u32
                })
                .collect();
            CapacitySeries::new(values)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "id,submit,earliest,latest,duration,cores\n";

    #[test]
    fn row_maps_fields_directly() {
        let trace = parse_jobs(&format!("{HEADER}7,3,5,9,4,2\n")).unwrap();
        assert_eq!(
            trace.jobs(),
            &[JobRequest { id: 7, submit: 3, earliest: 5, latest: 9, duration: 4, cores: 2 }]
        );
        assert_eq!(trace.horizon(), 13);
    }

    #[test]
    fn submit_after_earliest_is_rejected() {
        let err = parse_jobs(&format!("{HEADER}1,6,5,9,4,2\n")).unwrap_err();
        assert_eq!(err.to_string(), "submit > earliest for job 1");
    }

    #[test]
    fn header_only_gives_empty_trace() {
        let trace = parse_jobs(HEADER).unwrap();
        assert!(trace.is_empty());
        assert_eq!(trace.horizon(), 0);
    }

    #[test]
    fn malformed_row_names_line() {
        let err = parse_jobs(&format!("{HEADER}1,0,0,1,1,1\n2,0,x,1,1,1\n")).unwrap_err();
        match err {
            WorkloadError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_jobs("a,b\n1,2\n"), Err(WorkloadError::Parse { line: 1, .. })));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = parse_jobs(&format!("{HEADER}1,0,0,1,1,1\n1,0,0,1,1,1\n")).unwrap_err();
        assert_eq!(err.to_string(), "duplicate job id 1");
    }

    #[test]
    fn horizon_override() {
        let trace = parse_jobs_with_horizon(&format!("{HEADER}7,3,5,9,4,2\n"), Some(96)).unwrap();
        assert_eq!(trace.horizon(), 96);
    }

    #[test]
    fn capacity_rows() {
        let cap = parse_capacity("t,capacity\n0,16\n1,16\n2,8\n").unwrap();
        assert_eq!(cap.values(), &[16, 16, 8]);
        let err = parse_capacity("t,capacity\n0,16\n2,8\n").unwrap_err();
        assert_eq!(err.to_string(), "missing time step 1");
        let err = parse_capacity("t,capacity\n0,-4\n").unwrap_err();
        assert_eq!(err.to_string(), "negative capacity at t=0");
        let err = parse_capacity("t,capacity\n0,1\n0,2\n").unwrap_err();
        assert_eq!(err.to_string(), "duplicate time step 0");
    }

    #[test]
    fn zero_arrivals_gives_no_jobs() {
        let spec = SyntheticSpec { arrivals_per_step: 0.0, ..SyntheticSpec::default() };
        let (trace, cap) = generate_workload(&spec).unwrap();
        assert!(trace.is_empty());
        assert_eq!(cap.len(), 96);
    }

    #[test]
    fn uniform_core_frequencies() {
        let spec = SyntheticSpec {
            horizon: 2500,
            arrivals_per_step: 5.0,
            core_probs: CORE_CASES[1].to_vec(),
            seed: 11,
            ..SyntheticSpec::default()
        };
        let (trace, _) = generate_workload(&spec).unwrap();
        let jobs = &trace.jobs()[..10_000];
        for &v in &DEFAULT_CORE_VALUES {
            let freq = jobs.iter().filter(|j| j.cores == v).count() as f64 / jobs.len() as f64;
            assert!((freq - 0.25).abs() <= 0.02, "cores {v}: {freq}");
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = SyntheticSpec { seed: 99, ..SyntheticSpec::default() };
        let (a, ca) = generate_workload(&spec).unwrap();
        let (b, cb) = generate_workload(&spec).unwrap();
        assert_eq!(write_jobs_csv(&a), write_jobs_csv(&b));
        assert_eq!(write_capacity_csv(&ca), write_capacity_csv(&cb));
        let (c, _) = generate_workload(&SyntheticSpec { seed: 100, ..spec }).unwrap();
        assert_ne!(write_jobs_csv(&a), write_jobs_csv(&c));
    }

    #[test]
    fn capacity_walk_stays_in_band() {
        let spec = SyntheticSpec { capacity_base: 20, horizon: 500, seed: 5, ..SyntheticSpec::default() };
        let (_, cap) = generate_workload(&spec).unwrap();
        assert!(cap.values().iter().all(|&c| (6..=20).contains(&c)));
        for chunk in cap.values().chunks(8) {
            assert!(chunk.iter().all(|&c| c == chunk[0]));
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = SyntheticSpec { core_probs: vec![0.5, 0.5, 0.5, 0.5], ..SyntheticSpec::default() };
        assert!(matches!(generate_workload(&spec), Err(WorkloadError::Spec(_))));
        let spec = SyntheticSpec { duration_values: vec![1, 2], ..SyntheticSpec::default() };
        assert!(matches!(generate_workload(&spec), Err(WorkloadError::Spec(_))));
    }

    #[test]
    fn realtime_collapses_windows() {
        let job = JobRequest { id: 0, submit: 3, earliest: 5, latest: 9, duration: 2, cores: 1 };
        let fixed = JobRequest { id: 1, submit: 3, earliest: 3, latest: 3, duration: 2, cores: 1 };
        let trace = WorkloadTrace::new(vec![job, fixed], 20).unwrap();
        let rt = to_realtime(&trace);
        assert_eq!(rt.jobs()[0], JobRequest { earliest: 3, latest: 3, ..job });
        assert_eq!(rt.jobs()[1], fixed);
        let empty = WorkloadTrace::new(vec![], 0).unwrap();
        assert_eq!(to_realtime(&empty), empty);
    }

    fn arb_spec() -> impl Strategy<Value = SyntheticSpec> {
        (1u32..60, 0.0f64..3.0, 0u32..6, 0u32..6, 0..3usize, 0..3usize, any::<u64>()).prop_map(
            |(horizon, arrivals, max_window, max_lead, cc, dc, seed)| SyntheticSpec {
                horizon,
                arrivals_per_step: arrivals,
                core_probs: CORE_CASES[cc].to_vec(),
                duration_probs: DURATION_CASES[dc].to_vec(),
                max_window,
                max_lead,
                seed,
                ..SyntheticSpec::default()
            },
        )
    }

    proptest! {
        #[test]
        fn generated_jobs_are_valid_and_round_trip(spec in arb_spec()) {
            let (trace, cap) = generate_workload(&spec).unwrap();
            prop_assert_eq!(cap.len(), spec.horizon as usize);
            for job in trace.jobs() {
                prop_assert!(job.validate().is_ok());
                prop_assert!(job.latest - job.earliest <= spec.max_window);
                prop_assert!(job.earliest - job.submit <= spec.max_lead);
            }
            let parsed = parse_jobs(&write_jobs_csv(&trace)).unwrap();
            let again = parse_jobs(&write_jobs_csv(&parsed)).unwrap();
            prop_assert_eq!(&parsed, &again);
            prop_assert_eq!(parsed.jobs(), trace.jobs());
            prop_assert_eq!(parse_capacity(&write_capacity_csv(&cap)).unwrap(), cap);
        }

        #[test]
        fn realtime_is_idempotent(spec in arb_spec()) {
            let (trace, _) = generate_workload(&spec).unwrap();
            let once = to_realtime(&trace);
            prop_assert_eq!(to_realtime(&once), once.clone());
            for job in once.jobs() {
                prop_assert!(job.validate().is_ok());
            }
        }
    }
}
