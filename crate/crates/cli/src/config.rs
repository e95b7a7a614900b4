//! The experiment file read by `train`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use defersched::osdec::ModelConfig;
use defersched::simenv::RewardWeights;
use defersched::trainer::{PpoConfig, TracePool};
use defersched::workload::{parse_capacity, parse_jobs_with_horizon, SyntheticSpec};
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

/// Everything a training run needs, loaded from one TOML file.
///
/// Every key is optional. A present `seed` replaces `workload.seed`,
/// `model.init_seed` and `ppo.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: Option<u64>,
    pub workload: SyntheticSpec,
    pub model: ModelConfig,
    pub ppo: PpoConfig,
    pub rewards: RewardWeights,
    pub pools: PoolConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: None,
            workload: SyntheticSpec::default(),
            model: ModelConfig::default(),
            ppo: PpoConfig::default(),
            rewards: RewardWeights::default(),
            pools: PoolConfig::default(),
        }
    }
}

/// Where training and evaluation episodes come from. Listed files take the
/// place of synthetic traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    pub train_traces: usize,
    pub eval_traces: usize,
    /// Seed of the first evaluation trace.
    pub eval_seed: u64,
    pub train_files: Vec<TraceFiles>,
    pub eval_files: Vec<TraceFiles>,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self { train_traces: 64, eval_traces: 32, eval_seed: 10_000, train_files: Vec::new(), eval_files: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceFiles {
    pub jobs: PathBuf,
    pub capacity: PathBuf,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        if cfg.version != CONFIG_VERSION {
            bail!("config version {} is not supported (expected {CONFIG_VERSION})", cfg.version);
        }
        Ok(cfg)
    }

    /// Reads `path`; relative trace paths are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for f in cfg.pools.train_files.iter_mut().chain(cfg.pools.eval_files.iter_mut()) {
            f.jobs = base.join(&f.jobs);
            f.capacity = base.join(&f.capacity);
        }
        Ok(cfg)
    }

    /// Applies `seed` to every seeded section and checks each section.
    pub fn resolve(mut self) -> Result<Self> {
        if let Some(seed) = self.seed {
            self.workload.seed = seed;
            self.model.init_seed = seed;
            self.ppo.seed = seed;
        }
        self.workload.validate()?;
        self.model.validate()?;
        self.ppo.validate()?;
        if self.pools.train_files.is_empty() && self.pools.train_traces == 0 {
            bail!("pools: no training traces");
        }
        if self.pools.eval_files.is_empty() && self.pools.eval_traces == 0 {
            bail!("pools: no evaluation traces");
        }
        Ok(self)
    }

    pub fn train_pool(&self) -> Result<TracePool> {
        if self.pools.train_files.is_empty() {
            Ok(TracePool::synthetic(&self.workload, self.pools.train_traces)?)
        } else {
            load_pool(&self.pools.train_files)
        }
    }

    pub fn eval_pool(&self) -> Result<TracePool> {
        if self.pools.eval_files.is_empty() {
            let spec = SyntheticSpec { seed: self.pools.eval_seed, ..self.workload.clone() };
            Ok(TracePool::synthetic(&spec, self.pools.eval_traces)?)
        } else {
            load_pool(&self.pools.eval_files)
        }
    }
}

fn load_pool(files: &[TraceFiles]) -> Result<TracePool> {
    let items = files.iter().map(|f| load_trace(&f.jobs, &f.capacity)).collect::<Result<Vec<_>>>()?;
    Ok(TracePool::new(items)?)
}

/// Jobs and capacity from CSV; the capacity series fixes the horizon.
pub fn load_trace(
    jobs: &Path,
    capacity: &Path,
) -> Result<(defersched::workload::WorkloadTrace, defersched::workload::CapacitySeries)> {
    let cap_text = std::fs::read_to_string(capacity).with_context(|| format!("reading {}", capacity.display()))?;
    let cap = parse_capacity(&cap_text).with_context(|| format!("in {}", capacity.display()))?;
    let job_text = std::fs::read_to_string(jobs).with_context(|| format!("reading {}", jobs.display()))?;
    let trace = parse_jobs_with_horizon(&job_text, Some(cap.len() as u32)).with_context(|| format!("in {}", jobs.display()))?;
    Ok((trace, cap))
}
