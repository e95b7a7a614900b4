use rand_chacha::ChaCha8Rng;

use crate::schedulers::Scheduler;
use crate::simenv::{EnvState, Selection, StepOutcome};

use super::{featurize, forward, sample_scores, scores_to_action, AuxState, JobFeatures, OsdecError, OsdecModel};

/// How scores are drawn from the policy.
// one per episode, so the inline generator is not worth a box
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
pub enum ScoreMode {
    /// Scores equal μ.
    Deterministic,
    Stochastic(ChaCha8Rng),
}

/// Everything the policy produced for one state.
#[derive(Debug, Clone)]
pub struct Decision {
    pub features: JobFeatures,
    pub scores: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
    pub selection: Selection,
    /// History window the aux module saw at this step.
    pub aux_window: Vec<f64>,
}

/// Runs the learned policy step by step, carrying its aux history.
pub struct OsdecAgent<'m> {
    model: &'m OsdecModel,
    aux: AuxState,
    mode: ScoreMode,
    selected_cores: u64,
}

impl<'m> OsdecAgent<'m> {
    pub fn new(model: &'m OsdecModel, mode: ScoreMode) -> Self {
        Self { model, aux: AuxState::new(model.config()), mode, selected_cores: 0 }
    }

    pub fn aux(&self) -> &AuxState {
        &self.aux
    }

    pub fn reset(&mut self) {
        self.aux.reset();
        self.selected_cores = 0;
    }

    pub fn decide(&mut self, state: &EnvState) -> Result<Decision, OsdecError> {
        let cfg = self.model.config();
        self.aux.push(state, cfg);
        let aux_window = self.aux.window();
        self.aux.update(self.model)?;
        let features = featurize(state, &self.aux, cfg);
        let out = forward(self.model, &features)?;
        let (scores, log_prob) = match &mut self.mode {
            ScoreMode::Deterministic => sample_scores(&out, &mut rand::rng(), true),
            ScoreMode::Stochastic(rng) => sample_scores(&out, rng, false),
        };
        let selection = scores_to_action(&scores, features.slot_ids(), &state.current, state.free_capacity());
        self.selected_cores = state
            .current
            .iter()
            .filter(|j| selection.job_ids.contains(&j.id))
            .map(|j| u64::from(j.cores))
            .sum();
        Ok(Decision { features, scores, log_prob, value: out.value, selection, aux_window })
    }

    pub fn observe(&mut self, outcome: &StepOutcome) {
        self.aux.record_action(outcome.deployed.len(), self.selected_cores, outcome.violation, self.model.config());
    }
}

impl Scheduler for OsdecAgent<'_> {
    fn name(&self) -> String {
        "OSDEC".to_string()
    }

    fn begin_episode(&mut self) {
        self.reset();
    }

    fn select(&mut self, state: &EnvState) -> Selection {
        self.decide(state).expect("model and features are built from one configuration").selection
    }

    fn observe(&mut self, outcome: &StepOutcome, _next: &EnvState) {
        OsdecAgent::observe(self, outcome);
    }
}
