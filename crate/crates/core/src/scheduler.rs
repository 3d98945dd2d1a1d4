//! The outer alternating-projection loop. Each projection draws fresh class
//! representatives, takes exactly `M` regularized mini-batch steps pulled
//! towards the anchor θ^(k), then moves the anchor to the current θ.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datakit::Dataset;
use crate::error::{ProfsError, Result};
use crate::evalmetrics::EvalReport;
use crate::losses::{BatchObjective, LossKind};
use crate::numcore::{gradient_from_pass, MlpSpec, ParamVector};
use crate::optimizer::{Optimizer, OptimizerConfig};
use crate::sampling::{
    build_batch, derive_m, BatchPlan, BatchRequest, ClassIndex, Mining, RepCache, RepSampler, RepresentativeSet,
};

pub const DEFAULT_RHO: u64 = 6;
pub const DEFAULT_LAMBDA: f64 = 1e-3;
/// Consecutive projections below the displacement threshold needed to stop.
pub const CONVERGENCE_PATIENCE: u32 = 3;
const CHECKPOINT_FORMAT: &str = "profs-checkpoint/1";

/// Number of inner steps per projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionLength {
    Fixed(u64),
    /// `⌈ρ·I·L/B⌉` for the training set's class count.
    Auto { rho: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub m: ProjectionLength,
    pub lambda: f64,
    /// Multiplies λ after every projection.
    pub lambda_anneal: Option<f64>,
    pub max_projections: u64,
    pub loss: LossKind,
    pub mining: Mining,
    pub batch: BatchPlan,
    /// Representatives per batch (R′); `None` means B/I.
    pub subset_size: Option<usize>,
    pub optimizer: OptimizerConfig,
    /// Evaluate every this many projections; 0 disables.
    pub eval_every: u64,
    /// Relative anchor displacement below which a projection counts as
    /// stationary; 0 disables the convergence test.
    pub convergence_threshold: f64,
}

impl ScheduleConfig {
    pub fn new(loss: LossKind) -> Self {
        Self {
            m: ProjectionLength::Auto { rho: DEFAULT_RHO },
            lambda: DEFAULT_LAMBDA,
            lambda_anneal: None,
            max_projections: 100,
            loss,
            mining: Mining::Random,
            batch: BatchPlan::default(),
            subset_size: None,
            optimizer: OptimizerConfig::default(),
            eval_every: 0,
            convergence_threshold: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.m {
            ProjectionLength::Fixed(0) => return Err(ProfsError::config("M", "must be at least 1")),
            ProjectionLength::Auto { rho: 0 } => return Err(ProfsError::config("rho", "must be at least 1")),
            _ => {}
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(ProfsError::config("lambda", format!("must be finite and >= 0, got {}", self.lambda)));
        }
        if let Some(a) = self.lambda_anneal {
            if !(a.is_finite() && a > 0.0 && a <= 1.0) {
                return Err(ProfsError::config("lambda_anneal", format!("must lie in (0, 1], got {a}")));
            }
        }
        if !(self.convergence_threshold.is_finite() && self.convergence_threshold >= 0.0) {
            return Err(ProfsError::config("convergence_threshold", "must be finite and >= 0"));
        }
        if self.subset_size == Some(0) {
            return Err(ProfsError::config("subset_size", "must be at least 1"));
        }
        self.batch.validate()?;
        self.optimizer.validate()?;
        match self.loss {
            LossKind::Projection { eps_plus, eps_minus } => {
                crate::feasibility::ConstraintSpec::new(eps_plus, eps_minus)?;
            }
            LossKind::Pair(crate::losses::PairLoss::Margin(m)) if m.delta >= m.epsilon || m.delta < 0.0 => {
                return Err(ProfsError::config("delta", "margin loss needs 0 <= delta < epsilon"));
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub k: u64,
    pub inner_step: u64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub k: u64,
    pub step: u64,
    pub report: EvalReport,
}

/// Everything deterministic a run produces.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub steps: Vec<StepRecord>,
    /// ‖θ^(k+1) − θ^(k)‖ for every completed projection.
    pub displacements: Vec<f64>,
    pub evals: Vec<EvalRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub theta: ParamVector,
    pub anchor: ParamVector,
    pub k: u64,
    pub inner_step: u64,
    pub steps: u64,
    pub lambda: f64,
    pub optimizer: Optimizer,
    pub cache: RepCache,
    pub sampler: RepSampler,
    pub reps: Option<RepresentativeSet>,
    pub rng: ChaCha8Rng,
    pub stationary: u32,
    pub converged: bool,
    pub metrics: MetricsLog,
}

/// `‖θ − θ_anchor‖` of the projection in progress.
pub fn anchor_displacement(state: &TrainState) -> f64 {
    ParamVector::sqnorm_diff(&state.theta, &state.anchor)
        .expect("theta and anchor share a layout")
        .sqrt()
}

/// Checkpoint document: architecture, schedule and full training state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub spec: MlpSpec,
    pub config: ScheduleConfig,
    pub config_hash: String,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(ProfsError::Validation(format!("unsupported checkpoint format {:?}", ck.format)));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Runs the schedule on one training set.
#[derive(Debug)]
pub struct Trainer<'a> {
    spec: MlpSpec,
    config: ScheduleConfig,
    data: &'a Dataset,
    index: ClassIndex,
    m: u64,
    subset: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(spec: MlpSpec, config: ScheduleConfig, data: &'a Dataset) -> Result<Self> {
        spec.validate()?;
        config.validate()?;
        if data.input_dim() != spec.input_dim {
            return Err(ProfsError::DimensionMismatch {
                expected: spec.input_dim,
                actual: data.input_dim(),
            });
        }
        let index = ClassIndex::from_labels(data.labels())?;
        let l = index.num_classes();
        let plan = config.batch;
        let m = match config.m {
            ProjectionLength::Fixed(m) => m,
            ProjectionLength::Auto { rho } => derive_m(plan.batch_size as u64, plan.per_class as u64, l as u64, rho)?,
        };
        let subset = config.subset_size.unwrap_or_else(|| plan.default_subset());
        if subset > l {
            return Err(ProfsError::config(
                "subset_size",
                format!("{subset} representatives per batch but only {l} classes"),
            ));
        }
        if subset * plan.per_class > plan.batch_size {
            return Err(ProfsError::config("subset_size", "R' times I exceeds the batch size"));
        }
        if !plan.allow_replacement && index.min_class_size() < plan.per_class {
            let slot = (0..l).find(|&s| index.members(s).len() < plan.per_class).unwrap_or(0);
            return Err(ProfsError::ClassTooSmall {
                label: index.label(slot),
                size: index.members(slot).len(),
                needed: plan.per_class,
            });
        }
        Ok(Self {
            spec,
            config,
            data,
            index,
            m,
            subset,
        })
    }

    /// Resolved projection length.
    pub fn m(&self) -> u64 {
        self.m
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    pub fn class_index(&self) -> &ClassIndex {
        &self.index
    }

    /// Hex SHA-256 of the architecture, schedule and training data. Stopping
    /// and evaluation settings are left out so a run can be extended.
    pub fn config_hash(&self) -> String {
        let trajectory = ScheduleConfig {
            max_projections: 0,
            eval_every: 0,
            convergence_threshold: 0.0,
            ..self.config.clone()
        };
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.spec).expect("spec serializes"));
        h.update(serde_json::to_vec(&trajectory).expect("config serializes"));
        h.update(self.data.to_text().as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Fresh state with θ drawn from the seeded RNG.
    pub fn init_state(&self, seed: u64) -> Result<TrainState> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = self.spec.init(&self.config.loss.extra_init(), &mut rng)?;
        Ok(self.state_with(theta, rng))
    }

    /// Fresh state starting from a given θ.
    pub fn state_from(&self, theta: ParamVector, seed: u64) -> Result<TrainState> {
        let expected = self.spec.layout(self.config.loss.extra_params())?;
        if theta.layout() != &expected {
            return Err(ProfsError::ShapeMismatch("initial parameters do not match the architecture".into()));
        }
        Ok(self.state_with(theta, ChaCha8Rng::seed_from_u64(seed)))
    }

    fn state_with(&self, theta: ParamVector, rng: ChaCha8Rng) -> TrainState {
        TrainState {
            anchor: theta.clone(),
            optimizer: self.config.optimizer.build(theta.len()),
            theta,
            k: 0,
            inner_step: 0,
            steps: 0,
            lambda: self.config.lambda,
            cache: RepCache::new(self.index.num_classes(), self.spec.embed_dim),
            sampler: RepSampler::new(&self.index),
            reps: None,
            rng,
            stationary: 0,
            converged: false,
            metrics: MetricsLog::default(),
        }
    }

    /// One optimizer step of the current projection; starts a projection
    /// (new representatives) when `inner_step == 0` and closes it (anchor
    /// update) after the `M`-th step. Returns the batch objective value.
    pub fn projection_step(&self, state: &mut TrainState) -> Result<f64> {
        if state.inner_step >= self.m {
            return Err(ProfsError::invalid("inner step beyond projection length"));
        }
        if state.inner_step == 0 || state.reps.is_none() {
            state.reps = Some(state.sampler.sample(&self.index, &mut state.rng)?);
            if self.config.mining == Mining::Hncm && state.cache.initialized() < self.index.num_classes() {
                self.warm_cache(state)?;
            }
        }
        let reps = state.reps.as_ref().expect("representatives drawn above");
        let mut batch = build_batch(
            &BatchRequest {
                reps,
                subset_size: self.subset,
                index: &self.index,
                plan: &self.config.batch,
                mining: self.config.mining,
                cache: &state.cache,
            },
            &mut state.rng,
        )?;
        let inputs = self.data.features().select_rows(&batch.samples);
        let pass = self.spec.forward(&state.theta, &inputs)?;
        if matches!(self.config.loss, LossKind::Pair(_)) && batch.needs_mining() {
            batch.mine_hard(&pass.output)?;
        }
        let objective = BatchObjective {
            loss: &self.config.loss,
            tuples: &batch.tuples,
            labels: &batch.labels,
            rep_positions: &batch.rep_positions,
            anchor: Some(&state.anchor),
            lambda: state.lambda,
        };
        let (loss, grad) = gradient_from_pass(&objective, &self.spec, &state.theta, &pass).map_err(|e| match e {
            ProfsError::NonFinite(what) => ProfsError::NonFinite(format!(
                "{what} at step {} (projection {}, inner step {})",
                state.steps, state.k, state.inner_step
            )),
            other => other,
        })?;
        state.optimizer.step(&mut state.theta, &grad)?;
        state.cache.update(&pass.output, &batch)?;
        state.metrics.steps.push(StepRecord {
            step: state.steps,
            k: state.k,
            inner_step: state.inner_step,
            loss,
        });
        state.steps += 1;
        state.inner_step += 1;
        if state.inner_step == self.m {
            self.close_projection(state)?;
        }
        Ok(loss)
    }

    fn warm_cache(&self, state: &mut TrainState) -> Result<()> {
        let reps = state.reps.as_ref().expect("warm-up follows sampling");
        let emb = self
            .spec
            .embed_batch(&state.theta, &self.data.features().select_rows(reps.indices()))?;
        for slot in 0..reps.len() {
            state.cache.set(slot, emb.row(slot))?;
        }
        Ok(())
    }

    fn close_projection(&self, state: &mut TrainState) -> Result<()> {
        let moved = anchor_displacement(state);
        let base = state.anchor.norm();
        let relative = if base > 0.0 { moved / base } else { f64::INFINITY };
        state.metrics.displacements.push(moved);
        state.anchor = state.theta.clone();
        state.k += 1;
        state.inner_step = 0;
        if let Some(a) = self.config.lambda_anneal {
            state.lambda *= a;
        }
        if self.config.convergence_threshold > 0.0 && relative < self.config.convergence_threshold {
            state.stationary += 1;
        } else {
            state.stationary = 0;
        }
        state.converged = state.stationary >= CONVERGENCE_PATIENCE;
        Ok(())
    }

    /// Finishes the projection in progress, or runs a whole new one.
    pub fn run_projection(&self, state: &mut TrainState) -> Result<()> {
        let k = state.k;
        while state.k == k {
            self.projection_step(state)?;
        }
        Ok(())
    }

    /// Runs projections until `max_projections` or convergence, calling
    /// `eval` every `eval_every` projections and once more at the end.
    pub fn run_training<F>(&self, state: &mut TrainState, mut eval: Option<F>) -> Result<()>
    where
        F: FnMut(&MlpSpec, &ParamVector) -> Result<EvalReport>,
    {
        let start = state.k;
        while state.k < self.config.max_projections && !state.converged {
            self.run_projection(state)?;
            let due = self.config.eval_every > 0 && state.k % self.config.eval_every == 0;
            let last = state.k >= self.config.max_projections || state.converged;
            if let Some(f) = eval.as_mut() {
                if due || (last && self.config.eval_every > 0) {
                    self.record_eval(state, f)?;
                }
            }
        }
        if state.k > start {
            debug_assert_eq!(state.inner_step, 0);
        }
        Ok(())
    }

    fn record_eval<F>(&self, state: &mut TrainState, eval: &mut F) -> Result<()>
    where
        F: FnMut(&MlpSpec, &ParamVector) -> Result<EvalReport>,
    {
        let report = eval(&self.spec, &state.theta)?;
        state.metrics.evals.push(EvalRecord {
            k: state.k,
            step: state.steps,
            report,
        });
        Ok(())
    }

    pub fn checkpoint(&self, state: &TrainState) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            spec: self.spec.clone(),
            config: self.config.clone(),
            config_hash: self.config_hash(),
            state: state.clone(),
        }
    }

    pub fn save_checkpoint(&self, state: &TrainState, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint(state).save(path)
    }

    /// Loads a checkpoint written by a trainer with the same architecture,
    /// schedule and data.
    pub fn load_checkpoint(&self, path: impl AsRef<Path>) -> Result<TrainState> {
        let ck = Checkpoint::load(path)?;
        if ck.config_hash != self.config_hash() {
            return Err(ProfsError::Validation(
                "checkpoint was written for a different configuration or dataset".into(),
            ));
        }
        Ok(ck.state)
    }
}

/// Convenience wrapper: initialise from `seed` and train.
pub fn run_training<F>(
    spec: MlpSpec,
    config: ScheduleConfig,
    data: &Dataset,
    seed: u64,
    eval: Option<F>,
) -> Result<TrainState>
where
    F: FnMut(&MlpSpec, &ParamVector) -> Result<EvalReport>,
{
    let trainer = Trainer::new(spec, config, data)?;
    let mut state = trainer.init_state(seed)?;
    trainer.run_training(&mut state, eval)?;
    Ok(state)
}
