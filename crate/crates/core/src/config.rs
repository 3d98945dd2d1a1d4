//! Experiment configuration: a sectioned `key = value` text file.
//!
//! ```text
//! [data]      path | test_path | classes | per_class | input_dim | cluster_spread
//!             separation | warp | informative_dims | seed | split
//! [model]     hidden | embed | activation | normalize
//! [loss]      kind | epsilon | delta | trainable_epsilon | eps_plus | eps_minus
//! [schedule]  M | rho | lambda | lambda_anneal | max_projections | mining | subset
//!             eval_every | convergence_threshold
//! [batch]     B | I | replacement
//! [optimizer] kind | lr | head_multiplier | beta1 | beta2 | eps
//! [run]       seed | out | ks
//! ```
//!
//! Every key is optional. Unknown keys, malformed values and inconsistent
//! combinations are rejected with an error naming the key.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datakit::{gen_synthetic, zero_shot_split, Dataset, SyntheticSpec, Warp};
use crate::error::{ProfsError, Result};
use crate::evalmetrics::DEFAULT_KS;
use crate::losses::{LossKind, MarginParams, PairLoss};
use crate::numcore::{Activation, MlpSpec};
use crate::optimizer::{AdamConfig, OptimizerConfig};
use crate::sampling::{BatchPlan, Mining, Pairing};
use crate::scheduler::{ProjectionLength, ScheduleConfig, DEFAULT_LAMBDA, DEFAULT_RHO};

const SECTIONS: [&str; 7] = ["data", "model", "loss", "schedule", "batch", "optimizer", "run"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// A dataset file, split by class unless a separate test file is given.
    File { path: PathBuf, test_path: Option<PathBuf> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub embed: usize,
    pub activation: Activation,
    pub normalize: bool,
}

impl ModelConfig {
    pub fn mlp_spec(&self, input_dim: usize) -> MlpSpec {
        MlpSpec {
            input_dim,
            hidden_dims: self.hidden.clone(),
            embed_dim: self.embed,
            activation: self.activation,
            normalize_output: self.normalize,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Fraction of classes used for training.
    pub split: f64,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub ks: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::parse("").expect("defaults are valid")
    }
}

/// Raw `section.key → (value, line)` entries, consumed as they are read.
struct Table {
    entries: BTreeMap<String, (String, usize)>,
}

impl Table {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| ProfsError::Parse {
                        line: line_no,
                        message: format!("unterminated section header `{line}`"),
                    })?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(ProfsError::config(name, "unknown section"));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ProfsError::Parse {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            let sec = section.as_deref().ok_or_else(|| ProfsError::Parse {
                line: line_no,
                message: format!("key `{key}` appears before any [section]"),
            })?;
            let full = format!("{sec}.{key}");
            if entries.insert(full.clone(), (value.trim().to_string(), line_no)).is_some() {
                return Err(ProfsError::config(&full, format!("set twice (line {line_no})")));
            }
        }
        Ok(Self { entries })
    }

    fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn raw(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.remove(key)
    }

    fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| ProfsError::config(key, format!("cannot parse `{v}` (line {line}): {e}"))),
        }
    }

    fn or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn list(&mut self, key: &str) -> Result<Option<Vec<usize>>> {
        let Some((v, line)) = self.raw(key) else {
            return Ok(None);
        };
        if v.is_empty() || v == "none" {
            return Ok(Some(Vec::new()));
        }
        v.split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|e| ProfsError::config(key, format!("cannot parse `{v}` (line {line}): {e}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Errors on a key that is meaningless in the chosen configuration.
    fn forbid(&self, key: &str, why: &str) -> Result<()> {
        if self.has(key) {
            return Err(ProfsError::config(key, why.to_string()));
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            Some((key, (_, line))) => Err(ProfsError::config(&key, format!("unknown key (line {line})"))),
            None => Ok(()),
        }
    }
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(ProfsError::config(key, format!("must be finite and > 0, got {v}")))
    }
}

fn at_least(key: &str, v: usize, min: usize) -> Result<usize> {
    if v >= min {
        Ok(v)
    } else {
        Err(ProfsError::config(key, format!("must be >= {min}, got {v}")))
    }
}

const SYNTHETIC_KEYS: [&str; 8] = [
    "classes",
    "per_class",
    "input_dim",
    "cluster_spread",
    "separation",
    "warp",
    "informative_dims",
    "seed",
];

fn parse_data(t: &mut Table) -> Result<(DataSource, f64)> {
    let split = t.or("data.split", 0.5)?;
    if !(split > 0.0 && split < 1.0) {
        return Err(ProfsError::config("data.split", format!("must lie in (0, 1), got {split}")));
    }
    if let Some((path, _)) = t.raw("data.path") {
        for k in SYNTHETIC_KEYS {
            t.forbid(&format!("data.{k}"), "synthetic generation keys cannot be combined with `path`")?;
        }
        let test_path = t.raw("data.test_path").map(|(p, _)| PathBuf::from(p));
        return Ok((
            DataSource::File {
                path: PathBuf::from(path),
                test_path,
            },
            split,
        ));
    }
    t.forbid("data.test_path", "`test_path` needs `path`")?;
    let spec = SyntheticSpec {
        classes: at_least("data.classes", t.or("data.classes", 128)?, 2)?,
        per_class: at_least("data.per_class", t.or("data.per_class", 10)?, 2)?,
        input_dim: at_least("data.input_dim", t.or("data.input_dim", 32)?, 1)?,
        cluster_spread: t.or("data.cluster_spread", 0.5)?,
        separation: positive("data.separation", t.or("data.separation", 1.0)?)?,
        warp: t.or("data.warp", Warp::RandomRotationPlusTanh)?,
        informative_dims: t.get("data.informative_dims")?,
        seed: t.or("data.seed", 0)?,
    };
    if !(spec.cluster_spread.is_finite() && spec.cluster_spread >= 0.0) {
        return Err(ProfsError::config("data.cluster_spread", "must be finite and >= 0"));
    }
    if let Some(r) = spec.informative_dims {
        if r == 0 || r > spec.input_dim {
            return Err(ProfsError::config(
                "data.informative_dims",
                format!("must lie in 1..={}", spec.input_dim),
            ));
        }
    }
    Ok((DataSource::Synthetic(spec), split))
}

fn parse_model(t: &mut Table) -> Result<ModelConfig> {
    let hidden = t.list("model.hidden")?.unwrap_or_else(|| vec![256]);
    if hidden.contains(&0) {
        return Err(ProfsError::config("model.hidden", "layer widths must be positive"));
    }
    Ok(ModelConfig {
        hidden,
        embed: at_least("model.embed", t.or("model.embed", 512)?, 1)?,
        activation: t.or("model.activation", Activation::Relu)?,
        normalize: t.or("model.normalize", true)?,
    })
}

fn parse_loss(t: &mut Table) -> Result<LossKind> {
    let kind: String = t.or("loss.kind", "margin".to_string())?;
    let not_margin = "only applies to the margin loss";
    let not_projection = "only applies to the projection loss";
    let loss = match kind.as_str() {
        "margin" => {
            t.forbid("loss.eps_plus", not_projection)?;
            t.forbid("loss.eps_minus", not_projection)?;
            let epsilon = positive("loss.epsilon", t.or("loss.epsilon", 1.2)?)?;
            let delta = t.or("loss.delta", 0.2)?;
            if !(delta >= 0.0 && delta < epsilon) {
                return Err(ProfsError::config(
                    "loss.delta",
                    format!("must satisfy 0 <= delta < epsilon = {epsilon}, got {delta}"),
                ));
            }
            LossKind::Pair(PairLoss::Margin(MarginParams {
                epsilon,
                delta,
                epsilon_trainable: t.or("loss.trainable_epsilon", false)?,
            }))
        }
        "contrastive" | "triplet" => {
            for k in ["delta", "trainable_epsilon"] {
                t.forbid(&format!("loss.{k}"), not_margin)?;
            }
            t.forbid("loss.eps_plus", not_projection)?;
            t.forbid("loss.eps_minus", not_projection)?;
            if kind == "contrastive" {
                let epsilon = positive("loss.epsilon", t.or("loss.epsilon", 1.0)?)?;
                LossKind::Pair(PairLoss::Contrastive { epsilon })
            } else {
                let epsilon: f64 = t.or("loss.epsilon", 0.2)?;
                if !(epsilon.is_finite() && epsilon >= 0.0) {
                    return Err(ProfsError::config("loss.epsilon", "must be finite and >= 0"));
                }
                LossKind::Pair(PairLoss::Triplet { epsilon })
            }
        }
        "projection" => {
            for k in ["epsilon", "delta", "trainable_epsilon"] {
                t.forbid(&format!("loss.{k}"), "use eps_plus and eps_minus for the projection loss")?;
            }
            let eps_plus: f64 = t.or("loss.eps_plus", 0.5)?;
            let eps_minus: f64 = t.or("loss.eps_minus", 1.0)?;
            crate::feasibility::ConstraintSpec::new(eps_plus, eps_minus)
                .map_err(|e| ProfsError::config("loss.eps_plus", e.to_string()))?;
            LossKind::Projection { eps_plus, eps_minus }
        }
        other => {
            return Err(ProfsError::config(
                "loss.kind",
                format!("unknown loss `{other}` (expected margin, contrastive, triplet or projection)"),
            ))
        }
    };
    Ok(loss)
}

fn parse_optimizer(t: &mut Table) -> Result<OptimizerConfig> {
    let kind: String = t.or("optimizer.kind", "adam".to_string())?;
    let lr = positive("optimizer.lr", t.or("optimizer.lr", 1e-3)?)?;
    match kind.as_str() {
        "adam" => {
            let d = AdamConfig::default();
            let c = AdamConfig {
                base_lr: lr,
                head_lr_multiplier: positive("optimizer.head_multiplier", t.or("optimizer.head_multiplier", d.head_lr_multiplier)?)?,
                beta1: t.or("optimizer.beta1", d.beta1)?,
                beta2: t.or("optimizer.beta2", d.beta2)?,
                eps: positive("optimizer.eps", t.or("optimizer.eps", d.eps)?)?,
            };
            for (k, b) in [("optimizer.beta1", c.beta1), ("optimizer.beta2", c.beta2)] {
                if !(0.0..1.0).contains(&b) {
                    return Err(ProfsError::config(k, format!("must lie in [0, 1), got {b}")));
                }
            }
            Ok(OptimizerConfig::Adam(c))
        }
        "sgd" => {
            for k in ["head_multiplier", "beta1", "beta2", "eps"] {
                t.forbid(&format!("optimizer.{k}"), "only applies to adam")?;
            }
            Ok(OptimizerConfig::Sgd { lr })
        }
        other => Err(ProfsError::config(
            "optimizer.kind",
            format!("unknown optimizer `{other}` (expected adam or sgd)"),
        )),
    }
}

fn parse_schedule(t: &mut Table, loss: LossKind, optimizer: OptimizerConfig) -> Result<ScheduleConfig> {
    let batch = BatchPlan {
        batch_size: at_least("batch.B", t.or("batch.B", 128)?, 1)?,
        per_class: at_least("batch.I", t.or("batch.I", 2)?, 2)?,
        pairing: if loss.uses_triplets() {
            Pairing::Triplets
        } else {
            Pairing::BalancedPairs
        },
        allow_replacement: t.or("batch.replacement", false)?,
    };
    if batch.batch_size % batch.per_class != 0 {
        return Err(ProfsError::config(
            "batch.B",
            format!("must be a multiple of I = {}, got {}", batch.per_class, batch.batch_size),
        ));
    }
    if t.has("schedule.M") && t.has("schedule.rho") {
        return Err(ProfsError::config("schedule.M", "M and rho are mutually exclusive"));
    }
    let m = match t.raw("schedule.M") {
        Some((v, _)) if v == "auto" => ProjectionLength::Auto { rho: DEFAULT_RHO },
        Some((v, line)) => {
            let m: u64 = v
                .parse()
                .map_err(|e| ProfsError::config("schedule.M", format!("cannot parse `{v}` (line {line}): {e}")))?;
            ProjectionLength::Fixed(at_least("schedule.M", m as usize, 1)? as u64)
        }
        None => ProjectionLength::Auto {
            rho: at_least("schedule.rho", t.or("schedule.rho", DEFAULT_RHO as usize)?, 1)? as u64,
        },
    };
    let lambda: f64 = t.or("schedule.lambda", DEFAULT_LAMBDA)?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(ProfsError::config("schedule.lambda", format!("lambda must be >= 0, got {lambda}")));
    }
    let lambda_anneal: Option<f64> = t.get("schedule.lambda_anneal")?;
    if let Some(a) = lambda_anneal {
        if !(a > 0.0 && a <= 1.0) {
            return Err(ProfsError::config("schedule.lambda_anneal", format!("must lie in (0, 1], got {a}")));
        }
    }
    let subset_size: Option<usize> = t.get("schedule.subset")?;
    if let Some(r) = subset_size {
        at_least("schedule.subset", r, 1)?;
        if r * batch.per_class > batch.batch_size {
            return Err(ProfsError::config(
                "schedule.subset",
                format!("{r} representatives times I = {} exceeds B = {}", batch.per_class, batch.batch_size),
            ));
        }
    }
    let convergence_threshold: f64 = t.or("schedule.convergence_threshold", 0.0)?;
    if !(convergence_threshold.is_finite() && convergence_threshold >= 0.0) {
        return Err(ProfsError::config("schedule.convergence_threshold", "must be finite and >= 0"));
    }
    Ok(ScheduleConfig {
        m,
        lambda,
        lambda_anneal,
        max_projections: t.or("schedule.max_projections", 100)?,
        loss,
        mining: t.or("schedule.mining", Mining::Random)?,
        batch,
        subset_size,
        optimizer,
        eval_every: t.or("schedule.eval_every", 10)?,
        convergence_threshold,
    })
}

impl ExperimentConfig {
    /// Parses and validates a configuration, applying defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut t = Table::parse(text)?;
        let (data, split) = parse_data(&mut t)?;
        let model = parse_model(&mut t)?;
        let loss = parse_loss(&mut t)?;
        let optimizer = parse_optimizer(&mut t)?;
        let schedule = parse_schedule(&mut t, loss, optimizer)?;
        let seed = t.or("run.seed", 0)?;
        let out = t.raw("run.out").map(|(p, _)| PathBuf::from(p));
        let ks = t.list("run.ks")?.unwrap_or_else(|| DEFAULT_KS.to_vec());
        if ks.is_empty() || ks.contains(&0) {
            return Err(ProfsError::config("run.ks", "needs at least one K, each >= 1"));
        }
        t.finish()?;
        let cfg = Self {
            data,
            split,
            model,
            schedule,
            seed,
            out,
            ks,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Cross-field checks that can be made without reading data files.
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if let DataSource::Synthetic(s) = &self.data {
            self.model.mlp_spec(s.input_dim).validate()?;
            let train = (self.split * s.classes as f64).ceil() as usize;
            if train >= s.classes {
                return Err(ProfsError::config("data.split", "leaves no test classes"));
            }
            self.check_train_shape(train, s.per_class)?;
            let test_n = (s.classes - train) * s.per_class;
            self.check_ks(test_n)?;
        }
        Ok(())
    }

    fn check_train_shape(&self, classes: usize, min_class: usize) -> Result<()> {
        let plan = &self.schedule.batch;
        let subset = self.schedule.subset_size.unwrap_or(plan.default_subset());
        if subset > classes {
            let key = if self.schedule.subset_size.is_some() { "schedule.subset" } else { "batch.B" };
            return Err(ProfsError::config(
                key,
                format!("{subset} representatives per batch but only {classes} training classes"),
            ));
        }
        if min_class < plan.per_class && !plan.allow_replacement {
            return Err(ProfsError::config(
                "batch.I",
                format!("classes have only {min_class} samples; set replacement = true or lower I"),
            ));
        }
        Ok(())
    }

    fn check_ks(&self, test_n: usize) -> Result<()> {
        if let Some(&k) = self.ks.iter().find(|&&k| k >= test_n) {
            return Err(ProfsError::config(
                "run.ks",
                format!("K = {k} needs more than {test_n} test samples"),
            ));
        }
        Ok(())
    }

    /// Materializes the (train, test) datasets and re-checks the shape
    /// constraints against them.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let (train, test) = match &self.data {
            DataSource::Synthetic(s) => zero_shot_split(&gen_synthetic(s)?, self.split)?,
            DataSource::File { path, test_path: None } => zero_shot_split(&Dataset::load(path)?, self.split)?,
            DataSource::File {
                path,
                test_path: Some(tp),
            } => (Dataset::load(path)?, Dataset::load(tp)?),
        };
        if train.input_dim() != test.input_dim() {
            return Err(ProfsError::Validation(format!(
                "train and test input dimensions differ ({} vs {})",
                train.input_dim(),
                test.input_dim()
            )));
        }
        self.model.mlp_spec(train.input_dim()).validate()?;
        let min_class = train
            .classes()
            .iter()
            .map(|&c| train.labels().iter().filter(|&&l| l == c).count())
            .min()
            .unwrap_or(0);
        self.check_train_shape(train.num_classes(), min_class)?;
        self.check_ks(test.len())?;
        Ok((train, test))
    }

    /// The effective configuration, every key included; parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let list = |v: &[usize]| {
            if v.is_empty() {
                "none".to_string()
            } else {
                v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
            }
        };
        s.push_str("[data]\n");
        match &self.data {
            DataSource::Synthetic(d) => {
                let _ = writeln!(s, "classes = {}", d.classes);
                let _ = writeln!(s, "per_class = {}", d.per_class);
                let _ = writeln!(s, "input_dim = {}", d.input_dim);
                let _ = writeln!(s, "cluster_spread = {}", d.cluster_spread);
                let _ = writeln!(s, "separation = {}", d.separation);
                let _ = writeln!(s, "warp = {}", d.warp);
                if let Some(r) = d.informative_dims {
                    let _ = writeln!(s, "informative_dims = {r}");
                }
                let _ = writeln!(s, "seed = {}", d.seed);
            }
            DataSource::File { path, test_path } => {
                let _ = writeln!(s, "path = {}", path.display());
                if let Some(tp) = test_path {
                    let _ = writeln!(s, "test_path = {}", tp.display());
                }
            }
        }
        let _ = writeln!(s, "split = {}", self.split);

        let m = &self.model;
        let _ = writeln!(s, "\n[model]\nhidden = {}", list(&m.hidden));
        let _ = writeln!(s, "embed = {}\nactivation = {}\nnormalize = {}", m.embed, m.activation, m.normalize);

        s.push_str("\n[loss]\n");
        match self.schedule.loss {
            LossKind::Pair(PairLoss::Margin(p)) => {
                let _ = writeln!(
                    s,
                    "kind = margin\nepsilon = {}\ndelta = {}\ntrainable_epsilon = {}",
                    p.epsilon, p.delta, p.epsilon_trainable
                );
            }
            LossKind::Pair(PairLoss::Contrastive { epsilon }) => {
                let _ = writeln!(s, "kind = contrastive\nepsilon = {epsilon}");
            }
            LossKind::Pair(PairLoss::Triplet { epsilon }) => {
                let _ = writeln!(s, "kind = triplet\nepsilon = {epsilon}");
            }
            LossKind::Projection { eps_plus, eps_minus } => {
                let _ = writeln!(s, "kind = projection\neps_plus = {eps_plus}\neps_minus = {eps_minus}");
            }
        }

        let sc = &self.schedule;
        s.push_str("\n[schedule]\n");
        match sc.m {
            ProjectionLength::Fixed(m) => {
                let _ = writeln!(s, "M = {m}");
            }
            ProjectionLength::Auto { rho } => {
                let _ = writeln!(s, "rho = {rho}");
            }
        }
        let _ = writeln!(s, "lambda = {}", sc.lambda);
        if let Some(a) = sc.lambda_anneal {
            let _ = writeln!(s, "lambda_anneal = {a}");
        }
        let _ = writeln!(s, "max_projections = {}\nmining = {}", sc.max_projections, sc.mining);
        if let Some(r) = sc.subset_size {
            let _ = writeln!(s, "subset = {r}");
        }
        let _ = writeln!(
            s,
            "eval_every = {}\nconvergence_threshold = {}",
            sc.eval_every, sc.convergence_threshold
        );

        let b = &sc.batch;
        let _ = writeln!(s, "\n[batch]\nB = {}\nI = {}\nreplacement = {}", b.batch_size, b.per_class, b.allow_replacement);

        s.push_str("\n[optimizer]\n");
        match sc.optimizer {
            OptimizerConfig::Adam(a) => {
                let _ = writeln!(
                    s,
                    "kind = adam\nlr = {}\nhead_multiplier = {}\nbeta1 = {}\nbeta2 = {}\neps = {}",
                    a.base_lr, a.head_lr_multiplier, a.beta1, a.beta2, a.eps
                );
            }
            OptimizerConfig::Sgd { lr } => {
                let _ = writeln!(s, "kind = sgd\nlr = {lr}");
            }
        }

        let _ = writeln!(s, "\n[run]\nseed = {}", self.seed);
        if let Some(o) = &self.out {
            let _ = writeln!(s, "out = {}", o.display());
        }
        let _ = writeln!(s, "ks = {}", list(&self.ks));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_of(e: ProfsError) -> String {
        match e {
            ProfsError::Config { key, .. } => key,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::parse("").unwrap();
        let sc = &c.schedule;
        assert_eq!((sc.batch.batch_size, sc.batch.per_class), (128, 2));
        assert_eq!(sc.m, ProjectionLength::Auto { rho: 6 });
        assert_eq!(sc.lambda, 1e-3);
        let OptimizerConfig::Adam(a) = sc.optimizer else { panic!() };
        assert_eq!((a.beta1, a.beta2, a.head_lr_multiplier), (0.9, 0.99, 10.0));
        assert_eq!(c.model.embed, 512);
        assert_eq!(c.ks, vec![1, 2, 4, 8]);
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn errors_name_the_key() {
        let err = ExperimentConfig::parse("[schedule]\nlambda = -1\n").unwrap_err();
        assert!(err.to_string().contains("lambda"));
        let err = ExperimentConfig::parse("[schedule]\nM = 4\nrho = 6\n").unwrap_err();
        assert!(err.to_string().contains("M and rho are mutually exclusive"));
        assert_eq!(key_of(ExperimentConfig::parse("[batch]\nB = many\n").unwrap_err()), "batch.B");
        assert_eq!(key_of(ExperimentConfig::parse("[model]\ndepth = 3\n").unwrap_err()), "model.depth");
        assert_eq!(key_of(ExperimentConfig::parse("[extras]\n").unwrap_err()), "extras");
        assert_eq!(
            key_of(ExperimentConfig::parse("[loss]\nkind = contrastive\ndelta = 0.1\n").unwrap_err()),
            "loss.delta"
        );
        assert_eq!(key_of(ExperimentConfig::parse("[batch]\nB = 127\n").unwrap_err()), "batch.B");
        assert_eq!(key_of(ExperimentConfig::parse("[schedule]\nM = 0\n").unwrap_err()), "schedule.M");
        assert!(matches!(
            ExperimentConfig::parse("lambda = 1\n").unwrap_err(),
            ProfsError::Parse { line: 1, .. }
        ));
        assert!(ExperimentConfig::parse("[run]\nseed = 1\nseed = 2\n").is_err());
    }

    #[test]
    fn cross_field_checks() {
        // 64 train classes cannot host 100 representatives
        let e = ExperimentConfig::parse("[schedule]\nsubset = 100\n[batch]\nB = 200\n").unwrap_err();
        assert_eq!(key_of(e), "schedule.subset");
        let e = ExperimentConfig::parse("[data]\nclasses = 10\n").unwrap_err();
        assert_eq!(key_of(e), "batch.B");
        let e = ExperimentConfig::parse("[data]\nclasses = 4\nper_class = 3\n[batch]\nB = 4\n[run]\nks = 1,6\n")
            .unwrap_err();
        assert_eq!(key_of(e), "run.ks");
        let e = ExperimentConfig::parse("[data]\nper_class = 3\n[batch]\nI = 4\nB = 128\n").unwrap_err();
        assert_eq!(key_of(e), "batch.I");
        assert!(ExperimentConfig::parse("[data]\nper_class = 3\n[batch]\nI = 4\nB = 128\nreplacement = true\n").is_ok());
        let e = ExperimentConfig::parse("[data]\npath = x.txt\nclasses = 3\n").unwrap_err();
        assert_eq!(key_of(e), "data.classes");
    }

    #[test]
    fn echo_round_trips() {
        let texts = [
            "",
            "[data]\nclasses = 40\nper_class = 25\ninformative_dims = 8\n[model]\nhidden = none\nembed = 16\n\
             [loss]\nkind = projection\neps_plus = 0.25\n[schedule]\nM = 3\nlambda_anneal = 0.9\nsubset = 10\n\
             [batch]\nB = 40\n[optimizer]\nkind = sgd\nlr = 0.05\n[run]\nout = /tmp/x\nks = 1,5\n",
            "[loss]\nkind = triplet # comment\n[model]\nhidden = 64, 32\nactivation = tanh\n",
            "[data]\npath = a.txt\ntest_path = b.txt\n[loss]\ntrainable_epsilon = true\n",
        ];
        for t in texts {
            let c = ExperimentConfig::parse(t).unwrap();
            assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c, "{t}");
        }
        let c = ExperimentConfig::parse("[loss]\nkind = triplet\n").unwrap();
        assert_eq!(c.schedule.batch.pairing, Pairing::Triplets);
    }

    #[test]
    fn synthetic_data_materializes() {
        let c = ExperimentConfig::parse(
            "[data]\nclasses = 6\nper_class = 4\ninput_dim = 3\n[batch]\nB = 6\n[run]\nks = 1,2\n",
        )
        .unwrap();
        let (tr, te) = c.load_data().unwrap();
        assert_eq!((tr.num_classes(), te.num_classes()), (3, 3));
    }
}
