//! The `profs` command line: dataset generation, training, evaluation and
//! audits. Exit codes: 0 success, 1 usage or validation error, 2 runtime
//! failure.

pub mod records;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use profs_core::config::ExperimentConfig;
use profs_core::datakit::{gen_synthetic, Dataset};
use profs_core::evalmetrics::{evaluate, EvalReport, DEFAULT_KS};
use profs_core::feasibility::{
    check_full, check_relaxed, proposition1_epsilons, ConstraintLoss, ConstraintSpec, FeasibilityReport, LossMargins,
};
use profs_core::gradcheck::{gradcheck, OBJECTIVES, TOLERANCE};
use profs_core::losses::{LossKind, PairLoss};
use profs_core::numcore::{MlpSpec, ParamVector};
use profs_core::sampling::{ClassIndex, RepSampler};
use profs_core::scheduler::{Checkpoint, ProjectionLength, TrainState, Trainer};
use profs_core::ProfsError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use records::{append_table, metrics_header, metrics_row, step_row, write_metrics, write_table, STEPS_HEADER};

/// Bad user input detected outside the core library.
#[derive(Debug)]
pub struct BadInput(pub String);

impl std::fmt::Display for BadInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BadInput {}

#[derive(Parser, Debug)]
#[command(name = "profs", version, about = "Alternating-projection metric learning at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the configured synthetic dataset and write it to a file.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the data seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        print_config: bool,
    },
    /// Train and write config, metrics, step log, checkpoint and manifest.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the run seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides `run.out`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        print_config: bool,
        /// Resume from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset file and append the record.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Metrics file to append to; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// k-means seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check the constraint sets implied by a checkpoint's loss on a dataset.
    FeasibilityCheck {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Seed for drawing the representatives of the relaxed check.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train once per grid cell over λ and/or M.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        lambda: Vec<f64>,
        #[arg(long = "m", value_delimiter = ',')]
        m: Vec<u64>,
    },
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return 1;
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

/// 1 for bad input, 2 for failures while running.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if cause.downcast_ref::<BadInput>().is_some() {
            return 1;
        }
        if let Some(p) = cause.downcast_ref::<ProfsError>() {
            return if p.is_validation() { 1 } else { 2 };
        }
    }
    2
}

/// `PROFS_THREADS` caps the evaluation thread pool.
fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("PROFS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| BadInput(format!("PROFS_THREADS must be a positive integer, got `{v}`")))?;
    // a second initialisation (several runs in one process) keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Generate {
            config,
            seed,
            out,
            print_config,
        } => generate(config.as_deref(), seed, out.as_deref(), print_config),
        Command::Train {
            config,
            seed,
            out,
            print_config,
            checkpoint,
        } => {
            let cfg = effective_config(config.as_deref(), seed)?;
            if print_config {
                print!("{}", cfg.to_text());
                return Ok(0);
            }
            let out = out
                .or_else(|| cfg.out.clone())
                .unwrap_or_else(|| PathBuf::from("runs/profs"));
            train(&cfg, &out, checkpoint.as_deref())?;
            Ok(0)
        }
        Command::Evaluate {
            checkpoint,
            data,
            out,
            seed,
        } => evaluate_checkpoint(&checkpoint, &data, out.as_deref(), seed),
        Command::FeasibilityCheck { checkpoint, data, seed } => feasibility(&checkpoint, &data, seed),
        Command::Gradcheck { trials, seed } => {
            if trials == 0 {
                return Err(BadInput("--trials must be at least 1".into()).into());
            }
            let r = gradcheck(trials, seed)?;
            for (name, err) in OBJECTIVES.iter().zip(r.max_rel_error) {
                println!("{name:12} max relative error {err:.3e}");
            }
            println!(
                "trials {} resampled {} max relative error {:.3e} tolerance {TOLERANCE:.0e}: {}",
                r.trials,
                r.resampled,
                r.worst(),
                if r.passed() { "PASS" } else { "FAIL" }
            );
            Ok(if r.passed() { 0 } else { 1 })
        }
        Command::Sweep {
            config,
            seed,
            out,
            lambda,
            m,
        } => sweep(config.as_deref(), seed, &out, &lambda, &m),
    }
}

fn effective_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| BadInput(format!("cannot read config {}: {e}", p.display())))?;
            ExperimentConfig::parse(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(BadInput(format!("dataset {} does not exist", path.display())).into());
    }
    Dataset::load(path).with_context(|| format!("reading {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(BadInput(format!("checkpoint {} does not exist", path.display())).into());
    }
    Checkpoint::load(path).with_context(|| format!("reading {}", path.display()))
}

fn generate(config: Option<&Path>, seed: Option<u64>, out: Option<&Path>, print_config: bool) -> Result<i32> {
    let mut cfg = effective_config(config, None)?;
    let profs_core::config::DataSource::Synthetic(spec) = &mut cfg.data else {
        return Err(BadInput("generate needs a synthetic [data] block, not a dataset path".into()).into());
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    if print_config {
        print!("{}", cfg.to_text());
        return Ok(0);
    }
    let profs_core::config::DataSource::Synthetic(spec) = &cfg.data else { unreachable!() };
    let out = out.ok_or_else(|| BadInput("generate needs --out".into()))?;
    let d = gen_synthetic(spec)?;
    d.save(out).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "wrote {} samples of {} classes (dim {}) to {}",
        d.len(),
        d.num_classes(),
        d.input_dim(),
        out.display()
    );
    Ok(0)
}

/// Paths of a run directory.
pub struct RunFiles {
    pub config: PathBuf,
    pub metrics: PathBuf,
    pub steps: PathBuf,
    pub timing: PathBuf,
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
}

impl RunFiles {
    pub fn new(dir: &Path) -> Self {
        Self {
            config: dir.join("config.ini"),
            metrics: dir.join("metrics.tsv"),
            steps: dir.join("steps.tsv"),
            timing: dir.join("timing.tsv"),
            checkpoint: dir.join("checkpoint.json"),
            manifest: dir.join("manifest.json"),
        }
    }
}

/// Trains one configuration into `out`; returns the final state.
pub fn train(cfg: &ExperimentConfig, out: &Path, resume: Option<&Path>) -> Result<TrainState> {
    let started = Instant::now();
    let (train_set, test_set) = cfg.load_data()?;
    let spec = cfg.model.mlp_spec(train_set.input_dim());
    let trainer = Trainer::new(spec, cfg.schedule.clone(), &train_set)?;
    let mut state = match resume {
        Some(p) => {
            if !p.exists() {
                return Err(BadInput(format!("checkpoint {} does not exist", p.display())).into());
            }
            trainer.load_checkpoint(p).with_context(|| format!("resuming from {}", p.display()))?
        }
        None => trainer.init_state(cfg.seed)?,
    };
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let files = RunFiles::new(out);
    std::fs::write(&files.config, cfg.to_text())?;

    let mut wall = Vec::new();
    let eval_seed = cfg.seed;
    let ks = cfg.ks.clone();
    let hook = |spec: &MlpSpec, theta: &ParamVector| -> profs_core::Result<EvalReport> {
        let emb = spec.embed_batch(theta, test_set.features())?;
        let report = evaluate(&emb, test_set.labels(), &ks, eval_seed)?;
        wall.push(started.elapsed().as_secs_f64());
        eprintln!(
            "eval: R@{} {:.4} nmi {:.4} f1 {:.4}",
            ks[0],
            report.recall_at[&ks[0]],
            report.nmi,
            report.f1
        );
        Ok(report)
    };
    trainer.run_training(&mut state, Some(hook))?;

    write_metrics(&files.metrics, &cfg.ks, &state.metrics.evals)?;
    write_table(&files.steps, STEPS_HEADER, state.metrics.steps.iter().map(step_row))?;
    let first_new = state.metrics.evals.len() - wall.len();
    write_table(
        &files.timing,
        "k\twall_seconds",
        state.metrics.evals[first_new..]
            .iter()
            .zip(&wall)
            .map(|(e, w)| format!("{}\t{w:.3}", e.k)),
    )?;
    trainer.save_checkpoint(&state, &files.checkpoint)?;
    let manifest = serde_json::json!({
        "seed": cfg.seed,
        "config_hash": trainer.config_hash(),
        "profs_version": env!("CARGO_PKG_VERSION"),
        "checkpoint_format": "profs-checkpoint/1",
        "resumed_from": resume.map(|p| p.display().to_string()),
        "M": trainer.m(),
        "projections": state.k,
        "steps": state.steps,
        "converged": state.converged,
        "wall_seconds": started.elapsed().as_secs_f64(),
    });
    std::fs::write(&files.manifest, serde_json::to_string_pretty(&manifest)?)?;
    eprintln!(
        "trained {} projections ({} steps, M = {}) in {:.1}s -> {}",
        state.k,
        state.steps,
        trainer.m(),
        started.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(state)
}

fn evaluate_checkpoint(ck_path: &Path, data: &Path, out: Option<&Path>, seed: u64) -> Result<i32> {
    let ck = load_checkpoint(ck_path)?;
    let d = load_dataset(data)?;
    let ks: Vec<usize> = DEFAULT_KS.to_vec();
    if d.len() <= ks[ks.len() - 1] {
        return Err(BadInput(format!("{} has too few samples for Recall@{}", data.display(), ks[ks.len() - 1])).into());
    }
    let emb = ck.spec.embed_batch(&ck.state.theta, d.features())?;
    let report = evaluate(&emb, d.labels(), &ks, seed)?;
    let header = metrics_header(&ks);
    let row = metrics_row(ck.state.k, &report);
    println!("{header}\n{row}");
    let target = match out {
        Some(p) => p.to_path_buf(),
        None => ck_path.parent().unwrap_or(Path::new(".")).join("metrics.tsv"),
    };
    append_table(&target, &header, &[row])?;
    Ok(0)
}

/// `(ε⁺, ε⁻)` of the constraint set a loss is tied to.
pub fn loss_constraints(loss: &LossKind) -> profs_core::Result<ConstraintSpec> {
    let (lo, hi) = match *loss {
        LossKind::Projection { eps_plus, eps_minus } => (eps_plus, eps_minus),
        LossKind::Pair(PairLoss::Contrastive { epsilon }) => {
            proposition1_epsilons(ConstraintLoss::Contrastive, &LossMargins::new(epsilon, 0.0))?
        }
        LossKind::Pair(PairLoss::Triplet { epsilon }) => {
            proposition1_epsilons(ConstraintLoss::Triplet, &LossMargins::new(epsilon, 0.0))?
        }
        LossKind::Pair(PairLoss::Margin(m)) => {
            proposition1_epsilons(ConstraintLoss::Margin, &LossMargins::new(m.epsilon, m.delta))?
        }
    };
    ConstraintSpec::new(lo, hi)
}

fn print_report(name: &str, r: &FeasibilityReport) {
    println!(
        "{name:8} feasible {} pairs {} positive violations {} negative violations {} max violation {:.6} worst pair {}",
        r.feasible,
        r.pairs_checked,
        r.positive_violations,
        r.negative_violations,
        r.max_violation,
        r.worst_pair.map_or("-".to_string(), |(i, j)| format!("({i},{j})"))
    );
}

fn feasibility(ck_path: &Path, data: &Path, seed: u64) -> Result<i32> {
    let ck = load_checkpoint(ck_path)?;
    let d = load_dataset(data)?;
    let cs = loss_constraints(&ck.config.loss)?;
    let emb = ck.spec.embed_batch(&ck.state.theta, d.features())?;
    println!("eps_plus {} eps_minus {}", cs.eps_plus, cs.eps_minus);
    print_report("full", &check_full(&emb, d.labels(), &cs)?);
    let index = ClassIndex::from_labels(d.labels())?;
    let reps = RepSampler::new(&index).sample(&index, &mut ChaCha8Rng::seed_from_u64(seed))?;
    print_report("relaxed", &check_relaxed(&emb, d.labels(), reps.indices(), &cs)?);
    Ok(0)
}

fn sweep(config: Option<&Path>, seed: Option<u64>, out: &Path, lambdas: &[f64], ms: &[u64]) -> Result<i32> {
    let base = effective_config(config, seed)?;
    if lambdas.is_empty() && ms.is_empty() {
        return Err(BadInput("sweep needs --lambda and/or --m values".into()).into());
    }
    let lambda_axis: Vec<Option<f64>> = if lambdas.is_empty() { vec![None] } else { lambdas.iter().map(|&l| Some(l)).collect() };
    let m_axis: Vec<Option<u64>> = if ms.is_empty() { vec![None] } else { ms.iter().map(|&m| Some(m)).collect() };
    let mut cells = Vec::new();
    for &l in &lambda_axis {
        for &m in &m_axis {
            let mut cfg = base.clone();
            let mut name = Vec::new();
            if let Some(l) = l {
                cfg.schedule.lambda = l;
                name.push(format!("lambda={l}"));
            }
            if let Some(m) = m {
                cfg.schedule.m = ProjectionLength::Fixed(m);
                name.push(format!("M={m}"));
            }
            cfg.validate()?;
            cells.push((name.join("_"), cfg));
        }
    }
    std::fs::create_dir_all(out)?;
    let mut summary = Vec::new();
    for (name, cfg) in &cells {
        let state = train(cfg, &out.join(name), None)?;
        let last = state.metrics.evals.last();
        let mean_disp = if state.metrics.displacements.is_empty() {
            0.0
        } else {
            state.metrics.displacements.iter().sum::<f64>() / state.metrics.displacements.len() as f64
        };
        summary.push(format!(
            "{name}\t{}\t{}\t{mean_disp}",
            state.k,
            last.map_or(f64::NAN, |e| e.report.recall_at[&cfg.ks[0]])
        ));
    }
    write_table(
        &out.join("sweep.tsv"),
        &format!("cell\tprojections\tR@{}\tmean_displacement", base.ks[0]),
        summary,
    )?;
    println!("{} cells written to {}", cells.len(), out.display());
    Ok(0)
}
