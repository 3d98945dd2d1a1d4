//! Finite-difference audit of the analytic gradients: random small MLPs,
//! every batch objective with the anchor regularizer switched on.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ProfsError, Result};
use crate::feasibility::all_tuples;
use crate::losses::{BatchObjective, LossKind, MarginParams, PairLoss, TupleSet};
use crate::numcore::{distance_matrix, gradient, objective_value, Activation, Matrix, MlpSpec, ParamVector};

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-5;
/// Sampled coordinates per objective and trial.
pub const COORDINATES: usize = 128;
/// Hinges and ReLUs closer than this to their kink force a resample.
const KINK_MARGIN: f64 = 1e-4;
const MAX_RESAMPLES: usize = 200;

pub const OBJECTIVES: [&str; 4] = ["contrastive", "triplet", "margin", "projection"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub trials: usize,
    /// Worst relative error per objective, in [`OBJECTIVES`] order.
    pub max_rel_error: [f64; 4],
    /// Draws rejected for sitting too close to a kink.
    pub resampled: usize,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() <= TOLERANCE
    }
}

struct Problem {
    spec: MlpSpec,
    theta: ParamVector,
    anchor: ParamVector,
    inputs: Matrix,
    labels: Vec<usize>,
    reps: Vec<usize>,
    tuples: TupleSet,
    loss: LossKind,
    lambda: f64,
}

/// Midpoint between the `q`-quantile and its successor, so no distance sits on it.
fn gap_after(sorted: &[f64], q: f64) -> f64 {
    let i = (((sorted.len() - 1) as f64 * q).round() as usize).min(sorted.len() - 2);
    0.5 * (sorted[i] + sorted[i + 1])
}

fn random_spec<R: Rng>(rng: &mut R) -> MlpSpec {
    let mut spec = MlpSpec::new(
        rng.random_range(2..=8),
        vec![rng.random_range(2..=32), rng.random_range(2..=32)],
        rng.random_range(2..=8),
    );
    spec.activation = if rng.random_bool(0.5) { Activation::Relu } else { Activation::Tanh };
    spec.normalize_output = rng.random_bool(0.5);
    spec
}

/// A random problem for `objective`, or `None` when some hinge or ReLU lies
/// within the kink margin.
fn draw(objective: usize, rng: &mut ChaCha8Rng) -> Result<Option<Problem>> {
    let spec = random_spec(rng);
    let classes = rng.random_range(2..=3);
    let per_class = rng.random_range(2..=4);
    let labels: Vec<usize> = (1..=classes).flat_map(|c| std::iter::repeat_n(c, per_class)).collect();
    let n = labels.len();
    let inputs = Matrix::from_vec(
        n,
        spec.input_dim,
        (0..n * spec.input_dim).map(|_| rng.sample(StandardNormal)).collect(),
    )?;
    let trainable = objective == 2;
    let layout = spec.layout(usize::from(trainable))?;
    let mut theta = spec.init(&vec![0.0; layout.extra()], rng)?;
    for b in 0..spec.layer_shapes().len() {
        theta.bias_mut(b).iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    }
    let pass = spec.forward(&theta, &inputs)?;
    if spec.activation == Activation::Relu && pass.min_hidden_preactivation() < KINK_MARGIN {
        return Ok(None);
    }
    let dm = distance_matrix(&pass.output);
    let mut ds: Vec<f64> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).map(|(i, j)| dm.get(i, j)).collect();
    ds.sort_by(f64::total_cmp);
    if ds[0] < KINK_MARGIN {
        return Ok(None);
    }
    let median = gap_after(&ds, 0.5);
    let tuples = all_tuples(&labels);
    let reps: Vec<usize> = (0..classes).map(|c| c * per_class + rng.random_range(0..per_class)).collect();
    let far = |x: f64| x.abs() >= KINK_MARGIN;
    let (loss, smooth) = match objective {
        0 => {
            let eps = median;
            let ok = tuples.pairs.iter().all(|p| p.positive || far(dm.get(p.i, p.j) - eps));
            (LossKind::Pair(PairLoss::Contrastive { epsilon: eps }), ok)
        }
        1 => {
            let eps = rng.random_range(0.05..0.5) * median * median;
            let ok = tuples.triplets.iter().all(|t| {
                let dp = dm.get(t.anchor, t.positive);
                let dn = dm.get(t.anchor, t.negative);
                far(dp * dp - dn * dn + eps)
            });
            (LossKind::Pair(PairLoss::Triplet { epsilon: eps }), ok)
        }
        2 => {
            let eps = median;
            let delta = rng.random_range(0.05..0.5) * eps;
            theta.extra_mut()[0] = eps;
            let ok = tuples.pairs.iter().all(|p| {
                let d = dm.get(p.i, p.j);
                if p.positive { far(d - eps + delta) } else { far(eps + delta - d) }
            });
            let m = MarginParams {
                epsilon: eps,
                delta,
                epsilon_trainable: true,
            };
            (LossKind::Pair(PairLoss::Margin(m)), ok)
        }
        _ => {
            let (lo, hi) = (gap_after(&ds, 0.3), gap_after(&ds, 0.7));
            let ok = ds.iter().all(|&d| far(d - lo) && far(d - hi));
            (LossKind::Projection { eps_plus: lo, eps_minus: hi }, ok)
        }
    };
    if !smooth {
        return Ok(None);
    }
    let mut anchor = theta.clone();
    anchor
        .as_mut_slice()
        .iter_mut()
        .for_each(|v| *v += 0.1 * rng.sample::<f64, _>(StandardNormal));
    Ok(Some(Problem {
        spec,
        theta,
        anchor,
        inputs,
        labels,
        reps,
        tuples,
        loss,
        lambda: rng.random_range(0.1..2.0),
    }))
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)` over the sampled coordinates; 0 when both vanish.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn audit(p: &Problem, rng: &mut ChaCha8Rng) -> Result<f64> {
    let obj = BatchObjective {
        loss: &p.loss,
        tuples: &p.tuples,
        labels: &p.labels,
        rep_positions: &p.reps,
        anchor: Some(&p.anchor),
        lambda: p.lambda,
    };
    let (_, grad) = gradient(&obj, &p.spec, &p.theta, &p.inputs)?;
    let mut coords: Vec<usize> = (0..p.theta.len()).collect();
    coords.shuffle(rng);
    coords.truncate(COORDINATES);
    // always audit the extra scalars
    coords.extend(p.theta.layout().extra_range());
    coords.sort_unstable();
    coords.dedup();
    let mut analytic = Vec::with_capacity(coords.len());
    let mut numeric = Vec::with_capacity(coords.len());
    let mut probe = p.theta.clone();
    for &c in &coords {
        let x = p.theta.as_slice()[c];
        probe.as_mut_slice()[c] = x + STEP;
        let up = objective_value(&obj, &p.spec, &probe, &p.inputs)?;
        probe.as_mut_slice()[c] = x - STEP;
        let down = objective_value(&obj, &p.spec, &probe, &p.inputs)?;
        probe.as_mut_slice()[c] = x;
        analytic.push(grad.as_slice()[c]);
        numeric.push((up - down) / (2.0 * STEP));
    }
    Ok(relative_error(&analytic, &numeric))
}

/// Runs `trials` random problems per objective and reports the worst
/// relative error of each.
pub fn gradcheck(trials: usize, seed: u64) -> Result<GradcheckReport> {
    if trials == 0 {
        return Err(ProfsError::invalid("gradcheck needs at least one trial"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradcheckReport {
        trials,
        max_rel_error: [0.0; 4],
        resampled: 0,
    };
    for _ in 0..trials {
        for (o, worst) in report.max_rel_error.iter_mut().enumerate() {
            let mut tries = 0;
            let problem = loop {
                if let Some(p) = draw(o, &mut rng)? {
                    break p;
                }
                tries += 1;
                report.resampled += 1;
                if tries == MAX_RESAMPLES {
                    return Err(ProfsError::Validation(format!(
                        "could not draw a kink-free {} problem",
                        OBJECTIVES[o]
                    )));
                }
            };
            *worst = worst.max(audit(&problem, &mut rng)?);
        }
    }
    Ok(report)
}
