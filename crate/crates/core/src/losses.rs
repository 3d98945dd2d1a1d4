//! Pairwise loss terms, their batch mean, the hinge-form projection
//! subproblem objective and the anchor regularizer.
//!
//! Contrastive and triplet terms use squared distances; margin and projection
//! terms use plain distances. Hinges have zero subgradient at the kink.

use serde::{Deserialize, Serialize};

use crate::error::{ProfsError, Result};
use crate::numcore::{distance_unchecked, Grads, Matrix, Objective, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginParams {
    /// Class boundary ε. When `epsilon_trainable`, the live value is the first
    /// extra scalar of θ and this field is only its initial value.
    pub epsilon: f64,
    /// Separation margin δ.
    pub delta: f64,
    pub epsilon_trainable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionLossParams {
    pub eps_plus: f64,
    pub eps_minus: f64,
    pub lambda: f64,
}

impl ProjectionLossParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.eps_plus && self.eps_plus < self.eps_minus) {
            return Err(ProfsError::invalid("projection loss needs 0 <= eps_plus < eps_minus"));
        }
        if self.lambda < 0.0 {
            return Err(ProfsError::invalid("lambda must be >= 0"));
        }
        Ok(())
    }
}

/// An anchored pair of in-batch positions; `positive` is y = 1 (same class).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub positive: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TupleSet {
    pub pairs: Vec<Pair>,
    pub triplets: Vec<Triplet>,
}

impl TupleSet {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty() && self.triplets.is_empty()
    }

    /// Checks indices against the batch and pair labels against sample labels.
    pub fn validate(&self, labels: &[usize]) -> Result<()> {
        let n = labels.len();
        for p in &self.pairs {
            if p.i >= n || p.j >= n {
                return Err(ProfsError::invalid(format!("pair ({}, {}) out of range", p.i, p.j)));
            }
            if (labels[p.i] == labels[p.j]) != p.positive {
                return Err(ProfsError::invalid(format!(
                    "pair ({}, {}) label flag disagrees with sample labels",
                    p.i, p.j
                )));
            }
        }
        for t in &self.triplets {
            if t.anchor >= n || t.positive >= n || t.negative >= n {
                return Err(ProfsError::invalid("triplet index out of range"));
            }
            if labels[t.anchor] != labels[t.positive] || labels[t.anchor] == labels[t.negative] {
                return Err(ProfsError::invalid("triplet roles disagree with sample labels"));
            }
        }
        Ok(())
    }
}

fn check_distance(d: f64) -> Result<()> {
    if d < 0.0 || d.is_nan() {
        return Err(ProfsError::invalid(format!("distance must be >= 0, got {d}")));
    }
    Ok(())
}

/// `y·d² + (1−y)·[ε−d]₊²`
pub fn contrastive_term(d: f64, positive: bool, epsilon: f64) -> Result<f64> {
    check_distance(d)?;
    Ok(contrastive(d, positive, epsilon).0)
}

/// `[d⁺² − d⁻² + ε]₊`
pub fn triplet_term(d_pos: f64, d_neg: f64, epsilon: f64) -> Result<f64> {
    check_distance(d_pos)?;
    check_distance(d_neg)?;
    Ok(triplet(d_pos, d_neg, epsilon).0)
}

/// `y·[d−ε+δ]₊ + (1−y)·[ε+δ−d]₊`
pub fn margin_term(d: f64, positive: bool, p: &MarginParams) -> f64 {
    margin(d, positive, p.epsilon, p.delta).0
}

// Each helper returns (value, ∂/∂d, ...).

#[inline]
fn contrastive(d: f64, positive: bool, eps: f64) -> (f64, f64) {
    if positive {
        (d * d, 2.0 * d)
    } else {
        let h = eps - d;
        if h > 0.0 {
            (h * h, -2.0 * h)
        } else {
            (0.0, 0.0)
        }
    }
}

#[inline]
fn triplet(dp: f64, dn: f64, eps: f64) -> (f64, f64, f64) {
    let h = dp * dp - dn * dn + eps;
    if h > 0.0 {
        (h, 2.0 * dp, -2.0 * dn)
    } else {
        (0.0, 0.0, 0.0)
    }
}

/// (value, ∂/∂d, ∂/∂ε)
#[inline]
fn margin(d: f64, positive: bool, eps: f64, delta: f64) -> (f64, f64, f64) {
    if positive {
        let h = d - eps + delta;
        if h > 0.0 {
            (h, 1.0, -1.0)
        } else {
            (0.0, 0.0, 0.0)
        }
    } else {
        let h = eps + delta - d;
        if h > 0.0 {
            (h, -1.0, 1.0)
        } else {
            (0.0, 0.0, 0.0)
        }
    }
}

#[inline]
fn projection_hinge(d: f64, positive: bool, eps_plus: f64, eps_minus: f64) -> (f64, f64) {
    if positive {
        let h = d - eps_plus;
        if h > 0.0 {
            (h, 1.0)
        } else {
            (0.0, 0.0)
        }
    } else {
        let h = eps_minus - d;
        if h > 0.0 {
            (h, -1.0)
        } else {
            (0.0, 0.0)
        }
    }
}

/// Adds `coef · ∂d(i,j)/∂e` into the embedding gradient; zero at d = 0.
#[inline]
fn push_distance_grad(grad: &mut Matrix, emb: &Matrix, i: usize, j: usize, d: f64, coef: f64) {
    if coef == 0.0 || d <= 0.0 {
        return;
    }
    let s = coef / d;
    let cols = emb.cols();
    for c in 0..cols {
        let diff = s * (emb.get(i, c) - emb.get(j, c));
        grad.row_mut(i)[c] += diff;
        grad.row_mut(j)[c] -= diff;
    }
}

/// The in-scope pairwise-distance losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PairLoss {
    Contrastive { epsilon: f64 },
    Triplet { epsilon: f64 },
    Margin(MarginParams),
}

impl PairLoss {
    pub fn uses_triplets(&self) -> bool {
        matches!(self, PairLoss::Triplet { .. })
    }
}

/// Mean of the per-tuple loss terms. Pair losses consume `tuples.pairs`,
/// the triplet loss consumes `tuples.triplets`.
pub fn aggregate(embeddings: &Matrix, tuples: &TupleSet, loss: &PairLoss) -> Result<f64> {
    aggregate_impl(embeddings, tuples, loss, None, None)
}

fn aggregate_impl(
    emb: &Matrix,
    tuples: &TupleSet,
    loss: &PairLoss,
    live_epsilon: Option<f64>,
    mut grads: Option<&mut Grads<'_>>,
) -> Result<f64> {
    let n = emb.rows();
    let check = |i: usize| {
        if i >= n {
            Err(ProfsError::invalid(format!("tuple index {i} out of range for batch of {n}")))
        } else {
            Ok(())
        }
    };
    let mut sum = 0.0;
    let count;
    match *loss {
        PairLoss::Triplet { epsilon } => {
            if tuples.triplets.is_empty() {
                return Err(ProfsError::EmptyTupleSet);
            }
            count = tuples.triplets.len();
            let scale = 1.0 / count as f64;
            for t in &tuples.triplets {
                check(t.anchor)?;
                check(t.positive)?;
                check(t.negative)?;
                let dp = distance_unchecked(emb.row(t.anchor), emb.row(t.positive));
                let dn = distance_unchecked(emb.row(t.anchor), emb.row(t.negative));
                let (v, gp, gn) = triplet(dp, dn, epsilon);
                sum += v;
                if let Some(g) = grads.as_deref_mut() {
                    push_distance_grad(g.embeddings, emb, t.anchor, t.positive, dp, gp * scale);
                    push_distance_grad(g.embeddings, emb, t.anchor, t.negative, dn, gn * scale);
                }
            }
        }
        PairLoss::Contrastive { epsilon } => {
            if tuples.pairs.is_empty() {
                return Err(ProfsError::EmptyTupleSet);
            }
            count = tuples.pairs.len();
            let scale = 1.0 / count as f64;
            for p in &tuples.pairs {
                check(p.i)?;
                check(p.j)?;
                let d = distance_unchecked(emb.row(p.i), emb.row(p.j));
                let (v, gd) = contrastive(d, p.positive, epsilon);
                sum += v;
                if let Some(g) = grads.as_deref_mut() {
                    push_distance_grad(g.embeddings, emb, p.i, p.j, d, gd * scale);
                }
            }
        }
        PairLoss::Margin(mp) => {
            if tuples.pairs.is_empty() {
                return Err(ProfsError::EmptyTupleSet);
            }
            count = tuples.pairs.len();
            let scale = 1.0 / count as f64;
            let eps = live_epsilon.unwrap_or(mp.epsilon);
            let mut d_eps = 0.0;
            for p in &tuples.pairs {
                check(p.i)?;
                check(p.j)?;
                let d = distance_unchecked(emb.row(p.i), emb.row(p.j));
                let (v, gd, ge) = margin(d, p.positive, eps, mp.delta);
                sum += v;
                d_eps += ge;
                if let Some(g) = grads.as_deref_mut() {
                    push_distance_grad(g.embeddings, emb, p.i, p.j, d, gd * scale);
                }
            }
            if live_epsilon.is_some() {
                if let Some(g) = grads.as_deref_mut() {
                    g.params.extra_mut()[0] += d_eps * scale;
                }
            }
        }
    }
    Ok(sum / count as f64)
}

/// Pairs summed by the projection objective: every in-batch sample paired
/// with every in-batch representative. A pair of two representatives is
/// counted once, anchored at the one with the lower class label.
pub fn projection_pairs(labels: &[usize], rep_positions: &[usize]) -> Result<Vec<Pair>> {
    if rep_positions.is_empty() {
        return Err(ProfsError::NoRepresentative);
    }
    let n = labels.len();
    let mut is_rep = vec![false; n];
    for &r in rep_positions {
        if r >= n {
            return Err(ProfsError::invalid(format!("representative position {r} out of range")));
        }
        is_rep[r] = true;
    }
    let mut pairs = Vec::new();
    for &r in rep_positions {
        for j in 0..n {
            if j == r || (is_rep[j] && labels[j] < labels[r]) {
                continue;
            }
            pairs.push(Pair {
                i: r,
                j,
                positive: labels[r] == labels[j],
            });
        }
    }
    Ok(pairs)
}

fn projection_hinge_sum(
    emb: &Matrix,
    pairs: &[Pair],
    eps_plus: f64,
    eps_minus: f64,
    mut grads: Option<&mut Grads<'_>>,
) -> f64 {
    let mut sum = 0.0;
    for p in pairs {
        let d = distance_unchecked(emb.row(p.i), emb.row(p.j));
        let (v, gd) = projection_hinge(d, p.positive, eps_plus, eps_minus);
        sum += v;
        if let Some(g) = grads.as_deref_mut() {
            push_distance_grad(g.embeddings, emb, p.i, p.j, d, gd);
        }
    }
    sum
}

/// Unnormalized hinge sum over representative-anchored pairs plus
/// `(λ/2)·‖θ_anchor − θ‖²`.
pub fn projection_objective(
    theta: &ParamVector,
    anchor: &ParamVector,
    embeddings: &Matrix,
    labels: &[usize],
    rep_positions: &[usize],
    params: &ProjectionLossParams,
) -> Result<f64> {
    params.validate()?;
    if labels.len() != embeddings.rows() {
        return Err(ProfsError::DimensionMismatch {
            expected: embeddings.rows(),
            actual: labels.len(),
        });
    }
    let pairs = projection_pairs(labels, rep_positions)?;
    let hinge = projection_hinge_sum(embeddings, &pairs, params.eps_plus, params.eps_minus, None);
    generic_regularized(theta, anchor, hinge, params.lambda)
}

/// `base + (λ/2)·‖θ_anchor − θ‖²`
pub fn generic_regularized(theta: &ParamVector, anchor: &ParamVector, base: f64, lambda: f64) -> Result<f64> {
    if lambda < 0.0 {
        return Err(ProfsError::invalid("lambda must be >= 0"));
    }
    if lambda == 0.0 {
        theta.check_same_shape(anchor)?;
        return Ok(base);
    }
    Ok(base + 0.5 * lambda * ParamVector::sqnorm_diff(anchor, theta)?)
}

/// Loss selection for training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum LossKind {
    Pair(PairLoss),
    /// The native hinge-form subproblem over representative-anchored pairs.
    Projection { eps_plus: f64, eps_minus: f64 },
}

impl LossKind {
    /// Number of extra scalars this loss appends to θ.
    pub fn extra_params(&self) -> usize {
        match self {
            LossKind::Pair(PairLoss::Margin(m)) if m.epsilon_trainable => 1,
            _ => 0,
        }
    }

    /// Initial values of the extra scalars.
    pub fn extra_init(&self) -> Vec<f64> {
        match self {
            LossKind::Pair(PairLoss::Margin(m)) if m.epsilon_trainable => vec![m.epsilon],
            _ => Vec::new(),
        }
    }

    pub fn uses_triplets(&self) -> bool {
        matches!(self, LossKind::Pair(p) if p.uses_triplets())
    }
}

/// A batch loss plus the optional anchor regularizer, differentiable through
/// the MLP via [`crate::numcore::gradient`].
pub struct BatchObjective<'a> {
    pub loss: &'a LossKind,
    pub tuples: &'a TupleSet,
    pub labels: &'a [usize],
    pub rep_positions: &'a [usize],
    pub anchor: Option<&'a ParamVector>,
    pub lambda: f64,
}

impl Objective for BatchObjective<'_> {
    fn evaluate(&self, embeddings: &Matrix, params: &ParamVector, mut grads: Option<Grads<'_>>) -> Result<f64> {
        let base = match self.loss {
            LossKind::Pair(pl) => {
                let live = match pl {
                    PairLoss::Margin(m) if m.epsilon_trainable => Some(*params.extra().first().ok_or_else(|| {
                        ProfsError::ShapeMismatch("trainable epsilon missing from parameters".into())
                    })?),
                    _ => None,
                };
                aggregate_impl(embeddings, self.tuples, pl, live, grads.as_mut())?
            }
            LossKind::Projection { eps_plus, eps_minus } => {
                let pairs = projection_pairs(self.labels, self.rep_positions)?;
                projection_hinge_sum(embeddings, &pairs, *eps_plus, *eps_minus, grads.as_mut())
            }
        };
        match self.anchor {
            Some(anchor) if self.lambda > 0.0 => {
                if let Some(g) = grads.as_mut() {
                    // ∇ (λ/2)‖a − θ‖² = λ(θ − a)
                    g.params.add_scaled(self.lambda, params)?;
                    g.params.add_scaled(-self.lambda, anchor)?;
                }
                generic_regularized(params, anchor, base, self.lambda)
            }
            _ => Ok(base),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{gradient, LayerShape, MlpSpec, ParamLayout};
    use proptest::prelude::*;

    #[test]
    fn contrastive_examples() {
        assert_eq!(contrastive_term(0.0, true, 1.0).unwrap(), 0.0);
        assert_eq!(contrastive_term(0.5, false, 1.0).unwrap(), 0.25);
        assert_eq!(contrastive_term(2.0, false, 1.0).unwrap(), 0.0);
        assert!(contrastive_term(-0.1, true, 1.0).is_err());
    }

    #[test]
    fn triplet_examples() {
        assert_eq!(triplet_term(1.0, 2.0, 0.5).unwrap(), 0.0);
        assert_eq!(triplet_term(0.7, 0.7, 0.0).unwrap(), 0.0);
        assert_eq!(triplet_term(2.0, 1.0, 0.5).unwrap(), 3.5);
        assert!(triplet_term(1.0, -1.0, 0.5).is_err());
    }

    #[test]
    fn margin_examples() {
        let p = MarginParams {
            epsilon: 1.0,
            delta: 0.2,
            epsilon_trainable: false,
        };
        assert!((margin_term(p.epsilon + 1.0, true, &p) - 1.2).abs() < 1e-15);
        // boundaries, with a dyadic delta so ε ± δ is exact
        let q = MarginParams { delta: 0.25, ..p };
        assert_eq!(margin_term(q.epsilon - q.delta, true, &q), 0.0);
        assert_eq!(margin_term(q.epsilon + q.delta, false, &q), 0.0);
    }

    fn line(points: &[f64]) -> Matrix {
        Matrix::from_vec(points.len(), 1, points.to_vec()).unwrap()
    }

    #[test]
    fn aggregate_examples() {
        // contrastive negatives at d=0.5 and d=0.134..: terms 0.25 and 0.75
        let d2 = 1.0 - 0.75f64.sqrt();
        let emb = line(&[0.0, 0.5, d2]);
        let tuples = TupleSet {
            pairs: vec![
                Pair { i: 0, j: 1, positive: false },
                Pair { i: 0, j: 2, positive: false },
            ],
            triplets: vec![],
        };
        let loss = PairLoss::Contrastive { epsilon: 1.0 };
        assert!((aggregate(&emb, &tuples, &loss).unwrap() - 0.5).abs() < 1e-12);

        let single = TupleSet {
            pairs: vec![tuples.pairs[0]],
            triplets: vec![],
        };
        assert_eq!(aggregate(&emb, &single, &loss).unwrap(), 0.25);

        let far = line(&[0.0, 3.0]);
        let zero = TupleSet {
            pairs: vec![Pair { i: 0, j: 1, positive: false }],
            triplets: vec![],
        };
        assert_eq!(aggregate(&far, &zero, &loss).unwrap(), 0.0);
        assert!(matches!(
            aggregate(&far, &TupleSet::default(), &loss),
            Err(ProfsError::EmptyTupleSet)
        ));
    }

    fn tiny_params(values: &[f64]) -> ParamVector {
        let layout = ParamLayout::new(vec![LayerShape { inputs: 1, outputs: 1 }], values.len() - 2).unwrap();
        ParamVector::from_flat(layout, values.to_vec()).unwrap()
    }

    #[test]
    fn projection_objective_examples() {
        let p = ProjectionLossParams {
            eps_plus: 0.5,
            eps_minus: 2.0,
            lambda: 1e-3,
        };
        // rep 0 (class 1) with positive at 0.1 and negative at 5
        let emb = line(&[0.0, 0.1, 5.0]);
        let labels = [1, 1, 2];
        let theta = tiny_params(&[0.0, 0.0]);
        assert_eq!(projection_objective(&theta, &theta, &emb, &labels, &[0], &p).unwrap(), 0.0);

        let moved = tiny_params(&[2.0, 0.0]);
        let v = projection_objective(&moved, &theta, &emb, &labels, &[0], &p).unwrap();
        assert!((v - 0.002).abs() < 1e-15);

        let emb = line(&[0.0, 0.8, 5.0]);
        let v = projection_objective(&theta, &theta, &emb, &labels, &[0], &p).unwrap();
        assert!((v - 0.3).abs() < 1e-12);

        assert!(matches!(
            projection_objective(&theta, &theta, &emb, &labels, &[], &p),
            Err(ProfsError::NoRepresentative)
        ));
    }

    #[test]
    fn rep_pairs_counted_once() {
        let labels = [1, 1, 2, 2];
        let pairs = projection_pairs(&labels, &[0, 2]).unwrap();
        // rep 0: pairs with 1, 2, 3; rep 2: pairs with 1 and 3 (0 is a lower-label rep)
        assert_eq!(pairs.len(), 5);
        assert_eq!(pairs.iter().filter(|p| (p.i, p.j) == (2, 0)).count(), 0);
        assert!(pairs.iter().all(|p| p.i == 0 || p.i == 2));
    }

    #[test]
    fn generic_regularized_examples() {
        let a = tiny_params(&[1.0, 1.0]);
        let b = tiny_params(&[0.0, 0.0]);
        assert_eq!(generic_regularized(&a, &b, 1.5, 0.0).unwrap(), 1.5);
        assert_eq!(generic_regularized(&a, &b, 1.0, 1.0).unwrap(), 2.0);
        assert_eq!(generic_regularized(&a, &a, 1.0, 5.0).unwrap(), 1.0);
        assert!(generic_regularized(&a, &b, 1.0, -1.0).is_err());
    }

    #[test]
    fn regularizer_gradient_vanishes_at_anchor() {
        let spec = MlpSpec {
            normalize_output: false,
            ..MlpSpec::new(1, vec![], 1)
        };
        let theta = tiny_params(&[0.3, -0.2]);
        let kind = LossKind::Projection {
            eps_plus: 10.0,
            eps_minus: 20.0,
        };
        // one positive pair well inside eps_plus: hinge inactive
        let labels = [1, 1];
        let tuples = TupleSet::default();
        let obj = BatchObjective {
            loss: &kind,
            tuples: &tuples,
            labels: &labels,
            rep_positions: &[0],
            anchor: Some(&theta),
            lambda: 7.0,
        };
        let x = Matrix::from_vec(2, 1, vec![1.0, 1.5]).unwrap();
        let (v, g) = gradient(&obj, &spec, &theta, &x).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    fn naive_mean(emb: &Matrix, tuples: &TupleSet, loss: &PairLoss) -> f64 {
        let d = |i: usize, j: usize| -> f64 {
            let mut s = 0.0;
            for c in 0..emb.cols() {
                s += (emb.get(i, c) - emb.get(j, c)).powi(2);
            }
            s.sqrt()
        };
        let mut total = 0.0;
        let mut n = 0usize;
        match loss {
            PairLoss::Triplet { epsilon } => {
                for t in &tuples.triplets {
                    total += triplet_term(d(t.anchor, t.positive), d(t.anchor, t.negative), *epsilon).unwrap();
                    n += 1;
                }
            }
            PairLoss::Contrastive { epsilon } => {
                for p in &tuples.pairs {
                    total += contrastive_term(d(p.i, p.j), p.positive, *epsilon).unwrap();
                    n += 1;
                }
            }
            PairLoss::Margin(m) => {
                for p in &tuples.pairs {
                    total += margin_term(d(p.i, p.j), p.positive, m);
                    n += 1;
                }
            }
        }
        total / n as f64
    }

    fn random_batch() -> impl Strategy<Value = (Vec<f64>, Vec<usize>, Vec<(usize, usize)>, Vec<(usize, usize, usize)>)> {
        (
            prop::collection::vec(-1.0..1.0f64, 8 * 3),
            prop::collection::vec(0usize..3, 8),
            prop::collection::vec((0usize..8, 0usize..8), 1..12),
            prop::collection::vec((0usize..8, 0usize..8, 0usize..8), 1..12),
        )
    }

    proptest! {
        #[test]
        fn terms_are_nonnegative(d in 0.0..5.0f64, d2 in 0.0..5.0f64, eps in 0.0..3.0f64, delta in 0.0..1.0f64, y: bool) {
            prop_assert!(contrastive_term(d, y, eps).unwrap() >= 0.0);
            prop_assert!(triplet_term(d, d2, eps).unwrap() >= 0.0);
            let m = MarginParams { epsilon: eps, delta, epsilon_trainable: false };
            prop_assert!(margin_term(d, y, &m) >= 0.0);
        }

        #[test]
        fn aggregate_matches_naive_loop((emb, labels, pairs, triplets) in random_batch()) {
            let emb = Matrix::from_vec(8, 3, emb).unwrap();
            let tuples = TupleSet {
                pairs: pairs.iter().map(|&(i, j)| Pair { i, j, positive: labels[i] == labels[j] }).collect(),
                triplets: triplets.iter().map(|&(a, p, n)| Triplet { anchor: a, positive: p, negative: n }).collect(),
            };
            let margin = MarginParams { epsilon: 0.8, delta: 0.2, epsilon_trainable: false };
            for loss in [PairLoss::Contrastive { epsilon: 1.0 }, PairLoss::Triplet { epsilon: 0.3 }, PairLoss::Margin(margin)] {
                prop_assert_eq!(aggregate(&emb, &tuples, &loss).unwrap(), naive_mean(&emb, &tuples, &loss));
            }
        }

        #[test]
        fn projection_objective_order_invariant(
            emb in prop::collection::vec(-1.0..1.0f64, 6 * 2),
            perm_seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let labels = vec![1, 1, 2, 2, 3, 3];
            let reps = vec![0, 2, 4];
            let params = ProjectionLossParams { eps_plus: 0.3, eps_minus: 1.0, lambda: 0.0 };
            let theta = tiny_params(&[0.0, 0.0]);
            let m = Matrix::from_vec(6, 2, emb.clone()).unwrap();
            let base = projection_objective(&theta, &theta, &m, &labels, &reps, &params).unwrap();

            let mut order: Vec<usize> = (0..6).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
            let permuted = m.select_rows(&order);
            let new_labels: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
            let new_reps: Vec<usize> = reps.iter().map(|r| order.iter().position(|&o| o == *r).unwrap()).collect();
            let v = projection_objective(&theta, &theta, &permuted, &new_labels, &new_reps, &params).unwrap();
            prop_assert!((v - base).abs() < 1e-12);
        }
    }
}
