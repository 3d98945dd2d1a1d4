//! Membership checks for the full and representative-relaxed constraint
//! sets, and the ε choices under which a feasible embedding zeroes the
//! contrastive, triplet and margin losses.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ProfsError, Result};
use crate::losses::{aggregate, MarginParams, Pair, PairLoss, Triplet, TupleSet};
use crate::numcore::{distance_unchecked, Matrix};

/// Stand-in for the ε⁺ → 0 limit of the contrastive case.
pub const CONTRASTIVE_EPS_PLUS: f64 = 1e-6;

/// Losses below this count as exactly zero when verifying feasibility.
pub const ZERO_LOSS_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub eps_plus: f64,
    pub eps_minus: f64,
    pub tolerance: f64,
}

impl ConstraintSpec {
    pub fn new(eps_plus: f64, eps_minus: f64) -> Result<Self> {
        let s = Self {
            eps_plus,
            eps_minus,
            tolerance: 1e-9,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_plus < self.eps_minus) {
            return Err(ProfsError::invalid("constraint set needs eps_plus < eps_minus"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(ProfsError::invalid("tolerance must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub pairs_checked: usize,
    pub positive_violations: usize,
    pub negative_violations: usize,
    /// Largest constraint excess (`d − ε⁺` or `ε⁻ − d`) over violating pairs; 0 when feasible.
    pub max_violation: f64,
    /// The pair attaining `max_violation`, lowest `(i, j)` on ties.
    pub worst_pair: Option<(usize, usize)>,
}

struct Tally<'a> {
    spec: &'a ConstraintSpec,
    report: FeasibilityReport,
}

impl<'a> Tally<'a> {
    fn new(spec: &'a ConstraintSpec) -> Self {
        Self {
            spec,
            report: FeasibilityReport {
                feasible: true,
                pairs_checked: 0,
                positive_violations: 0,
                negative_violations: 0,
                max_violation: 0.0,
                worst_pair: None,
            },
        }
    }

    fn visit(&mut self, i: usize, j: usize, d: f64, positive: bool) {
        let (i, j) = (i.min(j), i.max(j));
        self.report.pairs_checked += 1;
        let excess = if positive {
            d - self.spec.eps_plus
        } else {
            self.spec.eps_minus - d
        };
        if excess <= self.spec.tolerance {
            return;
        }
        if positive {
            self.report.positive_violations += 1;
        } else {
            self.report.negative_violations += 1;
        }
        let r = &mut self.report;
        let better = match r.worst_pair {
            None => true,
            Some(w) => excess > r.max_violation || (excess == r.max_violation && (i, j) < w),
        };
        if better {
            r.max_violation = excess;
            r.worst_pair = Some((i, j));
        }
    }

    fn finish(mut self) -> FeasibilityReport {
        self.report.feasible = self.report.positive_violations == 0 && self.report.negative_violations == 0;
        self.report
    }
}

fn check_inputs(embeddings: &Matrix, labels: &[usize], spec: &ConstraintSpec) -> Result<()> {
    spec.validate()?;
    if embeddings.rows() != labels.len() {
        return Err(ProfsError::DimensionMismatch {
            expected: embeddings.rows(),
            actual: labels.len(),
        });
    }
    if labels.len() < 2 {
        return Err(ProfsError::invalid("feasibility needs at least two samples"));
    }
    Ok(())
}

/// Checks every unordered pair against the full constraint set.
pub fn check_full(embeddings: &Matrix, labels: &[usize], spec: &ConstraintSpec) -> Result<FeasibilityReport> {
    check_inputs(embeddings, labels, spec)?;
    let mut tally = Tally::new(spec);
    let n = labels.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = distance_unchecked(embeddings.row(i), embeddings.row(j));
            tally.visit(i, j, d, labels[i] == labels[j]);
        }
    }
    Ok(tally.finish())
}

/// Checks only pairs that contain one of the representatives, one sample
/// index per class. Pairs of two representatives are counted once.
pub fn check_relaxed(
    embeddings: &Matrix,
    labels: &[usize],
    representatives: &[usize],
    spec: &ConstraintSpec,
) -> Result<FeasibilityReport> {
    check_inputs(embeddings, labels, spec)?;
    let n = labels.len();
    let mut by_class: BTreeMap<usize, usize> = BTreeMap::new();
    for &r in representatives {
        if r >= n {
            return Err(ProfsError::invalid(format!("representative index {r} out of range")));
        }
        if by_class.insert(labels[r], r).is_some() {
            return Err(ProfsError::invalid(format!("two representatives for class {}", labels[r])));
        }
    }
    for &l in labels {
        if !by_class.contains_key(&l) {
            return Err(ProfsError::MissingRepresentative(l));
        }
    }
    let mut is_rep = vec![false; n];
    for &r in representatives {
        is_rep[r] = true;
    }
    let mut tally = Tally::new(spec);
    for i in 0..n {
        for j in (i + 1)..n {
            if is_rep[i] || is_rep[j] {
                let d = distance_unchecked(embeddings.row(i), embeddings.row(j));
                tally.visit(i, j, d, labels[i] == labels[j]);
            }
        }
    }
    Ok(tally.finish())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintLoss {
    Contrastive,
    Triplet,
    Margin,
}

/// Loss hyperparameters from which the `(ε⁺, ε⁻)` pair is derived.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossMargins {
    pub epsilon: f64,
    /// Margin δ; margin loss only.
    pub delta: f64,
    /// Small ε⁺ for the contrastive limit, or the chosen ε⁺ for the triplet loss.
    pub eps_plus: f64,
}

impl LossMargins {
    pub fn new(epsilon: f64, delta: f64) -> Self {
        Self {
            epsilon,
            delta,
            eps_plus: CONTRASTIVE_EPS_PLUS,
        }
    }

    pub fn pair_loss(&self, kind: ConstraintLoss) -> PairLoss {
        match kind {
            ConstraintLoss::Contrastive => PairLoss::Contrastive { epsilon: self.epsilon },
            ConstraintLoss::Triplet => PairLoss::Triplet { epsilon: self.epsilon },
            ConstraintLoss::Margin => PairLoss::Margin(MarginParams {
                epsilon: self.epsilon,
                delta: self.delta,
                epsilon_trainable: false,
            }),
        }
    }
}

/// `(ε⁺, ε⁻)` such that every feasible embedding zeroes the given loss:
/// contrastive `(ε⁺_small, ε)`, margin `(ε−δ, ε+δ)`, triplet `(ε⁺, √(ε⁺²+ε))`.
pub fn proposition1_epsilons(kind: ConstraintLoss, m: &LossMargins) -> Result<(f64, f64)> {
    if !(m.epsilon > 0.0) {
        return Err(ProfsError::invalid("epsilon must be > 0"));
    }
    match kind {
        ConstraintLoss::Contrastive => {
            if !(m.eps_plus > 0.0 && m.eps_plus < m.epsilon) {
                return Err(ProfsError::invalid("contrastive eps_plus must lie in (0, epsilon)"));
            }
            Ok((m.eps_plus, m.epsilon))
        }
        ConstraintLoss::Margin => {
            if !(m.delta >= 0.0) {
                return Err(ProfsError::invalid("delta must be >= 0"));
            }
            if m.delta >= m.epsilon {
                return Err(ProfsError::invalid("margin needs delta < epsilon so that eps_plus > 0"));
            }
            Ok((m.epsilon - m.delta, m.epsilon + m.delta))
        }
        ConstraintLoss::Triplet => {
            if !(m.eps_plus >= 0.0) {
                return Err(ProfsError::invalid("triplet eps_plus must be >= 0"));
            }
            Ok((m.eps_plus, (m.eps_plus * m.eps_plus + m.epsilon).sqrt()))
        }
    }
}

/// Every valid tuple over a labelled set: all unordered pairs, and all
/// `(anchor, positive, negative)` triplets with `anchor != positive`.
pub fn all_tuples(labels: &[usize]) -> TupleSet {
    let n = labels.len();
    let mut t = TupleSet::default();
    for i in 0..n {
        for j in (i + 1)..n {
            t.pairs.push(Pair {
                i,
                j,
                positive: labels[i] == labels[j],
            });
        }
    }
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for q in 0..n {
                if labels[q] != labels[a] {
                    t.triplets.push(Triplet {
                        anchor: a,
                        positive: p,
                        negative: q,
                    });
                }
            }
        }
    }
    t
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposition1Check {
    pub eps_plus: f64,
    pub eps_minus: f64,
    pub report: FeasibilityReport,
    /// Mean loss over all valid tuples.
    pub loss: f64,
    /// Largest loss accepted as "zero".
    pub bound: f64,
    pub holds: bool,
}

/// Evaluates feasibility under the derived ε pair together with the loss over
/// every valid tuple.
pub fn evaluate_proposition1(
    embeddings: &Matrix,
    labels: &[usize],
    kind: ConstraintLoss,
    margins: &LossMargins,
) -> Result<Proposition1Check> {
    let (eps_plus, eps_minus) = proposition1_epsilons(kind, margins)?;
    let report = check_full(embeddings, labels, &ConstraintSpec::new(eps_plus, eps_minus)?)?;
    let tuples = all_tuples(labels);
    let loss_kind = margins.pair_loss(kind);
    let loss = if (loss_kind.uses_triplets() && tuples.triplets.is_empty()) || tuples.pairs.is_empty() {
        0.0
    } else {
        aggregate(embeddings, &tuples, &loss_kind)?
    };
    let n = labels.len() as f64;
    let bound = match kind {
        ConstraintLoss::Contrastive => (n * n * eps_plus * eps_plus).max(ZERO_LOSS_TOLERANCE),
        _ => ZERO_LOSS_TOLERANCE,
    };
    Ok(Proposition1Check {
        eps_plus,
        eps_minus,
        holds: report.feasible && loss <= bound,
        report,
        loss,
        bound,
    })
}

/// True iff the embedding is feasible for the derived ε pair and the loss vanishes.
pub fn verify_proposition1(embeddings: &Matrix, labels: &[usize], kind: ConstraintLoss, margins: &LossMargins) -> bool {
    evaluate_proposition1(embeddings, labels, kind, margins).is_ok_and(|c| c.holds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn collapsed_two_class(n_per: usize, gap: f64) -> (Matrix, Vec<usize>) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2 {
            for _ in 0..n_per {
                rows.push(vec![c as f64 * gap, 0.0]);
                labels.push(c + 1);
            }
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn full_check_examples() {
        let (emb, labels) = collapsed_two_class(3, 3.0);
        let r = check_full(&emb, &labels, &ConstraintSpec::new(0.1, 1.0).unwrap()).unwrap();
        assert!(r.feasible);
        assert_eq!(r.pairs_checked, 15);

        let r = check_full(&emb, &labels, &ConstraintSpec::new(0.1, 5.0).unwrap()).unwrap();
        assert!(!r.feasible);
        assert_eq!(r.negative_violations, 9);
        assert_eq!(r.positive_violations, 0);
        assert!((r.max_violation - 2.0).abs() < 1e-12);
        assert_eq!(r.worst_pair, Some((0, 3)));

        let single = Matrix::from_rows(&[vec![0.0], vec![0.05], vec![0.02]]).unwrap();
        let r = check_full(&single, &[1, 1, 1], &ConstraintSpec::new(0.1, 1.0).unwrap()).unwrap();
        assert!(r.feasible);
        assert_eq!(r.negative_violations, 0);
    }

    #[test]
    fn relaxed_check_examples() {
        // class 1: 0 (rep), 1, 2 ; class 2: 3 (rep)
        let emb = Matrix::from_rows(&[vec![0.0], vec![0.4], vec![-0.4], vec![5.0]]).unwrap();
        let labels = [1, 1, 1, 2];
        let spec = ConstraintSpec::new(0.5, 2.0).unwrap();
        // 1 and 2 are 0.8 apart: only a non-representative pair violates
        assert!(!check_full(&emb, &labels, &spec).unwrap().feasible);
        let r = check_relaxed(&emb, &labels, &[0, 3], &spec).unwrap();
        assert!(r.feasible);
        assert_eq!(r.pairs_checked, 5);

        let emb = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![0.1], vec![5.0]]).unwrap();
        let r = check_relaxed(&emb, &labels, &[0, 3], &spec).unwrap();
        assert_eq!(r.positive_violations, 1);
        assert!((r.max_violation - 0.5).abs() < 1e-12);
        assert_eq!(r.worst_pair, Some((0, 1)));

        assert!(matches!(
            check_relaxed(&emb, &labels, &[0], &spec),
            Err(ProfsError::MissingRepresentative(2))
        ));
    }

    #[test]
    fn epsilon_rules() {
        let m = LossMargins::new(1.0, 0.2);
        let (p, n) = proposition1_epsilons(ConstraintLoss::Margin, &m).unwrap();
        assert!((p - 0.8).abs() < 1e-15 && (n - 1.2).abs() < 1e-15);
        let t = LossMargins {
            eps_plus: 0.0,
            ..LossMargins::new(1.0, 0.0)
        };
        assert_eq!(proposition1_epsilons(ConstraintLoss::Triplet, &t).unwrap(), (0.0, 1.0));
        assert_eq!(
            proposition1_epsilons(ConstraintLoss::Contrastive, &LossMargins::new(1.0, 0.0)).unwrap(),
            (CONTRASTIVE_EPS_PLUS, 1.0)
        );
        assert!(proposition1_epsilons(ConstraintLoss::Margin, &LossMargins::new(1.0, 1.0)).is_err());
    }

    #[test]
    fn proposition1_forward_and_failure() {
        let (emb, labels) = collapsed_two_class(3, 3.0);
        let m = LossMargins::new(1.0, 0.2);
        let c = evaluate_proposition1(&emb, &labels, ConstraintLoss::Margin, &m).unwrap();
        assert!(c.holds);
        assert_eq!(c.loss, 0.0);

        let t = LossMargins {
            eps_plus: 0.1,
            ..LossMargins::new(1.0, 0.0)
        };
        let c = evaluate_proposition1(&emb, &labels, ConstraintLoss::Triplet, &t).unwrap();
        assert!(c.holds);
        let tuples = all_tuples(&labels);
        // brute force every triplet individually
        for tr in &tuples.triplets {
            let dp = distance_unchecked(emb.row(tr.anchor), emb.row(tr.positive));
            let dn = distance_unchecked(emb.row(tr.anchor), emb.row(tr.negative));
            assert_eq!(crate::losses::triplet_term(dp, dn, 1.0).unwrap(), 0.0);
        }
        assert_eq!(tuples.triplets.len(), 2 * 3 * 2 * 3);

        // one cross-class pair inside eps_minus
        let emb = Matrix::from_rows(&[vec![0.0], vec![0.0], vec![3.0], vec![0.5]]).unwrap();
        let labels = [1, 1, 2, 2];
        let c = evaluate_proposition1(&emb, &labels, ConstraintLoss::Margin, &m).unwrap();
        assert!(!c.holds);
        assert!(c.loss > 0.0);
        assert!(!verify_proposition1(&emb, &labels, ConstraintLoss::Margin, &m));
    }
}
