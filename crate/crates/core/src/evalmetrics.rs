//! Retrieval and clustering quality: Recall@K, k-means, NMI and pairwise F1.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ProfsError, Result};
use crate::numcore::{distance_matrix, distance_unchecked, Matrix};

/// Recall levels reported by default.
pub const DEFAULT_KS: [usize; 4] = [1, 2, 4, 8];
pub const KMEANS_MAX_ITERS: usize = 300;

#[inline]
fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

fn check_retrieval_inputs(embeddings: &Matrix, labels: &[usize], ks: &[usize]) -> Result<()> {
    let n = labels.len();
    if embeddings.rows() != n {
        return Err(ProfsError::DimensionMismatch {
            expected: embeddings.rows(),
            actual: n,
        });
    }
    for &k in ks {
        if k == 0 || k >= n {
            return Err(ProfsError::invalid(format!("K = {k} must lie in 1..{n}")));
        }
    }
    Ok(())
}

/// Fraction of queries with at least one same-class sample among their K
/// nearest neighbours (the query itself excluded; ties go to the lower index).
pub fn recall_at_k(embeddings: &Matrix, labels: &[usize], ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    check_retrieval_inputs(embeddings, labels, ks)?;
    let n = labels.len();
    let k_max = ks.iter().copied().max().unwrap_or(0);
    if k_max == 0 {
        return Ok(BTreeMap::new());
    }
    // Rank (0-based) of the first same-class neighbour, or k_max when outside the top k_max.
    let first_hit: Vec<usize> = (0..n)
        .into_par_iter()
        .map(|q| {
            let mut row: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != q)
                .map(|j| (distance_unchecked(embeddings.row(q), embeddings.row(j)), j))
                .collect();
            if k_max < row.len() {
                row.select_nth_unstable_by(k_max - 1, by_distance_then_index);
                row.truncate(k_max);
            }
            row.sort_unstable_by(by_distance_then_index);
            row.iter().position(|&(_, j)| labels[j] == labels[q]).unwrap_or(k_max)
        })
        .collect();
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = first_hit.iter().filter(|&&r| r < k).count();
            (k, hits as f64 / n as f64)
        })
        .collect())
}

/// Independent O(N² log N) reference for [`recall_at_k`]: fully sorts each
/// query's row of the distance matrix.
pub fn brute_force_retrieval_oracle(
    embeddings: &Matrix,
    labels: &[usize],
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    check_retrieval_inputs(embeddings, labels, ks)?;
    let n = labels.len();
    let dm = distance_matrix(embeddings);
    let mut out = BTreeMap::new();
    for &k in ks {
        let mut hits = 0usize;
        for q in 0..n {
            let mut row: Vec<(f64, usize)> = (0..n).filter(|&j| j != q).map(|j| (dm.get(q, j), j)).collect();
            row.sort_by(by_distance_then_index);
            if row[..k].iter().any(|&(_, j)| labels[j] == labels[q]) {
                hits += 1;
            }
        }
        out.insert(k, hits as f64 / n as f64);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Matrix,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub history: Vec<f64>,
}

fn nearest_centroid(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cent) in centroids.iter().enumerate() {
        let d: f64 = x.iter().zip(cent).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's algorithm from k-means++ seeding, until the assignment is a
/// fixpoint or [`KMEANS_MAX_ITERS`] iterations.
pub fn kmeans(points: &Matrix, k: usize, seed: u64) -> Result<KMeansResult> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(ProfsError::invalid(format!("k = {k} must lie in 1..={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points.row(rng.random_range(0..n)).to_vec());
    let mut d2: Vec<f64> = points.iter_rows().map(|x| nearest_centroid(x, &centroids).1).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points.row(pick).to_vec());
        let last = centroids.last().expect("just pushed");
        for (i, x) in points.iter_rows().enumerate() {
            let d: f64 = x.iter().zip(last).map(|(a, b)| (a - b) * (a - b)).sum();
            d2[i] = d2[i].min(d);
        }
    }

    let dim = points.cols();
    let mut assignments: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    for _ in 0..KMEANS_MAX_ITERS {
        let mut inertia = 0.0;
        let next: Vec<usize> = points
            .iter_rows()
            .map(|x| {
                let (c, d) = nearest_centroid(x, &centroids);
                inertia += d;
                c
            })
            .collect();
        history.push(inertia);
        if next == assignments {
            break;
        }
        assignments = next;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (x, &c) in points.iter_rows().zip(&assignments) {
            counts[c] += 1;
            sums[c].iter_mut().zip(x).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            // empty clusters keep their centroid
            if counts[c] > 0 {
                let inv = counts[c] as f64;
                centroids[c] = sums[c].iter().map(|s| s / inv).collect();
            }
        }
    }
    let inertia = *history.last().expect("at least one iteration");
    Ok(KMeansResult {
        assignments,
        centroids: Matrix::from_rows(&centroids)?,
        inertia,
        history,
    })
}

fn contingency(a: &[usize], b: &[usize]) -> (BTreeMap<(usize, usize), usize>, BTreeMap<usize, usize>, BTreeMap<usize, usize>) {
    let mut joint = BTreeMap::new();
    let mut ca = BTreeMap::new();
    let mut cb = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_insert(0) += 1;
        *ca.entry(x).or_insert(0) += 1;
        *cb.entry(y).or_insert(0) += 1;
    }
    (joint, ca, cb)
}

fn entropy(counts: &BTreeMap<usize, usize>, n: f64) -> f64 {
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information `2·I(A;L) / (H(A) + H(L))`. Two trivial
/// (single-block) partitions agree perfectly and score 1.
pub fn nmi(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    if assignments.len() != labels.len() {
        return Err(ProfsError::DimensionMismatch {
            expected: labels.len(),
            actual: assignments.len(),
        });
    }
    if labels.is_empty() {
        return Err(ProfsError::invalid("NMI of an empty partition"));
    }
    let n = labels.len() as f64;
    let (joint, ca, cl) = contingency(assignments, labels);
    let ha = entropy(&ca, n);
    let hl = entropy(&cl, n);
    if ha + hl == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (&(a, l), &c) in &joint {
        let pj = c as f64 / n;
        let pa = ca[&a] as f64 / n;
        let pl = cl[&l] as f64 / n;
        mi += pj * (pj / (pa * pl)).ln();
    }
    Ok((2.0 * mi / (ha + hl)).clamp(0.0, 1.0))
}

fn pairs(c: usize) -> u64 {
    (c as u64) * (c as u64).saturating_sub(1) / 2
}

/// Pair-counting F1: a pair is predicted positive when co-clustered and truly
/// positive when co-labelled. 0 when nothing is predicted positive.
pub fn pairwise_f1(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    if assignments.len() != labels.len() {
        return Err(ProfsError::DimensionMismatch {
            expected: labels.len(),
            actual: assignments.len(),
        });
    }
    if labels.len() < 2 {
        return Err(ProfsError::invalid("pairwise F1 needs at least two samples"));
    }
    let (joint, ca, cl) = contingency(assignments, labels);
    let tp: u64 = joint.values().map(|&c| pairs(c)).sum();
    let predicted: u64 = ca.values().map(|&c| pairs(c)).sum();
    let actual: u64 = cl.values().map(|&c| pairs(c)).sum();
    if predicted == 0 || actual == 0 || tp == 0 {
        return Ok(0.0);
    }
    let p = tp as f64 / predicted as f64;
    let r = tp as f64 / actual as f64;
    Ok(2.0 * p * r / (p + r))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall_at: BTreeMap<usize, f64>,
    pub nmi: f64,
    pub f1: f64,
    pub num_queries: usize,
    pub kmeans_inertia: f64,
}

/// Full protocol: Recall@K on all queries, then k-means with k = number of
/// classes scored by NMI and pairwise F1.
pub fn evaluate(embeddings: &Matrix, labels: &[usize], ks: &[usize], seed: u64) -> Result<EvalReport> {
    let recall_at = recall_at_k(embeddings, labels, ks)?;
    let k = labels.iter().collect::<BTreeSet<_>>().len();
    let km = kmeans(embeddings, k, seed)?;
    Ok(EvalReport {
        recall_at,
        nmi: nmi(&km.assignments, labels)?,
        f1: pairwise_f1(&km.assignments, labels)?,
        num_queries: labels.len(),
        kmeans_inertia: km.inertia,
    })
}
