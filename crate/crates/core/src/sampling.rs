//! Representative selection, constrained exemplar batches, in-batch hard
//! pair mining and hard negative class mining over cached representatives.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ProfsError, Result};
use crate::losses::{Pair, Triplet, TupleSet};
use crate::numcore::{distance_unchecked, Matrix};

/// Per-class sample lists. Classes are addressed by a dense slot `0..L` in
/// ascending label order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassIndex {
    labels: Vec<usize>,
    members: Vec<Vec<usize>>,
    sample_slot: Vec<usize>,
}

impl ClassIndex {
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        if labels.is_empty() {
            return Err(ProfsError::invalid("class index over zero samples"));
        }
        let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            by_label.entry(l).or_default().push(i);
        }
        let slot_of: BTreeMap<usize, usize> = by_label.keys().enumerate().map(|(s, &l)| (l, s)).collect();
        Ok(Self {
            sample_slot: labels.iter().map(|l| slot_of[l]).collect(),
            labels: by_label.keys().copied().collect(),
            members: by_label.into_values().collect(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_samples(&self) -> usize {
        self.sample_slot.len()
    }

    pub fn label(&self, slot: usize) -> usize {
        self.labels[slot]
    }

    pub fn slot_of_label(&self, label: usize) -> Option<usize> {
        self.labels.binary_search(&label).ok()
    }

    pub fn members(&self, slot: usize) -> &[usize] {
        &self.members[slot]
    }

    pub fn slot_of_sample(&self, sample: usize) -> usize {
        self.sample_slot[sample]
    }

    pub fn min_class_size(&self) -> usize {
        self.members.iter().map(Vec::len).min().unwrap_or(0)
    }
}

/// One representative sample index per class slot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepresentativeSet {
    reps: Vec<usize>,
    pub cycle_id: u64,
}

impl RepresentativeSet {
    pub fn new(reps: Vec<usize>, cycle_id: u64) -> Self {
        Self { reps, cycle_id }
    }

    pub fn get(&self, slot: usize) -> usize {
        self.reps[slot]
    }

    pub fn indices(&self) -> &[usize] {
        &self.reps
    }

    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }
}

/// Draws representative sets that are disjoint per class until that class's
/// samples run out, then starts a fresh pass over that class only.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepSampler {
    unused: Vec<Vec<usize>>,
    draws: u64,
    cycle_len: u64,
}

impl RepSampler {
    pub fn new(index: &ClassIndex) -> Self {
        Self {
            unused: index.members.clone(),
            draws: 0,
            cycle_len: index.min_class_size().max(1) as u64,
        }
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Uniformly samples one not-yet-used index per class.
    pub fn sample<R: Rng + ?Sized>(&mut self, index: &ClassIndex, rng: &mut R) -> Result<RepresentativeSet> {
        if self.unused.len() != index.num_classes() {
            return Err(ProfsError::invalid("sampler was built for a different class index"));
        }
        let mut reps = Vec::with_capacity(index.num_classes());
        for (slot, pool) in self.unused.iter_mut().enumerate() {
            if pool.is_empty() {
                let members = index.members(slot);
                if members.is_empty() {
                    return Err(ProfsError::EmptyClass(index.label(slot)));
                }
                pool.extend_from_slice(members);
            }
            let k = rng.random_range(0..pool.len());
            reps.push(pool.swap_remove(k));
        }
        let set = RepresentativeSet::new(reps, self.draws / self.cycle_len);
        self.draws += 1;
        Ok(set)
    }
}

/// `⌈ρ·I·L / B⌉`: projection length such that each class representative is
/// used about `ρ` times.
pub fn derive_m(batch_size: u64, per_class: u64, classes: u64, rho: u64) -> Result<u64> {
    if batch_size == 0 || per_class == 0 || classes == 0 || rho == 0 {
        return Err(ProfsError::invalid("derive_m inputs must be positive"));
    }
    Ok((rho * per_class * classes).div_ceil(batch_size))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// One negative pair per positive pair.
    BalancedPairs,
    /// One `(rep, positive, negative)` triplet per positive.
    Triplets,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batch_size: usize,
    /// Samples per selected class, the representative included.
    pub per_class: usize,
    pub pairing: Pairing,
    /// Sample with replacement inside classes smaller than `per_class`.
    pub allow_replacement: bool,
}

impl Default for BatchPlan {
    fn default() -> Self {
        Self {
            batch_size: 128,
            per_class: 2,
            pairing: Pairing::BalancedPairs,
            allow_replacement: false,
        }
    }
}

impl BatchPlan {
    pub fn validate(&self) -> Result<()> {
        if self.per_class < 2 {
            return Err(ProfsError::invalid("per_class must be >= 2 for positive pairs to exist"));
        }
        if self.batch_size == 0 || self.batch_size % self.per_class != 0 {
            return Err(ProfsError::invalid(format!(
                "batch size {} must be a positive multiple of per_class {}",
                self.batch_size, self.per_class
            )));
        }
        Ok(())
    }

    /// Default representative subset size: fill the batch with class groups.
    pub fn default_subset(&self) -> usize {
        self.batch_size / self.per_class
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mining {
    /// Random classes, random in-batch negatives.
    Random,
    /// Random classes, nearest in-batch negative per positive pair.
    HardPairs,
    /// Half the classes random, the rest chosen as the classes whose cached
    /// representatives lie nearest to them; nearest in-batch negatives.
    Hncm,
}

impl std::str::FromStr for Mining {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "random" => Ok(Mining::Random),
            "hard_pairs" => Ok(Mining::HardPairs),
            "hncm" => Ok(Mining::Hncm),
            other => Err(format!("unknown mining mode `{other}`")),
        }
    }
}

impl std::fmt::Display for Mining {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mining::Random => "random",
            Mining::HardPairs => "hard_pairs",
            Mining::Hncm => "hncm",
        })
    }
}

/// Last seen embedding of each class's representative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepCache {
    entries: Vec<Option<Vec<f64>>>,
    staleness: Vec<u64>,
    dim: usize,
}

impl RepCache {
    pub fn new(num_classes: usize, dim: usize) -> Self {
        Self {
            entries: vec![None; num_classes],
            staleness: vec![0; num_classes],
            dim,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, slot: usize) -> Option<&[f64]> {
        self.entries[slot].as_deref()
    }

    pub fn staleness(&self, slot: usize) -> u64 {
        self.staleness[slot]
    }

    pub fn initialized(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    pub fn set(&mut self, slot: usize, embedding: &[f64]) -> Result<()> {
        if embedding.len() != self.dim {
            return Err(ProfsError::DimensionMismatch {
                expected: self.dim,
                actual: embedding.len(),
            });
        }
        self.entries[slot] = Some(embedding.to_vec());
        self.staleness[slot] = 0;
        Ok(())
    }

    /// Overwrites entries of every representative present in the batch;
    /// all other entries age by one.
    pub fn update(&mut self, embeddings: &Matrix, batch: &TupleBatch) -> Result<()> {
        let mut touched = vec![false; self.entries.len()];
        for (&pos, &slot) in batch.rep_positions.iter().zip(&batch.classes) {
            self.set(slot, embeddings.row(pos))?;
            touched[slot] = true;
        }
        for (s, t) in self.staleness.iter_mut().zip(touched) {
            if !t {
                *s += 1;
            }
        }
        Ok(())
    }
}

/// Result of hard negative class mining.
#[derive(Clone, Debug, PartialEq)]
pub struct HardClasses {
    /// Chosen class slots, nearest first.
    pub classes: Vec<usize>,
    /// Number of embedding distances evaluated.
    pub distance_evals: u64,
}

/// Picks the `count` non-anchor classes whose cached representatives have the
/// smallest distance to any anchor's cached representative. One pass over the
/// cache: `|anchors| · L` distance evaluations.
pub fn hncm_select(anchor_classes: &[usize], cache: &RepCache, count: usize) -> Result<HardClasses> {
    let mut is_anchor = vec![false; cache.num_classes()];
    for &a in anchor_classes {
        if a >= cache.num_classes() {
            return Err(ProfsError::invalid(format!("anchor class slot {a} out of range")));
        }
        is_anchor[a] = true;
    }
    let anchors: Vec<&[f64]> = anchor_classes.iter().filter_map(|&a| cache.get(a)).collect();
    if anchors.is_empty() {
        return Err(ProfsError::InsufficientCache {
            needed: count + 1,
            available: cache.initialized(),
        });
    }
    let mut evals = 0u64;
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(cache.num_classes());
    for (slot, entry) in cache.entries.iter().enumerate() {
        let Some(e) = entry else { continue };
        if is_anchor[slot] {
            continue;
        }
        let mut best = f64::INFINITY;
        for a in &anchors {
            evals += 1;
            best = best.min(distance_unchecked(a, e));
        }
        scored.push((best, slot));
    }
    if scored.len() < count {
        return Err(ProfsError::InsufficientCache {
            needed: count + anchors.len(),
            available: scored.len() + anchors.len(),
        });
    }
    let by_distance = |x: &(f64, usize), y: &(f64, usize)| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1));
    if count > 0 && count < scored.len() {
        scored.select_nth_unstable_by(count - 1, by_distance);
    }
    scored.truncate(count);
    scored.sort_by(by_distance);
    Ok(HardClasses {
        classes: scored.into_iter().map(|(_, s)| s).collect(),
        distance_evals: evals,
    })
}

/// An exemplar batch. Positions in `tuples`, `rep_positions` and
/// `positive_pairs` index into `samples`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TupleBatch {
    /// Dataset indices of the batch members.
    pub samples: Vec<usize>,
    pub labels: Vec<usize>,
    /// In-batch position of each selected class's representative.
    pub rep_positions: Vec<usize>,
    /// Class slot of each entry of `rep_positions`.
    pub classes: Vec<usize>,
    /// `(representative, positive)` position pairs.
    pub positive_pairs: Vec<(usize, usize)>,
    pub pairing: Pairing,
    /// Empty until negatives are chosen for hard mining modes.
    pub tuples: TupleSet,
}

impl TupleBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn needs_mining(&self) -> bool {
        self.tuples.is_empty()
    }

    /// Replaces the tuples with nearest-negative tuples for the given embeddings.
    pub fn mine_hard(&mut self, embeddings: &Matrix) -> Result<()> {
        self.tuples = hard_pair_mine(embeddings, &self.labels, &self.positive_pairs, self.pairing)?;
        Ok(())
    }
}

fn emit(pairing: Pairing, tuples: &mut TupleSet, rep: usize, pos: usize, neg: usize) {
    match pairing {
        Pairing::BalancedPairs => {
            tuples.pairs.push(Pair {
                i: rep,
                j: pos,
                positive: true,
            });
            tuples.pairs.push(Pair {
                i: rep,
                j: neg,
                positive: false,
            });
        }
        Pairing::Triplets => tuples.triplets.push(Triplet {
            anchor: rep,
            positive: pos,
            negative: neg,
        }),
    }
}

/// For each `(anchor, positive)` pair, the nearest in-batch sample of another
/// class becomes its negative; ties go to the lowest position.
pub fn hard_pair_mine(
    embeddings: &Matrix,
    labels: &[usize],
    positive_pairs: &[(usize, usize)],
    pairing: Pairing,
) -> Result<TupleSet> {
    if embeddings.rows() != labels.len() {
        return Err(ProfsError::DimensionMismatch {
            expected: embeddings.rows(),
            actual: labels.len(),
        });
    }
    let mut tuples = TupleSet::default();
    let mut nearest: BTreeMap<usize, usize> = BTreeMap::new();
    for &(a, p) in positive_pairs {
        let neg = match nearest.get(&a) {
            Some(&n) => n,
            None => {
                let mut best: Option<(f64, usize)> = None;
                for j in 0..labels.len() {
                    if labels[j] == labels[a] {
                        continue;
                    }
                    let d = distance_unchecked(embeddings.row(a), embeddings.row(j));
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, j));
                    }
                }
                let n = best.ok_or(ProfsError::NoNegatives)?.1;
                nearest.insert(a, n);
                n
            }
        };
        emit(pairing, &mut tuples, a, p, neg);
    }
    Ok(tuples)
}

/// Draws `k` distinct elements of `pool` (or with replacement when allowed and needed).
fn draw<R: Rng + ?Sized>(pool: &[usize], k: usize, replacement: bool, rng: &mut R) -> Option<Vec<usize>> {
    if k <= pool.len() {
        Some(index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect())
    } else if replacement && !pool.is_empty() {
        Some((0..k).map(|_| pool[rng.random_range(0..pool.len())]).collect())
    } else {
        None
    }
}

/// Inputs to [`build_batch`].
pub struct BatchRequest<'a> {
    pub reps: &'a RepresentativeSet,
    pub subset_size: usize,
    pub index: &'a ClassIndex,
    pub plan: &'a BatchPlan,
    pub mining: Mining,
    pub cache: &'a RepCache,
}

/// Builds an exemplar batch from a subset of the representatives: each chosen
/// class contributes its representative plus `per_class − 1` positives, and
/// leftover slots are filled with samples of unchosen classes. Every tuple is
/// anchored at a representative.
pub fn build_batch<R: Rng + ?Sized>(req: &BatchRequest<'_>, rng: &mut R) -> Result<TupleBatch> {
    let BatchRequest {
        reps,
        subset_size,
        index,
        plan,
        mining,
        cache,
    } = *req;
    plan.validate()?;
    let l = index.num_classes();
    if reps.len() != l {
        return Err(ProfsError::invalid("representative set does not cover every class"));
    }
    if subset_size == 0 || subset_size > l {
        return Err(ProfsError::invalid(format!(
            "representative subset size {subset_size} must lie in 1..={l}"
        )));
    }
    if subset_size * plan.per_class > plan.batch_size {
        return Err(ProfsError::invalid(format!(
            "subset of {subset_size} classes x {} samples exceeds batch size {}",
            plan.per_class, plan.batch_size
        )));
    }

    let classes: Vec<usize> = match mining {
        Mining::Random | Mining::HardPairs => index::sample(rng, l, subset_size).into_vec(),
        Mining::Hncm => {
            let n_anchor = subset_size.div_ceil(2);
            let mut anchors = index::sample(rng, l, n_anchor).into_vec();
            let hard = hncm_select(&anchors, cache, subset_size - n_anchor)?;
            anchors.extend(hard.classes);
            anchors
        }
    };

    let mut batch = TupleBatch {
        samples: Vec::with_capacity(plan.batch_size),
        labels: Vec::with_capacity(plan.batch_size),
        rep_positions: Vec::with_capacity(subset_size),
        classes: classes.clone(),
        positive_pairs: Vec::new(),
        pairing: plan.pairing,
        tuples: TupleSet::default(),
    };
    let mut chosen = vec![false; l];
    for &slot in &classes {
        chosen[slot] = true;
        let rep = reps.get(slot);
        if index.slot_of_sample(rep) != slot {
            return Err(ProfsError::invalid(format!("representative {rep} is not in class slot {slot}")));
        }
        let others: Vec<usize> = index.members(slot).iter().copied().filter(|&i| i != rep).collect();
        let pool = if others.is_empty() { vec![rep] } else { others };
        let positives =
            draw(&pool, plan.per_class - 1, plan.allow_replacement, rng).ok_or(ProfsError::ClassTooSmall {
                label: index.label(slot),
                size: index.members(slot).len(),
                needed: plan.per_class,
            })?;
        let rep_pos = batch.samples.len();
        batch.rep_positions.push(rep_pos);
        batch.samples.push(rep);
        batch.labels.push(index.label(slot));
        for p in positives {
            batch.positive_pairs.push((rep_pos, batch.samples.len()));
            batch.samples.push(p);
            batch.labels.push(index.label(slot));
        }
    }

    let fill = plan.batch_size - batch.samples.len();
    if fill > 0 {
        let pool: Vec<usize> = (0..index.num_samples())
            .filter(|&i| !chosen[index.slot_of_sample(i)])
            .collect();
        let extra = draw(&pool, fill, plan.allow_replacement, rng).ok_or_else(|| {
            ProfsError::invalid(format!("cannot fill {fill} batch slots from unchosen classes"))
        })?;
        for i in extra {
            batch.samples.push(i);
            batch.labels.push(index.label(index.slot_of_sample(i)));
        }
    }

    if mining == Mining::Random {
        for k in 0..batch.positive_pairs.len() {
            let (rep, pos) = batch.positive_pairs[k];
            let candidates: Vec<usize> = (0..batch.len()).filter(|&j| batch.labels[j] != batch.labels[rep]).collect();
            if candidates.is_empty() {
                return Err(ProfsError::NoNegatives);
            }
            let neg = candidates[rng.random_range(0..candidates.len())];
            emit(plan.pairing, &mut batch.tuples, rep, pos, neg);
        }
    }
    Ok(batch)
}
