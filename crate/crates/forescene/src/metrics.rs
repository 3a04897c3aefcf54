//! Evaluation metrics: object recall, Jaccard similarity over future frames,
//! triplet recall in both constraint regimes, and the Jaccard distance used
//! to score split difficulty.
//!
//! Conventions for empty sets (logged by callers, isolated here so reports
//! can exclude them): a frame with empty ground truth counts as recall 1,
//! and a frame where prediction and ground truth are both empty counts as
//! Jaccard similarity 1.

use crate::graph::{PredicateKind, Vocabulary};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// `(subject category, predicate, object category)`.
pub type Triple = (usize, usize, usize);

/// Triplet-recall regime: one predicate per ordered pair (per predicate kind
/// by default) versus unrestricted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    WithConstraint,
    NoConstraint,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regime::WithConstraint => write!(f, "with_constraint"),
            Regime::NoConstraint => write!(f, "no_constraint"),
        }
    }
}

/// Categories ranked by confidence, descending, no duplicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedObjects(pub Vec<(usize, f64)>);

impl RankedObjects {
    /// Sorts descending and keeps the best score per category.
    pub fn from_scores(mut scores: Vec<(usize, f64)>) -> Self {
        scores.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let mut seen = BTreeSet::new();
        scores.retain(|(c, _)| seen.insert(*c));
        RankedObjects(scores)
    }

    pub fn top_k(&self, k: usize) -> BTreeSet<usize> {
        self.0.iter().take(k).map(|&(c, _)| c).collect()
    }
}

/// Identity triplets ranked by score, descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTriplets(pub Vec<(Triple, f64)>);

impl RankedTriplets {
    /// Sorts descending and keeps the best score per identity triple.
    pub fn from_scores(mut scores: Vec<(Triple, f64)>) -> Self {
        scores.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let mut seen = BTreeSet::new();
        scores.retain(|(t, _)| seen.insert(*t));
        RankedTriplets(scores)
    }

    /// Apply the With-Constraint filter: keep the single best-scoring
    /// predicate per ordered `(subject, object)` pair and predicate kind
    /// (or per pair overall when `strict`). Order-preserving, so the result
    /// is a sub-list of the input.
    pub fn with_constraint(&self, vocab: &Vocabulary, strict: bool) -> RankedTriplets {
        let mut seen: BTreeSet<(usize, usize, Option<PredicateKind>)> = BTreeSet::new();
        let mut kept = Vec::new();
        for &((s, p, o), score) in &self.0 {
            let key = if strict { (s, o, None) } else { (s, o, Some(vocab.kind_of(p))) };
            if seen.insert(key) {
                kept.push(((s, p, o), score));
            }
        }
        RankedTriplets(kept)
    }

    pub fn top_k(&self, k: usize) -> BTreeSet<Triple> {
        self.0.iter().take(k).map(|&(t, _)| t).collect()
    }

    /// Top-K view under a regime. The constrained view filters the top-K
    /// prefix of the unconstrained ranking without backfilling the freed
    /// slots, so it is always a subset of the unconstrained top-K and
    /// constrained recall can never exceed unconstrained recall at the same
    /// K. (A score-sorted list puts each group's best first, so filtering
    /// the prefix agrees with the global filter restricted to the prefix.)
    pub fn top_k_in(
        &self,
        k: usize,
        regime: Regime,
        vocab: &Vocabulary,
        strict: bool,
    ) -> BTreeSet<Triple> {
        match regime {
            Regime::NoConstraint => self.top_k(k),
            Regime::WithConstraint => {
                let prefix = RankedTriplets(self.0.iter().take(k).cloned().collect());
                prefix.with_constraint(vocab, strict).0.into_iter().map(|(t, _)| t).collect()
            }
        }
    }
}

/// Fraction of ground-truth categories inside the top-K predictions.
/// Empty ground truth counts as 1 (nothing to recover).
pub fn object_recall_at_k(pred: &RankedObjects, gt: &BTreeSet<usize>, k: usize) -> f64 {
    assert!(k >= 1, "K must be >= 1");
    if gt.is_empty() {
        return 1.0;
    }
    let top = pred.top_k(k);
    gt.intersection(&top).count() as f64 / gt.len() as f64
}

/// Jaccard index of two sets; both empty counts as 1.
pub fn jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Mean per-frame Jaccard index over aligned future frames.
pub fn jaccard_sim(pred_sets: &[BTreeSet<usize>], gt_sets: &[BTreeSet<usize>]) -> f64 {
    assert_eq!(pred_sets.len(), gt_sets.len(), "one predicted set per future frame");
    assert!(!pred_sets.is_empty(), "no future frames");
    let total: f64 = pred_sets.iter().zip(gt_sets).map(|(p, g)| jaccard(p, g)).sum();
    total / pred_sets.len() as f64
}

/// Fraction of ground-truth triplets inside the top-K predictions for one
/// frame. Empty ground truth counts as 1. `pred` is the unconstrained
/// ranking; the regime chooses the top-K view (see
/// [`RankedTriplets::top_k_in`]).
pub fn triplets_recall_at_k(
    pred: &RankedTriplets,
    gt: &BTreeSet<Triple>,
    k: usize,
    regime: Regime,
    vocab: &Vocabulary,
    strict: bool,
) -> f64 {
    assert!(k >= 1, "K must be >= 1");
    if gt.is_empty() {
        return 1.0;
    }
    let top = pred.top_k_in(k, regime, vocab, strict);
    gt.intersection(&top).count() as f64 / gt.len() as f64
}

/// Mean triplet recall over aligned future frames.
pub fn triplets_recall_over_frames(
    preds: &[RankedTriplets],
    gts: &[BTreeSet<Triple>],
    k: usize,
    regime: Regime,
    vocab: &Vocabulary,
    strict: bool,
) -> f64 {
    assert_eq!(preds.len(), gts.len());
    assert!(!preds.is_empty());
    let total: f64 = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| triplets_recall_at_k(p, g, k, regime, vocab, strict))
        .sum();
    total / preds.len() as f64
}

/// One minus the Jaccard index; both empty counts as distance 0.
pub fn jaccard_dist(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    1.0 - jaccard(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn object_recall_basics() {
        let pred = RankedObjects(vec![(1, 0.9), (2, 0.8), (7, 0.7), (3, 0.6), (4, 0.5)]);
        // gt {a,b,c} with {a,b} in top-5
        assert!((object_recall_at_k(&pred, &set(&[1, 2, 9]), 5) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(object_recall_at_k(&RankedObjects(vec![]), &set(&[1]), 5), 0.0);
        assert_eq!(object_recall_at_k(&pred, &set(&[1, 2]), 5), 1.0);
        assert_eq!(object_recall_at_k(&pred, &set(&[]), 5), 1.0);
    }

    #[test]
    fn jaccard_sim_cases() {
        let a = vec![set(&[0, 1]), set(&[0, 2])];
        assert_eq!(jaccard_sim(&a, &a.clone()), 1.0);
        // {person,cup} vs {person,dish}: 1/3
        let p = vec![set(&[0, 1])];
        let g = vec![set(&[0, 2])];
        assert!((jaccard_sim(&p, &g) - 1.0 / 3.0).abs() < 1e-12);
        let p = vec![set(&[1]), set(&[2])];
        let g = vec![set(&[3]), set(&[4])];
        assert_eq!(jaccard_sim(&p, &g), 0.0);
        // both empty in a frame counts as 1
        let p = vec![BTreeSet::new()];
        let g = vec![BTreeSet::new()];
        assert_eq!(jaccard_sim(&p, &g), 1.0);
    }

    #[test]
    fn triplets_recall_cases() {
        let vocab = Vocabulary::desk_default();
        let gt: BTreeSet<Triple> = [(0, 3, 1)].into_iter().collect();
        let pred = RankedTriplets(vec![((0, 3, 1), 0.9)]);
        let rec =
            |k| triplets_recall_at_k(&pred, &gt, k, Regime::NoConstraint, &vocab, false);
        assert_eq!(rec(1), 1.0);
        assert_eq!(rec(50), 1.0);

        // 4 gt triplets, 3 inside the top-10
        let gt: BTreeSet<Triple> =
            [(0, 0, 1), (0, 1, 1), (0, 2, 2), (0, 3, 3)].into_iter().collect();
        let mut scores = vec![((0, 0, 1), 0.9), ((0, 1, 1), 0.8), ((0, 2, 2), 0.7)];
        for i in 0..10 {
            scores.push(((5, 0, 6 + i), 0.5)); // filler
        }
        let pred = RankedTriplets::from_scores(scores);
        let r = triplets_recall_at_k(&pred, &gt, 10, Regime::NoConstraint, &vocab, false);
        assert!((r - 0.75).abs() < 1e-12);
    }

    #[test]
    fn with_constraint_filter_keeps_best_per_kind() {
        let vocab = Vocabulary::desk_default();
        // predicates 1 and 2 are both spatial -> only the best survives per pair
        let nc = RankedTriplets::from_scores(vec![
            ((0, 1, 1), 0.9),
            ((0, 2, 1), 0.8),
            ((0, 3, 1), 0.7), // contacting: separate kind, kept
            ((0, 4, 1), 0.6), // contacting: filtered
        ]);
        let wc = nc.with_constraint(&vocab, false);
        assert_eq!(wc.0.len(), 2);
        assert_eq!(wc.0[0].0, (0, 1, 1));
        assert_eq!(wc.0[1].0, (0, 3, 1));
        let strict = nc.with_constraint(&vocab, true);
        assert_eq!(strict.0.len(), 1);
    }

    #[test]
    fn constrained_recall_never_exceeds_unconstrained() {
        // the constrained top-K is the filtered prefix, so the inequality is
        // structural; exercise it on randomized rankings
        use rand::{Rng, SeedableRng};
        let vocab = Vocabulary::desk_default();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(42);
        for _ in 0..200 {
            let n = rng.random_range(1..30);
            let scores: Vec<(Triple, f64)> = (0..n)
                .map(|_| {
                    let t = (
                        rng.random_range(0..4),
                        rng.random_range(0..vocab.num_predicates()),
                        rng.random_range(0..4),
                    );
                    (t, rng.random_range(0.0..1.0))
                })
                .collect();
            let pred = RankedTriplets::from_scores(scores);
            let gt: BTreeSet<Triple> = (0..rng.random_range(1..6))
                .map(|_| {
                    (
                        rng.random_range(0..4),
                        rng.random_range(0..vocab.num_predicates()),
                        rng.random_range(0..4),
                    )
                })
                .collect();
            for k in [1, 5, 10, 50] {
                let wc =
                    triplets_recall_at_k(&pred, &gt, k, Regime::WithConstraint, &vocab, false);
                let nc =
                    triplets_recall_at_k(&pred, &gt, k, Regime::NoConstraint, &vocab, false);
                assert!(wc <= nc + 1e-12, "wc {wc} > nc {nc} at k = {k}");
            }
        }
    }

    #[test]
    fn jaccard_dist_cases() {
        assert_eq!(jaccard_dist(&set(&[1, 2]), &set(&[1, 2])), 0.0);
        assert_eq!(jaccard_dist(&set(&[1]), &set(&[2])), 1.0);
        // {person,cup} vs {person,dish,table}: 1 - 1/4
        assert!((jaccard_dist(&set(&[0, 1]), &set(&[0, 2, 3])) - 0.75).abs() < 1e-12);
        assert_eq!(jaccard_dist(&BTreeSet::new(), &BTreeSet::new()), 0.0);
    }

    #[test]
    fn recall_monotone_in_k() {
        let pred = RankedObjects(vec![(3, 0.9), (1, 0.8), (4, 0.7), (0, 0.6)]);
        let gt = set(&[0, 1, 7]);
        let mut prev = 0.0;
        for k in 1..=6 {
            let r = object_recall_at_k(&pred, &gt, k);
            assert!(r >= prev - 1e-12);
            prev = r;
        }
    }
}
