//! Anticipation: encode the observed frames, extend the latent sequence
//! window by window through reverse diffusion, decode the future latents,
//! and select among independent rollouts.
//!
//! Window bookkeeping: the predicted region always starts strictly after the
//! last known latent, every future index is predicted by exactly one window,
//! and each window conditions on the suffix of already-known latents ending
//! where its prediction begins. The final window is clamped to the sequence
//! end, and early windows shrink their conditioning half to what exists.

use crate::decoder::{rank_objects, rank_triplets, to_scene_graph, DecodedGraph};
use crate::diffusion::{reverse_diffuse, DiffusionSchedule, LdmModel};
use crate::error::{Error, Result};
use crate::gae::GaeModel;
use crate::graph::{SceneGraph, Vocabulary};
use crate::metrics::{
    jaccard_sim, object_recall_at_k, triplets_recall_over_frames, RankedObjects, RankedTriplets,
    Regime,
};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// One reverse-diffusion window: conditioning rows `[cond_start,
/// pred_start)`, predicted rows `[pred_start, pred_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowPlan {
    pub cond_start: usize,
    pub pred_start: usize,
    pub pred_end: usize,
}

/// Plan the sliding windows covering future indices `f_s+1 ..= f_last` with
/// half-window steps of `floor(s / 2)`.
pub fn plan_windows(f_s: usize, f_last: usize, s: usize) -> Vec<WindowPlan> {
    assert!(s >= 2, "window size must be at least 2");
    let half = s / 2;
    let mut plans = Vec::new();
    let mut next = f_s + 1;
    while next <= f_last {
        let cond_start = next.saturating_sub(half);
        let pred_len = half.min(f_last - next + 1);
        plans.push(WindowPlan { cond_start, pred_start: next, pred_end: next + pred_len });
        next += pred_len;
    }
    plans
}

/// Latent-level rollout with its window trace and per-index write counter.
#[derive(Debug, Clone)]
pub struct LatentRollout {
    /// `f_last + 1` rows; observed rows are the originals, future rows the
    /// sampled latents.
    pub latents: Array2<f64>,
    pub plans: Vec<WindowPlan>,
    /// How many windows wrote each index (observed indices stay 0).
    pub writes: Vec<usize>,
}

/// Extend observed latents to `f_last` by windowed reverse diffusion.
/// Sampling runs in the model's standardized latent space; returned future
/// rows are denormalized, and observed rows are copied through untouched.
pub fn anticipate_latents(
    observed: &Array2<f64>,
    f_last: usize,
    model: &LdmModel,
    schedule: &DiffusionSchedule,
    rng: &mut ChaCha12Rng,
) -> LatentRollout {
    let f_s = observed.nrows() - 1;
    let c = observed.ncols();
    let s = model.cfg.window.effective(f_last + 1);
    let plans = plan_windows(f_s, f_last, s);
    // working copy in standardized space
    let observed_norm = model.normalize(observed);
    let mut work = Array2::zeros((f_last + 1, c));
    for i in 0..=f_s {
        work.row_mut(i).assign(&observed_norm.row(i));
    }
    let mut writes = vec![0usize; f_last + 1];
    for plan in &plans {
        let cond = work.slice(ndarray::s![plan.cond_start..plan.pred_start, ..]).to_owned();
        let n_pred = plan.pred_end - plan.pred_start;
        let pred = reverse_diffuse(&cond, n_pred, model, schedule, rng);
        for (k, idx) in (plan.pred_start..plan.pred_end).enumerate() {
            work.row_mut(idx).assign(&pred.row(k));
            writes[idx] += 1;
        }
    }
    // output: observed rows bit-identical, future rows denormalized
    let denorm = model.denormalize(&work);
    let mut latents = Array2::zeros((f_last + 1, c));
    for i in 0..=f_s {
        latents.row_mut(i).assign(&observed.row(i));
    }
    for i in f_s + 1..=f_last {
        latents.row_mut(i).assign(&denorm.row(i));
    }
    LatentRollout { latents, plans, writes }
}

/// Decoded prediction for one future frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FramePrediction {
    pub frame_index: usize,
    /// Discretized scene graph.
    pub graph: SceneGraph,
    /// All object categories ranked by confidence.
    pub ranked_objects: RankedObjects,
    /// Identity triplets ranked by score, unconstrained regime; the
    /// constrained view is derived from this list.
    pub triplets_nc: RankedTriplets,
}

/// One sampled future: frames `f_s+1 ..= f_last` in order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rollout {
    pub seed: u64,
    pub frames: Vec<FramePrediction>,
}

/// How many ranked triplets to keep per frame in rollout records.
const TRIPLET_KEEP: usize = 200;

pub struct AnticipationRequest<'a> {
    /// Observed prefix, contiguous frames `0 ..= f_s`.
    pub observed: &'a [SceneGraph],
    /// Index of the final frame to predict.
    pub f_last: usize,
    pub rollouts: usize,
    pub seed: u64,
}

/// Run `r` independent rollouts (seeds `seed`, `seed+1`, ...). Returns an
/// empty rollout list's worth of frames when there is nothing to predict
/// (`f_s == f_last`).
pub fn anticipate(
    req: &AnticipationRequest,
    gae: &GaeModel,
    ldm: &LdmModel,
    vocab: &Vocabulary,
) -> Result<Vec<Rollout>> {
    if req.observed.is_empty() {
        return Err(Error::InvalidData("no observed frames".into()));
    }
    for (i, g) in req.observed.iter().enumerate() {
        if g.frame_index != i {
            return Err(Error::InvalidData(
                "observed frames must be contiguous from index 0".into(),
            ));
        }
    }
    let f_s = req.observed.len() - 1;
    if req.f_last < f_s {
        return Err(Error::InvalidData(format!(
            "f_last = {} precedes last observed frame {f_s}",
            req.f_last
        )));
    }
    if req.rollouts == 0 {
        return Err(Error::InvalidData("need at least one rollout".into()));
    }
    let schedule = DiffusionSchedule::from_config(&ldm.cfg);
    let observed_z = gae.encode_sequence(req.observed);

    let mut out = Vec::with_capacity(req.rollouts);
    for k in 0..req.rollouts {
        let seed = req.seed.wrapping_add(k as u64);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let frames = if req.f_last == f_s {
            Vec::new()
        } else {
            let lr = anticipate_latents(&observed_z, req.f_last, ldm, &schedule, &mut rng);
            debug_assert!(lr.writes[f_s + 1..].iter().all(|&w| w == 1));
            // decode all future latents in a single pass
            (f_s + 1..=req.f_last)
                .map(|fi| {
                    let z: Vec<f64> = lr.latents.row(fi).to_vec();
                    let d = gae.decode(&z);
                    frame_prediction(&d, gae, vocab, fi)
                })
                .collect()
        };
        out.push(Rollout { seed, frames });
    }
    Ok(out)
}

fn frame_prediction(
    d: &DecodedGraph,
    gae: &GaeModel,
    vocab: &Vocabulary,
    frame_index: usize,
) -> FramePrediction {
    let graph = to_scene_graph(d, vocab, (&gae.cfg).into(), frame_index);
    let ranked_objects = rank_objects(d);
    let mut triplets_nc = rank_triplets(d);
    triplets_nc.0.truncate(TRIPLET_KEEP);
    FramePrediction { frame_index, graph, ranked_objects, triplets_nc }
}

// ---------------------------------------------------------------------------
// Rollout metrics and best-of-r selection
// ---------------------------------------------------------------------------

/// Mean per-frame Jaccard similarity of predicted vs ground-truth object
/// sets over the future frames.
pub fn rollout_jaccard_sim(rollout: &Rollout, gt_future: &[SceneGraph]) -> f64 {
    let pred: Vec<_> = rollout.frames.iter().map(|f| f.graph.object_set()).collect();
    let gt: Vec<_> = gt_future.iter().map(|g| g.object_set()).collect();
    jaccard_sim(&pred, &gt)
}

/// Mean object recall at `k` over the future frames.
pub fn rollout_object_recall(rollout: &Rollout, gt_future: &[SceneGraph], k: usize) -> f64 {
    assert_eq!(rollout.frames.len(), gt_future.len());
    let total: f64 = rollout
        .frames
        .iter()
        .zip(gt_future)
        .map(|(f, g)| object_recall_at_k(&f.ranked_objects, &g.object_set(), k))
        .sum();
    total / gt_future.len().max(1) as f64
}

/// Mean triplet recall at `k` over the future frames.
pub fn rollout_triplets_recall(
    rollout: &Rollout,
    gt_future: &[SceneGraph],
    k: usize,
    regime: Regime,
    vocab: &Vocabulary,
    strict: bool,
) -> f64 {
    assert_eq!(rollout.frames.len(), gt_future.len());
    let preds: Vec<RankedTriplets> =
        rollout.frames.iter().map(|f| f.triplets_nc.clone()).collect();
    let gts: Vec<_> = gt_future.iter().map(|g| g.triplet_set()).collect();
    triplets_recall_over_frames(&preds, &gts, k, regime, vocab, strict)
}

/// Criterion used to pick the best rollout against ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionCriterion {
    TripletsRecall { k: usize, regime: Regime },
    JaccardSim,
}

impl Default for SelectionCriterion {
    /// Recall@10 of triplets without constraint.
    fn default() -> Self {
        SelectionCriterion::TripletsRecall { k: 10, regime: Regime::NoConstraint }
    }
}

/// Score one rollout under a criterion.
pub fn rollout_score(
    rollout: &Rollout,
    gt_future: &[SceneGraph],
    criterion: SelectionCriterion,
    vocab: &Vocabulary,
    strict: bool,
) -> f64 {
    match criterion {
        SelectionCriterion::TripletsRecall { k, regime } => {
            rollout_triplets_recall(rollout, gt_future, k, regime, vocab, strict)
        }
        SelectionCriterion::JaccardSim => rollout_jaccard_sim(rollout, gt_future),
    }
}

/// Pick the best rollout under the criterion; ties go to the lowest seed.
pub fn select_best<'a>(
    rollouts: &'a [Rollout],
    gt_future: &[SceneGraph],
    criterion: SelectionCriterion,
    vocab: &Vocabulary,
    strict: bool,
) -> Result<&'a Rollout> {
    if rollouts.is_empty() {
        return Err(Error::InvalidData("no rollouts to select from".into()));
    }
    let mut best = &rollouts[0];
    let mut best_score = rollout_score(best, gt_future, criterion, vocab, strict);
    let mut best_seed = best.seed;
    for r in &rollouts[1..] {
        let score = rollout_score(r, gt_future, criterion, vocab, strict);
        if score > best_score || (score == best_score && r.seed < best_seed) {
            best = r;
            best_score = score;
            best_seed = r.seed;
        }
    }
    Ok(best)
}
