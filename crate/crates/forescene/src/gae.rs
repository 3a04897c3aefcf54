//! The graph auto-encoder: model wrapper, decoder losses with bipartite
//! matching, latent/weight regularization, and the training loop.
//!
//! Total objective per graph:
//! `L = L_enco + lambda_obj * L_obj + lambda_rel * L_rel + lambda_con * L_con + L_reg`
//! where `L_reg = beta/2 * ||z||^2 + lambda * sum ||decoder weights||^2`.

use crate::config::{GaeConfig, GaeTrainConfig};
use crate::decoder::{
    corner_to_center, decode_on_tape, init_decoder_params, materialize, DecOut, DecodedGraph,
};
use crate::encoder::{encode_on_tape, init_encoder_params, loss_enco_on_tape, EncodeOut};
use crate::error::{Error, Result};
use crate::features::init_feature_params;
use crate::graph::SceneGraph;
use crate::matching::{hungarian_match, MatchResult, MatchWeights};
use crate::params::{merge_grads, read_checkpoint, write_checkpoint, Adam, GradMap, ParamStore};
use crate::records::write_atomic;
use crate::tape::{NodeId, Tape};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use std::path::Path;

/// Trained (or freshly initialized) auto-encoder.
#[derive(Debug, Clone)]
pub struct GaeModel {
    pub cfg: GaeConfig,
    pub params: ParamStore,
}

impl GaeModel {
    pub fn init(cfg: GaeConfig, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        init_feature_params(&mut params, &cfg, &mut rng);
        init_encoder_params(&mut params, &cfg, &mut rng);
        init_decoder_params(&mut params, &cfg, &mut rng);
        GaeModel { cfg, params }
    }

    /// Latent vector for one graph.
    pub fn encode(&self, graph: &SceneGraph) -> Vec<f64> {
        let mut tape = Tape::new();
        let out = encode_on_tape(&mut tape, &self.params, &self.cfg, graph);
        tape.value(out.z).row(0).to_vec()
    }

    /// Frame-ordered latents for a whole sequence, one row per frame.
    pub fn encode_sequence(&self, graphs: &[SceneGraph]) -> Array2<f64> {
        let mut out = Array2::zeros((graphs.len(), self.cfg.c_latent));
        for (i, g) in graphs.iter().enumerate() {
            let z = self.encode(g);
            for (j, &v) in z.iter().enumerate() {
                out[[i, j]] = v;
            }
        }
        out
    }

    /// Decode one latent into query-slot distributions.
    pub fn decode(&self, z: &[f64]) -> DecodedGraph {
        debug_assert_eq!(z.len(), self.cfg.c_latent);
        let mut tape = Tape::new();
        let zid = tape.constant(Array2::from_shape_vec((1, z.len()), z.to_vec()).unwrap());
        let out = decode_on_tape(&mut tape, &self.params, &self.cfg, zid);
        materialize(&mut tape, &out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = write_checkpoint(&self.params, &self.cfg.fingerprint());
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path, cfg: GaeConfig) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPrerequisite(format!("{}", path.display())));
        }
        let (params, fp) = read_checkpoint(&std::fs::read(path)?)?;
        if fp != cfg.fingerprint() {
            return Err(Error::Config(format!(
                "checkpoint {} was written with a different model configuration",
                path.display()
            )));
        }
        Ok(GaeModel { cfg, params })
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Object loss: weighted cross-entropy over all query slots (unmatched
/// slots target the no-object class with down-weight `phi_weight`) plus the
/// box loss (L1 in center-size form, generalized IoU in corner form) on
/// matched slots only.
pub fn loss_obj_on_tape(
    tape: &mut Tape,
    dec: &DecOut,
    gt: &SceneGraph,
    m: &MatchResult,
    cfg: &GaeConfig,
    train: &GaeTrainConfig,
) -> NodeId {
    let n = cfg.n_queries;
    let phi = cfg.num_objects;
    let mut targets = vec![phi; n];
    let mut weights = vec![train.phi_weight; n];
    for &(q, g) in &m.assignment {
        targets[q] = gt.nodes[g].category_index;
        weights[q] = 1.0;
    }
    let ce = tape.ce_rows(dec.class_logits, &targets, &weights);
    let class_term = tape.scale(ce, train.lambda_class);
    if m.assignment.is_empty() {
        return class_term;
    }

    let matched_qs: Vec<usize> = m.assignment.iter().map(|&(q, _)| q).collect();
    let pred_cs = tape.gather_rows(dec.boxes_cs, &matched_qs);
    let n_match = matched_qs.len();
    let gt_cs = Array2::from_shape_fn((n_match, 4), |(r, c)| {
        corner_to_center(&gt.nodes[m.assignment[r].1].bbox)[c]
    });
    let gt_corner = Array2::from_shape_fn((n_match, 4), |(r, c)| gt.nodes[m.assignment[r].1].bbox[c]);

    // L1 in center-size space, summed over coords, averaged over boxes.
    let l1 = tape.l1_loss(pred_cs, gt_cs);
    let l1 = tape.scale(l1, 4.0 * train.box_l1);

    let giou = giou_loss_on_tape(tape, pred_cs, &gt_corner);
    let giou = tape.scale(giou, train.box_giou);

    let box_sum = tape.add(l1, giou);
    let box_term = tape.scale(box_sum, train.lambda_box);
    tape.add(class_term, box_term)
}

/// Mean `1 - gIoU` between predicted center-size boxes and ground-truth
/// corner boxes.
fn giou_loss_on_tape(tape: &mut Tape, pred_cs: NodeId, gt_corner: &Array2<f64>) -> NodeId {
    let m = gt_corner.nrows();
    let cx = tape.slice_cols(pred_cs, 0, 1);
    let cy = tape.slice_cols(pred_cs, 1, 2);
    let w = tape.slice_cols(pred_cs, 2, 3);
    let h = tape.slice_cols(pred_cs, 3, 4);
    let half_w = tape.scale(w, 0.5);
    let half_h = tape.scale(h, 0.5);
    let px1 = tape.sub(cx, half_w);
    let px2 = tape.add(cx, half_w);
    let py1 = tape.sub(cy, half_h);
    let py2 = tape.add(cy, half_h);

    let col = |tape: &mut Tape, c: usize| {
        tape.constant(Array2::from_shape_fn((m, 1), |(r, _)| gt_corner[[r, c]]))
    };
    let gx1 = col(tape, 0);
    let gy1 = col(tape, 1);
    let gx2 = col(tape, 2);
    let gy2 = col(tape, 3);

    let ix1 = tape.emax(px1, gx1);
    let iy1 = tape.emax(py1, gy1);
    let ix2 = tape.emin(px2, gx2);
    let iy2 = tape.emin(py2, gy2);
    let iwd = tape.sub(ix2, ix1);
    let iw = tape.relu(iwd);
    let ihd = tape.sub(iy2, iy1);
    let ih = tape.relu(ihd);
    let inter = tape.mul(iw, ih);

    // predicted area = w * h (positive by construction)
    let area_p = tape.mul(w, h);
    let area_g = tape.constant(Array2::from_shape_fn((m, 1), |(r, _)| {
        (gt_corner[[r, 2]] - gt_corner[[r, 0]]) * (gt_corner[[r, 3]] - gt_corner[[r, 1]])
    }));
    let ap_ag = tape.add(area_p, area_g);
    let union = tape.sub(ap_ag, inter);
    let iou = tape.div(inter, union);

    let ex1 = tape.emin(px1, gx1);
    let ey1 = tape.emin(py1, gy1);
    let ex2 = tape.emax(px2, gx2);
    let ey2 = tape.emax(py2, gy2);
    let ew = tape.sub(ex2, ex1);
    let eh = tape.sub(ey2, ey1);
    let earea = tape.mul(ew, eh);

    // 1 - giou = 1 - iou + (earea - union)/earea = 2 - iou - union/earea
    let ratio = tape.div(union, earea);
    let s = tape.add(iou, ratio);
    let two = tape.constant(Array2::from_elem((m, 1), 2.0));
    let loss_col = tape.sub(two, s);
    let total = tape.sum_all(loss_col);
    tape.scale(total, 1.0 / m as f64)
}

/// Relation and connectivity targets assembled by mapping ground-truth edges
/// through the match; every other cell targets zero. Returns mean BCE for
/// the `N x N x P` relation matrix and the `N x N` connectivity matrix.
pub fn loss_rel_con_on_tape(
    tape: &mut Tape,
    dec: &DecOut,
    gt: &SceneGraph,
    m: &MatchResult,
    cfg: &GaeConfig,
) -> (NodeId, NodeId) {
    let n = cfg.n_queries;
    let mut rel_t = Array2::zeros((n * n, cfg.num_predicates));
    let mut con_t = Array2::zeros((n * n, 1));
    for e in &gt.edges {
        let qs = m.query_of_gt(e.subject_index);
        let qo = m.query_of_gt(e.object_index);
        let row = qs * n + qo;
        con_t[[row, 0]] = 1.0;
        for &p in &e.predicates {
            rel_t[[row, p]] = 1.0;
        }
    }
    let l_rel = tape.bce_logits(dec.rel_logits, rel_t);
    let l_con = tape.bce_logits(dec.con_logits, con_t);
    (l_rel, l_con)
}

/// `beta/2 * ||z||^2 + lambda * sum over decoder params of ||gamma||^2`.
pub fn loss_reg_on_tape(
    tape: &mut Tape,
    z: NodeId,
    dec_param_ids: &[NodeId],
    beta: f64,
    lambda_dec: f64,
) -> NodeId {
    let z2 = tape.mul(z, z);
    let zs = tape.sum_all(z2);
    let mut total = tape.scale(zs, beta * 0.5);
    if lambda_dec != 0.0 {
        let mut acc: Option<NodeId> = None;
        for &pid in dec_param_ids {
            let sq = tape.mul(pid, pid);
            let s = tape.sum_all(sq);
            acc = Some(match acc {
                Some(a) => tape.add(a, s),
                None => s,
            });
        }
        if let Some(a) = acc {
            let scaled = tape.scale(a, lambda_dec);
            total = tape.add(total, scaled);
        }
    }
    total
}

/// All loss components for one graph, as tape nodes.
pub struct GraphLossNodes {
    pub total: NodeId,
    pub l_enco: f64,
    pub l_obj: f64,
    pub l_rel: f64,
    pub l_con: f64,
    pub l_reg: f64,
    pub encode: EncodeOut,
    pub dec: DecOut,
    pub matching: MatchResult,
}

/// Build the full per-graph objective on a tape: encode, decode, match, and
/// assemble all loss terms.
pub fn gae_loss_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &GaeConfig,
    train: &GaeTrainConfig,
    graph: &SceneGraph,
) -> Result<GraphLossNodes> {
    let enc = encode_on_tape(tape, store, cfg, graph);
    let dec = decode_on_tape(tape, store, cfg, enc.z);
    let decoded = materialize(tape, &dec);
    let matching = hungarian_match(&decoded, graph, MatchWeights::default())?;

    let l_obj = loss_obj_on_tape(tape, &dec, graph, &matching, cfg, train);
    let (l_rel, l_con) = loss_rel_con_on_tape(tape, &dec, graph, &matching, cfg);
    let l_reg = loss_reg_on_tape(tape, enc.z, &dec.param_ids, train.beta, train.lambda_dec);

    let obj_term = tape.scale(l_obj, train.lambda_obj);
    let rel_term = tape.scale(l_rel, train.lambda_rel);
    let con_term = tape.scale(l_con, train.lambda_con);
    let mut total = tape.add(obj_term, rel_term);
    total = tape.add(total, con_term);
    total = tape.add(total, l_reg);
    let l_enco_val;
    if train.aux_loss {
        let l_enco = loss_enco_on_tape(tape, store, cfg, graph, &enc);
        l_enco_val = tape.scalar(l_enco);
        total = tape.add(total, l_enco);
    } else {
        l_enco_val = 0.0;
    }
    Ok(GraphLossNodes {
        total,
        l_enco: l_enco_val,
        l_obj: tape.scalar(l_obj),
        l_rel: tape.scalar(l_rel),
        l_con: tape.scalar(l_con),
        l_reg: tape.scalar(l_reg),
        encode: enc,
        dec,
        matching,
    })
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Per-epoch means of the loss components, logged as CSV.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub l_enco: f64,
    pub l_obj: f64,
    pub l_rel: f64,
    pub l_con: f64,
    pub l_reg: f64,
    pub total: f64,
}

pub fn curve_to_csv(rows: &[EpochRow]) -> String {
    let mut s = String::from("epoch,l_enco,l_obj,l_rel,l_con,l_reg,total\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.epoch, r.l_enco, r.l_obj, r.l_rel, r.l_con, r.l_reg, r.total
        ));
    }
    s
}

/// Train the auto-encoder on a flat list of graphs. Runs `epochs` passes of
/// shuffled mini-batches with Adam and cosine-annealed learning rate; batch
/// gradients are averaged sample-parallel but merged in a fixed order so the
/// result is independent of thread scheduling.
pub fn train_gae(
    graphs: &[SceneGraph],
    cfg: &GaeConfig,
    train: &GaeTrainConfig,
    seed: u64,
    diagnostics_dir: Option<&Path>,
) -> Result<(GaeModel, Vec<EpochRow>)> {
    let mut model = GaeModel::init(cfg.clone(), seed);
    let curve = train_gae_from(&mut model, graphs, train, seed, 0, diagnostics_dir)?;
    Ok((model, curve))
}

/// Continue training an existing model; epoch numbering in the curve starts
/// at `first_epoch` (used by checkpoint resume). The cosine schedule restarts.
pub fn train_gae_from(
    model: &mut GaeModel,
    graphs: &[SceneGraph],
    train: &GaeTrainConfig,
    seed: u64,
    first_epoch: usize,
    diagnostics_dir: Option<&Path>,
) -> Result<Vec<EpochRow>> {
    if graphs.is_empty() {
        return Err(Error::InvalidData("no training graphs".into()));
    }
    let cfg = model.cfg.clone();
    let cfg = &cfg;
    let mut opt = Adam::new(train.lr);
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let mut curve = Vec::with_capacity(train.epochs);

    let mut order: Vec<usize> = (0..graphs.len()).collect();
    for epoch in 0..train.epochs {
        order.shuffle(&mut rng);
        let lr = crate::params::cosine_lr(train.lr, epoch, train.epochs, train.lr_floor_frac);
        let mut sums = [0.0f64; 6];
        for batch in order.chunks(train.batch_size) {
            let results: Vec<Result<(GradMap, [f64; 6])>> = batch
                .par_iter()
                .map(|&gi| {
                    let mut tape = Tape::new();
                    let nodes =
                        gae_loss_on_tape(&mut tape, &model.params, cfg, train, &graphs[gi])?;
                    let total = tape.scalar(nodes.total);
                    tape.backward(nodes.total);
                    Ok((
                        tape.param_grads(),
                        [nodes.l_enco, nodes.l_obj, nodes.l_rel, nodes.l_con, nodes.l_reg, total],
                    ))
                })
                .collect();
            let mut grad_maps = Vec::with_capacity(batch.len());
            for r in results {
                let (g, comps) = r?;
                for (s, c) in sums.iter_mut().zip(comps) {
                    *s += c;
                }
                grad_maps.push(g);
            }
            let merged = merge_grads(grad_maps, true);
            opt.step(&mut model.params, &merged, lr);
        }
        let denom = graphs.len() as f64;
        let row = EpochRow {
            epoch: first_epoch + epoch,
            l_enco: sums[0] / denom,
            l_obj: sums[1] / denom,
            l_rel: sums[2] / denom,
            l_con: sums[3] / denom,
            l_reg: sums[4] / denom,
            total: sums[5] / denom,
        };
        if !row.total.is_finite() {
            if let Some(dir) = diagnostics_dir {
                let snapshot = serde_json::json!({
                    "epoch": first_epoch + epoch,
                    "lr": lr,
                    "components": sums,
                    "non_finite_param": model.params.any_non_finite(),
                });
                let _ = write_atomic(
                    &dir.join("diverged.json"),
                    serde_json::to_string_pretty(&snapshot).unwrap().as_bytes(),
                );
            }
            return Err(Error::Diverged(format!("non-finite loss at epoch {}", first_epoch + epoch)));
        }
        curve.push(row);
    }
    Ok(curve)
}

// ---------------------------------------------------------------------------
// Reconstruction helpers used by evaluation and tests
// ---------------------------------------------------------------------------

/// Encode-decode a graph and discretize the result.
pub fn reconstruct(model: &GaeModel, graph: &SceneGraph, vocab: &crate::graph::Vocabulary) -> SceneGraph {
    let z = model.encode(graph);
    let d = model.decode(&z);
    crate::decoder::to_scene_graph(&d, vocab, (&model.cfg).into(), graph.frame_index)
}

/// Mean per-graph Jaccard similarity between reconstructed and input object
/// sets.
pub fn reconstruction_jaccard(
    model: &GaeModel,
    graphs: &[SceneGraph],
    vocab: &crate::graph::Vocabulary,
) -> f64 {
    let total: f64 = graphs
        .par_iter()
        .map(|g| {
            let rec = reconstruct(model, g, vocab);
            crate::metrics::jaccard(&rec.object_set(), &g.object_set())
        })
        .sum();
    total / graphs.len() as f64
}

/// Fraction of nodes whose auxiliary-head argmax matches the label.
pub fn aux_node_accuracy(model: &GaeModel, graphs: &[SceneGraph]) -> f64 {
    let (hits, total) = graphs
        .par_iter()
        .map(|g| {
            let mut tape = Tape::new();
            let out = encode_on_tape(&mut tape, &model.params, &model.cfg, g);
            let (node_logits, _) =
                crate::encoder::aux_heads_on_tape(&mut tape, &model.params, out.nodes, out.edges);
            let logits = tape.value(node_logits);
            let mut hits = 0usize;
            for (i, n) in g.nodes.iter().enumerate() {
                let row = logits.row(i);
                let mut best = 0;
                for c in 1..row.len() {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                if best == n.category_index {
                    hits += 1;
                }
            }
            (hits, g.nodes.len())
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    hits as f64 / total.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, Node, Vocabulary};
    use ndarray::array;

    fn tiny_cfg() -> GaeConfig {
        let mut cfg = GaeConfig::desk();
        cfg.d_vis = 3;
        cfg.d_vis_proj = 4;
        cfg.d_box_proj = 2;
        cfg.d_sem = 2;
        cfg.d_union = 2;
        cfg.d_edge_proj = 3;
        cfg.gcn_layers = 1;
        cfg.c_latent = 6;
        cfg.dec_blocks = 1;
        cfg.n_heads = 2;
        cfg.d_head = 3;
        cfg.n_queries = 3;
        cfg.ffn_mult = 2;
        cfg.num_objects = 4;
        cfg.num_predicates = 3;
        cfg
    }

    fn node(cat: usize, x: f64) -> Node {
        Node {
            category_index: cat,
            bbox: [x, 0.2, x + 0.3, 0.7],
            visual_feature: vec![0.3, -0.2, 0.9],
        }
    }

    fn graph2() -> SceneGraph {
        SceneGraph {
            nodes: vec![node(0, 0.1), node(2, 0.5)],
            edges: vec![Edge {
                subject_index: 0,
                object_index: 1,
                predicates: [1].into_iter().collect(),
            }],
            frame_index: 0,
        }
    }

    #[test]
    fn loss_reg_analytic_value() {
        // z = (3, 4), beta = 0.1, no decoder penalty: 0.1 * 12.5 = 1.25
        let mut tape = Tape::new();
        let z = tape.constant(array![[3.0, 4.0]]);
        let l = loss_reg_on_tape(&mut tape, z, &[], 0.1, 0.0);
        assert!((tape.scalar(l) - 1.25).abs() < 1e-12);
        // zero z, zero params
        let z0 = tape.constant(array![[0.0, 0.0]]);
        let l0 = loss_reg_on_tape(&mut tape, z0, &[], 0.1, 0.5);
        assert_eq!(tape.scalar(l0), 0.0);
    }

    #[test]
    fn loss_reg_matches_scalar_sum() {
        let mut tape = Tape::new();
        let z = tape.constant(array![[0.5, -1.5, 2.0]]);
        let p1 = tape.param("a", array![[1.0, 2.0], [3.0, 4.0]]);
        let p2 = tape.param("b", array![[0.5]]);
        let l = loss_reg_on_tape(&mut tape, z, &[p1, p2], 0.2, 0.001);
        let expect = 0.2 * 0.5 * (0.25 + 2.25 + 4.0) + 0.001 * (1.0 + 4.0 + 9.0 + 16.0 + 0.25);
        assert!((tape.scalar(l) - expect).abs() < 1e-12);
    }

    #[test]
    fn rel_con_targets_map_through_match() {
        // one gt edge, predicted prob 0.5 everywhere: closed-form mean BCE
        let cfg = tiny_cfg();
        let model = GaeModel::init(cfg.clone(), 0);
        let g = graph2();
        let mut tape = Tape::new();
        let n = cfg.n_queries;
        // logits 0 => prob 0.5 everywhere
        let rel_logits = tape.constant(Array2::zeros((n * n, cfg.num_predicates)));
        let con_logits = tape.constant(Array2::zeros((n * n, 1)));
        let dec = DecOut {
            class_logits: rel_logits, // unused by loss_rel_con
            boxes_cs: rel_logits,
            rel_logits,
            con_logits,
            param_ids: vec![],
        };
        let matching = MatchResult {
            assignment: vec![(0, 0), (2, 1)],
            unmatched: vec![1],
            total_cost: 0.0,
        };
        let (l_rel, l_con) = loss_rel_con_on_tape(&mut tape, &dec, &g, &matching, &cfg);
        // all cells BCE(0.5, y) = ln 2 regardless of y
        assert!((tape.scalar(l_rel) - (2.0f64).ln()).abs() < 1e-12);
        let _ = model;
        assert!((tape.scalar(l_con) - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn box_term_zero_when_all_unmatched() {
        let cfg = tiny_cfg();
        let train = GaeTrainConfig::default();
        // gt with zero nodes is invalid for matching; emulate "all unmatched"
        // with an empty assignment on a 1-node gt handled by class term only.
        let mut tape = Tape::new();
        let class_logits = tape.constant(Array2::zeros((cfg.n_queries, cfg.num_objects + 1)));
        let boxes = tape.constant(Array2::from_elem((cfg.n_queries, 4), 0.5));
        let dec = DecOut {
            class_logits,
            boxes_cs: boxes,
            rel_logits: class_logits,
            con_logits: class_logits,
            param_ids: vec![],
        };
        let g = graph2();
        let m = MatchResult { assignment: vec![], unmatched: (0..cfg.n_queries).collect(), total_cost: 0.0 };
        let l = loss_obj_on_tape(&mut tape, &dec, &g, &m, &cfg, &train);
        // pure CE of uniform over C+1 classes
        let expect = ((cfg.num_objects + 1) as f64).ln();
        assert!((tape.scalar(l) - expect).abs() < 1e-9);
    }

    #[test]
    fn matching_relabeling_leaves_losses_unchanged() {
        let cfg = tiny_cfg();
        let train = GaeTrainConfig::default();
        let model = GaeModel::init(cfg.clone(), 7);
        let g = graph2();
        // reverse gt node order (and fix edge indices accordingly)
        let mut g_rev = g.clone();
        g_rev.nodes.reverse();
        g_rev.edges[0].subject_index = 1;
        g_rev.edges[0].object_index = 0;

        let mut t1 = Tape::new();
        let l1 = gae_loss_on_tape(&mut t1, &model.params, &cfg, &train, &g).unwrap();
        let mut t2 = Tape::new();
        let l2 = gae_loss_on_tape(&mut t2, &model.params, &cfg, &train, &g_rev).unwrap();
        assert!((t1.scalar(l1.total) - t2.scalar(l2.total)).abs() < 1e-9);
        assert!((l1.l_obj - l2.l_obj).abs() < 1e-9);
        assert!((l1.l_rel - l2.l_rel).abs() < 1e-9);
        assert!((l1.l_con - l2.l_con).abs() < 1e-9);
    }

    #[test]
    fn loss_obj_matches_scalar_reference() {
        let cfg = tiny_cfg();
        let train = GaeTrainConfig::default();
        let model = GaeModel::init(cfg.clone(), 3);
        let g = graph2();
        let mut tape = Tape::new();
        let nodes = gae_loss_on_tape(&mut tape, &model.params, &cfg, &train, &g).unwrap();

        // independent scalar recomputation of the CE part + box part
        let logits = tape.value(nodes.dec.class_logits).clone();
        let boxes_cs = tape.value(nodes.dec.boxes_cs).clone();
        let m = &nodes.matching;
        let phi = cfg.num_objects;
        let mut targets = vec![phi; cfg.n_queries];
        let mut weights = vec![train.phi_weight; cfg.n_queries];
        for &(q, gi) in &m.assignment {
            targets[q] = g.nodes[gi].category_index;
            weights[q] = 1.0;
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for q in 0..cfg.n_queries {
            let row = logits.row(q);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&x| (x - mx).exp()).sum();
            num += weights[q] * -(row[targets[q]] - mx - z.ln());
            den += weights[q];
        }
        let ce = num / den;
        let mut l1 = 0.0;
        let mut gl = 0.0;
        for &(q, gi) in &m.assignment {
            let p = boxes_cs.row(q);
            let gt_c = corner_to_center(&g.nodes[gi].bbox);
            l1 += p.iter().zip(gt_c.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>();
            let pc = crate::decoder::center_to_corner(&[p[0], p[1], p[2], p[3]]);
            gl += 1.0 - crate::matching::giou(&pc, &g.nodes[gi].bbox);
        }
        let mm = m.assignment.len() as f64;
        let expect = train.lambda_class * ce
            + train.lambda_box * (train.box_l1 * l1 / mm + train.box_giou * gl / mm);
        assert!((nodes.l_obj - expect).abs() < 1e-6, "got {} want {expect}", nodes.l_obj);
    }

    #[test]
    fn decoder_loss_gradients_match_finite_differences() {
        // full pipeline loss (decoder terms + regularizer) against central
        // differences, with the match frozen inside the closure
        let cfg = tiny_cfg();
        let mut train = GaeTrainConfig::default();
        train.aux_loss = false;
        let model = GaeModel::init(cfg.clone(), 11);
        let g = graph2();

        // subset of parameters spanning featurizer, encoder, and decoder
        let check_names = [
            "feat.w1",
            "feat.sem",
            "enc.gcn0.t1.w",
            "enc.pool.w",
            "dec.query",
            "dec.blk0.self.wq",
            "dec.blk0.rel.gate_u",
            "dec.blk0.rel.proj",
            "dec.obj_head.w2",
            "dec.box_head.w2",
            "dec.rel_head.w2",
            "dec.con_head.w2",
            "dec.blk0.ln2.g",
        ];
        let inputs: Vec<(&str, Array2<f64>)> =
            check_names.iter().map(|n| (*n, model.params.get(n).clone())).collect();
        let base = model.params.clone();
        let cfg2 = cfg.clone();
        let g2 = g.clone();
        crate::testutil::fd_check_tape(
            &inputs,
            move |t, vals| {
                let mut s = base.clone();
                for (k, v) in vals {
                    *s.get_mut(k) = v.clone();
                }
                let nodes = gae_loss_on_tape(t, &s, &cfg2, &train, &g2).unwrap();
                nodes.total
            },
            1e-6,
            1e-4,
        );
    }

    #[test]
    fn short_training_reduces_loss() {
        let cfg = tiny_cfg();
        let mut train = GaeTrainConfig::default();
        train.epochs = 30;
        train.batch_size = 4;
        train.lr = 3e-3;
        let vocab = Vocabulary::new(
            vec!["person".into(), "a".into(), "b".into(), "c".into()],
            vec![
                ("p0".into(), crate::graph::PredicateKind::Attention),
                ("p1".into(), crate::graph::PredicateKind::Spatial),
                ("p2".into(), crate::graph::PredicateKind::Contacting),
            ],
        )
        .unwrap();
        let graphs: Vec<SceneGraph> = (0..6)
            .map(|i| {
                let mut g = graph2();
                g.nodes[1].category_index = 1 + (i % 3);
                g.frame_index = i;
                g
            })
            .collect();
        let (model, curve) = train_gae(&graphs, &cfg, &train, 0, None).unwrap();
        assert_eq!(curve.len(), train.epochs);
        assert!(
            curve.last().unwrap().total < curve.first().unwrap().total,
            "training should reduce the loss: {} -> {}",
            curve.first().unwrap().total,
            curve.last().unwrap().total
        );
        let _ = reconstruction_jaccard(&model, &graphs, &vocab);
    }

    #[test]
    fn aux_toggle_zeroes_component() {
        let cfg = tiny_cfg();
        let mut train = GaeTrainConfig::default();
        train.epochs = 2;
        train.batch_size = 2;
        train.aux_loss = false;
        let graphs = vec![graph2()];
        let (_, curve) = train_gae(&graphs, &cfg, &train, 0, None).unwrap();
        assert!(curve.iter().all(|r| r.l_enco == 0.0));
    }

    #[test]
    fn save_load_roundtrip_and_fingerprint_check() {
        let cfg = tiny_cfg();
        let model = GaeModel::init(cfg.clone(), 5);
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("gae.ckpt");
        model.save(&path).unwrap();
        let loaded = GaeModel::load(&path, cfg.clone()).unwrap();
        assert_eq!(loaded.params.get("dec.query"), model.params.get("dec.query"));

        let mut other = cfg;
        other.n_queries += 1;
        assert!(matches!(GaeModel::load(&path, other), Err(Error::Config(_))));
    }
}
