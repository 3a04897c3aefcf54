//! Transformer decoder from a graph latent to a complete scene graph: `N`
//! learned object queries cross-attend to the latent, self-attend, and feed
//! through per-block FFNs; four heads emit object class distributions,
//! boxes, a pairwise relation matrix, and a connectivity matrix.
//!
//! Relation features follow the gated multi-layer design of the EGTR
//! relation extractor (adopted from that reference, not contributed here):
//! at every block the self-attention queries and keys, concatenated across
//! heads, act as subject and object descriptors. Per block `l` and ordered
//! pair `(i, j)`:
//!
//! ```text
//! p_ij^l   = [ Q_i^l W_S^l ; K_j^l W_O^l ]          (2 * d_model)
//! gate^l   = sigmoid(p_ij^l . u^l + b^l)            (scalar)
//! phi_e_ij = sum_l gate^l * (p_ij^l V^l)            (d_model)
//! ```

use crate::config::GaeConfig;
use crate::graph::{Edge, Node, SceneGraph, Vocabulary};
use crate::metrics::{RankedObjects, RankedTriplets};
use crate::params::{Init, ParamStore};
use crate::tape::{NodeId, Tape};
use ndarray::Array2;
use rand_chacha::ChaCha12Rng;
use std::collections::BTreeSet;

/// Register decoder parameters (`dec.*`).
pub fn init_decoder_params(store: &mut ParamStore, cfg: &GaeConfig, rng: &mut ChaCha12Rng) {
    let d = cfg.d_model();
    let ffn = d * cfg.ffn_mult;
    store.insert("dec.query", Init::normal(rng, cfg.n_queries, d, 0.5));
    store.insert("dec.zproj.w", Init::xavier(rng, cfg.c_latent, cfg.mem_tokens * d));
    store.insert("dec.zproj.b", Init::zeros(1, cfg.mem_tokens * d));
    let attn = |store: &mut ParamStore, rng: &mut ChaCha12Rng, prefix: &str| {
        for part in ["wq", "wk", "wv", "wo"] {
            store.insert(&format!("{prefix}.{part}"), Init::xavier(rng, d, d));
        }
        for part in ["bq", "bk", "bv", "bo"] {
            store.insert(&format!("{prefix}.{part}"), Init::zeros(1, d));
        }
    };
    for l in 0..cfg.dec_blocks {
        attn(store, rng, &format!("dec.blk{l}.cross"));
        attn(store, rng, &format!("dec.blk{l}.self"));
        store.insert(&format!("dec.blk{l}.ffn.w1"), Init::xavier(rng, d, ffn));
        store.insert(&format!("dec.blk{l}.ffn.b1"), Init::zeros(1, ffn));
        store.insert(&format!("dec.blk{l}.ffn.w2"), Init::xavier(rng, ffn, d));
        store.insert(&format!("dec.blk{l}.ffn.b2"), Init::zeros(1, d));
        for ln in ["ln1", "ln2", "ln3"] {
            store.insert(&format!("dec.blk{l}.{ln}.g"), Init::ones(1, d));
            store.insert(&format!("dec.blk{l}.{ln}.b"), Init::zeros(1, d));
        }
        store.insert(&format!("dec.blk{l}.rel.ws"), Init::xavier(rng, d, d));
        store.insert(&format!("dec.blk{l}.rel.wo"), Init::xavier(rng, d, d));
        store.insert(&format!("dec.blk{l}.rel.gate_u"), Init::xavier(rng, 2 * d, 1));
        store.insert(&format!("dec.blk{l}.rel.gate_b"), Init::zeros(1, 1));
        store.insert(&format!("dec.blk{l}.rel.proj"), Init::xavier(rng, 2 * d, d));
    }
    let head = |store: &mut ParamStore, rng: &mut ChaCha12Rng, prefix: &str, out: usize| {
        store.insert(&format!("{prefix}.w1"), Init::xavier(rng, d, d));
        store.insert(&format!("{prefix}.b1"), Init::zeros(1, d));
        store.insert(&format!("{prefix}.w2"), Init::xavier(rng, d, out));
        store.insert(&format!("{prefix}.b2"), Init::zeros(1, out));
    };
    head(store, rng, "dec.obj_head", cfg.num_objects + 1);
    head(store, rng, "dec.box_head", 4);
    head(store, rng, "dec.rel_head", cfg.num_predicates);
    head(store, rng, "dec.con_head", 1);
}

/// Tape nodes produced by one decode pass. Class/rel/con stay as logits so
/// the losses can fuse their nonlinearities. Boxes are sigmoided
/// center-size form `(cx, cy, w, h)`, which keeps corner order guaranteed;
/// [`materialize`] converts to clipped corner form for consumers.
pub struct DecOut {
    pub class_logits: NodeId,
    pub boxes_cs: NodeId,
    pub rel_logits: NodeId,
    pub con_logits: NodeId,
    /// Every decoder parameter node, for the decoder weight penalty.
    pub param_ids: Vec<NodeId>,
}

/// Center-size `(cx, cy, w, h)` to corner `(x1, y1, x2, y2)`.
pub fn center_to_corner(b: &[f64; 4]) -> [f64; 4] {
    let [cx, cy, w, h] = *b;
    [cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0]
}

/// Corner `(x1, y1, x2, y2)` to center-size `(cx, cy, w, h)`.
pub fn corner_to_center(b: &[f64; 4]) -> [f64; 4] {
    let [x1, y1, x2, y2] = *b;
    [(x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1]
}

struct Ctx<'a> {
    tape: &'a mut Tape,
    store: &'a ParamStore,
    ids: Vec<NodeId>,
}

impl<'a> Ctx<'a> {
    fn p(&mut self, name: &str) -> NodeId {
        let id = self.tape.param(name, self.store.get(name).clone());
        self.ids.push(id);
        id
    }

    fn linear(&mut self, prefix: &str, x: NodeId, w: &str, b: &str) -> NodeId {
        let w = self.p(&format!("{prefix}.{w}"));
        let b = self.p(&format!("{prefix}.{b}"));
        let o = self.tape.matmul(x, w);
        self.tape.add_row(o, b)
    }

    fn layer_norm(&mut self, prefix: &str, x: NodeId) -> NodeId {
        let g = self.p(&format!("{prefix}.g"));
        let b = self.p(&format!("{prefix}.b"));
        self.tape.layer_norm_rows(x, g, b)
    }

    /// Multi-head attention of `x` over `mem`. Returns the output plus the
    /// head-concatenated queries and keys.
    fn mha(
        &mut self,
        prefix: &str,
        x: NodeId,
        mem: NodeId,
        n_heads: usize,
        d_head: usize,
    ) -> (NodeId, NodeId, NodeId) {
        let q = self.linear(prefix, x, "wq", "bq");
        let k = self.linear(prefix, mem, "wk", "bk");
        let v = self.linear(prefix, mem, "wv", "bv");
        let scale = 1.0 / (d_head as f64).sqrt();
        let mut heads = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let (from, to) = (h * d_head, (h + 1) * d_head);
            let qh = self.tape.slice_cols(q, from, to);
            let kh = self.tape.slice_cols(k, from, to);
            let vh = self.tape.slice_cols(v, from, to);
            let kt = self.tape.transpose(kh);
            let scores = self.tape.matmul(qh, kt);
            let scores = self.tape.scale(scores, scale);
            let attn = self.tape.softmax_rows(scores);
            heads.push(self.tape.matmul(attn, vh));
        }
        let mut cat = heads[0];
        for &h in &heads[1..] {
            cat = self.tape.concat_cols(cat, h);
        }
        let out = self.linear(prefix, cat, "wo", "bo");
        (out, q, k)
    }

    fn mlp_head(&mut self, prefix: &str, x: NodeId) -> NodeId {
        let h = self.linear(prefix, x, "w1", "b1");
        let h = self.tape.relu(h);
        self.linear(prefix, h, "w2", "b2")
    }
}

/// Run the decoder from a `1 x C` latent node.
pub fn decode_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &GaeConfig,
    z: NodeId,
) -> DecOut {
    debug_assert_eq!(tape.shape(z), (1, cfg.c_latent));
    let d = cfg.d_model();
    let mut ctx = Ctx { tape, store, ids: Vec::new() };

    // Latent projected into `mem_tokens` memory tokens for cross-attention.
    let mem_flat = ctx.linear("dec.zproj", z, "w", "b");
    let mem = ctx.tape.reshape(mem_flat, cfg.mem_tokens, d);

    let mut h = ctx.p("dec.query");
    let mut rel_sum: Option<NodeId> = None;
    for l in 0..cfg.dec_blocks {
        let blk = format!("dec.blk{l}");
        let (cross, _, _) = ctx.mha(&format!("{blk}.cross"), h, mem, cfg.n_heads, cfg.d_head);
        let res = ctx.tape.add(h, cross);
        let h1 = ctx.layer_norm(&format!("{blk}.ln1"), res);
        let (sa, q_cat, k_cat) = ctx.mha(&format!("{blk}.self"), h1, h1, cfg.n_heads, cfg.d_head);
        let res = ctx.tape.add(h1, sa);
        let h2 = ctx.layer_norm(&format!("{blk}.ln2"), res);
        let f1 = ctx.linear(&format!("{blk}.ffn"), h2, "w1", "b1");
        let f1 = ctx.tape.relu(f1);
        let f2w = ctx.p(&format!("{blk}.ffn.w2"));
        let f2b = ctx.p(&format!("{blk}.ffn.b2"));
        let f2 = ctx.tape.matmul(f1, f2w);
        let f2 = ctx.tape.add_row(f2, f2b);
        let res = ctx.tape.add(h2, f2);
        h = ctx.layer_norm(&format!("{blk}.ln3"), res);

        // Gated relation contribution from this block's queries and keys.
        let ws = ctx.p(&format!("{blk}.rel.ws"));
        let wo = ctx.p(&format!("{blk}.rel.wo"));
        let qs = ctx.tape.matmul(q_cat, ws);
        let ko = ctx.tape.matmul(k_cat, wo);
        let pair = ctx.tape.pair_concat(qs, ko);
        let gu = ctx.p(&format!("{blk}.rel.gate_u"));
        let gb = ctx.p(&format!("{blk}.rel.gate_b"));
        let glin = ctx.tape.matmul(pair, gu);
        let glin = ctx.tape.add_row(glin, gb);
        let gate = ctx.tape.sigmoid(glin);
        let proj = ctx.p(&format!("{blk}.rel.proj"));
        let feats = ctx.tape.matmul(pair, proj);
        let contrib = ctx.tape.mul_col(feats, gate);
        rel_sum = Some(match rel_sum {
            Some(acc) => ctx.tape.add(acc, contrib),
            None => contrib,
        });
    }
    let rel_feats = rel_sum.expect("at least one decoder block");

    let class_logits = ctx.mlp_head("dec.obj_head", h);
    let box_logits = ctx.mlp_head("dec.box_head", h);
    let boxes_cs = ctx.tape.sigmoid(box_logits);
    let rel_logits = ctx.mlp_head("dec.rel_head", rel_feats);
    let con_logits = ctx.mlp_head("dec.con_head", rel_feats);
    DecOut { class_logits, boxes_cs, rel_logits, con_logits, param_ids: ctx.ids }
}

/// Concrete decoded graph: probabilities, not logits. Rows of `class_probs`
/// sum to 1 (softmax over `|C| + 1` classes, the last being no-object);
/// `rel_probs`/`con_probs` store the `n^2` ordered pairs row-major and the
/// connectivity diagonal is ignored downstream.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DecodedGraph {
    pub class_probs: Array2<f64>,
    pub boxes: Array2<f64>,
    pub rel_probs: Array2<f64>,
    pub con_probs: Array2<f64>,
}

impl DecodedGraph {
    pub fn n_queries(&self) -> usize {
        self.class_probs.nrows()
    }

    pub fn num_objects(&self) -> usize {
        self.class_probs.ncols() - 1
    }

    pub fn num_predicates(&self) -> usize {
        self.rel_probs.ncols()
    }

    pub fn rel(&self, i: usize, j: usize, p: usize) -> f64 {
        self.rel_probs[[i * self.n_queries() + j, p]]
    }

    pub fn con(&self, i: usize, j: usize) -> f64 {
        self.con_probs[[i * self.n_queries() + j, 0]]
    }

    /// Argmax over all classes including no-object.
    pub fn argmax_class(&self, q: usize) -> (usize, f64) {
        let row = self.class_probs.row(q);
        let mut best = 0;
        for c in 1..row.len() {
            if row[c] > row[best] {
                best = c;
            }
        }
        (best, row[best])
    }

    /// Best real (non-φ) class for a query.
    pub fn best_object_class(&self, q: usize) -> (usize, f64) {
        let row = self.class_probs.row(q);
        let mut best = 0;
        for c in 1..self.num_objects() {
            if row[c] > row[best] {
                best = c;
            }
        }
        (best, row[best])
    }
}

/// Materialize the tape outputs of [`decode_on_tape`] into probabilities and
/// clipped corner-form boxes.
pub fn materialize(tape: &mut Tape, out: &DecOut) -> DecodedGraph {
    let cp = tape.softmax_rows(out.class_logits);
    let rp = tape.sigmoid(out.rel_logits);
    let np = tape.sigmoid(out.con_logits);
    let cs = tape.value(out.boxes_cs);
    let mut boxes = Array2::zeros(cs.raw_dim());
    for (i, row) in cs.rows().into_iter().enumerate() {
        let corner = center_to_corner(&[row[0], row[1], row[2], row[3]]);
        for (j, &c) in corner.iter().enumerate() {
            boxes[[i, j]] = c.clamp(0.0, 1.0);
        }
    }
    DecodedGraph {
        class_probs: tape.value(cp).clone(),
        boxes,
        rel_probs: tape.value(rp).clone(),
        con_probs: tape.value(np).clone(),
    }
}

/// Discretization thresholds for [`to_scene_graph`].
#[derive(Debug, Clone, Copy)]
pub struct Thresholds {
    pub tau_obj: f64,
    pub tau_rel: f64,
    pub tau_con: f64,
}

impl From<&GaeConfig> for Thresholds {
    fn from(cfg: &GaeConfig) -> Self {
        Thresholds { tau_obj: cfg.tau_obj, tau_rel: cfg.tau_rel, tau_con: cfg.tau_con }
    }
}

/// Discretize a decoded graph: keep queries whose argmax is a real class
/// with confidence at least `tau_obj`, deduplicate per category keeping the
/// most confident (single-instance convention), then emit edges where
/// connectivity clears `tau_con` with all predicates above `tau_rel`.
pub fn to_scene_graph(
    d: &DecodedGraph,
    vocab: &Vocabulary,
    t: Thresholds,
    frame_index: usize,
) -> SceneGraph {
    debug_assert_eq!(d.num_objects(), vocab.num_objects());
    // query -> (category, confidence), best query per category
    let mut best_per_cat: Vec<Option<(usize, f64)>> = vec![None; vocab.num_objects()];
    for q in 0..d.n_queries() {
        let (c, p) = d.argmax_class(q);
        if c >= d.num_objects() || p < t.tau_obj {
            continue; // no-object slot
        }
        match best_per_cat[c] {
            Some((_, bp)) if bp >= p => {}
            _ => best_per_cat[c] = Some((q, p)),
        }
    }
    let kept: Vec<(usize, usize)> = best_per_cat
        .iter()
        .enumerate()
        .filter_map(|(c, slot)| slot.map(|(q, _)| (q, c)))
        .collect();

    let nodes: Vec<Node> = kept
        .iter()
        .map(|&(q, c)| {
            let b = d.boxes.row(q);
            Node { category_index: c, bbox: [b[0], b[1], b[2], b[3]], visual_feature: Vec::new() }
        })
        .collect();

    let mut edges = Vec::new();
    for (ni, &(qi, _)) in kept.iter().enumerate() {
        for (nj, &(qj, _)) in kept.iter().enumerate() {
            if ni == nj {
                continue;
            }
            if d.con(qi, qj) < t.tau_con {
                continue;
            }
            let predicates: BTreeSet<usize> = (0..d.num_predicates())
                .filter(|&p| d.rel(qi, qj, p) >= t.tau_rel)
                .collect();
            if !predicates.is_empty() {
                edges.push(Edge { subject_index: ni, object_index: nj, predicates });
            }
        }
    }
    SceneGraph { nodes, edges, frame_index }
}

/// Rank object categories by their best class probability over all queries.
pub fn rank_objects(d: &DecodedGraph) -> RankedObjects {
    let scores: Vec<(usize, f64)> = (0..d.num_objects())
        .map(|c| {
            let best = (0..d.n_queries())
                .map(|q| d.class_probs[[q, c]])
                .fold(f64::NEG_INFINITY, f64::max);
            (c, best)
        })
        .collect();
    RankedObjects::from_scores(scores)
}

/// Rank identity triplets. The score of `(subject, predicate, object)` read
/// off a query pair is the product of both class confidences, the pair's
/// connectivity, and the predicate probability; identity duplicates keep
/// their best score. The constraint regimes are views applied at metric
/// time on this unconstrained ranking.
pub fn rank_triplets(d: &DecodedGraph) -> RankedTriplets {
    let per_query: Vec<(usize, f64)> =
        (0..d.n_queries()).map(|q| d.best_object_class(q)).collect();
    let mut scores = Vec::new();
    for i in 0..d.n_queries() {
        for j in 0..d.n_queries() {
            if i == j {
                continue;
            }
            let (ci, pi) = per_query[i];
            let (cj, pj) = per_query[j];
            let con = d.con(i, j);
            for p in 0..d.num_predicates() {
                let score = pi * pj * con * d.rel(i, j, p);
                scores.push(((ci, p, cj), score));
            }
        }
    }
    RankedTriplets::from_scores(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use crate::testutil::fd_check_tape;
    use rand::SeedableRng;

    fn tiny_cfg() -> GaeConfig {
        let mut cfg = GaeConfig::desk();
        cfg.c_latent = 6;
        cfg.dec_blocks = 2;
        cfg.n_heads = 2;
        cfg.d_head = 4;
        cfg.n_queries = 4;
        cfg.ffn_mult = 2;
        cfg.num_objects = 5;
        cfg.num_predicates = 3;
        cfg
    }

    fn store_for(cfg: &GaeConfig, seed: u64) -> ParamStore {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        init_decoder_params(&mut s, cfg, &mut rng);
        s
    }

    fn run_decode(cfg: &GaeConfig, store: &ParamStore, z: Array2<f64>) -> DecodedGraph {
        let mut tape = Tape::new();
        let zid = tape.constant(z);
        let out = decode_on_tape(&mut tape, store, cfg, zid);
        materialize(&mut tape, &out)
    }

    #[test]
    fn shapes_and_determinism() {
        let cfg = tiny_cfg();
        let store = store_for(&cfg, 1);
        let z = Init::normal(&mut ChaCha12Rng::seed_from_u64(9), 1, cfg.c_latent, 1.0);
        let d1 = run_decode(&cfg, &store, z.clone());
        let d2 = run_decode(&cfg, &store, z);
        assert_eq!(d1.class_probs.dim(), (cfg.n_queries, cfg.num_objects + 1));
        assert_eq!(d1.boxes.dim(), (cfg.n_queries, 4));
        assert_eq!(d1.rel_probs.dim(), (cfg.n_queries * cfg.n_queries, cfg.num_predicates));
        assert_eq!(d1.con_probs.dim(), (cfg.n_queries * cfg.n_queries, 1));
        // bit-identical on the same latent
        assert_eq!(d1.class_probs, d2.class_probs);
        assert_eq!(d1.rel_probs, d2.rel_probs);
    }

    #[test]
    fn class_rows_sum_to_one_and_probs_interior() {
        let cfg = tiny_cfg();
        let store = store_for(&cfg, 2);
        let z = Init::normal(&mut ChaCha12Rng::seed_from_u64(10), 1, cfg.c_latent, 1.0);
        let d = run_decode(&cfg, &store, z);
        for row in d.class_probs.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
        for &p in d.rel_probs.iter().chain(d.con_probs.iter()) {
            assert!(p > 0.0 && p < 1.0);
        }
        for &b in d.boxes.iter() {
            assert!((0.0..=1.0).contains(&b));
        }
    }

    #[test]
    fn query_permutation_covariance() {
        let cfg = tiny_cfg();
        let store = store_for(&cfg, 3);
        let z = Init::normal(&mut ChaCha12Rng::seed_from_u64(11), 1, cfg.c_latent, 1.0);
        let base = run_decode(&cfg, &store, z.clone());

        // rotate query embeddings by one
        let mut store2 = store.clone();
        let q = store.get("dec.query").clone();
        let n = cfg.n_queries;
        let mut qp = q.clone();
        for i in 0..n {
            qp.row_mut(i).assign(&q.row((i + 1) % n));
        }
        *store2.get_mut("dec.query") = qp;
        let perm = run_decode(&cfg, &store2, z);

        let pi = |i: usize| (i + 1) % n; // slot i of perm = slot pi(i) of base
        for i in 0..n {
            for c in 0..cfg.num_objects + 1 {
                assert!((perm.class_probs[[i, c]] - base.class_probs[[pi(i), c]]).abs() < 1e-9);
            }
            for j in 0..n {
                if i == j {
                    continue;
                }
                for p in 0..cfg.num_predicates {
                    assert!((perm.rel(i, j, p) - base.rel(pi(i), pi(j), p)).abs() < 1e-9);
                }
                assert!((perm.con(i, j) - base.con(pi(i), pi(j))).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn decode_gradient_wrt_latent_matches_fd() {
        let mut cfg = tiny_cfg();
        cfg.dec_blocks = 1;
        cfg.n_queries = 3;
        let store = store_for(&cfg, 4);
        let z0 = Init::normal(&mut ChaCha12Rng::seed_from_u64(12), 1, cfg.c_latent, 1.0);
        let store2 = store.clone();
        let cfg2 = cfg.clone();
        fd_check_tape(
            &[("z", z0)],
            move |t, vals| {
                let z = t.param("z", vals["z"].clone());
                let out = decode_on_tape(t, &store2, &cfg2, z);
                let a = t.sum_all(out.class_logits);
                let b = t.sum_all(out.boxes_cs);
                let c = t.sum_all(out.rel_logits);
                let d = t.sum_all(out.con_logits);
                let ab = t.add(a, b);
                let cd = t.add(c, d);
                t.add(ab, cd)
            },
            1e-6,
            1e-4,
        );
    }

    #[test]
    fn to_scene_graph_all_phi_gives_empty() {
        let cfg = tiny_cfg();
        let n = cfg.n_queries;
        let phi = cfg.num_objects;
        let mut class_probs = Array2::zeros((n, cfg.num_objects + 1));
        for q in 0..n {
            class_probs[[q, phi]] = 1.0;
        }
        let d = DecodedGraph {
            class_probs,
            boxes: Array2::from_elem((n, 4), 0.4),
            rel_probs: Array2::from_elem((n * n, cfg.num_predicates), 0.9),
            con_probs: Array2::from_elem((n * n, 1), 0.9),
        };
        let vocab = vocab_for(&cfg);
        let g = to_scene_graph(&d, &vocab, Thresholds { tau_obj: 0.5, tau_rel: 0.5, tau_con: 0.5 }, 0);
        assert!(g.nodes.is_empty());
        assert!(g.edges.is_empty());
    }

    fn vocab_for(cfg: &GaeConfig) -> Vocabulary {
        use crate::graph::PredicateKind::*;
        Vocabulary::new(
            (0..cfg.num_objects)
                .map(|i| if i == 0 { "person".into() } else { format!("obj{i}") })
                .collect(),
            (0..cfg.num_predicates)
                .map(|i| (format!("pred{i}"), [Attention, Spatial, Contacting][i % 3]))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn to_scene_graph_thresholds_and_dedup() {
        let cfg = tiny_cfg();
        let n = cfg.n_queries;
        let mut class_probs = Array2::zeros((n, cfg.num_objects + 1));
        // q0: confident person; q1: confident obj1; q2: duplicate person, less
        // confident; q3: phi
        class_probs[[0, 0]] = 0.9;
        class_probs[[0, cfg.num_objects]] = 0.1;
        class_probs[[1, 1]] = 0.8;
        class_probs[[1, cfg.num_objects]] = 0.2;
        class_probs[[2, 0]] = 0.6;
        class_probs[[2, cfg.num_objects]] = 0.4;
        class_probs[[3, cfg.num_objects]] = 1.0;
        let mut rel_probs = Array2::from_elem((n * n, cfg.num_predicates), 0.2);
        let mut con_probs = Array2::from_elem((n * n, 1), 0.1);
        // edge q0 -> q1 with predicates {0 strong, 1 weak}
        con_probs[[0 * n + 1, 0]] = 0.9;
        rel_probs[[0 * n + 1, 0]] = 0.9;
        rel_probs[[0 * n + 1, 1]] = 0.2;
        let d = DecodedGraph {
            class_probs,
            boxes: Array2::from_elem((n, 4), 0.3),
            rel_probs,
            con_probs,
        };
        let vocab = vocab_for(&cfg);
        let g = to_scene_graph(&d, &vocab, Thresholds { tau_obj: 0.5, tau_rel: 0.5, tau_con: 0.5 }, 7);
        // dedup keeps q0's person, drops q2
        assert_eq!(g.nodes.len(), 2);
        assert_eq!(g.frame_index, 7);
        assert_eq!(g.nodes[0].category_index, 0);
        assert_eq!(g.nodes[1].category_index, 1);
        assert_eq!(g.edges.len(), 1);
        // exactly one predicate survives tau_rel
        assert_eq!(g.edges[0].predicates.len(), 1);
        assert!(g.edges[0].predicates.contains(&0));
    }

    #[test]
    fn single_confident_node_no_edges() {
        let cfg = tiny_cfg();
        let n = cfg.n_queries;
        let mut class_probs = Array2::zeros((n, cfg.num_objects + 1));
        class_probs[[0, 0]] = 1.0;
        for q in 1..n {
            class_probs[[q, cfg.num_objects]] = 1.0;
        }
        let d = DecodedGraph {
            class_probs,
            boxes: Array2::from_elem((n, 4), 0.4),
            rel_probs: Array2::from_elem((n * n, cfg.num_predicates), 0.01),
            con_probs: Array2::from_elem((n * n, 1), 0.01),
        };
        let vocab = vocab_for(&cfg);
        let g = to_scene_graph(&d, &vocab, Thresholds { tau_obj: 0.5, tau_rel: 0.5, tau_con: 0.5 }, 0);
        assert_eq!(g.nodes.len(), 1);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn ranked_triplet_scores_multiply() {
        let cfg = tiny_cfg();
        let n = cfg.n_queries;
        let mut class_probs = Array2::zeros((n, cfg.num_objects + 1));
        class_probs[[0, 0]] = 0.9;
        class_probs[[1, 2]] = 0.7;
        for q in 2..n {
            class_probs[[q, cfg.num_objects]] = 1.0;
        }
        let mut rel_probs = Array2::zeros((n * n, cfg.num_predicates));
        let mut con_probs = Array2::zeros((n * n, 1));
        con_probs[[0 * n + 1, 0]] = 0.8;
        rel_probs[[0 * n + 1, 2]] = 0.6;
        let d = DecodedGraph {
            class_probs,
            boxes: Array2::from_elem((n, 4), 0.4),
            rel_probs,
            con_probs,
        };
        let ranked = rank_triplets(&d);
        let top = &ranked.0[0];
        assert_eq!(top.0, (0, 2, 2));
        assert!((top.1 - 0.9 * 0.7 * 0.8 * 0.6).abs() < 1e-12);
    }
}
