//! Graph encoder: stacked triplet-message GCN layers, auxiliary node/edge
//! classification heads, and max-pool projection to the graph latent.
//!
//! Each layer transforms every `(subject, edge, object)` triplet with a
//! shared two-layer MLP, splits the output into a subject message, a new
//! edge feature, and an object message, and averages the messages incident
//! to each node. Nodes also carry a learned self-projection so single-node
//! graphs still update; a learned null-edge vector stands in for the edge
//! max-pool when a graph has no pairs.

use crate::config::GaeConfig;
use crate::features::{edge_features_on_tape, encoder_pairs, node_features_on_tape};
use crate::graph::SceneGraph;
use crate::params::{Init, ParamStore};
use crate::tape::{NodeId, Tape};
use ndarray::Array2;
use rand_chacha::ChaCha12Rng;

/// Register encoder parameters (`enc.*`).
pub fn init_encoder_params(store: &mut ParamStore, cfg: &GaeConfig, rng: &mut ChaCha12Rng) {
    let dn = cfg.d_node();
    let de = cfg.d_edge();
    let trip_in = 2 * dn + de;
    let hidden = cfg.gcn_hidden_dim();
    for l in 0..cfg.gcn_layers {
        store.insert(&format!("enc.gcn{l}.t1.w"), Init::xavier(rng, trip_in, hidden));
        store.insert(&format!("enc.gcn{l}.t1.b"), Init::zeros(1, hidden));
        store.insert(&format!("enc.gcn{l}.t2.w"), Init::xavier(rng, hidden, trip_in));
        store.insert(&format!("enc.gcn{l}.t2.b"), Init::zeros(1, trip_in));
        store.insert(&format!("enc.gcn{l}.self.w"), Init::xavier(rng, dn, dn));
        store.insert(&format!("enc.gcn{l}.self.b"), Init::zeros(1, dn));
    }
    store.insert("enc.node_head.w1", Init::xavier(rng, dn, dn));
    store.insert("enc.node_head.b1", Init::zeros(1, dn));
    store.insert("enc.node_head.w2", Init::xavier(rng, dn, cfg.num_objects));
    store.insert("enc.node_head.b2", Init::zeros(1, cfg.num_objects));
    store.insert("enc.edge_head.w1", Init::xavier(rng, de, de));
    store.insert("enc.edge_head.b1", Init::zeros(1, de));
    store.insert("enc.edge_head.w2", Init::xavier(rng, de, cfg.num_predicates));
    store.insert("enc.edge_head.b2", Init::zeros(1, cfg.num_predicates));
    store.insert("enc.null_edge", Init::normal(rng, 1, de, 0.1));
    store.insert("enc.pool.w", Init::xavier(rng, dn + de, cfg.c_latent));
    store.insert("enc.pool.b", Init::zeros(1, cfg.c_latent));
}

/// Refined `(node feats, edge feats)` after all GCN layers. `edge_feats` is
/// `None` when `pairs` is empty.
pub fn gcn_forward_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &GaeConfig,
    node_feats: NodeId,
    edge_feats: Option<NodeId>,
    pairs: &[(usize, usize)],
) -> (NodeId, Option<NodeId>) {
    let dn = cfg.d_node();
    let de = cfg.d_edge();
    let n_nodes = tape.shape(node_feats).0;

    // Mean aggregation as constant scatter matrices: pooled = Ds*m_s + Do*m_o
    // where row i of Ds/Do holds 1/deg_i at incident pair columns.
    let agg = if pairs.is_empty() {
        None
    } else {
        let mut deg = vec![0.0f64; n_nodes];
        for &(s, o) in pairs {
            deg[s] += 1.0;
            deg[o] += 1.0;
        }
        let mut ds = Array2::zeros((n_nodes, pairs.len()));
        let mut do_ = Array2::zeros((n_nodes, pairs.len()));
        for (e, &(s, o)) in pairs.iter().enumerate() {
            ds[[s, e]] = 1.0 / deg[s].max(1.0);
            do_[[o, e]] = 1.0 / deg[o].max(1.0);
        }
        Some((tape.constant(ds), tape.constant(do_)))
    };
    let subj_idx: Vec<usize> = pairs.iter().map(|&(s, _)| s).collect();
    let obj_idx: Vec<usize> = pairs.iter().map(|&(_, o)| o).collect();

    let mut nodes = node_feats;
    let mut edges = edge_feats;
    for l in 0..cfg.gcn_layers {
        let self_w = tape.param(&format!("enc.gcn{l}.self.w"), store.get(&format!("enc.gcn{l}.self.w")).clone());
        let self_b = tape.param(&format!("enc.gcn{l}.self.b"), store.get(&format!("enc.gcn{l}.self.b")).clone());
        let self_path = tape.matmul(nodes, self_w);
        let self_path = tape.add_row(self_path, self_b);

        match (edges, &agg) {
            (Some(e), Some((ds, do_))) => {
                let t1w = tape.param(&format!("enc.gcn{l}.t1.w"), store.get(&format!("enc.gcn{l}.t1.w")).clone());
                let t1b = tape.param(&format!("enc.gcn{l}.t1.b"), store.get(&format!("enc.gcn{l}.t1.b")).clone());
                let t2w = tape.param(&format!("enc.gcn{l}.t2.w"), store.get(&format!("enc.gcn{l}.t2.w")).clone());
                let t2b = tape.param(&format!("enc.gcn{l}.t2.b"), store.get(&format!("enc.gcn{l}.t2.b")).clone());
                let subj = tape.gather_rows(nodes, &subj_idx);
                let obj = tape.gather_rows(nodes, &obj_idx);
                let se = tape.concat_cols(subj, e);
                let trip = tape.concat_cols(se, obj);
                let h = tape.matmul(trip, t1w);
                let h = tape.add_row(h, t1b);
                let h = tape.relu(h);
                let out = tape.matmul(h, t2w);
                let out = tape.add_row(out, t2b);
                let m_s = tape.slice_cols(out, 0, dn);
                let new_e = tape.slice_cols(out, dn, dn + de);
                let m_o = tape.slice_cols(out, dn + de, 2 * dn + de);
                let pooled_s = tape.matmul(*ds, m_s);
                let pooled_o = tape.matmul(*do_, m_o);
                let pooled = tape.add(pooled_s, pooled_o);
                let pre = tape.add(self_path, pooled);
                nodes = tape.relu(pre);
                edges = Some(tape.relu(new_e));
            }
            _ => {
                nodes = tape.relu(self_path);
            }
        }
    }
    (nodes, edges)
}

/// Node and edge classification logits from the refined features. Logits are
/// row-aligned with the node list and pair list.
pub fn aux_heads_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    nodes: NodeId,
    edges: Option<NodeId>,
) -> (NodeId, Option<NodeId>) {
    let head = |tape: &mut Tape, prefix: &str, x: NodeId| {
        let w1 = tape.param(&format!("{prefix}.w1"), store.get(&format!("{prefix}.w1")).clone());
        let b1 = tape.param(&format!("{prefix}.b1"), store.get(&format!("{prefix}.b1")).clone());
        let w2 = tape.param(&format!("{prefix}.w2"), store.get(&format!("{prefix}.w2")).clone());
        let b2 = tape.param(&format!("{prefix}.b2"), store.get(&format!("{prefix}.b2")).clone());
        let h = tape.matmul(x, w1);
        let h = tape.add_row(h, b1);
        let h = tape.relu(h);
        let o = tape.matmul(h, w2);
        tape.add_row(o, b2)
    };
    let node_logits = head(tape, "enc.node_head", nodes);
    let edge_logits = edges.map(|e| head(tape, "enc.edge_head", e));
    (node_logits, edge_logits)
}

/// Everything the encoder produces for one graph.
pub struct EncodeOut {
    /// `1 x C` latent.
    pub z: NodeId,
    /// Refined `|V| x d_node` features.
    pub nodes: NodeId,
    /// Refined `|E| x d_edge` features (None for single-node graphs).
    pub edges: Option<NodeId>,
    /// The ordered pairs the edge rows correspond to.
    pub pairs: Vec<(usize, usize)>,
}

/// Featurize and encode one graph down to its latent.
pub fn encode_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &GaeConfig,
    graph: &SceneGraph,
) -> EncodeOut {
    let pairs = encoder_pairs(graph.nodes.len());
    let nf = node_features_on_tape(tape, store, cfg, graph);
    let ef = edge_features_on_tape(tape, store, cfg, graph, nf, &pairs);
    let (nodes, edges) = gcn_forward_on_tape(tape, store, cfg, nf, ef, &pairs);
    let npool = tape.max_pool_rows(nodes);
    let epool = match edges {
        Some(e) => tape.max_pool_rows(e),
        None => tape.param("enc.null_edge", store.get("enc.null_edge").clone()),
    };
    let cat = tape.concat_cols(npool, epool);
    let pw = tape.param("enc.pool.w", store.get("enc.pool.w").clone());
    let pb = tape.param("enc.pool.b", store.get("enc.pool.b").clone());
    let z = tape.matmul(cat, pw);
    let z = tape.add_row(z, pb);
    EncodeOut { z, nodes, edges, pairs }
}

/// Auxiliary encoder loss: mean categorical cross-entropy over nodes plus
/// mean per-predicate binary cross-entropy over pairs (zero target for
/// unannotated pairs). Both terms carry weight 1.
pub fn loss_enco_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &GaeConfig,
    graph: &SceneGraph,
    out: &EncodeOut,
) -> NodeId {
    let (node_logits, edge_logits) = aux_heads_on_tape(tape, store, out.nodes, out.edges);
    let targets: Vec<usize> = graph.nodes.iter().map(|n| n.category_index).collect();
    let weights = vec![1.0; targets.len()];
    let l_nodes = tape.ce_rows(node_logits, &targets, &weights);
    match edge_logits {
        Some(el) => {
            let target = edge_predicate_targets(graph, &out.pairs, cfg.num_predicates);
            let l_edges = tape.bce_logits(el, target);
            tape.add(l_nodes, l_edges)
        }
        None => l_nodes,
    }
}

/// `|pairs| x P` multi-hot predicate targets; rows for pairs without an
/// annotated edge stay zero.
pub fn edge_predicate_targets(
    graph: &SceneGraph,
    pairs: &[(usize, usize)],
    num_predicates: usize,
) -> Array2<f64> {
    let mut target = Array2::zeros((pairs.len(), num_predicates));
    for (row, &(s, o)) in pairs.iter().enumerate() {
        if let Some(e) = graph
            .edges
            .iter()
            .find(|e| e.subject_index == s && e.object_index == o)
        {
            for &p in &e.predicates {
                target[[row, p]] = 1.0;
            }
        }
    }
    target
}
