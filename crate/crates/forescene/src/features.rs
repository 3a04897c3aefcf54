//! Node, edge, and union-box features for the graph encoder.
//!
//! Node features are the concatenation of a projected visual feature and a
//! projected box: `phi_v = [W1 v_f ; W2 v_b]`. Edge features concatenate the
//! projected endpoint features, a projected union-box descriptor, and the
//! learnable semantic embeddings of both endpoint categories:
//! `phi_e = [W3 phi_i ; W4 phi_j ; W5 u_ij ; sem_i ; sem_j]`.
//!
//! The union-box descriptor is a deterministic geometric surrogate for
//! detector union-region features: union coordinates, areas, intersection,
//! IoU, and center offsets, lifted to `d_union` by the learnable `W5`.

use crate::config::GaeConfig;
use crate::graph::{Box4, SceneGraph};
use crate::params::{Init, ParamStore};
use crate::tape::{NodeId, Tape};
use ndarray::Array2;
use rand_chacha::ChaCha12Rng;

/// Width of the raw union-box geometry descriptor.
pub const UNION_GEOM_DIM: usize = 10;

/// Raw geometric descriptor of an ordered box pair:
/// `[ux1, uy1, ux2, uy2, area_i, area_j, intersection, iou, dcx, dcy]`.
pub fn union_geometry(a: &Box4, b: &Box4) -> [f64; UNION_GEOM_DIM] {
    let [ax1, ay1, ax2, ay2] = *a;
    let [bx1, by1, bx2, by2] = *b;
    let ux1 = ax1.min(bx1);
    let uy1 = ay1.min(by1);
    let ux2 = ax2.max(bx2);
    let uy2 = ay2.max(by2);
    let area_a = (ax2 - ax1).max(0.0) * (ay2 - ay1).max(0.0);
    let area_b = (bx2 - bx1).max(0.0) * (by2 - by1).max(0.0);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = area_a + area_b - inter;
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    let dcx = (bx1 + bx2) / 2.0 - (ax1 + ax2) / 2.0;
    let dcy = (by1 + by2) / 2.0 - (ay1 + ay2) / 2.0;
    [ux1, uy1, ux2, uy2, area_a, area_b, inter, iou, dcx, dcy]
}

/// Encoder input edges: every ordered pair of distinct nodes. The encoder
/// sees object layout only (no relationship categories), so pairs are built
/// from the node set alone.
pub fn encoder_pairs(n_nodes: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n_nodes.saturating_sub(1) * n_nodes);
    for i in 0..n_nodes {
        for j in 0..n_nodes {
            if i != j {
                out.push((i, j));
            }
        }
    }
    out
}

/// Register the featurizer parameters (`feat.*`).
pub fn init_feature_params(store: &mut ParamStore, cfg: &GaeConfig, rng: &mut ChaCha12Rng) {
    store.insert("feat.w1", Init::xavier(rng, cfg.d_vis, cfg.d_vis_proj));
    store.insert("feat.w2", Init::xavier(rng, 4, cfg.d_box_proj));
    store.insert("feat.w3", Init::xavier(rng, cfg.d_node(), cfg.d_edge_proj));
    store.insert("feat.w4", Init::xavier(rng, cfg.d_node(), cfg.d_edge_proj));
    store.insert("feat.w5", Init::xavier(rng, UNION_GEOM_DIM, cfg.d_union));
    // Learned semantic embeddings, randomly initialized.
    store.insert("feat.sem", Init::normal(rng, cfg.num_objects, cfg.d_sem, 0.5));
}

/// `|V| x d_node` node feature matrix on the tape.
pub fn node_features_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &GaeConfig,
    graph: &SceneGraph,
) -> NodeId {
    let n = graph.nodes.len();
    debug_assert!(graph.nodes.iter().all(|nd| nd.visual_feature.len() == cfg.d_vis));
    let vis = Array2::from_shape_fn((n, cfg.d_vis), |(i, j)| {
        f64::from(graph.nodes[i].visual_feature[j])
    });
    let boxes = Array2::from_shape_fn((n, 4), |(i, j)| graph.nodes[i].bbox[j]);
    let vis = tape.constant(vis);
    let boxes = tape.constant(boxes);
    let w1 = tape.param("feat.w1", store.get("feat.w1").clone());
    let w2 = tape.param("feat.w2", store.get("feat.w2").clone());
    let pv = tape.matmul(vis, w1);
    let pb = tape.matmul(boxes, w2);
    tape.concat_cols(pv, pb)
}

/// `|E| x d_edge` edge feature matrix for the given ordered pairs. Returns
/// `None` when there are no pairs (single-node graph).
pub fn edge_features_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &GaeConfig,
    graph: &SceneGraph,
    node_feats: NodeId,
    pairs: &[(usize, usize)],
) -> Option<NodeId> {
    if pairs.is_empty() {
        return None;
    }
    debug_assert_eq!(tape.shape(node_feats).1, cfg.d_node());
    let subj_idx: Vec<usize> = pairs.iter().map(|&(s, _)| s).collect();
    let obj_idx: Vec<usize> = pairs.iter().map(|&(_, o)| o).collect();
    let subj_cat: Vec<usize> = subj_idx.iter().map(|&i| graph.nodes[i].category_index).collect();
    let obj_cat: Vec<usize> = obj_idx.iter().map(|&i| graph.nodes[i].category_index).collect();

    let geom = Array2::from_shape_fn((pairs.len(), UNION_GEOM_DIM), |(e, j)| {
        let (s, o) = pairs[e];
        union_geometry(&graph.nodes[s].bbox, &graph.nodes[o].bbox)[j]
    });

    let w3 = tape.param("feat.w3", store.get("feat.w3").clone());
    let w4 = tape.param("feat.w4", store.get("feat.w4").clone());
    let w5 = tape.param("feat.w5", store.get("feat.w5").clone());
    let sem = tape.param("feat.sem", store.get("feat.sem").clone());

    let subj_feats = tape.gather_rows(node_feats, &subj_idx);
    let obj_feats = tape.gather_rows(node_feats, &obj_idx);
    let ps = tape.matmul(subj_feats, w3);
    let po = tape.matmul(obj_feats, w4);
    let geom = tape.constant(geom);
    let pu = tape.matmul(geom, w5);
    let sem_s = tape.gather_rows(sem, &subj_cat);
    let sem_o = tape.gather_rows(sem, &obj_cat);

    let a = tape.concat_cols(ps, po);
    let b = tape.concat_cols(a, pu);
    let c = tape.concat_cols(b, sem_s);
    Some(tape.concat_cols(c, sem_o))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Node;
    use crate::testutil::fd_check_tape;
    use rand::SeedableRng;

    fn graph_with(nodes: Vec<(usize, Box4, Vec<f32>)>) -> SceneGraph {
        SceneGraph {
            nodes: nodes
                .into_iter()
                .map(|(c, b, f)| Node { category_index: c, bbox: b, visual_feature: f })
                .collect(),
            edges: vec![],
            frame_index: 0,
        }
    }

    fn desk_store(cfg: &GaeConfig, seed: u64) -> ParamStore {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        init_feature_params(&mut store, cfg, &mut rng);
        store
    }

    #[test]
    fn union_geometry_iou_cases() {
        let a = [0.0, 0.0, 0.5, 0.5];
        let same = union_geometry(&a, &a);
        assert!((same[7] - 1.0).abs() < 1e-12);

        let disjoint = union_geometry(&a, &[0.6, 0.6, 0.9, 0.9]);
        assert!(disjoint[7].abs() < 1e-12);

        // Overlap [0.25,0.5]^2: intersection 0.0625, union 0.4375.
        let partial = union_geometry(&a, &[0.25, 0.25, 0.75, 0.75]);
        assert!((partial[6] - 0.0625).abs() < 1e-12);
        assert!((partial[7] - 0.0625 / 0.4375).abs() < 1e-12);
    }

    #[test]
    fn node_features_with_identity_projections_concat() {
        // Square identity W1/W2 make phi_v literally [v_f ; v_b].
        let mut cfg = GaeConfig::desk();
        cfg.d_vis = 3;
        cfg.d_vis_proj = 3;
        cfg.d_box_proj = 4;
        let mut store = ParamStore::new();
        store.insert("feat.w1", ndarray::Array2::eye(3));
        store.insert("feat.w2", ndarray::Array2::eye(4));
        let g = graph_with(vec![(0, [0.1, 0.2, 0.5, 0.9], vec![1.0, -2.0, 3.0])]);
        let mut tape = Tape::new();
        let nf = node_features_on_tape(&mut tape, &store, &cfg, &g);
        let row = tape.value(nf).row(0).to_vec();
        assert_eq!(row, vec![1.0, -2.0, 3.0, 0.1, 0.2, 0.5, 0.9]);
    }

    #[test]
    fn node_features_zero_inputs_zero_rows() {
        let mut cfg = GaeConfig::desk();
        cfg.d_vis = 3;
        let store = desk_store(&cfg, 0);
        let g = graph_with(vec![(0, [0.1, 0.2, 0.5, 0.9], vec![0.0; 3])]);
        let mut tape = Tape::new();
        let nf = node_features_on_tape(&mut tape, &store, &cfg, &g);
        // zero visual feature zeroes the visual block only
        let row = tape.value(nf);
        assert!(row.slice(ndarray::s![0, 0..cfg.d_vis_proj]).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn node_features_match_scalar_reference() {
        // Loop-free reference: apply the projections node by node.
        let mut cfg = GaeConfig::desk();
        cfg.d_vis = 3;
        let store = desk_store(&cfg, 42);
        let g = graph_with(vec![
            (0, [0.1, 0.2, 0.5, 0.9], vec![0.3, -0.7, 1.1]),
            (1, [0.3, 0.1, 0.8, 0.6], vec![-1.0, 0.2, 0.5]),
            (2, [0.2, 0.4, 0.6, 0.8], vec![0.0, 0.9, -0.4]),
        ]);
        let mut tape = Tape::new();
        let nf = node_features_on_tape(&mut tape, &store, &cfg, &g);
        let got = tape.value(nf);
        let w1 = store.get("feat.w1");
        let w2 = store.get("feat.w2");
        for (i, node) in g.nodes.iter().enumerate() {
            for c in 0..cfg.d_vis_proj {
                let mut acc = 0.0;
                for k in 0..cfg.d_vis {
                    acc += f64::from(node.visual_feature[k]) * w1[[k, c]];
                }
                assert!((got[[i, c]] - acc).abs() < 1e-12);
            }
            for c in 0..cfg.d_box_proj {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += node.bbox[k] * w2[[k, c]];
                }
                assert!((got[[i, cfg.d_vis_proj + c]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn edge_features_hand_assembled_concat() {
        let mut cfg = GaeConfig::desk();
        cfg.d_vis = 2;
        let store = desk_store(&cfg, 7);
        let g = graph_with(vec![
            (0, [0.1, 0.2, 0.5, 0.9], vec![0.5, -0.5]),
            (2, [0.2, 0.3, 0.7, 0.8], vec![1.5, 0.25]),
        ]);
        let pairs = vec![(0usize, 1usize)];
        let mut tape = Tape::new();
        let nf = node_features_on_tape(&mut tape, &store, &cfg, &g);
        let ef = edge_features_on_tape(&mut tape, &store, &cfg, &g, nf, &pairs).unwrap();
        let got = tape.value(ef).row(0).to_vec();

        let nfv = tape.value(nf);
        let proj = |row: ndarray::ArrayView1<f64>, w: &Array2<f64>| -> Vec<f64> {
            (0..w.ncols())
                .map(|c| row.iter().zip(w.column(c)).map(|(&a, &b)| a * b).sum())
                .collect()
        };
        let mut expect = proj(nfv.row(0), store.get("feat.w3"));
        expect.extend(proj(nfv.row(1), store.get("feat.w4")));
        let geom = union_geometry(&g.nodes[0].bbox, &g.nodes[1].bbox);
        let w5 = store.get("feat.w5");
        for c in 0..cfg.d_union {
            expect.push((0..UNION_GEOM_DIM).map(|k| geom[k] * w5[[k, c]]).sum());
        }
        expect.extend(store.get("feat.sem").row(0).iter());
        expect.extend(store.get("feat.sem").row(2).iter());
        assert_eq!(got.len(), expect.len());
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn edge_features_empty_and_asymmetric() {
        let mut cfg = GaeConfig::desk();
        cfg.d_vis = 2;
        let store = desk_store(&cfg, 3);
        let g = graph_with(vec![
            (0, [0.1, 0.2, 0.5, 0.9], vec![0.5, -0.5]),
            (1, [0.2, 0.3, 0.7, 0.8], vec![1.5, 0.25]),
        ]);
        let mut tape = Tape::new();
        let nf = node_features_on_tape(&mut tape, &store, &cfg, &g);
        assert!(edge_features_on_tape(&mut tape, &store, &cfg, &g, nf, &[]).is_none());
        let fwd = edge_features_on_tape(&mut tape, &store, &cfg, &g, nf, &[(0, 1)]).unwrap();
        let rev = edge_features_on_tape(&mut tape, &store, &cfg, &g, nf, &[(1, 0)]).unwrap();
        assert_ne!(tape.value(fwd), tape.value(rev));
    }

    #[test]
    fn node_permutation_permutes_rows() {
        let mut cfg = GaeConfig::desk();
        cfg.d_vis = 3;
        let store = desk_store(&cfg, 9);
        let nodes = vec![
            (0usize, [0.1, 0.2, 0.5, 0.9], vec![0.3f32, -0.7, 1.1]),
            (1, [0.3, 0.1, 0.8, 0.6], vec![-1.0, 0.2, 0.5]),
            (3, [0.2, 0.4, 0.6, 0.8], vec![0.0, 0.9, -0.4]),
        ];
        let g = graph_with(nodes.clone());
        let perm = [2usize, 0, 1];
        let permuted: Vec<_> = perm.iter().map(|&i| nodes[i].clone()).collect();
        let gp = graph_with(permuted);
        let mut t1 = Tape::new();
        let a = node_features_on_tape(&mut t1, &store, &cfg, &g);
        let mut t2 = Tape::new();
        let b = node_features_on_tape(&mut t2, &store, &cfg, &gp);
        for (new_row, &old_row) in perm.iter().enumerate() {
            assert_eq!(t2.value(b).row(new_row), t1.value(a).row(old_row));
        }
    }

    #[test]
    fn projection_gradients_match_finite_differences() {
        let mut cfg = GaeConfig::desk();
        cfg.d_vis = 3;
        let store = desk_store(&cfg, 5);
        let g = graph_with(vec![
            (0, [0.1, 0.2, 0.5, 0.9], vec![0.3, -0.7, 1.1]),
            (2, [0.3, 0.1, 0.8, 0.6], vec![-1.0, 0.2, 0.5]),
        ]);
        let inputs: Vec<(&str, Array2<f64>)> = ["feat.w1", "feat.w2", "feat.w3", "feat.w4", "feat.w5", "feat.sem"]
            .iter()
            .map(|n| (*n, store.get(n).clone()))
            .collect();
        let cfg2 = cfg.clone();
        let g2 = g.clone();
        fd_check_tape(
            &inputs,
            move |t, vals| {
                let mut s = ParamStore::new();
                for (k, v) in vals {
                    s.insert(k, v.clone());
                }
                let nf = node_features_on_tape(t, &s, &cfg2, &g2);
                let ef =
                    edge_features_on_tape(t, &s, &cfg2, &g2, nf, &encoder_pairs(2)).unwrap();
                let sq_n = t.mul(nf, nf);
                let sq_e = t.mul(ef, ef);
                let sn = t.sum_all(sq_n);
                let se = t.sum_all(sq_e);
                t.add(sn, se)
            },
            1e-6,
            1e-6,
        );
    }
}
