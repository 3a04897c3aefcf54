//! Optimal bipartite assignment between decoded query slots and ground-truth
//! nodes, plus the matching cost used for it.

use crate::decoder::DecodedGraph;
use crate::error::{Error, Result};
use crate::graph::{Box4, SceneGraph};
use ndarray::Array2;

/// Matching-cost weights. The composite per-pair cost is
/// `w_class * (-p(class)) + w_l1 * ||b - b_gt||_1 + w_giou * (-giou)`.
#[derive(Debug, Clone, Copy)]
pub struct MatchWeights {
    pub class: f64,
    pub l1: f64,
    pub giou: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        MatchWeights { class: 1.0, l1: 5.0, giou: 2.0 }
    }
}

/// Result of matching `M` ground-truth nodes to `N >= M` query slots.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `(query slot, gt node)` pairs, one per gt node, sorted by gt node.
    pub assignment: Vec<(usize, usize)>,
    /// Query slots left unmatched (assigned the no-object class).
    pub unmatched: Vec<usize>,
    pub total_cost: f64,
}

impl MatchResult {
    /// gt node index -> query slot.
    pub fn query_of_gt(&self, gt: usize) -> usize {
        self.assignment.iter().find(|&&(_, g)| g == gt).map(|&(q, _)| q).expect("gt matched")
    }
}

/// Generalized IoU of two corner-form boxes, in `[-1, 1]`.
pub fn giou(a: &Box4, b: &Box4) -> f64 {
    let [ax1, ay1, ax2, ay2] = *a;
    let [bx1, by1, bx2, by2] = *b;
    let area_a = (ax2 - ax1).max(0.0) * (ay2 - ay1).max(0.0);
    let area_b = (bx2 - bx1).max(0.0) * (by2 - by1).max(0.0);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = area_a + area_b - inter;
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    let ew = ax2.max(bx2) - ax1.min(bx1);
    let eh = ay2.max(by2) - ay1.min(by1);
    let earea = ew * eh;
    if earea > 0.0 {
        iou - (earea - union) / earea
    } else {
        iou
    }
}

/// Pairwise matching costs, `M x N` (gt rows, query columns).
pub fn match_costs(d: &DecodedGraph, gt: &SceneGraph, w: MatchWeights) -> Array2<f64> {
    let m = gt.nodes.len();
    let n = d.n_queries();
    Array2::from_shape_fn((m, n), |(i, q)| {
        let node = &gt.nodes[i];
        let class_p = d.class_probs[[q, node.category_index]];
        let pb = d.boxes.row(q);
        let pbox = [pb[0], pb[1], pb[2], pb[3]];
        let l1: f64 = pbox.iter().zip(node.bbox.iter()).map(|(a, b)| (a - b).abs()).sum();
        w.class * (-class_p) + w.l1 * l1 + w.giou * (-giou(&pbox, &node.bbox))
    })
}

/// Match decoded query slots to ground-truth nodes by minimizing the total
/// matching cost with the Hungarian algorithm.
pub fn hungarian_match(d: &DecodedGraph, gt: &SceneGraph, w: MatchWeights) -> Result<MatchResult> {
    if gt.nodes.len() > d.n_queries() {
        return Err(Error::Config(format!(
            "graph has {} nodes but the decoder only has N = {} queries; increase N",
            gt.nodes.len(),
            d.n_queries()
        )));
    }
    let costs = match_costs(d, gt, w);
    Ok(assign(&costs))
}

/// Minimum-cost assignment of every row to a distinct column (`rows <=
/// cols`), O(rows^2 * cols) shortest augmenting paths with potentials.
pub fn assign(costs: &Array2<f64>) -> MatchResult {
    let n = costs.nrows();
    let m = costs.ncols();
    assert!(n <= m, "assignment needs rows <= cols");
    // 1-based arrays in the classic formulation; way[j] remembers the
    // augmenting predecessor of column j.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut assigned_row = vec![0usize; m + 1]; // column -> row (1-based, 0 = free)
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        assigned_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = assigned_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = costs[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[assigned_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if assigned_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            assigned_row[j0] = assigned_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![(0usize, 0usize); n];
    let mut used_cols = vec![false; m];
    for j in 1..=m {
        if assigned_row[j] != 0 {
            assignment[assigned_row[j] - 1] = (j - 1, assigned_row[j] - 1);
            used_cols[j - 1] = true;
        }
    }
    let total_cost = assignment.iter().map(|&(q, g)| costs[[g, q]]).sum();
    let unmatched = (0..m).filter(|&c| !used_cols[c]).collect();
    MatchResult { assignment, unmatched, total_cost }
}

/// Exhaustive-permutation minimum cost; usable for small instances only.
pub fn brute_force_min_cost(costs: &Array2<f64>) -> f64 {
    let n = costs.nrows();
    let m = costs.ncols();
    assert!(n <= m && m <= 8, "brute force limited to small instances");
    let mut best = f64::INFINITY;
    let mut cols: Vec<usize> = (0..m).collect();
    permute(&mut cols, 0, &mut |perm| {
        let cost: f64 = (0..n).map(|i| costs[[i, perm[i]]]).sum();
        if cost < best {
            best = cost;
        }
    });
    best
}

fn permute(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn two_by_two_diagonal() {
        let costs = array![[0.0, 1.0], [1.0, 0.0]];
        let r = assign(&costs);
        assert_eq!(r.assignment, vec![(0, 0), (1, 1)]);
        assert_eq!(r.total_cost, 0.0);
        assert!(r.unmatched.is_empty());
    }

    #[test]
    fn rectangular_leaves_unmatched_columns() {
        let costs = array![[5.0, 1.0, 9.0]];
        let r = assign(&costs);
        assert_eq!(r.assignment, vec![(1, 0)]);
        assert_eq!(r.unmatched, vec![0, 2]);
    }

    #[test]
    fn equals_bruteforce_on_random_instances() {
        let mut rng = ChaCha12Rng::seed_from_u64(123);
        for trial in 0..200 {
            let n = rng.random_range(1..=5);
            let m = rng.random_range(n..=6);
            let costs = Array2::from_shape_fn((n, m), |_| rng.random_range(-3.0..3.0));
            let fast = assign(&costs).total_cost;
            let brute = brute_force_min_cost(&costs);
            assert!(
                (fast - brute).abs() < 1e-9,
                "trial {trial}: hungarian {fast} vs brute {brute}\n{costs:?}"
            );
        }
    }

    #[test]
    fn giou_basics() {
        let a = [0.0, 0.0, 0.5, 0.5];
        assert!((giou(&a, &a) - 1.0).abs() < 1e-12);
        // far-apart boxes approach -1
        let far = giou(&[0.0, 0.0, 0.01, 0.01], &[0.99, 0.99, 1.0, 1.0]);
        assert!(far < -0.9);
    }

    #[test]
    fn too_many_gt_nodes_is_hard_error() {
        use ndarray::Array2;
        let d = DecodedGraph {
            class_probs: Array2::from_elem((1, 3), 1.0 / 3.0),
            boxes: Array2::from_elem((1, 4), 0.4),
            rel_probs: Array2::from_elem((1, 2), 0.5),
            con_probs: Array2::from_elem((1, 1), 0.5),
        };
        let node = |c| crate::graph::Node {
            category_index: c,
            bbox: [0.1, 0.1, 0.4, 0.4],
            visual_feature: vec![],
        };
        let gt = SceneGraph { nodes: vec![node(0), node(1)], edges: vec![], frame_index: 0 };
        let err = hungarian_match(&d, &gt, MatchWeights::default()).unwrap_err();
        assert!(err.to_string().contains("increase N"));
    }

    #[test]
    fn prefers_high_class_probability() {
        // one gt node; query 3 has the highest class prob and wins
        let mut class_probs = Array2::from_elem((4, 3), 0.1);
        class_probs[[3, 1]] = 0.9;
        let d = DecodedGraph {
            class_probs,
            boxes: Array2::from_elem((4, 4), 0.3),
            rel_probs: Array2::from_elem((16, 2), 0.5),
            con_probs: Array2::from_elem((16, 1), 0.5),
        };
        let gt = SceneGraph {
            nodes: vec![crate::graph::Node {
                category_index: 1,
                bbox: [0.3, 0.3, 0.3 + 1e-9, 0.3 + 1e-9],
                visual_feature: vec![],
            }],
            edges: vec![],
            frame_index: 0,
        };
        // brute force over all single assignments agrees
        let w = MatchWeights::default();
        let costs = match_costs(&d, &gt, w);
        let best_q = (0..4).min_by(|&a, &b| costs[[0, a]].partial_cmp(&costs[[0, b]]).unwrap());
        let r = hungarian_match(&d, &gt, w).unwrap();
        assert_eq!(r.assignment[0].0, best_q.unwrap());
        assert_eq!(r.assignment[0].0, 3);
    }
}
