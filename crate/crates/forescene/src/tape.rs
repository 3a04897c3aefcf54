//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every model in this crate (graph encoder, query decoder, denoiser) builds a
//! fresh computation graph per sample on a [`Tape`], runs [`Tape::backward`]
//! once from a scalar loss node, and reads parameter gradients back out. All
//! values are two-dimensional: row vectors are `1 x d`, scalars are `1 x 1`,
//! pairwise tensors of shape `n x n x d` are stored flattened as `n*n x d`
//! with row index `i * n + j`.
//!
//! Gradients are exact for the smooth ops and use the usual subgradient
//! conventions at kinks (`relu`/`min`/`max` pick one side, max-pool routes to
//! the first argmax row).

use ndarray::{Array2, Axis};

/// Handle to a node on a [`Tape`].
pub type NodeId = usize;

const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// `a [n,d] + row [1,d]`, broadcast over rows.
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `a [n,d] * col [n,1]`, broadcast over columns.
    MulCol(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    Transpose(NodeId),
    ConcatCols(NodeId, NodeId),
    ConcatRows(NodeId, NodeId),
    SliceCols(NodeId, usize, usize),
    SliceRows(NodeId, usize, usize),
    Relu(NodeId),
    Gelu(NodeId),
    Sigmoid(NodeId),
    SoftmaxRows(NodeId),
    LayerNormRows {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
    },
    /// Column-wise max over rows, `[n,d] -> [1,d]`.
    MaxPoolRows(NodeId),
    SumAll(NodeId),
    EMin(NodeId, NodeId),
    EMax(NodeId, NodeId),
    /// Select rows of `src` by index (embedding lookup).
    GatherRows { src: NodeId, idx: Vec<usize> },
    /// `[n,d],[n,d] -> [n*n, 2d]` with row `i*n+j = [a_i ; b_j]`.
    PairConcat(NodeId, NodeId),
    /// `[1,d] -> [n,d]`.
    RowRepeat(NodeId, usize),
    /// Row-major reshape preserving element count.
    Reshape(NodeId),
    /// Weighted-mean softmax cross-entropy over rows against class indices.
    CeRows {
        logits: NodeId,
        targets: Vec<usize>,
        weights: Vec<f64>,
    },
    /// Mean binary cross-entropy with logits over all entries.
    BceLogits { logits: NodeId, targets: Array2<f64> },
    /// Mean absolute error over all entries.
    L1Loss { pred: NodeId, target: Array2<f64> },
    /// `sum(mask * (pred - target)^2) / denom`.
    MseMasked {
        pred: NodeId,
        target: Array2<f64>,
        mask: Array2<f64>,
        denom: f64,
    },
}

struct Node {
    value: Array2<f64>,
    grad: Option<Array2<f64>>,
    op: Op,
}

/// A single-use computation graph.
pub struct Tape {
    nodes: Vec<Node>,
    /// Parameter nodes registered through [`Tape::param`], by store name.
    params: Vec<(String, NodeId)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::with_capacity(256), params: Vec::new() }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, grad: None, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.nodes[id].grad.as_ref()
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let v = &self.nodes[id].value;
        (v.nrows(), v.ncols())
    }

    /// Extract the value of a `1 x 1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.shape(id), (1, 1));
        self.nodes[id].value[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn scalar_const(&mut self, v: f64) -> NodeId {
        self.constant(Array2::from_elem((1, 1), v))
    }

    /// Register a named parameter leaf. The name is remembered so that
    /// [`Tape::param_grads`] can return gradients keyed by parameter name.
    pub fn param(&mut self, name: &str, value: Array2<f64>) -> NodeId {
        let id = self.push(value, Op::Leaf);
        self.params.push((name.to_string(), id));
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a].value.dot(&self.nodes[b].value);
        self.push(v, Op::Matmul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.shape(a), self.shape(b));
        let v = &self.nodes[a].value + &self.nodes[b].value;
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        debug_assert_eq!(self.shape(row).0, 1);
        debug_assert_eq!(self.shape(a).1, self.shape(row).1);
        let v = &self.nodes[a].value + &self.nodes[row].value;
        self.push(v, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.shape(a), self.shape(b));
        let v = &self.nodes[a].value - &self.nodes[b].value;
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.shape(a), self.shape(b));
        let v = &self.nodes[a].value * &self.nodes[b].value;
        self.push(v, Op::Mul(a, b))
    }

    pub fn mul_col(&mut self, a: NodeId, col: NodeId) -> NodeId {
        debug_assert_eq!(self.shape(col).1, 1);
        debug_assert_eq!(self.shape(a).0, self.shape(col).0);
        let v = &self.nodes[a].value * &self.nodes[col].value;
        self.push(v, Op::MulCol(a, col))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.shape(a), self.shape(b));
        let v = &self.nodes[a].value / &self.nodes[b].value;
        self.push(v, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = &self.nodes[a].value * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.shape(a).0, self.shape(b).0);
        let v = ndarray::concatenate(
            Axis(1),
            &[self.nodes[a].value.view(), self.nodes[b].value.view()],
        )
        .expect("concat_cols shape");
        self.push(v, Op::ConcatCols(a, b))
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.shape(a).1, self.shape(b).1);
        let v = ndarray::concatenate(
            Axis(0),
            &[self.nodes[a].value.view(), self.nodes[b].value.view()],
        )
        .expect("concat_rows shape");
        self.push(v, Op::ConcatRows(a, b))
    }

    pub fn slice_cols(&mut self, a: NodeId, from: usize, to: usize) -> NodeId {
        let v = self.nodes[a].value.slice(ndarray::s![.., from..to]).to_owned();
        self.push(v, Op::SliceCols(a, from, to))
    }

    pub fn slice_rows(&mut self, a: NodeId, from: usize, to: usize) -> NodeId {
        let v = self.nodes[a].value.slice(ndarray::s![from..to, ..]).to_owned();
        self.push(v, Op::SliceRows(a, from, to))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(gelu_fwd);
        self.push(v, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = softmax_rows(&self.nodes[a].value);
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn layer_norm_rows(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let d = self.shape(x).1;
        debug_assert_eq!(self.shape(gamma), (1, d));
        debug_assert_eq!(self.shape(beta), (1, d));
        let (xn, _, _) = layer_norm_fwd(&self.nodes[x].value);
        let v = &xn * &self.nodes[gamma].value + &self.nodes[beta].value;
        self.push(v, Op::LayerNormRows { x, gamma, beta })
    }

    pub fn max_pool_rows(&mut self, a: NodeId) -> NodeId {
        let src = &self.nodes[a].value;
        debug_assert!(src.nrows() > 0);
        let mut v = Array2::from_elem((1, src.ncols()), f64::NEG_INFINITY);
        for row in src.rows() {
            for (j, &x) in row.iter().enumerate() {
                if x > v[[0, j]] {
                    v[[0, j]] = x;
                }
            }
        }
        self.push(v, Op::MaxPoolRows(a))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Array2::from_elem((1, 1), self.nodes[a].value.sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn emin(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.shape(a), self.shape(b));
        let mut v = self.nodes[a].value.clone();
        v.zip_mut_with(&self.nodes[b].value, |x, &y| *x = x.min(y));
        self.push(v, Op::EMin(a, b))
    }

    pub fn emax(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.shape(a), self.shape(b));
        let mut v = self.nodes[a].value.clone();
        v.zip_mut_with(&self.nodes[b].value, |x, &y| *x = x.max(y));
        self.push(v, Op::EMax(a, b))
    }

    pub fn gather_rows(&mut self, src: NodeId, idx: &[usize]) -> NodeId {
        let s = &self.nodes[src].value;
        let mut v = Array2::zeros((idx.len(), s.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            v.row_mut(r).assign(&s.row(i));
        }
        self.push(v, Op::GatherRows { src, idx: idx.to_vec() })
    }

    pub fn pair_concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (n, d) = self.shape(a);
        debug_assert_eq!(self.shape(b), (n, d));
        let av = &self.nodes[a].value;
        let bv = &self.nodes[b].value;
        let mut v = Array2::zeros((n * n, 2 * d));
        for i in 0..n {
            for j in 0..n {
                let r = i * n + j;
                v.slice_mut(ndarray::s![r, 0..d]).assign(&av.row(i));
                v.slice_mut(ndarray::s![r, d..2 * d]).assign(&bv.row(j));
            }
        }
        self.push(v, Op::PairConcat(a, b))
    }

    pub fn row_repeat(&mut self, a: NodeId, n: usize) -> NodeId {
        debug_assert_eq!(self.shape(a).0, 1);
        let row = self.nodes[a].value.row(0).to_owned();
        let v = Array2::from_shape_fn((n, row.len()), |(_, j)| row[j]);
        self.push(v, Op::RowRepeat(a, n))
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let (r, c) = self.shape(a);
        debug_assert_eq!(r * c, rows * cols);
        let flat: Vec<f64> = self.nodes[a].value.iter().cloned().collect();
        let v = Array2::from_shape_vec((rows, cols), flat).expect("reshape");
        self.push(v, Op::Reshape(a))
    }

    /// Softmax cross-entropy per row against integer class targets,
    /// reduced as `sum_i w_i * ce_i / sum_i w_i`.
    pub fn ce_rows(&mut self, logits: NodeId, targets: &[usize], weights: &[f64]) -> NodeId {
        let l = &self.nodes[logits].value;
        debug_assert_eq!(l.nrows(), targets.len());
        debug_assert_eq!(targets.len(), weights.len());
        let probs = softmax_rows(l);
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            num += w * -(probs[[i, t]].max(1e-300)).ln();
            den += w;
        }
        let v = Array2::from_elem((1, 1), num / den);
        self.push(
            v,
            Op::CeRows { logits, targets: targets.to_vec(), weights: weights.to_vec() },
        )
    }

    /// Mean binary cross-entropy with logits over every entry.
    pub fn bce_logits(&mut self, logits: NodeId, targets: Array2<f64>) -> NodeId {
        let l = &self.nodes[logits].value;
        debug_assert_eq!((l.nrows(), l.ncols()), (targets.nrows(), targets.ncols()));
        let mut acc = 0.0;
        for (&x, &y) in l.iter().zip(targets.iter()) {
            // log(1 + e^{-|x|}) + max(x, 0) - x*y is the stable form.
            acc += (-x.abs()).exp().ln_1p() + x.max(0.0) - x * y;
        }
        let v = Array2::from_elem((1, 1), acc / (l.len() as f64));
        self.push(v, Op::BceLogits { logits, targets })
    }

    /// Mean absolute error over every entry.
    pub fn l1_loss(&mut self, pred: NodeId, target: Array2<f64>) -> NodeId {
        let p = &self.nodes[pred].value;
        debug_assert_eq!((p.nrows(), p.ncols()), (target.nrows(), target.ncols()));
        let mut acc = 0.0;
        for (&x, &y) in p.iter().zip(target.iter()) {
            acc += (x - y).abs();
        }
        let v = Array2::from_elem((1, 1), acc / (p.len() as f64));
        self.push(v, Op::L1Loss { pred, target })
    }

    /// `sum(mask * (pred - target)^2) / denom`.
    pub fn mse_masked(
        &mut self,
        pred: NodeId,
        target: Array2<f64>,
        mask: Array2<f64>,
        denom: f64,
    ) -> NodeId {
        let p = &self.nodes[pred].value;
        debug_assert_eq!((p.nrows(), p.ncols()), (target.nrows(), target.ncols()));
        debug_assert_eq!((p.nrows(), p.ncols()), (mask.nrows(), mask.ncols()));
        let mut acc = 0.0;
        for ((&x, &y), &m) in p.iter().zip(target.iter()).zip(mask.iter()) {
            acc += m * (x - y) * (x - y);
        }
        let v = Array2::from_elem((1, 1), acc / denom);
        self.push(v, Op::MseMasked { pred, target, mask, denom })
    }

    /// Run reverse-mode accumulation from a `1 x 1` loss node.
    pub fn backward(&mut self, loss: NodeId) {
        debug_assert_eq!(self.shape(loss), (1, 1));
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss].grad = Some(Array2::from_elem((1, 1), 1.0));
        for id in (0..=loss).rev() {
            let g = match self.nodes[id].grad.take() {
                Some(g) => g,
                None => continue,
            };
            let op = self.nodes[id].op.clone();
            self.accumulate(id, &g, op);
            self.nodes[id].grad = Some(g);
        }
    }

    fn add_grad(&mut self, id: NodeId, delta: &Array2<f64>) {
        match &mut self.nodes[id].grad {
            Some(g) => *g += delta,
            slot @ None => *slot = Some(delta.clone()),
        }
    }

    fn accumulate(&mut self, id: NodeId, g: &Array2<f64>, op: Op) {
        match op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let da = g.dot(&self.nodes[b].value.t());
                let db = self.nodes[a].value.t().dot(g);
                self.add_grad(a, &da);
                self.add_grad(b, &db);
            }
            Op::Add(a, b) => {
                self.add_grad(a, g);
                self.add_grad(b, g);
            }
            Op::AddRow(a, row) => {
                self.add_grad(a, g);
                let dr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                self.add_grad(row, &dr);
            }
            Op::Sub(a, b) => {
                self.add_grad(a, g);
                let db = g.mapv(|x| -x);
                self.add_grad(b, &db);
            }
            Op::Mul(a, b) => {
                let da = g * &self.nodes[b].value;
                let db = g * &self.nodes[a].value;
                self.add_grad(a, &da);
                self.add_grad(b, &db);
            }
            Op::MulCol(a, col) => {
                let da = g * &self.nodes[col].value;
                let dcol = (g * &self.nodes[a].value).sum_axis(Axis(1)).insert_axis(Axis(1));
                self.add_grad(a, &da);
                self.add_grad(col, &dcol);
            }
            Op::Div(a, b) => {
                let bv = &self.nodes[b].value;
                let da = g / bv;
                let db = -(g * &self.nodes[a].value) / (bv * bv);
                self.add_grad(a, &da);
                self.add_grad(b, &db);
            }
            Op::Scale(a, c) => {
                let da = g * c;
                self.add_grad(a, &da);
            }
            Op::Transpose(a) => {
                let da = g.t().to_owned();
                self.add_grad(a, &da);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.shape(a).1;
                let da = g.slice(ndarray::s![.., 0..ca]).to_owned();
                let db = g.slice(ndarray::s![.., ca..]).to_owned();
                self.add_grad(a, &da);
                self.add_grad(b, &db);
            }
            Op::ConcatRows(a, b) => {
                let ra = self.shape(a).0;
                let da = g.slice(ndarray::s![0..ra, ..]).to_owned();
                let db = g.slice(ndarray::s![ra.., ..]).to_owned();
                self.add_grad(a, &da);
                self.add_grad(b, &db);
            }
            Op::SliceCols(a, from, _to) => {
                let (r, c) = self.shape(a);
                let mut da = Array2::zeros((r, c));
                da.slice_mut(ndarray::s![.., from..from + g.ncols()]).assign(g);
                self.add_grad(a, &da);
            }
            Op::SliceRows(a, from, _to) => {
                let (r, c) = self.shape(a);
                let mut da = Array2::zeros((r, c));
                da.slice_mut(ndarray::s![from..from + g.nrows(), ..]).assign(g);
                self.add_grad(a, &da);
            }
            Op::Relu(a) => {
                let da = g * &self.nodes[a].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                self.add_grad(a, &da);
            }
            Op::Gelu(a) => {
                let da = g * &self.nodes[a].value.mapv(gelu_grad);
                self.add_grad(a, &da);
            }
            Op::Sigmoid(a) => {
                let s = &self.nodes[id].value;
                let da = g * &(s * &s.mapv(|x| 1.0 - x));
                self.add_grad(a, &da);
            }
            Op::SoftmaxRows(a) => {
                let s = &self.nodes[id].value;
                let mut da = Array2::zeros((s.nrows(), s.ncols()));
                for i in 0..s.nrows() {
                    let si = s.row(i);
                    let gi = g.row(i);
                    let dot: f64 = si.iter().zip(gi.iter()).map(|(&x, &y)| x * y).sum();
                    for j in 0..s.ncols() {
                        da[[i, j]] = si[j] * (gi[j] - dot);
                    }
                }
                self.add_grad(a, &da);
            }
            Op::LayerNormRows { x, gamma, beta } => {
                let xv = self.nodes[x].value.clone();
                let (xn, _mu, sd) = layer_norm_fwd(&xv);
                let gv = self.nodes[gamma].value.clone();
                let d = xv.ncols() as f64;
                let gy = g * &gv; // dL/d x_hat
                let mut dx = Array2::zeros((xv.nrows(), xv.ncols()));
                for i in 0..xv.nrows() {
                    let gyr = gy.row(i);
                    let xnr = xn.row(i);
                    let m1: f64 = gyr.sum() / d;
                    let m2: f64 = gyr.iter().zip(xnr.iter()).map(|(&a, &b)| a * b).sum::<f64>() / d;
                    for j in 0..xv.ncols() {
                        dx[[i, j]] = (gyr[j] - m1 - xnr[j] * m2) / sd[i];
                    }
                }
                self.add_grad(x, &dx);
                let dgamma = (g * &xn).sum_axis(Axis(0)).insert_axis(Axis(0));
                let dbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                self.add_grad(gamma, &dgamma);
                self.add_grad(beta, &dbeta);
            }
            Op::MaxPoolRows(a) => {
                let src = &self.nodes[a].value;
                let mut da = Array2::zeros((src.nrows(), src.ncols()));
                for j in 0..src.ncols() {
                    let mut best = 0usize;
                    for i in 1..src.nrows() {
                        if src[[i, j]] > src[[best, j]] {
                            best = i;
                        }
                    }
                    da[[best, j]] = g[[0, j]];
                }
                self.add_grad(a, &da);
            }
            Op::SumAll(a) => {
                let (r, c) = self.shape(a);
                let da = Array2::from_elem((r, c), g[[0, 0]]);
                self.add_grad(a, &da);
            }
            Op::EMin(a, b) => {
                let av = &self.nodes[a].value;
                let bv = &self.nodes[b].value;
                let mut da = Array2::zeros(av.raw_dim());
                let mut db = Array2::zeros(av.raw_dim());
                for ((idx, &x), &y) in av.indexed_iter().zip(bv.iter()) {
                    if x <= y {
                        da[idx] = g[idx];
                    } else {
                        db[idx] = g[idx];
                    }
                }
                self.add_grad(a, &da);
                self.add_grad(b, &db);
            }
            Op::EMax(a, b) => {
                let av = &self.nodes[a].value;
                let bv = &self.nodes[b].value;
                let mut da = Array2::zeros(av.raw_dim());
                let mut db = Array2::zeros(av.raw_dim());
                for ((idx, &x), &y) in av.indexed_iter().zip(bv.iter()) {
                    if x >= y {
                        da[idx] = g[idx];
                    } else {
                        db[idx] = g[idx];
                    }
                }
                self.add_grad(a, &da);
                self.add_grad(b, &db);
            }
            Op::GatherRows { src, idx } => {
                let (r, c) = self.shape(src);
                let mut da = Array2::zeros((r, c));
                for (out_r, &src_r) in idx.iter().enumerate() {
                    let mut row = da.row_mut(src_r);
                    row += &g.row(out_r);
                }
                self.add_grad(src, &da);
            }
            Op::PairConcat(a, b) => {
                let (n, d) = self.shape(a);
                let mut da = Array2::zeros((n, d));
                let mut db = Array2::zeros((n, d));
                for i in 0..n {
                    for j in 0..n {
                        let r = i * n + j;
                        let mut ra = da.row_mut(i);
                        ra += &g.slice(ndarray::s![r, 0..d]);
                        let mut rb = db.row_mut(j);
                        rb += &g.slice(ndarray::s![r, d..2 * d]);
                    }
                }
                self.add_grad(a, &da);
                self.add_grad(b, &db);
            }
            Op::RowRepeat(a, _n) => {
                let da = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                self.add_grad(a, &da);
            }
            Op::Reshape(a) => {
                let (r, c) = self.shape(a);
                let flat: Vec<f64> = g.iter().cloned().collect();
                let da = Array2::from_shape_vec((r, c), flat).expect("reshape grad");
                self.add_grad(a, &da);
            }
            Op::CeRows { logits, targets, weights } => {
                let probs = softmax_rows(&self.nodes[logits].value);
                let den: f64 = weights.iter().sum();
                let scale = g[[0, 0]] / den;
                let mut da = probs;
                for (i, (&t, &w)) in targets.iter().zip(&weights).enumerate() {
                    da[[i, t]] -= 1.0;
                    let mut row = da.row_mut(i);
                    row *= w * scale;
                }
                self.add_grad(logits, &da);
            }
            Op::BceLogits { logits, targets } => {
                let l = &self.nodes[logits].value;
                let scale = g[[0, 0]] / (l.len() as f64);
                let mut da = l.mapv(sigmoid);
                da -= &targets;
                da *= scale;
                self.add_grad(logits, &da);
            }
            Op::L1Loss { pred, target } => {
                let p = &self.nodes[pred].value;
                let scale = g[[0, 0]] / (p.len() as f64);
                let mut da = Array2::zeros(p.raw_dim());
                for ((idx, &x), &y) in p.indexed_iter().zip(target.iter()) {
                    da[idx] = scale * (x - y).signum();
                }
                self.add_grad(pred, &da);
            }
            Op::MseMasked { pred, target, mask, denom } => {
                let p = &self.nodes[pred].value;
                let scale = 2.0 * g[[0, 0]] / denom;
                let mut da = (p - &target) * &mask;
                da *= scale;
                self.add_grad(pred, &da);
            }
        }
    }

    /// Gradients of all registered parameters after [`Tape::backward`].
    /// Parameters used more than once accumulate into a single entry.
    pub fn param_grads(&self) -> indexmap::IndexMap<String, Array2<f64>> {
        let mut out: indexmap::IndexMap<String, Array2<f64>> = indexmap::IndexMap::new();
        for (name, id) in &self.params {
            let g = match &self.nodes[*id].grad {
                Some(g) => g.clone(),
                None => Array2::zeros(self.nodes[*id].value.raw_dim()),
            };
            match out.get_mut(name) {
                Some(acc) => *acc += &g,
                None => {
                    out.insert(name.clone(), g);
                }
            }
        }
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// tanh-form GELU; forward and gradient use the same approximation so
// finite-difference checks agree with the analytic path.
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu_fwd(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn softmax_rows(a: &Array2<f64>) -> Array2<f64> {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - m).exp());
        let s = row.sum();
        row.mapv_inplace(|x| x / s);
    }
    out
}

/// Returns (normalized, per-row mean, per-row std).
fn layer_norm_fwd(x: &Array2<f64>) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
    let d = x.ncols() as f64;
    let mut out = x.clone();
    let mut mus = Vec::with_capacity(x.nrows());
    let mut sds = Vec::with_capacity(x.nrows());
    for mut row in out.rows_mut() {
        let mu = row.sum() / d;
        let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / d;
        let sd = (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| (v - mu) / sd);
        mus.push(mu);
        sds.push(sd);
    }
    (out, mus, sds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::fd_check_tape;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn randn(rng: &mut ChaCha12Rng, r: usize, c: usize) -> Array2<f64> {
        use rand_distr::Distribution;
        let d = rand_distr::StandardNormal;
        Array2::from_shape_fn((r, c), |_| d.sample(rng))
    }

    #[test]
    fn matmul_values() {
        let mut t = Tape::new();
        let a = t.constant(array![[1.0, 2.0], [3.0, 4.0]]);
        let b = t.constant(array![[5.0], [6.0]]);
        let c = t.matmul(a, b);
        assert_eq!(t.value(c), &array![[17.0], [39.0]]);
    }

    #[test]
    fn backward_through_simple_chain() {
        // loss = sum((a*b)^2); d/da = 2*a*b^2
        let mut t = Tape::new();
        let a = t.param("a", array![[2.0, -1.0]]);
        let b = t.constant(array![[3.0, 4.0]]);
        let ab = t.mul(a, b);
        let sq = t.mul(ab, ab);
        let loss = t.sum_all(sq);
        t.backward(loss);
        let g = &t.param_grads()["a"];
        assert_eq!(g, &array![[2.0 * 2.0 * 9.0, 2.0 * -1.0 * 16.0]]);
    }

    #[test]
    fn maxpool_routes_to_argmax() {
        let mut t = Tape::new();
        let a = t.param("a", array![[1.0, 5.0], [3.0, 2.0]]);
        let p = t.max_pool_rows(a);
        let loss = t.sum_all(p);
        t.backward(loss);
        let g = &t.param_grads()["a"];
        assert_eq!(g, &array![[0.0, 1.0], [1.0, 0.0]]);
    }

    // Finite-difference sweep over every differentiable op.
    #[test]
    fn finite_difference_all_ops() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let x0 = randn(&mut rng, 3, 4);
        let y0 = randn(&mut rng, 3, 4);
        let w0 = randn(&mut rng, 4, 2);
        let row0 = randn(&mut rng, 1, 4);
        let col0 = randn(&mut rng, 3, 1).mapv(|v| v + 3.0);
        let gamma0 = randn(&mut rng, 1, 4).mapv(|v| v * 0.2 + 1.0);
        let beta0 = randn(&mut rng, 1, 4);
        let targets_bce = randn(&mut rng, 3, 4).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let mask = array![[1.0], [0.0], [1.0]];
        let mask_full =
            ndarray::concatenate(Axis(1), &[mask.view(), mask.view(), mask.view(), mask.view()])
                .unwrap();
        let l1_target = randn(&mut rng, 3, 4);
        let mse_target = randn(&mut rng, 3, 4);

        // Expand a [3,1] column to [3,4] so `div` sees matching shapes.
        fn expand_col(t: &mut Tape, col: NodeId) -> NodeId {
            let ones = t.constant(Array2::from_elem((1, 4), 1.0));
            t.matmul(col, ones)
        }

        let inputs: Vec<(&str, Array2<f64>)> = vec![
            ("x", x0),
            ("y", y0),
            ("w", w0),
            ("row", row0),
            ("col", col0),
            ("gamma", gamma0),
            ("beta", beta0),
        ];
        let build = |t: &mut Tape, vals: &indexmap::IndexMap<String, Array2<f64>>| {
            let x = t.param("x", vals["x"].clone());
            let y = t.param("y", vals["y"].clone());
            let w = t.param("w", vals["w"].clone());
            let row = t.param("row", vals["row"].clone());
            let col = t.param("col", vals["col"].clone());
            let gamma = t.param("gamma", vals["gamma"].clone());
            let beta = t.param("beta", vals["beta"].clone());

            let mut terms = Vec::new();
            let mm = t.matmul(x, w);
            terms.push(t.sum_all(mm));
            let ar = t.add_row(x, row);
            let s = t.sigmoid(ar);
            terms.push(t.sum_all(s));
            let sm = t.softmax_rows(x);
            let smw = t.mul(sm, y);
            terms.push(t.sum_all(smw));
            let ln = t.layer_norm_rows(x, gamma, beta);
            let lnp = t.mul(ln, y);
            terms.push(t.sum_all(lnp));
            let ge = t.gelu(x);
            terms.push(t.sum_all(ge));
            let re = t.relu(x);
            terms.push(t.sum_all(re));
            let mc = t.mul_col(x, col);
            terms.push(t.sum_all(mc));
            let colw = expand_col(t, col);
            let dv = t.div(x, colw);
            terms.push(t.sum_all(dv));
            let mn = t.emin(x, y);
            let mx = t.emax(x, y);
            let mm2 = t.mul(mn, mx);
            terms.push(t.sum_all(mm2));
            let pc = t.pair_concat(x, y);
            terms.push(t.sum_all(pc));
            let mp = t.max_pool_rows(x);
            terms.push(t.sum_all(mp));
            let gr = t.gather_rows(x, &[2, 0, 0, 1]);
            terms.push(t.sum_all(gr));
            let tr = t.transpose(x);
            let trs = t.matmul(tr, x);
            terms.push(t.sum_all(trs));
            let ce = t.ce_rows(x, &[1, 0, 3], &[1.0, 0.1, 1.0]);
            terms.push(ce);
            let bce = t.bce_logits(x, targets_bce.clone());
            terms.push(bce);
            let l1 = t.l1_loss(x, l1_target.clone());
            terms.push(l1);
            let mse = t.mse_masked(x, mse_target.clone(), mask_full.clone(), 8.0);
            terms.push(mse);
            let rr = t.row_repeat(row, 3);
            let rrm = t.mul(rr, y);
            terms.push(t.sum_all(rrm));
            let sc = t.slice_cols(x, 1, 3);
            terms.push(t.sum_all(sc));
            let sr = t.slice_rows(x, 0, 2);
            terms.push(t.sum_all(sr));
            let cc = t.concat_cols(x, y);
            terms.push(t.sum_all(cc));
            let cr = t.concat_rows(x, y);
            terms.push(t.sum_all(cr));

            let mut total = terms[0];
            for &term in &terms[1..] {
                total = t.add(total, term);
            }
            total
        };

        fd_check_tape(&inputs, build, 1e-6, 1e-6);
    }
}
