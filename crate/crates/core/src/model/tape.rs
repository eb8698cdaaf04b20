//! Minimal reverse-mode differentiation over dense `f64` matrices, with just
//! the operators the hypergraph network needs.

use std::rc::Rc;

use ndarray::{s, Array2, Axis};

pub(crate) type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Variable-size groups of row indices, e.g. hyperedge members.
pub(crate) type Groups = Rc<Vec<Vec<usize>>>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Rc<Vec<usize>>),
    /// Like `GatherRows`, with `None` giving a zero row.
    SelectRows(Var, Rc<Vec<Option<usize>>>),
    LayerNorm {
        a: Var,
        gain: Var,
        bias: Var,
        /// Normalized input and per-row `1 / sqrt(var + eps)`.
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    GroupMean(Var, Groups),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        groups: Groups,
        heads: usize,
        /// Softmax weights, laid out per target as `heads × group_len`.
        weights: Vec<Vec<f64>>,
    },
    BceWithLogits {
        logits: Var,
        rows: Rc<Vec<usize>>,
        targets: Mat,
    },
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

/// Variance offset inside layer normalization.
pub(crate) const LN_EPS: f64 = 1e-5;

/// Probability clamp for the cross-entropy.
pub(crate) const BCE_EPS: f64 = 1e-7;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Default)]
pub(crate) struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let g = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), g)
    }

    /// `a + bias` with a `1 × m` bias broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let value = self.value(a) + self.value(bias);
        let g = self.needs(a) || self.needs(bias);
        self.push(value, Op::AddBias(a, bias), g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let g = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), g)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| if x < 0.0 { 0.0 } else { x });
        let g = self.needs(a);
        self.push(value, Op::Relu(a), g)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_bias(y, b)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        let g = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), g)
    }

    pub fn gather_rows(&mut self, a: Var, rows: Rc<Vec<usize>>) -> Var {
        let value = self.value(a).select(Axis(0), &rows);
        let g = self.needs(a);
        self.push(value, Op::GatherRows(a, rows), g)
    }

    /// Output row `r` is row `rows[r]` of `a`, or zeros for `None`.
    pub fn select_rows(&mut self, a: Var, rows: Rc<Vec<Option<usize>>>) -> Var {
        let src = self.value(a);
        let mut value = Mat::zeros((rows.len(), src.ncols()));
        for (r, idx) in rows.iter().enumerate() {
            if let Some(i) = idx {
                value.row_mut(r).assign(&src.row(*i));
            }
        }
        let g = self.needs(a);
        self.push(value, Op::SelectRows(a, rows), g)
    }

    /// Row-wise layer normalization with `1 × m` gain and bias.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var) -> Var {
        let x = self.value(a);
        let m = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / m;
            row -= mean;
            let var = row.dot(&row) / m;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            row *= inv;
            inv_std.push(inv);
        }
        let value = &xhat * self.value(gain) + self.value(bias);
        let g = self.needs(a) || self.needs(gain) || self.needs(bias);
        self.push(value, Op::LayerNorm { a, gain, bias, xhat, inv_std }, g)
    }

    /// Row `t` of the output is the mean of rows `groups[t]` of `a`.
    pub fn group_mean(&mut self, a: Var, groups: Groups) -> Var {
        let src = self.value(a);
        let mut value = Mat::zeros((groups.len(), src.ncols()));
        for (t, members) in groups.iter().enumerate() {
            let mut row = value.row_mut(t);
            for &m in members {
                row += &src.row(m);
            }
            row /= members.len() as f64;
        }
        let g = self.needs(a);
        self.push(value, Op::GroupMean(a, groups), g)
    }

    /// Multi-head scaled dot-product attention. Target `t` attends over source
    /// rows `groups[t]` with query `q[t]`; heads split the columns evenly and
    /// are concatenated in the output.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, groups: Groups, heads: usize) -> Var {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let d = qm.ncols();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Mat::zeros((groups.len(), vm.ncols()));
        let mut weights = Vec::with_capacity(groups.len());
        let mut scores = Vec::new();
        for (t, members) in groups.iter().enumerate() {
            let n = members.len();
            let mut w = vec![0.0; heads * n];
            let qrow = qm.row(t);
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = qrow.slice(s![cols.clone()]);
                scores.clear();
                scores.extend(members.iter().map(|&m| qh.dot(&km.slice(s![m, cols.clone()])) * scale));
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (j, sc) in scores.iter().enumerate() {
                    let e = (sc - max).exp();
                    w[h * n + j] = e;
                    sum += e;
                }
                let mut orow = out.slice_mut(s![t, cols.clone()]);
                for (j, &m) in members.iter().enumerate() {
                    let a = w[h * n + j] / sum;
                    w[h * n + j] = a;
                    orow.scaled_add(a, &vm.slice(s![m, cols.clone()]));
                }
            }
            weights.push(w);
        }
        let g = self.needs(q) || self.needs(k) || self.needs(v);
        self.push(out, Op::Attention { q, k, v, groups, heads, weights }, g)
    }

    /// Attention weights recorded by an attention node: per target,
    /// `heads × group_len` row-major.
    pub fn attention_weights(&self, v: Var) -> (&[Vec<f64>], usize) {
        match &self.nodes[v.0].op {
            Op::Attention { weights, heads, .. } => (weights, *heads),
            _ => panic!("not an attention node"),
        }
    }

    /// Mean binary cross-entropy of `sigmoid(logits[rows])` against `targets`,
    /// with probabilities clamped to `[BCE_EPS, 1 - BCE_EPS]`. Returns a
    /// `1 × 1` node.
    pub fn bce_with_logits(&mut self, logits: Var, rows: Rc<Vec<usize>>, targets: Mat) -> Var {
        let z = self.value(logits);
        assert_eq!(targets.nrows(), rows.len());
        assert_eq!(targets.ncols(), z.ncols());
        let mut total = 0.0;
        for (r, &row) in rows.iter().enumerate() {
            for c in 0..z.ncols() {
                let p = sigmoid(z[[row, c]]).clamp(BCE_EPS, 1.0 - BCE_EPS);
                let y = targets[[r, c]];
                total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            }
        }
        let n = (rows.len() * z.ncols()).max(1) as f64;
        let value = Mat::from_elem((1, 1), total / n);
        let g = self.needs(logits);
        self.push(value, Op::BceWithLogits { logits, rows, targets }, g)
    }

    /// Reverse pass from a scalar node. Returns gradients indexed by node;
    /// entries are `None` for nodes that do not need one.
    pub fn backward(&self, root: Var) -> Vec<Option<Mat>> {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Mat::ones(self.value(root).raw_dim()));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::AddBias(a, bias) => {
                    if self.needs(*bias) {
                        let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads, *bias, gb);
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    ndarray::Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|gx, &y| {
                            if y <= 0.0 {
                                *gx = 0.0;
                            }
                        });
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        if self.needs(p) {
                            accumulate(&mut grads, p, g.slice(s![.., start..start + w]).to_owned());
                        }
                        start += w;
                    }
                }
                Op::GatherRows(a, rows) => {
                    let mut ga = Mat::zeros(self.value(*a).raw_dim());
                    for (r, &src) in rows.iter().enumerate() {
                        let mut row = ga.row_mut(src);
                        row += &g.row(r);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SelectRows(a, rows) => {
                    let mut ga = Mat::zeros(self.value(*a).raw_dim());
                    for (r, idx) in rows.iter().enumerate() {
                        if let Some(src) = idx {
                            let mut row = ga.row_mut(*src);
                            row += &g.row(r);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm { a, gain, bias, xhat, inv_std } => {
                    if self.needs(*bias) {
                        accumulate(&mut grads, *bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.needs(*gain) {
                        accumulate(&mut grads, *gain, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.needs(*a) {
                        let m = xhat.ncols() as f64;
                        let mut ga = &g * self.value(*gain);
                        for ((mut row, xh), &inv) in ga.rows_mut().into_iter().zip(xhat.rows()).zip(inv_std) {
                            let mean = row.sum() / m;
                            let proj = row.dot(&xh) / m;
                            row.zip_mut_with(&xh, |d, &x| *d = inv * (*d - mean - x * proj));
                        }
                        accumulate(&mut grads, *a, ga);
                    }
                }
                Op::GroupMean(a, groups) => {
                    let mut ga = Mat::zeros(self.value(*a).raw_dim());
                    for (t, members) in groups.iter().enumerate() {
                        let scale = 1.0 / members.len() as f64;
                        for &m in members {
                            ga.row_mut(m).scaled_add(scale, &g.row(t));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Attention { q, k, v, groups, heads, weights } => {
                    let (gq, gk, gv) = self.attention_backward(*q, *k, *v, groups, *heads, weights, &g);
                    if self.needs(*q) {
                        accumulate(&mut grads, *q, gq);
                    }
                    if self.needs(*k) {
                        accumulate(&mut grads, *k, gk);
                    }
                    if self.needs(*v) {
                        accumulate(&mut grads, *v, gv);
                    }
                }
                Op::BceWithLogits { logits, rows, targets } => {
                    let z = self.value(*logits);
                    let mut gz = Mat::zeros(z.raw_dim());
                    let n = (rows.len() * z.ncols()).max(1) as f64;
                    let upstream = g[[0, 0]];
                    for (r, &row) in rows.iter().enumerate() {
                        for c in 0..z.ncols() {
                            let p = sigmoid(z[[row, c]]);
                            if (BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
                                gz[[row, c]] += upstream * (p - targets[[r, c]]) / n;
                            }
                        }
                    }
                    accumulate(&mut grads, *logits, gz);
                }
            }
        }
        grads
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        groups: &[Vec<usize>],
        heads: usize,
        weights: &[Vec<f64>],
        g: &Mat,
    ) -> (Mat, Mat, Mat) {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let dh = qm.ncols() / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut gq = Mat::zeros(qm.raw_dim());
        let mut gk = Mat::zeros(km.raw_dim());
        let mut gv = Mat::zeros(vm.raw_dim());
        let mut dscore = Vec::new();
        for (t, members) in groups.iter().enumerate() {
            let n = members.len();
            let w = &weights[t];
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let gout = g.slice(s![t, cols.clone()]);
                dscore.clear();
                let mut weighted = 0.0;
                for (j, &m) in members.iter().enumerate() {
                    let a = w[h * n + j];
                    gv.slice_mut(s![m, cols.clone()]).scaled_add(a, &gout);
                    let da = gout.dot(&vm.slice(s![m, cols.clone()]));
                    weighted += a * da;
                    dscore.push(da);
                }
                for (j, &m) in members.iter().enumerate() {
                    let ds = w[h * n + j] * (dscore[j] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    gq.slice_mut(s![t, cols.clone()]).scaled_add(ds, &km.slice(s![m, cols.clone()]));
                    gk.slice_mut(s![m, cols.clone()]).scaled_add(ds, &qm.slice(s![t, cols.clone()]));
                }
            }
        }
        (gq, gk, gv)
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot => *slot = Some(g),
    }
}
