//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! read from a borrowed [`ParamStore`] without copying; calling
//! [`Graph::backward`] walks the tape in reverse and yields [`Gradients`]
//! keyed by parameter.

use std::collections::HashMap;

use ndarray::{s, Array1, Array2, Axis};

use crate::params::{ParamId, ParamStore};
use crate::Matrix;

/// Node handle inside a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddConst(Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normed: Matrix,
        inv_std: Array1<f64>,
    },
    GatherRows {
        table: Var,
        rows: Vec<usize>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    BalancedCe {
        p: Var,
        labels: Vec<bool>,
        alpha: f64,
        beta: f64,
        clamp: f64,
    },
}

struct Node {
    /// `None` for parameter leaves, whose value lives in the store.
    value: Option<Matrix>,
    op: Op,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    params: Vec<(ParamId, Matrix)>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.params.iter().map(|(p, g)| (*p, g))
    }

    /// True when every gradient entry is finite.
    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .all(|(_, g)| g.iter().all(|v| v.is_finite()))
    }
}

/// Lower/upper clamp applied to probabilities before the log in
/// [`Graph::balanced_ce_mean`].
pub const PROB_CLAMP: f64 = 1e-7;

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    fn push(&mut self, value: Option<Matrix>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.store.get(*id),
            (None, _) => unreachable!("non-parameter node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(Some(m), Op::Constant)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes.get(&id) {
            return *v;
        }
        let v = self.push(None, Op::Param(id));
        self.param_nodes.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(Some(out), Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(Some(out), Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let out = self.value(a) + self.value(b);
        self.push(Some(out), Op::Add(a, b))
    }

    /// Adds a `1 × d` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "add_row: bias must be a single row");
        assert_eq!(self.shape(a).1, self.shape(row).1, "add_row: width mismatch");
        let out = self.value(a) + self.value(row);
        self.push(Some(out), Op::AddRow(a, row))
    }

    /// Adds a constant matrix that receives no gradient.
    pub fn add_const(&mut self, a: Var, c: &Matrix) -> Var {
        assert_eq!(self.shape(a), c.dim(), "add_const: shape mismatch");
        let out = self.value(a) + c;
        self.push(Some(out), Op::AddConst(a))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a) * factor;
        self.push(Some(out), Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| v.max(0.0));
        self.push(Some(out), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(Some(out), Op::Sigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        self.push(Some(out), Op::SoftmaxRows(a))
    }

    /// Row-wise layer normalization with learned `1 × d` gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mean = xv.sum_axis(Axis(1)) / d;
        let centered = xv - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let normed = &centered * &inv_std.view().insert_axis(Axis(1));
        let out = &normed * self.value(gamma) + self.value(beta);
        self.push(
            Some(out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            },
        )
    }

    /// Embedding lookup: selects `rows` of `table` in order (repeats allowed).
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Array2::zeros((rows.len(), t.ncols()));
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).assign(&t.row(r));
        }
        self.push(
            Some(out),
            Op::GatherRows {
                table,
                rows: rows.to_vec(),
            },
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).slice(s![start..start + len, ..]).to_owned();
        self.push(Some(out), Op::SliceRows { x, start })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).slice(s![.., start..start + len]).to_owned();
        self.push(Some(out), Op::SliceCols { x, start })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows: no inputs");
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows: width mismatch");
        self.push(Some(out), Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols: height mismatch");
        self.push(Some(out), Op::ConcatCols(parts.to_vec()))
    }

    /// Mean balanced cross-entropy of a `k × 1` probability column against
    /// binary labels: `-alpha·ln p` for positives, `-beta·ln(1-p)` for
    /// negatives, with `p` clamped to `[PROB_CLAMP, 1-PROB_CLAMP]`. Returns a
    /// `1 × 1` node; an empty column yields zero.
    pub fn balanced_ce_mean(&mut self, p: Var, labels: &[bool], alpha: f64, beta: f64) -> Var {
        let pv = self.value(p);
        assert_eq!(pv.ncols(), 1, "balanced_ce_mean expects a column");
        assert_eq!(pv.nrows(), labels.len(), "balanced_ce_mean: label count");
        let k = labels.len();
        let total: f64 = pv
            .column(0)
            .iter()
            .zip(labels)
            .map(|(&p, &y)| balanced_ce(p, y, alpha, beta))
            .sum();
        let loss = if k == 0 { 0.0 } else { total / k as f64 };
        self.push(
            Some(Array2::from_elem((1, 1), loss)),
            Op::BalancedCe {
                p,
                labels: labels.to_vec(),
                alpha,
                beta,
                clamp: PROB_CLAMP,
            },
        )
    }

    /// Reverse pass from a `1 × 1` output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.shape(output), (1, 1), "backward expects a scalar output");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(_) => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulNt(a, b) => {
                    // out = a bᵀ  =>  da = g b,  db = gᵀ a
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, g);
                }
                Op::AddConst(a) => accumulate(&mut grads, *a, g),
                Op::Scale(a, f) => accumulate(&mut grads, *a, g * *f),
                Op::Relu(a) => {
                    let mask = self.value(*a).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut grads, *a, g * mask);
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().unwrap();
                    let d = y.mapv(|s| s * (1.0 - s));
                    accumulate(&mut grads, *a, g * d);
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.as_ref().unwrap();
                    let dot = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let ga = y * &(&g - &dot);
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    normed,
                    inv_std,
                } => {
                    let d = normed.ncols() as f64;
                    let gbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ggamma = (&g * normed).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gn = &g * self.value(*gamma);
                    let sum_gn = gn.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let sum_gn_n = (&gn * normed).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let inner = &gn * d - &sum_gn - &(normed * &sum_gn_n);
                    let gx = inner * &(inv_std / d).insert_axis(Axis(1));
                    accumulate(&mut grads, *beta, gbeta);
                    accumulate(&mut grads, *gamma, ggamma);
                    accumulate(&mut grads, *x, gx);
                }
                Op::GatherRows { table, rows } => {
                    let (tr, tc) = self.shape(*table);
                    let mut gt = Array2::zeros((tr, tc));
                    for (i, &r) in rows.iter().enumerate() {
                        let mut dst = gt.row_mut(r);
                        dst += &g.row(i);
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::SliceRows { x, start } => {
                    let mut gx = Array2::zeros(self.shape(*x));
                    gx.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::SliceCols { x, start } => {
                    let mut gx = Array2::zeros(self.shape(*x));
                    gx.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.shape(*p).0;
                        let gp = g.slice(s![offset..offset + rows, ..]).to_owned();
                        offset += rows;
                        accumulate(&mut grads, *p, gp);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let cols = self.shape(*p).1;
                        let gp = g.slice(s![.., offset..offset + cols]).to_owned();
                        offset += cols;
                        accumulate(&mut grads, *p, gp);
                    }
                }
                Op::BalancedCe {
                    p,
                    labels,
                    alpha,
                    beta,
                    clamp,
                } => {
                    let k = labels.len();
                    if k > 0 {
                        let upstream = g[[0, 0]] / k as f64;
                        let pv = self.value(*p);
                        let mut gp = Array2::zeros((k, 1));
                        for (i, &y) in labels.iter().enumerate() {
                            let prob = pv[[i, 0]];
                            // clamp has zero derivative outside its interior
                            if prob <= *clamp || prob >= 1.0 - *clamp {
                                continue;
                            }
                            gp[[i, 0]] = if y {
                                -alpha / prob
                            } else {
                                beta / (1.0 - prob)
                            } * upstream;
                        }
                        accumulate(&mut grads, *p, gp);
                    }
                }
            }
        }

        let mut params: Vec<(ParamId, Matrix)> = self
            .param_nodes
            .iter()
            .filter_map(|(id, var)| grads[var.0].take().map(|g| (*id, g)))
            .collect();
        params.sort_by_key(|(id, _)| *id);
        Gradients { params }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
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

/// Numerically stable row-wise softmax.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Single-unit balanced cross-entropy with probability clamping.
pub fn balanced_ce(p: f64, y: bool, alpha: f64, beta: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if y {
        -alpha * p.ln()
    } else {
        -beta * (1.0 - p).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    /// Central finite differences of `f` w.r.t. every entry of parameter `id`.
    fn numeric_grad(
        store: &mut ParamStore,
        id: ParamId,
        f: &dyn Fn(&ParamStore) -> f64,
    ) -> Matrix {
        let h = 1e-6;
        let shape = store.get(id).dim();
        let mut out = Array2::zeros(shape);
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let orig = store.get(id)[[r, c]];
                store.get_mut(id)[[r, c]] = orig + h;
                let plus = f(store);
                store.get_mut(id)[[r, c]] = orig - h;
                let minus = f(store);
                store.get_mut(id)[[r, c]] = orig;
                out[[r, c]] = (plus - minus) / (2.0 * h);
            }
        }
        out
    }

    fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
        assert_eq!(a.dim(), b.dim());
        for (x, y) in a.iter().zip(b.iter()) {
            let denom = x.abs().max(y.abs()).max(1e-8);
            assert!(
                (x - y).abs() / denom < tol || (x - y).abs() < 1e-9,
                "analytic {x} vs numeric {y}"
            );
        }
    }

    /// Exercises every op in one scalar expression.
    fn composite(store: &ParamStore, ids: &[ParamId; 5]) -> (f64, Gradients) {
        let mut g = Graph::new(store);
        let table = g.param(ids[0]);
        let w = g.param(ids[1]);
        let b = g.param(ids[2]);
        let gamma = g.param(ids[3]);
        let beta = g.param(ids[4]);
        let x = g.gather_rows(table, &[0, 2, 2, 1]);
        let h = g.matmul(x, w);
        let h = g.add_row(h, b);
        let h = g.layer_norm(h, gamma, beta, 1e-5);
        let scores = g.matmul_nt(h, x);
        let scores = g.scale(scores, 0.5);
        let bias = Array2::from_shape_fn((4, 4), |(i, j)| 0.01 * (i + j) as f64);
        let scores = g.add_const(scores, &bias);
        let attn = g.softmax_rows(scores);
        let ctx = g.matmul(attn, h);
        let left = g.slice_cols(ctx, 0, 2);
        let right = g.slice_cols(ctx, 2, 1);
        let joined = g.concat_cols(&[right, left]);
        let top = g.slice_rows(joined, 0, 2);
        let bottom = g.slice_rows(joined, 2, 2);
        let stacked = g.concat_rows(&[bottom, top]);
        let act = g.relu(stacked);
        let mixed = g.add(act, stacked);
        let col = g.slice_cols(mixed, 1, 1);
        let p = g.sigmoid(col);
        let loss = g.balanced_ce_mean(p, &[true, false, false, true], 1.0, 0.5);
        let loss2 = g.scale(loss, 3.0);
        let total = g.add(loss, loss2);
        let value = g.value(total)[[0, 0]];
        let grads = g.backward(total);
        (value, grads)
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let ids = [
            store.add_normal("table", 3, 3, 0.8, &mut rng),
            store.add_normal("w", 3, 3, 0.8, &mut rng),
            store.add_normal("b", 1, 3, 0.3, &mut rng),
            store.add_normal("gamma", 1, 3, 0.5, &mut rng),
            store.add_normal("beta", 1, 3, 0.5, &mut rng),
        ];
        let (_, grads) = composite(&store, &ids);
        for id in ids {
            let numeric = numeric_grad(&mut store, id, &|s| composite(s, &ids).0);
            assert_close(grads.get(id).unwrap(), &numeric, 1e-5);
        }
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let m = array![[1000.0, 0.0, -1000.0], [0.5, 0.5, 0.5]];
        let s = softmax_rows(&m);
        for row in s.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert!((s[[1, 0]] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn balanced_ce_closed_forms() {
        assert!((balanced_ce(0.5, false, 1.0, 0.5) - 0.5 * 2f64.ln()).abs() < 1e-12);
        assert!((balanced_ce(0.1, true, 1.0, 0.5) - 10f64.ln()).abs() < 1e-12);
        assert!(balanced_ce(0.0, true, 1.0, 1.0).is_finite());
        assert!(balanced_ce(1.0, false, 1.0, 1.0).is_finite());
    }

    #[test]
    fn empty_loss_is_zero() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let p = g.constant(Array2::zeros((0, 1)));
        let l = g.balanced_ce_mean(p, &[], 1.0, 1.0);
        assert_eq!(g.value(l)[[0, 0]], 0.0);
    }
}
