//! Reverse-mode differentiation over the handful of matrix ops the encoders
//! and the contrastive loss are built from.
//!
//! Every node holds a row-major `rows x cols` value. Scalars are `1 x 1`.
//! Nodes are appended in evaluation order, so a reverse sweep over the node
//! list is a valid topological order for accumulation.

use std::collections::BTreeMap;

use super::{linear_rows, log_sum_exp, ParamSet, Tensor, NORM_EPS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

pub type ParamVars = BTreeMap<String, Var>;

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    NormalizeRows { a: Var, norms: Vec<f64> },
    MatMulNt(Var, Var),
    RowDot(Var, Var),
    ConcatCols(Var, Var),
    LogSumExpRows(Var),
    Exp(Var),
    Neg(Var),
    MulScalar { a: Var, s: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// Input node holding a copy of `t` (viewed as a matrix).
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.rows_cols();
        self.push(r, c, t.data().to_vec(), Op::Leaf)
    }

    /// Input node from raw row-major data.
    pub fn input(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        if rows * cols != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tape input",
                left: vec![rows, cols],
                right: vec![data.len()],
            });
        }
        Ok(self.push(rows, cols, data, Op::Leaf))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        match self.shape(v) {
            (1, 1) => Ok(self.value(v)[0]),
            (r, c) => Err(Error::ShapeMismatch {
                op: "scalar",
                left: vec![r, c],
                right: vec![1, 1],
            }),
        }
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        Error::ShapeMismatch {
            op,
            left: vec![ar, ac],
            right: vec![br, bc],
        }
    }

    /// `x W^T + b` row-wise: `x` is `n x in`, `w` is `out x in`, `b` is `1 x out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, in_dim) = self.shape(x);
        let (out_dim, w_in) = self.shape(w);
        if w_in != in_dim {
            return Err(self.mismatch("linear", w, x));
        }
        if self.shape(b) != (1, out_dim) {
            return Err(self.mismatch("linear bias", w, b));
        }
        let y = linear_rows(
            self.value(x),
            n,
            in_dim,
            self.value(w),
            out_dim,
            self.value(b),
        );
        Ok(self.push(n, out_dim, y, Op::Linear { x, w, b }))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let y = super::relu(self.value(a));
        self.push(r, c, y, Op::Relu(a))
    }

    /// Scales every row to unit L2 norm; any row with norm `<= NORM_EPS`
    /// is an error.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let src = self.value(a);
        let mut norms = Vec::with_capacity(r);
        let mut y = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let n = super::norm(row);
            if !n.is_finite() {
                return Err(Error::at_index(i, Error::NonFinite("embedding".into())));
            }
            if n <= NORM_EPS {
                return Err(Error::at_index(i, Error::Degenerate { norm: n }));
            }
            y.extend(row.iter().map(|v| v / n));
            norms.push(n);
        }
        Ok(self.push(r, c, y, Op::NormalizeRows { a, norms }))
    }

    /// `a b^T`: `n x d` times `(m x d)^T` gives `n x m`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, d) = self.shape(a);
        let (m, db) = self.shape(b);
        if d != db {
            return Err(self.mismatch("matmul_nt", a, b));
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut y = Vec::with_capacity(n * m);
        for i in 0..n {
            let ai = &av[i * d..(i + 1) * d];
            for j in 0..m {
                y.push(super::dot(ai, &bv[j * d..(j + 1) * d]));
            }
        }
        Ok(self.push(n, m, y, Op::MatMulNt(a, b)))
    }

    /// Per-row dot product of two equally shaped matrices, giving `n x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("row_dot", a, b));
        }
        let (n, d) = self.shape(a);
        let av = self.value(a);
        let bv = self.value(b);
        let y = (0..n)
            .map(|i| super::dot(&av[i * d..(i + 1) * d], &bv[i * d..(i + 1) * d]))
            .collect();
        Ok(self.push(n, 1, y, Op::RowDot(a, b)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, p) = self.shape(a);
        let (nb, q) = self.shape(b);
        if n != nb {
            return Err(self.mismatch("concat_cols", a, b));
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut y = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            y.extend_from_slice(&av[i * p..(i + 1) * p]);
            y.extend_from_slice(&bv[i * q..(i + 1) * q]);
        }
        Ok(self.push(n, p + q, y, Op::ConcatCols(a, b)))
    }

    /// Stable `ln Σ_j exp(a_ij)` per row, giving `n x 1`.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Result<Var> {
        let (n, c) = self.shape(a);
        if c == 0 {
            return Err(Error::InvalidArgument("log-sum-exp over an empty row".into()));
        }
        let av = self.value(a);
        let y = (0..n).map(|i| log_sum_exp(&av[i * c..(i + 1) * c])).collect();
        Ok(self.push(n, 1, y, Op::LogSumExpRows(a)))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let y = self.value(a).iter().map(|v| v.exp()).collect();
        self.push(r, c, y, Op::Exp(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let y = self.value(a).iter().map(|v| -v).collect();
        self.push(r, c, y, Op::Neg(a))
    }

    /// Multiplies every entry of `a` by the `1 x 1` node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let k = self.scalar(s)?;
        let (r, c) = self.shape(a);
        let y = self.value(a).iter().map(|v| v * k).collect();
        Ok(self.push(r, c, y, Op::MulScalar { a, s }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("add", a, b));
        }
        let (r, c) = self.shape(a);
        let y = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(r, c, y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("sub", a, b));
        }
        let (r, c) = self.shape(a);
        let y = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(r, c, y, Op::Sub(a, b)))
    }

    /// Sum of all entries, left to right.
    pub fn sum(&mut self, a: Var) -> Var {
        let mut acc = 0.0;
        for v in self.value(a) {
            acc += v;
        }
        self.push(1, 1, vec![acc], Op::Sum(a))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let value = self.scalar(loss)?;
        if !value.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Linear { x, w, b } => {
                    let (n, in_dim) = self.shape(*x);
                    let out_dim = node.cols;
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    {
                        let dx = slot(&mut grads, *x, n * in_dim);
                        for i in 0..n {
                            for o in 0..out_dim {
                                let go = g[i * out_dim + o];
                                if go == 0.0 {
                                    continue;
                                }
                                let wo = &wv[o * in_dim..(o + 1) * in_dim];
                                let dxi = &mut dx[i * in_dim..(i + 1) * in_dim];
                                for k in 0..in_dim {
                                    dxi[k] += go * wo[k];
                                }
                            }
                        }
                    }
                    {
                        let dw = slot(&mut grads, *w, out_dim * in_dim);
                        for i in 0..n {
                            let xi = &xv[i * in_dim..(i + 1) * in_dim];
                            for o in 0..out_dim {
                                let go = g[i * out_dim + o];
                                if go == 0.0 {
                                    continue;
                                }
                                let dwo = &mut dw[o * in_dim..(o + 1) * in_dim];
                                for k in 0..in_dim {
                                    dwo[k] += go * xi[k];
                                }
                            }
                        }
                    }
                    let db = slot(&mut grads, *b, out_dim);
                    for i in 0..n {
                        for o in 0..out_dim {
                            db[o] += g[i * out_dim + o];
                        }
                    }
                }
                Op::Relu(a) => {
                    let av = self.value(*a);
                    let da = slot(&mut grads, *a, av.len());
                    for ((d, x), gi) in da.iter_mut().zip(av).zip(&g) {
                        if *x > 0.0 {
                            *d += gi;
                        }
                    }
                }
                Op::NormalizeRows { a, norms } => {
                    let c = node.cols;
                    let y = &node.value;
                    let da = slot(&mut grads, *a, y.len());
                    for (i, n) in norms.iter().enumerate() {
                        let yi = &y[i * c..(i + 1) * c];
                        let gi = &g[i * c..(i + 1) * c];
                        let proj = super::dot(yi, gi);
                        for k in 0..c {
                            da[i * c + k] += (gi[k] - yi[k] * proj) / n;
                        }
                    }
                }
                Op::MatMulNt(a, b) => {
                    let (n, d) = self.shape(*a);
                    let m = node.cols;
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    {
                        let da = slot(&mut grads, *a, n * d);
                        for i in 0..n {
                            for j in 0..m {
                                let gij = g[i * m + j];
                                for k in 0..d {
                                    da[i * d + k] += gij * bv[j * d + k];
                                }
                            }
                        }
                    }
                    let db = slot(&mut grads, *b, m * d);
                    for i in 0..n {
                        for j in 0..m {
                            let gij = g[i * m + j];
                            for k in 0..d {
                                db[j * d + k] += gij * av[i * d + k];
                            }
                        }
                    }
                }
                Op::RowDot(a, b) => {
                    let (n, d) = self.shape(*a);
                    let av = self.value(*a).to_vec();
                    let bv = self.value(*b).to_vec();
                    {
                        let da = slot(&mut grads, *a, n * d);
                        for i in 0..n {
                            for k in 0..d {
                                da[i * d + k] += g[i] * bv[i * d + k];
                            }
                        }
                    }
                    let db = slot(&mut grads, *b, n * d);
                    for i in 0..n {
                        for k in 0..d {
                            db[i * d + k] += g[i] * av[i * d + k];
                        }
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (n, p) = self.shape(*a);
                    let q = self.shape(*b).1;
                    let w = p + q;
                    {
                        let da = slot(&mut grads, *a, n * p);
                        for i in 0..n {
                            for k in 0..p {
                                da[i * p + k] += g[i * w + k];
                            }
                        }
                    }
                    let db = slot(&mut grads, *b, n * q);
                    for i in 0..n {
                        for k in 0..q {
                            db[i * q + k] += g[i * w + p + k];
                        }
                    }
                }
                Op::LogSumExpRows(a) => {
                    let (n, c) = self.shape(*a);
                    let av = self.value(*a);
                    let lse = &node.value;
                    let da = slot(&mut grads, *a, n * c);
                    for i in 0..n {
                        for j in 0..c {
                            da[i * c + j] += g[i] * (av[i * c + j] - lse[i]).exp();
                        }
                    }
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    let da = slot(&mut grads, *a, y.len());
                    for k in 0..y.len() {
                        da[k] += g[k] * y[k];
                    }
                }
                Op::Neg(a) => {
                    let da = slot(&mut grads, *a, g.len());
                    for k in 0..g.len() {
                        da[k] -= g[k];
                    }
                }
                Op::MulScalar { a, s } => {
                    let k = self.value(*s)[0];
                    let av = self.value(*a);
                    let mut ds = 0.0;
                    for (gi, x) in g.iter().zip(av) {
                        ds += gi * x;
                    }
                    {
                        let da = slot(&mut grads, *a, av.len());
                        for (d, gi) in da.iter_mut().zip(&g) {
                            *d += gi * k;
                        }
                    }
                    slot(&mut grads, *s, 1)[0] += ds;
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    {
                        let da = slot(&mut grads, *a, g.len());
                        for k in 0..g.len() {
                            da[k] += g[k];
                        }
                    }
                    let db = slot(&mut grads, *b, g.len());
                    for k in 0..g.len() {
                        db[k] += sign * g[k];
                    }
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    let da = slot(&mut grads, *a, n);
                    for d in da.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// Result of a reverse sweep. Nodes the loss does not depend on have no entry.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients laid out like `params`; untouched parameters get zeros.
    pub fn to_param_set(&self, params: &ParamSet, vars: &ParamVars) -> Result<ParamSet> {
        params
            .iter()
            .map(|(name, t)| {
                let var = vars
                    .get(name)
                    .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
                let data = match self.get(*var) {
                    Some(g) => g.to_vec(),
                    None => vec![0.0; t.len()],
                };
                Ok((name.to_string(), Tensor::new(t.shape().to_vec(), data)?))
            })
            .collect::<Result<Vec<_>>>()
            .map(|v| v.into_iter().collect())
    }
}

/// Registers every parameter of `params` as a leaf, evaluates `build`, and
/// returns the loss value together with `∂loss/∂θ` for every parameter.
pub fn backward<F>(params: &ParamSet, build: F) -> Result<(f64, ParamSet)>
where
    F: FnOnce(&mut Tape, &ParamVars) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: ParamVars = params
        .iter()
        .map(|(name, t)| (name.to_string(), tape.leaf(t)))
        .collect();
    let loss = build(&mut tape, &vars)?;
    let value = tape.scalar(loss)?;
    let grads = tape.gradients(loss)?;
    Ok((value, grads.to_param_set(params, &vars)?))
}
