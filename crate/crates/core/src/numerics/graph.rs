//! Eager reverse-mode differentiation over a tape of tensor ops.
//!
//! Values are computed as ops are recorded; `backward` walks the tape in
//! reverse and accumulates gradients into leaf parameters. Accumulation is
//! in fixed tape order so runs are reproducible.

use std::collections::BTreeMap;

use super::tensor::{matmul, matmul_at, matmul_bt, Tensor};
use super::NumericsError;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    /// Constant or named parameter leaf.
    Leaf { param: Option<String> },
    Matmul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    /// a[m,n] + bias[1,n], broadcast over rows.
    AddRowVec(usize, usize),
    /// a[m,n] * b[m,1], broadcast over columns.
    MulColVec(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    /// c - a
    RsubScalar(usize),
    Exp(usize),
    Relu(usize),
    Softplus(usize),
    Sigmoid(usize),
    /// Exclusive prefix sum along the last axis of a rank-2 tensor.
    CumsumExclusive(usize),
    /// Row-wise sum [m,n] -> [m,1].
    SumRows(usize),
    /// Sum of every group of `group` consecutive rows: [g*m, n] -> [m, n].
    SumGroupRows(usize, usize),
    SumAll(usize),
    MeanAll(usize),
    ConcatCols(Vec<usize>),
    /// Row gather; index < 0 yields a zero row.
    GatherRows { input: usize, indices: Vec<i64> },
    /// Row i scaled by factors[i].
    ScaleRows { input: usize, factors: Vec<f64> },
    Reshape(usize),
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Tape of eagerly evaluated tensor operations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf { param: None }, value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Leaf that participates in `backward` and reports its gradient under
    /// `name`.
    pub fn param(&mut self, name: &str, value: Tensor) -> Var {
        self.push(
            Op::Leaf {
                param: Some(name.to_string()),
            },
            value,
            true,
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = matmul(self.value(a), self.value(b));
        let rg = self.needs(a) || self.needs(b);
        self.push(Op::Matmul(a.0, b.0), value, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = zip(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.needs(a) || self.needs(b);
        self.push(Op::Add(a.0, b.0), value, rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = zip(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.needs(a) || self.needs(b);
        self.push(Op::Sub(a.0, b.0), value, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = zip(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a.0, b.0), value, rg)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let value = zip(self.value(a), self.value(b), |x, y| x / y);
        let rg = self.needs(a) || self.needs(b);
        self.push(Op::Div(a.0, b.0), value, rg)
    }

    pub fn add_row_vec(&mut self, a: Var, bias: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(bias));
        let n = av.ncols();
        debug_assert_eq!(bv.len(), n, "bias length must match columns");
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (x, b) in row.iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        let rg = self.needs(a) || self.needs(bias);
        self.push(Op::AddRowVec(a.0, bias.0), out, rg)
    }

    pub fn mul_col_vec(&mut self, a: Var, col: Var) -> Var {
        let (av, cv) = (self.value(a), self.value(col));
        let n = av.ncols();
        debug_assert_eq!(cv.len(), av.nrows(), "column factor must match rows");
        let mut out = av.clone();
        for (i, row) in out.data_mut().chunks_mut(n).enumerate() {
            let f = cv.data()[i];
            for x in row.iter_mut() {
                *x *= f;
            }
        }
        let rg = self.needs(a) || self.needs(col);
        self.push(Op::MulColVec(a.0, col.0), out, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = map(self.value(a), |x| x * c);
        let rg = self.needs(a);
        self.push(Op::Scale(a.0, c), value, rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = map(self.value(a), |x| x + c);
        let rg = self.needs(a);
        self.push(Op::AddScalar(a.0), value, rg)
    }

    pub fn rsub_scalar(&mut self, c: f64, a: Var) -> Var {
        let value = map(self.value(a), |x| c - x);
        let rg = self.needs(a);
        self.push(Op::RsubScalar(a.0), value, rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = map(self.value(a), f64::exp);
        let rg = self.needs(a);
        self.push(Op::Exp(a.0), value, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = map(self.value(a), |x| x.max(0.0));
        let rg = self.needs(a);
        self.push(Op::Relu(a.0), value, rg)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = map(self.value(a), softplus);
        let rg = self.needs(a);
        self.push(Op::Softplus(a.0), value, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = map(self.value(a), sigmoid);
        let rg = self.needs(a);
        self.push(Op::Sigmoid(a.0), value, rg)
    }

    pub fn cumsum_exclusive(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = av.ncols();
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(n) {
            let mut acc = 0.0;
            for x in row.iter_mut() {
                let cur = *x;
                *x = acc;
                acc += cur;
            }
        }
        let rg = self.needs(a);
        self.push(Op::CumsumExclusive(a.0), out, rg)
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (m, n) = (av.nrows(), av.ncols());
        let mut out = Tensor::zeros(vec![m, 1]);
        for i in 0..m {
            out.data_mut()[i] = av.data()[i * n..(i + 1) * n].iter().sum();
        }
        let rg = self.needs(a);
        self.push(Op::SumRows(a.0), out, rg)
    }

    pub fn sum_group_rows(&mut self, a: Var, group: usize) -> Var {
        let av = self.value(a);
        let (gm, n) = (av.nrows(), av.ncols());
        debug_assert_eq!(gm % group, 0, "rows must divide evenly into groups");
        let m = gm / group;
        let mut out = Tensor::zeros(vec![m, n]);
        for i in 0..gm {
            let o = (i / group) * n;
            for j in 0..n {
                out.data_mut()[o + j] += av.data()[i * n + j];
            }
        }
        let rg = self.needs(a);
        self.push(Op::SumGroupRows(a.0, group), out, rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        let rg = self.needs(a);
        self.push(Op::SumAll(a.0), value, rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let value = Tensor::scalar(av.data().iter().sum::<f64>() / av.len() as f64);
        let rg = self.needs(a);
        self.push(Op::MeanAll(a.0), value, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let m = self.value(parts[0]).nrows();
        let total: usize = parts.iter().map(|p| self.value(*p).ncols()).sum();
        let mut out = Tensor::zeros(vec![m, total]);
        let mut col = 0;
        for p in parts {
            let pv = self.value(*p);
            debug_assert_eq!(pv.nrows(), m, "concat_cols row mismatch");
            let n = pv.ncols();
            for i in 0..m {
                out.data_mut()[i * total + col..i * total + col + n]
                    .copy_from_slice(&pv.data()[i * n..(i + 1) * n]);
            }
            col += n;
        }
        let rg = parts.iter().any(|p| self.needs(*p));
        self.push(Op::ConcatCols(parts.iter().map(|p| p.0).collect()), out, rg)
    }

    /// Gather rows of `a` by index; a negative index produces a zero row.
    pub fn gather_rows(&mut self, a: Var, indices: Vec<i64>) -> Var {
        let av = self.value(a);
        let n = av.ncols();
        let rows = av.nrows();
        let mut out = Tensor::zeros(vec![indices.len(), n]);
        for (i, &idx) in indices.iter().enumerate() {
            if idx >= 0 {
                let idx = idx as usize;
                debug_assert!(idx < rows, "gather index out of range");
                out.data_mut()[i * n..(i + 1) * n]
                    .copy_from_slice(&av.data()[idx * n..(idx + 1) * n]);
            }
        }
        let rg = self.needs(a);
        self.push(Op::GatherRows { input: a.0, indices }, out, rg)
    }

    pub fn scale_rows(&mut self, a: Var, factors: Vec<f64>) -> Var {
        let av = self.value(a);
        let n = av.ncols();
        debug_assert_eq!(factors.len(), av.nrows());
        let mut out = av.clone();
        for (i, row) in out.data_mut().chunks_mut(n).enumerate() {
            for x in row.iter_mut() {
                *x *= factors[i];
            }
        }
        let rg = self.needs(a);
        self.push(Op::ScaleRows { input: a.0, factors }, out, rg)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let value = self.value(a).clone().reshaped(shape).expect("reshape size");
        let rg = self.needs(a);
        self.push(Op::Reshape(a.0), value, rg)
    }

    /// Reverse pass from a scalar loss node. Returns gradients keyed by
    /// parameter name; parameters created with `param` that do not influence
    /// the loss are absent from the map.
    pub fn backward(&mut self, loss: Var) -> Result<BTreeMap<String, Tensor>, NumericsError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NumericsError::ShapeMismatch {
                context: "backward",
                expected: "scalar loss".into(),
                got: format!("shape {:?}", lv.shape()),
            });
        }
        if !lv.item().is_finite() {
            return Err(NumericsError::NonFiniteLoss {
                op: self.first_non_finite_op(),
            });
        }

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf { .. } => {
                    grads[id] = Some(g); // keep for collection below
                }
                &Op::Matmul(a, b) => {
                    if self.nodes[a].requires_grad {
                        let da = matmul_bt(&g, &self.nodes[b].value);
                        accumulate(&mut grads[a], da);
                    }
                    if self.nodes[b].requires_grad {
                        let db = matmul_at(&self.nodes[a].value, &g);
                        accumulate(&mut grads[b], db);
                    }
                }
                &Op::Add(a, b) => {
                    if self.nodes[a].requires_grad {
                        accumulate(&mut grads[a], g.clone());
                    }
                    if self.nodes[b].requires_grad {
                        accumulate(&mut grads[b], g);
                    }
                }
                &Op::Sub(a, b) => {
                    if self.nodes[a].requires_grad {
                        accumulate(&mut grads[a], g.clone());
                    }
                    if self.nodes[b].requires_grad {
                        accumulate(&mut grads[b], map(&g, |x| -x));
                    }
                }
                &Op::Mul(a, b) => {
                    if self.nodes[a].requires_grad {
                        let da = zip(&g, &self.nodes[b].value, |x, y| x * y);
                        accumulate(&mut grads[a], da);
                    }
                    if self.nodes[b].requires_grad {
                        let db = zip(&g, &self.nodes[a].value, |x, y| x * y);
                        accumulate(&mut grads[b], db);
                    }
                }
                &Op::Div(a, b) => {
                    if self.nodes[a].requires_grad {
                        let da = zip(&g, &self.nodes[b].value, |x, y| x / y);
                        accumulate(&mut grads[a], da);
                    }
                    if self.nodes[b].requires_grad {
                        let av = &self.nodes[a].value;
                        let bv = &self.nodes[b].value;
                        let mut db = g.clone();
                        for i in 0..db.len() {
                            let b_i = bv.data()[i];
                            db.data_mut()[i] *= -av.data()[i] / (b_i * b_i);
                        }
                        accumulate(&mut grads[b], db);
                    }
                }
                &Op::AddRowVec(a, bias) => {
                    if self.nodes[a].requires_grad {
                        accumulate(&mut grads[a], g.clone());
                    }
                    if self.nodes[bias].requires_grad {
                        let n = self.nodes[bias].value.len();
                        let mut db = Tensor::zeros(self.nodes[bias].value.shape().to_vec());
                        for row in g.data().chunks(n) {
                            for (acc, x) in db.data_mut().iter_mut().zip(row) {
                                *acc += x;
                            }
                        }
                        accumulate(&mut grads[bias], db);
                    }
                }
                &Op::MulColVec(a, col) => {
                    let n = self.nodes[a].value.ncols();
                    if self.nodes[a].requires_grad {
                        let cv = &self.nodes[col].value;
                        let mut da = g.clone();
                        for (i, row) in da.data_mut().chunks_mut(n).enumerate() {
                            let f = cv.data()[i];
                            for x in row.iter_mut() {
                                *x *= f;
                            }
                        }
                        accumulate(&mut grads[a], da);
                    }
                    if self.nodes[col].requires_grad {
                        let av = &self.nodes[a].value;
                        let m = av.nrows();
                        let mut dc = Tensor::zeros(vec![m, 1]);
                        for i in 0..m {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g.data()[i * n + j] * av.data()[i * n + j];
                            }
                            dc.data_mut()[i] = acc;
                        }
                        accumulate(&mut grads[col], dc);
                    }
                }
                &Op::Scale(a, c) => accumulate(&mut grads[a], map(&g, |x| x * c)),
                &Op::AddScalar(a) => accumulate(&mut grads[a], g),
                &Op::RsubScalar(a) => accumulate(&mut grads[a], map(&g, |x| -x)),
                &Op::Exp(a) => {
                    let da = zip(&g, &self.nodes[id].value, |x, y| x * y);
                    accumulate(&mut grads[a], da);
                }
                &Op::Relu(a) => {
                    let da = zip(&g, &self.nodes[a].value, |x, v| if v > 0.0 { x } else { 0.0 });
                    accumulate(&mut grads[a], da);
                }
                &Op::Softplus(a) => {
                    let da = zip(&g, &self.nodes[a].value, |x, v| x * sigmoid(v));
                    accumulate(&mut grads[a], da);
                }
                &Op::Sigmoid(a) => {
                    let da = zip(&g, &self.nodes[id].value, |x, s| x * s * (1.0 - s));
                    accumulate(&mut grads[a], da);
                }
                &Op::CumsumExclusive(a) => {
                    // out[i] = sum_{j<i} in[j]  =>  din[j] = sum_{i>j} g[i]
                    let n = self.nodes[a].value.ncols();
                    let mut da = g.clone();
                    for row in da.data_mut().chunks_mut(n) {
                        let mut acc = 0.0;
                        for x in row.iter_mut().rev() {
                            let cur = *x;
                            *x = acc;
                            acc += cur;
                        }
                    }
                    accumulate(&mut grads[a], da);
                }
                &Op::SumRows(a) => {
                    let (m, n) = (self.nodes[a].value.nrows(), self.nodes[a].value.ncols());
                    let mut da = Tensor::zeros(vec![m, n]);
                    for i in 0..m {
                        let gi = g.data()[i];
                        for x in da.data_mut()[i * n..(i + 1) * n].iter_mut() {
                            *x = gi;
                        }
                    }
                    accumulate(&mut grads[a], da);
                }
                &Op::SumGroupRows(a, group) => {
                    let (gm, n) = (self.nodes[a].value.nrows(), self.nodes[a].value.ncols());
                    let mut da = Tensor::zeros(vec![gm, n]);
                    for i in 0..gm {
                        let src = (i / group) * n;
                        da.data_mut()[i * n..(i + 1) * n]
                            .copy_from_slice(&g.data()[src..src + n]);
                    }
                    accumulate(&mut grads[a], da);
                }
                &Op::SumAll(a) => {
                    let gi = g.item();
                    let da = Tensor::full(self.nodes[a].value.shape().to_vec(), gi);
                    accumulate(&mut grads[a], da);
                }
                &Op::MeanAll(a) => {
                    let scale = g.item() / self.nodes[a].value.len() as f64;
                    let da = Tensor::full(self.nodes[a].value.shape().to_vec(), scale);
                    accumulate(&mut grads[a], da);
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let total = self.nodes[id].value.ncols();
                    let m = self.nodes[id].value.nrows();
                    let mut col = 0;
                    for p in parts {
                        let n = self.nodes[p].value.ncols();
                        if self.nodes[p].requires_grad {
                            let mut dp = Tensor::zeros(vec![m, n]);
                            for i in 0..m {
                                dp.data_mut()[i * n..(i + 1) * n].copy_from_slice(
                                    &g.data()[i * total + col..i * total + col + n],
                                );
                            }
                            accumulate(&mut grads[p], dp);
                        }
                        col += n;
                    }
                }
                Op::GatherRows { input, indices } => {
                    let input = *input;
                    let n = self.nodes[input].value.ncols();
                    let m = self.nodes[input].value.nrows();
                    let mut da = Tensor::zeros(vec![m, n]);
                    for (i, &idx) in indices.iter().enumerate() {
                        if idx >= 0 {
                            let o = idx as usize * n;
                            for j in 0..n {
                                da.data_mut()[o + j] += g.data()[i * n + j];
                            }
                        }
                    }
                    accumulate(&mut grads[input], da);
                }
                Op::ScaleRows { input, factors } => {
                    let input = *input;
                    let n = self.nodes[input].value.ncols();
                    let mut da = g.clone();
                    for (i, row) in da.data_mut().chunks_mut(n).enumerate() {
                        for x in row.iter_mut() {
                            *x *= factors[i];
                        }
                    }
                    accumulate(&mut grads[input], da);
                }
                &Op::Reshape(a) => {
                    let da = g
                        .clone()
                        .reshaped(self.nodes[a].value.shape().to_vec())
                        .expect("reshape backward");
                    accumulate(&mut grads[a], da);
                }
            }
        }

        let mut out = BTreeMap::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(name) } = &node.op {
                if let Some(g) = grads[id].take() {
                    out.insert(name.clone(), g);
                }
            }
        }
        Ok(out)
    }

    /// Names the earliest op on the tape whose value contains a non-finite
    /// entry; used for divergence diagnostics.
    fn first_non_finite_op(&self) -> String {
        for node in &self.nodes {
            if !node.value.all_finite() {
                return op_name(&node.op).to_string();
            }
        }
        "unknown".to_string()
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf { .. } => "leaf",
        Op::Matmul(..) => "matmul",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::AddRowVec(..) => "add_row_vec",
        Op::MulColVec(..) => "mul_col_vec",
        Op::Scale(..) => "scale",
        Op::AddScalar(..) => "add_scalar",
        Op::RsubScalar(..) => "rsub_scalar",
        Op::Exp(..) => "exp",
        Op::Relu(..) => "relu",
        Op::Softplus(..) => "softplus",
        Op::Sigmoid(..) => "sigmoid",
        Op::CumsumExclusive(..) => "cumsum_exclusive",
        Op::SumRows(..) => "sum_rows",
        Op::SumGroupRows(..) => "sum_group_rows",
        Op::SumAll(..) => "sum_all",
        Op::MeanAll(..) => "mean_all",
        Op::ConcatCols(..) => "concat_cols",
        Op::GatherRows { .. } => "gather_rows",
        Op::ScaleRows { .. } => "scale_rows",
        Op::Reshape(..) => "reshape",
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            debug_assert_eq!(acc.shape(), g.shape(), "gradient shape mismatch");
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let mut out = t.clone();
    for x in out.data_mut() {
        *x = f(*x);
    }
    out
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    let mut out = a.clone();
    for (x, y) in out.data_mut().iter_mut().zip(b.data()) {
        *x = f(*x, *y);
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    // ln(1 + e^x), overflow-safe.
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}
