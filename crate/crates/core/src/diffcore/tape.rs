//! Define-by-run reverse-mode differentiation.
//!
//! Every primitive appends a node to the [`Tape`]; [`Tape::backward`] walks
//! the nodes in exact reverse order and accumulates adjoints additively.
//! Parameter leaves borrow their values from the [`ParamStore`] instead of
//! copying them, so an embedding table is never duplicated per forward pass.

use std::collections::HashMap;

use super::tensor::dims_of;
use super::{Gradients, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// ELU scale used throughout the model.
pub const ELU_ALPHA: f64 = 1.0;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Mean(Var, usize),
    Sum(Var),
    Softmax(Var),
    LogSoftmax(Var),
    SegmentSoftmax(Var, Vec<usize>),
    Elu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    RepeatRow(Var),
    Pick(Var, Vec<usize>),
    Stack(Vec<Var>),
    LogSumExp(Var),
    Reshape(Var),
}

enum Value {
    Owned(Vec<f64>),
    Param(ParamId),
}

struct Node {
    shape: Vec<usize>,
    value: Value,
    op: Op,
}

/// Record of one forward pass.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    consumed: bool,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            consumed: false,
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].value {
            Value::Owned(d) => d,
            Value::Param(id) => self.params.tensor(*id).data(),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        dims_of(self.shape(v))
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec())
            .expect("tape nodes hold consistent shapes")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                op: format!("{op:?}")
                    .split(['(', ' '])
                    .next()
                    .unwrap_or("op")
                    .to_string(),
            });
        }
        self.nodes.push(Node {
            shape,
            value: Value::Owned(data),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Constant)
    }

    /// Leaf for a registered parameter; repeated calls return the same var.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let id = self.params.id(name)?;
        Ok(self.param_by_id(id))
    }

    pub fn param_by_id(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let shape = self.params.tensor(id).shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: Value::Param(id),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    /// `[m,k] x [k,n] -> [m,n]`; a rank-1 left operand yields a rank-1 result.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 || self.shape(b).len() != 2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out = matmul_raw(self.value(a), self.value(b), m, k, n);
        let shape = if self.shape(a).len() == 1 {
            vec![n]
        } else {
            vec![m, n]
        };
        self.push(shape, out, Op::MatMul(a, b))
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn row_broadcast(&self, op: &'static str, x: Var, row: Var) -> Result<(usize, usize)> {
        let (r, c) = self.dims(x);
        if self.shape(row).len() != 1 || self.shape(row)[0] != c {
            return Err(Error::Shape {
                op,
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(row).to_vec(),
            });
        }
        Ok((r, c))
    }

    /// Adds the vector `row` to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, c) = self.row_broadcast("add_row", x, row)?;
        let rv = self.value(row);
        let out = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + rv[i % c])
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::AddRow(x, row))
    }

    /// Multiplies every row of `x` element-wise by the vector `row`.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, c) = self.row_broadcast("mul_row", x, row)?;
        let rv = self.value(row);
        let out = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v * rv[i % c])
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::MulRow(x, row))
    }

    /// Scales row `i` of `x` by `col[i]`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.value(col).len() != r || self.shape(x).len() != 2 {
            return Err(Error::Shape {
                op: "mul_col",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(col).to_vec(),
            });
        }
        let cv = self.value(col);
        let out = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v * cv[i / c.max(1)])
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::MulCol(x, col))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out = self.value(x).iter().map(|v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Scale(x, factor))
    }

    /// Concatenation along the last axis; all parts share their row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let rank = self.shape(first).len();
        let rows = self.dims(first).0;
        for &p in parts {
            if self.shape(p).len() != rank || self.dims(p).0 != rows || rank == 0 {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let c = self.dims(p).1;
                out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        let shape = if rank == 1 {
            vec![total]
        } else {
            vec![rows, total]
        };
        self.push(shape, out, Op::Concat(parts.to_vec()))
    }

    /// Mean of a matrix over `axis` (0: over rows, 1: over columns), or of
    /// a vector over its only axis.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (r, c) = self.dims(x);
        let bad = || Error::Shape {
            op: "mean",
            lhs: shape.clone(),
            rhs: vec![axis],
        };
        let (out, out_shape) = match (shape.len(), axis) {
            (1, 0) => {
                if c == 0 {
                    return Err(bad());
                }
                (vec![self.value(x).iter().sum::<f64>() / c as f64], vec![])
            }
            (2, 0) => {
                if r == 0 {
                    return Err(bad());
                }
                let v = self.value(x);
                let mut acc = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        acc[j] += v[i * c + j];
                    }
                }
                acc.iter_mut().for_each(|a| *a /= r as f64);
                (acc, vec![c])
            }
            (2, 1) => {
                if c == 0 {
                    return Err(bad());
                }
                let v = self.value(x);
                let out = (0..r)
                    .map(|i| v[i * c..(i + 1) * c].iter().sum::<f64>() / c as f64)
                    .collect();
                (out, vec![r])
            }
            _ => return Err(bad()),
        };
        self.push(out_shape, out, Op::Mean(x, axis))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().sum();
        self.push(vec![], vec![s], Op::Sum(x))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        let v = self.value(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            softmax_into(&v[i * c..(i + 1) * c], &mut out[i * c..(i + 1) * c]);
        }
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Softmax(x))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        let v = self.value(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &v[i * c..(i + 1) * c];
            let lse = log_sum_exp(row);
            for j in 0..c {
                out[i * c + j] = row[j] - lse;
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::LogSoftmax(x))
    }

    /// Softmax taken independently within each segment: element `e` is
    /// normalized against every element sharing `segments[e]`.
    pub fn segment_softmax(&mut self, x: Var, segments: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if v.len() != segments.len() {
            return Err(Error::Shape {
                op: "segment_softmax",
                lhs: self.shape(x).to_vec(),
                rhs: vec![segments.len()],
            });
        }
        let n_seg = segments.iter().map(|s| s + 1).max().unwrap_or(0);
        let mut maxes = vec![f64::NEG_INFINITY; n_seg];
        for (e, &s) in segments.iter().enumerate() {
            maxes[s] = maxes[s].max(v[e]);
        }
        let mut sums = vec![0.0; n_seg];
        let mut out: Vec<f64> = segments
            .iter()
            .enumerate()
            .map(|(e, &s)| {
                let z = (v[e] - maxes[s]).exp();
                sums[s] += z;
                z
            })
            .collect();
        for (e, &s) in segments.iter().enumerate() {
            out[e] /= sums[s];
        }
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::SegmentSoftmax(x, segments.to_vec()))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, op)
    }

    pub fn elu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, elu, Op::Elu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(
            x,
            |v| if v > 0.0 { v } else { slope * v },
            Op::LeakyRelu(x, slope),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    /// Selects rows of a matrix (or elements of a vector) by index.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(x);
        let rank = self.shape(x).len();
        let (rows, width) = if rank == 1 { (c, 1) } else { (r, c) };
        let v = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            if i >= rows {
                return Err(Error::Index {
                    what: "gather_rows",
                    index: i,
                    len: rows,
                });
            }
            out.extend_from_slice(&v[i * width..(i + 1) * width]);
        }
        let shape = if rank == 1 {
            vec![idx.len()]
        } else {
            vec![idx.len(), c]
        };
        self.push(shape, out, Op::GatherRows(x, idx.to_vec()))
    }

    /// Sums row `k` of `x` into row `idx[k]` of an `n_rows`-row zero matrix.
    pub fn scatter_add_rows(&mut self, x: Var, idx: &[usize], n_rows: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        let rank = self.shape(x).len();
        let (rows, width) = if rank == 1 { (c, 1) } else { (r, c) };
        if rows != idx.len() {
            return Err(Error::Shape {
                op: "scatter_add_rows",
                lhs: self.shape(x).to_vec(),
                rhs: vec![idx.len()],
            });
        }
        let v = self.value(x);
        let mut out = vec![0.0; n_rows * width];
        for (k, &i) in idx.iter().enumerate() {
            if i >= n_rows {
                return Err(Error::Index {
                    what: "scatter_add_rows",
                    index: i,
                    len: n_rows,
                });
            }
            for j in 0..width {
                out[i * width + j] += v[k * width + j];
            }
        }
        let shape = if rank == 1 {
            vec![n_rows]
        } else {
            vec![n_rows, c]
        };
        self.push(shape, out, Op::ScatterAddRows(x, idx.to_vec()))
    }

    /// Tiles a vector into an `n`-row matrix.
    pub fn repeat_row(&mut self, row: Var, n: usize) -> Result<Var> {
        if self.shape(row).len() != 1 {
            return Err(Error::Shape {
                op: "repeat_row",
                lhs: self.shape(row).to_vec(),
                rhs: vec![n],
            });
        }
        let v = self.value(row);
        let c = v.len();
        let mut out = Vec::with_capacity(n * c);
        for _ in 0..n {
            out.extend_from_slice(v);
        }
        self.push(vec![n, c], out, Op::RepeatRow(row))
    }

    /// Picks elements by flat (row-major) index into a vector.
    pub fn pick(&mut self, x: Var, flat: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let mut out = Vec::with_capacity(flat.len());
        for &i in flat {
            out.push(*v.get(i).ok_or(Error::Index {
                what: "pick",
                index: i,
                len: v.len(),
            })?);
        }
        self.push(vec![flat.len()], out, Op::Pick(x, flat.to_vec()))
    }

    /// Stacks scalars into a vector.
    pub fn stack(&mut self, scalars: &[Var]) -> Result<Var> {
        let mut out = Vec::with_capacity(scalars.len());
        for &s in scalars {
            if self.value(s).len() != 1 {
                return Err(Error::NotScalar(self.shape(s).to_vec()));
            }
            out.push(self.value(s)[0]);
        }
        self.push(vec![scalars.len()], out, Op::Stack(scalars.to_vec()))
    }

    /// `log(sum(exp(x)))` over all elements.
    pub fn log_sum_exp(&mut self, x: Var) -> Result<Var> {
        if self.value(x).is_empty() {
            return Err(Error::InvalidArgument("log_sum_exp of empty tensor".into()));
        }
        let lse = log_sum_exp(self.value(x));
        self.push(vec![], vec![lse], Op::LogSumExp(x))
    }

    /// Same data under a new shape of equal element count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.len() > 2 || shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = self.value(x).to_vec();
        self.push(shape.to_vec(), out, Op::Reshape(x))
    }

    /// Reverse pass from a scalar `loss`. Parameters the loss does not reach
    /// receive zero gradients.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::NotScalar(self.shape(loss).to_vec()));
        }
        self.consumed = true;

        let mut grads = Gradients::zeros_like(self.params);
        let mut adj: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = match &node.value {
                Value::Owned(d) => d.as_slice(),
                Value::Param(id) => self.params.tensor(*id).data(),
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => grads.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let (m, k) = self.dims(*a);
                    let n = self.dims(*b).1;
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    // dA = G B^T, dB = A^T G
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * bv[p * n + j];
                            }
                            da[i * k + p] = s;
                        }
                    }
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let a_ip = av[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            let row = &mut db[p * n..(p + 1) * n];
                            for (d, gv) in row.iter_mut().zip(&g[i * n..(i + 1) * n]) {
                                *d += a_ip * gv;
                            }
                        }
                    }
                    add_into(&mut adj, *a, da);
                    add_into(&mut adj, *b, db);
                }
                Op::Add(a, b) => {
                    add_into(&mut adj, *a, g.clone());
                    add_into(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    add_into(&mut adj, *b, g.iter().map(|v| -v).collect());
                    add_into(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let da = g.iter().zip(bv).map(|(g, b)| g * b).collect();
                    let db = g.iter().zip(av).map(|(g, a)| g * a).collect();
                    add_into(&mut adj, *a, da);
                    add_into(&mut adj, *b, db);
                }
                Op::AddRow(x, row) => {
                    let c = self.value(*row).len();
                    let mut drow = vec![0.0; c];
                    for (i, gv) in g.iter().enumerate() {
                        drow[i % c] += gv;
                    }
                    add_into(&mut adj, *row, drow);
                    add_into(&mut adj, *x, g);
                }
                Op::MulRow(x, row) => {
                    let rv = self.value(*row);
                    let xv = self.value(*x);
                    let c = rv.len();
                    let mut drow = vec![0.0; c];
                    let mut dx = vec![0.0; g.len()];
                    for (i, gv) in g.iter().enumerate() {
                        drow[i % c] += gv * xv[i];
                        dx[i] = gv * rv[i % c];
                    }
                    add_into(&mut adj, *row, drow);
                    add_into(&mut adj, *x, dx);
                }
                Op::MulCol(x, col) => {
                    let cv = self.value(*col);
                    let xv = self.value(*x);
                    let c = self.dims(*x).1.max(1);
                    let mut dcol = vec![0.0; cv.len()];
                    let mut dx = vec![0.0; g.len()];
                    for (i, gv) in g.iter().enumerate() {
                        dcol[i / c] += gv * xv[i];
                        dx[i] = gv * cv[i / c];
                    }
                    add_into(&mut adj, *col, dcol);
                    add_into(&mut adj, *x, dx);
                }
                Op::Scale(x, f) => {
                    add_into(&mut adj, *x, g.iter().map(|v| v * f).collect());
                }
                Op::Concat(parts) => {
                    let rows = self.dims(parts[0]).0;
                    let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.dims(p).1;
                        let mut dp = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                        }
                        add_into(&mut adj, p, dp);
                        offset += c;
                    }
                }
                Op::Mean(x, axis) => {
                    let (r, c) = self.dims(*x);
                    let rank = self.shape(*x).len();
                    let dx = match (rank, axis) {
                        (1, _) => vec![g[0] / c as f64; c],
                        (_, 0) => (0..r * c).map(|i| g[i % c] / r as f64).collect(),
                        _ => (0..r * c).map(|i| g[i / c] / c as f64).collect(),
                    };
                    add_into(&mut adj, *x, dx);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    add_into(&mut adj, *x, vec![g[0]; n]);
                }
                Op::Softmax(x) => {
                    let c = self.dims(*x).1;
                    let mut dx = vec![0.0; g.len()];
                    for (row_g, (row_y, row_dx)) in g
                        .chunks(c.max(1))
                        .zip(y.chunks(c.max(1)).zip(dx.chunks_mut(c.max(1))))
                    {
                        let dot: f64 = row_g.iter().zip(row_y).map(|(a, b)| a * b).sum();
                        for j in 0..row_g.len() {
                            row_dx[j] = row_y[j] * (row_g[j] - dot);
                        }
                    }
                    add_into(&mut adj, *x, dx);
                }
                Op::LogSoftmax(x) => {
                    let c = self.dims(*x).1;
                    let mut dx = vec![0.0; g.len()];
                    for (row_g, (row_y, row_dx)) in g
                        .chunks(c.max(1))
                        .zip(y.chunks(c.max(1)).zip(dx.chunks_mut(c.max(1))))
                    {
                        let gsum: f64 = row_g.iter().sum();
                        for j in 0..row_g.len() {
                            row_dx[j] = row_g[j] - row_y[j].exp() * gsum;
                        }
                    }
                    add_into(&mut adj, *x, dx);
                }
                Op::SegmentSoftmax(x, segments) => {
                    let n_seg = segments.iter().map(|s| s + 1).max().unwrap_or(0);
                    let mut dots = vec![0.0; n_seg];
                    for (e, &s) in segments.iter().enumerate() {
                        dots[s] += g[e] * y[e];
                    }
                    let dx = segments
                        .iter()
                        .enumerate()
                        .map(|(e, &s)| y[e] * (g[e] - dots[s]))
                        .collect();
                    add_into(&mut adj, *x, dx);
                }
                Op::Elu(x) => {
                    let xv = self.value(*x);
                    let dx = g
                        .iter()
                        .zip(xv)
                        .map(|(g, &v)| if v > 0.0 { *g } else { g * ELU_ALPHA * v.exp() })
                        .collect();
                    add_into(&mut adj, *x, dx);
                }
                Op::LeakyRelu(x, slope) => {
                    let xv = self.value(*x);
                    let dx = g
                        .iter()
                        .zip(xv)
                        .map(|(g, &v)| if v > 0.0 { *g } else { g * slope })
                        .collect();
                    add_into(&mut adj, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let dx = g.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect();
                    add_into(&mut adj, *x, dx);
                }
                Op::Tanh(x) => {
                    let dx = g.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect();
                    add_into(&mut adj, *x, dx);
                }
                Op::GatherRows(x, idx) => {
                    let n = self.value(*x).len();
                    let width = if self.shape(*x).len() == 1 {
                        1
                    } else {
                        self.dims(*x).1
                    };
                    let mut dx = vec![0.0; n];
                    for (k, &i) in idx.iter().enumerate() {
                        for j in 0..width {
                            dx[i * width + j] += g[k * width + j];
                        }
                    }
                    add_into(&mut adj, *x, dx);
                }
                Op::ScatterAddRows(x, idx) => {
                    let width = if self.shape(*x).len() == 1 {
                        1
                    } else {
                        self.dims(*x).1
                    };
                    let mut dx = Vec::with_capacity(idx.len() * width);
                    for &i in idx {
                        dx.extend_from_slice(&g[i * width..(i + 1) * width]);
                    }
                    add_into(&mut adj, *x, dx);
                }
                Op::RepeatRow(row) => {
                    let c = self.value(*row).len();
                    let mut drow = vec![0.0; c];
                    for (i, gv) in g.iter().enumerate() {
                        drow[i % c] += gv;
                    }
                    add_into(&mut adj, *row, drow);
                }
                Op::Pick(x, flat) => {
                    let mut dx = vec![0.0; self.value(*x).len()];
                    for (k, &i) in flat.iter().enumerate() {
                        dx[i] += g[k];
                    }
                    add_into(&mut adj, *x, dx);
                }
                Op::Stack(scalars) => {
                    for (k, &s) in scalars.iter().enumerate() {
                        add_into(&mut adj, s, vec![g[k]]);
                    }
                }
                Op::Reshape(x) => add_into(&mut adj, *x, g),
                Op::LogSumExp(x) => {
                    let xv = self.value(*x);
                    let lse = y[0];
                    let dx = xv.iter().map(|v| g[0] * (v - lse).exp()).collect();
                    add_into(&mut adj, *x, dx);
                }
            }
        }
        Ok(grads)
    }
}

fn add_into(adj: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
    match &mut adj[v.0] {
        Some(acc) => {
            for (a, d) in acc.iter_mut().zip(&delta) {
                *a += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            for (o, bv) in out_row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += a_ip * bv;
            }
        }
    }
    out
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        ELU_ALPHA * (x.exp() - 1.0)
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

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_into(xs: &[f64], out: &mut [f64]) {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, x) in out.iter_mut().zip(xs) {
        *o = (x - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}
