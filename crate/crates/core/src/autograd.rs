//! Reverse-mode differentiation over dense 64-bit tensors.
//!
//! A [`Graph`] records primitive operations as they are executed
//! (define-by-run). Values are computed eagerly; [`Graph::backward`] then
//! walks the record once in reverse and accumulates exact analytic
//! gradients into every leaf that requires them.
//!
//! Tensors are at most rank 2 inside a graph; vectors are row or column
//! matrices and scalars are `1x1`. Every operation validates shapes up
//! front and checks its output for non-finite entries, so a NaN or Inf
//! surfaces immediately with the node that produced it.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

// Used by the no_std build; the test harness links `std`, whose inherent
// float methods shadow the trait.
#[cfg_attr(test, allow(unused_imports))]
use num_traits::Float;

use crate::error::{Error, Result};

/// Reduction / normalization axis of a rank-2 tensor.
///
/// `Rows` operates down each column (over axis 0, result `1 x C`);
/// `Cols` operates across each row (over axis 1, result `R x 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// A plain value container: shape, row-major 64-bit data, and a gradient
/// flag honored when the tensor is registered as a graph leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
}

impl Tensor {
    /// Builds a tensor, validating that the dimensions are positive, the
    /// element count matches the shape, and every entry is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Contract(format!(
                "tensor shape must be non-empty with positive dims, got {shape:?}"
            )));
        }
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(Error::Contract(format!(
                "tensor shape {shape:?} implies {count} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "tensor entry {i} is non-finite"
            )));
        }
        Ok(Tensor { shape, data, requires_grad: false })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn row(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Tensor::new(vec![1, n], data)
    }

    pub fn column(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Tensor::new(vec![n, 1], data)
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Tensor::new(vec![1, 1], vec![v])
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { shape: vec![rows, cols], data: vec![0.0; rows * cols], requires_grad: false }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Rank-2 view of the shape; a rank-1 tensor is treated as a row.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.len() {
            1 => Ok((1, self.shape[0])),
            2 => Ok((self.shape[0], self.shape[1])),
            r => Err(Error::Contract(format!(
                "graph tensors must be rank 1 or 2, got rank {r}"
            ))),
        }
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(TensorId, TensorId),
    Transpose(TensorId),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    AddScalar(TensorId),
    Scale(TensorId, f64),
    Exp(TensorId),
    Log(TensorId),
    Sqrt(TensorId),
    Negate(TensorId),
    Relu(TensorId),
    ClampMin(TensorId, f64),
    MaxOverAxis(TensorId, Axis),
    SumOverAxis(TensorId, Axis),
    SoftmaxOverAxis(TensorId, Axis),
    L2RowNorms(TensorId),
    GatherRows(TensorId, Vec<usize>),
    ScatterMean { src: TensorId, indices: Vec<usize>, bins: usize },
    BroadcastTo(TensorId),
    ConcatRows(TensorId, TensorId),
    ConcatCols(TensorId, TensorId),
    MaxPoolRows { src: TensorId, group: usize },
    SumAll(TensorId),
    StopGradient,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddScalar(..) => "add_scalar",
            Op::Scale(..) => "scale",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sqrt(..) => "sqrt",
            Op::Negate(..) => "negate",
            Op::Relu(..) => "relu",
            Op::ClampMin(..) => "clamp_min",
            Op::MaxOverAxis(..) => "max_over_axis",
            Op::SumOverAxis(..) => "sum_over_axis",
            Op::SoftmaxOverAxis(..) => "softmax_over_axis",
            Op::L2RowNorms(..) => "l2_row_norms",
            Op::GatherRows(..) => "gather_rows",
            Op::ScatterMean { .. } => "scatter_mean",
            Op::BroadcastTo(..) => "broadcast_to",
            Op::ConcatRows(..) => "concat_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::MaxPoolRows { .. } => "max_pool_rows",
            Op::SumAll(..) => "sum_all",
            Op::StopGradient => "stop_gradient",
        }
    }
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to graph nodes, keyed by
/// [`TensorId`]. Leaves that require gradients always have an entry,
/// even when the loss does not depend on them (then it is zero).
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: TensorId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }
}

/// A topologically ordered record of primitive operations.
///
/// Inputs of a node always precede it, so a single reverse sweep in
/// [`Graph::backward`] visits each node exactly once.
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn to_tensor(&self, id: TensorId) -> Tensor {
        let n = &self.nodes[id.0];
        Tensor { shape: vec![n.rows, n.cols], data: n.value.clone(), requires_grad: false }
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>, requires_grad: bool) -> Result<TensorId> {
        debug_assert_eq!(value.len(), rows * cols);
        if let Some(i) = value.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value at entry {i} produced by `{}` (node {})",
                op.name(),
                self.nodes.len()
            )));
        }
        self.nodes.push(Node { op, rows, cols, value, requires_grad });
        Ok(TensorId(self.nodes.len() - 1))
    }

    fn node(&self, id: TensorId) -> &Node {
        &self.nodes[id.0]
    }

    fn mismatch(op: &str, detail: String) -> Error {
        Error::Contract(format!("{op}: {detail}"))
    }

    /// Registers a tensor as a graph leaf, honoring its gradient flag.
    pub fn leaf(&mut self, t: &Tensor) -> Result<TensorId> {
        let (rows, cols) = t.dims2()?;
        self.push(Op::Leaf, rows, cols, t.data().to_vec(), t.requires_grad)
    }

    /// Registers a constant leaf (no gradient).
    pub fn constant(&mut self, rows: usize, cols: usize, data: &[f64]) -> Result<TensorId> {
        if data.len() != rows * cols {
            return Err(Self::mismatch("constant", format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len())));
        }
        self.push(Op::Leaf, rows, cols, data.to_vec(), false)
    }

    pub fn scalar(&mut self, v: f64) -> Result<TensorId> {
        self.push(Op::Leaf, 1, 1, vec![v], false)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, n) = self.shape(a);
        let (n2, p) = self.shape(b);
        if n != n2 {
            return Err(Self::mismatch("matmul", format!("inner dims differ: {m}x{n} vs {n2}x{p}")));
        }
        let value = matmul_nn(self.value(a), self.value(b), m, n, p);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(Op::Matmul(a, b), m, p, value, rg)
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        let src = self.value(a);
        let mut value = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                value[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.requires_grad(a);
        self.push(Op::Transpose(a), c, r, value, rg)
    }

    fn elementwise2(&mut self, opname: &str, a: TensorId, b: TensorId, f: impl Fn(f64, f64) -> f64) -> Result<(usize, usize, Vec<f64>, bool)> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if (ra, ca) != (rb, cb) {
            return Err(Self::mismatch(opname, format!("shapes differ: {ra}x{ca} vs {rb}x{cb}")));
        }
        let va = self.value(a);
        let vb = self.value(b);
        let value: Vec<f64> = va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect();
        Ok((ra, ca, value, self.requires_grad(a) || self.requires_grad(b)))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (r, c, v, rg) = self.elementwise2("add", a, b, |x, y| x + y)?;
        self.push(Op::Add(a, b), r, c, v, rg)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (r, c, v, rg) = self.elementwise2("sub", a, b, |x, y| x - y)?;
        self.push(Op::Sub(a, b), r, c, v, rg)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (r, c, v, rg) = self.elementwise2("mul", a, b, |x, y| x * y)?;
        self.push(Op::Mul(a, b), r, c, v, rg)
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (r, c, v, rg) = self.elementwise2("div", a, b, |x, y| x / y)?;
        self.push(Op::Div(a, b), r, c, v, rg)
    }

    fn elementwise1(&mut self, a: TensorId, f: impl Fn(f64) -> f64) -> (usize, usize, Vec<f64>, bool) {
        let (r, c) = self.shape(a);
        let value: Vec<f64> = self.value(a).iter().map(|&x| f(x)).collect();
        (r, c, value, self.requires_grad(a))
    }

    pub fn add_scalar(&mut self, a: TensorId, s: f64) -> Result<TensorId> {
        let (r, c, v, rg) = self.elementwise1(a, |x| x + s);
        self.push(Op::AddScalar(a), r, c, v, rg)
    }

    pub fn scale(&mut self, a: TensorId, s: f64) -> Result<TensorId> {
        let (r, c, v, rg) = self.elementwise1(a, |x| x * s);
        self.push(Op::Scale(a, s), r, c, v, rg)
    }

    pub fn exp(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c, v, rg) = self.elementwise1(a, |x| x.exp());
        self.push(Op::Exp(a), r, c, v, rg)
    }

    pub fn log(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c, v, rg) = self.elementwise1(a, |x| x.ln());
        self.push(Op::Log(a), r, c, v, rg)
    }

    pub fn sqrt(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c, v, rg) = self.elementwise1(a, |x| x.sqrt());
        self.push(Op::Sqrt(a), r, c, v, rg)
    }

    pub fn negate(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c, v, rg) = self.elementwise1(a, |x| -x);
        self.push(Op::Negate(a), r, c, v, rg)
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c, v, rg) = self.elementwise1(a, |x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(a), r, c, v, rg)
    }

    pub fn clamp_min(&mut self, a: TensorId, min: f64) -> Result<TensorId> {
        let (r, c, v, rg) = self.elementwise1(a, |x| if x < min { min } else { x });
        self.push(Op::ClampMin(a, min), r, c, v, rg)
    }

    pub fn max_over_axis(&mut self, a: TensorId, axis: Axis) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        let src = self.value(a);
        let (or, oc, value) = match axis {
            Axis::Rows => {
                let mut v = vec![f64::NEG_INFINITY; c];
                for i in 0..r {
                    for j in 0..c {
                        let x = src[i * c + j];
                        if x > v[j] {
                            v[j] = x;
                        }
                    }
                }
                (1, c, v)
            }
            Axis::Cols => {
                let mut v = vec![f64::NEG_INFINITY; r];
                for i in 0..r {
                    for j in 0..c {
                        let x = src[i * c + j];
                        if x > v[i] {
                            v[i] = x;
                        }
                    }
                }
                (r, 1, v)
            }
        };
        let rg = self.requires_grad(a);
        self.push(Op::MaxOverAxis(a, axis), or, oc, value, rg)
    }

    pub fn sum_over_axis(&mut self, a: TensorId, axis: Axis) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        let src = self.value(a);
        let (or, oc, value) = match axis {
            Axis::Rows => {
                let mut v = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        v[j] += src[i * c + j];
                    }
                }
                (1, c, v)
            }
            Axis::Cols => {
                let mut v = vec![0.0; r];
                for i in 0..r {
                    for j in 0..c {
                        v[i] += src[i * c + j];
                    }
                }
                (r, 1, v)
            }
        };
        let rg = self.requires_grad(a);
        self.push(Op::SumOverAxis(a, axis), or, oc, value, rg)
    }

    /// Numerically stable softmax along `axis` (max-shifted exponentials).
    pub fn softmax_over_axis(&mut self, a: TensorId, axis: Axis) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        let src = self.value(a);
        let mut value = vec![0.0; r * c];
        match axis {
            Axis::Cols => {
                for i in 0..r {
                    softmax_slice(&src[i * c..(i + 1) * c], &mut value[i * c..(i + 1) * c]);
                }
            }
            Axis::Rows => {
                let mut col = vec![0.0; r];
                let mut out = vec![0.0; r];
                for j in 0..c {
                    for i in 0..r {
                        col[i] = src[i * c + j];
                    }
                    softmax_slice(&col, &mut out);
                    for i in 0..r {
                        value[i * c + j] = out[i];
                    }
                }
            }
        }
        let rg = self.requires_grad(a);
        self.push(Op::SoftmaxOverAxis(a, axis), r, c, value, rg)
    }

    /// Euclidean norm of each row, as an `R x 1` column.
    pub fn l2_row_norms(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        let src = self.value(a);
        let mut value = vec![0.0; r];
        for i in 0..r {
            let mut s = 0.0;
            for j in 0..c {
                let x = src[i * c + j];
                s += x * x;
            }
            value[i] = s.sqrt();
        }
        let rg = self.requires_grad(a);
        self.push(Op::L2RowNorms(a), r, 1, value, rg)
    }

    /// Rows of `a` selected by `indices` (repeats allowed), in order.
    pub fn gather_rows(&mut self, a: TensorId, indices: &[usize]) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        if indices.is_empty() {
            return Err(Self::mismatch("gather_rows", String::from("empty index list")));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Self::mismatch("gather_rows", format!("index {bad} out of range for {r} rows")));
        }
        let src = self.value(a);
        let mut value = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            value.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rg = self.requires_grad(a);
        self.push(Op::GatherRows(a, indices.to_vec()), indices.len(), c, value, rg)
    }

    /// Mean of the rows assigned to each bin; every bin must be non-empty.
    pub fn scatter_mean(&mut self, a: TensorId, indices: &[usize], bins: usize) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        if indices.len() != r {
            return Err(Self::mismatch("scatter_mean", format!("{} indices for {r} rows", indices.len())));
        }
        if bins == 0 {
            return Err(Self::mismatch("scatter_mean", String::from("bins must be >= 1")));
        }
        if let Some(&bad) = indices.iter().find(|&&b| b >= bins) {
            return Err(Self::mismatch("scatter_mean", format!("bin {bad} out of range for {bins} bins")));
        }
        let mut counts = vec![0usize; bins];
        for &b in indices {
            counts[b] += 1;
        }
        if let Some(empty) = counts.iter().position(|&n| n == 0) {
            return Err(Self::mismatch("scatter_mean", format!("bin {empty} is empty")));
        }
        let src = self.value(a);
        let mut value = vec![0.0; bins * c];
        for (i, &b) in indices.iter().enumerate() {
            for j in 0..c {
                value[b * c + j] += src[i * c + j];
            }
        }
        for b in 0..bins {
            let count = counts[b] as f64;
            for j in 0..c {
                value[b * c + j] /= count;
            }
        }
        let rg = self.requires_grad(a);
        self.push(Op::ScatterMean { src: a, indices: indices.to_vec(), bins }, bins, c, value, rg)
    }

    /// Broadcasts `1x1`, `1xC`, or `Rx1` up to `rows x cols`.
    pub fn broadcast_to(&mut self, a: TensorId, rows: usize, cols: usize) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        let ok = (r == rows && c == cols)
            || (r == 1 && c == 1)
            || (r == 1 && c == cols)
            || (c == 1 && r == rows);
        if !ok {
            return Err(Self::mismatch("broadcast_to", format!("cannot broadcast {r}x{c} to {rows}x{cols}")));
        }
        let src = self.value(a);
        let mut value = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                let si = if r == 1 { 0 } else { i };
                let sj = if c == 1 { 0 } else { j };
                value[i * cols + j] = src[si * c + sj];
            }
        }
        let rg = self.requires_grad(a);
        self.push(Op::BroadcastTo(a), rows, cols, value, rg)
    }

    /// Stacks `a` above `b` (same column count).
    pub fn concat_rows(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ca != cb {
            return Err(Self::mismatch("concat_rows", format!("column counts differ: {ra}x{ca} vs {rb}x{cb}")));
        }
        let mut value = Vec::with_capacity((ra + rb) * ca);
        value.extend_from_slice(self.value(a));
        value.extend_from_slice(self.value(b));
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(Op::ConcatRows(a, b), ra + rb, ca, value, rg)
    }

    /// Places `b`'s columns after `a`'s (same row count).
    pub fn concat_cols(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ra != rb {
            return Err(Self::mismatch("concat_cols", format!("row counts differ: {ra}x{ca} vs {rb}x{cb}")));
        }
        let va = self.value(a);
        let vb = self.value(b);
        let mut value = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            value.extend_from_slice(&va[i * ca..(i + 1) * ca]);
            value.extend_from_slice(&vb[i * cb..(i + 1) * cb]);
        }
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(Op::ConcatCols(a, b), ra, ca + cb, value, rg)
    }

    /// Column-wise max over each consecutive block of `group` rows.
    /// The row count must be a multiple of `group`.
    pub fn max_pool_rows(&mut self, a: TensorId, group: usize) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        if group == 0 || r % group != 0 {
            return Err(Self::mismatch("max_pool_rows", format!("group {group} does not divide {r} rows")));
        }
        let out_rows = r / group;
        let src = self.value(a);
        let mut value = vec![f64::NEG_INFINITY; out_rows * c];
        for g in 0..out_rows {
            for i in 0..group {
                let row = g * group + i;
                for j in 0..c {
                    let x = src[row * c + j];
                    if x > value[g * c + j] {
                        value[g * c + j] = x;
                    }
                }
            }
        }
        let rg = self.requires_grad(a);
        self.push(Op::MaxPoolRows { src: a, group }, out_rows, c, value, rg)
    }

    /// Sum of all entries, as a `1x1` scalar.
    pub fn sum_all(&mut self, a: TensorId) -> Result<TensorId> {
        let value = vec![self.value(a).iter().sum()];
        let rg = self.requires_grad(a);
        self.push(Op::SumAll(a), 1, 1, value, rg)
    }

    /// Identity values; no gradient flows through.
    pub fn stop_gradient(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        let value = self.value(a).to_vec();
        self.push(Op::StopGradient, r, c, value, false)
    }

    /// Propagates gradients of a scalar `loss` back to every leaf that
    /// requires them. May be called once per graph.
    pub fn backward(&mut self, loss: TensorId) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::Contract(String::from(
                "backward called twice on the same graph",
            )));
        }
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got {r}x{c}"
            )));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        // Leaves that require gradients always get an entry, even when the
        // loss does not reach them.
        for (i, n) in self.nodes.iter().enumerate() {
            if matches!(n.op, Op::Leaf) && n.requires_grad {
                grads[i] = Some(vec![0.0; n.value.len()]);
            }
        }
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(gout) = grads[id].take() else { continue };
            self.accumulate(id, &gout, &mut grads);
            grads[id] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    fn grad_of<'a>(&self, grads: &'a mut [Option<Vec<f64>>], id: TensorId) -> &'a mut Vec<f64> {
        let n = &self.nodes[id.0];
        grads[id.0].get_or_insert_with(|| vec![0.0; n.rows * n.cols])
    }

    fn accumulate(&self, id: usize, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::StopGradient => {}
            Op::Matmul(a, b) => {
                let (m, n) = self.shape(*a);
                let (_, p) = self.shape(*b);
                if self.requires_grad(*a) {
                    let vb = self.node(*b).value.clone();
                    let da = matmul_nt(gout, &vb, m, p, n);
                    axpy(self.grad_of(grads, *a), &da);
                }
                if self.requires_grad(*b) {
                    let va = self.node(*a).value.clone();
                    let db = matmul_tn(&va, gout, m, n, p);
                    axpy(self.grad_of(grads, *b), &db);
                }
            }
            Op::Transpose(a) => {
                if self.requires_grad(*a) {
                    let (ar, ac) = self.shape(*a);
                    let g = self.grad_of(grads, *a);
                    for i in 0..rows {
                        for j in 0..cols {
                            // out[i][j] = a[j][i]
                            g[j * ac + i] += gout[i * cols + j];
                        }
                    }
                    let _ = ar;
                }
            }
            Op::Add(a, b) => {
                if self.requires_grad(*a) {
                    axpy(self.grad_of(grads, *a), gout);
                }
                if self.requires_grad(*b) {
                    axpy(self.grad_of(grads, *b), gout);
                }
            }
            Op::Sub(a, b) => {
                if self.requires_grad(*a) {
                    axpy(self.grad_of(grads, *a), gout);
                }
                if self.requires_grad(*b) {
                    let g = self.grad_of(grads, *b);
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi -= go;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    let vb = self.node(*b).value.clone();
                    let g = self.grad_of(grads, *a);
                    for i in 0..g.len() {
                        g[i] += gout[i] * vb[i];
                    }
                }
                if self.requires_grad(*b) {
                    let va = self.node(*a).value.clone();
                    let g = self.grad_of(grads, *b);
                    for i in 0..g.len() {
                        g[i] += gout[i] * va[i];
                    }
                }
            }
            Op::Div(a, b) => {
                let vb = self.node(*b).value.clone();
                if self.requires_grad(*a) {
                    let g = self.grad_of(grads, *a);
                    for i in 0..g.len() {
                        g[i] += gout[i] / vb[i];
                    }
                }
                if self.requires_grad(*b) {
                    let out = node.value.clone();
                    let g = self.grad_of(grads, *b);
                    for i in 0..g.len() {
                        g[i] -= gout[i] * out[i] / vb[i];
                    }
                }
            }
            Op::AddScalar(a) => {
                if self.requires_grad(*a) {
                    axpy(self.grad_of(grads, *a), gout);
                }
            }
            Op::Scale(a, s) => {
                if self.requires_grad(*a) {
                    let s = *s;
                    let g = self.grad_of(grads, *a);
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi += s * go;
                    }
                }
            }
            Op::Exp(a) => {
                if self.requires_grad(*a) {
                    let out = node.value.clone();
                    let g = self.grad_of(grads, *a);
                    for i in 0..g.len() {
                        g[i] += gout[i] * out[i];
                    }
                }
            }
            Op::Log(a) => {
                if self.requires_grad(*a) {
                    let va = self.node(*a).value.clone();
                    let g = self.grad_of(grads, *a);
                    for i in 0..g.len() {
                        g[i] += gout[i] / va[i];
                    }
                }
            }
            Op::Sqrt(a) => {
                if self.requires_grad(*a) {
                    let out = node.value.clone();
                    let g = self.grad_of(grads, *a);
                    for i in 0..g.len() {
                        // Guarded at the origin, where the true derivative
                        // is unbounded.
                        let denom = if out[i] > 1e-12 { out[i] } else { 1e-12 };
                        g[i] += gout[i] / (2.0 * denom);
                    }
                }
            }
            Op::Negate(a) => {
                if self.requires_grad(*a) {
                    let g = self.grad_of(grads, *a);
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi -= go;
                    }
                }
            }
            Op::Relu(a) => {
                if self.requires_grad(*a) {
                    let va = self.node(*a).value.clone();
                    let g = self.grad_of(grads, *a);
                    for i in 0..g.len() {
                        if va[i] > 0.0 {
                            g[i] += gout[i];
                        }
                    }
                }
            }
            Op::ClampMin(a, min) => {
                if self.requires_grad(*a) {
                    let min = *min;
                    let va = self.node(*a).value.clone();
                    let g = self.grad_of(grads, *a);
                    for i in 0..g.len() {
                        if va[i] > min {
                            g[i] += gout[i];
                        }
                    }
                }
            }
            Op::MaxOverAxis(a, axis) => {
                if self.requires_grad(*a) {
                    let (ar, ac) = self.shape(*a);
                    let va = self.node(*a).value.clone();
                    let out = node.value.clone();
                    let g = self.grad_of(grads, *a);
                    match axis {
                        // Gradient goes to the first attaining entry.
                        Axis::Rows => {
                            for j in 0..ac {
                                for i in 0..ar {
                                    if va[i * ac + j] == out[j] {
                                        g[i * ac + j] += gout[j];
                                        break;
                                    }
                                }
                            }
                        }
                        Axis::Cols => {
                            for i in 0..ar {
                                for j in 0..ac {
                                    if va[i * ac + j] == out[i] {
                                        g[i * ac + j] += gout[i];
                                        break;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::SumOverAxis(a, axis) => {
                if self.requires_grad(*a) {
                    let (ar, ac) = self.shape(*a);
                    let g = self.grad_of(grads, *a);
                    match axis {
                        Axis::Rows => {
                            for i in 0..ar {
                                for j in 0..ac {
                                    g[i * ac + j] += gout[j];
                                }
                            }
                        }
                        Axis::Cols => {
                            for i in 0..ar {
                                for j in 0..ac {
                                    g[i * ac + j] += gout[i];
                                }
                            }
                        }
                    }
                }
            }
            Op::SoftmaxOverAxis(a, axis) => {
                if self.requires_grad(*a) {
                    let (ar, ac) = self.shape(*a);
                    let s = node.value.clone();
                    let g = self.grad_of(grads, *a);
                    match axis {
                        Axis::Cols => {
                            for i in 0..ar {
                                let mut dot = 0.0;
                                for j in 0..ac {
                                    dot += gout[i * ac + j] * s[i * ac + j];
                                }
                                for j in 0..ac {
                                    let k = i * ac + j;
                                    g[k] += s[k] * (gout[k] - dot);
                                }
                            }
                        }
                        Axis::Rows => {
                            for j in 0..ac {
                                let mut dot = 0.0;
                                for i in 0..ar {
                                    dot += gout[i * ac + j] * s[i * ac + j];
                                }
                                for i in 0..ar {
                                    let k = i * ac + j;
                                    g[k] += s[k] * (gout[k] - dot);
                                }
                            }
                        }
                    }
                }
            }
            Op::L2RowNorms(a) => {
                if self.requires_grad(*a) {
                    let (ar, ac) = self.shape(*a);
                    let va = self.node(*a).value.clone();
                    let out = node.value.clone();
                    let g = self.grad_of(grads, *a);
                    for i in 0..ar {
                        let denom = if out[i] > 1e-12 { out[i] } else { 1e-12 };
                        for j in 0..ac {
                            g[i * ac + j] += gout[i] * va[i * ac + j] / denom;
                        }
                    }
                }
            }
            Op::GatherRows(a, indices) => {
                if self.requires_grad(*a) {
                    let indices = indices.clone();
                    let g = self.grad_of(grads, *a);
                    for (t, &i) in indices.iter().enumerate() {
                        for j in 0..cols {
                            g[i * cols + j] += gout[t * cols + j];
                        }
                    }
                }
            }
            Op::ScatterMean { src, indices, bins } => {
                if self.requires_grad(*src) {
                    let mut counts = vec![0usize; *bins];
                    for &b in indices {
                        counts[b] += 1;
                    }
                    let indices = indices.clone();
                    let g = self.grad_of(grads, *src);
                    for (i, &b) in indices.iter().enumerate() {
                        let count = counts[b] as f64;
                        for j in 0..cols {
                            g[i * cols + j] += gout[b * cols + j] / count;
                        }
                    }
                }
            }
            Op::BroadcastTo(a) => {
                if self.requires_grad(*a) {
                    let (ar, ac) = self.shape(*a);
                    let g = self.grad_of(grads, *a);
                    for i in 0..rows {
                        for j in 0..cols {
                            let si = if ar == 1 { 0 } else { i };
                            let sj = if ac == 1 { 0 } else { j };
                            g[si * ac + sj] += gout[i * cols + j];
                        }
                    }
                }
            }
            Op::ConcatRows(a, b) => {
                let (ra, ca) = self.shape(*a);
                if self.requires_grad(*a) {
                    let g = self.grad_of(grads, *a);
                    axpy(g, &gout[..ra * ca]);
                }
                if self.requires_grad(*b) {
                    let g = self.grad_of(grads, *b);
                    axpy(g, &gout[ra * ca..]);
                }
            }
            Op::ConcatCols(a, b) => {
                let (ra, ca) = self.shape(*a);
                let (_, cb) = self.shape(*b);
                if self.requires_grad(*a) {
                    let g = self.grad_of(grads, *a);
                    for i in 0..ra {
                        for j in 0..ca {
                            g[i * ca + j] += gout[i * (ca + cb) + j];
                        }
                    }
                }
                if self.requires_grad(*b) {
                    let g = self.grad_of(grads, *b);
                    for i in 0..ra {
                        for j in 0..cb {
                            g[i * cb + j] += gout[i * (ca + cb) + ca + j];
                        }
                    }
                }
            }
            Op::MaxPoolRows { src, group } => {
                if self.requires_grad(*src) {
                    let group = *group;
                    let va = self.node(*src).value.clone();
                    let out = node.value.clone();
                    let g = self.grad_of(grads, *src);
                    for gi in 0..rows {
                        for j in 0..cols {
                            for i in 0..group {
                                let row = gi * group + i;
                                if va[row * cols + j] == out[gi * cols + j] {
                                    g[row * cols + j] += gout[gi * cols + j];
                                    break;
                                }
                            }
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                if self.requires_grad(*a) {
                    let g = self.grad_of(grads, *a);
                    for gi in g.iter_mut() {
                        *gi += gout[0];
                    }
                }
            }
        }
    }
}

fn axpy(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn softmax_slice(src: &[f64], out: &mut [f64]) {
    let mut m = f64::NEG_INFINITY;
    for &x in src {
        if x > m {
            m = x;
        }
    }
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(src) {
        let e = (x - m).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// `A (m x n) @ B (n x p)`, row-major.
pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, n: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * p..(k + 1) * p];
            let orow = &mut out[i * p..(i + 1) * p];
            for j in 0..p {
                orow[j] += aik * brow[j];
            }
        }
    }
    out
}

/// `A (m x n) @ B^T` where `B` is `p x n`, row-major.
fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..p {
            let brow = &b[j * n..(j + 1) * n];
            let mut s = 0.0;
            for k in 0..n {
                s += arow[k] * brow[k];
            }
            out[i * p + j] = s;
        }
    }
    out
}

/// `A^T @ B` where `A` is `m x n` and `B` is `m x p`, row-major.
fn matmul_tn(a: &[f64], b: &[f64], m: usize, n: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * p];
    for k in 0..m {
        let arow = &a[k * n..(k + 1) * n];
        let brow = &b[k * p..(k + 1) * p];
        for i in 0..n {
            let aki = arow[i];
            if aki == 0.0 {
                continue;
            }
            let orow = &mut out[i * p..(i + 1) * p];
            for j in 0..p {
                orow[j] += aki * brow[j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_uniform_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(1, 3, &[0.0, 0.0, 0.0]).unwrap();
        let s = g.softmax_over_axis(x, Axis::Cols).unwrap();
        for &v in g.value(s) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_of_sum_of_squares() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::row(vec![1.0, 2.0, 3.0]).unwrap().with_grad()).unwrap();
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum_all(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn constant_loss_yields_zero_gradients() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::row(vec![5.0, -1.0]).unwrap().with_grad()).unwrap();
        let loss = g.scalar(3.0).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn gradient_of_linear_form_is_the_other_factor() {
        let mut g = Graph::new();
        let w = g.leaf(&Tensor::row(vec![2.0, -3.0, 0.5]).unwrap().with_grad()).unwrap();
        let x = g.constant(3, 1, &[1.0, 4.0, -2.0]).unwrap();
        let y = g.matmul(w, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(w).unwrap(), &[1.0, 4.0, -2.0]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::scalar(2.0).unwrap().with_grad()).unwrap();
        let loss = g.mul(x, x).unwrap();
        g.backward(loss).unwrap();
        let err = g.backward(loss).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn non_scalar_loss_is_an_error() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::row(vec![1.0, 2.0]).unwrap().with_grad()).unwrap();
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn stop_gradient_keeps_values_and_cuts_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::row(vec![1.5, -2.0, 4.0]).unwrap().with_grad()).unwrap();
        let frozen = g.stop_gradient(x).unwrap();
        assert_eq!(g.value(frozen), g.value(x));
        // d/dx sum(stop(x) * x) = stop(x), not 2x.
        let prod = g.mul(frozen, x).unwrap();
        let loss = g.sum_all(prod).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.5, -2.0, 4.0]);
    }

    #[test]
    fn nan_is_reported_with_the_producing_node() {
        let mut g = Graph::new();
        let a = g.constant(1, 1, &[1.0]).unwrap();
        let b = g.constant(1, 1, &[0.0]).unwrap();
        let err = g.div(a, b).unwrap_err();
        match err {
            Error::Numeric(msg) => assert!(msg.contains("div"), "{msg}"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_names_operation_and_shapes() {
        let mut g = Graph::new();
        let a = g.constant(2, 3, &[0.0; 6]).unwrap();
        let b = g.constant(2, 2, &[0.0; 4]).unwrap();
        let err = g.add(a, b).unwrap_err();
        match err {
            Error::Contract(msg) => {
                assert!(msg.contains("add") && msg.contains("2x3") && msg.contains("2x2"), "{msg}");
            }
            other => panic!("expected contract error, got {other:?}"),
        }
    }

    #[test]
    fn matmul_matches_naive_triple_loop() {
        let mut g = Graph::new();
        let a_data: Vec<f64> = (0..12).map(|i| (i as f64) * 0.37 - 2.0).collect();
        let b_data: Vec<f64> = (0..20).map(|i| (i as f64) * -0.21 + 1.5).collect();
        let a = g.constant(3, 4, &a_data).unwrap();
        let b = g.constant(4, 5, &b_data).unwrap();
        let c = g.matmul(a, b).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += a_data[i * 4 + k] * b_data[k * 5 + j];
                }
                assert!((g.value(c)[i * 5 + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scatter_mean_averages_per_bin_and_rejects_empty_bins() {
        let mut g = Graph::new();
        let x = g.constant(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let m = g.scatter_mean(x, &[0, 1, 0], 2).unwrap();
        assert_eq!(g.value(m), &[3.0, 4.0, 3.0, 4.0]);
        assert!(matches!(g.scatter_mean(x, &[0, 0, 0], 2), Err(Error::Contract(_))));
    }

    #[test]
    fn max_pool_rows_takes_groupwise_maxima() {
        let mut g = Graph::new();
        let x = g.constant(4, 2, &[1.0, 9.0, 3.0, 2.0, -1.0, 0.0, -2.0, 5.0]).unwrap();
        let m = g.max_pool_rows(x, 2).unwrap();
        assert_eq!(g.value(m), &[3.0, 9.0, -1.0, 5.0]);
    }
}
