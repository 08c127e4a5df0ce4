use indexmap::IndexMap;

use super::params::ParamStore;
use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Reduce over rows, producing a `1 x n` row.
    Rows,
    /// Reduce over columns, producing an `m x 1` column.
    Cols,
}

/// Reversal strength of a gradient reversal node.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GrlConfig {
    pub lambda_grl: f64,
}

impl GrlConfig {
    pub fn new(lambda_grl: f64) -> Result<Self> {
        if !(lambda_grl >= 0.0) || !lambda_grl.is_finite() {
            return Err(Error::invalid(format!("GRL strength must be finite and >= 0, got {lambda_grl}")));
        }
        Ok(GrlConfig { lambda_grl })
    }
}

impl Default for GrlConfig {
    fn default() -> Self {
        GrlConfig { lambda_grl: 1.0 }
    }
}

/// Operation kinds reachable through [`Tape::forward_op`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Relu,
    MeanAxis(Axis),
    SumAxis(Axis),
    Concat(Axis),
    Scale(f64),
    LogSoftmax,
    Softmax,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Tanh(Var),
    Scale(Var, f64),
    SumAxis(Var, Axis),
    MeanAxis(Var, Axis),
    Concat(Vec<Var>, Axis),
    GatherRows(Var, Vec<usize>),
    GroupSum(Var, usize),
    Reshape(Var),
    SliceCols(Var, usize),
    LogSoftmax(Var),
    Softmax(Var),
    Pick(Var, Vec<usize>),
    Entropy(Var),
    Grl(Var, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Scale(..) => "scale",
            Op::SumAxis(..) => "sum_axis",
            Op::MeanAxis(..) => "mean_axis",
            Op::Concat(..) => "concat",
            Op::GatherRows(..) => "gather_rows",
            Op::GroupSum(..) => "group_sum",
            Op::Reshape(_) => "reshape",
            Op::SliceCols(..) => "slice_cols",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Softmax(_) => "softmax",
            Op::Pick(..) => "pick",
            Op::Entropy(_) => "entropy",
            Op::Grl(..) => "grl",
        }
    }
}

struct Node {
    value: Tensor,
    grad: Vec<f64>,
    op: Op,
}

/// Bound parameter handles, keyed by the same names as the [`ParamStore`].
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}

/// Single-owner reverse-mode tape. Nodes are appended in evaluation order, so
/// every input has a smaller index than the node that consumes it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    reversal_disabled: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Makes every later [`Tape::grl`] a plain identity, so the recorded graph
    /// is the gradient of the undisturbed objective. Used for gradient checks.
    pub fn disable_reversal(&mut self) {
        self.reversal_disabled = true;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let grad = vec![0.0; value.len()];
        self.nodes.push(Node { value, grad, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Registers every parameter of `store` as a leaf.
    pub fn bind(&mut self, store: &ParamStore) -> Bound {
        let vars = store.iter().map(|(name, t)| (name.to_string(), self.leaf(t.clone()))).collect();
        Bound { vars }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of `v`, shaped like its value.
    pub fn grad(&self, v: Var) -> Tensor {
        let [r, c] = self.nodes[v.0].value.shape();
        Tensor::new(r, c, self.nodes[v.0].grad.clone()).expect("grad shares value shape")
    }

    pub fn grads(&self, bound: &Bound) -> ParamStore {
        let mut out = ParamStore::new();
        for (name, v) in bound.iter() {
            out.insert(name, self.grad(v));
        }
        out
    }

    /// Name of the operation that produced `v`.
    pub fn provenance(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn forward_op(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = match kind {
            OpKind::MatMul | OpKind::Add => 2,
            OpKind::Concat(_) => inputs.len().max(1),
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::invalid(format!("{kind:?} expects {arity} inputs, got {}", inputs.len())));
        }
        match kind {
            OpKind::MatMul => self.matmul(inputs[0], inputs[1]),
            OpKind::Add => self.add(inputs[0], inputs[1]),
            OpKind::Relu => Ok(self.relu(inputs[0])),
            OpKind::MeanAxis(axis) => Ok(self.mean_axis(inputs[0], axis)),
            OpKind::SumAxis(axis) => Ok(self.sum_axis(inputs[0], axis)),
            OpKind::Concat(axis) => self.concat(inputs, axis),
            OpKind::Scale(c) => Ok(self.scale(inputs[0], c)),
            OpKind::LogSoftmax => Ok(self.log_softmax(inputs[0])),
            OpKind::Softmax => Ok(self.softmax(inputs[0])),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ([m, k], [k2, n]) = (ta.shape(), tb.shape());
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}x{k} * {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let value = Tensor::new(m, n, out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// Elementwise sum; `b` may also be a `1 x n` row broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let [m, n] = ta.shape();
        let out: Vec<f64> = if ta.shape() == tb.shape() {
            ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect()
        } else if tb.shape() == [1, n] {
            ta.data().chunks(n).flat_map(|r| r.iter().zip(tb.data()).map(|(x, y)| x + y)).collect()
        } else {
            return Err(Error::shape("add", format!("{:?} + {:?}", ta.shape(), tb.shape())));
        };
        let value = Tensor::new(m, n, out)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Elementwise product; `b` may also be an `m x 1` column broadcast over the columns of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let [m, n] = ta.shape();
        let out: Vec<f64> = if ta.shape() == tb.shape() {
            ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect()
        } else if tb.shape() == [m, 1] {
            ta.data().chunks(n.max(1)).zip(tb.data()).flat_map(|(r, s)| r.iter().map(move |x| x * s)).collect()
        } else {
            return Err(Error::shape("mul", format!("{:?} * {:?}", ta.shape(), tb.shape())));
        };
        let value = Tensor::new(m, n, out)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = t.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let value = Tensor::new(t.rows(), t.cols(), out).expect("same shape");
        self.push(value, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = t.data().iter().map(|x| x.tanh()).collect();
        let value = Tensor::new(t.rows(), t.cols(), out).expect("same shape");
        self.push(value, Op::Tanh(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let out = t.data().iter().map(|x| x * c).collect();
        let value = Tensor::new(t.rows(), t.cols(), out).expect("same shape");
        self.push(value, Op::Scale(a, c))
    }

    pub fn sum_axis(&mut self, a: Var, axis: Axis) -> Var {
        let value = reduce(self.value(a), axis, 1.0);
        self.push(value, Op::SumAxis(a, axis))
    }

    pub fn mean_axis(&mut self, a: Var, axis: Axis) -> Var {
        let t = self.value(a);
        let count = match axis {
            Axis::Rows => t.rows(),
            Axis::Cols => t.cols(),
        };
        let value = reduce(t, axis, 1.0 / count.max(1) as f64);
        self.push(value, Op::MeanAxis(a, axis))
    }

    /// Sum of every element as a `1 x 1` scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let rows = self.sum_axis(a, Axis::Rows);
        self.sum_axis(rows, Axis::Cols)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let rows = self.mean_axis(a, Axis::Rows);
        self.mean_axis(rows, Axis::Cols)
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let [m0, n0] = self.value(*first).shape();
        let value = match axis {
            Axis::Rows => {
                let ts: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
                if let Some(bad) = ts.iter().find(|t| t.cols() != n0) {
                    return Err(Error::shape("concat", format!("rows: {:?} vs {} columns", bad.shape(), n0)));
                }
                Tensor::vstack(&ts)?
            }
            Axis::Cols => {
                let ts: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
                if let Some(bad) = ts.iter().find(|t| t.rows() != m0) {
                    return Err(Error::shape("concat", format!("cols: {:?} vs {} rows", bad.shape(), m0)));
                }
                let n: usize = ts.iter().map(|t| t.cols()).sum();
                let mut out = Vec::with_capacity(m0 * n);
                for r in 0..m0 {
                    for t in &ts {
                        out.extend_from_slice(t.row_slice(r));
                    }
                }
                Tensor::new(m0, n, out)?
            }
        };
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis)))
    }

    /// Selects rows of `a` by index; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let n = t.cols();
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            if i >= t.rows() {
                return Err(Error::shape("gather_rows", format!("row {i} out of {}", t.rows())));
            }
            out.extend_from_slice(t.row_slice(i));
        }
        let value = Tensor::new(indices.len(), n, out)?;
        Ok(self.push(value, Op::GatherRows(a, indices.to_vec())))
    }

    /// Sums consecutive groups of `group` rows: `[g*m, n] -> [m, n]`.
    pub fn group_sum(&mut self, a: Var, group: usize) -> Result<Var> {
        let t = self.value(a);
        let [m, n] = t.shape();
        if group == 0 || m % group != 0 {
            return Err(Error::shape("group_sum", format!("{m} rows not divisible into groups of {group}")));
        }
        let mut out = vec![0.0; (m / group) * n];
        for r in 0..m {
            let o = &mut out[(r / group) * n..(r / group + 1) * n];
            for (x, y) in o.iter_mut().zip(t.row_slice(r)) {
                *x += y;
            }
        }
        let value = Tensor::new(m / group, n, out)?;
        Ok(self.push(value, Op::GroupSum(a, group)))
    }

    /// Row-major reinterpretation of the same values.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(a);
        if t.len() != rows * cols {
            return Err(Error::shape("reshape", format!("{:?} -> {rows}x{cols}", t.shape())));
        }
        let value = t.clone().reshaped(rows, cols);
        Ok(self.push(value, Op::Reshape(a)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let [m, n] = t.shape();
        if start + len > n {
            return Err(Error::shape("slice_cols", format!("[{start}, {}) of {n} columns", start + len)));
        }
        let out = (0..m).flat_map(|r| t.row_slice(r)[start..start + len].iter().copied()).collect();
        let value = Tensor::new(m, len, out)?;
        Ok(self.push(value, Op::SliceCols(a, start)))
    }

    /// Row-wise log-softmax, shifted by the row maximum.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.cols();
        let mut out = Vec::with_capacity(t.len());
        for r in t.data().chunks(n.max(1)) {
            let lse = log_sum_exp(r);
            out.extend(r.iter().map(|x| x - lse));
        }
        let value = Tensor::new(t.rows(), n, out).expect("same shape");
        self.push(value, Op::LogSoftmax(a))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.cols();
        let mut out = Vec::with_capacity(t.len());
        for r in t.data().chunks(n.max(1)) {
            out.extend(softmax(r));
        }
        let value = Tensor::new(t.rows(), n, out).expect("same shape");
        self.push(value, Op::Softmax(a))
    }

    /// `out[i] = a[i, indices[i]]`, one column.
    pub fn pick(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let [m, n] = t.shape();
        if indices.len() != m {
            return Err(Error::shape("pick", format!("{} indices for {m} rows", indices.len())));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::shape("pick", format!("index {bad} out of {n} columns")));
        }
        let out = indices.iter().enumerate().map(|(r, &c)| t.get(r, c)).collect();
        let value = Tensor::new(m, 1, out)?;
        Ok(self.push(value, Op::Pick(a, indices.to_vec())))
    }

    /// Row-wise base-2 entropy of probability rows, `[m, n] -> [m, 1]`.
    pub fn entropy(&mut self, p: Var) -> Var {
        let t = self.value(p);
        let out = t.data().chunks(t.cols().max(1)).map(entropy_unchecked).collect();
        let value = Tensor::new(t.rows(), 1, out).expect("one per row");
        self.push(value, Op::Entropy(p))
    }

    /// Negative log-likelihood per row, `[m, C] -> [m, 1]`.
    pub fn cross_entropy_rows(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.log_softmax(logits);
        let picked = self.pick(ls, labels)?;
        Ok(self.scale(picked, -1.0))
    }

    /// Identity forward; scales the upstream gradient by `-lambda_grl`.
    pub fn grl(&mut self, x: Var, cfg: GrlConfig) -> Var {
        if self.reversal_disabled {
            return x;
        }
        let value = self.value(x).clone();
        self.push(value, Op::Grl(x, cfg.lambda_grl))
    }

    /// Accumulates `d loss / d node` into every node reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape();
        if shape != [1, 1] {
            return Err(Error::shape("backward", format!("loss must be 1x1, got {}x{}", shape[0], shape[1])));
        }
        let mut local: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        local[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = local[i].take() else { continue };
            self.propagate(i, &g, &mut local);
            for (acc, v) in self.nodes[i].grad.iter_mut().zip(&g) {
                *acc += v;
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], local: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let [m, n] = out.shape();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let k = ta.cols();
                matmul_bt_acc(g, tb.data(), slot(local, *a, ta.len()), m, k, n);
                matmul_at_acc(ta.data(), g, slot(local, *b, tb.len()), m, k, n);
            }
            Op::Add(a, b) => {
                add_into(slot(local, *a, g.len()), g);
                let tb = self.value(*b);
                let gb = slot(local, *b, tb.len());
                if tb.shape() == out.shape() {
                    add_into(gb, g);
                } else {
                    for r in g.chunks(n) {
                        add_into(gb, r);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let same = ta.shape() == tb.shape();
                {
                    let ga = slot(local, *a, ta.len());
                    for (idx, gv) in g.iter().enumerate() {
                        let bv = if same { tb.data()[idx] } else { tb.data()[idx / n] };
                        ga[idx] += gv * bv;
                    }
                }
                let gb = slot(local, *b, tb.len());
                for (idx, gv) in g.iter().enumerate() {
                    let j = if same { idx } else { idx / n };
                    gb[j] += gv * ta.data()[idx];
                }
            }
            Op::Relu(a) => {
                let ga = slot(local, *a, g.len());
                for ((d, gv), y) in ga.iter_mut().zip(g).zip(out.data()) {
                    if *y > 0.0 {
                        *d += gv;
                    }
                }
            }
            Op::Tanh(a) => {
                let ga = slot(local, *a, g.len());
                for ((d, gv), y) in ga.iter_mut().zip(g).zip(out.data()) {
                    *d += gv * (1.0 - y * y);
                }
            }
            Op::Scale(a, c) => {
                let ga = slot(local, *a, g.len());
                for (d, gv) in ga.iter_mut().zip(g) {
                    *d += gv * c;
                }
            }
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let ta = self.value(*a);
                let [ra, ca] = ta.shape();
                let factor = match (&node.op, axis) {
                    (Op::MeanAxis(..), Axis::Rows) => 1.0 / ra.max(1) as f64,
                    (Op::MeanAxis(..), Axis::Cols) => 1.0 / ca.max(1) as f64,
                    _ => 1.0,
                };
                let ga = slot(local, *a, ta.len());
                for r in 0..ra {
                    for c in 0..ca {
                        let src = match axis {
                            Axis::Rows => g[c],
                            Axis::Cols => g[r],
                        };
                        ga[r * ca + c] += src * factor;
                    }
                }
            }
            Op::Concat(parts, axis) => match axis {
                Axis::Rows => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.value(*p).len();
                        add_into(slot(local, *p, len), &g[offset..offset + len]);
                        offset += len;
                    }
                }
                Axis::Cols => {
                    let mut col = 0;
                    for p in parts {
                        let tp = self.value(*p);
                        let w = tp.cols();
                        let gp = slot(local, *p, tp.len());
                        for r in 0..m {
                            add_into(&mut gp[r * w..(r + 1) * w], &g[r * n + col..r * n + col + w]);
                        }
                        col += w;
                    }
                }
            },
            Op::GatherRows(a, indices) => {
                let len = self.value(*a).len();
                let ga = slot(local, *a, len);
                for (r, &src) in indices.iter().enumerate() {
                    add_into(&mut ga[src * n..(src + 1) * n], &g[r * n..(r + 1) * n]);
                }
            }
            Op::GroupSum(a, group) => {
                let len = self.value(*a).len();
                let ga = slot(local, *a, len);
                for r in 0..m * group {
                    let o = r / group;
                    add_into(&mut ga[r * n..(r + 1) * n], &g[o * n..(o + 1) * n]);
                }
            }
            Op::Reshape(a) => add_into(slot(local, *a, g.len()), g),
            Op::SliceCols(a, start) => {
                let ta = self.value(*a);
                let w = ta.cols();
                let ga = slot(local, *a, ta.len());
                for r in 0..m {
                    add_into(&mut ga[r * w + start..r * w + start + n], &g[r * n..(r + 1) * n]);
                }
            }
            Op::LogSoftmax(a) => {
                let ga = slot(local, *a, g.len());
                for r in 0..m {
                    let gr = &g[r * n..(r + 1) * n];
                    let yr = &out.data()[r * n..(r + 1) * n];
                    let total: f64 = gr.iter().sum();
                    for c in 0..n {
                        ga[r * n + c] += gr[c] - yr[c].exp() * total;
                    }
                }
            }
            Op::Softmax(a) => {
                let ga = slot(local, *a, g.len());
                for r in 0..m {
                    let gr = &g[r * n..(r + 1) * n];
                    let yr = &out.data()[r * n..(r + 1) * n];
                    let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                    for c in 0..n {
                        ga[r * n + c] += yr[c] * (gr[c] - dot);
                    }
                }
            }
            Op::Pick(a, indices) => {
                let w = self.value(*a).cols();
                let ga = slot(local, *a, m * w);
                for (r, &c) in indices.iter().enumerate() {
                    ga[r * w + c] += g[r];
                }
            }
            Op::Entropy(p) => {
                let tp = self.value(*p);
                let w = tp.cols();
                let gp = slot(local, *p, tp.len());
                for r in 0..m {
                    for c in 0..w {
                        let pv = tp.data()[r * w + c];
                        // 0 log 0 = 0 and its derivative is taken as 0
                        if pv > 0.0 {
                            gp[r * w + c] -= g[r] * (pv.ln() + 1.0) / std::f64::consts::LN_2;
                        }
                    }
                }
            }
            Op::Grl(a, lambda) => {
                let ga = slot(local, *a, g.len());
                for (d, gv) in ga.iter_mut().zip(g) {
                    *d -= lambda * gv;
                }
            }
        }
    }
}

fn slot(local: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    local[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn reduce(t: &Tensor, axis: Axis, factor: f64) -> Tensor {
    let [m, n] = t.shape();
    match axis {
        Axis::Rows => {
            let mut out = vec![0.0; n];
            for r in 0..m {
                add_into(&mut out, t.row_slice(r));
            }
            out.iter_mut().for_each(|v| *v *= factor);
            Tensor::new(1, n, out).expect("row")
        }
        Axis::Cols => {
            let out = (0..m).map(|r| t.row_slice(r).iter().sum::<f64>() * factor).collect();
            Tensor::new(m, 1, out).expect("column")
        }
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn entropy_unchecked(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.log2()).sum::<f64>()
}
