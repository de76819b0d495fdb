//! Define-by-run reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and the handles of
//! its inputs. Because nodes are only ever appended, the node list is in
//! topological order by construction and [`Tape::backward`] can walk it once,
//! back to front.
//!
//! A fresh tape is built for every forward pass. Trainable parameters enter
//! the tape through [`Tape::bind`], which remembers the parameter name so the
//! accumulated gradient can be collected after the backward pass.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for a user-defined operation.
///
/// Receives the input values, the output value and the incoming gradient and
/// returns one gradient per input, each shaped like that input.
pub type BackwardFn = Box<dyn Fn(&[&Tensor], &Tensor, &Tensor) -> Vec<Tensor>>;

/// Gradients with magnitude below this threshold on the norm / distance path
/// are treated as coming from a degenerate point and dropped.
pub const NORM_FLOOR: f64 = 1e-12;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    DivRows(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Relu(Var),
    Clamp(Var, f64, f64),
    Arccos(Var),
    Cos(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    L2NormRows(Var),
    LogSoftmaxRows(Var),
    Gather(Var, Vec<usize>),
    PairwiseEuclidean(Var),
    Mask(Var, Vec<f64>),
    Custom(Vec<Var>, BackwardFn),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Record of the operations of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bindings: Vec<(String, Var)>,
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that accumulates gradients.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Places a named parameter on the tape. Frozen parameters enter as
    /// constants and are never reported by [`Tape::named_grad`].
    pub fn bind(&mut self, name: &str, value: &Tensor, trainable: bool) -> Var {
        let v = self.push(value.clone(), Op::Leaf, trainable);
        if trainable {
            self.bindings.push((name.to_string(), v));
        }
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }

    /// Sum of the gradients of every binding of `name`; `None` if the name was
    /// never bound as trainable. Bound-but-unreached parameters yield zeros.
    pub fn named_grad(&self, name: &str) -> Option<Tensor> {
        let mut out: Option<Tensor> = None;
        for (n, v) in &self.bindings {
            if n != name {
                continue;
            }
            let g = self.grad_or_zeros(*v);
            match &mut out {
                None => out = Some(g),
                Some(acc) => add_into(acc.data_mut(), g.data()),
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn unary_shape_check(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Dimension {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn expect_matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.value(v).shape();
        if s.len() != 2 {
            return Err(Error::Dimension {
                op,
                left: s.to_vec(),
                right: vec![0, 0],
            });
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, s) = self.expect_matrix("matmul", a)?;
        let (s2, t) = self.expect_matrix("matmul", b)?;
        if s != s2 {
            return Err(Error::Dimension {
                op: "matmul",
                left: vec![r, s],
                right: vec![s2, t],
            });
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), r, s, t);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(r, t, out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.expect_matrix("transpose", a)?;
        let out = transpose_raw(self.value(a).data(), r, c);
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(c, r, out)?, Op::Transpose(a), rg))
    }

    fn zip(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.unary_shape_check(op_name, a, b)?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`m` vector to every row of an `n×m` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, m) = self.expect_matrix("add_row", a)?;
        let rs = self.value(row).shape();
        if rs != [m] {
            return Err(Error::Dimension {
                op: "add_row",
                left: vec![n, m],
                right: rs.to_vec(),
            });
        }
        let b = self.value(row).data();
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_mut(m.max(1)) {
            add_into(chunk, b);
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::AddRow(a, row), rg))
    }

    /// Divides row `i` of an `n×d` matrix by `s[i]`.
    pub fn div_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (n, d) = self.expect_matrix("div_rows", x)?;
        if self.value(s).shape() != [n] {
            return Err(Error::Dimension {
                op: "div_rows",
                left: vec![n, d],
                right: self.value(s).shape().to_vec(),
            });
        }
        let sv = self.value(s).data();
        let mut out = self.value(x).data().to_vec();
        for (i, chunk) in out.chunks_mut(d.max(1)).enumerate() {
            for v in chunk {
                *v /= sv[i];
            }
        }
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(Tensor::matrix(n, d, out)?, Op::DivRows(x, s), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|v| v * c);
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, c), rg)
    }

    /// Adds the scalar `c` to every element.
    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|v| v + c);
        let rg = self.rg(a);
        self.push(t, Op::Shift(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(a);
        self.push(t, Op::Relu(a), rg)
    }

    /// Elementwise `min(max(x, lo), hi)`. The gradient is passed only where
    /// `lo < x < hi` strictly; it is zero at and beyond either bound.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo >= hi || lo.is_nan() || hi.is_nan() {
            return Err(Error::Config(format!(
                "clamp bounds must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        let t = self.value(a).map(|v| v.max(lo).min(hi));
        let rg = self.rg(a);
        Ok(self.push(t, Op::Clamp(a, lo, hi), rg))
    }

    /// Elementwise arccosine. Inputs must lie strictly inside (-1, 1); clamp
    /// first when values may touch the boundary.
    pub fn arccos(&mut self, a: Var) -> Result<Var> {
        if let Some((i, &v)) = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.abs() < 1.0))
        {
            return Err(Error::Domain {
                op: "arccos",
                index: i,
                value: v,
                expected: "|x| < 1; clamp the input first",
            });
        }
        let t = self.value(a).map(f64::acos);
        let rg = self.rg(a);
        Ok(self.push(t, Op::Arccos(a), rg))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::cos);
        let rg = self.rg(a);
        self.push(t, Op::Cos(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some((i, &v)) = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0))
        {
            return Err(Error::Domain {
                op: "log",
                index: i,
                value: v,
                expected: "x > 0",
            });
        }
        let t = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        Ok(self.push(t, Op::Log(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::Dimension {
                op: "mean",
                left: self.value(a).shape().to_vec(),
                right: vec![1],
            });
        }
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s / n as f64), Op::Mean(a), rg))
    }

    /// Euclidean norm of each row of an `n×d` matrix.
    pub fn l2norm_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.expect_matrix("l2norm_rows", x)?;
        if d == 0 {
            return Err(Error::Dimension {
                op: "l2norm_rows",
                left: vec![n, d],
                right: vec![n, 1],
            });
        }
        let xv = self.value(x);
        let out: Vec<f64> = (0..n).map(|i| norm(xv.row(i))).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::vector(out), Op::L2NormRows(x), rg))
    }

    /// Row-wise log-softmax using the max-shifted log-sum-exp.
    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (n, k) = self.expect_matrix("log_softmax_rows", x)?;
        let xv = self.value(x);
        let mut out = Vec::with_capacity(n * k);
        for i in 0..n {
            let row = xv.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|v| v - lse));
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(n, k, out)?, Op::LogSoftmaxRows(x), rg))
    }

    /// Picks elements by flat (row-major) index into a vector.
    pub fn gather(&mut self, x: Var, indices: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = indices.iter().find(|&&i| i >= xv.len()) {
            return Err(Error::Dimension {
                op: "gather",
                left: xv.shape().to_vec(),
                right: vec![bad],
            });
        }
        let out = indices.iter().map(|&i| xv.data()[i]).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::vector(out), Op::Gather(x, indices), rg))
    }

    /// All-pairs Euclidean distances between the rows of `x`.
    ///
    /// Values are exact (identical rows give 0). On the backward path pairs
    /// whose squared distance is at most [`NORM_FLOOR`] receive no gradient.
    pub fn pairwise_euclidean(&mut self, x: Var) -> Result<Var> {
        let (b, _) = self.expect_matrix("pairwise_euclidean", x)?;
        let xv = self.value(x);
        let mut out = vec![0.0; b * b];
        for i in 0..b {
            for j in (i + 1)..b {
                let d = xv
                    .row(i)
                    .iter()
                    .zip(xv.row(j))
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum::<f64>()
                    .sqrt();
                out[i * b + j] = d;
                out[j * b + i] = d;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(b, b, out)?, Op::PairwiseEuclidean(x), rg))
    }

    /// Elementwise product with a fixed (non-differentiable) mask.
    pub fn mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let xv = self.value(x);
        if mask.len() != xv.len() {
            return Err(Error::Dimension {
                op: "mask",
                left: xv.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Mask(x, mask), rg))
    }

    /// Records a user-defined operation whose forward value has already been
    /// computed.
    pub fn custom(&mut self, inputs: Vec<Var>, value: Tensor, backward: BackwardFn) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(value, Op::Custom(inputs, backward), rg)
    }

    /// Propagates the gradient of a scalar `loss` to every leaf that requires
    /// it. Leaf gradients accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !self.rg(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => add_into(acc.data_mut(), &g),
                    None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?),
                }
                continue;
            }
            for (input, contribution) in self.local_backward(i, &g)? {
                if !self.rg(input) {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => add_into(acc, &contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        Ok(())
    }

    fn local_backward(&self, i: usize, g: &[f64]) -> Result<Vec<(Var, Vec<f64>)>> {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let out = node.value.data();
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (r, s) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let t = self.value(*b).shape()[1];
                let mut res = Vec::with_capacity(2);
                if self.rg(*a) {
                    // g [r×t] · bᵀ [t×s]
                    res.push((*a, matmul_a_bt(g, val(*b), r, t, s)));
                }
                if self.rg(*b) {
                    // aᵀ [s×r] · g [r×t]
                    res.push((*b, matmul_at_b(val(*a), g, r, s, t)));
                }
                res
            }
            Op::Transpose(a) => {
                let (r, c) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                vec![(*a, transpose_raw(g, c, r))]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|v| -v).collect())],
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                vec![
                    (*a, g.iter().zip(vb).map(|(g, y)| g * y).collect()),
                    (*b, g.iter().zip(va).map(|(g, x)| g * x).collect()),
                ]
            }
            Op::AddRow(a, row) => {
                let m = self.value(*row).len();
                let mut gr = vec![0.0; m];
                for chunk in g.chunks(m.max(1)) {
                    add_into(&mut gr, chunk);
                }
                vec![(*a, g.to_vec()), (*row, gr)]
            }
            Op::DivRows(x, s) => {
                let d = self.value(*x).cols();
                let (xv, sv) = (val(*x), val(*s));
                let mut gx = vec![0.0; g.len()];
                let mut gs = vec![0.0; sv.len()];
                for (r, &si) in sv.iter().enumerate() {
                    let mut acc = 0.0;
                    for c in 0..d {
                        let k = r * d + c;
                        gx[k] = g[k] / si;
                        acc += g[k] * xv[k];
                    }
                    gs[r] = -acc / (si * si);
                }
                vec![(*x, gx), (*s, gs)]
            }
            Op::Scale(a, c) => vec![(*a, g.iter().map(|v| v * c).collect())],
            Op::Shift(a) => vec![(*a, g.to_vec())],
            Op::Relu(a) => {
                let x = val(*a);
                vec![(
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect(),
                )]
            }
            Op::Clamp(a, lo, hi) => {
                let x = val(*a);
                vec![(
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(g, &x)| if x > *lo && x < *hi { *g } else { 0.0 })
                        .collect(),
                )]
            }
            Op::Arccos(a) => {
                let x = val(*a);
                vec![(
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(g, x)| -g / (1.0 - x * x).sqrt())
                        .collect(),
                )]
            }
            Op::Cos(a) => {
                let x = val(*a);
                vec![(*a, g.iter().zip(x).map(|(g, x)| -g * x.sin()).collect())]
            }
            Op::Log(a) => {
                let x = val(*a);
                vec![(*a, g.iter().zip(x).map(|(g, x)| g / x).collect())]
            }
            Op::Sum(a) => vec![(*a, vec![g[0]; self.value(*a).len()])],
            Op::Mean(a) => {
                let n = self.value(*a).len();
                vec![(*a, vec![g[0] / n as f64; n])]
            }
            Op::L2NormRows(x) => {
                let xv = self.value(*x);
                let d = xv.cols();
                let mut gx = vec![0.0; xv.len()];
                for (r, &nr) in out.iter().enumerate() {
                    if nr < NORM_FLOOR {
                        continue;
                    }
                    for c in 0..d {
                        gx[r * d + c] = g[r] * xv.data()[r * d + c] / nr;
                    }
                }
                vec![(*x, gx)]
            }
            Op::LogSoftmaxRows(x) => {
                let k = self.value(*x).cols();
                let mut gx = vec![0.0; g.len()];
                for r in 0..g.len() / k.max(1) {
                    let gs: f64 = g[r * k..(r + 1) * k].iter().sum();
                    for c in 0..k {
                        let idx = r * k + c;
                        gx[idx] = g[idx] - out[idx].exp() * gs;
                    }
                }
                vec![(*x, gx)]
            }
            Op::Gather(x, indices) => {
                let mut gx = vec![0.0; self.value(*x).len()];
                for (gi, &idx) in g.iter().zip(indices) {
                    gx[idx] += gi;
                }
                vec![(*x, gx)]
            }
            Op::PairwiseEuclidean(x) => {
                let xv = self.value(*x);
                let (b, d) = (xv.rows(), xv.cols());
                let mut gx = vec![0.0; xv.len()];
                for i in 0..b {
                    for j in 0..b {
                        let dist = out[i * b + j];
                        if i == j || dist * dist <= NORM_FLOOR {
                            continue;
                        }
                        let c = g[i * b + j] / dist;
                        if c == 0.0 {
                            continue;
                        }
                        for k in 0..d {
                            let diff = xv.data()[i * d + k] - xv.data()[j * d + k];
                            gx[i * d + k] += c * diff;
                            gx[j * d + k] -= c * diff;
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::Mask(x, m) => vec![(*x, g.iter().zip(m).map(|(g, m)| g * m).collect())],
            Op::Custom(inputs, backward) => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let gt = Tensor::new(node.value.shape().to_vec(), g.to_vec())?;
                let grads = backward(&ins, &node.value, &gt);
                if grads.len() != inputs.len() {
                    return Err(Error::Usage(format!(
                        "custom op returned {} gradients for {} inputs",
                        grads.len(),
                        inputs.len()
                    )));
                }
                let mut res = Vec::with_capacity(inputs.len());
                for (v, gr) in inputs.iter().zip(grads) {
                    if gr.shape() != self.value(*v).shape() {
                        return Err(Error::Dimension {
                            op: "custom backward",
                            left: gr.shape().to_vec(),
                            right: self.value(*v).shape().to_vec(),
                        });
                    }
                    res.push((*v, gr.into_data()));
                }
                res
            }
        })
    }
}

pub(crate) fn add_into(acc: &mut [f64], other: &[f64]) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `a [r×s] · b [s×t]`
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], r: usize, s: usize, t: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * t];
    for i in 0..r {
        let orow = &mut out[i * t..(i + 1) * t];
        for k in 0..s {
            let aik = a[i * s + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * t..(k + 1) * t];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

/// `g [r×t] · bᵀ` where `b` is `[s×t]`; result `[r×s]`.
fn matmul_a_bt(g: &[f64], b: &[f64], r: usize, t: usize, s: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * s];
    for i in 0..r {
        let grow = &g[i * t..(i + 1) * t];
        for k in 0..s {
            let brow = &b[k * t..(k + 1) * t];
            out[i * s + k] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ · g` where `a` is `[r×s]` and `g` is `[r×t]`; result `[s×t]`.
fn matmul_at_b(a: &[f64], g: &[f64], r: usize, s: usize, t: usize) -> Vec<f64> {
    let mut out = vec![0.0; s * t];
    for i in 0..r {
        let grow = &g[i * t..(i + 1) * t];
        for k in 0..s {
            let aik = a[i * s + k];
            if aik == 0.0 {
                continue;
            }
            let orow = &mut out[k * t..(k + 1) * t];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += aik * gv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_identity_and_hand_example() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::identity(3));
        let v = tape.constant(Tensor::matrix(3, 1, vec![1.5, -2.0, 7.0]).unwrap());
        let out = tape.matmul(i, v).unwrap();
        assert_eq!(tape.value(out).data(), &[1.5, -2.0, 7.0]);

        let a = tape.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
        let b = tape.constant(Tensor::from_rows(&[[1.0], [1.0]]).unwrap());
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(out).shape(), &[2, 1]);
        assert_eq!(tape.value(out).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn clamp_cases() {
        let eps = 1e-7;
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![0.5, 1.0, -3.0]));
        let c = tape.clamp(x, eps - 1.0, 1.0 - eps).unwrap();
        let v = tape.value(c).data().to_vec();
        assert_eq!(v[0], 0.5);
        assert!(close(v[1], 0.9999999, 1e-15));
        assert!(close(v[2], -0.9999999, 1e-15));
        let s = tape.sum(c);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn clamp_gradient_is_zero_exactly_at_bounds() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![-1.0, 1.0]));
        let c = tape.clamp(x, -1.0, 1.0).unwrap();
        let s = tape.sum(c);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn clamp_rejects_inverted_bounds() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        assert!(matches!(tape.clamp(x, 1.0, 1.0), Err(Error::Config(_))));
        assert!(matches!(tape.clamp(x, 2.0, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn arccos_values_and_gradient() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![0.0, 1.0 - 1e-7, 0.5]));
        let y = tape.arccos(x).unwrap();
        let v = tape.value(y).data().to_vec();
        assert!(close(v[0], std::f64::consts::FRAC_PI_2, 1e-15));
        assert!(close(v[1], 4.4721e-4, 1e-8), "{}", v[1]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        let g = tape.grad(x).unwrap().data()[2];
        assert!(close(g, -1.1547005383792517, 1e-12));
    }

    #[test]
    fn arccos_rejects_boundary() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.2, -1.0]));
        match tape.arccos(x) {
            Err(Error::Domain { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected domain error, got {other:?}"),
        }
        let nan = tape.constant(Tensor::scalar(f64::NAN));
        assert!(tape.arccos(nan).is_err());
    }

    #[test]
    fn l2norm_rows_cases() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::from_rows(&[[3.0, 4.0], [0.0, 0.0], [1.0, 0.0]]).unwrap());
        let n = tape.l2norm_rows(x).unwrap();
        assert_eq!(tape.value(n).data(), &[5.0, 0.0, 1.0]);
        let s = tape.sum(n);
        tape.backward(s).unwrap();
        assert_eq!(
            tape.grad(x).unwrap().data(),
            &[0.6, 0.8, 0.0, 0.0, 1.0, 0.0]
        );
    }

    #[test]
    fn relu_and_log_softmax() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![-2.0, 3.0]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 3.0]);
        let s = tape.sum(r);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0]);

        let z = tape.constant(Tensor::from_rows(&[[0.0, 0.0], [1000.0, 0.0]]).unwrap());
        let lp = tape.log_softmax_rows(z).unwrap();
        let v = tape.value(lp).data();
        let ln2 = std::f64::consts::LN_2;
        assert!(close(v[0], -ln2, 1e-15) && close(v[1], -ln2, 1e-15));
        assert!(v.iter().all(|x| x.is_finite()));
        assert_eq!(v[2], 0.0);
        assert_eq!(v[3], -1000.0);
    }

    #[test]
    fn backward_of_sum_and_constant() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![1.0, 2.0]));
        let c = tape.constant(Tensor::scalar(4.0));
        tape.backward(c).unwrap();
        assert_eq!(tape.grad_or_zeros(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.mul(x, x).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[4.0, 8.0]);
        tape.zero_grad();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn pairwise_euclidean_hand_value() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[[1.0, 0.0], [0.0, 2.0], [1.0, 0.0]]).unwrap());
        let d = tape.pairwise_euclidean(x).unwrap();
        let v = tape.value(d);
        assert!(close(v.get2(0, 1), 5f64.sqrt(), 1e-15));
        assert_eq!(v.get2(0, 2), 0.0);
        assert_eq!(v.get2(1, 1), 0.0);
    }

    #[test]
    fn named_grads_sum_over_bindings() {
        let mut tape = Tape::new();
        let w = Tensor::vector(vec![1.0, 2.0]);
        let a = tape.bind("w", &w, true);
        let b = tape.bind("w", &w, true);
        let frozen = tape.bind("f", &w, false);
        let s1 = tape.sum(a);
        let s2 = tape.sum(b);
        let s3 = tape.sum(frozen);
        let t = tape.add(s1, s2).unwrap();
        let t = tape.add(t, s3).unwrap();
        tape.backward(t).unwrap();
        assert_eq!(tape.named_grad("w").unwrap().data(), &[2.0, 2.0]);
        assert!(tape.named_grad("f").is_none());
    }
}
