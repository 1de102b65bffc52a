//! Reverse-mode differentiation over a fixed operator set.
//!
//! Every operation is recorded on a [`Tape`] together with what its backward
//! rule needs. [`Tape::backward`] walks the record in exact reverse order and
//! hands back gradients for the leaves created with [`Tape::param`] or
//! [`Tape::leaf`]. Leaves made with [`Tape::constant`] (and anything computed
//! only from constants) never receive gradient, which is how stop-gradient
//! branches are expressed.
//!
//! ```
//! use nclp::tape::Tape;
//! use nclp::tensor::Tensor;
//!
//! let mut tape = Tape::<f64>::new();
//! let w = tape.param("w", Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
//! let loss = tape.sum(w).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.named("w").unwrap().data(), &[1.0, 1.0]);
//! ```

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::sparse::{self, CsrMatrix};
use crate::tensor::{gemm_into, Tensor};

/// Denominator guard for cosine similarity and row normalization.
pub const COSINE_EPS: f64 = 1e-8;
/// Variance guard for column standardization.
pub const STANDARDIZE_EPS: f64 = 1e-8;

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Transpose(Var),
    SpMM { s: Arc<CsrMatrix<T>>, b: Var },
    AddBias { a: Var, bias: Var },
    PRelu { a: Var, slope: Var },
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    Diag(Var),
    RowDot(Var, Var),
    RowCosine(Var, Var),
    Gather { a: Var, idx: Vec<usize> },
    ColStandardize { a: Var, sigma: Vec<T> },
    RowNormalize { a: Var, norms: Vec<T> },
    BceWithLogits { a: Var, labels: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    name: Option<String>,
}

/// Gradients of the leaves that required them.
#[derive(Debug, Default)]
pub struct Gradients<T> {
    by_var: HashMap<Var, Tensor<T>>,
    named: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.by_var.get(&v)
    }

    pub fn named(&self, name: &str) -> Option<&Tensor<T>> {
        self.named.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.named.keys().map(String::as_str)
    }

    pub fn into_named(self) -> BTreeMap<String, Tensor<T>> {
        self.named
    }
}

/// Record of executed operations.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Named trainable leaf.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Var {
        self.push_leaf(value, true, Some(name.into()))
    }

    /// Anonymous leaf; gradients are retrievable through [`Gradients::get`].
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push_leaf(value, requires_grad, None)
    }

    /// Stop-gradient input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false, None)
    }

    /// Copies `v` into a new constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool, name: Option<String>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            name,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            name: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn unary(&mut self, op_name: &'static str, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let out = self.value(a).map(f);
        self.push(op_name, out, op, &[a])
    }

    fn binary(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(op_name, a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data)?;
        self.push(op_name, out, op, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) @ op(b)` where `op` transposes when the flag is set.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let m = if ta { x.cols() } else { x.rows() };
        let n = if tb { y.rows() } else { y.cols() };
        let mut out = Tensor::zeros(m, n);
        gemm_into(T::one(), x, ta, y, tb, T::zero(), &mut out)?;
        self.push("matmul", out, Op::MatMul { a, b, ta, tb }, &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push("transpose", out, Op::Transpose(a), &[a])
    }

    /// Constant sparse matrix times a dense operand.
    pub fn spmm(&mut self, s: &Arc<CsrMatrix<T>>, b: Var) -> Result<Var> {
        let out = sparse::spmm(s, self.value(b))?;
        self.push("spmm", out, Op::SpMM { s: Arc::clone(s), b }, &[b])
    }

    /// Adds a `1 x c` bias row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != x.cols() {
            return Err(Error::shape("add_bias", format!("{:?} + {:?}", x.shape(), bv.shape())));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o = *o + b;
            }
        }
        self.push("add_bias", out, Op::AddBias { a, bias }, &[a, bias])
    }

    /// Parametric ReLU with a per-column (`1 x c`) or shared (`1 x 1`) slope.
    pub fn prelu(&mut self, a: Var, slope: Var) -> Result<Var> {
        let (x, s) = (self.value(a), self.value(slope));
        let shared = s.shape() == (1, 1);
        if s.rows() != 1 || !(shared || s.cols() == x.cols()) {
            return Err(Error::shape("prelu", format!("{:?} slope {:?}", x.shape(), s.shape())));
        }
        let mut out = x.clone();
        let cols = out.cols();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            if *o <= T::zero() {
                let k = if shared { 0 } else { i % cols };
                *o = *o * s.data()[k];
            }
        }
        self.push("prelu", out, Op::PRelu { a, slope }, &[a, slope])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |v| v.max(T::zero()), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, T::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary("log", a, T::ln, Op::Log(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.unary("scale", a, |v| v * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        self.unary("add_scalar", a, |v| v + c, Op::AddScalar(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    /// Sum of all entries as a `1 x 1` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Mean of all entries; the mean of an empty tensor is zero.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let n = x.data().len();
        let s: T = x.data().iter().copied().sum();
        let m = if n == 0 { T::zero() } else { s / T::from_f64(n as f64) };
        self.push("mean", Tensor::scalar(m), Op::Mean(a), &[a])
    }

    /// Per-row sums as an `n x 1` column.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let data = (0..x.rows()).map(|r| x.row(r).iter().copied().sum()).collect();
        let out = Tensor::from_vec(x.rows(), 1, data)?;
        self.push("row_sum", out, Op::RowSum(a), &[a])
    }

    /// Diagonal of a square matrix as an `n x 1` column.
    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rows() != x.cols() {
            return Err(Error::shape("diag", format!("{:?} is not square", x.shape())));
        }
        let data = (0..x.rows()).map(|i| x.get(i, i)).collect();
        let out = Tensor::from_vec(x.rows(), 1, data)?;
        self.push("diag", out, Op::Diag(a), &[a])
    }

    /// Per-row inner products as an `n x 1` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_dot", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = (0..x.rows()).map(|r| dot(x.row(r), y.row(r))).collect();
        let out = Tensor::from_vec(x.rows(), 1, data)?;
        self.push("row_dot", out, Op::RowDot(a, b), &[a, b])
    }

    /// Per-row cosine similarity as an `n x 1` column.
    ///
    /// A row pair where either side is exactly zero has similarity 0 and
    /// receives zero gradient. Otherwise the denominator is
    /// `max(|a| |b|, 1e-8)`.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_cosine", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = (0..x.rows()).map(|r| cosine(x.row(r), y.row(r))).collect();
        let out = Tensor::from_vec(x.rows(), 1, data)?;
        self.push("row_cosine", out, Op::RowCosine(a, b), &[a, b])
    }

    /// Row `i` of the output is row `idx[i]` of `a`.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows()) {
            return Err(Error::shape("gather", format!("row {bad} of {}", x.rows())));
        }
        let c = x.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(x.row(i));
        }
        let out = Tensor::from_vec(idx.len(), c, data)?;
        self.push(
            "gather",
            out,
            Op::Gather {
                a,
                idx: idx.to_vec(),
            },
            &[a],
        )
    }

    /// Standardizes each column to zero mean and unit (population) variance.
    pub fn col_standardize(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (n, c) = x.shape();
        if n == 0 {
            return Err(Error::shape("col_standardize", "no rows"));
        }
        let nf = T::from_f64(n as f64);
        let eps = T::from_f64(STANDARDIZE_EPS);
        let mut mean = vec![T::zero(); c];
        for r in 0..n {
            for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                *m = *m + v;
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / nf);
        let mut var = vec![T::zero(); c];
        for r in 0..n {
            for ((s, &v), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s = *s + (v - m) * (v - m);
            }
        }
        let sigma: Vec<T> = var.iter().map(|&s| (s / nf + eps).sqrt()).collect();
        let mut out = x.clone();
        for r in 0..n {
            for ((o, &m), &sd) in out.row_mut(r).iter_mut().zip(&mean).zip(&sigma) {
                *o = (*o - m) / sd;
            }
        }
        self.push("col_standardize", out, Op::ColStandardize { a, sigma }, &[a])
    }

    /// Scales each row to unit L2 norm (denominator guarded by 1e-8).
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let eps = T::from_f64(COSINE_EPS);
        let norms: Vec<T> = (0..x.rows()).map(|r| dot(x.row(r), x.row(r)).sqrt()).collect();
        let mut out = x.clone();
        for (r, &nrm) in norms.iter().enumerate() {
            let d = nrm.max(eps);
            out.row_mut(r).iter_mut().for_each(|v| *v = *v / d);
        }
        self.push("row_normalize", out, Op::RowNormalize { a, norms }, &[a])
    }

    /// Mean binary cross-entropy of logits against constant 0/1 labels.
    pub fn bce_with_logits(&mut self, a: Var, labels: &[T]) -> Result<Var> {
        let x = self.value(a);
        if x.data().len() != labels.len() {
            return Err(Error::shape(
                "bce_with_logits",
                format!("{} logits, {} labels", x.data().len(), labels.len()),
            ));
        }
        let n = labels.len();
        let total: T = x
            .data()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln())
            .sum();
        let m = if n == 0 { T::zero() } else { total / T::from_f64(n as f64) };
        self.push(
            "bce_with_logits",
            Tensor::scalar(m),
            Op::BceWithLogits {
                a,
                labels: labels.to_vec(),
            },
            &[a],
        )
    }

    /// Propagates `d loss / d v` to every reachable leaf that requires grad.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::BackwardTwice);
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::shape("backward", format!("loss has shape {:?}", self.value(loss).shape())));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        let mut out = Gradients::default();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                if let Some(name) = &node.name {
                    // A parameter loaded more than once (shared encoder over
                    // two views) gets the sum of its leaves' gradients.
                    match out.named.get_mut(name) {
                        Some(acc) => {
                            for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                                *a = *a + b;
                            }
                        }
                        None => {
                            out.named.insert(name.clone(), g.clone());
                        }
                    }
                }
                out.by_var.insert(Var(i), g);
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + b;
                }
            }
            slot => *slot = Some(g),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, ta, tb } => {
                let (x, w) = (self.value(a), self.value(b));
                if self.needs(a) {
                    let mut ga = Tensor::zeros(x.rows(), x.cols());
                    if ta {
                        gemm_into(T::one(), w, tb, g, true, T::zero(), &mut ga)?;
                    } else {
                        gemm_into(T::one(), g, false, w, !tb, T::zero(), &mut ga)?;
                    }
                    self.accumulate(grads, a, ga);
                }
                if self.needs(b) {
                    let mut gb = Tensor::zeros(w.rows(), w.cols());
                    if tb {
                        gemm_into(T::one(), g, true, x, ta, T::zero(), &mut gb)?;
                    } else {
                        gemm_into(T::one(), x, !ta, g, false, T::zero(), &mut gb)?;
                    }
                    self.accumulate(grads, b, gb);
                }
            }
            &Op::Transpose(a) => self.accumulate(grads, a, g.transpose()),
            Op::SpMM { s, b } => {
                if self.needs(*b) {
                    let gb = sparse::spmm_t(s, g)?;
                    self.accumulate(grads, *b, gb);
                }
            }
            &Op::AddBias { a, bias } => {
                if self.needs(bias) {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o = *o + v;
                        }
                    }
                    self.accumulate(grads, bias, gb);
                }
                self.accumulate(grads, a, g.clone());
            }
            &Op::PRelu { a, slope } => {
                let (x, s) = (self.value(a), self.value(slope));
                let cols = x.cols();
                let shared = s.cols() == 1 && cols != 1;
                let mut gx = g.clone();
                let mut gs = Tensor::zeros(1, s.cols());
                for (k, (gv, &xv)) in gx.data_mut().iter_mut().zip(x.data()).enumerate() {
                    if xv <= T::zero() {
                        let c = if shared { 0 } else { k % cols };
                        gs.data_mut()[c] = gs.data()[c] + *gv * xv;
                        *gv = *gv * s.data()[c];
                    }
                }
                self.accumulate(grads, a, gx);
                self.accumulate(grads, slope, gs);
            }
            &Op::Relu(a) => {
                let x = self.value(a);
                let gx = zip_map(g, x, |gv, xv| if xv > T::zero() { gv } else { T::zero() });
                self.accumulate(grads, a, gx);
            }
            &Op::Sigmoid(a) => {
                let gx = zip_map(g, y, |gv, yv| gv * yv * (T::one() - yv));
                self.accumulate(grads, a, gx);
            }
            &Op::Exp(a) => self.accumulate(grads, a, zip_map(g, y, |gv, yv| gv * yv)),
            &Op::Log(a) => {
                let gx = zip_map(g, self.value(a), |gv, xv| gv / xv);
                self.accumulate(grads, a, gx);
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.map(|v| -v));
            }
            &Op::Mul(a, b) => {
                let ga = zip_map(g, self.value(b), |gv, bv| gv * bv);
                let gb = zip_map(g, self.value(a), |gv, av| gv * av);
                self.accumulate(grads, a, ga);
                self.accumulate(grads, b, gb);
            }
            &Op::Scale(a, c) => self.accumulate(grads, a, g.map(|v| v * c)),
            &Op::AddScalar(a) => self.accumulate(grads, a, g.clone()),
            &Op::Sum(a) => {
                let (r, c) = self.value(a).shape();
                self.accumulate(grads, a, Tensor::full(r, c, g.item()));
            }
            &Op::Mean(a) => {
                let (r, c) = self.value(a).shape();
                let n = (r * c).max(1);
                self.accumulate(grads, a, Tensor::full(r, c, g.item() / T::from_f64(n as f64)));
            }
            &Op::RowSum(a) => {
                let (r, c) = self.value(a).shape();
                let mut gx = Tensor::zeros(r, c);
                for i in 0..r {
                    let gi = g.get(i, 0);
                    gx.row_mut(i).iter_mut().for_each(|v| *v = gi);
                }
                self.accumulate(grads, a, gx);
            }
            &Op::Diag(a) => {
                let n = self.value(a).rows();
                let mut gx = Tensor::zeros(n, n);
                for k in 0..n {
                    gx.set(k, k, g.get(k, 0));
                }
                self.accumulate(grads, a, gx);
            }
            &Op::RowDot(a, b) => {
                let (x, w) = (self.value(a), self.value(b));
                if self.needs(a) {
                    self.accumulate(grads, a, scale_rows(w, g));
                }
                if self.needs(b) {
                    self.accumulate(grads, b, scale_rows(x, g));
                }
            }
            &Op::RowCosine(a, b) => {
                let (x, w) = (self.value(a), self.value(b));
                let mut ga = Tensor::zeros(x.rows(), x.cols());
                let mut gb = Tensor::zeros(w.rows(), w.cols());
                let eps = T::from_f64(COSINE_EPS);
                for r in 0..x.rows() {
                    let (xr, wr) = (x.row(r), w.row(r));
                    let (nx, nw) = (dot(xr, xr).sqrt(), dot(wr, wr).sqrt());
                    if nx == T::zero() || nw == T::zero() {
                        continue;
                    }
                    let gr = g.get(r, 0);
                    let prod = nx * nw;
                    if prod > eps {
                        let cos = y.get(r, 0);
                        let (ka, kb) = (cos / (nx * nx), cos / (nw * nw));
                        for ((o, &xv), &wv) in ga.row_mut(r).iter_mut().zip(xr).zip(wr) {
                            *o = gr * (wv / prod - ka * xv);
                        }
                        for ((o, &xv), &wv) in gb.row_mut(r).iter_mut().zip(xr).zip(wr) {
                            *o = gr * (xv / prod - kb * wv);
                        }
                    } else {
                        for (o, &wv) in ga.row_mut(r).iter_mut().zip(wr) {
                            *o = gr * wv / eps;
                        }
                        for (o, &xv) in gb.row_mut(r).iter_mut().zip(xr) {
                            *o = gr * xv / eps;
                        }
                    }
                }
                self.accumulate(grads, a, ga);
                self.accumulate(grads, b, gb);
            }
            Op::Gather { a, idx } => {
                let x = self.value(*a);
                let mut gx = Tensor::zeros(x.rows(), x.cols());
                for (r, &src) in idx.iter().enumerate() {
                    for (o, &v) in gx.row_mut(src).iter_mut().zip(g.row(r)) {
                        *o = *o + v;
                    }
                }
                self.accumulate(grads, *a, gx);
            }
            Op::ColStandardize { a, sigma } => {
                let (n, c) = y.shape();
                let nf = T::from_f64(n as f64);
                let mut mean_g = vec![T::zero(); c];
                let mut mean_gz = vec![T::zero(); c];
                for r in 0..n {
                    for k in 0..c {
                        mean_g[k] = mean_g[k] + g.get(r, k);
                        mean_gz[k] = mean_gz[k] + g.get(r, k) * y.get(r, k);
                    }
                }
                mean_g.iter_mut().for_each(|v| *v = *v / nf);
                mean_gz.iter_mut().for_each(|v| *v = *v / nf);
                let mut gx = Tensor::zeros(n, c);
                for r in 0..n {
                    for k in 0..c {
                        let v = (g.get(r, k) - mean_g[k] - y.get(r, k) * mean_gz[k]) / sigma[k];
                        gx.set(r, k, v);
                    }
                }
                self.accumulate(grads, *a, gx);
            }
            Op::RowNormalize { a, norms } => {
                let eps = T::from_f64(COSINE_EPS);
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for (r, &nrm) in norms.iter().enumerate() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    if nrm > eps {
                        let proj = dot(yr, gr);
                        for ((o, &yv), &gv) in gx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = (gv - yv * proj) / nrm;
                        }
                    } else {
                        for (o, &gv) in gx.row_mut(r).iter_mut().zip(gr) {
                            *o = gv / eps;
                        }
                    }
                }
                self.accumulate(grads, *a, gx);
            }
            Op::BceWithLogits { a, labels } => {
                let x = self.value(*a);
                let n = T::from_f64(labels.len().max(1) as f64);
                let gi = g.item();
                let data = x
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&z, &l)| gi * (sigmoid(z) - l) / n)
                    .collect();
                self.accumulate(grads, *a, Tensor::from_vec(x.rows(), x.cols(), data)?);
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Cosine similarity with the zero-row and epsilon conventions of
/// [`Tape::row_cosine`].
pub fn cosine<T: Real>(a: &[T], b: &[T]) -> T {
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == T::zero() || nb == T::zero() {
        return T::zero();
    }
    dot(a, b) / (na * nb).max(T::from_f64(COSINE_EPS))
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

/// Row `r` of `m` scaled by `col[r]`.
fn scale_rows<T: Real>(m: &Tensor<T>, col: &Tensor<T>) -> Tensor<T> {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let s = col.get(r, 0);
        out.row_mut(r).iter_mut().for_each(|v| *v = *v * s);
    }
    out
}
