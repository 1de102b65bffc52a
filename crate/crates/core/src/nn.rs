//! Layer stacks shared by the encoders, predictor, projection head and decoder.
//!
//! Parameters live in a [`ParamSet`] under `{prefix}.{w1,b1,a1,w2,b2,a2}`;
//! the structs here only carry dimensions and the prefix.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{glorot_with, ParamSet};
use crate::scalar::Real;
use crate::sparse::CsrMatrix;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Initial PReLU slope.
pub const PRELU_INIT: f64 = 0.25;

fn key(prefix: &str, leaf: &str) -> String {
    format!("{prefix}.{leaf}")
}

fn insert_layer<T: Real>(
    params: &mut ParamSet<T>,
    prefix: &str,
    idx: usize,
    rows: usize,
    cols: usize,
    with_slope: bool,
    rng: &mut impl Rng,
) -> Result<()> {
    params.insert(key(prefix, &format!("w{idx}")), glorot_with(rows, cols, rng)?)?;
    params.insert(key(prefix, &format!("b{idx}")), Tensor::zeros(1, cols))?;
    if with_slope {
        params.insert(key(prefix, &format!("a{idx}")), Tensor::full(1, cols, T::from_f64(PRELU_INIT)))?;
    }
    Ok(())
}

/// Two-layer GCN: `PReLU(Â · PReLU(Â · X · W1 + b1) · W2 + b2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnEncoder {
    pub prefix: String,
    pub in_dim: usize,
    pub dim: usize,
}

impl GcnEncoder {
    pub fn new(prefix: &str, in_dim: usize, dim: usize) -> Self {
        GcnEncoder {
            prefix: prefix.to_string(),
            in_dim,
            dim,
        }
    }

    pub fn init<T: Real>(&self, params: &mut ParamSet<T>, rng: &mut impl Rng) -> Result<()> {
        insert_layer(params, &self.prefix, 1, self.in_dim, self.dim, true, rng)?;
        insert_layer(params, &self.prefix, 2, self.dim, self.dim, true, rng)
    }

    /// Records the forward pass; with `trainable = false` every parameter
    /// enters the tape as a constant.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &ParamSet<T>,
        adj: &Arc<CsrMatrix<T>>,
        x: &Arc<CsrMatrix<T>>,
        trainable: bool,
    ) -> Result<Var> {
        if x.cols() != self.in_dim || adj.rows() != x.rows() {
            return Err(Error::shape(
                "gcn_forward",
                format!("adjacency {}x{}, features {}x{}, expected {} features", adj.rows(), adj.cols(), x.rows(), x.cols(), self.in_dim),
            ));
        }
        let p = |tape: &mut Tape<T>, leaf: &str| params.load(tape, &key(&self.prefix, leaf), trainable);
        let w1 = p(tape, "w1")?;
        let xw = tape.spmm(x, w1)?;
        let h = tape.spmm(adj, xw)?;
        let b1 = p(tape, "b1")?;
        let h = tape.add_bias(h, b1)?;
        let a1 = p(tape, "a1")?;
        let h = tape.prelu(h, a1)?;
        let w2 = p(tape, "w2")?;
        let hw = tape.matmul(h, w2)?;
        let h = tape.spmm(adj, hw)?;
        let b2 = p(tape, "b2")?;
        let h = tape.add_bias(h, b2)?;
        let a2 = p(tape, "a2")?;
        tape.prelu(h, a2)
    }
}

/// `Linear -> PReLU -> Linear`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp2 {
    pub prefix: String,
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
}

impl Mlp2 {
    pub fn new(prefix: &str, in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        Mlp2 {
            prefix: prefix.to_string(),
            in_dim,
            hidden,
            out_dim,
        }
    }

    pub fn init<T: Real>(&self, params: &mut ParamSet<T>, rng: &mut impl Rng) -> Result<()> {
        insert_layer(params, &self.prefix, 1, self.in_dim, self.hidden, true, rng)?;
        insert_layer(params, &self.prefix, 2, self.hidden, self.out_dim, false, rng)
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, x: Var, trainable: bool) -> Result<Var> {
        let p = |tape: &mut Tape<T>, leaf: &str| params.load(tape, &key(&self.prefix, leaf), trainable);
        let w1 = p(tape, "w1")?;
        let h = tape.matmul(x, w1)?;
        let b1 = p(tape, "b1")?;
        let h = tape.add_bias(h, b1)?;
        let a1 = p(tape, "a1")?;
        let h = tape.prelu(h, a1)?;
        let w2 = p(tape, "w2")?;
        let h = tape.matmul(h, w2)?;
        let b2 = p(tape, "b2")?;
        tape.add_bias(h, b2)
    }
}

/// Predictor head of the bootstrapped methods (`d -> d_hidden -> d`).
pub type PredictorMlp = Mlp2;
