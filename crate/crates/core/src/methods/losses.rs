//! Method losses over already-computed representations.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `-(2/n) * sum_i cos(z_i, h2_i)`.
pub fn bgrl_loss<T: Real>(tape: &mut Tape<T>, z: Var, h2: Var) -> Result<Var> {
    let c = tape.row_cosine(z, h2)?;
    let m = tape.mean(c)?;
    tape.scale(m, T::from_f64(-2.0))
}

/// `(lambda/n) * sum_i cos(z_i, hc_i) - ((1-lambda)/n) * sum_i cos(z_i, h2_i)`
/// where `hc` encodes the corrupted view.
pub fn tbgrl_loss<T: Real>(tape: &mut Tape<T>, z: Var, h2: Var, hc: Var, lambda: f64) -> Result<Var> {
    let neg = tape.row_cosine(z, hc)?;
    let neg = tape.mean(neg)?;
    let neg = tape.scale(neg, T::from_f64(lambda))?;
    let pos = tape.row_cosine(z, h2)?;
    let pos = tape.mean(pos)?;
    let pos = tape.scale(pos, T::from_f64(1.0 - lambda))?;
    tape.sub(neg, pos)
}

/// Mean of `max(0, h_u.h_w - h_u.h_v + margin)` over `(u, v, w)` triples.
pub fn margin_loss<T: Real>(tape: &mut Tape<T>, h: Var, triples: &[(usize, usize, usize)], margin: f64) -> Result<Var> {
    let us: Vec<usize> = triples.iter().map(|t| t.0).collect();
    let vs: Vec<usize> = triples.iter().map(|t| t.1).collect();
    let ws: Vec<usize> = triples.iter().map(|t| t.2).collect();
    let hu = tape.gather(h, &us)?;
    let hv = tape.gather(h, &vs)?;
    let hw = tape.gather(h, &ws)?;
    let pos = tape.row_dot(hu, hv)?;
    let neg = tape.row_dot(hu, hw)?;
    let d = tape.sub(neg, pos)?;
    let d = tape.add_scalar(d, T::from_f64(margin))?;
    let j = tape.relu(d)?;
    tape.mean(j)
}

/// One direction of the symmetric InfoNCE: `u` are anchors, `v` the other
/// view, both row-normalized.
fn info_nce_half<T: Real>(tape: &mut Tape<T>, u: Var, v: Var, tau: f64) -> Result<Var> {
    let inv = T::from_f64(1.0 / tau);
    // Similarities are at most 1/tau; shift by it before exponentiating.
    let shift = T::from_f64(-1.0 / tau);
    let cross = tape.matmul_t(u, false, v, true)?;
    let cross = tape.scale(cross, inv)?;
    let cross = tape.add_scalar(cross, shift)?;
    let intra = tape.matmul_t(u, false, u, true)?;
    let intra = tape.scale(intra, inv)?;
    let intra = tape.add_scalar(intra, shift)?;
    let pos = tape.diag(cross)?;
    let e_cross = tape.exp(cross)?;
    let e_intra = tape.exp(intra)?;
    let s_cross = tape.row_sum(e_cross)?;
    let s_intra = tape.row_sum(e_intra)?;
    let self_term = tape.diag(e_intra)?;
    let denom = tape.add(s_cross, s_intra)?;
    let denom = tape.sub(denom, self_term)?;
    let log_denom = tape.log(denom)?;
    let l = tape.sub(log_denom, pos)?;
    tape.mean(l)
}

/// Symmetric InfoNCE with inter- and intra-view negatives (GRACE).
pub fn grace_loss<T: Real>(tape: &mut Tape<T>, p1: Var, p2: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature {tau} must be positive")));
    }
    let u1 = tape.row_normalize(p1)?;
    let u2 = tape.row_normalize(p2)?;
    let l1 = info_nce_half(tape, u1, u2, tau)?;
    let l2 = info_nce_half(tape, u2, u1, tau)?;
    let s = tape.add(l1, l2)?;
    tape.scale(s, T::from_f64(0.5))
}

fn sum_sq_minus_diag<T: Real>(tape: &mut Tape<T>, c: Var) -> Result<(Var, Var)> {
    let sq = tape.square(c)?;
    let total = tape.sum(sq)?;
    let d = tape.diag(c)?;
    let dsq = tape.square(d)?;
    let dsum = tape.sum(dsq)?;
    let off = tape.sub(total, dsum)?;
    Ok((d, off))
}

/// `sum_i (1 - C_ii)^2 + w_off * sum_{i != j} C_ij^2` with
/// `C = std(h1)^T std(h2) / n`.
pub fn gbt_loss<T: Real>(tape: &mut Tape<T>, h1: Var, h2: Var, w_off: f64) -> Result<Var> {
    let n = tape.value(h1).rows();
    let z1 = tape.col_standardize(h1)?;
    let z2 = tape.col_standardize(h2)?;
    let c = tape.matmul_t(z1, true, z2, false)?;
    let c = tape.scale(c, T::from_f64(1.0 / n as f64))?;
    let (d, off) = sum_sq_minus_diag(tape, c)?;
    let one_minus = tape.scale(d, T::from_f64(-1.0))?;
    let one_minus = tape.add_scalar(one_minus, T::one())?;
    let on = tape.square(one_minus)?;
    let on = tape.sum(on)?;
    let off = tape.scale(off, T::from_f64(w_off))?;
    tape.add(on, off)
}

/// `|z1 - z2|^2 + w_dec * (|z1^T z1 - I|^2 + |z2^T z2 - I|^2)` with
/// `z = std(h) / sqrt(n)`.
pub fn ccassg_loss<T: Real>(tape: &mut Tape<T>, h1: Var, h2: Var, w_dec: f64) -> Result<Var> {
    let (n, d) = tape.value(h1).shape();
    let s = T::from_f64(1.0 / (n as f64).sqrt());
    let z1 = tape.col_standardize(h1)?;
    let z1 = tape.scale(z1, s)?;
    let z2 = tape.col_standardize(h2)?;
    let z2 = tape.scale(z2, s)?;
    let diff = tape.sub(z1, z2)?;
    let inv = tape.square(diff)?;
    let inv = tape.sum(inv)?;
    let eye = tape.constant(Tensor::identity(d));
    let mut dec = None;
    for z in [z1, z2] {
        let g = tape.matmul_t(z, true, z, false)?;
        let g = tape.sub(g, eye)?;
        let g = tape.square(g)?;
        let g = tape.sum(g)?;
        dec = Some(match dec {
            None => g,
            Some(acc) => tape.add(acc, g)?,
        });
    }
    let dec = tape.scale(dec.expect("two views"), T::from_f64(w_dec))?;
    tape.add(inv, dec)
}

/// Mean binary cross-entropy of pair logits.
pub fn e2e_loss<T: Real>(tape: &mut Tape<T>, logits: Var, labels: &[T]) -> Result<Var> {
    tape.bce_with_logits(logits, labels)
}
