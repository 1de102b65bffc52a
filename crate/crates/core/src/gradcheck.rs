//! Central finite-difference checks of tape gradients.

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tape::{Tape, Var};

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-4;

/// Per-tensor denominators are floored at this fraction of the whole
/// gradient's norm, so a tensor whose true gradient is zero is judged
/// against the overall scale instead of its own round-off.
pub const NORM_FLOOR_REL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    /// `|analytic - numeric| / max(|analytic|, |numeric|, floor)` in the L2
    /// norm over the tensor, with `floor = NORM_FLOOR_REL * |full gradient|`.
    pub rel_err: f64,
    pub max_abs_err: f64,
}

/// Compares the gradient of `loss(params)` with respect to every tensor in
/// `params` against central differences. `loss` must load the parameters
/// through [`ParamSet::load`] with `trainable = true`.
pub fn check_gradients(
    params: &ParamSet<f64>,
    step: f64,
    loss: impl Fn(&ParamSet<f64>, &mut Tape<f64>) -> Result<Var>,
) -> Result<Vec<GradCheck>> {
    let eval = |p: &ParamSet<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let l = loss(p, &mut tape)?;
        Ok(tape.value(l).item())
    };
    let mut tape = Tape::new();
    let l = loss(params, &mut tape)?;
    let grads = tape.backward(l)?;
    let mut per_tensor = Vec::new();
    let mut probe = params.clone();
    for (name, t) in params.iter() {
        let analytic = match grads.named(name) {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; t.data().len()],
        };
        let mut numeric = vec![0.0; analytic.len()];
        for (i, num) in numeric.iter_mut().enumerate() {
            let orig = t.data()[i];
            set_entry(&mut probe, name, i, orig + step)?;
            let up = eval(&probe)?;
            set_entry(&mut probe, name, i, orig - step)?;
            let down = eval(&probe)?;
            set_entry(&mut probe, name, i, orig)?;
            *num = (up - down) / (2.0 * step);
        }
        per_tensor.push((name.to_string(), analytic, numeric));
    }
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let total = per_tensor.iter().map(|(_, a, _)| norm(a).powi(2)).sum::<f64>().sqrt();
    let floor = NORM_FLOOR_REL * total;
    let mut out = Vec::new();
    for (name, analytic, numeric) in per_tensor {
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let denom = norm(&analytic).max(norm(&numeric)).max(floor);
        let err = norm(&diff);
        out.push(GradCheck {
            name,
            rel_err: if denom == 0.0 { err } else { err / denom },
            max_abs_err: diff.iter().map(|d| d.abs()).fold(0.0, f64::max),
        });
    }
    Ok(out)
}

fn set_entry(p: &mut ParamSet<f64>, name: &str, i: usize, v: f64) -> Result<()> {
    let x = p.get_mut(name).ok_or_else(|| Error::Structure(format!("missing {name}")))?;
    x.data_mut()[i] = v;
    Ok(())
}

/// Largest relative error over all tensors.
pub fn worst(checks: &[GradCheck]) -> f64 {
    checks.iter().map(|c| c.rel_err).fold(0.0, f64::max)
}
