//! Central finite-difference verification of reverse-mode gradients.

use super::tape::{Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest relative discrepancy over all checked entries.
    pub max_rel_err: f64,
    /// `(parameter index, flat entry)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Checks the gradient of the scalar produced by `f` with respect to every
/// tensor in `params`. At most `max_entries` evenly spaced entries are probed per
/// tensor (`None` probes all of them).
///
/// The relative error of an entry is `|analytic - numeric| / max(|analytic|,
/// |numeric|, 1e-3 g)` where `g` is the largest analytic gradient magnitude,
/// so entries far below the gradient scale are judged on absolute accuracy.
pub fn check_gradients<S, F>(
    params: &[Tensor<S>],
    step: f64,
    max_entries: Option<usize>,
    f: F,
) -> Result<GradCheckReport>
where
    S: Scalar,
    F: for<'t> Fn(&'t Tape<S>, &[Var<'t, S>]) -> Result<Var<'t, S>>,
{
    let analytic: Vec<Tensor<S>> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_, S>> = params.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter().map(|v| grads.wrt(v)).collect::<Result<_>>()?
    };
    let eval = |ps: &[Tensor<S>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_, S>> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&tape, &vars)?;
        tape.check_finite()?;
        let v = out.value().item()?;
        Ok(v.to_f64_lossy())
    };
    let gmax = analytic
        .iter()
        .flat_map(|t| t.data().iter().map(|x| x.to_f64_lossy().abs()))
        .fold(0.0f64, f64::max);
    let floor = 1e-3 * gmax;
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut work: Vec<Tensor<S>> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let n = p.len();
        let stride = match max_entries {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for e in (0..n).step_by(stride) {
            let orig = p.data()[e];
            work[pi].data_mut()[e] = orig + S::lit(step);
            let plus = eval(&work)?;
            work[pi].data_mut()[e] = orig - S::lit(step);
            let minus = eval(&work)?;
            work[pi].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[pi].data()[e].to_f64_lossy();
            let denom = a.abs().max(numeric.abs()).max(floor);
            let rel = if denom > 0.0 {
                (a - numeric).abs() / denom
            } else {
                0.0
            };
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (pi, e);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
