//! Central-difference verification of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::{Result, TlraError};

/// Default finite-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` must build a scalar output from leaf variables bound in the order of
/// `inputs`, and must be a pure function of them (fixed data, fixed masks,
/// no RNG inside). Returns the maximum over all input entries of
/// `|analytic − (f(x+h) − f(x−h))/2h| / max(1, |analytic|)`.
pub fn grad_check<F>(inputs: &[Tensor], f: F, h: f64) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Var,
{
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&tape, &vars);
        let v = tape.scalar_value(out);
        if !v.is_finite() {
            return Err(TlraError::NonFinite("grad_check objective".into()));
        }
        Ok(v)
    };

    // analytic pass
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars);
    if !tape.value(out).all_finite() {
        return Err(TlraError::NonFinite("grad_check objective".into()));
    }
    tape.backward(out);
    let analytic: Vec<Tensor> = vars.iter().map(|v| tape.grad(*v)).collect();
    drop(tape);

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut max_rel: f64 = 0.0;
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..grad.len() {
            let orig = work[i].values()[j];
            work[i].values_mut()[j] = orig + h;
            let fp = eval(&work)?;
            work[i].values_mut()[j] = orig - h;
            let fm = eval(&work)?;
            work[i].values_mut()[j] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let a = grad.values()[j];
            let rel = (a - fd).abs() / a.abs().max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
