use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares the tape gradient of a scalar function against central
/// differences with step `h`.
///
/// Returns `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)`.
/// `f` is rebuilt on a fresh tape for every evaluation.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&Tape, Var) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::contract(format!("grad_check step must be positive, got {h}")));
    }

    let tape = Tape::new();
    let leaf = tape.leaf(x.clone(), true);
    let out = f(&tape, leaf)?;
    check_finite(tape.item(out)?)?;
    tape.backward(out)?;
    let analytic = tape
        .grad(leaf)?
        .map(Tensor::into_data)
        .unwrap_or_else(|| vec![0.0; x.len()]);

    let eval = |probe: Tensor| -> Result<f64> {
        let t = Tape::new();
        let v = t.constant(probe);
        let y = t.item(f(&t, v)?)?;
        check_finite(y)
    };

    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

fn check_finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("grad_check objective evaluated to {v}")))
    }
}
