//! Central-difference gradient checking.
//!
//! Used by tests to validate every differentiable op against an oracle that
//! knows nothing about the backward pass: perturb one input element at a
//! time and difference the scalar loss.

use crate::error::{Error, Result};
use crate::tape::{Tape, Value};
use crate::tensor::Tensor;

/// Compare analytic and numeric gradients of a scalar loss with respect to
/// one input tensor.
///
/// `build` receives the (possibly perturbed) input plus a tape and must
/// return `(loss, input_handle)` where `loss` is scalar. Returns the
/// `(analytic, numeric)` gradient pair; the analytic side is zeros when the
/// input does not reach the loss.
pub fn finite_diff_grad<F>(x0: &Tensor, step: f64, build: F) -> Result<(Tensor, Tensor)>
where
    F: Fn(&Tensor, &mut Tape) -> Result<(Value, Value)>,
{
    let mut tape = Tape::new();
    let (loss, input) = build(x0, &mut tape)?;
    if !loss.tensor().is_scalar() {
        return Err(Error::Contract("finite_diff_grad needs a scalar loss".into()));
    }
    let grads = tape.backward(&loss)?;
    let analytic = grads.get(&input).cloned().unwrap_or_else(|| Tensor::zeros(x0.shape()));

    let eval = |x: &Tensor| -> Result<f64> {
        let mut t = Tape::eval();
        let (l, _) = build(x, &mut t)?;
        Ok(l.item())
    };

    let mut numeric = Tensor::zeros(x0.shape());
    for i in 0..x0.numel() {
        let mut hi = x0.clone();
        hi.data_mut()[i] += step;
        let mut lo = x0.clone();
        lo.data_mut()[i] -= step;
        numeric.data_mut()[i] = (eval(&hi)? - eval(&lo)?) / (2.0 * step);
    }
    Ok((analytic, numeric))
}

/// Largest relative error between two gradient tensors, with an absolute
/// floor so near-zero entries compare absolutely.
pub fn max_rel_err(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}
