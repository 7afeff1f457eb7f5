use serde::{Deserialize, Serialize};

use crate::datasets::StepSequence;
use crate::error::{Error, Result};
use crate::models::{Mode, SequenceModel, SrnnVariant};
use crate::objectives::{mle_loss, objective_with_aux};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`
    TwoPoint,
    /// `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h`
    FourPoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdCheck {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compare `analytic` with central differences of `f` at `params`.
pub fn finite_diff_grad<F>(f: F, params: &[f64], analytic: &[f64], eps: f64) -> Result<FdCheck>
where
    F: FnMut(&[f64]) -> f64,
{
    finite_diff_grad_with(f, params, analytic, eps, Stencil::FourPoint)
}

pub fn finite_diff_grad_with<F>(mut f: F, params: &[f64], analytic: &[f64], eps: f64, stencil: Stencil) -> Result<FdCheck>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!("step {eps} outside [1e-7, 1e-3]")));
    }
    if params.len() != analytic.len() {
        return Err(Error::shape(params.len(), analytic.len()));
    }
    let mut x = params.to_vec();
    let mut eval = |x: &[f64]| -> Result<f64> {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("function value {v}")))
        }
    };
    let mut at = |x: &mut Vec<f64>, k: usize, d: f64| -> Result<f64> {
        let keep = x[k];
        x[k] = keep + d;
        let v = eval(x);
        x[k] = keep;
        v
    };
    let mut worst = FdCheck {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: params.len(),
    };
    for k in 0..params.len() {
        let numeric = match stencil {
            Stencil::TwoPoint => (at(&mut x, k, eps)? - at(&mut x, k, -eps)?) / (2.0 * eps),
            Stencil::FourPoint => {
                let p1 = at(&mut x, k, eps)?;
                let m1 = at(&mut x, k, -eps)?;
                let p2 = at(&mut x, k, 2.0 * eps)?;
                let m2 = at(&mut x, k, -2.0 * eps)?;
                (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps)
            }
        };
        let e = rel_err(analytic[k], numeric);
        if e > worst.max_rel_err || k == 0 {
            worst = FdCheck {
                max_rel_err: e.max(worst.max_rel_err),
                worst_index: k,
                analytic: analytic[k],
                numeric,
                coordinates: params.len(),
            };
        }
    }
    Ok(worst)
}

/// Weights of the training objective used by [`objective_gradient_check`].
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub kl_coeff: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            kl_coeff: 1.0,
            alpha: 0.0,
            beta: 0.0,
        }
    }
}

/// Training objective of `model` on `seq` at the draw fixed by `noise`, with
/// its parameter gradient and the values of its stop-gradient nodes.
pub fn objective_value(model: &SequenceModel, seq: &StepSequence, w: ObjectiveWeights, noise: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (v, g, _) = pinned_objective(model, seq, w, noise, Vec::new())?;
    Ok((v, g))
}

fn pinned_objective(
    model: &SequenceModel,
    seq: &StepSequence,
    w: ObjectiveWeights,
    noise: &[f64],
    pinned: Vec<Vec<f64>>,
) -> Result<(f64, Vec<f64>, Vec<Vec<f64>>)> {
    let mut r = model.forward(seq, Mode::Posterior, noise)?;
    r.graph.pin_stop_grads(pinned);
    let obj = if model.is_stochastic() {
        let zf = model.config().srnn_variant == SrnnVariant::ZForcing;
        let (a, b) = if zf { (w.alpha, w.beta) } else { (0.0, 0.0) };
        objective_with_aux(&mut r, seq, w.kl_coeff, a, b)?
    } else {
        mle_loss(&mut r, seq)?
    };
    let grads = r.graph.backward(obj.node).params.to_flat();
    Ok((obj.breakdown.total, grads, r.graph.stop_grad_values()))
}

/// Checks every parameter's gradient of the training objective. Stop-gradient
/// branches are held at their values at the current parameters, so the
/// differenced function is the one the analytic gradient belongs to.
pub fn objective_gradient_check(
    model: &mut SequenceModel,
    seq: &StepSequence,
    w: ObjectiveWeights,
    noise: &[f64],
    eps: f64,
) -> Result<FdCheck> {
    let (_, analytic, pinned) = pinned_objective(model, seq, w, noise, Vec::new())?;
    let theta = model.params().to_flat();
    let scratch = std::cell::RefCell::new(model.clone());
    let f = |x: &[f64]| -> f64 {
        let mut m = scratch.borrow_mut();
        m.params_mut().set_flat(x);
        pinned_objective(&m, seq, w, noise, pinned.clone()).map_or(f64::NAN, |v| v.0)
    };
    finite_diff_grad(f, &theta, &analytic, eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_and_constant() {
        let r = finite_diff_grad(|w| w[0] * w[0], &[1.0], &[2.0], 1e-4).unwrap();
        assert!(r.max_rel_err < 1e-8, "{r:?}");
        let r = finite_diff_grad(|_| 3.0, &[0.3, 0.2], &[0.0, 0.0], 1e-4).unwrap();
        assert_eq!(r.max_rel_err, 0.0);
        let r = finite_diff_grad_with(|w| w[0] * w[0], &[1.0], &[2.0], 1e-5, Stencil::TwoPoint).unwrap();
        assert!(r.max_rel_err < 1e-8);
    }

    #[test]
    fn bad_inputs() {
        assert!(finite_diff_grad(|w| w[0], &[1.0], &[1.0], 1e-2).is_err());
        assert!(finite_diff_grad(|_| f64::NAN, &[1.0], &[1.0], 1e-4).is_err());
    }
}
