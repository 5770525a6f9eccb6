//! Central-difference verification of tape gradients.

use crate::error::TensorError;
use crate::params::ParamSet;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Worst relative error observed for one parameter.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

/// Relative error with a floor that keeps finite-difference noise on
/// near-zero gradients from dominating.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn eval_loss<F>(params: &ParamSet, build: &mut F) -> Result<f64, TensorError>
where
    F: FnMut(&mut Tape, &ParamSet) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let loss = build(&mut tape, params)?;
    let lv = tape.value(loss);
    if !lv.is_scalar() {
        return Err(TensorError::LossNotScalar {
            shape: lv.shape().to_vec(),
        });
    }
    Ok(lv.item())
}

/// Central-difference gradients of a scalar-loss forward pass.
///
/// Perturbs each parameter element by ±h and restores it afterwards. The
/// forward closure must be deterministic (disable dropout or reseed inside).
pub fn numeric_gradients<F>(
    params: &mut ParamSet,
    h: f64,
    mut build: F,
) -> Result<Vec<Tensor>, TensorError>
where
    F: FnMut(&mut Tape, &ParamSet) -> Result<Var, TensorError>,
{
    let ids: Vec<_> = params.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let n = params.value(id).len();
        let mut grad = Tensor::zeros(params.value(id).shape().to_vec());
        for e in 0..n {
            let orig = params.value(id).data()[e];
            params.value_mut(id).data_mut()[e] = orig + h;
            let fp = eval_loss(params, &mut build)?;
            params.value_mut(id).data_mut()[e] = orig - h;
            let fm = eval_loss(params, &mut build)?;
            params.value_mut(id).data_mut()[e] = orig;
            grad.data_mut()[e] = (fp - fm) / (2.0 * h);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Compare tape gradients against central differences.
///
/// Runs the forward pass twice first and fails if the two evaluations are
/// not bit-identical (dropout left on, stateful closure, ...).
pub fn grad_check<F>(
    params: &mut ParamSet,
    h: f64,
    tol: f64,
    mut build: F,
) -> Result<GradCheckReport, TensorError>
where
    F: FnMut(&mut Tape, &ParamSet) -> Result<Var, TensorError>,
{
    let l0 = eval_loss(params, &mut build)?;
    let l1 = eval_loss(params, &mut build)?;
    if l0.to_bits() != l1.to_bits() {
        return Err(TensorError::NonDeterministicForward);
    }

    params.zero_grads();
    let mut tape = Tape::new();
    let loss = build(&mut tape, params)?;
    tape.backward(loss, params)?;
    let analytic: Vec<Tensor> = params.ids().map(|id| params.grad(id).clone()).collect();

    let numeric = numeric_gradients(params, h, &mut build)?;

    let mut entries = Vec::with_capacity(analytic.len());
    let mut worst = 0.0f64;
    for (idx, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let mut param_worst = 0.0f64;
        for (av, nv) in a.data().iter().zip(n.data()) {
            param_worst = param_worst.max(rel_err(*av, *nv));
        }
        worst = worst.max(param_worst);
        entries.push(GradCheckEntry {
            name: params.get(idx).name.clone(),
            max_rel_err: param_worst,
        });
    }
    Ok(GradCheckReport {
        entries,
        max_rel_err: worst,
        tol,
    })
}
