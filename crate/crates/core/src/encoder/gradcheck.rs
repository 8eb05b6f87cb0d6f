//! Finite-difference verification of the analytic gradient.

use super::train::{loss_and_grad, Batch};
use super::{EncoderModel, Hyperparams};
use crate::error::Result;

/// Deliberate backprop bugs for negative controls.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackpropFault {
    None,
    /// Forget-gate pre-activation gradient missing the logistic slope.
    DropForgetSlope,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |g_a − g_n| / max(1, |g_a|, |g_n|)` over all parameters.
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub n_params: usize,
}

const STEP: f64 = 1e-5;

/// Compares the analytic gradient of the total loss with central
/// differences on every parameter.
pub fn grad_check(
    model: &EncoderModel<f64>,
    batch: &Batch<f64>,
    hyper: &Hyperparams,
    fault: BackpropFault,
) -> Result<GradCheckReport> {
    let mut analytic = vec![0.0; model.params.len()];
    loss_and_grad(
        batch,
        model,
        hyper,
        Some(&mut analytic),
        fault == BackpropFault::DropForgetSlope,
    )?;
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: 0,
        n_params: analytic.len(),
    };
    for (i, &ga) in analytic.iter().enumerate() {
        let orig = probe.params[i];
        probe.params[i] = orig + STEP;
        let up = loss_and_grad(batch, &probe, hyper, None, false)?.total;
        probe.params[i] = orig - STEP;
        let down = loss_and_grad(batch, &probe, hyper, None, false)?.total;
        probe.params[i] = orig;
        let gn = (up - down) / (2.0 * STEP);
        let rel = (ga - gn).abs() / 1f64.max(ga.abs()).max(gn.abs());
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_param = i;
        }
    }
    Ok(report)
}
