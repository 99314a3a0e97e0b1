use nalgebra::DVector;

use super::{check_finite, Objective, TraceRecord};
use crate::error::{invalid, Result};

/// Plain gradient descent `x_{t+1} = x_t − η∇f(x_t)` for `max_iters` steps.
///
/// The trace holds one record per iteration, taken before the step.
pub fn gd<O: Objective + ?Sized>(
    objective: &O,
    x0: &DVector<f64>,
    eta: f64,
    max_iters: u64,
) -> Result<(DVector<f64>, Vec<TraceRecord>)> {
    if !(eta > 0.0 && eta.is_finite()) {
        return invalid(format!("step size must be positive, got {eta}"));
    }
    let mut x = x0.clone();
    let mut trace = Vec::with_capacity(max_iters.min(1 << 20) as usize);
    for t in 0..max_iters {
        let (f, g) = objective.value_and_gradient(&x);
        check_finite(t, f, &g)?;
        trace.push(TraceRecord { iteration: t, objective: f, grad_norm: g.norm(), perturbed: false });
        x.axpy(-eta, &g, 1.0);
    }
    Ok((x, trace))
}
