//! First-order optimizers over flat parameter vectors.
//!
//! [`pgd`] is perturbed gradient descent with the derived-constant schedule,
//! [`gd`] and [`adam`] are baselines, and [`theorem`] turns a dataset into the
//! smoothness/regularization constants used to train the two-layer network.

use nalgebra::DVector;

pub mod adam;
pub mod gd;
pub mod pgd;
pub mod theorem;
pub mod train;

pub use adam::{adam, AdamConfig, BatchSpec, LrDecay};
pub use gd::gd;
pub use pgd::{derive_params, pgd, Pgd, PgdDerived, PgdHyper, PgdOutcome, PgdStatus};
pub use theorem::{theorem3_params, theorem3_params_with_sigma, Theorem3Params};
pub use train::{train_two_layer, OptimizerChoice, RunStatus, StepRule, TwoLayerRun, TwoLayerTrainConfig};

/// A differentiable function of a flat parameter vector.
pub trait Objective {
    fn value(&self, x: &DVector<f64>) -> f64;

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;

    fn value_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        (self.value(x), self.gradient(x))
    }
}

/// Objective whose value is an average over samples and can be evaluated on
/// a subset of them.
pub trait BatchObjective: Objective {
    fn n_samples(&self) -> usize;

    fn batch_value_and_gradient(&self, x: &DVector<f64>, batch: &[usize]) -> (f64, DVector<f64>);
}

impl BatchObjective for crate::model::TwoLayerObjective<'_> {
    fn n_samples(&self) -> usize {
        self.data().n()
    }

    fn batch_value_and_gradient(&self, x: &DVector<f64>, batch: &[usize]) -> (f64, DVector<f64>) {
        crate::model::TwoLayerObjective::batch_value_and_gradient(self, x, batch)
    }
}

/// Adapts a pair of closures to [`Objective`].
pub struct FnObjective<F, G> {
    f: F,
    g: G,
}

impl<F, G> FnObjective<F, G>
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    pub fn new(f: F, g: G) -> Self {
        Self { f, g }
    }
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    fn value(&self, x: &DVector<f64>) -> f64 {
        (self.f)(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.g)(x)
    }
}

/// One logged iterate.
///
/// `objective` is the value at the point the step is taken from (after any
/// perturbation at this iteration); `grad_norm` is the norm that was tested
/// against the perturbation threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iteration: u64,
    pub objective: f64,
    pub grad_norm: f64,
    pub perturbed: bool,
}

pub(crate) fn check_finite(
    iteration: u64,
    value: f64,
    grad: &DVector<f64>,
) -> crate::Result<()> {
    if !value.is_finite() {
        return Err(crate::Error::NumericalFailure {
            iteration: iteration as usize,
            message: format!("objective is {value}"),
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(crate::Error::NumericalFailure {
            iteration: iteration as usize,
            message: "gradient has non-finite entries".into(),
        });
    }
    Ok(())
}

/// Largest objective increase between consecutive records whose later
/// record is not a perturbation step. Nonpositive means the trace descends.
pub fn max_unperturbed_increase(trace: &[TraceRecord]) -> f64 {
    trace
        .windows(2)
        .filter(|w| !w[1].perturbed)
        .map(|w| w[1].objective - w[0].objective)
        .fold(f64::NEG_INFINITY, f64::max)
}
