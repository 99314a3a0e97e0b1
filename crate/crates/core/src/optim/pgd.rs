//! Perturbed gradient descent.
//!
//! Plain gradient descent with step `η`, except that when the gradient is
//! small and no perturbation happened in the last `t_thres` steps, the
//! iterate is moved by a uniform sample from a ball of radius `r`. If the
//! objective has not dropped by `f_thres` after `t_thres` more steps, the
//! pre-perturbation point is returned.

use std::ops::ControlFlow;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{check_finite, Objective, TraceRecord};
use crate::error::{invalid, Result};

/// Default for the constant `c`.
pub const DEFAULT_C: f64 = 0.5;

/// Inputs to the perturbed gradient descent schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct PgdHyper {
    pub x0: DVector<f64>,
    /// Smoothness `ℓ`.
    pub smoothness: f64,
    /// Hessian-Lipschitz constant `ρ`.
    pub hessian_lipschitz: f64,
    /// Target accuracy `ε`.
    pub epsilon: f64,
    pub c: f64,
    /// Failure probability `δ`.
    pub delta: f64,
    /// Upper bound `Δ_f` on `f(x0) − f*`.
    pub delta_f: f64,
}

impl PgdHyper {
    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.smoothness, self.hessian_lipschitz, self.epsilon, self.c, self.delta, self.delta_f]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return invalid("PGD hyperparameters must be finite");
        }
        if self.x0.is_empty() {
            return invalid("starting point must be nonempty");
        }
        if self.smoothness < 1.0 {
            return invalid(format!("smoothness ℓ must be >= 1, got {}", self.smoothness));
        }
        if self.hessian_lipschitz <= 0.0 {
            return invalid(format!("Hessian-Lipschitz ρ must be > 0, got {}", self.hessian_lipschitz));
        }
        if self.epsilon <= 0.0 {
            return invalid(format!("ε must be > 0, got {}", self.epsilon));
        }
        let cap = self.smoothness * self.smoothness / self.hessian_lipschitz;
        if self.epsilon > cap {
            return invalid(format!("ε = {} exceeds ℓ²/ρ = {cap}", self.epsilon));
        }
        if !(self.c > 0.0 && self.c <= 1.0) {
            return invalid(format!("c must lie in (0, 1], got {}", self.c));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return invalid(format!("δ must lie in (0, 1), got {}", self.delta));
        }
        if self.delta_f <= 0.0 {
            return invalid(format!("Δ_f must be > 0, got {}", self.delta_f));
        }
        Ok(())
    }
}

/// Constants derived from [`PgdHyper`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgdDerived {
    pub chi: f64,
    /// Step size `η = c/ℓ`.
    pub eta: f64,
    /// Perturbation radius.
    pub radius: f64,
    pub g_thres: f64,
    pub f_thres: f64,
    pub t_thres: f64,
}

impl PgdDerived {
    /// `t_thres` as a whole number of iterations (rounded up).
    pub fn t_thres_steps(&self) -> u64 {
        self.t_thres.ceil() as u64
    }
}

pub fn derive_params(hyper: &PgdHyper) -> Result<PgdDerived> {
    hyper.validate()?;
    let PgdHyper { smoothness: l, hessian_lipschitz: rho, epsilon: eps, c, delta, delta_f, .. } = *hyper;
    let d = hyper.dim() as f64;
    let chi = 3.0 * (d * l * delta_f / (c * eps * eps * delta)).ln().max(4.0);
    Ok(PgdDerived {
        chi,
        eta: c / l,
        radius: c.sqrt() * eps / (chi * chi * l),
        g_thres: c.sqrt() * eps / (chi * chi),
        f_thres: c * (eps * eps * eps).sqrt() / (chi * chi * chi * rho.sqrt()),
        t_thres: chi * l / (c * c * (rho * eps).sqrt()),
    })
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgdStatus {
    /// The escape test failed after a perturbation; the returned point is
    /// the one recorded before that perturbation.
    Converged { iteration: u64 },
    /// `max_iters` reached; the returned point is the current iterate.
    BudgetExhausted,
    /// The observer asked to stop; the returned point is the current iterate.
    Stopped { iteration: u64 },
}

#[derive(Debug, Clone)]
pub struct PgdOutcome {
    pub point: DVector<f64>,
    pub status: PgdStatus,
    pub trace: Vec<TraceRecord>,
    pub iterations: u64,
    pub perturbations: u64,
    pub derived: PgdDerived,
}

/// Uniform sample from the ball of radius `radius` in `dim` dimensions.
pub fn sample_ball<R: Rng>(rng: &mut R, dim: usize, radius: f64) -> DVector<f64> {
    loop {
        let g = DVector::<f64>::from_fn(dim, |_, _| rng.sample(StandardNormal));
        let norm = g.norm();
        if norm > 0.0 {
            let u: f64 = rng.random();
            return g * (radius * u.powf(1.0 / dim as f64) / norm);
        }
    }
}

/// A configured perturbed gradient descent run.
#[derive(Debug, Clone)]
pub struct Pgd {
    hyper: PgdHyper,
    derived: PgdDerived,
    max_iters: u64,
    seed: u64,
    record_every: u64,
    step_override: Option<f64>,
}

impl Pgd {
    pub fn new(hyper: PgdHyper, max_iters: u64, seed: u64) -> Result<Self> {
        let derived = derive_params(&hyper)?;
        if max_iters == 0 {
            return invalid("max_iters must be positive");
        }
        Ok(Self { hyper, derived, max_iters, seed, record_every: 1, step_override: None })
    }

    /// Keep one trace record every `k` iterations (perturbation steps and the
    /// final iteration are always kept).
    pub fn record_every(mut self, k: u64) -> Self {
        self.record_every = k.max(1);
        self
    }

    /// Replace the gradient step `η = c/ℓ` with a caller-supplied value while
    /// keeping every threshold of the schedule.
    pub fn with_step(mut self, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return invalid(format!("step size must be positive, got {eta}"));
        }
        self.step_override = Some(eta);
        Ok(self)
    }

    pub fn hyper(&self) -> &PgdHyper {
        &self.hyper
    }

    pub fn derived(&self) -> &PgdDerived {
        &self.derived
    }

    pub fn step(&self) -> f64 {
        self.step_override.unwrap_or(self.derived.eta)
    }

    pub fn run<O: Objective + ?Sized>(&self, objective: &O) -> Result<PgdOutcome> {
        self.run_observed(objective, |_, _| ControlFlow::Continue(()))
    }

    /// Run, calling `observer(t, x_t)` on every iterate the step is taken
    /// from. Returning `Break` ends the run at that iterate.
    pub fn run_observed<O, F>(&self, objective: &O, mut observer: F) -> Result<PgdOutcome>
    where
        O: Objective + ?Sized,
        F: FnMut(u64, &DVector<f64>) -> ControlFlow<()>,
    {
        let der = self.derived;
        let eta = self.step();
        let t_thres = der.t_thres_steps() as i128;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);

        let mut x = self.hyper.x0.clone();
        let mut t_noise: i128 = -t_thres - 1;
        let mut x_tilde = x.clone();
        let mut f_tilde = f64::NAN;
        let mut trace = Vec::new();
        let mut perturbations = 0u64;
        let mut pending_perturbed = false;

        for t in 0..self.max_iters {
            let (mut f, mut g) = objective.value_and_gradient(&x);
            check_finite(t, f, &g)?;
            let grad_norm = g.norm();
            let ti = t as i128;

            let mut perturbed = false;
            if grad_norm <= der.g_thres && ti - t_noise > t_thres {
                x_tilde = x.clone();
                f_tilde = f;
                t_noise = ti;
                x += sample_ball(&mut rng, x.len(), der.radius);
                (f, g) = objective.value_and_gradient(&x);
                check_finite(t, f, &g)?;
                perturbed = true;
                perturbations += 1;
            }

            let stop = observer(t, &x).is_break();
            pending_perturbed |= perturbed;
            let last = t + 1 == self.max_iters;
            let escape_check = ti - t_noise == t_thres;
            if pending_perturbed || last || stop || escape_check || t % self.record_every == 0 {
                trace.push(TraceRecord { iteration: t, objective: f, grad_norm, perturbed: pending_perturbed });
                pending_perturbed = false;
            }
            if stop {
                return Ok(PgdOutcome {
                    point: x,
                    status: PgdStatus::Stopped { iteration: t },
                    trace,
                    iterations: t + 1,
                    perturbations,
                    derived: der,
                });
            }

            if escape_check && f - f_tilde > -der.f_thres {
                return Ok(PgdOutcome {
                    point: x_tilde,
                    status: PgdStatus::Converged { iteration: t },
                    trace,
                    iterations: t + 1,
                    perturbations,
                    derived: der,
                });
            }
            x.axpy(-eta, &g, 1.0);
        }

        Ok(PgdOutcome {
            point: x,
            status: PgdStatus::BudgetExhausted,
            trace,
            iterations: self.max_iters,
            perturbations,
            derived: der,
        })
    }
}

/// Run perturbed gradient descent from `hyper.x0`.
pub fn pgd<O: Objective + ?Sized>(
    objective: &O,
    hyper: &PgdHyper,
    max_iters: u64,
    seed: u64,
) -> Result<PgdOutcome> {
    Pgd::new(hyper.clone(), max_iters, seed)?.run(objective)
}
