//! Training the two-layer network on the regularized objective `g`.

use std::ops::ControlFlow;

use log::warn;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam, AdamConfig};
use super::gd::gd;
use super::pgd::{sample_ball, Pgd, PgdDerived, PgdHyper, PgdStatus, DEFAULT_C};
use super::theorem::{theorem3_params, theorem3_params_with_sigma, Theorem3Params};
use super::TraceRecord;
use crate::error::{invalid, Result};
use crate::model::{loss_f, Dataset, TwoLayerObjective, TwoLayerParams};

/// Gradient step used by PGD and GD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// `η = c/ℓ` with `ℓ` from [`Theorem3Params`].
    Theorem,
    /// Caller-chosen step; every other constant of the schedule is kept.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerChoice {
    Pgd(StepRule),
    Gd(StepRule),
    Adam(AdamConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerTrainConfig {
    /// Hidden width `r`.
    pub width: usize,
    /// Target loss `ε`.
    pub epsilon: f64,
    pub c: f64,
    /// Failure probability handed to the PGD schedule.
    pub delta: f64,
    pub max_iters: u64,
    pub seed: u64,
    pub optimizer: OptimizerChoice,
    pub record_every: u64,
    /// End the run once `f(W_t) ≤ ε`, checked every `target_check_every`
    /// iterations. Off by default.
    pub stop_at_target: bool,
    pub target_check_every: u64,
    /// Allow `r < 2d+2`.
    pub force_width: bool,
    /// Use this `σ` instead of measuring it.
    pub sigma: Option<f64>,
    /// Start from a uniform draw in the ball of this Frobenius radius
    /// instead of `W = 0`. The draw uses its own stream derived from `seed`.
    pub init_radius: f64,
}

impl TwoLayerTrainConfig {
    pub fn new(width: usize, epsilon: f64) -> Self {
        Self {
            width,
            epsilon,
            c: DEFAULT_C,
            delta: 0.1,
            max_iters: 1_000_000,
            seed: 4,
            optimizer: OptimizerChoice::Pgd(StepRule::Theorem),
            record_every: 1,
            stop_at_target: false,
            target_check_every: 100,
            force_width: false,
            sigma: None,
            init_radius: 0.0,
        }
    }
}

/// How a training run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged { iteration: u64 },
    TargetReached { iteration: u64 },
    BudgetExhausted,
}

#[derive(Debug, Clone)]
pub struct TwoLayerRun {
    pub params: TwoLayerParams,
    pub trace: Vec<TraceRecord>,
    /// `f(W*)`.
    pub final_loss: f64,
    pub theorem: Theorem3Params,
    /// Present for PGD runs.
    pub derived: Option<PgdDerived>,
    pub step: f64,
    pub status: RunStatus,
    pub iterations: u64,
    /// Largest `‖W_t‖_F²` over all iterates.
    pub max_norm_sq: f64,
    /// Iterates with `‖W_t‖_F² > 2(f(0)+1)/γ`.
    pub norm_violations: u64,
}

fn resolve_step(rule: StepRule, c: f64, theorem: &Theorem3Params) -> Result<f64> {
    match rule {
        StepRule::Theorem => Ok(c / theorem.smoothness),
        StepRule::Fixed(eta) if eta > 0.0 && eta.is_finite() => Ok(eta),
        StepRule::Fixed(eta) => invalid(format!("step size must be positive, got {eta}")),
    }
}

struct NormWatch {
    bound: f64,
    max_norm_sq: f64,
    violations: u64,
}

impl NormWatch {
    fn new(bound: f64) -> Self {
        Self { bound, max_norm_sq: 0.0, violations: 0 }
    }

    fn observe(&mut self, t: u64, x: &DVector<f64>) {
        let n2 = x.norm_squared();
        self.max_norm_sq = self.max_norm_sq.max(n2);
        if n2 > self.bound {
            if self.violations == 0 {
                warn!("iterate {t} left the ball ‖W‖_F² ≤ {:.6e} (‖W‖_F² = {n2:.6e}); continuing", self.bound);
            }
            self.violations += 1;
        }
    }
}

const INIT_STREAM: u64 = 0x1f2e_3d4c_5b6a_7988;

/// Train from `W = 0` (or a seeded random start) with the regularization and smoothness constants
/// derived from the data.
pub fn train_two_layer(data: &Dataset, config: &TwoLayerTrainConfig) -> Result<TwoLayerRun> {
    let (d, r) = (data.d(), config.width);
    if r < 2 * d + 2 && !config.force_width {
        return invalid(format!("width r = {r} is below 2d+2 = {}; pass force_width to override", 2 * d + 2));
    }
    let theorem = match config.sigma {
        Some(s) => theorem3_params_with_sigma(data, config.epsilon, s)?,
        None => theorem3_params(data, config.epsilon)?,
    };
    let objective = TwoLayerObjective::new(data, r, theorem.gamma)?;
    if !(config.init_radius >= 0.0 && config.init_radius.is_finite()) {
        return invalid("init_radius must be finite and non-negative");
    }
    let x0 = if config.init_radius > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ INIT_STREAM);
        sample_ball(&mut rng, d * r, config.init_radius)
    } else {
        DVector::zeros(d * r)
    };
    let mut watch = NormWatch::new(theorem.norm_sq_bound);
    let check_every = config.target_check_every.max(1);

    let (point, trace, status, iterations, derived, step) = match config.optimizer {
        OptimizerChoice::Pgd(rule) => {
            let hyper = PgdHyper {
                x0,
                smoothness: theorem.smoothness,
                hessian_lipschitz: theorem.rho,
                epsilon: config.epsilon,
                c: config.c,
                delta: config.delta,
                delta_f: theorem.delta_f,
            };
            let step = resolve_step(rule, config.c, &theorem)?;
            let pgd = Pgd::new(hyper, config.max_iters, config.seed)?
                .record_every(config.record_every)
                .with_step(step)?;
            let out = pgd.run_observed(&objective, |t, x| {
                watch.observe(t, x);
                if config.stop_at_target && t % check_every == 0 {
                    let w = TwoLayerParams::from_flat(x, d, r).expect("shape fixed by objective");
                    if loss_f(&w, data).is_ok_and(|f| f <= config.epsilon) {
                        return ControlFlow::Break(());
                    }
                }
                ControlFlow::Continue(())
            })?;
            let status = match out.status {
                PgdStatus::Converged { iteration } => RunStatus::Converged { iteration },
                PgdStatus::Stopped { iteration } => RunStatus::TargetReached { iteration },
                PgdStatus::BudgetExhausted => RunStatus::BudgetExhausted,
            };
            (out.point, out.trace, status, out.iterations, Some(out.derived), step)
        }
        OptimizerChoice::Gd(rule) => {
            let step = resolve_step(rule, config.c, &theorem)?;
            let (point, trace) = gd(&objective, &x0, step, config.max_iters)?;
            (point, thin(trace, config.record_every), RunStatus::BudgetExhausted, config.max_iters, None, step)
        }
        OptimizerChoice::Adam(cfg) => {
            let (point, trace) = adam(&objective, &x0, &cfg, config.max_iters, config.seed)?;
            (point, thin(trace, config.record_every), RunStatus::BudgetExhausted, config.max_iters, None, cfg.lr)
        }
    };
    if !matches!(config.optimizer, OptimizerChoice::Pgd(_)) {
        // gd/adam traces do not expose iterates; check the returned point
        watch.observe(iterations, &point);
    }

    let params = TwoLayerParams::from_flat(&point, d, r)?;
    let final_loss = loss_f(&params, data)?;
    Ok(TwoLayerRun {
        params,
        trace,
        final_loss,
        theorem,
        derived,
        step,
        status,
        iterations,
        max_norm_sq: watch.max_norm_sq,
        norm_violations: watch.violations,
    })
}

fn thin(trace: Vec<TraceRecord>, every: u64) -> Vec<TraceRecord> {
    if every <= 1 {
        return trace;
    }
    let last = trace.len().saturating_sub(1);
    trace
        .into_iter()
        .enumerate()
        .filter(|(i, rec)| rec.iteration % every == 0 || *i == last)
        .map(|(_, rec)| rec)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;

    #[test]
    fn width_guard() {
        let ds = gen_synthetic(4, 3, 1).unwrap();
        let cfg = TwoLayerTrainConfig::new(6, 1e-3);
        assert!(train_two_layer(&ds, &cfg).is_err());
        let cfg = TwoLayerTrainConfig { force_width: true, max_iters: 5, ..cfg };
        assert!(train_two_layer(&ds, &cfg).is_ok());
    }

    #[test]
    fn zero_labels_stay_at_origin_value() {
        let ds = gen_synthetic(5, 3, 2).unwrap().with_labels(DVector::zeros(5)).unwrap();
        let cfg = TwoLayerTrainConfig { max_iters: 2000, ..TwoLayerTrainConfig::new(8, 1e-3) };
        let run = train_two_layer(&ds, &cfg).unwrap();
        assert!(run.final_loss <= 1e-3);
        assert!(run.trace[0].objective < 1e-20);
        assert!(run.trace[0].perturbed);
    }

    #[test]
    fn gd_is_frozen_at_origin() {
        let ds = gen_synthetic(6, 4, 3).unwrap();
        let cfg = TwoLayerTrainConfig {
            optimizer: OptimizerChoice::Gd(StepRule::Fixed(0.1)),
            max_iters: 500,
            ..TwoLayerTrainConfig::new(10, 1e-4)
        };
        let run = train_two_layer(&ds, &cfg).unwrap();
        let f0 = run.theorem.f0;
        assert!(run.trace.iter().all(|r| r.objective == f0));
        assert_eq!(run.final_loss, f0);
    }

    #[test]
    fn random_start_is_seeded_and_inside_the_ball() {
        let ds = gen_synthetic(6, 4, 3).unwrap();
        let cfg = TwoLayerTrainConfig {
            optimizer: OptimizerChoice::Gd(StepRule::Fixed(1e-12)),
            max_iters: 1,
            init_radius: 0.5,
            ..TwoLayerTrainConfig::new(10, 1e-4)
        };
        let a = train_two_layer(&ds, &cfg).unwrap();
        let b = train_two_layer(&ds, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        let norm = a.params.weights().norm();
        assert!(norm > 0.0 && norm <= 0.5 + 1e-9);
        assert!(train_two_layer(&ds, &TwoLayerTrainConfig { init_radius: -1.0, ..cfg }).is_err());
    }

    #[test]
    fn thin_keeps_last() {
        let trace: Vec<TraceRecord> = (0..10)
            .map(|i| TraceRecord { iteration: i, objective: 0.0, grad_norm: 0.0, perturbed: false })
            .collect();
        let kept: Vec<u64> = thin(trace, 4).iter().map(|r| r.iteration).collect();
        assert_eq!(kept, vec![0, 4, 8, 9]);
    }
}
