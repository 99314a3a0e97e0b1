//! Certificates for the two-layer landscape: Hessian/residual identity,
//! loss bounds, stationarity checks and smoothness constants.

use std::fmt::Write as _;

use log::warn;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, sym_dim, DenseMatrix};
use crate::model::{
    grad_g, hessian_full_capped, hessian_full_g, loss_f, residual_matrix, Dataset, TwoLayerParams,
    DEFAULT_HESSIAN_CAP,
};
use crate::optim::pgd::sample_ball;

/// Default limit on the row count `d^q` of [`x_tensor_matrix`].
pub const DEFAULT_TENSOR_ROW_CAP: usize = 1 << 20;

#[derive(Debug, Clone)]
pub struct TensorMatrix {
    pub matrix: DenseMatrix,
    /// `n`-th singular value (zero when `n` exceeds the rank bound).
    pub sigma_min: f64,
    pub full_rank: bool,
}

/// `[x_1^{⊗q}, …, x_n^{⊗q}]` and its smallest singular value.
pub fn x_tensor_matrix(data: &Dataset, q: usize) -> Result<TensorMatrix> {
    x_tensor_matrix_capped(data, q, DEFAULT_TENSOR_ROW_CAP)
}

pub fn x_tensor_matrix_capped(data: &Dataset, q: usize, cap: usize) -> Result<TensorMatrix> {
    let (n, d) = (data.n(), data.d());
    if q == 0 {
        return invalid("tensor order must be at least 1");
    }
    let rows = d.checked_pow(q as u32).filter(|&r| r <= cap).ok_or_else(|| {
        Error::ResourceLimit(format!("d^q = {d}^{q} exceeds the row cap {cap}"))
    })?;
    let matrix = linalg::tensor_power_columns(data.inputs(), q)?;
    let s = linalg::singular_values(&matrix)?;
    let smax = s[0];
    let sigma_min = if n > rows.min(sym_dim(d, q)) { 0.0 } else { s[s.len() - 1] };
    let full_rank = sigma_min > 0.0 && !linalg::is_numerically_zero(sigma_min, smax, rows, n);
    Ok(TensorMatrix { matrix, sigma_min, full_rank })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandscapeReport {
    pub lambda_min_hessian: f64,
    pub spectral_norm_m: f64,
    pub loss: f64,
    pub sigma_min_x: f64,
    /// `n d ‖M‖₂² / (4σ²)`, infinite when `X` is rank-deficient.
    pub loss_bound: f64,
    pub identity_residual: f64,
}

const REPORT_KEYS: [&str; 6] =
    ["lambda_min_hessian", "spectral_norm_M", "loss", "sigma_min_X", "loss_bound", "identity_residual"];

impl LandscapeReport {
    fn values(&self) -> [f64; 6] {
        [
            self.lambda_min_hessian,
            self.spectral_norm_m,
            self.loss,
            self.sigma_min_x,
            self.loss_bound,
            self.identity_residual,
        ]
    }

    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        for (k, v) in REPORT_KEYS.iter().zip(self.values()) {
            let _ = writeln!(out, "{k}={v:?}");
        }
        out
    }

    pub fn csv_header() -> String {
        REPORT_KEYS.join(",")
    }

    pub fn csv_row(&self) -> String {
        self.values().iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
    }
}

pub fn landscape_report(params: &TwoLayerParams, data: &Dataset) -> Result<LandscapeReport> {
    landscape_report_capped(params, data, DEFAULT_HESSIAN_CAP)
}

pub fn landscape_report_capped(params: &TwoLayerParams, data: &Dataset, cap: usize) -> Result<LandscapeReport> {
    if !params.is_wide_enough() {
        warn!(
            "width r = {} is below 2d+2 = {}; λ_min(∇²f) = -‖M‖₂ is not guaranteed",
            params.r(),
            2 * params.d() + 2
        );
    }
    let h = hessian_full_capped(params, data, cap)?;
    let lambda_min_hessian = linalg::min_eigenvalue_sym(&h)?.value;
    let spectral_norm_m = linalg::spectral_norm_sym(&residual_matrix(params, data)?)?;
    let loss = loss_f(params, data)?;
    let x = x_tensor_matrix(data, 2)?;
    let loss_bound = if x.full_rank {
        (data.n() * data.d()) as f64 * spectral_norm_m * spectral_norm_m / (4.0 * x.sigma_min * x.sigma_min)
    } else {
        f64::INFINITY
    };
    Ok(LandscapeReport {
        lambda_min_hessian,
        spectral_norm_m,
        loss,
        sigma_min_x: x.sigma_min,
        loss_bound,
        identity_residual: (lambda_min_hessian + spectral_norm_m).abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationarityReport {
    /// `‖∇g(W)‖_F`.
    pub grad_norm: f64,
    /// `λ_min(∇²g(W))`.
    pub lambda_min_g: f64,
    /// `ε - ‖∇g‖`; nonnegative when the gradient condition holds.
    pub grad_margin: f64,
    /// `λ_min + √(ρε)`; nonnegative when the curvature condition holds.
    pub curvature_margin: f64,
    pub is_eps_sosp: bool,
}

/// Whether `W` is an `ε`-second-order stationary point of `g` for
/// Hessian-Lipschitz constant `ρ`.
pub fn stationarity_check(
    params: &TwoLayerParams,
    data: &Dataset,
    gamma: f64,
    epsilon: f64,
    rho: f64,
) -> Result<StationarityReport> {
    stationarity_check_capped(params, data, gamma, epsilon, rho, DEFAULT_HESSIAN_CAP)
}

pub fn stationarity_check_capped(
    params: &TwoLayerParams,
    data: &Dataset,
    gamma: f64,
    epsilon: f64,
    rho: f64,
    cap: usize,
) -> Result<StationarityReport> {
    if !(epsilon > 0.0) || !(rho >= 0.0) || !epsilon.is_finite() || !rho.is_finite() {
        return invalid(format!("need ε > 0 and ρ ≥ 0, got ε = {epsilon}, ρ = {rho}"));
    }
    let grad_norm = grad_g(params, data, gamma)?.norm();
    let h = hessian_full_g(params, data, gamma, cap)?;
    let lambda_min_g = linalg::min_eigenvalue_sym(&h)?.value;
    let grad_margin = epsilon - grad_norm;
    let curvature_margin = lambda_min_g + (rho * epsilon).sqrt();
    Ok(StationarityReport {
        grad_norm,
        lambda_min_g,
        grad_margin,
        curvature_margin,
        is_eps_sosp: grad_margin >= 0.0 && curvature_margin >= 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessBounds {
    /// Gradient-Lipschitz constant `3B⁴Γ + YB² + γ`.
    pub smoothness: f64,
    /// Hessian-Lipschitz constant `6B⁴Γ^{1/2}`.
    pub hessian_lipschitz: f64,
}

/// Smoothness constants of `g` on `{W : ‖W‖_F² ≤ Γ}`.
pub fn smoothness_constants(gamma_ball: f64, b: f64, y: f64, gamma: f64) -> Result<SmoothnessBounds> {
    for (name, v) in [("Γ", gamma_ball), ("B", b), ("Y", y), ("γ", gamma)] {
        if !(v >= 0.0) || !v.is_finite() {
            return invalid(format!("{name} must be finite and nonnegative, got {v}"));
        }
    }
    let b4 = b.powi(4);
    Ok(SmoothnessBounds {
        smoothness: 3.0 * b4 * gamma_ball + y * b * b + gamma,
        hessian_lipschitz: 6.0 * b4 * gamma_ball.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzProbe {
    /// Largest `‖∇g(U) − ∇g(V)‖_F / ‖U − V‖_F` seen.
    pub max_gradient_ratio: f64,
    /// Largest `‖∇²g(U) − ∇²g(V)‖₂ / ‖U − V‖_F` seen.
    pub max_hessian_ratio: f64,
    pub bounds: SmoothnessBounds,
    pub trials: usize,
}

struct TrialOutcome {
    trial: usize,
    grad_ratio: f64,
    hess_ratio: f64,
    u: DVector<f64>,
    v: DVector<f64>,
}

fn probe_trial(data: &Dataset, r: usize, gamma: f64, gamma_ball: f64, seed: u64, trial: usize) -> Result<TrialOutcome> {
    let d = data.d();
    let dim = d * r;
    let radius = gamma_ball.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    let u = sample_ball(&mut rng, dim, radius);
    // odd trials look at nearby pairs, where the ratios approach the local constants
    let mut v = if trial % 2 == 1 {
        &u + sample_ball(&mut rng, dim, 1e-3 * radius.max(f64::MIN_POSITIVE))
    } else {
        sample_ball(&mut rng, dim, radius)
    };
    let vn = v.norm();
    if vn > radius {
        v *= radius / vn;
    }
    let pu = TwoLayerParams::from_flat(&u, d, r)?;
    let pv = TwoLayerParams::from_flat(&v, d, r)?;
    let dist = (&u - &v).norm();
    if dist == 0.0 {
        return Ok(TrialOutcome { trial, grad_ratio: 0.0, hess_ratio: 0.0, u, v });
    }
    let dg = grad_g(&pu, data, gamma)? - grad_g(&pv, data, gamma)?;
    let dh = hessian_full_g(&pu, data, gamma, usize::MAX)? - hessian_full_g(&pv, data, gamma, usize::MAX)?;
    let grad_ratio = dg.norm() / dist;
    let hess_ratio = linalg::spectral_norm_sym(&dh)? / dist;
    Ok(TrialOutcome { trial, grad_ratio, hess_ratio, u, v })
}

fn fmt_vec(v: &DVector<f64>) -> String {
    v.iter().map(|e| format!("{e:?}")).collect::<Vec<_>>().join(" ")
}

/// Sample `trials` pairs in the ball `‖W‖_F² ≤ Γ` (width `r`) and compare the
/// observed Lipschitz ratios of `∇g` and `∇²g` with [`smoothness_constants`].
/// A ratio above its bound is reported as a property failure carrying the
/// offending pair.
pub fn empirical_lipschitz_probe(
    data: &Dataset,
    r: usize,
    gamma: f64,
    gamma_ball: f64,
    trials: usize,
    seed: u64,
) -> Result<LipschitzProbe> {
    if trials == 0 {
        return invalid("need at least one trial");
    }
    if r == 0 || r % 2 != 0 {
        return invalid(format!("hidden width r must be even and positive, got {r}"));
    }
    if data.d() * r > DEFAULT_HESSIAN_CAP {
        return Err(Error::ResourceLimit(format!(
            "Hessian dimension d·r = {} exceeds the cap of {DEFAULT_HESSIAN_CAP}",
            data.d() * r
        )));
    }
    let bounds = smoothness_constants(gamma_ball, data.input_bound(), data.label_bound(), gamma)?;
    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|t| probe_trial(data, r, gamma, gamma_ball, seed, t))
        .collect::<Result<_>>()?;

    // relative slack for rounding in the difference quotients
    let slack = 1e-9;
    let mut probe = LipschitzProbe { max_gradient_ratio: 0.0, max_hessian_ratio: 0.0, bounds, trials };
    for o in &outcomes {
        probe.max_gradient_ratio = probe.max_gradient_ratio.max(o.grad_ratio);
        probe.max_hessian_ratio = probe.max_hessian_ratio.max(o.hess_ratio);
        let grad_bad = o.grad_ratio > bounds.smoothness * (1.0 + slack) + slack;
        let hess_bad = o.hess_ratio > bounds.hessian_lipschitz * (1.0 + slack) + slack;
        if grad_bad || hess_bad {
            return Err(Error::PropertyFailure(format!(
                "trial {}: gradient ratio {:e} (bound {:e}), Hessian ratio {:e} (bound {:e}); U = [{}], V = [{}]",
                o.trial,
                o.grad_ratio,
                bounds.smoothness,
                o.hess_ratio,
                bounds.hessian_lipschitz,
                fmt_vec(&o.u),
                fmt_vec(&o.v)
            )));
        }
    }
    Ok(probe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;
    use nalgebra::DMatrix;

    #[test]
    fn orthonormal_inputs() {
        let ds = Dataset::new(DMatrix::identity(3, 3), DVector::zeros(3)).unwrap();
        let x = x_tensor_matrix(&ds, 1).unwrap();
        assert!((x.sigma_min - 1.0).abs() < 1e-12 && x.full_rank);
    }

    #[test]
    fn duplicate_sample_is_singular() {
        let ds = gen_synthetic(4, 3, 2).unwrap();
        let mut x = ds.inputs().clone();
        let first = x.row(0).into_owned();
        x.set_row(2, &first);
        let t = x_tensor_matrix(&ds.with_inputs(x).unwrap(), 2).unwrap();
        assert!(!t.full_rank);
        assert!(t.sigma_min < 1e-12);
    }

    #[test]
    fn sigma_matches_normal_equations() {
        let ds = gen_synthetic(3, 2, 7).unwrap();
        let t = x_tensor_matrix(&ds, 2).unwrap();
        let gram = t.matrix.tr_mul(&t.matrix);
        let lam = linalg::symmetric_eigenvalues(&gram).unwrap()[0];
        assert!((t.sigma_min - lam.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn tensor_cap() {
        let ds = gen_synthetic(3, 4, 1).unwrap();
        assert!(matches!(x_tensor_matrix_capped(&ds, 3, 63), Err(Error::ResourceLimit(_))));
        assert!(x_tensor_matrix_capped(&ds, 3, 64).is_ok());
    }

    #[test]
    fn hand_computed_origin_report() {
        let ds = Dataset::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 2.0)).unwrap();
        let rep = landscape_report(&TwoLayerParams::zeros(1, 4).unwrap(), &ds).unwrap();
        assert!((rep.lambda_min_hessian + 2.0).abs() < 1e-12);
        assert!((rep.spectral_norm_m - 2.0).abs() < 1e-12);
        assert!(rep.identity_residual < 1e-12);
        assert!((rep.loss - 1.0).abs() < 1e-15);
        assert!(rep.loss <= rep.loss_bound + 1e-9);
    }

    #[test]
    fn zero_residual_report() {
        let ds = gen_synthetic(5, 3, 4).unwrap();
        let w = DMatrix::from_fn(3, 8, |i, j| ((i * 8 + j) as f64 * 0.3).sin());
        let params = TwoLayerParams::new(w).unwrap();
        let y = DVector::from_fn(5, |j, _| crate::model::forward(&params, &ds.sample(j)).unwrap());
        let exact = ds.with_labels(y).unwrap();
        let rep = landscape_report(&params, &exact).unwrap();
        assert!(rep.lambda_min_hessian >= -1e-9);
        assert!(rep.spectral_norm_m <= 1e-12);
        assert!(rep.loss <= 1e-28);
    }

    #[test]
    fn random_identity() {
        let ds = gen_synthetic(8, 4, 5).unwrap();
        let w = DMatrix::from_fn(4, 10, |i, j| ((i * 10 + j) as f64 * 1.7).cos() * 0.4);
        let rep = landscape_report(&TwoLayerParams::new(w).unwrap(), &ds).unwrap();
        assert!(rep.identity_residual <= 1e-6 * rep.spectral_norm_m.max(1.0));
        assert!(rep.loss <= rep.loss_bound + 1e-9);
    }

    #[test]
    fn report_serialization() {
        let rep = LandscapeReport {
            lambda_min_hessian: -2.0,
            spectral_norm_m: 2.0,
            loss: 1.0,
            sigma_min_x: 1.0,
            loss_bound: 1.0,
            identity_residual: 0.0,
        };
        let kv = rep.to_key_value();
        assert!(kv.starts_with("lambda_min_hessian=-2.0\n"));
        assert_eq!(kv.lines().count(), 6);
        assert_eq!(LandscapeReport::csv_header().split(',').count(), 6);
        assert_eq!(rep.csv_row(), "-2.0,2.0,1.0,1.0,1.0,0.0");
    }

    #[test]
    fn report_cap() {
        let ds = gen_synthetic(3, 4, 1).unwrap();
        let p = TwoLayerParams::zeros(4, 10).unwrap();
        assert!(matches!(landscape_report_capped(&p, &ds, 39), Err(Error::ResourceLimit(_))));
    }

    #[test]
    fn origin_is_not_stationary_with_signal() {
        let ds = gen_synthetic(6, 3, 8).unwrap();
        let p = TwoLayerParams::zeros(3, 8).unwrap();
        let m_norm = linalg::spectral_norm_sym(&residual_matrix(&p, &ds).unwrap()).unwrap();
        let gamma = 0.1 * m_norm;
        let rep = stationarity_check(&p, &ds, gamma, 1e-6, 1.0).unwrap();
        assert_eq!(rep.grad_norm, 0.0);
        assert!((rep.lambda_min_g - (gamma - m_norm)).abs() < 1e-12);
        assert!(!rep.is_eps_sosp);
    }

    #[test]
    fn zero_labels_origin_is_stationary() {
        let ds = gen_synthetic(6, 3, 8).unwrap().with_labels(DVector::zeros(6)).unwrap();
        let p = TwoLayerParams::zeros(3, 8).unwrap();
        for eps in [1e-12, 1e-3, 1.0] {
            assert!(stationarity_check(&p, &ds, 0.01, eps, 1.0).unwrap().is_eps_sosp);
        }
    }

    #[test]
    fn closed_form_constants() {
        let c = smoothness_constants(4.0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!((c.smoothness, c.hessian_lipschitz), (13.0, 12.0));
        let c = smoothness_constants(0.0, 0.7, 0.5, 0.1).unwrap();
        assert_eq!(c.hessian_lipschitz, 0.0);
        assert!((c.smoothness - (0.5 * 0.49 + 0.1)).abs() < 1e-15);
        let a = smoothness_constants(1.0, 0.9, 1.0, 0.0).unwrap().hessian_lipschitz;
        let b = smoothness_constants(9.0, 0.9, 1.0, 0.0).unwrap().hessian_lipschitz;
        assert!((b / a - 3.0).abs() < 1e-12);
        assert!(smoothness_constants(-1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn probe_within_bounds() {
        let ds = gen_synthetic(6, 3, 2).unwrap();
        let probe = empirical_lipschitz_probe(&ds, 8, 0.0, 4.0, 200, 1).unwrap();
        assert!(probe.max_gradient_ratio >= 0.0 && probe.max_hessian_ratio >= 0.0);
        assert!(probe.max_gradient_ratio <= 13.0);
        assert!(probe.bounds.smoothness <= 13.0 + 1e-12);
    }

    #[test]
    fn tiny_ball_sees_only_regularizer() {
        let ds = gen_synthetic(6, 3, 2).unwrap().with_labels(DVector::zeros(6)).unwrap();
        let gamma = 0.5;
        let probe = empirical_lipschitz_probe(&ds, 8, gamma, 1e-6, 50, 3).unwrap();
        assert!((probe.max_gradient_ratio - gamma).abs() < 1e-4);
    }

    #[test]
    fn probe_is_deterministic() {
        let ds = gen_synthetic(5, 2, 2).unwrap();
        let a = empirical_lipschitz_probe(&ds, 6, 0.1, 2.0, 40, 9).unwrap();
        let b = empirical_lipschitz_probe(&ds, 6, 0.1, 2.0, 40, 9).unwrap();
        assert_eq!(a, b);
        assert!(empirical_lipschitz_probe(&ds, 6, 0.1, 2.0, 0, 9).is_err());
    }
}
