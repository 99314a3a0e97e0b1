//! Constants for training the two-layer network to loss `ε` with perturbed
//! gradient descent on the regularized objective.

use crate::error::{Error, Result};
use crate::linalg::{self, sym_dim};
use crate::model::{loss_f, Dataset, TwoLayerParams};

/// Regularization and smoothness constants for a dataset and target loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem3Params {
    /// `σ`, smallest singular value of `X = [x_j^{⊗2}]`.
    pub sigma: f64,
    /// `f(0) = (1/4n) Σ y_j²`.
    pub f0: f64,
    /// Hessian-Lipschitz constant `ρ`.
    pub rho: f64,
    /// Regularization weight `γ`.
    pub gamma: f64,
    /// Smoothness `ℓ`.
    pub smoothness: f64,
    /// `Δ = f(0) + 1`.
    pub delta_f: f64,
    /// Squared-norm radius `Γ = 2(f(0)+1)/γ` the iterates stay within.
    pub norm_sq_bound: f64,
    pub epsilon: f64,
}

/// `σ_min([x_j^{⊗2}])`, or a degenerate error when the matrix is
/// rank-deficient.
pub fn tensor_sigma(data: &Dataset) -> Result<f64> {
    let (n, d) = (data.n(), data.d());
    if n > sym_dim(d, 2) {
        return Err(Error::Degenerate(format!(
            "X rank-deficient: n = {n} exceeds d(d+1)/2 = {}",
            sym_dim(d, 2)
        )));
    }
    let x = linalg::tensor_power_columns(data.inputs(), 2)?;
    let s = linalg::singular_values(&x)?;
    let (smax, smin) = (s[0], s[s.len() - 1]);
    if smin <= 0.0 || linalg::is_numerically_zero(smin, smax, x.nrows(), x.ncols()) {
        return Err(Error::Degenerate(format!("X rank-deficient (σ_min = {smin:e})")));
    }
    Ok(smin)
}

/// Compute `σ` from the data and derive the constants.
pub fn theorem3_params(data: &Dataset, epsilon: f64) -> Result<Theorem3Params> {
    let sigma = tensor_sigma(data)?;
    theorem3_params_with_sigma(data, epsilon, sigma)
}

/// Derive the constants for a caller-measured `σ`.
pub fn theorem3_params_with_sigma(data: &Dataset, epsilon: f64, sigma: f64) -> Result<Theorem3Params> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("ε must be positive, got {epsilon}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Precondition(format!("X rank-deficient (σ = {sigma})")));
    }
    let (n, d) = (data.n() as f64, data.d() as f64);
    let b = data.input_bound();
    let y = data.label_bound();
    let f0 = loss_f(&TwoLayerParams::zeros(data.d(), 2)?, data)?;
    let b4 = b.powi(4);
    let scale = n * d / (sigma * sigma * epsilon);
    let rho = 6.0 * b4 * (2.0 * (f0 + 1.0)).sqrt() * scale.powf(0.25);
    let gamma = (sigma * sigma * epsilon / (n * d)).sqrt();
    let norm_sq_bound = 2.0 * (f0 + 1.0) / gamma;
    let smoothness = (3.0 * b4 * norm_sq_bound + y * b * b + gamma).max(1.0);
    Ok(Theorem3Params { sigma, f0, rho, gamma, smoothness, delta_f: f0 + 1.0, norm_sq_bound, epsilon })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn data(n: usize, d: usize, labels: impl Fn(usize) -> f64) -> Dataset {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Uniform};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let u = Uniform::new_inclusive(-1.0, 1.0).unwrap();
        let x = DMatrix::from_fn(n, d, |_, _| u.sample(&mut rng));
        Dataset::new(x, DVector::from_fn(n, |j, _| labels(j))).unwrap().normalize_rows().unwrap()
    }

    #[test]
    fn zero_labels() {
        let ds = data(6, 4, |_| 0.0);
        let p = theorem3_params(&ds, 1e-3).unwrap();
        assert_eq!(p.f0, 0.0);
        assert_eq!(p.delta_f, 1.0);
        let b4 = ds.input_bound().powi(4);
        let want = 6.0 * b4 * 2f64.sqrt() * (6.0 * 4.0 / (p.sigma * p.sigma * 1e-3)).powf(0.25);
        assert!((p.rho - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn gamma_identity() {
        let ds = data(8, 5, |j| (j as f64 * 0.37).sin());
        for eps in [1e-2, 1e-4, 1e-6] {
            let p = theorem3_params(&ds, eps).unwrap();
            let prod = p.gamma * (8.0 * 5.0 / (p.sigma * p.sigma * eps)).sqrt();
            assert!((prod - 1.0).abs() < 1e-12);
            assert!(p.smoothness >= 1.0);
        }
    }

    #[test]
    fn rank_deficient_rejected() {
        // n = 20 > d(d+1)/2 = 15
        let ds = data(20, 5, |j| if j % 2 == 0 { 1.0 } else { -1.0 });
        assert!(matches!(theorem3_params(&ds, 1e-4), Err(Error::Degenerate(_))));
        let dup = Dataset::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]),
            DVector::from_vec(vec![1.0, 1.0]),
        )
        .unwrap();
        assert!(matches!(theorem3_params(&dup, 1e-4), Err(Error::Degenerate(_))));
        assert!(matches!(
            theorem3_params_with_sigma(&dup, 1e-4, 0.0),
            Err(Error::Precondition(_))
        ));
    }
}
