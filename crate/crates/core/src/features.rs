//! Frozen random polynomial features `z_i = (r_iᵀx)^p`, Gaussian smoothing
//! of the inputs, and the three-layer pipeline that trains the quadratic
//! layer on top of the features.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, binomial, factorial, sym_dim, DenseMatrix};
use crate::model::Dataset;
use crate::optim::{train_two_layer, TwoLayerRun, TwoLayerTrainConfig};

/// Default limit on the row count `k²` of the feature tensor matrix.
pub const DEFAULT_Z_ROW_CAP: usize = 1 << 20;

/// Default smoothing variance.
pub const DEFAULT_SMOOTHING_VARIANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct RandomFeatureLayer {
    r: DenseMatrix,
    p: usize,
    seed: Option<u64>,
}

impl RandomFeatureLayer {
    /// `k×d` Gaussian layer drawn from `seed`, filled row by row.
    pub fn new(k: usize, d: usize, p: usize, seed: u64) -> Result<Self> {
        if k == 0 || d == 0 {
            return invalid(format!("feature layer needs k, d >= 1 (got k={k}, d={d})"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = DenseMatrix::zeros(k, d);
        for i in 0..k {
            for l in 0..d {
                r[(i, l)] = StandardNormal.sample(&mut rng);
            }
        }
        let mut layer = Self::from_matrix(r, p)?;
        layer.seed = Some(seed);
        Ok(layer)
    }

    pub fn from_matrix(r: DenseMatrix, p: usize) -> Result<Self> {
        if p == 0 {
            return invalid("polynomial degree p must be at least 1");
        }
        if r.is_empty() {
            return invalid("feature matrix R is empty");
        }
        linalg::ensure_finite(&r, "R")?;
        Ok(Self { r, p, seed: None })
    }

    /// `R = I_d`.
    pub fn identity(d: usize, p: usize) -> Result<Self> {
        Self::from_matrix(DenseMatrix::identity(d, d), p)
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.r
    }

    pub fn k(&self) -> usize {
        self.r.nrows()
    }

    pub fn d(&self) -> usize {
        self.r.ncols()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// The `k×d^p` matrix with rows `r_i^{⊗p}`. Only meant for small sizes.
    pub fn explicit_q(&self) -> Result<DenseMatrix> {
        let rows: Vec<DVector<f64>> = self
            .r
            .row_iter()
            .map(|row| linalg::tensor_power(row.transpose().as_slice(), self.p))
            .collect::<Result<_>>()?;
        let cols = rows[0].len();
        Ok(DenseMatrix::from_fn(self.k(), cols, |i, c| rows[i][c]))
    }
}

/// Default feature count `2⌈√n⌉`.
pub fn default_feature_count(n: usize) -> usize {
    2 * (n as f64).sqrt().ceil() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedDataset {
    base: Dataset,
    v: f64,
    seed: u64,
    x_bar: DenseMatrix,
}

impl SmoothedDataset {
    pub fn base(&self) -> &Dataset {
        &self.base
    }

    pub fn variance(&self) -> f64 {
        self.v
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Perturbed inputs, one sample per row.
    pub fn inputs(&self) -> &DenseMatrix {
        &self.x_bar
    }

    pub fn n(&self) -> usize {
        self.x_bar.nrows()
    }

    pub fn d(&self) -> usize {
        self.x_bar.ncols()
    }
}

/// Add i.i.d. `𝒩(0, v)` noise to every input coordinate.
pub fn smooth_inputs(data: &Dataset, v: f64, seed: u64) -> Result<SmoothedDataset> {
    if !(v >= 0.0 && v.is_finite()) {
        return invalid(format!("smoothing variance must be a finite value >= 0, got {v}"));
    }
    let mut x_bar = data.inputs().clone();
    if v > 0.0 {
        let noise = Normal::new(0.0, v.sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for j in 0..x_bar.nrows() {
            for l in 0..x_bar.ncols() {
                x_bar[(j, l)] += noise.sample(&mut rng);
            }
        }
    }
    Ok(SmoothedDataset { base: data.clone(), v, seed, x_bar })
}

fn check_dims(layer: &RandomFeatureLayer, d: usize) -> Result<()> {
    if layer.d() != d {
        return invalid(format!("feature layer expects d = {}, got {d}", layer.d()));
    }
    Ok(())
}

pub fn feature_map(layer: &RandomFeatureLayer, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_dims(layer, x.len())?;
    let p = layer.p as i32;
    Ok(DVector::from_fn(layer.k(), |i, _| layer.r.row(i).transpose().dot(x).powi(p)))
}

/// Features of every perturbed sample, one per row (`n×k`).
pub fn feature_matrix(layer: &RandomFeatureLayer, smoothed: &SmoothedDataset) -> Result<DenseMatrix> {
    check_dims(layer, smoothed.d())?;
    let n = smoothed.n();
    let mut z = DenseMatrix::zeros(n, layer.k());
    for j in 0..n {
        let x = smoothed.x_bar.row(j).transpose();
        z.set_row(j, &feature_map(layer, &x)?.transpose());
    }
    Ok(z)
}

/// `Z`, the `k²×n` matrix with columns `z_j^{⊗2}`.
pub fn z_tensor_matrix(layer: &RandomFeatureLayer, smoothed: &SmoothedDataset) -> Result<DenseMatrix> {
    z_tensor_matrix_capped(layer, smoothed, DEFAULT_Z_ROW_CAP)
}

pub fn z_tensor_matrix_capped(
    layer: &RandomFeatureLayer,
    smoothed: &SmoothedDataset,
    cap: usize,
) -> Result<DenseMatrix> {
    let k2 = layer.k() * layer.k();
    if k2 >= cap {
        return Err(Error::ResourceLimit(format!("k² = {k2} reaches the cap {cap}")));
    }
    linalg::tensor_power_columns(&feature_matrix(layer, smoothed)?, 2)
}

fn require_feature_count(k: usize, n: usize) -> Result<()> {
    let pairs = sym_dim(k, 2);
    if pairs <= n {
        return Err(Error::Precondition(format!(
            "C(k+1,2) = {pairs} ≤ n = {n} for k = {k}; increase k"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZCertificate {
    pub sigma_min: f64,
    /// Lower bound on `σ_min(Z)` holding with probability `1-O(pδ)`; `None`
    /// when `D_d^{2p} ≤ k·D_d^p·C(2p,p)` and the bound says nothing.
    pub theory_bound: Option<f64>,
    pub positive: bool,
}

/// The probabilistic lower bound on `σ_min(Z)`, `None` when vacuous.
pub fn z_sigma_theory_bound(d: usize, p: usize, k: usize, n: usize, v: f64, delta: f64) -> Option<f64> {
    let lead = binomial(d + 2 * p - 1, 2 * p) - k as f64 * binomial(d + p - 1, p) * binomial(2 * p, p);
    let spare = binomial(k + 1, 2) - n as f64;
    if lead <= 0.0 || spare <= 0.0 {
        return None;
    }
    let (pf, nf, kf) = (p as f64, n as f64, k as f64);
    let root = (lead * spare / factorial(4 * p).powi(3)).powf(0.25);
    Some(root * v.powf(pf) * delta.powf(4.0 * pf) / (nf.powf(2.0 * pf + 0.5) * kf.powf(4.0 * pf)))
}

pub fn z_singular_certificate(
    layer: &RandomFeatureLayer,
    smoothed: &SmoothedDataset,
    delta: f64,
) -> Result<ZCertificate> {
    if !(delta > 0.0 && delta < 1.0) {
        return invalid(format!("δ must lie in (0, 1), got {delta}"));
    }
    require_feature_count(layer.k(), smoothed.n())?;
    let z = z_tensor_matrix(layer, smoothed)?;
    let s = linalg::singular_values(&z)?;
    let (smax, smin) = (s[0], s[s.len() - 1]);
    let positive = smin > 0.0 && !linalg::is_numerically_zero(smin, smax, z.nrows(), z.ncols());
    Ok(ZCertificate {
        sigma_min: smin,
        theory_bound: z_sigma_theory_bound(layer.d(), layer.p, layer.k(), smoothed.n(), smoothed.v, delta),
        positive,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureNormReport {
    pub max_norm: f64,
    pub bound: f64,
    pub violated: bool,
}

/// `√k (2(B + 2√(v d L)) √(d L))^p` with `L = ln((k+n) d δ^{-1/2})`.
pub fn feature_norm_theory_bound(b: f64, v: f64, d: usize, k: usize, n: usize, p: usize, delta: f64) -> f64 {
    let df = d as f64;
    let log = (((k + n) as f64) * df / delta.sqrt()).ln();
    let inner = 2.0 * (b + 2.0 * (v * df * log).sqrt()) * (df * log).sqrt();
    (k as f64).sqrt() * inner.powi(p as i32)
}

pub fn feature_norm_bound(
    layer: &RandomFeatureLayer,
    smoothed: &SmoothedDataset,
    delta: f64,
) -> Result<FeatureNormReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return invalid(format!("δ must lie in (0, 1), got {delta}"));
    }
    let z = feature_matrix(layer, smoothed)?;
    let max_norm = z.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
    let bound = feature_norm_theory_bound(
        smoothed.base.input_bound(),
        smoothed.v,
        layer.d(),
        layer.k(),
        smoothed.n(),
        layer.p,
        delta,
    );
    Ok(FeatureNormReport { max_norm, bound, violated: max_norm > bound })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThreeLayerConfig {
    pub p: usize,
    /// Feature count; `2⌈√n⌉` when unset.
    pub k: Option<usize>,
    /// Smoothing variance `v`.
    pub v: f64,
    pub feature_seed: u64,
    pub noise_seed: u64,
    /// Use `R = I` (so `k = d`) instead of a random layer.
    pub identity_features: bool,
    /// Settings for the trainable layer. `width` is replaced by `2k+2` and
    /// `seed` drives the optimizer.
    pub train: TwoLayerTrainConfig,
}

impl ThreeLayerConfig {
    pub fn new(p: usize, epsilon: f64) -> Self {
        Self {
            p,
            k: None,
            v: DEFAULT_SMOOTHING_VARIANCE,
            feature_seed: 2,
            noise_seed: 3,
            identity_features: false,
            train: TwoLayerTrainConfig::new(0, epsilon),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ThreeLayerRun {
    pub layer: RandomFeatureLayer,
    pub smoothed: SmoothedDataset,
    /// The two-layer dataset `(z_j, y_j)` the trainable layer sees.
    pub features: Dataset,
    pub certificate: ZCertificate,
    pub run: TwoLayerRun,
}

const UNIT_SLACK: f64 = 1e-12;

pub fn train_three_layer(data: &Dataset, config: &ThreeLayerConfig) -> Result<ThreeLayerRun> {
    if data.n() == 0 {
        return invalid("dataset has no samples");
    }
    if data.input_bound() > 1.0 + UNIT_SLACK || data.label_bound() > 1.0 + UNIT_SLACK {
        return Err(Error::Precondition(format!(
            "inputs and labels must lie in the unit ball (max ‖x‖ = {}, max |y| = {})",
            data.input_bound(),
            data.label_bound()
        )));
    }
    let (n, d) = (data.n(), data.d());
    let layer = if config.identity_features {
        if config.k.is_some_and(|k| k != d) {
            return invalid("identity features require k = d");
        }
        RandomFeatureLayer::identity(d, config.p)?
    } else {
        let k = config.k.unwrap_or_else(|| default_feature_count(n));
        RandomFeatureLayer::new(k, d, config.p, config.feature_seed)?
    };
    let k = layer.k();
    require_feature_count(k, n)?;

    let smoothed = smooth_inputs(data, config.v, config.noise_seed)?;
    let z = feature_matrix(&layer, &smoothed)?;
    let certificate = z_singular_certificate(&layer, &smoothed, config.train.delta)?;
    if !certificate.positive {
        return Err(Error::Degenerate(format!(
            "feature tensor matrix is singular (σ_min = {:e}); try a larger v or another seed",
            certificate.sigma_min
        )));
    }
    let features = Dataset::new(z, data.labels().clone())?;
    let train = TwoLayerTrainConfig { width: 2 * k + 2, sigma: Some(certificate.sigma_min), ..config.train.clone() };
    let run = train_two_layer(&features, &train)?;
    Ok(ThreeLayerRun { layer, smoothed, features, certificate, run })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;
    use nalgebra::DMatrix;

    #[test]
    fn zero_variance_is_identity() {
        let ds = gen_synthetic(5, 3, 1).unwrap();
        let s = smooth_inputs(&ds, 0.0, 9).unwrap();
        assert_eq!(s.inputs(), ds.inputs());
        assert!(smooth_inputs(&ds, -1e-3, 9).is_err());
    }

    #[test]
    fn smoothing_statistics() {
        let ds = gen_synthetic(200, 10, 1).unwrap();
        let v = 0.01;
        let a = smooth_inputs(&ds, v, 5).unwrap();
        assert_eq!(a, smooth_inputs(&ds, v, 5).unwrap());
        assert_ne!(a.inputs(), smooth_inputs(&ds, v, 6).unwrap().inputs());
        let noise = a.inputs() - ds.inputs();
        let mean = noise.sum() / (200.0 * 10.0);
        assert!(mean.abs() <= 4.0 * v.sqrt() / (2000f64).sqrt());
        let var = noise.iter().map(|e| e * e).sum::<f64>() / 2000.0;
        assert!((var - v).abs() < 0.15 * v);
    }

    #[test]
    fn linear_and_square_features() {
        let x = DVector::from_vec(vec![0.3, -0.4, 0.5]);
        let layer = RandomFeatureLayer::new(4, 3, 1, 7).unwrap();
        let z = feature_map(&layer, &x).unwrap();
        assert!((z - layer.matrix() * &x).amax() < 1e-15);
        let sq = feature_map(&RandomFeatureLayer::identity(3, 2).unwrap(), &x).unwrap();
        assert_eq!(sq, x.map(|e| e * e));
        assert!(feature_map(&layer, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn cubic_features_match_scalar_loop() {
        let layer = RandomFeatureLayer::new(5, 4, 3, 11).unwrap();
        let x = DVector::from_vec(vec![0.1, 0.7, -0.2, 0.4]);
        let z = feature_map(&layer, &x).unwrap();
        for i in 0..5 {
            let mut dot = 0.0;
            for l in 0..4 {
                dot += layer.matrix()[(i, l)] * x[l];
            }
            assert!((z[i] - dot * dot * dot).abs() <= 1e-12 * (1.0 + z[i].abs()));
        }
    }

    #[test]
    fn z_column_example() {
        let layer = RandomFeatureLayer::from_matrix(DMatrix::from_row_slice(2, 1, &[1.0, 2.0]), 1).unwrap();
        let ds = Dataset::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 0.5)).unwrap();
        let z = z_tensor_matrix(&layer, &smooth_inputs(&ds, 0.0, 0).unwrap()).unwrap();
        assert_eq!(z.column(0).as_slice(), &[1.0, 2.0, 2.0, 4.0]);
    }

    #[test]
    fn z_equals_kron_of_q() {
        for (d, p, k, n) in [(2, 2, 3, 2), (3, 1, 3, 4), (3, 2, 2, 3), (2, 1, 2, 2)] {
            let ds = gen_synthetic(n, d, 31).unwrap();
            let sm = smooth_inputs(&ds, 0.05, 4).unwrap();
            let layer = RandomFeatureLayer::new(k, d, p, 8).unwrap();
            let q = layer.explicit_q().unwrap();
            let xbar = linalg::tensor_power_columns(sm.inputs(), 2 * p).unwrap();
            let oracle = linalg::kron(&q, &q).unwrap() * xbar;
            let z = z_tensor_matrix(&layer, &sm).unwrap();
            assert!((z - oracle).amax() < 1e-9, "d={d} p={p} k={k}");
        }
    }

    #[test]
    fn z_cap() {
        let ds = gen_synthetic(3, 2, 1).unwrap();
        let sm = smooth_inputs(&ds, 0.0, 0).unwrap();
        let layer = RandomFeatureLayer::new(4, 2, 1, 1).unwrap();
        assert!(matches!(z_tensor_matrix_capped(&layer, &sm, 16), Err(Error::ResourceLimit(_))));
        assert!(z_tensor_matrix_capped(&layer, &sm, 17).is_ok());
    }

    #[test]
    fn certificate_cases() {
        let ds = gen_synthetic(6, 4, 3).unwrap();
        let sm = smooth_inputs(&ds, 0.01, 3).unwrap();
        let layer = RandomFeatureLayer::new(4, 4, 2, 2).unwrap();
        let cert = z_singular_certificate(&layer, &sm, 0.1).unwrap();
        assert!(cert.positive && cert.sigma_min > 0.0);
        assert_eq!(cert.theory_bound, None);

        let small = RandomFeatureLayer::new(3, 4, 2, 2).unwrap();
        assert!(matches!(z_singular_certificate(&small, &sm, 0.1), Err(Error::Precondition(_))));

        let mut x = ds.inputs().clone();
        let first = x.row(0).into_owned();
        x.set_row(1, &first);
        let dup = smooth_inputs(&ds.with_inputs(x).unwrap(), 0.0, 0).unwrap();
        let cert = z_singular_certificate(&layer, &dup, 0.1).unwrap();
        assert!(!cert.positive);
    }

    #[test]
    fn theory_bound_grows_with_v() {
        let mut last = 0.0;
        for v in [1e-4, 1e-3, 1e-2, 1e-1] {
            let b = z_sigma_theory_bound(10, 1, 2, 2, v, 0.1).unwrap();
            assert!(b > last);
            last = b;
        }
        assert_eq!(z_sigma_theory_bound(10, 2, 14, 40, 0.01, 0.1), None);
    }

    #[test]
    fn norm_bound_cases() {
        let ds = gen_synthetic(40, 10, 1).unwrap();
        let sm = smooth_inputs(&ds, 0.01, 3).unwrap();
        let layer = RandomFeatureLayer::new(14, 10, 2, 2).unwrap();
        let rep = feature_norm_bound(&layer, &sm, 0.1).unwrap();
        assert!(!rep.violated && rep.max_norm <= rep.bound);

        let zero = RandomFeatureLayer::from_matrix(DenseMatrix::zeros(3, 10), 2).unwrap();
        let rep = feature_norm_bound(&zero, &smooth_inputs(&ds, 0.0, 0).unwrap(), 0.1).unwrap();
        assert_eq!(rep.max_norm, 0.0);
        assert!(!rep.violated);

        let lo = feature_norm_theory_bound(0.5, 0.01, 10, 14, 40, 2, 0.1);
        let hi = feature_norm_theory_bound(1.0, 0.01, 10, 14, 40, 2, 0.1);
        assert!(hi > lo);
    }

    #[test]
    fn three_layer_guards() {
        let ds = gen_synthetic(10, 3, 1).unwrap();
        let cfg = ThreeLayerConfig { k: Some(3), ..ThreeLayerConfig::new(2, 1e-3) };
        assert!(matches!(train_three_layer(&ds, &cfg), Err(Error::Precondition(_))));
        let big = ds.with_labels(DVector::from_element(10, 2.0)).unwrap();
        let cfg = ThreeLayerConfig { train: TwoLayerTrainConfig { max_iters: 2, ..cfg.train.clone() }, k: None, ..cfg };
        assert!(matches!(train_three_layer(&big, &cfg), Err(Error::Precondition(_))));
        assert!(train_three_layer(&ds, &cfg).is_ok());
    }

    #[test]
    fn zero_labels_three_layer() {
        let ds = gen_synthetic(8, 4, 1).unwrap().with_labels(DVector::zeros(8)).unwrap();
        let mut cfg = ThreeLayerConfig::new(2, 1e-3);
        cfg.train.max_iters = 1000;
        let out = train_three_layer(&ds, &cfg).unwrap();
        assert!(out.run.final_loss <= 1e-3);
        assert_eq!(out.run.params.r(), 2 * default_feature_count(8) + 2);
    }
}
