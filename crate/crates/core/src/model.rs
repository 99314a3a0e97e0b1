//! Two-layer quadratic-activation network `x ↦ Σ_i a_i (w_iᵀx)²` with a
//! fixed half/half ±1 output layer.
//!
//! Parameters are flattened column by column (`w_1`, then `w_2`, …), which
//! is also nalgebra's storage order for the `d×r` weight matrix. The Hessian
//! produced by [`hessian_full`] uses the same ordering.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::linalg::{ensure_finite, DenseMatrix};
use crate::optim::Objective;

/// Default limit on `d·r` for assembling the full Hessian.
pub const DEFAULT_HESSIAN_CAP: usize = 20_000;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub(crate) fn compensated<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut acc = CompensatedSum::default();
    for v in it {
        acc.add(v);
    }
    acc.value()
}

/// Training inputs (one sample per row) with labels.
///
/// `B = max_j ‖x_j‖₂` and `Y = max_j |y_j|` are always recomputed from the
/// data.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DenseMatrix,
    y: DVector<f64>,
    input_bound: f64,
    label_bound: f64,
}

impl Dataset {
    pub fn new(x: DenseMatrix, y: DVector<f64>) -> Result<Self> {
        if x.ncols() == 0 {
            return invalid("dataset inputs must have at least one column");
        }
        if x.nrows() != y.len() {
            return invalid(format!("{} input rows but {} labels", x.nrows(), y.len()));
        }
        ensure_finite(&x, "dataset inputs")?;
        if y.iter().any(|v| !v.is_finite()) {
            return invalid("dataset labels contain non-finite values");
        }
        let input_bound = x.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
        let label_bound = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(Self { x, y, input_bound, label_bound })
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Input dimension.
    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn inputs(&self) -> &DenseMatrix {
        &self.x
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn sample(&self, j: usize) -> DVector<f64> {
        self.x.row(j).transpose()
    }

    /// `B`, the largest input norm.
    pub fn input_bound(&self) -> f64 {
        self.input_bound
    }

    /// `Y`, the largest absolute label.
    pub fn label_bound(&self) -> f64 {
        self.label_bound
    }

    /// Scale every input row to unit norm. Zero rows are left as they are.
    pub fn normalize_rows(&self) -> Result<Self> {
        let mut x = self.x.clone();
        for mut row in x.row_iter_mut() {
            let n = row.norm();
            if n > 0.0 {
                row /= n;
            }
        }
        Self::new(x, self.y.clone())
    }

    pub fn with_inputs(&self, x: DenseMatrix) -> Result<Self> {
        Self::new(x, self.y.clone())
    }

    pub fn with_labels(&self, y: DVector<f64>) -> Result<Self> {
        Self::new(self.x.clone(), y)
    }

    fn require_samples(&self) -> Result<()> {
        if self.n() == 0 {
            return invalid("dataset has no samples");
        }
        Ok(())
    }
}

/// Hidden-layer weights `W` (`d×r`, column `i` is `w_i`) of the two-layer
/// network. The output weights are `a_i = +1` for the first `r/2` units and
/// `-1` for the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerParams {
    w: DenseMatrix,
}

impl TwoLayerParams {
    pub fn new(w: DenseMatrix) -> Result<Self> {
        let r = w.ncols();
        if r == 0 || r % 2 != 0 {
            return invalid(format!("hidden width r must be even and positive, got {r}"));
        }
        if w.nrows() == 0 {
            return invalid("input dimension must be positive");
        }
        ensure_finite(&w, "weights")?;
        Ok(Self { w })
    }

    pub fn zeros(d: usize, r: usize) -> Result<Self> {
        Self::new(DenseMatrix::zeros(d, r))
    }

    /// Rebuild from a flattened column-major parameter vector.
    pub fn from_flat(flat: &DVector<f64>, d: usize, r: usize) -> Result<Self> {
        if flat.len() != d * r {
            return invalid(format!("flat parameter has {} entries, expected {}", flat.len(), d * r));
        }
        Self::new(DenseMatrix::from_column_slice(d, r, flat.as_slice()))
    }

    pub fn to_flat(&self) -> DVector<f64> {
        DVector::from_column_slice(self.w.as_slice())
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.w
    }

    pub fn d(&self) -> usize {
        self.w.nrows()
    }

    pub fn r(&self) -> usize {
        self.w.ncols()
    }

    /// Output sign `a_i`.
    pub fn sign(&self, i: usize) -> f64 {
        output_sign(i, self.r())
    }

    pub fn signs(&self) -> DVector<f64> {
        DVector::from_fn(self.r(), |i, _| self.sign(i))
    }

    /// `r ≥ 2d+2`, the width at which the Hessian/residual identity holds.
    pub fn is_wide_enough(&self) -> bool {
        self.r() >= 2 * self.d() + 2
    }
}

#[inline]
pub(crate) fn output_sign(i: usize, r: usize) -> f64 {
    if i < r / 2 {
        1.0
    } else {
        -1.0
    }
}

fn check_dims(params: &TwoLayerParams, data: &Dataset) -> Result<()> {
    data.require_samples()?;
    if params.d() != data.d() {
        return invalid(format!(
            "weights have input dimension {} but data has {}",
            params.d(),
            data.d()
        ));
    }
    Ok(())
}

/// Network output on a single input.
pub fn forward(params: &TwoLayerParams, x: &DVector<f64>) -> Result<f64> {
    if x.len() != params.d() {
        return invalid(format!("input has length {}, expected {}", x.len(), params.d()));
    }
    let proj = params.w.tr_mul(x);
    Ok(compensated(proj.iter().enumerate().map(|(i, p)| params.sign(i) * p * p)))
}

/// Residuals from the projection matrix `P = X W` (`n×r`).
fn residuals_from_proj(proj: &DenseMatrix, y: &DVector<f64>) -> DVector<f64> {
    let r = proj.ncols();
    DVector::from_fn(proj.nrows(), |j, _| {
        let mut acc = CompensatedSum::default();
        for i in 0..r {
            let p = proj[(j, i)];
            acc.add(output_sign(i, r) * p * p);
        }
        acc.add(-y[j]);
        acc.value()
    })
}

/// `δ_j = Σ_i a_i (w_iᵀx_j)² − y_j`.
pub fn residuals(params: &TwoLayerParams, data: &Dataset) -> Result<DVector<f64>> {
    check_dims(params, data)?;
    let proj = data.inputs() * params.weights();
    Ok(residuals_from_proj(&proj, data.labels()))
}

fn loss_from_residuals(delta: &DVector<f64>) -> f64 {
    compensated(delta.iter().map(|v| v * v)) / (4.0 * delta.len() as f64)
}

/// Empirical risk `f(W) = (1/4n) Σ_j δ_j²`.
pub fn loss_f(params: &TwoLayerParams, data: &Dataset) -> Result<f64> {
    Ok(loss_from_residuals(&residuals(params, data)?))
}

/// `(1/n) Σ_j c_j x_j x_jᵀ` with compensated sums over samples.
fn weighted_outer_sum(x: &DenseMatrix, c: &DVector<f64>) -> DenseMatrix {
    let (n, d) = x.shape();
    let mut m = DenseMatrix::zeros(d, d);
    for a in 0..d {
        for b in a..d {
            let mut acc = CompensatedSum::default();
            for j in 0..n {
                acc.add(c[j] * x[(j, a)] * x[(j, b)]);
            }
            let v = acc.value() / n as f64;
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    m
}

/// Residual matrix `M(W) = (1/n) Σ_j δ_j x_j x_jᵀ`.
pub fn residual_matrix(params: &TwoLayerParams, data: &Dataset) -> Result<DenseMatrix> {
    let delta = residuals(params, data)?;
    Ok(weighted_outer_sum(data.inputs(), &delta))
}

fn grad_from_m(m: &DenseMatrix, w: &DenseMatrix) -> DenseMatrix {
    let mut g = m * w;
    let r = w.ncols();
    for k in r / 2..r {
        g.column_mut(k).neg_mut();
    }
    g
}

/// Gradient of `f`: column `k` is `a_k M(W) w_k`.
pub fn grad_f(params: &TwoLayerParams, data: &Dataset) -> Result<DenseMatrix> {
    let m = residual_matrix(params, data)?;
    Ok(grad_from_m(&m, params.weights()))
}

/// `∇²f(W)(Z, Z)` without forming the Hessian.
pub fn hessian_quadratic(params: &TwoLayerParams, data: &Dataset, z: &DenseMatrix) -> Result<f64> {
    check_dims(params, data)?;
    if z.shape() != params.weights().shape() {
        return invalid(format!(
            "direction has shape {:?}, expected {:?}",
            z.shape(),
            params.weights().shape()
        ));
    }
    let m = residual_matrix(params, data)?;
    let r = params.r();
    let first = compensated((0..r).map(|k| {
        let zk = z.column(k);
        params.sign(k) * zk.dot(&(&m * zk))
    }));
    let pw = data.inputs() * params.weights();
    let pz = data.inputs() * z;
    let second = compensated((0..data.n()).map(|j| {
        let inner = compensated((0..r).map(|i| params.sign(i) * pw[(j, i)] * pz[(j, i)]));
        inner * inner
    }));
    Ok(first + 2.0 * second / data.n() as f64)
}

/// Full `(d·r)×(d·r)` Hessian of `f` under the column-major flattening.
pub fn hessian_full(params: &TwoLayerParams, data: &Dataset) -> Result<DenseMatrix> {
    hessian_full_capped(params, data, DEFAULT_HESSIAN_CAP)
}

pub fn hessian_full_capped(params: &TwoLayerParams, data: &Dataset, cap: usize) -> Result<DenseMatrix> {
    check_dims(params, data)?;
    let (d, r, n) = (params.d(), params.r(), data.n());
    let dim = d * r;
    if dim > cap {
        return Err(Error::ResourceLimit(format!(
            "Hessian dimension d·r = {dim} exceeds the cap of {cap}"
        )));
    }
    let x = data.inputs();
    let proj = x * params.weights();
    // row j holds a_k (x_jᵀw_k) x_j in block k; the Gauss-Newton part is (2/n) VᵀV
    let v = DMatrix::from_fn(n, dim, |j, col| {
        let (k, a) = (col / d, col % d);
        params.sign(k) * proj[(j, k)] * x[(j, a)]
    });
    let mut h = v.tr_mul(&v) * (2.0 / n as f64);
    let m = residual_matrix(params, data)?;
    for k in 0..r {
        let s = params.sign(k);
        let mut block = h.view_mut((k * d, k * d), (d, d));
        block += &m * s;
    }
    // exact symmetry
    for i in 0..dim {
        for j in i + 1..dim {
            let avg = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = avg;
            h[(j, i)] = avg;
        }
    }
    Ok(h)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return invalid(format!("regularization γ must be finite and nonnegative, got {gamma}"));
    }
    Ok(())
}

/// Regularized objective `g(W) = f(W) + γ/2 ‖W‖_F²`.
pub fn loss_g(params: &TwoLayerParams, data: &Dataset, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(loss_f(params, data)? + 0.5 * gamma * params.weights().norm_squared())
}

pub fn grad_g(params: &TwoLayerParams, data: &Dataset, gamma: f64) -> Result<DenseMatrix> {
    check_gamma(gamma)?;
    Ok(grad_f(params, data)? + params.weights() * gamma)
}

/// `∇²g(W)(Z, Z) = ∇²f(W)(Z, Z) + γ‖Z‖_F²`.
pub fn hessian_quadratic_g(
    params: &TwoLayerParams,
    data: &Dataset,
    z: &DenseMatrix,
    gamma: f64,
) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(hessian_quadratic(params, data, z)? + gamma * z.norm_squared())
}

/// Full Hessian of `g`.
pub fn hessian_full_g(params: &TwoLayerParams, data: &Dataset, gamma: f64, cap: usize) -> Result<DenseMatrix> {
    check_gamma(gamma)?;
    let mut h = hessian_full_capped(params, data, cap)?;
    for i in 0..h.nrows() {
        h[(i, i)] += gamma;
    }
    Ok(h)
}

/// `g` as an [`Objective`] over flattened weights, for the optimizers.
#[derive(Debug, Clone)]
pub struct TwoLayerObjective<'a> {
    data: &'a Dataset,
    r: usize,
    gamma: f64,
}

impl<'a> TwoLayerObjective<'a> {
    pub fn new(data: &'a Dataset, r: usize, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        data.require_samples()?;
        if r == 0 || r % 2 != 0 {
            return invalid(format!("hidden width r must be even and positive, got {r}"));
        }
        Ok(Self { data, r, gamma })
    }

    pub fn dim(&self) -> usize {
        self.data.d() * self.r
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn width(&self) -> usize {
        self.r
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    fn weights<'b>(&self, flat: &'b DVector<f64>) -> nalgebra::DMatrixView<'b, f64> {
        nalgebra::DMatrixView::from_slice(flat.as_slice(), self.data.d(), self.r)
    }

    /// Value and gradient of `g` restricted to the given sample indices.
    pub fn batch_value_and_gradient(&self, flat: &DVector<f64>, batch: &[usize]) -> (f64, DVector<f64>) {
        let x = self.data.inputs().select_rows(batch);
        let y = DVector::from_iterator(batch.len(), batch.iter().map(|&j| self.data.labels()[j]));
        self.eval(flat, &x, &y)
    }

    fn eval(&self, flat: &DVector<f64>, x: &DenseMatrix, y: &DVector<f64>) -> (f64, DVector<f64>) {
        let w = self.weights(flat);
        let proj = x * w;
        let delta = residuals_from_proj(&proj, y);
        let value = loss_from_residuals(&delta) + 0.5 * self.gamma * flat.norm_squared();
        let m = weighted_outer_sum(x, &delta);
        let mut g = grad_from_m(&m, &w.into_owned());
        g += w * self.gamma;
        (value, DVector::from_column_slice(g.as_slice()))
    }
}

impl Objective for TwoLayerObjective<'_> {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let w = self.weights(x);
        let delta = residuals_from_proj(&(self.data.inputs() * w), self.data.labels());
        loss_from_residuals(&delta) + 0.5 * self.gamma * x.norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.value_and_gradient(x).1
    }

    fn value_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        self.eval(x, self.data.inputs(), self.data.labels())
    }
}
