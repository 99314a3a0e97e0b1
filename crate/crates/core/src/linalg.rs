//! Dense tensor and linear-algebra kernel.
//!
//! Everything here is a pure function over `nalgebra` dense types. Flattened
//! tensor indices are row-major: `(i_1, …, i_p)` maps to
//! `((i_1·d + i_2)·d + …)·d + i_p`, which is the same layout `kron` produces
//! for column vectors, so `(A⊗B)(u⊗v) = Au ⊗ Bv` holds with these helpers.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

/// Dense row/column matrix used throughout the crate.
pub type DenseMatrix = DMatrix<f64>;

/// Absolute tolerance used when checking that a tensor or matrix is symmetric.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Highest tensor order the kernel will build.
pub const MAX_TENSOR_ORDER: usize = 8;

pub(crate) fn ensure_finite(m: &DenseMatrix, what: &str) -> Result<()> {
    if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
        return invalid(format!(
            "{what} has a non-finite entry at ({}, {})",
            pos % m.nrows(),
            pos / m.nrows()
        ));
    }
    Ok(())
}

/// `n choose k` as a float (exact for the sizes used here).
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

/// Dimension of the space of symmetric order-`p` tensors on `d` coordinates.
pub fn sym_dim(d: usize, p: usize) -> usize {
    binomial(p + d - 1, p) as usize
}

/// `x^{⊗p}` flattened row-major, length `d^p`.
pub fn tensor_power(x: &[f64], p: usize) -> Result<DVector<f64>> {
    if p == 0 {
        return invalid("tensor order must be at least 1");
    }
    if x.is_empty() {
        return invalid("tensor_power of an empty vector");
    }
    if p > MAX_TENSOR_ORDER {
        return invalid(format!("tensor order {p} exceeds {MAX_TENSOR_ORDER}"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return invalid("tensor_power input has non-finite entries");
    }
    let d = x.len();
    let len = d
        .checked_pow(p as u32)
        .ok_or_else(|| Error::InvalidArgument(format!("d^p overflows for d={d}, p={p}")))?;
    let mut out = Vec::with_capacity(len);
    out.extend_from_slice(x);
    for _ in 1..p {
        let prev = std::mem::take(&mut out);
        out.reserve(prev.len() * d);
        for &a in &prev {
            out.extend(x.iter().map(|&b| a * b));
        }
    }
    Ok(DVector::from_vec(out))
}

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.is_empty() || b.is_empty() {
        return invalid("kron of an empty matrix");
    }
    let rows = a.nrows().checked_mul(b.nrows());
    let cols = a.ncols().checked_mul(b.ncols());
    match (rows, cols) {
        (Some(r), Some(c)) if r.checked_mul(c).is_some() => Ok(a.kronecker(b)),
        _ => invalid("kron result size overflows"),
    }
}

/// Symmetric tensor in reduced vectorized form.
///
/// `coeffs[m]` is the coordinate along the basis tensor `s_m`, which has a 1
/// at every index that is a permutation of the `m`-th sorted index tuple and
/// 0 elsewhere. Sorted tuples `j_1 ≤ … ≤ j_p` are enumerated in
/// lexicographic order, so for `d = 2, p = 2` the basis is
/// `{e₁e₁, e₁e₂+e₂e₁, e₂e₂}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensorRV {
    dim: usize,
    order: usize,
    coeffs: Vec<f64>,
}

/// Sorted index tuples `j_1 ≤ … ≤ j_p` over `0..d`, lexicographic.
pub fn sorted_index_tuples(d: usize, p: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(sym_dim(d, p));
    let mut cur = vec![0usize; p];
    loop {
        out.push(cur.clone());
        // advance the rightmost position that can still grow
        let mut pos = p;
        while pos > 0 && cur[pos - 1] == d - 1 {
            pos -= 1;
        }
        if pos == 0 {
            break;
        }
        let v = cur[pos - 1] + 1;
        for slot in &mut cur[pos - 1..] {
            *slot = v;
        }
    }
    out
}

fn unflatten(mut flat: usize, d: usize, p: usize) -> Vec<usize> {
    let mut idx = vec![0usize; p];
    for slot in idx.iter_mut().rev() {
        *slot = flat % d;
        flat /= d;
    }
    idx
}

fn flatten(idx: &[usize], d: usize) -> usize {
    idx.iter().fold(0, |acc, &i| acc * d + i)
}

impl SymTensorRV {
    pub fn new(dim: usize, order: usize, coeffs: Vec<f64>) -> Result<Self> {
        if dim == 0 || order == 0 || order > MAX_TENSOR_ORDER {
            return invalid(format!("bad symmetric tensor shape d={dim}, p={order}"));
        }
        let expected = sym_dim(dim, order);
        if coeffs.len() != expected {
            return invalid(format!(
                "expected {expected} reduced coefficients for d={dim}, p={order}, got {}",
                coeffs.len()
            ));
        }
        Ok(Self { dim, order, coeffs })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `‖x‖_rv`, the Euclidean norm of the reduced coordinates.
    pub fn rv_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Expand back into the full `d^p` tensor.
    pub fn expand(&self) -> DVector<f64> {
        let (d, p) = (self.dim, self.order);
        let position: HashMap<Vec<usize>, usize> = sorted_index_tuples(d, p)
            .into_iter()
            .enumerate()
            .map(|(m, t)| (t, m))
            .collect();
        let len = d.pow(p as u32);
        DVector::from_iterator(
            len,
            (0..len).map(|flat| {
                let mut idx = unflatten(flat, d, p);
                idx.sort_unstable();
                self.coeffs[position[&idx]]
            }),
        )
    }
}

/// Reduce a symmetric `d^p` tensor to its reduced vectorized form.
pub fn reduce_symmetric(t: &DVector<f64>, d: usize, p: usize) -> Result<SymTensorRV> {
    reduce_symmetric_with_tol(t, d, p, SYMMETRY_TOL)
}

pub fn reduce_symmetric_with_tol(
    t: &DVector<f64>,
    d: usize,
    p: usize,
    tol: f64,
) -> Result<SymTensorRV> {
    if d == 0 || p == 0 || p > MAX_TENSOR_ORDER {
        return invalid(format!("bad symmetric tensor shape d={d}, p={p}"));
    }
    let len = d.pow(p as u32);
    if t.len() != len {
        return invalid(format!("tensor has {} entries, expected d^p = {len}", t.len()));
    }
    for flat in 0..len {
        let mut idx = unflatten(flat, d, p);
        idx.sort_unstable();
        let canon = flatten(&idx, d);
        if (t[flat] - t[canon]).abs() > tol {
            return Err(Error::Domain(format!(
                "tensor is not symmetric: entries {:?} and {:?} differ by {:e}",
                unflatten(canon, d, p),
                unflatten(flat, d, p),
                (t[flat] - t[canon]).abs()
            )));
        }
    }
    let coeffs = sorted_index_tuples(d, p)
        .iter()
        .map(|idx| t[flatten(idx, d)])
        .collect();
    SymTensorRV::new(d, p, coeffs)
}

/// Matrix whose `j`-th column is `tensor_power(row j of samples, q)`.
pub fn tensor_power_columns(samples: &DenseMatrix, q: usize) -> Result<DenseMatrix> {
    let (n, d) = samples.shape();
    if n == 0 || d == 0 {
        return invalid("tensor_power_columns of an empty sample matrix");
    }
    let len = d
        .checked_pow(q as u32)
        .ok_or_else(|| Error::InvalidArgument(format!("d^q overflows for d={d}, q={q}")))?;
    let mut out = DenseMatrix::zeros(len, n);
    for j in 0..n {
        let row: Vec<f64> = samples.row(j).iter().copied().collect();
        out.set_column(j, &tensor_power(&row, q)?);
    }
    Ok(out)
}

/// Whether a computed singular value is indistinguishable from zero for a
/// matrix with largest singular value `s_max` and shape `rows×cols`.
pub fn is_numerically_zero(s: f64, s_max: f64, rows: usize, cols: usize) -> bool {
    s <= s_max * f64::EPSILON * rows.max(cols) as f64
}

/// All singular values of `m`, descending.
pub fn singular_values(m: &DenseMatrix) -> Result<DVector<f64>> {
    if m.is_empty() {
        return invalid("singular values of an empty matrix");
    }
    ensure_finite(m, "matrix")?;
    let mut s = m.clone().svd(false, false).singular_values;
    s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Smallest of the `min(rows, cols)` singular values.
pub fn smallest_singular(m: &DenseMatrix) -> Result<f64> {
    let s = singular_values(m)?;
    Ok(s.iter().copied().fold(f64::INFINITY, f64::min).max(0.0))
}

/// Orthonormal basis of the column space of `a`, via column-pivoted QR.
fn column_space_basis(a: &DenseMatrix) -> DenseMatrix {
    if a.ncols() == 0 {
        return DenseMatrix::zeros(a.nrows(), 0);
    }
    let qr = a.clone().col_piv_qr();
    let r = qr.r();
    let q = qr.q();
    let lead = r[(0, 0)].abs();
    let tol = lead * f64::EPSILON * a.nrows().max(a.ncols()) as f64;
    let rank = (0..r.nrows().min(r.ncols()))
        .take_while(|&i| r[(i, i)].abs() > tol)
        .count();
    q.columns(0, rank).into_owned()
}

/// Leave-one-out distance: the smallest distance from a column of `m` to
/// the span of the remaining columns.
pub fn leave_one_out(m: &DenseMatrix) -> Result<f64> {
    let (rows, cols) = m.shape();
    if cols == 0 || rows == 0 {
        return invalid("leave_one_out of an empty matrix");
    }
    if rows < cols {
        return invalid(format!("leave_one_out needs rows >= cols, got {rows}x{cols}"));
    }
    ensure_finite(m, "matrix")?;
    let mut best = f64::INFINITY;
    for i in 0..cols {
        let col = m.column(i);
        let dist = if cols == 1 {
            col.norm()
        } else {
            let others = m.clone().remove_column(i);
            let q = column_space_basis(&others);
            let proj = &q * (q.transpose() * col);
            (col - proj).norm()
        };
        best = best.min(dist);
    }
    Ok(best)
}

/// Eigenvalue with a unit eigenvector.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: f64,
    pub vector: DVector<f64>,
}

fn symmetrized(h: &DenseMatrix, what: &str) -> Result<DenseMatrix> {
    if h.is_empty() {
        return invalid(format!("{what} is empty"));
    }
    if !h.is_square() {
        return invalid(format!("{what} is not square: {}x{}", h.nrows(), h.ncols()));
    }
    ensure_finite(h, what)?;
    let scale = h.amax().max(1.0);
    let t = h.transpose();
    let asym = (h - &t).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::Domain(format!("{what} is not symmetric (max |H - Hᵀ| = {asym:e})")));
    }
    Ok((h + t) * 0.5)
}

/// All eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(h: &DenseMatrix) -> Result<Vec<f64>> {
    let s = symmetrized(h, "matrix")?;
    let mut vals: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

/// Smallest eigenvalue of a symmetric matrix and a unit eigenvector for it.
pub fn min_eigenvalue_sym(h: &DenseMatrix) -> Result<EigenPair> {
    let s = symmetrized(h, "matrix")?;
    let eig = s.symmetric_eigen();
    let (idx, &value) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty");
    let vector = eig.eigenvectors.column(idx).normalize();
    Ok(EigenPair { value, vector })
}

/// `max_i |λ_i(M)|` for symmetric `M`.
pub fn spectral_norm_sym(m: &DenseMatrix) -> Result<f64> {
    let vals = symmetric_eigenvalues(m)?;
    Ok(vals.iter().fold(0.0f64, |acc, v| acc.max(v.abs())))
}
