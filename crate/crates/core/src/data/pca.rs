use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::model::Dataset;

/// Principal-component projection of a dataset.
#[derive(Debug, Clone)]
pub struct Pca {
    /// Projected data (`n×k`), labels unchanged.
    pub projected: Dataset,
    /// Loadings, one orthonormal column per component (`d×k`).
    pub components: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub explained_variance_ratio: f64,
}

/// Project the centered inputs onto the top `k` principal directions.
///
/// Each component is oriented so its largest-magnitude coordinate is
/// positive.
pub fn pca_project(data: &Dataset, k: usize) -> Result<Pca> {
    let (n, d) = (data.n(), data.d());
    if k == 0 || k > d {
        return invalid(format!("PCA dimension must lie in 1..={d}, got {k}"));
    }
    if n == 0 {
        return invalid("PCA of an empty dataset");
    }
    let x = data.inputs();
    let mean = DVector::from_fn(d, |c, _| x.column(c).sum() / n as f64);
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.tr_mul(&centered);
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut components = DMatrix::zeros(d, k);
    for (slot, &idx) in order.iter().take(k).enumerate() {
        let mut v = eig.eigenvectors.column(idx).normalize();
        let lead = v.iter().copied().fold(0.0f64, |best, e| if e.abs() > best.abs() { e } else { best });
        if lead < 0.0 {
            v.neg_mut();
        }
        components.set_column(slot, &v);
    }
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let kept: f64 = order.iter().take(k).map(|&i| eig.eigenvalues[i].max(0.0)).sum();
    let explained_variance_ratio = if total > 0.0 { kept / total } else { 1.0 };
    let projected = data.with_inputs(&centered * &components)?;
    Ok(Pca { projected, components, mean, explained_variance_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;

    #[test]
    fn full_rank_reconstructs() {
        let ds = gen_synthetic(30, 6, 4).unwrap();
        let pca = pca_project(&ds, 6).unwrap();
        let recon = pca.projected.inputs() * pca.components.transpose();
        let mut centered = ds.inputs().clone();
        for mut row in centered.row_iter_mut() {
            row -= pca.mean.transpose();
        }
        assert!((recon - centered).amax() < 1e-8);
        let gram = pca.components.tr_mul(&pca.components);
        assert!((gram - DMatrix::identity(6, 6)).amax() < 1e-10);
    }

    #[test]
    fn rank_one_fully_explained() {
        let dir = DVector::from_vec(vec![0.6, -0.8, 0.0]);
        let x = DMatrix::from_fn(10, 3, |j, c| (j as f64 - 4.0) * dir[c] + 2.0);
        let ds = Dataset::new(x, DVector::zeros(10)).unwrap();
        let pca = pca_project(&ds, 1).unwrap();
        assert!((pca.explained_variance_ratio - 1.0).abs() < 1e-10);
        // sign convention: largest-magnitude loading (−0.8) flipped positive
        assert!((pca.components[(1, 0)] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn bad_dims() {
        let ds = gen_synthetic(5, 3, 1).unwrap();
        assert!(pca_project(&ds, 0).is_err());
        assert!(pca_project(&ds, 4).is_err());
    }
}
