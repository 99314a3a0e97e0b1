use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{invalid, Result};
use crate::model::Dataset;

/// Random dataset: inputs and labels i.i.d. uniform on `[-1, 1]`, then each
/// input row scaled to unit norm. Labels are left as drawn.
pub fn gen_synthetic(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return invalid(format!("synthetic data needs n, d >= 1 (got n={n}, d={d})"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let x = DMatrix::from_fn(n, d, |_, _| u.sample(&mut rng));
    let y = DVector::from_fn(n, |_, _| u.sample(&mut rng));
    Dataset::new(x, y)?.normalize_rows()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_rows_and_bounded_labels() {
        let ds = gen_synthetic(50, 7, 3).unwrap();
        for row in ds.inputs().row_iter() {
            assert!((row.norm() - 1.0).abs() < 1e-12);
        }
        assert!(ds.label_bound() <= 1.0);
        assert!((ds.input_bound() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seeded() {
        assert_eq!(gen_synthetic(5, 3, 1).unwrap(), gen_synthetic(5, 3, 1).unwrap());
        assert_ne!(gen_synthetic(5, 3, 1).unwrap(), gen_synthetic(5, 3, 2).unwrap());
        assert!(gen_synthetic(0, 3, 1).is_err());
    }

    #[test]
    fn full_scale_config() {
        let ds = gen_synthetic(300, 100, 1).unwrap();
        assert_eq!((ds.n(), ds.d()), (300, 100));
    }
}
