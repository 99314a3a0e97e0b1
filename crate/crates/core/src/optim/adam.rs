use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_finite, BatchObjective, TraceRecord};
use crate::error::{invalid, Result};

/// Which samples each step sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSpec {
    Full,
    /// Shuffled mini-batches of this size; the last batch of an epoch may be
    /// smaller.
    MiniBatch(usize),
}

/// Multiply the learning rate by `factor` every `every_epochs` epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrDecay {
    pub factor: f64,
    pub every_epochs: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch: BatchSpec,
    pub decay: Option<LrDecay>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, batch: BatchSpec::Full, decay: None }
    }
}

impl AdamConfig {
    /// Mini-batch setup used for the MNIST runs: batch 128, lr 0.003, decayed
    /// by 0.3 every 15 epochs.
    pub fn mnist() -> Self {
        Self {
            lr: 0.003,
            batch: BatchSpec::MiniBatch(128),
            decay: Some(LrDecay { factor: 0.3, every_epochs: 15 }),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return invalid(format!("learning rate must be finite and >= 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return invalid("Adam betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return invalid("Adam eps must be positive");
        }
        if let BatchSpec::MiniBatch(0) = self.batch {
            return invalid("batch size must be positive");
        }
        if let Some(d) = self.decay {
            if d.every_epochs == 0 || !(d.factor > 0.0) {
                return invalid("learning-rate decay needs a positive factor and period");
            }
        }
        Ok(())
    }
}

/// Adam for `max_iters` steps. Each trace record carries the (batch)
/// objective and gradient norm seen by that step.
pub fn adam<O: BatchObjective + ?Sized>(
    objective: &O,
    x0: &DVector<f64>,
    config: &AdamConfig,
    max_iters: u64,
    seed: u64,
) -> Result<(DVector<f64>, Vec<TraceRecord>)> {
    config.validate()?;
    let n = objective.n_samples();
    if n == 0 {
        return invalid("objective has no samples");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let batch_size = match config.batch {
        BatchSpec::Full => n,
        BatchSpec::MiniBatch(b) => b.min(n),
    };
    let batches_per_epoch = n.div_ceil(batch_size) as u64;

    let mut x = x0.clone();
    let mut m = DVector::zeros(x.len());
    let mut v = DVector::zeros(x.len());
    let (mut pow1, mut pow2) = (1.0f64, 1.0f64);
    let mut trace = Vec::with_capacity(max_iters.min(1 << 20) as usize);

    for t in 0..max_iters {
        let epoch = t / batches_per_epoch;
        let slot = (t % batches_per_epoch) as usize;
        let (f, g) = match config.batch {
            BatchSpec::Full => objective.value_and_gradient(&x),
            BatchSpec::MiniBatch(_) => {
                if slot == 0 {
                    order.shuffle(&mut rng);
                }
                let end = ((slot + 1) * batch_size).min(n);
                objective.batch_value_and_gradient(&x, &order[slot * batch_size..end])
            }
        };
        check_finite(t, f, &g)?;
        trace.push(TraceRecord { iteration: t, objective: f, grad_norm: g.norm(), perturbed: false });

        let lr = match config.decay {
            Some(d) => config.lr * d.factor.powi((epoch / d.every_epochs) as i32),
            None => config.lr,
        };
        pow1 *= config.beta1;
        pow2 *= config.beta2;
        m = &m * config.beta1 + &g * (1.0 - config.beta1);
        v = &v * config.beta2 + g.component_mul(&g) * (1.0 - config.beta2);
        for i in 0..x.len() {
            let mhat = m[i] / (1.0 - pow1);
            let vhat = v[i] / (1.0 - pow2);
            x[i] -= lr * mhat / (vhat.sqrt() + config.eps);
        }
    }
    Ok((x, trace))
}
