use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{forward_loss, loss_and_grads, Batch};
use crate::error::Result;
use crate::model::Avcrn;
use crate::nn::ParamGrads;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Scalars probed per tensor; smaller tensors are probed exhaustively.
    pub samples: usize,
    /// Relative errors are measured against `max(|analytic|, |numeric|, floor)`.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-4,
            samples: 20,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }

    pub fn failures(&self, tolerance: f64) -> Vec<&TensorCheck> {
        self.tensors
            .iter()
            .filter(|t| t.max_rel_err.is_nan() || t.max_rel_err >= tolerance)
            .collect()
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Compares backpropagated gradients of the train-mode masked MSE against
/// central differences for every learnable tensor.
pub fn grad_check(model: &Avcrn, batch: &Batch, cfg: &GradCheckConfig) -> Result<GradReport> {
    grad_check_with(model, batch, cfg, |_| {})
}

/// As [`grad_check`], with `tamper` applied to the analytic gradients first.
pub fn grad_check_with(
    model: &Avcrn,
    batch: &Batch,
    cfg: &GradCheckConfig,
    tamper: impl FnOnce(&mut ParamGrads),
) -> Result<GradReport> {
    let mut analytic = loss_and_grads(model, &model.store, batch)?.grads;
    tamper(&mut analytic);
    let mut probe = model.store.clone();
    let mut tensors = Vec::new();
    for (i, name) in model.store.param_names().into_iter().enumerate() {
        let n = model.store.param(&name)?.numel();
        let indices: Vec<usize> = if n <= cfg.samples {
            (0..n).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
            let mut idx = rand::seq::index::sample(&mut rng, n, cfg.samples).into_vec();
            idx.sort_unstable();
            idx
        };
        let grads = analytic.get(&name);
        let mut check = TensorCheck {
            name: name.clone(),
            checked: indices.len(),
            max_rel_err: 0.0,
            max_abs_err: 0.0,
        };
        for k in indices {
            let orig = model.store.param(&name)?.data()[k];
            probe.param_mut(&name)?.data_mut()[k] = orig + cfg.step;
            let up = forward_loss(model, &probe, batch, true)?;
            probe.param_mut(&name)?.data_mut()[k] = orig - cfg.step;
            let down = forward_loss(model, &probe, batch, true)?;
            probe.param_mut(&name)?.data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            let a = grads.map_or(0.0, |g| g[k]);
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(cfg.floor);
            check.max_abs_err = check.max_abs_err.max(abs);
            check.max_rel_err = check.max_rel_err.max(rel);
        }
        tensors.push(check);
    }
    Ok(GradReport { tensors })
}
