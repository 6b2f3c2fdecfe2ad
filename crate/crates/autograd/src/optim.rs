use std::collections::HashMap;

use ndarray::{Array2, Axis};

use crate::{Mat, ParamGroup, ParamId, ParamStore};

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [(ParamId, Mat)], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|(_, g)| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.mapv_inplace(|v| v * factor);
        }
    }
    norm
}

/// Linear warm-up followed by linear decay to zero.
#[derive(Clone, Copy, Debug)]
pub struct LinearWarmup {
    pub total_steps: usize,
    pub warmup_steps: usize,
}

impl LinearWarmup {
    pub fn new(total_steps: usize, warmup_frac: f64) -> Self {
        let warmup_steps = ((total_steps as f64) * warmup_frac).round() as usize;
        Self { total_steps: total_steps.max(1), warmup_steps }
    }

    /// Multiplier for the 0-based update `step`.
    pub fn factor(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return (step + 1) as f64 / self.warmup_steps as f64;
        }
        let remaining = self.total_steps.saturating_sub(step) as f64;
        let span = (self.total_steps - self.warmup_steps).max(1) as f64;
        (remaining / span).clamp(0.0, 1.0)
    }
}

/// Plain gradient descent.
#[derive(Clone, Copy, Debug)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn step(&self, store: &mut ParamStore, grads: &[(ParamId, Mat)]) {
        for (id, g) in grads {
            let p = store.get_mut(*id);
            p.scaled_add(-self.lr, g);
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdafactorConfig {
    /// Regulariser added to squared gradients.
    pub eps: f64,
    /// Updates are rescaled so their RMS does not exceed this.
    pub clip_threshold: f64,
    /// Exponent of the second-moment decay schedule `1 - t^decay_rate`.
    pub decay_rate: f64,
}

impl Default for AdafactorConfig {
    fn default() -> Self {
        Self { eps: 1e-30, clip_threshold: 1.0, decay_rate: -0.8 }
    }
}

enum Moments {
    Factored { row: Array2<f64>, col: Array2<f64> },
    Full(Array2<f64>),
}

/// Adafactor with an externally supplied learning rate per parameter group
/// (no relative step sizing, no first moment).
pub struct Adafactor {
    cfg: AdafactorConfig,
    state: HashMap<ParamId, (usize, Moments)>,
}

impl Adafactor {
    pub fn new(cfg: AdafactorConfig) -> Self {
        Self { cfg, state: HashMap::new() }
    }

    /// Applies one update. `lr` maps each group to its current rate.
    pub fn step<F>(&mut self, store: &mut ParamStore, grads: &[(ParamId, Mat)], lr: F)
    where
        F: Fn(ParamGroup) -> f64,
    {
        for (id, grad) in grads {
            let (rows, cols) = grad.dim();
            let factored = rows > 1 && cols > 1;
            let (t, moments) = self.state.entry(*id).or_insert_with(|| {
                let m = if factored {
                    Moments::Factored { row: Array2::zeros((rows, 1)), col: Array2::zeros((1, cols)) }
                } else {
                    Moments::Full(Array2::zeros((rows, cols)))
                };
                (0, m)
            });
            *t += 1;
            let beta2 = 1.0 - (*t as f64).powf(self.cfg.decay_rate);
            let sq = grad.mapv(|g| g * g + self.cfg.eps);

            let mut update = match moments {
                Moments::Factored { row, col } => {
                    let row_mean = sq.mean_axis(Axis(1)).expect("rows").insert_axis(Axis(1));
                    let col_mean = sq.mean_axis(Axis(0)).expect("cols").insert_axis(Axis(0));
                    *row = &*row * beta2 + &(row_mean * (1.0 - beta2));
                    *col = &*col * beta2 + &(col_mean * (1.0 - beta2));
                    let row_avg = row.mean().expect("non-empty");
                    let r_factor = row.mapv(|r| (r / row_avg).sqrt().recip());
                    let c_factor = col.mapv(|c| c.sqrt().recip());
                    grad * &r_factor * &c_factor
                }
                Moments::Full(v) => {
                    *v = &*v * beta2 + &(sq * (1.0 - beta2));
                    grad * &v.mapv(|x| x.sqrt().recip())
                }
            };

            let rms = (update.iter().map(|u| u * u).sum::<f64>() / update.len() as f64).sqrt();
            let denom = (rms / self.cfg.clip_threshold).max(1.0);
            let rate = lr(store.group(*id));
            update.mapv_inplace(|u| u * rate / denom);
            *store.get_mut(*id) -= &update;
        }
    }
}
