use crate::arch::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    /// Multiply the rate by `lr_drop_factor` every `lr_drop_every` iterations.
    pub lr_drop_factor: f64,
    pub lr_drop_every: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 4,
            max_iterations: 44_000,
            lr_drop_factor: 0.1,
            lr_drop_every: 20_000,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} must be in [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor <= 1.0) {
            return bad(format!(
                "lr_drop_factor {} must be in (0, 1]",
                self.lr_drop_factor
            ));
        }
        if self.lr_drop_every == 0 {
            return bad("lr_drop_every must be >= 1".into());
        }
        Ok(())
    }

    /// Learning rate in effect at zero-based iteration `iter`.
    pub fn lr_at(&self, iter: usize) -> f64 {
        self.learning_rate * self.lr_drop_factor.powi((iter / self.lr_drop_every) as i32)
    }
}

/// One momentum step at rate `lr`:
/// `v ← m·v − lr·(g + wd·p)`, `p ← p + v`. Bias tensors (`*.b`) skip decay.
pub fn sgd_step(
    params: &mut ParamStore<f32>,
    grads: &ParamStore<f32>,
    velocity: &mut ParamStore<f32>,
    cfg: &SgdConfig,
    lr: f64,
) -> Result<()> {
    params.check_compatible(grads)?;
    params.check_compatible(velocity)?;
    let (m, lr) = (cfg.momentum as f32, lr as f32);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name)?.data();
        let v = velocity.get_mut(name)?.data_mut();
        let wd = if name.ends_with(".b") {
            0.0
        } else {
            cfg.weight_decay as f32
        };
        for ((p, v), g) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
            *v = m * *v - lr * (g + wd * *p);
            *p += *v;
        }
    }
    Ok(())
}
