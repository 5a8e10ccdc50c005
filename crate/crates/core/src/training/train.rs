use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::arch::{net_backward, net_forward, NetworkPlan, ParamStore};
use crate::dataio::{validate_dataset, Sample};
use crate::error::{Error, Result};
use crate::ops::{cross_entropy_parts, IGNORE_ID};
use crate::rng::Rng;

use super::sgd::{sgd_step, SgdConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    /// One-based count of completed iterations.
    pub iteration: usize,
    /// Batch loss before the update.
    pub loss: f64,
    pub lr: f64,
    pub elapsed: Duration,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    /// `iteration,loss,lr` rows. Wall-clock is left out so that logs of
    /// identical runs compare equal byte for byte.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss,lr\n");
        for e in &self.entries {
            out += &format!("{},{},{}\n", e.iteration, e.loss, e.lr);
        }
        out
    }

    /// Mean loss of the first and last `window` entries.
    pub fn window_means(&self, window: usize) -> Option<(f64, f64)> {
        let n = self.entries.len();
        if window == 0 || n < window {
            return None;
        }
        let mean = |s: &[LogEntry]| s.iter().map(|e| e.loss).sum::<f64>() / s.len() as f64;
        Some((
            mean(&self.entries[..window]),
            mean(&self.entries[n - window..]),
        ))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainOptions {
    /// Per-class loss weights; `None` weighs every class 1.
    pub class_weights: Option<Vec<f32>>,
    /// Process batch items one after another on the calling thread.
    pub sequential: bool,
    /// Call the checkpoint hook every this many iterations (0 disables).
    pub checkpoint_every: usize,
}

struct ItemResult {
    weighted_nll: f64,
    weight_sum: f64,
}

pub fn train(
    plan: &NetworkPlan,
    params: ParamStore<f32>,
    dataset: &[Sample],
    cfg: &SgdConfig,
    opts: &TrainOptions,
) -> Result<(ParamStore<f32>, TrainLog)> {
    train_with(plan, params, dataset, cfg, opts, |_, _| Ok(()))
}

/// [`train`] with a hook called as `on_checkpoint(iteration, params)`.
///
/// Each iteration draws `batch_size` samples with replacement, runs them
/// forward in training mode, normalizes the weighted loss by the summed
/// weights of the whole batch, and takes one [`sgd_step`]. Batch items
/// may run in parallel; their gradients are always summed in batch order,
/// so results do not depend on `sequential`.
pub fn train_with(
    plan: &NetworkPlan,
    mut params: ParamStore<f32>,
    dataset: &[Sample],
    cfg: &SgdConfig,
    opts: &TrainOptions,
    mut on_checkpoint: impl FnMut(usize, &ParamStore<f32>) -> Result<()>,
) -> Result<(ParamStore<f32>, TrainLog)> {
    cfg.validate()?;
    validate_dataset(dataset, plan.num_classes)?;
    params.check_plan(plan)?;
    let weights = match &opts.class_weights {
        Some(w) if w.len() != plan.num_classes => {
            return Err(Error::Config(format!(
                "{} class weights for {} classes",
                w.len(),
                plan.num_classes
            )))
        }
        Some(w) if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) => {
            return Err(Error::Config(
                "class weights must be finite and >= 0".into(),
            ))
        }
        Some(w) => w.clone(),
        None => vec![1.0; plan.num_classes],
    };

    let start = Instant::now();
    let mut rng = Rng::new(cfg.seed);
    let mut velocity = params.zeros_like();
    let mut log = TrainLog::default();
    for iter in 0..cfg.max_iterations {
        let batch: Vec<(usize, Rng)> = (0..cfg.batch_size)
            .map(|_| (rng.below(dataset.len() as u64) as usize, rng.fork()))
            .collect();

        let forward = |(idx, item_rng): &(usize, Rng)| {
            let s = &dataset[*idx];
            let (logits, cache) =
                net_forward(plan, &params, &s.image, true, &mut item_rng.clone())?;
            let parts = cross_entropy_parts(&logits, &s.labels.ids, &weights, IGNORE_ID)?;
            Ok((parts, cache))
        };
        let fwd: Vec<_> = if opts.sequential {
            batch.iter().map(forward).collect::<Result<_>>()?
        } else {
            batch.par_iter().map(forward).collect::<Result<_>>()?
        };
        let total_weight: f64 = fwd.iter().map(|(p, _)| p.weight_sum).sum();

        let backward = |(parts, cache): (crate::ops::CrossEntropyParts<f32>, _)| {
            let item = ItemResult {
                weighted_nll: parts.weighted_nll,
                weight_sum: parts.weight_sum,
            };
            let g = parts.normalize(total_weight).grad_logits;
            Ok((item, net_backward(plan, &params, &cache, &g)?))
        };
        let bwd: Vec<(ItemResult, ParamStore<f32>)> = if opts.sequential {
            fwd.into_iter().map(backward).collect::<Result<_>>()?
        } else {
            fwd.into_par_iter().map(backward).collect::<Result<_>>()?
        };

        let mut bwd = bwd.into_iter();
        let (first, mut grads) = bwd.next().expect("batch_size >= 1");
        let mut nll = first.weighted_nll;
        debug_assert!(first.weight_sum >= 0.0);
        for (item, g) in bwd {
            nll += item.weighted_nll;
            grads.accumulate(&g)?;
        }
        let loss = if total_weight > 0.0 {
            nll / total_weight
        } else {
            0.0
        };
        if !loss.is_finite() || grads.iter().any(|(_, t)| !t.all_finite()) {
            return Err(Error::NonFinite {
                iteration: iter + 1,
                loss,
            });
        }

        let lr = cfg.lr_at(iter);
        sgd_step(&mut params, &grads, &mut velocity, cfg, lr)?;
        log.entries.push(LogEntry {
            iteration: iter + 1,
            loss,
            lr,
            elapsed: start.elapsed(),
        });
        if opts.checkpoint_every > 0 && (iter + 1) % opts.checkpoint_every == 0 {
            on_checkpoint(iter + 1, &params)?;
        }
    }
    Ok((params, log))
}
