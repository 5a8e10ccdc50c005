use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::palette::Palette;
use super::{LabelMap, Sample};

/// Seeded rectangles over background class 0.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    /// Standard deviation of the additive Gaussian pixel noise.
    pub noise: f64,
    /// Random rectangles per sample in addition to the round-robin one.
    pub extra_rects: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            count: 8,
            height: 48,
            width: 64,
            num_classes: 11,
            noise: 0.05,
            extra_rects: 2,
        }
    }
}

fn fill_rect(labels: &mut LabelMap, class: u8, rng: &mut Rng) {
    let (h, w) = (labels.height, labels.width);
    let rh = rng.range_inclusive((h / 5).max(1), (h / 2).max(1));
    let rw = rng.range_inclusive((w / 5).max(1), (w / 2).max(1));
    let top = rng.range_inclusive(0, h - rh);
    let left = rng.range_inclusive(0, w - rw);
    for y in top..top + rh {
        labels.ids[y * w + left..y * w + left + rw].fill(class);
    }
}

/// Sample `i` always gets a rectangle of class `1 + i mod (K-1)`, drawn
/// last so it stays visible; with `count >= K - 1` every class appears.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    let k = cfg.num_classes;
    if !(2..=255).contains(&k) {
        return Err(Error::Config(format!(
            "synthetic data needs 2..=255 classes, got {k}"
        )));
    }
    if cfg.height == 0 || cfg.width == 0 {
        return Err(Error::Config(
            "synthetic image size must be non-zero".into(),
        ));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(Error::Config(format!(
            "noise {} must be finite and >= 0",
            cfg.noise
        )));
    }
    let colors: Vec<[f64; 3]> = Palette::generated(k)?
        .classes()
        .map(|e| e.rgb.map(|v| f64::from(v) / 255.0))
        .collect();
    let mut rng = Rng::new(cfg.seed);
    let (h, w) = (cfg.height, cfg.width);
    let mut out = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let mut labels = LabelMap::new(h, w, vec![0; h * w])?;
        for _ in 0..cfg.extra_rects {
            let class = 1 + rng.below(k as u64 - 1) as u8;
            fill_rect(&mut labels, class, &mut rng);
        }
        fill_rect(&mut labels, (1 + i % (k - 1)) as u8, &mut rng);

        let plane = h * w;
        let mut data = vec![0.0f32; 3 * plane];
        for c in 0..3 {
            for (px, &id) in labels.ids.iter().enumerate() {
                let noise = if cfg.noise > 0.0 {
                    cfg.noise * rng.normal()
                } else {
                    0.0
                };
                data[c * plane + px] = (colors[id as usize][c] + noise).clamp(0.0, 1.0) as f32;
            }
        }
        out.push(Sample {
            image: Tensor::from_vec((1, 3, h, w), data)?,
            labels,
            name: format!("synth_{i:03}"),
        });
    }
    Ok(out)
}
