//! Class-weighted softmax cross-entropy with an ignore label.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Label value excluded from loss and metrics.
pub const IGNORE_ID: u8 = 255;

#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    /// Weighted mean of `-log p(label)` over counted pixels.
    pub loss: f64,
    pub grad_logits: Tensor<T>,
    pub counted_pixels: usize,
}

/// Unnormalized pieces of the loss, so that several batch items evaluated
/// separately can share one normalizer.
#[derive(Clone, Debug)]
pub struct CrossEntropyParts<T> {
    /// `Σ weight[label] · (−log softmax[label])` over counted pixels.
    pub weighted_nll: f64,
    /// `Σ weight[label]` over counted pixels.
    pub weight_sum: f64,
    pub counted_pixels: usize,
    /// Gradient of `weighted_nll` with respect to the logits.
    pub grad: Tensor<T>,
}

impl<T: Scalar> CrossEntropyParts<T> {
    /// Divide by `total_weight`. A zero normalizer yields zero loss and gradient.
    pub fn normalize(self, total_weight: f64) -> LossOutput<T> {
        let mut grad = self.grad;
        if total_weight > 0.0 {
            grad.scale(T::of(1.0 / total_weight));
            LossOutput {
                loss: self.weighted_nll / total_weight,
                grad_logits: grad,
                counted_pixels: self.counted_pixels,
            }
        } else {
            LossOutput {
                loss: 0.0,
                grad_logits: grad.zeros_like(),
                counted_pixels: self.counted_pixels,
            }
        }
    }
}

/// Per-pixel softmax over the channel axis followed by weighted negative
/// log-likelihood; see [`softmax_cross_entropy`].
pub fn cross_entropy_parts<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[u8],
    class_weights: &[T],
    ignore_id: u8,
) -> Result<CrossEntropyParts<T>> {
    let d = logits.dims();
    let k = d.c;
    let plane = d.plane();
    if labels.len() != d.n * plane {
        return Err(Error::shape(format!(
            "{} labels for logits {d}",
            labels.len()
        )));
    }
    if class_weights.len() != k {
        return Err(Error::shape(format!(
            "{} class weights for {k} classes",
            class_weights.len()
        )));
    }
    let mut grad = logits.zeros_like();
    let mut weighted_nll = 0.0f64;
    let mut weight_sum = 0.0f64;
    let mut counted = 0;
    let mut probs = vec![0.0f64; k];
    for n in 0..d.n {
        let x = logits.item(n);
        let g = grad.item_mut(n);
        for px in 0..plane {
            let label = labels[n * plane + px];
            if label == ignore_id {
                continue;
            }
            let label = label as usize;
            if label >= k {
                return Err(Error::Data(format!(
                    "label {label} at pixel {px} of item {n} is outside 0..{k} and not the ignore id {ignore_id}"
                )));
            }
            counted += 1;
            let weight = class_weights[label].as_f64();
            if weight == 0.0 {
                continue;
            }
            let max = (0..k)
                .map(|c| x[c * plane + px].as_f64())
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (c, p) in probs.iter_mut().enumerate() {
                *p = (x[c * plane + px].as_f64() - max).exp();
                z += *p;
            }
            let log_z = z.ln();
            weighted_nll += weight * (log_z - (x[label * plane + px].as_f64() - max));
            weight_sum += weight;
            for (c, p) in probs.iter().enumerate() {
                let onehot = if c == label { 1.0 } else { 0.0 };
                g[c * plane + px] = T::of(weight * (p / z - onehot));
            }
        }
    }
    Ok(CrossEntropyParts {
        weighted_nll,
        weight_sum,
        counted_pixels: counted,
        grad,
    })
}

/// Mean class-weighted softmax cross-entropy.
///
/// `labels` holds one class id per pixel, batch-major then row-major.
/// The loss is normalized by the sum of the weights actually applied, so
/// scaling all weights by a common constant leaves it unchanged. Pixels
/// labelled `ignore_id` contribute nothing and get a zero gradient.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[u8],
    class_weights: &[T],
    ignore_id: u8,
) -> Result<LossOutput<T>> {
    let parts = cross_entropy_parts(logits, labels, class_weights, ignore_id)?;
    let total = parts.weight_sum;
    Ok(parts.normalize(total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::he_init;

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor::<f64>::new((1, 11, 2, 3), 0.3).unwrap();
        let labels = [0, 1, 2, 3, 4, 10];
        let out = softmax_cross_entropy(&logits, &labels, &[1.0; 11], IGNORE_ID).unwrap();
        assert!((out.loss - 11f64.ln()).abs() < 1e-12);
        assert!((out.loss - 2.397895).abs() < 1e-6);
        assert_eq!(out.counted_pixels, 6);
    }

    #[test]
    fn saturated_margin() {
        let mut logits = Tensor::<f64>::zeros((1, 3, 1, 1)).unwrap();
        logits.set(0, 1, 0, 0, 20.0);
        let out = softmax_cross_entropy(&logits, &[1], &[1.0; 3], IGNORE_ID).unwrap();
        assert!(out.loss >= 0.0 && out.loss < 1e-8, "{}", out.loss);
    }

    #[test]
    fn ignored_pixels() {
        let logits: Tensor<f64> = he_init((1, 3, 1, 4), 1, &mut Rng::new(1)).unwrap();
        let out =
            softmax_cross_entropy(&logits, &[0, IGNORE_ID, 2, IGNORE_ID], &[1.0; 3], IGNORE_ID)
                .unwrap();
        assert_eq!(out.counted_pixels, 2);
        for c in 0..3 {
            assert_eq!(out.grad_logits.get(0, c, 0, 1), 0.0);
            assert_eq!(out.grad_logits.get(0, c, 0, 3), 0.0);
        }

        let all = softmax_cross_entropy(&logits, &[IGNORE_ID; 4], &[1.0; 3], IGNORE_ID).unwrap();
        assert_eq!(all.loss, 0.0);
        assert_eq!(all.counted_pixels, 0);
        assert_eq!(all.grad_logits.max_abs(), 0.0);
    }

    #[test]
    fn rejects_out_of_range_label() {
        let logits = Tensor::<f32>::zeros((1, 3, 1, 2)).unwrap();
        assert!(matches!(
            softmax_cross_entropy(&logits, &[0, 3], &[1.0; 3], IGNORE_ID),
            Err(Error::Data(_))
        ));
        assert!(softmax_cross_entropy(&logits, &[0], &[1.0; 3], IGNORE_ID).is_err());
        assert!(softmax_cross_entropy(&logits, &[0, 1], &[1.0; 2], IGNORE_ID).is_err());
    }

    #[test]
    fn per_pixel_gradient_sums_to_zero() {
        let logits: Tensor<f64> = he_init((2, 5, 3, 3), 1, &mut Rng::new(4)).unwrap();
        let labels: Vec<u8> = (0..18).map(|i| (i % 5) as u8).collect();
        let weights = [0.5, 1.0, 2.0, 1.5, 0.25];
        let out = softmax_cross_entropy(&logits, &labels, &weights, IGNORE_ID).unwrap();
        for n in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    let s: f64 = (0..5).map(|c| out.grad_logits.get(n, c, i, j)).sum();
                    assert!(s.abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn invariant_under_common_weight_scaling() {
        let logits: Tensor<f64> = he_init((1, 4, 3, 5), 1, &mut Rng::new(8)).unwrap();
        let labels: Vec<u8> = (0..15).map(|i| (i * 7 % 4) as u8).collect();
        let w = [0.3, 1.2, 0.7, 2.0];
        let w3: Vec<f64> = w.iter().map(|v| v * 3.0).collect();
        let a = softmax_cross_entropy(&logits, &labels, &w, IGNORE_ID).unwrap();
        let b = softmax_cross_entropy(&logits, &labels, &w3, IGNORE_ID).unwrap();
        assert!((a.loss - b.loss).abs() <= 1e-6 * a.loss.abs());
        for (x, y) in a.grad_logits.data().iter().zip(b.grad_logits.data()) {
            assert!((x - y).abs() <= 1e-6 * x.abs().max(1e-12));
        }
    }
}
