use crate::dataio::Sample;
use crate::error::{Error, Result};
use crate::ops::IGNORE_ID;

/// Per-class pixel totals and, for each class, the number of labelled
/// pixels in images that contain it. Ignored pixels count toward neither.
pub fn class_statistics(dataset: &[Sample], k: usize) -> Result<(Vec<u64>, Vec<u64>)> {
    let mut pixels = vec![0u64; k];
    let mut image_pixels = vec![0u64; k];
    for s in dataset {
        let mut here = vec![0u64; k];
        for &id in &s.labels.ids {
            if id == IGNORE_ID {
                continue;
            }
            let slot = here.get_mut(id as usize).ok_or_else(|| {
                Error::Data(format!("sample `{}` has label {id} outside 0..{k}", s.name))
            })?;
            *slot += 1;
        }
        let labelled: u64 = here.iter().sum();
        for c in 0..k {
            if here[c] > 0 {
                pixels[c] += here[c];
                image_pixels[c] += labelled;
            }
        }
    }
    Ok((pixels, image_pixels))
}

/// `weight[k] = median(freq) / freq[k]` with
/// `freq[k] = pixel_counts[k] / image_counts[k]`; the median runs over
/// classes that occur (mean of the middle pair for an even count) and
/// absent classes get weight 0.
pub fn median_frequency_weights(pixel_counts: &[u64], image_counts: &[u64]) -> Result<Vec<f64>> {
    let k = pixel_counts.len();
    if k < 2 {
        return Err(Error::Data(format!(
            "class weighting needs at least 2 classes, got {k}"
        )));
    }
    if image_counts.len() != k {
        return Err(Error::shape(format!(
            "{k} pixel counts but {} image counts",
            image_counts.len()
        )));
    }
    let freq: Vec<Option<f64>> = pixel_counts
        .iter()
        .zip(image_counts)
        .map(|(&p, &n)| match (p, n) {
            (0, _) => Ok(None),
            (p, n) if n < p => Err(Error::Data(format!(
                "class with {p} pixels occurs in images holding only {n}"
            ))),
            (p, n) => Ok(Some(p as f64 / n as f64)),
        })
        .collect::<Result<_>>()?;
    let mut present: Vec<f64> = freq.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::Data("every class is empty".into()));
    }
    present.sort_by(f64::total_cmp);
    let m = present.len();
    let median = if m % 2 == 1 {
        present[m / 2]
    } else {
        0.5 * (present[m / 2 - 1] + present[m / 2])
    };
    Ok(freq.iter().map(|f| f.map_or(0.0, |f| median / f)).collect())
}
