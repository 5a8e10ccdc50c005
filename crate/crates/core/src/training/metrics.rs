use std::fmt;

use rayon::prelude::*;

use crate::arch::{net_infer, NetworkPlan, ParamStore};
use crate::dataio::{LabelMap, Sample};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Confusion-derived segmentation accuracy. Rows are truth, columns are
/// predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub confusion: Vec<Vec<u64>>,
    /// `None` for classes absent from the ground truth.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub class_average_accuracy: f64,
    pub global_accuracy: f64,
}

impl Metrics {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self> {
        let k = confusion.len();
        if k == 0 || confusion.iter().any(|r| r.len() != k) {
            return Err(Error::shape(
                "confusion matrix must be square and non-empty",
            ));
        }
        let per_class: Vec<Option<f64>> = confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let total: u64 = row.iter().sum();
                (total > 0).then(|| row[i] as f64 / total as f64)
            })
            .collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let class_average = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        let total: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..k).map(|i| confusion[i][i]).sum();
        Ok(Metrics {
            per_class_accuracy: per_class,
            class_average_accuracy: class_average,
            global_accuracy: if total > 0 {
                correct as f64 / total as f64
            } else {
                0.0
            },
            confusion,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.confusion.len()
    }

    /// Tab-separated copy: one `class accuracy pixels` row per class, then
    /// the averages, then the confusion matrix.
    pub fn to_text_table(&self, names: &[String]) -> String {
        let mut out = String::from("class\taccuracy\tpixels\n");
        for (i, acc) in self.per_class_accuracy.iter().enumerate() {
            let pixels: u64 = self.confusion[i].iter().sum();
            let acc = acc.map_or_else(|| "NA".to_string(), |a| format!("{a:.6}"));
            out += &format!("{}\t{acc}\t{pixels}\n", class_name(names, i));
        }
        out += &format!("class_average\t{:.6}\t\n", self.class_average_accuracy);
        out += &format!("global\t{:.6}\t\n", self.global_accuracy);
        out += "\nconfusion (rows truth, columns prediction)\n";
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            out += &cells.join("\t");
            out.push('\n');
        }
        out
    }

    /// Classes as columns, a single row of accuracies, then the class
    /// average, laid out like the usual per-class accuracy table.
    pub fn report(&self, names: &[String]) -> String {
        let k = self.num_classes();
        let heads: Vec<String> = (0..k).map(|i| class_name(names, i)).collect();
        let cells: Vec<String> = self
            .per_class_accuracy
            .iter()
            .map(|a| a.map_or_else(|| "-".to_string(), |a| format!("{a:.3}")))
            .collect();
        let widths: Vec<usize> = heads
            .iter()
            .zip(&cells)
            .map(|(h, c)| h.len().max(c.len()))
            .collect();
        let line = |items: &[String], last: &str| {
            let mut s: String = items
                .iter()
                .zip(&widths)
                .map(|(t, w)| format!("{t:<w$} "))
                .collect();
            s += last;
            s.trim_end().to_string()
        };
        format!(
            "{}\n{}\nglobal accuracy {:.3}\n",
            line(&heads, "Average Accuracy"),
            line(&cells, &format!("{:>16.3}", self.class_average_accuracy)),
            self.global_accuracy
        )
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.report(&[]))
    }
}

fn class_name(names: &[String], i: usize) -> String {
    names.get(i).cloned().unwrap_or_else(|| format!("class{i}"))
}

/// Per-pixel argmax over channels; ties go to the lowest class.
pub fn argmax_labels<T: Scalar>(logits: &Tensor<T>) -> Result<LabelMap> {
    let d = logits.dims();
    if d.n != 1 || d.c > 256 {
        return Err(Error::shape(format!(
            "argmax expects one item with at most 256 classes, got {d}"
        )));
    }
    let plane = d.plane();
    let x = logits.data();
    let mut ids = vec![0u8; plane];
    let mut best: Vec<T> = x[..plane].to_vec();
    for c in 1..d.c {
        for (px, v) in x[c * plane..(c + 1) * plane].iter().enumerate() {
            if *v > best[px] {
                best[px] = *v;
                ids[px] = c as u8;
            }
        }
    }
    LabelMap::new(d.h, d.w, ids)
}

/// Add `(truth, prediction)` pairs to `confusion`, skipping `ignore_id`.
pub fn accumulate_confusion(
    confusion: &mut [Vec<u64>],
    truth: &LabelMap,
    predicted: &LabelMap,
    ignore_id: u8,
) -> Result<()> {
    if truth.ids.len() != predicted.ids.len() {
        return Err(Error::shape(format!(
            "{} labels vs {} predictions",
            truth.ids.len(),
            predicted.ids.len()
        )));
    }
    let k = confusion.len();
    for (&t, &p) in truth.ids.iter().zip(&predicted.ids) {
        if t == ignore_id {
            continue;
        }
        let (t, p) = (t as usize, p as usize);
        if t >= k || p >= k {
            return Err(Error::Data(format!("class id {} outside 0..{k}", t.max(p))));
        }
        confusion[t][p] += 1;
    }
    Ok(())
}

/// Eval-mode predictions of one sample, cropped to the label grid when
/// the network output is larger.
pub fn predict(
    plan: &NetworkPlan,
    params: &ParamStore<f32>,
    image: &Tensor<f32>,
) -> Result<LabelMap> {
    let d = image.dims();
    let logits = net_infer(plan, params, image)?;
    let full = argmax_labels(&logits)?;
    crop_labels(&full, d.h, d.w)
}

fn crop_labels(m: &LabelMap, h: usize, w: usize) -> Result<LabelMap> {
    if m.height < h || m.width < w {
        return Err(Error::shape(format!(
            "network output {}x{} is smaller than the {w}x{h} input",
            m.width, m.height
        )));
    }
    let ids = (0..h)
        .flat_map(|y| m.ids[y * m.width..y * m.width + w].iter().copied())
        .collect();
    LabelMap::new(h, w, ids)
}

/// Accuracy of eval-mode predictions over `dataset`.
pub fn evaluate(
    plan: &NetworkPlan,
    params: &ParamStore<f32>,
    dataset: &[Sample],
    ignore_id: u8,
) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    let k = plan.num_classes;
    let partial = dataset
        .par_iter()
        .map(|s| {
            let mut c = vec![vec![0u64; k]; k];
            accumulate_confusion(
                &mut c,
                &s.labels,
                &predict(plan, params, &s.image)?,
                ignore_id,
            )?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut confusion = vec![vec![0u64; k]; k];
    for c in partial {
        for (row, add) in confusion.iter_mut().zip(c) {
            for (a, b) in row.iter_mut().zip(add) {
                *a += b;
            }
        }
    }
    Metrics::from_confusion(confusion)
}
