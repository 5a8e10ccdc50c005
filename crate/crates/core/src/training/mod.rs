//! Mini-batch SGD with momentum, class balancing and segmentation metrics.

mod metrics;
mod sgd;
mod train;
mod weights;

pub use metrics::{accumulate_confusion, argmax_labels, evaluate, predict, Metrics};
pub use sgd::{sgd_step, SgdConfig};
pub use train::{train, train_with, LogEntry, TrainLog, TrainOptions};
pub use weights::{class_statistics, median_frequency_weights};
