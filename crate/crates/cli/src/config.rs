//! Flat `key = value` run configuration.
//!
//! Every key is optional. `#` starts a comment. Unknown and repeated keys
//! are errors, so typos do not silently fall back to defaults.

use std::path::{Path, PathBuf};

use sqseg::training::SgdConfig;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DatasetSource {
    /// Generated in memory from the `synth_*` keys.
    Synthetic,
    /// `images/*.ppm` + `labels/*.pgm`.
    Directory(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weighting {
    MedianFrequency,
    Uniform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub synth_count: usize,
    pub synth_height: usize,
    pub synth_width: usize,
    pub synth_noise: f64,
    pub synth_seed: u64,
    /// `None` picks CamVid for 11 classes and generated colors otherwise.
    pub palette: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub num_classes: usize,
    pub sgd: SgdConfig,
    pub checkpoint_every: usize,
    pub class_weighting: Weighting,
    pub sequential: bool,
    /// Checkpoint read by `eval` and `predict`; defaults to
    /// `<out_dir>/checkpoint.sqsg`.
    pub checkpoint: Option<PathBuf>,
    pub gradcheck_seeds: u64,
    pub op_tolerance: f64,
    pub net_tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSource::Synthetic,
            synth_count: 8,
            synth_height: 48,
            synth_width: 64,
            synth_noise: 0.05,
            synth_seed: 7,
            palette: None,
            out_dir: PathBuf::from("out"),
            num_classes: 11,
            sgd: SgdConfig::default(),
            checkpoint_every: 0,
            class_weighting: Weighting::MedianFrequency,
            sequential: false,
            checkpoint: None,
            gradcheck_seeds: 5,
            op_tolerance: 1e-4,
            net_tolerance: 1e-3,
        }
    }
}

/// Keys accepted in a config file, with their defaults, for `--help`
/// style listings and the README.
pub const KEYS: &[(&str, &str)] = &[
    ("dataset", "synthetic"),
    ("synth_count", "8"),
    ("synth_height", "48"),
    ("synth_width", "64"),
    ("synth_noise", "0.05"),
    ("synth_seed", "7"),
    ("palette", "camvid11 for 11 classes, generated otherwise"),
    ("out", "out"),
    ("num_classes", "11"),
    ("seed", "0"),
    ("learning_rate", "0.01"),
    ("momentum", "0.9"),
    ("weight_decay", "0.0005"),
    ("batch_size", "4"),
    ("max_iterations", "44000"),
    ("lr_drop_factor", "0.1"),
    ("lr_drop_every", "20000"),
    ("checkpoint_every", "0"),
    ("class_weighting", "median_frequency"),
    ("sequential", "false"),
    ("checkpoint", "<out>/checkpoint.sqsg"),
    ("gradcheck_seeds", "5"),
    ("op_tolerance", "1e-4"),
    ("net_tolerance", "1e-3"),
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Validation(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::Validation(format!(
            "`{key}`: expected true or false, got `{value}`"
        ))),
    }
}

impl RunConfig {
    /// Parse config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Validation(format!(
                    "config line {}: expected `key = value`, got `{raw}`",
                    n + 1
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key.to_string()) {
                return Err(CliError::Validation(format!(
                    "config line {}: `{key}` set twice",
                    n + 1
                )));
            }
            seen.push(key.to_string());
            cfg.set(key, value, base)
                .map_err(|e| CliError::Validation(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        RunConfig::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), CliError> {
        let path = |v: &str| base.join(v);
        match key {
            "dataset" => {
                self.dataset = if value == "synthetic" {
                    DatasetSource::Synthetic
                } else {
                    DatasetSource::Directory(path(value))
                }
            }
            "synth_count" => self.synth_count = parse(key, value)?,
            "synth_height" => self.synth_height = parse(key, value)?,
            "synth_width" => self.synth_width = parse(key, value)?,
            "synth_noise" => self.synth_noise = parse(key, value)?,
            "synth_seed" => self.synth_seed = parse(key, value)?,
            "palette" => {
                self.palette = (value != "camvid11" && value != "auto").then(|| path(value))
            }
            "out" => self.out_dir = path(value),
            "num_classes" => self.num_classes = parse(key, value)?,
            "seed" => self.sgd.seed = parse(key, value)?,
            "learning_rate" => self.sgd.learning_rate = parse(key, value)?,
            "momentum" => self.sgd.momentum = parse(key, value)?,
            "weight_decay" => self.sgd.weight_decay = parse(key, value)?,
            "batch_size" => self.sgd.batch_size = parse(key, value)?,
            "max_iterations" => self.sgd.max_iterations = parse(key, value)?,
            "lr_drop_factor" => self.sgd.lr_drop_factor = parse(key, value)?,
            "lr_drop_every" => self.sgd.lr_drop_every = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "class_weighting" => {
                self.class_weighting = match value {
                    "median_frequency" => Weighting::MedianFrequency,
                    "none" | "uniform" => Weighting::Uniform,
                    _ => {
                        return Err(CliError::Validation(format!(
                            "`class_weighting` must be median_frequency or none, got `{value}`"
                        )))
                    }
                }
            }
            "sequential" => self.sequential = parse_bool(key, value)?,
            "checkpoint" => self.checkpoint = Some(path(value)),
            "gradcheck_seeds" => self.gradcheck_seeds = parse(key, value)?,
            "op_tolerance" => self.op_tolerance = parse(key, value)?,
            "net_tolerance" => self.net_tolerance = parse(key, value)?,
            _ => return Err(CliError::Validation(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("checkpoint.sqsg"))
    }

    /// Range checks that need no file system access.
    pub fn validate_values(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        if !(2..=255).contains(&self.num_classes) {
            return bad(format!(
                "num_classes {} must be in 2..=255",
                self.num_classes
            ));
        }
        self.sgd.validate()?;
        if self.dataset == DatasetSource::Synthetic {
            if self.synth_count == 0 || self.synth_height == 0 || self.synth_width == 0 {
                return bad("synthetic count and size must be non-zero".into());
            }
            if !(self.synth_noise >= 0.0 && self.synth_noise.is_finite()) {
                return bad(format!("synth_noise {} must be >= 0", self.synth_noise));
            }
        }
        if self.gradcheck_seeds == 0 {
            return bad("gradcheck_seeds must be >= 1".into());
        }
        for (k, v) in [
            ("op_tolerance", self.op_tolerance),
            ("net_tolerance", self.net_tolerance),
        ] {
            if v.is_nan() || v < 0.0 {
                return bad(format!("{k} {v} must be >= 0"));
            }
        }
        Ok(())
    }

    /// Inputs that must exist before a command touches the output
    /// directory.
    pub fn require_dataset(&self) -> Result<(), CliError> {
        if let DatasetSource::Directory(d) = &self.dataset {
            for sub in ["images", "labels"] {
                if !d.join(sub).is_dir() {
                    return Err(CliError::Validation(format!(
                        "dataset directory {} has no `{sub}` subdirectory",
                        d.display()
                    )));
                }
            }
        }
        self.require_palette()
    }

    pub fn require_palette(&self) -> Result<(), CliError> {
        match &self.palette {
            Some(p) if !p.is_file() => Err(CliError::Validation(format!(
                "palette file {} does not exist",
                p.display()
            ))),
            _ => Ok(()),
        }
    }
}
