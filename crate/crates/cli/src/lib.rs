//! `sqseg` command-line driver: architecture summary, gradient checks,
//! training, evaluation and prediction.

pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use sqseg::arch::report::{summarize, REFERENCE_INPUT};
use sqseg::arch::{build_squeeze_segnet, NetworkPlan, ParamStore};
use sqseg::dataio::{
    checkpoint_layout, colorize, load_checkpoint, load_dataset, load_image, save_checkpoint,
    synth_dataset, validate_dataset, Palette, Sample, SynthConfig,
};
use sqseg::gradcheck::{run_gradcheck, FdOptions, GradcheckConfig};
use sqseg::ops::IGNORE_ID;
use sqseg::training::{
    class_statistics, evaluate, median_frequency_weights, predict, train_with, TrainOptions,
};
use sqseg::Rng;

use config::{DatasetSource, RunConfig, Weighting};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration, arguments or input files. Exit code 1.
    #[error("{0}")]
    Validation(String),
    /// Non-finite loss or a failed gradient check. Exit code 2.
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numeric(_) => 2,
        }
    }
}

impl From<sqseg::Error> for CliError {
    fn from(e: sqseg::Error) -> Self {
        match e {
            sqseg::Error::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "sqseg", version, about = "Squeeze-SegNet toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of classes K.
    #[arg(long, global = true)]
    pub classes: Option<usize>,
    #[arg(long, global = true)]
    pub max_iterations: Option<usize>,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long, global = true)]
    pub sequential: bool,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Layer table for a 480x360 input with parameter accounting.
    Summary,
    /// Finite-difference checks of every backward pass.
    Gradcheck {
        /// Tolerance for every check, overriding the configured ones.
        #[arg(long)]
        tolerance: Option<f64>,
        /// Negate one check's backward result (test fixture).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Train and write a checkpoint plus `train_log.csv`.
    Train,
    /// Per-class accuracy of a checkpoint on the configured dataset.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Colorized prediction for one PPM image.
    Predict {
        image: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

impl Cli {
    /// Config file values with command-line overrides applied.
    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.sgd.seed = s;
        }
        if let Some(k) = self.classes {
            cfg.num_classes = k;
        }
        if let Some(n) = self.max_iterations {
            cfg.sgd.max_iterations = n;
        }
        if self.sequential {
            cfg.sequential = true;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        match &self.command {
            Command::Eval {
                checkpoint: Some(c),
            }
            | Command::Predict {
                checkpoint: Some(c),
                ..
            } => {
                cfg.checkpoint = Some(c.clone());
            }
            _ => {}
        }
        cfg.validate_values()?;
        Ok(cfg)
    }
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = cli.run_config()?;
    match &cli.command {
        Command::Summary => cmd_summary(&cfg, out),
        Command::Gradcheck {
            tolerance,
            inject_fault,
        } => cmd_gradcheck(&cfg, *tolerance, inject_fault.clone(), out),
        Command::Train => cmd_train(&cfg, out),
        Command::Eval { .. } => cmd_eval(&cfg, out),
        Command::Predict { image, .. } => cmd_predict(&cfg, image, out),
    }
}

fn plan_for(cfg: &RunConfig) -> Result<NetworkPlan, CliError> {
    Ok(build_squeeze_segnet(cfg.num_classes)?)
}

pub fn resolve_palette(cfg: &RunConfig) -> Result<Palette, CliError> {
    let palette = match &cfg.palette {
        Some(p) => Palette::load(p)?,
        None if cfg.num_classes == 11 => Palette::camvid11(),
        None => Palette::generated(cfg.num_classes)?,
    };
    if !palette.covers(cfg.num_classes) {
        return Err(CliError::Validation(format!(
            "palette does not name every class id below {}",
            cfg.num_classes
        )));
    }
    Ok(palette)
}

fn class_names(palette: &Palette, k: usize) -> Vec<String> {
    (0..k)
        .map(|i| palette.name(i as u8).unwrap_or("?").to_string())
        .collect()
}

pub fn load_samples(cfg: &RunConfig) -> Result<Vec<Sample>, CliError> {
    let samples = match &cfg.dataset {
        DatasetSource::Synthetic => synth_dataset(&SynthConfig {
            seed: cfg.synth_seed,
            count: cfg.synth_count,
            height: cfg.synth_height,
            width: cfg.synth_width,
            num_classes: cfg.num_classes,
            noise: cfg.synth_noise,
            ..SynthConfig::default()
        })?,
        DatasetSource::Directory(d) => load_dataset(d)?,
    };
    validate_dataset(&samples, cfg.num_classes)?;
    Ok(samples)
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "{what} {} does not exist",
            path.display()
        )))
    }
}

fn load_params(cfg: &RunConfig, plan: &NetworkPlan) -> Result<ParamStore<f32>, CliError> {
    let path = cfg.checkpoint_path();
    require_file(&path, "checkpoint")?;
    let params = load_checkpoint(&path)?;
    params.check_plan(plan).map_err(|e| {
        CliError::Validation(format!(
            "checkpoint {} does not fit a {}-class network: {e}",
            path.display(),
            cfg.num_classes
        ))
    })?;
    Ok(params)
}

fn create_out_dir(cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| {
        CliError::Validation(format!(
            "cannot create output directory {}: {e}",
            cfg.out_dir.display()
        ))
    })
}

pub fn cmd_summary(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let plan = plan_for(cfg)?;
    let summary = summarize(&plan, REFERENCE_INPUT)?;
    writeln!(out, "{summary}")?;
    Ok(())
}

pub fn cmd_gradcheck(
    cfg: &RunConfig,
    tolerance: Option<f64>,
    fault: Option<String>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    if let Some(t) = tolerance {
        if t.is_nan() || t < 0.0 {
            return Err(CliError::Validation(format!("tolerance {t} must be >= 0")));
        }
    }
    let gc = GradcheckConfig {
        seed: cfg.sgd.seed,
        seeds: cfg.gradcheck_seeds,
        op_tolerance: tolerance.unwrap_or(cfg.op_tolerance),
        net_tolerance: tolerance.unwrap_or(cfg.net_tolerance),
        fd: FdOptions::default(),
        fault,
    };
    let report = run_gradcheck(&gc)?;
    writeln!(out, "{report}")?;
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().map(|r| r.name.as_str()).collect();
        Err(CliError::Numeric(format!(
            "gradient check failed: {}",
            names.join(", ")
        )))
    }
}

pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    cfg.require_dataset()?;
    let plan = plan_for(cfg)?;
    let palette = resolve_palette(cfg)?;
    let samples = load_samples(cfg)?;
    let k = cfg.num_classes;

    let weights = match cfg.class_weighting {
        Weighting::MedianFrequency => {
            let (pixels, image_pixels) = class_statistics(&samples, k)?;
            median_frequency_weights(&pixels, &image_pixels)?
        }
        Weighting::Uniform => vec![1.0; k],
    };
    create_out_dir(cfg)?;

    writeln!(out, "class weights ({} samples):", samples.len())?;
    for (i, (w, name)) in weights.iter().zip(class_names(&palette, k)).enumerate() {
        writeln!(out, "  {i:>3} {name:<12} {w:.6}")?;
    }

    let params = ParamStore::init(&plan, &mut Rng::new(cfg.sgd.seed))?;
    let opts = TrainOptions {
        class_weights: Some(weights.iter().map(|&w| w as f32).collect()),
        sequential: cfg.sequential,
        checkpoint_every: cfg.checkpoint_every,
    };
    let out_dir = cfg.out_dir.clone();
    let (params, log) = train_with(&plan, params, &samples, &cfg.sgd, &opts, |iter, p| {
        save_checkpoint(p, &out_dir.join(format!("checkpoint_{iter:06}.sqsg")))
    })?;

    let ckpt = cfg.out_dir.join("checkpoint.sqsg");
    save_checkpoint(&params, &ckpt)?;
    let log_path = cfg.out_dir.join("train_log.csv");
    std::fs::write(&log_path, log.to_csv())?;

    let step = (log.entries.len() / 10).max(1);
    for e in log
        .entries
        .iter()
        .filter(|e| e.iteration % step == 0 || e.iteration == 1)
    {
        writeln!(
            out,
            "iter {:>6} loss {:.6} lr {}",
            e.iteration, e.loss, e.lr
        )?;
    }
    let layout = checkpoint_layout(&params);
    writeln!(
        out,
        "wrote {} ({} bytes, payload {}) and {} ({} rows)",
        ckpt.display(),
        layout.total_bytes(),
        layout.payload_bytes,
        log_path.display(),
        log.entries.len()
    )?;
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    cfg.require_dataset()?;
    let plan = plan_for(cfg)?;
    let palette = resolve_palette(cfg)?;
    let params = load_params(cfg, &plan)?;
    let samples = load_samples(cfg)?;
    let metrics = evaluate(&plan, &params, &samples, IGNORE_ID)?;
    let names = class_names(&palette, cfg.num_classes);

    create_out_dir(cfg)?;
    let table = cfg.out_dir.join("metrics.tsv");
    std::fs::write(&table, metrics.to_text_table(&names))?;
    write!(out, "{}", metrics.report(&names))?;
    writeln!(out, "wrote {}", table.display())?;
    Ok(())
}

pub fn cmd_predict(cfg: &RunConfig, image: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    require_file(image, "image")?;
    cfg.require_palette()?;
    let plan = plan_for(cfg)?;
    let palette = resolve_palette(cfg)?;
    let params = load_params(cfg, &plan)?;
    let x = load_image(image)?;
    let labels = predict(&plan, &params, &x)?;
    let ppm = colorize(&labels, &palette)?;

    create_out_dir(cfg)?;
    let stem = image
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image");
    let path = cfg.out_dir.join(format!("{stem}_prediction.ppm"));
    std::fs::write(&path, ppm)?;
    writeln!(
        out,
        "wrote {} ({}x{})",
        path.display(),
        labels.width,
        labels.height
    )?;
    Ok(())
}
