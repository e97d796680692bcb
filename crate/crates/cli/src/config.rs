//! Run configuration: TOML file loading, flag overrides, and the
//! defaults < file < flags precedence chain. The fully resolved spec is
//! echoed into every output directory so a run is reproducible from its
//! artifacts alone.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use conformal_kan::checkpoint::CheckpointError;
use conformal_kan::ensemble::EnsembleError;
use conformal_kan::experiments::{
    experiment_model_kinds, ExperimentError, ExperimentId, ExperimentSpec, ModelKind,
};
use conformal_kan::mfkan::MfkanError;
use conformal_kan::train::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl CliError {
    /// 1 for numeric failures (divergence), 2 for configuration/I-O errors.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Experiment(e) if is_divergence(e) => 1,
            _ => 2,
        }
    }
}

fn is_divergence(e: &ExperimentError) -> bool {
    match e {
        ExperimentError::Train(TrainError::Diverged { .. }) => true,
        ExperimentError::Mfkan(MfkanError::Train(TrainError::Diverged { .. })) => true,
        ExperimentError::Ensemble(EnsembleError::Member { source, .. }) => {
            matches!(source, TrainError::Diverged { .. })
        }
        _ => false,
    }
}

/// Flags shared by every subcommand; each overrides the corresponding
/// config-file entry, which in turn overrides the experiment defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run configuration file
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Base seed for member initialization
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for ensemble training
    #[arg(long)]
    pub threads: Option<usize>,
    /// Miscoverage level of the prediction intervals
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Number of ensemble members
    #[arg(long)]
    pub ensemble_size: Option<usize>,
    /// Per-dimension subdomain counts, e.g. "10" or "2x2"
    #[arg(long)]
    pub subdomains: Option<String>,
    /// Subdomain overlap fraction
    #[arg(long)]
    pub overlap: Option<f64>,
    /// Training epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Learning rate
    #[arg(long)]
    pub lr: Option<f64>,
}

/// The config-file schema; every field optional, unknown keys rejected.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub experiment: Option<String>,
    pub model: Option<String>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub verbose: Option<bool>,
    pub seed: Option<u64>,
    pub data_seed: Option<u64>,
    pub lf_seed: Option<u64>,
    pub alpha: Option<f64>,
    pub ensemble_size: Option<usize>,
    pub subdomains: Option<Vec<usize>>,
    pub overlap: Option<f64>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub kan_widths: Option<Vec<usize>>,
    pub member_widths: Option<Vec<usize>>,
    pub intervals: Option<usize>,
    pub degree: Option<usize>,
    pub train_size: Option<usize>,
    pub cal_size: Option<usize>,
    pub test_size: Option<usize>,
    pub lf_train_size: Option<usize>,
    pub lf_widths: Option<Vec<usize>>,
    pub lf_epochs: Option<usize>,
    pub lambda_alpha: Option<f64>,
    pub exponent_n: Option<u32>,
    pub linear_weight_w: Option<f64>,
    pub collocation_size: Option<usize>,
    pub ic_size: Option<usize>,
    pub bc_size: Option<usize>,
    pub lambda_res: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
    }
}

/// A fully resolved run: the spec plus where and how to execute it.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub spec: ExperimentSpec,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub verbose: bool,
}

pub fn parse_subdomains(text: &str) -> Result<Vec<usize>, CliError> {
    let counts: Result<Vec<usize>, _> = text
        .split(|c| c == 'x' || c == ',')
        .map(|part| part.trim().parse::<usize>())
        .collect();
    match counts {
        Ok(v) if !v.is_empty() && v.iter().all(|&c| c > 0) => Ok(v),
        _ => Err(CliError::Config(format!(
            "cannot parse subdomain counts from {text:?} (expected e.g. \"10\" or \"2x2\")"
        ))),
    }
}

pub fn parse_grid(text: &str) -> Result<Vec<usize>, CliError> {
    let grid: Result<Vec<usize>, _> = text
        .split(',')
        .map(|part| part.trim().parse::<usize>())
        .collect();
    grid.map_err(|_| {
        CliError::Config(format!(
            "cannot parse grid from {text:?} (expected e.g. \"3,6,10\")"
        ))
    })
}

/// Builds the spec: per-experiment defaults, then config-file entries,
/// then command-line flags.
pub fn resolve(
    experiment_arg: Option<&str>,
    model_arg: Option<&str>,
    flags: &Overrides,
) -> Result<ResolvedRun, CliError> {
    let file = match &flags.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };

    let id_text = experiment_arg
        .map(str::to_string)
        .or_else(|| file.experiment.clone())
        .ok_or_else(|| {
            CliError::Config("an experiment id is required (argument or config file)".into())
        })?;
    let id: ExperimentId = id_text.parse()?;

    let model: ModelKind = match model_arg.map(str::to_string).or_else(|| file.model.clone()) {
        Some(text) => text.parse()?,
        None => experiment_model_kinds(id)[0],
    };

    let mut spec = ExperimentSpec::defaults(id, model);

    // config file layer
    macro_rules! from_file {
        ($($field:ident),* $(,)?) => {
            $(if let Some(v) = file.$field.clone() { spec.$field = v; })*
        };
    }
    from_file!(
        ensemble_size,
        subdomains,
        kan_widths,
        member_widths,
        intervals,
        degree,
        train_size,
        cal_size,
        test_size,
        data_seed,
        lf_seed,
        epochs,
        lf_train_size,
        lf_widths,
        lf_epochs,
        lambda_alpha,
        exponent_n,
        linear_weight_w,
        collocation_size,
        ic_size,
        bc_size,
        lambda_res,
    );
    if let Some(v) = file.seed {
        spec.base_seed = v;
    }
    if let Some(v) = file.alpha {
        spec.miscoverage_alpha = v;
    }
    if let Some(v) = file.overlap {
        spec.overlap_fraction = v;
    }
    if let Some(v) = file.lr {
        spec.learning_rate = v;
    }

    // flag layer
    if let Some(v) = flags.seed {
        spec.base_seed = v;
    }
    if let Some(v) = flags.alpha {
        spec.miscoverage_alpha = v;
    }
    if let Some(v) = flags.ensemble_size {
        spec.ensemble_size = v;
    }
    if let Some(text) = &flags.subdomains {
        spec.subdomains = parse_subdomains(text)?;
    }
    if let Some(v) = flags.overlap {
        spec.overlap_fraction = v;
    }
    if let Some(v) = flags.epochs {
        spec.epochs = v;
    }
    if let Some(v) = flags.lr {
        spec.learning_rate = v;
    }

    let threads = flags.threads.or(file.threads);
    if threads == Some(0) {
        return Err(CliError::Config("thread count must be at least 1".into()));
    }

    let out = flags
        .out
        .clone()
        .or(file.out)
        .unwrap_or_else(|| PathBuf::from("out"));

    Ok(ResolvedRun {
        spec,
        out,
        threads,
        verbose: file.verbose.unwrap_or(false),
    })
}

/// Applies the override layers to a spec loaded from a checkpoint (used by
/// `calibrate` and `evaluate`, where the architecture is already fixed).
pub fn apply_runtime_overrides(
    spec: &mut ExperimentSpec,
    flags: &Overrides,
) -> Result<(PathBuf, Option<usize>, bool), CliError> {
    let file = match &flags.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    if let Some(v) = file.alpha {
        spec.miscoverage_alpha = v;
    }
    if let Some(v) = file.data_seed {
        spec.data_seed = v;
    }
    if let Some(v) = file.cal_size {
        spec.cal_size = v;
    }
    if let Some(v) = file.test_size {
        spec.test_size = v;
    }
    if let Some(v) = flags.alpha {
        spec.miscoverage_alpha = v;
    }
    let threads = flags.threads.or(file.threads);
    if threads == Some(0) {
        return Err(CliError::Config("thread count must be at least 1".into()));
    }
    let out = flags
        .out
        .clone()
        .or(file.out)
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((out, threads, file.verbose.unwrap_or(false)))
}

/// Serialized echo of a resolved run, written next to its artifacts.
#[derive(Serialize)]
struct ConfigEcho<'a> {
    run: RunMeta<'a>,
    spec: &'a ExperimentSpec,
}

#[derive(Serialize)]
struct RunMeta<'a> {
    out: &'a Path,
    #[serde(skip_serializing_if = "Option::is_none")]
    threads: Option<usize>,
    verbose: bool,
}

pub fn echo_config(run: &ResolvedRun, file_name: &str) -> Result<(), CliError> {
    let echo = ConfigEcho {
        run: RunMeta {
            out: &run.out,
            threads: run.threads,
            verbose: run.verbose,
        },
        spec: &run.spec,
    };
    let text = toml::to_string_pretty(&echo)
        .map_err(|e| CliError::Config(format!("cannot serialize config echo: {e}")))?;
    fs::write(run.out.join(file_name), text)?;
    Ok(())
}
