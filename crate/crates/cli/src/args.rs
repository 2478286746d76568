use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use qevo::io::MlpArch;
use qevo::Metric;

use crate::commands::Step;
use crate::config::RunConfig;
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(
    name = "qevo",
    version,
    about = "Fixed-point quantization with evolutionary fine-tuning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Nearest-neighbour quantize every weighted layer.
    Quantize(RunArgs),
    /// Rank layers by the metric left after quantizing each one alone.
    Sensitivity(RunArgs),
    /// Evolve the quantized weights layer by layer.
    Finetune(RunArgs),
    /// Score a model on a dataset.
    Eval(RunArgs),
    /// MAC, memory and cycle-cost report.
    Complexity(RunArgs),
    /// Generate a random teacher model and its self-labelled dataset.
    Fixture(RunArgs),
    /// Rerun the step recorded in a run manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

impl Command {
    pub fn step(&self) -> Option<(Step, &RunArgs)> {
        Some(match self {
            Command::Quantize(a) => (Step::Quantize, a),
            Command::Sensitivity(a) => (Step::Sensitivity, a),
            Command::Finetune(a) => (Step::Finetune, a),
            Command::Eval(a) => (Step::Eval, a),
            Command::Complexity(a) => (Step::Complexity, a),
            Command::Fixture(a) => (Step::Fixture, a),
            Command::Replay { .. } => return None,
        })
    }
}

/// Flags mirror the fields of [`RunConfig`] and override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML or JSON config file (a run manifest also works).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub float_model: Option<PathBuf>,
    #[arg(long)]
    pub schemes: Option<PathBuf>,
    #[arg(long)]
    pub ranking: Option<PathBuf>,
    /// A CSV file, or IDX images then IDX labels.
    #[arg(long, num_args = 1..=2)]
    pub data: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub label_column: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub feature_columns: Option<Vec<String>>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub metric: Option<Metric>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, alias = "bits")]
    pub total_bits: Option<u32>,
    #[arg(long)]
    pub sensitivity_bits: Option<u32>,
    #[arg(long)]
    pub act_bits: Option<u32>,
    #[arg(long)]
    pub population_size: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eval_subset_size: Option<usize>,
    #[arg(long)]
    pub max_drop: Option<f64>,
    #[arg(long)]
    pub reference_metric: Option<f64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Evaluate candidates one at a time.
    #[arg(long)]
    pub serial: bool,
    #[arg(long)]
    pub arch: Option<MlpArch>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Print machine-readable JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    c.$field = v.clone();
                }
            )*};
        }
        macro_rules! set_opt {
            ($($field:ident),*) => {$(
                if self.$field.is_some() {
                    c.$field = self.$field.clone();
                }
            )*};
        }
        set!(
            data,
            label_column,
            metric,
            threshold,
            total_bits,
            sensitivity_bits,
            act_bits
        );
        set!(population_size, iterations, p, output_dir, samples);
        set_opt!(
            model,
            float_model,
            schemes,
            ranking,
            feature_columns,
            num_classes,
            seed
        );
        set_opt!(eval_subset_size, max_drop, reference_metric, threads, arch);
        if self.serial {
            c.parallel = false;
        }
        c.validate()?;
        Ok(c)
    }
}
