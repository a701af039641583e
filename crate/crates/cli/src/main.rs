//! `metatst` command-line runner.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "metatst", version, about = "Metadata-informed time-series forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model on one dataset.
    Train {
        #[arg(long)]
        dataset: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train one model on several datasets, optionally zero-shot or probe it.
    JointTrain {
        /// Dataset names; repeat the flag or separate with commas.
        #[arg(long = "dataset", value_delimiter = ',', required = true)]
        datasets: Vec<String>,
        /// Linearly probe the joint model to each dataset.
        #[arg(long)]
        probe: bool,
        /// Report test metrics of the joint model on each dataset.
        #[arg(long)]
        zero_shot: bool,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train and evaluate a variant with input token groups removed.
    Ablate {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        drop_meta: bool,
        #[arg(long)]
        drop_exo: bool,
        #[arg(long)]
        drop_endo: bool,
        /// Run directory of the full model, for a comparison table.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Export attention maps, metadata representations or templates.
    Export {
        /// Run directory holding `manifest.json` and the checkpoint.
        #[arg(long, required_unless_present = "templates")]
        run_dir: Option<PathBuf>,
        #[arg(long)]
        attention: bool,
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long)]
        meta_reps: bool,
        #[arg(long, default_value = "test")]
        split: String,
        /// Dataset to export from; defaults to the run's first dataset.
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        templates: bool,
    },
    /// Print the metadata templates.
    DumpTemplates,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    HashStub,
    Service,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AggregationChoice {
    AveragePooling,
    SpecialToken,
    Router,
}

/// Options shared by every training command. Hyperparameter flags override
/// the config file, which overrides the built-in short-term preset.
#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Dataset registry (TOML).
    #[arg(long)]
    pub registry: PathBuf,
    /// Model config (TOML); missing keys fall back to the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Parent directory of run directories.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "hash-stub")]
    pub backend: BackendChoice,
    /// Text encoder identifier; required with `--backend service`.
    #[arg(long)]
    pub model_id: Option<String>,
    #[arg(long, value_enum)]
    pub aggregation: Option<AggregationChoice>,
    #[arg(long)]
    pub routers: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub pred_len: Option<usize>,
    #[arg(long)]
    pub e_layers: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long = "patch")]
    pub patch_len: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub train_epochs: Option<usize>,
}

/// Failure classes that map onto exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { dataset, run } => commands::train(&run, &dataset),
        Command::JointTrain {
            datasets,
            probe,
            zero_shot,
            run,
        } => commands::joint_train(&run, &datasets, probe, zero_shot),
        Command::Ablate {
            dataset,
            drop_meta,
            drop_exo,
            drop_endo,
            compare,
            run,
        } => commands::ablate(&run, &dataset, [drop_endo, drop_exo, drop_meta], compare.as_deref()),
        Command::Export {
            run_dir,
            attention,
            sample,
            meta_reps,
            split,
            dataset,
            templates,
        } => commands::export(commands::ExportRequest {
            run_dir,
            attention,
            sample,
            meta_reps,
            split,
            dataset,
            templates,
        }),
        Command::DumpTemplates => {
            print!("{}", metatst::metadata::dump_templates());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
