use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use stgcn::ErrorKind;

mod commands;
mod config;
mod report;

/// Invalid configuration detected by the front end itself (bad TOML,
/// wrong sections, conflicting flags).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(name = "stgcn", version, about = "Skeleton activity recognition with ST-GCN transfer learning")]
struct Cli {
    /// Directory receiving every artifact of the command.
    #[arg(long, global = true, env = "STGCN_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ImportFormat {
    #[value(name = "ntu_skeleton")]
    NtuSkeleton,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum FamilyArg {
    A,
    B,
}

#[derive(Subcommand)]
enum Command {
    /// Convert raw recordings into a dataset container.
    Import {
        #[arg(long, value_enum)]
        format: ImportFormat,
        /// Directory of `.skeleton` files, or a CSV corpus with labels.csv.
        #[arg(long)]
        input: PathBuf,
        /// Container file name inside the output directory.
        #[arg(long, default_value = "dataset.stgd")]
        output: String,
        /// Skeleton layout of CSV samples (kinect_v1, kinect_v2, shared20).
        #[arg(long)]
        topology: Option<String>,
        #[arg(long, default_value_t = 30.0)]
        frame_rate: f64,
        /// Also write one CSV per sample into this directory.
        #[arg(long)]
        dump_csv: Option<PathBuf>,
    },
    /// Clean, pad, centre, align, optionally subsample/smooth, then split.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        /// TOML file with pipeline settings; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Keep every k-th frame after padding.
        #[arg(long)]
        fra: Option<usize>,
        /// Odd moving-average window.
        #[arg(long)]
        smooth: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        /// Map Kinect v2 input onto the shared 20-joint skeleton.
        #[arg(long)]
        remap: bool,
        #[arg(long)]
        train_fraction: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Cross-subject split: comma-separated training subject ids.
        #[arg(long, value_delimiter = ',')]
        train_subjects: Option<Vec<u32>>,
    },
    /// Train a network from scratch.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fine-tune a pre-trained checkpoint under a transfer plan.
    Finetune {
        #[arg(long)]
        config: PathBuf,
    },
    /// Extract (and optionally reduce and classify) block features.
    Extract {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score samples, build a pacing schedule and train on it.
    Curriculum {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Row label in reports.
        #[arg(long, default_value = "evaluate")]
        name: String,
    },
    /// Tabulate metrics files (JSON) and confusion matrices (CSV).
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Generate a synthetic dataset or the synthetic transfer benchmark.
    Synth {
        #[arg(long, value_enum, default_value = "a")]
        family: FamilyArg,
        /// Motion primitives, comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "raise_arms,wave,crouch")]
        classes: Vec<String>,
        #[arg(long, default_value_t = 20)]
        per_class: usize,
        #[arg(long, default_value_t = 30)]
        frames: usize,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write source.stgd and target.stgd instead of a single dataset.
        #[arg(long)]
        benchmark: bool,
        #[arg(long)]
        dump_csv: Option<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<stgcn::Error>() {
            return match e.kind() {
                ErrorKind::Config => EXIT_CONFIG,
                ErrorKind::Data | ErrorKind::Io => EXIT_DATA,
                ErrorKind::Numerical => EXIT_NUMERICAL,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_DATA;
        }
    }
    EXIT_OTHER
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let out = cli.out_dir;
    std::fs::create_dir_all(&out)?;
    match cli.command {
        Command::Import {
            format,
            input,
            output,
            topology,
            frame_rate,
            dump_csv,
        } => commands::import(&out, format, &input, &output, topology.as_deref(), frame_rate, dump_csv.as_deref()),
        Command::Preprocess {
            input,
            config,
            fra,
            smooth,
            frames,
            remap,
            train_fraction,
            seed,
            train_subjects,
        } => {
            let overrides = commands::PreprocessOverrides {
                fra,
                smooth,
                frames,
                remap,
                train_fraction,
                seed,
                train_subjects,
            };
            commands::preprocess(&out, &input, config.as_deref(), overrides)
        }
        Command::Train { config } => commands::train(&out, &config),
        Command::Finetune { config } => commands::finetune(&out, &config),
        Command::Extract { config } => commands::extract(&out, &config),
        Command::Curriculum { config } => commands::curriculum(&out, &config),
        Command::Evaluate { checkpoint, data, name } => commands::evaluate(&out, &checkpoint, &data, &name),
        Command::Report { inputs } => report::run(&out, &inputs),
        Command::Synth {
            family,
            classes,
            per_class,
            frames,
            noise,
            seed,
            benchmark,
            dump_csv,
        } => commands::synth(
            &out,
            commands::SynthArgs {
                family,
                classes,
                per_class,
                frames,
                noise,
                seed,
                benchmark,
                dump_csv,
            },
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
