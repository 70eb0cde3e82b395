use clap::{Parser, Subcommand};
use lungwarp_cli::commands::{self, CliError, PhantomOptions};
use lungwarp_cli::config::RunConfig;
use lungwarp_core::optimize::Modality;
use std::path::PathBuf;
use std::process::ExitCode;

/// Deformable registration of paired chest radiographs with
/// expiration/inspiration signal-ratio analysis.
#[derive(Parser)]
#[command(name = "lungwarp", version, about)]
struct Cli {
    /// Worker threads for independent pairs (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register pair directories with the configured pipeline.
    Register {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Subject directories holding fixed.lw2d / moving.lw2d.
        #[arg(required = true)]
        pairs: Vec<PathBuf>,
    },
    /// Compute before/after metrics for completed registrations.
    Evaluate {
        #[arg(long)]
        out: PathBuf,
        /// Registration output directories.
        #[arg(required = true)]
        results: Vec<PathBuf>,
    },
    /// Ratio analysis over a cohort of registered subjects.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// Root directory holding one result directory per subject.
        #[arg(long)]
        results: PathBuf,
        /// Cohort CSV: subject,v_insp,v_exp,fleischner.
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Alpha x stride parameter sweep of the dark-field pipeline.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        pairs: Vec<PathBuf>,
    },
    /// Generate a synthetic phantom dataset with ground truth.
    Phantom {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, value_enum, default_value_t = ModalityArg::Darkfield)]
        modality: ModalityArg,
        #[arg(long, default_value_t = 15.0)]
        amplitude: f64,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModalityArg {
    Darkfield,
    Attenuation,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Modality {
        match m {
            ModalityArg::Darkfield => Modality::Darkfield,
            ModalityArg::Attenuation => Modality::Attenuation,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.workers > 0 {
        // Ignore the error if a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global();
    }
    match cli.command {
        Command::Register { config, out, pairs } => {
            let config = commands::load_config(&config)?;
            commands::cmd_register(&config, &pairs, &out)
        }
        Command::Evaluate { out, results } => commands::cmd_evaluate(&results, &out),
        Command::Analyze { config, results, cohort, out } => {
            let config = commands::load_config(&config)?;
            commands::cmd_analyze(&config, &results, &cohort, &out)
        }
        Command::Sweep { config, out, pairs } => {
            let config = commands::load_config(&config)?;
            commands::cmd_sweep(&config, &pairs, &out)
        }
        Command::Phantom { out, count, seed, size, modality, amplitude } => {
            let opts = PhantomOptions {
                count,
                seed,
                size,
                modality: modality.into(),
                amplitude_px: amplitude,
            };
            commands::cmd_phantom(&opts, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("LUNGWARP_LOG"))
        .format_timestamp_millis()
        .init();
    // Validate defaults once in debug builds.
    debug_assert!(RunConfig::darkfield_default().validate().is_ok());
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lungwarp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
