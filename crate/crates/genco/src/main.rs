use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use genco::cli;

/// Desk-scale co-training lab for data-limited GANs.
#[derive(Parser)]
#[command(name = "genco", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training experiment from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Repeatable key=value config override.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory (beats out_dir from the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint: scores, gaps and proxy-FID.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Also write the report JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the cartesian product of the config's sweep axes.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Parallel cells.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dataset utilities.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
    /// Apply random frequency component rejection to an image or dataset file.
    Reject {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Fraction of frequency bands to reject.
        #[arg(long, default_value_t = 0.2)]
        p: f64,
        #[arg(long, default_value_t = 64)]
        n_bands: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render SVG figures from a metrics CSV.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DataCommand {
    /// Generate the dataset described by a config file.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Dataset file to write.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(command: Command) -> Result<(), cli::CliError> {
    match command {
        Command::Train {
            config,
            overrides,
            out,
        } => cli::cmd_train(&config, &overrides, out),
        Command::Eval { ckpt, out } => cli::cmd_eval(&ckpt, out),
        Command::Sweep {
            config,
            overrides,
            jobs,
            out,
        } => cli::cmd_sweep(&config, &overrides, jobs, out),
        Command::Data {
            command: DataCommand::Gen {
                config,
                overrides,
                out,
            },
        } => cli::cmd_data_gen(&config, &overrides, &out),
        Command::Reject {
            input,
            output,
            p,
            n_bands,
            seed,
        } => cli::cmd_reject(&input, &output, p, n_bands, seed),
        Command::Plot { metrics, out } => cli::cmd_plot(&metrics, out),
    }
}

fn main() -> ExitCode {
    let args = Cli::parse();
    match run(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
