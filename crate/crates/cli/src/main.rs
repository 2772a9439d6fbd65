use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use mecch::app::{self, DatasetKind};
use mecch::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "mecch", version, about = "Train and evaluate metapath-context heterogeneous GNNs")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write the checkpoint, history.csv and metrics.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Checkpoint path (default: <out>/model.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Test-split metrics of a checkpoint.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write the metrics JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Accepted for symmetry; evaluation draws no randomness.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check aggregation counts on typed trees against their closed forms.
    Bench {
        #[arg(long = "n", value_delimiter = ',', default_values_t = [2u64, 3])]
        n: Vec<u64>,
        #[arg(long = "k", value_delimiter = ',', default_values_t = [1u64, 2, 3])]
        k: Vec<u64>,
        #[arg(long, default_value = app::BENCH_FILE)]
        out: PathBuf,
    },
    /// Write final-layer node vectors of one type as TSV.
    ExportEmbeddings {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Node type to export (default: the task's target type).
        #[arg(long)]
        node_type: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a planted synthetic dataset and a matching config.toml.
    Generate {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Nodes per type (nc) or per block (lp).
        #[arg(long, default_value_t = 300)]
        size: usize,
        /// Classes (nc) or blocks (lp).
        #[arg(long, default_value_t = 3)]
        groups: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Nc,
    Lp,
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        app::set_threads(n)?;
    }
    match cli.command {
        Command::Train {
            config,
            out,
            checkpoint,
            seed,
        } => print!("{}", app::to_json(&app::cmd_train(&config, &out, checkpoint.as_deref(), seed)?)),
        Command::Eval {
            config,
            checkpoint,
            out,
            seed: _,
        } => print!("{}", app::to_json(&app::cmd_eval(&config, &checkpoint, out.as_deref())?)),
        Command::Bench { n, k, out } => {
            let rows = app::cmd_bench(&n, &k, &out)?;
            print!("{}", mecch::bench::complexity_csv(&rows));
        }
        Command::ExportEmbeddings {
            config,
            checkpoint,
            out,
            node_type,
            seed: _,
        } => {
            let rows = app::cmd_export_embeddings(&config, &checkpoint, &out, node_type.as_deref())?;
            println!("wrote {rows} rows to {}", out.display());
        }
        Command::Generate {
            kind,
            out,
            seed,
            size,
            groups,
        } => {
            let kind = match kind {
                Kind::Nc => DatasetKind::Classification,
                Kind::Lp => DatasetKind::Links,
            };
            let cfg = app::cmd_generate(kind, &out, seed, size, groups)?;
            println!("{}", cfg.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> ExitCode {
    let msg = e.to_string().replace('\n', " ");
    eprintln!("error: {}: {msg}", e.category());
    ExitCode::from(e.exit_code() as u8)
}
