use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fda::genmodel::{write_walk_csv, WalkPoint};
use fda::server::{
    serve, ApiError, AppState, VaeTrainRequest, WalkRequest, Workbench, DATA_DIR_ENV,
};
use fda::store::{parse_config, EvaluatorKind, FullConfig, Store};

/// Full-domain analysis workbench: illuminate shape archives, train a
/// generative model on them and explore the results.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Directory holding `runs/`.
    #[arg(long, env = DATA_DIR_ENV, default_value = "fda-data", global = true)]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Evaluator {
    Lbm,
    Synthetic,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Table {
    Archive,
    Samples,
    Stats,
    Traces,
}

#[derive(Subcommand)]
enum Command {
    /// Print a full configuration with every default filled in.
    InitConfig {
        /// Small presets instead of the full-scale defaults.
        #[arg(long)]
        desk: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Create and run a SPHEN run in the foreground.
    Run {
        /// JSON configuration; absent fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Start from the desk presets (the config file still overrides).
        #[arg(long)]
        desk: bool,
        #[arg(long, value_enum)]
        evaluator: Option<Evaluator>,
    },
    /// Show one run, or list all runs.
    Status { run_id: Option<String> },
    /// Write a stored table of a finished run.
    Export {
        run_id: String,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long, value_enum, default_value = "archive")]
        table: Table,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Generative-model commands.
    Vae {
        #[command(subcommand)]
        command: VaeCommand,
    },
    /// Latent walk through a run's trained VAE, as CSV.
    Walk {
        run_id: String,
        /// Walk one dimension; all dimensions when absent.
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        span: Option<f64>,
        /// Comma-separated latent center (default: origin).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        center: Option<Vec<f64>>,
    },
    /// Sample the prior of a run's VAE into a generated archive.
    Generate {
        run_id: String,
        #[arg(short, long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        capacity: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Isoline grid resolution per feature axis.
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Host the HTTP API under /api/v1.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: std::net::SocketAddr,
        /// Static UI assets served at `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum VaeCommand {
    /// Train on an archive grown from a finished run's models.
    Train {
        run_id: String,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 4000)]
        capacity: usize,
        #[arg(long, default_value_t = 4000)]
        max_bitmaps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let ApiError::Validation(fields) = &e {
                for f in fields {
                    eprintln!("  {f}");
                }
            }
            ExitCode::FAILURE
        }
    }
}

fn write_out(output: Option<&PathBuf>, bytes: &[u8]) -> Result<(), ApiError> {
    let io = |e: std::io::Error| ApiError::Internal(e.to_string());
    match output {
        Some(path) => std::fs::write(path, bytes).map_err(io),
        None => std::io::stdout().write_all(bytes).map_err(io),
    }
}

fn json(value: &impl serde::Serialize) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("output serializes");
    out.push(b'\n');
    out
}

fn run(cli: Cli) -> Result<(), ApiError> {
    if let Command::InitConfig { desk, output } = &cli.command {
        let config = if *desk {
            FullConfig::desk()
        } else {
            FullConfig::default()
        };
        return write_out(
            output.as_ref(),
            format!("{}\n", config.to_json()).as_bytes(),
        );
    }
    let store = Store::open(&cli.data_dir)?;
    match cli.command {
        Command::InitConfig { .. } => unreachable!("handled above"),
        Command::Run {
            config,
            desk,
            evaluator,
        } => {
            let base = if desk {
                FullConfig::desk()
            } else {
                FullConfig::default()
            };
            let mut config = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| ApiError::Internal(e.to_string()))?;
                    let mut merged = serde_json::to_value(&base).expect("config serializes");
                    let overrides: serde_json::Value =
                        serde_json::from_str(&text).map_err(|e| {
                            ApiError::Validation(vec![fda::validate::Violation::new(
                                "config",
                                e.to_string(),
                            )])
                        })?;
                    merge(&mut merged, overrides);
                    parse_config(&merged.to_string())?
                }
                None => base,
            };
            if let Some(e) = evaluator {
                config.evaluator = match e {
                    Evaluator::Lbm => EvaluatorKind::Lbm,
                    Evaluator::Synthetic => EvaluatorKind::Synthetic,
                };
            }
            let bench = Workbench::new(store);
            let record = bench.create_run(config)?;
            eprintln!("run {}", record.run_id);
            let done = bench.execute_run(&record.run_id)?;
            let status = bench.status(&done.run_id)?;
            eprintln!(
                "{:?}: {} evaluations, {} niches, best u_max {:?}",
                status.status, status.evaluations, status.occupancy, status.best_fitness
            );
            println!("{}", done.run_id);
            Ok(())
        }
        Command::Status { run_id } => {
            let bench = Workbench::new(store);
            let out = match run_id {
                Some(id) => json(&bench.status(&id)?),
                None => json(&bench.list()?),
            };
            write_out(None, &out)
        }
        Command::Export {
            run_id,
            format,
            table,
            output,
        } => {
            let bench = Workbench::new(store);
            let bytes = match (format, table) {
                (Format::Csv, t) => {
                    let rel = match t {
                        Table::Archive => "archive.csv",
                        Table::Samples => "samples.csv",
                        Table::Stats => "stats.csv",
                        Table::Traces => "traces.csv",
                    };
                    bench.store.read_artifact(&run_id, rel)?
                }
                (Format::Json, Table::Archive) => json(&bench.archive_view(&run_id, None, false)?),
                (Format::Json, t) => {
                    let result = bench.store.load_result(&run_id)?;
                    match t {
                        Table::Samples => json(&result.samples),
                        Table::Stats => json(&result.rounds),
                        Table::Traces => json(&result.traces),
                        Table::Archive => unreachable!("handled above"),
                    }
                }
            };
            write_out(output.as_ref(), &bytes)
        }
        Command::Vae {
            command:
                VaeCommand::Train {
                    run_id,
                    epochs,
                    capacity,
                    max_bitmaps,
                    seed,
                },
        } => {
            let bench = Workbench::new(store);
            let mut vae = bench.store.load_record(&run_id)?.config.vae;
            if let Some(e) = epochs {
                vae.epochs = e;
            }
            let request = VaeTrainRequest {
                vae: Some(vae),
                training_capacity: capacity,
                max_bitmaps,
                seed,
            };
            let summary = bench.train_vae(&run_id, &request, &mut |e| {
                eprintln!(
                    "epoch {:4}  reconstruction {:10.3}  kl {:8.3}",
                    e.epoch, e.reconstruction, e.kl
                )
            })?;
            write_out(None, &json(&summary))
        }
        Command::Walk {
            run_id,
            dim,
            steps,
            span,
            center,
        } => {
            let bench = Workbench::new(store);
            let request = WalkRequest {
                center,
                dim,
                steps,
                span,
            };
            let (_, rows) = bench.walk_points(&run_id, &request)?;
            let points: Vec<WalkPoint> = rows.into_iter().flatten().collect();
            let mut out = Vec::new();
            write_walk_csv(&points, &mut out)?;
            write_out(None, &out)
        }
        Command::Generate {
            run_id,
            n,
            capacity,
            seed,
            bins,
        } => {
            let bench = Workbench::new(store);
            let set = bench.generate(&run_id, n, capacity, seed, bins)?;
            eprintln!(
                "{} rows ({} degenerate decodes skipped), {} of {} niches filled",
                set.rows.len(),
                set.degenerate,
                set.occupancy(),
                set.capacity()
            );
            let mut out = Vec::new();
            set.write_isolines_csv(&mut out)?;
            write_out(None, &out)
        }
        Command::Serve { addr, static_dir } => {
            let state = AppState::new(store, static_dir)?;
            eprintln!("listening on http://{addr}/api/v1");
            let rt =
                tokio::runtime::Runtime::new().map_err(|e| ApiError::Internal(e.to_string()))?;
            rt.block_on(serve(addr, state))
                .map_err(|e| ApiError::Internal(e.to_string()))
        }
    }
}

/// Overlays `patch` onto `base`, recursing into objects.
fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}
