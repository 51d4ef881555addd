use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use miqcr::instances::{brute_force_optimum, save_instance, to_canonical_json};
use miqcr::pipeline::cap_for;
use miqcr::{build_base_relaxation, compute_beta, run_batch, run_pipeline, Aggregation, BundleOptions, InstanceSpec, Mode, RunConfig};

#[derive(Parser)]
#[command(name = "miqcr", version, about = "Exact solution of integer quadratic programs by convex reformulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an instance and write it as JSON.
    Gen {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run both phases and print the report.
    Solve {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run phase 1 only and dump the dual solution.
    Phase1 {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Enumerate the box and report the optimum.
    Bruteforce {
        #[command(flatten)]
        source: SourceArgs,
        /// Maximum number of box points.
        #[arg(long, default_value_t = 50_000_000)]
        limit: u128,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a JSON array of run configurations and summarize.
    Batch {
        /// File holding a JSON array of run configurations.
        configs: PathBuf,
        #[arg(long, value_enum, default_value_t = Aggregation::ByGroup)]
        aggregation: Aggregation,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Kcluster,
    Eiqp,
    Iep,
}

#[derive(Args)]
struct SourceArgs {
    /// Instance file; overrides the generator flags.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Family::Kcluster)]
    family: Family,
    #[arg(long, default_value_t = 12)]
    n: usize,
    /// Edge density (k-cluster).
    #[arg(long, default_value_t = 0.5)]
    density: f64,
    /// Cluster size (k-cluster); defaults to n/2.
    #[arg(long)]
    k: Option<usize>,
    /// Instance class (EIQP).
    #[arg(long, default_value_t = 1)]
    class: u8,
    /// Upper bound cap (EIQP).
    #[arg(long)]
    clip: Option<i64>,
    #[arg(long, default_value_t = 2)]
    types: usize,
    #[arg(long, default_value_t = 2)]
    per_type: usize,
    #[arg(long, default_value_t = 2)]
    sets: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SourceArgs {
    fn instance_spec(&self) -> InstanceSpec {
        if let Some(path) = &self.instance {
            return InstanceSpec::File { path: path.clone() };
        }
        match self.family {
            Family::Kcluster => InstanceSpec::Kcluster {
                n: self.n,
                d: self.density,
                k: self.k.unwrap_or(self.n / 2),
                seed: self.seed,
            },
            Family::Eiqp => InstanceSpec::Eiqp {
                class: self.class,
                n: self.n,
                seed: self.seed,
                clip: self.clip,
            },
            Family::Iep => InstanceSpec::Iep {
                types: self.types,
                per_type: self.per_type,
                sets: self.sets,
                seed: self.seed,
            },
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Fraction of the product inequalities that may be dualized.
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    #[arg(long, value_enum, default_value_t = Mode::Auto)]
    mode: Mode,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    zero_tol: Option<f64>,
    /// Seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    node_limit: Option<usize>,
    #[arg(long)]
    log_dir: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self, source: &SourceArgs) -> RunConfig {
        RunConfig {
            instance: source.instance_spec(),
            delta: self.delta,
            mode: self.mode,
            tol: self.tol,
            zero_tol: self.zero_tol,
            time_limit: self.time_limit,
            node_limit: self.node_limit,
            seed: source.seed,
            log_dir: self.log_dir.clone(),
            group: None,
        }
    }
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<(), String> {
    match out {
        Some(p) => std::fs::write(p, format!("{text}\n")).map_err(|e| format!("{}: {e}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string_pretty(v).map_err(|e| e.to_string())
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Gen { source, out } => {
            let inst = source.instance_spec().load().map_err(|e| e.to_string())?;
            match out {
                Some(p) => save_instance(&inst, &p).map_err(|e| e.to_string()),
                None => {
                    println!("{}", to_canonical_json(&inst));
                    Ok(())
                }
            }
        }
        Command::Solve { source, run, out } => {
            let config = run.config(&source);
            match run_pipeline(&config) {
                Ok(report) => emit(&json(&report)?, out.as_ref()),
                Err(e) => {
                    emit(&json(&e.partial)?, out.as_ref())?;
                    Err(e.to_string())
                }
            }
        }
        Command::Phase1 { source, run, out } => {
            let inst = source.instance_spec().load().map_err(|e| e.to_string())?;
            let mode = run.mode.resolve(&inst);
            let opts = BundleOptions {
                tol: run.tol.unwrap_or(mode.tolerances().0),
                ..BundleOptions::integer()
            };
            let relax = build_base_relaxation(&inst).map_err(|e| e.to_string())?;
            let dual = compute_beta(&relax, cap_for(inst.n(), run.delta), &opts).map_err(|e| e.to_string())?;
            if let Some(dir) = &run.log_dir {
                std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
                miqcr::bundle::write_history_csv(&dual.history, dir.join("bundle.csv")).map_err(|e| e.to_string())?;
            }
            emit(&json(&dual)?, out.as_ref())
        }
        Command::Bruteforce { source, limit, out } => {
            let inst = source.instance_spec().load().map_err(|e| e.to_string())?;
            let (value, point) = brute_force_optimum(&inst, limit).map_err(|e| e.to_string())?;
            let v = serde_json::json!({ "name": inst.name(), "optimum": value, "solution": point });
            emit(&json(&v)?, out.as_ref())
        }
        Command::Batch { configs, aggregation, out } => {
            let text = std::fs::read_to_string(&configs).map_err(|e| format!("{}: {e}", configs.display()))?;
            let configs: Vec<RunConfig> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
            let outcome = run_batch(&configs, aggregation);
            emit(&json(&outcome)?, out.as_ref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
