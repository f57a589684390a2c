use std::error::Error as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pmgt_core::consensus::resolve_k;
use pmgt_core::data::parse_libsvm;
use pmgt_core::experiment::run_experiment;
use pmgt_core::topology::validate_gossip;
use pmgt_core::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "pmgt",
    version,
    about = "Decentralized proximal optimization experiments"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured algorithm and write CSV and JSON results.
    Run {
        config: PathBuf,
        /// Overrides `run.output_dir` from the config.
        #[arg(long, env = "PMGT_OUTPUT_DIR")]
        output_dir: Option<PathBuf>,
    },
    /// Parse and check a config without running anything.
    Validate { config: PathBuf },
    /// Print the agent count, mixing rate and chosen K for a config.
    TopologyInfo { config: PathBuf },
    /// Summarize a LIBSVM file.
    DatasetInfo {
        path: PathBuf,
        /// Feature dimension (defaults to the largest index in the file).
        #[arg(long)]
        dim: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = e.source();
            while let Some(inner) = source {
                eprintln!("  caused by: {inner}");
                source = inner.source();
            }
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> pmgt_core::Result<ExitCode> {
    match command {
        Command::Run { config, output_dir } => {
            let config = ExperimentConfig::load(&config)?;
            let outcome = run_experiment(&config, output_dir.as_deref())?;
            for record in &outcome.records {
                if let Some(last) = record.last() {
                    println!(
                        "{:<28} t={:<7} subopt={:<12.4e} grad_evals={:<10} comm_rounds={}",
                        record.algorithm.name(),
                        last.t,
                        last.subopt,
                        last.grad_evals,
                        last.comm_rounds
                    );
                }
            }
            println!(
                "wrote {} files to {}",
                outcome.files.len(),
                outcome.output_dir.display()
            );
            if outcome.succeeded() {
                Ok(ExitCode::SUCCESS)
            } else {
                for failure in &outcome.failures {
                    eprintln!("run failed: {failure}");
                }
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Validate { config } => {
            let config = ExperimentConfig::load(&config)?;
            config.topology.build()?;
            println!(
                "ok: {} agents, {} algorithms, {} iterations",
                config.topology.m(),
                config.run.algorithms.len(),
                config.run.iterations
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::TopologyInfo { config } => {
            let config = ExperimentConfig::load(&config)?;
            let gossip = config.topology.build()?;
            let problem = config.build_problem(&config.load_dataset()?)?;
            let kappa = problem.condition_number()?;
            let k = resolve_k(config.run.k, gossip.mixing_rate(), kappa, problem.n())?;
            println!("m: {}", gossip.m());
            println!("lambda2: {}", gossip.mixing_rate());
            println!("spectral_gap: {}", gossip.spectral_gap());
            println!("kappa: {kappa}");
            println!("n: {}", problem.n());
            println!("K: {k}");
            println!("{}", validate_gossip(gossip.weights()));
            Ok(ExitCode::SUCCESS)
        }
        Command::DatasetInfo { path, dim } => {
            let ds = parse_libsvm(&path, dim)?;
            let (neg, pos) = ds.label_balance();
            let max_norm_sq = ds
                .features
                .rows()
                .into_iter()
                .map(|r| r.dot(&r))
                .fold(0.0, f64::max);
            println!("samples: {}", ds.len());
            println!("d: {}", ds.d());
            println!("nonzeros: {}", ds.nnz());
            println!("labels: {neg} negative, {pos} positive");
            println!("max_row_norm_sq: {max_norm_sq}");
            Ok(ExitCode::SUCCESS)
        }
    }
}
