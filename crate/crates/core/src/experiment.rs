//! Experiment orchestration and result files.
//!
//! Output directory layout:
//!
//! - `<algorithm>.csv`: one diagnostics row per recorded iteration
//! - `summary.json`: config echo, problem summary, final metrics per run
//! - `manifest.json`: code version, seed, list of written files
//! - `plot_grad_evals.csv`, `plot_comm_rounds.csv`, `plot_cost_tau<τ>.csv`:
//!   tidy `algorithm,x,suboptimality` curves

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::algorithms::{self, Algorithm};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::{weighted_cost, DiagnosticsRow, ProblemSummary, Reference, RunRecord};
use crate::problems::{Problem, ReferenceSolution};
use crate::topology::GossipMatrix;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;
pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Problem, gossip matrix, and (optionally) reference solution for a config.
pub struct Setup {
    pub problem: Problem,
    pub gossip: GossipMatrix,
    pub reference: Option<Reference>,
}

impl Setup {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        let gossip = config.topology.build()?;
        let dataset = config.load_dataset()?;
        log::info!(
            "dataset {}: {} samples, d = {}",
            dataset.source,
            dataset.len(),
            dataset.d()
        );
        let problem = config.build_problem(&dataset)?;
        let reference = if config.reference.enabled {
            let r = Reference::solve(&problem, config.reference.tol)?;
            log::info!(
                "reference solution: h* = {:.12e} after {} iterations",
                r.h_star(),
                r.solution.iterations
            );
            Some(r)
        } else {
            None
        };
        Ok(Self {
            problem,
            gossip,
            reference,
        })
    }
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub csv: String,
    pub summary: ProblemSummary,
    pub final_row: Option<DiagnosticsRow>,
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct ExperimentSummary {
    pub schema_version: u32,
    pub code_version: &'static str,
    pub config: ExperimentConfig,
    pub reference: Option<ReferenceSummary>,
    pub runs: Vec<RunSummary>,
}

#[derive(Debug, Serialize)]
pub struct ReferenceSummary {
    pub h_star: f64,
    pub method: String,
    pub iterations: usize,
    pub residual: f64,
}

impl From<&ReferenceSolution> for ReferenceSummary {
    fn from(r: &ReferenceSolution) -> Self {
        Self {
            h_star: r.h_star,
            method: r.method.clone(),
            iterations: r.iterations,
            residual: r.residual,
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    code_version: &'static str,
    seed: u64,
    files: &'a [String],
}

/// What `run_experiment` produced.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub output_dir: PathBuf,
    pub records: Vec<RunRecord>,
    pub files: Vec<PathBuf>,
    pub failures: Vec<Error>,
}

impl ExperimentOutcome {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Build everything, run each configured algorithm in order, and write the
/// output files. A failed run still writes its partial CSV and is reported
/// in `failures`.
pub fn run_experiment(
    config: &ExperimentConfig,
    output_dir: Option<&Path>,
) -> Result<ExperimentOutcome> {
    config.validate()?;
    let out = output_dir.unwrap_or(&config.run.output_dir).to_path_buf();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let setup = Setup::build(config)?;

    let mut records = Vec::new();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let mut files = Vec::new();
    for &algorithm in &config.run.algorithms {
        let run_config = config.run.run_config(algorithm);
        log::info!(
            "running {algorithm} for {} iterations",
            run_config.iterations
        );
        let (record, error) = match algorithms::run(
            &setup.problem,
            &setup.gossip,
            &run_config,
            setup.reference.as_ref(),
        ) {
            Ok(r) => (r, None),
            Err(failure) => {
                let failure = *failure;
                log::error!("{algorithm}: {}", failure.error);
                (failure.partial, Some(failure.error))
            }
        };
        let csv_name = format!("{algorithm}.csv");
        let csv_path = out.join(&csv_name);
        let file = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        record.write_csv(BufWriter::new(file))?;
        files.push(csv_path);
        runs.push(RunSummary {
            algorithm,
            csv: csv_name,
            summary: record.summary.clone(),
            final_row: record.last().cloned(),
            error: error.as_ref().map(|e| e.to_string()),
        });
        if let Some(e) = error {
            failures.push(e);
        }
        records.push(record);
    }

    files.extend(emit_plotdata(&records, &config.run.tau, &out)?);

    let summary = ExperimentSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        code_version: CODE_VERSION,
        config: config.clone(),
        reference: setup
            .reference
            .as_ref()
            .map(|r| ReferenceSummary::from(&r.solution)),
        runs,
    };
    let summary_path = out.join("summary.json");
    write_json(&summary_path, &summary)?;
    files.push(summary_path);

    let mut names: Vec<String> = files
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    names.push("manifest.json".into());
    let manifest_path = out.join("manifest.json");
    write_json(
        &manifest_path,
        &Manifest {
            schema_version: SUMMARY_SCHEMA_VERSION,
            code_version: CODE_VERSION,
            seed: config.run.seed,
            files: &names,
        },
    )?;
    files.push(manifest_path);

    Ok(ExperimentOutcome {
        output_dir: out,
        records,
        files,
        failures,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)?;
    Ok(())
}

/// Plot file name for a cost ratio, e.g. `plot_cost_tau250.csv`.
pub fn cost_plot_name(tau: f64) -> String {
    format!("plot_cost_tau{tau}.csv")
}

#[derive(Serialize)]
struct PlotRow<'a> {
    algorithm: &'a str,
    x: f64,
    suboptimality: f64,
}

/// Write one tidy CSV per x-axis: per-agent gradient evaluations,
/// communication rounds, and `grad_evals + tau * comm_rounds` for every
/// `tau`. Suboptimality is copied from the diagnostics; when rows carry raw
/// objective values (no reference) the minimum over all runs is subtracted.
pub fn emit_plotdata(records: &[RunRecord], taus: &[f64], dir: &Path) -> Result<Vec<PathBuf>> {
    let raw = records
        .iter()
        .flat_map(|r| &r.rows)
        .any(|row| row.dist_sq.is_none());
    let offset = if raw {
        records
            .iter()
            .flat_map(|r| &r.rows)
            .map(|row| row.subopt)
            .fold(f64::INFINITY, f64::min)
    } else {
        0.0
    };
    let offset = if offset.is_finite() { offset } else { 0.0 };

    type Axis = Box<dyn Fn(f64, f64) -> f64>;
    let mut axes: Vec<(String, Axis)> = vec![
        ("plot_grad_evals.csv".into(), Box::new(|g, _| g)),
        ("plot_comm_rounds.csv".into(), Box::new(|_, c| c)),
    ];
    for &tau in taus {
        axes.push((
            cost_plot_name(tau),
            Box::new(move |g, c| weighted_cost(g, c, tau)),
        ));
    }

    let mut written = Vec::new();
    for (name, axis) in axes {
        let path = dir.join(&name);
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(&path)?;
        w.write_record(["algorithm", "x", "suboptimality"])?;
        for record in records {
            for row in &record.rows {
                w.serialize(PlotRow {
                    algorithm: record.algorithm.name(),
                    x: axis(record.grad_evals_per_agent(row), row.comm_rounds as f64),
                    suboptimality: row.subopt - offset,
                })?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
