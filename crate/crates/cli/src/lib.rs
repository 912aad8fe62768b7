//! Config-driven scenario runner: parses a run config, simulates every
//! scenario in parallel and writes per-scenario CSVs plus `summary.json`.

pub mod config;
pub mod output;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use gcsim_core::cvsr::{run_scenario, ScenarioRun, ScenarioSpec};
use gcsim_core::solver::TransientError;
use gcsim_core::Error;
use rayon::prelude::*;

pub use config::{parse_config, ConfigError, RunConfig};
use output::{FailedScenario, ScenarioSummary, Summary, SweepCheck};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 1;
    pub const NONCONVERGENCE: i32 = 2;
    pub const IO: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{failed} of {total} scenarios did not converge")]
    NonConvergence { failed: usize, total: usize },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => exit::CONFIG,
            RunError::Io { .. } => exit::IO,
            RunError::NonConvergence { .. } => exit::NONCONVERGENCE,
        }
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub summary: Summary,
    pub written: Vec<PathBuf>,
}

fn write_file(path: PathBuf, contents: &str, written: &mut Vec<PathBuf>) -> Result<(), RunError> {
    fs::write(&path, contents).map_err(|source| RunError::Io {
        path: path.clone(),
        source,
    })?;
    written.push(path);
    Ok(())
}

/// Maps a failed run to either a solver failure (kept as partial output) or
/// a configuration problem the parser could not see.
fn classify(spec: &ScenarioSpec, e: &TransientError) -> Option<ConfigError> {
    match e.error.root() {
        Error::InvalidParameter { .. } | Error::InvalidCircuit(_) => Some(ConfigError {
            diagnostics: vec![config::Diagnostic {
                line: 0,
                message: format!("scenario {}: {}", spec.label, e.error),
            }],
        }),
        _ => None,
    }
}

/// Runs every scenario of `config` and writes its outputs under `out_dir`.
pub fn run(config: &RunConfig, out_dir: &Path) -> Result<RunReport, RunError> {
    let scenarios = config.scenario_list();
    let mut solver = config.solver.clone();
    solver.keep_full_waveforms = config.emit_full_waveforms;

    let results: Vec<Result<ScenarioRun, TransientError>> = scenarios
        .par_iter()
        .map(|spec| {
            log::info!(
                "running {} ({} V, {} A)",
                spec.label,
                spec.v_source,
                spec.i_dc_bias
            );
            run_scenario(&config.cvsr, spec, &solver)
        })
        .collect();

    for (spec, r) in scenarios.iter().zip(&results) {
        if let Err(e) = r {
            if let Some(c) = classify(spec, e) {
                return Err(c.into());
            }
        }
    }

    fs::create_dir_all(out_dir).map_err(|source| RunError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let mut written = Vec::new();
    let mut summaries = Vec::new();
    let mut failed = Vec::new();
    for (spec, r) in scenarios.iter().zip(&results) {
        match r {
            Ok(run) => {
                write_file(
                    out_dir.join(format!("{}.csv", spec.label)),
                    &output::scenario_csv(run),
                    &mut written,
                )?;
                if let Some(full) = &run.result.full_waveforms {
                    write_file(
                        out_dir.join(format!("{}.full.csv", spec.label)),
                        &output::raw_csv(full),
                        &mut written,
                    )?;
                }
                summaries.push(ScenarioSummary::from_run(run));
            }
            Err(e) => {
                log::error!("{}: {}", spec.label, e);
                if let Some(partial) = &e.partial {
                    write_file(
                        out_dir.join(format!("{}.csv.partial", spec.label)),
                        &output::raw_csv(partial),
                        &mut written,
                    )?;
                }
                failed.push(FailedScenario {
                    label: spec.label.clone(),
                    error: e.to_string(),
                });
            }
        }
    }

    let sweep = config.is_sweep().then(|| {
        let mut points: Vec<(f64, f64)> = scenarios
            .iter()
            .zip(&results)
            .filter_map(|(s, r)| {
                r.as_ref()
                    .ok()
                    .map(|run| (s.i_dc_bias.abs(), run.report.inductance.mean))
            })
            .collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let l: Vec<f64> = points.iter().map(|p| p.1).collect();
        let ok = output::nonincreasing(&l, 1e-6);
        if !ok {
            log::warn!("sweep L_mean is not monotone in |i_dc|");
        }
        SweepCheck {
            l_mean_monotone_nonincreasing: ok,
        }
    });

    let summary = Summary {
        scenarios: summaries,
        failed,
        sweep,
    };
    let total = scenarios.len();
    let n_failed = summary.failed.len();
    let name = if n_failed == 0 {
        "summary.json"
    } else {
        "summary.json.partial"
    };
    write_file(out_dir.join(name), &summary.to_json(), &mut written)?;

    if n_failed > 0 {
        return Err(RunError::NonConvergence {
            failed: n_failed,
            total,
        });
    }
    Ok(RunReport { summary, written })
}

/// Reads, parses and runs the config at `path`. `out` overrides the
/// configured output directory and `full_waveforms` forces full emission.
pub fn simulate(
    path: &Path,
    out: Option<&Path>,
    full_waveforms: bool,
) -> Result<RunReport, RunError> {
    let text = fs::read_to_string(path).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut config = parse_config(&text)?;
    if full_waveforms {
        config.emit_full_waveforms = true;
    }
    let dir = out.map_or_else(|| config.output_dir.clone(), Path::to_path_buf);
    run(&config, &dir)
}
