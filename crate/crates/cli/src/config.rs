//! Flat `key = value` run configuration with dotted section prefixes.
//!
//! ```text
//! # device overrides
//! cvsr.mu_r = 8000
//! solver.dt = 1e-5
//! scenarios = standard
//! scenario.light = 1200, 0.2
//! sweep.i_dc_from = 0
//! output.dir = results
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use gcsim_core::cvsr::{standard_scenarios, CvsrParams, ScenarioSpec};
use gcsim_core::magnetics::Orientation;
use gcsim_core::solver::SolverConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub i_dc_from: f64,
    pub i_dc_to: f64,
    pub steps: usize,
    /// Source voltage for every sweep point; the device default otherwise.
    pub v_source: Option<f64>,
}

impl SweepSpec {
    /// Evenly spaced operating points, endpoints included.
    pub fn scenarios(&self, default_v: f64) -> Vec<ScenarioSpec> {
        let width = (self.steps - 1).to_string().len().max(2);
        let v = self.v_source.unwrap_or(default_v);
        (0..self.steps)
            .map(|k| {
                let frac = k as f64 / (self.steps - 1) as f64;
                let i = self.i_dc_from + frac * (self.i_dc_to - self.i_dc_from);
                ScenarioSpec::new(format!("sweep_{k:0width$}"), v, i)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioSelection {
    Standard,
    Explicit(Vec<ScenarioSpec>),
    Sweep(SweepSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub cvsr: CvsrParams,
    pub solver: SolverConfig,
    pub scenarios: ScenarioSelection,
    pub output_dir: PathBuf,
    pub emit_full_waveforms: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cvsr: CvsrParams::default(),
            solver: SolverConfig::default(),
            scenarios: ScenarioSelection::Standard,
            output_dir: PathBuf::from("output"),
            emit_full_waveforms: false,
        }
    }
}

impl RunConfig {
    pub fn scenario_list(&self) -> Vec<ScenarioSpec> {
        match &self.scenarios {
            ScenarioSelection::Standard => standard_scenarios(),
            ScenarioSelection::Explicit(list) => list.clone(),
            ScenarioSelection::Sweep(s) => s.scenarios(self.cvsr.v_source),
        }
    }

    pub fn is_sweep(&self) -> bool {
        matches!(self.scenarios, ScenarioSelection::Sweep(_))
    }
}

/// One problem found in the config text. `line` is 1-based; 0 means the
/// problem is not tied to a single line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "config: {}", self.message)
        } else {
            write!(f, "config line {}: {}", self.line, self.message)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ConfigError {
    pub diagnostics: Vec<Diagnostic>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, d) in self.diagnostics.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

struct Parser {
    config: RunConfig,
    diagnostics: Vec<Diagnostic>,
    seen: BTreeMap<String, usize>,
    explicit: Vec<(usize, ScenarioSpec)>,
    standard_line: Option<usize>,
    sweep: BTreeMap<&'static str, (usize, f64)>,
}

fn parse_f64(value: &str) -> Result<f64, String> {
    let v: f64 = value
        .parse()
        .map_err(|_| format!("expected a number, got {value:?}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("expected a finite number, got {value:?}"))
    }
}

fn parse_count(value: &str) -> Result<u64, String> {
    value
        .parse()
        .map_err(|_| format!("expected a non-negative integer, got {value:?}"))
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got {value:?}")),
    }
}

fn valid_label(label: &str) -> bool {
    !label.is_empty()
        && label
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl Parser {
    fn new() -> Self {
        Self {
            config: RunConfig::default(),
            diagnostics: Vec::new(),
            seen: BTreeMap::new(),
            explicit: Vec::new(),
            standard_line: None,
            sweep: BTreeMap::new(),
        }
    }

    fn error(&mut self, line: usize, message: impl Into<String>) {
        self.diagnostics.push(Diagnostic {
            line,
            message: message.into(),
        });
    }

    fn line(&mut self, n: usize, raw: &str) {
        let text = raw.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            return;
        }
        let Some((key, value)) = text.split_once('=') else {
            self.error(n, format!("expected `key = value`, got {text:?}"));
            return;
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            self.error(n, "missing key before `=`");
            return;
        }
        if let Some(first) = self.seen.insert(key.to_string(), n) {
            self.error(
                n,
                format!("duplicate key {key:?} (first set on line {first})"),
            );
            return;
        }
        if let Err(message) = self.assign(n, key, value) {
            self.error(n, format!("{key}: {message}"));
        }
    }

    fn assign(&mut self, n: usize, key: &str, value: &str) -> Result<(), String> {
        if let Some(field) = key.strip_prefix("cvsr.") {
            return self.cvsr(field, value);
        }
        if let Some(field) = key.strip_prefix("solver.") {
            return self.solver(field, value);
        }
        if let Some(label) = key.strip_prefix("scenario.") {
            if !valid_label(label) {
                return Err("labels use letters, digits, '_' and '-'".into());
            }
            let (v, i) = value
                .split_once(',')
                .ok_or_else(|| format!("expected `v_source, i_dc`, got {value:?}"))?;
            let v = parse_f64(v.trim())?;
            let i = parse_f64(i.trim())?;
            if v < 0.0 {
                return Err(format!("v_source = {v} must be >= 0"));
            }
            self.explicit.push((n, ScenarioSpec::new(label, v, i)));
            return Ok(());
        }
        if let Some(field) = key.strip_prefix("sweep.") {
            let name = match field {
                "i_dc_from" => "i_dc_from",
                "i_dc_to" => "i_dc_to",
                "steps" => "steps",
                "v_source" => "v_source",
                _ => return Err("unknown key".into()),
            };
            let v = if name == "steps" {
                parse_count(value)? as f64
            } else {
                parse_f64(value)?
            };
            self.sweep.insert(name, (n, v));
            return Ok(());
        }
        match key {
            "scenarios" => {
                if value != "standard" && value != "paper" {
                    return Err(format!(
                        "expected `standard` (alias `paper`), got {value:?}"
                    ));
                }
                self.standard_line = Some(n);
            }
            "output.dir" => {
                if value.is_empty() {
                    return Err("must not be empty".into());
                }
                self.config.output_dir = PathBuf::from(value);
            }
            "output.full_waveforms" => self.config.emit_full_waveforms = parse_bool(value)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn cvsr(&mut self, field: &str, value: &str) -> Result<(), String> {
        let p = &mut self.config.cvsr;
        let turns = |value: &str| -> Result<u32, String> {
            let n = parse_count(value)?;
            u32::try_from(n).map_err(|_| format!("{n} is too large"))
        };
        match field {
            "l_mid" => p.l_mid = parse_f64(value)?,
            "l_outer" => p.l_outer = parse_f64(value)?,
            "gap" => p.gap = parse_f64(value)?,
            "area" => p.area = parse_f64(value)?,
            "n_dc" => p.n_dc = turns(value)?,
            "n_ac" => p.n_ac = turns(value)?,
            "b_sat" => p.b_sat = parse_f64(value)?,
            "mu_r" => p.mu_r = parse_f64(value)?,
            "v_source" => p.v_source = parse_f64(value)?,
            "source_is_rms" => p.source_is_rms = parse_bool(value)?,
            "frequency" => p.frequency = parse_f64(value)?,
            "r_load" => p.r_load = parse_f64(value)?,
            "l_load" => p.l_load = parse_f64(value)?,
            "i_dc_bias" => p.i_dc_bias = parse_f64(value)?,
            "fringing" => p.fringing = parse_bool(value)?,
            "dc_winding_sense" => {
                p.dc_winding_sense = match value {
                    "positive" => Orientation::Positive,
                    "negative" => Orientation::Negative,
                    _ => return Err(format!("expected positive or negative, got {value:?}")),
                }
            }
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn solver(&mut self, field: &str, value: &str) -> Result<(), String> {
        let s = &mut self.config.solver;
        let count = |value: &str| -> Result<usize, String> {
            let n = parse_count(value)?;
            usize::try_from(n).map_err(|_| format!("{n} is too large"))
        };
        match field {
            "dt" => s.dt = parse_f64(value)?,
            "newton_tol_rel" => s.newton_tol_rel = parse_f64(value)?,
            "newton_tol_abs" => s.newton_tol_abs = parse_f64(value)?,
            "max_newton_iters" => s.max_newton_iters = count(value)?,
            "max_halvings" => s.max_halvings = count(value)?,
            "startup_ramp_cycles" => s.startup_ramp_cycles = count(value)?,
            "settle_cycles" => s.settle_cycles = count(value)?,
            "analysis_cycles" => s.analysis_cycles = count(value)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Line on which `key` was set, or 0 if it was defaulted.
    fn line_of(&self, key: &str) -> usize {
        self.seen.get(key).copied().unwrap_or(0)
    }

    fn finish(mut self) -> Result<RunConfig, ConfigError> {
        if let Err(bad) = self.config.cvsr.check() {
            for message in bad {
                let field = message.split([' ', '=']).next().unwrap_or("").to_string();
                let line = self.line_of(&format!("cvsr.{field}"));
                self.error(line, format!("cvsr.{message}"));
            }
        }
        if let Err(e) = self.config.solver.check() {
            let message = e.to_string();
            let line = self
                .seen
                .iter()
                .find(|(k, _)| {
                    k.strip_prefix("solver.")
                        .is_some_and(|f| message.contains(f))
                })
                .map_or(0, |(_, &l)| l);
            self.error(line, format!("solver: {message}"));
        }
        if self.config.solver.dt.is_finite()
            && self.config.cvsr.frequency.is_finite()
            && self.config.solver.dt * self.config.cvsr.frequency > 0.25
        {
            let line = self.line_of("solver.dt");
            self.error(
                line,
                "solver.dt must resolve at least 4 steps per source period",
            );
        }
        if self.config.solver.dt.is_finite()
            && self.config.cvsr.frequency.is_finite()
            && self.config.solver.dt * self.config.cvsr.frequency < 1e-6
        {
            let line = self.line_of("solver.dt");
            self.error(
                line,
                "solver.dt must give at most 1e6 steps per source period",
            );
        }

        let sweep_line = self.sweep.values().map(|&(l, _)| l).min();
        let selections = [
            self.standard_line.map(|l| (l, "scenarios")),
            self.explicit.first().map(|&(l, _)| (l, "scenario.*")),
            sweep_line.map(|l| (l, "sweep.*")),
        ];
        let chosen: Vec<(usize, &str)> = selections.into_iter().flatten().collect();
        if chosen.len() > 1 {
            let names: Vec<&str> = chosen.iter().map(|&(_, n)| n).collect();
            let line = chosen.iter().map(|&(l, _)| l).max().unwrap_or(0);
            self.error(
                line,
                format!("{} are mutually exclusive", names.join(" and ")),
            );
        } else if let Some(line) = sweep_line {
            let sweep = self.sweep.clone();
            let get = |k: &str| sweep.get(k).map(|&(_, v)| v);
            match (get("i_dc_from"), get("i_dc_to"), get("steps")) {
                (Some(from), Some(to), Some(steps)) => {
                    if steps < 2.0 {
                        let line = sweep["steps"].0;
                        self.error(line, format!("sweep.steps = {steps} must be >= 2"));
                    } else if steps > 10_000.0 {
                        let line = sweep["steps"].0;
                        self.error(line, format!("sweep.steps = {steps} must be <= 10000"));
                    }
                    let v_source = get("v_source");
                    if v_source.is_some_and(|v| v < 0.0) {
                        let line = sweep["v_source"].0;
                        self.error(line, "sweep.v_source must be >= 0");
                    }
                    self.config.scenarios = ScenarioSelection::Sweep(SweepSpec {
                        i_dc_from: from,
                        i_dc_to: to,
                        steps: steps as usize,
                        v_source,
                    });
                }
                _ => self.error(
                    line,
                    "a sweep needs sweep.i_dc_from, sweep.i_dc_to and sweep.steps",
                ),
            }
        } else if !self.explicit.is_empty() {
            self.config.scenarios =
                ScenarioSelection::Explicit(self.explicit.iter().map(|(_, s)| s.clone()).collect());
        }

        if self.diagnostics.is_empty() {
            Ok(self.config)
        } else {
            self.diagnostics.sort_by_key(|d| d.line);
            Err(ConfigError {
                diagnostics: self.diagnostics,
            })
        }
    }
}

/// Parses configuration text. Omitted keys keep their defaults; an empty
/// text selects the six standard scenarios.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut parser = Parser::new();
    for (k, raw) in text.lines().enumerate() {
        parser.line(k + 1, raw);
    }
    parser.finish()
}
