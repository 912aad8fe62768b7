//! Byte-stable CSV and JSON emission.

use std::fmt::Write as _;

use gcsim_core::analysis::WaveformSet;
use gcsim_core::cvsr::{channel, ScenarioRun};
use serde::Serialize;

pub const CSV_HEADER: &str = "t,i_ac,v_ac_terminal,B_mid,B_left,B_right,v_dc,L_inst";

/// Nine significant digits in scientific notation; negative zero prints as
/// zero so that sign noise cannot change the bytes.
pub fn format_number(x: f64) -> String {
    if x == 0.0 {
        return "0.00000000e0".into();
    }
    format!("{x:.8e}")
}

/// Rounds to the nine significant digits the CSV carries.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

fn write_rows(out: &mut String, header: &str, t0: f64, dt: f64, columns: &[&[f64]]) {
    out.push_str(header);
    out.push('\n');
    let rows = columns.iter().map(|c| c.len()).min().unwrap_or(0);
    for k in 0..rows {
        out.push_str(&format_number(t0 + k as f64 * dt));
        for c in columns {
            out.push(',');
            out.push_str(&format_number(c[k]));
        }
        out.push('\n');
    }
}

/// The analysis-window CSV of one finished scenario.
pub fn scenario_csv(run: &ScenarioRun) -> String {
    let w = &run.result.waveforms;
    let r = &run.report;
    let get = |name: &str| w.channel(name).unwrap_or(&[]);
    let columns: [&[f64]; 7] = [
        get(channel::I_AC),
        get(channel::V_AC_TERMINAL),
        &r.b_mid,
        &r.b_left,
        &r.b_right,
        get(channel::V_DC_TOTAL),
        &r.inductance.samples,
    ];
    let mut out = String::with_capacity(w.len() * 16 * 8);
    write_rows(&mut out, CSV_HEADER, w.t0, w.dt, &columns);
    out
}

/// Every recorded channel, in name order, under a `t` column.
pub fn raw_csv(w: &WaveformSet) -> String {
    let mut header = String::from("t");
    let mut columns: Vec<&[f64]> = Vec::new();
    for (name, samples) in &w.channels {
        let _ = write!(header, ",{name}");
        columns.push(samples);
    }
    let mut out = String::new();
    write_rows(&mut out, &header, w.t0, w.dt, &columns);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LegPeaks {
    pub mid: f64,
    pub left: f64,
    pub right: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverSummary {
    pub dt: f64,
    pub steps_per_period: usize,
    pub steps: usize,
    pub max_newton_iterations: u32,
    pub total_newton_iterations: u64,
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[allow(non_snake_case)]
pub struct ScenarioSummary {
    pub label: String,
    pub v_source: f64,
    pub i_dc_bias: f64,
    pub L_peak: f64,
    pub L_mean: f64,
    pub P_dc: f64,
    pub Q_dc: f64,
    pub S_dc: f64,
    pub thd_i_ac: f64,
    pub v_dc_dominant_freq: f64,
    pub v_dc_peak: f64,
    pub i_ac_peak: f64,
    pub B_peaks: LegPeaks,
    pub solver_stats: SolverSummary,
}

impl ScenarioSummary {
    pub fn from_run(run: &ScenarioRun) -> Self {
        let r = &run.report;
        let s = &run.result.stats;
        Self {
            label: run.spec.label.clone(),
            v_source: round_sig(run.spec.v_source),
            i_dc_bias: round_sig(run.spec.i_dc_bias),
            L_peak: round_sig(r.inductance.peak),
            L_mean: round_sig(r.inductance.mean),
            P_dc: round_sig(r.dc_power.p_real),
            Q_dc: round_sig(r.dc_power.q_reactive),
            S_dc: round_sig(r.dc_power.s_apparent),
            thd_i_ac: round_sig(r.thd_i_ac),
            v_dc_dominant_freq: round_sig(r.v_dc_dominant_freq),
            v_dc_peak: round_sig(r.v_dc_peak),
            i_ac_peak: round_sig(r.i_ac_peak),
            B_peaks: LegPeaks {
                mid: round_sig(r.b_peaks[0]),
                left: round_sig(r.b_peaks[1]),
                right: round_sig(r.b_peaks[2]),
            },
            solver_stats: SolverSummary {
                dt: round_sig(run.result.dt),
                steps_per_period: run.result.steps_per_period,
                steps: s.steps(),
                max_newton_iterations: s.max_iterations(),
                total_newton_iterations: s.total_iterations(),
                max_residual: round_sig(s.max_residual()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailedScenario {
    pub label: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCheck {
    /// L_mean never rises as |i_dc| grows.
    pub l_mean_monotone_nonincreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenarios: Vec<ScenarioSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub failed: Vec<FailedScenario>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepCheck>,
}

impl Summary {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }
}

/// True when `values` never increase, allowing relative noise of `rel_tol`.
pub fn nonincreasing(values: &[f64], rel_tol: f64) -> bool {
    values
        .windows(2)
        .all(|w| w[1] <= w[0] + rel_tol * w[0].abs().max(w[1].abs()))
}
