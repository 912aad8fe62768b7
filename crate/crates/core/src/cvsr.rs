//! Three-legged continuously variable series reactor.
//!
//! Magnetic layout (bottom yoke is the magnetic ground, the top yoke is one
//! node; yoke lengths are folded into the leg mean lengths):
//!
//! ```text
//!            top yoke
//!     ┌──────────┬──────────┐
//!   dc_left    ac_winding  dc_right     (gyrator magnetic ports)
//!     │       core_mid      │
//!   core_left    │      core_right      (saturating permeances)
//!     │         gap         │           (linear permeance with fringing)
//!     └──────────┴──────────┘
//!            bottom yoke
//! ```
//!
//! Middle-leg flux is oriented upward, outer-leg fluxes downward, so
//! `Φ_mid = Φ_left + Φ_right`. The ac winding sits in series with a sine
//! source and the R-L load; the two dc windings are in series with an ideal
//! current source, wound in opposite senses so that a dc bias circulates
//! through the outer legs and the port voltage is `N_dc·(dΦ_right/dt − dΦ_left/dt)`.

use crate::analysis::{self, InductanceTrace, PowerSummary, WaveformSet};
use crate::circuit::{Circuit, Domain, ElementKind};
use crate::error::{Error, Result};
use crate::magnetics::{
    differential_permeance, gap_permeance_with_fringing, linear_permeance, CoreLegGeometry,
    Orientation, Permeance, SaturationCurve, WindingGyrator,
};
use crate::solver::{run_transient, SolverConfig, TransientError, TransientResult};

pub mod channel {
    pub const I_AC: &str = "i_ac";
    pub const V_AC_TERMINAL: &str = "v_ac_terminal";
    pub const PHI_MID: &str = "phi_mid";
    pub const PHI_LEFT: &str = "phi_left";
    pub const PHI_RIGHT: &str = "phi_right";
    pub const V_DC_TOTAL: &str = "v_dc_total";
    pub const I_DC: &str = "i_dc";
    pub const V_SOURCE: &str = "v_source";
    pub const I_SOURCE: &str = "i_source";
}

pub mod label {
    pub const SOURCE: &str = "source";
    pub const AC_WINDING: &str = "ac_winding";
    pub const R_LOAD: &str = "r_load";
    pub const L_LOAD: &str = "l_load";
    pub const DC_BIAS: &str = "dc_bias";
    pub const DC_LEFT: &str = "dc_left";
    pub const DC_RIGHT: &str = "dc_right";
    pub const CORE_MID: &str = "core_mid";
    pub const CORE_LEFT: &str = "core_left";
    pub const CORE_RIGHT: &str = "core_right";
    pub const GAP: &str = "gap";
}

/// Device, load and source parameters. Defaults describe the reference device.
#[derive(Debug, Clone, PartialEq)]
pub struct CvsrParams {
    pub l_mid: f64,
    pub l_outer: f64,
    pub gap: f64,
    pub area: f64,
    pub n_dc: u32,
    pub n_ac: u32,
    pub b_sat: f64,
    pub mu_r: f64,
    /// Source voltage; peak unless `source_is_rms`.
    pub v_source: f64,
    pub source_is_rms: bool,
    pub frequency: f64,
    pub r_load: f64,
    pub l_load: f64,
    pub i_dc_bias: f64,
    /// Widen the gap cross-section to account for fringing flux.
    pub fringing: bool,
    /// Polarity of the dc winding pair at the dc port. Flipping it reverses
    /// the port voltage; the core bias direction follows `i_dc_bias`.
    pub dc_winding_sense: Orientation,
}

impl Default for CvsrParams {
    fn default() -> Self {
        Self {
            l_mid: 0.4572,
            l_outer: 0.8636,
            gap: 0.002014,
            area: 0.0103,
            n_dc: 225,
            n_ac: 150,
            b_sat: 1.34,
            mu_r: DEFAULT_MU_R,
            v_source: 1200.0,
            source_is_rms: false,
            frequency: 60.0,
            r_load: 100.0,
            l_load: 0.130,
            i_dc_bias: 0.0,
            fringing: true,
            dc_winding_sense: Orientation::Positive,
        }
    }
}

/// Initial relative permeability used when none is configured.
pub const DEFAULT_MU_R: f64 = 8000.0;

impl CvsrParams {
    /// Checks every field, collecting all failures.
    pub fn check(&self) -> std::result::Result<(), Vec<String>> {
        let mut bad = Vec::new();
        let positive = [
            ("l_mid", self.l_mid),
            ("l_outer", self.l_outer),
            ("gap", self.gap),
            ("area", self.area),
            ("b_sat", self.b_sat),
            ("frequency", self.frequency),
            ("r_load", self.r_load),
            ("l_load", self.l_load),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                bad.push(format!("{name} = {v} must be finite and > 0"));
            }
        }
        if !(self.mu_r.is_finite() && self.mu_r > 1.0) {
            bad.push(format!("mu_r = {} must be finite and > 1", self.mu_r));
        }
        if self.n_dc == 0 {
            bad.push("n_dc must be >= 1".into());
        }
        if self.n_ac == 0 {
            bad.push("n_ac must be >= 1".into());
        }
        if !(self.v_source.is_finite() && self.v_source >= 0.0) {
            bad.push(format!(
                "v_source = {} must be finite and >= 0",
                self.v_source
            ));
        }
        if !self.i_dc_bias.is_finite() {
            bad.push(format!("i_dc_bias = {} must be finite", self.i_dc_bias));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(bad)
        }
    }

    pub fn source_amplitude(&self) -> f64 {
        if self.source_is_rms {
            self.v_source * std::f64::consts::SQRT_2
        } else {
            self.v_source
        }
    }

    pub fn curve(&self) -> SaturationCurve {
        SaturationCurve {
            b_sat: self.b_sat,
            mu_r_initial: self.mu_r,
        }
    }

    pub fn mid_geometry(&self) -> CoreLegGeometry {
        CoreLegGeometry {
            length_m: self.l_mid,
            area_m2: self.area,
        }
    }

    pub fn outer_geometry(&self) -> CoreLegGeometry {
        CoreLegGeometry {
            length_m: self.l_outer,
            area_m2: self.area,
        }
    }

    pub fn gap_permeance(&self) -> Result<Permeance> {
        if self.fringing {
            gap_permeance_with_fringing(self.gap, self.area)
        } else {
            linear_permeance(CoreLegGeometry::new(self.gap, self.area)?, 1.0)
        }
    }

    /// Load power factor at the configured frequency.
    pub fn load_power_factor(&self) -> f64 {
        let x = 2.0 * std::f64::consts::PI * self.frequency * self.l_load;
        self.r_load / self.r_load.hypot(x)
    }

    pub fn with_scenario(&self, s: &ScenarioSpec) -> Self {
        Self {
            v_source: s.v_source,
            i_dc_bias: s.i_dc_bias,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub label: String,
    pub v_source: f64,
    pub i_dc_bias: f64,
}

impl ScenarioSpec {
    pub fn new(label: impl Into<String>, v_source: f64, i_dc_bias: f64) -> Self {
        Self {
            label: label.into(),
            v_source,
            i_dc_bias,
        }
    }
}

/// The six standard operating points: {1.2, 3.8} kV × {0, 0.2, 10} A.
pub fn standard_scenarios() -> Vec<ScenarioSpec> {
    vec![
        ScenarioSpec::new("v1200_i0", 1200.0, 0.0),
        ScenarioSpec::new("v1200_critical", 1200.0, 0.2),
        ScenarioSpec::new("v1200_i10", 1200.0, 10.0),
        ScenarioSpec::new("v3800_i0", 3800.0, 0.0),
        ScenarioSpec::new("v3800_i0p2", 3800.0, 0.2),
        ScenarioSpec::new("v3800_i10", 3800.0, 10.0),
    ]
}

/// How the three core legs are modeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoreModel {
    #[default]
    Saturating,
    /// Constant permeance at `mu_r`, for checking against the analytic
    /// reluctance reduction.
    Linear,
}

pub fn build_cvsr(params: &CvsrParams) -> Result<Circuit> {
    build_cvsr_with(params, CoreModel::Saturating)
}

pub fn build_cvsr_with(params: &CvsrParams, core: CoreModel) -> Result<Circuit> {
    params.check().map_err(|bad| {
        Error::InvalidCircuit(
            bad.into_iter()
                .map(|rule| crate::circuit::Violation {
                    subject: "cvsr parameters".into(),
                    rule,
                })
                .collect(),
        )
    })?;

    let mut c = Circuit::new();
    let eg = c.add_ground(Domain::Electrical);
    let mg = c.add_ground(Domain::Magnetic);

    let n_src = c.add_node(Domain::Electrical);
    let n_wind = c.add_node(Domain::Electrical);
    let n_load = c.add_node(Domain::Electrical);
    let n_dc1 = c.add_node(Domain::Electrical);
    let n_dc2 = c.add_node(Domain::Electrical);

    let m_top = c.add_node(Domain::Magnetic);
    let m_mid_upper = c.add_node(Domain::Magnetic);
    let m_mid_lower = c.add_node(Domain::Magnetic);
    let m_left = c.add_node(Domain::Magnetic);
    let m_right = c.add_node(Domain::Magnetic);

    let leg = |geometry: CoreLegGeometry| -> Result<ElementKind> {
        Ok(match core {
            CoreModel::Saturating => ElementKind::FluxCapacitor {
                curve: params.curve(),
                geometry,
            },
            CoreModel::Linear => ElementKind::Capacitor {
                farads: linear_permeance(geometry, params.mu_r)?.value(),
            },
        })
    };

    // ac side
    c.add(
        label::SOURCE,
        ElementKind::SourceSine {
            amplitude: params.source_amplitude(),
            frequency_hz: params.frequency,
            phase_rad: 0.0,
        },
        &[n_src, eg],
    );
    let ac = WindingGyrator::new(params.n_ac, Orientation::Positive)?;
    c.add(
        label::AC_WINDING,
        ElementKind::Gyrator(ac),
        &[n_src, n_wind, m_mid_upper, m_top],
    );
    c.add(
        label::R_LOAD,
        ElementKind::Resistor {
            ohms: params.r_load,
        },
        &[n_wind, n_load],
    );
    c.add(
        label::L_LOAD,
        ElementKind::Inductor {
            henries: params.l_load,
        },
        &[n_load, eg],
    );

    // dc side
    let sense = params.dc_winding_sense;
    c.add(
        label::DC_BIAS,
        ElementKind::SourceCurrentDc {
            amps: params.i_dc_bias * sense.sign(),
            ramp_s: None,
        },
        &[n_dc1, eg],
    );
    let left = WindingGyrator::new(params.n_dc, sense.flipped())?;
    let right = WindingGyrator::new(params.n_dc, sense)?;
    c.add(
        label::DC_LEFT,
        ElementKind::Gyrator(left),
        &[n_dc1, n_dc2, m_top, m_left],
    );
    c.add(
        label::DC_RIGHT,
        ElementKind::Gyrator(right),
        &[n_dc2, eg, m_top, m_right],
    );

    // core
    c.add(
        label::CORE_MID,
        leg(params.mid_geometry())?,
        &[m_mid_lower, m_mid_upper],
    );
    c.add(
        label::GAP,
        ElementKind::Capacitor {
            farads: params.gap_permeance()?.value(),
        },
        &[mg, m_mid_lower],
    );
    c.add(
        label::CORE_LEFT,
        leg(params.outer_geometry())?,
        &[m_left, mg],
    );
    c.add(
        label::CORE_RIGHT,
        leg(params.outer_geometry())?,
        &[m_right, mg],
    );

    c.add_probe(channel::I_AC, format!("{}.i", label::AC_WINDING), 1.0);
    c.add_probe(
        channel::V_AC_TERMINAL,
        format!("{}.v", label::AC_WINDING),
        1.0,
    );
    c.add_probe(channel::PHI_MID, format!("{}.phi", label::CORE_MID), 1.0);
    c.add_probe(channel::PHI_LEFT, format!("{}.phi", label::CORE_LEFT), 1.0);
    c.add_probe(
        channel::PHI_RIGHT,
        format!("{}.phi", label::CORE_RIGHT),
        1.0,
    );
    c.add_probe(channel::V_DC_TOTAL, format!("{}.v", label::DC_BIAS), 1.0);
    c.add_probe(channel::I_DC, format!("{}.i", label::DC_BIAS), 1.0);
    c.add_probe(channel::V_SOURCE, format!("{}.v", label::SOURCE), 1.0);
    c.add_probe(channel::I_SOURCE, format!("{}.i", label::SOURCE), 1.0);

    let report = c.validate();
    report.into_result()?;
    Ok(c)
}

/// Unsaturated device permeance seen by the ac winding:
/// (gap + middle leg) in series with the two outer legs in parallel.
pub fn equivalent_permeance_unsaturated(params: &CvsrParams) -> Result<Permeance> {
    let gap = params.gap_permeance()?;
    let mid = linear_permeance(params.mid_geometry(), params.mu_r)?;
    let outer = linear_permeance(params.outer_geometry(), params.mu_r)?;
    Ok(gap.series(mid).series(outer.parallel(outer)))
}

/// Ac-side inductance of the unsaturated device, `N_ac²·P_eq`.
pub fn unsaturated_inductance(params: &CvsrParams) -> Result<f64> {
    Ok(equivalent_permeance_unsaturated(params)?.inductance(f64::from(params.n_ac)))
}

/// Small-signal ac inductance from the instantaneous differential permeance
/// of every leg, given the leg mmf channels of a run.
pub fn incremental_inductance(params: &CvsrParams, waveforms: &WaveformSet) -> Result<Vec<f64>> {
    let mmf = |l: &str| waveforms.channel(&format!("{l}.v"));
    let (mid, left, right) = (
        mmf(label::CORE_MID)?,
        mmf(label::CORE_LEFT)?,
        mmf(label::CORE_RIGHT)?,
    );
    let gap = params.gap_permeance()?;
    let curve = params.curve();
    let n2 = f64::from(params.n_ac).powi(2);
    Ok((0..mid.len())
        .map(|k| {
            let pm = differential_permeance(mid[k], params.mid_geometry(), curve);
            let pl = differential_permeance(left[k], params.outer_geometry(), curve);
            let pr = differential_permeance(right[k], params.outer_geometry(), curve);
            n2 * gap.series(pm).series(pl.parallel(pr)).value()
        })
        .collect())
}

/// A finished operating point with the derived quantities.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub spec: ScenarioSpec,
    pub params: CvsrParams,
    pub result: TransientResult,
    pub report: ScenarioReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub b_mid: Vec<f64>,
    pub b_left: Vec<f64>,
    pub b_right: Vec<f64>,
    pub inductance: InductanceTrace,
    pub incremental_inductance: Vec<f64>,
    pub dc_power: PowerSummary,
    pub thd_i_ac: f64,
    pub v_dc_dominant_freq: f64,
    pub i_ac_peak: f64,
    pub v_dc_peak: f64,
    pub b_peaks: [f64; 3],
}

/// Fraction of the ac current peak below which λ/i samples are skipped.
pub const INDUCTANCE_GUARD: f64 = 0.01;

pub fn analyze(params: &CvsrParams, w: &WaveformSet) -> Result<ScenarioReport> {
    let i_ac = w.channel(channel::I_AC)?;
    let phi_mid = w.channel(channel::PHI_MID)?;
    let v_dc = w.channel(channel::V_DC_TOTAL)?;
    let i_dc = w.channel(channel::I_DC)?;

    let b_mid = analysis::flux_density(phi_mid, params.area);
    let b_left = analysis::flux_density(w.channel(channel::PHI_LEFT)?, params.area);
    let b_right = analysis::flux_density(w.channel(channel::PHI_RIGHT)?, params.area);

    let i_ac_peak = analysis::peak_abs(i_ac);
    let n_ac = f64::from(params.n_ac);
    let lambda: Vec<f64> = phi_mid.iter().map(|p| n_ac * p).collect();
    let guard = (INDUCTANCE_GUARD * i_ac_peak).max(f64::MIN_POSITIVE);
    let inductance = analysis::equivalent_inductance(&lambda, i_ac, guard)?;

    let spectrum_i = analysis::spectrum(i_ac, w.dt, params.frequency)?;
    let spectrum_v = analysis::spectrum(v_dc, w.dt, params.frequency)?;

    Ok(ScenarioReport {
        b_peaks: [
            analysis::peak_abs(&b_mid),
            analysis::peak_abs(&b_left),
            analysis::peak_abs(&b_right),
        ],
        b_mid,
        b_left,
        b_right,
        incremental_inductance: incremental_inductance(params, w)?,
        inductance,
        dc_power: analysis::power_summary(v_dc, i_dc)?,
        thd_i_ac: spectrum_i.thd,
        v_dc_dominant_freq: if analysis::peak_abs(v_dc) > 0.0 {
            spectrum_v.dominant_frequency
        } else {
            0.0
        },
        i_ac_peak,
        v_dc_peak: analysis::peak_abs(v_dc),
    })
}

/// Builds, simulates and analyzes one operating point.
pub fn run_scenario(
    base: &CvsrParams,
    spec: &ScenarioSpec,
    config: &SolverConfig,
) -> std::result::Result<ScenarioRun, TransientError> {
    let params = base.with_scenario(spec);
    let circuit = build_cvsr(&params)?;
    let result = run_transient(&circuit, params.frequency, config)?;
    let report = analyze(&params, &result.waveforms)?;
    Ok(ScenarioRun {
        spec: spec.clone(),
        params,
        result,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn defaults_match_reference_device() {
        let p = CvsrParams::default();
        assert_eq!(
            (p.l_mid, p.l_outer, p.gap, p.area),
            (0.4572, 0.8636, 0.002014, 0.0103)
        );
        assert_eq!((p.n_dc, p.n_ac, p.b_sat), (225, 150, 1.34));
        assert_eq!((p.r_load, p.l_load), (100.0, 0.130));
        assert!((p.load_power_factor() - 0.9).abs() < 0.01);
        assert_relative_eq!(p.load_power_factor(), 0.898, max_relative = 1e-3);
    }

    #[test]
    fn default_build_validates() {
        let c = build_cvsr(&CvsrParams::default()).unwrap();
        assert!(c.validate().is_empty());
        let count =
            |f: fn(&ElementKind) -> bool| c.elements().iter().filter(|e| f(&e.kind)).count();
        assert_eq!(count(|k| matches!(k, ElementKind::FluxCapacitor { .. })), 3);
        assert_eq!(count(|k| matches!(k, ElementKind::Capacitor { .. })), 1);
        assert_eq!(count(|k| matches!(k, ElementKind::Gyrator(_))), 3);
        assert_eq!(count(|k| k.is_source()), 2);
        assert_eq!(
            count(|k| matches!(
                k,
                ElementKind::Resistor { .. } | ElementKind::Inductor { .. }
            )),
            2
        );
        assert_eq!(c.elements().len(), 11);
    }

    #[test]
    fn outer_legs_mirror() {
        let c = build_cvsr(&CvsrParams::default()).unwrap();
        let get = |l: &str| c.element(c.find(l).unwrap()).clone();
        assert_eq!(get(label::CORE_LEFT).kind, get(label::CORE_RIGHT).kind);
        let (gl, gr) = (get(label::DC_LEFT), get(label::DC_RIGHT));
        match (gl.kind, gr.kind) {
            (ElementKind::Gyrator(a), ElementKind::Gyrator(b)) => {
                assert_eq!(a.turns, b.turns);
                assert_eq!(a.orientation, b.orientation.flipped());
            }
            _ => panic!("dc windings must be gyrators"),
        }
    }

    #[test]
    fn rejects_bad_params() {
        let p = CvsrParams {
            n_ac: 0,
            area: -1.0,
            ..Default::default()
        };
        let bad = p.check().unwrap_err();
        assert!(bad.iter().any(|m| m.contains("n_ac")));
        assert!(bad.iter().any(|m| m.contains("area")));
        assert!(build_cvsr(&p).is_err());
    }

    #[test]
    fn six_standard_scenarios() {
        let s = standard_scenarios();
        assert_eq!(s.len(), 6);
        let critical = s.iter().find(|x| x.label.contains("critical")).unwrap();
        assert_eq!((critical.v_source, critical.i_dc_bias), (1200.0, 0.2));
        let mut labels: Vec<_> = s.iter().map(|x| x.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        assert_eq!(labels.len(), 6);
        for v in [1200.0, 3800.0] {
            for i in [0.0, 0.2, 10.0] {
                assert!(s.iter().any(|x| x.v_source == v && x.i_dc_bias == i));
            }
        }
    }

    #[test]
    fn unsaturated_reluctance_by_hand() {
        let p = CvsrParams {
            fringing: false,
            mu_r: 8000.0,
            ..Default::default()
        };
        let r_eq = equivalent_permeance_unsaturated(&p).unwrap().reluctance();
        // 155 600 (gap) + 4 415 (middle) + 4 170 (outer pair)
        assert_relative_eq!(r_eq, 164_185.0, max_relative = 1e-3);
        assert_relative_eq!(
            unsaturated_inductance(&p).unwrap(),
            0.137,
            max_relative = 2e-3
        );
    }

    #[test]
    fn iron_limit_is_gap_alone() {
        let p = CvsrParams {
            mu_r: 1e12,
            ..Default::default()
        };
        let peq = equivalent_permeance_unsaturated(&p).unwrap().value();
        assert_relative_eq!(peq, p.gap_permeance().unwrap().value(), max_relative = 1e-6);
    }

    #[test]
    fn area_scaling_doubles_permeance() {
        let base = CvsrParams {
            fringing: false,
            ..Default::default()
        };
        let doubled = CvsrParams {
            area: 2.0 * base.area,
            ..base.clone()
        };
        let a = equivalent_permeance_unsaturated(&base).unwrap().value();
        let b = equivalent_permeance_unsaturated(&doubled).unwrap().value();
        assert_relative_eq!(b, 2.0 * a, max_relative = 1e-14);
    }

    #[test]
    fn rms_source_interpretation() {
        let p = CvsrParams {
            source_is_rms: true,
            ..Default::default()
        };
        assert_relative_eq!(p.source_amplitude(), 1200.0 * 2f64.sqrt());
    }
}
