use std::f64::consts::PI;

use gcsim_core::analysis::{dc_winding_voltage, rms};
use gcsim_core::cvsr::{channel, run_scenario, CvsrParams, ScenarioRun, ScenarioSpec};
use gcsim_core::magnetics::Orientation;
use gcsim_core::{run_transient, Circuit, Domain, ElementKind, SolverConfig};

fn scenario(params: &CvsrParams, v: f64, i: f64) -> ScenarioRun {
    run_scenario(
        params,
        &ScenarioSpec::new("t", v, i),
        &SolverConfig::default(),
    )
    .unwrap()
}

fn ch<'a>(run: &'a ScenarioRun, name: &str) -> &'a [f64] {
    run.result.waveforms.channel(name).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn rl_load_matches_phasor() {
    let (r, l, f, v) = (100.0, 0.13, 60.0, 1200.0);
    let mut c = Circuit::new();
    let g = c.add_ground(Domain::Electrical);
    let a = c.add_node(Domain::Electrical);
    let b = c.add_node(Domain::Electrical);
    c.add(
        "src",
        ElementKind::SourceSine {
            amplitude: v,
            frequency_hz: f,
            phase_rad: 0.0,
        },
        &[a, g],
    );
    c.add("r", ElementKind::Resistor { ohms: r }, &[a, b]);
    c.add("l", ElementKind::Inductor { henries: l }, &[b, g]);
    let config = SolverConfig {
        settle_cycles: 20,
        ..SolverConfig::default()
    };
    let res = run_transient(&c, f, &config).unwrap();
    let w = &res.waveforms;
    let i = w.channel("r.i").unwrap();

    let x = 2.0 * PI * f * l;
    let (mag, phase) = (v / r.hypot(x), -(x / r).atan());
    let worst = (0..w.len())
        .map(|k| (i[k] - mag * (2.0 * PI * f * w.time(k) + phase).sin()).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-3 * mag, "worst deviation {worst}");
}

#[test]
fn dc_voltage_from_flux_derivative_agrees() {
    let p = CvsrParams::default();
    let run = scenario(&p, 1200.0, 0.2);
    let w = &run.result.waveforms;
    let derived = dc_winding_voltage(
        ch(&run, channel::PHI_RIGHT),
        ch(&run, channel::PHI_LEFT),
        f64::from(p.n_dc),
        w.dt,
    )
    .unwrap();
    let solved = ch(&run, channel::V_DC_TOTAL);
    let err: Vec<f64> = derived.iter().zip(solved).map(|(a, b)| a - b).collect();
    assert!(
        rms(&err) <= 5e-3 * rms(solved),
        "{} vs {}",
        rms(&err),
        rms(solved)
    );
}

#[test]
fn reversing_bias_mirrors_outer_legs() {
    let p = CvsrParams::default();
    let pos = scenario(&p, 1200.0, 0.2);
    let neg = scenario(&p, 1200.0, -0.2);
    assert!(max_diff(&pos.report.b_left, &neg.report.b_right) < 1e-9);
    assert!(max_diff(&pos.report.b_mid, &neg.report.b_mid) < 1e-9);
    let v: Vec<f64> = ch(&neg, channel::V_DC_TOTAL).iter().map(|x| -x).collect();
    assert!(max_diff(ch(&pos, channel::V_DC_TOTAL), &v) < 1e-6 * pos.report.v_dc_peak);
}

#[test]
fn winding_sense_flips_port_voltage_only() {
    let p = CvsrParams::default();
    let flipped = CvsrParams {
        dc_winding_sense: Orientation::Negative,
        ..p.clone()
    };
    let a = scenario(&p, 1200.0, 0.2);
    let b = scenario(&flipped, 1200.0, 0.2);
    assert!(max_diff(&a.report.b_left, &b.report.b_left) < 1e-12);
    assert!(max_diff(&a.report.b_right, &b.report.b_right) < 1e-12);
    let v: Vec<f64> = ch(&b, channel::V_DC_TOTAL).iter().map(|x| -x).collect();
    assert!(max_diff(ch(&a, channel::V_DC_TOTAL), &v) < 1e-9 * a.report.v_dc_peak);
}

#[test]
fn analysis_window_is_periodic() {
    let run = scenario(&CvsrParams::default(), 3800.0, 0.2);
    let spp = run.result.steps_per_period;
    for name in [
        channel::I_AC,
        channel::V_AC_TERMINAL,
        channel::PHI_LEFT,
        channel::V_DC_TOTAL,
    ] {
        let x = ch(&run, name);
        let scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let drift = max_diff(&x[..spp], &x[spp..2 * spp]);
        assert!(drift < 5e-3 * scale, "{name}: {drift} of {scale}");
    }
}

#[test]
fn runs_are_deterministic() {
    let p = CvsrParams::default();
    let a = scenario(&p, 3800.0, 10.0);
    let b = scenario(&p, 3800.0, 10.0);
    assert_eq!(a.result.waveforms, b.result.waveforms);
    assert_eq!(a.report, b.report);
}

#[test]
fn bias_lowers_inductance() {
    let p = CvsrParams::default();
    let l: Vec<f64> = [0.0, 1.0, 10.0]
        .iter()
        .map(|&i| scenario(&p, 1200.0, i).report.inductance.mean)
        .collect();
    assert!(l[0] > l[1] && l[1] > l[2], "{l:?}");
}

#[test]
fn halving_dt_quarters_error_against_fine_reference() {
    let params = CvsrParams::default().with_scenario(&ScenarioSpec::new("t", 1200.0, 0.2));
    let circuit = gcsim_core::cvsr::build_cvsr(&params).unwrap();
    let i_ac = |spp: usize| {
        let config = SolverConfig {
            dt: 1.0 / (params.frequency * spp as f64),
            ..SolverConfig::default()
        };
        let r = run_transient(&circuit, params.frequency, &config).unwrap();
        r.waveforms.channel(channel::I_AC).unwrap().to_vec()
    };
    let reference = i_ac(3200);
    let deviation = |spp: usize| {
        let x = i_ac(spp);
        let stride = 3200 / spp;
        let err: Vec<f64> = (0..x.len()).map(|k| x[k] - reference[k * stride]).collect();
        rms(&err)
    };
    let ratio = deviation(400) / deviation(800);
    assert!((3.5..=4.5).contains(&ratio), "error ratio {ratio}");
}
