//! Fixed-step implicit transient integration.
//!
//! Each step solves the trapezoidal companion network with damped
//! Newton-Raphson, starting from the previous accepted solution. The
//! integrator restarts with backward Euler on the first step, since the
//! branch currents at t = 0 are not part of the state, and on the step that
//! starts where the dc ramp ends.

use thiserror::Error;

use crate::analysis::WaveformSet;
use crate::circuit::{
    advance, restarts, stamp_with_layout, state_origin, Circuit, Layout, LinearSystem, Recorder,
    SourceSchedule, SystemState,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Requested step (s). Runs shrink it slightly so that a source period is
    /// a whole number of steps.
    pub dt: f64,
    pub newton_tol_rel: f64,
    pub newton_tol_abs: f64,
    pub max_newton_iters: usize,
    pub max_halvings: usize,
    pub startup_ramp_cycles: usize,
    pub settle_cycles: usize,
    pub analysis_cycles: usize,
    /// Keep channels for the entire run, not just the analysis window.
    pub keep_full_waveforms: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 1e-5,
            newton_tol_rel: 1e-9,
            newton_tol_abs: 1e-12,
            max_newton_iters: 50,
            max_halvings: 8,
            startup_ramp_cycles: 2,
            settle_cycles: 5,
            analysis_cycles: 2,
            keep_full_waveforms: false,
        }
    }
}

impl SolverConfig {
    pub fn check(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("newton_tol_rel", self.newton_tol_rel),
            ("newton_tol_abs", self.newton_tol_abs),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    value,
                    rule: "must be finite and > 0",
                });
            }
        }
        let counts = [
            ("max_newton_iters", self.max_newton_iters),
            ("startup_ramp_cycles", self.startup_ramp_cycles),
            ("settle_cycles", self.settle_cycles),
            ("analysis_cycles", self.analysis_cycles),
        ];
        for (name, value) in counts {
            if value < 1 {
                return Err(Error::InvalidParameter {
                    name,
                    value: value as f64,
                    rule: "must be >= 1",
                });
            }
        }
        Ok(())
    }

    /// Steps per period of `frequency_hz`, rounding the requested step down.
    pub fn steps_per_period(&self, frequency_hz: f64) -> usize {
        let exact = 1.0 / (frequency_hz * self.dt);
        let nearest = exact.round();
        if (exact - nearest).abs() <= 1e-9 * exact {
            nearest as usize
        } else {
            exact.ceil() as usize
        }
    }
}

/// Result of one converged Newton solve.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Damped Newton-Raphson on a system that can linearize itself.
///
/// `linearize(x)` returns the Jacobian at `x` together with `−F(x)`. The
/// iteration stops once `‖F‖ ≤ tol_abs + tol_rel·‖F(x₀)‖`. A full step that
/// increases `‖F‖` is halved up to `max_halvings` times.
pub fn newton_solve<P>(mut linearize: P, x0: &[f64], config: &SolverConfig) -> Result<NewtonOutcome>
where
    P: FnMut(&[f64]) -> Result<LinearSystem>,
{
    let mut x = x0.to_vec();
    let mut sys = linearize(&x)?;
    let mut residual = sys.residual_norm();
    let tol = config.newton_tol_abs + config.newton_tol_rel * residual;
    let mut iterations = 0;

    while residual > tol {
        if iterations == config.max_newton_iters {
            return Err(Error::NonConvergence {
                iterations,
                residual,
            });
        }
        let dx = sys.matrix.solve(&sys.rhs)?;
        iterations += 1;

        let mut lambda = 1.0;
        let mut halvings = 0;
        loop {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + lambda * d).collect();
            let candidate = linearize(&trial);
            let improved = match &candidate {
                Ok(s) => s.residual_norm() <= residual,
                Err(Error::NonFinite { .. }) => false,
                Err(_) => true,
            };
            if improved || halvings == config.max_halvings {
                let s = candidate?;
                x = trial;
                residual = s.residual_norm();
                sys = s;
                break;
            }
            lambda *= 0.5;
            halvings += 1;
        }
    }
    Ok(NewtonOutcome {
        x,
        iterations,
        residual,
    })
}

/// Substeps of a step that restarts the integrator.
pub const RESTART_SUBSTEPS: usize = 64;

/// Newton effort of one accepted step; for a subdivided step, the worst
/// substep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Steps a circuit with a cached unknown layout.
#[derive(Debug)]
pub struct Stepper<'a> {
    circuit: &'a Circuit,
    layout: Layout,
    schedule: SourceSchedule,
}

impl<'a> Stepper<'a> {
    pub fn new(circuit: &'a Circuit, schedule: SourceSchedule) -> Self {
        Self {
            circuit,
            layout: Layout::new(circuit),
            schedule,
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Advances `state` by `dt`. A step that restarts the integrator is split
    /// into [`RESTART_SUBSTEPS`] substeps: only the first is backward Euler, so
    /// the alternating error it leaves behind, which the trapezoidal rule
    /// never damps, shrinks by the same factor.
    pub fn step(
        &self,
        state: &SystemState,
        dt: f64,
        config: &SolverConfig,
    ) -> Result<(SystemState, StepStats)> {
        if !restarts(self.circuit, state, dt, &self.schedule) {
            return self.single(state, dt, config);
        }
        let h = dt / RESTART_SUBSTEPS as f64;
        let mut s = state.clone();
        let mut stats = StepStats {
            iterations: 0,
            residual: 0.0,
        };
        for _ in 0..RESTART_SUBSTEPS {
            let (next, sub) = self.single(&s, h, config)?;
            s = next;
            stats.iterations = stats.iterations.max(sub.iterations);
            stats.residual = stats.residual.max(sub.residual);
        }
        s.time = state_origin(state, dt) + (state.steps + 1) as f64 * dt;
        s.steps = state.steps + 1;
        Ok((s, stats))
    }

    fn single(
        &self,
        state: &SystemState,
        dt: f64,
        config: &SolverConfig,
    ) -> Result<(SystemState, StepStats)> {
        let outcome = newton_solve(
            |x| stamp_with_layout(self.circuit, &self.layout, state, x, dt, &self.schedule),
            &state.unknowns,
            config,
        )
        .map_err(|e| Error::AtTime {
            time: state.time + dt,
            source: Box::new(e),
        })?;
        let stats = StepStats {
            iterations: outcome.iterations,
            residual: outcome.residual,
        };
        Ok((
            advance(
                self.circuit,
                &self.layout,
                state,
                outcome.x,
                dt,
                &self.schedule,
            ),
            stats,
        ))
    }
}

/// Advances `state` by `config.dt` with no dc ramp.
pub fn step(circuit: &Circuit, state: &SystemState, config: &SolverConfig) -> Result<SystemState> {
    Stepper::new(circuit, SourceSchedule::default())
        .step(state, config.dt, config)
        .map(|(s, _)| s)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverStats {
    /// Newton iterations per accepted step.
    pub iterations: Vec<u32>,
    /// Final residual norm per accepted step.
    pub residuals: Vec<f64>,
}

impl SolverStats {
    pub fn steps(&self) -> usize {
        self.iterations.len()
    }

    pub fn max_iterations(&self) -> u32 {
        self.iterations.iter().copied().max().unwrap_or(0)
    }

    pub fn total_iterations(&self) -> u64 {
        self.iterations.iter().map(|&i| u64::from(i)).sum()
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransientResult {
    /// Analysis window: `analysis_cycles` whole periods, end point excluded.
    pub waveforms: WaveformSet,
    pub full_waveforms: Option<WaveformSet>,
    pub stats: SolverStats,
    /// Step actually used.
    pub dt: f64,
    pub steps_per_period: usize,
}

#[derive(Debug, Error)]
#[error("{error}")]
pub struct TransientError {
    #[source]
    pub error: Error,
    /// Everything recorded up to the failure.
    pub partial: Option<WaveformSet>,
}

impl From<Error> for TransientError {
    fn from(error: Error) -> Self {
        Self {
            error,
            partial: None,
        }
    }
}

/// Runs `circuit` from rest to periodic steady state.
///
/// Dc sources ramp linearly over `startup_ramp_cycles`, the circuit then
/// settles for `settle_cycles`, and the final `analysis_cycles` are returned.
pub fn run_transient(
    circuit: &Circuit,
    fundamental_hz: f64,
    config: &SolverConfig,
) -> std::result::Result<TransientResult, TransientError> {
    config.check()?;
    if !(fundamental_hz.is_finite() && fundamental_hz > 0.0) {
        return Err(Error::InvalidParameter {
            name: "fundamental_hz",
            value: fundamental_hz,
            rule: "must be finite and > 0",
        }
        .into());
    }
    circuit.validate().into_result()?;

    let spp = config.steps_per_period(fundamental_hz);
    let dt = 1.0 / (fundamental_hz * spp as f64);
    let schedule = SourceSchedule {
        dc_ramp_s: Some(config.startup_ramp_cycles as f64 / fundamental_hz),
    };
    let warmup = (config.startup_ramp_cycles + config.settle_cycles) * spp;
    let window = config.analysis_cycles * spp;
    let total = warmup + window;

    let stepper = Stepper::new(circuit, schedule);
    let mut recorder = Recorder::new(circuit, schedule);
    let mut stats = SolverStats::default();
    let mut state = SystemState::at_rest(circuit);
    recorder.push(&state);

    for _ in 0..total {
        match stepper.step(&state, dt, config) {
            Ok((next, s)) => {
                stats.iterations.push(s.iterations as u32);
                stats.residuals.push(s.residual);
                state = next;
                recorder.push(&state);
            }
            Err(error) => {
                let partial = recorder.finish(0.0, dt).ok();
                return Err(TransientError { error, partial });
            }
        }
    }

    let waveforms = recorder.window(warmup, window, warmup as f64 * dt, dt)?;
    let full_waveforms = if config.keep_full_waveforms {
        Some(recorder.finish(0.0, dt)?)
    } else {
        None
    };
    Ok(TransientResult {
        waveforms,
        full_waveforms,
        stats,
        dt,
        steps_per_period: spp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{Domain, ElementKind};
    use crate::linalg::DenseMatrix;

    fn scalar(f: impl Fn(f64) -> (f64, f64)) -> impl FnMut(&[f64]) -> Result<LinearSystem> {
        move |x: &[f64]| {
            let (v, d) = f(x[0]);
            Ok(LinearSystem {
                matrix: DenseMatrix::from_rows(&[&[d]]),
                rhs: vec![-v],
            })
        }
    }

    #[test]
    fn newton_square_root() {
        let out = newton_solve(
            scalar(|x| (x * x - 4.0, 2.0 * x)),
            &[3.0],
            &SolverConfig::default(),
        )
        .unwrap();
        assert!((out.x[0] - 2.0).abs() < 1e-9);
        assert!(out.iterations <= 8);
        assert!(out.residual <= 1e-12 + 1e-9 * 5.0);
    }

    #[test]
    fn newton_linear_one_iteration() {
        let a = DenseMatrix::from_rows(&[&[4.0, 1.0], &[2.0, 3.0]]);
        let b = [1.0, 2.0];
        let out = newton_solve(
            |x: &[f64]| {
                let ax = a.mul_vec(x);
                Ok(LinearSystem {
                    matrix: a.clone(),
                    rhs: b.iter().zip(ax).map(|(b, ax)| b - ax).collect(),
                })
            },
            &[0.0, 0.0],
            &SolverConfig::default(),
        )
        .unwrap();
        assert_eq!(out.iterations, 1);
        assert!((out.x[0] - 0.1).abs() < 1e-15 && (out.x[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn newton_no_real_root() {
        let err = newton_solve(
            scalar(|x| (x * x + 1.0, 2.0 * x)),
            &[0.5],
            &SolverConfig::default(),
        )
        .unwrap_err();
        assert!(
            matches!(err, Error::NonConvergence { iterations: 50, .. }),
            "{err:?}"
        );
    }

    #[test]
    fn newton_no_real_root_from_one_hits_stationary_point() {
        // x0 = 1 maps exactly onto x = 0 where the derivative vanishes.
        let err = newton_solve(
            scalar(|x| (x * x + 1.0, 2.0 * x)),
            &[1.0],
            &SolverConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Singular { pivot: 0 }), "{err:?}");
    }

    #[test]
    fn newton_damping_halves_overshoot() {
        // atan has a basin of ~1.39; from 2.0 undamped Newton diverges.
        let out = newton_solve(
            scalar(|x| (x.atan(), 1.0 / (1.0 + x * x))),
            &[2.0],
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(out.x[0].abs() < 1e-9);
    }

    fn rc() -> (Circuit, SystemState) {
        let mut c = Circuit::new();
        let g = c.add_ground(Domain::Electrical);
        let a = c.add_node(Domain::Electrical);
        c.add("c", ElementKind::Capacitor { farads: 1.0 }, &[a, g]);
        c.add("r", ElementKind::Resistor { ohms: 1.0 }, &[a, g]);
        let s = SystemState::from_unknowns(&c, vec![1.0]);
        (c, s)
    }

    #[test]
    fn rc_discharge() {
        let (c, mut s) = rc();
        let cfg = SolverConfig {
            dt: 1e-3,
            ..Default::default()
        };
        for _ in 0..1000 {
            s = step(&c, &s, &cfg).unwrap();
        }
        assert!((s.time - 1.0).abs() < 1e-12);
        let v = s.unknowns[0];
        assert!((v - (-1.0f64).exp()).abs() < 1e-4, "v = {v}");
    }

    #[test]
    fn rest_stays_at_rest() {
        let mut c = Circuit::new();
        let g = c.add_ground(Domain::Electrical);
        let a = c.add_node(Domain::Electrical);
        let b = c.add_node(Domain::Electrical);
        c.add("l", ElementKind::Inductor { henries: 0.1 }, &[a, b]);
        c.add("c", ElementKind::Capacitor { farads: 1e-3 }, &[b, g]);
        c.add("r", ElementKind::Resistor { ohms: 10.0 }, &[a, g]);
        let mut s = SystemState::at_rest(&c);
        let cfg = SolverConfig::default();
        for _ in 0..100 {
            s = step(&c, &s, &cfg).unwrap();
        }
        assert!(s.unknowns.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn window_bookkeeping() {
        let mut c = Circuit::new();
        let g = c.add_ground(Domain::Electrical);
        let a = c.add_node(Domain::Electrical);
        c.add(
            "vs",
            ElementKind::SourceSine {
                amplitude: 1.0,
                frequency_hz: 50.0,
                phase_rad: 0.0,
            },
            &[a, g],
        );
        c.add("r", ElementKind::Resistor { ohms: 1.0 }, &[a, g]);
        let cfg = SolverConfig {
            dt: 1e-4,
            settle_cycles: 1,
            startup_ramp_cycles: 1,
            analysis_cycles: 3,
            ..Default::default()
        };
        let res = run_transient(&c, 50.0, &cfg).unwrap();
        assert_eq!(res.steps_per_period, 200);
        let w = &res.waveforms;
        assert_eq!(w.len(), 600);
        assert!((w.len() as f64 * w.dt - 3.0 / 50.0).abs() < 1e-15);
        assert!((w.t0 - 2.0 / 50.0).abs() < 1e-12);
        assert_eq!(res.stats.steps(), 1000);
    }

    #[test]
    fn step_snaps_to_whole_periods() {
        let cfg = SolverConfig::default();
        let spp = cfg.steps_per_period(60.0);
        assert_eq!(spp, 1667);
        assert!(1.0 / (60.0 * spp as f64) <= cfg.dt);
    }

    #[test]
    fn rejects_invalid_circuit() {
        let mut c = Circuit::new();
        let a = c.add_node(Domain::Electrical);
        let b = c.add_node(Domain::Electrical);
        c.add("r", ElementKind::Resistor { ohms: 1.0 }, &[a, b]);
        let err = run_transient(&c, 60.0, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err.error, Error::InvalidCircuit(_)));
    }
}
