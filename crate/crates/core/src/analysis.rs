//! Post-processing of sampled waveforms: flux density, dc-winding EMF,
//! equivalent inductance, power exchange and harmonic content.

use std::collections::BTreeMap;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Uniformly sampled named channels.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformSet {
    pub t0: f64,
    pub dt: f64,
    pub channels: BTreeMap<String, Vec<f64>>,
}

impl WaveformSet {
    pub fn new(t0: f64, dt: f64) -> Self {
        Self {
            t0,
            dt,
            channels: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.channels.values().next().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, name: &str) -> Result<&[f64]> {
        self.channels
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingChannel(name.to_owned()))
    }

    pub fn has(&self, name: &str) -> bool {
        self.channels.contains_key(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, samples: Vec<f64>) -> Result<()> {
        if !self.channels.is_empty() && samples.len() != self.len() {
            return Err(Error::LengthMismatch {
                left: self.len(),
                right: samples.len(),
            });
        }
        self.channels.insert(name.into(), samples);
        Ok(())
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    /// Window length in seconds (samples × dt).
    pub fn duration(&self) -> f64 {
        self.len() as f64 * self.dt
    }
}

/// Summary of power flowing through one port.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSummary {
    pub p_real: f64,
    pub s_apparent: f64,
    pub q_reactive: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumResult {
    pub frequencies: Vec<f64>,
    /// Per-bin rms amplitude: the squares sum to the window mean square.
    pub magnitudes: Vec<f64>,
    pub dominant_frequency: f64,
    pub thd: f64,
    /// Bin index of the fundamental.
    pub fundamental_bin: usize,
}

impl SpectrumResult {
    /// Rms amplitude of harmonic `k` of the fundamental (0 beyond Nyquist).
    pub fn harmonic(&self, k: usize) -> f64 {
        self.magnitudes
            .get(k * self.fundamental_bin)
            .copied()
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InductanceTrace {
    /// L(t), with guarded samples filled by linear interpolation.
    pub samples: Vec<f64>,
    /// Which samples passed the zero-crossing guard.
    pub included: Vec<bool>,
    pub mean: f64,
    pub peak: f64,
}

pub fn flux_density(phi: &[f64], area_m2: f64) -> Vec<f64> {
    phi.iter().map(|p| p / area_m2).collect()
}

/// Central-difference derivative, one-sided at both ends.
pub fn derivative(x: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n)
            .map(|k| {
                if k == 0 {
                    (x[1] - x[0]) / dt
                } else if k == n - 1 {
                    (x[n - 1] - x[n - 2]) / dt
                } else {
                    (x[k + 1] - x[k - 1]) / (2.0 * dt)
                }
            })
            .collect(),
    }
}

/// Net EMF of the series dc windings, `N_dc·(dΦ_right/dt − dΦ_left/dt)`.
pub fn dc_winding_voltage(
    phi_right: &[f64],
    phi_left: &[f64],
    n_dc: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    if phi_right.len() != phi_left.len() {
        return Err(Error::LengthMismatch {
            left: phi_right.len(),
            right: phi_left.len(),
        });
    }
    let diff: Vec<f64> = phi_right.iter().zip(phi_left).map(|(r, l)| r - l).collect();
    Ok(derivative(&diff, dt)
        .into_iter()
        .map(|d| n_dc * d)
        .collect())
}

/// Secant inductance `λ/i`, skipping samples with `|i| < exclusion_eps`.
pub fn equivalent_inductance(
    flux_linkage: &[f64],
    current: &[f64],
    exclusion_eps: f64,
) -> Result<InductanceTrace> {
    if flux_linkage.len() != current.len() {
        return Err(Error::LengthMismatch {
            left: flux_linkage.len(),
            right: current.len(),
        });
    }
    if exclusion_eps.is_nan() || exclusion_eps <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "exclusion_eps",
            value: exclusion_eps,
            rule: "must be > 0",
        });
    }
    let included: Vec<bool> = current.iter().map(|i| i.abs() >= exclusion_eps).collect();
    let raw: Vec<f64> = flux_linkage
        .iter()
        .zip(current)
        .map(|(l, i)| l / i)
        .collect();
    let kept: Vec<usize> = (0..raw.len()).filter(|&k| included[k]).collect();
    if kept.is_empty() {
        return Err(Error::AllExcluded);
    }
    let mean = kept.iter().map(|&k| raw[k]).sum::<f64>() / kept.len() as f64;
    let peak = kept
        .iter()
        .map(|&k| raw[k])
        .fold(f64::NEG_INFINITY, f64::max);

    let mut samples = raw;
    let mut prev: Option<usize> = None;
    let mut next_pos = 0;
    for k in 0..samples.len() {
        if included[k] {
            prev = Some(k);
            continue;
        }
        while next_pos < kept.len() && kept[next_pos] < k {
            next_pos += 1;
        }
        let next = kept.get(next_pos).copied();
        samples[k] = match (prev, next) {
            (Some(a), Some(b)) => {
                let w = (k - a) as f64 / (b - a) as f64;
                samples[a] * (1.0 - w) + samples[b] * w
            }
            (Some(a), None) => samples[a],
            (None, Some(b)) => samples[b],
            (None, None) => unreachable!("kept is nonempty"),
        };
    }
    Ok(InductanceTrace {
        samples,
        included,
        mean,
        peak,
    })
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn peak_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Real, apparent and reactive power of a port with voltage `v` and current
/// `i` sampled over whole periods. Reactive power is `√(S² − P²)`.
pub fn power_summary(v: &[f64], i: &[f64]) -> Result<PowerSummary> {
    if v.len() != i.len() {
        return Err(Error::LengthMismatch {
            left: v.len(),
            right: i.len(),
        });
    }
    let p_real = mean(&v.iter().zip(i).map(|(a, b)| a * b).collect::<Vec<_>>());
    let s_apparent = rms(v) * rms(i);
    let q_reactive = (s_apparent * s_apparent - p_real * p_real).max(0.0).sqrt();
    Ok(PowerSummary {
        p_real,
        s_apparent,
        q_reactive,
    })
}

/// Discrete Fourier magnitudes of a window spanning whole periods of `f0`.
pub fn spectrum(series: &[f64], dt: f64, f0: f64) -> Result<SpectrumResult> {
    let n = series.len();
    if n < 2 {
        return Err(Error::Empty("spectrum needs at least two samples"));
    }
    let periods = n as f64 * dt * f0;
    let whole = periods.round();
    if whole < 1.0 || (periods - whole).abs() > 1e-6 * periods.max(1.0) {
        return Err(Error::NonIntegerPeriods { periods });
    }
    let fundamental_bin = whole as usize;

    let mut buf: Vec<Complex<f64>> = series.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let half = n / 2;
    let nf = n as f64;
    let magnitudes: Vec<f64> = (0..=half)
        .map(|k| {
            let a = buf[k].norm() / nf;
            if k == 0 || (n.is_multiple_of(2) && k == half) {
                a
            } else {
                a * std::f64::consts::SQRT_2
            }
        })
        .collect();
    let frequencies: Vec<f64> = (0..=half).map(|k| k as f64 / (nf * dt)).collect();

    let dominant = (1..magnitudes.len())
        .max_by(|&a, &b| magnitudes[a].total_cmp(&magnitudes[b]).then(b.cmp(&a)))
        .unwrap_or(0);

    let fundamental = magnitudes.get(fundamental_bin).copied().unwrap_or(0.0);
    let harmonics: f64 = (2..)
        .map(|k| k * fundamental_bin)
        .take_while(|&b| b < magnitudes.len())
        .map(|b| magnitudes[b] * magnitudes[b])
        .sum();
    let thd = if fundamental > 0.0 {
        harmonics.sqrt() / fundamental
    } else {
        f64::INFINITY
    };

    Ok(SpectrumResult {
        frequencies,
        magnitudes,
        dominant_frequency: dominant as f64 / (nf * dt),
        thd,
        fundamental_bin,
    })
}
