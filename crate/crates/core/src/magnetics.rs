//! Magnetic-domain physics: permeances, the saturating B(H) law of a core
//! leg, air-gap fringing and the winding gyrator.
//!
//! Units follow the gyrator-capacitor analogy: magnetic node potential is
//! magnetomotive force in amp-turns, branch flow is dΦ/dt in Wb/s, and a
//! permeance (Wb per amp-turn) plays the role of a capacitance.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Permeability of free space (H/m).
pub const MU_0: f64 = 4.0 * PI * 1e-7;

/// Mean path length and cross-section of one magnetic path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoreLegGeometry {
    pub length_m: f64,
    pub area_m2: f64,
}

impl CoreLegGeometry {
    pub fn new(length_m: f64, area_m2: f64) -> Result<Self> {
        let g = Self { length_m, area_m2 };
        g.check()?;
        Ok(g)
    }

    pub(crate) fn check(&self) -> Result<()> {
        if !(self.length_m.is_finite() && self.length_m > 0.0) {
            return Err(Error::InvalidParameter {
                name: "length_m",
                value: self.length_m,
                rule: "must be finite and > 0",
            });
        }
        if !(self.area_m2.is_finite() && self.area_m2 > 0.0) {
            return Err(Error::InvalidParameter {
                name: "area_m2",
                value: self.area_m2,
                rule: "must be finite and > 0",
            });
        }
        Ok(())
    }
}

/// Single-valued saturation law
/// `B(H) = (2 b_sat / π)·atan(π (μr − 1) μ0 H / (2 b_sat)) + μ0 H`.
///
/// The slope at the origin is `μr·μ0`, the slope at large |H| is `μ0`, and the
/// iron part of the flux density approaches `b_sat`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationCurve {
    pub b_sat: f64,
    pub mu_r_initial: f64,
}

impl SaturationCurve {
    pub fn new(b_sat: f64, mu_r_initial: f64) -> Result<Self> {
        let c = Self {
            b_sat,
            mu_r_initial,
        };
        c.check()?;
        Ok(c)
    }

    pub(crate) fn check(&self) -> Result<()> {
        if !(self.b_sat.is_finite() && self.b_sat > 0.0) {
            return Err(Error::InvalidParameter {
                name: "b_sat",
                value: self.b_sat,
                rule: "must be finite and > 0",
            });
        }
        if !(self.mu_r_initial.is_finite() && self.mu_r_initial > 1.0) {
            return Err(Error::InvalidParameter {
                name: "mu_r_initial",
                value: self.mu_r_initial,
                rule: "must be finite and > 1",
            });
        }
        Ok(())
    }

    /// Coefficient `k` in `atan(k·H)`.
    #[inline]
    fn knee_gain(&self) -> f64 {
        PI * (self.mu_r_initial - 1.0) * MU_0 / (2.0 * self.b_sat)
    }

    /// Flux density (T) at field strength `h` (A/m).
    pub fn flux_density(&self, h: f64) -> f64 {
        2.0 * self.b_sat / PI * (self.knee_gain() * h).atan() + MU_0 * h
    }

    /// Differential permeability dB/dH (H/m).
    pub fn differential_permeability(&self, h: f64) -> f64 {
        let x = self.knee_gain() * h;
        (self.mu_r_initial - 1.0) * MU_0 / (1.0 + x * x) + MU_0
    }

    /// Field strength at which the iron term reaches half of `b_sat`.
    pub fn knee_field(&self) -> f64 {
        1.0 / self.knee_gain()
    }
}

/// Permeance in Wb per amp-turn (numerically equal to henry per turn²).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Permeance(pub f64);

impl Permeance {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 {
            Ok(Self(value))
        } else {
            Err(Error::InvalidParameter {
                name: "permeance",
                value,
                rule: "must be finite and > 0",
            })
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn reluctance(self) -> f64 {
        1.0 / self.0
    }

    /// Two permeances carrying the same flux one after the other.
    pub fn series(self, other: Permeance) -> Permeance {
        Permeance(1.0 / (self.reluctance() + other.reluctance()))
    }

    /// Two permeances sharing the same mmf.
    pub fn parallel(self, other: Permeance) -> Permeance {
        Permeance(self.0 + other.0)
    }

    /// Inductance seen by a winding of `turns` linking this permeance.
    pub fn inductance(self, turns: f64) -> f64 {
        turns * turns * self.0
    }
}

/// Turns count and winding sense of a winding modeled as a gyrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindingGyrator {
    pub turns: u32,
    pub orientation: Orientation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Positive,
    Negative,
}

impl Orientation {
    pub fn sign(self) -> f64 {
        match self {
            Orientation::Positive => 1.0,
            Orientation::Negative => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Orientation::Positive => Orientation::Negative,
            Orientation::Negative => Orientation::Positive,
        }
    }
}

impl WindingGyrator {
    pub fn new(turns: u32, orientation: Orientation) -> Result<Self> {
        if turns == 0 {
            return Err(Error::InvalidParameter {
                name: "turns",
                value: 0.0,
                rule: "must be >= 1",
            });
        }
        Ok(Self { turns, orientation })
    }

    /// Signed turns ratio used in the port laws.
    pub fn ratio(&self) -> f64 {
        self.orientation.sign() * f64::from(self.turns)
    }
}

/// `μr·μ0·A/l`.
pub fn linear_permeance(geometry: CoreLegGeometry, mu_r: f64) -> Result<Permeance> {
    geometry.check()?;
    if !(mu_r.is_finite() && mu_r >= 1.0) {
        return Err(Error::InvalidParameter {
            name: "mu_r",
            value: mu_r,
            rule: "must be finite and >= 1",
        });
    }
    Permeance::new(mu_r * MU_0 * geometry.area_m2 / geometry.length_m)
}

/// Effective area of a gap of square cross-section whose sides are each
/// widened by one gap length.
pub fn fringed_gap_area(gap_length_m: f64, area_m2: f64) -> f64 {
    let side = area_m2.sqrt() + gap_length_m;
    side * side
}

/// Air-gap permeance including fringing, `μ0·(√A + g)²/g`.
pub fn gap_permeance_with_fringing(gap_length_m: f64, area_m2: f64) -> Result<Permeance> {
    CoreLegGeometry::new(gap_length_m, area_m2)?;
    if gap_length_m > 0.2 * area_m2.sqrt() {
        log::warn!(
            "gap {gap_length_m} m exceeds 20% of the cross-section side; fringing estimate is crude"
        );
    }
    Permeance::new(MU_0 * fringed_gap_area(gap_length_m, area_m2) / gap_length_m)
}

/// Flux (Wb) carried by a saturating leg with `mmf` amp-turns across it.
pub fn flux_of_mmf(mmf: f64, geometry: CoreLegGeometry, curve: SaturationCurve) -> f64 {
    geometry.area_m2 * curve.flux_density(mmf / geometry.length_m)
}

/// Analytic dΦ/d(mmf) of [`flux_of_mmf`].
pub fn differential_permeance(
    mmf: f64,
    geometry: CoreLegGeometry,
    curve: SaturationCurve,
) -> Permeance {
    let h = mmf / geometry.length_m;
    Permeance(curve.differential_permeability(h) * geometry.area_m2 / geometry.length_m)
}

/// Voltage induced in a winding of `turns` by a flux rate (Wb/s).
pub fn winding_emf(turns: f64, dphi_dt: f64) -> f64 {
    turns * dphi_dt
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const AREA: f64 = 0.0103;

    fn outer() -> CoreLegGeometry {
        CoreLegGeometry::new(0.8636, AREA).unwrap()
    }

    fn m36() -> SaturationCurve {
        SaturationCurve::new(1.34, 8000.0).unwrap()
    }

    #[test]
    fn gap_permeance_reference_values() {
        // μ0·0.0103/0.002014 evaluated by hand: 1.294336e-8 / 0.002014
        let p = linear_permeance(CoreLegGeometry::new(0.002014, AREA).unwrap(), 1.0).unwrap();
        assert_relative_eq!(p.value(), 6.4267e-6, max_relative = 1e-4);
    }

    #[test]
    fn outer_leg_permeance() {
        let p = linear_permeance(outer(), 8000.0).unwrap();
        assert_relative_eq!(p.value(), 1.199e-4, max_relative = 1e-3);
    }

    #[test]
    fn permeance_linear_in_mu_r() {
        let a = linear_permeance(outer(), 1500.0).unwrap();
        let b = linear_permeance(outer(), 3000.0).unwrap();
        assert_relative_eq!(b.value(), 2.0 * a.value(), max_relative = 1e-15);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(linear_permeance(
            CoreLegGeometry {
                length_m: 0.0,
                area_m2: 1.0
            },
            1.0
        )
        .is_err());
        assert!(linear_permeance(
            CoreLegGeometry {
                length_m: 1.0,
                area_m2: -1.0
            },
            1.0
        )
        .is_err());
        assert!(linear_permeance(outer(), 0.5).is_err());
        assert!(gap_permeance_with_fringing(0.0, AREA).is_err());
        assert!(gap_permeance_with_fringing(0.001, 0.0).is_err());
    }

    #[test]
    fn fringing_factor_reference_values() {
        let g = 0.002014;
        let plain = linear_permeance(CoreLegGeometry::new(g, AREA).unwrap(), 1.0).unwrap();
        let fringed = gap_permeance_with_fringing(g, AREA).unwrap();
        // (sqrt(0.0103) + 0.002014)^2 / 0.0103 = 0.10350267^2 / 0.0103
        assert_relative_eq!(
            fringed.value() / plain.value(),
            1.040092,
            max_relative = 1e-5
        );
    }

    #[test]
    fn fringing_vanishes_for_small_gap() {
        let mut last = f64::INFINITY;
        for g in [1e-3, 1e-4, 1e-5, 1e-6] {
            let plain = linear_permeance(CoreLegGeometry::new(g, AREA).unwrap(), 1.0).unwrap();
            let ratio = gap_permeance_with_fringing(g, AREA).unwrap().value() / plain.value();
            assert!(ratio > 1.0 && ratio < last);
            last = ratio;
        }
        assert!(last - 1.0 < 1e-4);
    }

    #[test]
    fn flux_is_zero_at_zero_mmf() {
        assert_eq!(flux_of_mmf(0.0, outer(), m36()), 0.0);
    }

    #[test]
    fn flux_saturates_at_bsat_area() {
        let geo = outer();
        let curve = m36();
        let mmf = 1e9;
        let h = mmf / geo.length_m;
        let iron = flux_of_mmf(mmf, geo, curve) - MU_0 * h * AREA;
        assert_relative_eq!(iron, 1.34 * 0.0103, max_relative = 1e-6);
        assert_relative_eq!(1.34 * 0.0103, 0.013802, max_relative = 1e-12);
    }

    #[test]
    fn initial_slope_matches_linear_permeance() {
        let p0 = differential_permeance(0.0, outer(), m36()).value();
        let lin = linear_permeance(outer(), 8000.0).unwrap().value();
        assert_relative_eq!(p0, lin, max_relative = 1e-9);
    }

    #[test]
    fn slope_tends_to_air_permeance() {
        let geo = outer();
        let p = differential_permeance(1e12, geo, m36()).value();
        let air = linear_permeance(geo, 1.0).unwrap().value();
        assert_relative_eq!(p, air, max_relative = 1e-6);
    }

    fn central_difference(mmf: f64) -> f64 {
        let h = 1e-3;
        (flux_of_mmf(mmf + h, outer(), m36()) - flux_of_mmf(mmf - h, outer(), m36())) / (2.0 * h)
    }

    #[test]
    fn differential_permeance_matches_finite_difference_grid() {
        // 100 points log-spaced over 0.01..1e5 A-t, both signs alternating
        for k in 0..100 {
            let mag = 10f64.powf(-2.0 + 7.0 * f64::from(k) / 99.0);
            let mmf = if k % 2 == 0 { mag } else { -mag };
            let analytic = differential_permeance(mmf, outer(), m36()).value();
            let fd = central_difference(mmf);
            assert_relative_eq!(analytic, fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn winding_emf_cases() {
        assert_eq!(winding_emf(225.0, 0.0), 0.0);
        let (right, left) = (1.0, 0.0);
        assert_eq!(winding_emf(225.0, right - left), 225.0);
        assert_eq!(winding_emf(150.0, -2.0), -300.0);
    }

    #[test]
    fn gyrator_rejects_zero_turns() {
        assert!(WindingGyrator::new(0, Orientation::Positive).is_err());
        let w = WindingGyrator::new(225, Orientation::Negative).unwrap();
        assert_eq!(w.ratio(), -225.0);
    }

    #[test]
    fn series_parallel_reduction() {
        let a = Permeance(2.0);
        let b = Permeance(2.0);
        assert_relative_eq!(a.series(b).value(), 1.0);
        assert_relative_eq!(a.parallel(b).value(), 4.0);
    }

    proptest! {
        #[test]
        fn flux_is_odd_and_increasing(m in -1e5f64..1e5, d in 1e-3f64..1e3) {
            let geo = outer();
            let c = m36();
            prop_assert_eq!(flux_of_mmf(-m, geo, c), -flux_of_mmf(m, geo, c));
            prop_assert!(flux_of_mmf(m + d, geo, c) > flux_of_mmf(m, geo, c));
        }

        #[test]
        fn flux_lipschitz_by_initial_permeance(a in -1e4f64..1e4, b in -1e4f64..1e4) {
            let geo = outer();
            let c = m36();
            let lip = linear_permeance(geo, c.mu_r_initial).unwrap().value();
            let dphi = (flux_of_mmf(a, geo, c) - flux_of_mmf(b, geo, c)).abs();
            prop_assert!(dphi <= lip * (a - b).abs() * (1.0 + 1e-12) + 1e-300);
        }

        #[test]
        fn differential_permeance_fd_random(m in -5e4f64..5e4) {
            let analytic = differential_permeance(m, outer(), m36()).value();
            let fd = central_difference(m);
            prop_assert!(((analytic - fd) / analytic).abs() <= 1e-6);
        }

        #[test]
        fn differential_permeance_nonincreasing_in_magnitude(a in 0f64..1e5, d in 0f64..1e4) {
            let p1 = differential_permeance(a, outer(), m36()).value();
            let p2 = differential_permeance(-(a + d), outer(), m36()).value();
            prop_assert!(p2 <= p1);
            prop_assert!(p2 > 0.0);
        }

        #[test]
        fn unfringed_gap_equals_unity_mu(g in 1e-5f64..1e-2, a in 1e-4f64..1.0) {
            let geo = CoreLegGeometry::new(g, a).unwrap();
            prop_assert_eq!(linear_permeance(geo, 1.0).unwrap().value(), MU_0 * a / g);
        }

        #[test]
        fn saturation_asymptote(scale in 50f64..1e4) {
            let c = m36();
            let h_min = 2.0 * c.b_sat / (PI * (c.mu_r_initial - 1.0) * MU_0);
            let h = scale * h_min;
            let b = c.flux_density(h);
            prop_assert!(b >= 0.98 * c.b_sat + MU_0 * h - c.b_sat * 0.02);
        }
    }
}
