//! Anharmonic trap potentials in oscillator units (`hbar = m = omega_0 = 1`).
//!
//! Every potential is written as a function of the instantaneous control
//! `u = omega(t)^2`. The STA reference is the harmonic `u x^2 / 2`; the
//! lattice and Gaussian traps share that limit near `x = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::schedule::ControlSchedule;

/// Below this `|u|` the lattice control derivatives use their small-`u` series.
pub const LATTICE_U_EPS: f64 = 1e-8;

/// Reduced Planck constant, J s.
pub const HBAR_SI: f64 = 1.054_571_817e-34;
/// Atomic mass unit, kg.
pub const AMU_SI: f64 = 1.660_539_066_60e-27;
/// Mass of a rubidium-87 atom, kg.
pub const RB87_MASS_SI: f64 = 86.909_180_527 * AMU_SI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrapFamily {
    Lattice,
    Gaussian,
    Harmonic,
}

impl std::fmt::Display for TrapFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrapFamily::Lattice => "lattice",
            TrapFamily::Gaussian => "gaussian",
            TrapFamily::Harmonic => "harmonic",
        })
    }
}

/// Trap shape with its dimensionless parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrapShape {
    /// Accordion lattice with amplitude `A_L / hbar omega_0`.
    Lattice { amplitude: f64 },
    /// Gaussian dipole trap with beam waist `w / a_0`.
    Gaussian { waist_ratio: f64 },
    /// The idealized STA system itself.
    Harmonic,
}

impl TrapShape {
    pub fn lattice(alpha: f64) -> Result<Self> {
        Ok(TrapShape::Lattice {
            amplitude: lattice_amplitude(alpha)?,
        })
    }

    pub fn gaussian(waist_ratio: f64) -> Result<Self> {
        if !(waist_ratio > 0.0 && waist_ratio.is_finite()) {
            return Err(invalid("waist_ratio", format!("must be > 0, got {waist_ratio}")));
        }
        Ok(TrapShape::Gaussian { waist_ratio })
    }

    pub fn family(&self) -> TrapFamily {
        match self {
            TrapShape::Lattice { .. } => TrapFamily::Lattice,
            TrapShape::Gaussian { .. } => TrapFamily::Gaussian,
            TrapShape::Harmonic => TrapFamily::Harmonic,
        }
    }
}

/// Dimensionless lattice amplitude `sqrt(alpha) / 2` for recoil parameter `alpha`.
pub fn lattice_amplitude(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(invalid("alpha", format!("must be > 0, got {alpha}")));
    }
    Ok(alpha.sqrt() / 2.0)
}

/// `(w^2/4, k_G)` for a Gaussian trap of waist `w / a_0`.
///
/// The first entry multiplies `omega^2` to give the trap amplitude; the
/// product of the two is always `1/2`.
pub fn gaussian_params(waist_ratio: f64) -> (f64, f64) {
    let w2 = waist_ratio * waist_ratio;
    (w2 / 4.0, 2.0 / w2)
}

/// Beam waist in oscillator lengths `a_0 = sqrt(hbar / m omega_0)`.
pub fn waist_ratio_from_si(omega0: f64, waist_m: f64, mass_kg: f64) -> f64 {
    let a0 = (HBAR_SI / (mass_kg * omega0)).sqrt();
    waist_m / a0
}

/// `sin(z)/z`.
fn sinc(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        let z2 = z * z;
        1.0 - z2 / 6.0 + z2 * z2 / 120.0
    } else {
        z.sin() / z
    }
}

/// `(z cos z - sin z) / z^3`, finite at the origin.
fn sinc_deriv_kernel(z: f64) -> f64 {
    if z.abs() < 0.1 {
        let z2 = z * z;
        -1.0 / 3.0 + z2 / 30.0 - z2 * z2 / 840.0 + z2 * z2 * z2 / 45360.0
    } else {
        (z * z.cos() - z.sin()) / (z * z * z)
    }
}

fn sgn(u: f64) -> f64 {
    if u > 0.0 {
        1.0
    } else if u < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// A trap potential with an optional fractional amplitude error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapPotential {
    pub shape: TrapShape,
    /// Fractional amplitude error; zero for the nominal trap.
    pub amp_error: f64,
}

impl TrapPotential {
    pub fn new(shape: TrapShape) -> Self {
        Self {
            shape,
            amp_error: 0.0,
        }
    }

    pub fn with_amp_error(self, delta: f64) -> Self {
        Self {
            amp_error: delta,
            ..self
        }
    }

    pub fn family(&self) -> TrapFamily {
        self.shape.family()
    }

    /// Potential at position `x` for control value `u = omega~^2`.
    pub fn potential(&self, x: f64, u: f64) -> f64 {
        let scale = 1.0 + self.amp_error;
        match self.shape {
            TrapShape::Lattice { amplitude } => {
                let k = (u.abs() / (2.0 * amplitude)).sqrt();
                let s = (k * x).sin();
                sgn(u) * amplitude * scale * s * s
            }
            TrapShape::Gaussian { waist_ratio } => {
                let (a, kg) = gaussian_params(waist_ratio);
                a * u * scale * -(-kg * x * x).exp_m1()
            }
            TrapShape::Harmonic => 0.5 * u * scale * x * x,
        }
    }

    /// `dV/du` at fixed `x`.
    pub fn dv_du(&self, x: f64, u: f64) -> f64 {
        let scale = 1.0 + self.amp_error;
        match self.shape {
            TrapShape::Lattice { amplitude } => {
                // same expression on both sides of u = 0: (x^2/2) sinc(2 k x)
                let k = (u.abs() / (2.0 * amplitude)).sqrt();
                if u.abs() < LATTICE_U_EPS {
                    let x2 = x * x;
                    scale * (0.5 * x2 - u.abs() * x2 * x2 / (6.0 * amplitude))
                } else {
                    scale * 0.5 * x * x * sinc(2.0 * k * x)
                }
            }
            TrapShape::Gaussian { waist_ratio } => {
                let (a, kg) = gaussian_params(waist_ratio);
                a * scale * -(-kg * x * x).exp_m1()
            }
            TrapShape::Harmonic => 0.5 * scale * x * x,
        }
    }

    /// `d^2V/du^2` at fixed `x`; discontinuous across `u = 0` for the lattice.
    pub fn d2v_du2(&self, x: f64, u: f64) -> f64 {
        let scale = 1.0 + self.amp_error;
        match self.shape {
            TrapShape::Lattice { amplitude } => {
                let x4 = x * x * x * x;
                let side = if u < 0.0 { -1.0 } else { 1.0 };
                if u.abs() < LATTICE_U_EPS {
                    -side * scale * x4 / (6.0 * amplitude)
                } else {
                    let k = (u.abs() / (2.0 * amplitude)).sqrt();
                    side * scale * x4 * sinc_deriv_kernel(2.0 * k * x) / (2.0 * amplitude)
                }
            }
            TrapShape::Gaussian { .. } | TrapShape::Harmonic => 0.0,
        }
    }

    /// Perturbation `V(x, omega^2 + Omega) - omega^2 x^2 / 2` relative to the STA system.
    pub fn delta_h(&self, schedule: &ControlSchedule, x: f64, t: f64) -> Result<f64> {
        let w2 = schedule.omega_sq_sta(t)?;
        let u = w2 + schedule.omega_correction(t)?;
        Ok(self.potential(x, u) - 0.5 * w2 * x * x)
    }

    /// `dV/d lambda_k` along the schedule's control parameterization.
    pub fn dv_dlambda(&self, schedule: &ControlSchedule, x: f64, t: f64, k: usize) -> Result<f64> {
        let u = schedule.omega_sq_total(t)?;
        let basis = schedule.cardinal_basis(t)?;
        Ok(self.dv_du(x, u) * basis[k])
    }

    /// `d^2V / d lambda_l d lambda_k`.
    pub fn d2v_dlambda2(
        &self,
        schedule: &ControlSchedule,
        x: f64,
        t: f64,
        l: usize,
        k: usize,
    ) -> Result<f64> {
        let u = schedule.omega_sq_total(t)?;
        let basis = schedule.cardinal_basis(t)?;
        Ok(self.d2v_du2(x, u) * basis[l] * basis[k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScalingFunction;
    use proptest::prelude::*;

    fn lattice() -> TrapPotential {
        TrapPotential::new(TrapShape::lattice(150.0).unwrap())
    }

    fn gaussian() -> TrapPotential {
        TrapPotential::new(TrapShape::gaussian(98.0).unwrap())
    }

    #[test]
    fn lattice_amplitude_values() {
        assert!((lattice_amplitude(150.0).unwrap() - 6.12).abs() < 0.01);
        assert_eq!(lattice_amplitude(4.0).unwrap(), 1.0);
        assert_eq!(lattice_amplitude(1.0).unwrap(), 0.5);
        assert!(lattice_amplitude(0.0).is_err());
        assert!(lattice_amplitude(-3.0).is_err());
    }

    #[test]
    fn gaussian_amplitude_from_si_inputs() {
        let omega0 = 2.0 * std::f64::consts::PI * 2500.0;
        let w = waist_ratio_from_si(omega0, 20.0 * 1060e-9, RB87_MASS_SI);
        let (a, _) = gaussian_params(w);
        assert!((a / 2418.0 - 1.0).abs() < 0.01, "A_G/hbar omega_0 = {a}");
    }

    #[test]
    fn gaussian_harmonic_identity() {
        for w in [0.5, 3.0, 98.0, 1e3] {
            let (a, k) = gaussian_params(w);
            assert!((a * k - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn lattice_zero_control_is_flat() {
        let trap = lattice();
        for x in [-3.0, 0.0, 0.7, 40.0] {
            assert_eq!(trap.potential(x, 0.0), 0.0);
        }
    }

    #[test]
    fn lattice_repulsive_for_negative_control() {
        let trap = lattice();
        for i in -200..=200 {
            let x = i as f64 * 0.37;
            assert!(trap.potential(x, -0.8) <= 0.0);
        }
    }

    #[test]
    fn gaussian_wide_beam_is_harmonic() {
        let x = 1.3;
        let u = 0.7;
        let mut prev = f64::INFINITY;
        for w in [10.0, 100.0, 1000.0] {
            let trap = TrapPotential::new(TrapShape::Gaussian { waist_ratio: w });
            let err = (trap.potential(x, u) - 0.5 * u * x * x).abs();
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn harmonic_limit_quartic_coefficient() {
        // |V - u x^2/2| / x^4 stays bounded as x -> 0
        for trap in [lattice(), gaussian()] {
            for u in [1.0, 0.3, -0.4] {
                let c: Vec<f64> = [1e-1, 3e-2, 1e-2]
                    .iter()
                    .map(|&x| (trap.potential(x, u) - 0.5 * u * x * x) / x.powi(4))
                    .collect();
                assert!(c.iter().all(|v| v.is_finite()));
                assert!((c[1] - c[2]).abs() < 1e-2 * c[2].abs().max(1e-6) + 1e-6, "{c:?}");
            }
        }
    }

    #[test]
    fn lattice_du_small_control_limit() {
        let trap = lattice();
        for x in [0.3, 1.0, 2.5] {
            let v = trap.dv_du(x, 1e-14);
            assert!((v - 0.5 * x * x).abs() < 1e-12);
            let v = trap.dv_du(x, 2e-8);
            assert!((v - 0.5 * x * x).abs() < 1e-6);
        }
    }

    #[test]
    fn lattice_du_matches_central_difference_at_midpoint() {
        let trap = lattice();
        let sf = ScalingFunction::new(10.0, 25.0).unwrap();
        let u = sf.omega_sq_sta(12.5).unwrap();
        let h = 1e-6 * u.abs();
        let fd = (trap.potential(1.0, u + h) - trap.potential(1.0, u - h)) / (2.0 * h);
        let an = trap.dv_du(1.0, u);
        assert!(((fd - an) / an).abs() < 1e-6, "{fd} vs {an}");
    }

    #[test]
    fn gaussian_second_control_derivative_vanishes() {
        let trap = gaussian();
        for (x, u) in [(0.3, 1.0), (5.0, -0.2), (20.0, 1e-4)] {
            assert_eq!(trap.d2v_du2(x, u), 0.0);
        }
    }

    #[test]
    fn amplitude_error_is_multiplicative() {
        for base in [lattice(), gaussian(), TrapPotential::new(TrapShape::Harmonic)] {
            let d = 0.03;
            let trap = base.with_amp_error(d);
            for (x, u) in [(0.4, 1.0), (2.0, -0.3), (7.0, 0.01)] {
                let v = trap.potential(x, u);
                let h = 1e-6;
                let dv = (base.with_amp_error(d + h).potential(x, u)
                    - base.with_amp_error(d - h).potential(x, u))
                    / (2.0 * h);
                assert!((dv - v / (1.0 + d)).abs() < 1e-7 * v.abs().max(1.0));
            }
        }
    }

    proptest! {
        #[test]
        fn potentials_are_even(x in -60.0f64..60.0, u in -2.0f64..2.0) {
            for trap in [lattice(), gaussian(), TrapPotential::new(TrapShape::Harmonic)] {
                prop_assert_eq!(trap.potential(x, u), trap.potential(-x, u));
                prop_assert_eq!(trap.dv_du(x, u), trap.dv_du(-x, u));
                prop_assert_eq!(trap.d2v_du2(x, u), trap.d2v_du2(-x, u));
            }
        }

        #[test]
        fn lattice_du_derivatives_match_five_point(x in -6.0f64..6.0, u in prop_oneof![-1.5f64..-0.05, 0.05f64..1.5]) {
            let trap = lattice();
            let h = 1e-4;
            let fd = |f: &dyn Fn(f64) -> f64| (f(u - 2.0 * h) - 8.0 * f(u - h) + 8.0 * f(u + h) - f(u + 2.0 * h)) / (12.0 * h);
            let d1 = fd(&|v| trap.potential(x, v));
            let a1 = trap.dv_du(x, u);
            prop_assert!((d1 - a1).abs() <= 1e-6 * a1.abs().max(1e-3), "{} vs {}", d1, a1);
            let d2 = fd(&|v| trap.dv_du(x, v));
            let a2 = trap.d2v_du2(x, u);
            prop_assert!((d2 - a2).abs() <= 1e-6 * a2.abs().max(1e-3), "{} vs {}", d2, a2);
        }
    }
}
