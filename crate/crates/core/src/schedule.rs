//! Invariant-based STA baseline and the eSTA correction parameterization.
//!
//! Units: `hbar = m = omega_0 = 1`, so times are `omega_0 t` and lengths are
//! in oscillator lengths of the initial trap.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::hermite::hermite_function;
use crate::trap::TrapShape;

/// Default number of points in the cached accumulated-phase grid.
pub const DEFAULT_PHASE_GRID: usize = 8192;

/// A trap-expansion problem in dimensionless form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionProblem {
    pub trap: TrapShape,
    /// Expansion ratio `sqrt(omega_0 / omega_f)`.
    pub gamma: f64,
    /// Final time `omega_0 t_f`.
    pub tau_f: f64,
    /// Number of retained non-zero excited modes (even modes `2, 4, ...`).
    pub n_modes: usize,
}

impl ExpansionProblem {
    pub fn new(trap: TrapShape, gamma: f64, tau_f: f64, n_modes: usize) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid("gamma", format!("must be > 0, got {gamma}")));
        }
        if !(tau_f > 0.0 && tau_f.is_finite()) {
            return Err(invalid("tau_f", format!("must be > 0, got {tau_f}")));
        }
        if n_modes == 0 {
            return Err(invalid("n_modes", "must be >= 1"));
        }
        match trap {
            TrapShape::Lattice { amplitude } if !(amplitude > 0.0) => {
                return Err(invalid("alpha", "lattice amplitude must be > 0"))
            }
            TrapShape::Gaussian { waist_ratio } if !(waist_ratio > 0.0) => {
                return Err(invalid("waist_ratio", "must be > 0"))
            }
            _ => {}
        }
        Ok(Self {
            trap,
            gamma,
            tau_f,
            n_modes,
        })
    }

    pub fn with_tau(self, tau_f: f64) -> Result<Self> {
        Self::new(self.trap, self.gamma, tau_f, self.n_modes)
    }

    /// Retained mode indices; odd modes are skipped by parity.
    pub fn mode_indices(&self) -> Vec<usize> {
        (1..=self.n_modes).map(|j| 2 * j).collect()
    }

    /// Final trap frequency squared, `1 / gamma^4`.
    pub fn final_omega_sq(&self) -> f64 {
        self.gamma.powi(-4)
    }

    pub fn scaling(&self) -> Result<ScalingFunction> {
        ScalingFunction::new(self.gamma, self.tau_f)
    }
}

/// Derivatives of `b` at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingDerivs {
    pub b: f64,
    pub db: f64,
    pub d2b: f64,
    pub d3b: f64,
    pub d4b: f64,
}

/// Quintic scaling function `b(t) = 1 + (gamma - 1)(10 xi^3 - 15 xi^4 + 6 xi^5)`, `xi = t / t_f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingFunction {
    gamma: f64,
    tau_f: f64,
}

impl ScalingFunction {
    pub fn new(gamma: f64, tau_f: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid("gamma", format!("must be > 0, got {gamma}")));
        }
        if !(tau_f > 0.0 && tau_f.is_finite()) {
            return Err(invalid("tau_f", format!("must be > 0, got {tau_f}")));
        }
        Ok(Self { gamma, tau_f })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn tau_f(&self) -> f64 {
        self.tau_f
    }

    fn xi(&self, t: f64) -> Result<f64> {
        let slack = 1e-12 * self.tau_f;
        if !(t >= -slack && t <= self.tau_f + slack) {
            return Err(Error::Domain(format!(
                "t = {t} outside [0, {}]",
                self.tau_f
            )));
        }
        Ok((t / self.tau_f).clamp(0.0, 1.0))
    }

    pub fn derivs(&self, t: f64) -> Result<ScalingDerivs> {
        let x = self.xi(t)?;
        let g = self.gamma - 1.0;
        let tf = self.tau_f;
        let x2 = x * x;
        let x3 = x2 * x;
        let p = x3 * (10.0 - 15.0 * x + 6.0 * x2);
        let p1 = 30.0 * x2 * (1.0 - x) * (1.0 - x);
        let p2 = 60.0 * x * (1.0 - x) * (1.0 - 2.0 * x);
        let p3 = 360.0 * x2 - 360.0 * x + 60.0;
        let p4 = 720.0 * x - 360.0;
        Ok(ScalingDerivs {
            b: 1.0 + g * p,
            db: g * p1 / tf,
            d2b: g * p2 / (tf * tf),
            d3b: g * p3 / (tf * tf * tf),
            d4b: g * p4 / (tf * tf * tf * tf),
        })
    }

    /// `(b, b', b'')` at time `t`.
    pub fn b_value(&self, t: f64) -> Result<(f64, f64, f64)> {
        let d = self.derivs(t)?;
        Ok((d.b, d.db, d.d2b))
    }

    /// STA trap frequency squared from the inverted Ermakov equation.
    pub fn omega_sq_sta(&self, t: f64) -> Result<f64> {
        let d = self.derivs(t)?;
        Ok(1.0 / d.b.powi(4) - d.d2b / d.b)
    }

    pub fn ermakov_residual(&self, t: f64) -> Result<f64> {
        let d = self.derivs(t)?;
        let w2 = 1.0 / d.b.powi(4) - d.d2b / d.b;
        Ok(ermakov_residual(d.b, d.d2b, w2))
    }
}

/// `b'' + omega^2 b - 1/b^3` for arbitrary inputs.
pub fn ermakov_residual(b: f64, d2b: f64, omega_sq: f64) -> f64 {
    d2b + omega_sq * b - 1.0 / (b * b * b)
}

/// Cumulative `Theta(t) = int_0^t dt' / b(t')^2`, cached on a uniform grid.
///
/// Interpolation between grid points is cubic Hermite with the exact slope
/// `1/b^2`, which keeps the phase error far below the grid spacing squared.
#[derive(Debug, Clone)]
pub struct PhaseGrid {
    scaling: ScalingFunction,
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl PhaseGrid {
    pub fn new(scaling: ScalingFunction, points: usize) -> Result<Self> {
        if points < 3 {
            return Err(invalid("phase_grid", format!("needs at least 3 points, got {points}")));
        }
        let n = points - 1;
        let h = scaling.tau_f() / n as f64;
        let slopes: Vec<f64> = (0..=n)
            .map(|i| {
                let t = (i as f64 * h).min(scaling.tau_f());
                let b = scaling.derivs(t).map(|d| d.b)?;
                Ok(1.0 / (b * b))
            })
            .collect::<Result<_>>()?;
        let mut values = vec![0.0; n + 1];
        // Simpson on even nodes; odd nodes get the 3-point half-interval rule.
        let mut i = 0;
        while i + 2 <= n {
            let (f0, f1, f2) = (slopes[i], slopes[i + 1], slopes[i + 2]);
            values[i + 1] = values[i] + h / 12.0 * (5.0 * f0 + 8.0 * f1 - f2);
            values[i + 2] = values[i] + h / 3.0 * (f0 + 4.0 * f1 + f2);
            i += 2;
        }
        if i < n {
            let (f0, f1, f2) = (slopes[i - 1], slopes[i], slopes[i + 1]);
            values[i + 1] = values[i] + h / 12.0 * (-f0 + 8.0 * f1 + 5.0 * f2);
        }
        Ok(Self {
            scaling,
            step: h,
            values,
            slopes,
        })
    }

    pub fn theta(&self, t: f64) -> Result<f64> {
        self.scaling.derivs(t)?;
        let n = self.values.len() - 1;
        let s = (t / self.step).max(0.0);
        let i = (s.floor() as usize).min(n - 1);
        let r = s - i as f64;
        let h = self.step;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let r2 = r * r;
        let r3 = r2 * r;
        Ok((2.0 * r3 - 3.0 * r2 + 1.0) * y0
            + (r3 - 2.0 * r2 + r) * m0
            + (-2.0 * r3 + 3.0 * r2) * y1
            + (r3 - r2) * m1)
    }

    pub fn total(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

/// STA frequency profile plus the polynomial correction `Omega(lambda, t)`.
///
/// `Omega` is the Lagrange interpolant through `(0, 0)`, `(j t_f/(M+1), lambda_j)`
/// and `(t_f, 0)`, so it is linear in `lambda` with cardinal basis `l_j(t)`.
#[derive(Debug, Clone)]
pub struct ControlSchedule {
    base: ScalingFunction,
    lambda: Vec<f64>,
    /// All interpolation nodes in units of `xi = t / t_f`, endpoints included.
    nodes: Vec<f64>,
    phase: Arc<PhaseGrid>,
}

impl ControlSchedule {
    /// STA schedule with `m` zeroed correction components.
    pub fn sta(base: ScalingFunction, m: usize) -> Result<Self> {
        Self::with_lambda(base, vec![0.0; m])
    }

    pub fn with_lambda(base: ScalingFunction, lambda: Vec<f64>) -> Result<Self> {
        let phase = Arc::new(PhaseGrid::new(base, DEFAULT_PHASE_GRID)?);
        Ok(Self::from_parts(base, lambda, phase))
    }

    fn from_parts(base: ScalingFunction, lambda: Vec<f64>, phase: Arc<PhaseGrid>) -> Self {
        let m = lambda.len();
        let nodes = (0..=m + 1).map(|j| j as f64 / (m + 1) as f64).collect();
        Self {
            base,
            lambda,
            nodes,
            phase,
        }
    }

    /// Same base profile and phase cache, different correction vector.
    pub fn retuned(&self, lambda: Vec<f64>) -> Self {
        Self::from_parts(self.base, lambda, Arc::clone(&self.phase))
    }

    pub fn base(&self) -> &ScalingFunction {
        &self.base
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn components(&self) -> usize {
        self.lambda.len()
    }

    pub fn tau_f(&self) -> f64 {
        self.base.tau_f()
    }

    pub fn phase(&self) -> &PhaseGrid {
        &self.phase
    }

    /// Interior knot times `j t_f / (M + 1)`.
    pub fn knot_times(&self) -> Vec<f64> {
        let m = self.lambda.len();
        (1..=m)
            .map(|j| j as f64 * self.tau_f() / (m + 1) as f64)
            .collect()
    }

    /// Cardinal basis values `l_1(t), ..., l_M(t)`.
    pub fn cardinal_basis(&self, t: f64) -> Result<Vec<f64>> {
        let xi = t / self.tau_f();
        self.base.derivs(t)?;
        let m = self.lambda.len();
        let nodes = &self.nodes;
        Ok((1..=m)
            .map(|j| {
                nodes
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != j)
                    .map(|(_, &xm)| (xi - xm) / (nodes[j] - xm))
                    .product()
            })
            .collect())
    }

    pub fn omega_correction(&self, t: f64) -> Result<f64> {
        Ok(self
            .cardinal_basis(t)?
            .iter()
            .zip(&self.lambda)
            .map(|(l, lam)| l * lam)
            .sum())
    }

    pub fn omega_sq_sta(&self, t: f64) -> Result<f64> {
        self.base.omega_sq_sta(t)
    }

    pub fn omega_sq_total(&self, t: f64) -> Result<f64> {
        Ok(self.omega_sq_sta(t)? + self.omega_correction(t)?)
    }

    pub fn theta(&self, t: f64) -> Result<f64> {
        self.phase.theta(t)
    }
}

/// Invariant eigenmode `chi_n(x, t)` of the STA system.
#[derive(Debug, Clone)]
pub struct InvariantMode {
    pub n: usize,
    scaling: ScalingFunction,
    phase: Arc<PhaseGrid>,
}

impl InvariantMode {
    pub fn new(n: usize, schedule: &ControlSchedule) -> Self {
        Self {
            n,
            scaling: *schedule.base(),
            phase: Arc::clone(&schedule.phase),
        }
    }

    /// `phi_n(x/b) / sqrt(b)`.
    pub fn amplitude(&self, x: f64, t: f64) -> Result<f64> {
        let b = self.scaling.derivs(t)?.b;
        Ok(hermite_function(self.n, x / b) / b.sqrt())
    }

    /// Lewis–Riesenfeld phase `-(n + 1/2) Theta(t)`.
    pub fn theta_n(&self, t: f64) -> Result<f64> {
        Ok(-(self.n as f64 + 0.5) * self.phase.theta(t)?)
    }

    /// Position-dependent phase `b' x^2 / (2 b)`.
    pub fn beta(&self, x: f64, t: f64) -> Result<f64> {
        let d = self.scaling.derivs(t)?;
        Ok(0.5 * d.db / d.b * x * x)
    }

    pub fn value(&self, x: f64, t: f64) -> Result<Complex64> {
        let phase = self.theta_n(t)? + self.beta(x, t)?;
        Ok(Complex64::from_polar(self.amplitude(x, t)?, phase))
    }
}
