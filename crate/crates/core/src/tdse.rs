//! Split-operator solution of the 1D time-dependent Schrödinger equation.
//!
//! `H(t) = p^2/2 + V(x, omega~^2(t))` on a periodic grid. Each step is
//! `exp(-i T dt/2) exp(-i V(t + dt/2) dt) exp(-i T dt/2)`; consecutive kinetic
//! half steps are fused, so a step costs one forward and one inverse FFT.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Error, Result};
use crate::hermite::hermite_function;
use crate::schedule::ControlSchedule;
use crate::trap::TrapPotential;

/// Uniform periodic grid on `[-L, L)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGrid {
    half_width: f64,
    n_points: usize,
}

impl SpatialGrid {
    pub fn new(half_width: f64, n_points: usize) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(invalid("grid_half_width", format!("must be > 0, got {half_width}")));
        }
        if n_points < 8 || !n_points.is_power_of_two() {
            return Err(invalid("grid_points", format!("must be a power of two >= 8, got {n_points}")));
        }
        Ok(Self {
            half_width,
            n_points,
        })
    }

    /// `L = max(16, 12 gamma)`, 4096 points.
    pub fn for_expansion(gamma: f64) -> Self {
        Self {
            half_width: (12.0 * gamma).max(16.0),
            n_points: 4096,
        }
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.n_points as f64
    }

    pub fn positions(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.n_points)
            .map(|i| -self.half_width + i as f64 * dx)
            .collect()
    }

    /// Angular wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.n_points;
        let dk = PI / self.half_width;
        (0..n)
            .map(|i| {
                let j = if i < n / 2 { i as f64 } else { i as f64 - n as f64 };
                j * dk
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Wavefunction {
    pub grid: SpatialGrid,
    pub values: Vec<Complex64>,
}

impl Wavefunction {
    /// Oscillator ground state of frequency `sqrt(omega_sq)`, width `omega^{-1/2}`.
    pub fn harmonic_ground(grid: SpatialGrid, omega_sq: f64) -> Result<Self> {
        if !(omega_sq > 0.0) {
            return Err(Error::Domain(format!(
                "ground state needs a confining trap, got omega^2 = {omega_sq}"
            )));
        }
        let s = omega_sq.powf(-0.25);
        let values = grid
            .positions()
            .iter()
            .map(|&x| Complex64::new(hermite_function(0, x / s) / s.sqrt(), 0.0))
            .collect();
        let mut psi = Self { grid, values };
        psi.normalize();
        Ok(psi)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|c| c.norm_sqr()).sum::<f64>() * self.grid.dx()
    }

    pub fn normalize(&mut self) {
        let n = self.norm_sqr().sqrt();
        if n > 0.0 {
            self.values.iter_mut().for_each(|c| *c /= n);
        }
    }

    /// `<self|other>`.
    pub fn overlap(&self, other: &Wavefunction) -> Complex64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            * self.grid.dx()
    }

    /// `|| self - other ||`.
    pub fn distance(&self, other: &Wavefunction) -> f64 {
        (self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            * self.grid.dx())
        .sqrt()
    }

    /// Probability in the outer `fraction` of the box on both sides.
    pub fn boundary_probability(&self, fraction: f64) -> f64 {
        let edge = ((self.values.len() as f64 * fraction).ceil() as usize).max(1);
        let n = self.values.len();
        (self.values[..edge].iter().chain(&self.values[n - edge..]))
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            * self.grid.dx()
    }
}

/// How the initial and target states are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointMode {
    /// Oscillator ground states of the initial and final harmonic traps.
    #[default]
    Harmonic,
    /// Ground states of the anharmonic trap itself.
    Exact,
}

impl std::fmt::Display for EndpointMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EndpointMode::Harmonic => "harmonic",
            EndpointMode::Exact => "exact",
        })
    }
}

/// FFT plans and scratch space shared by real- and imaginary-time stepping.
struct Spectral {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    k2_half: Vec<f64>,
}

impl Spectral {
    fn new(grid: &SpatialGrid) -> Self {
        let mut planner = FftPlanner::new();
        let n = grid.n_points();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        Self {
            fwd,
            inv,
            scratch: vec![Complex64::new(0.0, 0.0); len],
            k2_half: grid.wavenumbers().iter().map(|k| 0.5 * k * k).collect(),
        }
    }

    fn forward(&mut self, buf: &mut [Complex64]) {
        self.fwd.process_with_scratch(buf, &mut self.scratch);
    }

    /// Inverse transform including the `1/N` normalization.
    fn inverse(&mut self, buf: &mut [Complex64]) {
        self.inv.process_with_scratch(buf, &mut self.scratch);
        let s = 1.0 / buf.len() as f64;
        buf.iter_mut().for_each(|c| *c *= s);
    }

    /// `<T>` for a normalized position-space state.
    fn kinetic_energy(&mut self, psi: &Wavefunction) -> f64 {
        let mut buf = psi.values.clone();
        self.forward(&mut buf);
        let n = buf.len() as f64;
        buf.iter()
            .zip(&self.k2_half)
            .map(|(c, t)| c.norm_sqr() * t)
            .sum::<f64>()
            * psi.grid.dx()
            / n
    }
}

fn potential_energy(psi: &Wavefunction, potential: &[f64]) -> f64 {
    psi.values
        .iter()
        .zip(potential)
        .map(|(c, v)| c.norm_sqr() * v)
        .sum::<f64>()
        * psi.grid.dx()
}

fn energy(spec: &mut Spectral, psi: &Wavefunction, potential: &[f64]) -> f64 {
    spec.kinetic_energy(psi) + potential_energy(psi, potential)
}

/// Ground state of the static trap at `omega_sq`.
///
/// `Exact` runs imaginary-time split-operator relaxation from the harmonic
/// guess with a shrinking step ladder; each rung relaxes for at least
/// `20 / omega` of imaginary time and until the energy changes by less than
/// `1e-12` per step. The two finest rungs are Richardson-combined to remove
/// the `O(dt^2)` splitting bias of the fixed point.
pub fn ground_state(
    trap: &TrapPotential,
    omega_sq: f64,
    mode: EndpointMode,
    grid: SpatialGrid,
) -> Result<Wavefunction> {
    let guess = Wavefunction::harmonic_ground(grid, omega_sq)?;
    match mode {
        EndpointMode::Harmonic => Ok(guess),
        EndpointMode::Exact => imaginary_time_ground(trap, omega_sq, guess),
    }
}

const ITP_MAX_STEPS: usize = 400_000;

fn imaginary_time_ground(trap: &TrapPotential, omega_sq: f64, guess: Wavefunction) -> Result<Wavefunction> {
    let grid = guess.grid;
    let omega = omega_sq.sqrt();
    let x = grid.positions();
    let potential: Vec<f64> = x.iter().map(|&x| trap.potential(x, omega_sq)).collect();
    let v_min = potential.iter().copied().fold(f64::INFINITY, f64::min);
    let mut spec = Spectral::new(&grid);
    let mut psi = guess;
    let mut total_steps = 0;

    let ladder = [0.2, 0.05, 0.0125, 0.003125];
    let mut rungs: Vec<Wavefunction> = Vec::new();
    for &c in &ladder {
        let dt = c / omega;
        let kin: Vec<f64> = spec.k2_half.iter().map(|t| (-0.5 * dt * t).exp()).collect();
        let pot: Vec<f64> = potential.iter().map(|v| (-dt * (v - v_min)).exp()).collect();
        let min_steps = (20.0 / (omega * dt)).ceil() as usize;
        let mut e_prev = energy(&mut spec, &psi, &potential);
        let mut steps = 0;
        loop {
            spec.forward(&mut psi.values);
            psi.values.iter_mut().zip(&kin).for_each(|(c, k)| *c *= k);
            spec.inverse(&mut psi.values);
            psi.values.iter_mut().zip(&pot).for_each(|(c, p)| *c *= p);
            spec.forward(&mut psi.values);
            psi.values.iter_mut().zip(&kin).for_each(|(c, k)| *c *= k);
            spec.inverse(&mut psi.values);
            psi.normalize();
            steps += 1;
            total_steps += 1;
            let e = energy(&mut spec, &psi, &potential);
            let delta = (e - e_prev).abs();
            e_prev = e;
            if steps >= min_steps && delta < 1e-12 {
                break;
            }
            if total_steps >= ITP_MAX_STEPS {
                return Err(Error::GroundState {
                    steps: total_steps,
                    delta,
                });
            }
        }
        rungs.push(psi.clone());
    }

    // splitting bias scales as dt^2; rungs differ by a factor of 4 in dt
    let coarse = &rungs[rungs.len() - 2];
    let fine = &rungs[rungs.len() - 1];
    let mut out = fine.clone();
    for (o, c) in out.values.iter_mut().zip(&coarse.values) {
        *o = (16.0 * *o - c) / 15.0;
    }
    // fix the global phase so the state is real and positive at the origin
    let centre = out.values[out.values.len() / 2];
    if centre.norm() > 0.0 {
        let phase = centre.conj() / centre.norm();
        out.values.iter_mut().for_each(|c| *c *= phase);
    }
    out.normalize();
    Ok(out)
}

/// Parameters of one real-time run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    pub grid: SpatialGrid,
    pub steps: usize,
    /// Number of energy samples (intervals), spread evenly over the run.
    pub energy_samples: usize,
    pub leak_tol: f64,
    pub norm_tol: f64,
    /// Fraction of the box on each side counted as the boundary region.
    pub boundary_fraction: f64,
}

impl SimSettings {
    pub fn for_expansion(gamma: f64) -> Self {
        Self {
            grid: SpatialGrid::for_expansion(gamma),
            steps: 1 << 15,
            energy_samples: 256,
            leak_tol: 1e-8,
            norm_tol: 1e-8,
            boundary_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergySample {
    pub t: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub fidelity: f64,
    pub energy_trace: Vec<EnergySample>,
    pub norm_drift: f64,
    pub boundary_leak: f64,
    pub final_state: Wavefunction,
}

impl SimOutcome {
    /// `(1/t_f) int <H(t)> dt` by the trapezoid rule over the samples.
    pub fn time_averaged_energy(&self) -> f64 {
        time_averaged_energy(&self.energy_trace)
    }
}

pub fn energy_trace(outcome: &SimOutcome) -> &[EnergySample] {
    &outcome.energy_trace
}

pub fn time_averaged_energy(trace: &[EnergySample]) -> f64 {
    if trace.len() < 2 {
        return trace.first().map_or(0.0, |s| s.energy);
    }
    let span = trace.last().unwrap().t - trace[0].t;
    let integral: f64 = trace
        .windows(2)
        .map(|w| 0.5 * (w[0].energy + w[1].energy) * (w[1].t - w[0].t))
        .sum();
    integral / span
}

/// Time-dependent potential sampler for a schedule.
fn sample_potential(trap: &TrapPotential, schedule: &ControlSchedule, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
    let u = schedule.omega_sq_total(t)?;
    for (v, &xi) in out.iter_mut().zip(x) {
        *v = trap.potential(xi, u);
    }
    Ok(())
}

/// Evolves `psi` across the schedule window, forward or backward in time.
///
/// Backward evolution applies the exact inverse of each forward step, so a
/// forward-backward round trip returns the initial state up to roundoff.
pub fn evolve(
    trap: &TrapPotential,
    schedule: &ControlSchedule,
    psi: &Wavefunction,
    steps: usize,
    backward: bool,
) -> Result<Wavefunction> {
    let mut out = psi.clone();
    let mut spec = Spectral::new(&psi.grid);
    let x = psi.grid.positions();
    let mut pot = vec![0.0; x.len()];
    let tf = schedule.tau_f();
    let dt = tf / steps as f64;
    let sign = if backward { 1.0 } else { -1.0 };
    let half_kin: Vec<Complex64> = spec
        .k2_half
        .iter()
        .map(|t| Complex64::from_polar(1.0, sign * 0.5 * dt * t))
        .collect();
    for j in 0..steps {
        let idx = if backward { steps - 1 - j } else { j };
        let t_mid = (idx as f64 + 0.5) * dt;
        spec.forward(&mut out.values);
        out.values.iter_mut().zip(&half_kin).for_each(|(c, k)| *c *= k);
        spec.inverse(&mut out.values);
        sample_potential(trap, schedule, &x, t_mid, &mut pot)?;
        out.values
            .iter_mut()
            .zip(&pot)
            .for_each(|(c, v)| *c *= Complex64::from_polar(1.0, sign * dt * v));
        spec.forward(&mut out.values);
        out.values.iter_mut().zip(&half_kin).for_each(|(c, k)| *c *= k);
        spec.inverse(&mut out.values);
    }
    Ok(out)
}

/// Propagates `psi0` under `trap` driven by `schedule` and scores it against `target`.
pub fn propagate(
    trap: &TrapPotential,
    schedule: &ControlSchedule,
    psi0: &Wavefunction,
    target: &Wavefunction,
    settings: &SimSettings,
) -> Result<SimOutcome> {
    let grid = psi0.grid;
    if target.grid != grid || settings.grid != grid {
        return Err(invalid("grid", "initial state, target and settings must share one grid"));
    }
    if settings.steps == 0 {
        return Err(invalid("time_steps", "must be >= 1"));
    }
    let samples = settings.energy_samples.clamp(1, settings.steps);
    let tf = schedule.tau_f();
    let steps = settings.steps;
    let dt = tf / steps as f64;
    let x = grid.positions();
    let mut spec = Spectral::new(&grid);
    let n = grid.n_points();
    let half_kin: Vec<Complex64> = spec
        .k2_half
        .iter()
        .map(|t| Complex64::from_polar(1.0, -0.5 * dt * t))
        .collect();
    let full_kin: Vec<Complex64> = half_kin.iter().map(|k| k * k).collect();

    let mut pot = vec![0.0; n];
    let mut trace = Vec::with_capacity(samples + 1);
    let mut leak: f64 = 0.0;
    let mut drift: f64 = 0.0;

    let mut record = |spec: &mut Spectral, psi: &Wavefunction, t: f64, pot: &mut [f64]| -> Result<()> {
        sample_potential(trap, schedule, &x, t, pot)?;
        let norm = psi.norm_sqr();
        drift = drift.max((norm - 1.0).abs());
        leak = leak.max(psi.boundary_probability(settings.boundary_fraction));
        trace.push(EnergySample {
            t,
            energy: energy(spec, psi, pot) / norm,
        });
        Ok(())
    };

    let mut psi = psi0.clone();
    record(&mut spec, &psi, 0.0, &mut pot)?;
    let is_sample = |j: usize| (j + 1) * samples % steps < samples || j + 1 == steps;

    // psi.values lives in k-space between steps with a pending half kinetic factor applied
    spec.forward(&mut psi.values);
    psi.values.iter_mut().zip(&half_kin).for_each(|(c, k)| *c *= k);
    for j in 0..steps {
        spec.inverse(&mut psi.values);
        let t_mid = (j as f64 + 0.5) * dt;
        sample_potential(trap, schedule, &x, t_mid, &mut pot)?;
        psi.values
            .iter_mut()
            .zip(&pot)
            .for_each(|(c, v)| *c *= Complex64::from_polar(1.0, -dt * v));
        spec.forward(&mut psi.values);
        let t_end = (j + 1) as f64 * dt;
        if is_sample(j) {
            psi.values.iter_mut().zip(&half_kin).for_each(|(c, k)| *c *= k);
            let mut snapshot = psi.clone();
            spec.inverse(&mut snapshot.values);
            record(&mut spec, &snapshot, t_end.min(tf), &mut pot)?;
            if j + 1 < steps {
                psi.values.iter_mut().zip(&half_kin).for_each(|(c, k)| *c *= k);
            } else {
                psi = snapshot;
            }
        } else {
            psi.values.iter_mut().zip(&full_kin).for_each(|(c, k)| *c *= k);
        }
    }

    if leak > settings.leak_tol {
        return Err(Error::GridTooSmall(leak));
    }
    if drift > settings.norm_tol {
        return Err(Error::StepSize(drift));
    }
    let fidelity = target.overlap(&psi).norm_sqr().min(1.0);
    Ok(SimOutcome {
        fidelity,
        energy_trace: trace,
        norm_drift: drift,
        boundary_leak: leak,
        final_state: psi,
    })
}

/// Initial and target states for an expansion to `omega_f^2 = gamma^-4`.
pub fn endpoint_states(
    trap: &TrapPotential,
    gamma: f64,
    mode: EndpointMode,
    grid: SpatialGrid,
) -> Result<(Wavefunction, Wavefunction)> {
    let nominal = TrapPotential {
        amp_error: 0.0,
        ..*trap
    };
    Ok((
        ground_state(&nominal, 1.0, mode, grid)?,
        ground_state(&nominal, gamma.powi(-4), mode, grid)?,
    ))
}
