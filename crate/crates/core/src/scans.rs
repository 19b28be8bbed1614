//! Fidelity, landscape, sensitivity and energy scans over expansion schedules.
//!
//! Every scan is a flat list of independent jobs executed on a dedicated rayon
//! pool; results are collected in job order, so the output does not depend on
//! the worker count.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{EngineSettings, EstaEngine, EstaSolution};
use crate::error::{invalid, Error, Result};
use crate::schedule::{ControlSchedule, ExpansionProblem};
use crate::tdse::{endpoint_states, propagate, EndpointMode, SimOutcome, SimSettings, Wavefunction};
use crate::trap::TrapPotential;

/// Fidelity threshold for the first-good-tau marker.
pub const MARKER_FIDELITY: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Sta,
    Esta1,
    Esta2,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Sta, Scheme::Esta1, Scheme::Esta2];

    /// Control vector this scheme applies for a given solution.
    pub fn lambda(self, sol: &EstaSolution) -> Vec<f64> {
        match self {
            Scheme::Sta => vec![0.0; sol.grad.len()],
            Scheme::Esta1 => sol.lambda1.clone(),
            Scheme::Esta2 => sol.lambda2.clone(),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Sta => "sta",
            Scheme::Esta1 => "esta1",
            Scheme::Esta2 => "esta2",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sta" => Ok(Scheme::Sta),
            "esta1" => Ok(Scheme::Esta1),
            "esta2" => Ok(Scheme::Esta2),
            _ => Err(invalid("scheme", format!("expected sta, esta1 or esta2, got {s:?}"))),
        }
    }
}

/// Central finite-difference stencil for `S = |dF/d delta|` at `delta = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySpec {
    pub stencil_order: usize,
    pub step: f64,
}

impl Default for SensitivitySpec {
    fn default() -> Self {
        Self {
            stencil_order: 5,
            step: 0.005,
        }
    }
}

impl SensitivitySpec {
    pub fn validate(&self) -> Result<()> {
        if self.stencil_order != 3 && self.stencil_order != 5 {
            return Err(invalid("stencil_order", format!("must be 3 or 5, got {}", self.stencil_order)));
        }
        if !(self.step > 0.0 && self.step <= 0.05) {
            return Err(invalid("step", format!("must be in (0, 0.05], got {}", self.step)));
        }
        Ok(())
    }

    /// `(offset, weight)` pairs; the derivative is `sum w F(offset) / h`.
    fn taps(&self) -> Vec<(f64, f64)> {
        let h = self.step;
        match self.stencil_order {
            3 => vec![(-h, -0.5), (h, 0.5)],
            _ => vec![(-2.0 * h, 1.0 / 12.0), (-h, -8.0 / 12.0), (h, 8.0 / 12.0), (2.0 * h, -1.0 / 12.0)],
        }
    }

    /// `|f'(0)|` from the stencil; every sample must lie in `[0, 1]`.
    pub fn derivative<F: FnMut(f64) -> Result<f64>>(&self, mut f: F) -> Result<f64> {
        self.validate()?;
        let mut acc = 0.0;
        for (delta, w) in self.taps() {
            let value = f(delta)?;
            if !(-1e-12..=1.0 + 1e-12).contains(&value) {
                return Err(Error::StencilRange { delta, value });
            }
            acc += w * value;
        }
        Ok((acc / self.step).abs())
    }
}

/// Numerical settings shared by every simulation in a scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulator {
    pub sim: SimSettings,
    pub endpoint_mode: EndpointMode,
    pub engine: EngineSettings,
}

impl Simulator {
    pub fn for_gamma(gamma: f64) -> Self {
        Self {
            sim: SimSettings::for_expansion(gamma),
            endpoint_mode: EndpointMode::default(),
            engine: EngineSettings::default(),
        }
    }

    pub fn endpoints(&self, problem: &ExpansionProblem) -> Result<(Wavefunction, Wavefunction)> {
        endpoint_states(&TrapPotential::new(problem.trap), problem.gamma, self.endpoint_mode, self.sim.grid)
    }

    pub fn solve(&self, problem: &ExpansionProblem, components: usize) -> Result<(EstaEngine, EstaSolution)> {
        let engine = EstaEngine::new(*problem, components, self.engine.clone())?;
        let sol = engine.solve()?;
        Ok((engine, sol))
    }

    /// Propagation under the trap with amplitude error `delta`.
    pub fn run(
        &self,
        problem: &ExpansionProblem,
        schedule: &ControlSchedule,
        delta: f64,
        states: &(Wavefunction, Wavefunction),
    ) -> Result<SimOutcome> {
        let trap = TrapPotential::new(problem.trap).with_amp_error(delta);
        propagate(&trap, schedule, &states.0, &states.1, &self.sim)
    }

    pub fn sensitivity(
        &self,
        problem: &ExpansionProblem,
        schedule: &ControlSchedule,
        spec: &SensitivitySpec,
        states: &(Wavefunction, Wavefunction),
    ) -> Result<f64> {
        spec.derivative(|delta| Ok(self.run(problem, schedule, delta, states)?.fidelity))
    }
}

/// `E(lambda) / E(0)` from two traced runs.
pub fn energy_ratio(corrected: &SimOutcome, sta: &SimOutcome) -> f64 {
    corrected.time_averaged_energy() / sta.time_averaged_energy()
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// A fidelity scan over expansion times.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanSpec {
    /// Template; its `tau_f` is replaced by each grid value.
    pub problem: ExpansionProblem,
    pub schemes: Vec<Scheme>,
    pub components: Vec<usize>,
    pub tau_grid: Vec<f64>,
    pub sensitivity: Option<SensitivitySpec>,
    pub energy: bool,
}

impl ScanSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tau_grid.is_empty() {
            return Err(invalid("tau", "grid is empty"));
        }
        if self.tau_grid.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(invalid("tau", "values must be positive and finite"));
        }
        if self.tau_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("tau", "grid must be strictly increasing"));
        }
        if self.schemes.is_empty() {
            return Err(invalid("schemes", "no scheme selected"));
        }
        if self.components.is_empty() || self.components.contains(&0) {
            return Err(invalid("components", "need at least one value, each >= 1"));
        }
        if let Some(s) = &self.sensitivity {
            s.validate()?;
        }
        Ok(())
    }
}

/// Inclusive `[lo, hi]` grid with spacing `step`, robust to rounding at the end.
pub fn tau_range(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(hi >= lo) || !(lo > 0.0) {
        return Err(invalid("tau", format!("bad range {lo}..{hi} step {step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + i as f64 * step).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub tau: f64,
    pub scheme: Scheme,
    pub components: usize,
    pub fidelity: f64,
    pub sensitivity: Option<f64>,
    pub e_ratio: Option<f64>,
    /// `None` for a successful point, otherwise the error that stopped it.
    pub failure: Option<String>,
}

impl ScanRow {
    pub fn ok(&self) -> bool {
        self.failure.is_none()
    }
}

struct PointResult {
    fidelity: f64,
    energy: f64,
    sensitivity: Option<f64>,
}

/// Runs the scan; failures are reported per row and never abort the scan.
pub fn fidelity_scan(spec: &ScanSpec, sim: &Simulator, workers: usize) -> Result<Vec<ScanRow>> {
    spec.validate()?;
    let states = sim.endpoints(&spec.problem)?;
    let pool = pool(workers)?;

    // the STA point does not depend on M; run it once per tau
    let mut jobs: Vec<(usize, Scheme, usize)> = Vec::new();
    for (i, _) in spec.tau_grid.iter().enumerate() {
        jobs.push((i, Scheme::Sta, 0));
        for &m in &spec.components {
            for &s in spec.schemes.iter().filter(|s| **s != Scheme::Sta) {
                jobs.push((i, s, m));
            }
        }
    }

    let point = |tau: f64, scheme: Scheme, m: usize| -> Result<PointResult> {
        let problem = spec.problem.with_tau(tau)?;
        let schedule = if scheme == Scheme::Sta {
            ControlSchedule::sta(problem.scaling()?, 0)?
        } else {
            let (engine, sol) = sim.solve(&problem, m)?;
            engine.schedule().retuned(scheme.lambda(&sol))
        };
        let out = sim.run(&problem, &schedule, 0.0, &states)?;
        let sensitivity = match &spec.sensitivity {
            Some(s) => Some(sim.sensitivity(&problem, &schedule, s, &states)?),
            None => None,
        };
        Ok(PointResult {
            fidelity: out.fidelity,
            energy: out.time_averaged_energy(),
            sensitivity,
        })
    };

    let results: Vec<Result<PointResult>> = pool.install(|| {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|&(i, s, m)| point(spec.tau_grid[i], s, m))
            .collect()
    });

    let mut rows = Vec::new();
    for (i, &tau) in spec.tau_grid.iter().enumerate() {
        let sta_idx = jobs.iter().position(|j| j.0 == i && j.1 == Scheme::Sta).unwrap();
        let sta_energy = results[sta_idx].as_ref().ok().map(|r| r.energy);
        let make_row = |scheme: Scheme, m: usize, res: &Result<PointResult>| match res {
            Ok(r) => ScanRow {
                tau,
                scheme,
                components: m,
                fidelity: r.fidelity,
                sensitivity: r.sensitivity,
                e_ratio: spec.energy.then(|| sta_energy.map_or(f64::NAN, |e0| r.energy / e0)),
                failure: None,
            },
            Err(e) => ScanRow {
                tau,
                scheme,
                components: m,
                fidelity: f64::NAN,
                sensitivity: spec.sensitivity.map(|_| f64::NAN),
                e_ratio: spec.energy.then_some(f64::NAN),
                failure: Some(e.to_string()),
            },
        };
        for &m in &spec.components {
            for &scheme in &spec.schemes {
                let idx = if scheme == Scheme::Sta {
                    sta_idx
                } else {
                    jobs.iter().position(|j| *j == (i, scheme, m)).unwrap()
                };
                rows.push(make_row(scheme, m, &results[idx]));
            }
        }
    }
    Ok(rows)
}

/// First tau at which `scheme` with `components` reaches `threshold`.
pub fn first_tau_above(rows: &[ScanRow], scheme: Scheme, components: usize, threshold: f64) -> Option<f64> {
    rows.iter()
        .filter(|r| r.scheme == scheme && r.components == components && r.ok())
        .find(|r| r.fidelity >= threshold)
        .map(|r| r.tau)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandscapeRow {
    pub eps: f64,
    pub eps_over_eps2: f64,
    pub f_true: f64,
    pub f_parab1: f64,
    pub f_parab2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Landscape {
    pub rows: Vec<LandscapeRow>,
    pub eps1: f64,
    pub eps2: f64,
    /// Simulated fidelities at `0`, `eps1` and `eps2`.
    pub f_sta: f64,
    pub f_eps1: f64,
    pub f_eps2: f64,
    pub solution: EstaSolution,
}

impl Landscape {
    /// Grid point with the largest simulated fidelity.
    pub fn argmax(&self) -> Option<&LandscapeRow> {
        self.rows
            .iter()
            .filter(|r| r.f_true.is_finite())
            .max_by(|a, b| a.f_true.total_cmp(&b.f_true))
    }
}

/// Parabola through `(0, f0)` with slope `slope` and curvature `curv`.
pub fn parabola(f0: f64, slope: f64, curv: f64, eps: f64) -> f64 {
    f0 + slope * eps + 0.5 * curv * eps * eps
}

/// Simulated fidelity along `eps * v_hat` for `eps / eps2` in `[-0.25, 2]`.
///
/// Both model parabolas are anchored at the simulated STA fidelity and share
/// the slope `|v|`. The first assumes unit peak fidelity at `eps1`; the second
/// uses the Hessian curvature along `v_hat`.
pub fn landscape_scan(problem: &ExpansionProblem, components: usize, n_eps: usize, sim: &Simulator, workers: usize) -> Result<Landscape> {
    if n_eps < 2 {
        return Err(invalid("n_eps", "need at least two points"));
    }
    let (engine, sol) = sim.solve(problem, components)?;
    let vnorm = sol.grad_norm();
    if vnorm == 0.0 {
        return Err(Error::DegenerateGradient);
    }
    let dir = sol.direction();
    let states = sim.endpoints(problem)?;
    let eps2 = sol.eps2;
    let ratios: Vec<f64> = (0..n_eps)
        .map(|i| -0.25 + 2.25 * i as f64 / (n_eps - 1) as f64)
        .collect();
    let mut eps_list: Vec<f64> = ratios.iter().map(|r| r * eps2).collect();
    eps_list.extend([0.0, sol.eps1, eps2]);

    let pool = pool(workers)?;
    let fids: Vec<Result<f64>> = pool.install(|| {
        use rayon::prelude::*;
        eps_list
            .par_iter()
            .map(|&eps| {
                let schedule = engine.schedule().retuned(dir.iter().map(|d| eps * d).collect());
                Ok(sim.run(problem, &schedule, 0.0, &states)?.fidelity)
            })
            .collect()
    });
    let tail = &fids[n_eps..];
    let f_sta = tail[0].clone()?;
    let f_eps1 = tail[1].clone()?;
    let f_eps2 = tail[2].clone()?;
    let c1 = -vnorm * vnorm / (2.0 * (1.0 - sol.f_approx));
    let c2 = sol.curvature;
    let rows = ratios
        .iter()
        .zip(&eps_list)
        .zip(&fids)
        .map(|((&r, &eps), f)| LandscapeRow {
            eps,
            eps_over_eps2: r,
            f_true: f.as_ref().copied().unwrap_or(f64::NAN),
            f_parab1: parabola(f_sta, vnorm, c1, eps),
            f_parab2: parabola(f_sta, vnorm, c2, eps),
        })
        .collect();
    Ok(Landscape {
        rows,
        eps1: sol.eps1,
        eps2,
        f_sta,
        f_eps1,
        f_eps2,
        solution: sol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trap::TrapShape;
    use proptest::prelude::*;

    #[test]
    fn scheme_parses_and_prints() {
        for s in Scheme::ALL {
            assert_eq!(s.to_string().parse::<Scheme>().unwrap(), s);
        }
        assert!("grape".parse::<Scheme>().is_err());
    }

    #[test]
    fn stencil_of_constant_is_zero() {
        let s = SensitivitySpec::default().derivative(|_| Ok(0.97)).unwrap();
        assert!(s < 1e-14);
    }

    #[test]
    fn stencil_of_even_function_is_zero() {
        let s = SensitivitySpec::default().derivative(|d| Ok(1.0 - d * d)).unwrap();
        assert!(s < 1e-14);
    }

    #[test]
    fn stencil_rejects_out_of_range_values() {
        let r = SensitivitySpec::default().derivative(|d| Ok(1.0 + d));
        assert!(matches!(r, Err(Error::StencilRange { .. })));
    }

    #[test]
    fn stencil_spec_validation() {
        assert!(SensitivitySpec { stencil_order: 4, step: 0.005 }.validate().is_err());
        assert!(SensitivitySpec { stencil_order: 5, step: 0.06 }.validate().is_err());
        assert!(SensitivitySpec { stencil_order: 5, step: 0.0 }.validate().is_err());
        assert!(SensitivitySpec { stencil_order: 3, step: 0.05 }.validate().is_ok());
    }

    proptest! {
        #[test]
        fn five_point_stencil_exact_for_quartics(c in prop::array::uniform5(-0.1f64..0.1), h in 0.001f64..0.05) {
            let spec = SensitivitySpec { stencil_order: 5, step: h };
            let f = |d: f64| 0.5 + c[0] + c[1] * d + c[2] * d * d + c[3] * d.powi(3) + c[4] * d.powi(4);
            let s = spec.derivative(|d| Ok(f(d))).unwrap();
            prop_assert!((s - c[1].abs()).abs() < 1e-12);
        }

        #[test]
        fn three_point_stencil_exact_for_quadratics(c in prop::array::uniform3(-0.1f64..0.1), h in 0.001f64..0.05) {
            let spec = SensitivitySpec { stencil_order: 3, step: h };
            let s = spec.derivative(|d| Ok(0.5 + c[0] + c[1] * d + c[2] * d * d)).unwrap();
            prop_assert!((s - c[1].abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn tau_range_is_inclusive() {
        let g = tau_range(5.0, 20.0, 0.5).unwrap();
        assert_eq!(g.len(), 31);
        assert_eq!(*g.last().unwrap(), 20.0);
        assert!(tau_range(10.0, 5.0, 1.0).is_err());
    }

    #[test]
    fn parabola_anchor_and_peak() {
        assert_eq!(parabola(0.9, 3.0, -2.0, 0.0), 0.9);
        // peak at -slope / curv
        let peak = 1.5;
        let f = |e| parabola(0.9, 3.0, -2.0, e);
        assert!(f(peak) > f(peak - 1e-3) && f(peak) > f(peak + 1e-3));
    }

    #[test]
    fn scan_spec_validation() {
        let problem = ExpansionProblem::new(TrapShape::Harmonic, 2.0, 3.0, 4).unwrap();
        let mut spec = ScanSpec {
            problem,
            schemes: vec![Scheme::Sta],
            components: vec![1],
            tau_grid: vec![3.0, 2.0],
            sensitivity: None,
            energy: false,
        };
        assert!(spec.validate().is_err());
        spec.tau_grid = vec![-1.0];
        assert!(spec.validate().is_err());
        spec.tau_grid = vec![1.0, 2.0];
        assert!(spec.validate().is_ok());
        spec.components = vec![0];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn marker_picks_first_good_tau() {
        let row = |tau, fidelity| ScanRow {
            tau,
            scheme: Scheme::Esta2,
            components: 8,
            fidelity,
            sensitivity: None,
            e_ratio: None,
            failure: None,
        };
        let rows = vec![row(10.0, 0.8), row(11.0, 0.96), row(12.0, 0.94), row(13.0, 0.99)];
        assert_eq!(first_tau_above(&rows, Scheme::Esta2, 8, MARKER_FIDELITY), Some(11.0));
        assert_eq!(first_tau_above(&rows, Scheme::Sta, 8, MARKER_FIDELITY), None);
    }
}
