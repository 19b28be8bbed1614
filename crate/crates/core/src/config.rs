//! Run configuration: TOML with `[trap]`, `[schedule]`, `[solver]` and `[scan]`
//! sections. Parsing fills every omitted value with its default, so the
//! resolved [`RunConfig`] is explicit and re-parses to itself.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{EngineSettings, HessianForm};
use crate::error::{invalid, Error, Result};
use crate::scans::{tau_range, ScanSpec, Scheme, SensitivitySpec, Simulator};
use crate::schedule::ExpansionProblem;
use crate::tdse::{EndpointMode, SimSettings, SpatialGrid};
use crate::trap::{waist_ratio_from_si, TrapFamily, TrapShape, AMU_SI};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapConfig {
    pub family: TrapFamily,
    pub alpha: Option<f64>,
    pub waist_ratio: Option<f64>,
    /// SI inputs used when `waist_ratio` is omitted for a Gaussian trap.
    pub trap_freq_hz: Option<f64>,
    pub waist_m: Option<f64>,
    pub mass_amu: Option<f64>,
    pub amp_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub gamma: f64,
    pub tau_f: f64,
    pub scheme: Option<Scheme>,
    pub components: Option<usize>,
    pub n_modes: Option<usize>,
    pub hessian_form: Option<HessianFormName>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HessianFormName {
    Derivation,
    Boxed,
}

impl From<HessianFormName> for HessianForm {
    fn from(h: HessianFormName) -> Self {
        match h {
            HessianFormName::Derivation => HessianForm::Derivation,
            HessianFormName::Boxed => HessianForm::Boxed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub grid_half_width: Option<f64>,
    pub grid_points: Option<usize>,
    pub time_steps: Option<usize>,
    pub energy_samples: Option<usize>,
    pub leak_tol: Option<f64>,
    pub norm_tol: Option<f64>,
    pub quadrature_order: Option<usize>,
    pub quadrature_tol: Option<f64>,
    pub time_nodes: Option<usize>,
    pub time_tol: Option<f64>,
    pub max_time_nodes: Option<usize>,
    pub endpoint_mode: Option<EndpointMode>,
    pub schedule_samples: Option<usize>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    /// Explicit grid; overrides `tau_min`/`tau_max`/`tau_step`.
    pub tau: Option<Vec<f64>>,
    pub tau_min: Option<f64>,
    pub tau_max: Option<f64>,
    pub tau_step: Option<f64>,
    pub schemes: Option<Vec<Scheme>>,
    pub components: Option<Vec<usize>>,
    pub stencil_order: Option<usize>,
    pub stencil_step: Option<f64>,
    pub n_eps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    out_dir: Option<String>,
    trap: TrapConfig,
    schedule: ScheduleConfig,
    #[serde(default)]
    solver: SolverConfig,
    #[serde(default)]
    scan: ScanConfig,
}

/// Fully resolved configuration; every field is set.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    raw: RawConfig,
}

const DEFAULT_ALPHA: f64 = 150.0;
const DEFAULT_TRAP_FREQ_HZ: f64 = 2500.0;
const DEFAULT_WAIST_M: f64 = 20.0 * 1060e-9;
const RB87_MASS_AMU: f64 = 86.909_180_527;

fn default_tau(family: TrapFamily) -> (f64, f64, f64) {
    match family {
        TrapFamily::Gaussian => (5.0, 20.0, 0.5),
        _ => (10.0, 40.0, 1.0),
    }
}

fn positive(field: &'static str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(field, format!("must be > 0, got {v}")))
    }
}

impl RunConfig {
    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::Config("line 1: empty configuration file".into()));
        }
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            let msg = e.message().trim().to_string();
            match line {
                Some(l) => Error::Config(format!("line {l}: {msg}")),
                None => Error::Config(msg),
            }
        })?;
        Self::resolve(raw)
    }

    /// Minimal configuration for one trap family with all defaults filled.
    pub fn minimal(family: TrapFamily, gamma: f64, tau_f: f64) -> Result<Self> {
        Self::resolve(RawConfig {
            out_dir: None,
            trap: TrapConfig {
                family,
                alpha: None,
                waist_ratio: None,
                trap_freq_hz: None,
                waist_m: None,
                mass_amu: None,
                amp_error: None,
            },
            schedule: ScheduleConfig {
                gamma,
                tau_f,
                scheme: None,
                components: None,
                n_modes: None,
                hessian_form: None,
            },
            solver: SolverConfig::default(),
            scan: ScanConfig::default(),
        })
    }

    fn resolve(mut raw: RawConfig) -> Result<Self> {
        let t = &mut raw.trap;
        match t.family {
            TrapFamily::Lattice => {
                t.alpha = Some(positive("alpha", t.alpha.unwrap_or(DEFAULT_ALPHA))?);
            }
            TrapFamily::Gaussian => {
                let f = positive("trap_freq_hz", *t.trap_freq_hz.get_or_insert(DEFAULT_TRAP_FREQ_HZ))?;
                let w = positive("waist_m", *t.waist_m.get_or_insert(DEFAULT_WAIST_M))?;
                let m = positive("mass_amu", *t.mass_amu.get_or_insert(RB87_MASS_AMU))?;
                let derived = waist_ratio_from_si(2.0 * std::f64::consts::PI * f, w, m * AMU_SI);
                t.waist_ratio = Some(positive("waist_ratio", t.waist_ratio.unwrap_or(derived))?);
            }
            TrapFamily::Harmonic => {}
        }
        let delta = *t.amp_error.get_or_insert(0.0);
        if !(delta > -1.0 && delta.is_finite()) {
            return Err(invalid("amp_error", format!("must be > -1, got {delta}")));
        }

        let s = &mut raw.schedule;
        positive("gamma", s.gamma)?;
        positive("tau_f", s.tau_f)?;
        s.scheme.get_or_insert(Scheme::Esta2);
        if *s.components.get_or_insert(1) == 0 {
            return Err(invalid("components", "must be >= 1"));
        }
        if *s.n_modes.get_or_insert(4) == 0 {
            return Err(invalid("n_modes", "must be >= 1"));
        }
        s.hessian_form.get_or_insert(HessianFormName::Derivation);
        let gamma = s.gamma;

        let sim = SimSettings::for_expansion(gamma);
        let eng = EngineSettings::default();
        let v = &mut raw.solver;
        let half = *v.grid_half_width.get_or_insert(sim.grid.half_width());
        let points = *v.grid_points.get_or_insert(sim.grid.n_points());
        SpatialGrid::new(half, points)?;
        if *v.time_steps.get_or_insert(sim.steps) == 0 {
            return Err(invalid("time_steps", "must be >= 1"));
        }
        if *v.energy_samples.get_or_insert(sim.energy_samples) == 0 {
            return Err(invalid("energy_samples", "must be >= 1"));
        }
        positive("leak_tol", *v.leak_tol.get_or_insert(sim.leak_tol))?;
        positive("norm_tol", *v.norm_tol.get_or_insert(sim.norm_tol))?;
        let q = *v.quadrature_order.get_or_insert(eng.quadrature_order);
        if q == 0 || q > crate::hermite::MAX_ORDER {
            return Err(invalid("quadrature_order", format!("must be in 1..={}", crate::hermite::MAX_ORDER)));
        }
        positive("quadrature_tol", *v.quadrature_tol.get_or_insert(eng.quadrature_tol))?;
        let tn = *v.time_nodes.get_or_insert(eng.time_nodes);
        if tn < 3 || tn % 2 == 0 {
            return Err(invalid("time_nodes", format!("must be odd and >= 3, got {tn}")));
        }
        positive("time_tol", *v.time_tol.get_or_insert(eng.time_tol))?;
        if *v.max_time_nodes.get_or_insert(eng.max_time_nodes) < tn {
            return Err(invalid("max_time_nodes", "must be >= time_nodes"));
        }
        v.endpoint_mode.get_or_insert(EndpointMode::Harmonic);
        if *v.schedule_samples.get_or_insert(1001) < 2 {
            return Err(invalid("schedule_samples", "must be >= 2"));
        }
        if *v.workers.get_or_insert(1) == 0 {
            return Err(invalid("workers", "must be >= 1"));
        }

        let c = &mut raw.scan;
        let (lo, hi, step) = default_tau(raw.trap.family);
        let lo = *c.tau_min.get_or_insert(lo);
        let hi = *c.tau_max.get_or_insert(hi);
        let step = *c.tau_step.get_or_insert(step);
        if c.tau.is_none() {
            c.tau = Some(tau_range(lo, hi, step)?);
        }
        c.schemes.get_or_insert_with(|| Scheme::ALL.to_vec());
        c.components.get_or_insert_with(|| vec![1, 8]);
        let stencil = SensitivitySpec {
            stencil_order: *c.stencil_order.get_or_insert(5),
            step: *c.stencil_step.get_or_insert(0.005),
        };
        stencil.validate()?;
        if *c.n_eps.get_or_insert(41) < 2 {
            return Err(invalid("n_eps", "must be >= 2"));
        }
        raw.out_dir.get_or_insert_with(|| "out".into());

        let cfg = Self { raw };
        cfg.problem()?;
        cfg.scan_spec(false, false)?.validate()?;
        Ok(cfg)
    }

    /// Resolved configuration as TOML text.
    pub fn emit(&self) -> String {
        toml::to_string(&self.raw).expect("config serializes")
    }

    pub fn family(&self) -> TrapFamily {
        self.raw.trap.family
    }

    pub fn trap_shape(&self) -> Result<TrapShape> {
        let t = &self.raw.trap;
        match t.family {
            TrapFamily::Lattice => TrapShape::lattice(t.alpha.unwrap()),
            TrapFamily::Gaussian => TrapShape::gaussian(t.waist_ratio.unwrap()),
            TrapFamily::Harmonic => Ok(TrapShape::Harmonic),
        }
    }

    pub fn amp_error(&self) -> f64 {
        self.raw.trap.amp_error.unwrap()
    }

    pub fn problem(&self) -> Result<ExpansionProblem> {
        let s = &self.raw.schedule;
        ExpansionProblem::new(self.trap_shape()?, s.gamma, s.tau_f, s.n_modes.unwrap())
    }

    pub fn scheme(&self) -> Scheme {
        self.raw.schedule.scheme.unwrap()
    }

    pub fn components(&self) -> usize {
        self.raw.schedule.components.unwrap()
    }

    pub fn schedule_samples(&self) -> usize {
        self.raw.solver.schedule_samples.unwrap()
    }

    pub fn workers(&self) -> usize {
        self.raw.solver.workers.unwrap()
    }

    pub fn n_eps(&self) -> usize {
        self.raw.scan.n_eps.unwrap()
    }

    pub fn out_dir(&self) -> &str {
        self.raw.out_dir.as_deref().unwrap()
    }

    pub fn endpoint_mode(&self) -> EndpointMode {
        self.raw.solver.endpoint_mode.unwrap()
    }

    pub fn sensitivity_spec(&self) -> SensitivitySpec {
        SensitivitySpec {
            stencil_order: self.raw.scan.stencil_order.unwrap(),
            step: self.raw.scan.stencil_step.unwrap(),
        }
    }

    pub fn simulator(&self) -> Result<Simulator> {
        let v = &self.raw.solver;
        Ok(Simulator {
            sim: SimSettings {
                grid: SpatialGrid::new(v.grid_half_width.unwrap(), v.grid_points.unwrap())?,
                steps: v.time_steps.unwrap(),
                energy_samples: v.energy_samples.unwrap(),
                leak_tol: v.leak_tol.unwrap(),
                norm_tol: v.norm_tol.unwrap(),
                ..SimSettings::for_expansion(self.raw.schedule.gamma)
            },
            endpoint_mode: v.endpoint_mode.unwrap(),
            engine: EngineSettings {
                quadrature_order: v.quadrature_order.unwrap(),
                quadrature_tol: v.quadrature_tol.unwrap(),
                time_nodes: v.time_nodes.unwrap(),
                time_tol: v.time_tol.unwrap(),
                max_time_nodes: v.max_time_nodes.unwrap(),
                hessian_form: self.raw.schedule.hessian_form.unwrap().into(),
            },
        })
    }

    pub fn scan_spec(&self, sensitivity: bool, energy: bool) -> Result<ScanSpec> {
        let c = &self.raw.scan;
        Ok(ScanSpec {
            problem: self.problem()?,
            schemes: c.schemes.clone().unwrap(),
            components: c.components.clone().unwrap(),
            tau_grid: c.tau.clone().unwrap(),
            sensitivity: sensitivity.then(|| self.sensitivity_spec()),
            energy,
        })
    }

    // command-line overrides

    pub fn set_out_dir(&mut self, dir: &str) {
        self.raw.out_dir = Some(dir.into());
    }

    pub fn set_workers(&mut self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(invalid("workers", "must be >= 1"));
        }
        self.raw.solver.workers = Some(n);
        Ok(())
    }

    pub fn set_endpoint_mode(&mut self, mode: EndpointMode) {
        self.raw.solver.endpoint_mode = Some(mode);
    }

    /// Selects one scheme for single runs and narrows scans to it.
    pub fn set_scheme(&mut self, scheme: Scheme) {
        self.raw.schedule.scheme = Some(scheme);
        self.raw.scan.schemes = Some(vec![scheme]);
    }

    pub fn set_components(&mut self, m: usize) -> Result<()> {
        if m == 0 {
            return Err(invalid("components", "must be >= 1"));
        }
        self.raw.schedule.components = Some(m);
        self.raw.scan.components = Some(vec![m]);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
# lattice expansion
[trap]
family = "lattice"
alpha = 150.0

[schedule]
gamma = 10.0
tau_f = 25.0
"#;

    #[test]
    fn minimal_lattice_fills_defaults() {
        let c = RunConfig::parse_str(MINIMAL).unwrap();
        assert_eq!(c.scheme(), Scheme::Esta2);
        assert_eq!(c.components(), 1);
        let sim = c.simulator().unwrap();
        assert_eq!(sim.sim.grid.half_width(), 120.0);
        assert_eq!(sim.sim.grid.n_points(), 4096);
        assert_eq!(sim.sim.steps, 1 << 15);
        assert_eq!(sim.engine, EngineSettings::default());
        let spec = c.scan_spec(false, false).unwrap();
        assert_eq!(spec.tau_grid.len(), 31);
        assert_eq!(spec.components, vec![1, 8]);
        let p = c.problem().unwrap();
        assert_eq!(p.n_modes, 4);
        assert!((p.tau_f - 25.0).abs() < 1e-15);
    }

    #[test]
    fn round_trip_is_identity() {
        let c = RunConfig::parse_str(MINIMAL).unwrap();
        let again = RunConfig::parse_str(&c.emit()).unwrap();
        assert_eq!(c, again);
        let g = RunConfig::minimal(TrapFamily::Gaussian, 10.0, 13.0).unwrap();
        assert_eq!(RunConfig::parse_str(&g.emit()).unwrap(), g);
    }

    #[test]
    fn gaussian_waist_derived_from_si_inputs() {
        let g = RunConfig::minimal(TrapFamily::Gaussian, 10.0, 13.0).unwrap();
        match g.trap_shape().unwrap() {
            TrapShape::Gaussian { waist_ratio } => assert!((waist_ratio - 98.3).abs() < 0.1, "{waist_ratio}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negative_gamma_names_field() {
        let text = MINIMAL.replace("gamma = 10.0", "gamma = -1.0");
        match RunConfig::parse_str(&text) {
            Err(Error::InvalidParameter { field, .. }) => assert_eq!(field, "gamma"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_file_is_rejected() {
        assert!(matches!(RunConfig::parse_str(""), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse_str("  \n# nothing\n"), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = MINIMAL.replace("alpha = 150.0", "alpha = 150.0\nbogus = 1");
        match RunConfig::parse_str(&text) {
            Err(Error::Config(msg)) => {
                assert!(msg.starts_with("line 6"), "{msg}");
                assert!(msg.contains("bogus"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_line() {
        let text = MINIMAL.replace("tau_f = 25.0", "tau_f = = 25");
        match RunConfig::parse_str(&text) {
            Err(Error::Config(msg)) => assert!(msg.starts_with("line 9"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn explicit_tau_grid_must_increase() {
        let text = format!("{MINIMAL}\n[scan]\ntau = [20.0, 15.0]\n");
        assert!(RunConfig::parse_str(&text).is_err());
        let text = format!("{MINIMAL}\n[scan]\ntau = [20.0, 25.0, 30.0]\nschemes = [\"sta\", \"esta2\"]\n");
        let c = RunConfig::parse_str(&text).unwrap();
        assert_eq!(c.scan_spec(false, false).unwrap().tau_grid, vec![20.0, 25.0, 30.0]);
    }

    #[test]
    fn overrides_apply() {
        let mut c = RunConfig::parse_str(MINIMAL).unwrap();
        c.set_scheme(Scheme::Esta1);
        c.set_components(8).unwrap();
        c.set_endpoint_mode(EndpointMode::Exact);
        assert!(c.set_workers(0).is_err());
        let spec = c.scan_spec(false, false).unwrap();
        assert_eq!(spec.schemes, vec![Scheme::Esta1]);
        assert_eq!(spec.components, vec![8]);
        assert_eq!(c.simulator().unwrap().endpoint_mode, EndpointMode::Exact);
        assert_eq!(RunConfig::parse_str(&c.emit()).unwrap(), c);
    }
}
