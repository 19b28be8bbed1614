//! Perturbative fidelity expansion around the STA schedule and the two eSTA
//! corrections built from it.
//!
//! All matrix elements reduce to one-dimensional integrals in the scaled
//! coordinate `s = x / b(t)`:
//!
//! `Gamma_{n,0}(t) = exp(i n Theta(t)) int phi_n(s) phi_0(s) dV(b s, t) ds`
//!
//! because the `beta` phases of the invariant modes cancel for a multiplicative
//! perturbation. The spatial integral uses Gauss–Hermite quadrature, the time
//! integral composite Simpson.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hermite::{hermite_functions, GaussHermite, MAX_ORDER};
use crate::schedule::{ControlSchedule, ExpansionProblem};
use crate::trap::TrapPotential;

/// Which closed form of the Hessian to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HessianForm {
    /// `-2 sum Re[W G + K_k^* K_l]`, the exact second derivative of the truncated fidelity.
    #[default]
    Derivation,
    /// `-2 sum Re[W G - K_k^* K_l]`, kept only for comparison.
    Boxed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineSettings {
    pub quadrature_order: usize,
    /// Relative stability demanded when the quadrature order is doubled.
    pub quadrature_tol: f64,
    /// Simpson nodes in time (odd).
    pub time_nodes: usize,
    /// Relative change accepted when the time nodes are doubled.
    pub time_tol: f64,
    pub max_time_nodes: usize,
    pub hessian_form: HessianForm,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            quadrature_order: 200,
            quadrature_tol: 1e-7,
            time_nodes: 2001,
            time_tol: 1e-6,
            max_time_nodes: 64_001,
            hessian_form: HessianForm::Derivation,
        }
    }
}

/// `G_n`, `K_n` and `W_n` for a set of modes at one control point.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbativeTerms {
    pub modes: Vec<usize>,
    pub g: Vec<Complex64>,
    /// `kmat[[i, k]] = (K_{modes[i]})_k`.
    pub kmat: Array2<Complex64>,
    /// `wtens[[i, l, k]] = (W_{modes[i]})_{l,k}`.
    pub wtens: Array3<Complex64>,
}

impl PerturbativeTerms {
    fn flat(&self) -> impl Iterator<Item = &Complex64> {
        self.g.iter().chain(self.kmat.iter()).chain(self.wtens.iter())
    }

    fn relative_change(&self, other: &Self) -> f64 {
        let diff: f64 = self
            .flat()
            .zip(other.flat())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let scale: f64 = other.flat().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if scale == 0.0 {
            diff
        } else {
            diff / scale
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceReport {
    pub quadrature_order: usize,
    pub quadrature_change: f64,
    pub time_nodes: usize,
    pub time_change: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstaStatus {
    Ok,
    /// `v^T H v >= 0`: eSTA2 undefined, `lambda2` falls back to `lambda1`.
    NonConcave,
    /// `|v| = 0`: both corrections undefined, STA returned unchanged.
    DegenerateGradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstaSolution {
    pub terms: PerturbativeTerms,
    pub f_approx: f64,
    /// `f < 0`: the truncated expansion is outside its perturbative regime.
    pub beyond_perturbative: bool,
    pub grad: Vec<f64>,
    pub hess: Array2<f64>,
    /// `v^T H v / |v|^2`, the curvature along the gradient direction.
    pub curvature: f64,
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub eps1: f64,
    pub eps2: f64,
    pub status: EstaStatus,
    pub convergence: ConvergenceReport,
}

impl EstaSolution {
    pub fn grad_norm(&self) -> f64 {
        norm(&self.grad)
    }

    /// Unit gradient direction, zero when the gradient vanishes.
    pub fn direction(&self) -> Vec<f64> {
        let n = self.grad_norm();
        if n == 0.0 {
            vec![0.0; self.grad.len()]
        } else {
            self.grad.iter().map(|v| v / n).collect()
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `f = 1 - sum |G_n|^2`.
pub fn fidelity_approx(g: &[Complex64]) -> f64 {
    1.0 - g.iter().map(|x| x.norm_sqr()).sum::<f64>()
}

/// `v_k = -2 sum_n Re(G_n^* (K_n)_k)`.
pub fn gradient_approx(g: &[Complex64], kmat: &Array2<Complex64>) -> Vec<f64> {
    (0..kmat.ncols())
        .map(|k| {
            -2.0 * g
                .iter()
                .enumerate()
                .map(|(i, gn)| (gn.conj() * kmat[[i, k]]).re)
                .sum::<f64>()
        })
        .collect()
}

pub fn hessian_approx(
    g: &[Complex64],
    kmat: &Array2<Complex64>,
    wtens: &Array3<Complex64>,
    form: HessianForm,
) -> Array2<f64> {
    let m = kmat.ncols();
    let sign = match form {
        HessianForm::Derivation => 1.0,
        HessianForm::Boxed => -1.0,
    };
    let raw = Array2::from_shape_fn((m, m), |(l, k)| {
        -2.0 * g
            .iter()
            .enumerate()
            .map(|(i, gn)| (wtens[[i, l, k]] * gn + sign * kmat[[i, k]].conj() * kmat[[i, l]]).re)
            .sum::<f64>()
    });
    Array2::from_shape_fn((m, m), |(l, k)| 0.5 * (raw[[l, k]] + raw[[k, l]]))
}

/// First-order correction `2 (1 - f) v / |v|^2`, with `eps1 = 2 (1 - f) / |v|`.
pub fn esta1(f: f64, v: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n2: f64 = v.iter().map(|x| x * x).sum();
    if n2 == 0.0 {
        return Err(Error::DegenerateGradient);
    }
    let scale = 2.0 * (1.0 - f) / n2;
    Ok((v.iter().map(|x| scale * x).collect(), scale * n2.sqrt()))
}

/// Hessian correction `-v |v|^2 / (v^T H v)`, with `eps2 = -|v| / (v_hat^T H v_hat)`.
pub fn esta2(v: &[f64], hess: &Array2<f64>) -> Result<(Vec<f64>, f64)> {
    let n2: f64 = v.iter().map(|x| x * x).sum();
    if n2 == 0.0 {
        return Err(Error::DegenerateGradient);
    }
    let vhv = quad_form(v, hess);
    if !(vhv < 0.0) {
        return Err(Error::NonConcave(vhv));
    }
    let scale = -n2 / vhv;
    Ok((v.iter().map(|x| scale * x).collect(), scale * n2.sqrt()))
}

fn quad_form(v: &[f64], h: &Array2<f64>) -> f64 {
    let m = v.len();
    let mut acc = 0.0;
    for l in 0..m {
        for k in 0..m {
            acc += v[l] * h[[l, k]] * v[k];
        }
    }
    acc
}

/// Spatial rule with the Hermite-function products it needs.
struct SpatialRule {
    gh: std::sync::Arc<GaussHermite>,
    /// `weight_q * phi_n(s_q) * phi_0(s_q)` for each retained mode, mode-major.
    kernels: Vec<Vec<f64>>,
}

impl SpatialRule {
    fn new(order: usize, modes: &[usize]) -> Result<Self> {
        let gh = GaussHermite::cached(order)?;
        let n_max = modes.iter().copied().max().unwrap_or(0);
        let table: Vec<Vec<f64>> = gh.nodes().iter().map(|&s| hermite_functions(n_max, s)).collect();
        let kernels = modes
            .iter()
            .map(|&n| {
                table
                    .iter()
                    .zip(gh.weights())
                    .map(|(row, w)| w * row[n] * row[0])
                    .collect()
            })
            .collect();
        Ok(Self { gh, kernels })
    }
}

/// Per-node schedule data reused by every spatial integral.
struct TimeGrid {
    weights: Vec<f64>,
    b: Vec<f64>,
    omega_sq: Vec<f64>,
    theta: Vec<f64>,
    basis: Vec<Vec<f64>>,
    /// Sign of the control inside each node's segment; endpoints sitting on a
    /// zero crossing take the one-sided limit from this side.
    side: Vec<f64>,
}

impl TimeGrid {
    /// Composite Simpson split at the sign changes of `omega~^2(t)`, where the
    /// lattice potential is not smooth in the control.
    fn new(schedule: &ControlSchedule, lambda: &[f64], nodes: usize) -> Result<Self> {
        let tf = schedule.tau_f();
        let tuned = schedule.retuned(lambda.to_vec());
        let u = |t: f64| tuned.omega_sq_total(t);
        let mut breaks = vec![0.0];
        breaks.extend(sign_changes(&u, tf, 4096)?);
        breaks.push(tf);

        let intervals = nodes.saturating_sub(1).max(2) as f64;
        let mut g = TimeGrid {
            weights: Vec::with_capacity(nodes + 2 * breaks.len()),
            b: Vec::new(),
            omega_sq: Vec::new(),
            theta: Vec::new(),
            basis: Vec::new(),
            side: Vec::new(),
        };
        for seg in breaks.windows(2) {
            let (a, c) = (seg[0], seg[1]);
            let half = ((c - a) / tf * intervals / 2.0).round().max(1.0) as usize;
            let n = 2 * half;
            let h = (c - a) / n as f64;
            let side = if u(0.5 * (a + c))? < 0.0 { -1.0 } else { 1.0 };
            for i in 0..=n {
                let t = if i == n { c } else { a + i as f64 * h };
                let w = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                g.weights.push(w * h / 3.0);
                g.b.push(schedule.base().derivs(t)?.b);
                g.omega_sq.push(schedule.omega_sq_sta(t)?);
                g.theta.push(schedule.theta(t)?);
                g.basis.push(schedule.cardinal_basis(t)?);
                g.side.push(side);
            }
        }
        Ok(g)
    }

    fn len(&self) -> usize {
        self.weights.len()
    }
}

/// Roots of `f` on `(0, tf)` located by a uniform sign scan and bisection.
fn sign_changes<F: Fn(f64) -> Result<f64>>(f: &F, tf: f64, samples: usize) -> Result<Vec<f64>> {
    let mut roots = Vec::new();
    let mut t0 = 0.0;
    let mut f0 = f(t0)?;
    for i in 1..=samples {
        let t1 = tf * i as f64 / samples as f64;
        let f1 = f(t1)?;
        if f0 != 0.0 && f1 != 0.0 && f0.signum() != f1.signum() {
            let (mut lo, mut hi, f_lo) = (t0, t1, f0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let fm = f(mid)?;
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if fm.signum() == f_lo.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        t0 = t1;
        f0 = f1;
    }
    Ok(roots)
}

/// Builds the perturbative expansion for one problem and correction size.
pub struct EstaEngine {
    problem: ExpansionProblem,
    trap: TrapPotential,
    schedule: ControlSchedule,
    settings: EngineSettings,
    modes: Vec<usize>,
}

impl EstaEngine {
    pub fn new(problem: ExpansionProblem, components: usize, settings: EngineSettings) -> Result<Self> {
        if components == 0 {
            return Err(crate::error::invalid("components", "eSTA needs at least one component"));
        }
        let schedule = ControlSchedule::sta(problem.scaling()?, components)?;
        Ok(Self {
            trap: TrapPotential::new(problem.trap),
            modes: problem.mode_indices(),
            problem,
            schedule,
            settings,
        })
    }

    pub fn problem(&self) -> &ExpansionProblem {
        &self.problem
    }

    /// The STA schedule the corrections are applied to.
    pub fn schedule(&self) -> &ControlSchedule {
        &self.schedule
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    fn terms_with(&self, rule: &SpatialRule, grid: &TimeGrid, lambda: &[f64]) -> PerturbativeTerms {
        let m = self.schedule.components();
        let nm = self.modes.len();
        let nodes = rule.gh.nodes();
        let trap = self.trap;

        // (I0, I1, I2) spatial integrals per mode for each time node.
        let per_node: Vec<Vec<[f64; 3]>> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let b = grid.b[i];
                let w2 = grid.omega_sq[i];
                let mut u = w2
                    + grid.basis[i]
                        .iter()
                        .zip(lambda)
                        .map(|(l, lam)| l * lam)
                        .sum::<f64>();
                if u * grid.side[i] <= 0.0 {
                    u = grid.side[i] * f64::MIN_POSITIVE;
                }
                let mut acc = vec![[0.0; 3]; nm];
                for (q, &s) in nodes.iter().enumerate() {
                    let x = b * s;
                    let dv = trap.potential(x, u) - 0.5 * w2 * x * x;
                    let d1 = trap.dv_du(x, u);
                    let d2 = trap.d2v_du2(x, u);
                    for (j, kern) in rule.kernels.iter().enumerate() {
                        let kq = kern[q];
                        acc[j][0] += kq * dv;
                        acc[j][1] += kq * d1;
                        acc[j][2] += kq * d2;
                    }
                }
                acc
            })
            .collect();

        let mut g = vec![Complex64::new(0.0, 0.0); nm];
        let mut kmat = Array2::<Complex64>::zeros((nm, m));
        let mut wtens = Array3::<Complex64>::zeros((nm, m, m));
        for (i, ints) in per_node.iter().enumerate() {
            let w = grid.weights[i];
            let basis = &grid.basis[i];
            for (j, &n) in self.modes.iter().enumerate() {
                let phase = Complex64::from_polar(1.0, n as f64 * grid.theta[i]);
                let [i0, i1, i2] = ints[j];
                g[j] += w * i0 * phase;
                for k in 0..m {
                    kmat[[j, k]] += w * i1 * basis[k] * phase;
                    if i2 != 0.0 {
                        for l in 0..m {
                            wtens[[j, l, k]] += w * i2 * basis[l] * basis[k] * phase.conj();
                        }
                    }
                }
            }
        }
        PerturbativeTerms {
            modes: self.modes.clone(),
            g,
            kmat,
            wtens,
        }
    }

    /// Terms at `lambda` with explicit quadrature sizes (no convergence loop).
    pub fn terms_at(&self, lambda: &[f64], quadrature_order: usize, time_nodes: usize) -> Result<PerturbativeTerms> {
        let rule = SpatialRule::new(quadrature_order, &self.modes)?;
        let grid = TimeGrid::new(&self.schedule, lambda, time_nodes)?;
        Ok(self.terms_with(&rule, &grid, lambda))
    }

    /// Truncated fidelity `1 - sum |G_n(lambda)|^2` away from the STA point.
    pub fn approx_fidelity_at(&self, lambda: &[f64], quadrature_order: usize, time_nodes: usize) -> Result<f64> {
        Ok(fidelity_approx(&self.terms_at(lambda, quadrature_order, time_nodes)?.g))
    }

    /// Terms at the STA point with quadrature doubled until stable.
    pub fn converged_terms(&self) -> Result<(PerturbativeTerms, ConvergenceReport)> {
        let s = &self.settings;
        let zero = vec![0.0; self.schedule.components()];

        let grid = TimeGrid::new(&self.schedule, &zero, s.time_nodes)?;
        let mut order = s.quadrature_order;
        let mut terms = self.terms_with(&SpatialRule::new(order, &self.modes)?, &grid, &zero);
        let q_change = loop {
            let next_order = 2 * order;
            if next_order > MAX_ORDER {
                let change = terms.relative_change(
                    &self.terms_with(&SpatialRule::new(MAX_ORDER, &self.modes)?, &grid, &zero),
                );
                if change <= s.quadrature_tol {
                    break change;
                }
                return Err(Error::Quadrature {
                    change,
                    tol: s.quadrature_tol,
                    order,
                });
            }
            let finer = self.terms_with(&SpatialRule::new(next_order, &self.modes)?, &grid, &zero);
            let change = terms.relative_change(&finer);
            terms = finer;
            order = next_order;
            if change <= s.quadrature_tol {
                break change;
            }
        };

        let rule = SpatialRule::new(order, &self.modes)?;
        let mut nodes = s.time_nodes;
        let t_change = loop {
            let next_nodes = 2 * nodes - 1;
            let finer = self.terms_with(&rule, &TimeGrid::new(&self.schedule, &zero, next_nodes)?, &zero);
            let change = terms.relative_change(&finer);
            terms = finer;
            nodes = next_nodes;
            if change <= s.time_tol {
                break change;
            }
            if 2 * nodes - 1 > s.max_time_nodes {
                return Err(Error::Quadrature {
                    change,
                    tol: s.time_tol,
                    order: nodes,
                });
            }
        };

        Ok((
            terms,
            ConvergenceReport {
                quadrature_order: order,
                quadrature_change: q_change,
                time_nodes: nodes,
                time_change: t_change,
            },
        ))
    }

    /// Full eSTA solution at the STA point.
    pub fn solve(&self) -> Result<EstaSolution> {
        let (terms, convergence) = self.converged_terms()?;
        Ok(assemble(terms, convergence, self.settings.hessian_form))
    }
}

fn assemble(terms: PerturbativeTerms, convergence: ConvergenceReport, form: HessianForm) -> EstaSolution {
    let f = fidelity_approx(&terms.g);
    let grad = gradient_approx(&terms.g, &terms.kmat);
    let hess = hessian_approx(&terms.g, &terms.kmat, &terms.wtens, form);
    let m = grad.len();
    let n2: f64 = grad.iter().map(|x| x * x).sum();
    let curvature = if n2 > 0.0 { quad_form(&grad, &hess) / n2 } else { 0.0 };

    // |v| at roundoff level relative to the size of K means there is nothing to correct
    let k_scale: f64 = terms.kmat.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let degenerate = n2.sqrt() <= 1e-12 * k_scale.max(1.0);
    let first = if degenerate { Err(Error::DegenerateGradient) } else { esta1(f, &grad) };
    let (lambda1, eps1, lambda2, eps2, status) = match first {
        Err(_) => (vec![0.0; m], 0.0, vec![0.0; m], 0.0, EstaStatus::DegenerateGradient),
        Ok((l1, e1)) => match esta2(&grad, &hess) {
            Ok((l2, e2)) => (l1, e1, l2, e2, EstaStatus::Ok),
            Err(_) => (l1.clone(), e1, l1, e1, EstaStatus::NonConcave),
        },
    };

    EstaSolution {
        terms,
        f_approx: f,
        beyond_perturbative: f < 0.0,
        grad,
        hess,
        curvature,
        lambda1,
        lambda2,
        eps1,
        eps2,
        status,
        convergence,
    }
}

/// `Gamma_{n,0}(t)` at the STA point, Gauss–Hermite order doubled from 200
/// until the value is stable to `1e-7`.
pub fn gamma_n0(problem: &ExpansionProblem, schedule: &ControlSchedule, n: usize, t: f64) -> Result<Complex64> {
    let trap = TrapPotential::new(problem.trap);
    let d = schedule.base().derivs(t)?;
    let w2 = schedule.omega_sq_sta(t)?;
    let theta = schedule.theta(t)?;
    let eval = |order: usize| -> Result<f64> {
        let gh = GaussHermite::cached(order)?;
        Ok(gh
            .nodes()
            .iter()
            .zip(gh.weights())
            .map(|(&s, &w)| {
                let phi = hermite_functions(n, s);
                let x = d.b * s;
                w * phi[n] * phi[0] * (trap.potential(x, w2) - 0.5 * w2 * x * x)
            })
            .sum())
    };
    let tol = 1e-7;
    let mut order = 200;
    let mut value = eval(order)?;
    loop {
        let next = 2 * order;
        if next > MAX_ORDER {
            return Err(Error::Quadrature {
                change: f64::NAN,
                tol,
                order,
            });
        }
        let finer = eval(next)?;
        let change = (finer - value).abs();
        value = finer;
        order = next;
        if change <= tol * finer.abs() || change < 1e-300 {
            break;
        }
        // odd modes and the harmonic trap integrate to roundoff
        if finer.abs() < 1e-14 && change < 1e-14 {
            break;
        }
    }
    Ok(Complex64::from_polar(1.0, n as f64 * theta) * value)
}
