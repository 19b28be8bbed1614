//! Independent checks of the perturbative engine against brute-force integrals.

use esta::engine::{esta1, esta2, gamma_n0, EngineSettings, EstaEngine, EstaStatus, HessianForm};
use esta::{ControlSchedule, ExpansionProblem, InvariantMode, TrapPotential, TrapShape};
use num_complex::Complex64;
use proptest::prelude::*;

fn lattice_problem(tau: f64) -> ExpansionProblem {
    ExpansionProblem::new(TrapShape::lattice(150.0).unwrap(), 10.0, tau, 4).unwrap()
}

fn gaussian_problem(tau: f64) -> ExpansionProblem {
    ExpansionProblem::new(TrapShape::gaussian(98.3).unwrap(), 10.0, tau, 4).unwrap()
}

/// `int conj(chi_n) dH chi_0 dx` by the trapezoid rule on a dense grid.
fn gamma_dense(problem: &ExpansionProblem, schedule: &ControlSchedule, n: usize, t: f64) -> Complex64 {
    let trap = TrapPotential::new(problem.trap);
    let chi_n = InvariantMode::new(n, schedule);
    let chi_0 = InvariantMode::new(0, schedule);
    let half = 40.0 * problem.gamma;
    let points = 200_000;
    let dx = 2.0 * half / points as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..=points {
        let x = -half + i as f64 * dx;
        let w = if i == 0 || i == points { 0.5 } else { 1.0 };
        let dh = trap.delta_h(schedule, x, t).unwrap();
        acc += w * chi_n.value(x, t).unwrap().conj() * dh * chi_0.value(x, t).unwrap();
    }
    acc * dx
}

#[test]
fn matrix_element_matches_dense_spatial_integral() {
    for problem in [lattice_problem(25.0), gaussian_problem(13.0)] {
        let schedule = ControlSchedule::sta(problem.scaling().unwrap(), 1).unwrap();
        for &t in &[0.1 * problem.tau_f, 0.37 * problem.tau_f, 0.5 * problem.tau_f, 0.9 * problem.tau_f] {
            for n in [2, 4, 6] {
                let quad = gamma_n0(&problem, &schedule, n, t).unwrap();
                let dense = gamma_dense(&problem, &schedule, n, t);
                let rel = (quad - dense).norm() / dense.norm().max(1e-300);
                assert!(rel < 1e-6, "{:?} n={n} t={t}: {quad} vs {dense} ({rel:e})", problem.trap);
            }
        }
    }
}

#[test]
fn g_matches_time_trapezoid_of_matrix_element() {
    let problem = lattice_problem(25.0);
    let engine = EstaEngine::new(problem, 1, EngineSettings::default()).unwrap();
    let sol = engine.solve().unwrap();
    let schedule = engine.schedule();
    let tf = problem.tau_f;
    // the integrand has kinks where omega^2 changes sign, so the trapezoid is only second order
    let steps = 10_000;
    for (j, &n) in engine.modes().iter().enumerate().take(2) {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..=steps {
            let t = tf * i as f64 / steps as f64;
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            acc += w * gamma_n0(&problem, schedule, n, t).unwrap();
        }
        acc *= tf / steps as f64;
        let g = sol.terms.g[j];
        let rel = (g - acc).norm() / g.norm();
        assert!(rel < 1e-5, "n={n}: {g} vs {acc} ({rel:e})");
    }
}

#[test]
fn corrections_are_colinear_with_gradient() {
    let engine = EstaEngine::new(lattice_problem(25.0), 8, EngineSettings::default()).unwrap();
    let sol = engine.solve().unwrap();
    assert_eq!(sol.status, EstaStatus::Ok);
    let vhat = sol.direction();
    for (lam, eps) in [(&sol.lambda1, sol.eps1), (&sol.lambda2, sol.eps2)] {
        for (l, v) in lam.iter().zip(&vhat) {
            assert!((l - eps * v).abs() <= 1e-12 * eps.abs(), "{l} vs {}", eps * v);
        }
    }
    assert!(sol.eps1 > sol.eps2 && sol.eps2 > 0.0);
}

#[test]
fn eight_modes_change_truncated_fidelity_little() {
    let four = ExpansionProblem { n_modes: 4, ..lattice_problem(25.0) };
    let eight = ExpansionProblem { n_modes: 8, ..four };
    let f4 = EstaEngine::new(four, 1, EngineSettings::default()).unwrap().solve().unwrap().f_approx;
    let f8 = EstaEngine::new(eight, 1, EngineSettings::default()).unwrap().solve().unwrap().f_approx;
    assert!(f8 <= f4);
    assert!((f4 - f8).abs() < 1e-3, "{f4} vs {f8}");
}

#[test]
fn boxed_hessian_differs_by_gram_term() {
    let p = gaussian_problem(13.0);
    let a = EstaEngine::new(p, 3, EngineSettings::default()).unwrap().solve().unwrap();
    let settings = EngineSettings {
        hessian_form: HessianForm::Boxed,
        ..EngineSettings::default()
    };
    let b = EstaEngine::new(p, 3, settings).unwrap().solve().unwrap();
    // H_derivation - H_boxed = -4 Re sum K_k^* K_l
    for l in 0..3 {
        for k in 0..3 {
            let gram: f64 = (0..a.terms.modes.len())
                .map(|i| (a.terms.kmat[[i, k]].conj() * a.terms.kmat[[i, l]]).re)
                .sum();
            let diff = a.hess[[l, k]] - b.hess[[l, k]];
            assert!((diff + 4.0 * gram).abs() <= 1e-9 * gram.abs().max(1.0));
        }
    }
}

#[test]
fn solve_is_deterministic() {
    let p = lattice_problem(20.0);
    let a = EstaEngine::new(p, 8, EngineSettings::default()).unwrap().solve().unwrap();
    let b = EstaEngine::new(p, 8, EngineSettings::default()).unwrap().solve().unwrap();
    assert_eq!(a.lambda2, b.lambda2);
    assert_eq!(a.terms, b.terms);
}

proptest! {
    #[test]
    fn esta1_step_length_matches_closed_form(v in prop::collection::vec(-50.0f64..50.0, 1..9), f in 0.5f64..0.999) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
        let (lam, eps) = esta1(f, &v).unwrap();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((eps - 2.0 * (1.0 - f) / norm).abs() <= 1e-12 * eps);
        let len = lam.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((len - eps).abs() <= 1e-12 * eps);
        // the unit-peak parabola f + |v| e - |v|^2 e^2 / (4 (1 - f)) peaks at eps with value 1
        let peak = f + norm * eps - norm * norm * eps * eps / (4.0 * (1.0 - f));
        prop_assert!((peak - 1.0).abs() < 1e-9);
    }

    #[test]
    fn esta2_maximizes_quadratic_model(v in prop::collection::vec(-5.0f64..5.0, 2..6), d in prop::collection::vec(0.5f64..10.0, 6)) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-2));
        let m = v.len();
        let h = ndarray::Array2::from_shape_fn((m, m), |(i, j)| if i == j { -d[i] } else { 0.0 });
        let (lam, eps) = esta2(&v, &h).unwrap();
        let model = |e: f64| {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let hv: f64 = (0..m).map(|i| v[i] * v[i] * h[[i, i]]).sum::<f64>() / (norm * norm);
            norm * e + 0.5 * hv * e * e
        };
        prop_assert!(model(eps) >= model(eps * 1.01) && model(eps) >= model(eps * 0.99));
        prop_assert_eq!(lam.len(), m);
    }
}
