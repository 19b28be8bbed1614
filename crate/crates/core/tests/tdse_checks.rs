use esta::engine::{EngineSettings, EstaEngine};
use esta::scans::{fidelity_scan, landscape_scan, ScanSpec, Scheme, Simulator};
use esta::tdse::{endpoint_states, evolve, ground_state, propagate, EndpointMode, SimSettings, SpatialGrid, Wavefunction};
use esta::{ControlSchedule, ExpansionProblem, ScalingFunction, TrapPotential, TrapShape};

fn small_settings(gamma: f64, points: usize, steps: usize) -> SimSettings {
    SimSettings {
        grid: SpatialGrid::new(SpatialGrid::for_expansion(gamma).half_width(), points).unwrap(),
        steps,
        ..SimSettings::for_expansion(gamma)
    }
}

#[test]
fn sta_is_exact_for_harmonic_trap() {
    let trap = TrapPotential::new(TrapShape::Harmonic);
    for (gamma, tau) in [(2.0, 3.0), (10.0, 10.0)] {
        let s = small_settings(gamma, 2048, 8192);
        let psi0 = Wavefunction::harmonic_ground(s.grid, 1.0).unwrap();
        let target = Wavefunction::harmonic_ground(s.grid, gamma.powi(-4)).unwrap();
        let sched = ControlSchedule::sta(ScalingFunction::new(gamma, tau).unwrap(), 0).unwrap();
        let out = propagate(&trap, &sched, &psi0, &target, &s).unwrap();
        assert!(out.fidelity >= 1.0 - 1e-4, "gamma {gamma} tau {tau}: {}", out.fidelity);
        assert!(out.norm_drift < 1e-8);
    }
}

#[test]
fn forward_then_backward_returns_initial_state() {
    let trap = TrapPotential::new(TrapShape::lattice(150.0).unwrap());
    let sched = ControlSchedule::with_lambda(ScalingFunction::new(10.0, 20.0).unwrap(), vec![2e-4, -1e-4]).unwrap();
    let grid = SpatialGrid::new(120.0, 2048).unwrap();
    let psi0 = Wavefunction::harmonic_ground(grid, 1.0).unwrap();
    let fw = evolve(&trap, &sched, &psi0, 4096, false).unwrap();
    assert!(psi0.overlap(&fw).norm_sqr() < 0.99);
    let bw = evolve(&trap, &sched, &fw, 4096, true).unwrap();
    assert!(psi0.overlap(&bw).norm_sqr() > 1.0 - 1e-8);
}

#[test]
fn gaussian_final_ground_state_is_nearly_harmonic() {
    let trap = TrapPotential::new(TrapShape::gaussian(98.3).unwrap());
    let grid = SpatialGrid::for_expansion(10.0);
    let exact = ground_state(&trap, 1e-4, EndpointMode::Exact, grid).unwrap();
    let approx = ground_state(&trap, 1e-4, EndpointMode::Harmonic, grid).unwrap();
    assert!(exact.overlap(&approx).norm_sqr() > 0.999);
}

#[test]
fn esta2_improves_lattice_expansion() {
    let p = ExpansionProblem::new(TrapShape::lattice(150.0).unwrap(), 10.0, 25.0, 4).unwrap();
    let engine = EstaEngine::new(p, 1, EngineSettings::default()).unwrap();
    let sol = engine.solve().unwrap();
    let trap = TrapPotential::new(p.trap);
    let s = small_settings(10.0, 2048, 8192);
    let (a, b) = endpoint_states(&trap, 10.0, EndpointMode::Harmonic, s.grid).unwrap();
    let f_sta = propagate(&trap, engine.schedule(), &a, &b, &s).unwrap().fidelity;
    let f_e2 = propagate(&trap, &engine.schedule().retuned(sol.lambda2.clone()), &a, &b, &s)
        .unwrap()
        .fidelity;
    assert!(f_sta < 1.0);
    assert!(f_e2 > f_sta, "{f_e2} vs {f_sta}");
}

fn small_sim(gamma: f64) -> Simulator {
    Simulator {
        sim: small_settings(gamma, 1024, 2048),
        ..Simulator::for_gamma(gamma)
    }
}

#[test]
fn scan_rows_are_ordered_and_complete() {
    let spec = ScanSpec {
        problem: ExpansionProblem::new(TrapShape::lattice(150.0).unwrap(), 2.0, 5.0, 4).unwrap(),
        schemes: vec![Scheme::Sta, Scheme::Esta1, Scheme::Esta2],
        components: vec![1],
        tau_grid: vec![4.0, 6.0, 8.0],
        sensitivity: None,
        energy: true,
    };
    let rows = fidelity_scan(&spec, &small_sim(2.0), 1).unwrap();
    assert_eq!(rows.len(), 9);
    assert!(rows.windows(2).all(|w| (w[0].tau, w[0].scheme) < (w[1].tau, w[1].scheme)));
    for r in &rows {
        assert!(r.ok(), "{r:?}");
        assert!((0.0..=1.0).contains(&r.fidelity));
        if r.scheme == Scheme::Sta {
            assert_eq!(r.e_ratio, Some(1.0));
        }
    }
}

#[test]
fn scan_failures_are_reported_per_row() {
    let spec = ScanSpec {
        problem: ExpansionProblem::new(TrapShape::lattice(150.0).unwrap(), 10.0, 5.0, 4).unwrap(),
        schemes: vec![Scheme::Sta],
        components: vec![1],
        tau_grid: vec![5.0, 6.0],
        sensitivity: None,
        energy: false,
    };
    // a box far too small for a tenfold expansion
    let sim = Simulator {
        sim: SimSettings {
            grid: SpatialGrid::new(6.0, 256).unwrap(),
            steps: 512,
            ..SimSettings::for_expansion(10.0)
        },
        ..Simulator::for_gamma(10.0)
    };
    let rows = fidelity_scan(&spec, &sim, 1).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| !r.ok() && r.fidelity.is_nan()));
}

#[test]
fn landscape_is_anchored_at_sta() {
    let p = ExpansionProblem::new(TrapShape::lattice(150.0).unwrap(), 2.0, 3.0, 4).unwrap();
    let l = landscape_scan(&p, 1, 5, &small_sim(2.0), 1).unwrap();
    assert_eq!(l.rows.len(), 5);
    assert!((l.rows[0].eps_over_eps2 + 0.25).abs() < 1e-15);
    assert!((l.rows[4].eps_over_eps2 - 2.0).abs() < 1e-15);
    // parabolas evaluated at eps = 0 give the simulated STA fidelity
    let at = |e: f64| esta::scans::parabola(l.f_sta, l.solution.grad_norm(), l.solution.curvature, e);
    assert_eq!(at(0.0), l.f_sta);
    let r = &l.rows[1];
    assert!((r.f_parab2 - at(r.eps)).abs() < 1e-15);
}

#[test]
fn workers_do_not_change_results() {
    let spec = ScanSpec {
        problem: ExpansionProblem::new(TrapShape::gaussian(98.3).unwrap(), 2.0, 5.0, 4).unwrap(),
        schemes: vec![Scheme::Sta, Scheme::Esta2],
        components: vec![1, 3],
        tau_grid: vec![3.0, 4.0],
        sensitivity: None,
        energy: false,
    };
    let sim = small_sim(2.0);
    let a = fidelity_scan(&spec, &sim, 1).unwrap();
    let b = fidelity_scan(&spec, &sim, 3).unwrap();
    assert_eq!(esta::output::scan_csv(&a), esta::output::scan_csv(&b));
}
