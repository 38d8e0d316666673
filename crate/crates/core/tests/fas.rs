use fasmg::coarsen::{build_hierarchy, HierarchyParams};
use fasmg::fas::{solve, Method, NonlinearConfig, Solver};
use fasmg::level::LevelState;
use fasmg::linsolve::SolverRoute;
use fasmg::problems::{richards, synthetic, two_cell, Medium, Problem, SyntheticParams};
use fasmg::tpfa::{KappaField, KappaLaw};

fn params(levels: usize, factor: f64, m_a: usize) -> HierarchyParams {
    HierarchyParams { levels, factors: vec![factor], m_a, m_f: 1, seed: 0 }
}

#[test]
fn two_cell_chain_by_every_method_and_route() {
    let prob = two_cell().unwrap();
    for route in [None, Some(SolverRoute::Block), Some(SolverRoute::Hybrid), Some(SolverRoute::Direct)] {
        let cfg = NonlinearConfig { route, ..NonlinearConfig::for_problem(&prob) };
        for method in [Method::SinglePicard, Method::SingleNewton] {
            let (x, rep) = solve(&prob, &params(1, 2.0, 1), method, &cfg).unwrap();
            assert!(rep.converged);
            assert!((x.p[0] - 0.75).abs() <= 1e-10 && (x.p[1] - 0.25).abs() <= 1e-10, "{method}: {:?}", x.p);
        }
    }
}

fn linear_problem() -> Problem {
    let mut p = synthetic(&SyntheticParams { nx: 16, ny: 16, ..Default::default() }).unwrap();
    p.kappa = KappaField::uniform(KappaLaw::Constant);
    p.pressure_cap = None;
    p
}

#[test]
fn linear_problem_converges_in_one_iteration() {
    let prob = linear_problem();
    let cfg = NonlinearConfig::for_problem(&prob);
    for method in Method::ALL {
        let (x, rep) = solve(&prob, &params(3, 8.0, 2), method, &cfg).unwrap();
        assert!(rep.converged, "{method}");
        assert_eq!(rep.nonlinear_iters, 1, "{method}: {:?}", rep.residuals);
        assert!(x.is_finite());
    }
}

#[test]
fn picard_and_newton_steps_coincide_on_linear_problem() {
    let prob = linear_problem();
    let cfg = NonlinearConfig::for_problem(&prob);
    let (xp, _) = solve(&prob, &params(1, 1.0, 1), Method::SinglePicard, &cfg).unwrap();
    let (xn, _) = solve(&prob, &params(1, 1.0, 1), Method::SingleNewton, &cfg).unwrap();
    let d = xp.minus(&xn).norm() / xn.norm();
    assert!(d <= 1e-8, "{d:e}");
}

#[test]
fn vcycle_leaves_a_converged_iterate_alone() {
    let prob = synthetic(&SyntheticParams { nx: 16, ny: 16, alpha: 0.4, ..Default::default() }).unwrap();
    let h = build_hierarchy(&prob.mesh, &prob.perm, &params(3, 8.0, 2)).unwrap();
    let cfg = NonlinearConfig { rel_tol: 1e-13, abs_tol: 1e-13, ..NonlinearConfig::for_problem(&prob) };
    let solver = Solver::new(&prob, &h, cfg).unwrap();
    let (x, rep) = solver.solve(Method::SingleNewton).unwrap();
    assert!(rep.converged);
    let mut r2 = rep.clone();
    let (y, _) = solver
        .vcycle(0, x.clone(), &solver.b0, fasmg::fas::Smoother::Newton, 1, 1e-13, &mut r2)
        .unwrap();
    let d = y.minus(&x).norm() / x.norm();
    assert!(d <= 1e-9, "{d:e}");
}

#[test]
fn mild_exponential_needs_few_newton_steps() {
    let prob = synthetic(&SyntheticParams { nx: 16, ny: 16, alpha: 0.1, ..Default::default() }).unwrap();
    let (_, rep) = solve(&prob, &params(1, 1.0, 1), Method::SingleNewton, &NonlinearConfig::for_problem(&prob)).unwrap();
    assert!(rep.converged);
    assert!(rep.nonlinear_iters <= 8, "{}", rep.nonlinear_iters);
}

#[test]
fn converged_solves_conserve_mass_on_every_level() {
    let prob = synthetic(&SyntheticParams { nx: 24, ny: 24, alpha: 0.8, ..Default::default() }).unwrap();
    let cfg = NonlinearConfig::for_problem(&prob);
    for method in Method::ALL {
        let (_, rep) = solve(&prob, &params(3, 8.0, 2), method, &cfg).unwrap();
        assert!(rep.converged, "{method}");
        for (l, m) in rep.mass_residual.iter().enumerate() {
            assert!(*m <= 10.0 * rep.tolerance, "{method} level {l}: {m:e} vs {:e}", rep.tolerance);
        }
    }
}

#[test]
fn history_rows_are_finite_and_written_as_csv() {
    let prob = synthetic(&SyntheticParams { nx: 16, ny: 16, alpha: 0.8, ..Default::default() }).unwrap();
    let (_, rep) = solve(&prob, &params(3, 8.0, 2), Method::FasNewton, &NonlinearConfig::for_problem(&prob)).unwrap();
    assert!(!rep.history.is_empty());
    assert!(rep.history.iter().all(|h| h.residual.is_finite()));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.csv");
    rep.write_history_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("iter,level,residual,s,backtrack_steps\n"));
    assert_eq!(text.lines().count(), rep.history.len() + 1);
}

#[test]
fn richards_loam_fas_newton_converges() {
    let prob = richards(Medium::Loam, 160, 40).unwrap();
    let hp = HierarchyParams { levels: 3, factors: vec![36.0], m_a: 13, m_f: 1, seed: 0 };
    let (x, rep) = solve(&prob, &hp, Method::FasNewton, &NonlinearConfig::for_problem(&prob)).unwrap();
    assert!(rep.converged, "{:?}", rep.residuals);
    assert!(rep.nonlinear_iters <= 6, "{}", rep.nonlinear_iters);
    let _: &LevelState = &x;
}
