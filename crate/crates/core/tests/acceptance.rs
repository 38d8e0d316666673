//! Acceptance run: one PASS/FAIL line per criterion; exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Mutex;
use std::time::Instant;

use fasmg::coarsen::{build_hierarchy, fine_level, Hierarchy, HierarchyParams};
use fasmg::fas::{solve, Method, NonlinearConfig, SolveReport};
use fasmg::field_io::{generate_synthetic_field, FieldStyle};
use fasmg::level::{level_kappa, LevelOperator, LevelState};
use fasmg::linsolve::{local_blocks, solve_block, solve_hybrid, BlockSystem, HybridSystem, KrylovConfig, KrylovMethod};
use fasmg::mesh::{build_cartesian_mesh_2d, classify_boundary, BoundarySpec, BoundaryValue, Region};
use fasmg::problems::{richards, synthetic, two_cell, Medium, Problem, SyntheticParams};
use fasmg::sparse::CsrMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ALPHAS: [f64; 5] = [0.1, 0.2, 0.4, 0.8, 1.6];

/// Every report produced here, for the mass-conservation check.
static REPORTS: Mutex<Vec<(String, SolveReport)>> = Mutex::new(Vec::new());

type Outcome = (bool, String);

fn run(problem: &Problem, params: &HierarchyParams, method: Method, label: &str) -> SolveReport {
    let (_, rep) = solve(problem, params, method, &NonlinearConfig::for_problem(problem)).unwrap();
    REPORTS.lock().unwrap().push((format!("{label} {method}"), rep.clone()));
    rep
}

fn max_abs(a: &CsrMatrix) -> f64 {
    a.values().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()
}

fn two_cell_paths() -> Outcome {
    let prob = two_cell().unwrap();
    let (l0, ids) = fine_level(&prob.mesh, &prob.perm).unwrap();
    let op = LevelOperator::new(&l0, prob.kappa.clone()).unwrap();
    let b = prob.fine_rhs(&ids).unwrap();
    let j = op.jacobian(&LevelState::zeros(&l0), false).unwrap();
    let sys = BlockSystem { m: j.m, e: j.e, d: j.d, a: b.sigma.clone(), b: b.p.clone() };
    let cfg = KrylovConfig { rel_tol: 1e-12, ..Default::default() };
    let exact = [0.75, 0.25];
    let mut errs = Vec::new();
    let (_, p, _) = solve_block(&sys, &cfg).unwrap();
    errs.push(("block", max_diff(&p, &exact)));
    let hs = HybridSystem::new(local_blocks(&l0, &[1.0, 1.0], None), 3, 2, &b.sigma, &b.p).unwrap();
    let (_, p, _, _) = solve_hybrid(&hs, true, &cfg).unwrap();
    errs.push(("hybrid", max_diff(&p, &exact)));
    let one = HierarchyParams { levels: 1, factors: vec![], m_a: 1, m_f: 1, seed: 0 };
    for (name, m) in [("picard", Method::SinglePicard), ("newton", Method::SingleNewton)] {
        let (x, _) = solve(&prob, &one, m, &NonlinearConfig::for_problem(&prob)).unwrap();
        errs.push((name, max_diff(&x.p, &exact)));
    }
    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    let detail = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    (worst <= 1e-10, detail)
}

fn square_problem(n: usize) -> (fasmg::mesh::Mesh, fasmg::field_io::PermField) {
    let mesh = build_cartesian_mesh_2d(n, n, 1.0, 1.0, None).unwrap();
    let spec = BoundarySpec::new().dirichlet(Region::Plane { axis: 1, value: 0.0 }, BoundaryValue::Constant(0.0));
    let mesh = classify_boundary(&mesh, &spec).unwrap();
    let perm = generate_synthetic_field(n, n, 1, FieldStyle::LogNormal { sigma: 1.0 }, 1).unwrap();
    (mesh, perm)
}

fn hierarchy_invariants() -> Outcome {
    let (mesh, perm) = square_problem(64);
    let mut worst = 0.0f64;
    for m_a in [1, 4] {
        for m_f in [1, 2] {
            let params = HierarchyParams { levels: 3, factors: vec![16.0, 8.0], m_a, m_f, seed: 0 };
            let h = build_hierarchy(&mesh, &perm, &params).unwrap();
            for (l, sp) in h.spaces.iter().enumerate() {
                let (fine, coarse) = (&h.levels[l], &h.levels[l + 1]);
                let eye = |a: &CsrMatrix| max_abs(&a.add(1.0, &CsrMatrix::identity(a.nrows()), -1.0));
                let pq_s = sp.p_sigma.matmul(&sp.q_sigma);
                let pq_p = sp.p_p.matmul(&sp.q_p());
                let errs = [
                    eye(&sp.q_p().matmul(&sp.p_p)),
                    eye(&sp.q_sigma.matmul(&sp.p_sigma)),
                    max_abs(&coarse.d.matmul(&sp.q_sigma).add(1.0, &sp.q_p().matmul(&fine.d), -1.0)),
                    max_abs(&coarse.d.add(1.0, &sp.p_p.transpose().matmul(&fine.d).matmul(&sp.p_sigma), -1.0)),
                    max_abs(&pq_s.matmul(&pq_s).add(1.0, &pq_s, -1.0)),
                    max_abs(&pq_p.matmul(&pq_p).add(1.0, &pq_p, -1.0)),
                ];
                worst = errs.iter().fold(worst, |m, v| m.max(*v));
            }
        }
    }
    (worst <= 1e-10, format!("max error {worst:.1e} over m_A in {{1,4}}, m_f in {{1,2}}"))
}

fn exponential_hierarchy() -> (Problem, Hierarchy) {
    let p = synthetic(&SyntheticParams { nx: 32, ny: 32, alpha: 0.8, ..Default::default() }).unwrap();
    let params = HierarchyParams { levels: 3, factors: vec![8.0], m_a: 3, m_f: 2, seed: 4 };
    let h = build_hierarchy(&p.mesh, &p.perm, &params).unwrap();
    (p, h)
}

fn operators<'a>(p: &Problem, h: &'a Hierarchy) -> Vec<LevelOperator<'a>> {
    let vol = p.mesh.cell_volumes();
    h.levels.iter().map(|l| LevelOperator::new(l, level_kappa(l, &vol, &p.kappa)).unwrap()).collect()
}

fn restricted(h: &Hierarchy, fine: Vec<f64>) -> Vec<Vec<f64>> {
    let mut out = vec![fine];
    for sp in &h.spaces {
        let next = sp.q_p().matvec(out.last().unwrap());
        out.push(next);
    }
    out
}

fn galerkin_mass() -> Outcome {
    let (p, h) = exponential_hierarchy();
    let ops = operators(&p, &h);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let ps = restricted(&h, random_vec(&mut rng, p.n_cells(), 2.0));
        for l in 1..h.n_levels() {
            let scale = ops[l].kappa_inv(&ps[l]).unwrap();
            let local = h.levels[l].assemble_m(&scale);
            let labels = &h.spaces[l - 1].aggregation.vertex_to_aggregate;
            let fine_scale: Vec<f64> = labels.iter().map(|&a| scale[a]).collect();
            let ps_ = &h.spaces[l - 1].p_sigma;
            let g = ps_.transpose().matmul(&h.levels[l - 1].assemble_m(&fine_scale)).matmul(ps_);
            worst = worst.max(local.add(1.0, &g, -1.0).frobenius() / g.frobenius());
        }
    }
    (worst <= 1e-10, format!("max relative Frobenius error {worst:.1e}"))
}

fn mass_identity() -> Outcome {
    let mut worst = 0.0f64;
    for p in [exponential_hierarchy().0, richards(Medium::Loam, 48, 12).unwrap()] {
        let params = HierarchyParams { levels: 3, factors: vec![8.0], m_a: 4, m_f: 2, seed: 4 };
        let h = build_hierarchy(&p.mesh, &p.perm, &params).unwrap();
        let ops = operators(&p, &h);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let base: Vec<f64> = p.initial_p.iter().map(|z| z + rng.gen_range(-1.0..1.0)).collect();
            let ps = restricted(&h, base);
            for (l, op) in ops.iter().enumerate() {
                let sigma = random_vec(&mut rng, op.n_sigma(), 1.0);
                let lhs = op.assemble_n(&sigma).matvec(&op.kappa_inv(&ps[l]).unwrap());
                let rhs = op.assemble_m(&ps[l]).unwrap().matvec(&sigma);
                let scale = rhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                worst = worst.max(max_diff(&lhs, &rhs) / scale);
            }
        }
    }
    (worst <= 1e-12, format!("max error {worst:.1e} (relative to max(1, |M sigma|_inf)), exponential and loam"))
}

fn jacobian_fd() -> Outcome {
    let mut worst = 0.0f64;
    let cases = [(exponential_hierarchy().0, 0.0, 1.0), (richards(Medium::Loam, 48, 12).unwrap(), -150.0, 100.0)];
    for (p, offset, spread) in cases {
        let params = HierarchyParams { levels: 3, factors: vec![8.0], m_a: 3, m_f: 2, seed: 4 };
        let h = build_hierarchy(&p.mesh, &p.perm, &params).unwrap();
        let ops = operators(&p, &h);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let base: Vec<f64> =
                p.initial_p.iter().map(|z| z + offset + rng.gen_range(-spread..spread)).collect();
            let ps = restricted(&h, base);
            for (l, op) in ops.iter().enumerate() {
                let x = LevelState { sigma: random_vec(&mut rng, op.n_sigma(), 1.0), p: ps[l].clone() };
                let dx = LevelState { sigma: random_vec(&mut rng, op.n_sigma(), 1.0), p: random_vec(&mut rng, op.n_p(), 1.0) };
                let eps = 1e-6 * x.p.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                let fd = op.apply(&x.plus(eps, &dx)).unwrap().minus(&op.apply(&x.plus(-eps, &dx)).unwrap()).scaled(0.5 / eps);
                let j = op.jacobian(&x, true).unwrap();
                let mut js = j.m.matvec(&dx.sigma);
                j.e.matvec_acc(1.0, &dx.p, &mut js);
                let jd = LevelState { sigma: js, p: j.d.matvec(&dx.sigma) };
                worst = worst.max(fd.minus(&jd).norm() / jd.norm());
            }
        }
    }
    (worst <= 1e-5, format!("max relative directional error {worst:.1e}, exponential and loam, all levels"))
}

fn solver_cross_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst, mut count, mut spd) = (0.0f64, 0, true);
    for seed in 0..5u64 {
        let (mesh, _) = square_problem(6);
        let perm = generate_synthetic_field(6, 6, 1, FieldStyle::LogNormal { sigma: 1.5 }, seed).unwrap();
        let params = HierarchyParams { levels: 3, factors: vec![4.0, 3.0], m_a: 2, m_f: 2, seed };
        let h = build_hierarchy(&mesh, &perm, &params).unwrap();
        let vol = mesh.cell_volumes();
        for level in &h.levels {
            for newton in [false, true] {
                let law = fasmg::tpfa::KappaField::uniform(fasmg::tpfa::KappaLaw::Exponential { alpha: 0.8 });
                let op = LevelOperator::new(level, level_kappa(level, &vol, &law)).unwrap();
                let x = LevelState { sigma: random_vec(&mut rng, op.n_sigma(), 1.0), p: random_vec(&mut rng, op.n_p(), 1.0) };
                let j = op.jacobian(&x, newton).unwrap();
                let a = random_vec(&mut rng, op.n_sigma(), 1.0);
                let b = random_vec(&mut rng, op.n_p(), 1.0);
                let sys = BlockSystem { m: j.m, e: j.e, d: j.d, a: a.clone(), b: b.clone() };
                let mut cfg = KrylovConfig { rel_tol: 1e-12, ..Default::default() };
                if newton {
                    cfg = cfg.with_method(KrylovMethod::Gmres);
                }
                let (s1, p1, _) = solve_block(&sys, &cfg).unwrap();
                let dk = op.kappa_inv_derivative(&x.p);
                let nt = newton.then_some((x.sigma.as_slice(), dk.as_slice()));
                let scale = op.kappa_inv(&x.p).unwrap();
                let hs = HybridSystem::new(local_blocks(level, &scale, nt), op.n_sigma(), op.n_p(), &a, &b).unwrap();
                if !newton {
                    spd &= hs.is_spd();
                }
                let (s2, p2, _, _) = solve_hybrid(&hs, !newton, &cfg).unwrap();
                let mag = s1.iter().chain(&p1).fold(1.0f64, |m, v| m.max(v.abs()));
                worst = worst.max(max_diff(&s1, &s2).max(max_diff(&p1, &p2)) / mag);
                count += 1;
            }
        }
    }
    (worst <= 1e-8 && spd && count == 30, format!("{count} systems, max difference {worst:.1e}, Picard H SPD: {spd}"))
}

fn counts(reps: &[SolveReport]) -> Vec<usize> {
    reps.iter().map(|r| r.nonlinear_iters).collect()
}

fn spread(v: &[usize]) -> usize {
    v.iter().max().unwrap() - v.iter().min().unwrap()
}

fn sweep_params() -> HierarchyParams {
    HierarchyParams { levels: 3, factors: vec![16.0, 8.0], m_a: 4, m_f: 1, seed: 0 }
}

fn sweep_problem(alpha: f64) -> Problem {
    synthetic(&SyntheticParams { nx: 64, ny: 64, alpha, ..Default::default() }).unwrap()
}

fn robustness_trend() -> Outcome {
    let (mut single, mut fas) = (Vec::new(), Vec::new());
    for a in ALPHAS {
        let p = sweep_problem(a);
        single.push(run(&p, &sweep_params(), Method::SingleNewton, &format!("synthetic a={a}")));
        fas.push(run(&p, &sweep_params(), Method::FasNewton, &format!("synthetic a={a}")));
    }
    let (s, f) = (counts(&single), counts(&fas));
    let converged = single.iter().chain(&fas).all(|r| r.converged);
    let growth = s[4] as f64 >= 1.5 * s[0] as f64;
    let robust = spread(&f) <= 2;
    let faster = f[4] as f64 <= 0.7 * s[4] as f64;
    (converged && growth && robust && faster, format!("single Newton {s:?}, FAS-Newton(4) {f:?}"))
}

fn richards_benchmark() -> Outcome {
    let loam = richards(Medium::Loam, 160, 40).unwrap();
    let one = HierarchyParams { levels: 1, factors: vec![], m_a: 1, m_f: 1, seed: 0 };
    let fas_params = HierarchyParams { levels: 3, factors: vec![36.0], m_a: 13, m_f: 1, seed: 0 };
    let single = run(&loam, &one, Method::SingleNewton, "loam 160x40");
    let fas = run(&loam, &fas_params, Method::FasNewton, "loam 160x40");
    let sand = richards(Medium::Sand, 160, 40).unwrap();
    let sand_newton = run(&sand, &fas_params, Method::FasNewton, "sand 160x40");
    let sand_picard = run(&sand, &fas_params, Method::FasPicard, "sand 160x40");
    let ok = single.converged
        && fas.converged
        && fas.nonlinear_iters as f64 <= 0.6 * single.nonlinear_iters as f64
        && sand_newton.converged;
    (
        ok,
        format!(
            "loam: single Newton {} ({}), FAS-Newton(13) {} ({}); sand: FAS-Newton {} ({}), FAS-Picard {} ({})",
            single.nonlinear_iters,
            single.converged,
            fas.nonlinear_iters,
            fas.converged,
            sand_newton.nonlinear_iters,
            sand_newton.converged,
            sand_picard.nonlinear_iters,
            sand_picard.converged
        ),
    )
}

fn cascadic_stability() -> Outcome {
    let reps: Vec<SolveReport> = ALPHAS
        .iter()
        .map(|&a| run(&sweep_problem(a), &sweep_params(), Method::Cascadic, &format!("synthetic a={a}")))
        .collect();
    let fine: Vec<usize> = reps.iter().map(|r| r.level_smoothing[0]).collect();
    let coarsest: Vec<usize> = reps.iter().map(|r| *r.level_smoothing.last().unwrap()).collect();
    let non_decreasing = coarsest.windows(2).filter(|w| w[1] >= w[0]).count();
    // Of the 5 sweep points, the first has no predecessor and counts as in order.
    let ordered = 1 + non_decreasing;
    let ok = reps.iter().all(|r| r.converged) && spread(&fine) <= 2 && ordered >= 4;
    (ok, format!("finest {fine:?}, coarsest {coarsest:?} ({ordered}/5 in order)"))
}

fn scalability() -> Outcome {
    let params = HierarchyParams { levels: 3, factors: vec![36.0], m_a: 13, m_f: 1, seed: 0 };
    let reps: Vec<SolveReport> = [(160, 40), (320, 80), (640, 160)]
        .iter()
        .map(|&(nx, ny)| run(&richards(Medium::Loam, nx, ny).unwrap(), &params, Method::FasNewton, &format!("loam {nx}x{ny}")))
        .collect();
    let iters = counts(&reps);
    let times: Vec<f64> = reps.iter().map(|r| r.solve_seconds).collect();
    let ratios: Vec<f64> = times.windows(2).map(|w| w[1] / w[0]).collect();
    let ok = reps.iter().all(|r| r.converged) && spread(&iters) <= 2 && ratios.iter().all(|r| *r <= 6.0);
    let t: Vec<String> = times.iter().map(|t| format!("{t:.2}s")).collect();
    let r: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    (ok, format!("iterations {iters:?}, solve times [{}], growth per 4x cells [{}]", t.join(", "), r.join(", ")))
}

fn enrichment() -> Outcome {
    let loam = richards(Medium::Loam, 160, 40).unwrap();
    let p = |m_a| HierarchyParams { levels: 3, factors: vec![36.0], m_a, m_f: 1, seed: 0 };
    let rich = run(&loam, &p(13), Method::FasNewton, "loam 160x40 mA=13");
    let poor = run(&loam, &p(1), Method::FasNewton, "loam 160x40 mA=1");
    let ok = rich.converged && rich.nonlinear_iters <= poor.nonlinear_iters;
    (ok, format!("m_A = 13: {}, m_A = 1: {} ({})", rich.nonlinear_iters, poor.nonlinear_iters, poor.converged))
}

fn mass_conservation() -> Outcome {
    let reps = REPORTS.lock().unwrap();
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut bad = Vec::new();
    for (label, r) in reps.iter().filter(|(_, r)| r.converged) {
        for (l, m) in r.mass_residual.iter().enumerate() {
            if m.is_nan() {
                continue;
            }
            checked += 1;
            let ratio = m / r.tolerance;
            worst = worst.max(ratio);
            if ratio > 10.0 {
                bad.push(format!("{label} level {l}"));
            }
        }
    }
    let mut detail = format!("{checked} level states, worst |D sigma + f|_inf / tol = {worst:.2}");
    if !bad.is_empty() {
        detail.push_str(&format!("; over bound: {}", bad.join(", ")));
    }
    (bad.is_empty() && checked > 0, detail)
}

fn main() -> ExitCode {
    let criteria: Vec<(usize, &str, fn() -> Outcome)> = vec![
        (1, "analytic two-cell chain", two_cell_paths),
        (2, "hierarchy invariants", hierarchy_invariants),
        (3, "coarse mass equals Galerkin product", galerkin_mass),
        (4, "N kappa_inv equals M sigma", mass_identity),
        (5, "Jacobian against finite differences", jacobian_fd),
        (6, "hybrid and block solvers agree", solver_cross_check),
        (8, "robustness trend over alpha", robustness_trend),
        (9, "Richards benchmark", richards_benchmark),
        (10, "cascadic stability", cascadic_stability),
        (11, "algorithmic scalability", scalability),
        (12, "coarse space enrichment", enrichment),
        (7, "mass conservation", mass_conservation),
    ];
    let mut failed = 0;
    let mut lines = Vec::new();
    for (n, name, f) in criteria {
        let t = Instant::now();
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(o) => o,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        failed += usize::from(!ok);
        let line = format!(
            "criterion {n:>2} {}: {name}: {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
        println!("{line}");
        lines.push((n, line));
    }
    lines.sort_by_key(|l| l.0);
    println!("\nsummary ({} of {} passed):", lines.len() - failed, lines.len());
    for (_, l) in &lines {
        println!("{l}");
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
