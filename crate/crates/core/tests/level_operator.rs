use fasmg::coarsen::{build_hierarchy, Hierarchy, HierarchyParams};
use fasmg::level::{level_kappa, LevelOperator, LevelState};
use fasmg::problems::{richards, synthetic, Medium, Problem, SyntheticParams};
use fasmg::sparse::norm2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn exponential_problem() -> Problem {
    synthetic(&SyntheticParams { nx: 32, ny: 32, alpha: 0.8, ..Default::default() }).unwrap()
}

fn hierarchy(p: &Problem, levels: usize, factor: f64, m_a: usize) -> Hierarchy {
    let params = HierarchyParams { levels, factors: vec![factor], m_a, m_f: 2, seed: 4 };
    build_hierarchy(&p.mesh, &p.perm, &params).unwrap()
}

fn operators<'a>(p: &Problem, h: &'a Hierarchy) -> Vec<LevelOperator<'a>> {
    let vol = p.mesh.cell_volumes();
    h.levels.iter().map(|l| LevelOperator::new(l, level_kappa(l, &vol, &p.kappa)).unwrap()).collect()
}

/// Fine pressure carried to every level by `Q_p`.
fn restricted_pressures(h: &Hierarchy, fine: Vec<f64>) -> Vec<Vec<f64>> {
    let mut out = vec![fine];
    for sp in &h.spaces {
        let next = sp.q_p().matvec(out.last().unwrap());
        out.push(next);
    }
    out
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn coarse_mass_matches_galerkin_triple_product() {
    let p = exponential_problem();
    let h = hierarchy(&p, 3, 8.0, 3);
    let ops = operators(&p, &h);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let ps = restricted_pressures(&h, random_vec(&mut rng, p.n_cells(), 2.0));
        for l in 1..h.n_levels() {
            let coarse = &ops[l];
            let scale = coarse.kappa_inv(&ps[l]).unwrap();
            let local = coarse.level.assemble_m(&scale);
            let labels = &h.spaces[l - 1].aggregation.vertex_to_aggregate;
            let fine_scale: Vec<f64> = labels.iter().map(|&a| scale[a]).collect();
            let ps_ = &h.spaces[l - 1].p_sigma;
            let galerkin = ps_.transpose().matmul(&h.levels[l - 1].assemble_m(&fine_scale)).matmul(ps_);
            let err = local.add(1.0, &galerkin, -1.0).frobenius() / galerkin.frobenius();
            assert!(err <= 1e-10, "level {l}: {err:e}");
        }
    }
}

#[test]
fn n_times_kappa_inv_equals_mass_times_flux() {
    for p in [exponential_problem(), richards(Medium::Loam, 48, 12).unwrap()] {
        let h = hierarchy(&p, 3, 8.0, 4);
        let ops = operators(&p, &h);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let base: Vec<f64> = p.initial_p.iter().map(|z| z + rng.gen_range(-1.0..1.0)).collect();
            let ps = restricted_pressures(&h, base);
            for (l, op) in ops.iter().enumerate() {
                let sigma = random_vec(&mut rng, op.n_sigma(), 1.0);
                let lhs = op.assemble_n(&sigma).matvec(&op.kappa_inv(&ps[l]).unwrap());
                let rhs = op.assemble_m(&ps[l]).unwrap().matvec(&sigma);
                let scale = rhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                let err = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(err <= 1e-12 * scale, "level {l}: {err:e}");
            }
        }
    }
}

fn fd_check(p: &Problem, h: &Hierarchy, offset: f64, spread: f64) {
    let ops = operators(p, h);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let base: Vec<f64> = p.initial_p.iter().map(|z| z + offset + rng.gen_range(-spread..spread)).collect();
        let ps = restricted_pressures(h, base);
        for (l, op) in ops.iter().enumerate() {
            let x = LevelState { sigma: random_vec(&mut rng, op.n_sigma(), 1.0), p: ps[l].clone() };
            let dx = LevelState { sigma: random_vec(&mut rng, op.n_sigma(), 1.0), p: random_vec(&mut rng, op.n_p(), 1.0) };
            let scale = x.p.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let eps = 1e-6 * scale;
            let rp = op.apply(&x.plus(eps, &dx)).unwrap();
            let rm = op.apply(&x.plus(-eps, &dx)).unwrap();
            let fd = rp.minus(&rm).scaled(0.5 / eps);
            let j = op.jacobian(&x, true).unwrap();
            let mut js = j.m.matvec(&dx.sigma);
            j.e.matvec_acc(1.0, &dx.p, &mut js);
            let jd = LevelState { sigma: js, p: j.d.matvec(&dx.sigma) };
            let err = fd.minus(&jd).norm() / jd.norm();
            assert!(err <= 1e-5, "level {l}: relative error {err:e}");
            assert!(norm2(&jd.sigma) > 0.0);
        }
    }
}

#[test]
fn jacobian_matches_central_differences_exponential() {
    let p = exponential_problem();
    let h = hierarchy(&p, 3, 8.0, 3);
    fd_check(&p, &h, 0.0, 1.0);
}

#[test]
fn jacobian_matches_central_differences_richards_loam() {
    let p = richards(Medium::Loam, 48, 12).unwrap();
    let h = hierarchy(&p, 3, 8.0, 3);
    // Keep ψ away from its kink at zero.
    fd_check(&p, &h, -150.0, 100.0);
}
