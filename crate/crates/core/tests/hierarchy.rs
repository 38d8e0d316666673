use fasmg::coarsen::{build_hierarchy, Hierarchy, HierarchyParams};
use fasmg::field_io::{generate_synthetic_field, FieldStyle, PermField};
use fasmg::mesh::{build_cartesian_mesh_2d, classify_boundary, BoundarySpec, BoundaryValue, Mesh, Region};
use fasmg::sparse::CsrMatrix;

fn lognormal_square(n: usize, seed: u64) -> (Mesh, PermField) {
    let mesh = build_cartesian_mesh_2d(n, n, 1.0, 1.0, None).unwrap();
    let spec = BoundarySpec::new().dirichlet(Region::Plane { axis: 1, value: 0.0 }, BoundaryValue::Constant(0.0));
    let mesh = classify_boundary(&mesh, &spec).unwrap();
    let perm = generate_synthetic_field(n, n, 1, FieldStyle::LogNormal { sigma: 1.0 }, seed).unwrap();
    (mesh, perm)
}

fn diff(a: &CsrMatrix, b: &CsrMatrix) -> f64 {
    a.add(1.0, b, -1.0).max_abs()
}

fn check_invariants(h: &Hierarchy) -> f64 {
    let mut worst: f64 = 0.0;
    for (l, sp) in h.spaces.iter().enumerate() {
        let fine = &h.levels[l];
        let coarse = &h.levels[l + 1];
        let q_p = sp.q_p();
        let errs = [
            diff(&q_p.matmul(&sp.p_p), &CsrMatrix::identity(sp.p_p.ncols())),
            diff(&sp.q_sigma.matmul(&sp.p_sigma), &CsrMatrix::identity(sp.p_sigma.ncols())),
            diff(&coarse.d.matmul(&sp.q_sigma), &q_p.matmul(&fine.d)),
            diff(&coarse.d, &sp.p_p.transpose().matmul(&fine.d).matmul(&sp.p_sigma)),
            {
                let pq = sp.p_sigma.matmul(&sp.q_sigma);
                diff(&pq.matmul(&pq), &pq)
            },
            {
                let pq = sp.p_p.matmul(&q_p);
                diff(&pq.matmul(&pq), &pq)
            },
        ];
        for (i, e) in errs.iter().enumerate() {
            assert!(*e <= 1e-10, "level {l} check {i}: {e:e}");
            worst = worst.max(*e);
        }
    }
    worst
}

#[test]
fn invariants_on_64x64_three_levels() {
    let (mesh, perm) = lognormal_square(64, 11);
    for m_a in [1, 4] {
        for m_f in [1, 2] {
            let params = HierarchyParams { levels: 3, factors: vec![16.0, 8.0], m_a, m_f, seed: 3 };
            let h = build_hierarchy(&mesh, &perm, &params).unwrap();
            assert_eq!(h.n_levels(), 3);
            assert!(h.levels[1].n_cells() < h.levels[0].n_cells());
            assert!(h.levels[2].n_cells() < h.levels[1].n_cells());
            check_invariants(&h);
        }
    }
}

#[test]
fn invariants_on_8x8_four_aggregates() {
    let (mesh, perm) = lognormal_square(8, 2);
    for m_a in [1, 2, 3] {
        for m_f in [1, 2, 3] {
            let params = HierarchyParams { levels: 2, factors: vec![16.0], m_a, m_f, seed: 0 };
            let h = build_hierarchy(&mesh, &perm, &params).unwrap();
            check_invariants(&h);
        }
    }
}

#[test]
fn pv_column_is_unit_and_bases_orthonormal() {
    let (mesh, perm) = lognormal_square(16, 4);
    let params = HierarchyParams { levels: 3, factors: vec![8.0, 4.0], m_a: 3, m_f: 2, seed: 1 };
    let h = build_hierarchy(&mesh, &perm, &params).unwrap();
    for sp in &h.spaces {
        let ptp = sp.q_p().matmul(&sp.p_p);
        assert!(diff(&ptp, &CsrMatrix::identity(ptp.nrows())) < 1e-12);
        for &pv in &sp.pv_dofs {
            let norm: f64 = (0..sp.p_p.nrows()).map(|i| sp.p_p.get(i, pv).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn constants_are_reproduced_by_pressure_interpolation() {
    let (mesh, perm) = lognormal_square(16, 8);
    let params = HierarchyParams { levels: 3, factors: vec![8.0, 4.0], m_a: 2, m_f: 1, seed: 5 };
    let h = build_hierarchy(&mesh, &perm, &params).unwrap();
    for (l, sp) in h.spaces.iter().enumerate() {
        let ones = &h.levels[l].ones;
        let back = sp.p_p.matvec(&sp.q_p().matvec(ones));
        let err = back.iter().zip(ones).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "level {l}: {err}");
        assert_eq!(sp.q_p().matvec(ones), h.levels[l + 1].ones);
    }
}

#[test]
fn bubbles_vanish_on_face_dofs() {
    let (mesh, perm) = lognormal_square(16, 9);
    let params = HierarchyParams { levels: 2, factors: vec![16.0], m_a: 4, m_f: 1, seed: 2 };
    let h = build_hierarchy(&mesh, &perm, &params).unwrap();
    let fine = &h.levels[0];
    let coarse = &h.levels[1];
    let sp = &h.spaces[0];
    let agg = &sp.aggregation.vertex_to_aggregate;
    // Fine dofs on faces between different aggregates or on the boundary.
    let face_dofs: Vec<usize> = fine
        .topo
        .faces
        .iter()
        .filter(|f| f.cells.1.map_or(true, |l| agg[l] != agg[f.cells.0]))
        .flat_map(|f| f.dofs.clone())
        .collect();
    let mut count = 0;
    for r in &coarse.topo.cell_bubbles {
        for b in r.clone() {
            count += 1;
            for &d in &face_dofs {
                assert_eq!(sp.p_sigma.get(d, b), 0.0);
            }
        }
    }
    assert!(count > 0);
}

#[test]
fn setup_is_deterministic() {
    let (mesh, perm) = lognormal_square(24, 6);
    let params = HierarchyParams { levels: 3, factors: vec![8.0, 4.0], m_a: 3, m_f: 2, seed: 7 };
    let a = build_hierarchy(&mesh, &perm, &params).unwrap();
    let b = build_hierarchy(&mesh, &perm, &params).unwrap();
    for (x, y) in a.spaces.iter().zip(&b.spaces) {
        assert_eq!(x.aggregation, y.aggregation);
        assert_eq!(x.p_sigma, y.p_sigma);
        assert_eq!(x.q_sigma, y.q_sigma);
    }
}

#[test]
fn single_aggregate_coarsest_level() {
    let (mesh, perm) = lognormal_square(6, 1);
    let params = HierarchyParams { levels: 2, factors: vec![36.0], m_a: 3, m_f: 1, seed: 0 };
    let h = build_hierarchy(&mesh, &perm, &params).unwrap();
    assert_eq!(h.levels[1].n_cells(), 1);
    assert_eq!(h.levels[1].n_pdofs(), 3);
    check_invariants(&h);
}
