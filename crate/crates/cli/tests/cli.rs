use std::path::Path;
use std::process::Command;

fn fasmg(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fasmg")).args(args).output().expect("binary runs")
}

/// Report rows with the timing column blanked.
fn rows_without_time(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().clone();
    let t = header.iter().position(|h| h == "time_s").unwrap();
    r.records()
        .map(|rec| {
            let mut v: Vec<String> = rec.unwrap().iter().map(String::from).collect();
            v[t].clear();
            v
        })
        .collect()
}

#[test]
fn two_cell_single_newton_converges_in_one_iteration() {
    let out = fasmg(&["--problem", "two_cell", "--solver", "single_newton"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("solver,alpha,cells,levels,mA,mf,nonlinear_iters,time_s,converged,early_presmooth"));
    assert!(text.contains("single_newton,0,2,1,"));
    assert!(text.contains(",1,") && text.contains("true"));
    assert!(text.contains("setup_time_s"));
}

#[test]
fn alpha_sweep_gives_one_row_per_run_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let run = |p: &Path| {
        let out = fasmg(&[
            "--problem",
            "synthetic2d",
            "--sweep-sizes",
            "16x16",
            "--sweep-alpha",
            "0.1,0.2,0.4,0.8,1.6",
            "--solver",
            "single_newton,fas_newton",
            "--levels",
            "2",
            "--factor",
            "8",
            "--seed",
            "3",
            "--report",
            p.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    let summary = run(&a);
    run(&b);
    let rows = rows_without_time(&a);
    assert_eq!(rows.len(), 10);
    assert_eq!(rows, rows_without_time(&b));
    // The summary star appears exactly for rows flagged early_presmooth.
    let starred = rows.iter().filter(|r| r[9] == "true").count();
    let stars = summary.lines().filter(|l| !l.contains(',')).map(|l| l.matches("*)").count()).sum::<usize>();
    assert_eq!(starred, stars);
}

#[test]
fn minimal_config_runs_the_two_cell_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.ini");
    let report = dir.path().join("r.csv");
    let export = dir.path().join("x.vtk");
    std::fs::write(&cfg, "[mesh]\nnx = 2\nny = 1\n[kappa]\nlaw = constant\n[solver]\nmethod = single_newton\n").unwrap();
    let out = fasmg(&[
        "--config",
        cfg.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
        "--export",
        export.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = rows_without_time(&report);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][2], "2");
    assert_eq!(rows[0][6], "1");
    let vtk = std::fs::read_to_string(&export).unwrap();
    assert!(vtk.contains("SCALARS pressure double 1"));
    let after = vtk.split("LOOKUP_TABLE default").nth(1).unwrap();
    let p: Vec<f64> = after.split_whitespace().take(2).map(|t| t.parse().unwrap()).collect();
    assert!((p[0] - 0.75).abs() <= 1e-10 && (p[1] - 0.25).abs() <= 1e-10, "{p:?}");
}

#[test]
fn nonconvergence_sets_exit_code_unless_allowed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.ini");
    std::fs::write(
        &cfg,
        "[mesh]\nproblem = synthetic2d\nnx = 8\nny = 8\n[kappa]\nlaw = exponential\nalpha = 1.6\n[solver]\nmethod = single_newton\nmax_iters = 1\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    assert_eq!(fasmg(&["--config", c]).status.code(), Some(2));
    assert!(fasmg(&["--config", c, "--allow-nonconverged"]).status.success());
}

#[test]
fn unknown_solver_is_rejected() {
    let out = fasmg(&["--problem", "two_cell", "--solver", "gauss_seidel"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown solver"));
}
