//! `fasmg`: runs catalog problems with the single-level and multilevel nonlinear solvers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Parser;
use log::warn;

use fasmg::coarsen::{build_hierarchy, HierarchyParams};
use fasmg::fas::{Method, NonlinearConfig, Solver};
use fasmg::field_io::{export_solution, parse_config, write_report, write_report_to, ReportRow, RunConfig};
use fasmg::problems::{from_name, Overrides, Problem};
use fasmg::tpfa::KappaLaw;

#[derive(Parser, Debug)]
#[command(name = "fasmg", version, about = "Nonlinear FAS multigrid for mixed TPFA diffusion problems")]
struct Args {
    /// INI run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// two_cell, synthetic2d, synthetic3d, richards_loam, richards_sand or raster.
    #[arg(long)]
    problem: Option<String>,
    /// Comma-separated solvers.
    #[arg(long, value_delimiter = ',')]
    solver: Vec<String>,
    #[arg(long)]
    levels: Option<usize>,
    /// Coarsening factors per level; the last one repeats.
    #[arg(long, value_delimiter = ',')]
    factor: Vec<f64>,
    #[arg(long)]
    ma: Option<usize>,
    #[arg(long)]
    mf: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    sweep_alpha: Vec<f64>,
    /// Mesh sizes such as `160x40` or `16x16x16`.
    #[arg(long, value_delimiter = ',')]
    sweep_sizes: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol_rel: Option<f64>,
    #[arg(long)]
    tol_abs: Option<f64>,
    /// Report CSV path.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Solution export path (legacy VTK); suffixed per run when several runs are requested.
    #[arg(long)]
    export: Option<PathBuf>,
    /// Exit successfully even when a solve does not converge.
    #[arg(long)]
    allow_nonconverged: bool,
}

type Size = (usize, usize, Option<usize>);

fn parse_size(s: &str) -> Result<Size> {
    let parts: Vec<&str> = s.split('x').collect();
    let num = |t: &str| t.trim().parse::<usize>().with_context(|| format!("bad mesh size {s:?}"));
    match parts.as_slice() {
        [a, b] => Ok((num(a)?, num(b)?, None)),
        [a, b, c] => Ok((num(a)?, num(b)?, Some(num(c)?))),
        _ => bail!("mesh size {s:?} must look like NXxNY or NXxNYxNZ"),
    }
}

/// Inserts `tag` before the extension of `path`.
fn tagged(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_{tag}.{ext}"),
        None => format!("{stem}_{tag}"),
    };
    path.with_file_name(name)
}

fn law_alpha(p: &Problem) -> f64 {
    match p.kappa.law {
        KappaLaw::Exponential { alpha } | KappaLaw::Richards { alpha, .. } => alpha,
        KappaLaw::Constant => 0.0,
    }
}

struct Plan {
    problem: String,
    methods: Vec<Method>,
    sizes: Vec<Option<Size>>,
    alphas: Vec<Option<f64>>,
    params: HierarchyParams,
    cfg: Option<RunConfig>,
    tol_rel: Option<f64>,
    tol_abs: Option<f64>,
    max_iters: Option<usize>,
    theta: Option<f64>,
    report: Option<PathBuf>,
    export: Option<PathBuf>,
    history: Option<PathBuf>,
}

fn plan(args: &Args) -> Result<Plan> {
    let cfg = match &args.config {
        Some(p) => Some(parse_config(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    let c = cfg.clone().unwrap_or_default();
    let problem = args.problem.clone().or(c.problem.clone()).unwrap_or_else(|| {
        if c.perm_file.is_some() {
            "raster".into()
        } else {
            "two_cell".into()
        }
    });
    let names = if !args.solver.is_empty() {
        args.solver.clone()
    } else if !c.methods.is_empty() {
        c.methods.clone()
    } else {
        vec!["fas_newton".into()]
    };
    let methods = names.iter().map(|s| s.parse::<Method>()).collect::<fasmg::Result<Vec<_>>>()?;
    let sizes = if args.sweep_sizes.is_empty() {
        vec![None]
    } else {
        args.sweep_sizes.iter().map(|s| parse_size(s).map(Some)).collect::<Result<_>>()?
    };
    let alphas = if !args.sweep_alpha.is_empty() {
        args.sweep_alpha.iter().map(|a| Some(*a)).collect()
    } else {
        vec![args.alpha]
    };
    let default_factor = if problem.starts_with("richards") { 36.0 } else { 16.0 };
    let factors = if !args.factor.is_empty() {
        args.factor.clone()
    } else if !c.factors.is_empty() {
        c.factors.clone()
    } else {
        vec![default_factor]
    };
    let params = HierarchyParams {
        levels: args.levels.or(c.levels).unwrap_or(3),
        factors,
        m_a: args.ma.or(c.m_a).unwrap_or(4),
        m_f: args.mf.or(c.m_f).unwrap_or(1),
        seed: args.seed.or(c.seed).unwrap_or(0),
    };
    Ok(Plan {
        problem,
        methods,
        sizes,
        alphas,
        params,
        tol_rel: args.tol_rel.or(c.tol_rel),
        tol_abs: args.tol_abs.or(c.tol_abs),
        max_iters: c.max_iters,
        theta: c.theta,
        report: args.report.clone().or(c.report.clone().map(PathBuf::from)),
        export: args.export.clone().or(c.export.clone().map(PathBuf::from)),
        history: c.history.clone().map(PathBuf::from),
        cfg,
    })
}

fn run(args: &Args) -> Result<bool> {
    let plan = plan(args)?;
    let base = plan.cfg.as_ref().map(Overrides::from_config).unwrap_or_default();
    let n_runs = plan.sizes.len() * plan.alphas.len() * plan.methods.len();
    let mut rows = Vec::new();
    let mut all_converged = true;
    for size in &plan.sizes {
        let mut ov = Overrides { seed: args.seed.or(base.seed), ..base.clone() };
        if let Some((nx, ny, nz)) = size {
            ov.nx = Some(*nx);
            ov.ny = Some(*ny);
            ov.nz = nz.or(ov.nz);
        }
        let mesh_problem = from_name(&plan.problem, &ov, plan.cfg.as_ref())?;
        let t = Instant::now();
        let multilevel = plan.methods.iter().any(|m| m.is_multilevel());
        let params = if multilevel {
            plan.params.clone()
        } else {
            HierarchyParams { levels: 1, ..plan.params.clone() }
        };
        let h = build_hierarchy(&mesh_problem.mesh, &mesh_problem.perm, &params)?;
        println!(
            "{}: {} cells, {} levels, setup_time_s {:.3}",
            mesh_problem.name,
            mesh_problem.n_cells(),
            h.n_levels(),
            t.elapsed().as_secs_f64()
        );
        log::debug!("\n{}", h.stats());
        for alpha in &plan.alphas {
            let prob = match alpha {
                Some(a) => from_name(&plan.problem, &Overrides { alpha: Some(*a), ..ov.clone() }, plan.cfg.as_ref())?,
                None => mesh_problem.clone(),
            };
            let mut cfg = NonlinearConfig::for_problem(&prob);
            if let Some(v) = plan.tol_rel {
                cfg.rel_tol = v;
            }
            if let Some(v) = plan.tol_abs {
                cfg.abs_tol = v;
            }
            if let Some(v) = plan.max_iters {
                cfg.max_nonlinear_iters = v;
            }
            if let Some(v) = plan.theta {
                cfg.backtrack.theta = v;
            }
            let solver = Solver::new(&prob, &h, cfg)?;
            for method in &plan.methods {
                let (x, rep) = solver.solve(*method)?;
                let levels = if method.is_multilevel() { h.n_levels() } else { 1 };
                rows.push(ReportRow {
                    solver: method.to_string(),
                    alpha: law_alpha(&prob),
                    cells: prob.n_cells(),
                    levels,
                    m_a: plan.params.m_a,
                    m_f: plan.params.m_f,
                    nonlinear_iters: rep.nonlinear_iters,
                    time_s: rep.solve_seconds,
                    converged: rep.converged,
                    early_presmooth: rep.early_presmooth,
                });
                if !rep.converged {
                    warn!("{method} on {} (alpha {}) did not converge", prob.name, law_alpha(&prob));
                    all_converged = false;
                }
                if method.is_multilevel() {
                    let per_level: Vec<String> = rep.level_smoothing.iter().map(|n| n.to_string()).collect();
                    log::info!("{method} smoothing steps per level: {}", per_level.join(" "));
                }
                let tag = format!("{}_{}_{}", method, law_alpha(&prob), prob.n_cells());
                if let Some(path) = &plan.export {
                    let path = if n_runs > 1 { tagged(path, &tag) } else { path.clone() };
                    let state = prob.expand_state(&h.fine_flux_ids, &x);
                    export_solution(&prob.mesh, &state, &path)?;
                }
                if let Some(path) = &plan.history {
                    let path = if n_runs > 1 { tagged(path, &tag) } else { path.clone() };
                    rep.write_history_csv(&path)?;
                }
            }
        }
    }
    print_summary(&rows);
    match &plan.report {
        Some(path) => write_report(&rows, path)?,
        None => write_report_to(&rows, std::io::stdout())?,
    }
    Ok(all_converged)
}

/// Solver × (cells, α) table of `time (iterations)`, `*` marking early pre-smoothing convergence.
fn print_summary(rows: &[ReportRow]) {
    let mut cols: Vec<(usize, String)> = Vec::new();
    let mut table: BTreeMap<String, BTreeMap<(usize, String), String>> = BTreeMap::new();
    for r in rows {
        let key = (r.cells, format!("{}", r.alpha));
        if !cols.contains(&key) {
            cols.push(key.clone());
        }
        let mark = if r.early_presmooth { "*" } else { "" };
        let conv = if r.converged { "" } else { "!" };
        table
            .entry(r.solver.clone())
            .or_default()
            .insert(key, format!("{:.2}s ({}{mark}){conv}", r.time_s, r.nonlinear_iters));
    }
    let mut header = format!("{:<15}", "solver");
    for (cells, a) in &cols {
        header.push_str(&format!(" {:>18}", format!("n={cells} a={a}")));
    }
    println!("{header}");
    for (solver, cells) in &table {
        let mut line = format!("{solver:<15}");
        for c in &cols {
            line.push_str(&format!(" {:>18}", cells.get(c).map(String::as_str).unwrap_or("-")));
        }
        println!("{line}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) if args.allow_nonconverged => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: at least one solve did not converge (use --allow-nonconverged to accept)");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
