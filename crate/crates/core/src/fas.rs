//! Nonlinear drivers: backtracking, Picard/Newton smoothing, the FAS V-cycle,
//! cascadic multigrid and the single-level baselines.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use log::{debug, info};

use crate::coarsen::{build_hierarchy, Hierarchy, HierarchyParams, LevelSpaces};
use crate::error::{Error, Result};
use crate::level::{level_kappa, LevelOperator, LevelState};
use crate::linsolve::{
    local_blocks, solve_block, solve_direct, solve_hybrid, BlockSystem, HybridSystem, KrylovConfig, KrylovMethod,
    SolveStats, SolverRoute,
};
use crate::problems::Problem;
use crate::sparse::{norm2, norm_inf};

/// Parameters of the residual-based line search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BacktrackConfig {
    pub n_max: usize,
    pub theta: f64,
    pub pressure_cap: Option<f64>,
}

impl Default for BacktrackConfig {
    fn default() -> Self {
        Self { n_max: 4, theta: 0.9, pressure_cap: None }
    }
}

impl BacktrackConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::InvalidArgument(format!("theta must lie in (0, 1], got {}", self.theta)));
        }
        if let Some(c) = self.pressure_cap {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument(format!("pressure cap must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// How a line search ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BacktrackOutcome {
    /// The accepted residual does not exceed the entry residual.
    Decreased,
    /// Halving stopped because the half step would not improve enough.
    EarlyExit,
    /// `n_max` halvings were used up.
    Exhausted,
    /// Every trial residual was non-finite; the iterate was kept.
    NonFinite,
}

#[derive(Clone, Debug)]
pub struct BacktrackResult {
    pub x: Vec<f64>,
    pub s: f64,
    pub steps: usize,
    pub residual: f64,
    pub outcome: BacktrackOutcome,
}

fn finite_or_inf(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

fn axpy_new(x: &[f64], s: f64, dx: &[f64]) -> Vec<f64> {
    x.iter().zip(dx).map(|(a, b)| a + s * b).collect()
}

/// Residual-based step halving along `dx`; `r0` is `‖r(x)‖` when already known.
pub fn backtrack(
    residual: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    dx: &[f64],
    r0: Option<f64>,
    cfg: &BacktrackConfig,
) -> BacktrackResult {
    let r0 = finite_or_inf(r0.unwrap_or_else(|| residual(x)));
    let mut s = 1.0;
    let mut n = 0;
    let mut r_cur = finite_or_inf(residual(&axpy_new(x, s, dx)));
    let mut early = false;
    while r_cur > r0 && n < cfg.n_max {
        let r_half = finite_or_inf(residual(&axpy_new(x, 0.5 * s, dx)));
        if r_half > cfg.theta * r_cur {
            early = true;
            break;
        }
        s *= 0.5;
        n += 1;
        r_cur = r_half;
    }
    if !r_cur.is_finite() {
        return BacktrackResult { x: x.to_vec(), s: 0.0, steps: n, residual: r0, outcome: BacktrackOutcome::NonFinite };
    }
    let outcome = if r_cur <= r0 {
        BacktrackOutcome::Decreased
    } else if early {
        BacktrackOutcome::EarlyExit
    } else {
        BacktrackOutcome::Exhausted
    };
    BacktrackResult { x: axpy_new(x, s, dx), s, steps: n, residual: r_cur, outcome }
}

/// Scales the whole step so that `max|Δp| ≤ cap`; returns the factor used.
pub fn pressure_cap_backtrack(dx: &mut LevelState, max_dp: f64, cap: f64) -> f64 {
    if max_dp > cap {
        let f = cap / max_dp;
        for v in dx.sigma.iter_mut().chain(dx.p.iter_mut()) {
            *v *= f;
        }
        f
    } else {
        1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Smoother {
    Picard,
    Newton,
}

/// Nonlinear solution strategies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    SinglePicard,
    SingleNewton,
    FasPicard,
    FasNewton,
    Cascadic,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::SinglePicard, Method::SingleNewton, Method::FasPicard, Method::FasNewton, Method::Cascadic];

    pub fn smoother(self) -> Smoother {
        match self {
            Method::SinglePicard | Method::FasPicard => Smoother::Picard,
            _ => Smoother::Newton,
        }
    }

    pub fn is_multilevel(self) -> bool {
        !matches!(self, Method::SinglePicard | Method::SingleNewton)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::SinglePicard => "single_picard",
            Method::SingleNewton => "single_newton",
            Method::FasPicard => "fas_picard",
            Method::FasNewton => "fas_newton",
            Method::Cascadic => "cascadic",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown solver {s:?}")))
    }
}

#[derive(Clone, Debug)]
pub struct NonlinearConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_nonlinear_iters: usize,
    pub coarsest_max_smoothing: usize,
    pub backtrack: BacktrackConfig,
    /// Linear solver settings; the method is chosen per smoother and route.
    pub krylov: KrylovConfig,
    /// Forces one linear-solver route on every level.
    pub route: Option<SolverRoute>,
}

impl Default for NonlinearConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_nonlinear_iters: 100,
            coarsest_max_smoothing: 10,
            backtrack: BacktrackConfig::default(),
            krylov: KrylovConfig::default(),
            route: None,
        }
    }
}

impl NonlinearConfig {
    /// Takes `n_max` and the pressure cap from the problem.
    pub fn for_problem(problem: &Problem) -> Self {
        let mut c = Self::default();
        c.backtrack.n_max = problem.n_max;
        c.backtrack.pressure_cap = problem.pressure_cap;
        c
    }

    pub fn check(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        self.backtrack.check()
    }
}

/// One smoothing step or coarse correction.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub iter: usize,
    pub level: usize,
    pub residual: f64,
    pub s: f64,
    pub backtrack_steps: usize,
}

/// Aggregated linear-solver statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinearStats {
    pub solves: usize,
    pub iterations: usize,
    pub direct_fallbacks: usize,
    pub seconds: f64,
}

impl LinearStats {
    fn record(&mut self, st: &SolveStats) {
        self.solves += 1;
        self.iterations += st.iterations;
        self.seconds += st.seconds;
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub method: Method,
    /// Fine residual norms: entry value, then one per outer iteration.
    pub residuals: Vec<f64>,
    pub history: Vec<HistoryRow>,
    /// Smoothing steps per level.
    pub level_smoothing: Vec<usize>,
    /// Backtracking halvings per level.
    pub level_backtracks: Vec<usize>,
    pub linear: LinearStats,
    pub nonlinear_iters: usize,
    pub converged: bool,
    /// Convergence was reached right after a pre-smoothing step.
    pub early_presmooth: bool,
    /// Line searches ending in each [`BacktrackOutcome`], in declaration order.
    pub outcomes: [usize; 4],
    /// `‖Dσ − b_p‖∞` of each level's final state.
    pub mass_residual: Vec<f64>,
    /// `max(abs_tol, rel_tol·‖r₀‖)`.
    pub tolerance: f64,
    pub setup_seconds: f64,
    pub solve_seconds: f64,
}

impl SolveReport {
    fn new(method: Method, n_levels: usize) -> Self {
        Self {
            method,
            residuals: Vec::new(),
            history: Vec::new(),
            level_smoothing: vec![0; n_levels],
            level_backtracks: vec![0; n_levels],
            linear: LinearStats::default(),
            nonlinear_iters: 0,
            converged: false,
            early_presmooth: false,
            outcomes: [0; 4],
            mass_residual: vec![f64::NAN; n_levels],
            tolerance: 0.0,
            setup_seconds: 0.0,
            solve_seconds: 0.0,
        }
    }

    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(f64::NAN)
    }

    /// Writes the history as CSV with columns `iter,level,residual,s,backtrack_steps`.
    pub fn write_history_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
        self.write_history(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_history<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        let io = |e: csv::Error| Error::Io(e.into());
        w.write_record(["iter", "level", "residual", "s", "backtrack_steps"]).map_err(io)?;
        for h in &self.history {
            w.write_record([
                h.iter.to_string(),
                h.level.to_string(),
                format!("{:e}", h.residual),
                h.s.to_string(),
                h.backtrack_steps.to_string(),
            ])
            .map_err(io)?;
        }
        Ok(())
    }

    fn note(&mut self, outcome: BacktrackOutcome) {
        let i = match outcome {
            BacktrackOutcome::Decreased => 0,
            BacktrackOutcome::EarlyExit => 1,
            BacktrackOutcome::Exhausted => 2,
            BacktrackOutcome::NonFinite => 3,
        };
        self.outcomes[i] += 1;
    }
}

/// Operators and right-hand sides of every level, ready for nonlinear iteration.
pub struct Solver<'h> {
    pub hierarchy: &'h Hierarchy,
    pub ops: Vec<LevelOperator<'h>>,
    pub b0: LevelState,
    pub x0: LevelState,
    pub cfg: NonlinearConfig,
}

/// Applies `Q = diag(Q_σ, Q_p)`.
fn restrict_state(sp: &LevelSpaces, x: &LevelState) -> LevelState {
    LevelState { sigma: sp.q_sigma.matvec(&x.sigma), p: sp.p_p.tmatvec(&x.p) }
}

/// Applies `Pᵀ`.
fn restrict_residual(sp: &LevelSpaces, r: &LevelState) -> LevelState {
    LevelState { sigma: sp.p_sigma.tmatvec(&r.sigma), p: sp.p_p.tmatvec(&r.p) }
}

/// Applies `P = diag(P_σ, P_p)`.
fn prolong(sp: &LevelSpaces, x: &LevelState) -> LevelState {
    LevelState { sigma: sp.p_sigma.matvec(&x.sigma), p: sp.p_p.matvec(&x.p) }
}

struct Step {
    x: LevelState,
    residual: f64,
    s: f64,
    steps: usize,
}

impl<'h> Solver<'h> {
    pub fn new(problem: &Problem, hierarchy: &'h Hierarchy, cfg: NonlinearConfig) -> Result<Self> {
        cfg.check()?;
        let vol = problem.mesh.cell_volumes();
        let ops = hierarchy
            .levels
            .iter()
            .map(|l| LevelOperator::new(l, level_kappa(l, &vol, &problem.kappa)))
            .collect::<Result<Vec<_>>>()?;
        let b0 = problem.fine_rhs(&hierarchy.fine_flux_ids)?;
        let x0 = LevelState { sigma: vec![0.0; ops[0].n_sigma()], p: problem.initial_p.clone() };
        Ok(Self { hierarchy, ops, b0, x0, cfg })
    }

    pub fn n_levels(&self) -> usize {
        self.ops.len()
    }

    fn route(&self, level: usize) -> SolverRoute {
        self.cfg.route.unwrap_or(if level == 0 { SolverRoute::Block } else { SolverRoute::Hybrid })
    }

    /// `‖A(x) − b‖₂`, infinite when κ cannot be evaluated.
    pub fn residual_norm(&self, level: usize, x: &LevelState, b: &LevelState) -> f64 {
        match self.ops[level].residual(x, b) {
            Ok(r) => finite_or_inf(r.norm()),
            Err(_) => f64::INFINITY,
        }
    }

    /// Solves `J Δ = −r` for the Picard or Newton linearization at `x`.
    fn linear_solve(
        &self,
        level: usize,
        x: &LevelState,
        r: &LevelState,
        smoother: Smoother,
        stats: &mut LinearStats,
    ) -> Result<LevelState> {
        let op = &self.ops[level];
        let newton = smoother == Smoother::Newton;
        let a: Vec<f64> = r.sigma.iter().map(|v| -v).collect();
        let b: Vec<f64> = r.p.iter().map(|v| -v).collect();
        let mut kcfg = self.cfg.krylov;
        let block = || -> Result<BlockSystem> {
            let j = op.jacobian(x, newton)?;
            Ok(BlockSystem { m: j.m, e: j.e, d: j.d, a: a.clone(), b: b.clone() })
        };
        let attempt: Result<(Vec<f64>, Vec<f64>, SolveStats)> = match self.route(level) {
            SolverRoute::Block => {
                kcfg.method = if newton { KrylovMethod::Gmres } else { KrylovMethod::Minres };
                block().and_then(|sys| solve_block(&sys, &kcfg))
            }
            SolverRoute::Hybrid => {
                kcfg.method = if newton { KrylovMethod::Gmres } else { KrylovMethod::Cg };
                let scale = op.kappa_inv(&x.p)?;
                let dk = if newton { op.kappa_inv_derivative(&x.p) } else { Vec::new() };
                let nt = newton.then_some((x.sigma.as_slice(), dk.as_slice()));
                HybridSystem::new(local_blocks(op.level, &scale, nt), op.n_sigma(), op.n_p(), &a, &b)
                    .and_then(|hs| solve_hybrid(&hs, !newton, &kcfg))
                    .map(|(s, p, _, st)| (s, p, st))
            }
            SolverRoute::Direct => block().and_then(|sys| solve_direct(&sys)),
        };
        let ok = matches!(&attempt, Ok((s, p, st)) if st.converged && s.iter().chain(p).all(|v| v.is_finite()));
        let (s, p, st) = if ok {
            attempt?
        } else {
            if let Err(e) = &attempt {
                debug!("level {level}: iterative solve failed ({e}); using direct solve");
            } else {
                debug!("level {level}: iterative solve did not converge; using direct solve");
            }
            stats.direct_fallbacks += 1;
            solve_direct(&block()?)?
        };
        stats.record(&st);
        let dx = LevelState { sigma: s, p };
        if !dx.is_finite() {
            return Err(Error::LinearSolver(format!("non-finite update on level {level}")));
        }
        Ok(dx)
    }

    /// One linearize–solve–backtrack step on `level`.
    fn smooth(
        &self,
        level: usize,
        x: &LevelState,
        b: &LevelState,
        r0: f64,
        smoother: Smoother,
        report: &mut SolveReport,
    ) -> Result<Step> {
        let op = &self.ops[level];
        let r = op.residual(x, b)?;
        let mut dx = self.linear_solve(level, x, &r, smoother, &mut report.linear)?;
        if let Some(cap) = self.cfg.backtrack.pressure_cap {
            let max_dp = norm_inf(&op.level.pwc(&dx.p));
            pressure_cap_backtrack(&mut dx, max_dp, cap);
        }
        let step = self.line_search(level, x, &dx, b, r0, report);
        report.level_smoothing[level] += 1;
        Ok(step)
    }

    fn line_search(
        &self,
        level: usize,
        x: &LevelState,
        dx: &LevelState,
        b: &LevelState,
        r0: f64,
        report: &mut SolveReport,
    ) -> Step {
        let ns = x.sigma.len();
        let mut res = |v: &[f64]| self.residual_norm(level, &LevelState::split(v, ns), b);
        let bt = backtrack(&mut res, &x.concat(), &dx.concat(), Some(r0), &self.cfg.backtrack);
        report.level_backtracks[level] += bt.steps;
        report.note(bt.outcome);
        Step { x: LevelState::split(&bt.x, ns), residual: bt.residual, s: bt.s, steps: bt.steps }
    }

    fn push(report: &mut SolveReport, iter: usize, level: usize, step: &Step) {
        report.history.push(HistoryRow {
            iter,
            level,
            residual: step.residual,
            s: step.s,
            backtrack_steps: step.steps,
        });
    }

    fn mass_residual(&self, level: usize, x: &LevelState, b: &LevelState) -> f64 {
        let dsig = self.ops[level].level.d.matvec(&x.sigma);
        dsig.iter().zip(&b.p).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max)
    }

    /// Repeated smoothing on one level until `tol` or `max_steps`.
    fn smooth_to(
        &self,
        level: usize,
        mut x: LevelState,
        b: &LevelState,
        tol: f64,
        max_steps: usize,
        smoother: Smoother,
        iter: usize,
        report: &mut SolveReport,
    ) -> Result<(LevelState, f64, usize)> {
        let mut r = self.residual_norm(level, &x, b);
        let mut n = 0;
        while r > tol && n < max_steps {
            let step = self.smooth(level, &x, b, r, smoother, report)?;
            Self::push(report, iter, level, &step);
            n += 1;
            x = step.x;
            r = step.residual;
        }
        Ok((x, r, n))
    }

    /// One FAS V-cycle from `level` down; returns the new iterate and its residual norm.
    pub fn vcycle(
        &self,
        level: usize,
        x: LevelState,
        b: &LevelState,
        smoother: Smoother,
        iter: usize,
        fine_tol: f64,
        report: &mut SolveReport,
    ) -> Result<(LevelState, f64)> {
        let r_in = self.residual_norm(level, &x, b);
        if r_in <= self.cfg.abs_tol {
            return Ok((x, r_in));
        }
        if level + 1 == self.n_levels() {
            let tol = (self.cfg.rel_tol * r_in).max(self.cfg.abs_tol);
            let (x, r, _) =
                self.smooth_to(level, x, b, tol, self.cfg.coarsest_max_smoothing, smoother, iter, report)?;
            report.mass_residual[level] = self.mass_residual(level, &x, b);
            return Ok((x, r));
        }
        let pre = self.smooth(level, &x, b, r_in, smoother, report)?;
        Self::push(report, iter, level, &pre);
        let x = pre.x;
        if level == 0 && pre.residual <= fine_tol {
            report.early_presmooth = true;
            return Ok((x, pre.residual));
        }
        let sp = &self.hierarchy.spaces[level];
        let op_c = &self.ops[level + 1];
        let xc = restrict_state(sp, &x);
        let r = self.ops[level].residual(&x, b)?;
        let bc = op_c.apply(&xc)?.plus(-1.0, &restrict_residual(sp, &r));
        let (yc, _) = self.vcycle(level + 1, xc.clone(), &bc, smoother, iter, fine_tol, report)?;
        let dx = prolong(sp, &yc.minus(&xc));
        let corr = self.line_search(level, &x, &dx, b, pre.residual, report);
        Self::push(report, iter, level, &corr);
        let post = self.smooth(level, &corr.x, b, corr.residual, smoother, report)?;
        Self::push(report, iter, level, &post);
        report.mass_residual[level] = self.mass_residual(level, &post.x, b);
        Ok((post.x, post.residual))
    }

    /// Runs `method` from the problem's initial guess.
    pub fn solve(&self, method: Method) -> Result<(LevelState, SolveReport)> {
        let start = Instant::now();
        let nl = if method.is_multilevel() { self.n_levels() } else { 1 };
        if method.is_multilevel() && nl < 2 {
            return Err(Error::InvalidArgument(format!("{method} needs at least two levels")));
        }
        let mut report = SolveReport::new(method, nl);
        let smoother = method.smoother();
        let r0 = self.residual_norm(0, &self.x0, &self.b0);
        if !r0.is_finite() {
            return Err(Error::Kappa("initial residual is not finite".into()));
        }
        let tol = (self.cfg.rel_tol * r0).max(self.cfg.abs_tol);
        report.tolerance = tol;
        report.residuals.push(r0);
        let x = match method {
            Method::SinglePicard | Method::SingleNewton | Method::FasPicard | Method::FasNewton => {
                let mut x = self.x0.clone();
                let mut r = r0;
                let mut it = 0;
                while r > tol && it < self.cfg.max_nonlinear_iters {
                    it += 1;
                    report.early_presmooth = false;
                    let (xn, rn) = if method.is_multilevel() {
                        self.vcycle(0, x, &self.b0, smoother, it, tol, &mut report)?
                    } else {
                        let step = self.smooth(0, &x, &self.b0, r, smoother, &mut report)?;
                        Self::push(&mut report, it, 0, &step);
                        (step.x, step.residual)
                    };
                    x = xn;
                    r = rn;
                    report.residuals.push(r);
                    debug!("{method} iteration {it}: residual {r:e}");
                }
                report.nonlinear_iters = it;
                report.converged = r <= tol;
                x
            }
            Method::Cascadic => self.cascadic(smoother, tol, &mut report)?,
        };
        report.mass_residual[0] = self.mass_residual(0, &x, &self.b0);
        report.solve_seconds = start.elapsed().as_secs_f64();
        info!(
            "{method}: {} iterations, residual {:e}, converged {}",
            report.nonlinear_iters,
            report.final_residual(),
            report.converged
        );
        Ok((x, report))
    }

    /// Coarsest-to-finest solves with `b^{ℓ+1} = Pᵀ b^ℓ`, each level started from `P` of the coarser answer.
    fn cascadic(&self, smoother: Smoother, fine_tol: f64, report: &mut SolveReport) -> Result<LevelState> {
        let nl = self.n_levels();
        let mut rhs = vec![self.b0.clone()];
        let mut guess = vec![self.x0.clone()];
        for sp in &self.hierarchy.spaces {
            rhs.push(restrict_residual(sp, rhs.last().unwrap()));
            guess.push(restrict_state(sp, guess.last().unwrap()));
        }
        let mut x = guess[nl - 1].clone();
        let mut r = f64::NAN;
        for level in (0..nl).rev() {
            if level + 1 < nl {
                x = prolong(&self.hierarchy.spaces[level], &x);
            }
            let tol = if level == 0 {
                fine_tol
            } else {
                (self.cfg.rel_tol * self.residual_norm(level, &guess[level], &rhs[level])).max(self.cfg.abs_tol)
            };
            let (xl, rl, n) =
                self.smooth_to(level, x, &rhs[level], tol, self.cfg.max_nonlinear_iters, smoother, level, report)?;
            report.mass_residual[level] = self.mass_residual(level, &xl, &rhs[level]);
            debug!("cascadic level {level}: {n} steps, residual {rl:e}");
            x = xl;
            r = rl;
        }
        report.nonlinear_iters = report.level_smoothing[0];
        report.residuals.push(r);
        report.converged = r <= fine_tol;
        Ok(x)
    }
}

/// Builds the hierarchy (a single level for the single-level methods) and solves.
pub fn solve(
    problem: &Problem,
    params: &HierarchyParams,
    method: Method,
    cfg: &NonlinearConfig,
) -> Result<(LevelState, SolveReport)> {
    let t = Instant::now();
    let params = if method.is_multilevel() {
        params.clone()
    } else {
        HierarchyParams { levels: 1, factors: Vec::new(), ..params.clone() }
    };
    let h = build_hierarchy(&problem.mesh, &problem.perm, &params)?;
    let setup = t.elapsed().as_secs_f64();
    let solver = Solver::new(problem, &h, cfg.clone())?;
    let (x, mut report) = solver.solve(method)?;
    report.setup_seconds = setup;
    Ok((x, report))
}

/// `‖x‖₂` of a concatenated state, shared by callers that print summaries.
pub fn state_norm(x: &LevelState) -> f64 {
    norm2(&x.concat())
}
