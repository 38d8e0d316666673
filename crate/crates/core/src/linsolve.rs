//! Linear solvers for `[M E; D 0][σ; p] = [a; b]`: preconditioned Krylov methods,
//! algebraic hybridization, and a sparse direct fallback.

use std::time::Instant;

use faer::{Mat, Side};

use crate::coarsen::Level;
use crate::dense::DenseLu;
use crate::error::{Error, Result};
use crate::sparse::{axpy, dot, norm2, CsrMatrix, SparseLu};

/// Linearized saddle system with right-hand side `(a, b)`.
#[derive(Clone, Debug)]
pub struct BlockSystem {
    pub m: CsrMatrix,
    pub e: CsrMatrix,
    pub d: CsrMatrix,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl BlockSystem {
    pub fn n_sigma(&self) -> usize {
        self.m.nrows()
    }

    pub fn n_p(&self) -> usize {
        self.d.nrows()
    }

    pub fn check(&self) -> Result<()> {
        let (ns, np) = (self.n_sigma(), self.n_p());
        let ok = self.m.ncols() == ns
            && self.e.nrows() == ns
            && self.e.ncols() == np
            && self.d.ncols() == ns
            && self.a.len() == ns
            && self.b.len() == np;
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension("inconsistent block system".into()))
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let ns = self.n_sigma();
        let (s, p) = x.split_at(ns);
        let mut y = self.m.matvec(s);
        self.e.matvec_acc(1.0, p, &mut y);
        y.extend(self.d.matvec(s));
        y
    }

    pub fn rhs(&self) -> Vec<f64> {
        let mut r = self.a.clone();
        r.extend(&self.b);
        r
    }

    pub fn residual_norm(&self, x: &[f64]) -> f64 {
        let y = self.apply(x);
        y.iter().zip(self.rhs()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    /// `[M E; D 0]` as one sparse matrix.
    pub fn assemble(&self) -> CsrMatrix {
        CsrMatrix::block2x2(&self.m, Some(&self.e), Some(&self.d), None, self.n_sigma(), self.n_p())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KrylovMethod {
    Cg,
    Minres,
    Gmres,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preconditioner {
    None,
    Jacobi,
    /// Jacobi on `M`, sparse LU of the approximate Schur complement (or of `H`).
    SchurDirect,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KrylovConfig {
    pub method: KrylovMethod,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_iters: usize,
    pub gmres_restart: usize,
    pub preconditioner: Preconditioner,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self {
            method: KrylovMethod::Minres,
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            max_iters: 1000,
            gmres_restart: 50,
            preconditioner: Preconditioner::SchurDirect,
        }
    }
}

impl KrylovConfig {
    pub fn with_method(self, method: KrylovMethod) -> Self {
        Self { method, ..self }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub seconds: f64,
    /// Residual estimates per iteration (preconditioned norm for MINRES).
    pub history: Vec<f64>,
}

/// Preconditioned conjugate gradients for SPD `A`.
pub fn cg(
    a: &dyn Fn(&[f64]) -> Vec<f64>,
    prec: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    x: &mut [f64],
    cfg: &KrylovConfig,
) -> SolveStats {
    let start = Instant::now();
    let tol = (cfg.rel_tol * norm2(b)).max(cfg.abs_tol);
    let mut r: Vec<f64> = b.iter().zip(a(x)).map(|(b, ax)| b - ax).collect();
    let mut z = prec(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut stats = SolveStats::default();
    let mut rn = norm2(&r);
    stats.history.push(rn);
    while rn > tol && stats.iterations < cfg.max_iters {
        let ap = a(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            log::warn!("CG: non-positive curvature {pap:e}");
            break;
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        z = prec(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
        stats.iterations += 1;
        rn = norm2(&r);
        stats.history.push(rn);
    }
    stats.residual = rn;
    stats.converged = rn <= tol;
    stats.seconds = start.elapsed().as_secs_f64();
    stats
}

/// Preconditioned MINRES for symmetric `A` with an SPD preconditioner.
///
/// Each pass runs until the preconditioned estimate has dropped by the factor still needed
/// for the true residual; the true residual is then checked and a new pass started if needed.
pub fn minres(
    a: &dyn Fn(&[f64]) -> Vec<f64>,
    prec: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    x: &mut [f64],
    cfg: &KrylovConfig,
) -> SolveStats {
    let start = Instant::now();
    let n = b.len();
    let tol = (cfg.rel_tol * norm2(b)).max(cfg.abs_tol);
    let mut stats = SolveStats::default();
    let mut safety = 1.0;
    loop {
        let r1: Vec<f64> = b.iter().zip(a(x)).map(|(b, ax)| b - ax).collect();
        let true_res = norm2(&r1);
        stats.residual = true_res;
        stats.converged = true_res <= tol;
        if stats.converged || stats.iterations >= cfg.max_iters {
            break;
        }
        let mut y = prec(&r1);
        let beta1 = dot(&r1, &y);
        if !(beta1 > 0.0) {
            break;
        }
        let beta1 = beta1.sqrt();
        let goal = beta1 * safety * tol / true_res;
        let mut r_prev = vec![0.0; n];
        let mut r_cur = r1;
        let mut oldb = 0.0;
        let mut beta = beta1;
        let (mut dbar, mut epsln, mut phibar) = (0.0, 0.0, beta1);
        let (mut cs, mut sn) = (-1.0, 0.0);
        let mut w = vec![0.0; n];
        let mut w2 = vec![0.0; n];
        let pass_start = stats.iterations;
        while stats.iterations < cfg.max_iters {
            let s = 1.0 / beta;
            let v: Vec<f64> = y.iter().map(|yi| s * yi).collect();
            let mut yy = a(&v);
            if oldb != 0.0 {
                axpy(-beta / oldb, &r_prev, &mut yy);
            }
            let alfa = dot(&v, &yy);
            axpy(-alfa / beta, &r_cur, &mut yy);
            r_prev = std::mem::replace(&mut r_cur, yy);
            y = prec(&r_cur);
            oldb = beta;
            beta = dot(&r_cur, &y).max(0.0).sqrt();
            let oldeps = epsln;
            let delta = cs * dbar + sn * alfa;
            let gbar = sn * dbar - cs * alfa;
            epsln = sn * beta;
            dbar = -cs * beta;
            let gamma = gbar.hypot(beta).max(f64::MIN_POSITIVE);
            cs = gbar / gamma;
            sn = beta / gamma;
            let phi = cs * phibar;
            phibar *= sn;
            let w1 = std::mem::replace(&mut w2, std::mem::take(&mut w));
            w = (0..n).map(|i| (v[i] - oldeps * w1[i] - delta * w2[i]) / gamma).collect();
            axpy(phi, &w, x);
            stats.iterations += 1;
            stats.history.push(phibar);
            if phibar <= goal || beta == 0.0 {
                break;
            }
        }
        if stats.iterations == pass_start {
            break;
        }
        safety *= 0.1;
    }
    stats.seconds = start.elapsed().as_secs_f64();
    stats
}

/// Restarted GMRES with right preconditioning.
pub fn gmres(
    a: &dyn Fn(&[f64]) -> Vec<f64>,
    prec: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    x: &mut [f64],
    cfg: &KrylovConfig,
) -> SolveStats {
    let start = Instant::now();
    let m = cfg.gmres_restart.max(1);
    let tol = (cfg.rel_tol * norm2(b)).max(cfg.abs_tol);
    let mut stats = SolveStats::default();
    loop {
        let r: Vec<f64> = b.iter().zip(a(x)).map(|(b, ax)| b - ax).collect();
        let beta = norm2(&r);
        stats.history.push(beta);
        if beta <= tol || stats.iterations >= cfg.max_iters {
            stats.residual = beta;
            stats.converged = beta <= tol;
            break;
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut z: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k = 0;
        while k < m && stats.iterations < cfg.max_iters {
            let zk = prec(&v[k]);
            let mut w = a(&zk);
            z.push(zk);
            for (i, vi) in v.iter().enumerate() {
                h[i][k] = dot(&w, vi);
                axpy(-h[i][k], vi, &mut w);
            }
            // One reorthogonalization pass for stability.
            for (i, vi) in v.iter().enumerate() {
                let c = dot(&w, vi);
                h[i][k] += c;
                axpy(-c, vi, &mut w);
            }
            let hn = norm2(&w);
            h[k + 1][k] = hn;
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let den = h[k][k].hypot(h[k + 1][k]);
            if den == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = h[k][k] / den;
                sn[k] = h[k + 1][k] / den;
            }
            h[k][k] = den;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            stats.iterations += 1;
            k += 1;
            stats.history.push(g[k].abs());
            if g[k].abs() <= 0.5 * tol || hn == 0.0 {
                break;
            }
            v.push(w.iter().map(|wi| wi / hn).collect());
        }
        // Back substitution for the Krylov coefficients.
        let mut yk = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= h[i][j] * yk[j];
            }
            yk[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        for (j, yj) in yk.iter().enumerate() {
            axpy(*yj, &z[j], x);
        }
    }
    stats.seconds = start.elapsed().as_secs_f64();
    stats
}

/// `𝓑 = diag(𝓑_M, 𝓑_S)` with `S = D diag(M)⁻¹ E`.
pub struct BlockPreconditioner {
    inv_diag_m: Vec<f64>,
    schur: SchurSolve,
}

enum SchurSolve {
    Identity,
    Jacobi(Vec<f64>),
    Direct(SparseLu),
}

impl BlockPreconditioner {
    pub fn new(sys: &BlockSystem, kind: Preconditioner) -> Result<Self> {
        let dm = sys.m.diagonal();
        if dm.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::LinearSolver("M has a non-positive diagonal entry".into()));
        }
        let inv_diag_m: Vec<f64> = dm.iter().map(|v| 1.0 / v).collect();
        let schur = match kind {
            Preconditioner::None => SchurSolve::Identity,
            Preconditioner::Jacobi | Preconditioner::SchurDirect => {
                let mut scaled = sys.d.clone();
                scaled.scale_cols(&inv_diag_m);
                let s = scaled.matmul(&sys.e);
                if kind == Preconditioner::Jacobi {
                    let d = s.diagonal();
                    SchurSolve::Jacobi(d.iter().map(|v| if *v != 0.0 { 1.0 / v.abs() } else { 1.0 }).collect())
                } else {
                    SchurSolve::Direct(SparseLu::new(&s)?)
                }
            }
        };
        let inv_diag_m = if kind == Preconditioner::None { vec![1.0; dm.len()] } else { inv_diag_m };
        Ok(Self { inv_diag_m, schur })
    }

    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        let ns = self.inv_diag_m.len();
        let mut z: Vec<f64> = r[..ns].iter().zip(&self.inv_diag_m).map(|(a, b)| a * b).collect();
        match &self.schur {
            SchurSolve::Identity => z.extend(&r[ns..]),
            SchurSolve::Jacobi(d) => z.extend(r[ns..].iter().zip(d).map(|(a, b)| a * b)),
            SchurSolve::Direct(lu) => z.extend(lu.solve(&r[ns..])),
        }
        z
    }
}

/// Krylov solve of the full block system; MINRES needs `E = Dᵀ`.
pub fn solve_block(sys: &BlockSystem, cfg: &KrylovConfig) -> Result<(Vec<f64>, Vec<f64>, SolveStats)> {
    sys.check()?;
    let ns = sys.n_sigma();
    let rhs = sys.rhs();
    let mut x = vec![0.0; rhs.len()];
    if norm2(&rhs) == 0.0 {
        return Ok((vec![0.0; ns], vec![0.0; sys.n_p()], SolveStats { converged: true, ..Default::default() }));
    }
    let prec = BlockPreconditioner::new(sys, cfg.preconditioner)?;
    let a = |v: &[f64]| sys.apply(v);
    let p = |v: &[f64]| prec.apply(v);
    let stats = match cfg.method {
        KrylovMethod::Minres => minres(&a, &p, &rhs, &mut x, cfg),
        KrylovMethod::Gmres => gmres(&a, &p, &rhs, &mut x, cfg),
        KrylovMethod::Cg => return Err(Error::InvalidArgument("CG does not apply to the indefinite block system".into())),
    };
    let p_part = x.split_off(ns);
    Ok((x, p_part, stats))
}

/// Sparse LU of the assembled block matrix.
pub fn solve_direct(sys: &BlockSystem) -> Result<(Vec<f64>, Vec<f64>, SolveStats)> {
    sys.check()?;
    let start = Instant::now();
    let lu = SparseLu::new(&sys.assemble())?;
    let rhs = sys.rhs();
    let mut x = lu.solve(&rhs);
    let res = sys.residual_norm(&x);
    let p = x.split_off(sys.n_sigma());
    let stats = SolveStats {
        iterations: 1,
        residual: res,
        converged: res.is_finite(),
        seconds: start.elapsed().as_secs_f64(),
        history: vec![res],
    };
    Ok((x, p, stats))
}

/// One cell's local saddle block over its own flux dofs and pressure dofs.
#[derive(Clone, Debug)]
pub struct LocalBlock {
    pub fdofs: Vec<usize>,
    pub pdofs: Vec<usize>,
    pub m: Mat<f64>,
    pub e: Mat<f64>,
    pub d: Mat<f64>,
}

/// Local blocks of a level at cell scaling `scale`; `newton` adds `(M̂_K σ_K) κ_inv'_K w_Kᵀ` to `E_K`.
pub fn local_blocks(level: &Level, scale: &[f64], newton: Option<(&[f64], &[f64])>) -> Vec<LocalBlock> {
    (0..level.n_cells())
        .map(|k| {
            let fdofs = level.local_dofs[k].clone();
            let pdofs: Vec<usize> = level.topo.cell_pdofs[k].clone().collect();
            let sb = &level.static_blocks[k];
            let m = Mat::from_fn(fdofs.len(), fdofs.len(), |i, j| scale[k] * sb[(i, j)]);
            let d = level.d.dense_block(&pdofs, &fdofs);
            let mut e = d.transpose().to_owned();
            if let Some((sigma, dk)) = newton {
                let w = &level.pwc_weights[k];
                for i in 0..fdofs.len() {
                    let ms: f64 = (0..fdofs.len()).map(|j| sb[(i, j)] * sigma[fdofs[j]]).sum();
                    for (c, wc) in w.iter().enumerate() {
                        e[(i, c)] += ms * dk[k] * wc;
                    }
                }
            }
            LocalBlock { fdofs, pdofs, m, e, d }
        })
        .collect()
}

/// Hybridized form `H λ = ξ` of a block system whose flux dofs are shared by at most two cells.
pub struct HybridSystem {
    pub blocks: Vec<LocalBlock>,
    local_lu: Vec<DenseLu>,
    /// Local right-hand sides `[a_K; b_K]`; shared flux data goes to the first copy.
    local_rhs: Vec<Vec<f64>>,
    /// `(multiplier, sign)` for each local flux dof, if constrained.
    constraints: Vec<Vec<Option<(usize, f64)>>>,
    pub h: CsrMatrix,
    pub xi: Vec<f64>,
    n_sigma: usize,
    n_p: usize,
}

impl HybridSystem {
    pub fn new(blocks: Vec<LocalBlock>, n_sigma: usize, n_p: usize, a: &[f64], b: &[f64]) -> Result<Self> {
        let mut owners: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_sigma];
        for (k, blk) in blocks.iter().enumerate() {
            for (i, &d) in blk.fdofs.iter().enumerate() {
                owners[d].push((k, i));
            }
        }
        let mut constraints: Vec<Vec<Option<(usize, f64)>>> =
            blocks.iter().map(|blk| vec![None; blk.fdofs.len()]).collect();
        let mut n_lambda = 0;
        let mut local_rhs: Vec<Vec<f64>> = blocks
            .iter()
            .map(|blk| {
                let mut r = vec![0.0; blk.fdofs.len()];
                r.extend(blk.pdofs.iter().map(|&i| b[i]));
                r
            })
            .collect();
        for (d, own) in owners.iter().enumerate() {
            match own.len() {
                0 => return Err(Error::LinearSolver(format!("flux dof {d} belongs to no cell"))),
                1 => {}
                2 => {
                    constraints[own[0].0][own[0].1] = Some((n_lambda, 1.0));
                    constraints[own[1].0][own[1].1] = Some((n_lambda, -1.0));
                    n_lambda += 1;
                }
                c => return Err(Error::LinearSolver(format!("flux dof {d} shared by {c} cells"))),
            }
            local_rhs[own[0].0][own[0].1] = a[d];
        }
        let local_lu: Vec<DenseLu> = blocks
            .iter()
            .map(|blk| {
                let (nf, np) = (blk.fdofs.len(), blk.pdofs.len());
                let full = Mat::from_fn(nf + np, nf + np, |i, j| match (i < nf, j < nf) {
                    (true, true) => blk.m[(i, j)],
                    (true, false) => blk.e[(i, j - nf)],
                    (false, true) => blk.d[(i - nf, j)],
                    (false, false) => 0.0,
                });
                DenseLu::new(&full)
            })
            .collect::<Result<_>>()?;
        let mut t = Vec::new();
        let mut xi = vec![0.0; n_lambda];
        for (k, blk) in blocks.iter().enumerate() {
            let nf = blk.fdofs.len();
            let y = local_lu[k].solve(&local_rhs[k]);
            let cons: Vec<(usize, usize, f64)> = constraints[k]
                .iter()
                .enumerate()
                .filter_map(|(i, c)| c.map(|(l, s)| (i, l, s)))
                .collect();
            for &(i, l, s) in &cons {
                xi[l] += s * y[i];
            }
            for &(j, lj, sj) in &cons {
                let mut e = vec![0.0; nf + blk.pdofs.len()];
                e[j] = sj;
                let col = local_lu[k].solve(&e);
                for &(i, li, si) in &cons {
                    t.push((li, lj, si * col[i]));
                }
            }
        }
        let h = CsrMatrix::from_triplets(n_lambda, n_lambda, &t);
        Ok(Self { blocks, local_lu, local_rhs, constraints, h, xi, n_sigma, n_p })
    }

    pub fn n_lambda(&self) -> usize {
        self.xi.len()
    }

    /// Dense Cholesky test of `(H + Hᵀ)/2` together with a symmetry check.
    pub fn is_spd(&self) -> bool {
        let hd = self.h.to_dense();
        let n = hd.nrows();
        let asym = (&hd - hd.transpose()).norm_max();
        if asym > 1e-10 * hd.norm_max().max(f64::MIN_POSITIVE) {
            return false;
        }
        n == 0 || hd.llt(Side::Lower).is_ok()
    }

    /// Local back substitution for multipliers `λ`; shared fluxes are averaged over their copies.
    pub fn reconstruct(&self, lambda: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut sigma = vec![0.0; self.n_sigma];
        let mut count = vec![0.0; self.n_sigma];
        let mut p = vec![0.0; self.n_p];
        for (k, blk) in self.blocks.iter().enumerate() {
            let mut r = self.local_rhs[k].clone();
            for (i, c) in self.constraints[k].iter().enumerate() {
                if let Some((l, s)) = c {
                    r[i] -= s * lambda[*l];
                }
            }
            let y = self.local_lu[k].solve(&r);
            let nf = blk.fdofs.len();
            for (i, &d) in blk.fdofs.iter().enumerate() {
                sigma[d] += y[i];
                count[d] += 1.0;
            }
            for (i, &pd) in blk.pdofs.iter().enumerate() {
                p[pd] = y[nf + i];
            }
        }
        for (s, c) in sigma.iter_mut().zip(&count) {
            *s /= c;
        }
        (sigma, p)
    }
}

/// Solves `H λ = ξ` (CG when `symmetric`, GMRES otherwise) and reconstructs `(σ, p)`.
pub fn solve_hybrid(
    hs: &HybridSystem,
    symmetric: bool,
    cfg: &KrylovConfig,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, SolveStats)> {
    let n = hs.n_lambda();
    let mut lambda = vec![0.0; n];
    let mut stats = SolveStats { converged: true, ..Default::default() };
    if n > 0 && norm2(&hs.xi) > 0.0 {
        let a = |v: &[f64]| hs.h.matvec(v);
        let kcfg = KrylovConfig { method: if symmetric { KrylovMethod::Cg } else { KrylovMethod::Gmres }, ..*cfg };
        stats = match cfg.preconditioner {
            Preconditioner::SchurDirect => {
                let lu = SparseLu::new(&hs.h)?;
                let p = |v: &[f64]| lu.solve(v);
                run(&a, &p, &hs.xi, &mut lambda, &kcfg)
            }
            Preconditioner::Jacobi => {
                let d: Vec<f64> = hs.h.diagonal().iter().map(|v| if *v != 0.0 { 1.0 / v } else { 1.0 }).collect();
                let p = |v: &[f64]| v.iter().zip(&d).map(|(a, b)| a * b).collect();
                run(&a, &p, &hs.xi, &mut lambda, &kcfg)
            }
            Preconditioner::None => run(&a, &|v: &[f64]| v.to_vec(), &hs.xi, &mut lambda, &kcfg),
        };
    }
    let (sigma, p) = hs.reconstruct(&lambda);
    Ok((sigma, p, lambda, stats))
}

fn run(
    a: &dyn Fn(&[f64]) -> Vec<f64>,
    p: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    x: &mut [f64],
    cfg: &KrylovConfig,
) -> SolveStats {
    match cfg.method {
        KrylovMethod::Cg => cg(a, p, b, x, cfg),
        KrylovMethod::Minres => minres(a, p, b, x, cfg),
        KrylovMethod::Gmres => gmres(a, p, b, x, cfg),
    }
}

/// Which path solves a level's linearized system.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverRoute {
    Block,
    Hybrid,
    Direct,
}
