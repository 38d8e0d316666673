//! Per-level nonlinear operator, the `N(σ)` matrix and the Newton Jacobian.

use crate::coarsen::Level;
use crate::error::{Error, Result};
use crate::sparse::{norm2, CsrMatrix};
use crate::tpfa::KappaField;

/// Flux and pressure coefficients on one level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelState {
    pub sigma: Vec<f64>,
    pub p: Vec<f64>,
}

impl LevelState {
    pub fn zeros(level: &Level) -> Self {
        Self { sigma: vec![0.0; level.n_fdofs()], p: vec![0.0; level.n_pdofs()] }
    }

    pub fn len(&self) -> usize {
        self.sigma.len() + self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `self + s·dx`.
    pub fn plus(&self, s: f64, dx: &LevelState) -> LevelState {
        LevelState {
            sigma: self.sigma.iter().zip(&dx.sigma).map(|(a, b)| a + s * b).collect(),
            p: self.p.iter().zip(&dx.p).map(|(a, b)| a + s * b).collect(),
        }
    }

    pub fn minus(&self, other: &LevelState) -> LevelState {
        self.plus(-1.0, other)
    }

    pub fn scaled(&self, s: f64) -> LevelState {
        LevelState { sigma: self.sigma.iter().map(|v| s * v).collect(), p: self.p.iter().map(|v| s * v).collect() }
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.sigma).hypot(norm2(&self.p))
    }

    pub fn is_finite(&self) -> bool {
        self.sigma.iter().chain(&self.p).all(|v| v.is_finite())
    }

    pub fn concat(&self) -> Vec<f64> {
        let mut v = self.sigma.clone();
        v.extend(&self.p);
        v
    }

    pub fn split(v: &[f64], n_sigma: usize) -> Self {
        Self { sigma: v[..n_sigma].to_vec(), p: v[n_sigma..].to_vec() }
    }
}

/// Linearized blocks `[M E; D 0]`.
#[derive(Clone, Debug)]
pub struct JacobianBlocks {
    pub m: CsrMatrix,
    pub e: CsrMatrix,
    pub d: CsrMatrix,
}

/// `A^ℓ(x) = (M(Π̃p)σ + Dᵀp, Dσ)` built from level data only.
#[derive(Clone, Debug)]
pub struct LevelOperator<'a> {
    pub level: &'a Level,
    /// κ law with the shift averaged onto this level's cells.
    pub kappa: KappaField,
    dt: CsrMatrix,
    pwc: CsrMatrix,
}

impl<'a> LevelOperator<'a> {
    pub fn new(level: &'a Level, kappa: KappaField) -> Result<Self> {
        if let Some(z) = &kappa.shift {
            if z.len() != level.n_cells() {
                return Err(Error::Dimension(format!("{} shift values for {} cells", z.len(), level.n_cells())));
            }
        }
        Ok(Self { level, kappa, dt: level.d.transpose(), pwc: level.pwc_matrix() })
    }

    pub fn n_sigma(&self) -> usize {
        self.level.n_fdofs()
    }

    pub fn n_p(&self) -> usize {
        self.level.n_pdofs()
    }

    pub fn pwc_matrix(&self) -> &CsrMatrix {
        &self.pwc
    }

    /// `κ_inv(Π̃p)` per cell.
    pub fn kappa_inv(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.level.pwc(p).iter().enumerate().map(|(k, &v)| self.kappa.inv(k, v)).collect()
    }

    /// `dκ_inv/dp` at `Π̃p` per cell.
    pub fn kappa_inv_derivative(&self, p: &[f64]) -> Vec<f64> {
        self.level.pwc(p).iter().enumerate().map(|(k, &v)| self.kappa.inv_derivative(k, v)).collect()
    }

    pub fn assemble_m(&self, p: &[f64]) -> Result<CsrMatrix> {
        Ok(self.level.assemble_m(&self.kappa_inv(p)?))
    }

    /// `N(σ)` (flux dofs × cells): column `K` is `W_Kᵀ M̂_K W_K σ`.
    pub fn assemble_n(&self, sigma: &[f64]) -> CsrMatrix {
        let mut t = Vec::new();
        for (k, dofs) in self.level.local_dofs.iter().enumerate() {
            let b = &self.level.static_blocks[k];
            for (i, &gi) in dofs.iter().enumerate() {
                let v: f64 = dofs.iter().enumerate().map(|(j, &gj)| b[(i, j)] * sigma[gj]).sum();
                if v != 0.0 {
                    t.push((gi, k, v));
                }
            }
        }
        CsrMatrix::from_triplets(self.n_sigma(), self.level.n_cells(), &t)
    }

    pub fn apply(&self, x: &LevelState) -> Result<LevelState> {
        let scale = self.kappa_inv(&x.p)?;
        let mut rs = self.level.apply_m(&scale, &x.sigma);
        self.level.d.tmatvec_acc(1.0, &x.p, &mut rs);
        Ok(LevelState { sigma: rs, p: self.level.d.matvec(&x.sigma) })
    }

    /// `A(x) − b`.
    pub fn residual(&self, x: &LevelState, b: &LevelState) -> Result<LevelState> {
        Ok(self.apply(x)?.plus(-1.0, b))
    }

    /// Picard blocks use `E = Dᵀ`; Newton adds `N(σ) diag(κ_inv') Π̃`.
    pub fn jacobian(&self, x: &LevelState, newton: bool) -> Result<JacobianBlocks> {
        let m = self.assemble_m(&x.p)?;
        let e = if newton {
            let mut n = self.assemble_n(&x.sigma);
            n.scale_cols(&self.kappa_inv_derivative(&x.p));
            let extra = n.matmul(&self.pwc);
            self.dt.add(1.0, &extra, 1.0)
        } else {
            self.dt.clone()
        };
        Ok(JacobianBlocks { m, e, d: self.level.d.clone() })
    }
}

/// Carries a fine-cell κ field to `level` by volume-averaging its shift.
pub fn level_kappa(level: &Level, fine_volume: &[f64], fine: &KappaField) -> KappaField {
    match &fine.shift {
        Some(z) => KappaField::shifted(fine.law, level.average_fine_field(fine_volume, z)),
        None => KappaField::uniform(fine.law),
    }
}
