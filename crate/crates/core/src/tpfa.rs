//! Mixed two-point flux assembly on the fine mesh.

use crate::error::{Error, Result};
use crate::field_io::PermField;
use crate::mesh::{InterfaceKind, Mesh};
use crate::sparse::CsrMatrix;

/// Scalar pressure-dependent permeability multiplier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KappaLaw {
    Constant,
    Exponential { alpha: f64 },
    /// `α / (α + |ψ|^β)`; `k0` scales the base tensor and is applied to the permeability field.
    Richards { alpha: f64, beta: f64, k0: f64 },
}

impl KappaLaw {
    pub fn eval(&self, p: f64) -> f64 {
        match *self {
            KappaLaw::Constant => 1.0,
            KappaLaw::Exponential { alpha } => (alpha * p).exp(),
            KappaLaw::Richards { alpha, beta, .. } => alpha / (alpha + p.abs().powf(beta)),
        }
    }

    pub fn derivative(&self, p: f64) -> f64 {
        match *self {
            KappaLaw::Constant => 0.0,
            KappaLaw::Exponential { alpha } => alpha * (alpha * p).exp(),
            KappaLaw::Richards { alpha, beta, .. } => {
                if p == 0.0 {
                    return 0.0;
                }
                let a = p.abs();
                let den = alpha + a.powf(beta);
                -alpha * beta * a.powf(beta - 1.0) * p.signum() / (den * den)
            }
        }
    }

    /// `1 / κ(p)`.
    pub fn inv(&self, p: f64) -> f64 {
        match *self {
            KappaLaw::Constant => 1.0,
            KappaLaw::Exponential { alpha } => (-alpha * p).exp(),
            KappaLaw::Richards { alpha, beta, .. } => 1.0 + p.abs().powf(beta) / alpha,
        }
    }

    /// `d(1/κ)/dp`.
    pub fn inv_derivative(&self, p: f64) -> f64 {
        match *self {
            KappaLaw::Constant => 0.0,
            KappaLaw::Exponential { alpha } => -alpha * (-alpha * p).exp(),
            KappaLaw::Richards { alpha, beta, .. } => {
                if p == 0.0 {
                    0.0
                } else {
                    beta * p.abs().powf(beta - 1.0) * p.signum() / alpha
                }
            }
        }
    }
}

/// A κ law evaluated per cell at `p − shift`; the shift carries the gravity head for Richards.
#[derive(Clone, Debug, PartialEq)]
pub struct KappaField {
    pub law: KappaLaw,
    pub shift: Option<Vec<f64>>,
}

impl KappaField {
    pub fn uniform(law: KappaLaw) -> Self {
        Self { law, shift: None }
    }

    pub fn shifted(law: KappaLaw, shift: Vec<f64>) -> Self {
        Self { law, shift: Some(shift) }
    }

    fn arg(&self, cell: usize, p: f64) -> f64 {
        match &self.shift {
            Some(z) => p - z[cell],
            None => p,
        }
    }

    pub fn eval(&self, cell: usize, p: f64) -> f64 {
        self.law.eval(self.arg(cell, p))
    }

    pub fn inv(&self, cell: usize, p: f64) -> Result<f64> {
        let v = self.law.inv(self.arg(cell, p));
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err(Error::Kappa(format!("1/kappa = {v} at cell {cell}, p = {p}")))
        }
    }

    pub fn inv_derivative(&self, cell: usize, p: f64) -> f64 {
        self.law.inv_derivative(self.arg(cell, p))
    }
}

/// `Ῡ_{K,ε} = |ε| n_K·K0·(x_ε − x_K) / ‖x_ε − x_K‖²`.
pub fn half_transmissibility(mesh: &Mesh, perm: &PermField, cell: usize, iface: usize) -> Result<f64> {
    let f = &mesh.interfaces[iface];
    if f.cells.0 != cell && f.cells.1 != Some(cell) {
        return Err(Error::InvalidArgument(format!("interface {iface} does not bound cell {cell}")));
    }
    let n = mesh.outward_normal(cell, iface);
    let xk = mesh.cells[cell].barycenter;
    let d = [
        f.collocation_point[0] - xk[0],
        f.collocation_point[1] - xk[1],
        f.collocation_point[2] - xk[2],
    ];
    let dist2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    if dist2 == 0.0 {
        return Err(Error::Geometry(format!("collocation point of {iface} coincides with barycenter of {cell}")));
    }
    let k = perm.diag(cell);
    let t = f.measure * (n[0] * k[0] * d[0] + n[1] * k[1] * d[1] + n[2] * k[2] * d[2]) / dist2;
    if !(t > 0.0) {
        return Err(Error::Geometry(format!("half transmissibility {t} on cell {cell}, interface {iface}")));
    }
    Ok(t)
}

/// Half transmissibilities per interface: `[Ῡ_K, Ῡ_L]` (second entry zero on boundaries).
#[derive(Clone, Debug)]
pub struct HalfTransmissibilities {
    pub values: Vec<[f64; 2]>,
}

impl HalfTransmissibilities {
    pub fn compute(mesh: &Mesh, perm: &PermField) -> Result<Self> {
        if perm.len() != mesh.n_cells() {
            return Err(Error::Dimension(format!("{} permeability entries for {} cells", perm.len(), mesh.n_cells())));
        }
        let values = mesh
            .interfaces
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let tk = half_transmissibility(mesh, perm, f.cells.0, i)?;
                let tl = match f.cells.1 {
                    Some(l) => half_transmissibility(mesh, perm, l, i)?,
                    None => 0.0,
                };
                Ok([tk, tl])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { values })
    }
}

/// `[M E; D 0][σ; p] = −[g; f]` with `E = Dᵀ` unless linearized by Newton.
#[derive(Clone, Debug)]
pub struct SaddleSystem {
    pub m: CsrMatrix,
    pub d: CsrMatrix,
    pub e: CsrMatrix,
    pub g: Vec<f64>,
    pub f: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FineState {
    pub sigma: Vec<f64>,
    pub p: Vec<f64>,
}

impl FineState {
    pub fn zeros(mesh: &Mesh) -> Self {
        Self { sigma: vec![0.0; mesh.n_interfaces()], p: vec![0.0; mesh.n_cells()] }
    }
}

/// Fine divergence `D` (cells × interfaces): −1 on the first cell, +1 on the second, Neumann columns empty.
pub fn fine_divergence(mesh: &Mesh) -> CsrMatrix {
    let mut t = Vec::with_capacity(2 * mesh.n_interfaces());
    for (i, f) in mesh.interfaces.iter().enumerate() {
        match f.kind {
            InterfaceKind::Internal => {
                t.push((f.cells.0, i, -1.0));
                t.push((f.cells.1.unwrap(), i, 1.0));
            }
            InterfaceKind::Dirichlet => t.push((f.cells.0, i, -1.0)),
            InterfaceKind::Neumann => {}
        }
    }
    CsrMatrix::from_triplets(mesh.n_cells(), mesh.n_interfaces(), &t)
}

/// Right-hand sides `(g, f)`; `source` holds the cell-sampled volumetric source.
pub fn fine_rhs(mesh: &Mesh, source: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if source.len() != mesh.n_cells() {
        return Err(Error::Dimension(format!("{} source values for {} cells", source.len(), mesh.n_cells())));
    }
    let mut g = vec![0.0; mesh.n_interfaces()];
    let mut f: Vec<f64> = mesh.cells.iter().zip(source).map(|(c, s)| c.volume * s).collect();
    for (i, face) in mesh.interfaces.iter().enumerate() {
        match face.kind {
            InterfaceKind::Internal => {}
            InterfaceKind::Dirichlet => g[i] = face.bc_value,
            InterfaceKind::Neumann => {
                g[i] = face.measure * face.bc_value;
                f[face.cells.0] += face.measure * face.bc_value;
            }
        }
    }
    Ok((g, f))
}

/// Diagonal of `M(p)`.
pub fn fine_mass_diagonal(
    mesh: &Mesh,
    trans: &HalfTransmissibilities,
    kappa: &KappaField,
    p: &[f64],
) -> Result<Vec<f64>> {
    if p.len() != mesh.n_cells() {
        return Err(Error::Dimension(format!("{} pressures for {} cells", p.len(), mesh.n_cells())));
    }
    mesh.interfaces
        .iter()
        .zip(&trans.values)
        .map(|(f, t)| match f.kind {
            InterfaceKind::Neumann => Ok(1.0),
            InterfaceKind::Dirichlet => Ok(kappa.inv(f.cells.0, p[f.cells.0])? / t[0]),
            InterfaceKind::Internal => {
                let (k, l) = (f.cells.0, f.cells.1.unwrap());
                Ok(kappa.inv(k, p[k])? / t[0] + kappa.inv(l, p[l])? / t[1])
            }
        })
        .collect()
}

pub fn assemble_fine_system(
    mesh: &Mesh,
    perm: &PermField,
    kappa: &KappaField,
    p: &[f64],
    source: &[f64],
) -> Result<SaddleSystem> {
    let trans = HalfTransmissibilities::compute(mesh, perm)?;
    let m = CsrMatrix::from_diagonal(&fine_mass_diagonal(mesh, &trans, kappa, p)?);
    let d = fine_divergence(mesh);
    let e = d.transpose();
    let (g, f) = fine_rhs(mesh, source)?;
    Ok(SaddleSystem { m, d, e, g, f })
}

/// `(M(p)σ + Dᵀp + g, Dσ + f)` on the fine mesh.
pub fn residual(
    mesh: &Mesh,
    perm: &PermField,
    kappa: &KappaField,
    source: &[f64],
    state: &FineState,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if state.sigma.len() != mesh.n_interfaces() || state.p.len() != mesh.n_cells() {
        return Err(Error::Dimension("state does not match mesh".into()));
    }
    let sys = assemble_fine_system(mesh, perm, kappa, &state.p, source)?;
    let mut rs = sys.m.matvec(&state.sigma);
    sys.e.matvec_acc(1.0, &state.p, &mut rs);
    rs.iter_mut().zip(&sys.g).for_each(|(r, g)| *r += g);
    let mut rp = sys.d.matvec(&state.sigma);
    rp.iter_mut().zip(&sys.f).for_each(|(r, f)| *r += f);
    Ok((rs, rp))
}

/// Cell-centered reduction `(D M⁻¹ Dᵀ, f − D M⁻¹ g)` of a system with diagonal `M`.
pub fn reduced_system(sys: &SaddleSystem) -> Result<(CsrMatrix, Vec<f64>)> {
    let n = sys.m.nrows();
    for i in 0..n {
        for (j, v) in sys.m.row(i) {
            if j != i && v != 0.0 {
                return Err(Error::InvalidArgument("reduced system requires diagonal M".into()));
            }
        }
    }
    let diag = sys.m.diagonal();
    if let Some(i) = diag.iter().position(|&v| v == 0.0) {
        return Err(Error::Singular(format!("zero diagonal of M at {i}")));
    }
    let inv: Vec<f64> = diag.iter().map(|v| 1.0 / v).collect();
    let mut dm = sys.d.clone();
    dm.scale_cols(&inv);
    let a = dm.matmul(&sys.d.transpose());
    let dmg = dm.matvec(&sys.g);
    let rhs = sys.f.iter().zip(&dmg).map(|(f, v)| f - v).collect();
    Ok((a, rhs))
}
