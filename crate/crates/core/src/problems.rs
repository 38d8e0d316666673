//! Catalog of benchmark problems: mesh, permeability, κ law, boundary data and source.

use std::path::Path;

use crate::error::{Error, Result};
use crate::field_io::{generate_synthetic_field, load_perm_raster, FieldStyle, PermField, RunConfig};
use crate::level::LevelState;
use crate::mesh::{
    build_cartesian_mesh, build_cartesian_mesh_2d, classify_boundary, BoundarySpec, BoundaryValue, Mesh, Region,
};
use crate::tpfa::{fine_rhs, FineState, KappaField, KappaLaw};

/// A fully specified nonlinear problem on the fine mesh.
#[derive(Clone, Debug)]
pub struct Problem {
    pub name: String,
    pub mesh: Mesh,
    pub perm: PermField,
    pub kappa: KappaField,
    /// Cell-sampled volumetric source.
    pub source: Vec<f64>,
    /// Fine initial pressure.
    pub initial_p: Vec<f64>,
    /// Largest pressure change allowed per smoothing step.
    pub pressure_cap: Option<f64>,
    /// Maximum backtracking halvings.
    pub n_max: usize,
}

impl Problem {
    /// Level-0 right-hand side `b = −(g, f)` over the flux dofs `flux_ids`.
    pub fn fine_rhs(&self, flux_ids: &[usize]) -> Result<LevelState> {
        let (g, f) = fine_rhs(&self.mesh, &self.source)?;
        Ok(LevelState { sigma: flux_ids.iter().map(|&i| -g[i]).collect(), p: f.iter().map(|v| -v).collect() })
    }

    /// Expands a level-0 state to all mesh interfaces; Neumann fluxes take their prescribed values.
    pub fn expand_state(&self, flux_ids: &[usize], x: &LevelState) -> FineState {
        let mut sigma: Vec<f64> = self
            .mesh
            .interfaces
            .iter()
            .map(|f| if f.is_boundary() { -f.measure * f.bc_value } else { 0.0 })
            .collect();
        for (k, &i) in flux_ids.iter().enumerate() {
            sigma[i] = x.sigma[k];
        }
        FineState { sigma, p: x.p.clone() }
    }

    pub fn n_cells(&self) -> usize {
        self.mesh.n_cells()
    }
}

/// Two unit cells in a row, `p = 1` on the left, `p = 0` on the right, κ ≡ 1.
pub fn two_cell() -> Result<Problem> {
    let mesh = build_cartesian_mesh_2d(2, 1, 1.0, 1.0, None)?;
    let spec = BoundarySpec::new()
        .dirichlet(Region::Plane { axis: 0, value: 0.0 }, BoundaryValue::Constant(1.0))
        .dirichlet(Region::Plane { axis: 0, value: 2.0 }, BoundaryValue::Constant(0.0));
    let mesh = classify_boundary(&mesh, &spec)?;
    Ok(Problem {
        name: "two_cell".into(),
        perm: PermField::uniform(2, [1.0; 3]),
        kappa: KappaField::uniform(KappaLaw::Constant),
        source: vec![0.0; 2],
        initial_p: vec![0.0; 2],
        pressure_cap: None,
        n_max: 4,
        mesh,
    })
}

/// Settings of the synthetic exponential-permeability problems.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticParams {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub h: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub seed: u64,
    /// Source amplitude; the source grows exponentially in the top tenth of the domain.
    pub f0: f64,
    /// Pressure cap as `ln(cap_ratio) / α`.
    pub cap_ratio: Option<f64>,
    pub n_max: usize,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            nx: 64,
            ny: 64,
            nz: 1,
            h: 1.0,
            alpha: 0.8,
            sigma: 1.0,
            seed: 1,
            f0: 2e-4,
            cap_ratio: Some(1.5),
            n_max: 4,
        }
    }
}

/// `f(y) = f0·max(e^{(y − 0.9H)/H}, 1)` with `H` the extent along `axis`.
fn graded_source(mesh: &Mesh, axis: usize, extent: f64, f0: f64) -> Vec<f64> {
    mesh.barycenter_coordinate(axis)
        .iter()
        .map(|&y| f0 * ((y - 0.9 * extent) / extent).exp().max(1.0))
        .collect()
}

/// Lognormal field, exponential κ, `p = 0` on the bottom, no flow elsewhere.
pub fn synthetic(params: &SyntheticParams) -> Result<Problem> {
    let SyntheticParams { nx, ny, nz, h, alpha, sigma, seed, f0, cap_ratio, n_max } = params.clone();
    let three_d = nz > 1;
    let mesh = if three_d {
        build_cartesian_mesh(nx, ny, nz, h, h, h, None)?
    } else {
        build_cartesian_mesh_2d(nx, ny, h, h, None)?
    };
    // The vertical axis is y in 2D and z in 3D.
    let up = if three_d { 2 } else { 1 };
    let height = h * if three_d { nz } else { ny } as f64;
    let spec = BoundarySpec::new().dirichlet(Region::Plane { axis: up, value: 0.0 }, BoundaryValue::Constant(0.0));
    let mesh = classify_boundary(&mesh, &spec)?;
    let perm = generate_synthetic_field(nx, ny, nz, FieldStyle::LogNormal { sigma }, seed)?;
    let source = graded_source(&mesh, up, height, f0);
    let n = mesh.n_cells();
    Ok(Problem {
        name: if three_d { "synthetic3d" } else { "synthetic2d" }.into(),
        kappa: KappaField::uniform(KappaLaw::Exponential { alpha }),
        initial_p: vec![0.0; n],
        pressure_cap: cap_ratio.map(|r| r.ln() / alpha),
        n_max,
        perm,
        source,
        mesh,
    })
}

/// Soil parameters of the Richards benchmark.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Medium {
    Loam,
    Sand,
}

impl Medium {
    pub fn law(self) -> KappaLaw {
        match self {
            Medium::Loam => KappaLaw::Richards { alpha: 1.246e2, beta: 1.77, k0: 1.067 },
            Medium::Sand => KappaLaw::Richards { alpha: 1.175e6, beta: 4.74, k0: 8.160e2 },
        }
    }

    pub fn n_max(self) -> usize {
        match self {
            Medium::Loam => 4,
            Medium::Sand => 10,
        }
    }
}

pub const RICHARDS_WIDTH: f64 = 4000.0;
pub const RICHARDS_HEIGHT: f64 = 1000.0;
/// Horizontal extent of the ponded strip on the top boundary.
pub const RICHARDS_POND: (f64, f64) = (1500.0, 2500.0);

/// Static Richards problem in `p = ψ + z`: water table at the bottom, ponded strip on top.
pub fn richards(medium: Medium, nx: usize, ny: usize) -> Result<Problem> {
    let law = medium.law();
    let KappaLaw::Richards { k0, .. } = law else { unreachable!() };
    let mesh = build_cartesian_mesh_2d(nx, ny, RICHARDS_WIDTH / nx as f64, RICHARDS_HEIGHT / ny as f64, None)?;
    let spec = BoundarySpec::new()
        .dirichlet(Region::Plane { axis: 1, value: 0.0 }, BoundaryValue::Constant(0.0))
        .dirichlet(
            Region::PlanePatch {
                axis: 1,
                value: RICHARDS_HEIGHT,
                min: [RICHARDS_POND.0, RICHARDS_HEIGHT, 0.0],
                max: [RICHARDS_POND.1, RICHARDS_HEIGHT, 0.0],
            },
            BoundaryValue::Constant(RICHARDS_HEIGHT),
        );
    let mesh = classify_boundary(&mesh, &spec)?;
    let z = mesh.barycenter_coordinate(1);
    let n = mesh.n_cells();
    Ok(Problem {
        name: match medium {
            Medium::Loam => "richards_loam",
            Medium::Sand => "richards_sand",
        }
        .into(),
        perm: PermField::uniform(n, [k0; 3]),
        kappa: KappaField::shifted(law, z.clone()),
        source: vec![0.0; n],
        initial_p: z,
        pressure_cap: None,
        n_max: medium.n_max(),
        mesh,
    })
}

/// Names accepted by [`from_name`].
pub const CATALOG: [&str; 6] = ["two_cell", "synthetic2d", "synthetic3d", "richards_loam", "richards_sand", "raster"];

/// Size and parameter overrides shared by the catalog entries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub nz: Option<usize>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub n_max: Option<usize>,
}

impl Overrides {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self { nx: cfg.nx, ny: cfg.ny, nz: cfg.nz, alpha: cfg.alpha, seed: cfg.seed, n_max: cfg.n_max }
    }
}

/// Builds a catalog problem; `raster` needs a config with a permeability file.
pub fn from_name(name: &str, ov: &Overrides, cfg: Option<&RunConfig>) -> Result<Problem> {
    let mut p = match name {
        "two_cell" => two_cell()?,
        "synthetic2d" | "synthetic3d" => {
            let mut sp = SyntheticParams::default();
            if name == "synthetic3d" {
                sp.nx = 16;
                sp.ny = 16;
                sp.nz = 16;
                sp.f0 = 0.04;
            }
            sp.nx = ov.nx.unwrap_or(sp.nx);
            sp.ny = ov.ny.unwrap_or(sp.ny);
            sp.nz = ov.nz.unwrap_or(sp.nz);
            sp.alpha = ov.alpha.unwrap_or(sp.alpha);
            sp.seed = ov.seed.unwrap_or(sp.seed);
            if let Some(c) = cfg {
                sp.sigma = c.field_sigma.unwrap_or(sp.sigma);
                sp.h = c.hx.unwrap_or(sp.h);
            }
            synthetic(&sp)?
        }
        "richards_loam" | "richards_sand" => {
            let medium = if name == "richards_loam" { Medium::Loam } else { Medium::Sand };
            richards(medium, ov.nx.unwrap_or(160), ov.ny.unwrap_or(40))?
        }
        "raster" => {
            let cfg = cfg.ok_or_else(|| Error::Config("raster problem needs a config file".into()))?;
            raster(cfg, ov)?
        }
        other => return Err(Error::InvalidArgument(format!("unknown problem {other:?}; known: {}", CATALOG.join(", ")))),
    };
    if let Some(n) = ov.n_max {
        p.n_max = n;
    }
    if let Some(c) = cfg {
        apply_law(&mut p, c)?;
    }
    Ok(p)
}

/// Replaces the κ law by the one in the config (the Richards shift is kept).
fn apply_law(p: &mut Problem, cfg: &RunConfig) -> Result<()> {
    let law = match cfg.law.as_str() {
        "constant" => KappaLaw::Constant,
        "exponential" => KappaLaw::Exponential { alpha: cfg.alpha.unwrap_or(1.0) },
        "richards" => KappaLaw::Richards {
            alpha: cfg.alpha.unwrap_or(1.0),
            beta: cfg.beta.unwrap_or(1.0),
            k0: cfg.k0.unwrap_or(1.0),
        },
        "" => return Ok(()),
        other => return Err(Error::Config(format!("unknown kappa law {other:?}"))),
    };
    if let (KappaLaw::Richards { k0: new, .. }, KappaLaw::Richards { k0: old, .. }) = (law, p.kappa.law) {
        p.perm.scale(new / old);
    }
    if let KappaLaw::Exponential { alpha } = law {
        if let Some(cap) = p.pressure_cap.as_mut() {
            if let KappaLaw::Exponential { alpha: old } = p.kappa.law {
                *cap *= old / alpha;
            }
        }
    }
    p.kappa.law = law;
    Ok(())
}

/// Example-2 style problem on a user raster: bottom `p = 0`, no flow elsewhere, graded source.
pub fn raster(cfg: &RunConfig, ov: &Overrides) -> Result<Problem> {
    let path = cfg.perm_file.as_deref().ok_or_else(|| Error::Config("[mesh] perm_file is required".into()))?;
    let nx = ov.nx.or(cfg.nx).ok_or_else(|| Error::Config("[mesh] nx is required".into()))?;
    let ny = ov.ny.or(cfg.ny).ok_or_else(|| Error::Config("[mesh] ny is required".into()))?;
    let nz = ov.nz.or(cfg.nz).unwrap_or(1);
    let (hx, hy, hz) = (cfg.hx.unwrap_or(1.0), cfg.hy.unwrap_or(1.0), cfg.hz.unwrap_or(1.0));
    let perm = load_perm_raster(Path::new(path), nx, ny, nz, cfg.perm_rescale)?;
    let mesh = if nz > 1 {
        build_cartesian_mesh(nx, ny, nz, hx, hy, hz, None)?
    } else {
        build_cartesian_mesh_2d(nx, ny, hx, hy, None)?
    };
    let spec = BoundarySpec::new().dirichlet(Region::Plane { axis: 1, value: 0.0 }, BoundaryValue::Constant(0.0));
    let mesh = classify_boundary(&mesh, &spec)?;
    let alpha = ov.alpha.or(cfg.alpha).unwrap_or(1.0);
    let source = graded_source(&mesh, 1, hy * ny as f64, 2.5e-5);
    let n = mesh.n_cells();
    Ok(Problem {
        name: "raster".into(),
        kappa: KappaField::uniform(KappaLaw::Exponential { alpha }),
        initial_p: vec![0.0; n],
        pressure_cap: Some(5f64.ln() / alpha),
        n_max: 4,
        perm,
        source,
        mesh,
    })
}
