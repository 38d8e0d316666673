//! Permeability fields, run configuration, solution export and CSV reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::tpfa::FineState;

/// Diagonal permeability tensor per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct PermField {
    pub kx: Vec<f64>,
    pub ky: Vec<f64>,
    pub kz: Vec<f64>,
}

impl PermField {
    pub fn uniform(n: usize, k: [f64; 3]) -> Self {
        Self { kx: vec![k[0]; n], ky: vec![k[1]; n], kz: vec![k[2]; n] }
    }

    pub fn from_components(kx: Vec<f64>, ky: Vec<f64>, kz: Vec<f64>) -> Result<Self> {
        if kx.len() != ky.len() || kx.len() != kz.len() {
            return Err(Error::Dimension("permeability components differ in length".into()));
        }
        if let Some(v) = kx.iter().chain(&ky).chain(&kz).find(|v| !(**v > 0.0)) {
            return Err(Error::InvalidArgument(format!("non-positive permeability {v}")));
        }
        Ok(Self { kx, ky, kz })
    }

    pub fn len(&self) -> usize {
        self.kx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kx.is_empty()
    }

    pub fn diag(&self, cell: usize) -> [f64; 3] {
        [self.kx[cell], self.ky[cell], self.kz[cell]]
    }

    /// Horizontal components scaled to max 1, vertical to max 1e−2.
    pub fn rescale(&mut self) {
        let hmax = self.kx.iter().chain(&self.ky).fold(0.0f64, |m, v| m.max(*v));
        let vmax = self.kz.iter().fold(0.0f64, |m, v| m.max(*v));
        self.kx.iter_mut().chain(self.ky.iter_mut()).for_each(|v| *v /= hmax);
        self.kz.iter_mut().for_each(|v| *v /= 100.0 * vmax);
    }

    pub fn scale(&mut self, c: f64) {
        self.kx.iter_mut().chain(self.ky.iter_mut()).chain(self.kz.iter_mut()).for_each(|v| *v *= c);
    }

    /// Keeps only the entries of active lattice cells, in cell order.
    pub fn restrict_to_active(&self, mask: &[bool]) -> Self {
        let pick = |v: &Vec<f64>| v.iter().zip(mask).filter(|(_, &m)| m).map(|(x, _)| *x).collect();
        Self { kx: pick(&self.kx), ky: pick(&self.ky), kz: pick(&self.kz) }
    }
}

/// Reads `3·nx·ny·nz` whitespace-separated values: kx block, ky block, kz block, x fastest.
pub fn load_perm_raster(path: &Path, nx: usize, ny: usize, nz: usize, rescale: bool) -> Result<PermField> {
    let text = fs::read_to_string(path)?;
    let n = nx * ny * nz;
    let vals = text
        .split_whitespace()
        .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}"))))
        .collect::<Result<Vec<f64>>>()?;
    if vals.len() != 3 * n {
        return Err(Error::Parse(format!("raster has {} values, expected {}", vals.len(), 3 * n)));
    }
    let mut field = PermField::from_components(vals[..n].to_vec(), vals[n..2 * n].to_vec(), vals[2 * n..].to_vec())?;
    if rescale {
        field.rescale();
    }
    Ok(field)
}

/// Writes a raster readable by [`load_perm_raster`] with 17 significant digits.
pub fn write_perm_raster(field: &PermField, path: &Path) -> Result<()> {
    let mut s = String::new();
    for block in [&field.kx, &field.ky, &field.kz] {
        for v in block.iter() {
            writeln!(s, "{v:.16e}").unwrap();
        }
    }
    fs::write(path, s)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FieldStyle {
    LogNormal { sigma: f64 },
    Layered,
    Channel,
}

/// Deterministic heterogeneous field on an `nx × ny × nz` lattice (x fastest).
pub fn generate_synthetic_field(nx: usize, ny: usize, nz: usize, style: FieldStyle, seed: u64) -> Result<PermField> {
    let n = nx * ny * nz;
    if n == 0 {
        return Err(Error::InvalidArgument("empty lattice".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k: Vec<f64> = match style {
        FieldStyle::LogNormal { sigma } => {
            if sigma < 0.0 {
                return Err(Error::InvalidArgument(format!("negative sigma {sigma}")));
            }
            if sigma == 0.0 {
                vec![1.0; n]
            } else {
                let g = smoothed_noise(nx, ny, nz, &mut rng);
                g.iter().map(|v| (sigma * v).exp()).collect()
            }
        }
        FieldStyle::Layered => {
            let layer: Vec<f64> = (0..ny * nz)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z.exp()
                })
                .collect();
            (0..n).map(|idx| layer[idx / nx]).collect()
        }
        FieldStyle::Channel => {
            use rand::Rng;
            let bands = 3usize;
            let phases: Vec<f64> = (0..bands).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
            (0..n)
                .map(|idx| {
                    let u = ((idx % nx) as f64 + 0.5) / nx as f64;
                    let v = (((idx / nx) % ny) as f64 + 0.5) / ny as f64;
                    let inside = (0..bands).any(|m| {
                        let c = (m as f64 + 0.5) / bands as f64 + 0.08 * (std::f64::consts::TAU * u + phases[m]).sin();
                        (v - c).abs() < 0.06
                    });
                    if inside { 100.0 } else { 1.0 }
                })
                .collect()
        }
    };
    Ok(PermField { kx: k.clone(), ky: k.clone(), kz: k })
}

fn smoothed_noise(nx: usize, ny: usize, nz: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = nx * ny * nz;
    let mut g: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let dims = [nx, ny, nz];
    for _ in 0..2 {
        let src = g.clone();
        for idx in 0..n {
            let ijk = [idx % nx, (idx / nx) % ny, idx / (nx * ny)];
            let mut sum = 0.0;
            let mut cnt = 0.0;
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let q = [ijk[0] as i64 + dx, ijk[1] as i64 + dy, ijk[2] as i64 + dz];
                        if (0..3).all(|a| q[a] >= 0 && (q[a] as usize) < dims[a]) {
                            sum += src[q[0] as usize + nx * (q[1] as usize + ny * q[2] as usize)];
                            cnt += 1.0;
                        }
                    }
                }
            }
            g[idx] = sum / cnt;
        }
    }
    let mean = g.iter().sum::<f64>() / n as f64;
    let var = g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    g.iter().map(|v| (v - mean) / sd).collect()
}

/// Parsed INI run configuration: `[mesh]`, `[kappa]`, `[solver]`, `[output]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub problem: Option<String>,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub nz: Option<usize>,
    pub hx: Option<f64>,
    pub hy: Option<f64>,
    pub hz: Option<f64>,
    pub perm_file: Option<String>,
    pub perm_rescale: bool,
    pub field_sigma: Option<f64>,
    pub law: String,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub k0: Option<f64>,
    pub methods: Vec<String>,
    pub levels: Option<usize>,
    pub factors: Vec<f64>,
    pub m_a: Option<usize>,
    pub m_f: Option<usize>,
    pub tol_rel: Option<f64>,
    pub tol_abs: Option<f64>,
    pub seed: Option<u64>,
    pub max_iters: Option<usize>,
    pub n_max: Option<usize>,
    pub theta: Option<f64>,
    pub report: Option<String>,
    pub export: Option<String>,
    pub history: Option<String>,
    /// Keys that were present but not recognized, as `section.key`.
    pub unknown_keys: Vec<String>,
}

fn parse_num<T: std::str::FromStr>(section: &str, key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.trim()
        .parse::<T>()
        .map_err(|e| Error::Config(format!("[{section}] {key} = {v:?}: {e}")))
}

fn split_list(v: &str) -> Vec<String> {
    v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let ini = ini::Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for (name, props) in ini.iter() {
        let Some(name) = name else {
            if props.iter().next().is_some() {
                return Err(Error::Config("key outside of any section".into()));
            }
            continue;
        };
        let entry = sections.entry(name.to_ascii_lowercase()).or_default();
        for (k, v) in props.iter() {
            entry.insert(k.to_ascii_lowercase(), v.to_string());
        }
    }
    let mut cfg = RunConfig::default();
    for (section, props) in &sections {
        for (key, v) in props {
            let s = section.as_str();
            let k = key.as_str();
            match (s, k) {
                ("mesh", "problem") => cfg.problem = Some(v.trim().to_string()),
                ("mesh", "nx") => cfg.nx = Some(parse_num(s, k, v)?),
                ("mesh", "ny") => cfg.ny = Some(parse_num(s, k, v)?),
                ("mesh", "nz") => cfg.nz = Some(parse_num(s, k, v)?),
                ("mesh", "hx") => cfg.hx = Some(parse_num(s, k, v)?),
                ("mesh", "hy") => cfg.hy = Some(parse_num(s, k, v)?),
                ("mesh", "hz") => cfg.hz = Some(parse_num(s, k, v)?),
                ("mesh", "perm_file") => cfg.perm_file = Some(v.trim().to_string()),
                ("mesh", "perm_rescale") => cfg.perm_rescale = parse_num(s, k, v)?,
                ("mesh", "field_sigma") => cfg.field_sigma = Some(parse_num(s, k, v)?),
                ("kappa", "law") => cfg.law = v.trim().to_ascii_lowercase(),
                ("kappa", "alpha") => cfg.alpha = Some(parse_num(s, k, v)?),
                ("kappa", "beta") => cfg.beta = Some(parse_num(s, k, v)?),
                ("kappa", "k0") => cfg.k0 = Some(parse_num(s, k, v)?),
                ("solver", "method") => cfg.methods = split_list(v),
                ("solver", "levels") => cfg.levels = Some(parse_num(s, k, v)?),
                ("solver", "factor") => {
                    cfg.factors = split_list(v).iter().map(|x| parse_num(s, k, x)).collect::<Result<_>>()?
                }
                ("solver", "ma") => cfg.m_a = Some(parse_num(s, k, v)?),
                ("solver", "mf") => cfg.m_f = Some(parse_num(s, k, v)?),
                ("solver", "tol_rel") => cfg.tol_rel = Some(parse_num(s, k, v)?),
                ("solver", "tol_abs") => cfg.tol_abs = Some(parse_num(s, k, v)?),
                ("solver", "seed") => cfg.seed = Some(parse_num(s, k, v)?),
                ("solver", "max_iters") => cfg.max_iters = Some(parse_num(s, k, v)?),
                ("solver", "n_max") => cfg.n_max = Some(parse_num(s, k, v)?),
                ("solver", "theta") => cfg.theta = Some(parse_num(s, k, v)?),
                ("output", "report") => cfg.report = Some(v.trim().to_string()),
                ("output", "export") => cfg.export = Some(v.trim().to_string()),
                ("output", "history") => cfg.history = Some(v.trim().to_string()),
                _ => {
                    log::warn!("ignoring unknown config key [{s}] {k}");
                    cfg.unknown_keys.push(format!("{s}.{k}"));
                }
            }
        }
    }
    if cfg.law.is_empty() {
        return Err(Error::Config("missing required key [kappa] law".into()));
    }
    if cfg.methods.is_empty() {
        return Err(Error::Config("missing required key [solver] method".into()));
    }
    match cfg.law.as_str() {
        "constant" => {}
        "exponential" => {
            if cfg.alpha.is_none() {
                return Err(Error::Config("exponential law requires [kappa] alpha".into()));
            }
        }
        "richards" => {
            if cfg.alpha.is_none() || cfg.beta.is_none() || cfg.k0.is_none() {
                return Err(Error::Config("richards law requires alpha, beta and k0".into()));
            }
        }
        other => return Err(Error::Config(format!("unknown kappa law {other:?}"))),
    }
    if let Some(f) = &cfg.perm_file {
        if !Path::new(f).exists() {
            return Err(Error::Config(format!("permeability file {f} does not exist")));
        }
    }
    Ok(cfg)
}

/// Legacy VTK ASCII export: cell scalars `pressure`, interface scalars `flux` as field data.
pub fn export_solution(mesh: &Mesh, state: &FineState, path: &Path) -> Result<()> {
    if state.p.len() != mesh.n_cells() || state.sigma.len() != mesh.n_interfaces() {
        return Err(Error::Dimension("state does not match mesh".into()));
    }
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\nnonlinear FAS solution\nASCII\n");
    let flux_block = |s: &mut String| {
        writeln!(s, "FIELD FieldData 1").unwrap();
        writeln!(s, "flux 1 {} double", state.sigma.len()).unwrap();
        for v in &state.sigma {
            writeln!(s, "{v:.16e}").unwrap();
        }
    };
    match &mesh.lattice {
        Some(lat) => {
            let n = lat.n;
            let dims3 = if mesh.dim == 2 { [n[0], n[1], 0] } else { n };
            writeln!(s, "DATASET STRUCTURED_POINTS").unwrap();
            flux_block(&mut s);
            writeln!(s, "DIMENSIONS {} {} {}", dims3[0] + 1, dims3[1] + 1, dims3[2] + 1).unwrap();
            writeln!(s, "ORIGIN 0 0 0").unwrap();
            writeln!(s, "SPACING {} {} {}", lat.h[0], lat.h[1], lat.h[2]).unwrap();
            writeln!(s, "CELL_DATA {}", lat.cell_of.len()).unwrap();
            writeln!(s, "SCALARS pressure double 1\nLOOKUP_TABLE default").unwrap();
            for c in &lat.cell_of {
                match c {
                    Some(k) => writeln!(s, "{:.16e}", state.p[*k]).unwrap(),
                    None => writeln!(s, "nan").unwrap(),
                }
            }
        }
        None => {
            writeln!(s, "DATASET UNSTRUCTURED_GRID").unwrap();
            flux_block(&mut s);
            writeln!(s, "POINTS {} double", mesh.n_cells()).unwrap();
            for c in &mesh.cells {
                writeln!(s, "{} {} {}", c.barycenter[0], c.barycenter[1], c.barycenter[2]).unwrap();
            }
            writeln!(s, "CELLS {} {}", mesh.n_cells(), 2 * mesh.n_cells()).unwrap();
            for k in 0..mesh.n_cells() {
                writeln!(s, "1 {k}").unwrap();
            }
            writeln!(s, "CELL_TYPES {}", mesh.n_cells()).unwrap();
            for _ in 0..mesh.n_cells() {
                writeln!(s, "1").unwrap();
            }
            writeln!(s, "CELL_DATA {}", mesh.n_cells()).unwrap();
            writeln!(s, "SCALARS pressure double 1\nLOOKUP_TABLE default").unwrap();
            for v in &state.p {
                writeln!(s, "{v:.16e}").unwrap();
            }
        }
    }
    fs::write(path, s)?;
    Ok(())
}

/// One line of the benchmark report.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub solver: String,
    pub alpha: f64,
    pub cells: usize,
    pub levels: usize,
    pub m_a: usize,
    pub m_f: usize,
    pub nonlinear_iters: usize,
    pub time_s: f64,
    pub converged: bool,
    pub early_presmooth: bool,
}

pub const REPORT_HEADER: [&str; 10] = [
    "solver",
    "alpha",
    "cells",
    "levels",
    "mA",
    "mf",
    "nonlinear_iters",
    "time_s",
    "converged",
    "early_presmooth",
];

pub fn write_report(rows: &[ReportRow], path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    write_report_to(rows, file)
}

pub fn write_report_to<W: std::io::Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(REPORT_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.solver.clone(),
            r.alpha.to_string(),
            r.cells.to_string(),
            r.levels.to_string(),
            r.m_a.to_string(),
            r.m_f.to_string(),
            r.nonlinear_iters.to_string(),
            format!("{:.6}", r.time_s),
            r.converged.to_string(),
            r.early_presmooth.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `vertex_id aggregate_id` lines.
pub fn write_aggregation(vertex_to_aggregate: &[usize], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for (v, a) in vertex_to_aggregate.iter().enumerate() {
        writeln!(f, "{v} {a}")?;
    }
    f.flush()?;
    Ok(())
}
