//! Small dense linear algebra helpers on top of faer.

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::{Mat, Side};

use crate::error::{Error, Result};

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
pub fn sym_eigen(a: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = a.nrows();
    if n == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    let sym = Mat::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let evd = sym
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Singular(format!("symmetric eigensolve: {e:?}")))?;
    let s = evd.S();
    let u = evd.U();
    let mut order: Vec<usize> = (0..n).collect();
    let vals: Vec<f64> = (0..n).map(|i| s[i]).collect();
    order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
    let sorted_vals = order.iter().map(|&i| vals[i]).collect();
    let vecs = Mat::from_fn(n, n, |r, c| u[(r, order[c])]);
    Ok((sorted_vals, vecs))
}

/// Thin SVD `A = U diag(s) Vᵀ`, singular values descending.
pub fn thin_svd(a: &Mat<f64>) -> Result<(Mat<f64>, Vec<f64>, Mat<f64>)> {
    let k = a.nrows().min(a.ncols());
    if k == 0 {
        return Ok((Mat::zeros(a.nrows(), 0), Vec::new(), Mat::zeros(a.ncols(), 0)));
    }
    let svd = a
        .thin_svd()
        .map_err(|e| Error::Singular(format!("svd: {e:?}")))?;
    let s = (0..k).map(|i| svd.S()[i]).collect();
    Ok((svd.U().to_owned(), s, svd.V().to_owned()))
}

/// Dense LU with partial pivoting.
pub struct DenseLu {
    n: usize,
    lu: Option<PartialPivLu<f64>>,
}

impl DenseLu {
    pub fn new(a: &Mat<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Dimension(format!("LU of {}x{}", a.nrows(), a.ncols())));
        }
        let n = a.nrows();
        if n == 0 {
            return Ok(Self { n, lu: None });
        }
        let lu = a.partial_piv_lu();
        // Pivot check: reject numerically singular matrices.
        let scale = a.norm_max().max(f64::MIN_POSITIVE);
        let u = lu.U();
        let min_piv = (0..n).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
        if !(min_piv > 1e-14 * scale) {
            return Err(Error::Singular(format!(
                "dense LU pivot {min_piv:e} relative to {scale:e}"
            )));
        }
        Ok(Self { n, lu: Some(lu) })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        match &self.lu {
            None => Vec::new(),
            Some(lu) => {
                let x = lu.solve(Mat::from_fn(self.n, 1, |i, _| b[i]));
                (0..self.n).map(|i| x[(i, 0)]).collect()
            }
        }
    }

    pub fn solve_mat(&self, b: &Mat<f64>) -> Mat<f64> {
        assert_eq!(b.nrows(), self.n);
        match &self.lu {
            None => Mat::zeros(0, b.ncols()),
            Some(lu) => lu.solve(b),
        }
    }
}

pub fn col(a: &Mat<f64>, j: usize) -> Vec<f64> {
    (0..a.nrows()).map(|i| a[(i, j)]).collect()
}

pub fn from_cols(nrows: usize, cols: &[Vec<f64>]) -> Mat<f64> {
    Mat::from_fn(nrows, cols.len(), |i, j| cols[j][i])
}

pub fn matvec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.ncols(), x.len());
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)] * x[j]).sum())
        .collect()
}

pub fn tmatvec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.nrows(), x.len());
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[(i, j)] * x[i]).sum())
        .collect()
}
