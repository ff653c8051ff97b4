//! Small wrappers around nalgebra: rank-revealing least squares with
//! collinear-column dropping, PSD matrix square roots, and Cholesky
//! inversion.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};

/// Least-squares solution with collinear columns removed.
#[derive(Debug, Clone)]
pub struct PivotedLs {
    /// Coefficients for all columns; dropped columns get 0.
    pub coefs: DVector<f64>,
    /// Retained column indices, ascending.
    pub retained: Vec<usize>,
    /// Dropped column indices, ascending.
    pub dropped: Vec<usize>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
}

/// Solve min ||y - X b|| by column-pivoted QR. Columns whose pivot
/// magnitude falls below `rel_tol` times the largest pivot are dropped
/// and reported; the solve is then redone on the retained columns.
pub fn pivoted_least_squares(
    xmat: &DMatrix<f64>,
    y: &DVector<f64>,
    rel_tol: f64,
) -> Result<PivotedLs> {
    let (n, m) = xmat.shape();
    if m > n {
        return Err(Error::TooFewRowsForDesign { rows: n, cols: m });
    }
    let qr = xmat.clone().col_piv_qr();
    let r = qr.r();
    let k = n.min(m);
    let diag: Vec<f64> = (0..k).map(|i| r[(i, i)].abs()).collect();
    let max_piv = diag.iter().copied().fold(0.0f64, f64::max);

    // pivot order: original column index at each pivoted position
    let mut order = RowDVector::<f64>::from_iterator(m, (0..m).map(|i| i as f64));
    qr.p().permute_columns(&mut order);

    let mut retained: Vec<usize> = Vec::new();
    for i in 0..k {
        if max_piv > 0.0 && diag[i] > rel_tol * max_piv {
            retained.push(order[i] as usize);
        }
    }
    retained.sort_unstable();
    let dropped: Vec<usize> = (0..m).filter(|c| !retained.contains(c)).collect();

    let mut coefs = DVector::zeros(m);
    let fitted;
    if retained.is_empty() {
        fitted = DVector::zeros(n);
    } else {
        let xr = xmat.select_columns(retained.iter());
        let qr2 = xr.clone().qr();
        let mut qtb = y.clone();
        qr2.q_tr_mul(&mut qtb);
        let rhs = DVector::from_iterator(retained.len(), qtb.iter().take(retained.len()).copied());
        let beta_r = qr2
            .r()
            .solve_upper_triangular(&rhs)
            .ok_or(Error::SingularQ(retained[0]))?;
        for (slot, &col) in retained.iter().enumerate() {
            coefs[col] = beta_r[slot];
        }
        fitted = &xr * &beta_r;
    }
    let residuals = y - &fitted;
    Ok(PivotedLs {
        coefs,
        retained,
        dropped,
        fitted,
        residuals,
    })
}

/// Symmetric PSD square root via spectral decomposition; negative
/// eigenvalues are clamped at zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = 0.5 * (m + m.transpose());
    let eig = sym.symmetric_eigen();
    let mut scaled = eig.eigenvectors.clone();
    for (j, ev) in eig.eigenvalues.iter().enumerate() {
        let root = ev.max(0.0).sqrt();
        scaled.column_mut(j).scale_mut(root);
    }
    &scaled * eig.eigenvectors.transpose()
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn chol_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sym = 0.5 * (m + m.transpose());
    sym.cholesky().map(|c| c.inverse())
}
