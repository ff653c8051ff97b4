//! Semi-linear least-squares fit of the binned basis plus covariates,
//! with heteroskedasticity- or cluster-robust sandwich variance.
//!
//! The design is [B | W] where B holds the constrained basis evaluated
//! at each x_i and W the covariates. Q = (1/n) sum b b' and
//! Sigma = (1/n) sum b b' e^2 (or its clustered version) are built on the
//! retained basis columns only, using the joint-fit residuals. Point
//! evaluation uses w = 0, so fitted curves are the basis part alone.

use nalgebra::{DMatrix, DVector};

use crate::basis::ConstrainedBasis;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{chol_inverse, pivoted_least_squares};

/// Relative pivot tolerance for dropping collinear design columns.
const COLLINEARITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vce {
    Robust,
    Cluster,
}

impl std::fmt::Display for Vce {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Vce::Robust => f.write_str("robust"),
            Vce::Cluster => f.write_str("cluster"),
        }
    }
}

/// Fitted binned regression.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Basis coefficients, length K; dropped columns hold 0.
    pub beta: Vec<f64>,
    /// Covariate coefficients, length d; dropped columns hold 0.
    pub gamma: Vec<f64>,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    /// Indices into the combined design [B | W] that were dropped as
    /// collinear (basis columns are 0..K, covariates K..K+d).
    pub dropped_columns: Vec<usize>,
    pub n: usize,
    pub vce: Vce,
    retained_basis: Vec<usize>,
    qhat: DMatrix<f64>,
    sigmahat: DMatrix<f64>,
    qinv: DMatrix<f64>,
    sandwich_mid: DMatrix<f64>,
}

impl FitResult {
    pub fn retained_basis(&self) -> &[usize] {
        &self.retained_basis
    }

    pub fn qhat(&self) -> &DMatrix<f64> {
        &self.qhat
    }

    pub fn sigmahat(&self) -> &DMatrix<f64> {
        &self.sigmahat
    }

    pub fn qinv(&self) -> &DMatrix<f64> {
        &self.qinv
    }

    pub fn sandwich_mid(&self) -> &DMatrix<f64> {
        &self.sandwich_mid
    }

    /// Basis vector at x0 (v-th derivative) restricted to the retained
    /// columns.
    pub fn restricted_basis(
        &self,
        basis: &ConstrainedBasis,
        x0: f64,
        v: usize,
    ) -> Result<DVector<f64>> {
        let dense = basis.eval(x0, v)?;
        Ok(DVector::from_iterator(
            self.retained_basis.len(),
            self.retained_basis.iter().map(|&k| dense[k]),
        ))
    }
}

/// Least-squares fit of y on [B | W].
pub fn fit(ds: &Dataset, basis: &ConstrainedBasis, vce: Vce) -> Result<FitResult> {
    let n = ds.len();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    if vce == Vce::Cluster && ds.cluster.is_none() {
        return Err(Error::MissingClusterColumn);
    }
    let part = basis.partition();
    let counts = part.bin_counts(&ds.x)?;
    if basis.smoothness() == 0 {
        if let Some(j) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyBin(j + 1));
        }
    }

    let k = basis.dim();
    let d = ds.w.len();
    let mut design = DMatrix::zeros(n, k + d);
    for i in 0..n {
        let (offset, vals) = basis.eval_local(ds.x[i], 0, crate::basis::Side::Right)?;
        for (t, &v) in vals.iter().enumerate() {
            design[(i, offset + t)] = v;
        }
        for c in 0..d {
            design[(i, k + c)] = ds.w[c][i];
        }
    }
    let y = DVector::from_column_slice(&ds.y);
    let ls = pivoted_least_squares(&design, &y, COLLINEARITY_TOL)?;

    let beta: Vec<f64> = (0..k).map(|j| ls.coefs[j]).collect();
    let gamma: Vec<f64> = (0..d).map(|j| ls.coefs[k + j]).collect();
    let retained_basis: Vec<usize> = ls.retained.iter().copied().filter(|&c| c < k).collect();
    let r = retained_basis.len();

    // Gram and score accumulation over the retained basis block.
    let nf = n as f64;
    let mut qhat = DMatrix::zeros(r, r);
    let mut scores = DMatrix::zeros(n, r);
    for i in 0..n {
        for (a, &ca) in retained_basis.iter().enumerate() {
            let ba = design[(i, ca)];
            scores[(i, a)] = ba * ls.residuals[i];
            for (b, &cb) in retained_basis.iter().enumerate().skip(a) {
                qhat[(a, b)] += ba * design[(i, cb)];
                let _ = b;
            }
        }
    }
    for a in 0..r {
        for b in a..r {
            qhat[(a, b)] /= nf;
            qhat[(b, a)] = qhat[(a, b)];
        }
    }

    let mut sigmahat = DMatrix::zeros(r, r);
    match vce {
        Vce::Robust => {
            for i in 0..n {
                accumulate_outer(&mut sigmahat, &scores, &[i]);
            }
        }
        Vce::Cluster => {
            let labels = ds.cluster.as_ref().unwrap();
            // groups in first-occurrence order: singleton clusters then
            // reproduce the robust accumulation term by term
            let mut order: Vec<(&str, Vec<usize>)> = Vec::new();
            let mut pos: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
            for (i, l) in labels.iter().enumerate() {
                match pos.get(l.as_str()) {
                    Some(&p) => order[p].1.push(i),
                    None => {
                        pos.insert(l.as_str(), order.len());
                        order.push((l.as_str(), vec![i]));
                    }
                }
            }
            for (_, rows) in &order {
                accumulate_outer(&mut sigmahat, &scores, rows);
            }
        }
    }
    sigmahat /= nf;

    let qinv = chol_inverse(&qhat).ok_or_else(|| {
        let worst = (0..r)
            .min_by(|&a, &b| qhat[(a, a)].total_cmp(&qhat[(b, b)]))
            .unwrap_or(0);
        Error::SingularQ(retained_basis.get(worst).copied().unwrap_or(0) + 1)
    })?;
    let mid = &qinv * &sigmahat * &qinv;
    let sandwich_mid = 0.5 * (&mid + mid.transpose());

    Ok(FitResult {
        beta,
        gamma,
        residuals: ls.residuals.iter().copied().collect(),
        fitted: ls.fitted.iter().copied().collect(),
        dropped_columns: ls.dropped,
        n,
        vce,
        retained_basis,
        qhat,
        sigmahat,
        qinv,
        sandwich_mid,
    })
}

fn accumulate_outer(sigma: &mut DMatrix<f64>, scores: &DMatrix<f64>, rows: &[usize]) {
    let r = sigma.nrows();
    let mut g = vec![0.0; r];
    for &i in rows {
        for a in 0..r {
            g[a] += scores[(i, a)];
        }
    }
    for a in 0..r {
        for b in 0..r {
            sigma[(a, b)] += g[a] * g[b];
        }
    }
}

/// Point estimate of the v-th derivative of the fitted function at x0,
/// with covariates held at zero.
pub fn mu_hat(fit: &FitResult, basis: &ConstrainedBasis, x0: f64, v: usize) -> Result<f64> {
    basis.eval_dot(x0, v, &fit.beta)
}

/// Sandwich variance Omega(x0) = b' Qinv Sigma Qinv b at x0 for the v-th
/// derivative. The standard error of the point estimate is
/// sqrt(Omega(x0) / n).
pub fn omega_hat(fit: &FitResult, basis: &ConstrainedBasis, x0: f64, v: usize) -> Result<f64> {
    let b = fit.restricted_basis(basis, x0, v)?;
    Ok((fit.sandwich_mid() * &b).dot(&b))
}

/// sqrt(Omega(x0)/n).
pub fn std_err(fit: &FitResult, basis: &ConstrainedBasis, x0: f64, v: usize) -> Result<f64> {
    Ok((omega_hat(fit, basis, x0, v)? / fit.n as f64).max(0.0).sqrt())
}
