//! Simulation-based uniform inference: evaluation grids, draws of the
//! Gaussian approximation process, pointwise confidence intervals,
//! sup-t confidence bands, parametric specification tests, and
//! shape restriction tests.
//!
//! The approximating process at a grid point x is
//! Z(x) = b^(v)(x)' Qinv Sigma^{1/2} N_K / sqrt(Omega(x)), which has unit
//! variance at every x and the estimator's correlation structure across
//! points. Critical values and p-values come from the empirical
//! distribution of the per-draw extrema.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::ContinuousCDF;

use crate::basis::ConstrainedBasis;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{mu_hat, omega_hat, FitResult};
use crate::linalg::{pivoted_least_squares, psd_sqrt};
use crate::partition::Partition;

/// Evaluation points: per bin, `ngrid` evenly spaced interior points;
/// inner knots appended and flagged when requested. Knot rows carry
/// bin 0.
#[derive(Debug, Clone)]
pub struct EvalGrid {
    pub points: Vec<f64>,
    pub bin_of: Vec<usize>,
    pub is_knot: Vec<bool>,
}

impl EvalGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn from_points(points: Vec<f64>, partition: &Partition) -> Result<EvalGrid> {
        let mut bin_of = Vec::with_capacity(points.len());
        for &p in &points {
            bin_of.push(partition.bin_index(p)?);
        }
        Ok(EvalGrid {
            is_knot: vec![false; points.len()],
            points,
            bin_of,
        })
    }
}

/// Evenly spaced interior points within each bin, optionally with the
/// inner knots flagged in place.
pub fn build_grid(partition: &Partition, ngrid_per_bin: usize, include_knots: bool) -> EvalGrid {
    let knots = partition.knots();
    let j = partition.num_bins();
    let mut points = Vec::new();
    let mut bin_of = Vec::new();
    let mut is_knot = Vec::new();
    for b in 1..=j {
        let (lo, hi) = (knots[b - 1], knots[b]);
        for k in 1..=ngrid_per_bin {
            points.push(lo + (hi - lo) * k as f64 / (ngrid_per_bin + 1) as f64);
            bin_of.push(b);
            is_knot.push(false);
        }
        if include_knots && b < j {
            points.push(hi);
            bin_of.push(0);
            is_knot.push(true);
        }
    }
    EvalGrid {
        points,
        bin_of,
        is_knot,
    }
}

/// Extrema of the simulated approximation process, one entry per draw.
#[derive(Debug, Clone)]
pub struct SimDraws {
    pub sup_abs: Vec<f64>,
    pub sup: Vec<f64>,
    pub inf: Vec<f64>,
    pub nsims: usize,
    pub seed: u64,
}

/// Rows of the standardized process: row g is
/// Sigma^{1/2} Qinv b^(v)(x_g) / sqrt(Omega(x_g)), so that row · N is the
/// process value at x_g.
fn process_rows(
    fit: &FitResult,
    basis: &ConstrainedBasis,
    points: &[f64],
    v: usize,
) -> Result<DMatrix<f64>> {
    let root = psd_sqrt(fit.sigmahat());
    let r = fit.retained_basis().len();
    let mut rows = DMatrix::zeros(points.len(), r);
    for (g, &x0) in points.iter().enumerate() {
        let b = fit.restricted_basis(basis, x0, v)?;
        let u = &root * (fit.qinv() * b);
        let omega = u.norm_squared();
        if omega > 0.0 {
            let scale = omega.sqrt();
            for a in 0..r {
                rows[(g, a)] = u[a] / scale;
            }
        }
    }
    Ok(rows)
}

/// Simulate S draws of the process over the grid and record, per draw,
/// sup |Z|, sup Z and inf Z. Draw d uses its own generator substream, so
/// results do not depend on evaluation order, and the Gaussian vector for
/// draw d is the same for every grid.
pub fn sup_process_draws(
    fit: &FitResult,
    basis: &ConstrainedBasis,
    grid: &EvalGrid,
    v: usize,
    nsims: usize,
    seed: u64,
) -> Result<SimDraws> {
    let rows = process_rows(fit, basis, &grid.points, v)?;
    let r = rows.ncols();
    let mut sup_abs = Vec::with_capacity(nsims);
    let mut sup = Vec::with_capacity(nsims);
    let mut inf = Vec::with_capacity(nsims);
    let mut z = DVector::zeros(r);
    for d in 0..nsims {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(d as u64 + 1);
        for a in 0..r {
            z[a] = StandardNormal.sample(&mut rng);
        }
        let path = &rows * &z;
        let mut hi = f64::NEG_INFINITY;
        let mut lo = f64::INFINITY;
        for val in path.iter() {
            hi = hi.max(*val);
            lo = lo.min(*val);
        }
        sup_abs.push(hi.abs().max(lo.abs()));
        sup.push(hi);
        inf.push(lo);
    }
    Ok(SimDraws {
        sup_abs,
        sup,
        inf,
        nsims,
        seed,
    })
}

/// Empirical (1-alpha) quantile: the ceil((1-alpha)*S)-th order statistic.
pub fn empirical_quantile(draws: &[f64], alpha: f64) -> f64 {
    let mut sorted = draws.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let s = sorted.len();
    let k = (((1.0 - alpha) * s as f64).ceil() as usize).clamp(1, s);
    sorted[k - 1]
}

/// Normal quantile for two-sided intervals at the given level.
pub fn normal_two_sided_multiplier(alpha: f64) -> f64 {
    let normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
    normal.inverse_cdf(1.0 - alpha / 2.0)
}

/// Point estimates and standard errors over a set of points.
pub fn curve(
    fit: &FitResult,
    basis: &ConstrainedBasis,
    points: &[f64],
    v: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let nf = fit.n as f64;
    let mut centers = Vec::with_capacity(points.len());
    let mut ses = Vec::with_capacity(points.len());
    for &x0 in points {
        centers.push(mu_hat(fit, basis, x0, v)?);
        ses.push((omega_hat(fit, basis, x0, v)? / nf).max(0.0).sqrt());
    }
    Ok((centers, ses))
}

fn studentize(num: f64, se: f64) -> f64 {
    if se > 0.0 {
        num / se
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY * num.signum()
    }
}

/// One pointwise confidence interval.
#[derive(Debug, Clone, Copy)]
pub struct PointInterval {
    pub x: f64,
    pub center: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

/// mu(x) +/- z_{1-alpha/2} * se(x) over the grid, from the supplied fit
/// (which may use a higher degree than point estimation, for robust bias
/// correction).
pub fn confidence_intervals(
    fit: &FitResult,
    basis: &ConstrainedBasis,
    grid: &EvalGrid,
    v: usize,
    alpha: f64,
) -> Result<Vec<PointInterval>> {
    let z = normal_two_sided_multiplier(alpha);
    let (centers, ses) = curve(fit, basis, &grid.points, v)?;
    Ok(grid
        .points
        .iter()
        .zip(centers.iter().zip(&ses))
        .map(|(&x, (&center, &se))| PointInterval {
            x,
            center,
            se,
            lower: center - z * se,
            upper: center + z * se,
        })
        .collect())
}

/// Simultaneous confidence band.
#[derive(Debug, Clone)]
pub struct BandResult {
    pub grid: EvalGrid,
    pub center: Vec<f64>,
    pub se: Vec<f64>,
    pub crit: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
    pub nsims: usize,
    pub seed: u64,
}

pub fn confidence_band(
    fit: &FitResult,
    basis: &ConstrainedBasis,
    grid: &EvalGrid,
    v: usize,
    alpha: f64,
    nsims: usize,
    seed: u64,
) -> Result<BandResult> {
    let draws = sup_process_draws(fit, basis, grid, v, nsims, seed)?;
    confidence_band_with_draws(fit, basis, grid, v, alpha, &draws)
}

/// Band from precomputed draws (so several procedures can share one draw
/// set per fit/grid combination).
pub fn confidence_band_with_draws(
    fit: &FitResult,
    basis: &ConstrainedBasis,
    grid: &EvalGrid,
    v: usize,
    alpha: f64,
    draws: &SimDraws,
) -> Result<BandResult> {
    let crit = empirical_quantile(&draws.sup_abs, alpha);
    let (center, se) = curve(fit, basis, &grid.points, v)?;
    let lower: Vec<f64> = center.iter().zip(&se).map(|(c, s)| c - crit * s).collect();
    let upper: Vec<f64> = center.iter().zip(&se).map(|(c, s)| c + crit * s).collect();
    Ok(BandResult {
        grid: grid.clone(),
        center,
        se,
        crit,
        lower,
        upper,
        level: 1.0 - alpha,
        nsims: draws.nsims,
        seed: draws.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestSide {
    Left,
    Right,
    Two,
}

/// Sup/inf-type test outcome.
#[derive(Debug, Clone)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub side: TestSide,
    pub null_desc: String,
    pub nsims: usize,
    pub seed: u64,
}

/// Specification test: sup_x |mu^(v)(x) - m^(v)(x)| / se(x) against the
/// two-sided sup draws.
pub fn spec_test(
    fit: &FitResult,
    basis: &ConstrainedBasis,
    grid: &EvalGrid,
    v: usize,
    parametric_values: &[f64],
    null_desc: &str,
    draws: &SimDraws,
) -> Result<TestResult> {
    if parametric_values.len() != grid.len() {
        return Err(Error::LengthMismatch {
            grid: grid.len(),
            fit: parametric_values.len(),
        });
    }
    if parametric_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::ParFit("fitted values must be finite".into()));
    }
    let (center, se) = curve(fit, basis, &grid.points, v)?;
    let mut stat = 0.0f64;
    for g in 0..grid.len() {
        let t = studentize(center[g] - parametric_values[g], se[g]);
        stat = stat.max(t.abs());
    }
    let exceed = draws.sup_abs.iter().filter(|&&d| d >= stat).count();
    Ok(TestResult {
        statistic: stat,
        p_value: exceed as f64 / draws.nsims as f64,
        side: TestSide::Two,
        null_desc: null_desc.to_string(),
        nsims: draws.nsims,
        seed: draws.seed,
    })
}

/// Shape restriction test against the boundary value `a`.
/// Left:  H0: sup mu^(v) <= a, statistic sup T, upper tail of sup draws.
/// Right: H0: inf mu^(v) >= a, statistic inf T, lower tail of inf draws.
/// Two:   H0: mu^(v) == a, statistic sup |T|, two-sided draws.
pub fn shape_test(
    fit: &FitResult,
    basis: &ConstrainedBasis,
    grid: &EvalGrid,
    v: usize,
    a: f64,
    side: TestSide,
    draws: &SimDraws,
) -> Result<TestResult> {
    let (center, se) = curve(fit, basis, &grid.points, v)?;
    let tstats: Vec<f64> = center
        .iter()
        .zip(&se)
        .map(|(&c, &s)| studentize(c - a, s))
        .collect();
    let (stat, p, desc) = match side {
        TestSide::Left => {
            let stat = tstats.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let p = draws.sup.iter().filter(|&&d| d >= stat).count() as f64;
            (stat, p, format!("sup mu^({v}) <= {a}"))
        }
        TestSide::Right => {
            let stat = tstats.iter().copied().fold(f64::INFINITY, f64::min);
            let p = draws.inf.iter().filter(|&&d| d <= stat).count() as f64;
            (stat, p, format!("inf mu^({v}) >= {a}"))
        }
        TestSide::Two => {
            let stat = tstats.iter().fold(0.0f64, |acc, t| acc.max(t.abs()));
            let p = draws.sup_abs.iter().filter(|&&d| d >= stat).count() as f64;
            (stat, p, format!("mu^({v}) == {a}"))
        }
    };
    Ok(TestResult {
        statistic: stat,
        p_value: p / draws.nsims as f64,
        side,
        null_desc: desc,
        nsims: draws.nsims,
        seed: draws.seed,
    })
}

/// Global polynomial fit of y on powers of x (standardized to [-1, 1]
/// for conditioning) plus the covariates. The polynomial part, with
/// covariates held at zero, is the parametric model m(x, theta).
#[derive(Debug, Clone)]
pub struct GlobalPoly {
    pub degree: usize,
    coefs: Vec<f64>,
    gamma: Vec<f64>,
    lo: f64,
    hi: f64,
    /// HC0 covariance of the full coefficient vector (poly block first).
    cov: DMatrix<f64>,
}

pub fn fit_global_poly(ds: &Dataset, degree: usize, n_distinct: usize) -> Result<GlobalPoly> {
    if degree + 1 >= n_distinct {
        return Err(Error::PolyDegreeTooHigh {
            degree,
            n_distinct,
        });
    }
    let n = ds.len();
    let d = ds.w.len();
    let lo = ds.x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ds.x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let m = degree + 1 + d;
    let mut design = DMatrix::zeros(n, m);
    for i in 0..n {
        let t = standardize(ds.x[i], lo, hi);
        let mut pw = 1.0;
        for k in 0..=degree {
            design[(i, k)] = pw;
            pw *= t;
        }
        for c in 0..d {
            design[(i, degree + 1 + c)] = ds.w[c][i];
        }
    }
    let y = DVector::from_column_slice(&ds.y);
    let ls = pivoted_least_squares(&design, &y, 1e-12)?;

    // HC0 sandwich over the full design
    let xtx = design.transpose() * &design;
    let xtx_inv = xtx
        .try_inverse()
        .unwrap_or_else(|| DMatrix::zeros(m, m));
    let mut meat = DMatrix::zeros(m, m);
    for i in 0..n {
        let e2 = ls.residuals[i] * ls.residuals[i];
        for a in 0..m {
            for b in 0..m {
                meat[(a, b)] += design[(i, a)] * design[(i, b)] * e2;
            }
        }
    }
    let cov = &xtx_inv * meat * &xtx_inv;
    Ok(GlobalPoly {
        degree,
        coefs: (0..=degree).map(|k| ls.coefs[k]).collect(),
        gamma: (0..d).map(|c| ls.coefs[degree + 1 + c]).collect(),
        lo,
        hi,
        cov,
    })
}

fn standardize(x: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        2.0 * (x - lo) / (hi - lo) - 1.0
    } else {
        0.0
    }
}

impl GlobalPoly {
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// v-th derivative of the polynomial part at x.
    pub fn value(&self, x: f64, v: usize) -> f64 {
        let t = standardize(x, self.lo, self.hi);
        let scale = if self.hi > self.lo {
            2.0 / (self.hi - self.lo)
        } else {
            0.0
        };
        let mut out = 0.0;
        for (k, &c) in self.coefs.iter().enumerate() {
            if k >= v {
                let mut fac = 1.0;
                for q in 0..v {
                    fac *= (k - q) as f64;
                }
                out += c * fac * t.powi((k - v) as i32);
            }
        }
        if v > 0 {
            out * scale.powi(v as i32)
        } else {
            out
        }
    }

    /// HC0 standard error of the polynomial prediction at x (w = 0).
    pub fn std_err(&self, x: f64) -> f64 {
        let t = standardize(x, self.lo, self.hi);
        let m = self.cov.nrows();
        let mut g = DVector::zeros(m);
        let mut pw = 1.0;
        for k in 0..self.coefs.len() {
            g[k] = pw;
            pw *= t;
        }
        (self.cov.clone() * &g).dot(&g).max(0.0).sqrt()
    }
}

/// Specification test against a global polynomial of degree `p_null`,
/// estimated by least squares under the null.
#[allow(clippy::too_many_arguments)]
pub fn spec_test_poly(
    ds: &Dataset,
    n_distinct: usize,
    fit: &FitResult,
    basis: &ConstrainedBasis,
    grid: &EvalGrid,
    v: usize,
    p_null: usize,
    draws: &SimDraws,
) -> Result<TestResult> {
    let poly = fit_global_poly(ds, p_null, n_distinct)?;
    let values: Vec<f64> = grid.points.iter().map(|&x| poly.value(x, v)).collect();
    spec_test(
        fit,
        basis,
        grid,
        v,
        &values,
        &format!("mu^({v}) matches a global polynomial of degree {p_null}"),
        draws,
    )
}

/// Specification tests against externally fitted models. The file must
/// contain a column named exactly like the independent variable (the
/// evaluation grid) and one column per model, named with the prefix
/// `binsreg_fit`. Returns one result per fit column, in file order,
/// sharing a single draw set.
pub fn spec_test_file(
    fit: &FitResult,
    basis: &ConstrainedBasis,
    v: usize,
    path: &Path,
    x_name: &str,
    nsims: usize,
    seed: u64,
) -> Result<Vec<(String, TestResult)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?
        .clone();
    let x_col = headers.iter().position(|h| h == x_name).ok_or_else(|| {
        Error::ParFit(format!(
            "the evaluation grid column must have the same name as the independent variable ({x_name})"
        ))
    })?;
    let fit_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("binsreg_fit"))
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    if fit_cols.is_empty() {
        return Err(Error::ParFit(
            "no fitted-value columns matching the prefix binsreg_fit".into(),
        ));
    }

    let mut points = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); fit_cols.len()];
    for (row_no, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        let parse = |i: usize, name: &str| -> Result<f64> {
            let raw = record.get(i).unwrap_or("");
            raw.trim().parse().map_err(|_| Error::NonNumeric {
                column: name.to_string(),
                row: row_no + 1,
                value: raw.to_string(),
            })
        };
        points.push(parse(x_col, x_name)?);
        for (slot, (i, name)) in fit_cols.iter().enumerate() {
            values[slot].push(parse(*i, name)?);
        }
    }
    let grid = EvalGrid::from_points(points, basis.partition())?;
    let draws = sup_process_draws(fit, basis, &grid, v, nsims, seed)?;
    let mut out = Vec::new();
    for (slot, (_, name)) in fit_cols.iter().enumerate() {
        let result = spec_test(
            fit,
            basis,
            &grid,
            v,
            &values[slot],
            &format!("mu^({v}) matches the fitted values in column {name}"),
            &draws,
        )?;
        out.push((name.clone(), result));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_basis;
    use crate::estimator::{fit, Vce};
    use crate::partition::quantile_partition;
    use approx::assert_abs_diff_eq;
    use std::io::Write;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64) / ((1u64 << 53) as f64)
    }

    fn plain_ds(y: Vec<f64>, x: Vec<f64>) -> Dataset {
        Dataset {
            y,
            x,
            w: vec![],
            w_names: vec![],
            cluster: None,
            fweight: None,
            by: None,
            y_name: "y".into(),
            x_name: "x".into(),
            dropped_rows: 0,
        }
    }

    fn sin_fit(n: usize, j: usize, p: usize, s: usize) -> (Dataset, ConstrainedBasis, FitResult) {
        let mut seed = 42u64;
        let x: Vec<f64> = (0..n).map(|_| lcg(&mut seed)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| (4.0 * v).sin() + 0.5 * (lcg(&mut seed) - 0.5))
            .collect();
        let ds = plain_ds(y, x.clone());
        let part = quantile_partition(&x, j).unwrap();
        let basis = build_basis(&part, p, s).unwrap();
        let f = fit(&ds, &basis, Vce::Robust).unwrap();
        (ds, basis, f)
    }

    #[test]
    fn grid_midpoints_and_counts() {
        let part = quantile_partition(&[0.0, 0.25, 0.5, 0.75, 1.0], 2).unwrap();
        let g = build_grid(&part, 1, false);
        assert_eq!(g.points.len(), 2);
        assert_abs_diff_eq!(g.points[0], (part.knots()[0] + part.knots()[1]) / 2.0);
        assert_eq!(g.bin_of, vec![1, 2]);

        let x: Vec<f64> = (0..200).map(|i| i as f64 / 199.0).collect();
        let part = quantile_partition(&x, 26).unwrap();
        let g = build_grid(&part, 20, false);
        assert_eq!(g.points.len(), 520);

        let gk = build_grid(&part, 20, true);
        assert_eq!(gk.points.len(), 520 + 25);
        assert_eq!(gk.is_knot.iter().filter(|k| **k).count(), 25);
        assert!(gk
            .points
            .windows(2)
            .all(|w| w[0] <= w[1]));
        for (i, flag) in gk.is_knot.iter().enumerate() {
            if *flag {
                assert_eq!(gk.bin_of[i], 0);
            }
        }
    }

    #[test]
    fn draws_have_unit_variance_pointwise() {
        let (_, basis, f) = sin_fit(400, 4, 1, 1);
        let grid = build_grid(basis.partition(), 3, false);
        let rows = process_rows(&f, &basis, &grid.points, 0).unwrap();
        let s = 50_000usize;
        let r = rows.ncols();
        let mut sums = vec![0.0; grid.len()];
        let mut sq = vec![0.0; grid.len()];
        let mut z = DVector::zeros(r);
        for d in 0..s {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            rng.set_stream(d as u64 + 1);
            for a in 0..r {
                z[a] = StandardNormal.sample(&mut rng);
            }
            let path = &rows * &z;
            for (g, val) in path.iter().enumerate() {
                sums[g] += val;
                sq[g] += val * val;
            }
        }
        for g in 0..grid.len() {
            let mean = sums[g] / s as f64;
            let var = sq[g] / s as f64 - mean * mean;
            assert!(
                (var - 1.0).abs() < 0.05,
                "grid point {g} variance {var}"
            );
        }
    }

    #[test]
    fn single_point_critical_value_near_normal_quantile() {
        let (_, basis, f) = sin_fit(300, 1, 0, 0);
        let grid = EvalGrid::from_points(vec![0.5], basis.partition()).unwrap();
        let draws = sup_process_draws(&f, &basis, &grid, 0, 50_000, 11).unwrap();
        let c = empirical_quantile(&draws.sup_abs, 0.05);
        assert!((c - 1.959964).abs() < 0.03, "c = {c}");
    }

    #[test]
    fn band_contains_pointwise_ci() {
        let (_, basis, f) = sin_fit(500, 5, 1, 1);
        let grid = build_grid(basis.partition(), 4, true);
        let band = confidence_band(&f, &basis, &grid, 0, 0.05, 20_000, 3).unwrap();
        let cis = confidence_intervals(&f, &basis, &grid, 0, 0.05).unwrap();
        assert!(band.crit >= 1.959964 - 0.03);
        for (g, ci) in cis.iter().enumerate() {
            assert!(band.lower[g] <= ci.lower + 1e-12);
            assert!(band.upper[g] >= ci.upper - 1e-12);
            assert_abs_diff_eq!(
                band.upper[g] - band.lower[g],
                2.0 * band.crit * band.se[g],
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn single_point_band_matches_ci_within_noise() {
        let (_, basis, f) = sin_fit(300, 1, 0, 0);
        let grid = EvalGrid::from_points(vec![0.4], basis.partition()).unwrap();
        let band = confidence_band(&f, &basis, &grid, 0, 0.05, 50_000, 19).unwrap();
        let ci = &confidence_intervals(&f, &basis, &grid, 0, 0.05).unwrap()[0];
        assert!((band.lower[0] - ci.lower).abs() <= 0.05 * ci.se.max(1e-12));
        assert!((band.upper[0] - ci.upper).abs() <= 0.05 * ci.se.max(1e-12));
    }

    #[test]
    fn critical_value_nondecreasing_in_grid_size_and_level() {
        let (_, basis, f) = sin_fit(400, 4, 1, 1);
        let small = build_grid(basis.partition(), 2, false);
        let mut large_pts = small.points.clone();
        large_pts.extend(build_grid(basis.partition(), 5, false).points);
        large_pts.sort_unstable_by(f64::total_cmp);
        let large = EvalGrid::from_points(large_pts, basis.partition()).unwrap();

        let d_small = sup_process_draws(&f, &basis, &small, 0, 4000, 5).unwrap();
        let d_large = sup_process_draws(&f, &basis, &large, 0, 4000, 5).unwrap();
        for alpha in [0.01, 0.05, 0.10] {
            assert!(
                empirical_quantile(&d_large.sup_abs, alpha)
                    >= empirical_quantile(&d_small.sup_abs, alpha)
            );
        }
        let c1 = empirical_quantile(&d_small.sup_abs, 0.01);
        let c5 = empirical_quantile(&d_small.sup_abs, 0.05);
        let c10 = empirical_quantile(&d_small.sup_abs, 0.10);
        assert!(c1 >= c5 && c5 >= c10);
    }

    #[test]
    fn normal_multiplier_value() {
        assert!((normal_two_sided_multiplier(0.05) - 1.959964).abs() < 1e-6);
    }

    #[test]
    fn zero_residual_ci_degenerates_to_point() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let y: Vec<f64> = x.iter().map(|&v| 2.0 * v).collect();
        let ds = plain_ds(y, x.clone());
        let part = quantile_partition(&x, 3).unwrap();
        let basis = build_basis(&part, 1, 1).unwrap();
        let f = fit(&ds, &basis, Vce::Robust).unwrap();
        let grid = build_grid(&part, 2, false);
        let cis = confidence_intervals(&f, &basis, &grid, 0, 0.05).unwrap();
        for ci in &cis {
            assert!((ci.upper - ci.lower).abs() < 1e-12);
            assert_abs_diff_eq!(ci.center, ci.lower, epsilon = 1e-12);
        }
    }

    #[test]
    fn self_test_is_exact_zero() {
        let (_, basis, f) = sin_fit(300, 4, 1, 1);
        let grid = build_grid(basis.partition(), 5, true);
        let draws = sup_process_draws(&f, &basis, &grid, 0, 1000, 1).unwrap();
        let own: Vec<f64> = grid
            .points
            .iter()
            .map(|&x| mu_hat(&f, &basis, x, 0).unwrap())
            .collect();
        let t = spec_test(&f, &basis, &grid, 0, &own, "self", &draws).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.p_value, 1.0);
    }

    #[test]
    fn shape_test_sides_and_monotonicity() {
        let (_, basis, f) = sin_fit(400, 4, 2, 2);
        let grid = build_grid(basis.partition(), 5, true);
        let draws = sup_process_draws(&f, &basis, &grid, 0, 2000, 9).unwrap();

        // trivially satisfied left null at a huge bound
        let huge = shape_test(&f, &basis, &grid, 0, 1e6, TestSide::Left, &draws).unwrap();
        assert!(huge.p_value > 0.999);

        // p-value weakly increases in a for left-sided tests
        let mut last_p = -1.0;
        for a in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            let t = shape_test(&f, &basis, &grid, 0, a, TestSide::Left, &draws).unwrap();
            assert!(t.p_value >= last_p);
            last_p = t.p_value;
        }
    }

    #[test]
    fn poly_test_examples() {
        let mut seed = 4u64;
        let n = 400;
        let x: Vec<f64> = (0..n).map(|_| lcg(&mut seed)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| 1.0 + v - 0.5 * v * v + 0.25 * v * v * v + 0.2 * (lcg(&mut seed) - 0.5))
            .collect();
        let ds = plain_ds(y, x.clone());
        let part = quantile_partition(&x, 6).unwrap();
        let basis = build_basis(&part, 3, 3).unwrap();
        let f = fit(&ds, &basis, Vce::Robust).unwrap();
        let grid = build_grid(&part, 10, true);
        let draws = sup_process_draws(&f, &basis, &grid, 0, 2000, 12).unwrap();

        // the DGP is exactly cubic: testing a cubic null should not reject
        let t3 = spec_test_poly(&ds, n, &f, &basis, &grid, 0, 3, &draws).unwrap();
        assert!(t3.p_value > 0.05, "p = {}", t3.p_value);

        // degree-0 null model is the sample mean
        let poly0 = fit_global_poly(&ds, 0, n).unwrap();
        let ybar = ds.y.iter().sum::<f64>() / n as f64;
        assert_abs_diff_eq!(poly0.value(0.3, 0), ybar, epsilon = 1e-10);

        // derivative of a linear null is its slope, checked by finite differences
        let poly1 = fit_global_poly(&ds, 1, n).unwrap();
        let h = 1e-5;
        let fd = (poly1.value(0.6 + h, 0) - poly1.value(0.6 - h, 0)) / (2.0 * h);
        assert_abs_diff_eq!(poly1.value(0.6, 1), fd, epsilon = 1e-6);

        // degree cap
        assert!(matches!(
            fit_global_poly(&ds, n, n),
            Err(Error::PolyDegreeTooHigh { .. })
        ));
    }

    #[test]
    fn parfit_file_tests() {
        let (_, basis, f) = sin_fit(300, 3, 1, 1);
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "x,w,binsreg_fit1,binsreg_fit2").unwrap();
        let pts = [0.1, 0.3, 0.5, 0.7, 0.9];
        for &p in &pts {
            let m = mu_hat(&f, &basis, p, 0).unwrap();
            writeln!(file, "{p},0,{m},{}", m + 1.0).unwrap();
        }
        let results = spec_test_file(&f, &basis, 0, file.path(), "x", 500, 21).unwrap();
        assert_eq!(results.len(), 2);
        assert_eq!(results[0].0, "binsreg_fit1");
        assert_eq!(results[0].1.statistic, 0.0);
        assert!(results[1].1.statistic > results[0].1.statistic);

        // wrong grid-column name
        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, "grid,binsreg_fit1").unwrap();
        writeln!(bad, "0.5,0.0").unwrap();
        match spec_test_file(&f, &basis, 0, bad.path(), "x", 100, 1) {
            Err(Error::ParFit(msg)) => assert!(msg.contains("same name")),
            other => panic!("expected ParFit error, got {other:?}"),
        }

        // no fit columns
        let mut nofit = tempfile::NamedTempFile::new().unwrap();
        writeln!(nofit, "x,other").unwrap();
        writeln!(nofit, "0.5,0.0").unwrap();
        assert!(matches!(
            spec_test_file(&f, &basis, 0, nofit.path(), "x", 100, 1),
            Err(Error::ParFit(_))
        ));

        // out-of-support grid point
        let mut oos = tempfile::NamedTempFile::new().unwrap();
        writeln!(oos, "x,binsreg_fit1").unwrap();
        writeln!(oos, "5.0,0.0").unwrap();
        assert!(matches!(
            spec_test_file(&f, &basis, 0, oos.path(), "x", 100, 1),
            Err(Error::OutOfSupport { .. })
        ));
    }

    #[test]
    fn draws_deterministic_given_seed() {
        let (_, basis, f) = sin_fit(200, 3, 1, 1);
        let grid = build_grid(basis.partition(), 4, false);
        let a = sup_process_draws(&f, &basis, &grid, 0, 300, 77).unwrap();
        let b = sup_process_draws(&f, &basis, &grid, 0, 300, 77).unwrap();
        assert_eq!(a.sup_abs, b.sup_abs);
        assert_eq!(a.sup, b.sup);
        assert_eq!(a.inf, b.inf);
    }
}
