//! Constrained piecewise-polynomial basis of degree p with s smoothness
//! constraints across bins, realized as a B-spline basis whose interior
//! knots have multiplicity p+1-s. The basis has dimension
//! K = (p+1)J - (J-1)s and spans piecewise degree-p polynomials with
//! s-1 continuous derivatives at the interior knots.

use crate::error::{Error, Result};
use crate::partition::Partition;

/// Degree, smoothness and derivative order of one estimand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisSpec {
    pub degree: usize,
    pub smoothness: usize,
    pub deriv: usize,
}

impl BasisSpec {
    pub fn new(degree: usize, smoothness: usize, deriv: usize) -> Result<Self> {
        if smoothness > degree {
            return Err(Error::SmoothnessExceedsDegree {
                p: degree,
                s: smoothness,
            });
        }
        if deriv > degree {
            return Err(Error::DerivExceedsDegree {
                p: degree,
                v: deriv,
            });
        }
        Ok(BasisSpec {
            degree,
            smoothness,
            deriv,
        })
    }
}

/// Evaluation side at points where basis functions are discontinuous.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// B-spline basis attached to a partition.
#[derive(Debug, Clone)]
pub struct ConstrainedBasis {
    partition: Partition,
    degree: usize,
    smoothness: usize,
    extended_knots: Vec<f64>,
    dim: usize,
}

/// K = (p+1)J - (J-1)s.
pub fn basis_dimension(p: usize, s: usize, j: usize) -> usize {
    (p + 1) * j - (j - 1) * s
}

/// Build the constrained basis on a partition: boundary knots repeated
/// p+1 times, each interior knot repeated p+1-s times.
pub fn build_basis(partition: &Partition, p: usize, s: usize) -> Result<ConstrainedBasis> {
    if s > p {
        return Err(Error::SmoothnessExceedsDegree { p, s });
    }
    if partition.is_degenerate() && p > 0 {
        return Err(Error::DegeneratePartition { p });
    }
    let j = partition.num_bins();
    let dim = basis_dimension(p, s, j);
    let mut extended_knots = Vec::with_capacity(dim + p + 1);
    for _ in 0..=p {
        extended_knots.push(partition.lo());
    }
    for &t in partition.inner_knots() {
        for _ in 0..(p + 1 - s) {
            extended_knots.push(t);
        }
    }
    for _ in 0..=p {
        extended_knots.push(partition.hi());
    }
    debug_assert_eq!(extended_knots.len(), dim + p + 1);
    Ok(ConstrainedBasis {
        partition: partition.clone(),
        degree: p,
        smoothness: s,
        extended_knots,
        dim,
    })
}

impl ConstrainedBasis {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn smoothness(&self) -> usize {
        self.smoothness
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn extended_knots(&self) -> &[f64] {
        &self.extended_knots
    }

    fn check_point(&self, x0: f64, v: usize) -> Result<()> {
        if v > self.degree {
            return Err(Error::DerivExceedsDegree {
                p: self.degree,
                v,
            });
        }
        if !(x0 >= self.partition.lo() && x0 <= self.partition.hi()) {
            return Err(Error::OutOfSupport {
                x: x0,
                lo: self.partition.lo(),
                hi: self.partition.hi(),
            });
        }
        Ok(())
    }

    /// Index of the knot span [U_i, U_{i+1}) containing x, taking the
    /// limit from the requested side at knots. The returned span always
    /// has positive width.
    fn find_span(&self, x: f64, side: Side) -> usize {
        let u = &self.extended_knots;
        let raw = match side {
            Side::Right => u.partition_point(|&t| t <= x),
            Side::Left => u.partition_point(|&t| t < x),
        };
        raw.saturating_sub(1).clamp(self.degree, self.dim - 1)
    }

    /// v-th derivative of every basis function at x0. Right limits at
    /// discontinuity points, except at the upper boundary where the left
    /// limit is returned, matching bin membership.
    pub fn eval(&self, x0: f64, v: usize) -> Result<Vec<f64>> {
        let side = if x0 == self.partition.hi() {
            Side::Left
        } else {
            Side::Right
        };
        self.eval_limit(x0, v, side)
    }

    /// As `eval`, but forcing the limit side at knots. The left limit at
    /// the lower boundary (and the right limit at the upper boundary) do
    /// not exist and fall back to the one-sided limit that does.
    pub fn eval_limit(&self, x0: f64, v: usize, side: Side) -> Result<Vec<f64>> {
        let (offset, local) = self.eval_local(x0, v, side)?;
        let mut out = vec![0.0; self.dim];
        out[offset..offset + local.len()].copy_from_slice(&local);
        Ok(out)
    }

    /// Inner product of the v-th derivative basis at x0 with a
    /// coefficient vector of length K.
    pub fn eval_dot(&self, x0: f64, v: usize, coefs: &[f64]) -> Result<f64> {
        let (offset, vals) = self.eval_local(x0, v, Side::Right)?;
        Ok(vals
            .iter()
            .enumerate()
            .map(|(t, &b)| b * coefs[offset + t])
            .sum())
    }

    /// Nonzero window of the evaluation: returns (first index, values for
    /// the p+1 basis functions supported at x0).
    pub fn eval_local(&self, x0: f64, v: usize, side: Side) -> Result<(usize, Vec<f64>)> {
        self.check_point(x0, v)?;
        if self.partition.is_degenerate() {
            // constant-x fallback: single indicator function
            return Ok((0, vec![1.0]));
        }
        let side = if x0 == self.partition.lo() {
            Side::Right
        } else if x0 == self.partition.hi() {
            Side::Left
        } else {
            side
        };
        let span = self.find_span(x0, side);
        let ders = ders_basis_funs(span, x0, self.degree, v, &self.extended_knots);
        Ok((span - self.degree, ders.into_iter().nth(v).unwrap()))
    }
}

/// Values and derivatives up to order `nd` of the p+1 B-spline basis
/// functions that are nonzero on the span. Row k of the result holds the
/// k-th derivatives. Cox-de Boor recursion with the standard difference
/// table for derivatives; valid for knot vectors with repeated knots as
/// long as the span itself has positive width.
fn ders_basis_funs(span: usize, x: f64, p: usize, nd: usize, knots: &[f64]) -> Vec<Vec<f64>> {
    let mut ndu = vec![vec![0.0; p + 1]; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }

    let mut ders = vec![vec![0.0; p + 1]; nd + 1];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    if nd == 0 {
        return ders;
    }

    let mut a = vec![vec![0.0; p + 1]; 2];
    for r in 0..=p {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = 1.0;
        for k in 1..=nd {
            let mut d = 0.0;
            let rk = r as isize - k as isize;
            let pk = p as isize - k as isize;
            if r >= k {
                a[s2][0] = a[s1][0] / ndu[(pk + 1) as usize][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk as usize];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if r as isize - 1 <= pk { k - 1 } else { p - r };
            for j in j1..=j2 {
                a[s2][j] =
                    (a[s1][j] - a[s1][j - 1]) / ndu[(pk + 1) as usize][(rk + j as isize) as usize];
                d += a[s2][j] * ndu[(rk + j as isize) as usize][pk as usize];
            }
            if r as isize <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[(pk + 1) as usize][r];
                d += a[s2][k] * ndu[r][pk as usize];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }

    let mut factor = p as f64;
    for (k, row) in ders.iter_mut().enumerate().skip(1) {
        for val in row.iter_mut() {
            *val *= factor;
        }
        factor *= (p - k) as f64;
    }
    ders
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::{even_partition, manual_partition};
    use approx::assert_abs_diff_eq;

    fn unit_partition(j: usize) -> Partition {
        let inner: Vec<f64> = (1..j).map(|k| k as f64 / j as f64).collect();
        manual_partition(&[0.0, 1.0], &inner).unwrap()
    }

    #[test]
    fn dimension_examples() {
        assert_eq!(basis_dimension(3, 3, 26), 29);
        assert_eq!(basis_dimension(0, 0, 20), 20);
        assert_eq!(basis_dimension(2, 1, 3), 7);
        assert_eq!(basis_dimension(1, 0, 5), 10);
    }

    #[test]
    fn dimension_matches_construction() {
        for p in 0..=4usize {
            for s in 0..=p {
                for j in 1..=50usize {
                    let b = build_basis(&unit_partition(j), p, s).unwrap();
                    assert_eq!(b.dim(), basis_dimension(p, s, j));
                    let at = 0.37;
                    assert_eq!(b.eval(at, 0).unwrap().len(), b.dim());
                }
            }
        }
    }

    #[test]
    fn indicator_basis_for_p0() {
        let part = unit_partition(4);
        let b = build_basis(&part, 0, 0).unwrap();
        for &x0 in &[0.0, 0.1, 0.25, 0.5, 0.9, 1.0] {
            let vals = b.eval(x0, 0).unwrap();
            let j = part.bin_index(x0).unwrap();
            for (k, v) in vals.iter().enumerate() {
                let expect = if k + 1 == j { 1.0 } else { 0.0 };
                assert_eq!(*v, expect, "x0={x0} k={k}");
            }
        }
    }

    #[test]
    fn partition_of_unity() {
        for p in 0..=4usize {
            for s in 0..=p {
                let b = build_basis(&unit_partition(7), p, s).unwrap();
                for i in 0..=200 {
                    let x0 = i as f64 / 200.0;
                    let sum: f64 = b.eval(x0, 0).unwrap().iter().sum();
                    assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn local_support() {
        for p in 0..=4usize {
            for s in 0..=p {
                let b = build_basis(&unit_partition(9), p, s).unwrap();
                for i in 0..=100 {
                    let x0 = i as f64 / 100.0;
                    let nonzero = b
                        .eval(x0, 0)
                        .unwrap()
                        .iter()
                        .filter(|v| **v != 0.0)
                        .count();
                    assert!(nonzero <= p + 1, "p={p} s={s} x0={x0} nonzero={nonzero}");
                }
            }
        }
    }

    #[test]
    fn smoothness_at_interior_knots() {
        for p in 1..=4usize {
            for s in 1..=p {
                let part = unit_partition(5);
                let b = build_basis(&part, p, s).unwrap();
                for &t in part.inner_knots() {
                    for d in 0..s {
                        let l = b.eval_limit(t, d, Side::Left).unwrap();
                        let r = b.eval_limit(t, d, Side::Right).unwrap();
                        for k in 0..b.dim() {
                            assert_abs_diff_eq!(l[k], r[k], epsilon = 1e-8);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn s0_is_discontinuous_and_right_continuous() {
        let part = unit_partition(3);
        let b = build_basis(&part, 1, 0).unwrap();
        let t = part.inner_knots()[0];
        let l = b.eval_limit(t, 0, Side::Left).unwrap();
        let r = b.eval_limit(t, 0, Side::Right).unwrap();
        assert!(l.iter().zip(&r).any(|(a, b)| (a - b).abs() > 0.5));
        assert_eq!(b.eval(t, 0).unwrap(), r);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let part = unit_partition(6);
        for (p, s) in [(3usize, 3usize), (2, 1), (4, 2), (1, 1)] {
            let b = build_basis(&part, p, s).unwrap();
            let h = 1e-6;
            for i in 1..40 {
                let x0 = 0.013 + 0.024 * i as f64;
                let f_plus = b.eval(x0 + h, 0).unwrap();
                let f_minus = b.eval(x0 - h, 0).unwrap();
                let d1 = b.eval(x0, 1).unwrap();
                for k in 0..b.dim() {
                    let fd = (f_plus[k] - f_minus[k]) / (2.0 * h);
                    let scale = d1[k].abs().max(1.0);
                    assert!(
                        (d1[k] - fd).abs() / scale <= 1e-6,
                        "p={p} s={s} x0={x0} k={k}: {} vs {}",
                        d1[k],
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn second_derivative_matches_fd_of_first() {
        let part = unit_partition(4);
        let b = build_basis(&part, 3, 3).unwrap();
        let h = 1e-6;
        for i in 1..20 {
            let x0 = 0.02 + 0.048 * i as f64;
            // the third derivative jumps at knots, so keep clear of them
            if part.knots().iter().any(|t| (t - x0).abs() < 1e-3) {
                continue;
            }
            let d1p = b.eval(x0 + h, 1).unwrap();
            let d1m = b.eval(x0 - h, 1).unwrap();
            let d2 = b.eval(x0, 2).unwrap();
            for k in 0..b.dim() {
                let fd = (d1p[k] - d1m[k]) / (2.0 * h);
                let scale = d2[k].abs().max(1.0);
                assert!((d2[k] - fd).abs() / scale <= 1e-5);
            }
        }
    }

    #[test]
    fn s_exceeding_p_rejected() {
        assert!(matches!(
            build_basis(&unit_partition(3), 1, 2),
            Err(Error::SmoothnessExceedsDegree { .. })
        ));
    }

    #[test]
    fn deriv_above_degree_rejected() {
        let b = build_basis(&unit_partition(3), 1, 1).unwrap();
        assert!(matches!(
            b.eval(0.5, 2),
            Err(Error::DerivExceedsDegree { .. })
        ));
    }

    #[test]
    fn out_of_support_rejected() {
        let b = build_basis(&unit_partition(3), 1, 1).unwrap();
        assert!(matches!(b.eval(1.2, 0), Err(Error::OutOfSupport { .. })));
    }

    #[test]
    fn even_partition_basis_at_boundaries() {
        let part = even_partition(&[0.0, 10.0], 5).unwrap();
        let b = build_basis(&part, 3, 3).unwrap();
        let at_lo = b.eval(0.0, 0).unwrap();
        assert_abs_diff_eq!(at_lo[0], 1.0, epsilon = 1e-12);
        let at_hi = b.eval(10.0, 0).unwrap();
        assert_abs_diff_eq!(*at_hi.last().unwrap(), 1.0, epsilon = 1e-12);
    }
}
