//! Binning schemes over the support of x: quantile-spaced, evenly-spaced,
//! manual inner knots, and the unique-values fallback.

use crate::dataset::MassPointInfo;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Quantile,
    Even,
    Manual,
    UniqueValues,
}

impl std::fmt::Display for Placement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Placement::Quantile => "quantile",
            Placement::Even => "even",
            Placement::Manual => "manual",
            Placement::UniqueValues => "unique-values",
        };
        f.write_str(s)
    }
}

/// Ordered knots t_0 < t_1 < ... < t_J spanning [min(x), max(x)].
/// Bin j is [t_{j-1}, t_j) for j < J; the last bin is closed.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    knots: Vec<f64>,
    placement: Placement,
}

impl Partition {
    pub fn num_bins(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn inner_knots(&self) -> &[f64] {
        &self.knots[1..self.knots.len() - 1]
    }

    pub fn placement(&self) -> Placement {
        self.placement
    }

    pub fn lo(&self) -> f64 {
        self.knots[0]
    }

    pub fn hi(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    /// Whether the support is a single point (possible only via the
    /// unique-values scheme on constant x).
    pub fn is_degenerate(&self) -> bool {
        self.lo() == self.hi()
    }

    /// 1-based bin index of `x0`. Right-open membership; the last bin is
    /// closed at t_J. Points outside [t_0, t_J] are rejected.
    pub fn bin_index(&self, x0: f64) -> Result<usize> {
        if !(x0 >= self.lo() && x0 <= self.hi()) {
            return Err(Error::OutOfSupport {
                x: x0,
                lo: self.lo(),
                hi: self.hi(),
            });
        }
        if self.is_degenerate() {
            return Ok(1);
        }
        let inner = self.inner_knots();
        Ok(inner.partition_point(|&t| t <= x0) + 1)
    }

    /// Number of construction-sample observations per bin.
    pub fn bin_counts(&self, x: &[f64]) -> Result<Vec<usize>> {
        let mut counts = vec![0usize; self.num_bins()];
        for &v in x {
            counts[self.bin_index(v)? - 1] += 1;
        }
        Ok(counts)
    }
}

/// Quantile-spaced partition: inner knot j is the order statistic
/// x_(floor(n*j/J)). Duplicate knots are collapsed, reducing the
/// effective number of bins; callers compare `num_bins()` against the
/// request to detect the collapse.
pub fn quantile_partition(x: &[f64], j: usize) -> Result<Partition> {
    if j < 1 {
        return Err(Error::ZeroBins);
    }
    let n = x.len();
    if n < 1 {
        return Err(Error::TooFewRows { needed: 1, have: 0 });
    }
    let mut sorted = x.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mut knots = Vec::with_capacity(j + 1);
    knots.push(sorted[0]);
    for k in 1..j {
        // 1-based order statistic floor(n*k/j), clamped into the sample
        let idx = ((n * k) / j).max(1).min(n);
        knots.push(sorted[idx - 1]);
    }
    knots.push(sorted[n - 1]);
    knots.dedup();
    if knots.len() < 2 {
        // constant x: degenerate single bin
        knots = vec![sorted[0], sorted[n - 1]];
        knots.dedup();
        if knots.len() == 1 {
            knots.push(sorted[n - 1]);
        }
    }
    Ok(Partition {
        knots,
        placement: Placement::Quantile,
    })
}

/// Evenly-spaced partition over [min(x), max(x)]. Bins may be empty;
/// fitting rejects empty bins with a clear error.
pub fn even_partition(x: &[f64], j: usize) -> Result<Partition> {
    if j < 1 {
        return Err(Error::ZeroBins);
    }
    if x.is_empty() {
        return Err(Error::TooFewRows { needed: 1, have: 0 });
    }
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi && j > 1 {
        return Err(Error::ZeroRange(j));
    }
    let mut knots = Vec::with_capacity(j + 1);
    for k in 0..=j {
        knots.push(lo + (hi - lo) * k as f64 / j as f64);
    }
    knots[j] = hi;
    knots.dedup();
    Ok(Partition {
        knots,
        placement: Placement::Even,
    })
}

/// Manual inner knots; each must lie strictly inside (min(x), max(x)).
pub fn manual_partition(x: &[f64], inner_knots: &[f64]) -> Result<Partition> {
    if x.is_empty() {
        return Err(Error::TooFewRows { needed: 1, have: 0 });
    }
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut inner = inner_knots.to_vec();
    inner.sort_unstable_by(f64::total_cmp);
    for pair in inner.windows(2) {
        if pair[0] == pair[1] {
            return Err(Error::DuplicateKnot(pair[0]));
        }
    }
    for &t in &inner {
        if !(t > lo && t < hi) {
            return Err(Error::KnotOutOfRange { knot: t, lo, hi });
        }
    }
    let mut knots = Vec::with_capacity(inner.len() + 2);
    knots.push(lo);
    knots.extend_from_slice(&inner);
    knots.push(hi);
    Ok(Partition {
        knots,
        placement: Placement::Manual,
    })
}

/// One bin per distinct value of x: knots at midpoints between
/// consecutive unique values, boundaries at min and max.
pub fn unique_value_partition(mass: &MassPointInfo) -> Partition {
    let u = &mass.unique_values;
    let mut knots = Vec::with_capacity(u.len() + 1);
    knots.push(u[0]);
    for pair in u.windows(2) {
        knots.push(0.5 * (pair[0] + pair[1]));
    }
    knots.push(*u.last().unwrap());
    Partition {
        knots,
        placement: Placement::UniqueValues,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::analyze_mass_points;
    use proptest::prelude::*;

    #[test]
    fn quantile_inner_knot_is_order_statistic() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let p = quantile_partition(&x, 2).unwrap();
        assert_eq!(p.knots(), &[1.0, 3.0, 6.0]);
        assert_eq!(p.bin_index(2.9).unwrap(), 1);
        assert_eq!(p.bin_index(3.0).unwrap(), 2);
    }

    #[test]
    fn quantile_single_bin() {
        let x = [5.0, 1.0, 3.0];
        let p = quantile_partition(&x, 1).unwrap();
        assert_eq!(p.knots(), &[1.0, 5.0]);
    }

    #[test]
    fn quantile_duplicate_knots_collapse() {
        // Oracle: apply the order-statistic display, then dedup.
        let x = [1.0, 1.0, 1.0, 2.0, 2.0, 2.0];
        let j = 3usize;
        let n = x.len();
        let mut sorted = x.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        let mut expect = vec![sorted[0]];
        for k in 1..j {
            expect.push(sorted[(n * k / j) - 1]);
        }
        expect.push(sorted[n - 1]);
        expect.dedup();

        let p = quantile_partition(&x, j).unwrap();
        assert_eq!(p.knots(), expect.as_slice());
        assert!(p.num_bins() < j, "collapse must reduce the bin count");
        assert_eq!(p.num_bins(), expect.len() - 1);
    }

    #[test]
    fn even_grid() {
        let x = [0.0, 10.0, 3.0];
        let p = even_partition(&x, 5).unwrap();
        assert_eq!(p.knots(), &[0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        let p1 = even_partition(&x, 1).unwrap();
        assert_eq!(p1.knots(), &[0.0, 10.0]);
    }

    #[test]
    fn even_zero_range_rejected() {
        assert!(matches!(
            even_partition(&[2.0, 2.0], 4),
            Err(Error::ZeroRange(4))
        ));
    }

    #[test]
    fn manual_examples() {
        let x = [0.0, 1.0];
        let p = manual_partition(&x, &[0.3, 0.7]).unwrap();
        assert_eq!(p.num_bins(), 3);
        assert_eq!(p.knots(), &[0.0, 0.3, 0.7, 1.0]);

        assert!(matches!(
            manual_partition(&x, &[1.5]),
            Err(Error::KnotOutOfRange { .. })
        ));
        assert_eq!(manual_partition(&x, &[]).unwrap().num_bins(), 1);
        assert!(matches!(
            manual_partition(&x, &[0.5, 0.5]),
            Err(Error::DuplicateKnot(_))
        ));
    }

    #[test]
    fn unique_value_midpoints() {
        let m = analyze_mass_points(&[1.0, 2.0, 4.0, 2.0]);
        let p = unique_value_partition(&m);
        assert_eq!(p.knots(), &[1.0, 1.5, 3.0, 4.0]);
        assert_eq!(p.num_bins(), 3);
        // each unique value sits in its own bin
        assert_eq!(p.bin_index(1.0).unwrap(), 1);
        assert_eq!(p.bin_index(2.0).unwrap(), 2);
        assert_eq!(p.bin_index(4.0).unwrap(), 3);

        let single = unique_value_partition(&analyze_mass_points(&[3.0, 3.0]));
        assert_eq!(single.num_bins(), 1);
        assert!(single.is_degenerate());
        assert_eq!(single.bin_index(3.0).unwrap(), 1);

        let two = unique_value_partition(&analyze_mass_points(&[0.0, 1.0]));
        assert_eq!(two.knots(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn bin_index_conventions() {
        let p = manual_partition(&[0.0, 2.0], &[1.0]).unwrap();
        assert_eq!(p.knots(), &[0.0, 1.0, 2.0]);
        assert_eq!(p.bin_index(1.0).unwrap(), 2); // right-open
        assert_eq!(p.bin_index(2.0).unwrap(), 2); // last bin closed
        assert!(matches!(
            p.bin_index(-0.1),
            Err(Error::OutOfSupport { .. })
        ));
    }

    proptest! {
        #[test]
        fn quantile_bins_roughly_balanced(n in 20usize..200, j in 1usize..10, seed in 0u64..1000) {
            // all-distinct x
            let mut x: Vec<f64> = (0..n).map(|i| {
                let h = i as u64 ^ seed.wrapping_mul(0x9e3779b97f4a7c15);
                i as f64 + (h % 1000) as f64 / 4000.0
            }).collect();
            x.sort_unstable_by(f64::total_cmp);
            x.dedup();
            let n = x.len();
            prop_assume!(n >= j);
            let p = quantile_partition(&x, j).unwrap();
            prop_assume!(p.num_bins() == j);
            let counts = p.bin_counts(&x).unwrap();
            let max = *counts.iter().max().unwrap();
            let min = *counts.iter().min().unwrap();
            // each inner knot belongs to the bin on its right, which costs
            // the first bin one observation and grants the last bin one
            let allowed = n.div_ceil(j) - n / j + 2;
            prop_assert!(max - min <= allowed, "counts {:?} spread too wide", counts);
        }

        #[test]
        fn bin_index_monotone(x0 in 0.0f64..1.0, x1 in 0.0f64..1.0) {
            let xs = [0.0, 0.2, 0.35, 0.61, 1.0];
            let p = manual_partition(&[0.0, 1.0], &xs[1..4]).unwrap();
            let (a, b) = if x0 <= x1 { (x0, x1) } else { (x1, x0) };
            prop_assert!(p.bin_index(a).unwrap() <= p.bin_index(b).unwrap());
        }

        #[test]
        fn manual_roundtrip(a in 0.01f64..0.4, b in 0.45f64..0.95) {
            let p = manual_partition(&[0.0, 1.0], &[b, a]).unwrap();
            prop_assert_eq!(p.inner_knots(), &[a, b]);
        }
    }
}
