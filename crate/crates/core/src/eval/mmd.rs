use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Squared-MMD estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MmdEstimator {
    /// U-statistic: within-set sums skip the diagonal. Can be negative.
    #[default]
    Unbiased,
    /// V-statistic over all pairs. Non-negative, zero for equal multisets.
    Biased,
}

fn point(x: &[f64], dims: usize, i: usize) -> &[f64] {
    &x[i * dims..(i + 1) * dims]
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise distance over `A ∪ B`, or 1 if every distance is zero.
pub fn median_bandwidth(a: &[f64], b: &[f64], dims: usize) -> f64 {
    let all: Vec<&[f64]> = a.chunks(dims).chain(b.chunks(dims)).collect();
    let mut d = Vec::with_capacity(all.len() * all.len().saturating_sub(1) / 2);
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            d.push(dist2(all[i], all[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(|x, y| x.total_cmp(y));
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Squared maximum mean discrepancy with kernel `exp(-|x-y|^2 / (2 h^2))`.
/// `bandwidth = None` selects the median heuristic.
pub fn mmd(a: &[f64], b: &[f64], dims: usize, bandwidth: Option<f64>, estimator: MmdEstimator) -> Result<f64> {
    if dims == 0 || !a.len().is_multiple_of(dims) || !b.len().is_multiple_of(dims) {
        return Err(Error::Config("point arrays are not multiples of dims".into()));
    }
    let (m, n) = (a.len() / dims, b.len() / dims);
    if m == 0 || n == 0 {
        return Err(Error::InsufficientData("MMD needs non-empty sets".into()));
    }
    if estimator == MmdEstimator::Unbiased && (m < 2 || n < 2) {
        return Err(Error::InsufficientData(
            "unbiased MMD needs at least two samples per set".into(),
        ));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::Config(format!("bandwidth must be positive, got {h}"))),
        None => median_bandwidth(a, b, dims),
    };
    let k = |x: &[f64], y: &[f64]| (-dist2(x, y) / (2.0 * h * h)).exp();
    let within = |x: &[f64], count: usize| -> f64 {
        let mut s = 0.0;
        for i in 0..count {
            for j in 0..count {
                if i == j && estimator == MmdEstimator::Unbiased {
                    continue;
                }
                s += k(point(x, dims, i), point(x, dims, j));
            }
        }
        let pairs = match estimator {
            MmdEstimator::Unbiased => count * (count - 1),
            MmdEstimator::Biased => count * count,
        };
        s / pairs as f64
    };
    let mut cross = 0.0;
    for i in 0..m {
        for j in 0..n {
            cross += k(point(a, dims, i), point(b, dims, j));
        }
    }
    cross /= (m * n) as f64;
    Ok(within(a, m) + within(b, n) - 2.0 * cross)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn biased_is_zero_for_equal_sets() {
        let a = [0.1, 0.2, 0.5, 0.5, 0.9, 0.1];
        let v = mmd(&a, &a, 2, None, MmdEstimator::Biased).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn unbiased_singleton_rejected() {
        assert!(matches!(
            mmd(&[0.0], &[1.0, 2.0], 1, None, MmdEstimator::Unbiased),
            Err(Error::InsufficientData(_))
        ));
        assert!(mmd(&[0.0], &[1.0], 1, Some(1.0), MmdEstimator::Biased).is_ok());
    }

    #[test]
    fn median_of_three_distances() {
        // points 0, 1, 3 -> distances 1, 3, 2 -> median 2
        assert_eq!(median_bandwidth(&[0.0, 1.0], &[3.0], 1), 2.0);
    }
}
