//! Ordinary least squares and the exponent estimates built on it.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; NaN with two points.
    pub slope_se: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Least-squares line through `(xs[i], ys[i])`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() {
        return Err(Error::Fit("x and y lengths differ".into()));
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::Fit(format!("{n} points are not enough for a line")));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    let slope_se = if n > 2 {
        (ss_res / (nf - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_se,
        r_squared,
        points: n,
    })
}

/// A fitted scaling exponent together with the data window it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentEstimate {
    pub value: f64,
    pub standard_error: f64,
    /// Inclusive window of the abscissa (times or scale levels).
    pub fit_window: (f64, f64),
    pub r_squared: f64,
    pub points: usize,
    /// Set when the underlying series is flat.
    pub degenerate: bool,
    /// The raw fit the exponent was derived from.
    pub fit: LinearFit,
}

/// Outcome of a chi-square goodness-of-fit test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    /// Number of bins after pooling sparse ones.
    pub bins: usize,
    pub samples: u64,
}

/// Tests `observed[i]` counts against probabilities `expected[i]`.
///
/// Bins whose expected count is below `min_expected` are pooled into one
/// bin; if that pooled bin is still too small it is merged into the
/// smallest remaining bin. A count in a bin of zero probability gives an
/// infinite statistic and a p-value of zero.
pub fn chi_square_test(observed: &[u64], expected: &[f64], min_expected: f64) -> Result<ChiSquareTest> {
    if observed.len() != expected.len() {
        return Err(Error::Fit("observed and expected lengths differ".into()));
    }
    let samples: u64 = observed.iter().sum();
    if samples == 0 {
        return Err(Error::Fit("no samples".into()));
    }
    let total_p: f64 = expected.iter().sum();
    let n = samples as f64;
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut pooled = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(expected) {
        let e = p / total_p * n;
        if e == 0.0 && o > 0 {
            return Ok(ChiSquareTest {
                statistic: f64::INFINITY,
                degrees_of_freedom: 0,
                p_value: 0.0,
                bins: 0,
                samples,
            });
        }
        if e < min_expected {
            pooled.0 += o as f64;
            pooled.1 += e;
        } else {
            bins.push((o as f64, e));
        }
    }
    if pooled.1 > 0.0 {
        if pooled.1 >= min_expected || bins.is_empty() {
            bins.push(pooled);
        } else {
            let smallest = (0..bins.len())
                .min_by(|&a, &b| bins[a].1.total_cmp(&bins[b].1))
                .unwrap();
            bins[smallest].0 += pooled.0;
            bins[smallest].1 += pooled.1;
        }
    }
    if bins.len() < 2 {
        return Err(Error::Fit("fewer than two bins after pooling".into()));
    }
    let statistic: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = bins.len() - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Fit(e.to_string()))?;
    Ok(ChiSquareTest {
        statistic,
        degrees_of_freedom: dof,
        p_value: dist.sf(statistic),
        bins: bins.len(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let f = linear_fit(&xs, &ys).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14);
        assert!((f.intercept - 1.0).abs() < 1e-14);
        assert_eq!(f.r_squared, 1.0);
        assert!(f.slope_se.abs() < 1e-12);
    }

    #[test]
    fn flat_series_has_zero_slope() {
        let f = linear_fit(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]).unwrap();
        assert_eq!(f.slope, 0.0);
        assert_eq!(f.r_squared, 1.0);
    }

    #[test]
    fn too_few_points() {
        assert!(linear_fit(&[1.0], &[1.0]).is_err());
        assert!(linear_fit(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn chi_square_accepts_exact_counts_and_rejects_skew() {
        let p = [0.25, 0.25, 0.5];
        let t = chi_square_test(&[250, 250, 500], &p, 5.0).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.p_value, 1.0);
        let t = chi_square_test(&[400, 100, 500], &p, 5.0).unwrap();
        assert!(t.p_value < 1e-10);
        let t = chi_square_test(&[0, 10, 12], &[0.0, 0.5, 0.5], 5.0).unwrap();
        assert!(t.statistic.is_finite());
        let t = chi_square_test(&[1, 1, 1], &[0.0, 0.5, 0.5], 5.0).unwrap();
        assert_eq!(t.p_value, 0.0);
    }

    #[test]
    fn chi_square_pools_sparse_bins() {
        let p = [0.49, 0.49, 0.01, 0.01];
        let t = chi_square_test(&[49, 49, 1, 1], &p, 5.0).unwrap();
        assert_eq!(t.bins, 2);
    }

    proptest! {
        #[test]
        fn r_squared_in_unit_interval(ys in prop::collection::vec(-1e3f64..1e3, 3..40)) {
            let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
            let f = linear_fit(&xs, &ys).unwrap();
            prop_assert!((0.0..=1.0).contains(&f.r_squared));
        }

        #[test]
        fn recovers_affine_maps(a in -10f64..10.0, b in -10f64..10.0) {
            let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.7).collect();
            let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let f = linear_fit(&xs, &ys).unwrap();
            prop_assert!((f.slope - a).abs() < 1e-9);
            prop_assert!((f.intercept - b).abs() < 1e-9);
        }
    }
}
