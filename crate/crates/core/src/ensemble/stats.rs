//! Sample statistics used on ensemble and shot data.

use crate::error::{Error, Result};

pub const DEFAULT_Z_THRESHOLD: f64 = 3.5;
const MAD_SCALE: f64 = 0.6745;

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance (two-pass).
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JackknifeEstimate {
    pub variance: f64,
    /// Jackknife standard error of `variance`.
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
}

impl JackknifeEstimate {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

/// Leave-one-out variances of `values`.
pub fn leave_one_out_variances(values: &[f64]) -> Vec<f64> {
    let mut buf = Vec::with_capacity(values.len().saturating_sub(1));
    (0..values.len())
        .map(|i| {
            buf.clear();
            buf.extend(
                values
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &v)| v),
            );
            variance(&buf)
        })
        .collect()
}

/// Sample variance with a 1-sd Jackknife interval.
///
/// Each leave-one-out replicate is itself an unbiased variance, so at least
/// three values are required.
pub fn jackknife_variance_ci(values: &[f64]) -> Result<JackknifeEstimate> {
    let n = values.len();
    if n < 3 {
        return Err(Error::InsufficientSamples { needed: 3, got: n });
    }
    let est = variance(values);
    let loo = leave_one_out_variances(values);
    let m = mean(&loo);
    let ss: f64 = loo.iter().map(|v| (v - m) * (v - m)).sum();
    let se = ((n - 1) as f64 / n as f64 * ss).sqrt();
    Ok(JackknifeEstimate {
        variance: est,
        se,
        lo: est - se,
        hi: est + se,
    })
}

/// Median; `values` must be nonempty.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierReport {
    pub kept: Vec<f64>,
    pub rejected: Vec<usize>,
    /// MAD was zero; nothing was rejected.
    pub degenerate_mad: bool,
}

/// Modified Z-score test: rejects |0.6745 (x − median) / MAD| > threshold.
pub fn reject_outliers_modified_z(values: &[f64], threshold: f64) -> Result<OutlierReport> {
    if values.len() < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            got: values.len(),
        });
    }
    if !(threshold > 0.0) {
        return Err(Error::InvalidParams("threshold must be > 0".into()));
    }
    let med = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&dev);
    if mad == 0.0 {
        log::warn!("median absolute deviation is zero; outlier rejection skipped");
        return Ok(OutlierReport {
            kept: values.to_vec(),
            rejected: Vec::new(),
            degenerate_mad: true,
        });
    }
    let mut kept = Vec::with_capacity(values.len());
    let mut rejected = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        if (MAD_SCALE * (v - med) / mad).abs() > threshold {
            rejected.push(i);
        } else {
            kept.push(v);
        }
    }
    Ok(OutlierReport {
        kept,
        rejected,
        degenerate_mad: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    // Textbook leave-one-out, written independently of the library code.
    fn brute_jackknife(x: &[f64]) -> (f64, f64) {
        let n = x.len();
        let var = |s: &[f64]| {
            let m = s.iter().sum::<f64>() / s.len() as f64;
            s.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (s.len() - 1) as f64
        };
        let mut reps = Vec::new();
        for i in 0..n {
            let mut s = Vec::new();
            for (j, v) in x.iter().enumerate() {
                if j != i {
                    s.push(*v);
                }
            }
            reps.push(var(&s));
        }
        let rm = reps.iter().sum::<f64>() / n as f64;
        let ss = reps.iter().map(|v| (v - rm) * (v - rm)).sum::<f64>();
        (var(x), ((n - 1) as f64 / n as f64 * ss).sqrt())
    }

    #[test]
    fn jackknife_hand_example() {
        // Replicates: var{2,3,4} = var{1,3,4}... = 1, 7/3, 7/3, 1.
        let j = jackknife_variance_ci(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_relative_eq!(j.variance, 5.0 / 3.0, epsilon = 1e-15);
        let reps = [1.0, 7.0 / 3.0, 7.0 / 3.0, 1.0];
        let m: f64 = reps.iter().sum::<f64>() / 4.0;
        let ss: f64 = reps.iter().map(|v| (v - m) * (v - m)).sum();
        assert_relative_eq!(j.se, (0.75 * ss).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(j.hi - j.lo, 2.0 * j.se);
    }

    #[test]
    fn jackknife_constant_and_short() {
        let j = jackknife_variance_ci(&[2.5; 7]).unwrap();
        assert_eq!((j.variance, j.se, j.lo, j.hi), (0.0, 0.0, 0.0, 0.0));
        assert!(matches!(
            jackknife_variance_ci(&[1.0, 2.0]),
            Err(Error::InsufficientSamples { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn jackknife_se_matches_asymptotics() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let nd = Normal::new(0.0, 2.0).unwrap();
        let x: Vec<f64> = (0..4000).map(|_| nd.sample(&mut rng)).collect();
        let j = jackknife_variance_ci(&x).unwrap();
        let expect = 4.0 * (2.0 / 3999.0f64).sqrt();
        assert!((j.se / expect - 1.0).abs() < 0.2, "{} vs {}", j.se, expect);
    }

    #[test]
    fn modified_z_planted_outlier() {
        let r = reject_outliers_modified_z(&[0.0, 0.1, -0.1, 0.05, 50.0], 3.5).unwrap();
        assert_eq!(r.rejected, vec![4]);
        assert_eq!(r.kept, vec![0.0, 0.1, -0.1, 0.05]);
        assert!(!r.degenerate_mad);
    }

    #[test]
    fn modified_z_degenerate_and_clean() {
        let r = reject_outliers_modified_z(&[1.0; 5], 3.5).unwrap();
        assert!(r.degenerate_mad && r.rejected.is_empty() && r.kept.len() == 5);
        let r = reject_outliers_modified_z(&[-2.0, -1.0, 0.0, 1.0, 2.0], 3.5).unwrap();
        assert!(r.rejected.is_empty());
        assert!(reject_outliers_modified_z(&[1.0, 2.0], 3.5).is_err());
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    proptest! {
        #[test]
        fn jackknife_equals_brute_force(x in prop::collection::vec(-1e3f64..1e3, 3..=10)) {
            let j = jackknife_variance_ci(&x).unwrap();
            let (v, se) = brute_jackknife(&x);
            prop_assert_eq!(j.variance, v);
            prop_assert_eq!(j.se, se);
        }

        #[test]
        fn rejection_partitions_input(x in prop::collection::vec(-10f64..10.0, 3..40)) {
            let r = reject_outliers_modified_z(&x, 3.5).unwrap();
            prop_assert_eq!(r.kept.len() + r.rejected.len(), x.len());
        }
    }
}
