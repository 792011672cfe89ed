use std::collections::BTreeSet;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{CofError, Result};

/// Default Jaccard cut points between ratings 0|1, 1|2 and 2|3.
pub const DEFAULT_JACCARD_THRESHOLDS: [f64; 3] = [0.2, 0.4, 0.7];

/// Jaccard similarity of two sets; 0 when both are empty.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Bins the Jaccard similarity of two aspect sets into a 0–3 rating: the
/// rating is the number of thresholds the similarity reaches.
pub fn jaccard_to_rating<T: Ord>(
    a: &BTreeSet<T>,
    b: &BTreeSet<T>,
    thresholds: [f64; 3],
) -> Result<u8> {
    let ascending = thresholds.windows(2).all(|w| w[0] < w[1]);
    if !ascending || thresholds[0] <= 0.0 || thresholds[2] > 1.0 {
        return Err(CofError::Usage(format!(
            "thresholds {thresholds:?} must be strictly ascending in (0, 1]"
        )));
    }
    let j = jaccard(a, b);
    Ok(thresholds.iter().filter(|&&t| j >= t).count() as u8)
}

/// Mean of several annotators' ratings rounded half up.
pub fn aggregate_annotations(ratings: &[u8]) -> Result<u8> {
    if ratings.is_empty() {
        return Err(CofError::Input("no ratings to aggregate".into()));
    }
    if let Some(r) = ratings.iter().find(|&&r| r > 3) {
        return Err(CofError::Input(format!("rating {r} outside 0..=3")));
    }
    let sum: usize = ratings.iter().map(|&r| r as usize).sum();
    let n = ratings.len();
    Ok(((2 * sum + n) / (2 * n)) as u8)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZTest {
    pub z: f64,
    /// Two-tailed p-value.
    pub p: f64,
}

impl ZTest {
    /// `"**"` below 0.01, `"*"` below 0.05, otherwise empty.
    pub fn marker(&self) -> &'static str {
        if self.p < 0.01 {
            "**"
        } else if self.p < 0.05 {
            "*"
        } else {
            ""
        }
    }
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sample two-tailed Z-test on per-run metric values, using sample
/// variances.
pub fn z_test(a: &[f64], b: &[f64]) -> Result<ZTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(CofError::Usage(format!(
            "z-test needs at least 2 values per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let se = (va / a.len() as f64 + vb / b.len() as f64).sqrt();
    let diff = ma - mb;
    if se == 0.0 {
        return Ok(if diff == 0.0 {
            ZTest { z: 0.0, p: 1.0 }
        } else {
            ZTest {
                z: diff.signum() * f64::INFINITY,
                p: 0.0,
            }
        });
    }
    let z = diff / se;
    let normal = Normal::standard();
    Ok(ZTest {
        z,
        p: 2.0 * normal.sf(z.abs()),
    })
}
