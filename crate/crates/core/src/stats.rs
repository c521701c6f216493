//! Summary statistics and the one-sided Welch test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n - 1 denominator).
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    variance(xs).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    /// P-value for the alternative `mean(a) > mean(b)`.
    pub p_value: f64,
}

pub fn welch_one_sided(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Insufficient("t-test needs at least 2 samples per side".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (variance(a) / na, variance(b) / nb);
    let diff = mean(a) - mean(b);
    let se2 = va + vb;
    if se2 == 0.0 {
        let (t, p) = if diff > 0.0 {
            (f64::INFINITY, 0.0)
        } else if diff < 0.0 {
            (f64::NEG_INFINITY, 1.0)
        } else {
            (0.0, 0.5)
        };
        return Ok(WelchTest { t, df: na + nb - 2.0, p_value: p });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Invariant(format!("t distribution: {e}")))?;
    Ok(WelchTest { t, df, p_value: 1.0 - dist.cdf(t) })
}

pub fn compare_significance(runs_a: &[f64], runs_b: &[f64]) -> Result<f64> {
    Ok(welch_one_sided(runs_a, runs_b)?.p_value)
}
