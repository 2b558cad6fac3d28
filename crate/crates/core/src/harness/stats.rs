use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Area under a learning curve, as the mean return over its points.
/// Points before the first finished episode count as zero return.
pub fn auc(returns: &[f64]) -> f64 {
    if returns.is_empty() {
        return 0.0;
    }
    returns
        .iter()
        .map(|r| if r.is_nan() { 0.0 } else { *r })
        .sum::<f64>()
        / returns.len() as f64
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// One-sided paired t-test of `mean(a - b) > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedTest {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    /// Probability of a difference at least this large when there is none.
    pub p_value: f64,
    /// One-sided 95% lower confidence bound on the mean difference.
    pub lower_95: f64,
}

impl PairedTest {
    pub fn significant(&self, level: f64) -> bool {
        self.p_value < level && self.mean_diff > 0.0
    }
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "paired samples of sizes {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "a paired test needs at least two pairs".into(),
        ));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&d);
    let se = std_dev(&d) / (n as f64).sqrt();
    let df = (n - 1) as f64;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numeric(e.to_string()))?;
    // Identical differences: certain when positive, no evidence otherwise.
    let (t, p_value, lower_95) = if se == 0.0 {
        if m > 0.0 {
            (f64::INFINITY, 0.0, m)
        } else {
            (if m < 0.0 { f64::NEG_INFINITY } else { 0.0 }, 1.0, m)
        }
    } else {
        let t = m / se;
        (t, 1.0 - dist.cdf(t), m - dist.inverse_cdf(0.95) * se)
    };
    Ok(PairedTest {
        n,
        mean_diff: m,
        t,
        p_value,
        lower_95,
    })
}
