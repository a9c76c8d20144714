//! Small statistics helpers shared by the Monte Carlo checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Running mean/variance (Welford). Merging is associative.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        self.mean += d * other.n as f64 / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            f64::INFINITY
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    /// Standard error of the sample variance under a Gaussian-tail assumption,
    /// `sqrt(2/(n-1)) var`.
    pub fn variance_stderr_gaussian(&self) -> f64 {
        (2.0 / (self.n.max(2) - 1) as f64).sqrt() * self.variance()
    }
}

impl FromIterator<f64> for Welford {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut w = Welford::default();
        for x in iter {
            w.push(x);
        }
        w
    }
}

/// Mean and standard error of the sample second moment `E[X^2]`, from the
/// fourth moment, without assuming Gaussianity.
pub fn second_moment(xs: &[f64]) -> (f64, f64) {
    let sq: Welford = xs.iter().map(|x| x * x).collect();
    (sq.mean(), sq.stderr())
}

/// Sample variance with a distribution-free standard error (via the delta method).
pub fn variance_with_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m: f64 = xs.iter().sum::<f64>() / n;
    let c: Welford = xs.iter().map(|x| (x - m) * (x - m)).collect();
    (c.mean() * n / (n - 1.0), c.stderr())
}

/// Ordinary least squares `y = a + b x`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_stderr: f64,
    pub points: usize,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    weighted_linear_fit(x, y, None)
}

/// Weighted least squares with weights `1/sigma_i^2` when `sigma` is given;
/// the slope error then comes from the weights, otherwise from the residuals.
pub fn weighted_linear_fit(x: &[f64], y: &[f64], sigma: Option<&[f64]>) -> Result<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::EmptyFit(format!("{n} points, need at least 2")));
    }
    let w: Vec<f64> = match sigma {
        Some(s) => s.iter().map(|s| 1.0 / (s * s)).collect(),
        None => vec![1.0; n],
    };
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(&w).map(|(a, w)| a * w).sum::<f64>() / sw;
    let ym = y.iter().zip(&w).map(|(a, w)| a * w).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(a, w)| w * (a - xm) * (a - xm)).sum();
    if sxx <= 0.0 {
        return Err(Error::EmptyFit("abscissae are all equal".into()));
    }
    let sxy: f64 = x
        .iter()
        .zip(y)
        .zip(&w)
        .map(|((a, b), w)| w * (a - xm) * (b - ym))
        .sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let slope_stderr = if sigma.is_some() {
        (1.0 / sxx).sqrt()
    } else if n > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| {
                let r = b - intercept - slope * a;
                r * r
            })
            .sum();
        (rss / (n - 2) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LinearFit {
        intercept,
        slope,
        slope_stderr,
        points: n,
    })
}

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// `|a - b| <= k * sqrt(sa^2 + sb^2)`.
pub fn within_sigma(a: f64, sa: f64, b: f64, sb: f64, k: f64) -> bool {
    (a - b).abs() <= k * (sa * sa + sb * sb).sqrt()
}

/// Percentile by linear interpolation between order statistics.
pub fn percentile(xs: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(xs: &[f64]) -> f64 {
    percentile(xs, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_matches_two_pass_and_merges() {
        let xs: Vec<f64> = (0..101)
            .map(|i| ((i * 37) % 17) as f64 * 0.3 - 1.0)
            .collect();
        let w: Welford = xs.iter().copied().collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((w.mean() - m).abs() < 1e-14);
        assert!((w.variance() - v).abs() < 1e-13);
        let mut a: Welford = xs[..40].iter().copied().collect();
        let b: Welford = xs[40..].iter().copied().collect();
        a.merge(&b);
        assert!((a.mean() - m).abs() < 1e-14);
        assert!((a.variance() - v).abs() < 1e-13);
    }

    #[test]
    fn fit_recovers_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|x| 2.0 - 3.0 * x).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope + 3.0).abs() < 1e-12);
        assert!((f.intercept - 2.0).abs() < 1e-12);
        assert!(f.slope_stderr < 1e-10);
        assert!(linear_fit(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn percentiles() {
        let xs = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(median(&xs), 3.0);
        assert_eq!(percentile(&xs, 1.0), 5.0);
        assert_eq!(percentile(&xs, 0.25), 2.0);
    }
}
