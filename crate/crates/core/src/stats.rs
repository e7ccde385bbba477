use serde::{Deserialize, Serialize};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// A Monte Carlo (or exact) estimate of an expectation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// Standard error of `mean`; zero for exact enumeration.
    pub stderr: f64,
    pub count: usize,
}

impl Estimate {
    pub fn exact(mean: f64, count: usize) -> Self {
        Estimate { mean, stderr: 0.0, count }
    }

    /// Sample mean and standard error using the unbiased variance.
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Estimate { mean: f64::NAN, stderr: f64::NAN, count: 0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (n - 1) as f64 / n as f64).sqrt()
        } else {
            0.0
        };
        Estimate { mean, stderr, count: n }
    }

    /// Probability-weighted expectation; standard error is zero.
    pub fn from_weighted(values: &[f64], weights: &[f64]) -> Self {
        let mean = values.iter().zip(weights).map(|(v, w)| v * w).sum();
        Estimate::exact(mean, values.len())
    }

    pub fn variance(&self) -> f64 {
        self.stderr * self.stderr * self.count as f64
    }

    pub fn ci95(&self) -> (f64, f64) {
        (self.mean - Z95 * self.stderr, self.mean + Z95 * self.stderr)
    }

    /// Multiply by a constant (used for sense translation).
    pub fn scaled(&self, c: f64) -> Self {
        Estimate { mean: c * self.mean, stderr: c.abs() * self.stderr, count: self.count }
    }
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_stderr_uses_unbiased_variance() {
        let e = Estimate::from_samples(&[1.0, -1.0]);
        assert_eq!(e.mean, 0.0);
        // s = sqrt(2), se = s / sqrt(2)
        assert!((e.stderr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_is_exact() {
        let e = Estimate::from_weighted(&[1.0, -1.0], &[0.5, 0.5]);
        assert_eq!(e.mean, 0.0);
        assert_eq!(e.stderr, 0.0);
    }
}
