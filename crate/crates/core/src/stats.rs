//! Plain Monte-Carlo estimates with CLT standard errors.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    /// Standard error of the mean (`s / √n`).
    pub std_error: f64,
    pub count: usize,
}

impl Estimate {
    /// Mean and standard error of `samples`. The samples are summed in
    /// sorted order so the result does not depend on the order they were
    /// produced in.
    pub fn from_samples(samples: impl IntoIterator<Item = f64>) -> Self {
        let mut xs: Vec<f64> = samples.into_iter().collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std_error: f64::NAN,
                count: 0,
            };
        }
        if xs[0] == xs[n - 1] {
            return Self {
                mean: xs[0],
                std_error: 0.0,
                count: n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            count: n,
        }
    }

    /// `|mean − target|` in standard errors; 0 when both coincide exactly.
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.mean - target).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.std_error
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mean.is_finite() && self.std_error.is_finite()
    }
}
