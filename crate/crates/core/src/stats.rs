//! Monte Carlo summaries.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    /// Standard error of the mean from the per-trial sample variance.
    pub stderr: f64,
    pub n: usize,
}

pub fn mean_estimate(xs: &[f64]) -> MeanEstimate {
    let n = xs.len();
    if n == 0 {
        return MeanEstimate {
            mean: f64::NAN,
            stderr: f64::NAN,
            n,
        };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let stderr = if n > 1 {
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    MeanEstimate { mean, stderr, n }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub ratio: f64,
    /// Delta-method standard error of `mean(num) / mean(den)`.
    pub stderr: f64,
    pub denominator: f64,
}

/// Ratio of means from paired per-trial samples.
pub fn ratio_of_means(num: &[f64], den: &[f64]) -> RatioEstimate {
    assert_eq!(num.len(), den.len(), "paired samples");
    let n = num.len();
    let mn = num.iter().sum::<f64>() / n as f64;
    let md = den.iter().sum::<f64>() / n as f64;
    let ratio = mn / md;
    let resid: Vec<f64> = num.iter().zip(den).map(|(a, b)| a - ratio * b).collect();
    let se_resid = mean_estimate(&resid).stderr;
    RatioEstimate {
        ratio,
        stderr: se_resid / md.abs(),
        denominator: md,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_stderr() {
        let e = mean_estimate(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        // sample variance 5/3, stderr sqrt(5/12)
        assert!((e.stderr - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn exact_ratio_has_zero_error() {
        let r = ratio_of_means(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0]);
        assert!((r.ratio - 2.0).abs() < 1e-15);
        assert!(r.stderr.abs() < 1e-15);
    }
}
