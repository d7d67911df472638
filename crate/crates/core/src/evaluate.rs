//! Back-transformation, forecast averaging, error measures and the
//! one-sided Diebold-Mariano test.

use std::collections::VecDeque;
use std::f64::consts::SQRT_2;

use libm::erfc;
use thiserror::Error;

use crate::kernels::inverse_normal_cdf;

/// Trailing days used to calibrate the weighted average.
pub const CALIBRATION_WINDOW: usize = 7;
/// Shortest loss series accepted by the DM test.
pub const DM_MIN_LENGTH: usize = 30;

#[derive(Debug, Error, PartialEq)]
pub enum EvaluateError {
    #[error("only {found} of {needed} calibration days are available")]
    InsufficientCalibration { needed: usize, found: usize },
    #[error("naive MAE is zero")]
    ZeroNaiveMae,
    #[error("DM test needs at least {DM_MIN_LENGTH} observations, got {0}")]
    SeriesTooShort(usize),
    #[error("loss series differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

pub type Result<T, E = EvaluateError> = std::result::Result<T, E>;

/// `sigma * z + mu + last_price`.
pub fn invert_transform(z: f64, mu: f64, sigma: f64, last_price: f64) -> f64 {
    sigma * z + mu + last_price
}

pub fn arithmetic_average(forecasts: &[f64; 4]) -> f64 {
    forecasts.iter().sum::<f64>() / 4.0
}

/// Inverse-MAE weights for the three set forecasts and the naive forecast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragingWeights(pub [f64; 4]);

impl AveragingWeights {
    /// Sources with zero trailing MAE share all the weight.
    pub fn from_maes(maes: &[f64; 4]) -> Self {
        let zeros = maes.iter().filter(|&&m| m == 0.0).count();
        let mut w = [0.0; 4];
        if zeros > 0 {
            for (wi, m) in w.iter_mut().zip(maes) {
                if *m == 0.0 {
                    *wi = 1.0 / zeros as f64;
                }
            }
        } else {
            let total: f64 = maes.iter().map(|m| 1.0 / m).sum();
            for (wi, m) in w.iter_mut().zip(maes) {
                *wi = (1.0 / m) / total;
            }
        }
        Self(w)
    }

    pub fn apply(&self, forecasts: &[f64; 4]) -> f64 {
        self.0.iter().zip(forecasts).map(|(w, f)| w * f).sum()
    }
}

pub fn weighted_average(forecasts: &[f64; 4], maes: &[f64; 4]) -> f64 {
    let w = AveragingWeights::from_maes(maes);
    if maes.iter().all(|m| *m == maes[0]) {
        return arithmetic_average(forecasts);
    }
    w.apply(forecasts)
}

/// Rolling absolute errors of the four averaged sources over the last `W` scored days.
#[derive(Debug, Clone, PartialEq)]
pub struct TrailingErrors {
    window: usize,
    history: VecDeque<[f64; 4]>,
}

impl TrailingErrors {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            history: VecDeque::with_capacity(window + 1),
        }
    }

    pub fn push(&mut self, abs_errors: [f64; 4]) {
        self.history.push_back(abs_errors);
        if self.history.len() > self.window {
            self.history.pop_front();
        }
    }

    pub fn maes(&self) -> Result<[f64; 4]> {
        if self.history.len() < self.window {
            return Err(EvaluateError::InsufficientCalibration {
                needed: self.window,
                found: self.history.len(),
            });
        }
        let mut out = [0.0; 4];
        for e in &self.history {
            for (o, v) in out.iter_mut().zip(e) {
                *o += v;
            }
        }
        Ok(out.map(|s| s / self.window as f64))
    }
}

pub fn mae(forecasts: &[f64], actuals: &[f64]) -> f64 {
    assert_eq!(forecasts.len(), actuals.len());
    forecasts.iter().zip(actuals).map(|(f, a)| (f - a).abs()).sum::<f64>() / forecasts.len() as f64
}

/// `(model - naive) / naive`; negative values are improvements.
pub fn rmae(model_mae: f64, naive_mae: f64) -> Result<f64> {
    if naive_mae == 0.0 {
        return Err(EvaluateError::ZeroNaiveMae);
    }
    Ok((model_mae - naive_mae) / naive_mae)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmResult {
    pub statistic: f64,
    pub p_value: f64,
    pub reject_5pct: bool,
}

/// Default Bartlett bandwidth `floor(N^(1/3))`.
pub fn dm_bandwidth(n: usize) -> usize {
    let mut k = (n as f64).cbrt().floor() as usize;
    // Guard against cube roots of perfect cubes landing just below the integer.
    while (k + 1).pow(3) <= n {
        k += 1;
    }
    k
}

fn upper_tail(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// One-sided test of `H0: E[loss_naive - loss_model] <= 0` with a Bartlett
/// long-run variance. `lag = None` uses `floor(N^(1/3))`.
pub fn dm_test(loss_naive: &[f64], loss_model: &[f64], lag: Option<usize>) -> Result<DmResult> {
    if loss_naive.len() != loss_model.len() {
        return Err(EvaluateError::LengthMismatch(loss_naive.len(), loss_model.len()));
    }
    let n = loss_naive.len();
    if n < DM_MIN_LENGTH {
        return Err(EvaluateError::SeriesTooShort(n));
    }
    let d: Vec<f64> = loss_naive.iter().zip(loss_model).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = d.iter().map(|v| v - mean).collect();
    let lag = lag.unwrap_or_else(|| dm_bandwidth(n)).min(n - 1);
    let autocov = |k: usize| dev[k..].iter().zip(&dev).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let mut var = autocov(0);
    for k in 1..=lag {
        var += 2.0 * (1.0 - k as f64 / (lag as f64 + 1.0)) * autocov(k);
    }
    let z95 = inverse_normal_cdf(0.95).expect("valid probability");
    let statistic = if var > 0.0 {
        mean / (var / n as f64).sqrt()
    } else if mean == 0.0 {
        0.0
    } else {
        mean.signum() * f64::MAX
    };
    Ok(DmResult {
        statistic,
        p_value: upper_tail(statistic),
        reject_5pct: statistic > z95,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn inversion_examples() {
        assert_eq!(invert_transform(0.0, 0.0, 1.0, 40.0), 40.0);
        assert_abs_diff_eq!(invert_transform(1.5, 0.2, 2.0, 40.0), 43.2, epsilon = 1e-12);
    }

    #[test]
    fn averages() {
        assert_eq!(arithmetic_average(&[1.0, 2.0, 3.0, 4.0]), 2.5);
        assert_eq!(AveragingWeights::from_maes(&[1.0; 4]).0, [0.25; 4]);
        let w = AveragingWeights::from_maes(&[1.0, 2.0, 2.0, 2.0]).0;
        for (a, b) in w.iter().zip([0.4, 0.2, 0.2, 0.2]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert_eq!(weighted_average(&[5.0, 6.0, 7.0, 8.0], &[1.0, 0.0, 2.0, 3.0]), 6.0);
        assert_eq!(weighted_average(&[1.0, 2.0, 3.0, 4.0], &[0.7; 4]), 2.5);
        let split = AveragingWeights::from_maes(&[0.0, 1.0, 0.0, 1.0]).0;
        assert_eq!(split, [0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn trailing_window() {
        let mut t = TrailingErrors::new(3);
        t.push([1.0; 4]);
        t.push([2.0; 4]);
        assert_eq!(
            t.maes(),
            Err(EvaluateError::InsufficientCalibration { needed: 3, found: 2 })
        );
        t.push([3.0; 4]);
        t.push([4.0, 0.0, 0.0, 0.0]);
        assert_eq!(t.maes().unwrap(), [3.0, 5.0 / 3.0, 5.0 / 3.0, 5.0 / 3.0]);
    }

    #[test]
    fn error_measures() {
        assert_eq!(mae(&[1.0, 0.0], &[0.0, 3.0]), 2.0);
        assert_abs_diff_eq!(rmae(0.97, 1.0).unwrap(), -0.03, epsilon = 1e-15);
        assert_eq!(rmae(1.0, 1.0).unwrap(), 0.0);
        assert_eq!(rmae(1.0, 0.0), Err(EvaluateError::ZeroNaiveMae));
    }

    #[test]
    fn dm_degenerate_cases() {
        let a: Vec<f64> = (0..40).map(|i| (i % 5) as f64).collect();
        let r = dm_test(&a, &a, None).unwrap();
        assert_eq!((r.statistic, r.reject_5pct), (0.0, false));
        let b: Vec<f64> = a.iter().map(|v| v - 1.0).collect();
        let r = dm_test(&a, &b, None).unwrap();
        assert_eq!(r.statistic, f64::MAX);
        assert!(r.reject_5pct);
        assert_eq!(
            dm_test(&a[..10], &a[..10], None),
            Err(EvaluateError::SeriesTooShort(10))
        );
    }

    #[test]
    fn dm_antisymmetric() {
        let a: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 * 0.3).collect();
        let b: Vec<f64> = (0..50).map(|i| ((i * 13) % 7) as f64 * 0.5).collect();
        let x = dm_test(&a, &b, None).unwrap().statistic;
        let y = dm_test(&b, &a, None).unwrap().statistic;
        assert_eq!(x, -y);
    }

    #[test]
    fn bandwidth() {
        assert_eq!(dm_bandwidth(366), 7);
        assert_eq!(dm_bandwidth(343), 7);
        assert_eq!(dm_bandwidth(30), 3);
    }
}
