//! Learning-rate range test: sweep the rate geometrically and watch the loss.

use crate::error::{Error, Result};

pub const SMOOTHING: f64 = 0.98;
pub const ABORT_FACTOR: f64 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub struct RangeTestResult {
    pub lrs: Vec<f64>,
    /// Bias-corrected exponential moving average of the loss.
    pub smoothed: Vec<f64>,
    /// Rate at the steepest smoothed descent, strictly inside the sweep.
    pub suggestion: Option<f64>,
    /// Stopped early because the loss blew up.
    pub aborted: bool,
}

impl RangeTestResult {
    /// True when the trace never decreased, so no rate can be suggested.
    pub fn is_flat(&self) -> bool {
        self.suggestion.is_none()
    }
}

/// Rate used at sweep step `k`.
pub fn range_lr(lr_min: f64, lr_max: f64, steps: usize, k: usize) -> f64 {
    if steps < 2 {
        return lr_min;
    }
    lr_min * (lr_max / lr_min).powf(k as f64 / (steps - 1) as f64)
}

/// Runs `train_step(lr) -> loss` once per sweep step.
pub fn lr_range_test(
    lr_min: f64,
    lr_max: f64,
    steps: usize,
    mut train_step: impl FnMut(f64) -> Result<f64>,
) -> Result<RangeTestResult> {
    if !(lr_min > 0.0 && lr_min < lr_max) {
        return Err(Error::Config("range test needs 0 < lr_min < lr_max".into()));
    }
    if steps < 3 {
        return Err(Error::Config("range test needs at least 3 steps".into()));
    }
    let mut lrs = Vec::with_capacity(steps);
    let mut smoothed = Vec::with_capacity(steps);
    let mut avg = 0.0;
    let mut best = f64::INFINITY;
    let mut aborted = false;
    for k in 0..steps {
        let lr = range_lr(lr_min, lr_max, steps, k);
        let loss = train_step(lr)?;
        if !loss.is_finite() {
            if k == 0 {
                return Err(Error::UnusableRange(format!(
                    "loss diverged at the first rate {lr:e}"
                )));
            }
            aborted = true;
            break;
        }
        avg = SMOOTHING * avg + (1.0 - SMOOTHING) * loss;
        let s = avg / (1.0 - SMOOTHING.powi(k as i32 + 1));
        lrs.push(lr);
        smoothed.push(s);
        if k > 0 && s > ABORT_FACTOR * best {
            aborted = true;
            break;
        }
        best = best.min(s);
    }
    let suggestion = steepest(&lrs, &smoothed);
    Ok(RangeTestResult {
        lrs,
        smoothed,
        suggestion,
        aborted,
    })
}

/// Rate at the most negative smoothed-loss difference, skipping the endpoints.
fn steepest(lrs: &[f64], smoothed: &[f64]) -> Option<f64> {
    let mut best: Option<(usize, f64)> = None;
    for k in 1..smoothed.len().saturating_sub(1) {
        let slope = smoothed[k + 1] - smoothed[k];
        // Rounding in the moving average is not a descent.
        let noise = 1e-12 * smoothed[k].abs().max(smoothed[k + 1].abs());
        if slope < -noise && best.is_none_or(|(_, b)| slope < b) {
            best = Some((k, slope));
        }
    }
    best.map(|(k, _)| lrs[k])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_rates() {
        let r = lr_range_test(1e-7, 10.0, 100, |_| Ok(1.0)).unwrap();
        assert_eq!(r.lrs.len(), 100);
        for (k, lr) in r.lrs.iter().enumerate() {
            let expect = 1e-7 * 1e8f64.powf(k as f64 / 99.0);
            assert!((lr - expect).abs() <= 1e-12 * expect);
        }
    }

    #[test]
    fn flat_trace_gives_no_suggestion() {
        let r = lr_range_test(1e-5, 1.0, 50, |_| Ok(2.5)).unwrap();
        assert!(r.is_flat());
    }

    #[test]
    fn suggestion_is_inside_the_range() {
        // Loss falls fastest around 1e-3, then explodes.
        let r = lr_range_test(1e-6, 1.0, 60, |lr| {
            let x = lr.log10() + 3.0;
            Ok(if x < 1.5 {
                2.0 - (x * 2.0).tanh()
            } else {
                2.0 + 10f64.powf(x)
            })
        })
        .unwrap();
        let s = r.suggestion.unwrap();
        assert!(s > 1e-6 && s < 1.0);
        assert!(s > 1e-4 && s < 1e-2, "{s}");
        assert!(r.aborted);
    }

    #[test]
    fn divergence_at_first_step() {
        assert!(matches!(
            lr_range_test(1e-3, 1.0, 10, |_| Ok(f64::NAN)),
            Err(Error::UnusableRange(_))
        ));
    }
}
