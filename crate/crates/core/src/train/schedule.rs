//! One-cycle learning-rate/momentum policy and per-group rate scaling.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OneCycleConfig {
    pub lr_max: f64,
    pub total_steps: usize,
    /// Fraction of steps spent warming up.
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    /// `(high, low)`: momentum starts high, dips at the peak, returns high.
    pub momentum: (f64, f64),
}

impl OneCycleConfig {
    pub fn new(lr_max: f64, total_steps: usize) -> Self {
        OneCycleConfig {
            lr_max,
            total_steps,
            pct_start: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
            momentum: (0.95, 0.85),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr_max > 0.0 && self.lr_max.is_finite()) {
            return bad("lr_max must be positive");
        }
        if self.total_steps == 0 {
            return bad("total_steps must be positive");
        }
        if !(self.pct_start > 0.0 && self.pct_start < 1.0) {
            return bad("pct_start must lie in (0, 1)");
        }
        if !(self.div_factor > 1.0 && self.final_div_factor > 1.0) {
            return bad("div factors must exceed 1");
        }
        Ok(())
    }

    pub fn lr_start(&self) -> f64 {
        self.lr_max / self.div_factor
    }

    pub fn lr_end(&self) -> f64 {
        self.lr_max / (self.div_factor * self.final_div_factor)
    }

    /// Step index (possibly fractional) at which the peak is reached.
    pub fn peak(&self) -> f64 {
        self.pct_start * self.total_steps as f64
    }
}

/// Cosine interpolation from `start` (at `frac = 0`) to `end` (at `frac = 1`).
fn cosine(start: f64, end: f64, frac: f64) -> f64 {
    end + (start - end) / 2.0 * (1.0 + (PI * frac).cos())
}

/// Learning rate and momentum at `step`.
pub fn one_cycle(cfg: &OneCycleConfig, step: usize) -> Result<(f64, f64)> {
    cfg.validate()?;
    if step >= cfg.total_steps {
        return Err(Error::Config(format!(
            "step {step} outside schedule of {} steps",
            cfg.total_steps
        )));
    }
    let (hi, lo) = cfg.momentum;
    let peak = cfg.peak();
    let s = step as f64;
    if s <= peak {
        let frac = s / peak;
        Ok((
            cosine(cfg.lr_start(), cfg.lr_max, frac),
            cosine(hi, lo, frac),
        ))
    } else {
        let span = (cfg.total_steps - 1) as f64 - peak;
        let frac = if span > 0.0 {
            ((s - peak) / span).min(1.0)
        } else {
            1.0
        };
        Ok((cosine(cfg.lr_max, cfg.lr_end(), frac), cosine(lo, hi, frac)))
    }
}

/// Group `g` (0 = input side) gets `base_lr / factor^(n_groups - 1 - g)`.
pub fn discriminative_lrs(base_lr: f64, n_groups: usize, factor: f64) -> Result<Vec<f64>> {
    if n_groups == 0 {
        return Err(Error::Config("need at least one layer group".into()));
    }
    if !(factor > 1.0) {
        return Err(Error::Config(format!(
            "discriminative factor must exceed 1, got {factor}"
        )));
    }
    Ok((0..n_groups)
        .map(|g| base_lr / factor.powi((n_groups - 1 - g) as i32))
        .collect())
}
