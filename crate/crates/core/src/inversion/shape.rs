//! Maximum-likelihood Pareto shape estimators.
//!
//! Observations are `(size, weight)` pairs, so a histogram bin of `w` flows
//! of equal size contributes one weighted term. A finite fitting range
//! `[lo, hi)` is handled either by truncation (sizes outside the range are
//! unknown) or by censoring (the number of sizes `>= hi` is known and each
//! contributes `P(X >= hi | X >= lo) = (lo/hi)^a`). Two likelihoods are
//! registered:
//!
//! * `hill`: continuous Pareto. Closed-form Hill estimator above a threshold,
//!   root of the truncated-likelihood score on a bounded range.
//! * `discrete`: the integer-grid Pareto obtained by evaluating the
//!   continuous ccdf at integers, `P(J = j) ∝ (lo/j)^a - (lo/(j+1))^a`.
//!   This is the law of the sampled sizes the rest of the crate models, and
//!   it removes the upward bias of the continuous Hill estimator on small
//!   integer sizes.

use crate::aggregate::FlowHistogram;
use crate::error::{Error, Result};
use crate::registry::{Named, Registry};

/// Minimum total weight required in the fitting range.
pub const MIN_OBSERVATIONS: f64 = 10.0;

const SHAPE_MIN: f64 = 1e-6;
const SHAPE_MAX: f64 = 1e3;

/// Upper end of the fitting range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Upper {
    Open,
    Truncated(f64),
    /// `count` further observations are known to be at least `at`.
    Censored {
        at: f64,
        count: f64,
    },
}

impl Upper {
    fn bound(self) -> Option<f64> {
        match self {
            Upper::Open => None,
            Upper::Truncated(hi) | Upper::Censored { at: hi, .. } => Some(hi),
        }
    }
}

/// How a finite segment end is treated when fitting a histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Truncated,
    Censored,
}

pub trait ShapeEstimator: Named + Send + Sync {
    /// Shape from observations already restricted to `[lo, upper)`.
    fn estimate(&self, obs: &[(f64, f64)], lo: f64, upper: Upper) -> Result<f64>;
}

pub struct Hill;

impl Named for Hill {
    fn name(&self) -> &'static str {
        "hill"
    }
}

impl ShapeEstimator for Hill {
    fn estimate(&self, obs: &[(f64, f64)], lo: f64, upper: Upper) -> Result<f64> {
        let n = check_observations(obs, lo, upper)?;
        let log_excess: f64 = obs.iter().map(|&(x, w)| w * (x / lo).ln()).sum();
        let exposure = match upper {
            Upper::Truncated(hi) => {
                let ln_ratio = (lo / hi).ln();
                let score = |a: f64| n / a - log_excess + n * ln_ratio / (-a * ln_ratio).exp_m1();
                return find_root(score);
            }
            Upper::Open => log_excess,
            Upper::Censored { at, count } => log_excess + count * (at / lo).ln(),
        };
        if exposure <= 0.0 {
            return Err(Error::OutOfRange(
                "all observations sit at the threshold; the shape diverges".into(),
            ));
        }
        Ok(n / exposure)
    }
}

pub struct DiscretePareto;

impl Named for DiscretePareto {
    fn name(&self) -> &'static str {
        "discrete"
    }
}

impl ShapeEstimator for DiscretePareto {
    fn estimate(&self, obs: &[(f64, f64)], lo: f64, upper: Upper) -> Result<f64> {
        let n = check_observations(obs, lo, upper)?;
        // (weight, ln((j+1)/j), ln(j/lo)) per distinct size
        let terms: Vec<(f64, f64, f64)> = obs
            .iter()
            .map(|&(j, w)| (w, (1.0 / j).ln_1p(), (j / lo).ln()))
            .collect();
        let score = |a: f64| {
            let s: f64 = terms
                .iter()
                .map(|&(w, step, excess)| w * (step / (a * step).exp_m1() - excess))
                .sum();
            match upper {
                Upper::Open => s,
                Upper::Truncated(hi) => {
                    let ln_ratio = (lo / hi).ln();
                    s + n * ln_ratio / (-a * ln_ratio).exp_m1()
                }
                Upper::Censored { at, count } => s - count * (at / lo).ln(),
            }
        };
        find_root(score)
    }
}

fn check_observations(obs: &[(f64, f64)], lo: f64, upper: Upper) -> Result<f64> {
    let hi = upper.bound();
    if !(lo.is_finite() && lo > 0.0) {
        return Err(Error::param(
            "lo",
            format!("threshold {lo} must be positive"),
        ));
    }
    if let Some(hi) = hi {
        if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::param(
                "hi",
                format!("upper end {hi} must exceed {lo}"),
            ));
        }
    }
    if let Upper::Censored { count, .. } = upper {
        if !(count.is_finite() && count >= 0.0) {
            return Err(Error::param(
                "count",
                format!("censored count {count} is invalid"),
            ));
        }
    }
    if obs.is_empty() {
        return Err(Error::EmptyInput("no observations in the fitting range"));
    }
    if let Some(&(x, _)) = obs
        .iter()
        .find(|&&(x, _)| x < lo || hi.is_some_and(|hi| x >= hi))
    {
        return Err(Error::param(
            "obs",
            format!("{x} lies outside the fitting range"),
        ));
    }
    let n: f64 = obs.iter().map(|o| o.1).sum();
    if n < MIN_OBSERVATIONS {
        return Err(Error::InsufficientData(format!(
            "{n} observations in range, need at least {MIN_OBSERVATIONS}"
        )));
    }
    Ok(n)
}

/// Root of a score that is positive at small shapes and negative at large
/// ones, by bisection.
fn find_root(score: impl Fn(f64) -> f64) -> Result<f64> {
    let (mut lo, mut hi) = (SHAPE_MIN, SHAPE_MAX);
    let (s_lo, s_hi) = (score(lo), score(hi));
    if !(s_lo.is_finite() && s_hi.is_finite()) {
        return Err(Error::NoConvergence(
            "score is not finite on the search interval".into(),
        ));
    }
    if s_hi > 0.0 {
        return Err(Error::OutOfRange(format!(
            "likelihood still increasing at shape {SHAPE_MAX}; the shape diverges"
        )));
    }
    if s_lo < 0.0 {
        return Err(Error::OutOfRange(format!(
            "likelihood decreasing at shape {SHAPE_MIN}; no positive shape fits"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if score(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            return Ok(0.5 * (lo + hi));
        }
    }
    Err(Error::NoConvergence(format!(
        "bisection stalled in [{lo}, {hi}]"
    )))
}

pub fn shape_estimators() -> Registry<dyn ShapeEstimator> {
    let mut reg: Registry<dyn ShapeEstimator> = Registry::new("shape estimator");
    reg.register(Box::new(Hill))
        .register(Box::new(DiscretePareto));
    reg
}

/// Histogram bins in `[j_lo, j_hi)` as weighted observations.
pub fn histogram_observations(
    hist: &FlowHistogram,
    j_lo: u64,
    j_hi: Option<u64>,
) -> Vec<(f64, f64)> {
    hist.range(j_lo, j_hi)
        .map(|(s, c)| (s as f64, c as f64))
        .collect()
}

/// Histogram-weighted Hill fit of sizes in `[j_lo, j_hi)`, truncated at a
/// finite `j_hi`.
pub fn fit_pareto_shape(hist: &FlowHistogram, j_lo: u64, j_hi: Option<u64>) -> Result<f64> {
    fit_pareto_shape_with(&Hill, hist, j_lo, j_hi, Boundary::Truncated)
}

pub fn fit_pareto_shape_with(
    estimator: &dyn ShapeEstimator,
    hist: &FlowHistogram,
    j_lo: u64,
    j_hi: Option<u64>,
    boundary: Boundary,
) -> Result<f64> {
    let obs = histogram_observations(hist, j_lo, j_hi);
    let upper = match (j_hi, boundary) {
        (None, _) => Upper::Open,
        (Some(hi), Boundary::Truncated) => Upper::Truncated(hi as f64),
        (Some(hi), Boundary::Censored) => Upper::Censored {
            at: hi as f64,
            count: hist.range(hi, None).map(|(_, c)| c as f64).sum(),
        },
    };
    estimator.estimate(&obs, j_lo as f64, upper)
}
