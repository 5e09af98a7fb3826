//! Scalar estimators: tail ratio η, large-flow count, geometric head and
//! total flow count.

use serde::{Deserialize, Serialize};

use crate::aggregate::Ccdf;
use crate::error::{check_probability, Error, Result};
use crate::forward::geom_poisson_sum;

/// Original-domain ccdf recovered from the sampled one on the grid `j/p`:
/// `P(v >= j/p) ≈ ν P(ṽ >= j)`. Returns `(j/p, value)` pairs.
pub fn rescale_tail(sampled_ccdf: &Ccdf, p: f64, nu: f64) -> Result<Vec<(f64, f64)>> {
    check_probability("p", p)?;
    check_probability("nu", nu)?;
    Ok(sampled_ccdf
        .iter()
        .map(|(j, c)| (j as f64 / p, nu * c))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaEstimate {
    /// Mean of the per-size ratios.
    pub eta: f64,
    /// `max |η_j - η| / η` over the averaging range.
    pub spread: f64,
}

/// Averages `η_j = P(ṽ >= j) / (b0 p / j)^{a1}` over `j0..=j1`.
pub fn estimate_eta(
    sampled_ccdf: &Ccdf,
    a1: f64,
    b0: u64,
    p: f64,
    j0: u64,
    j1: u64,
) -> Result<EtaEstimate> {
    check_probability("p", p)?;
    if !(a1.is_finite() && a1 > 0.0) {
        return Err(Error::param("a1", format!("{a1} is not positive")));
    }
    if j0 > j1 || j0 == 0 {
        return Err(Error::EmptyInput("empty range for the tail ratio"));
    }
    let ratios: Vec<f64> = (j0..=j1)
        .filter_map(|j| sampled_ccdf.get(j).filter(|&c| c > 0.0).map(|c| (j, c)))
        .map(|(j, c)| c / (b0 as f64 * p / j as f64).powf(a1))
        .collect();
    if ratios.is_empty() {
        return Err(Error::EmptyInput(
            "sampled ccdf has no positive points in the range",
        ));
    }
    let eta = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let spread = ratios
        .iter()
        .map(|r| (r - eta).abs() / eta)
        .fold(0.0, f64::max);
    Ok(EtaEstimate { eta, spread })
}

/// Flow counts are truncated toward zero when reported as integers.
pub fn report_count(x: f64) -> u64 {
    if x.is_finite() && x > 0.0 {
        x.floor() as u64
    } else {
        0
    }
}

/// Number of flows with at least `b0` packets, `η K_s`, as a reported count.
pub fn estimate_k0_plus(eta: f64, sampled_flows: u64) -> Result<u64> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::param("eta", format!("{eta} is not positive")));
    }
    if sampled_flows == 0 {
        return Err(Error::param("K_s", "no sampled flows"));
    }
    Ok(report_count(eta * sampled_flows as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadSolution {
    pub r_hat: f64,
    /// `r e^{-p}`.
    pub q: f64,
    pub k0_minus: f64,
}

/// Solves `W_j = K0⁻ S_j(r, p) + T_j` for `j = 1, 2`.
///
/// With `S_2 / S_1 = p (1 + q) / (2 (1 - q))` the ratio of the two equations
/// gives `q = (2 - R) / (2 + R)` with `R = p (W_1 - T_1) / (W_2 - T_2)`.
pub fn solve_head(
    w1: f64,
    w2: f64,
    sampled_flows: u64,
    p: f64,
    tail_terms: Option<(f64, f64)>,
) -> Result<HeadSolution> {
    check_probability("p", p)?;
    if w1 < 1.0 || w2 < 1.0 {
        return Err(Error::ModelMismatch(format!(
            "need flows sampled once and twice to fit the head (W1={w1}, W2={w2})"
        )));
    }
    if w1 + w2 > sampled_flows as f64 {
        return Err(Error::param(
            "K_s",
            format!("W1 + W2 = {} exceeds K_s = {sampled_flows}", w1 + w2),
        ));
    }
    let (t1, t2) = tail_terms.unwrap_or((0.0, 0.0));
    let (h1, h2) = (w1 - t1, w2 - t2);
    if h1 <= 0.0 || h2 <= 0.0 {
        return Err(Error::ModelMismatch(format!(
            "tail terms ({t1:.1}, {t2:.1}) leave nothing for the head (W1={w1}, W2={w2})"
        )));
    }
    let ratio = p * h1 / h2;
    let q = (2.0 - ratio) / (2.0 + ratio);
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::ModelMismatch(format!(
            "W1/W2 = {} implies q = {q}, outside (0, 1)",
            h1 / h2
        )));
    }
    let r_hat = q * p.exp();
    if r_hat >= 1.0 {
        return Err(Error::ModelMismatch(format!(
            "W1/W2 = {} implies a head ratio r = {r_hat} >= 1",
            h1 / h2
        )));
    }
    let k0_minus = h1 / geom_poisson_sum(r_hat, p, 1)?;
    Ok(HeadSolution { r_hat, q, k0_minus })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountEstimate {
    pub k_hat: f64,
    pub nu_hat: f64,
    /// Set when `K_s / K̂ > 1`; `nu_hat` is then reported as 1.
    pub nu_exceeds_one: bool,
}

pub fn estimate_counts(k0_plus: f64, k0_minus: f64, sampled_flows: u64) -> Result<CountEstimate> {
    if !(k0_plus >= 0.0 && k0_minus >= 0.0) {
        return Err(Error::param("counts", "flow counts must be non-negative"));
    }
    if sampled_flows == 0 {
        return Err(Error::param("K_s", "no sampled flows"));
    }
    let k_hat = k0_plus + k0_minus;
    if k_hat <= 0.0 {
        return Err(Error::OutOfRange(
            "estimated total flow count is zero".into(),
        ));
    }
    let raw = sampled_flows as f64 / k_hat;
    Ok(CountEstimate {
        k_hat,
        nu_hat: raw.min(1.0),
        nu_exceeds_one: raw > 1.0,
    })
}
