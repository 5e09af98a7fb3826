//! Serialized inversion results.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::inversion::estimate::HeadSolution;
use crate::model::{FlowSizeModel, ModelSpec};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `max |η_j - η| / η` over the averaging range.
    pub eta_spread: f64,
    /// Last sampled size used when averaging η.
    pub eta_upper: u64,
    /// `(W_j - K̂ Q_j) / W_j` of the recovered model for `j = 1, 2, …`;
    /// `None` where `W_j = 0`.
    pub head_residuals: Vec<Option<f64>>,
    /// Squared error of the log-log segmentation.
    pub fit_sse: f64,
    /// Set when `K_s / K̂` exceeded one before clamping.
    pub nu_exceeds_one: bool,
    /// Head fit under every tail-correction mode that succeeded.
    pub head_solutions: Vec<NamedHeadSolution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedHeadSolution {
    pub tail_correction: String,
    /// `(T_1, T_2)`.
    pub tail_terms: (f64, f64),
    #[serde(flatten)]
    pub solution: HeadSolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionReport {
    pub schema: u32,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    pub k: u64,
    pub p: f64,
    #[serde(rename = "Ks")]
    pub ks: u64,
    pub j0: u64,
    pub breaks: Vec<u64>,
    pub shapes: Vec<f64>,
    pub eta: f64,
    pub r_hat: f64,
    #[serde(rename = "K0_plus")]
    pub k0_plus: u64,
    #[serde(rename = "K0_minus")]
    pub k0_minus: u64,
    #[serde(rename = "K_hat")]
    pub k_hat: u64,
    pub nu_hat: f64,
    pub tail_correction: String,
    pub shape_estimator: String,
    pub model: ModelSpec,
    pub diagnostics: Diagnostics,
}

impl InversionReport {
    pub fn recovered(&self) -> Result<FlowSizeModel> {
        FlowSizeModel::try_from(self.model.clone())
    }

    pub fn write_json<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut out, self)?;
        writeln!(out)?;
        Ok(())
    }
}

/// Whatever was estimated before a stage failed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportDraft {
    pub schema: u32,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    pub stage: String,
    pub error: String,
    pub k: u64,
    pub p: f64,
    #[serde(rename = "Ks")]
    pub ks: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j0: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub breaks: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shapes: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(rename = "K0_plus", skip_serializing_if = "Option::is_none")]
    pub k0_plus: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_hat: Option<f64>,
    #[serde(rename = "K0_minus", skip_serializing_if = "Option::is_none")]
    pub k0_minus: Option<u64>,
    #[serde(rename = "K_hat", skip_serializing_if = "Option::is_none")]
    pub k_hat: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu_hat: Option<f64>,
}

impl ReportDraft {
    pub fn write_json<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut out, self)?;
        writeln!(out)?;
        Ok(())
    }
}

/// `(j, value)` rows, tab separated, full float precision.
pub fn write_points_tsv<W: Write>(points: &[(f64, f64)], mut out: W) -> Result<()> {
    for (x, y) in points {
        writeln!(out, "{x}\t{y}")?;
    }
    Ok(())
}

/// Integer sizes at which the recovered ccdf is tabulated: every size up to
/// `dense`, then roughly `per_decade` log-spaced sizes per decade up to `max`.
pub fn ccdf_grid(dense: u64, max: u64, per_decade: u32) -> Vec<u64> {
    let mut grid: Vec<u64> = (1..=dense.min(max)).collect();
    let step = 10f64.powf(1.0 / per_decade.max(1) as f64);
    let mut x = dense.max(1) as f64;
    loop {
        x *= step;
        let j = x.round() as u64;
        if j > max {
            break;
        }
        if grid.last().is_none_or(|&last| j > last) {
            grid.push(j);
        }
    }
    if grid.last().is_some_and(|&last| last < max) {
        grid.push(max);
    }
    grid
}
