//! Contribution of flows with at least `b0` packets to `W_1` and `W_2`,
//! subtracted before solving for the geometric head.

use crate::error::Result;
use crate::forward::raw_mixture;
use crate::inversion::assemble::tail_segments;
use crate::inversion::breakpoints::BreakpointSet;
use crate::model::FlowSizeModel;
use crate::registry::{Named, Registry};

/// Everything known about the tail when the head is solved.
#[derive(Debug, Clone)]
pub struct TailFit<'a> {
    pub b0: u64,
    pub breakpoints: &'a BreakpointSet,
    pub p: f64,
    /// Estimated number of flows with at least `b0` packets.
    pub k0_plus: f64,
    pub support_cap: u64,
}

pub trait TailCorrection: Named + Send + Sync {
    /// `(T_1, T_2)`, expected numbers of large flows sampled once and twice.
    fn tail_terms(&self, fit: &TailFit<'_>) -> Result<(f64, f64)>;
}

/// Neglects large flows in `W_1, W_2`.
pub struct NoCorrection;

impl Named for NoCorrection {
    fn name(&self) -> &'static str {
        "off"
    }
}

impl TailCorrection for NoCorrection {
    fn tail_terms(&self, _fit: &TailFit<'_>) -> Result<(f64, f64)> {
        Ok((0.0, 0.0))
    }
}

/// `T_j = K0⁺ Σ_{ℓ>=b0} P(v=ℓ | v>=b0) (pℓ)^j e^{-pℓ} / j!` using the fitted
/// tail segments.
pub struct FittedTail;

impl Named for FittedTail {
    fn name(&self) -> &'static str {
        "fitted"
    }
}

impl TailCorrection for FittedTail {
    fn tail_terms(&self, fit: &TailFit<'_>) -> Result<(f64, f64)> {
        let segments = tail_segments(fit.b0, fit.breakpoints, fit.p)?;
        // head ratio is irrelevant with zero head mass
        let tail_only = FlowSizeModel::new(0.5, fit.b0, 0.0, &segments)?;
        let cap = fit.support_cap.max(fit.b0);
        let q = raw_mixture(&tail_only.tail_pmf(cap)?, fit.p, 2);
        Ok((fit.k0_plus * q[1], fit.k0_plus * q[2]))
    }
}

pub fn tail_corrections() -> Registry<dyn TailCorrection> {
    let mut reg: Registry<dyn TailCorrection> = Registry::new("tail correction");
    reg.register(Box::new(NoCorrection))
        .register(Box::new(FittedTail));
    reg
}
