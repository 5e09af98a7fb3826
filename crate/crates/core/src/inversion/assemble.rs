//! Recovered flow-size model from the inversion estimates.

use crate::error::{check_probability, Error, Result};
use crate::inversion::breakpoints::BreakpointSet;
use crate::model::{FlowSizeModel, SegmentSpec};

/// Original-domain segment boundaries: `b0`, then every sampled breakpoint
/// scaled by `1/p`.
pub(crate) fn tail_segments(
    b0: u64,
    breakpoints: &BreakpointSet,
    p: f64,
) -> Result<Vec<SegmentSpec>> {
    check_probability("p", p)?;
    let mut segments = Vec::with_capacity(breakpoints.segment_count());
    let mut lo = b0;
    for (i, &shape) in breakpoints.shapes.iter().enumerate() {
        let hi = match breakpoints.breaks.get(i) {
            Some(&j) => {
                let hi = (j as f64 / p).round() as u64;
                if hi <= lo {
                    return Err(Error::param(
                        "breaks",
                        format!("sampled breakpoint {j} maps to {hi} packets, not above {lo}"),
                    ));
                }
                Some(hi)
            }
            None => None,
        };
        segments.push(SegmentSpec { lo, hi, shape });
        if let Some(hi) = hi {
            lo = hi;
        }
    }
    Ok(segments)
}

/// Geometric head `(r̂, b0)` carrying `K0⁻ / K̂`, then the fitted shapes
/// with `a1` extended down to `b0`.
pub fn assemble_model(
    r_hat: f64,
    b0: u64,
    k0_minus: f64,
    k_hat: f64,
    breakpoints: &BreakpointSet,
    p: f64,
) -> Result<FlowSizeModel> {
    if !(k_hat.is_finite() && k_hat > 0.0 && k0_minus.is_finite() && k0_minus >= 0.0) {
        return Err(Error::param("counts", format!("K0-={k0_minus}, K={k_hat}")));
    }
    let head_mass = k0_minus / k_hat;
    if head_mass > 1.0 {
        return Err(Error::InvalidModel(format!(
            "head mass {head_mass} exceeds one (K0-={k0_minus} > K={k_hat})"
        )));
    }
    let segments = tail_segments(b0, breakpoints, p)?;
    FlowSizeModel::new(r_hat, b0, head_mass, &segments)
}
