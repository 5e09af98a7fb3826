//! Parametric flow-size law: a geometric head on `1..b0` followed by a
//! chain of Pareto segments on `[b0, ∞)`.
//!
//! The head follows `(1 - r) r^j` truncated to `1 <= j < b0` and rescaled so
//! that it carries exactly `head_mass`. Each tail segment has ccdf
//! `scale_mass * (lo / j)^shape` on `[lo, hi)`, with `scale_mass` chained so
//! the ccdf is continuous at every boundary and equal to `1 - head_mass` at
//! `b0`. Point probabilities are obtained by differencing the ccdf at integer
//! points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pmf::DiscretePmf;

/// Default explicit support for pmf enumeration, in packets.
pub const DEFAULT_SUPPORT_CAP: u64 = 1_000_000;

/// Largest flow size produced by [`draw_flow_sizes`]; above this a `u64`
/// round-trip through `f64` stops being exact.
const DRAW_CAP: u64 = 1 << 53;

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoSegment {
    lo: u64,
    hi: Option<u64>,
    shape: f64,
    scale_mass: f64,
}

impl ParetoSegment {
    pub fn lo(&self) -> u64 {
        self.lo
    }

    /// Exclusive upper end; `None` for the unbounded last segment.
    pub fn hi(&self) -> Option<u64> {
        self.hi
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    /// ccdf value at `lo`.
    pub fn scale_mass(&self) -> f64 {
        self.scale_mass
    }

    fn contains(&self, j: u64) -> bool {
        j >= self.lo && self.hi.is_none_or(|hi| j < hi)
    }

    fn ccdf(&self, j: f64) -> f64 {
        self.scale_mass * (self.lo as f64 / j).powf(self.shape)
    }
}

/// Serialized form of a tail segment: `{lo, hi, shape}` with `hi = null`
/// for an unbounded segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub lo: u64,
    pub hi: Option<u64>,
    pub shape: f64,
}

/// Serialized form of [`FlowSizeModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub r: f64,
    pub b0: u64,
    pub head_mass: f64,
    pub segments: Vec<SegmentSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpec", into = "ModelSpec")]
pub struct FlowSizeModel {
    r: f64,
    b0: u64,
    head_mass: f64,
    segments: Vec<ParetoSegment>,
    /// `r - r^b0`, the mass of `(1 - r) r^j` over `1..b0`.
    head_norm: f64,
}

impl FlowSizeModel {
    pub fn new(r: f64, b0: u64, head_mass: f64, segments: &[SegmentSpec]) -> Result<Self> {
        if !(r.is_finite() && r > 0.0 && r < 1.0) {
            return Err(Error::InvalidModel(format!(
                "head ratio r={r} not in (0, 1)"
            )));
        }
        if !(head_mass.is_finite() && (0.0..=1.0).contains(&head_mass)) {
            return Err(Error::InvalidModel(format!(
                "head_mass={head_mass} not in [0, 1]"
            )));
        }
        if b0 == 0 {
            return Err(Error::InvalidModel("b0 must be at least 1".into()));
        }
        if b0 == 1 && head_mass > 0.0 {
            return Err(Error::InvalidModel(
                "b0=1 leaves no room for a head but head_mass > 0".into(),
            ));
        }
        if segments.is_empty() && head_mass < 1.0 {
            return Err(Error::InvalidModel(
                "tail carries mass but no segments were given".into(),
            ));
        }

        let mut chained = Vec::with_capacity(segments.len());
        let mut scale = 1.0 - head_mass;
        let mut expected_lo = b0;
        for (i, seg) in segments.iter().enumerate() {
            if seg.lo != expected_lo {
                return Err(Error::InvalidModel(format!(
                    "segment {i} starts at {} but should start at {expected_lo}",
                    seg.lo
                )));
            }
            if !(seg.shape.is_finite() && seg.shape > 0.0) {
                return Err(Error::InvalidModel(format!(
                    "segment {i} has non-positive shape {}",
                    seg.shape
                )));
            }
            chained.push(ParetoSegment {
                lo: seg.lo,
                hi: seg.hi,
                shape: seg.shape,
                scale_mass: scale,
            });
            match seg.hi {
                Some(hi) if hi <= seg.lo => {
                    return Err(Error::InvalidModel(format!(
                        "segment {i} is empty: [{}, {hi})",
                        seg.lo
                    )));
                }
                Some(hi) => {
                    scale *= (seg.lo as f64 / hi as f64).powf(seg.shape);
                    expected_lo = hi;
                }
                None if i + 1 != segments.len() => {
                    return Err(Error::InvalidModel(format!(
                        "segment {i} is unbounded but is not the last one"
                    )));
                }
                None => {}
            }
        }

        Ok(Self {
            r,
            b0,
            head_mass,
            segments: chained,
            head_norm: r - r.powi(b0.min(i32::MAX as u64) as i32),
        })
    }

    /// Geometric head on `1..b0` followed by a Pareto tail of shape
    /// `a1` on `[b0, knee)` and `a2` on `[knee, ∞)`.
    pub fn two_segment(
        r: f64,
        b0: u64,
        head_mass: f64,
        a1: f64,
        knee: u64,
        a2: f64,
    ) -> Result<Self> {
        Self::new(
            r,
            b0,
            head_mass,
            &[
                SegmentSpec {
                    lo: b0,
                    hi: Some(knee),
                    shape: a1,
                },
                SegmentSpec {
                    lo: knee,
                    hi: None,
                    shape: a2,
                },
            ],
        )
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn b0(&self) -> u64 {
        self.b0
    }

    pub fn head_mass(&self) -> f64 {
        self.head_mass
    }

    pub fn segments(&self) -> &[ParetoSegment] {
        &self.segments
    }

    /// Largest size with positive probability, if the support is bounded.
    pub fn max_size(&self) -> Option<u64> {
        if self.head_mass >= 1.0 {
            return Some(self.b0 - 1);
        }
        self.segments.last().and_then(|s| s.hi).map(|hi| hi - 1)
    }

    /// `P(v >= j)`.
    pub fn ccdf(&self, j: u64) -> Result<f64> {
        if j == 0 {
            return Err(Error::param("j", "flow sizes start at 1"));
        }
        Ok(self.survival(j))
    }

    /// `P(v = j)`.
    pub fn pmf(&self, j: u64) -> Result<f64> {
        if j == 0 {
            return Err(Error::param("j", "flow sizes start at 1"));
        }
        Ok(self.point_mass(j))
    }

    /// `P(v >= j)` for `j >= 1`, no validation.
    pub(crate) fn survival(&self, j: u64) -> f64 {
        if j <= 1 {
            return 1.0;
        }
        if j < self.b0 {
            let tail = 1.0 - self.head_mass;
            if self.head_mass == 0.0 {
                return 1.0;
            }
            let r_j = self.r.powf(j as f64);
            let r_b0 = self.r.powf(self.b0 as f64);
            return tail + self.head_mass * (r_j - r_b0) / self.head_norm;
        }
        match self.segments.iter().find(|s| s.contains(j)) {
            Some(seg) => seg.ccdf(j as f64),
            // past a bounded last segment, or a pure head model
            None => 0.0,
        }
    }

    fn point_mass(&self, j: u64) -> f64 {
        (self.survival(j) - self.survival(j + 1)).max(0.0)
    }

    /// Explicit pmf on `1..=cap` with the mass beyond `cap` as tail.
    pub fn to_pmf(&self, cap: u64) -> Result<DiscretePmf> {
        if cap == 0 {
            return Err(Error::param("cap", "must be at least 1"));
        }
        let probs = (1..=cap).map(|j| self.point_mass(j)).collect();
        DiscretePmf::new(1, probs, self.survival(cap + 1))
    }

    /// Law of `v` conditioned on `v >= b0`, explicit on `b0..=cap`.
    pub fn tail_pmf(&self, cap: u64) -> Result<DiscretePmf> {
        let tail = self.survival(self.b0);
        if tail <= 0.0 {
            return Err(Error::InvalidModel("tail carries no mass".into()));
        }
        if cap < self.b0 {
            return Err(Error::param(
                "cap",
                format!("{cap} is below b0={}", self.b0),
            ));
        }
        let probs = (self.b0..=cap).map(|j| self.point_mass(j) / tail).collect();
        DiscretePmf::new(self.b0, probs, self.survival(cap + 1) / tail)
    }

    pub fn to_spec(&self) -> ModelSpec {
        ModelSpec {
            r: self.r,
            b0: self.b0,
            head_mass: self.head_mass,
            segments: self
                .segments
                .iter()
                .map(|s| SegmentSpec {
                    lo: s.lo,
                    hi: s.hi,
                    shape: s.shape,
                })
                .collect(),
        }
    }

    /// Inverse-ccdf lookup: the largest `j` with `P(v >= j) >= u`.
    fn quantile(&self, u: f64) -> u64 {
        let mut lo = 1u64;
        let mut hi = self.max_size().unwrap_or(DRAW_CAP).min(DRAW_CAP);
        if self.survival(hi) >= u {
            return hi;
        }
        // invariant: survival(lo) >= u > survival(hi)
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.survival(mid) >= u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

impl TryFrom<ModelSpec> for FlowSizeModel {
    type Error = Error;

    fn try_from(spec: ModelSpec) -> Result<Self> {
        Self::new(spec.r, spec.b0, spec.head_mass, &spec.segments)
    }
}

impl From<FlowSizeModel> for ModelSpec {
    fn from(model: FlowSizeModel) -> Self {
        model.to_spec()
    }
}

/// Draws `count` i.i.d. flow sizes by inverting the model ccdf.
pub fn draw_flow_sizes(model: &FlowSizeModel, count: usize, seed: u64) -> Result<Vec<u64>> {
    if count == 0 {
        return Err(Error::param("count", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            // uniform on (0, 1]
            let u = 1.0 - rng.random::<f64>();
            model.quantile(u)
        })
        .collect())
}
