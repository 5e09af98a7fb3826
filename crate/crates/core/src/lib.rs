//! Flow-size distribution recovery from 1-in-k packet-sampled traffic.
//!
//! The crate covers the whole chain: a parametric flow-size model and
//! trace synthesis, deterministic and Bernoulli packet sampling, flow
//! aggregation into size histograms, the Poisson-mixture forward model, and
//! the inversion that recovers the original size law and flow counts from a
//! sampled histogram.

pub mod aggregate;
pub mod csvio;
pub mod error;
pub mod forward;
pub mod inversion;
pub mod model;
pub mod pmf;
pub mod registry;
pub mod score;
pub mod synth;

pub use aggregate::{
    aggregate, aggregate_sharded, histogram_ccdf, Ccdf, FlowAggregator, FlowHistogram, FlowKey,
};
pub use error::{Error, Result};
pub use forward::{forward_sampled_pmf, geom_poisson_sum, lecam_bound, mixture_q, tv_distance};
pub use inversion::{invert, InversionConfig, InversionReport};
pub use model::{draw_flow_sizes, FlowSizeModel, ModelSpec, SegmentSpec};
pub use pmf::DiscretePmf;
pub use registry::{Named, Registry};
pub use synth::{
    bernoulli_thin, deterministic_sample, interleave, FlowId, PacketStream, SamplingConfig,
};
