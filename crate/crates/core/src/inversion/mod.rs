//! Recovery of the original flow-size law and flow counts from a sampled
//! histogram.

pub mod assemble;
pub mod breakpoints;
pub mod estimate;
pub mod pipeline;
pub mod report;
pub mod shape;
pub mod tail;

pub use assemble::assemble_model;
pub use breakpoints::{
    detect_breakpoints, detect_breakpoints_with, BreakpointSet, DetectOptions, Segmentation,
};
pub use estimate::{
    estimate_counts, estimate_eta, estimate_k0_plus, report_count, rescale_tail, solve_head,
    CountEstimate, EtaEstimate, HeadSolution,
};
pub use pipeline::{invert, InversionConfig, InversionFailure, Stage};
pub use report::{Diagnostics, InversionReport, ReportDraft};
pub use shape::{
    fit_pareto_shape, fit_pareto_shape_with, shape_estimators, Boundary, ShapeEstimator, Upper,
};
pub use tail::{tail_corrections, TailCorrection, TailFit};
