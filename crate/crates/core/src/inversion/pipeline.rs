//! Full inversion of a sampled histogram.

use std::fmt;

use log::{debug, info, warn};

use crate::aggregate::{histogram_ccdf, Ccdf, FlowHistogram};
use crate::error::{Error, Result};
use crate::forward::raw_mixture;
use crate::inversion::assemble::assemble_model;
use crate::inversion::breakpoints::{detect_breakpoints_with, BreakpointSet, DetectOptions};
use crate::inversion::estimate::{
    estimate_counts, estimate_eta, report_count, solve_head, EtaEstimate, HeadSolution,
};
use crate::inversion::report::{
    Diagnostics, InversionReport, NamedHeadSolution, ReportDraft, REPORT_SCHEMA,
};
use crate::inversion::shape::{fit_pareto_shape_with, shape_estimators, Boundary};
use crate::inversion::tail::{tail_corrections, TailFit};
use crate::model::{FlowSizeModel, DEFAULT_SUPPORT_CAP};

/// Number of small sampled sizes compared in the head residual diagnostic.
const HEAD_RESIDUAL_SIZES: u64 = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct InversionConfig {
    /// Sampling period, `p = 1/k`.
    pub k: u64,
    pub b0: u64,
    /// Smallest sampled size considered by the segmentation.
    pub j_min: u64,
    pub detect: DetectOptions,
    pub tail_correction: String,
    pub shape_estimator: String,
    /// Treatment of flows beyond a segment's upper breakpoint.
    pub segment_boundary: Boundary,
    /// Sampled sizes within this many `sqrt(j)` of an interior breakpoint
    /// are left out of the shape fits and the η average; thinning blurs the
    /// sampled ccdf there.
    pub knee_guard: f64,
    /// Upper quantile of the sampled sizes bounding the η average when
    /// there is a single segment.
    pub eta_quantile: f64,
    /// Explicit support used for mixture sums over the recovered model.
    pub support_cap: u64,
    pub run_id: Option<String>,
}

impl InversionConfig {
    pub fn new(k: u64) -> Self {
        Self {
            k,
            b0: 20,
            j_min: 1,
            detect: DetectOptions::default(),
            tail_correction: "off".into(),
            shape_estimator: "discrete".into(),
            segment_boundary: Boundary::Censored,
            knee_guard: 2.0,
            eta_quantile: 0.99,
            support_cap: DEFAULT_SUPPORT_CAP,
            run_id: None,
        }
    }

    pub fn p(&self) -> f64 {
        1.0 / self.k as f64
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::param("k", "must be at least 1"));
        }
        if self.b0 < 2 {
            return Err(Error::param("b0", "must be at least 2"));
        }
        if !(self.knee_guard.is_finite() && self.knee_guard >= 0.0) {
            return Err(Error::param(
                "knee_guard",
                format!("{} is not a non-negative number", self.knee_guard),
            ));
        }
        if !(self.eta_quantile > 0.0 && self.eta_quantile <= 1.0) {
            return Err(Error::param(
                "eta_quantile",
                format!("{} is not in (0, 1]", self.eta_quantile),
            ));
        }
        // fail on unknown names before any work
        tail_corrections().get(&self.tail_correction)?;
        shape_estimators().get(&self.shape_estimator)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Breakpoints,
    Shapes,
    Eta,
    Head,
    Counts,
    Assemble,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Breakpoints => "breakpoints",
            Stage::Shapes => "shapes",
            Stage::Eta => "eta",
            Stage::Head => "head",
            Stage::Counts => "counts",
            Stage::Assemble => "assemble",
        })
    }
}

#[derive(Debug)]
pub struct InversionFailure {
    pub stage: Stage,
    pub error: Error,
    pub draft: Box<ReportDraft>,
}

impl fmt::Display for InversionFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for InversionFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

struct Run<'a> {
    hist: &'a FlowHistogram,
    draft: ReportDraft,
}

impl Run<'_> {
    fn fail(mut self, stage: Stage, error: Error) -> InversionFailure {
        self.draft.stage = stage.to_string();
        self.draft.error = error.to_string();
        InversionFailure {
            stage,
            error,
            draft: Box::new(self.draft),
        }
    }
}

macro_rules! at {
    ($run:ident, $stage:expr, $e:expr) => {
        match $e {
            Ok(v) => v,
            Err(err) => return Err($run.fail($stage, err)),
        }
    };
}

/// Breakpoints, shapes, η, large-flow count, head, total count and the
/// recovered model, in that order. On failure the estimates obtained so far
/// are returned with the failing stage.
pub fn invert(
    hist: &FlowHistogram,
    cfg: &InversionConfig,
) -> std::result::Result<InversionReport, InversionFailure> {
    let p = if cfg.k > 0 { cfg.p() } else { 0.0 };
    let ks = hist.total_flows();
    let mut run = Run {
        hist,
        draft: ReportDraft {
            schema: REPORT_SCHEMA,
            status: "failed".into(),
            run_id: cfg.run_id.clone(),
            k: cfg.k,
            p,
            ks,
            ..Default::default()
        },
    };
    at!(run, Stage::Config, cfg.validate());
    let ccdf = at!(run, Stage::Breakpoints, histogram_ccdf(hist));

    let seg = at!(
        run,
        Stage::Breakpoints,
        detect_breakpoints_with(&ccdf, cfg.j_min, &cfg.detect)
    );
    let j0 = seg.breakpoints.j0;
    run.draft.j0 = Some(j0);
    run.draft.breaks = Some(seg.breakpoints.breaks.clone());
    info!(
        "segmentation: j0={j0}, breaks={:?}, slopes={:?}",
        seg.breakpoints.breaks, seg.breakpoints.shapes
    );

    let shapes = at!(
        run,
        Stage::Shapes,
        fit_shapes(run.hist, &seg.breakpoints, cfg)
    );
    let breakpoints = at!(
        run,
        Stage::Shapes,
        BreakpointSet::new(j0, seg.breakpoints.breaks.clone(), shapes)
    );
    run.draft.shapes = Some(breakpoints.shapes.clone());
    info!("{} shapes: {:?}", cfg.shape_estimator, breakpoints.shapes);

    let eta_upper = eta_upper(&ccdf, &breakpoints, cfg);
    let EtaEstimate { eta, spread } = at!(
        run,
        Stage::Eta,
        estimate_eta(&ccdf, breakpoints.shapes[0], cfg.b0, p, j0, eta_upper)
    );
    let k0_plus_real = eta * ks as f64;
    let k0_plus = report_count(k0_plus_real);
    run.draft.eta = Some(eta);
    run.draft.k0_plus = Some(k0_plus);
    debug!("eta={eta} over {j0}..={eta_upper} (spread {spread}), K0+={k0_plus}");
    if spread > 0.5 {
        warn!(
            "eta ratios vary by {:.0}% across {j0}..={eta_upper}",
            spread * 100.0
        );
    }

    let (w1, w2) = (hist.count(1) as f64, hist.count(2) as f64);
    let fit = TailFit {
        b0: cfg.b0,
        breakpoints: &breakpoints,
        p,
        k0_plus: k0_plus_real,
        support_cap: cfg.support_cap,
    };
    let corrections = tail_corrections();
    let mut head_solutions = Vec::new();
    let mut chosen: Option<Result<HeadSolution>> = None;
    for name in corrections.names() {
        let attempt = corrections
            .get(name)
            .and_then(|c| c.tail_terms(&fit))
            .and_then(|terms| solve_head(w1, w2, ks, p, Some(terms)).map(|s| (terms, s)));
        match &attempt {
            Ok((terms, sol)) => {
                debug!(
                    "head [{name}]: T={terms:?}, r={}, K0-={}",
                    sol.r_hat, sol.k0_minus
                );
                head_solutions.push(NamedHeadSolution {
                    tail_correction: name.to_string(),
                    tail_terms: *terms,
                    solution: *sol,
                });
            }
            Err(e) => debug!("head [{name}] failed: {e}"),
        }
        if name == cfg.tail_correction {
            chosen = Some(attempt.map(|(_, s)| s));
        }
    }
    let head = at!(
        run,
        Stage::Head,
        chosen.expect("validated tail-correction name")
    );
    let k0_minus = report_count(head.k0_minus);
    run.draft.r_hat = Some(head.r_hat);
    run.draft.k0_minus = Some(k0_minus);

    let counts = at!(
        run,
        Stage::Counts,
        estimate_counts(k0_plus as f64, k0_minus as f64, ks)
    );
    let k_hat = k0_plus + k0_minus;
    run.draft.k_hat = Some(k_hat);
    run.draft.nu_hat = Some(counts.nu_hat);
    if counts.nu_exceeds_one {
        warn!("K_s={ks} exceeds the estimated flow count {k_hat}; flow sampling probability reported as 1");
    }

    let model = at!(
        run,
        Stage::Assemble,
        assemble_model(
            head.r_hat,
            cfg.b0,
            k0_minus as f64,
            k_hat as f64,
            &breakpoints,
            p
        )
    );
    let head_residuals = at!(
        run,
        Stage::Assemble,
        head_residuals(hist, &model, k_hat as f64, p, cfg.support_cap)
    );

    Ok(InversionReport {
        schema: REPORT_SCHEMA,
        status: "ok".into(),
        run_id: cfg.run_id.clone(),
        k: cfg.k,
        p,
        ks,
        j0,
        breaks: breakpoints.breaks.clone(),
        shapes: breakpoints.shapes.clone(),
        eta,
        r_hat: head.r_hat,
        k0_plus,
        k0_minus,
        k_hat,
        nu_hat: counts.nu_hat,
        tail_correction: cfg.tail_correction.clone(),
        shape_estimator: cfg.shape_estimator.clone(),
        model: model.to_spec(),
        diagnostics: Diagnostics {
            eta_spread: spread,
            eta_upper,
            head_residuals,
            fit_sse: seg.sse,
            nu_exceeds_one: counts.nu_exceeds_one,
            head_solutions,
        },
    })
}

/// `[lo, hi)` of segment `i` with the guard bands around interior
/// breakpoints removed. Falls back to the full segment when the guards
/// would leave it empty.
fn fitting_range(bp: &BreakpointSet, i: usize, guard: f64) -> (u64, Option<u64>) {
    let (lo, hi) = bp.segment_range(i);
    let band = |j: u64| (guard * (j as f64).sqrt()).round() as u64;
    let lo_g = if i == 0 { lo } else { lo + band(lo) };
    let hi_g = hi.map(|h| h.saturating_sub(band(h)));
    match hi_g {
        Some(h) if h <= lo_g + 1 => (lo, hi),
        _ => (lo_g, hi_g),
    }
}

fn fit_shapes(hist: &FlowHistogram, bp: &BreakpointSet, cfg: &InversionConfig) -> Result<Vec<f64>> {
    let registry = shape_estimators();
    let est = registry.get(&cfg.shape_estimator)?;
    (0..bp.segment_count())
        .map(|i| {
            let (lo, hi) = fitting_range(bp, i, cfg.knee_guard);
            fit_pareto_shape_with(est, hist, lo, hi, cfg.segment_boundary)
        })
        .collect()
}

/// Last sampled size of the first segment's fitting range, or the
/// configured quantile of the sampled sizes when there is only one segment.
fn eta_upper(ccdf: &Ccdf, bp: &BreakpointSet, cfg: &InversionConfig) -> u64 {
    let upper = match fitting_range(bp, 0, cfg.knee_guard).1 {
        Some(hi) => hi - 1,
        None => ccdf
            .quantile(cfg.eta_quantile)
            .or(ccdf.max_point())
            .unwrap_or(bp.j0),
    };
    upper.max(bp.j0)
}

fn head_residuals(
    hist: &FlowHistogram,
    model: &FlowSizeModel,
    k_hat: f64,
    p: f64,
    cap: u64,
) -> Result<Vec<Option<f64>>> {
    let q = raw_mixture(&model.to_pmf(cap)?, p, HEAD_RESIDUAL_SIZES);
    Ok((1..=HEAD_RESIDUAL_SIZES)
        .map(|j| {
            let observed = hist.count(j) as f64;
            let predicted = k_hat * q[j as usize];
            (observed > 0.0).then(|| (observed - predicted) / observed)
        })
        .collect())
}
