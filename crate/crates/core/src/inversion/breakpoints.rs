//! Piecewise power-law segmentation of a sampled ccdf.
//!
//! Straight lines are fitted to `(ln j, ln P(ṽ >= j))` by exhaustive
//! segmented least squares over integer breakpoints (dynamic programming on
//! prefix sums). `j0` is the smallest starting point for which the first
//! segment spans enough points and fits all of them within the residual
//! threshold.

use serde::{Deserialize, Serialize};

use crate::aggregate::Ccdf;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakpointSet {
    /// Smallest sampled size from which the power-law description holds.
    pub j0: u64,
    /// Interior breakpoints `j1 < … < j_{m-1}`, all above `j0`.
    pub breaks: Vec<u64>,
    /// Per-segment shapes `a_1..a_m`.
    pub shapes: Vec<f64>,
}

impl BreakpointSet {
    pub fn new(j0: u64, breaks: Vec<u64>, shapes: Vec<f64>) -> Result<Self> {
        if shapes.len() != breaks.len() + 1 {
            return Err(Error::param(
                "shapes",
                format!("{} shapes for {} breakpoints", shapes.len(), breaks.len()),
            ));
        }
        let mut prev = j0;
        for &b in &breaks {
            if b <= prev {
                return Err(Error::param(
                    "breaks",
                    "breakpoints must be strictly increasing above j0",
                ));
            }
            prev = b;
        }
        if let Some(a) = shapes.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::param("shapes", format!("shape {a} is not positive")));
        }
        Ok(Self { j0, breaks, shapes })
    }

    pub fn segment_count(&self) -> usize {
        self.shapes.len()
    }

    /// Sampled-size range `[lo, hi)` of segment `i`; `hi = None` for the last.
    pub fn segment_range(&self, i: usize) -> (u64, Option<u64>) {
        let lo = if i == 0 { self.j0 } else { self.breaks[i - 1] };
        (lo, self.breaks.get(i).copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectOptions {
    /// Number of segments; `None` selects 1..=`max_segments` by BIC.
    pub segments: Option<usize>,
    pub max_segments: usize,
    /// Residual bound (log-ccdf units) that the first segment must satisfy
    /// from `j0` on.
    pub residual_threshold: f64,
    /// Added to the bound in units of the sampling standard deviation of
    /// each log-ccdf point, when the ccdf carries its flow count.
    pub noise_allowance: f64,
    /// Points above this quantile of the sampled sizes are ignored.
    pub upper_quantile: f64,
    /// Weight each log-ccdf point by its inverse sampling variance when the
    /// ccdf carries its flow count.
    pub weighted: bool,
    /// Fewest points the first segment may span.
    pub min_first_points: usize,
    /// Number of leading ccdf points tried as `j0`.
    pub j0_candidates: usize,
    /// Every segment but the last must span at least this many `sqrt(lo)`;
    /// thinning blurs the sampled ccdf over a few `sqrt(j)` around a
    /// breakpoint, so narrower segments only trace the blur.
    pub min_span: f64,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            segments: None,
            max_segments: 3,
            residual_threshold: 0.05,
            noise_allowance: 3.0,
            upper_quantile: 0.999,
            weighted: false,
            min_first_points: 5,
            j0_candidates: 64,
            min_span: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub breakpoints: BreakpointSet,
    /// Total (weighted) squared error of the final fit.
    pub sse: f64,
    /// `(slope, intercept)` per segment in log-log coordinates.
    pub lines: Vec<(f64, f64)>,
    /// Largest sampled size used in the fit.
    pub j_upper: u64,
}

pub fn detect_breakpoints(ccdf: &Ccdf, m: Option<usize>, j_min: u64) -> Result<Segmentation> {
    detect_breakpoints_with(
        ccdf,
        j_min,
        &DetectOptions {
            segments: m,
            ..DetectOptions::default()
        },
    )
}

pub fn detect_breakpoints_with(
    ccdf: &Ccdf,
    j_min: u64,
    opts: &DetectOptions,
) -> Result<Segmentation> {
    if let Some(0) = opts.segments {
        return Err(Error::param("m", "at least one segment is required"));
    }
    let j_min = j_min.max(1);
    let j_upper = ccdf
        .quantile(opts.upper_quantile)
        .or(ccdf.max_point())
        .ok_or(Error::EmptyInput("ccdf has no points"))?;

    let candidates: Vec<u64> = ccdf
        .iter()
        .filter(|&(j, v)| j >= j_min && j <= j_upper && v > 0.0)
        .map(|(j, _)| j)
        .take(opts.j0_candidates.max(1))
        .collect();
    let mut first = None;
    for &j0 in &candidates {
        let fit = match fit_from(ccdf, j0, j_upper, opts) {
            Ok(f) => f,
            Err(Error::InsufficientData(_)) if first.is_some() => break,
            Err(e) => return Err(e),
        };
        if fit.first_segment_fits(opts) {
            return Ok(fit.into_segmentation(j0, j_upper));
        }
        if first.is_none() {
            first = Some(fit);
        }
    }

    // no candidate qualifies: trim the leading misfit of the full fit
    let first = match first {
        Some(f) => f,
        None => fit_from(ccdf, j_min, j_upper, opts)?,
    };
    let j0 = first_reliable(&first, opts);
    if j0 <= j_min {
        return Ok(first.into_segmentation(j_min, j_upper));
    }
    let refit = match fit_from(ccdf, j0, j_upper, opts) {
        Ok(f) => f,
        // too few points left above j0 for the requested segment count
        Err(Error::InsufficientData(_)) => return Ok(first.into_segmentation(j_min, j_upper)),
        Err(e) => return Err(e),
    };
    Ok(refit.into_segmentation(j0, j_upper))
}

struct Fit {
    xs: Vec<u64>,
    log_sd: Vec<f64>,
    /// Index of the first point of every segment.
    starts: Vec<usize>,
    lines: Vec<(f64, f64)>,
    residuals: Vec<f64>,
    sse: f64,
}

impl Fit {
    fn first_segment_fits(&self, opts: &DetectOptions) -> bool {
        let end = self.starts.get(1).copied().unwrap_or(self.xs.len());
        end >= opts.min_first_points && (0..end).all(|i| self.fits_point(i, opts))
    }

    fn fits_point(&self, i: usize, opts: &DetectOptions) -> bool {
        self.residuals[i].abs() < opts.residual_threshold + opts.noise_allowance * self.log_sd[i]
    }

    fn into_segmentation(self, j0: u64, j_upper: u64) -> Segmentation {
        let breaks = self.starts[1..].iter().map(|&i| self.xs[i]).collect();
        let shapes = self
            .lines
            .iter()
            .map(|(slope, _)| (-slope).max(f64::MIN_POSITIVE))
            .collect();
        Segmentation {
            breakpoints: BreakpointSet { j0, breaks, shapes },
            sse: self.sse,
            lines: self.lines,
            j_upper,
        }
    }
}

/// Smallest point of the first segment from which every residual of that
/// segment stays within bounds.
fn first_reliable(fit: &Fit, opts: &DetectOptions) -> u64 {
    let end = fit.starts.get(1).copied().unwrap_or(fit.xs.len());
    let mut start = end - 1;
    while start > 0 && fit.fits_point(start - 1, opts) {
        start -= 1;
    }
    if !fit.fits_point(start, opts) && start + 1 < end {
        start += 1;
    }
    fit.xs[start]
}

fn fit_from(ccdf: &Ccdf, j_min: u64, j_upper: u64, opts: &DetectOptions) -> Result<Fit> {
    let pts: Vec<(u64, f64, f64)> = ccdf
        .iter()
        .filter(|&(j, v)| j >= j_min && j <= j_upper && v > 0.0)
        .map(|(j, v)| (j, (j as f64).ln(), v.ln()))
        .collect();
    let n = pts.len();
    let weights: Vec<f64> = match (opts.weighted, ccdf.flows()) {
        (true, Some(flows)) if flows > 0 => pts
            .iter()
            .map(|&(_, _, ly)| {
                let (c, nf) = (ly.exp(), flows as f64);
                nf * c / (1.0 - c + 1.0 / nf)
            })
            .collect(),
        _ => vec![1.0; n],
    };
    let sums = PrefixSums::new(&pts, &weights);

    let candidates: Vec<usize> = match opts.segments {
        Some(m) => vec![m],
        None => (1..=opts.max_segments.max(1)).collect(),
    };
    let mut best: Option<(f64, Vec<usize>, f64)> = None;
    for &m in &candidates {
        if n < 2 * m {
            if opts.segments.is_some() || m == 1 {
                return Err(Error::InsufficientData(format!(
                    "{n} ccdf points from j={j_min} cannot hold {m} segments of 2 points"
                )));
            }
            break;
        }
        let xs: Vec<u64> = pts.iter().map(|p| p.0).collect();
        let wide = |a: usize, next: usize| {
            (xs[next] - xs[a]) as f64 >= opts.min_span * (xs[a] as f64).sqrt()
        };
        let (sse, starts) = segment(&sums, n, m, wide);
        if !sse.is_finite() {
            if opts.segments.is_some() {
                return Err(Error::InsufficientData(format!(
                    "no {m} segments from j={j_min} are wide enough"
                )));
            }
            continue;
        }
        // BIC with slope, intercept and breakpoint per segment
        let score = n as f64 * (sse / n as f64).max(1e-300).ln() + 3.0 * m as f64 * (n as f64).ln();
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, starts, sse));
        }
    }
    let Some((_, starts, sse)) = best else {
        return Err(Error::InsufficientData(format!(
            "no segmentation from j={j_min} is wide enough"
        )));
    };

    let mut lines = Vec::with_capacity(starts.len());
    let mut residuals = vec![0.0; n];
    for (s, &a) in starts.iter().enumerate() {
        let b = starts.get(s + 1).copied().unwrap_or(n) - 1;
        let (slope, icept) = sums.line(a, b);
        for i in a..=b {
            residuals[i] = pts[i].2 - (icept + slope * pts[i].1);
        }
        lines.push((slope, icept));
    }
    Ok(Fit {
        xs: pts.iter().map(|p| p.0).collect(),
        log_sd: pts.iter().map(|p| ccdf.log_sd(p.0)).collect(),
        starts,
        lines,
        residuals,
        sse,
    })
}

/// Optimal partition of `n` points into `m` contiguous runs of at least two
/// points; returns the total SSE and the start index of each run. A run
/// `a..=e` followed by another is admissible only if `wide(a, e + 1)`. The
/// SSE is infinite when no admissible partition exists.
fn segment(
    sums: &PrefixSums,
    n: usize,
    m: usize,
    wide: impl Fn(usize, usize) -> bool,
) -> (f64, Vec<usize>) {
    // cost[s][e]: best SSE of points 0..=e in s+1 runs; from[s][e]: start of last run
    let mut cost = vec![vec![f64::INFINITY; n]; m];
    let mut from = vec![vec![0usize; n]; m];
    for (e, c) in cost[0].iter_mut().enumerate().skip(1) {
        if e == n - 1 || wide(0, e + 1) {
            *c = sums.sse(0, e);
        }
    }
    for s in 1..m {
        for e in (2 * s + 1)..n {
            let mut best = f64::INFINITY;
            let mut arg = 0;
            if e < n - 1 && !wide(2 * s, e + 1) {
                // runs ending at e are too narrow whatever their start
                continue;
            }
            for b in (2 * s)..e {
                if e < n - 1 && !wide(b, e + 1) {
                    continue;
                }
                let c = cost[s - 1][b - 1] + sums.sse(b, e);
                if c < best {
                    best = c;
                    arg = b;
                }
            }
            cost[s][e] = best;
            from[s][e] = arg;
        }
    }
    let mut starts = vec![0usize; m];
    let mut e = n - 1;
    for s in (1..m).rev() {
        let b = from[s][e];
        starts[s] = b;
        e = b - 1;
    }
    (cost[m - 1][n - 1].max(0.0), starts)
}

struct PrefixSums {
    n: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    xx: Vec<f64>,
    xy: Vec<f64>,
    yy: Vec<f64>,
}

impl PrefixSums {
    fn new(pts: &[(u64, f64, f64)], weights: &[f64]) -> Self {
        let mut s = PrefixSums {
            n: vec![0.0],
            x: vec![0.0],
            y: vec![0.0],
            xx: vec![0.0],
            xy: vec![0.0],
            yy: vec![0.0],
        };
        for (i, (&(_, x, y), &w)) in pts.iter().zip(weights).enumerate() {
            s.n.push(s.n[i] + w);
            s.x.push(s.x[i] + w * x);
            s.y.push(s.y[i] + w * y);
            s.xx.push(s.xx[i] + w * x * x);
            s.xy.push(s.xy[i] + w * x * y);
            s.yy.push(s.yy[i] + w * y * y);
        }
        s
    }

    /// Weighted centered moments of points `a..=b`.
    fn moments(&self, a: usize, b: usize) -> (f64, f64, f64, f64, f64, f64) {
        let d = |v: &Vec<f64>| v[b + 1] - v[a];
        let n = d(&self.n);
        let (sx, sy) = (d(&self.x), d(&self.y));
        let cxx = d(&self.xx) - sx * sx / n;
        let cxy = d(&self.xy) - sx * sy / n;
        let cyy = d(&self.yy) - sy * sy / n;
        (n, sx, sy, cxx, cxy, cyy)
    }

    fn sse(&self, a: usize, b: usize) -> f64 {
        let (_, _, _, cxx, cxy, cyy) = self.moments(a, b);
        if cxx <= 0.0 {
            return cyy.max(0.0);
        }
        (cyy - cxy * cxy / cxx).max(0.0)
    }

    fn line(&self, a: usize, b: usize) -> (f64, f64) {
        let (n, sx, sy, cxx, cxy, _) = self.moments(a, b);
        let slope = if cxx > 0.0 { cxy / cxx } else { 0.0 };
        (slope, (sy - slope * sx) / n)
    }
}
