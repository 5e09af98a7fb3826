//! Ground truth of a synthetic run and comparison of an inversion report
//! against it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inversion::InversionReport;
use crate::model::{FlowSizeModel, ModelSpec};

pub const TRUTH_SCHEMA: u32 = 1;

/// Largest original size at which recovered and true ccdfs are compared.
pub const CCDF_COMPARE_MAX: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub schema: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    pub seed: u64,
    #[serde(rename = "K")]
    pub k: u64,
    #[serde(rename = "K0_plus")]
    pub k0_plus: u64,
    #[serde(rename = "K0_minus")]
    pub k0_minus: u64,
    pub b0: u64,
    pub total_packets: u64,
    pub model: ModelSpec,
}

impl Truth {
    pub fn from_sizes(
        model: &FlowSizeModel,
        sizes: &[u64],
        seed: u64,
        run_id: Option<String>,
    ) -> Self {
        let b0 = model.b0();
        let k0_plus = sizes.iter().filter(|&&v| v >= b0).count() as u64;
        Truth {
            schema: TRUTH_SCHEMA,
            run_id,
            seed,
            k: sizes.len() as u64,
            k0_plus,
            k0_minus: sizes.len() as u64 - k0_plus,
            b0,
            total_packets: sizes.iter().sum(),
            model: model.to_spec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    /// `(estimate - truth) / truth` per quantity.
    pub relative_errors: BTreeMap<String, f64>,
    /// `max_j |recovered ccdf / true ccdf - 1|` over `1..=CCDF_COMPARE_MAX`.
    pub ccdf_max_relative_error: f64,
}

impl Score {
    /// Largest absolute relative error over all scored quantities.
    pub fn worst(&self) -> f64 {
        self.relative_errors
            .values()
            .map(|e| e.abs())
            .fold(self.ccdf_max_relative_error, f64::max)
    }
}

fn rel(estimate: f64, truth: f64) -> f64 {
    if truth == 0.0 {
        if estimate == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (estimate - truth) / truth
    }
}

pub fn score(truth: &Truth, report: &InversionReport) -> Result<Score> {
    if let (Some(t), Some(r)) = (&truth.run_id, &report.run_id) {
        if t != r {
            return Err(Error::param(
                "run_id",
                format!("truth is for run `{t}`, report for run `{r}`"),
            ));
        }
    }
    if truth.k == 0 {
        return Err(Error::param("K", "truth has no flows"));
    }
    let true_model = FlowSizeModel::try_from(truth.model.clone())?;
    let recovered = report.recovered()?;

    let mut errors = BTreeMap::new();
    let mut put = |name: &str, e: f64, t: f64| {
        errors.insert(name.to_string(), rel(e, t));
    };
    put("K_hat", report.k_hat as f64, truth.k as f64);
    put("K0_plus", report.k0_plus as f64, truth.k0_plus as f64);
    put("K0_minus", report.k0_minus as f64, truth.k0_minus as f64);
    put("r_hat", report.r_hat, true_model.r());
    let nu = report.ks as f64 / truth.k as f64;
    put("nu_hat", report.nu_hat, nu);
    if report.ks > 0 {
        put("eta", report.eta, truth.k0_plus as f64 / report.ks as f64);
    }
    let true_shapes: Vec<f64> = true_model.segments().iter().map(|s| s.shape()).collect();
    if true_shapes.len() == report.shapes.len() {
        for (i, (e, t)) in report.shapes.iter().zip(&true_shapes).enumerate() {
            put(&format!("shape_{}", i + 1), *e, *t);
        }
    } else if let (Some(ef), Some(tf), Some(el), Some(tl)) = (
        report.shapes.first(),
        true_shapes.first(),
        report.shapes.last(),
        true_shapes.last(),
    ) {
        put("shape_first", *ef, *tf);
        put("shape_last", *el, *tl);
    }

    let mut ccdf_err: f64 = 0.0;
    for j in 1..=CCDF_COMPARE_MAX {
        let t = true_model.ccdf(j)?;
        if t > 0.0 {
            ccdf_err = ccdf_err.max((recovered.ccdf(j)? / t - 1.0).abs());
        }
    }

    Ok(Score {
        run_id: truth.run_id.clone().or_else(|| report.run_id.clone()),
        relative_errors: errors,
        ccdf_max_relative_error: ccdf_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inversion::report::{Diagnostics, REPORT_SCHEMA};

    fn model() -> FlowSizeModel {
        FlowSizeModel::two_segment(0.75, 20, 0.98, 0.52, 3000, 1.81).unwrap()
    }

    fn truth() -> Truth {
        Truth {
            schema: TRUTH_SCHEMA,
            run_id: Some("a".into()),
            seed: 1,
            k: 1000,
            k0_plus: 20,
            k0_minus: 980,
            b0: 20,
            total_packets: 5000,
            model: model().to_spec(),
        }
    }

    fn report_matching(t: &Truth) -> InversionReport {
        let ks = 100;
        InversionReport {
            schema: REPORT_SCHEMA,
            status: "ok".into(),
            run_id: t.run_id.clone(),
            k: 100,
            p: 0.01,
            ks,
            j0: 3,
            breaks: vec![30],
            shapes: vec![0.52, 1.81],
            eta: t.k0_plus as f64 / ks as f64,
            r_hat: 0.75,
            k0_plus: t.k0_plus,
            k0_minus: t.k0_minus,
            k_hat: t.k,
            nu_hat: ks as f64 / t.k as f64,
            tail_correction: "off".into(),
            shape_estimator: "discrete".into(),
            model: t.model.clone(),
            diagnostics: Diagnostics {
                eta_spread: 0.0,
                eta_upper: 29,
                head_residuals: vec![],
                fit_sse: 0.0,
                nu_exceeds_one: false,
                head_solutions: vec![],
            },
        }
    }

    #[test]
    fn identical_gives_zero() {
        let t = truth();
        let s = score(&t, &report_matching(&t)).unwrap();
        assert_eq!(s.worst(), 0.0, "{s:?}");
        assert!(s.relative_errors.contains_key("shape_2"));
    }

    #[test]
    fn errors_are_relative() {
        let t = truth();
        let mut r = report_matching(&t);
        r.k_hat = 1100;
        r.r_hat = 0.84;
        let s = score(&t, &r).unwrap();
        assert!((s.relative_errors["K_hat"] - 0.1).abs() < 1e-12);
        assert!((s.relative_errors["r_hat"] - 0.12).abs() < 1e-12);
    }

    #[test]
    fn run_ids_must_agree() {
        let t = truth();
        let mut r = report_matching(&t);
        r.run_id = Some("b".into());
        assert!(score(&t, &r).is_err());
        r.run_id = None;
        assert!(score(&t, &r).is_ok());
    }

    #[test]
    fn truth_from_sizes() {
        let t = Truth::from_sizes(&model(), &[1, 5, 20, 300], 9, None);
        assert_eq!(
            (t.k, t.k0_plus, t.k0_minus, t.total_packets),
            (4, 2, 2, 326)
        );
        let json = serde_json::to_value(&t).unwrap();
        for key in [
            "K",
            "K0_plus",
            "K0_minus",
            "b0",
            "model",
            "seed",
            "total_packets",
        ] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }
}
