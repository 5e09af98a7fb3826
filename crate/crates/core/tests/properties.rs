use proptest::prelude::*;

use flowinvert::forward::{geom_poisson_sum, mixture_q, poisson_pmf, tv_distance};
use flowinvert::inversion::{
    assemble_model, detect_breakpoints, rescale_tail, solve_head, BreakpointSet,
};
use flowinvert::{
    aggregate, aggregate_sharded, draw_flow_sizes, histogram_ccdf, DiscretePmf, FlowHistogram,
    FlowSizeModel, SegmentSpec,
};

fn direct_geom_sum(r: f64, p: f64, j: u64) -> f64 {
    let lf: f64 = (1..=j).map(|i| (i as f64).ln()).sum();
    let mut sum = 0.0;
    for l in 1..=2_000_000u64 {
        let mean = p * l as f64;
        let t = ((1.0 - r).ln() + l as f64 * r.ln() + j as f64 * mean.ln() - mean - lf).exp();
        sum += t;
        if t < sum * 1e-18 && mean > j as f64 {
            break;
        }
    }
    sum
}

fn model_strategy() -> impl Strategy<Value = FlowSizeModel> {
    (
        0.05f64..0.95,
        2u64..40,
        0.0f64..1.0,
        0.2f64..2.5,
        2u64..50,
        0.5f64..3.0,
    )
        .prop_map(|(r, b0, h, a1, span, a2)| {
            let knee = b0 * span;
            FlowSizeModel::new(
                r,
                b0,
                h,
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
            .unwrap()
        })
}

fn pmf_strategy() -> impl Strategy<Value = DiscretePmf> {
    prop::collection::vec(0.0f64..1.0, 1..30).prop_filter_map("zero mass", |w| {
        let total: f64 = w.iter().sum();
        (total > 0.0)
            .then(|| DiscretePmf::new(0, w.iter().map(|x| x / total).collect(), 0.0).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn model_ccdf_is_a_survival_function(model in model_strategy()) {
        prop_assert!((model.ccdf(1).unwrap() - 1.0).abs() < 1e-12);
        let mut prev = 1.0;
        for j in 1..400u64 {
            let c = model.ccdf(j).unwrap();
            prop_assert!(c <= prev + 1e-12);
            let diff = c - model.ccdf(j + 1).unwrap();
            prop_assert!((diff - model.pmf(j).unwrap()).abs() < 1e-12);
            prev = c;
        }
        let knee = model.segments()[1].lo();
        let left = model.segments()[0].scale_mass()
            * (model.b0() as f64 / knee as f64).powf(model.segments()[0].shape());
        prop_assert!((left - model.segments()[1].scale_mass()).abs() < 1e-12);
    }

    #[test]
    fn pmf_mass_sums_to_one(model in model_strategy()) {
        let pmf = model.to_pmf(200_000).unwrap();
        prop_assert!((pmf.total_mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn draws_follow_the_model(model in model_strategy(), seed in any::<u64>()) {
        let n = 4000;
        let sizes = draw_flow_sizes(&model, n, seed).unwrap();
        // Kolmogorov distance on the first few hundred sizes; the limit is
        // far in the tail of its null law so random seeds do not flake
        let hist = FlowHistogram::from_flow_sizes(&sizes);
        let mut below = 0u64;
        let mut worst = 0.0f64;
        for j in 1..500u64 {
            below += hist.count(j);
            let emp = below as f64 / n as f64;
            let theory = 1.0 - model.ccdf(j + 1).unwrap();
            worst = worst.max((emp - theory).abs());
        }
        prop_assert!(worst < 2.5 / (n as f64).sqrt(), "distance {worst}");
    }

    #[test]
    fn tv_is_a_metric(a in pmf_strategy(), b in pmf_strategy(), c in pmf_strategy()) {
        let ab = tv_distance(&a, &b);
        prop_assert!(tv_distance(&a, &a).abs() < 1e-15);
        prop_assert!((ab - tv_distance(&b, &a)).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!(ab <= tv_distance(&a, &c) + tv_distance(&c, &b) + 1e-12);
    }

    #[test]
    fn geometric_sums_match_direct(r in 0.05f64..0.99, p in 0.001f64..1.0, j in 0u64..3) {
        let closed = geom_poisson_sum(r, p, j).unwrap();
        let direct = direct_geom_sum(r, p, j);
        prop_assert!(((closed - direct) / direct).abs() < 1e-10);
    }

    #[test]
    fn point_mass_mixture_is_poisson(l in 1u64..500, p in 0.001f64..1.0) {
        let q = mixture_q(&DiscretePmf::point_mass(l), p, 40).unwrap();
        for j in 0..=40 {
            prop_assert!((q.probs.get(j) - poisson_pmf(j, p * l as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn sharding_does_not_change_the_histogram(
        counts in prop::collection::btree_map(1u64..60, 1u64..20, 1..15),
        shards in 1usize..9,
    ) {
        let hist = FlowHistogram::from_counts(counts).unwrap();
        let records = hist.expand_records();
        prop_assert_eq!(&aggregate(records.iter().cloned()), &hist);
        prop_assert_eq!(&aggregate_sharded(&records, shards), &hist);
    }

    #[test]
    fn head_solution_round_trips(r in 0.1f64..0.95, p in 0.001f64..0.5, k0 in 1e4f64..1e8) {
        let w1 = k0 * geom_poisson_sum(r, p, 1).unwrap();
        let w2 = k0 * geom_poisson_sum(r, p, 2).unwrap();
        prop_assume!(w2 >= 1.0);
        let sol = solve_head(w1, w2, u64::MAX / 2, p, None).unwrap();
        prop_assert!(((sol.r_hat - r) / r).abs() < 1e-8);
        prop_assert!(((sol.k0_minus - k0) / k0).abs() < 1e-8);
    }

    #[test]
    fn rescaling_is_linear_in_nu(
        counts in prop::collection::btree_map(1u64..200, 1u64..50, 2..20),
        p in 0.001f64..1.0,
        nu in 0.01f64..1.0,
    ) {
        let ccdf = histogram_ccdf(&FlowHistogram::from_counts(counts).unwrap()).unwrap();
        let unit = rescale_tail(&ccdf, p, 1.0).unwrap();
        let scaled = rescale_tail(&ccdf, p, nu).unwrap();
        prop_assert_eq!(unit.len(), scaled.len());
        for ((x1, y1), (x2, y2)) in unit.iter().zip(&scaled) {
            prop_assert!((x1 - x2).abs() < 1e-12);
            prop_assert!((y1 * nu - y2).abs() < 1e-12);
        }
    }

    #[test]
    fn recovered_ccdf_is_monotone(
        r in 0.1f64..0.95,
        share in 0.0f64..1.0,
        shapes in prop::collection::vec(0.3f64..2.5, 1..4),
        k in 5u64..200,
    ) {
        let breaks: Vec<u64> = (1..shapes.len() as u64).map(|i| 10 * i).collect();
        let set = BreakpointSet { j0: 3, breaks, shapes };
        let model = assemble_model(r, 20, share * 1e6, 1e6, &set, 1.0 / k as f64).unwrap();
        prop_assert!((model.ccdf(1).unwrap() - 1.0).abs() < 1e-12);
        let mut prev = 1.0;
        for j in (1..50_000u64).step_by(7) {
            let c = model.ccdf(j).unwrap();
            prop_assert!(c <= prev + 1e-12 && c >= 0.0);
            prev = c;
        }
    }
}

#[test]
fn detection_is_deterministic() {
    let model = FlowSizeModel::two_segment(0.75, 20, 0.9, 0.6, 2000, 1.7).unwrap();
    let sizes = draw_flow_sizes(&model, 200_000, 9).unwrap();
    let thinned = flowinvert::bernoulli_thin(&sizes, 0.01, 9).unwrap();
    let ccdf = histogram_ccdf(&FlowHistogram::from_flow_sizes(&thinned)).unwrap();
    let a = detect_breakpoints(&ccdf, None, 1).unwrap();
    let b = detect_breakpoints(&ccdf, None, 1).unwrap();
    assert_eq!(a, b);
}

#[test]
fn hill_fit_on_discretized_pareto_sizes() {
    let model = FlowSizeModel::new(
        0.5,
        1,
        0.0,
        &[SegmentSpec {
            lo: 1,
            hi: None,
            shape: 1.2,
        }],
    )
    .unwrap();
    let sizes = draw_flow_sizes(&model, 200_000, 3).unwrap();
    let hist = FlowHistogram::from_flow_sizes(&sizes);
    // Above a few hundred the lattice effect is small.
    let a = flowinvert::inversion::fit_pareto_shape(&hist, 300, None).unwrap();
    assert!((a - 1.2).abs() < 0.1, "{a}");
}
