use proptest::prelude::*;
use splitpipe_core::{
    assess, DecisionContext, OnlineScheduler, PrecisionDomain, SemanticCache, TaskFeature, Thresholds,
};

fn vector(dims: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.01f64..10.0, dims)
}

fn warm_cache(centers: &[Vec<f64>]) -> SemanticCache {
    let mut c = SemanticCache::new(centers.len(), centers[0].len());
    for (j, v) in centers.iter().enumerate() {
        c.update(j, &TaskFeature::new(v.clone())).unwrap();
    }
    c
}

proptest! {
    #[test]
    fn center_is_the_running_mean(xs in proptest::collection::vec(vector(4), 1..40)) {
        let mut c = SemanticCache::new(2, 4);
        for x in &xs {
            c.update(1, &TaskFeature::new(x.clone())).unwrap();
        }
        prop_assert_eq!(c.count(1), Some(xs.len() as u64));
        let center = c.center(1).unwrap();
        for d in 0..4 {
            let mean = xs.iter().map(|x| x[d]).sum::<f64>() / xs.len() as f64;
            prop_assert!((center[d] - mean).abs() <= 1e-9 * mean.abs().max(1.0));
        }
    }

    #[test]
    fn assessment_ignores_feature_scale(centers in proptest::collection::vec(vector(5), 2..6), f in vector(5), k in 1e-3f64..1e3) {
        let cache = warm_cache(&centers);
        let f = TaskFeature::new(f);
        let a = assess(&cache, &f).unwrap();
        let b = assess(&cache, &f.scaled(k)).unwrap();
        prop_assert_eq!(a.argmax_label, b.argmax_label);
        if a.separability.is_finite() {
            prop_assert!((a.separability - b.separability).abs() <= 1e-6 * a.separability.max(1.0));
        }
        prop_assert!(a.t_high >= a.t_second);
    }

    #[test]
    fn raising_the_exit_threshold_never_adds_exits(seps in proptest::collection::vec(0.0f64..5.0, 1..100), lo in 0.0f64..5.0, d in 0.0f64..5.0) {
        let count = |s_ext: f64| {
            let t = Thresholds { s_ext, s_adj: Default::default() };
            seps.iter().filter(|&&s| t.exits(s)).count()
        };
        prop_assert!(count(lo + d) <= count(lo));
        prop_assert_eq!(count(f64::INFINITY), 0);
    }

    #[test]
    fn chosen_precision_never_worsens_the_bubble(
        t_e in 0.1f64..20.0, t_c in 0.1f64..20.0, elements in 1u64..100_000, bw in 0.5f64..100.0, qi in 0usize..8,
    ) {
        let domain = PrecisionDomain::default();
        let q_required = domain.bits()[qi];
        let ctx = DecisionContext { base_bits: 8, t_e_ms: t_e, t_c_ms: t_c, payload_elements: elements, bandwidth_mbps: bw, domain: &domain };
        let q = ctx.choose_precision(q_required);
        prop_assert!(q >= q_required);
        prop_assert!(domain.contains(q) || q == q_required);
        prop_assert!(ctx.bubble(q) <= ctx.bubble(q_required));
        for &p in domain.at_least(q_required) {
            prop_assert!(ctx.bubble(q) <= ctx.bubble(p));
        }
    }

    #[test]
    fn scheduler_replays_identically(
        centers in proptest::collection::vec(vector(3), 3),
        stream in proptest::collection::vec((vector(3), 0usize..3), 1..60),
        s_ext in 0.0f64..3.0,
    ) {
        let thresholds = Thresholds { s_ext, s_adj: [(4u8, 1.0), (8, 0.2)].into_iter().collect() };
        let run = || {
            let mut s = OnlineScheduler::new(warm_cache(&centers), thresholds.clone(), PrecisionDomain::default());
            s.update_on_cloud_label = true;
            let decisions: Vec<_> = stream
                .iter()
                .map(|(f, l)| s.decide(&TaskFeature::new(f.clone()), Some(*l), 8, 3.0, 2.0, 1000, 10.0).unwrap())
                .collect();
            (decisions, s.cache)
        };
        prop_assert_eq!(run(), run());
    }
}
