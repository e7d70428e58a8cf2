mod common;

use proptest::prelude::*;
use splitpipe_core::{
    bubble_report, simulate, stage_times, BandwidthTrace, ModelGraph, PartitionStrategy, SimReport, Stage,
    TaskSpec, TaskStream,
};

fn run(g: &ModelGraph, s: &PartitionStrategy, arrivals: &[f64], trace: &BandwidthTrace) -> SimReport {
    let stream = TaskStream::new(arrivals.iter().map(|&t| TaskSpec::at(t)).collect()).unwrap();
    simulate(g, s, &stream, trace, None).unwrap()
}

fn arrivals() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..20.0, 1..80).prop_map(|gaps| {
        let mut t = 0.0;
        gaps.iter()
            .map(|g| {
                t += g;
                t
            })
            .collect()
    })
}

fn trace() -> impl Strategy<Value = BandwidthTrace> {
    proptest::collection::vec((1.0f64..200.0, 0.5f64..100.0), 1..5).prop_map(|segs| {
        let mut t = 0.0;
        let segs = segs
            .into_iter()
            .map(|(len, mbps)| {
                let s = (t, mbps);
                t += len;
                s
            })
            .collect();
        BandwidthTrace::new(segs).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn tasks_flow_through_stages_in_order(seed in any::<u64>(), size in 2usize..20, arr in arrivals(), tr in trace()) {
        let mut rng = common::rng(seed);
        let g = common::series_parallel(&mut rng, size);
        let s = common::strategy(&g, &mut rng);
        let r = run(&g, &s, &arr, &tr);
        prop_assert_eq!(r.tasks.len(), arr.len());
        for t in &r.tasks {
            let mut clock = t.arrival_ms;
            for stage in Stage::ALL {
                if let Some(sp) = t.span(stage) {
                    prop_assert!(sp.start >= clock - 1e-9 && sp.finish >= sp.start);
                    clock = sp.finish;
                }
            }
            prop_assert!((t.completion_ms - clock).abs() < 1e-9);
            prop_assert!((t.latency_ms - (t.completion_ms - t.arrival_ms)).abs() < 1e-9);
            prop_assert!(t.latency_ms + 1e-9 >= t.service_ms);
        }
        // Each stage serves one task at a time, first come first served.
        for stage in Stage::ALL {
            let occ = r.occupancy(stage);
            prop_assert!(occ.windows(2).all(|w| w[1].start >= w[0].finish - 1e-9));
        }
        for k in 0..3 {
            prop_assert!((r.stage_busy_ms[k] + r.stage_idle_ms[k] - r.makespan_ms).abs() < 1e-6);
        }
        let b = bubble_report(&r);
        prop_assert!(b.total_ms() >= 0.0);
    }

    #[test]
    fn simulation_is_deterministic(seed in any::<u64>(), size in 2usize..20, arr in arrivals(), tr in trace()) {
        let mut rng = common::rng(seed);
        let g = common::series_parallel(&mut rng, size);
        let s = common::strategy(&g, &mut rng);
        prop_assert_eq!(run(&g, &s, &arr, &tr), run(&g, &s, &arr, &tr));
    }

    #[test]
    fn saturated_pipeline_runs_at_the_slowest_stage(seed in any::<u64>(), size in 2usize..20, bw in 1u32..100) {
        let mut rng = common::rng(seed);
        let g = common::series_parallel(&mut rng, size);
        let s = common::strategy(&g, &mut rng);
        let bw = f64::from(bw);
        let r = run(&g, &s, &vec![0.0; 500], &BandwidthTrace::constant(bw).unwrap());
        let expected = stage_times(&g, &s, bw).max_stage();
        prop_assert!((r.steady_interval_ms - expected).abs() <= 0.01 * expected);
    }

    #[test]
    fn littles_law_holds(seed in any::<u64>(), size in 2usize..20, bw in 1u32..100, slack in 0.5f64..3.0) {
        let mut rng = common::rng(seed);
        let g = common::series_parallel(&mut rng, size);
        let s = common::strategy(&g, &mut rng);
        let bw = f64::from(bw);
        let interval = stage_times(&g, &s, bw).max_stage() * slack;
        let arr: Vec<f64> = (0..400).map(|i| i as f64 * interval).collect();
        let r = run(&g, &s, &arr, &BandwidthTrace::constant(bw).unwrap());
        // Time-average number in system over [first arrival, last completion]
        // from an event sweep, against arrival rate times mean latency.
        let mut events: Vec<(f64, i32)> = r.tasks.iter().flat_map(|t| [(t.arrival_ms, 1), (t.completion_ms, -1)]).collect();
        events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (mut area, mut n, mut prev) = (0.0, 0i32, events[0].0);
        for (t, d) in events {
            area += f64::from(n) * (t - prev);
            n += d;
            prev = t;
        }
        let horizon = r.makespan_ms - arr[0];
        prop_assume!(horizon > 0.0);
        let l = area / horizon;
        let lambda = arr.len() as f64 / horizon;
        prop_assert!((l - lambda * r.mean_latency_ms()).abs() <= 0.05 * l.max(1e-9));
        if slack >= 1.0 {
            // Below saturation nobody waits behind a later stage for long.
            prop_assert!(r.tasks.iter().all(|t| t.latency_ms <= t.service_ms + interval * 3.0 + 1e-6));
        }
    }
}
