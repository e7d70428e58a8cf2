//! Text reports of plans and simulations.
//!
//! Numbers are printed with 6 significant digits in fixed notation (see
//! [`fmt6`]); infinite values print as `inf`.
//!
//! `tasks.tsv` has one header row and one row per task, tab-separated:
//!
//! | column | meaning |
//! |---|---|
//! | `task` | index in arrival order |
//! | `arrival_ms` | arrival time |
//! | `device_start`, `device_finish` | device stage occupancy |
//! | `tx_start`, `tx_finish` | link occupancy, `-` if nothing was sent |
//! | `cloud_start`, `cloud_finish` | cloud occupancy, `-` if unused |
//! | `completion_ms`, `latency_ms` | completion time and completion minus arrival |
//! | `service_ms` | sum of the task's own stage durations |
//! | `exited` | `1` when the task exited early |
//! | `precision` | cut bit-width used, `-` if nothing was sent |
//! | `bits` | bits sent |
//! | `label` | early-exit label, `-` otherwise |
//!
//! `summary.txt` holds `key value` lines. `bubbles.txt` has one row per
//! stage: total idle time between consecutive occupancies, the number of
//! nonzero gaps, and a histogram of all gaps.

use std::fmt::Write as _;

use splitpipe_core::sim::{Span, BUBBLE_BINS};
use splitpipe_core::{BubbleReport, ModelGraph, PartitionStrategy, PlanMetrics, SimReport, Stage};

/// `x` with 6 significant digits, fixed notation.
pub fn fmt6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x.abs() < 1e-12 {
        return "0".into();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

fn opt_span(s: Option<Span>) -> [String; 2] {
    match s {
        Some(s) => [fmt6(s.start), fmt6(s.finish)],
        None => ["-".into(), "-".into()],
    }
}

pub const TASK_COLUMNS: [&str; 15] = [
    "task",
    "arrival_ms",
    "device_start",
    "device_finish",
    "tx_start",
    "tx_finish",
    "cloud_start",
    "cloud_finish",
    "completion_ms",
    "latency_ms",
    "service_ms",
    "exited",
    "precision",
    "bits",
    "label",
];

pub fn tasks_tsv(r: &SimReport) -> String {
    let header = TASK_COLUMNS.join("\t");
    let mut out = format!("{header}\n");
    for (i, t) in r.tasks.iter().enumerate() {
        let [ts, tf] = opt_span(t.transmission);
        let [cs, cf] = opt_span(t.cloud);
        let row = [
            i.to_string(),
            fmt6(t.arrival_ms),
            fmt6(t.device.start),
            fmt6(t.device.finish),
            ts,
            tf,
            cs,
            cf,
            fmt6(t.completion_ms),
            fmt6(t.latency_ms),
            fmt6(t.service_ms),
            u8::from(t.exited_early).to_string(),
            t.precision.map_or("-".into(), |p| p.to_string()),
            t.bits_sent.to_string(),
            t.result_label.map_or("-".into(), |l| l.to_string()),
        ];
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

pub fn summary_text(r: &SimReport) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| writeln!(s, "{k} {v}").unwrap();
    kv("tasks", r.tasks.len().to_string());
    kv("exited", r.exited_count().to_string());
    kv("exit_ratio", fmt6(r.exit_ratio()));
    kv("makespan_ms", fmt6(r.makespan_ms));
    kv("throughput_it_per_s", fmt6(r.throughput_it_per_s));
    kv("steady_throughput_it_per_s", fmt6(r.steady_throughput_it_per_s));
    kv("steady_interval_ms", fmt6(r.steady_interval_ms));
    kv("first_latency_ms", fmt6(r.tasks[0].latency_ms));
    kv("mean_latency_ms", fmt6(r.mean_latency_ms()));
    kv("max_stage_ms", fmt6(r.max_stage_ms()));
    kv("mean_bits_per_task", fmt6(r.mean_bits_sent()));
    for (k, stage) in Stage::ALL.into_iter().enumerate() {
        kv(&format!("{}_busy_ms", stage.name()), fmt6(r.stage_busy_ms[k]));
        kv(&format!("{}_idle_ms", stage.name()), fmt6(r.stage_idle_ms[k]));
    }
    s
}

pub fn bubbles_text(b: &BubbleReport) -> String {
    let mut s = String::from("stage\ttotal_idle_ms\tbubbles\tbin_width_ms");
    for i in 0..BUBBLE_BINS {
        write!(s, "\tbin{i}").unwrap();
    }
    s.push('\n');
    for st in &b.stages {
        write!(s, "{}\t{}\t{}\t{}", st.stage.name(), fmt6(st.total_ms), st.gaps.iter().filter(|&&g| g > 0.0).count(), fmt6(st.bin_width_ms)).unwrap();
        for h in st.histogram {
            write!(s, "\t{h}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn metrics_text(m: &PlanMetrics) -> String {
    let rows = [
        ("t_e_ms", m.t_e_ms),
        ("t_t_ms", m.t_t_ms),
        ("t_c_ms", m.t_c_ms),
        ("t_t_parallel_ms", m.t_t_parallel_ms),
        ("t_c_parallel_ms", m.t_c_parallel_ms),
        ("b_c", m.b_c),
        ("b_t", m.b_t),
        ("max_stage_ms", m.max_stage_ms),
        ("objective", m.objective),
    ];
    rows.iter().map(|(k, v)| format!("{k} {}\n", fmt6(*v))).collect()
}

/// One line per cut: `layer bits severed-consumers`.
pub fn strategy_text(g: &ModelGraph, s: &PartitionStrategy) -> String {
    let ids = |it: &mut dyn Iterator<Item = usize>| it.map(|v| g.layer(v).id.clone()).collect::<Vec<_>>().join(",");
    let mut out = String::new();
    writeln!(out, "device {}", ids(&mut s.device_layers())).unwrap();
    writeln!(out, "cloud {}", ids(&mut s.cloud_layers())).unwrap();
    for c in s.cuts() {
        writeln!(out, "cut {} bits {} to {}", g.layer(c.layer).id, c.bits, ids(&mut c.severed.iter().map(|e| e.1))).unwrap();
    }
    out
}
