//! Deterministic three-stage pipeline simulator: device compute, link
//! transmission and cloud compute, each a first-come first-served resource
//! of capacity one.
//!
//! Stage `k` of task `n` starts when stage `k - 1` of task `n` and stage `k`
//! of the previous task using that stage have both finished. Transmission
//! time integrates a piecewise-constant bandwidth trace from the moment the
//! transfer starts. Tasks that exit early finish with their device stage and
//! never touch the link or the cloud.

use alloc::vec::Vec;
use core::fmt;

use crate::graph::ModelGraph;
use crate::online::{OnlineError, OnlineScheduler, TaskFeature};
use crate::plan::{stage_times, PartitionStrategy};

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    EmptyStream,
    UnsortedArrivals { index: usize },
    InvalidTrace(&'static str),
    StrategyMismatch,
    Online(OnlineError),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::EmptyStream => write!(f, "task stream is empty"),
            SimError::UnsortedArrivals { index } => {
                write!(f, "arrival of task {index} precedes the previous one")
            }
            SimError::InvalidTrace(why) => write!(f, "invalid bandwidth trace: {why}"),
            SimError::StrategyMismatch => write!(f, "strategy does not match the model"),
            SimError::Online(e) => write!(f, "online scheduling failed: {e}"),
        }
    }
}

impl core::error::Error for SimError {}

impl From<OnlineError> for SimError {
    fn from(e: OnlineError) -> Self {
        SimError::Online(e)
    }
}

/// Piecewise-constant bandwidth in Mbps; the last segment never ends.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthTrace {
    segments: Vec<(f64, f64)>,
}

impl BandwidthTrace {
    /// `segments` are `(start_ms, mbps)` pairs; the first must start at 0.
    pub fn new(segments: Vec<(f64, f64)>) -> Result<Self, SimError> {
        match segments.first() {
            None => return Err(SimError::InvalidTrace("no segments")),
            Some(&(t, _)) if t != 0.0 => return Err(SimError::InvalidTrace("first segment must start at 0")),
            _ => {}
        }
        if segments.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(SimError::InvalidTrace("start times must strictly increase"));
        }
        if segments.iter().any(|&(t, b)| !t.is_finite() || !(b > 0.0 && b.is_finite())) {
            return Err(SimError::InvalidTrace("bandwidth must be positive and finite"));
        }
        Ok(BandwidthTrace { segments })
    }

    pub fn constant(mbps: f64) -> Result<Self, SimError> {
        Self::new(alloc::vec![(0.0, mbps)])
    }

    pub fn segments(&self) -> &[(f64, f64)] {
        &self.segments
    }

    fn segment_at(&self, t: f64) -> usize {
        self.segments.partition_point(|&(s, _)| s <= t).saturating_sub(1)
    }

    pub fn mbps_at(&self, t_ms: f64) -> f64 {
        self.segments[self.segment_at(t_ms)].1
    }
}

/// Time to push `payload_bits` through the link starting at `start_ms`,
/// integrating the trace segment by segment.
pub fn transmission_duration(payload_bits: u64, start_ms: f64, trace: &BandwidthTrace) -> f64 {
    let mut remaining = payload_bits as f64;
    if remaining <= 0.0 {
        return 0.0;
    }
    let segs = &trace.segments;
    let mut i = trace.segment_at(start_ms);
    let mut t = start_ms.max(0.0);
    loop {
        // Mbps is bits per microsecond, so 1000 bits per ms.
        let rate = segs[i].1 * 1000.0;
        match segs.get(i + 1) {
            Some(&(next, _)) if rate * (next - t) < remaining => {
                remaining -= rate * (next - t);
                t = next;
                i += 1;
            }
            _ => return t + remaining / rate - start_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub arrival_ms: f64,
    pub feature: Option<TaskFeature>,
    pub label: Option<usize>,
}

impl TaskSpec {
    pub fn at(arrival_ms: f64) -> Self {
        TaskSpec {
            arrival_ms,
            feature: None,
            label: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    tasks: Vec<TaskSpec>,
}

impl TaskStream {
    pub fn new(tasks: Vec<TaskSpec>) -> Result<Self, SimError> {
        if tasks.is_empty() {
            return Err(SimError::EmptyStream);
        }
        if let Some(i) = (1..tasks.len()).find(|&i| !(tasks[i].arrival_ms >= tasks[i - 1].arrival_ms)) {
            return Err(SimError::UnsortedArrivals { index: i });
        }
        Ok(TaskStream { tasks })
    }

    /// `count` featureless tasks arriving every `interval_ms` from 0.
    pub fn periodic(interval_ms: f64, count: usize) -> Result<Self, SimError> {
        Self::new((0..count).map(|i| TaskSpec::at(i as f64 * interval_ms)).collect())
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Device,
    Transmission,
    Cloud,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Device, Stage::Transmission, Stage::Cloud];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Device => "device",
            Stage::Transmission => "transmission",
            Stage::Cloud => "cloud",
        }
    }
}

/// `[start, finish)` occupancy of a stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Span {
    pub start: f64,
    pub finish: f64,
}

impl Span {
    pub fn duration(&self) -> f64 {
        self.finish - self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub arrival_ms: f64,
    pub device: Span,
    /// `None` when the task exited early or the strategy sends nothing.
    pub transmission: Option<Span>,
    /// `None` when the task exited early or the strategy has no cloud layer.
    pub cloud: Option<Span>,
    pub completion_ms: f64,
    pub latency_ms: f64,
    /// Sum of the task's own stage durations, without queueing.
    pub service_ms: f64,
    pub exited_early: bool,
    /// Cut precision used for this task, if anything was sent.
    pub precision: Option<u8>,
    pub bits_sent: u64,
    pub result_label: Option<usize>,
}

impl TaskRecord {
    pub fn span(&self, stage: Stage) -> Option<Span> {
        match stage {
            Stage::Device => Some(self.device),
            Stage::Transmission => self.transmission,
            Stage::Cloud => self.cloud,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub tasks: Vec<TaskRecord>,
    pub makespan_ms: f64,
    pub throughput_it_per_s: f64,
    /// Throughput over completions after the first 10% of tasks.
    pub steady_throughput_it_per_s: f64,
    /// Mean time between completions over the same window.
    pub steady_interval_ms: f64,
    /// Indexed like [`Stage::ALL`].
    pub stage_busy_ms: [f64; 3],
    /// `makespan - busy` per stage.
    pub stage_idle_ms: [f64; 3],
}

impl SimReport {
    pub fn mean_latency_ms(&self) -> f64 {
        self.tasks.iter().map(|t| t.latency_ms).sum::<f64>() / self.tasks.len() as f64
    }

    pub fn exited_count(&self) -> usize {
        self.tasks.iter().filter(|t| t.exited_early).count()
    }

    pub fn exit_ratio(&self) -> f64 {
        self.exited_count() as f64 / self.tasks.len() as f64
    }

    pub fn mean_bits_sent(&self) -> f64 {
        self.tasks.iter().map(|t| t.bits_sent as f64).sum::<f64>() / self.tasks.len() as f64
    }

    /// Occupancies of `stage` in task order.
    pub fn occupancy(&self, stage: Stage) -> Vec<Span> {
        self.tasks.iter().filter_map(|t| t.span(stage)).collect()
    }

    /// Completions per second within `[from_ms, to_ms)`.
    pub fn throughput_between(&self, from_ms: f64, to_ms: f64) -> f64 {
        let n = self
            .tasks
            .iter()
            .filter(|t| t.completion_ms >= from_ms && t.completion_ms < to_ms)
            .count();
        n as f64 * 1000.0 / (to_ms - from_ms)
    }

    /// Largest stage duration seen on any task.
    pub fn max_stage_ms(&self) -> f64 {
        self.tasks
            .iter()
            .flat_map(|t| Stage::ALL.into_iter().filter_map(|s| t.span(s)))
            .map(|s| s.duration())
            .fold(0.0, f64::max)
    }
}

/// Fraction of tasks skipped when measuring steady state.
pub const WARM_UP_FRACTION: f64 = 0.1;

/// Runs `stream` through the pipeline of `strategy`.
///
/// With an online scheduler, each task carrying a feature is decided when
/// its device stage ends (the decision cost is added to that stage): it
/// either exits or is sent with every cut at the chosen precision. The
/// scheduler's base precision is the strategy's highest cut precision, and
/// the bandwidth it sees is the trace value when the link frees up for the
/// task, so precision is bound as the task reaches the head of the send
/// queue. Strategies without cuts bypass the scheduler.
pub fn simulate(
    g: &ModelGraph,
    strategy: &PartitionStrategy,
    stream: &TaskStream,
    trace: &BandwidthTrace,
    mut online: Option<&mut OnlineScheduler>,
) -> Result<SimReport, SimError> {
    if strategy.device_mask().len() != g.len() {
        return Err(SimError::StrategyMismatch);
    }
    if stream.is_empty() {
        return Err(SimError::EmptyStream);
    }
    // Bandwidth is irrelevant to T_e and T_c.
    let st = stage_times(g, strategy, 1.0);
    let base_bits = strategy.max_bits();
    let payload_elements = strategy.payload_elements(g);
    let static_bits = strategy.payload_bits(g);
    let sends = !strategy.cuts().is_empty() || (!strategy.has_device() && strategy.has_cloud());

    let mut device_free = f64::NEG_INFINITY;
    let mut link_free = f64::NEG_INFINITY;
    let mut cloud_free = f64::NEG_INFINITY;
    let mut tasks = Vec::with_capacity(stream.len());

    for spec in stream.tasks() {
        let decides = match (&online, base_bits, &spec.feature) {
            (Some(_), Some(_), Some(_)) => true,
            _ => false,
        };
        let decision_cost = match &online {
            Some(s) if decides => s.decision_cost_ms,
            _ => 0.0,
        };
        let d_start = spec.arrival_ms.max(device_free);
        let d_end = d_start + st.t_e_ms + decision_cost;
        device_free = d_end;
        let device = Span {
            start: d_start,
            finish: d_end,
        };

        let mut precision = base_bits;
        let mut bits = static_bits;
        let mut exited = false;
        let mut result_label = None;
        if decides {
            let sched = online.as_deref_mut().expect("checked above");
            let feature = spec.feature.as_ref().expect("checked above");
            let base = base_bits.expect("checked above");
            let d = sched.decide(
                feature,
                spec.label,
                base,
                st.t_e_ms,
                st.t_c_ms,
                payload_elements,
                trace.mbps_at(d_end.max(link_free)),
            )?;
            if d.exited {
                exited = true;
                result_label = d.result_label;
                precision = None;
                bits = 0;
            } else {
                precision = Some(d.q_chosen);
                bits = payload_elements * u64::from(d.q_chosen);
            }
        }

        let (transmission, cloud, completion) = if exited {
            (None, None, d_end)
        } else {
            let mut ready = d_end;
            let transmission = sends.then(|| {
                let start = ready.max(link_free);
                let finish = start + transmission_duration(bits, start, trace);
                link_free = finish;
                ready = finish;
                Span { start, finish }
            });
            let cloud = strategy.has_cloud().then(|| {
                let start = ready.max(cloud_free);
                let finish = start + st.t_c_ms;
                cloud_free = finish;
                ready = finish;
                Span { start, finish }
            });
            (transmission, cloud, ready)
        };
        let service_ms = device.duration()
            + transmission.map_or(0.0, |s| s.duration())
            + cloud.map_or(0.0, |s| s.duration());
        tasks.push(TaskRecord {
            arrival_ms: spec.arrival_ms,
            device,
            transmission,
            cloud,
            completion_ms: completion,
            latency_ms: completion - spec.arrival_ms,
            service_ms,
            exited_early: exited,
            precision: if exited { None } else { precision.filter(|_| sends) },
            bits_sent: if sends { bits } else { 0 },
            result_label,
        });
    }
    Ok(summarize(tasks))
}

fn summarize(tasks: Vec<TaskRecord>) -> SimReport {
    let n = tasks.len();
    let first_arrival = tasks[0].arrival_ms;
    let mut completions: Vec<f64> = tasks.iter().map(|t| t.completion_ms).collect();
    completions.sort_by(f64::total_cmp);
    let last = completions[n - 1];
    let makespan = last - first_arrival;
    let throughput = if makespan > 0.0 {
        n as f64 * 1000.0 / makespan
    } else {
        f64::INFINITY
    };

    let skip = (n as f64 * WARM_UP_FRACTION) as usize;
    let (steady_interval, steady_throughput) = if n - skip >= 2 && last > completions[skip] {
        let interval = (last - completions[skip]) / (n - skip - 1) as f64;
        (interval, 1000.0 / interval)
    } else {
        (makespan / n as f64, throughput)
    };

    let mut busy = [0.0; 3];
    for t in &tasks {
        for (k, stage) in Stage::ALL.into_iter().enumerate() {
            busy[k] += t.span(stage).map_or(0.0, |s| s.duration());
        }
    }
    let idle = busy.map(|b| makespan - b);
    SimReport {
        tasks,
        makespan_ms: makespan,
        throughput_it_per_s: throughput,
        steady_throughput_it_per_s: steady_throughput,
        steady_interval_ms: steady_interval,
        stage_busy_ms: busy,
        stage_idle_ms: idle,
    }
}

/// Number of equal-width histogram bins in a [`BubbleReport`].
pub const BUBBLE_BINS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct StageBubbles {
    pub stage: Stage,
    /// Idle time between each pair of consecutive occupancies.
    pub gaps: Vec<f64>,
    pub total_ms: f64,
    /// Gap counts over `[0, max gap]` in equal-width bins.
    pub histogram: [usize; BUBBLE_BINS],
    pub bin_width_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BubbleReport {
    pub stages: [StageBubbles; 3],
}

impl BubbleReport {
    pub fn stage(&self, stage: Stage) -> &StageBubbles {
        &self.stages[stage as usize]
    }

    pub fn total_ms(&self) -> f64 {
        self.stages.iter().map(|s| s.total_ms).sum()
    }
}

/// Idle gaps inside each stage's occupied window.
pub fn bubble_report(r: &SimReport) -> BubbleReport {
    BubbleReport {
        stages: Stage::ALL.map(|stage| stage_bubbles(stage, &r.occupancy(stage))),
    }
}

fn stage_bubbles(stage: Stage, spans: &[Span]) -> StageBubbles {
    let gaps: Vec<f64> = spans
        .windows(2)
        .map(|w| (w[1].start - w[0].finish).max(0.0))
        .collect();
    let total_ms = gaps.iter().sum();
    let max = gaps.iter().copied().fold(0.0, f64::max);
    let bin_width_ms = max / BUBBLE_BINS as f64;
    let mut histogram = [0; BUBBLE_BINS];
    for &g in &gaps {
        let bin = if bin_width_ms > 0.0 {
            ((g / bin_width_ms) as usize).min(BUBBLE_BINS - 1)
        } else {
            0
        };
        histogram[bin] += 1;
    }
    StageBubbles {
        stage,
        gaps,
        total_ms,
        histogram,
        bin_width_ms,
    }
}
