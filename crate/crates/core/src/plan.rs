//! Device/cloud partition strategies, their pipeline metrics, and the
//! offline search for the strategy with the fewest pipeline bubbles.
//!
//! A strategy puts a downward-closed set of layers on the device and the rest
//! on the cloud. Every device layer with a cloud consumer is a cut: its output
//! is quantized to the cut's bit-width and sent once over the link.
//!
//! The objective of a strategy is
//!
//! ```text
//! B_c + B_t + max{T_e, T_t, T_c}
//! B_c = |T_e - T_c|
//! B_t = |T_t - max{T_e, T_t - T_t^p, T_c - T_c^p}|
//! ```
//!
//! where `T_t^p` and `T_c^p` are the transmission and cloud times that overlap
//! other work in a single task's earliest-start schedule.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::graph::{cluster_virtual_blocks, ChainFlow, FlowElement, ModelGraph, VirtualBlock};
use crate::math;
use crate::quant::{self, OptimizerConfig, MAX_BITS, MIN_BITS};

/// Largest graph the exhaustive oracle accepts.
pub const BRUTE_FORCE_MAX_LAYERS: usize = 16;

/// Per-layer precision passes at one boundary position.
const MAX_PRECISION_PASSES: usize = 2;

/// Milliseconds needed to send `bits` at `mbps`.
#[inline]
pub fn transfer_ms(bits: f64, mbps: f64) -> f64 {
    bits / (mbps * 1000.0)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanError {
    InvalidBandwidth,
    /// A strategy does not fit the graph; the message names the problem.
    InvalidStrategy(&'static str),
    /// Carries the violation of the closest infeasible strategy seen.
    NoFeasibleStrategy(Option<Infeasibility>),
    GraphTooLarge { layers: usize, limit: usize },
}

impl fmt::Display for PlanError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanError::InvalidBandwidth => write!(f, "bandwidth must be positive and finite"),
            PlanError::InvalidStrategy(why) => write!(f, "invalid strategy: {why}"),
            PlanError::NoFeasibleStrategy(Some(why)) => write!(f, "infeasible({why})"),
            PlanError::NoFeasibleStrategy(None) => write!(f, "infeasible"),
            PlanError::GraphTooLarge { layers, limit } => {
                write!(f, "graph has {layers} layers; exhaustive search is limited to {limit}")
            }
        }
    }
}

impl core::error::Error for PlanError {}

/// A device layer whose output crosses to the cloud.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cut {
    pub layer: usize,
    pub severed: Vec<(usize, usize)>,
    pub bits: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionStrategy {
    device: Vec<bool>,
    /// Ordered by the producer's topological position.
    cuts: Vec<Cut>,
}

impl PartitionStrategy {
    /// Builds a strategy from the device-side layer set; `bits_for` supplies
    /// the precision of each cut layer.
    pub fn from_device_set(
        g: &ModelGraph,
        device: Vec<bool>,
        mut bits_for: impl FnMut(usize) -> u8,
    ) -> Result<Self, PlanError> {
        if device.len() != g.len() {
            return Err(PlanError::InvalidStrategy("layer count does not match the model"));
        }
        if g.edges().iter().any(|&(a, b)| !device[a] && device[b]) {
            return Err(PlanError::InvalidStrategy("an edge runs from the cloud to the device"));
        }
        let mut cuts = Vec::new();
        for &v in g.topo_order() {
            if !device[v] {
                continue;
            }
            let severed: Vec<(usize, usize)> =
                g.succs(v).iter().filter(|&&w| !device[w]).map(|&w| (v, w)).collect();
            if !severed.is_empty() {
                let bits = bits_for(v);
                if !(MIN_BITS..=MAX_BITS).contains(&bits) {
                    return Err(PlanError::InvalidStrategy("cut precision outside [2,16]"));
                }
                cuts.push(Cut {
                    layer: v,
                    severed,
                    bits,
                });
            }
        }
        Ok(PartitionStrategy { device, cuts })
    }

    pub fn full_device(g: &ModelGraph) -> Self {
        PartitionStrategy {
            device: vec![true; g.len()],
            cuts: Vec::new(),
        }
    }

    pub fn full_cloud(g: &ModelGraph) -> Self {
        PartitionStrategy {
            device: vec![false; g.len()],
            cuts: Vec::new(),
        }
    }

    pub fn is_device(&self, v: usize) -> bool {
        self.device[v]
    }

    pub fn device_mask(&self) -> &[bool] {
        &self.device
    }

    pub fn device_layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.device.iter().enumerate().filter(|(_, &d)| d).map(|(v, _)| v)
    }

    pub fn cloud_layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.device.iter().enumerate().filter(|(_, &d)| !d).map(|(v, _)| v)
    }

    pub fn cuts(&self) -> &[Cut] {
        &self.cuts
    }

    pub fn has_cloud(&self) -> bool {
        self.device.iter().any(|d| !d)
    }

    pub fn has_device(&self) -> bool {
        self.device.iter().any(|&d| d)
    }

    pub fn cut_edge_count(&self) -> usize {
        self.cuts.iter().map(|c| c.severed.len()).sum()
    }

    pub fn total_bits(&self) -> u32 {
        self.cuts.iter().map(|c| u32::from(c.bits)).sum()
    }

    /// Highest cut precision, if any cut exists.
    pub fn max_bits(&self) -> Option<u8> {
        self.cuts.iter().map(|c| c.bits).max()
    }

    /// Element count sent per task, summed over cut layers.
    pub fn payload_elements(&self, g: &ModelGraph) -> u64 {
        self.cuts.iter().map(|c| g.layer(c.layer).output_elements).sum()
    }

    /// Bits sent per task at the strategy's own precisions. A strategy with
    /// no device layer uploads the raw input instead.
    pub fn payload_bits(&self, g: &ModelGraph) -> u64 {
        if !self.has_device() && self.has_cloud() {
            return g.input_bits();
        }
        self.cuts
            .iter()
            .map(|c| quant::payload_bits(g.layer(c.layer).output_elements, c.bits))
            .sum()
    }

    /// Bits sent per task when every cut uses `bits`.
    pub fn payload_bits_at(&self, g: &ModelGraph, bits: u8) -> u64 {
        if !self.has_device() && self.has_cloud() {
            return g.input_bits();
        }
        quant::payload_bits(self.payload_elements(g), bits)
    }
}

/// Per-stage times of one task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTimes {
    pub t_e_ms: f64,
    pub t_t_ms: f64,
    pub t_c_ms: f64,
}

impl StageTimes {
    pub fn max_stage(&self) -> f64 {
        math::max3(self.t_e_ms, self.t_t_ms, self.t_c_ms)
    }

    pub fn total(&self) -> f64 {
        self.t_e_ms + self.t_t_ms + self.t_c_ms
    }
}

/// `T_e`, `T_t` and `T_c` of a strategy at a fixed bandwidth.
pub fn stage_times(g: &ModelGraph, s: &PartitionStrategy, bandwidth_mbps: f64) -> StageTimes {
    let mut t_e = 0.0;
    let mut t_c = 0.0;
    for (v, layer) in g.layers().iter().enumerate() {
        if s.device[v] {
            t_e += layer.device_time_ms;
        } else {
            t_c += layer.cloud_time_ms;
        }
    }
    let t_t = if !s.has_device() && s.has_cloud() {
        transfer_ms(g.input_bits() as f64, bandwidth_mbps)
    } else {
        s.cuts
            .iter()
            .map(|c| {
                let bits = quant::payload_bits(g.layer(c.layer).output_elements, c.bits);
                transfer_ms(bits as f64, bandwidth_mbps)
            })
            .sum()
    };
    StageTimes {
        t_e_ms: t_e,
        t_t_ms: t_t,
        t_c_ms: t_c,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

/// Earliest-start schedule of a single task: the device runs its layers back
/// to back in topological order, the link sends cut outputs first-come
/// first-served, and the cloud runs each layer once its inputs are present.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSchedule {
    pub device: Vec<(usize, Interval)>,
    /// `None` marks the raw-input upload of a cloud-only strategy.
    pub link: Vec<(Option<usize>, Interval)>,
    pub cloud: Vec<(usize, Interval)>,
}

pub fn task_schedule(g: &ModelGraph, s: &PartitionStrategy, bandwidth_mbps: f64) -> TaskSchedule {
    let n = g.len();
    let mut device_done = vec![0.0; n];
    let mut device = Vec::new();
    let mut t = 0.0;
    for &v in g.topo_order() {
        if s.device[v] {
            let start = t;
            t += g.layer(v).device_time_ms;
            device_done[v] = t;
            device.push((v, Interval { start, end: t }));
        }
    }

    let mut arrived = vec![0.0; n];
    let mut link = Vec::new();
    let mut link_free = 0.0f64;
    let mut input_arrival = 0.0;
    if !s.has_device() && s.has_cloud() {
        input_arrival = transfer_ms(g.input_bits() as f64, bandwidth_mbps);
        link.push((None, Interval { start: 0.0, end: input_arrival }));
    }
    // Cuts are in topological order, which is also device completion order.
    for c in &s.cuts {
        let start = link_free.max(device_done[c.layer]);
        let bits = quant::payload_bits(g.layer(c.layer).output_elements, c.bits);
        let end = start + transfer_ms(bits as f64, bandwidth_mbps);
        arrived[c.layer] = end;
        link_free = end;
        link.push((Some(c.layer), Interval { start, end }));
    }

    let mut cloud_done = vec![0.0; n];
    let mut cloud = Vec::new();
    let mut cloud_free = 0.0f64;
    for &v in g.topo_order() {
        if s.device[v] {
            continue;
        }
        let ready = if g.preds(v).is_empty() {
            input_arrival
        } else {
            g.preds(v)
                .iter()
                .map(|&p| if s.device[p] { arrived[p] } else { cloud_done[p] })
                .fold(0.0, f64::max)
        };
        let start = ready.max(cloud_free);
        let end = start + g.layer(v).cloud_time_ms;
        cloud_done[v] = end;
        cloud_free = end;
        cloud.push((v, Interval { start, end }));
    }
    TaskSchedule {
        device,
        link,
        cloud,
    }
}

/// Transmission and cloud parallel times `(T_t^p, T_c^p)`.
///
/// `T_t^p` is the link time that overlaps device computation; `T_c^p` is the
/// cloud computation time that overlaps the window before the last
/// transmission completes. Both come from [`task_schedule`].
pub fn parallel_overlaps(g: &ModelGraph, s: &PartitionStrategy, bandwidth_mbps: f64) -> (f64, f64) {
    let sched = task_schedule(g, s, bandwidth_mbps);
    let device_end = sched.device.last().map_or(0.0, |(_, i)| i.end);
    let link_end = sched.link.iter().map(|(_, i)| i.end).fold(0.0, f64::max);
    let t_t_p = sched
        .link
        .iter()
        .map(|(_, i)| math::overlap(i.start, i.end, 0.0, device_end))
        .sum();
    let t_c_p = sched
        .cloud
        .iter()
        .map(|(_, i)| math::overlap(i.start, i.end, 0.0, link_end))
        .sum();
    (t_t_p, t_c_p)
}

/// Computation and transmission bubbles `(B_c, B_t)`.
pub fn bubble_functions(st: &StageTimes, t_t_parallel: f64, t_c_parallel: f64) -> (f64, f64) {
    let b_c = (st.t_e_ms - st.t_c_ms).abs();
    let b_t = (st.t_t_ms
        - math::max3(
            st.t_e_ms,
            st.t_t_ms - t_t_parallel,
            st.t_c_ms - t_c_parallel,
        ))
    .abs();
    (b_c, b_t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanMetrics {
    pub t_e_ms: f64,
    pub t_t_ms: f64,
    pub t_c_ms: f64,
    pub t_t_parallel_ms: f64,
    pub t_c_parallel_ms: f64,
    pub b_c: f64,
    pub b_t: f64,
    pub objective: f64,
    pub max_stage_ms: f64,
}

impl PlanMetrics {
    pub fn stage_times(&self) -> StageTimes {
        StageTimes {
            t_e_ms: self.t_e_ms,
            t_t_ms: self.t_t_ms,
            t_c_ms: self.t_c_ms,
        }
    }
}

/// Constraint a strategy violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Infeasibility {
    /// A cut's precision loses more accuracy than allowed.
    Accuracy { layer: usize },
    /// `T_e + T_t + T_c` exceeds the latency budget.
    LatencyBudget,
    /// `T_t^p + T_c^p` exceeds the largest stage.
    OverlapBound,
}

impl Infeasibility {
    pub fn code(&self) -> &'static str {
        match self {
            Infeasibility::Accuracy { .. } => "accuracy",
            Infeasibility::LatencyBudget => "latency-budget",
            Infeasibility::OverlapBound => "overlap-bound",
        }
    }
}

impl fmt::Display for Infeasibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub metrics: PlanMetrics,
    pub infeasible: Option<Infeasibility>,
}

impl Evaluation {
    pub fn is_feasible(&self) -> bool {
        self.infeasible.is_none()
    }
}

/// Assembles stage times, overlaps and bubbles of `s` and checks the
/// accuracy, latency-budget and overlap constraints, in that order.
pub fn evaluate_strategy(
    g: &ModelGraph,
    s: &PartitionStrategy,
    bandwidth_mbps: f64,
    cfg: &OptimizerConfig,
) -> Evaluation {
    let st = stage_times(g, s, bandwidth_mbps);
    let (t_t_p, t_c_p) = parallel_overlaps(g, s, bandwidth_mbps);
    let (b_c, b_t) = bubble_functions(&st, t_t_p, t_c_p);
    let max_stage = st.max_stage();
    let metrics = PlanMetrics {
        t_e_ms: st.t_e_ms,
        t_t_ms: st.t_t_ms,
        t_c_ms: st.t_c_ms,
        t_t_parallel_ms: t_t_p,
        t_c_parallel_ms: t_c_p,
        b_c,
        b_t,
        objective: b_c + b_t + max_stage,
        max_stage_ms: max_stage,
    };

    let accuracy = s.cuts.iter().find(|c| {
        let table = &g.layer(c.layer).accuracy_table;
        let full = quant::full_accuracy(table).unwrap_or(1.0);
        !quant::meets_accuracy(table, full, c.bits, cfg.epsilon)
    });
    let infeasible = if let Some(c) = accuracy {
        Some(Infeasibility::Accuracy { layer: c.layer })
    } else if cfg.t_max_ms.is_some_and(|t_max| st.total() > t_max) {
        Some(Infeasibility::LatencyBudget)
    } else if t_t_p + t_c_p > max_stage {
        Some(Infeasibility::OverlapBound)
    } else {
        None
    };
    Evaluation {
        metrics,
        infeasible,
    }
}

/// Result of a strategy search.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub strategy: PartitionStrategy,
    pub metrics: PlanMetrics,
    /// Number of strategies passed through [`evaluate_strategy`].
    pub evaluations: usize,
}

/// Total order used by every search: feasible first, then smaller
/// objective, smaller largest stage, fewer severed edges, fewer total bits,
/// and finally the device set and precisions themselves.
#[derive(Debug, Clone, PartialEq)]
struct Rank {
    infeasible: bool,
    objective: f64,
    max_stage: f64,
    cut_edges: usize,
    total_bits: u32,
    device: Vec<bool>,
    bits: Vec<(usize, u8)>,
}

impl Rank {
    fn new(e: &Evaluation, s: &PartitionStrategy) -> Self {
        Rank {
            infeasible: !e.is_feasible(),
            objective: e.metrics.objective,
            max_stage: e.metrics.max_stage_ms,
            cut_edges: s.cut_edge_count(),
            total_bits: s.total_bits(),
            device: s.device.clone(),
            bits: s.cuts.iter().map(|c| (c.layer, c.bits)).collect(),
        }
    }
}

impl Eq for Rank {}

impl Ord for Rank {
    fn cmp(&self, other: &Self) -> Ordering {
        self.infeasible
            .cmp(&other.infeasible)
            .then(self.objective.total_cmp(&other.objective))
            .then(self.max_stage.total_cmp(&other.max_stage))
            .then(self.cut_edges.cmp(&other.cut_edges))
            .then(self.total_bits.cmp(&other.total_bits))
            .then_with(|| self.device.cmp(&other.device))
            .then_with(|| self.bits.cmp(&other.bits))
    }
}

impl PartialOrd for Rank {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Per-layer precisions allowed by the accuracy limit, ascending.
fn feasible_precisions(g: &ModelGraph, cfg: &OptimizerConfig) -> Vec<Vec<u8>> {
    g.layers()
        .iter()
        .map(|layer| {
            let table = &layer.accuracy_table;
            let full = quant::full_accuracy(table).unwrap_or(1.0);
            match quant::min_precision(table, full, cfg) {
                Ok(min) => cfg.precision_domain.at_least(min).to_vec(),
                Err(_) => Vec::new(),
            }
        })
        .collect()
}

fn check_bandwidth(bandwidth_mbps: f64) -> Result<(), PlanError> {
    if bandwidth_mbps.is_finite() && bandwidth_mbps > 0.0 {
        Ok(())
    } else {
        Err(PlanError::InvalidBandwidth)
    }
}

/// Best feasible plan so far, and the best-ranked infeasible one's reason.
#[derive(Default)]
struct Incumbent {
    feasible: Option<(Rank, PartitionStrategy, PlanMetrics)>,
    closest: Option<(Rank, Infeasibility)>,
}

impl Incumbent {
    fn offer(&mut self, rank: &Rank, s: &PartitionStrategy, e: &Evaluation) {
        match e.infeasible {
            None => {
                if self.feasible.as_ref().is_none_or(|(b, _, _)| rank < b) {
                    self.feasible = Some((rank.clone(), s.clone(), e.metrics));
                }
            }
            Some(why) => {
                if self.closest.as_ref().is_none_or(|(b, _)| rank < b) {
                    self.closest = Some((rank.clone(), why));
                }
            }
        }
    }

    fn into_plan(self, evaluations: usize, fallback: Option<Infeasibility>) -> Result<Plan, PlanError> {
        match self.feasible {
            Some((_, strategy, metrics)) => Ok(Plan {
                strategy,
                metrics,
                evaluations,
            }),
            None => Err(PlanError::NoFeasibleStrategy(
                self.closest.map(|(_, why)| why).or(fallback),
            )),
        }
    }
}

/// Searches the chain-flow decomposition of `g` for the feasible strategy
/// with the smallest objective.
///
/// The top-level flow is scanned boundary by boundary. Each virtual block is
/// then split open: its elements before/after stay on the device/cloud and
/// all internal flows first advance together, then each is scanned the same
/// way with the others held fixed, recursing into nested blocks. At every
/// candidate boundary the new cut layers start at their minimum feasible
/// precision, try one shared precision, and are then changed one layer at a
/// time when that lowers the objective; the best plan gets a last such pass
/// over all its cuts. The number of evaluated strategies is linear in the
/// number of flow elements.
pub fn optimize(g: &ModelGraph, bandwidth_mbps: f64, cfg: &OptimizerConfig) -> Result<Plan, PlanError> {
    check_bandwidth(bandwidth_mbps)?;
    let flow = cluster_virtual_blocks(g);
    let mut search = Search::new(g, bandwidth_mbps, cfg);
    search.scan_flow(&flow, None);
    search.polish();
    let plan = search.finish()?;
    debug_assert!({
        let e = evaluate_strategy(g, &plan.strategy, bandwidth_mbps, cfg);
        e.is_feasible() && e.metrics == plan.metrics
    });
    Ok(plan)
}

struct Search<'a> {
    g: &'a ModelGraph,
    bandwidth: f64,
    cfg: &'a OptimizerConfig,
    feasible: Vec<Vec<u8>>,
    device: Vec<bool>,
    bits: Vec<u8>,
    current: Option<Rank>,
    best: Incumbent,
    evaluations: usize,
}

type Snapshot = (Vec<bool>, Vec<u8>, Rank);

impl<'a> Search<'a> {
    fn new(g: &'a ModelGraph, bandwidth: f64, cfg: &'a OptimizerConfig) -> Self {
        let feasible = feasible_precisions(g, cfg);
        let bits = feasible
            .iter()
            .map(|f| f.first().copied().unwrap_or(cfg.precision_domain.max()))
            .collect();
        Search {
            g,
            bandwidth,
            cfg,
            feasible,
            device: vec![true; g.len()],
            bits,
            current: None,
            best: Incumbent::default(),
            evaluations: 0,
        }
    }

    fn min_bits(&self, v: usize) -> u8 {
        self.feasible[v]
            .first()
            .copied()
            .unwrap_or(self.cfg.precision_domain.max())
    }

    fn evaluate(&mut self) -> Rank {
        let bits = &self.bits;
        let s = PartitionStrategy::from_device_set(self.g, self.device.clone(), |v| bits[v])
            .expect("search only visits downward-closed device sets");
        let e = evaluate_strategy(self.g, &s, self.bandwidth, self.cfg);
        self.evaluations += 1;
        let rank = Rank::new(&e, &s);
        self.best.offer(&rank, &s, &e);
        self.current = Some(rank.clone());
        rank
    }

    fn snapshot(&self, rank: Rank) -> Snapshot {
        (self.device.clone(), self.bits.clone(), rank)
    }

    fn restore(&mut self, snap: &Snapshot) {
        self.device.clone_from(&snap.0);
        self.bits.clone_from(&snap.1);
        self.current = Some(snap.2.clone());
    }

    fn is_producer(&self, v: usize) -> bool {
        self.device[v] && self.g.succs(v).iter().any(|&w| !self.device[w])
    }

    fn place(&mut self, layers: &[usize], on_device: bool) {
        for &v in layers {
            self.device[v] = on_device;
        }
    }

    /// Picks precisions for the `local` cut layers of the current placement:
    /// first one shared precision (each layer clamped to its own feasible
    /// range), then per-layer changes while any of them helps.
    fn evaluate_with_precisions(&mut self, local: &[usize]) -> Rank {
        let cuts: Vec<usize> = local.iter().copied().filter(|&v| self.is_producer(v)).collect();
        for &v in local {
            self.bits[v] = self.min_bits(v);
        }
        let mut rank = self.evaluate();
        if cuts.is_empty() {
            return rank;
        }
        let mut chosen: Vec<u8> = cuts.iter().map(|&v| self.bits[v]).collect();
        for &q in self.cfg.precision_domain.bits() {
            let shared: Vec<u8> = cuts
                .iter()
                .map(|&v| {
                    let f = &self.feasible[v];
                    f.iter().copied().find(|&b| b >= q).or(f.last().copied()).unwrap_or(self.bits[v])
                })
                .collect();
            if shared == chosen {
                continue;
            }
            for (&v, &b) in cuts.iter().zip(&shared) {
                self.bits[v] = b;
            }
            let r = self.evaluate();
            if r < rank {
                rank = r;
                chosen = shared;
            }
        }
        for (&v, &b) in cuts.iter().zip(&chosen) {
            self.bits[v] = b;
        }
        self.refine_precisions(&cuts, rank, MAX_PRECISION_PASSES)
    }

    /// Coordinate descent over the precisions of `cuts`, starting from the
    /// current bits whose rank is `rank`.
    fn refine_precisions(&mut self, cuts: &[usize], mut rank: Rank, passes: usize) -> Rank {
        for _ in 0..passes {
            let mut improved = false;
            for &v in cuts {
                let kept = self.bits[v];
                let mut best_bits = kept;
                for i in 0..self.feasible[v].len() {
                    let b = self.feasible[v][i];
                    if b == kept {
                        continue;
                    }
                    self.bits[v] = b;
                    let r = self.evaluate();
                    if r < rank {
                        rank = r;
                        best_bits = b;
                        improved = true;
                    }
                }
                self.bits[v] = best_bits;
            }
            if !improved || cuts.len() == 1 {
                break;
            }
        }
        self.current = Some(rank.clone());
        rank
    }

    /// Final precision pass over every cut of the best plan found, since
    /// each boundary position only tuned its own cut layers.
    fn polish(&mut self) {
        let Some((rank, strategy, _)) = &self.best.feasible else {
            return;
        };
        let rank = rank.clone();
        self.device = strategy.device_mask().to_vec();
        for c in strategy.cuts() {
            self.bits[c.layer] = c.bits;
        }
        let cuts: Vec<usize> = strategy.cuts().iter().map(|c| c.layer).collect();
        self.refine_precisions(&cuts, rank, MAX_PRECISION_PASSES);
    }

    /// Moves the boundary of `flow` over every position and into every
    /// suitable block, leaving the best placement in place. Returns whether
    /// the placement improved.
    fn scan_flow(&mut self, flow: &ChainFlow, entry: Option<usize>) -> bool {
        let groups: Vec<Vec<usize>> = flow
            .elements
            .iter()
            .map(|e| {
                let mut v = Vec::new();
                e.collect_layers(&mut v);
                v
            })
            .collect();
        let mut local: Vec<usize> = entry.into_iter().collect();
        local.extend(groups.iter().flatten().copied());
        local.sort_by_key(|&v| self.g.topo_position(v));

        let incoming = self.current.clone();
        let mut best: Option<Snapshot> = incoming.clone().map(|r| self.snapshot(r));
        let start = self.device.clone();

        for p in 0..=groups.len() {
            // The incoming placement is already a candidate.
            let unchanged = groups
                .iter()
                .enumerate()
                .all(|(i, layers)| layers.iter().all(|&v| start[v] == (i < p)));
            if unchanged && incoming.is_some() {
                continue;
            }
            for (i, layers) in groups.iter().enumerate() {
                self.place(layers, i < p);
            }
            let rank = self.evaluate_with_precisions(&local);
            if best.as_ref().is_none_or(|b| rank < b.2) {
                best = Some(self.snapshot(rank));
            }
        }

        for (i, element) in flow.elements.iter().enumerate() {
            let FlowElement::Block(block) = element else {
                continue;
            };
            if !self.is_suitable(block) {
                continue;
            }
            for (j, layers) in groups.iter().enumerate() {
                self.place(layers, j < i);
            }
            self.evaluate_with_precisions(&local);
            let rank = self.open_block(block);
            if best.as_ref().is_none_or(|b| rank < b.2) {
                best = Some(self.snapshot(rank));
            }
        }

        let best = best.expect("at least one position is evaluated");
        self.restore(&best);
        incoming.is_none_or(|r| best.2 < r)
    }

    /// Improves the placement inside an opened block: the best synchronized
    /// frontier, then the best single-flow move from there (every internal
    /// flow scanned from the same placement), then one more in-order pass
    /// over the flows on top of it.
    fn open_block(&mut self, block: &VirtualBlock) -> Rank {
        let mut rank = self.current.clone().expect("block placement evaluated");
        if let Some(front) = self.frontier(block, &rank) {
            rank = front.2.clone();
            self.restore(&front);
        }
        let base = self.snapshot(rank);
        let mut best: Option<Snapshot> = None;
        for inner in &block.flows {
            self.restore(&base);
            if self.scan_flow(inner, Some(block.entry)) {
                let r = self.current.clone().expect("scanned");
                if best.as_ref().is_none_or(|b| r < b.2) {
                    best = Some(self.snapshot(r));
                }
            }
        }
        let Some(best) = best else {
            self.restore(&base);
            return base.2;
        };
        self.restore(&best);
        for inner in &block.flows {
            self.scan_flow(inner, Some(block.entry));
        }
        self.current.clone().expect("scanned")
    }

    /// Advances every internal flow of `block` by the same number of
    /// elements at once, which single-flow moves cannot reach when several
    /// branches only pay off together. Returns the best placement if it
    /// beats `rank`.
    fn frontier(&mut self, block: &VirtualBlock, rank: &Rank) -> Option<Snapshot> {
        if block.flows.len() < 2 {
            return None;
        }
        let base = self.snapshot(rank.clone());
        let flows: Vec<Vec<Vec<usize>>> = block
            .flows
            .iter()
            .map(|f| {
                f.elements
                    .iter()
                    .map(|e| {
                        let mut v = Vec::new();
                        e.collect_layers(&mut v);
                        v
                    })
                    .collect()
            })
            .collect();
        let mut local = vec![block.entry];
        local.extend_from_slice(&block.members);
        local.sort_by_key(|&v| self.g.topo_position(v));
        let depth = flows.iter().map(Vec::len).max().unwrap_or(0);

        let mut best: Option<Snapshot> = None;
        for k in 1..=depth {
            for groups in &flows {
                for (i, layers) in groups.iter().enumerate() {
                    self.place(layers, i < k);
                }
            }
            let r = self.evaluate_with_precisions(&local);
            if r < *best.as_ref().map_or(rank, |b| &b.2) {
                best = Some(self.snapshot(r));
            }
        }
        self.restore(&base);
        best
    }

    /// Blocks worth opening: decomposable, with at least one interior layer
    /// that can be cut within the accuracy limit.
    fn is_suitable(&self, block: &VirtualBlock) -> bool {
        !block.opaque && block.members.iter().any(|&v| !self.feasible[v].is_empty())
    }

    fn finish(self) -> Result<Plan, PlanError> {
        self.best.into_plan(self.evaluations, None)
    }
}

/// Calls `f` with every downward-closed device set of `g`.
fn for_each_device_set(g: &ModelGraph, f: &mut impl FnMut(&[bool])) {
    fn rec(g: &ModelGraph, i: usize, device: &mut Vec<bool>, f: &mut impl FnMut(&[bool])) {
        let Some(&v) = g.topo_order().get(i) else {
            f(device);
            return;
        };
        rec(g, i + 1, device, f);
        if g.preds(v).iter().all(|&p| device[p]) {
            device[v] = true;
            rec(g, i + 1, device, f);
            device[v] = false;
        }
    }
    let mut device = vec![false; g.len()];
    rec(g, 0, &mut device, f);
}

fn producers(g: &ModelGraph, device: &[bool]) -> Vec<usize> {
    g.topo_order()
        .iter()
        .copied()
        .filter(|&v| device[v] && g.succs(v).iter().any(|&w| !device[w]))
        .collect()
}

/// Number of (device set, precision assignment) pairs the exhaustive search
/// evaluates. Not limited by graph size.
pub fn brute_force_plan_count(g: &ModelGraph, cfg: &OptimizerConfig) -> u128 {
    let feasible = feasible_precisions(g, cfg);
    let mut total = 0u128;
    for_each_device_set(g, &mut |device| {
        total += producers(g, device)
            .iter()
            .map(|&v| feasible[v].len() as u128)
            .product::<u128>();
    });
    total
}

/// Exhaustive oracle: every downward-closed device set combined with every
/// precision assignment allowed by the accuracy limit.
pub fn brute_force_optimize(
    g: &ModelGraph,
    bandwidth_mbps: f64,
    cfg: &OptimizerConfig,
) -> Result<Plan, PlanError> {
    check_bandwidth(bandwidth_mbps)?;
    if g.len() > BRUTE_FORCE_MAX_LAYERS {
        return Err(PlanError::GraphTooLarge {
            layers: g.len(),
            limit: BRUTE_FORCE_MAX_LAYERS,
        });
    }
    let feasible = feasible_precisions(g, cfg);
    let mut best = Incumbent::default();
    let mut skipped = None;
    let mut evaluations = 0usize;
    for_each_device_set(g, &mut |device| {
        let cut_layers = producers(g, device);
        if let Some(&layer) = cut_layers.iter().find(|&&v| feasible[v].is_empty()) {
            skipped.get_or_insert(Infeasibility::Accuracy { layer });
            return;
        }
        let mut choice = vec![0usize; cut_layers.len()];
        loop {
            let s = PartitionStrategy::from_device_set(g, device.to_vec(), |v| {
                let k = cut_layers.iter().position(|&c| c == v).expect("cut layer");
                feasible[v][choice[k]]
            })
            .expect("enumerated sets are downward closed");
            let e = evaluate_strategy(g, &s, bandwidth_mbps, cfg);
            evaluations += 1;
            best.offer(&Rank::new(&e, &s), &s, &e);
            // Odometer over the precision choices.
            let mut k = 0;
            while k < choice.len() {
                choice[k] += 1;
                if choice[k] < feasible[cut_layers[k]].len() {
                    break;
                }
                choice[k] = 0;
                k += 1;
            }
            if k == choice.len() {
                break;
            }
        }
    });
    best.into_plan(evaluations, skipped)
}
