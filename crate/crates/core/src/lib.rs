//! Planning and simulation primitives for splitting DNN inference between an
//! end device and a cloud server.
//!
//! The crate is `no_std` (with `alloc`) and performs no IO. It covers:
//!
//! - [`graph`]: profiled layer DAGs, virtual-block clustering into chain flows
//!   and cut candidates.
//! - [`quant`]: uniform affine quantization and minimum-precision search.
//! - [`plan`]: stage times, parallel overlaps and bubble functions of a
//!   device/cloud partition, the recursive chain-flow optimizer and an
//!   exhaustive oracle.
//! - [`sim`]: a deterministic three-stage pipeline simulator driven by a
//!   piecewise-constant bandwidth trace.
//! - [`online`]: the per-task scheduler (semantic-center cache, early exit,
//!   bubble-minimizing precision adjustment) and threshold calibration.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod graph;
mod math;
pub mod online;
pub mod plan;
pub mod quant;
pub mod sim;

pub use graph::{
    cluster_virtual_blocks, enumerate_cut_candidates, ChainFlow, CutCandidate, FlowElement,
    GraphError, LayerNode, ModelGraph, VirtualBlock,
};
pub use online::{
    assess, calibrate, decide, gap, DecisionContext, OnlineError, OnlineScheduler, QuantDecision,
    SemanticCache, TaskAssessment, TaskFeature, Tensor3, Thresholds,
};
pub use plan::{
    brute_force_optimize, brute_force_plan_count, bubble_functions, evaluate_strategy, optimize,
    parallel_overlaps, stage_times, task_schedule, transfer_ms, Cut, Evaluation, Infeasibility,
    PartitionStrategy, Plan, PlanError, PlanMetrics, StageTimes,
};
pub use quant::{
    dequantize, min_precision, quantize, OptimizerConfig, PrecisionDomain, QuantError, QuantSpec,
};
pub use sim::{
    bubble_report, simulate, transmission_duration, BandwidthTrace, BubbleReport, SimError,
    SimReport, Stage, TaskRecord, TaskSpec, TaskStream,
};
