//! Per-task online scheduling: GAP features, a cache of per-label semantic
//! centers, task separability, early exit and precision adjustment, plus the
//! calibration of the thresholds that drive them.
//!
//! Separability of a task with label similarities `t_j` is
//!
//! ```text
//! S = ||t||_2 * (t_H - t_SH) * t_H / t_SH
//! ```
//!
//! with `t_H` and `t_SH` the two largest similarities. A task exits early when
//! `S > s_ext`; otherwise its transmission precision is the smallest `p` with
//! `S >= s_adj[p]`, raised further if that evens out the pipeline.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use crate::math;
use crate::plan::transfer_ms;
use crate::quant::{self, PrecisionDomain, QuantError, QuantSpec};

#[derive(Debug, Clone, PartialEq)]
pub enum OnlineError {
    EmptySpatial,
    ShapeMismatch { expected: usize, found: usize },
    DimensionMismatch { expected: usize, found: usize },
    UnknownLabel(usize),
    /// Zero-norm feature or center; cosine similarity is undefined.
    DegenerateInput,
    /// Fewer than two labels have a center.
    TooFewLabels,
    EmptyCalibrationSet,
    InvalidBandwidth,
    Quant(QuantError),
}

impl fmt::Display for OnlineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OnlineError::EmptySpatial => write!(f, "tensor has empty spatial dimensions"),
            OnlineError::ShapeMismatch { expected, found } => {
                write!(f, "tensor holds {found} values, shape needs {expected}")
            }
            OnlineError::DimensionMismatch { expected, found } => {
                write!(f, "feature has {found} channels, cache expects {expected}")
            }
            OnlineError::UnknownLabel(j) => write!(f, "label {j} is not in the cache"),
            OnlineError::DegenerateInput => write!(f, "zero-norm feature or center"),
            OnlineError::TooFewLabels => write!(f, "at least two labels need a center"),
            OnlineError::EmptyCalibrationSet => write!(f, "calibration set is empty"),
            OnlineError::InvalidBandwidth => write!(f, "bandwidth must be positive"),
            OnlineError::Quant(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for OnlineError {}

impl From<QuantError> for OnlineError {
    fn from(e: QuantError) -> Self {
        OnlineError::Quant(e)
    }
}

/// A `C x H x W` tensor stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self, OnlineError> {
        if h * w == 0 {
            return Err(OnlineError::EmptySpatial);
        }
        if data.len() != c * h * w {
            return Err(OnlineError::ShapeMismatch {
                expected: c * h * w,
                found: data.len(),
            });
        }
        Ok(Tensor3 {
            dims: (c, h, w),
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.dims.1 * self.dims.2;
        &self.data[c * plane..(c + 1) * plane]
    }

    /// The tensor after quantizing and dequantizing every value.
    pub fn round_trip(&self, spec: &QuantSpec) -> Tensor3 {
        Tensor3 {
            dims: self.dims,
            data: quant::round_trip(&self.data, spec),
        }
    }
}

/// Global-average-pooled feature of a tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskFeature {
    vector: Vec<f64>,
    source_dims: (usize, usize, usize),
}

impl TaskFeature {
    /// A feature given directly as a vector (source shape `C x 1 x 1`).
    pub fn new(vector: Vec<f64>) -> Self {
        let c = vector.len();
        TaskFeature {
            vector,
            source_dims: (c, 1, 1),
        }
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn source_dims(&self) -> (usize, usize, usize) {
        self.source_dims
    }

    pub fn scaled(&self, k: f64) -> TaskFeature {
        TaskFeature {
            vector: self.vector.iter().map(|x| x * k).collect(),
            source_dims: self.source_dims,
        }
    }
}

pub fn gap(t: &Tensor3) -> TaskFeature {
    let (c, h, w) = t.dims;
    let n = (h * w) as f64;
    let vector = (0..c).map(|k| t.channel(k).iter().sum::<f64>() / n).collect();
    TaskFeature {
        vector,
        source_dims: t.dims,
    }
}

fn norm(v: &[f64]) -> f64 {
    math::sqrt(v.iter().map(|x| x * x).sum())
}

/// Running-mean center per label.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticCache {
    dims: usize,
    centers: Vec<(Vec<f64>, u64)>,
}

impl SemanticCache {
    pub fn new(labels: usize, dims: usize) -> Self {
        SemanticCache {
            dims,
            centers: alloc::vec![(alloc::vec![0.0; dims], 0); labels],
        }
    }

    pub fn label_count(&self) -> usize {
        self.centers.len()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn center(&self, label: usize) -> Option<&[f64]> {
        self.centers.get(label).map(|(c, _)| c.as_slice())
    }

    pub fn count(&self, label: usize) -> Option<u64> {
        self.centers.get(label).map(|&(_, m)| m)
    }

    /// Labels with at least one sample.
    pub fn warm_labels(&self) -> usize {
        self.centers.iter().filter(|(_, m)| *m > 0).count()
    }

    /// `T_j <- (m_j * T_j + F) / (m_j + 1)`, `m_j <- m_j + 1`.
    pub fn update(&mut self, label: usize, feature: &TaskFeature) -> Result<(), OnlineError> {
        if feature.vector.len() != self.dims {
            return Err(OnlineError::DimensionMismatch {
                expected: self.dims,
                found: feature.vector.len(),
            });
        }
        let (center, m) = self
            .centers
            .get_mut(label)
            .ok_or(OnlineError::UnknownLabel(label))?;
        let mf = *m as f64;
        for (c, f) in center.iter_mut().zip(&feature.vector) {
            *c = (mf * *c + f) / (mf + 1.0);
        }
        *m += 1;
        Ok(())
    }

    /// Feeds every labelled tensor's GAP feature into its center.
    pub fn warm_up<'a>(
        &mut self,
        samples: impl IntoIterator<Item = (usize, &'a Tensor3)>,
    ) -> Result<(), OnlineError> {
        for (label, t) in samples {
            self.update(label, &gap(t))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskAssessment {
    pub similarities: Vec<f64>,
    pub t_high: f64,
    pub t_second: f64,
    pub separability: f64,
    pub argmax_label: usize,
}

/// Similarities against every center and the resulting separability.
/// Labels without samples get similarity 0.
pub fn assess(cache: &SemanticCache, feature: &TaskFeature) -> Result<TaskAssessment, OnlineError> {
    if feature.vector.len() != cache.dims {
        return Err(OnlineError::DimensionMismatch {
            expected: cache.dims,
            found: feature.vector.len(),
        });
    }
    if cache.warm_labels() < 2 {
        return Err(OnlineError::TooFewLabels);
    }
    let f_norm = norm(&feature.vector);
    if f_norm == 0.0 {
        return Err(OnlineError::DegenerateInput);
    }
    let mut similarities = Vec::with_capacity(cache.centers.len());
    for (center, m) in &cache.centers {
        if *m == 0 {
            similarities.push(0.0);
            continue;
        }
        let c_norm = norm(center);
        if c_norm == 0.0 {
            return Err(OnlineError::DegenerateInput);
        }
        let dot: f64 = center.iter().zip(&feature.vector).map(|(a, b)| a * b).sum();
        similarities.push((dot / (f_norm * c_norm)).clamp(0.0, 1.0));
    }

    let mut argmax = 0;
    for (j, &t) in similarities.iter().enumerate() {
        if t > similarities[argmax] {
            argmax = j;
        }
    }
    let t_high = similarities[argmax];
    let t_second = similarities
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != argmax)
        .map(|(_, &t)| t)
        .fold(0.0, f64::max);
    let separability = if t_high == t_second {
        0.0
    } else if t_second == 0.0 {
        f64::INFINITY
    } else {
        norm(&similarities) * (t_high - t_second) * t_high / t_second
    };
    Ok(TaskAssessment {
        similarities,
        t_high,
        t_second,
        separability,
        argmax_label: argmax,
    })
}

/// Early-exit and per-precision separability thresholds. An infinite
/// threshold disables the corresponding mechanism.
#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds {
    pub s_ext: f64,
    pub s_adj: BTreeMap<u8, f64>,
}

impl Thresholds {
    pub fn disabled() -> Self {
        Thresholds {
            s_ext: f64::INFINITY,
            s_adj: BTreeMap::new(),
        }
    }

    pub fn exits(&self, separability: f64) -> bool {
        self.s_ext.is_finite() && separability > self.s_ext
    }

    /// Smallest precision whose threshold `separability` reaches, or `base`.
    pub fn required_precision(&self, separability: f64, base: u8) -> u8 {
        self.s_adj
            .iter()
            .find(|(_, &s)| s.is_finite() && separability >= s)
            .map_or(base, |(&p, _)| p)
    }

    /// Lower precision never asks for less separability.
    pub fn is_monotone(&self) -> bool {
        let v: Vec<f64> = self.s_adj.values().copied().collect();
        v.windows(2).all(|w| w[0] >= w[1])
    }
}

/// Smallest candidate threshold whose selected samples have an error rate
/// of at most `epsilon`; `+inf` when none qualifies or nothing is selected.
///
/// Candidates are 0 and every distinct finite separability, ascending. With
/// `strict` a sample is selected when `S > threshold`, otherwise when
/// `S >= threshold`.
pub fn sweep_threshold(samples: &[(f64, bool)], epsilon: f64, strict: bool) -> f64 {
    let mut sorted: Vec<(f64, bool)> = samples.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = sorted.len();
    // Suffix counts: selected = sorted[i..] for the first index past the
    // threshold.
    let mut wrong_suffix = alloc::vec![0usize; n + 1];
    for i in (0..n).rev() {
        wrong_suffix[i] = wrong_suffix[i + 1] + usize::from(!sorted[i].1);
    }
    let mut candidates: Vec<f64> = Vec::with_capacity(n + 1);
    candidates.push(0.0);
    candidates.extend(sorted.iter().map(|s| s.0).filter(|s| s.is_finite() && *s > 0.0));
    candidates.dedup();

    let mut i = 0;
    for tau in candidates {
        while i < n && (if strict { sorted[i].0 <= tau } else { sorted[i].0 < tau }) {
            i += 1;
        }
        let selected = n - i;
        if selected > 0 && (wrong_suffix[i] as f64) <= epsilon * selected as f64 {
            return tau;
        }
    }
    f64::INFINITY
}

/// Calibrates thresholds on labelled tensors against an already warmed
/// cache. `s_adj[p]` assesses features of tensors quantized at `p` bits over
/// `range`. Thresholds are made monotone afterwards by raising any
/// lower-precision threshold below a higher-precision one.
pub fn calibrate(
    cache: &SemanticCache,
    samples: &[(usize, Tensor3)],
    range: (f64, f64),
    domain: &PrecisionDomain,
    epsilon: f64,
) -> Result<Thresholds, OnlineError> {
    if samples.is_empty() {
        return Err(OnlineError::EmptyCalibrationSet);
    }
    let scored = |features: &mut dyn Iterator<Item = (usize, TaskFeature)>| {
        features
            .map(|(label, f)| {
                // Quantization can zero a whole feature; it cannot be told apart.
                if norm(&f.vector) == 0.0 {
                    return Ok((0.0, false));
                }
                assess(cache, &f).map(|a| (a.separability, a.argmax_label == label))
            })
            .collect::<Result<Vec<_>, _>>()
    };

    let plain = scored(&mut samples.iter().map(|(l, t)| (*l, gap(t))))?;
    let s_ext = sweep_threshold(&plain, epsilon, true);

    let mut s_adj = BTreeMap::new();
    for &p in domain.bits() {
        let spec = QuantSpec::new(p, range.0, range.1)?;
        let quantized = scored(&mut samples.iter().map(|(l, t)| (*l, gap(&t.round_trip(&spec)))))?;
        s_adj.insert(p, sweep_threshold(&quantized, epsilon, false));
    }
    let mut floor = 0.0f64;
    for s in s_adj.values_mut().rev() {
        floor = floor.max(*s);
        *s = floor;
    }
    Ok(Thresholds { s_ext, s_adj })
}

/// Pipeline state needed to pick a transmission precision.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    /// Precision of the offline strategy, used when no threshold is reached.
    pub base_bits: u8,
    pub t_e_ms: f64,
    pub t_c_ms: f64,
    pub payload_elements: u64,
    pub bandwidth_mbps: f64,
    pub domain: &'a PrecisionDomain,
}

impl DecisionContext<'_> {
    pub fn transmission_ms(&self, bits: u8) -> f64 {
        transfer_ms(quant::payload_bits(self.payload_elements, bits) as f64, self.bandwidth_mbps)
    }

    /// `|T_t'(Q) - max{T_e, T_t'(Q), T_c}|`.
    pub fn bubble(&self, bits: u8) -> f64 {
        let t = self.transmission_ms(bits);
        (t - math::max3(self.t_e_ms, t, self.t_c_ms)).abs()
    }

    /// Precision at or above `q_required` with the smallest bubble; ties go
    /// to the fewest bits.
    pub fn choose_precision(&self, q_required: u8) -> u8 {
        let mut best = q_required;
        let mut best_bubble = self.bubble(q_required);
        for &q in self.domain.at_least(q_required) {
            let b = self.bubble(q);
            if b < best_bubble {
                best = q;
                best_bubble = b;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantDecision {
    /// Zero when the task exited.
    pub q_required: u8,
    /// Zero when the task exited.
    pub q_chosen: u8,
    pub t_t_prime_ms: f64,
    pub exited: bool,
    pub result_label: Option<usize>,
    pub assessment: TaskAssessment,
}

/// Decides one task: exit with the argmax label (and fold the feature into
/// that label's center), or choose its transmission precision.
pub fn decide(
    cache: &mut SemanticCache,
    thresholds: &Thresholds,
    feature: &TaskFeature,
    ctx: &DecisionContext<'_>,
) -> Result<QuantDecision, OnlineError> {
    if !(ctx.bandwidth_mbps > 0.0) {
        return Err(OnlineError::InvalidBandwidth);
    }
    let assessment = assess(cache, feature)?;
    if thresholds.exits(assessment.separability) {
        let label = assessment.argmax_label;
        cache.update(label, feature)?;
        return Ok(QuantDecision {
            q_required: 0,
            q_chosen: 0,
            t_t_prime_ms: 0.0,
            exited: true,
            result_label: Some(label),
            assessment,
        });
    }
    let q_required = thresholds.required_precision(assessment.separability, ctx.base_bits);
    let q_chosen = ctx.choose_precision(q_required);
    Ok(QuantDecision {
        q_required,
        q_chosen,
        t_t_prime_ms: ctx.transmission_ms(q_chosen),
        exited: false,
        result_label: None,
        assessment,
    })
}

/// Cache, thresholds and knobs for scheduling a task stream.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineScheduler {
    pub cache: SemanticCache,
    pub thresholds: Thresholds,
    pub domain: PrecisionDomain,
    /// Device time spent on each decision.
    pub decision_cost_ms: f64,
    /// Also fold non-exited tasks into the center of their true label.
    pub update_on_cloud_label: bool,
}

impl OnlineScheduler {
    pub fn new(cache: SemanticCache, thresholds: Thresholds, domain: PrecisionDomain) -> Self {
        OnlineScheduler {
            cache,
            thresholds,
            domain,
            decision_cost_ms: 0.0,
            update_on_cloud_label: false,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn decide(
        &mut self,
        feature: &TaskFeature,
        true_label: Option<usize>,
        base_bits: u8,
        t_e_ms: f64,
        t_c_ms: f64,
        payload_elements: u64,
        bandwidth_mbps: f64,
    ) -> Result<QuantDecision, OnlineError> {
        let ctx = DecisionContext {
            base_bits,
            t_e_ms,
            t_c_ms,
            payload_elements,
            bandwidth_mbps,
            domain: &self.domain,
        };
        let d = decide(&mut self.cache, &self.thresholds, feature, &ctx)?;
        if !d.exited && self.update_on_cloud_label {
            if let Some(label) = true_label {
                self.cache.update(label, feature)?;
            }
        }
        Ok(d)
    }
}
