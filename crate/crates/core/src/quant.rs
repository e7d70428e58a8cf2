//! Uniform affine quantization of intermediate tensors and minimum-precision
//! search against a per-cut accuracy table.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math;

pub const MIN_BITS: u8 = 2;
pub const MAX_BITS: u8 = 16;

/// Slack for comparing accuracy losses against the limit.
const ACCURACY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum QuantError {
    InvalidBits(u8),
    InvalidRange,
    CodeOutOfRange { code: u32, max: u32 },
    /// No precision in the domain keeps the accuracy loss within the limit.
    Infeasible,
    InvalidDomain,
}

impl fmt::Display for QuantError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuantError::InvalidBits(b) => write!(f, "bit-width {b} outside [2,16]"),
            QuantError::InvalidRange => write!(f, "quantization range must satisfy min < max"),
            QuantError::CodeOutOfRange { code, max } => {
                write!(f, "code {code} outside [0,{max}]")
            }
            QuantError::Infeasible => write!(f, "no precision meets the accuracy-loss limit"),
            QuantError::InvalidDomain => {
                write!(f, "precision domain must be a nonempty set of bit-widths in [2,16]")
            }
        }
    }
}

impl core::error::Error for QuantError {}

/// Bit-width and clamp range of a uniform affine quantizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantSpec {
    bits: u8,
    range_min: f64,
    range_max: f64,
}

impl QuantSpec {
    pub fn new(bits: u8, range_min: f64, range_max: f64) -> Result<Self, QuantError> {
        if !(MIN_BITS..=MAX_BITS).contains(&bits) {
            return Err(QuantError::InvalidBits(bits));
        }
        if !(range_min.is_finite() && range_max.is_finite() && range_min < range_max) {
            return Err(QuantError::InvalidRange);
        }
        Ok(QuantSpec {
            bits,
            range_min,
            range_max,
        })
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn range(&self) -> (f64, f64) {
        (self.range_min, self.range_max)
    }

    pub fn max_code(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    pub fn scale(&self) -> f64 {
        (self.range_max - self.range_min) / f64::from(self.max_code())
    }

    fn encode(&self, x: f64) -> u32 {
        let q = math::round((x - self.range_min) / self.scale());
        // NaN maps to 0 through the saturating cast.
        q.clamp(0.0, f64::from(self.max_code())) as u32
    }
}

/// Maps each value to `clamp(round((x - min) / scale), 0, 2^bits - 1)`,
/// rounding half away from zero.
pub fn quantize(values: &[f64], spec: &QuantSpec) -> Vec<u32> {
    values.iter().map(|&x| spec.encode(x)).collect()
}

pub fn dequantize(codes: &[u32], spec: &QuantSpec) -> Result<Vec<f64>, QuantError> {
    let max = spec.max_code();
    let scale = spec.scale();
    codes
        .iter()
        .map(|&q| {
            if q > max {
                Err(QuantError::CodeOutOfRange { code: q, max })
            } else {
                Ok(spec.range_min + f64::from(q) * scale)
            }
        })
        .collect()
}

/// Quantize followed by dequantize.
pub fn round_trip(values: &[f64], spec: &QuantSpec) -> Vec<f64> {
    let scale = spec.scale();
    values
        .iter()
        .map(|&x| spec.range_min + f64::from(spec.encode(x)) * scale)
        .collect()
}

/// Transmitted size of a quantized tensor. No container overhead is added.
pub fn payload_bits(elements: u64, bits: u8) -> u64 {
    elements * u64::from(bits)
}

/// Ordered, duplicate-free set of candidate bit-widths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrecisionDomain(Vec<u8>);

impl PrecisionDomain {
    pub fn new(bits: impl IntoIterator<Item = u8>) -> Result<Self, QuantError> {
        let mut v: Vec<u8> = bits.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        if v.is_empty() || v.iter().any(|b| !(MIN_BITS..=MAX_BITS).contains(b)) {
            return Err(QuantError::InvalidDomain);
        }
        Ok(PrecisionDomain(v))
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn min(&self) -> u8 {
        self.0[0]
    }

    pub fn max(&self) -> u8 {
        self.0[self.0.len() - 1]
    }

    pub fn contains(&self, bits: u8) -> bool {
        self.0.binary_search(&bits).is_ok()
    }

    /// Domain members at or above `floor`.
    pub fn at_least(&self, floor: u8) -> &[u8] {
        let start = self.0.partition_point(|&b| b < floor);
        &self.0[start..]
    }
}

impl Default for PrecisionDomain {
    fn default() -> Self {
        PrecisionDomain(vec![2, 3, 4, 5, 6, 7, 8, 16])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    /// Accuracy-loss limit per cut point.
    pub epsilon: f64,
    /// Bound on `T_e + T_t + T_c`; `None` is unbounded.
    pub t_max_ms: Option<f64>,
    pub precision_domain: PrecisionDomain,
}

impl OptimizerConfig {
    pub const DEFAULT_EPSILON: f64 = 0.005;
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            epsilon: Self::DEFAULT_EPSILON,
            t_max_ms: None,
            precision_domain: PrecisionDomain::default(),
        }
    }
}

/// Accuracy at `bits`, read as a step function: the entry of the largest key
/// not above `bits`, or 0 when every key is larger.
pub fn accuracy_at(table: &BTreeMap<u8, f64>, bits: u8) -> f64 {
    table.range(..=bits).next_back().map_or(0.0, |(_, &a)| a)
}

/// Accuracy of the unquantized cut, taken as the highest-precision entry.
pub fn full_accuracy(table: &BTreeMap<u8, f64>) -> Option<f64> {
    table.values().next_back().copied()
}

/// Whether quantizing at `bits` keeps the accuracy loss within `epsilon`.
/// An empty table never loses accuracy.
pub fn meets_accuracy(table: &BTreeMap<u8, f64>, full_accuracy: f64, bits: u8, epsilon: f64) -> bool {
    table.is_empty() || full_accuracy - accuracy_at(table, bits) <= epsilon + ACCURACY_TOLERANCE
}

/// Smallest domain precision whose accuracy loss is within `cfg.epsilon`,
/// found by binary search over the ordered domain.
pub fn min_precision(
    accuracy_table: &BTreeMap<u8, f64>,
    full_accuracy: f64,
    cfg: &OptimizerConfig,
) -> Result<u8, QuantError> {
    let domain = cfg.precision_domain.bits();
    let ok = |b: u8| meets_accuracy(accuracy_table, full_accuracy, b, cfg.epsilon);
    let idx = domain.partition_point(|&b| !ok(b));
    domain.get(idx).copied().ok_or(QuantError::Infeasible)
}
