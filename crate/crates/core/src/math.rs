//! Float helpers that `core` lacks.

#[inline]
pub(crate) fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn max3(a: f64, b: f64, c: f64) -> f64 {
    a.max(b).max(c)
}

/// Length of the intersection of `[a0, a1]` and `[b0, b1]`.
#[inline]
pub(crate) fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}
