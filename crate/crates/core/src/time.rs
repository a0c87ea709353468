//! Picosecond timebase shared by streams, tags and histograms.

pub const PS_PER_SECOND: f64 = 1e12;

/// Rounds a non-negative duration in seconds to whole picoseconds.
#[inline]
pub fn secs_to_ps(secs: f64) -> u64 {
    (secs * PS_PER_SECOND).round().max(0.0) as u64
}

#[inline]
pub fn ps_to_secs(ps: u64) -> f64 {
    ps as f64 / PS_PER_SECOND
}

#[inline]
pub fn signed_ps_to_secs(ps: i64) -> f64 {
    ps as f64 / PS_PER_SECOND
}
