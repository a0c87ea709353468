//! Coincidence histograms between the two detector channels.
//!
//! Delays are `stop − start` with starts on channel 0 and stops on
//! channel 1. Bins are half-open, `[k·w, (k+1)·w)`, so the zero-delay bin
//! is `[0, w)` and a delay on an edge lands in the upper bin. Only delays
//! in `[−window, window)` are counted.

use crate::error::{Error, Result};
use crate::num::Real;
use crate::optics::TimeTagRecord;
use crate::time::ps_to_secs;

pub const START_CHANNEL: u8 = 0;
pub const STOP_CHANNEL: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrelationHistogram {
    pub bin_width_ps: u64,
    pub window_ps: u64,
    /// `counts[i]` covers delays `[(i − n)·w, (i − n + 1)·w)` with
    /// `n = window / w`.
    pub counts: Vec<u64>,
    pub n_start: u64,
    pub n_stop: u64,
    pub span_ps: u64,
}

impl CorrelationHistogram {
    pub fn half_bins(&self) -> usize {
        (self.window_ps / self.bin_width_ps) as usize
    }

    /// Signed bin index of slot `i`.
    pub fn bin_index(&self, i: usize) -> i64 {
        i as i64 - self.half_bins() as i64
    }

    /// Slot holding signed bin `k`, if inside the window.
    pub fn slot(&self, k: i64) -> Option<usize> {
        let i = k + self.half_bins() as i64;
        (0..self.counts.len() as i64).contains(&i).then_some(i as usize)
    }

    /// Lower edge of slot `i`, ps.
    pub fn lower_edge_ps(&self, i: usize) -> i64 {
        self.bin_index(i) * self.bin_width_ps as i64
    }

    /// Bin centre of slot `i`, s.
    pub fn center(&self, i: usize) -> f64 {
        ps_to_secs(self.bin_width_ps) * (self.bin_index(i) as f64 + 0.5)
    }

    pub fn bin_width(&self) -> f64 {
        ps_to_secs(self.bin_width_ps)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Overrides the acquisition span used by [`normalize`].
    pub fn with_span(mut self, span_ps: u64) -> Self {
        self.span_ps = span_ps;
        self
    }
}

fn check_binning(bin_width_ps: u64, window_ps: u64) -> Result<()> {
    if bin_width_ps == 0 {
        return Err(Error::invalid("bin_width", "must be > 0"));
    }
    if window_ps < bin_width_ps {
        return Err(Error::invalid("window", "must be >= bin_width"));
    }
    if !window_ps.is_multiple_of(bin_width_ps) {
        return Err(Error::invalid("window", "must be an integer number of bins"));
    }
    Ok(())
}

fn split_channels(tags: &[TimeTagRecord]) -> Result<(Vec<u64>, Vec<u64>)> {
    if let Some(i) = tags.windows(2).position(|w| w[1].time < w[0].time) {
        return Err(Error::Unsorted { index: i + 1 });
    }
    let mut start = Vec::new();
    let mut stop = Vec::new();
    for tag in tags {
        match tag.channel {
            START_CHANNEL => start.push(tag.time),
            STOP_CHANNEL => stop.push(tag.time),
            _ => {}
        }
    }
    Ok((start, stop))
}

/// Time between the first and last tag, ps; used as the acquisition span
/// when no better value is known.
pub fn observed_span_ps(tags: &[TimeTagRecord]) -> u64 {
    match (tags.first(), tags.last()) {
        (Some(a), Some(b)) => b.time - a.time,
        _ => 0,
    }
}

/// Full pairwise start–stop histogram, two-pointer sliding window.
pub fn cross_correlate(tags: &[TimeTagRecord], bin_width_ps: u64, window_ps: u64) -> Result<CorrelationHistogram> {
    check_binning(bin_width_ps, window_ps)?;
    let (start, stop) = split_channels(tags)?;
    let half = (window_ps / bin_width_ps) as usize;
    let mut counts = vec![0u64; 2 * half];
    let w = window_ps as i64;
    let b = bin_width_ps as i64;

    let mut lo = 0usize;
    for &a in &start {
        let a = a as i64;
        while lo < stop.len() && (stop[lo] as i64) < a - w {
            lo += 1;
        }
        for &s in &stop[lo..] {
            let d = s as i64 - a;
            if d >= w {
                break;
            }
            // floor division for the signed delay
            let k = if d >= 0 { d / b } else { -((-d + b - 1) / b) };
            counts[(k + half as i64) as usize] += 1;
        }
    }
    Ok(CorrelationHistogram {
        bin_width_ps,
        window_ps,
        counts,
        n_start: start.len() as u64,
        n_stop: stop.len() as u64,
        span_ps: observed_span_ps(tags),
    })
}

/// O(N²) reference: every start against every stop.
pub fn cross_correlate_brute_force(
    tags: &[TimeTagRecord],
    bin_width_ps: u64,
    window_ps: u64,
) -> Result<CorrelationHistogram> {
    check_binning(bin_width_ps, window_ps)?;
    let (start, stop) = split_channels(tags)?;
    let half = (window_ps / bin_width_ps) as i128;
    let mut counts = vec![0u64; 2 * half as usize];
    for &a in &start {
        for &s in &stop {
            let d = s as i128 - a as i128;
            if d < -(window_ps as i128) || d >= window_ps as i128 {
                continue;
            }
            let k = d.div_euclid(bin_width_ps as i128);
            counts[(k + half) as usize] += 1;
        }
    }
    Ok(CorrelationHistogram {
        bin_width_ps,
        window_ps,
        counts,
        n_start: start.len() as u64,
        n_stop: stop.len() as u64,
        span_ps: observed_span_ps(tags),
    })
}

/// Normalized correlation with Poisson errors.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedCurve<T> {
    /// Bin centres, s.
    pub delays: Vec<T>,
    pub values: Vec<T>,
    pub stat_err: Vec<T>,
}

impl<T: Real> NormalizedCurve<T> {
    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    /// Value in the bin whose range contains `delay`.
    pub fn value_at(&self, delay: T) -> Option<(T, T)> {
        if self.delays.len() < 2 {
            return self.values.first().copied().zip(self.stat_err.first().copied());
        }
        let w = self.delays[1] - self.delays[0];
        let half = w / T::lit(2.0);
        self.delays
            .iter()
            .position(|&c| delay >= c - half && delay < c + half)
            .map(|i| (self.values[i], self.stat_err[i]))
    }
}

/// Time base used to turn counts into a correlation function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Total acquisition span stored in the histogram.
    Span,
    /// Live time only, ps; for gated acquisitions.
    LiveTime(u64),
}

/// `counts · T / (n_start · n_stop · w)` with `T` the total span.
pub fn normalize<T: Real>(hist: &CorrelationHistogram) -> Result<NormalizedCurve<T>> {
    normalize_with(hist, Normalization::Span)
}

pub fn normalize_with<T: Real>(hist: &CorrelationHistogram, basis: Normalization) -> Result<NormalizedCurve<T>> {
    let time_ps = match basis {
        Normalization::Span => hist.span_ps,
        Normalization::LiveTime(t) => t,
    };
    if time_ps == 0 {
        return Err(Error::UndefinedNormalization("zero acquisition time"));
    }
    if hist.n_start == 0 || hist.n_stop == 0 {
        return Err(Error::UndefinedNormalization("empty channel"));
    }
    let scale = time_ps as f64 / (hist.n_start as f64 * hist.n_stop as f64 * hist.bin_width_ps as f64);
    let mut curve = NormalizedCurve {
        delays: Vec::with_capacity(hist.counts.len()),
        values: Vec::with_capacity(hist.counts.len()),
        stat_err: Vec::with_capacity(hist.counts.len()),
    };
    for (i, &c) in hist.counts.iter().enumerate() {
        curve.delays.push(T::lit(hist.center(i)));
        curve.values.push(T::lit(c as f64 * scale));
        curve.stat_err.push(T::lit((c as f64).sqrt() * scale));
    }
    Ok(curve)
}

fn check_same_grid<T: Real>(a: &NormalizedCurve<T>, b: &NormalizedCurve<T>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::GridMismatch(format!("{} vs {} points", a.len(), b.len())));
    }
    if let Some(i) = a.delays.iter().zip(&b.delays).position(|(x, y)| x != y) {
        return Err(Error::GridMismatch(format!("delays differ at index {i}")));
    }
    Ok(())
}

/// Two-ion joint detection from its one-ion and cross-ion parts for a
/// symmetric set-up: `P² = (g² + P²₂)/2`.
pub fn compose_p2<T: Real>(g2: &NormalizedCurve<T>, p2_cross: &NormalizedCurve<T>) -> Result<NormalizedCurve<T>> {
    check_same_grid(g2, p2_cross)?;
    let half = T::lit(0.5);
    Ok(NormalizedCurve {
        delays: g2.delays.clone(),
        values: g2
            .values
            .iter()
            .zip(&p2_cross.values)
            .map(|(&g, &p)| (g + p) * half)
            .collect(),
        stat_err: g2
            .stat_err
            .iter()
            .zip(&p2_cross.stat_err)
            .map(|(&g, &p)| (g * g + p * p).sqrt() * half)
            .collect(),
    })
}

/// Cross-ion joint detection `P²₂ = 2·P² − g²`, errors in quadrature.
/// Noise can push individual bins below zero; they are not clipped.
pub fn decompose_p2<T: Real>(p2: &NormalizedCurve<T>, g2: &NormalizedCurve<T>) -> Result<NormalizedCurve<T>> {
    check_same_grid(p2, g2)?;
    let two = T::lit(2.0);
    Ok(NormalizedCurve {
        delays: p2.delays.clone(),
        values: p2.values.iter().zip(&g2.values).map(|(&p, &g)| two * p - g).collect(),
        stat_err: p2
            .stat_err
            .iter()
            .zip(&g2.stat_err)
            .map(|(&p, &g)| (two * two * p * p + g * g).sqrt())
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakMetric {
    /// Multiple of the repetition period.
    pub index: i64,
    /// Peak centre, s.
    pub center: f64,
    /// Counts within ±period/2 of the centre.
    pub area: u64,
    /// Largest single bin in that range.
    pub height: u64,
}

/// Integrates every comb peak whose full ±period/2 range lies inside the
/// histogram window. A bin belongs to a peak when its centre does.
pub fn peak_metrics(hist: &CorrelationHistogram, rep_period_ps: u64) -> Result<Vec<PeakMetric>> {
    if rep_period_ps == 0 {
        return Err(Error::invalid("rep_period", "must be > 0"));
    }
    if hist.window_ps < 2 * rep_period_ps {
        return Err(Error::invalid("window", "must cover at least two periods"));
    }
    let w = hist.bin_width_ps as f64;
    let rep = rep_period_ps as f64;
    let window = hist.window_ps as f64;
    let max_index = ((window - rep / 2.0) / rep).floor() as i64;
    let mut peaks = Vec::new();
    for m in -max_index..=max_index {
        let c = m as f64 * rep;
        let (lo, hi) = (c - rep / 2.0, c + rep / 2.0);
        let (mut area, mut height) = (0u64, 0u64);
        for (i, &count) in hist.counts.iter().enumerate() {
            let center = (hist.bin_index(i) as f64 + 0.5) * w;
            if center >= lo && center < hi {
                area += count;
                height = height.max(count);
            }
        }
        peaks.push(PeakMetric {
            index: m,
            center: c * 1e-12,
            area,
            height,
        });
    }
    Ok(peaks)
}

/// Zero-delay peak area over the mean side-peak area.
pub fn zero_peak_ratio(peaks: &[PeakMetric]) -> Option<f64> {
    let zero = peaks.iter().find(|p| p.index == 0)?;
    let sides: Vec<f64> = peaks.iter().filter(|p| p.index != 0).map(|p| p.area as f64).collect();
    if sides.is_empty() {
        return None;
    }
    let mean = sides.iter().sum::<f64>() / sides.len() as f64;
    (mean > 0.0).then(|| zero.area as f64 / mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tag(channel: u8, time: u64) -> TimeTagRecord {
        TimeTagRecord::new(channel, time)
    }

    #[test]
    fn single_pair_lands_in_its_bin() {
        let tags = [tag(0, 0), tag(1, 2000)];
        let h = cross_correlate(&tags, 1000, 5000).unwrap();
        assert_eq!(h.total(), 1);
        let slot = h.slot(2).unwrap();
        assert_eq!(h.counts[slot], 1);
        assert_eq!(h.lower_edge_ps(slot), 2000);
    }

    #[test]
    fn edges_go_to_the_upper_bin() {
        let tags = [tag(1, 0), tag(0, 1000), tag(1, 2000)];
        let h = cross_correlate(&tags, 1000, 3000).unwrap();
        // delays −1000 and +1000
        assert_eq!(h.counts[h.slot(-1).unwrap()], 1);
        assert_eq!(h.counts[h.slot(1).unwrap()], 1);
        // +window itself is excluded, −window included
        let tags = [tag(1, 0), tag(0, 3000), tag(1, 6000)];
        let h = cross_correlate(&tags, 1000, 3000).unwrap();
        assert_eq!(h.total(), 1);
        assert_eq!(h.counts[0], 1);
    }

    #[test]
    fn empty_channel_gives_zero_histogram() {
        let tags = [tag(0, 0), tag(0, 10), tag(0, 20)];
        let h = cross_correlate(&tags, 10, 100).unwrap();
        assert_eq!(h.counts.len(), 20);
        assert!(h.counts.iter().all(|&c| c == 0));
        assert!(matches!(normalize::<f64>(&h), Err(Error::UndefinedNormalization(_))));
    }

    #[test]
    fn rejects_unsorted_and_bad_binning() {
        let tags = [tag(0, 10), tag(1, 5)];
        assert!(matches!(
            cross_correlate(&tags, 1, 10),
            Err(Error::Unsorted { index: 1 })
        ));
        assert!(cross_correlate(&[], 0, 10).is_err());
        assert!(cross_correlate(&[], 10, 5).is_err());
        assert!(cross_correlate(&[], 3, 10).is_err());
    }

    #[test]
    fn normalization_formula() {
        let h = CorrelationHistogram {
            bin_width_ps: 10,
            window_ps: 20,
            counts: vec![0, 4, 9, 1],
            n_start: 10,
            n_stop: 20,
            span_ps: 1000,
        };
        let c = normalize::<f64>(&h).unwrap();
        assert_eq!(c.values, vec![0.0, 2.0, 4.5, 0.5]);
        assert_eq!(c.stat_err, vec![0.0, 1.0, 1.5, 0.5]);
        assert_eq!(c.delays, vec![-15e-12, -5e-12, 5e-12, 15e-12]);
        let live = normalize_with::<f64>(&h, Normalization::LiveTime(500)).unwrap();
        assert_eq!(live.values[1], 1.0);
        assert!(normalize::<f64>(&h.clone().with_span(0)).is_err());
    }

    #[test]
    fn decomposition_examples() {
        let curve = |v: f64| NormalizedCurve {
            delays: vec![0.0],
            values: vec![v],
            stat_err: vec![0.0],
        };
        let g2 = curve(0.18);
        let p = decompose_p2(&curve(0.59), &g2).unwrap();
        assert!((p.values[0] - 1.00).abs() < 1e-12);
        let p = decompose_p2(&curve(0.31), &g2).unwrap();
        assert!((p.values[0] - 0.44).abs() < 1e-12);
        let same = decompose_p2(&g2, &g2).unwrap();
        assert_eq!(same.values, g2.values);
    }

    #[test]
    fn decomposition_needs_matching_grids() {
        let a = NormalizedCurve {
            delays: vec![0.0, 1.0],
            values: vec![1.0, 1.0],
            stat_err: vec![0.1, 0.1],
        };
        let mut b = a.clone();
        b.delays[1] = 2.0;
        assert!(matches!(decompose_p2(&a, &b), Err(Error::GridMismatch(_))));
        b.delays.pop();
        assert!(decompose_p2(&a, &b).is_err());
    }

    #[test]
    fn comb_without_zero_peak() {
        // starts at every period on ch0, stops on ch1 shifted by one period
        let rep = 37_500u64;
        let mut tags: Vec<TimeTagRecord> = (0..200u64)
            .flat_map(|k| [tag(0, k * 2 * rep), tag(1, (k * 2 + 1) * rep)])
            .collect();
        tags.sort_unstable();
        let h = cross_correlate(&tags, 1000, 4 * rep).unwrap();
        let peaks = peak_metrics(&h, rep).unwrap();
        let zero = peaks.iter().find(|p| p.index == 0).unwrap();
        assert_eq!(zero.area, 0);
        assert!(peaks.iter().any(|p| p.index == 1 && p.area > 0));
        assert_eq!(zero_peak_ratio(&peaks), Some(0.0));
        assert!(peak_metrics(&h, 3 * rep).is_err());
    }

    #[test]
    fn value_lookup_by_delay() {
        let c = NormalizedCurve {
            delays: vec![-0.5, 0.5, 1.5],
            values: vec![1.0, 2.0, 3.0],
            stat_err: vec![0.0; 3],
        };
        assert_eq!(c.value_at(0.0).unwrap().0, 2.0);
        assert_eq!(c.value_at(-1.0).unwrap().0, 1.0);
        assert!(c.value_at(2.0).is_none());
    }
}
