//! Beam-splitter network and photodetectors.
//!
//! Photons from each ion lose `path_efficiency` on the way to the primary
//! splitter and `qe` at the detector. Two-photon interference is applied
//! pairwise: photons from different ions are matched greedily by arrival
//! time and a matched pair exits through a common port with probability
//! [`hom_kernel`]. The bunching decision uses pre-jitter times; detector
//! jitter, dark counts and dead time come afterwards.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::emitter::{EmissionStream, Source};
use crate::error::{Error, Result};
use crate::time::{ps_to_secs, secs_to_ps};

/// Half width at half depth of the two-photon interference dip, s.
pub const HOM_HALF_WIDTH: f64 = 5.3e-9;

/// Pairs further apart than this many `coherence_sigma` are never matched.
const MATCH_WINDOW_SIGMAS: f64 = 10.0;

/// Gaussian width whose half width at half maximum is `half_width`.
pub fn sigma_for_half_width(half_width: f64) -> f64 {
    half_width / (2.0 * std::f64::consts::LN_2).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticsParams {
    /// Mode overlap η, the zero-delay bunching probability.
    pub overlap: f64,
    /// Gaussian width of the bunching kernel, s.
    pub coherence_sigma: f64,
    /// Reflectance of the primary splitter; reflected photons go to channel 0.
    pub bs_ratio: f64,
    /// Per-photon survival from emission to the primary splitter.
    pub path_efficiency: f64,
}

impl Default for OpticsParams {
    fn default() -> Self {
        Self {
            overlap: 0.57,
            coherence_sigma: sigma_for_half_width(HOM_HALF_WIDTH),
            bs_ratio: 0.5,
            // 0.5 % × 20 % quantum efficiency = 0.1 % overall
            path_efficiency: 0.005,
        }
    }
}

impl OpticsParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::invalid("overlap", "must lie in [0, 1]"));
        }
        if !self.coherence_sigma.is_finite() || self.coherence_sigma <= 0.0 {
            return Err(Error::invalid("coherence_sigma", "must be finite and > 0"));
        }
        if !(self.bs_ratio > 0.0 && self.bs_ratio < 1.0) {
            return Err(Error::invalid("bs_ratio", "must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.path_efficiency) {
            return Err(Error::invalid("path_efficiency", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    /// Quantum efficiency.
    pub qe: f64,
    /// RMS timing jitter of each detector, s.
    pub irf_sigma: f64,
    /// Dark counts per second on each channel.
    pub dark_rate: f64,
    /// Non-paralyzable dead time, s.
    pub dead_time: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            qe: 0.20,
            irf_sigma: 1e-9,
            // 0.5 % of the 2×10⁴/s a single ion delivers to each channel
            dark_rate: 100.0,
            dead_time: 0.0,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.qe) {
            return Err(Error::invalid("qe", "must lie in [0, 1]"));
        }
        if !self.irf_sigma.is_finite() || self.irf_sigma < 0.0 {
            return Err(Error::invalid("irf_sigma", "must be finite and >= 0"));
        }
        if !self.dark_rate.is_finite() || self.dark_rate < 0.0 {
            return Err(Error::invalid("dark_rate", "must be finite and >= 0"));
        }
        if !self.dead_time.is_finite() || self.dead_time < 0.0 {
            return Err(Error::invalid("dead_time", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// A detector click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeTagRecord {
    /// Picoseconds.
    pub time: u64,
    pub channel: u8,
}

impl TimeTagRecord {
    pub fn new(channel: u8, time: u64) -> Self {
        Self { time, channel }
    }
}

/// Probability that a cross-ion pair `tau` seconds apart leaves the
/// splitter through a common port: `η·exp(−τ²/(2σ²))`.
pub fn hom_kernel(tau: f64, optics: &OpticsParams) -> f64 {
    let x = tau / optics.coherence_sigma;
    optics.overlap * (-0.5 * x * x).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Detected {
    time: u64,
    ion: u8,
}

/// Fate of one detected photon inside a routing batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Assignment {
    channel: u8,
    partner: Option<usize>,
    bunched: bool,
}

/// Streaming router. Feed consecutive chunks with [`Router::route_chunk`]
/// and flush with [`Router::finish`]; the output is identical in law to a
/// single pass because batches are only cut at gaps wider than the
/// matching window.
#[derive(Debug)]
pub struct Router<R> {
    optics: OpticsParams,
    det: DetectorParams,
    rng: R,
    n_ions: usize,
    match_window_ps: u64,
    jitter: Option<Normal<f64>>,
    pending: Vec<Detected>,
    chunk_start_ps: u64,
    scratch: Vec<Detected>,
}

impl<R: Rng> Router<R> {
    pub fn new(n_ions: usize, optics: &OpticsParams, det: &DetectorParams, rng: R) -> Result<Self> {
        optics.validate()?;
        det.validate()?;
        if !(1..=2).contains(&n_ions) {
            return Err(Error::invalid("ion_streams", "expected one or two ions"));
        }
        let sigma_ps = det.irf_sigma * 1e12;
        let jitter = if sigma_ps > 0.0 {
            Some(Normal::new(0.0, sigma_ps).map_err(|e| Error::invalid("irf_sigma", e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            optics: *optics,
            det: *det,
            rng,
            n_ions,
            match_window_ps: secs_to_ps(MATCH_WINDOW_SIGMAS * optics.coherence_sigma),
            jitter,
            pending: Vec::new(),
            chunk_start_ps: 0,
            scratch: Vec::new(),
        })
    }

    /// Routes one chunk covering `(previous end, chunk_end_ps]`. `ions[i]`
    /// holds the ion-`i` emissions of this chunk; scatter photons are
    /// already detector counts and skip the loss stages.
    pub fn route_chunk(
        &mut self,
        ions: &[&[u64]],
        scatter: &[&[u64]],
        chunk_end_ps: u64,
        out: &mut Vec<TimeTagRecord>,
    ) -> Result<()> {
        if ions.len() != self.n_ions {
            return Err(Error::invalid("ion_streams", "ion count changed between chunks"));
        }
        self.scratch.clear();
        for (ion, times) in ions.iter().enumerate() {
            for &time in times.iter() {
                if self.survives() {
                    self.scratch.push(Detected { time, ion: ion as u8 });
                }
            }
        }
        self.scratch.sort_unstable_by_key(|d| (d.time, d.ion));
        self.pending.append(&mut self.scratch);

        let cut = if self.n_ions == 1 {
            self.pending.len()
        } else {
            safe_cut(&self.pending, chunk_end_ps, self.match_window_ps)
        };
        let batch: Vec<Detected> = self.pending.drain(..cut).collect();
        self.emit_batch(&batch, out);

        for times in scatter {
            for &t in times.iter() {
                let channel = self.split();
                let time = self.jittered(t);
                out.push(TimeTagRecord { time, channel });
            }
        }
        self.dark_counts(self.chunk_start_ps, chunk_end_ps, out)?;
        self.chunk_start_ps = chunk_end_ps;
        Ok(())
    }

    /// Routes whatever is still waiting for a matching partner.
    pub fn finish(&mut self, out: &mut Vec<TimeTagRecord>) {
        let batch = std::mem::take(&mut self.pending);
        self.emit_batch(&batch, out);
    }

    fn survives(&mut self) -> bool {
        self.rng.random::<f64>() < self.optics.path_efficiency && self.rng.random::<f64>() < self.det.qe
    }

    fn split(&mut self) -> u8 {
        if self.rng.random::<f64>() < self.optics.bs_ratio {
            0
        } else {
            1
        }
    }

    fn jittered(&mut self, t: u64) -> u64 {
        match &self.jitter {
            Some(normal) => {
                let dt = normal.sample(&mut self.rng).round() as i64;
                (t as i64).saturating_add(dt).max(0) as u64
            }
            None => t,
        }
    }

    fn emit_batch(&mut self, batch: &[Detected], out: &mut Vec<TimeTagRecord>) {
        let fates = self.assign(batch);
        out.reserve(batch.len());
        for (photon, fate) in batch.iter().zip(&fates) {
            let time = self.jittered(photon.time);
            out.push(TimeTagRecord {
                time,
                channel: fate.channel,
            });
        }
    }

    fn assign(&mut self, batch: &[Detected]) -> Vec<Assignment> {
        let partners = if self.n_ions == 2 {
            greedy_pairs(batch, self.match_window_ps)
        } else {
            vec![None; batch.len()]
        };
        let mut fates: Vec<Option<Assignment>> = vec![None; batch.len()];
        for k in 0..batch.len() {
            if fates[k].is_some() {
                continue;
            }
            match partners[k] {
                Some(p) => {
                    let dt = ps_to_secs(batch[p].time.abs_diff(batch[k].time));
                    let bunch = self.rng.random::<f64>() < hom_kernel(dt, &self.optics);
                    let (ck, cp) = if bunch {
                        let c = u8::from(self.rng.random::<bool>());
                        (c, c)
                    } else {
                        (self.split(), self.split())
                    };
                    fates[k] = Some(Assignment {
                        channel: ck,
                        partner: Some(p),
                        bunched: bunch,
                    });
                    fates[p] = Some(Assignment {
                        channel: cp,
                        partner: Some(k),
                        bunched: bunch,
                    });
                }
                None => {
                    let channel = self.split();
                    fates[k] = Some(Assignment {
                        channel,
                        partner: None,
                        bunched: false,
                    });
                }
            }
        }
        fates.into_iter().map(|f| f.expect("every photon assigned")).collect()
    }

    fn dark_counts(&mut self, start_ps: u64, end_ps: u64, out: &mut Vec<TimeTagRecord>) -> Result<()> {
        if self.det.dark_rate <= 0.0 || end_ps <= start_ps {
            return Ok(());
        }
        let mean = self.det.dark_rate * ps_to_secs(end_ps - start_ps);
        let poisson = Poisson::new(mean).map_err(|e| Error::invalid("dark_rate", e.to_string()))?;
        for channel in 0..2u8 {
            let n = poisson.sample(&mut self.rng) as u64;
            for _ in 0..n {
                let time = self.rng.random_range(start_ps..end_ps);
                out.push(TimeTagRecord { time, channel });
            }
        }
        Ok(())
    }
}

/// Largest prefix of `pending` that can be routed now: its last photon is
/// more than `window` before `chunk_end` and the next photon is more than
/// `window` later, so no admissible pair straddles the cut.
fn safe_cut(pending: &[Detected], chunk_end: u64, window: u64) -> usize {
    let limit = chunk_end.saturating_sub(window);
    for i in (1..=pending.len()).rev() {
        if pending[i - 1].time >= limit {
            continue;
        }
        if i == pending.len() || pending[i].time - pending[i - 1].time > window {
            return i;
        }
    }
    0
}

/// Greedy nearest-neighbour matching of ion-0 and ion-1 photons in a
/// time-sorted batch. Returns each photon's partner index.
fn greedy_pairs(batch: &[Detected], window: u64) -> Vec<Option<usize>> {
    let first: Vec<usize> = (0..batch.len()).filter(|&i| batch[i].ion == 0).collect();
    let second: Vec<usize> = (0..batch.len()).filter(|&i| batch[i].ion == 1).collect();

    let mut candidates: Vec<(u64, usize, usize)> = Vec::new();
    let mut lo = 0;
    for &a in &first {
        let ta = batch[a].time;
        while lo < second.len() && batch[second[lo]].time + window < ta {
            lo += 1;
        }
        for &b in &second[lo..] {
            let tb = batch[b].time;
            if tb > ta + window {
                break;
            }
            candidates.push((ta.abs_diff(tb), a, b));
        }
    }
    candidates.sort_unstable();

    let mut partner = vec![None; batch.len()];
    for (_, a, b) in candidates {
        if partner[a].is_none() && partner[b].is_none() {
            partner[a] = Some(b);
            partner[b] = Some(a);
        }
    }
    partner
}

fn apply_dead_time(tags: Vec<TimeTagRecord>, dead_ps: u64) -> Vec<TimeTagRecord> {
    if dead_ps == 0 {
        return tags;
    }
    let mut last: [Option<u64>; 256] = [None; 256];
    tags.into_iter()
        .filter(|tag| {
            let slot = &mut last[tag.channel as usize];
            match *slot {
                Some(t) if tag.time - t < dead_ps => false,
                _ => {
                    *slot = Some(tag.time);
                    true
                }
            }
        })
        .collect()
}

/// Sorts tags and applies the detector dead time.
pub fn finalize_tags(mut tags: Vec<TimeTagRecord>, det: &DetectorParams) -> Vec<TimeTagRecord> {
    tags.sort_unstable();
    apply_dead_time(tags, secs_to_ps(det.dead_time))
}

/// Sends ion and scatter streams through the splitter network onto two
/// detectors. All streams must share one span.
pub fn route<R: Rng + ?Sized>(
    ion_streams: &[EmissionStream],
    scatter_streams: &[EmissionStream],
    optics: &OpticsParams,
    det: &DetectorParams,
    rng: &mut R,
) -> Result<Vec<TimeTagRecord>> {
    let Some(first) = ion_streams.first() else {
        return Err(Error::invalid("ion_streams", "expected one or two ions"));
    };
    let span_ps = first.span_ps();
    if ion_streams
        .iter()
        .chain(scatter_streams)
        .any(|s| s.span_ps() != span_ps)
    {
        return Err(Error::invalid("span", "all streams must share one span"));
    }
    if scatter_streams.iter().any(|s| !matches!(s.source, Source::Scatter(_))) {
        return Err(Error::invalid("scatter_streams", "expected scatter sources"));
    }
    let mut router = Router::new(ion_streams.len(), optics, det, rng)?;
    let ions: Vec<&[u64]> = ion_streams.iter().map(|s| s.times()).collect();
    let scatter: Vec<&[u64]> = scatter_streams.iter().map(|s| s.times()).collect();
    let mut tags = Vec::new();
    router.route_chunk(&ions, &scatter, span_ps, &mut tags)?;
    router.finish(&mut tags);
    Ok(finalize_tags(tags, det))
}

/// Single detector, no splitter: qe thinning, jitter and dark counts, all
/// on channel 0.
pub fn detect_only<R: Rng + ?Sized>(
    stream: &EmissionStream,
    det: &DetectorParams,
    rng: &mut R,
) -> Result<Vec<TimeTagRecord>> {
    det.validate()?;
    let jitter = if det.irf_sigma > 0.0 {
        Some(Normal::new(0.0, det.irf_sigma * 1e12).map_err(|e| Error::invalid("irf_sigma", e.to_string()))?)
    } else {
        None
    };
    let mut tags = Vec::with_capacity((stream.len() as f64 * det.qe) as usize + 16);
    for &t in stream.times() {
        if rng.random::<f64>() < det.qe {
            let time = match &jitter {
                Some(n) => (t as i64).saturating_add(n.sample(rng).round() as i64).max(0) as u64,
                None => t,
            };
            tags.push(TimeTagRecord { time, channel: 0 });
        }
    }
    if det.dark_rate > 0.0 && stream.span_ps() > 0 {
        let mean = det.dark_rate * stream.span();
        let n = Poisson::new(mean)
            .map_err(|e| Error::invalid("dark_rate", e.to_string()))?
            .sample(rng) as u64;
        for _ in 0..n {
            tags.push(TimeTagRecord {
                time: rng.random_range(0..stream.span_ps()),
                channel: 0,
            });
        }
    }
    Ok(finalize_tags(tags, det))
}
