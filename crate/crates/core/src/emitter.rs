//! Photon emission streams for continuous and pulsed excitation.
//!
//! Streams are kept in integer picoseconds. The emitters can be driven in
//! consecutive chunks (`emit_until`) so long acquisitions never hold the
//! full raw emission record in memory; `simulate_*` run a single chunk.

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};

use crate::atomdyn::{AtomParams, WaitingTimeSampler, LIFETIME};
use crate::error::{Error, Result};
use crate::time::{ps_to_secs, secs_to_ps};

/// Origin of the photons in a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Ion(u32),
    /// Diffuse laser scatter reaching the detectors; never interferes.
    Scatter(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmissionStream {
    pub source: Source,
    times: Vec<u64>,
    span_ps: u64,
}

impl EmissionStream {
    /// Builds a stream, checking strict monotonicity and `times ⊂ [0, span]`.
    pub fn new(source: Source, times: Vec<u64>, span_ps: u64) -> Result<Self> {
        if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "times",
                format!("not strictly increasing at index {}", i + 1),
            ));
        }
        if times.last().is_some_and(|&t| t > span_ps) {
            return Err(Error::invalid("times", "timestamp beyond span"));
        }
        Ok(Self { source, times, span_ps })
    }

    pub fn times(&self) -> &[u64] {
        &self.times
    }

    pub fn into_times(self) -> Vec<u64> {
        self.times
    }

    pub fn span_ps(&self) -> u64 {
        self.span_ps
    }

    /// Simulated duration, s.
    pub fn span(&self) -> f64 {
        ps_to_secs(self.span_ps)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Mean photon rate over the span, 1/s.
    pub fn rate(&self) -> f64 {
        self.times.len() as f64 / self.span()
    }
}

fn check_span(span: f64) -> Result<u64> {
    if !span.is_finite() || span <= 0.0 {
        return Err(Error::invalid("span", "must be finite and > 0"));
    }
    let ps = secs_to_ps(span);
    if ps == 0 {
        return Err(Error::invalid("span", "shorter than one picosecond"));
    }
    Ok(ps)
}

/// Renewal-process emitter for a continuously driven ion: every emission
/// resets the atom to the ground state.
#[derive(Debug, Clone)]
pub struct CwEmitter {
    sampler: Option<WaitingTimeSampler<f64>>,
    clock_ps: u64,
    next_ps: Option<u64>,
}

impl CwEmitter {
    /// An undriven atom gives an emitter that never fires.
    pub fn new(atom: &AtomParams<f64>) -> Result<Self> {
        atom.validate()?;
        let sampler = if atom.rabi > 0.0 {
            Some(WaitingTimeSampler::new(atom)?)
        } else {
            None
        };
        Ok(Self {
            sampler,
            clock_ps: 0,
            next_ps: None,
        })
    }

    /// Appends all emissions with timestamp `<= end_ps` to `out`.
    pub fn emit_until<R: Rng + ?Sized>(&mut self, end_ps: u64, rng: &mut R, out: &mut Vec<u64>) {
        let Some(sampler) = &self.sampler else {
            return;
        };
        loop {
            let next = match self.next_ps {
                Some(t) => t,
                None => {
                    let wait = secs_to_ps(sampler.sample(rng)).max(1);
                    let t = self.clock_ps.saturating_add(wait);
                    self.next_ps = Some(t);
                    t
                }
            };
            if next > end_ps {
                return;
            }
            out.push(next);
            self.clock_ps = next;
            self.next_ps = None;
        }
    }
}

/// cw emission from one ion over `[0, span]` seconds.
pub fn simulate_cw_stream<R: Rng + ?Sized>(
    atom: &AtomParams<f64>,
    span: f64,
    source: Source,
    rng: &mut R,
) -> Result<EmissionStream> {
    let span_ps = check_span(span)?;
    let mut emitter = CwEmitter::new(atom)?;
    let mut times = Vec::new();
    emitter.emit_until(span_ps, rng, &mut times);
    EmissionStream::new(source, times, span_ps)
}

/// Ultrafast pulsed excitation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseParams {
    /// Pulse repetition period, s.
    pub rep_period: f64,
    /// Excitation probability per pulse.
    pub p_exc: f64,
    /// Excited-state lifetime, s.
    pub lifetime: f64,
    /// Mean scatter detections per pulse at the detectors.
    pub scatter_per_pulse: f64,
    /// Pulse length, s. Informational; excitation is treated as instantaneous.
    pub pulse_duration: f64,
}

/// Overall detection efficiency of an ion photon in the reference set-up.
pub const REFERENCE_DETECTION_EFFICIENCY: f64 = 1e-3;

/// Zero-delay to side-peak area ratio produced by laser scatter.
pub const SCATTER_PEAK_RATIO: f64 = 0.02;

impl Default for PulseParams {
    fn default() -> Self {
        let p_exc = 0.20;
        Self {
            rep_period: 37.5e-9,
            p_exc,
            lifetime: LIFETIME,
            scatter_per_pulse: calibrated_scatter(p_exc * REFERENCE_DETECTION_EFFICIENCY, SCATTER_PEAK_RATIO),
            pulse_duration: 1e-12,
        }
    }
}

impl PulseParams {
    pub fn validate(&self) -> Result<()> {
        if !self.rep_period.is_finite() || self.rep_period <= 0.0 {
            return Err(Error::invalid("rep_period", "must be finite and > 0"));
        }
        if !(0.0..=1.0).contains(&self.p_exc) {
            return Err(Error::invalid("p_exc", "must lie in [0, 1]"));
        }
        if !self.lifetime.is_finite() || self.lifetime <= 0.0 {
            return Err(Error::invalid("lifetime", "must be finite and > 0"));
        }
        if self.rep_period <= self.lifetime {
            return Err(Error::invalid("rep_period", "must exceed the lifetime"));
        }
        if !self.scatter_per_pulse.is_finite() || self.scatter_per_pulse < 0.0 {
            return Err(Error::invalid("scatter_per_pulse", "must be finite and >= 0"));
        }
        if !self.pulse_duration.is_finite() || self.pulse_duration < 0.0 {
            return Err(Error::invalid("pulse_duration", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Scatter detections per pulse that make the zero-delay peak area equal
/// `ratio` times a side-peak area, given `ion_detections` detected ion
/// photons per pulse.
///
/// With one ion photon at most per pulse and Poisson scatter `s`, the
/// same-pulse pair moment is `s² + 2qs` and the side-peak moment is
/// `(q + s)²`; solve `(s² + 2qs) = r (q + s)²` for `s`.
pub fn calibrated_scatter(ion_detections: f64, ratio: f64) -> f64 {
    let q = ion_detections;
    let a = 1.0 - ratio;
    let b = 2.0 * q * (1.0 - ratio);
    let c = -ratio * q * q;
    if a.abs() < f64::EPSILON {
        return f64::INFINITY;
    }
    (-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a)
}

/// Chunkable pulsed emitter. At most one ion photon per pulse; a pulse
/// arriving while the ion is still excited finds it unable to absorb.
#[derive(Debug, Clone)]
pub struct PulsedEmitter {
    rep_ps: u64,
    p_exc: f64,
    delay: Exp<f64>,
    scatter: Option<Poisson<f64>>,
    next_pulse: u64,
    pending_ion: Option<u64>,
    last_ion: Option<u64>,
}

impl PulsedEmitter {
    pub fn new(pulse: &PulseParams) -> Result<Self> {
        pulse.validate()?;
        let rep_ps = secs_to_ps(pulse.rep_period);
        if rep_ps == 0 {
            return Err(Error::invalid("rep_period", "shorter than one picosecond"));
        }
        let delay = Exp::new(1.0 / pulse.lifetime).map_err(|e| Error::invalid("lifetime", e.to_string()))?;
        let scatter = if pulse.scatter_per_pulse > 0.0 {
            Some(
                Poisson::new(pulse.scatter_per_pulse)
                    .map_err(|e| Error::invalid("scatter_per_pulse", e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Self {
            rep_ps,
            p_exc: pulse.p_exc,
            delay,
            scatter,
            next_pulse: 0,
            pending_ion: None,
            last_ion: None,
        })
    }

    /// Fires every pulse at or before `end_ps`. Ion photons landing after
    /// `end_ps` are held back for the next call.
    pub fn emit_until<R: Rng + ?Sized>(
        &mut self,
        end_ps: u64,
        rng: &mut R,
        ion_out: &mut Vec<u64>,
        scatter_out: &mut Vec<u64>,
    ) {
        if let Some(t) = self.pending_ion {
            if t <= end_ps {
                ion_out.push(t);
                self.pending_ion = None;
            }
        }
        while self.next_pulse.saturating_mul(self.rep_ps) <= end_ps {
            let pulse_ps = self.next_pulse * self.rep_ps;
            self.next_pulse += 1;

            if let Some(scatter) = &self.scatter {
                // coincident scatter photons are spread over successive
                // picoseconds to keep the stream strictly increasing
                let n = scatter.sample(rng) as u64;
                scatter_out.extend((0..n).map(|i| pulse_ps + i));
            }

            let still_excited = self.last_ion.is_some_and(|t| t >= pulse_ps);
            if !still_excited && rng.random::<f64>() < self.p_exc {
                let t = pulse_ps + secs_to_ps(self.delay.sample(rng));
                self.last_ion = Some(t);
                if t <= end_ps {
                    ion_out.push(t);
                } else {
                    self.pending_ion = Some(t);
                }
            }
        }
    }
}

/// Pulsed emission over `[0, span]` seconds. Returns `(ion, scatter)`.
pub fn simulate_pulsed_stream<R: Rng + ?Sized>(
    pulse: &PulseParams,
    span: f64,
    ion: u32,
    rng: &mut R,
) -> Result<(EmissionStream, EmissionStream)> {
    pulse.validate()?;
    let span_ps = check_span(span)?;
    if span <= pulse.rep_period {
        return Err(Error::invalid("span", "must exceed the pulse period"));
    }
    let mut emitter = PulsedEmitter::new(pulse)?;
    let (mut ion_times, mut scatter_times) = (Vec::new(), Vec::new());
    emitter.emit_until(span_ps, rng, &mut ion_times, &mut scatter_times);
    scatter_times.retain(|&t| t <= span_ps);
    Ok((
        EmissionStream::new(Source::Ion(ion), ion_times, span_ps)?,
        EmissionStream::new(Source::Scatter(ion), scatter_times, span_ps)?,
    ))
}

/// Alternating measurement and cooling windows. Each cycle opens with the
/// measurement window: `[0, measure)` is live, `[measure, measure + cool)`
/// is discarded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DutyCycle {
    /// Cooling interval, s.
    pub cool: f64,
    /// Measurement interval, s.
    pub measure: f64,
}

impl Default for DutyCycle {
    fn default() -> Self {
        Self {
            cool: 150e-6,
            measure: 50e-6,
        }
    }
}

impl DutyCycle {
    pub fn validate(&self) -> Result<()> {
        if !self.cool.is_finite() || self.cool <= 0.0 {
            return Err(Error::invalid("cool", "must be finite and > 0"));
        }
        if !self.measure.is_finite() || self.measure <= 0.0 {
            return Err(Error::invalid("measure", "must be finite and > 0"));
        }
        Ok(())
    }

    fn period_ps(&self) -> (u64, u64) {
        let measure = secs_to_ps(self.measure).max(1);
        (measure, measure + secs_to_ps(self.cool))
    }

    pub fn is_live(&self, t_ps: u64) -> bool {
        let (measure, cycle) = self.period_ps();
        t_ps % cycle < measure
    }

    /// Live fraction `measure / (cool + measure)`.
    pub fn fraction(&self) -> f64 {
        self.measure / (self.cool + self.measure)
    }

    /// Live picoseconds inside `[0, span_ps)`.
    pub fn live_time_ps(&self, span_ps: u64) -> u64 {
        let (measure, cycle) = self.period_ps();
        let full = span_ps / cycle;
        full * measure + (span_ps % cycle).min(measure)
    }
}

/// Keeps only photons inside measurement windows.
pub fn apply_duty_cycle(stream: &EmissionStream, duty: &DutyCycle) -> Result<EmissionStream> {
    duty.validate()?;
    let times = stream.times().iter().copied().filter(|&t| duty.is_live(t)).collect();
    Ok(EmissionStream {
        source: stream.source,
        times,
        span_ps: stream.span_ps,
    })
}
