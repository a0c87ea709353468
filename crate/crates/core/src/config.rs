//! Experiment configuration as flat `key=value` text.
//!
//! Physical units live in the key names. Frequencies given in MHz are
//! cyclic (`Γ/2π`), so `atom.gamma_mhz=61.2` is the 2.6 ns lifetime.

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::atomdyn::AtomParams;
use crate::emitter::{DutyCycle, PulseParams};
use crate::error::{Error, Result};
use crate::optics::{DetectorParams, OpticsParams};

/// Longest span accepted, s. Keeps picosecond times far from `u64::MAX`.
pub const MAX_SPAN: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Cw,
    Pulsed,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Cw => "cw",
            Mode::Pulsed => "pulsed",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cw" => Ok(Mode::Cw),
            "pulsed" => Ok(Mode::Pulsed),
            _ => Err(config_err("mode", format!("expected `cw` or `pulsed`, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub n_ions: usize,
    pub atom: AtomParams<f64>,
    pub pulse: PulseParams,
    pub optics: OpticsParams,
    pub detector: DetectorParams,
    /// Gating applied to the detector output; `None` records continuously.
    pub duty: Option<DutyCycle>,
    /// Acquisition span, s.
    pub span: f64,
    pub seed: u64,
}

fn config_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_owned(),
        reason: reason.into(),
    }
}

/// Dotted config key for a field name reported by a parameter block.
fn key_for(section: &str, field: &str) -> String {
    let key = match (section, field) {
        ("atom", "gamma") => "atom.gamma_mhz",
        ("atom", "rabi") => "atom.rabi_mhz",
        ("atom", "detuning") => "atom.detuning_mhz",
        ("pulse", "rep_period") => "pulse.rep_period_ns",
        ("pulse", "p_exc") => "pulse.p_exc",
        ("pulse", "lifetime") => "pulse.lifetime_ns",
        ("pulse", "scatter_per_pulse") => "pulse.scatter_per_pulse",
        ("pulse", "pulse_duration") => "pulse.pulse_duration_ps",
        ("optics", "overlap") => "optics.overlap",
        ("optics", "coherence_sigma") => "optics.coherence_sigma_ns",
        ("optics", "bs_ratio") => "optics.bs_ratio",
        ("optics", "path_efficiency") => "optics.path_efficiency",
        ("detector", "qe") => "detector.qe",
        ("detector", "irf_sigma") => "detector.irf_sigma_ns",
        ("detector", "dark_rate") => "detector.dark_rate_hz",
        ("detector", "dead_time") => "detector.dead_time_ns",
        ("duty", "cool") => "duty.cool_us",
        ("duty", "measure") => "duty.measure_us",
        _ => return format!("{section}.{field}"),
    };
    key.to_owned()
}

fn in_section(section: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::InvalidInput { field, reason } => Error::Config {
            field: key_for(section, field),
            reason,
        },
        other => other,
    }
}

const MHZ: f64 = TAU * 1e6;

impl ExperimentConfig {
    /// Reference parameters for `mode`: 0.1 % overall detection efficiency,
    /// a gated 25 % duty cycle for pulsed runs and a one-second span.
    pub fn reference(mode: Mode, n_ions: usize, seed: u64) -> Self {
        Self {
            mode,
            n_ions,
            atom: AtomParams::default(),
            pulse: PulseParams::default(),
            optics: OpticsParams::default(),
            detector: DetectorParams::default(),
            duty: (mode == Mode::Pulsed).then(DutyCycle::default),
            span: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.n_ions) {
            return Err(config_err("n_ions", "must be 1 or 2"));
        }
        if !self.span.is_finite() || self.span <= 0.0 || self.span > MAX_SPAN {
            return Err(config_err("span_s", format!("must lie in (0, {MAX_SPAN}]")));
        }
        self.atom.validate().map_err(in_section("atom"))?;
        self.pulse.validate().map_err(in_section("pulse"))?;
        self.optics.validate().map_err(in_section("optics"))?;
        self.detector.validate().map_err(in_section("detector"))?;
        if let Some(duty) = &self.duty {
            duty.validate().map_err(in_section("duty"))?;
        }
        if self.mode == Mode::Pulsed && self.span <= self.pulse.rep_period {
            return Err(config_err("span_s", "must exceed the pulse period"));
        }
        Ok(())
    }

    /// Parses and validates. Keys left out keep their reference value;
    /// `mode` and `seed` are required.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(config_err(&format!("line {}", lineno + 1), "expected `key=value`"));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_owned()) {
                return Err(config_err(key, "given more than once"));
            }
            entries.push((key.to_owned(), value.to_owned()));
        }

        let lookup = |k: &str| entries.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
        let mode: Mode = lookup("mode").ok_or_else(|| config_err("mode", "missing"))?.parse()?;
        let seed = lookup("seed")
            .ok_or_else(|| config_err("seed", "missing; runs need an explicit seed"))?
            .parse::<u64>()
            .map_err(|e| config_err("seed", e.to_string()))?;
        let n_ions = match lookup("n_ions") {
            Some(v) => v.parse::<usize>().map_err(|e| config_err("n_ions", e.to_string()))?,
            None => 1,
        };
        let mut cfg = Self::reference(mode, n_ions, seed);
        let mut duty = cfg.duty.unwrap_or_default();
        let mut duty_enabled = cfg.duty.is_some();
        let mut duty_touched = false;

        for (key, value) in &entries {
            let num = || -> Result<f64> {
                let v: f64 = value
                    .parse()
                    .map_err(|_| config_err(key, format!("`{value}` is not a number")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(config_err(key, "must be finite"))
                }
            };
            match key.as_str() {
                "mode" | "seed" | "n_ions" => {}
                "span_s" => cfg.span = num()?,
                "atom.gamma_mhz" => cfg.atom.gamma = num()? * MHZ,
                "atom.rabi_mhz" => cfg.atom.rabi = num()? * MHZ,
                "atom.detuning_mhz" => cfg.atom.detuning = num()? * MHZ,
                "pulse.rep_period_ns" => cfg.pulse.rep_period = num()? * 1e-9,
                "pulse.p_exc" => cfg.pulse.p_exc = num()?,
                "pulse.lifetime_ns" => cfg.pulse.lifetime = num()? * 1e-9,
                "pulse.scatter_per_pulse" => cfg.pulse.scatter_per_pulse = num()?,
                "pulse.pulse_duration_ps" => cfg.pulse.pulse_duration = num()? * 1e-12,
                "optics.overlap" => cfg.optics.overlap = num()?,
                "optics.coherence_sigma_ns" => cfg.optics.coherence_sigma = num()? * 1e-9,
                "optics.bs_ratio" => cfg.optics.bs_ratio = num()?,
                "optics.path_efficiency" => cfg.optics.path_efficiency = num()?,
                "detector.qe" => cfg.detector.qe = num()?,
                "detector.irf_sigma_ns" => cfg.detector.irf_sigma = num()? * 1e-9,
                "detector.dark_rate_hz" => cfg.detector.dark_rate = num()?,
                "detector.dead_time_ns" => cfg.detector.dead_time = num()? * 1e-9,
                "duty.enabled" => {
                    duty_enabled = value
                        .parse()
                        .map_err(|_| config_err(key, "expected `true` or `false`"))?
                }
                "duty.cool_us" => {
                    duty.cool = num()? * 1e-6;
                    duty_touched = true;
                }
                "duty.measure_us" => {
                    duty.measure = num()? * 1e-6;
                    duty_touched = true;
                }
                _ => return Err(config_err(key, "unknown key")),
            }
        }
        if duty_touched && lookup("duty.enabled").is_none() {
            duty_enabled = true;
        }
        cfg.duty = duty_enabled.then_some(duty);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Writes every key; `parse` reads it back.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("mode", self.mode.name().to_owned());
        kv("n_ions", self.n_ions.to_string());
        kv("seed", self.seed.to_string());
        kv("span_s", self.span.to_string());
        kv("atom.gamma_mhz", (self.atom.gamma / MHZ).to_string());
        kv("atom.rabi_mhz", (self.atom.rabi / MHZ).to_string());
        kv("atom.detuning_mhz", (self.atom.detuning / MHZ).to_string());
        kv("pulse.rep_period_ns", (self.pulse.rep_period * 1e9).to_string());
        kv("pulse.p_exc", self.pulse.p_exc.to_string());
        kv("pulse.lifetime_ns", (self.pulse.lifetime * 1e9).to_string());
        kv("pulse.scatter_per_pulse", self.pulse.scatter_per_pulse.to_string());
        kv(
            "pulse.pulse_duration_ps",
            (self.pulse.pulse_duration * 1e12).to_string(),
        );
        kv("optics.overlap", self.optics.overlap.to_string());
        kv(
            "optics.coherence_sigma_ns",
            (self.optics.coherence_sigma * 1e9).to_string(),
        );
        kv("optics.bs_ratio", self.optics.bs_ratio.to_string());
        kv("optics.path_efficiency", self.optics.path_efficiency.to_string());
        kv("detector.qe", self.detector.qe.to_string());
        kv("detector.irf_sigma_ns", (self.detector.irf_sigma * 1e9).to_string());
        kv("detector.dark_rate_hz", self.detector.dark_rate.to_string());
        kv("detector.dead_time_ns", (self.detector.dead_time * 1e9).to_string());
        kv("duty.enabled", self.duty.is_some().to_string());
        let duty = self.duty.unwrap_or_default();
        kv("duty.cool_us", (duty.cool * 1e6).to_string());
        kv("duty.measure_us", (duty.measure * 1e6).to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(e: Error) -> String {
        match e {
            Error::Config { field, .. } => field,
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn minimal_file_uses_reference_values() {
        let cfg = ExperimentConfig::parse("mode=pulsed\nseed=7 # fixed\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::reference(Mode::Pulsed, 1, 7));
        assert!(cfg.duty.is_some());
        let cw = ExperimentConfig::parse("mode=cw\nseed=1\n").unwrap();
        assert!(cw.duty.is_none());
    }

    #[test]
    fn seed_is_required() {
        assert_eq!(field_of(ExperimentConfig::parse("mode=cw").unwrap_err()), "seed");
    }

    #[test]
    fn units_follow_key_names() {
        let cfg = ExperimentConfig::parse(
            "mode=cw\nseed=1\natom.gamma_mhz=60\ndetector.irf_sigma_ns=0.5\nduty.cool_us=100\n",
        )
        .unwrap();
        assert!((cfg.atom.gamma - 60.0 * TAU * 1e6).abs() < 1e-3);
        assert!((cfg.detector.irf_sigma - 0.5e-9).abs() < 1e-21);
        assert!((cfg.duty.unwrap().cool - 100e-6).abs() < 1e-18);
    }

    #[test]
    fn round_trips_through_text() {
        let mut cfg = ExperimentConfig::reference(Mode::Cw, 2, 99);
        cfg.optics.overlap = 0.0;
        let back = ExperimentConfig::parse(&cfg.to_config_string()).unwrap();
        let again = ExperimentConfig::parse(&back.to_config_string()).unwrap();
        assert_eq!((back.mode, back.n_ions, back.seed), (cfg.mode, cfg.n_ions, cfg.seed));
        assert!((back.pulse.rep_period - cfg.pulse.rep_period).abs() < 1e-20);
        assert!((again.optics.coherence_sigma - cfg.optics.coherence_sigma).abs() < 1e-20);
        assert!((back.atom.rabi - cfg.atom.rabi).abs() <= 1e-6 * cfg.atom.rabi);
    }

    #[test]
    fn errors_name_the_key() {
        let cases = [
            ("n_ions=3", "n_ions"),
            ("span_s=0", "span_s"),
            ("span_s=-1", "span_s"),
            ("atom.gamma_mhz=0", "atom.gamma_mhz"),
            ("atom.rabi_mhz=-1", "atom.rabi_mhz"),
            ("pulse.p_exc=1.5", "pulse.p_exc"),
            ("pulse.rep_period_ns=1", "pulse.rep_period_ns"),
            ("pulse.lifetime_ns=0", "pulse.lifetime_ns"),
            ("pulse.scatter_per_pulse=-0.1", "pulse.scatter_per_pulse"),
            ("pulse.pulse_duration_ps=-1", "pulse.pulse_duration_ps"),
            ("optics.overlap=1.2", "optics.overlap"),
            ("optics.coherence_sigma_ns=0", "optics.coherence_sigma_ns"),
            ("optics.bs_ratio=1", "optics.bs_ratio"),
            ("optics.path_efficiency=2", "optics.path_efficiency"),
            ("detector.qe=-0.2", "detector.qe"),
            ("detector.irf_sigma_ns=-1", "detector.irf_sigma_ns"),
            ("detector.dark_rate_hz=-5", "detector.dark_rate_hz"),
            ("detector.dead_time_ns=-1", "detector.dead_time_ns"),
            ("duty.cool_us=0", "duty.cool_us"),
            ("duty.measure_us=-3", "duty.measure_us"),
            ("duty.enabled=maybe", "duty.enabled"),
            ("optics.colour=red", "optics.colour"),
            ("detector.qe=abc", "detector.qe"),
            ("detector.qe=inf", "detector.qe"),
        ];
        for (line, key) in cases {
            let text = format!("mode=cw\nseed=1\n{line}\n");
            assert_eq!(field_of(ExperimentConfig::parse(&text).unwrap_err()), key, "{line}");
        }
        assert_eq!(
            field_of(ExperimentConfig::parse("mode=laser\nseed=1").unwrap_err()),
            "mode"
        );
        assert_eq!(
            field_of(ExperimentConfig::parse("mode=cw\nseed=1\nseed=2").unwrap_err()),
            "seed"
        );
    }
}
