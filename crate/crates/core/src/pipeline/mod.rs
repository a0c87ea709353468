//! End-to-end runs: simulate → time tags → correlate → fit → report.

mod figure;
mod table;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::atomdyn::AtomParams;
use crate::config::{ExperimentConfig, Mode};
use crate::correlator::{
    cross_correlate, cross_correlate_brute_force, normalize_with, CorrelationHistogram, Normalization, NormalizedCurve,
};
use crate::emitter::{CwEmitter, PulsedEmitter};
use crate::error::{Error, Result};
use crate::fitkit::{
    fit_damped_rabi, fit_exponential_peak, fit_gaussian_dip, FitModel, FitResult, PeakFitOptions, RabiFitOptions,
};
use crate::optics::{finalize_tags, Router, TimeTagRecord};
use crate::seeded_rng;
use crate::tagfile::{write_atomically, TimeTagFile};
use crate::time::secs_to_ps;

pub use figure::{
    desk_one_ion_cw, desk_pulsed, desk_two_ion_cw, fig2_data, fig3_data, fig4_curves, max_flat_deviation, run_figure,
    Binned, Check, Fig2Data, Fig3Data, Fig4Curves, Figure, FigureSummary, FIG2_EXCLUDE_CORE, ONE_ION_SPAN, PULSED_SPAN,
    TWO_ION_SPAN,
};
pub use table::CurveTable;

/// Emission is generated and routed in slices of this length, ps.
const CHUNK_PS: u64 = 1_000_000_000;
const ROUTER_STREAM: u64 = 0;
const CHANNELS: u8 = 2;

enum Emitter {
    Cw(CwEmitter),
    Pulsed(PulsedEmitter),
}

/// Runs the configured acquisition and returns sorted detector tags in
/// `[0, span]`. Identical configurations give identical tags.
pub fn simulate(config: &ExperimentConfig) -> Result<Vec<TimeTagRecord>> {
    config.validate()?;
    let span_ps = secs_to_ps(config.span);
    let mut emitters = Vec::with_capacity(config.n_ions);
    let mut rngs = Vec::with_capacity(config.n_ions);
    for i in 0..config.n_ions {
        emitters.push(match config.mode {
            Mode::Cw => Emitter::Cw(CwEmitter::new(&config.atom)?),
            Mode::Pulsed => Emitter::Pulsed(PulsedEmitter::new(&config.pulse)?),
        });
        rngs.push(seeded_rng(config.seed, 1 + i as u64));
    }
    let mut router = Router::new(
        config.n_ions,
        &config.optics,
        &config.detector,
        seeded_rng(config.seed, ROUTER_STREAM),
    )?;

    let mut ion_bufs = vec![Vec::new(); config.n_ions];
    let mut scatter_bufs = vec![Vec::new(); config.n_ions];
    let mut tags = Vec::new();
    let mut start = 0u64;
    while start < span_ps {
        let end = (start + CHUNK_PS).min(span_ps);
        for i in 0..config.n_ions {
            ion_bufs[i].clear();
            scatter_bufs[i].clear();
            match &mut emitters[i] {
                Emitter::Cw(e) => e.emit_until(end, &mut rngs[i], &mut ion_bufs[i]),
                Emitter::Pulsed(e) => e.emit_until(end, &mut rngs[i], &mut ion_bufs[i], &mut scatter_bufs[i]),
            }
        }
        let ions: Vec<&[u64]> = ion_bufs.iter().map(Vec::as_slice).collect();
        let scatter: Vec<&[u64]> = scatter_bufs.iter().map(Vec::as_slice).collect();
        router.route_chunk(&ions, &scatter, end, &mut tags)?;
        if let Some(duty) = &config.duty {
            tags.retain(|t| duty.is_live(t.time));
        }
        start = end;
    }
    router.finish(&mut tags);
    tags.retain(|t| t.time <= span_ps && config.duty.as_ref().is_none_or(|d| d.is_live(t.time)));
    Ok(finalize_tags(tags, &config.detector))
}

/// Acquisition time that correlations of a simulated run are normalized
/// by: the live time when gated, otherwise the span.
pub fn acquisition_basis(config: &ExperimentConfig) -> Normalization {
    match &config.duty {
        Some(d) => Normalization::LiveTime(d.live_time_ps(secs_to_ps(config.span))),
        None => Normalization::Span,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub path: PathBuf,
    pub records: usize,
    pub per_channel: [u64; 2],
    pub span_ps: u64,
}

/// Simulates and writes a time-tag file. The configuration is validated
/// before anything touches the file system.
pub fn run_simulate(config: &ExperimentConfig, out: &Path) -> Result<SimulateSummary> {
    config.validate()?;
    let tags = simulate(config).map_err(Error::in_stage("simulate"))?;
    let mut per_channel = [0u64; 2];
    for t in &tags {
        per_channel[t.channel as usize] += 1;
    }
    let file = TimeTagFile::new(CHANNELS, tags)?;
    file.write(out)?;
    Ok(SimulateSummary {
        path: out.to_path_buf(),
        records: file.len(),
        per_channel,
        span_ps: secs_to_ps(config.span),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorrelateOptions {
    pub bin_ps: u64,
    pub window_ps: u64,
    /// Recount with the O(N²) brute force and fail on any difference.
    pub oracle: bool,
}

impl Default for CorrelateOptions {
    fn default() -> Self {
        Self {
            bin_ps: 1000,
            window_ps: 100_000,
            oracle: false,
        }
    }
}

/// Histogram of a tag file as CSV, normalized by the span between the
/// first and last tag.
pub fn run_correlate(input: &Path, out: &Path, opts: CorrelateOptions) -> Result<CurveTable> {
    let file = TimeTagFile::read(input)?;
    let hist = cross_correlate(file.records(), opts.bin_ps, opts.window_ps)?;
    if opts.oracle {
        let brute = cross_correlate_brute_force(file.records(), opts.bin_ps, opts.window_ps)?;
        if let Some(bin) = hist.counts.iter().zip(&brute.counts).position(|(a, b)| a != b) {
            return Err(Error::OracleMismatch {
                bin,
                fast: hist.counts[bin],
                brute: brute.counts[bin],
            });
        }
    }
    let curve = normalize_with::<f64>(&hist, Normalization::Span).ok();
    let table = CurveTable::from_histogram(&hist, curve.as_ref())
        .with_meta("source", input.display())
        .with_meta("records", file.len())
        .with_meta("oracle_checked", opts.oracle);
    table.write(out)?;
    Ok(table)
}

/// Tunables of `run_fit` beyond the model choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Peak centre, s; `None` picks the tallest bin.
    pub peak_center: Option<f64>,
    pub peak_half_range: f64,
    pub peak_exclude_core: f64,
    /// Starting atom; Γ and Δ stay fixed.
    pub rabi_atom: AtomParams<f64>,
    pub rabi_irf_sigma: f64,
    pub rabi_max_delay: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            peak_center: None,
            peak_half_range: 15e-9,
            peak_exclude_core: FIG2_EXCLUDE_CORE,
            rabi_atom: AtomParams::default(),
            rabi_irf_sigma: 1e-9,
            rabi_max_delay: 50e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub result: FitResult<f64>,
    pub text: String,
    pub model_csv: PathBuf,
}

/// Path of the model-curve CSV written next to a fit report.
pub fn model_csv_path(report: &Path) -> PathBuf {
    let stem = report
        .file_stem()
        .map_or_else(|| "fit".into(), |s| s.to_string_lossy().into_owned());
    report.with_file_name(format!("{stem}_model.csv"))
}

fn tallest_bin_center(table: &CurveTable) -> Option<f64> {
    let counts: Vec<f64> = table.counts.iter().map(|c| c.unwrap_or(0) as f64).collect();
    let n = counts.len();
    let smooth = |i: usize| counts[i.saturating_sub(1)..(i + 2).min(n)].iter().sum::<f64>();
    let best = (0..n).max_by(|&a, &b| smooth(a).total_cmp(&smooth(b)))?;
    Some((table.delay_ps[best] as f64 + table.bin_width_ps as f64 / 2.0) * 1e-12)
}

/// Fits a CSV curve and writes a text report to `out` plus the model
/// curve beside it. The returned result may be unconverged.
pub fn run_fit(input: &Path, model: FitModel, out: &Path, opts: &FitOptions) -> Result<FitReport> {
    let table = CurveTable::read(input)?;
    let mut notes = Vec::new();
    let result = match model {
        FitModel::GaussianDip => {
            notes.push("start point: baseline from the outer fifth, centre at the lowest smoothed bin".to_owned());
            fit_gaussian_dip(&table.curve())?
        }
        FitModel::ExponentialPeak => {
            let hist = table.histogram()?;
            let center = match opts.peak_center {
                Some(c) => {
                    notes.push(format!("peak centre {:.3} ns (given)", c * 1e9));
                    c
                }
                None => {
                    let c = tallest_bin_center(&table).ok_or_else(|| Error::invalid("curve", "no bins"))?;
                    notes.push(format!("peak centre {:.3} ns (tallest bin)", c * 1e9));
                    c
                }
            };
            notes.push(format!(
                "bins within {:.1} ns of the centre, skipping the inner {:.1} ns",
                opts.peak_half_range * 1e9,
                opts.peak_exclude_core * 1e9
            ));
            fit_exponential_peak(
                &hist,
                PeakFitOptions {
                    center,
                    half_range: opts.peak_half_range,
                    exclude_core: opts.peak_exclude_core,
                },
            )?
        }
        FitModel::DampedRabi => {
            let a = opts.rabi_atom;
            notes.push(format!(
                "fixed: gamma/2pi = {:.4} MHz, detuning/2pi = {:.4} MHz",
                a.gamma / std::f64::consts::TAU / 1e6,
                a.detuning / std::f64::consts::TAU / 1e6
            ));
            notes.push(format!(
                "start: rabi/2pi = {:.4} MHz (matches a {:.3e}/s emission rate), irf_sigma = {:.3} ns",
                a.rabi / std::f64::consts::TAU / 1e6,
                a.emission_rate(),
                opts.rabi_irf_sigma * 1e9
            ));
            notes.push(format!("points with |delay| <= {:.1} ns", opts.rabi_max_delay * 1e9));
            fit_damped_rabi(
                &table.curve(),
                RabiFitOptions {
                    atom: a,
                    irf_sigma: opts.rabi_irf_sigma,
                    max_delay: opts.rabi_max_delay,
                },
            )?
        }
    };
    let text = format_report(&result, input, &notes);
    let model_csv = model_csv_path(out);
    let model_curve = NormalizedCurve {
        delays: result.delays.clone(),
        values: result.fitted.clone(),
        stat_err: vec![0.0; result.fitted.len()],
    };
    CurveTable::from_curve(&model_curve, table.bin_width_ps)
        .with_meta("model", model)
        .with_meta("source", input.display())
        .write(&model_csv)?;
    write_atomically(out, |w| w.write_all(text.as_bytes()))?;
    Ok(FitReport {
        result,
        text,
        model_csv,
    })
}

/// Display name, scale and unit for a reported parameter.
fn display_unit(name: &str) -> (String, f64, &'static str) {
    match name {
        "center" | "sigma" | "half_width" | "lifetime" | "irf_sigma" => (name.to_owned(), 1e9, "ns"),
        "rabi" => ("rabi/2pi".to_owned(), 1.0 / std::f64::consts::TAU / 1e6, "MHz"),
        "amplitude" => (name.to_owned(), 1.0, ""),
        _ => (name.to_owned(), 1.0, ""),
    }
}

pub fn format_report(result: &FitResult<f64>, source: &Path, notes: &[String]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "model: {}", result.model);
    let _ = writeln!(s, "source: {}", source.display());
    let _ = writeln!(
        s,
        "status: {}",
        if result.converged { "converged" } else { "NOT CONVERGED" }
    );
    let _ = writeln!(s, "iterations: {}", result.iterations);
    let _ = writeln!(s, "points: {}", result.delays.len());
    let _ = writeln!(s, "weighted residual sum of squares: {:.6e}", result.residual_norm);
    let _ = writeln!(s, "gradient norm: {:.3e}", result.gradient_norm);
    if !result.weighted {
        let _ = writeln!(s, "weights: unit (some points had zero error)");
    }
    let _ = writeln!(s, "parameters:");
    for p in &result.parameters {
        let (name, scale, unit) = display_unit(p.name);
        let _ = writeln!(
            s,
            "  {name:<12} {:>14.6} ± {:<12.6} {unit}",
            p.value * scale,
            p.std_err * scale
        );
    }
    if !notes.is_empty() {
        let _ = writeln!(s, "defaults:");
        for n in notes {
            let _ = writeln!(s, "  {n}");
        }
    }
    s
}

/// Histogram over the tags of a simulated run, normalized by its
/// acquisition time.
pub fn correlate_run(
    tags: &[TimeTagRecord],
    config: &ExperimentConfig,
    bin_ps: u64,
    window_ps: u64,
) -> Result<(CorrelationHistogram, NormalizedCurve<f64>)> {
    let hist = cross_correlate(tags, bin_ps, window_ps)?.with_span(secs_to_ps(config.span));
    let curve = normalize_with(&hist, acquisition_basis(config))?;
    Ok((hist, curve))
}
