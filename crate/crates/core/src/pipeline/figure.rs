//! Canned desk-scale runs behind the `figure` subcommand.
//!
//! Desk presets raise the detection efficiency so that a run takes
//! seconds. Normalized correlations do not depend on the efficiency, and
//! the dark rate is scaled with the signal to keep the same background
//! fraction.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{correlate_run, simulate, CurveTable};
use crate::config::{ExperimentConfig, Mode};
use crate::correlator::{decompose_p2, peak_metrics, zero_peak_ratio, CorrelationHistogram, NormalizedCurve};
use crate::emitter::{calibrated_scatter, SCATTER_PEAK_RATIO};
use crate::error::{Error, Result};
use crate::fitkit::{fit_exponential_peak, fit_gaussian_dip, FitResult, PeakFitOptions};
use crate::tagfile::write_atomically;
use crate::time::secs_to_ps;

/// Dark counts as a fraction of the per-channel signal rate.
const DARK_FRACTION: f64 = 0.005;
/// Overall detection efficiency of the two-ion desk runs.
const TWO_ION_EFFICIENCY: f64 = 0.1;

pub const ONE_ION_SPAN: f64 = 0.25;
pub const TWO_ION_SPAN: f64 = 2.0;
pub const PULSED_SPAN: f64 = 1.0;

const FIG3_BIN_PS: u64 = 1000;
const FIG4_BIN_PS: u64 = 2000;
const CW_WINDOW_PS: u64 = 100_000;
const FIG2_BIN_PS: u64 = 1000;
/// Inner part of each comb peak left out of the lifetime fit, s. About
/// twice the coincidence timing spread.
pub const FIG2_EXCLUDE_CORE: f64 = 3e-9;
const FIG2_HALF_RANGE: f64 = 15e-9;

/// Single ion, cw, every photon detected.
pub fn desk_one_ion_cw(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::reference(Mode::Cw, 1, seed);
    c.optics.path_efficiency = 1.0;
    c.detector.qe = 1.0;
    c.detector.dark_rate = DARK_FRACTION * c.atom.emission_rate() / 2.0;
    c.span = ONE_ION_SPAN;
    c
}

/// Two ions, cw, at 10 % detection efficiency.
pub fn desk_two_ion_cw(seed: u64, overlap: f64) -> ExperimentConfig {
    let mut c = ExperimentConfig::reference(Mode::Cw, 2, seed);
    c.optics.overlap = overlap;
    c.optics.path_efficiency = TWO_ION_EFFICIENCY / c.detector.qe;
    let per_channel = 2.0 * c.atom.emission_rate() * TWO_ION_EFFICIENCY / 2.0;
    c.detector.dark_rate = DARK_FRACTION * per_channel;
    c.span = TWO_ION_SPAN;
    c
}

/// Single ion, pulsed and gated, every photon detected; the scatter level
/// keeps the zero-delay peak at its reference ratio.
pub fn desk_pulsed(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::reference(Mode::Pulsed, 1, seed);
    c.optics.path_efficiency = 1.0;
    c.detector.qe = 1.0;
    c.pulse.scatter_per_pulse = calibrated_scatter(c.pulse.p_exc, SCATTER_PEAK_RATIO);
    let live = c.duty.map_or(1.0, |d| d.fraction());
    let per_channel = c.pulse.p_exc / c.pulse.rep_period * live / 2.0;
    c.detector.dark_rate = DARK_FRACTION * per_channel;
    c.span = PULSED_SPAN;
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    Fig2,
    Fig3,
    Fig4,
}

impl Figure {
    pub fn name(self) -> &'static str {
        match self {
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
        }
    }
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig2" => Ok(Figure::Fig2),
            "fig3" => Ok(Figure::Fig3),
            "fig4" => Ok(Figure::Fig4),
            _ => Err(Error::invalid(
                "figure",
                format!("expected fig2, fig3 or fig4, got `{s}`"),
            )),
        }
    }
}

/// One headline number against its target.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub label: String,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub unit: &'static str,
}

impl Check {
    fn new(label: &str, value: f64, target: f64, tolerance: f64, unit: &'static str) -> Self {
        Self {
            label: label.to_owned(),
            value,
            target,
            tolerance,
            unit,
        }
    }

    pub fn passed(&self) -> bool {
        (self.value - self.target).abs() <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FigureSummary {
    pub figure: Figure,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub files: Vec<PathBuf>,
}

impl FigureSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "figure: {}", self.figure.name());
        let _ = writeln!(s, "seed: {}", self.seed);
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{} {:<34} {:>10.4} (target {} ± {}{})",
                if c.passed() { "PASS" } else { "FAIL" },
                c.label,
                c.value,
                c.target,
                c.tolerance,
                if c.unit.is_empty() {
                    String::new()
                } else {
                    format!(" {}", c.unit)
                }
            );
        }
        for f in &self.files {
            let _ = writeln!(s, "wrote {}", f.display());
        }
        s
    }
}

/// One correlation at one binning.
#[derive(Debug, Clone, PartialEq)]
pub struct Binned {
    pub hist: CorrelationHistogram,
    pub curve: NormalizedCurve<f64>,
}

/// The three cw runs at the two binnings used for plots.
#[derive(Debug, Clone, PartialEq)]
pub struct Fig3Data {
    /// One ion; 1 ns then 2 ns bins.
    pub g2: [Binned; 2],
    pub p2_no_overlap: [Binned; 2],
    pub p2_overlap: [Binned; 2],
}

fn cw_run(stage: &'static str, config: &ExperimentConfig) -> Result<[Binned; 2]> {
    let tags = simulate(config).map_err(Error::in_stage(stage))?;
    let mut out = Vec::with_capacity(2);
    for bin in [FIG3_BIN_PS, FIG4_BIN_PS] {
        let (hist, curve) = correlate_run(&tags, config, bin, CW_WINDOW_PS).map_err(Error::in_stage(stage))?;
        out.push(Binned { hist, curve });
    }
    Ok(out.try_into().expect("two binnings"))
}

pub fn fig3_data(seed: u64) -> Result<Fig3Data> {
    Ok(Fig3Data {
        g2: cw_run("one-ion cw", &desk_one_ion_cw(seed))?,
        p2_no_overlap: cw_run("two-ion cw, no overlap", &desk_two_ion_cw(seed.wrapping_add(1), 0.0))?,
        p2_overlap: cw_run(
            "two-ion cw, overlap",
            &desk_two_ion_cw(seed.wrapping_add(2), crate::optics::OpticsParams::default().overlap),
        )?,
    })
}

fn zero_bin(curve: &NormalizedCurve<f64>, bin_ps: u64) -> f64 {
    curve.value_at(bin_ps as f64 * 0.5e-12).map_or(f64::NAN, |(v, _)| v)
}

fn fig3_checks(d: &Fig3Data) -> Vec<Check> {
    let g0 = zero_bin(&d.g2[0].curve, FIG3_BIN_PS);
    let none0 = zero_bin(&d.p2_no_overlap[0].curve, FIG3_BIN_PS);
    let over0 = zero_bin(&d.p2_overlap[0].curve, FIG3_BIN_PS);
    vec![
        Check::new("one-ion g2(0)", g0, 0.18, 0.05, ""),
        Check::new("two-ion P2(0), no overlap", none0, 0.59, 0.05, ""),
        Check::new("two-ion P2(0), overlap", over0, 0.31, 0.05, ""),
        Check::new(
            "P2(0) no overlap - (g2(0)+1)/2",
            none0 - (g0 + 1.0) / 2.0,
            0.0,
            0.05,
            "",
        ),
    ]
}

/// Cross-ion parts of the two-ion correlations and the dip fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Fig4Curves {
    pub p22_no_overlap: NormalizedCurve<f64>,
    pub p22_overlap: NormalizedCurve<f64>,
    pub dip: FitResult<f64>,
}

pub fn fig4_curves(d: &Fig3Data) -> Result<Fig4Curves> {
    let p22_no_overlap = decompose_p2(&d.p2_no_overlap[1].curve, &d.g2[1].curve)?;
    let p22_overlap = decompose_p2(&d.p2_overlap[1].curve, &d.g2[1].curve)?;
    let dip = fit_gaussian_dip(&p22_overlap).map_err(Error::in_stage("dip fit"))?;
    Ok(Fig4Curves {
        p22_no_overlap,
        p22_overlap,
        dip,
    })
}

/// Largest deviation from one over all bins.
pub fn max_flat_deviation(curve: &NormalizedCurve<f64>) -> f64 {
    curve.values.iter().fold(0.0, |m: f64, v| m.max((v - 1.0).abs()))
}

fn fig4_checks(f: &Fig4Curves) -> Vec<Check> {
    let depth = f.dip.value("depth").unwrap_or(f64::NAN);
    let hw = f.dip.value("half_width").unwrap_or(f64::NAN) * 1e9;
    let mut checks = vec![
        Check::new("dip depth", depth, 0.57, 0.06, ""),
        Check::new("dip half width", hw, 5.3, 1.0, "ns"),
        Check::new(
            "max |P22 - 1|, no overlap",
            max_flat_deviation(&f.p22_no_overlap),
            0.0,
            0.05,
            "",
        ),
    ];
    if !f.dip.converged {
        checks.push(Check::new("dip fit converged", 0.0, 1.0, 0.0, ""));
    }
    checks
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig2Data {
    pub hist: CorrelationHistogram,
    pub curve: NormalizedCurve<f64>,
    pub zero_peak_ratio: f64,
    /// Fits of the first side peak on each side.
    pub side_fits: Vec<FitResult<f64>>,
    pub lifetime: f64,
}

pub fn fig2_data(seed: u64) -> Result<Fig2Data> {
    let config = desk_pulsed(seed);
    let stage = "pulsed one-ion";
    let tags = simulate(&config).map_err(Error::in_stage(stage))?;
    let rep_ps = secs_to_ps(config.pulse.rep_period);
    let (hist, curve) = correlate_run(&tags, &config, FIG2_BIN_PS, 4 * rep_ps).map_err(Error::in_stage(stage))?;
    let peaks = peak_metrics(&hist, rep_ps)?;
    let ratio = zero_peak_ratio(&peaks).unwrap_or(f64::NAN);
    let mut side_fits = Vec::new();
    for m in [-1.0, 1.0] {
        let fit = fit_exponential_peak(
            &hist,
            PeakFitOptions {
                center: m * config.pulse.rep_period,
                half_range: FIG2_HALF_RANGE,
                exclude_core: FIG2_EXCLUDE_CORE,
            },
        )
        .map_err(Error::in_stage("lifetime fit"))?;
        side_fits.push(fit);
    }
    let lifetimes: Vec<f64> = side_fits
        .iter()
        .filter(|f| f.converged)
        .filter_map(|f| f.value("lifetime"))
        .collect();
    let lifetime = if lifetimes.is_empty() {
        f64::NAN
    } else {
        lifetimes.iter().sum::<f64>() / lifetimes.len() as f64
    };
    Ok(Fig2Data {
        hist,
        curve,
        zero_peak_ratio: ratio,
        side_fits,
        lifetime,
    })
}

fn fig2_checks(d: &Fig2Data) -> Vec<Check> {
    vec![
        Check::new("zero-peak / side-peak area", d.zero_peak_ratio, 0.02, 0.01, ""),
        Check::new("side-peak lifetime", d.lifetime * 1e9, 2.6, 0.2, "ns"),
    ]
}

fn write_table(dir: &Path, name: &str, table: CurveTable, files: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    table.write(&path)?;
    files.push(path);
    Ok(())
}

/// Runs a canned figure pipeline, writing CSVs and `summary.txt` into
/// `out_dir`.
pub fn run_figure(figure: Figure, seed: u64, out_dir: &Path) -> Result<FigureSummary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = Vec::new();
    let checks = match figure {
        Figure::Fig2 => {
            let d = fig2_data(seed)?;
            write_table(
                out_dir,
                "fig2_pulsed_g2.csv",
                CurveTable::from_histogram(&d.hist, Some(&d.curve)).with_meta("normalization", "live time"),
                &mut files,
            )?;
            fig2_checks(&d)
        }
        Figure::Fig3 => {
            let d = fig3_data(seed)?;
            for (name, b) in [
                ("fig3_one_ion_g2.csv", &d.g2[0]),
                ("fig3_two_ion_no_overlap.csv", &d.p2_no_overlap[0]),
                ("fig3_two_ion_overlap.csv", &d.p2_overlap[0]),
            ] {
                write_table(
                    out_dir,
                    name,
                    CurveTable::from_histogram(&b.hist, Some(&b.curve)),
                    &mut files,
                )?;
            }
            fig3_checks(&d)
        }
        Figure::Fig4 => {
            let d = fig3_data(seed)?;
            let f = fig4_curves(&d)?;
            write_table(
                out_dir,
                "fig4_p22_no_overlap.csv",
                CurveTable::from_curve(&f.p22_no_overlap, FIG4_BIN_PS).with_meta("curve", "2*P2 - g2"),
                &mut files,
            )?;
            write_table(
                out_dir,
                "fig4_p22_overlap.csv",
                CurveTable::from_curve(&f.p22_overlap, FIG4_BIN_PS).with_meta("curve", "2*P2 - g2"),
                &mut files,
            )?;
            let model = NormalizedCurve {
                delays: f.dip.delays.clone(),
                values: f.dip.fitted.clone(),
                stat_err: vec![0.0; f.dip.fitted.len()],
            };
            write_table(
                out_dir,
                "fig4_dip_model.csv",
                CurveTable::from_curve(&model, FIG4_BIN_PS).with_meta("model", "dip"),
                &mut files,
            )?;
            fig4_checks(&f)
        }
    };
    let summary_path = out_dir.join("summary.txt");
    files.push(summary_path.clone());
    let summary = FigureSummary {
        figure,
        seed,
        checks,
        files,
    };
    let text = summary.to_text();
    write_atomically(&summary_path, |w| w.write_all(text.as_bytes()))?;
    Ok(summary)
}
