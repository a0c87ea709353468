use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ion_hom::atomdyn::AtomParams;
use ion_hom::fitkit::FitModel;
use ion_hom::pipeline::{self, CorrelateOptions, Figure, FitOptions};
use ion_hom::{Error, ExperimentConfig};

const EXIT_VALIDATION: u8 = 1;
const EXIT_FAILED_CHECK: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "ion-hom",
    version,
    about = "Trapped-ion photon correlation simulator and analyzer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Dip,
    Peak,
    Rabi,
}

impl From<ModelArg> for FitModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Dip => FitModel::GaussianDip,
            ModelArg::Peak => FitModel::ExponentialPeak,
            ModelArg::Rabi => FitModel::DampedRabi,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FigureArg {
    Fig2,
    Fig3,
    Fig4,
}

impl From<FigureArg> for Figure {
    fn from(f: FigureArg) -> Self {
        match f {
            FigureArg::Fig2 => Figure::Fig2,
            FigureArg::Fig3 => Figure::Fig3,
            FigureArg::Fig4 => Figure::Fig4,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate an acquisition and write a binary time-tag file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-correlate channel 1 against channel 0 of a time-tag file.
    Correlate {
        input: PathBuf,
        /// Bin width, ps.
        #[arg(long, default_value_t = 1000)]
        bin: u64,
        /// Half window, ps; delays in [-window, window) are counted.
        #[arg(long, default_value_t = 100_000)]
        window: u64,
        /// Also count with the brute-force oracle and fail on any difference.
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a correlation CSV and write a report plus the model curve.
    Fit {
        input: PathBuf,
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long)]
        out: PathBuf,
        /// Peak centre, ns (peak model); defaults to the tallest bin.
        #[arg(long)]
        center_ns: Option<f64>,
        /// Half range around the peak centre, ns (peak model).
        #[arg(long, default_value_t = 15.0)]
        half_range_ns: f64,
        /// Inner part of the peak left out of the fit, ns (peak model).
        #[arg(long, default_value_t = 3.0)]
        exclude_core_ns: f64,
        /// Starting per-detector jitter, ns (rabi model).
        #[arg(long, default_value_t = 1.0)]
        irf_ns: f64,
        /// Largest |delay| fitted, ns (rabi model).
        #[arg(long, default_value_t = 50.0)]
        max_delay_ns: f64,
        /// Starting Rabi frequency over 2π, MHz (rabi model); defaults to
        /// the reference emission rate.
        #[arg(long)]
        rabi_mhz: Option<f64>,
    },
    /// Run a canned desk-scale pipeline and compare against targets.
    Figure {
        #[arg(value_enum)]
        name: FigureArg,
        #[arg(long)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let s = pipeline::run_simulate(&cfg, &out)?;
            println!(
                "wrote {} records ({} on channel 0, {} on channel 1) over {} ps to {}",
                s.records,
                s.per_channel[0],
                s.per_channel[1],
                s.span_ps,
                s.path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Correlate {
            input,
            bin,
            window,
            oracle,
            out,
        } => {
            let table = pipeline::run_correlate(
                &input,
                &out,
                CorrelateOptions {
                    bin_ps: bin,
                    window_ps: window,
                    oracle,
                },
            )?;
            let total: u64 = table.counts.iter().flatten().sum();
            println!("wrote {} bins ({total} coincidences) to {}", table.len(), out.display());
            if oracle {
                println!("brute-force oracle agrees");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Fit {
            input,
            model,
            out,
            center_ns,
            half_range_ns,
            exclude_core_ns,
            irf_ns,
            max_delay_ns,
            rabi_mhz,
        } => {
            let mut atom = AtomParams::default();
            if let Some(r) = rabi_mhz {
                atom.rabi = r * std::f64::consts::TAU * 1e6;
            }
            let opts = FitOptions {
                peak_center: center_ns.map(|c| c * 1e-9),
                peak_half_range: half_range_ns * 1e-9,
                peak_exclude_core: exclude_core_ns * 1e-9,
                rabi_atom: atom,
                rabi_irf_sigma: irf_ns * 1e-9,
                rabi_max_delay: max_delay_ns * 1e-9,
            };
            let report = pipeline::run_fit(&input, model.into(), &out, &opts)?;
            print!("{}", report.text);
            println!("model curve: {}", report.model_csv.display());
            Ok(if report.result.converged {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAILED_CHECK)
            })
        }
        Command::Figure { name, seed, out } => {
            let summary = pipeline::run_figure(name.into(), seed, &out)?;
            print!("{}", summary.to_text());
            Ok(if summary.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAILED_CHECK)
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => fail(&e),
    }
}
