//! Weighted least-squares fits of correlation curves.
//!
//! Parameters are fitted in nanoseconds internally and reported in SI units.

mod rabi;
mod solver;

use std::fmt;

use crate::correlator::{CorrelationHistogram, NormalizedCurve};
use crate::error::{Error, Result};
use crate::num::Real;

pub use rabi::{damped_rabi_model, fit_damped_rabi, RabiFitOptions};
pub use solver::MAX_ITERATIONS;

pub(crate) const NS: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitModel {
    GaussianDip,
    ExponentialPeak,
    DampedRabi,
}

impl FitModel {
    pub fn name(self) -> &'static str {
        match self {
            FitModel::GaussianDip => "dip",
            FitModel::ExponentialPeak => "peak",
            FitModel::DampedRabi => "rabi",
        }
    }
}

impl fmt::Display for FitModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitParameter<T> {
    pub name: &'static str,
    pub value: T,
    /// One standard deviation; infinite when the curvature is singular.
    pub std_err: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T> {
    pub model: FitModel,
    pub parameters: Vec<FitParameter<T>>,
    /// `Σ w (f − y)²` at the solution.
    pub residual_norm: T,
    pub gradient_norm: T,
    pub converged: bool,
    pub iterations: usize,
    /// False when some point had zero error and unit weights were used.
    pub weighted: bool,
    /// Weighted squared residual after the start point and each accepted step.
    pub history: Vec<T>,
    /// Delays of the points used, s.
    pub delays: Vec<T>,
    /// Model evaluated at `delays`.
    pub fitted: Vec<T>,
}

impl<T: Real> FitResult<T> {
    pub fn get(&self, name: &str) -> Option<&FitParameter<T>> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn value(&self, name: &str) -> Option<T> {
        self.get(name).map(|p| p.value)
    }

    pub fn std_err(&self, name: &str) -> Option<T> {
        self.get(name).map(|p| p.std_err)
    }

    fn unconverged(model: FitModel, names: &[&'static str]) -> Self {
        FitResult {
            model,
            parameters: names
                .iter()
                .map(|&name| FitParameter {
                    name,
                    value: T::nan(),
                    std_err: T::infinity(),
                })
                .collect(),
            residual_norm: T::nan(),
            gradient_norm: T::nan(),
            converged: false,
            iterations: 0,
            weighted: false,
            history: Vec::new(),
            delays: Vec::new(),
            fitted: Vec::new(),
        }
    }
}

/// Inverse-variance weights, or unit weights if any error is not positive.
pub(crate) fn weights_for<T: Real>(errors: &[T]) -> (Vec<T>, bool) {
    if errors.iter().all(|&e| e > T::zero() && e.is_finite()) {
        (errors.iter().map(|&e| T::one() / (e * e)).collect(), true)
    } else {
        (vec![T::one(); errors.len()], false)
    }
}

/// Parameter covariance, rescaled by the residual variance when the
/// weights carry no absolute error information.
pub(crate) fn scaled_covariance<T: Real>(
    sol: &solver::Solution<T>,
    points: usize,
    weighted: bool,
) -> Option<Vec<Vec<T>>> {
    let mut cov = sol.covariance.clone()?;
    if !weighted {
        let dof = points.saturating_sub(sol.params.len()).max(1);
        let s2 = sol.cost / T::lit(dof as f64);
        for row in &mut cov {
            for v in row.iter_mut() {
                *v *= s2;
            }
        }
    }
    Some(cov)
}

pub(crate) fn diag_err<T: Real>(cov: Option<&Vec<Vec<T>>>, i: usize) -> T {
    match cov {
        Some(c) if c[i][i] >= T::zero() && c[i][i].is_finite() => c[i][i].sqrt(),
        _ => T::infinity(),
    }
}

/// Standard error of a derived quantity by linear propagation.
pub(crate) fn propagate<T: Real>(f: impl Fn(&[T]) -> T, params: &[T], scales: &[T], cov: Option<&Vec<Vec<T>>>) -> T {
    let Some(cov) = cov else {
        return T::infinity();
    };
    let rel = T::lit(1e-6).max(T::epsilon().cbrt());
    let grad: Vec<T> = (0..params.len())
        .map(|j| {
            let h = rel * params[j].abs().max(scales[j]);
            let mut up = params.to_vec();
            let mut down = params.to_vec();
            up[j] += h;
            down[j] -= h;
            (f(&up) - f(&down)) / (h + h)
        })
        .collect();
    let mut var = T::zero();
    for i in 0..params.len() {
        for k in 0..params.len() {
            var += grad[i] * cov[i][k] * grad[k];
        }
    }
    if var >= T::zero() && var.is_finite() {
        var.sqrt()
    } else {
        T::infinity()
    }
}

fn check_curve<T: Real>(curve: &NormalizedCurve<T>, min_points: usize) -> Result<()> {
    if curve.values.len() != curve.delays.len() || curve.stat_err.len() != curve.delays.len() {
        return Err(Error::invalid("curve", "delays, values and errors differ in length"));
    }
    if curve.len() < min_points {
        return Err(Error::invalid("curve", format!("needs at least {min_points} points")));
    }
    if curve
        .delays
        .iter()
        .chain(&curve.values)
        .chain(&curve.stat_err)
        .any(|v| !v.is_finite())
    {
        return Err(Error::invalid("curve", "contains non-finite entries"));
    }
    Ok(())
}

fn moving_average<T: Real>(v: &[T], half: usize) -> Vec<T> {
    (0..v.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(v.len());
            v[lo..hi].iter().fold(T::zero(), |a, &x| a + x) / T::lit((hi - lo) as f64)
        })
        .collect()
}

const DIP_NAMES: [&str; 5] = ["baseline", "depth", "center", "sigma", "half_width"];

fn dip_eval<T: Real>(p: &[T], t: T) -> T {
    let z = (t - p[2]) / p[3];
    p[0] * (T::one() - p[1] * (-(z * z) / T::lit(2.0)).exp())
}

/// Fits `a·(1 − V·exp(−(τ−τ₀)²/2s²))`. Reports the depth `V`, the centre
/// and `s` plus the half width at half depth `s·√(2 ln 2)`.
pub fn fit_gaussian_dip<T: Real>(curve: &NormalizedCurve<T>) -> Result<FitResult<T>> {
    check_curve(curve, 5)?;
    let ns = T::lit(NS);
    let x: Vec<T> = curve.delays.iter().map(|&d| d * ns).collect();
    let y = &curve.values;
    let (weights, weighted) = weights_for(&curve.stat_err);

    let n = x.len();
    let edge = (n / 5).max(1);
    let outer: Vec<T> = y[..edge].iter().chain(&y[n - edge..]).copied().collect();
    let mut base = outer.iter().fold(T::zero(), |a, &v| a + v) / T::lit(outer.len() as f64);
    if base.abs() <= T::epsilon() {
        base = T::one();
    }
    let smooth = moving_average(y, 2);
    let imin = (0..n)
        .min_by(|&i, &j| smooth[i].partial_cmp(&smooth[j]).expect("finite"))
        .expect("non-empty");
    let depth = (T::one() - smooth[imin] / base).max(T::lit(0.01)).min(T::one());
    let half_level = base * (T::one() - depth / T::lit(2.0));
    let right = (imin..n).find(|&i| smooth[i] >= half_level).unwrap_or(n - 1);
    let left = (0..=imin).rev().find(|&i| smooth[i] >= half_level).unwrap_or(0);
    let step = (x[n - 1] - x[0]) / T::lit((n - 1) as f64);
    let hw = ((x[right] - x[left]) / T::lit(2.0)).max(step);
    let fwhm_to_sigma = T::lit((2.0 * std::f64::consts::LN_2).sqrt());
    let start = [base, depth, x[imin], hw / fwhm_to_sigma];
    let scales = [base.abs(), T::lit(0.1), step.max(T::lit(1e-3)), start[3]];

    let model = |p: &[T]| {
        if p[3] == T::zero() || !p.iter().all(|v| v.is_finite()) {
            return None;
        }
        let q = [p[0], p[1], p[2], p[3].abs()];
        Some(x.iter().map(|&t| dip_eval(&q, t)).collect::<Vec<T>>())
    };
    let sol = solver::minimize(&model, y, &weights, &start, &scales)
        .ok_or_else(|| Error::invalid("curve", "initial dip guess is outside the model domain"))?;
    let cov = scaled_covariance(&sol, n, weighted);
    let p = &sol.params;
    let s = p[3].abs();
    let inv_ns = T::one() / ns;
    let parameters = vec![
        FitParameter {
            name: DIP_NAMES[0],
            value: p[0],
            std_err: diag_err(cov.as_ref(), 0),
        },
        FitParameter {
            name: DIP_NAMES[1],
            value: p[1],
            std_err: diag_err(cov.as_ref(), 1),
        },
        FitParameter {
            name: DIP_NAMES[2],
            value: p[2] * inv_ns,
            std_err: diag_err(cov.as_ref(), 2) * inv_ns,
        },
        FitParameter {
            name: DIP_NAMES[3],
            value: s * inv_ns,
            std_err: diag_err(cov.as_ref(), 3) * inv_ns,
        },
        FitParameter {
            name: DIP_NAMES[4],
            value: s * fwhm_to_sigma * inv_ns,
            std_err: diag_err(cov.as_ref(), 3) * fwhm_to_sigma * inv_ns,
        },
    ];
    let fitted = model(p).unwrap_or_default();
    Ok(FitResult {
        model: FitModel::GaussianDip,
        parameters,
        residual_norm: sol.cost,
        gradient_norm: sol.gradient_norm,
        converged: sol.converged,
        iterations: sol.iterations,
        weighted,
        history: sol.history,
        delays: curve.delays.clone(),
        fitted,
    })
}

/// Which bins of a histogram enter an exponential peak fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakFitOptions<T> {
    /// Expected peak centre, s.
    pub center: T,
    /// Bins with centres within `center ± half_range` are used, s.
    pub half_range: T,
    /// Bins with centres closer than this to `center` are skipped, s.
    /// Use it to keep the detector-response-blurred top out of the fit.
    pub exclude_core: T,
}

const PEAK_NAMES: [&str; 3] = ["amplitude", "center", "lifetime"];
const PEAK_MIN_COUNTS: u64 = 10;
const PEAK_MIN_BINS: usize = 3;

/// Fits `A·exp(−|τ−τ₀|/T)` to raw counts with Poisson weights. Peaks with
/// fewer than ten counts or fewer than three occupied bins come back
/// unconverged.
pub fn fit_exponential_peak<T: Real>(hist: &CorrelationHistogram, opts: PeakFitOptions<T>) -> Result<FitResult<T>> {
    if !(opts.half_range > T::zero()) || !opts.center.is_finite() {
        return Err(Error::invalid("half_range", "must be positive and finite"));
    }
    if !(opts.exclude_core >= T::zero()) || opts.exclude_core >= opts.half_range {
        return Err(Error::invalid("exclude_core", "must lie in [0, half_range)"));
    }
    let ns = T::lit(NS);
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut delays = Vec::new();
    for (i, &c) in hist.counts.iter().enumerate() {
        let t = T::lit(hist.center(i));
        let off = (t - opts.center).abs();
        if off <= opts.half_range && off >= opts.exclude_core {
            delays.push(t);
            x.push(t * ns);
            y.push(T::lit(c as f64));
        }
    }
    let total: f64 = y.iter().map(|v| v.to_f64_lossy()).sum();
    let occupied = y.iter().filter(|&&v| v > T::zero()).count();
    if total < PEAK_MIN_COUNTS as f64 || occupied < PEAK_MIN_BINS {
        return Ok(FitResult::unconverged(FitModel::ExponentialPeak, &PEAK_NAMES));
    }

    // Log-linear regression on occupied bins for the start point.
    let c0 = opts.center * ns;
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
    for (&t, &c) in x.iter().zip(&y) {
        if c > T::zero() {
            let d = (t - c0).abs();
            let l = c.ln();
            sw += c;
            sx += c * d;
            sy += c * l;
            sxx += c * d * d;
            sxy += c * d * l;
        }
    }
    let det = sw * sxx - sx * sx;
    let slope = if det > T::zero() {
        (sw * sxy - sx * sy) / det
    } else {
        T::zero()
    };
    let bin_ns = T::lit(hist.bin_width() * NS);
    let lifetime0 = if slope < T::zero() {
        -T::one() / slope
    } else {
        (opts.half_range * ns / T::lit(4.0)).max(bin_ns)
    };
    let amp0 = ((sy - slope * sx) / sw).exp();
    let start = [amp0, c0, lifetime0];
    let scales = [amp0.abs().max(T::one()), bin_ns, lifetime0];

    let errors: Vec<T> = y.iter().map(|v| v.sqrt()).collect();
    let (weights, weighted) = weights_for(&errors);
    let model = |p: &[T]| {
        if !(p[2] > T::zero()) || !p.iter().all(|v| v.is_finite()) {
            return None;
        }
        Some(
            x.iter()
                .map(|&t| p[0] * (-(t - p[1]).abs() / p[2]).exp())
                .collect::<Vec<T>>(),
        )
    };
    let Some(sol) = solver::minimize(&model, &y, &weights, &start, &scales) else {
        return Ok(FitResult::unconverged(FitModel::ExponentialPeak, &PEAK_NAMES));
    };
    let cov = scaled_covariance(&sol, x.len(), weighted);
    let p = &sol.params;
    let inv_ns = T::one() / ns;
    let converged = sol.converged && p[2] > bin_ns / T::lit(10.0);
    let fitted = model(p).unwrap_or_default();
    Ok(FitResult {
        model: FitModel::ExponentialPeak,
        parameters: vec![
            FitParameter {
                name: PEAK_NAMES[0],
                value: p[0],
                std_err: diag_err(cov.as_ref(), 0),
            },
            FitParameter {
                name: PEAK_NAMES[1],
                value: p[1] * inv_ns,
                std_err: diag_err(cov.as_ref(), 1) * inv_ns,
            },
            FitParameter {
                name: PEAK_NAMES[2],
                value: p[2] * inv_ns,
                std_err: diag_err(cov.as_ref(), 2) * inv_ns,
            },
        ],
        residual_norm: sol.cost,
        gradient_norm: sol.gradient_norm,
        converged,
        iterations: sol.iterations,
        weighted,
        history: sol.history,
        delays,
        fitted,
    })
}
