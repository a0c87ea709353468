//! Continuous-wave `g²` blurred by the detector response.

use super::{diag_err, propagate, scaled_covariance, solver, weights_for, FitModel, FitParameter, FitResult, NS};
use crate::atomdyn::{evolve_steps, AtomParams, BlochState};
use crate::correlator::NormalizedCurve;
use crate::error::{Error, Result};
use crate::num::Real;

const SUBSAMPLES: usize = 8;
const KERNEL_SIGMAS: f64 = 8.0;
const RK4_STEPS_PER_POINT: usize = 4;

/// Start point and fixed parts of a damped-Rabi fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RabiFitOptions<T> {
    /// Γ and Δ stay fixed; `rabi` is the starting guess.
    pub atom: AtomParams<T>,
    /// Starting per-detector timing jitter (rms), s.
    pub irf_sigma: T,
    /// Only points with `|delay| <= max_delay` are fitted, s.
    pub max_delay: T,
}

/// Everything in nanoseconds.
struct Profile<T> {
    gamma: T,
    detuning: T,
    dt: T,
    steps: usize,
    bin: T,
}

impl<T: Real> Profile<T> {
    /// The grid and step count depend only on Γ, Δ and the bin so that
    /// the model is one smooth function of (Ω, σ, amplitude).
    fn new(atom: &AtomParams<T>, bin_ns: T) -> Self {
        let ns = T::lit(NS);
        let gamma = atom.gamma / ns;
        let detuning = atom.detuning / ns;
        let mut dt = T::lit(0.02) / gamma.max(detuning.abs());
        if bin_ns > T::zero() {
            dt = dt.min(bin_ns / T::lit(SUBSAMPLES as f64));
        }
        Profile {
            gamma,
            detuning,
            dt,
            steps: RK4_STEPS_PER_POINT,
            bin: bin_ns,
        }
    }

    /// `amp · (g² ⊗ N(0, 2σ²))` averaged over each bin.
    fn eval(&self, rabi: T, sigma: T, amp: T, x: &[T]) -> Option<Vec<T>> {
        let atom = AtomParams {
            gamma: self.gamma,
            rabi: rabi.abs(),
            detuning: self.detuning,
        };
        let ss = atom.steady_excited();
        if !(ss > T::zero()) || !sigma.is_finite() || !amp.is_finite() {
            return None;
        }
        let sigma_c = sigma.abs() * T::lit(2f64.sqrt());
        let dt = self.dt;
        let kernel: Vec<T> = if sigma_c < dt / T::lit(10.0) {
            vec![T::one()]
        } else {
            let half = (T::lit(KERNEL_SIGMAS) * sigma_c / dt).ceil().to_usize()?;
            let raw: Vec<T> = (0..=2 * half)
                .map(|j| {
                    let u = T::lit(j as f64 - half as f64) * dt / sigma_c;
                    (-(u * u) / T::lit(2.0)).exp()
                })
                .collect();
            let norm = raw.iter().fold(T::zero(), |a, &v| a + v);
            raw.into_iter().map(|v| v / norm).collect()
        };
        let k_half = (kernel.len() - 1) / 2;

        let reach = x.iter().fold(T::zero(), |m, &v| m.max(v.abs())) + self.bin;
        let m_max = (reach / dt).ceil().to_usize()? + 1;
        let grid = m_max + k_half;
        let mut g2 = Vec::with_capacity(grid + 1);
        let mut state = BlochState::ground();
        g2.push(T::zero());
        for _ in 0..grid {
            state = evolve_steps(&atom, &state, dt, self.steps).ok()?;
            g2.push((state.rho_ee / ss).max(T::zero()));
        }

        // conv[m + m_max] at delay m·dt
        let conv: Vec<T> = (0..=2 * m_max)
            .map(|idx| {
                let m = idx as i64 - m_max as i64;
                kernel.iter().enumerate().fold(T::zero(), |acc, (j, &w)| {
                    let lag = (m - (j as i64 - k_half as i64)).unsigned_abs() as usize;
                    acc + w * g2[lag]
                })
            })
            .collect();
        let at = |t: T| -> T {
            let pos = t / dt + T::lit(m_max as f64);
            let lo = pos.floor().max(T::zero()).min(T::lit((2 * m_max - 1) as f64));
            let i = lo.to_usize().unwrap_or(0);
            let f = pos - lo;
            conv[i] * (T::one() - f) + conv[i + 1] * f
        };
        let q = if self.bin > T::zero() { SUBSAMPLES } else { 1 };
        Some(
            x.iter()
                .map(|&c| {
                    let sum = (0..q).fold(T::zero(), |acc, s| {
                        let off = (T::lit((s as f64 + 0.5) / q as f64) - T::lit(0.5)) * self.bin;
                        acc + at(c + off)
                    });
                    amp * sum / T::lit(q as f64)
                })
                .collect(),
        )
    }
}

/// Evaluates the blurred, bin-averaged model at bin centres `delays` (s).
/// `irf_sigma` is the per-detector rms jitter; the coincidence response is
/// √2 wider.
pub fn damped_rabi_model<T: Real>(
    atom: &AtomParams<T>,
    irf_sigma: T,
    amplitude: T,
    delays: &[T],
    bin_width: T,
) -> Result<Vec<T>> {
    atom.validate()?;
    if atom.steady_excited() <= T::zero() {
        return Err(Error::UndefinedCorrelation);
    }
    if !(bin_width >= T::zero()) || !irf_sigma.is_finite() || delays.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("delays", "delays, bin width and jitter must be finite"));
    }
    let ns = T::lit(NS);
    let profile = Profile::new(atom, bin_width * ns);
    let x: Vec<T> = delays.iter().map(|&d| d * ns).collect();
    profile
        .eval(atom.rabi / ns, irf_sigma * ns, amplitude, &x)
        .ok_or(Error::UndefinedCorrelation)
}

const RABI_NAMES: [&str; 4] = ["rabi", "irf_sigma", "amplitude", "zero_delay"];

/// Fits Ω, the per-detector jitter and an amplitude to a one-ion
/// correlation. `zero_delay` is the fitted model averaged over `[0, w)`.
pub fn fit_damped_rabi<T: Real>(curve: &NormalizedCurve<T>, opts: RabiFitOptions<T>) -> Result<FitResult<T>> {
    opts.atom.validate()?;
    if opts.atom.steady_excited() <= T::zero() {
        return Err(Error::UndefinedCorrelation);
    }
    if !(opts.max_delay > T::zero()) || !(opts.irf_sigma >= T::zero()) {
        return Err(Error::invalid("max_delay", "needs max_delay > 0 and irf_sigma >= 0"));
    }
    if curve.len() < 2 || curve.values.len() != curve.len() || curve.stat_err.len() != curve.len() {
        return Err(Error::invalid("curve", "needs at least two points of equal length"));
    }
    let ns = T::lit(NS);
    let bin = (curve.delays[1] - curve.delays[0]) * ns;
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut errors = Vec::new();
    let mut delays = Vec::new();
    for i in 0..curve.len() {
        if curve.delays[i].abs() <= opts.max_delay {
            delays.push(curve.delays[i]);
            x.push(curve.delays[i] * ns);
            y.push(curve.values[i]);
            errors.push(curve.stat_err[i]);
        }
    }
    if x.len() < 4 || y.iter().chain(&errors).any(|v| !v.is_finite()) {
        return Err(Error::invalid(
            "curve",
            "needs at least four finite points within max_delay",
        ));
    }
    let (weights, weighted) = weights_for(&errors);
    let profile = Profile::new(&opts.atom, bin);

    // Amplitude from the outer third, where g² has settled near one.
    let far = opts.max_delay * ns * T::lit(2.0 / 3.0);
    let outer: Vec<T> = x
        .iter()
        .zip(&y)
        .filter(|(t, _)| t.abs() >= far)
        .map(|(_, &v)| v)
        .collect();
    let amp0 = if outer.is_empty() {
        T::one()
    } else {
        outer.iter().fold(T::zero(), |a, &v| a + v) / T::lit(outer.len() as f64)
    };
    let rabi0 = opts.atom.rabi / ns;
    let sigma0 = opts.irf_sigma * ns;
    let start = [rabi0, sigma0, amp0];
    let scales = [
        rabi0.max(profile.gamma / T::lit(10.0)),
        sigma0.max(T::lit(0.1)),
        amp0.abs().max(T::lit(1e-3)),
    ];
    let model = |p: &[T]| profile.eval(p[0], p[1], p[2], &x);
    let sol = solver::minimize(&model, &y, &weights, &start, &scales)
        .ok_or_else(|| Error::invalid("curve", "starting guess is outside the model domain"))?;
    let cov = scaled_covariance(&sol, x.len(), weighted);
    let p = sol.params.clone();
    let zero_bin = [bin / T::lit(2.0)];
    let zero = |q: &[T]| profile.eval(q[0], q[1], T::one(), &zero_bin).map_or(T::nan(), |v| v[0]);
    let zero_value = zero(&p);
    let zero_err = propagate(zero, &p, &scales, cov.as_ref());
    let fitted = model(&p).unwrap_or_default();
    let inv_ns = T::one() / ns;
    Ok(FitResult {
        model: FitModel::DampedRabi,
        parameters: vec![
            FitParameter {
                name: RABI_NAMES[0],
                value: p[0].abs() * ns,
                std_err: diag_err(cov.as_ref(), 0) * ns,
            },
            FitParameter {
                name: RABI_NAMES[1],
                value: p[1].abs() * inv_ns,
                std_err: diag_err(cov.as_ref(), 1) * inv_ns,
            },
            FitParameter {
                name: RABI_NAMES[2],
                value: p[2],
                std_err: diag_err(cov.as_ref(), 2),
            },
            FitParameter {
                name: RABI_NAMES[3],
                value: zero_value,
                std_err: zero_err,
            },
        ],
        residual_norm: sol.cost,
        gradient_norm: sol.gradient_norm,
        converged: sol.converged,
        iterations: sol.iterations,
        weighted,
        history: sol.history,
        delays,
        fitted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atomdyn::g2_cw;

    #[test]
    fn zero_jitter_point_model_matches_g2() {
        let atom = AtomParams::<f64>::default();
        let delays: Vec<f64> = (0..40).map(|i| i as f64 * 0.5e-9).collect();
        let model = damped_rabi_model(&atom, 0.0, 1.0, &delays, 0.0).unwrap();
        let exact = g2_cw(&atom, &delays).unwrap();
        for (m, e) in model.iter().zip(&exact.values) {
            assert!((m - e).abs() < 1e-3, "{m} vs {e}");
        }
    }

    #[test]
    fn jitter_fills_the_zero_delay_dip() {
        let atom = AtomParams::<f64>::default();
        let v = damped_rabi_model(&atom, 1e-9, 1.0, &[0.5e-9], 1e-9).unwrap()[0];
        assert!(v > 0.1 && v < 0.2, "{v}");
    }
}
