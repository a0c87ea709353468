//! Driven two-level atom: optical Bloch equations, the cw intensity
//! correlation and the quantum-jump waiting-time law.
//!
//! Conventions: rotating frame, `H = -Δ|e⟩⟨e| + (Ω/2)(|e⟩⟨g| + |g⟩⟨e|)`,
//! spontaneous decay at rate `Γ`. All rates are angular (rad/s) and all
//! times are seconds. The coherence stored in [`BlochState`] is
//! `ρ_ge = ⟨g|ρ|e⟩`.
//!
//! ```text
//! dρ_ee/dt = -Γ ρ_ee + Ω Im ρ_ge
//! dρ_gg/dt = +Γ ρ_ee - Ω Im ρ_ge
//! dρ_ge/dt = -(Γ/2 + iΔ) ρ_ge - i(Ω/2)(ρ_ee - ρ_gg)
//! ```

use num_complex::Complex;
use rand::Rng;

use crate::error::{Error, Result};
use crate::num::Real;

/// Excited-state lifetime of the cycling transition, seconds.
pub const LIFETIME: f64 = 2.6e-9;

/// Raw single-ion emission rate (photons/s) behind the 4×10⁴/s detected
/// rate at 0.1 % overall detection efficiency.
pub const DEFAULT_EMISSION_RATE: f64 = 4.0e7;

/// Largest integration step as a fraction of the fastest time scale.
const STEPS_PER_TIMESCALE: f64 = 50.0;

/// Length of the tabulated no-jump survival curve, in lifetimes.
const SURVIVAL_TABLE_LIFETIMES: f64 = 20.0;

/// Drive parameters of the two-level atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomParams<T> {
    /// Spontaneous decay rate Γ, rad/s.
    pub gamma: T,
    /// Rabi frequency Ω, rad/s.
    pub rabi: T,
    /// Laser detuning Δ from resonance, rad/s.
    pub detuning: T,
}

impl<T: Real> Default for AtomParams<T> {
    /// Γ = 1/2.6 ns, Δ = −Γ/2 and Ω set so that the raw emission rate is
    /// [`DEFAULT_EMISSION_RATE`].
    fn default() -> Self {
        let gamma = T::lit(1.0 / LIFETIME);
        let detuning = -gamma / T::lit(2.0);
        let rabi = Self::rabi_for_emission_rate(gamma, detuning, T::lit(DEFAULT_EMISSION_RATE))
            .expect("default emission rate is below saturation");
        Self { gamma, rabi, detuning }
    }
}

impl<T: Real> AtomParams<T> {
    pub fn new(gamma: T, rabi: T, detuning: T) -> Result<Self> {
        let atom = Self { gamma, rabi, detuning };
        atom.validate()?;
        Ok(atom)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma <= T::zero() {
            return Err(Error::invalid("gamma", "must be finite and > 0"));
        }
        if !self.rabi.is_finite() || self.rabi < T::zero() {
            return Err(Error::invalid("rabi", "must be finite and >= 0"));
        }
        if !self.detuning.is_finite() {
            return Err(Error::invalid("detuning", "must be finite"));
        }
        Ok(())
    }

    /// Rabi frequency giving steady-state emission rate `Γ·ρ_ee = rate`.
    pub fn rabi_for_emission_rate(gamma: T, detuning: T, rate: T) -> Result<T> {
        let half = T::lit(0.5);
        if !(gamma > T::zero()) || !(rate >= T::zero()) {
            return Err(Error::invalid("rate", "needs gamma > 0 and rate >= 0"));
        }
        let pop = rate / gamma;
        if pop >= half {
            return Err(Error::invalid(
                "rate",
                "emission rate must stay below the saturated value gamma/2",
            ));
        }
        // ρ = (Ω²/4)/(Δ² + Γ²/4 + Ω²/2)  ⇒  Ω² = 4ρ(Δ² + Γ²/4)/(1 − 2ρ)
        let base = detuning * detuning + gamma * gamma / T::lit(4.0);
        let rabi_sq = T::lit(4.0) * pop * base / (T::one() - T::lit(2.0) * pop);
        Ok(rabi_sq.sqrt())
    }

    /// Closed-form steady-state excited population.
    pub fn steady_excited(&self) -> T {
        let quarter = T::lit(0.25);
        let rabi_sq = self.rabi * self.rabi;
        rabi_sq * quarter / (self.detuning * self.detuning + quarter * self.gamma * self.gamma + T::lit(0.5) * rabi_sq)
    }

    /// Steady-state photon emission rate Γ·ρ_ee, 1/s.
    pub fn emission_rate(&self) -> T {
        self.gamma * self.steady_excited()
    }

    /// Largest RK4 step: the fastest of 1/Γ, 1/Ω, 1/|Δ| divided by 50.
    pub fn max_step(&self) -> T {
        let mut fastest = self.gamma;
        if self.rabi > fastest {
            fastest = self.rabi;
        }
        if self.detuning.abs() > fastest {
            fastest = self.detuning.abs();
        }
        T::one() / (fastest * T::lit(STEPS_PER_TIMESCALE))
    }
}

/// Density matrix of the two-level atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochState<T> {
    pub rho_gg: T,
    pub rho_ee: T,
    pub rho_ge: Complex<T>,
}

impl<T: Real> BlochState<T> {
    pub fn ground() -> Self {
        Self {
            rho_gg: T::one(),
            rho_ee: T::zero(),
            rho_ge: Complex::new(T::zero(), T::zero()),
        }
    }

    pub fn excited() -> Self {
        Self {
            rho_gg: T::zero(),
            rho_ee: T::one(),
            rho_ge: Complex::new(T::zero(), T::zero()),
        }
    }

    pub fn trace(&self) -> T {
        self.rho_gg + self.rho_ee
    }

    pub fn is_finite(&self) -> bool {
        self.rho_gg.is_finite() && self.rho_ee.is_finite() && self.rho_ge.re.is_finite() && self.rho_ge.im.is_finite()
    }

    fn add_scaled(&self, k: &Self, h: T) -> Self {
        Self {
            rho_gg: self.rho_gg + k.rho_gg * h,
            rho_ee: self.rho_ee + k.rho_ee * h,
            rho_ge: self.rho_ge + k.rho_ge * h,
        }
    }
}

/// Which equations of motion to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Evolution {
    /// Full master equation (trace preserving).
    Master,
    /// Conditional no-jump evolution; the trace is the survival probability.
    NoJump,
}

fn derivative<T: Real>(atom: &AtomParams<T>, s: &BlochState<T>, mode: Evolution) -> BlochState<T> {
    let half = T::lit(0.5);
    let decay = atom.gamma * s.rho_ee;
    let pump = atom.rabi * s.rho_ge.im;
    let inversion = s.rho_ee - s.rho_gg;
    let damping = Complex::new(-half * atom.gamma, -atom.detuning);
    let drive = Complex::new(T::zero(), -half * atom.rabi * inversion);
    BlochState {
        rho_gg: match mode {
            Evolution::Master => decay - pump,
            Evolution::NoJump => -pump,
        },
        rho_ee: -decay + pump,
        rho_ge: damping * s.rho_ge + drive,
    }
}

fn rk4_step<T: Real>(atom: &AtomParams<T>, s: &BlochState<T>, h: T, mode: Evolution) -> BlochState<T> {
    let half = T::lit(0.5);
    let k1 = derivative(atom, s, mode);
    let k2 = derivative(atom, &s.add_scaled(&k1, h * half), mode);
    let k3 = derivative(atom, &s.add_scaled(&k2, h * half), mode);
    let k4 = derivative(atom, &s.add_scaled(&k3, h), mode);
    let sixth = h / T::lit(6.0);
    let two = T::lit(2.0);
    BlochState {
        rho_gg: s.rho_gg + sixth * (k1.rho_gg + two * k2.rho_gg + two * k3.rho_gg + k4.rho_gg),
        rho_ee: s.rho_ee + sixth * (k1.rho_ee + two * k2.rho_ee + two * k3.rho_ee + k4.rho_ee),
        rho_ge: s.rho_ge + (k1.rho_ge + k2.rho_ge * two + k3.rho_ge * two + k4.rho_ge) * sixth,
    }
}

fn integrate<T: Real>(
    atom: &AtomParams<T>,
    state: BlochState<T>,
    dt: T,
    steps: usize,
    mode: Evolution,
) -> BlochState<T> {
    let h = dt / T::from_usize(steps).expect("step count fits the scalar type");
    (0..steps).fold(state, |s, _| rk4_step(atom, &s, h, mode))
}

fn steps_for<T: Real>(atom: &AtomParams<T>, dt: T) -> usize {
    (dt / atom.max_step()).ceil().to_usize().unwrap_or(1).max(1)
}

/// Closed-form fixed point of the master equation.
pub fn steady_state<T: Real>(atom: &AtomParams<T>) -> Result<BlochState<T>> {
    atom.validate()?;
    let quarter = T::lit(0.25);
    let rabi_sq = atom.rabi * atom.rabi;
    let denom = atom.detuning * atom.detuning + quarter * atom.gamma * atom.gamma + T::lit(0.5) * rabi_sq;
    let rho_ee = quarter * rabi_sq / denom;
    // ρ_ge = Ω(Δ + iΓ/2) / (2·denom)
    let scale = atom.rabi * T::lit(0.5) / denom;
    Ok(BlochState {
        rho_gg: T::one() - rho_ee,
        rho_ee,
        rho_ge: Complex::new(scale * atom.detuning, scale * atom.gamma * T::lit(0.5)),
    })
}

/// Advances `state` by `dt` seconds with fixed-step RK4, using the
/// smallest step count that respects [`AtomParams::max_step`].
pub fn evolve<T: Real>(atom: &AtomParams<T>, state: &BlochState<T>, dt: T) -> Result<BlochState<T>> {
    check_evolve_inputs(atom, state, dt)?;
    Ok(integrate(atom, *state, dt, steps_for(atom, dt), Evolution::Master))
}

/// [`evolve`] with an explicit step count, for convergence studies.
pub fn evolve_steps<T: Real>(
    atom: &AtomParams<T>,
    state: &BlochState<T>,
    dt: T,
    steps: usize,
) -> Result<BlochState<T>> {
    check_evolve_inputs(atom, state, dt)?;
    if steps == 0 {
        return Err(Error::invalid("steps", "must be >= 1"));
    }
    Ok(integrate(atom, *state, dt, steps, Evolution::Master))
}

fn check_evolve_inputs<T: Real>(atom: &AtomParams<T>, state: &BlochState<T>, dt: T) -> Result<()> {
    atom.validate()?;
    if !dt.is_finite() || dt <= T::zero() {
        return Err(Error::invalid("dt", "must be finite and > 0"));
    }
    if !state.is_finite() {
        return Err(Error::invalid("state", "must be finite"));
    }
    Ok(())
}

/// Second-order correlation on a delay grid.
#[derive(Debug, Clone, PartialEq)]
pub struct G2Curve<T> {
    pub delays: Vec<T>,
    pub values: Vec<T>,
}

/// cw intensity correlation `g²(τ) = ρ_ee(τ | ground) / ρ_ee(ss)`.
///
/// `delays` must be non-negative and strictly increasing.
pub fn g2_cw<T: Real>(atom: &AtomParams<T>, delays: &[T]) -> Result<G2Curve<T>> {
    atom.validate()?;
    for (i, &d) in delays.iter().enumerate() {
        if !d.is_finite() || d < T::zero() {
            return Err(Error::invalid("delays", "must be finite and >= 0"));
        }
        if i > 0 && d <= delays[i - 1] {
            return Err(Error::invalid("delays", "must be strictly increasing"));
        }
    }
    let ss = atom.steady_excited();
    if ss <= T::zero() {
        return Err(Error::UndefinedCorrelation);
    }
    let mut state = BlochState::ground();
    let mut now = T::zero();
    let mut values = Vec::with_capacity(delays.len());
    for &d in delays {
        if d > now {
            let dt = d - now;
            state = integrate(atom, state, dt, steps_for(atom, dt), Evolution::Master);
            now = d;
        }
        values.push((state.rho_ee / ss).max(T::zero()));
    }
    Ok(G2Curve {
        delays: delays.to_vec(),
        values,
    })
}

/// Inverse-CDF sampler for the delay between successive photons of a
/// continuously driven atom.
///
/// The no-jump survival `S(τ)` is tabulated up to twenty lifetimes and
/// interpolated linearly; beyond the table the survival decays with the
/// slowest eigenvalue of the effective non-Hermitian Hamiltonian.
#[derive(Debug, Clone)]
pub struct WaitingTimeSampler<T> {
    step: T,
    survival: Vec<T>,
    tail_rate: T,
}

impl<T: Real> WaitingTimeSampler<T> {
    pub fn new(atom: &AtomParams<T>) -> Result<Self> {
        atom.validate()?;
        if atom.rabi <= T::zero() {
            return Err(Error::NoEmission);
        }
        let step = atom.max_step();
        let horizon = T::lit(SURVIVAL_TABLE_LIFETIMES) / atom.gamma;
        let n = (horizon / step).ceil().to_usize().unwrap_or(1).max(1);
        let mut survival = Vec::with_capacity(n + 1);
        let mut state = BlochState::ground();
        survival.push(T::one());
        for _ in 0..n {
            state = rk4_step(atom, &state, step, Evolution::NoJump);
            survival.push(state.trace().max(T::zero()).min(T::one()));
        }
        // Enforce monotonicity against rounding so the inverse is well defined.
        for i in 1..survival.len() {
            if survival[i] > survival[i - 1] {
                survival[i] = survival[i - 1];
            }
        }
        Ok(Self {
            step,
            survival,
            tail_rate: no_jump_tail_rate(atom),
        })
    }

    /// Tabulation step, s.
    pub fn step(&self) -> T {
        self.step
    }

    /// End of the tabulated range, s.
    pub fn horizon(&self) -> T {
        self.step * T::from_usize(self.survival.len() - 1).expect("table length")
    }

    /// Probability that no photon has been emitted after `tau`.
    pub fn survival(&self, tau: T) -> T {
        if tau <= T::zero() {
            return T::one();
        }
        let last = self.survival.len() - 1;
        let x = tau / self.step;
        let k = x.floor().to_usize().unwrap_or(usize::MAX);
        if k >= last {
            let end = self.survival[last];
            return end * (-(tau - self.horizon()) * self.tail_rate).exp();
        }
        let frac = x - T::from_usize(k).expect("index");
        self.survival[k] + (self.survival[k + 1] - self.survival[k]) * frac
    }

    /// Waiting time whose survival probability equals `u ∈ (0, 1]`.
    pub fn quantile(&self, u: T) -> T {
        let last = self.survival.len() - 1;
        let end = self.survival[last];
        if u <= end {
            if end <= T::zero() || self.tail_rate <= T::zero() {
                return self.horizon();
            }
            return self.horizon() + (end / u).ln() / self.tail_rate;
        }
        // survival is non-increasing: find k with S[k] >= u > S[k+1]
        let (mut lo, mut hi) = (0usize, last);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.survival[mid] >= u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (s0, s1) = (self.survival[lo], self.survival[hi]);
        let frac = if s0 > s1 { (s0 - u) / (s0 - s1) } else { T::zero() };
        (T::from_usize(lo).expect("index") + frac) * self.step
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T
    where
        rand::distr::StandardUniform: rand::distr::Distribution<T>,
    {
        // 1 - U lies in (0, 1]
        let u = T::one() - rng.random::<T>();
        self.quantile(u)
    }
}

/// Decay rate of the slowest no-jump mode, 1/s.
fn no_jump_tail_rate<T: Real>(atom: &AtomParams<T>) -> T {
    // amplitudes obey i dc/dt = M c with M = [[0, Ω/2], [Ω/2, −Δ − iΓ/2]]
    let half = T::lit(0.5);
    let a = Complex::new(-atom.detuning, -half * atom.gamma);
    let b = Complex::new(half * atom.rabi, T::zero());
    let disc = (a * a + b * b * T::lit(4.0)).sqrt();
    let l1 = (a + disc) * half;
    let l2 = (a - disc) * half;
    // |c|² ∝ exp(2 Im λ τ); the slowest decay has the largest Im λ
    let slowest = if l1.im > l2.im { l1.im } else { l2.im };
    -T::lit(2.0) * slowest
}

/// Draws one waiting time between emissions; convenience wrapper that
/// rebuilds the survival table on every call.
pub fn waiting_time_sample<T: Real, R: Rng + ?Sized>(atom: &AtomParams<T>, rng: &mut R) -> Result<T>
where
    rand::distr::StandardUniform: rand::distr::Distribution<T>,
{
    Ok(WaitingTimeSampler::new(atom)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gamma() -> f64 {
        1.0 / LIFETIME
    }

    #[test]
    fn undriven_steady_state_is_ground() {
        let atom = AtomParams::new(gamma(), 0.0, 0.0).unwrap();
        let s = steady_state(&atom).unwrap();
        assert_eq!(s.rho_ee, 0.0);
        assert_eq!(s.rho_gg, 1.0);
    }

    #[test]
    fn saturated_steady_state_is_half() {
        let atom = AtomParams::new(gamma(), 1e3 * gamma(), 0.0).unwrap();
        let s = steady_state(&atom).unwrap();
        assert!((s.rho_ee - 0.5).abs() < 1e-6);
    }

    #[test]
    fn steady_state_quarter_matches_long_integration() {
        let atom = AtomParams::new(gamma(), gamma() / 2f64.sqrt(), 0.0).unwrap();
        let closed = steady_state(&atom).unwrap();
        assert!((closed.rho_ee - 0.25).abs() < 1e-12);
        let long = evolve(&atom, &BlochState::ground(), 60.0 / gamma()).unwrap();
        assert!((long.rho_ee - 0.25).abs() < 1e-9, "{}", long.rho_ee);
        assert!((long.rho_ge - closed.rho_ge).norm() < 1e-9);
    }

    #[test]
    fn steady_state_is_a_fixed_point() {
        let atom = AtomParams::<f64>::default();
        let s = steady_state(&atom).unwrap();
        let later = evolve(&atom, &s, 10.0 / gamma()).unwrap();
        assert!((later.rho_ee - s.rho_ee).abs() < 1e-9);
        assert!((later.rho_gg - s.rho_gg).abs() < 1e-9);
    }

    #[test]
    fn dark_atom_does_not_move() {
        let atom = AtomParams::new(gamma(), 0.0, -0.5 * gamma()).unwrap();
        let s = evolve(&atom, &BlochState::ground(), 1e-6).unwrap();
        assert_eq!(s, BlochState::ground());
    }

    #[test]
    fn excited_state_decays_over_one_lifetime() {
        let atom = AtomParams::new(gamma(), 0.0, 0.0).unwrap();
        let s = evolve(&atom, &BlochState::excited(), LIFETIME).unwrap();
        assert!((s.rho_ee - (-1f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let atom = AtomParams::<f64>::default();
        assert!(evolve(&atom, &BlochState::ground(), 0.0).is_err());
        assert!(evolve(&atom, &BlochState::ground(), -1e-9).is_err());
        let mut bad = BlochState::ground();
        bad.rho_ee = f64::NAN;
        assert!(evolve(&atom, &bad, 1e-9).is_err());
        assert!(AtomParams::new(f64::INFINITY, 1.0, 0.0).is_err());
        assert!(AtomParams::new(1.0, -1.0, 0.0).is_err());
        assert!(AtomParams::new(0.0, 1.0, 0.0).is_err());
        assert!(steady_state(&AtomParams {
            gamma: 1.0,
            rabi: f64::NAN,
            detuning: 0.0
        })
        .is_err());
    }

    #[test]
    fn undriven_g2_is_undefined() {
        let atom = AtomParams::new(gamma(), 0.0, 0.0).unwrap();
        assert!(matches!(g2_cw(&atom, &[0.0, 1e-9]), Err(Error::UndefinedCorrelation)));
    }

    #[test]
    fn g2_limits() {
        let atom = AtomParams::<f64>::default();
        let c = g2_cw(&atom, &[0.0, 50.0 / gamma()]).unwrap();
        assert_eq!(c.values[0], 0.0);
        assert!((c.values[1] - 1.0).abs() < 1e-3);
        assert!(g2_cw(&atom, &[1e-9, 1e-9]).is_err());
        assert!(g2_cw(&atom, &[-1e-9]).is_err());
    }

    #[test]
    fn default_rabi_reproduces_emission_rate() {
        let atom = AtomParams::<f64>::default();
        assert!((atom.emission_rate() - DEFAULT_EMISSION_RATE).abs() < 1e-3);
        assert!((atom.detuning + 0.5 * atom.gamma).abs() < 1e-6);
    }

    #[test]
    fn sampler_needs_drive() {
        let atom = AtomParams::new(gamma(), 0.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(waiting_time_sample(&atom, &mut rng), Err(Error::NoEmission)));
    }

    #[test]
    fn sampler_is_reproducible() {
        let atom = AtomParams::<f64>::default();
        let sampler = WaitingTimeSampler::new(&atom).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..16).map(|_| sampler.sample(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
        assert_ne!(draw(7), draw(8));
    }

    #[test]
    fn quantile_inverts_survival() {
        let atom = AtomParams::<f64>::default();
        let sampler = WaitingTimeSampler::new(&atom).unwrap();
        for &u in &[0.999, 0.9, 0.5, 0.1, 1e-3, 1e-8] {
            let tau = sampler.quantile(u);
            assert!((sampler.survival(tau) - u).abs() < 1e-9 * u.max(1e-3), "u={u}");
        }
        // tail continues smoothly past the table
        let h = sampler.horizon();
        let inside = sampler.survival(h * (1.0 - 1e-9));
        let outside = sampler.survival(h * (1.0 + 1e-9));
        assert!((inside - outside).abs() < 1e-9);
    }

    #[test]
    fn single_precision_tracks_double() {
        let a64 = AtomParams::<f64>::default();
        let a32 = AtomParams::<f32>::default();
        let d64: Vec<f64> = (0..40).map(|k| k as f64 * 1e-9).collect();
        let d32: Vec<f32> = d64.iter().map(|&d| d as f32).collect();
        let c64 = g2_cw(&a64, &d64).unwrap();
        let c32 = g2_cw(&a32, &d32).unwrap();
        for (x, y) in c64.values.iter().zip(&c32.values) {
            assert!((x - *y as f64).abs() < 1e-3);
        }
    }
}
