use std::f64::consts::PI;

use ion_hom::atomdyn::{
    evolve, evolve_steps, g2_cw, steady_state, waiting_time_sample, AtomParams, BlochState, WaitingTimeSampler,
    LIFETIME,
};
use ion_hom::{seeded_rng, Error};
use num_complex::Complex64;
use proptest::prelude::*;

fn gamma() -> f64 {
    1.0 / LIFETIME
}

/// Resonance-fluorescence g² of a two-level atom driven on resonance.
fn analytic_g2(gamma: f64, rabi: f64, tau: f64) -> f64 {
    let a = 0.75 * gamma;
    let disc = rabi * rabi - gamma * gamma / 16.0;
    let osc = if disc > 0.0 {
        let mu = disc.sqrt();
        (mu * tau).cos() + a / mu * (mu * tau).sin()
    } else if disc < 0.0 {
        let mu = (-disc).sqrt();
        (mu * tau).cosh() + a / mu * (mu * tau).sinh()
    } else {
        1.0 + a * tau
    };
    1.0 - (-a * tau).exp() * osc
}

/// No-jump amplitudes from the ground state under the effective
/// non-Hermitian Hamiltonian, integrated with a fine RK4 step.
/// Returns the survival probability |ψ|² on a grid.
fn no_jump_survival(atom: &AtomParams<f64>, dt: f64, n: usize) -> Vec<f64> {
    let i = Complex64::i();
    let (g, o, d) = (atom.gamma, atom.rabi, atom.detuning);
    let f = |cg: Complex64, ce: Complex64| {
        let dg = -i * (o / 2.0) * ce;
        let de = -i * (o / 2.0) * cg + (i * d - g / 2.0) * ce;
        (dg, de)
    };
    let (mut cg, mut ce) = (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    for _ in 0..n {
        let (k1g, k1e) = f(cg, ce);
        let (k2g, k2e) = f(cg + k1g * (dt / 2.0), ce + k1e * (dt / 2.0));
        let (k3g, k3e) = f(cg + k2g * (dt / 2.0), ce + k2e * (dt / 2.0));
        let (k4g, k4e) = f(cg + k3g * dt, ce + k3e * dt);
        cg += (k1g + k2g * 2.0 + k3g * 2.0 + k4g) * (dt / 6.0);
        ce += (k1e + k2e * 2.0 + k3e * 2.0 + k4e) * (dt / 6.0);
        out.push(cg.norm_sqr() + ce.norm_sqr());
    }
    out
}

#[test]
fn steady_state_examples() {
    let g = gamma();
    let dark = steady_state(&AtomParams::new(g, 0.0, 0.0).unwrap()).unwrap();
    assert_eq!(dark.rho_ee, 0.0);
    let sat = steady_state(&AtomParams::new(g, 1e3 * g, 0.0).unwrap()).unwrap();
    assert!((sat.rho_ee - 0.5).abs() < 1e-6);
    let atom = AtomParams::new(g, g / 2f64.sqrt(), 0.0).unwrap();
    let ss = steady_state(&atom).unwrap();
    assert!((ss.rho_ee - 0.25).abs() < 1e-12);
    // long-time integration from the ground state lands on the fixed point
    let long = evolve_steps(&atom, &BlochState::ground(), 60.0 * LIFETIME, 60_000).unwrap();
    assert!((long.rho_ee - ss.rho_ee).abs() < 1e-9);
    let again = evolve(&atom, &ss, 5.0 * LIFETIME).unwrap();
    assert!((again.rho_ee - ss.rho_ee).abs() < 1e-9);
}

#[test]
fn steady_state_rejects_non_finite() {
    let bad = AtomParams {
        gamma: gamma(),
        rabi: f64::NAN,
        detuning: 0.0,
    };
    assert!(matches!(steady_state(&bad), Err(Error::InvalidInput { .. })));
}

#[test]
fn evolve_examples() {
    let g = gamma();
    let dark = AtomParams::new(g, 0.0, 0.0).unwrap();
    let s = evolve(&dark, &BlochState::ground(), 1e-8).unwrap();
    assert_eq!(s, BlochState::ground());
    let decayed = evolve(&dark, &BlochState::excited(), LIFETIME).unwrap();
    assert!((decayed.rho_ee - (-1f64).exp()).abs() < 1e-6);

    let rabi = 5.0 * g;
    let atom = AtomParams::new(g, rabi, 0.0).unwrap();
    let t = PI / rabi;
    let coarse = evolve(&atom, &BlochState::ground(), t).unwrap();
    let fine = evolve_steps(&atom, &BlochState::ground(), t, 20_000).unwrap();
    assert!((coarse.rho_ee - fine.rho_ee).abs() < 1e-8);
    let ss = steady_state(&atom).unwrap().rho_ee;
    assert!((coarse.rho_ee - ss * analytic_g2(g, rabi, t)).abs() < 1e-8);
    assert!(coarse.rho_ee > ss);
    assert!(matches!(
        evolve(&atom, &BlochState::ground(), 0.0),
        Err(Error::InvalidInput { .. })
    ));
    assert!(evolve(&atom, &BlochState::ground(), -1e-9).is_err());
}

#[test]
fn rk4_converges_at_fourth_order() {
    let g = gamma();
    let atom = AtomParams::new(g, 3.0 * g, -0.5 * g).unwrap();
    let t = 4.0 * LIFETIME;
    let reference = evolve_steps(&atom, &BlochState::ground(), t, 40_000).unwrap().rho_ee;
    let err = |n: usize| (evolve_steps(&atom, &BlochState::ground(), t, n).unwrap().rho_ee - reference).abs();
    let (e1, e2) = (err(40), err(80));
    let order = (e1 / e2).log2();
    assert!((order - 4.0).abs() < 0.5, "observed order {order}");
}

#[test]
fn g2_matches_closed_form_on_resonance() {
    let g = gamma();
    for rabi in [0.1 * g, 0.25 * g, 0.7 * g, 2.0 * g, 10.0 * g] {
        let atom = AtomParams::new(g, rabi, 0.0).unwrap();
        let delays: Vec<f64> = (0..=2000).map(|k| k as f64 * 0.01 / g).collect();
        let curve = g2_cw(&atom, &delays).unwrap();
        let worst = curve
            .delays
            .iter()
            .zip(&curve.values)
            .map(|(&t, &v)| (v - analytic_g2(g, rabi, t)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "rabi/Γ = {}: deviation {worst}", rabi / g);
    }
}

#[test]
fn g2_limits() {
    let atom = AtomParams::<f64>::default();
    let g = atom.gamma;
    let c = g2_cw(&atom, &[0.0, 50.0 / g]).unwrap();
    assert_eq!(c.values[0], 0.0);
    assert!((c.values[1] - 1.0).abs() < 1e-3);
    let dark = AtomParams::new(g, 0.0, 0.0).unwrap();
    assert!(matches!(g2_cw(&dark, &[0.0]), Err(Error::UndefinedCorrelation)));
    assert!(g2_cw(&atom, &[-1e-9]).is_err());
}

#[test]
fn g2_in_single_precision() {
    let g = 1.0f32 / 2.6e-9;
    let atom = AtomParams::<f32>::new(g, 2.0 * g, 0.0).unwrap();
    let delays: Vec<f32> = (0..200).map(|k| k as f32 * 0.1 / g).collect();
    let c = g2_cw(&atom, &delays).unwrap();
    for (&t, &v) in c.delays.iter().zip(&c.values) {
        let exact = analytic_g2(g as f64, 2.0 * g as f64, t as f64);
        assert!((v as f64 - exact).abs() < 1e-3);
    }
}

#[test]
fn waiting_times_follow_the_no_jump_law() {
    let atom = AtomParams::<f64>::default();
    let sampler = WaitingTimeSampler::new(&atom).unwrap();
    let mut rng = seeded_rng(11, 0);
    let n = 1_000_000;
    let bin = 0.25 / atom.gamma;
    let n_bins = 60;
    let mut hist = vec![0u64; n_bins + 1];
    for _ in 0..n {
        let t: f64 = sampler.sample(&mut rng);
        hist[((t / bin) as usize).min(n_bins)] += 1;
    }
    let sub = 400;
    let survival = no_jump_survival(&atom, bin / sub as f64, n_bins * sub);
    let mut chi2 = 0.0;
    let mut dof = 0;
    for k in 0..=n_bins {
        let p = if k < n_bins {
            survival[k * sub] - survival[(k + 1) * sub]
        } else {
            survival[n_bins * sub]
        };
        let expected = p * n as f64;
        if expected < 20.0 {
            continue;
        }
        chi2 += (hist[k] as f64 - expected).powi(2) / expected;
        dof += 1;
    }
    let dof = (dof - 1) as f64;
    assert!(chi2 < dof + 3.0 * (2.0 * dof).sqrt(), "χ² {chi2} for {dof} dof");
}

#[test]
fn waiting_time_mean_rate_matches_steady_state() {
    for atom in [
        AtomParams::<f64>::default(),
        AtomParams::new(gamma(), 10.0 * gamma(), 0.0).unwrap(),
    ] {
        let sampler = WaitingTimeSampler::new(&atom).unwrap();
        let mut rng = seeded_rng(3, 1);
        let n = 1_000_000;
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..n {
            let t: f64 = sampler.sample(&mut rng);
            sum += t;
            sum2 += t * t;
        }
        let mean = sum / n as f64;
        let sem = ((sum2 / n as f64 - mean * mean) / n as f64).sqrt();
        let expected = 1.0 / atom.emission_rate();
        assert!((mean - expected).abs() < 3.0 * sem, "mean {mean} vs {expected} ± {sem}");
    }
}

#[test]
fn waiting_time_sampling_is_deterministic() {
    let atom = AtomParams::<f64>::default();
    let draw = |seed| {
        let mut rng = seeded_rng(seed, 0);
        (0..100)
            .map(|_| waiting_time_sample(&atom, &mut rng).unwrap())
            .collect::<Vec<f64>>()
    };
    assert_eq!(draw(5), draw(5));
    assert_ne!(draw(5), draw(6));
    let dark = AtomParams::new(gamma(), 0.0, 0.0).unwrap();
    assert!(matches!(
        waiting_time_sample(&dark, &mut seeded_rng(0, 0)),
        Err(Error::NoEmission)
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn evolution_preserves_trace_and_positivity(
        rabi in 0.0f64..20.0,
        detuning in -5.0f64..5.0,
        steps in 1usize..2000,
        span in 0.1f64..30.0,
    ) {
        let g = gamma();
        let atom = AtomParams::new(g, rabi * g, detuning * g).unwrap();
        let s = evolve_steps(&atom, &BlochState::ground(), span / g, steps.max((span * 60.0) as usize)).unwrap();
        prop_assert!((s.trace() - 1.0).abs() < 1e-9);
        prop_assert!(s.rho_ee >= -1e-12 && s.rho_ee <= 1.0 + 1e-12);
        prop_assert!(s.rho_ge.norm_sqr() <= s.rho_gg * s.rho_ee + 1e-9);
    }

    #[test]
    fn g2_vanishes_at_zero_delay(rabi in 0.01f64..20.0, detuning in -5.0f64..5.0) {
        let g = gamma();
        let atom = AtomParams::new(g, rabi * g, detuning * g).unwrap();
        let c = g2_cw(&atom, &[0.0, 1.0 / g, 5.0 / g]).unwrap();
        prop_assert_eq!(c.values[0], 0.0);
        prop_assert!(c.values.iter().all(|&v| v >= 0.0));
    }
}
