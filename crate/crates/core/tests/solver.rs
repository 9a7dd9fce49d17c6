use std::f64::consts::TAU;

use phi4_core::besov::{AnalysisParams, DyadicPartition, Weight};
use phi4_core::chaos::{chaos_coeffs, d_constants, NonlinearitySpec, RenormProblem, TildeF};
use phi4_core::config::{ExperimentConfig, NonlinearityChoice};
use phi4_core::grid::HeatQuadrature;
use phi4_core::noise::{NoiseKernel, NoiseSpec};
use phi4_core::solver::{
    calibrated_m_delta, consistent_source, converge_sweep, decompose, max_principle_check, rescaled_coefficients,
    simulate_u_eps, simulate_with_noise, solve_classical, weight_derivative_bound, ConvergeStudy, DecompositionSetup,
    MaxPrincipleInput, NormMonitor,
};
use phi4_core::trees::build_enhancement;
use phi4_core::{Error, Grid, RealField, SpaceTimeField};
use proptest::prelude::*;

fn quiet(g: Grid, frame_dt: f64, frames: usize) -> SpaceTimeField {
    SpaceTimeField::new(g, frame_dt, vec![RealField::zeros(g); frames]).unwrap()
}

/// `u' = −μu − u³` has `u^{−2}(t) = (u₀^{−2} + 1/μ) e^{2μt} − 1/μ`.
fn cubic_ode(u0: f64, mu: f64, t: f64) -> f64 {
    ((u0.powi(-2) + 1.0 / mu) * (2.0 * mu * t).exp() - 1.0 / mu).powf(-0.5)
}

fn constant_solve(dt: f64) -> f64 {
    let g = Grid::new(1, 8, 1.0).unwrap();
    let eta = quiet(g, 0.125, 5);
    let u = solve_classical(&NonlinearitySpec::monomial(3).unwrap(), &eta, &RealField::constant(g, 2.0), 1.0, dt).unwrap();
    u.frames()[4].values()[1]
}

proptest! {
    #[test]
    fn rescaled_polynomial_matches_definition(eps in 0.01f64..1.0, x in -3.0f64..3.0) {
        let spec = NonlinearitySpec::new(1.3, 5, vec![0.2, -0.25, 0.5, 0.1]).unwrap();
        let c = rescaled_coefficients(&spec, eps);
        let lhs: f64 = c.iter().enumerate().map(|(k, a)| a * x.powi(k as i32)).sum();
        let rhs = eps.powf(-1.5) * spec.eval(eps.sqrt() * x);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
    }
}

#[test]
fn constant_cubic_matches_closed_form() {
    let exact = cubic_ode(2.0, 1.0, 0.5);
    let dt = 0.125 / 4096.0;
    let e1 = (constant_solve(dt) - exact).abs();
    assert!(e1 <= 1e-4, "{e1}");
    let fine = (constant_solve(dt / 64.0) - exact).abs();
    assert!(fine <= 1e-6, "{fine}");
    let e2 = (constant_solve(dt / 2.0) - exact).abs();
    let ratio = e1 / e2;
    assert!((ratio - 2.0).abs() <= 0.3, "{ratio}");
}

#[test]
fn small_eigenmode_decays_at_linear_rate() {
    let g = Grid::new(1, 32, TAU).unwrap();
    let a = 0.4;
    let spec = NonlinearitySpec::new(1.0, 3, vec![0.0, a]).unwrap();
    let amp = 1e-6;
    let k = 3.0;
    let u0 = RealField::from_fn(g, |x| amp * (k * x[0]).sin());
    let eta = quiet(g, 0.05, 5);
    let u = solve_classical(&spec, &eta, &u0, 1.0, 1e-5).unwrap();
    let decay = (-(k * k + 1.0 + a) * 0.2f64).exp();
    let expect = u0.scale(decay);
    let err = u.frames()[4].sub(&expect).unwrap().max_abs();
    assert!(err <= 1e-4 * amp * decay, "{err}");
}

#[test]
fn noise_driven_run_is_a_classical_run_of_the_rescaled_spec() {
    let g = Grid::new(1, 32, 4.0).unwrap();
    let eps = 0.5;
    let spec = NonlinearitySpec::new(1.0, 5, vec![0.0, -0.25, 0.5]).unwrap();
    let u0 = RealField::from_fn(g, |x| 0.3 * x[0].cos());
    let sim = simulate_u_eps(eps, &spec, &NoiseSpec::default(), &u0, 11, 0.25).unwrap();
    let c = rescaled_coefficients(&spec, eps);
    let resc = NonlinearitySpec::new(c[5], 5, c[..5].to_vec()).unwrap();
    let direct = solve_classical(&resc, &sim.eta, &u0, 1.0, sim.eta.dt()).unwrap();
    assert!(direct.sub(&sim.u).unwrap().max_abs() <= 1e-12);
    let again = simulate_with_noise(&spec, eps, &sim.eta, &u0, 1.0).unwrap();
    assert_eq!(again, sim.u);
    assert!(matches!(simulate_with_noise(&spec, 1.5, &sim.eta, &u0, 1.0), Err(Error::Domain(_))));
}

#[test]
fn step_must_divide_frame_spacing() {
    let g = Grid::new(1, 8, 1.0).unwrap();
    let r = solve_classical(&NonlinearitySpec::monomial(3).unwrap(), &quiet(g, 0.1, 3), &RealField::zeros(g), 1.0, 0.03);
    assert!(matches!(r, Err(Error::Precondition(_))));
}

#[test]
fn decomposition_recombines_and_matches_the_direct_right_hand_side() {
    let g = Grid::new(1, 64, TAU).unwrap();
    let p = DyadicPartition::new(&g);
    let noise = NoiseSpec::default();
    let eps = 0.5;
    let spec = NonlinearitySpec::new(1.0, 5, vec![0.0, -0.25, 0.5]).unwrap();
    let kernel = NoiseKernel::new(&noise, &g, eps * eps / 8.0, eps).unwrap();
    let chaos = chaos_coeffs(&spec, kernel.sigma_sq(), 5).unwrap();
    let tilde = TildeF::new(&spec, &chaos).unwrap();
    let cov = |s: f64| kernel.covariance_field(s);
    let pb = RenormProblem { tilde: &tilde, covariance: &cov, epsilon: eps, mu: noise.mu, quad: HeatQuadrature::default() };
    let rc = d_constants(&pb).unwrap();
    let u0 = RealField::from_fn(g, |x| 0.5 * x[0].sin());
    let sim = simulate_u_eps(eps, &spec, &noise, &u0, 3, 0.25).unwrap();
    let enh = build_enhancement(&sim.y, &tilde, Some(&rc), eps, noise.mu, &p).unwrap();
    let setup = DecompositionSetup {
        spec: &spec,
        tilde: &tilde,
        rc: &rc,
        epsilon: eps,
        mu: noise.mu,
        m1: 4,
        loc_base: 1,
        tolerance: 1e-9,
    };
    let st = decompose(&sim.u, &sim.y, &enh, &setup, &p).unwrap();
    assert!(st.recombination_residual <= 1e-9);
    assert!(st.direct_rhs_residual <= 1e-8, "{}", st.direct_rhs_residual);
    assert!(st.phi_equation_residual <= 1e-10 && st.psi_equation_residual <= 1e-10);
    assert!(st.ansatz_residual <= 1e-10);
    assert_eq!(st.phi.frames()[0].max_abs(), 0.0);
    assert!((st.lambda.lambda3 - chaos.coeff(3)).abs() <= 1e-12 * chaos.coeff(3).abs().max(1.0));

    // the ψ-equation with its own source is consistent, so the bound can be evaluated
    let inp = MaxPrincipleInput {
        lambda3: st.lambda.lambda3,
        c0: spec.c0,
        a1: 0.0,
        m: 5,
        l: 5,
        epsilon: eps,
        mu: noise.mu,
        nu: 1.0,
        delta: st.lambda.lambda3,
    };
    let rep = max_principle_check(&st.psi, &st.psi_source.scale(-1.0), &inp).unwrap();
    assert!(rep.holds(), "{rep:?}");

    let monitor = NormMonitor::new(&st.phi, &st.psi, &st.theta, eps, 5, &AnalysisParams::default(), &p).unwrap();
    let last = *monitor.times.last().unwrap();
    assert!(monitor.stopping_statistic.windows(2).all(|w| w[1] >= w[0]));
    let mut prev = 0.0;
    for m in [0.0, 1e-3, 1e-1, 1.0, 10.0, 1e6] {
        let t = monitor.stopping_time(m);
        assert!(t >= prev && t <= last);
        prev = t;
    }
    assert_eq!(monitor.stopping_time(f64::INFINITY), last);
}

#[test]
fn max_principle_holds_on_consistent_pairs_and_rejects_bad_input() {
    let g = Grid::new(1, 16, 8.0).unwrap();
    let frames: Vec<RealField> = (0..41)
        .map(|n| RealField::from_fn(g, |x| 2.0 * (0.3 * x[0] + 0.05 * n as f64).sin()))
        .collect();
    let psi = SpaceTimeField::new(g, 0.01, frames).unwrap();
    let inp = MaxPrincipleInput { lambda3: 2.0, c0: 1.0, a1: 0.5, m: 7, l: 5, epsilon: 0.25, mu: 1.0, nu: 1.0, delta: 1.0 };
    let src = consistent_source(&psi, &inp).unwrap();
    let rep = max_principle_check(&psi, &src, &inp).unwrap();
    assert!(rep.holds(), "{rep:?}");
    assert!(rep.equation_residual <= 1e-10);

    let off = src.map(|v| v + 1.0);
    assert!(matches!(max_principle_check(&psi, &off, &inp), Err(Error::Precondition(_))));
    for bad in [
        MaxPrincipleInput { m: 6, ..inp.clone() },
        MaxPrincipleInput { l: 3, ..inp.clone() },
        MaxPrincipleInput { delta: 4.0, ..inp.clone() },
        MaxPrincipleInput { c0: -1.0, ..inp.clone() },
    ] {
        assert!(max_principle_check(&psi, &src, &bad).is_err());
    }
}

#[test]
fn m_delta_is_monotone_and_flat_weights_cost_nothing() {
    let g = Grid::new(2, 16, 8.0).unwrap();
    assert_eq!(weight_derivative_bound(&g, 0.0), 0.0);
    let a = calibrated_m_delta(&g, 1.0, 5, 1.0, 0.1);
    let b = calibrated_m_delta(&g, 1.0, 5, 1.0, 1.0);
    assert!(a > b && b > 1.0);
    // with no weight and μ ≥ 0 the constant is 1
    assert_eq!(calibrated_m_delta(&g, 0.0, 5, 1.0, 0.5), 1.0);
}

#[test]
fn converge_sweep_is_deterministic() {
    let study = ConvergeStudy {
        eps_grid: vec![0.5, 0.25],
        dim: 1,
        n_points: 64,
        box_length: 4.0,
        final_time: 0.125,
        obs_dt: 0.0625,
        kappa: 0.3,
        weight: Weight::unit(),
        noise: NoiseSpec::default(),
    };
    let u0 = RealField::zeros(Grid::new(1, 64, 4.0).unwrap());
    let fam = |_: f64| NonlinearitySpec::monomial(5);
    let a = converge_sweep(&study, &fam, &[1, 2], &u0).unwrap();
    let b = converge_sweep(&study, &fam, &[1, 2], &u0).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 4);
    assert!(a.rows.iter().all(|r| r.distance.is_finite() && r.distance >= 0.0));
}

#[test]
fn config_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    let cfg = ExperimentConfig {
        nonlinearity: NonlinearityChoice::Coefficients { c0: 2.0, m: 5, g: vec![0.0, 1.0] },
        master_seed: 9,
        ..ExperimentConfig::default()
    };
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let back = ExperimentConfig::load(&path).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash(), cfg.hash());
    assert_eq!(back.nonlinearity.spec().unwrap().coefficients(), vec![0.0, 1.0, 0.0, 0.0, 0.0, 2.0]);
}
