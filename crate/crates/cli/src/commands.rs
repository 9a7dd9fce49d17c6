//! The experiment subcommands. Per-seed work runs on the rayon pool and is
//! collected in seed order, so outputs do not depend on the worker count.

use phi4_core::besov::{DyadicPartition, Weight};
use phi4_core::chaos::{
    assumption1_check, chaos_coeffs, d_constants, lambda_vector, ChaosExpansion, FamilyMember, NonlinearitySpec,
    RenormConstants, RenormProblem, TildeF,
};
use phi4_core::grid::HeatQuadrature;
use phi4_core::noise::{GaussianEnsemble, NoiseKernel};
use phi4_core::solver::{
    converge_sweep, decompose as split, max_principle_check, simulate_u_eps, ConvergeStudy, DecompositionSetup,
    DecompositionState, MaxPrincipleInput, MaxPrincipleReport, NormMonitor, Simulation,
};
use phi4_core::trees::{
    build_enhancement, ct_block_norms, fit_block_norms, homogeneities, ordering_violations, decay_stats,
    DecayRow, DecayStudy, COMPONENT_NAMES,
};
use phi4_core::{ExperimentConfig, Grid, RealField};
use rayon::prelude::*;
use serde_json::json;

use crate::artifacts::{num, Artifacts};
use crate::{AnyResult, Outcome};

/// Cauchy tolerance for λ_ε on the configured ε grid.
const LAMBDA_CAUCHY_TOL: f64 = 0.05;

pub struct Renormalized {
    pub kernel: NoiseKernel,
    pub chaos: ChaosExpansion,
    pub tilde: TildeF,
    pub rc: RenormConstants,
}

/// Noise kernel at `dt = ε²/8` and everything the chaos side derives from it.
pub fn renormalize(cfg: &ExperimentConfig, spec: &NonlinearitySpec, grid: &Grid, eps: f64) -> AnyResult<Renormalized> {
    let kernel = NoiseKernel::new(&cfg.noise, grid, eps * eps / 8.0, eps)?;
    let chaos = chaos_coeffs(spec, kernel.sigma_sq(), spec.degree())?;
    let tilde = TildeF::new(spec, &chaos)?;
    let cov = |s: f64| kernel.covariance_field(s);
    let pb = RenormProblem {
        tilde: &tilde,
        covariance: &cov,
        epsilon: eps,
        mu: cfg.noise.mu,
        quad: HeatQuadrature::default(),
    };
    let rc = d_constants(&pb)?;
    Ok(Renormalized { kernel, chaos, tilde, rc })
}

fn four(chaos: &ChaosExpansion) -> [f64; 4] {
    [chaos.coeff(0), chaos.coeff(1), chaos.coeff(2), chaos.coeff(3)]
}

fn diagnostic_weight(cfg: &ExperimentConfig) -> AnyResult<Weight> {
    Ok(Weight::new(cfg.analysis.nu, cfg.analysis.sigma_w)?)
}

fn seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    GaussianEnsemble::new(cfg.master_seed, cfg.ensemble_size).member_seeds()
}

pub fn renorm(cfg: &ExperimentConfig, art: &mut Artifacts) -> AnyResult<Outcome> {
    let grid = cfg.grid.build()?;
    let spec = cfg.nonlinearity.spec()?;
    let mut rows = Vec::new();
    let mut chaos_rows = Vec::new();
    let mut family = Vec::new();
    for &eps in &cfg.eps_grid {
        let r = renormalize(cfg, &spec, &grid, eps)?;
        let lam = lambda_vector(four(&r.chaos), &r.rc, eps);
        let s2 = r.kernel.sigma_sq();
        for (n, f) in r.chaos.f.iter().enumerate() {
            chaos_rows.push(vec![num(eps), n.to_string(), num(*f)]);
        }
        let mut row = vec![num(eps), num(s2)];
        row.extend(four(&r.chaos).map(num));
        let d = &r.rc;
        row.extend([d.d22, d.d22_bar, d.d31, d.d32, d.d32_prime, d.d32_prime_independent, d.truncation].map(num));
        row.extend(lam.as_array().map(num));
        rows.push(row);
        family.push(FamilyMember { epsilon: eps, spec: spec.clone(), sigma_sq: s2, lambda: lam });
    }
    art.csv(
        "renorm.csv",
        &[
            "epsilon", "sigma_sq", "f0", "f1", "f2", "f3", "d22", "d22_bar", "d31", "d32", "d32_prime",
            "d32_prime_independent", "truncation", "lambda0", "lambda1", "lambda2", "lambda3",
        ],
        &rows,
    )?;
    art.csv("chaos.csv", &["epsilon", "n", "f_n"], &chaos_rows)?;
    family.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
    let m1 = (cfg.analysis.m1 as usize).min(spec.m);
    let report = assumption1_check(&family, m1, LAMBDA_CAUCHY_TOL)?;
    let ok = report.passed();
    art.json("renorm.json", json!({ "m1": m1, "cauchy_tol": LAMBDA_CAUCHY_TOL, "assumption": report }))?;
    Ok(Outcome {
        ok: true,
        summary: format!(
            "{} eps values; structural hypotheses {}",
            cfg.eps_grid.len(),
            if ok { "hold" } else { "fail (see renorm.json)" }
        ),
    })
}

fn n_frames(cfg: &ExperimentConfig, eps: f64) -> usize {
    ((cfg.final_time / (eps * eps / 8.0)).round() as usize).max(1) + 1
}

fn decay_rows(kind: &str, rows: &[DecayRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![kind.to_string(), num(r.epsilon), num(r.mean), num(r.se), num(r.median), num(r.q10), num(r.q90)]
        })
        .collect()
}

pub fn trees(cfg: &ExperimentConfig, art: &mut Artifacts) -> AnyResult<Outcome> {
    let grid = cfg.grid.build()?;
    let p = DyadicPartition::new(&grid);
    let spec = cfg.nonlinearity.spec()?;
    let w = diagnostic_weight(cfg)?;
    let kappa = cfg.diagnostic_kappa;
    let targets = homogeneities(kappa);
    let mut names = vec!["Y"];
    names.extend(COMPONENT_NAMES);
    let mut rows = Vec::new();
    let mut per_eps = Vec::new();
    for &eps in &cfg.eps_grid {
        let r = renormalize(cfg, &spec, &grid, eps)?;
        let frames = n_frames(cfg, eps);
        let per_seed = seeds(cfg)
            .par_iter()
            .map(|&s| -> AnyResult<Vec<Vec<f64>>> {
                let sample = phi4_core::noise::sample_eta(&r.kernel, frames, s)?;
                let e = build_enhancement(&sample.y, &r.tilde, Some(&r.rc), eps, cfg.noise.mu, &p)?;
                let mut out = vec![ct_block_norms(&sample.y, &w, &p)?];
                for f in e.components() {
                    out.push(ct_block_norms(f, &w, &p)?);
                }
                Ok(out)
            })
            .collect::<AnyResult<Vec<_>>>()?;
        let n = per_seed.len() as f64;
        let mut mean = vec![vec![0.0; p.n_blocks()]; names.len()];
        for sample in &per_seed {
            for (acc, norms) in mean.iter_mut().zip(sample) {
                for (a, v) in acc.iter_mut().zip(norms) {
                    *a += v / n;
                }
            }
        }
        let mut exps = Vec::new();
        for (i, (name, norms)) in names.iter().zip(&mean).enumerate() {
            let target = if i == 0 { -0.5 - kappa } else { targets[i - 1] };
            let (e, lo, hi) = match fit_block_norms(norms, None) {
                Ok(f) => (f.exponent, f.ci_low, f.ci_high),
                Err(_) => (f64::NAN, f64::NAN, f64::NAN),
            };
            exps.push(e);
            rows.push(vec![num(eps), name.to_string(), num(e), num(lo), num(hi), num(target)]);
        }
        let violations = ordering_violations(&exps[1..], &targets);
        per_eps.push(json!({ "epsilon": eps, "exponents": exps, "ordering_violations": violations }));
    }
    art.csv("trees.csv", &["epsilon", "component", "exponent", "ci_low", "ci_high", "target"], &rows)?;

    let study = DecayStudy {
        eps_grid: cfg.eps_grid.clone(),
        dim: cfg.grid.dim,
        n_points: cfg.grid.n_points,
        box_length: cfg.grid.box_length,
        final_time: cfg.final_time,
        frame_stride: 1,
        kappa,
        eps_exp: cfg.analysis.eps_exp,
        weight: w,
        noise: cfg.noise.clone(),
    };
    let fixed = spec.clone();
    let decay = decay_stats(&study, &move |_| Ok(fixed.clone()), &GaussianEnsemble::new(cfg.master_seed, cfg.ensemble_size))?;
    let mut drows = decay_rows("level_zero", &decay.level_zero);
    drows.extend(decay_rows("square", &decay.square));
    art.csv("decay.csv", &["quantity", "epsilon", "mean", "se", "median", "q10", "q90"], &drows)?;
    art.json(
        "trees.json",
        json!({
            "kappa": kappa,
            "regularity": per_eps,
            "level_zero_slope": decay.level_zero_slope,
            "level_zero_exact": decay.level_zero_exact,
            "square_slope": decay.square_slope,
        }),
    )?;
    Ok(Outcome {
        ok: true,
        summary: format!(
            "{} eps values x {} seeds; level-zero slope {:?}, square slope {:?}",
            cfg.eps_grid.len(),
            cfg.ensemble_size,
            decay.level_zero_slope,
            decay.square_slope
        ),
    })
}

fn run(cfg: &ExperimentConfig, spec: &NonlinearitySpec, grid: &Grid, eps: f64, seed: u64) -> AnyResult<Simulation> {
    Ok(simulate_u_eps(eps, spec, &cfg.noise, &RealField::zeros(*grid), seed, cfg.final_time)?)
}

pub fn simulate(cfg: &ExperimentConfig, art: &mut Artifacts) -> AnyResult<Outcome> {
    let grid = cfg.grid.build()?;
    let spec = cfg.nonlinearity.spec()?;
    let mut rows = Vec::new();
    for &eps in &cfg.eps_grid {
        let sims = seeds(cfg)
            .par_iter()
            .map(|&s| run(cfg, &spec, &grid, eps, s).map(|sim| (s, sim)))
            .collect::<AnyResult<Vec<_>>>()?;
        for (seed, sim) in sims {
            for (n, f) in sim.u.frames().iter().enumerate() {
                let v = f.values();
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
                rows.push(vec![
                    num(eps),
                    seed.to_string(),
                    num(n as f64 * sim.u.dt()),
                    num(f.max_abs()),
                    num(mean),
                    num(rms),
                ]);
            }
        }
    }
    art.csv("simulate.csv", &["epsilon", "seed", "t", "sup_u", "mean_u", "rms_u"], &rows)?;
    Ok(Outcome { ok: true, summary: format!("{} rows", rows.len()) })
}

pub fn decompose_one(
    cfg: &ExperimentConfig,
    spec: &NonlinearitySpec,
    grid: &Grid,
    p: &DyadicPartition,
    r: &Renormalized,
    eps: f64,
    seed: u64,
) -> AnyResult<DecompositionState> {
    let sim = run(cfg, spec, grid, eps, seed)?;
    let enh = build_enhancement(&sim.y, &r.tilde, Some(&r.rc), eps, cfg.noise.mu, p)?;
    let setup = DecompositionSetup {
        spec,
        tilde: &r.tilde,
        rc: &r.rc,
        epsilon: eps,
        mu: cfg.noise.mu,
        m1: (cfg.analysis.m1 as usize).min(spec.m),
        loc_base: cfg.loc_base,
        tolerance: 1e-9,
    };
    Ok(split(&sim.u, &sim.y, &enh, &setup, p)?)
}

/// Runs the decomposition for every (ε, seed) pair in order.
fn all_decompositions(cfg: &ExperimentConfig) -> AnyResult<Vec<(f64, u64, DecompositionState)>> {
    let grid = cfg.grid.build()?;
    let p = DyadicPartition::new(&grid);
    let spec = cfg.nonlinearity.spec()?;
    let mut out = Vec::new();
    for &eps in &cfg.eps_grid {
        let r = renormalize(cfg, &spec, &grid, eps)?;
        let states = seeds(cfg)
            .par_iter()
            .map(|&s| decompose_one(cfg, &spec, &grid, &p, &r, eps, s).map(|st| (eps, s, st)))
            .collect::<AnyResult<Vec<_>>>()?;
        out.extend(states);
    }
    Ok(out)
}

/// Level `M` at which the stopping time is reported.
const STOPPING_LEVEL: f64 = 1.0;

pub fn decompose(cfg: &ExperimentConfig, art: &mut Artifacts) -> AnyResult<Outcome> {
    let grid = cfg.grid.build()?;
    let p = DyadicPartition::new(&grid);
    let spec = cfg.nonlinearity.spec()?;
    let runs = all_decompositions(cfg)?;
    let mut rows = Vec::new();
    let mut term_rows = Vec::new();
    let mut worst = (0.0f64, 0.0f64);
    for (eps, seed, st) in &runs {
        let mon = NormMonitor::new(&st.phi, &st.psi, &st.theta, *eps, spec.m, &cfg.analysis, &p)?;
        let l = &st.lambda;
        rows.push(vec![
            num(*eps),
            seed.to_string(),
            num(st.recombination_residual),
            num(st.direct_rhs_residual),
            num(st.phi_equation_residual),
            num(st.psi_equation_residual),
            num(st.ansatz_residual),
            num(l.lambda0),
            num(l.lambda1),
            num(l.lambda2),
            num(l.lambda3),
            num(st.phi.max_abs()),
            num(st.psi.max_abs()),
            num(mon.stopping_time(STOPPING_LEVEL)),
        ]);
        for (name, part, sup) in &st.term_norms {
            term_rows.push(vec![num(*eps), seed.to_string(), name.clone(), format!("{part:?}"), num(*sup)]);
        }
        worst.0 = worst.0.max(st.recombination_residual);
        worst.1 = worst.1.max(st.direct_rhs_residual);
    }
    art.csv(
        "decompose.csv",
        &[
            "epsilon", "seed", "recombination", "direct_rhs", "phi_equation", "psi_equation", "ansatz", "lambda0",
            "lambda1", "lambda2", "lambda3", "sup_phi", "sup_psi", "stopping_time_m1",
        ],
        &rows,
    )?;
    art.csv("terms.csv", &["epsilon", "seed", "term", "part", "sup"], &term_rows)?;
    let ok = worst.0 <= 1e-9 && worst.1 <= 1e-8;
    Ok(Outcome {
        ok,
        summary: format!("{} runs; max recombination {:e}, max direct-RHS {:e}", runs.len(), worst.0, worst.1),
    })
}

/// `Lψ + λ₃ψ³ + C₀ε^{(m−3)/2}ψ^m = Ψ` with the decomposition's own source.
pub fn max_principle_of(spec: &NonlinearitySpec, nu: f64, eps: f64, mu: f64, st: &DecompositionState) -> AnyResult<MaxPrincipleReport> {
    let inp = MaxPrincipleInput {
        lambda3: st.lambda.lambda3,
        c0: spec.c0,
        a1: 0.0,
        m: spec.m,
        l: spec.m,
        epsilon: eps,
        mu,
        nu,
        delta: st.lambda.lambda3,
    };
    Ok(max_principle_check(&st.psi, &st.psi_source.scale(-1.0), &inp)?)
}

pub fn maxprinciple(cfg: &ExperimentConfig, art: &mut Artifacts) -> AnyResult<Outcome> {
    let spec = cfg.nonlinearity.spec()?;
    let runs = all_decompositions(cfg)?;
    let mut rows = Vec::new();
    let mut min_margin = f64::INFINITY;
    for (eps, seed, st) in &runs {
        let rep = max_principle_of(&spec, cfg.analysis.nu, *eps, cfg.noise.mu, st)?;
        min_margin = min_margin.min(rep.margin);
        rows.push(vec![
            num(*eps),
            seed.to_string(),
            num(rep.lhs),
            num(rep.rhs),
            num(rep.margin),
            num(rep.m_delta),
            num(rep.equation_residual),
            rep.holds().to_string(),
        ]);
    }
    art.csv("maxprinciple.csv", &["epsilon", "seed", "lhs", "rhs", "margin", "m_delta", "residual", "holds"], &rows)?;
    Ok(Outcome { ok: min_margin >= 0.0, summary: format!("{} runs; min margin {min_margin}", runs.len()) })
}

pub fn converge(cfg: &ExperimentConfig, art: &mut Artifacts) -> AnyResult<Outcome> {
    let grid = cfg.grid.build()?;
    let spec = cfg.nonlinearity.spec()?;
    let coarse = cfg.eps_grid.iter().cloned().fold(0.0, f64::max);
    let study = ConvergeStudy {
        eps_grid: cfg.eps_grid.clone(),
        dim: cfg.grid.dim,
        n_points: cfg.grid.n_points,
        box_length: cfg.grid.box_length,
        final_time: cfg.final_time,
        obs_dt: coarse * coarse / 8.0,
        kappa: cfg.diagnostic_kappa,
        weight: diagnostic_weight(cfg)?,
        noise: cfg.noise.clone(),
    };
    let fixed = spec.clone();
    let rep = converge_sweep(&study, &move |_| Ok(fixed.clone()), &seeds(cfg), &RealField::zeros(grid))?;
    let rows: Vec<Vec<String>> = rep
        .rows
        .iter()
        .map(|r| vec![num(r.epsilon), r.seed.to_string(), num(r.lambda3), num(r.distance)])
        .collect();
    art.csv("converge.csv", &["epsilon", "seed", "lambda3", "distance"], &rows)?;
    let med: Vec<Vec<String>> = rep.medians.iter().map(|(e, m)| vec![num(*e), num(*m)]).collect();
    art.csv("converge_medians.csv", &["epsilon", "median_distance"], &med)?;
    art.json("converge.json", json!({ "study": study, "slope": rep.slope, "monotone": rep.monotone }))?;
    Ok(Outcome {
        ok: true,
        summary: format!("slope {:?}, medians strictly decreasing: {}", rep.slope, rep.monotone),
    })
}
