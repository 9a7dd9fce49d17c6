//! Exponential-Euler solvers for the smooth-noise equation, the
//! paracontrolled decomposition of a trajectory, the stopping-time monitor,
//! the a-priori maximum-principle check and the ε-sweep.

use serde::{Deserialize, Serialize};

use crate::besov::{besov_norm, linf_linf_norm, AnalysisParams, DyadicPartition, Weight};
use crate::chaos::NonlinearitySpec;
use crate::error::{Error, Result};
use crate::grid::{HeatStepper, RealField, SpaceTimeField};

/// Above this sup-norm a trajectory is declared divergent.
pub const DIVERGENCE_BOUND: f64 = 1e6;

fn eval_poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Monomial coefficients of `x ↦ ε^{−3/2} F(ε^{1/2} x)`.
pub fn rescaled_coefficients(spec: &NonlinearitySpec, epsilon: f64) -> Vec<f64> {
    spec.coefficients()
        .iter()
        .enumerate()
        .map(|(k, c)| c * epsilon.powf((k as f64 - 3.0) / 2.0))
        .collect()
}

/// The rescaled nonlinearity as a spec of the same shape.
pub fn rescaled_spec(spec: &NonlinearitySpec, epsilon: f64) -> Result<NonlinearitySpec> {
    let c = rescaled_coefficients(spec, epsilon);
    NonlinearitySpec::new(c[spec.m], spec.m, c[..spec.m].to_vec())
}

/// Explicit exponential Euler for `L u = η − N(u)` with `substeps` steps per
/// frame of `eta`; the forcing is linear in time between frames.
fn exp_euler(
    drift: &dyn Fn(f64) -> f64,
    eta: &SpaceTimeField,
    u0: &RealField,
    mu: f64,
    substeps: usize,
) -> Result<SpaceTimeField> {
    let grid = *eta.grid();
    if *u0.grid() != grid {
        return Err(Error::Dimension("initial datum lives on a different grid".into()));
    }
    let h = eta.dt() / substeps as f64;
    let stepper = HeatStepper::new(grid, h, mu);
    let mut u = u0.clone();
    let mut frames = Vec::with_capacity(eta.n_frames());
    frames.push(u.clone());
    for w in eta.frames().windows(2) {
        for s in 0..substeps {
            let th = s as f64 / substeps as f64;
            let force = w[0].zip_map(&w[1], |a, b| (1.0 - th) * a + th * b)?;
            let rhs = force.zip_map(&u, |f, x| f - drift(x))?;
            u = stepper.step(&u, &rhs)?;
            let m = u.max_abs();
            if !m.is_finite() || m > DIVERGENCE_BOUND {
                return Err(Error::Divergence(format!(
                    "sup norm {m:e} at t = {:.6}",
                    (frames.len() - 1) as f64 * eta.dt() + (s + 1) as f64 * h
                )));
            }
        }
        frames.push(u.clone());
    }
    SpaceTimeField::new(grid, eta.dt(), frames)
}

/// Solves `L u + F(u) = η` with exponential Euler at step `dt`, which must
/// divide the frame spacing of `eta`. Output frames sit on `eta`'s times.
pub fn solve_classical(
    spec: &NonlinearitySpec,
    eta: &SpaceTimeField,
    u0: &RealField,
    mu: f64,
    dt: f64,
) -> Result<SpaceTimeField> {
    let ratio = eta.dt() / dt;
    let substeps = ratio.round();
    if !(dt > 0.0) || substeps < 1.0 || (ratio - substeps).abs() > 1e-9 * ratio {
        return Err(Error::Precondition(format!("step {dt} does not divide the frame spacing {}", eta.dt())));
    }
    let c = spec.coefficients();
    exp_euler(&|x| eval_poly(&c, x), eta, u0, mu, substeps as usize)
}

/// Trajectory of `L u = −ε^{−3/2} F(ε^{1/2} u) + η_ε` driven by the given
/// noise sample, one step per noise frame.
pub fn simulate_with_noise(
    spec: &NonlinearitySpec,
    epsilon: f64,
    eta: &SpaceTimeField,
    u0: &RealField,
    mu: f64,
) -> Result<SpaceTimeField> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0,1], got {epsilon}")));
    }
    let c = rescaled_coefficients(spec, epsilon);
    exp_euler(&|x| eval_poly(&c, x), eta, u0, mu, 1)
}

/// Noise sample plus the trajectory it drives.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub u: SpaceTimeField,
    pub eta: SpaceTimeField,
    pub y: SpaceTimeField,
    pub epsilon: f64,
}

/// Samples `η_ε` on `u0`'s grid with `dt = ε²/8` up to `final_time` and
/// solves the rescaled equation.
pub fn simulate_u_eps(
    epsilon: f64,
    spec: &NonlinearitySpec,
    noise: &crate::noise::NoiseSpec,
    u0: &RealField,
    seed: u64,
    final_time: f64,
) -> Result<Simulation> {
    let dt = epsilon * epsilon / 8.0;
    let kernel = crate::noise::NoiseKernel::new(noise, u0.grid(), dt, epsilon)?;
    let n_frames = ((final_time / dt).round() as usize).max(1) + 1;
    let s = crate::noise::sample_eta(&kernel, n_frames, seed)?;
    let u = simulate_with_noise(spec, epsilon, &s.eta, u0, noise.mu)?;
    Ok(Simulation { u, eta: s.eta, y: s.y, epsilon })
}

/// Frame-wise norms tracked along a decomposition and the stopping time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormMonitor {
    pub times: Vec<f64>,
    /// `‖φ(t)‖_{C^α(ρ^{(3+6α)/2m})}`.
    pub phi_alpha: Vec<f64>,
    /// `‖φ(t)‖_{C^{1/2+α}}`.
    pub phi_half: Vec<f64>,
    /// `‖ϑ(t)‖_{C^{1+α}(ρ^{3/2+γ'})}`.
    pub theta: Vec<f64>,
    /// `‖ψ(t)‖_{C^{2−γ}(ρ^{3/2+γ₁})}`.
    pub psi_besov: Vec<f64>,
    /// `‖ψ(t)‖_{L^∞(ρ^{1/2+α})}`.
    pub psi_sup: Vec<f64>,
    /// `ε^{(m−3)/2}‖ψ(t)‖^m_{L^∞(ρ^{(3+6α)/2m})}`.
    pub psi_power: Vec<f64>,
    /// `ε^{(m−3)/2}(‖φ‖^m_{C_tL^∞} + ‖ψ‖^m_{C_tL^∞})` in the weight `ρ^{(3+6α)/2m}`.
    pub stopping_statistic: Vec<f64>,
}

fn frame_sup(f: &RealField, w: &Weight) -> f64 {
    let rho = w.field(f.grid());
    f.values().iter().zip(rho.values()).fold(0.0, |m, (a, r)| m.max((a * r).abs()))
}

impl NormMonitor {
    pub fn new(
        phi: &SpaceTimeField,
        psi: &SpaceTimeField,
        theta: &SpaceTimeField,
        epsilon: f64,
        m: usize,
        a: &AnalysisParams,
        p: &DyadicPartition,
    ) -> Result<Self> {
        let rho = Weight::new(a.nu, 1.0)?;
        let w_small = rho.pow((3.0 + 6.0 * a.alpha) / (2.0 * m as f64));
        let pref = epsilon.powf((m as f64 - 3.0) / 2.0);
        let mut out = Self {
            times: Vec::new(),
            phi_alpha: Vec::new(),
            phi_half: Vec::new(),
            theta: Vec::new(),
            psi_besov: Vec::new(),
            psi_sup: Vec::new(),
            psi_power: Vec::new(),
            stopping_statistic: Vec::new(),
        };
        let (mut phi_run, mut psi_run) = (0.0f64, 0.0f64);
        for n in 0..phi.n_frames() {
            let (f, s, th) = (&phi.frames()[n], &psi.frames()[n], &theta.frames()[n]);
            out.times.push(n as f64 * phi.dt());
            out.phi_alpha.push(besov_norm(f, a.alpha, &w_small, p)?);
            out.phi_half.push(besov_norm(f, 0.5 + a.alpha, &Weight::unit(), p)?);
            out.theta.push(besov_norm(th, 1.0 + a.alpha, &rho.pow(1.5 + a.gamma_prime), p)?);
            out.psi_besov.push(besov_norm(s, 2.0 - a.gamma, &rho.pow(1.5 + a.gamma1), p)?);
            out.psi_sup.push(frame_sup(s, &rho.pow(0.5 + a.alpha)));
            let ps = frame_sup(s, &w_small);
            out.psi_power.push(pref * ps.powi(m as i32));
            phi_run = phi_run.max(frame_sup(f, &w_small));
            psi_run = psi_run.max(ps);
            out.stopping_statistic.push(pref * (phi_run.powi(m as i32) + psi_run.powi(m as i32)));
        }
        Ok(out)
    }

    /// `T_{ε,M}`: first time the statistic exceeds `M`, else the final time.
    pub fn stopping_time(&self, big_m: f64) -> f64 {
        self.stopping_statistic
            .iter()
            .position(|s| *s > big_m)
            .map_or(*self.times.last().unwrap_or(&0.0), |i| self.times[i])
    }
}

/// Sup of `|Δρ^m|/ρ^m + 2|∇ρ^m|²/ρ^{2m}` over the grid for `ρ^m = ⟨x⟩^{−q}`.
pub fn weight_derivative_bound(grid: &crate::grid::Grid, q: f64) -> f64 {
    let d = grid.dim() as f64;
    (0..grid.len())
        .map(|i| {
            let x = grid.coords(i);
            let r2: f64 = x[..grid.dim()].iter().map(|v| v * v).sum();
            let s = 1.0 + r2;
            let lap = (-q * d / s + q * (q + 2.0) * r2 / (s * s)).abs();
            let grad = q * q * r2 / (s * s);
            lap + 2.0 * grad
        })
        .fold(0.0, f64::max)
}

/// `M_δ = (2/3) c^{3/2} (3δ/2)^{−1/2} + 1` with `c = (−μ ∨ 0) + sup(|Δρ^m|/ρ^m + 2|∇ρ^m|²/ρ^{2m})`.
pub fn calibrated_m_delta(grid: &crate::grid::Grid, nu: f64, m: usize, mu: f64, delta: f64) -> f64 {
    let c = (-mu).max(0.0) + weight_derivative_bound(grid, nu * m as f64);
    2.0 / 3.0 * c.powf(1.5) / (1.5 * delta).sqrt() + 1.0
}

/// Inputs of the maximum-principle inequality for
/// `L ψ + λ₃ψ³ + C₀ε^{(m−3)/2}ψ^m + a₁ε^{(l−3)/2}ψ^l = Ψ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxPrincipleInput {
    pub lambda3: f64,
    pub c0: f64,
    pub a1: f64,
    pub m: usize,
    pub l: usize,
    pub epsilon: f64,
    pub mu: f64,
    pub nu: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxPrincipleReport {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub m_delta: f64,
    pub equation_residual: f64,
}

impl MaxPrincipleReport {
    pub fn holds(&self) -> bool {
        self.margin >= 0.0
    }
}

/// Source `Ψ` that makes `ψ` an exact solution of the stepped equation.
pub fn consistent_source(psi: &SpaceTimeField, inp: &MaxPrincipleInput) -> Result<SpaceTimeField> {
    let lhs = crate::grid::discrete_heat_operator(psi, inp.mu)?;
    let poly = psi.map(|x| max_principle_poly(inp, x));
    lhs.add(&poly)
}

fn max_principle_poly(inp: &MaxPrincipleInput, x: f64) -> f64 {
    let e = inp.epsilon;
    inp.lambda3 * x.powi(3)
        + inp.c0 * e.powf((inp.m as f64 - 3.0) / 2.0) * x.powi(inp.m as i32)
        + inp.a1 * e.powf((inp.l as f64 - 3.0) / 2.0) * x.powi(inp.l as i32)
}

/// Evaluates both sides of the a-priori bound after checking that
/// `(ψ, Ψ)` satisfy the stepped equation.
pub fn max_principle_check(
    psi: &SpaceTimeField,
    source: &SpaceTimeField,
    inp: &MaxPrincipleInput,
) -> Result<MaxPrincipleReport> {
    if inp.m < inp.l || inp.l < 5 || inp.m % 2 == 0 || inp.l % 2 == 0 {
        return Err(Error::Precondition(format!("need odd m >= l >= 5, got m = {}, l = {}", inp.m, inp.l)));
    }
    if inp.c0 < 0.0 || inp.a1 < 0.0 || !(inp.delta > 0.0 && inp.delta < 2.0 * inp.lambda3) {
        return Err(Error::Precondition("need C0, a1 >= 0 and 0 < delta < 2 lambda3".into()));
    }
    psi.check_compatible(source)?;
    let implied = consistent_source(psi, inp)?;
    let n = psi.n_frames() - 1;
    let mut residual = 0.0f64;
    let mut scale = 1.0f64;
    for (a, b) in implied.frames()[..n].iter().zip(&source.frames()[..n]) {
        residual = residual.max(a.sub(b)?.max_abs());
        scale = scale.max(a.max_abs()).max(b.max_abs());
    }
    if residual > 1e-8 * scale {
        return Err(Error::Precondition(format!("(psi, Psi) inconsistent: residual {residual:e}")));
    }
    let rho = Weight::new(inp.nu, 1.0)?;
    let m = inp.m as i32;
    let pref = inp.epsilon.powf((inp.m as f64 - 3.0) / 2.0);
    // the last frame of the implied source is a copy, so only frames with a successor count
    let psi_obs = SpaceTimeField::new(*psi.grid(), psi.dt(), psi.frames().to_vec())?;
    let src_obs = SpaceTimeField::new(*psi.grid(), psi.dt(), source.frames()[..n.max(2)].to_vec())?;
    let lhs = (inp.lambda3 - inp.delta / 2.0) * linf_linf_norm(&psi_obs, &rho.pow(inp.m as f64)).powi(3)
        + inp.c0 * pref * linf_linf_norm(&psi_obs, &rho.pow(3.0)).powi(m);
    let m_delta = calibrated_m_delta(psi.grid(), inp.nu, inp.m, inp.mu, inp.delta);
    let psi0 = frame_sup(&psi.frames()[0], &rho.pow(3.0));
    let rhs = m_delta + 2.0 * psi0.powi(m) + 2.0 * linf_linf_norm(&src_obs, &rho.pow(3.0 * inp.m as f64));
    Ok(MaxPrincipleReport { lhs, rhs, margin: rhs - lhs, m_delta, equation_residual: residual })
}

use crate::chaos::{binomial, factorial, gaussian_expectation, lambda_vector, LambdaVector, RenormConstants, TildeF};
use crate::paracalc::{
    commutator, localize, modified_para, para_ge, para_gt, para_le, para_lt, resonant, LocalizationSchedule, Mollifier,
};
use crate::trees::Enhancement;

/// Which evolution equation a term is assigned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Part {
    /// Rough terms, solved by `L φ + Φ = 0`.
    Phi,
    /// Remaining terms, solved together with the `ψ`-polynomial.
    Psi,
}

#[derive(Debug, Clone)]
pub struct Term {
    pub name: String,
    pub part: Part,
    pub field: RealField,
}

/// Settings of one decomposition run.
#[derive(Debug, Clone)]
pub struct DecompositionSetup<'a> {
    pub spec: &'a NonlinearitySpec,
    pub tilde: &'a TildeF,
    pub rc: &'a RenormConstants,
    pub epsilon: f64,
    pub mu: f64,
    /// Order from which `G`-derivatives are kept as an unexpanded remainder.
    pub m1: usize,
    /// Base level `L` of the localization schedule.
    pub loc_base: i32,
    /// Absolute recombination tolerance per unit of `max(1, ‖u‖_∞)`.
    pub tolerance: f64,
}

/// Split `v = −⟨Ȳ²⟩ − ⟨Y³⟩ + φ + ψ` of a trajectory and its diagnostics.
#[derive(Debug, Clone)]
pub struct DecompositionState {
    pub v: SpaceTimeField,
    pub phi: SpaceTimeField,
    pub psi: SpaceTimeField,
    pub theta: SpaceTimeField,
    /// `Φ` and `Ψ` per frame, with the `ϑ`-resolved terms.
    pub phi_source: SpaceTimeField,
    pub psi_source: SpaceTimeField,
    /// `λ₃ψ³ + C₀ε^{(m−3)/2}ψ^m + Σ_l (a_l ∨ 0) ε^{(l−3)/2} ψ^l`.
    pub psi_poly: SpaceTimeField,
    pub lambda: LambdaVector,
    pub recombination_residual: f64,
    pub ansatz_residual: f64,
    /// `max_n ‖Φ + Ψ + P − N(v)‖_∞ / ‖N(v)‖_∞` with `N` evaluated directly.
    pub direct_rhs_residual: f64,
    /// Residuals of `Lφ + Φ = 0` and `Lψ + P + Ψ = 0` on the discrete operator.
    pub phi_equation_residual: f64,
    pub psi_equation_residual: f64,
    /// Sup over frames of every assembled term.
    pub term_norms: Vec<(String, Part, f64)>,
    /// `(l, a_l)` for the odd powers kept in the `ψ`-polynomial.
    pub odd_powers: Vec<(usize, f64)>,
}

struct Localized {
    gt: SpaceTimeField,
    le: SpaceTimeField,
}

struct Context<'a> {
    setup: &'a DecompositionSetup<'a>,
    p: &'a DyadicPartition,
    y: &'a SpaceTimeField,
    enh: &'a Enhancement,
    lambda: LambdaVector,
    y2: Localized,
    y1: Localized,
    y22: Localized,
    y31: Localized,
    y0c: SpaceTimeField,
    y0c_loc: Localized,
    yy: Localized,
    /// `(l, b_l, E(ε^{1/2}Y)^{m−l}, centred power, localized)` for `4 ≤ l ≤ m−1`.
    y1l: Vec<(usize, f64, SpaceTimeField, Localized)>,
    /// `(l, c_l, centred G^{(l)}/l!, localized)` for `4 ≤ l < m1`.
    y2l: Vec<(usize, f64, SpaceTimeField, Localized)>,
    /// `a_l` for `4 ≤ l ≤ m−1`.
    a: Vec<(usize, f64)>,
    /// Orders of `G` kept unexpanded.
    g_rest: Vec<usize>,
}

fn loc(f: &SpaceTimeField, sched: &LocalizationSchedule, p: &DyadicPartition) -> Result<Localized> {
    let (gt, le) = localize(f, sched, p)?;
    Ok(Localized { gt, le })
}

fn gaussian_moment(k: usize, sigma_sq: f64) -> f64 {
    if k % 2 == 1 {
        0.0
    } else {
        (1..k).step_by(2).map(|i| i as f64).product::<f64>() * sigma_sq.powi((k / 2) as i32)
    }
}

impl<'a> Context<'a> {
    fn new(
        setup: &'a DecompositionSetup<'a>,
        y: &'a SpaceTimeField,
        enh: &'a Enhancement,
        p: &'a DyadicPartition,
    ) -> Result<Self> {
        let f = |n: usize| setup.tilde.f.get(n).copied().unwrap_or(0.0);
        let lambda = lambda_vector([f(0), f(1), f(2), f(3)], setup.rc, setup.epsilon);
        let sched = LocalizationSchedule::for_field(setup.loc_base, y);
        let eps = setup.epsilon;
        let se = eps.sqrt();
        let s2 = setup.tilde.sigma_sq;
        let spec = setup.spec;
        let m = spec.m;
        let y0c = enh.y0.map(|v| v - lambda.lambda3);
        let mut y1l = Vec::new();
        let mut y2l = Vec::new();
        let mut a = Vec::new();
        let mut g_rest = Vec::new();
        let g_deg = spec.g_degree();
        for l in 4..m {
            let b = spec.c0 * binomial(m, l);
            let e = gaussian_moment(m - l, s2);
            let centred = y.map(|v| (se * v).powi((m - l) as i32) - e);
            let lc = loc(&centred, &sched, p)?;
            y1l.push((l, b, centred, lc));
            let c = if l < setup.m1 && l <= g_deg {
                gaussian_expectation(|z| spec.g_derivative(l, z), s2, spec.degree() + 2)? / factorial(l)
            } else {
                0.0
            };
            a.push((l, b * e + c));
        }
        for l in 4..setup.m1.min(g_deg + 1) {
            let c = gaussian_expectation(|z| spec.g_derivative(l, z), s2, spec.degree() + 2)? / factorial(l);
            let centred = y.map(|v| spec.g_derivative(l, se * v) / factorial(l) - c);
            let lc = loc(&centred, &sched, p)?;
            y2l.push((l, c, centred, lc));
        }
        for l in setup.m1.max(4)..=g_deg {
            g_rest.push(l);
        }
        Ok(Self {
            setup,
            p,
            y,
            enh,
            lambda,
            y2: loc(&enh.y2, &sched, p)?,
            y1: loc(&enh.y1, &sched, p)?,
            y22: loc(&enh.y22, &sched, p)?,
            y31: loc(&enh.y31, &sched, p)?,
            y0c_loc: loc(&y0c, &sched, p)?,
            y0c,
            yy: loc(y, &sched, p)?,
            y1l,
            y2l,
            a,
            g_rest,
        })
    }

    fn odd_powers(&self) -> Vec<(usize, f64)> {
        self.a.iter().filter(|(l, _)| l % 2 == 1).map(|(l, a)| (*l, a.max(0.0))).collect()
    }

    fn psi_poly(&self, psi: &RealField) -> RealField {
        let eps = self.setup.epsilon;
        let m = self.setup.spec.m;
        let c0 = self.setup.spec.c0;
        let l3 = self.lambda.lambda3;
        let odd = self.odd_powers();
        psi.map(|x| {
            let mut s = l3 * x.powi(3) + c0 * eps.powf((m as f64 - 3.0) / 2.0) * x.powi(m as i32);
            for (l, a) in &odd {
                s += a * eps.powf((*l as f64 - 3.0) / 2.0) * x.powi(*l as i32);
            }
            s
        })
    }

    /// `N(v)` evaluated directly from the raw Taylor expansion around `ε^{1/2}Y`.
    fn direct_rhs(&self, n: usize, v: &RealField) -> Result<RealField> {
        let eps = self.setup.epsilon;
        let se = eps.sqrt();
        let t = self.setup.tilde;
        let spec = self.setup.spec;
        let (f0, f1) = (t.f.first().copied().unwrap_or(0.0), t.f.get(1).copied().unwrap_or(0.0));
        let l2 = self.lambda.lambda2;
        let y = &self.y.frames()[n];
        let vals = y
            .values()
            .iter()
            .zip(v.values())
            .map(|(&yv, &vv)| {
                let x = se * yv;
                let y2 = t.derivative(1, x) / (3.0 * eps);
                let y1 = t.derivative(2, x) / (6.0 * se);
                let y0 = t.derivative(3, x) / 6.0;
                let mut s = 3.0 * y2 * vv + 3.0 * y1 * vv * vv + y0 * vv.powi(3);
                s += eps.powf(-1.5) * f0 + f1 / eps * (yv + vv) + l2 * (2.0 * yv * vv + vv * vv);
                for k in 4..=spec.degree() {
                    s += eps.powf((k as f64 - 3.0) / 2.0) * spec.derivative(k, x) / factorial(k) * vv.powi(k as i32);
                }
                s
            })
            .collect();
        RealField::new(*y.grid(), vals)
    }

    /// Every `Φ`/`Ψ` term at frame `n`. With `vtheta = Some(v ⋔ ⟨Y²⟩)` the
    /// `ϑ`-terms are resolved; otherwise they enter as `3Y²∘φ + 9Y²∘(v≺⟨Y²⟩)`.
    fn terms(&self, n: usize, phi: &RealField, psi: &RealField, vtheta: Option<&RealField>) -> Result<Vec<Term>> {
        let p = self.p;
        let e = self.enh;
        let eps = self.setup.epsilon;
        let lam = &self.lambda;
        let fr = |f: &SpaceTimeField| f.frames()[n].clone();
        let (y, y0c) = (fr(self.y), fr(&self.y0c));
        let (y1, y2) = (fr(&e.y1), fr(&e.y2));
        let (big_a, b3, i2) = (fr(&e.int_ybar2), fr(&e.int_y3), fr(&e.int_y2));
        let (y22, y31, y32, yb22) = (fr(&e.y22), fr(&e.y31), fr(&e.y32), fr(&e.ybar22));
        let s = phi.add(psi)?;
        let ab3 = big_a.add(&b3)?;
        let a = s.sub(&big_a)?;
        let v = a.sub(&b3)?;
        let b = phi.sub(&ab3)?;
        let mut out = Vec::new();
        let mut push = |name: &str, part: Part, field: RealField| out.push(Term { name: name.into(), part, field });
        use Part::{Phi as M, Psi as B};

        // 3 Y² v
        let (y2g, y2l) = (fr(&self.y2.gt), fr(&self.y2.le));
        push("-3 Y2 > (IYbar2 + IY3)", M, para_gt(&y2, &ab3, p)?.scale(-3.0));
        push("3 V>Y2 > s", M, para_gt(&y2g, &s, p)?.scale(3.0));
        push("3 V<=Y2 > s", B, para_gt(&y2l, &s, p)?.scale(3.0));
        push("-3 Y2 < (IYbar2 + IY3)", M, para_lt(&y2, &ab3, p)?.scale(-3.0));
        push("3 V>Y2 < s", M, para_lt(&y2g, &s, p)?.scale(3.0));
        push("3 V<=Y2 < s", B, para_lt(&y2l, &s, p)?.scale(3.0));
        push("-3 Y32 - 3 Ybar22", M, y32.add(&yb22)?.scale(-3.0));
        let v_lt_i2 = para_lt(&v, &i2, p)?;
        match vtheta {
            Some(vt) => {
                let theta = phi.add(&vt.scale(3.0))?;
                push("3 Y2 o theta", B, resonant(&y2, &theta, p)?.scale(3.0));
                let d = resonant(&y2, vt, p)?.sub(&resonant(&y2, &v_lt_i2, p)?)?;
                push("-9 Y2 o (v mod< IY2 - v < IY2)", B, d.scale(-9.0));
            }
            None => {
                let f = resonant(&y2, phi, p)?.scale(3.0).add(&resonant(&y2, &v_lt_i2, p)?.scale(9.0))?;
                push("3 Y2 o phi + 9 Y2 o (v < IY2)", B, f);
            }
        }
        push("-9 com(v, IY2, Y2)", B, commutator(&v, &i2, &y2, p)?.scale(-9.0));
        let (y22g, y22l) = (fr(&self.y22.gt), fr(&self.y22.le));
        push("9 (IYbar2 + IY3) Y22", M, ab3.mul(&y22)?.scale(9.0));
        push("-9 s < V>Y22", M, para_lt(&s, &y22g, p)?.scale(-9.0));
        push("-9 s < V<=Y22", B, para_lt(&s, &y22l, p)?.scale(-9.0));
        push("-9 s >= Y22", B, para_ge(&s, &y22, p)?.scale(-9.0));
        push("3 Y2 o psi", B, resonant(&y2, psi, p)?.scale(3.0));

        // 3 Y¹ v²
        let (y1g, y1l) = (fr(&self.y1.gt), fr(&self.y1.le));
        let b3sq = b3.mul(&b3)?;
        push("3 Y1 > IY3^2", M, para_gt(&y1, &b3sq, p)?.scale(3.0));
        push("3 Y1 < IY3^2", M, para_lt(&y1, &b3sq, p)?.scale(3.0));
        push("6 IY3 Y31", M, b3.mul(&y31)?.scale(6.0));
        push("6 com(IY3, IY3, Y1)", B, commutator(&b3, &b3, &y1, p)?.scale(6.0));
        let r1 = b3sq.sub(&para_lt(&b3, &b3, p)?.scale(2.0))?;
        push("3 Y1 o R1(IY3)", M, resonant(&y1, &r1, p)?.scale(3.0));
        let b3a = b3.mul(&big_a)?;
        let b3s = b3.mul(&s)?;
        push("6 Y1 > (IY3 IYbar2)", M, para_gt(&y1, &b3a, p)?.scale(6.0));
        push("-6 V>Y1 > (IY3 s)", M, para_gt(&y1g, &b3s, p)?.scale(-6.0));
        push("-6 V<=Y1 > (IY3 s)", B, para_gt(&y1l, &b3s, p)?.scale(-6.0));
        push("6 Y1 < (IY3 IYbar2)", M, para_lt(&y1, &b3a, p)?.scale(6.0));
        push("-6 V>Y1 < (IY3 s)", M, para_lt(&y1g, &b3s, p)?.scale(-6.0));
        push("-6 V<=Y1 < (IY3 s)", B, para_lt(&y1l, &b3s, p)?.scale(-6.0));
        push("-6 Y1 o (IY3 <= a)", B, resonant(&y1, &para_le(&b3, &a, p)?, p)?.scale(-6.0));
        let (y31g, y31l) = (fr(&self.y31.gt), fr(&self.y31.le));
        push("6 IYbar2 Y31", M, big_a.mul(&y31)?.scale(6.0));
        push("-6 s < V>Y31", M, para_lt(&s, &y31g, p)?.scale(-6.0));
        push("-6 s < V<=Y31", B, para_lt(&s, &y31l, p)?.scale(-6.0));
        push("-6 s >= Y31", B, para_ge(&s, &y31, p)?.scale(-6.0));
        push("-6 com(a, IY3, Y1)", B, commutator(&a, &b3, &y1, p)?.scale(-6.0));
        let asq = a.mul(&a)?;
        push("3 V>Y1 > a^2", M, para_gt(&y1g, &asq, p)?.scale(3.0));
        push("3 V<=Y1 > a^2", B, para_gt(&y1l, &asq, p)?.scale(3.0));
        push("3 Y1 <= a^2", B, para_le(&y1, &asq, p)?.scale(3.0));

        // Y∅ v³
        let v3 = v.map(|x| x.powi(3));
        push("V>(Y0 - l3) > v^3", M, para_gt(&fr(&self.y0c_loc.gt), &v3, p)?);
        push("(Y0 - l3) <= v^3", B, para_le(&y0c, &v3, p)?);
        push("V<=(Y0 - l3) > v^3", B, para_gt(&fr(&self.y0c_loc.le), &v3, p)?);
        let l3 = lam.lambda3;
        push("l3 b^3", B, b.map(|x| l3 * x.powi(3)));
        push("3 l3 b^2 psi", B, b.zip_map(psi, |x, q| 3.0 * l3 * x * x * q)?);
        push("3 l3 b psi^2", B, b.zip_map(psi, |x, q| 3.0 * l3 * x * q * q)?);

        // λ-terms
        let l2 = lam.lambda2;
        push("l1 Y", M, y.scale(lam.lambda1));
        push("l0", B, y.map(|_| lam.lambda0));
        push("l2 d31", B, y.map(|_| l2 * self.setup.rc.d31));
        push("l1 v", B, v.scale(lam.lambda1));
        push("-2 l2 Y IYbar2", M, y.mul(&big_a)?.scale(-2.0 * l2));
        let by = crate::paracalc::bony(&b3, &y, p)?;
        push("-2 l2 (IY3 < Y + IY3 > Y + IY3 o Y)", M, by.lt.add(&by.gt)?.add(&by.res)?.scale(-2.0 * l2));
        push("2 l2 V>Y > s", M, para_gt(&fr(&self.yy.gt), &s, p)?.scale(2.0 * l2));
        push("2 l2 V<=Y > s", B, para_gt(&fr(&self.yy.le), &s, p)?.scale(2.0 * l2));
        push("2 l2 Y <= s", B, para_le(&y, &s, p)?.scale(2.0 * l2));
        push("l2 v^2", B, v.map(|x| l2 * x * x));

        // remainder R(v)
        let spec = self.setup.spec;
        let m = spec.m;
        let pm = eps.powf((m as f64 - 3.0) / 2.0);
        let c0 = spec.c0;
        push(
            "C0 eps^((m-3)/2) sum_k C(m,k) b^k psi^(m-k)",
            B,
            b.zip_map(psi, |x, q| {
                c0 * pm * (1..=m).map(|k| binomial(m, k) * x.powi(k as i32) * q.powi((m - k) as i32)).sum::<f64>()
            })?,
        );
        for (l, bl, centred, lc) in &self.y1l {
            let pl = eps.powf((*l as f64 - 3.0) / 2.0);
            let vl = v.map(|x| pl * x.powi(*l as i32));
            push(&format!("b{l} Y1[{}] <= eps v^{l}", m - l), B, para_le(&fr(centred), &vl, p)?.scale(*bl));
            push(&format!("b{l} V<=Y1[{}] > eps v^{l}", m - l), B, para_gt(&fr(&lc.le), &vl, p)?.scale(*bl));
            push(&format!("b{l} V>Y1[{}] > eps v^{l}", m - l), M, para_gt(&fr(&lc.gt), &vl, p)?.scale(*bl));
        }
        for (l, _, centred, lc) in &self.y2l {
            let pl = eps.powf((*l as f64 - 3.0) / 2.0);
            let vl = v.map(|x| pl * x.powi(*l as i32));
            push(&format!("Y2[{l}] <= eps v^{l}"), B, para_le(&fr(centred), &vl, p)?);
            push(&format!("V<=Y2[{l}] > eps v^{l}"), B, para_gt(&fr(&lc.le), &vl, p)?);
            push(&format!("V>Y2[{l}] > eps v^{l}"), M, para_gt(&fr(&lc.gt), &vl, p)?);
        }
        let se = eps.sqrt();
        for l in &self.g_rest {
            let pl = eps.powf((*l as f64 - 3.0) / 2.0);
            let g = y.map(|x| spec.g_derivative(*l, se * x) / factorial(*l));
            push(&format!("G{l} remainder"), B, g.zip_map(&v, |gv, x| pl * gv * x.powi(*l as i32))?);
        }
        for (l, al) in &self.a {
            let pl = eps.powf((*l as f64 - 3.0) / 2.0);
            if l % 2 == 0 {
                push(&format!("a{l} eps v^{l}"), B, v.map(|x| al * pl * x.powi(*l as i32)));
            } else {
                let ap = al.max(0.0);
                let an = al.min(0.0);
                let lu = *l;
                push(
                    &format!("(a{l} v 0) expansion"),
                    B,
                    b.zip_map(psi, |x, q| {
                        ap * pl
                            * (0..lu).map(|k| binomial(lu, k) * x.powi((lu - k) as i32) * q.powi(k as i32)).sum::<f64>()
                    })?,
                );
                push(&format!("(a{l} ^ 0) eps v^{l}"), B, v.map(|x| an * pl * x.powi(lu as i32)));
            }
        }
        Ok(out)
    }
}

fn sum_part(terms: &[Term], part: Part, grid: crate::grid::Grid) -> RealField {
    let mut acc = RealField::zeros(grid);
    for t in terms.iter().filter(|t| t.part == part) {
        for (a, b) in acc.values_mut().iter_mut().zip(t.field.values()) {
            *a += b;
        }
    }
    acc
}

/// Splits a trajectory `u` driven by the noise whose stationary field is `y`
/// into `−⟨Ȳ²⟩ − ⟨Y³⟩ + φ + ψ`, with `φ(0) = 0`, `ψ(0) = u(0) − Y(0)`.
pub fn decompose(
    u: &SpaceTimeField,
    y: &SpaceTimeField,
    enh: &Enhancement,
    setup: &DecompositionSetup,
    p: &DyadicPartition,
) -> Result<DecompositionState> {
    u.check_compatible(y)?;
    let grid = *u.grid();
    let ctx = Context::new(setup, y, enh, p)?;
    let stepper = HeatStepper::new(grid, u.dt(), setup.mu);
    let nt = u.n_frames();
    let mut phi = vec![RealField::zeros(grid)];
    let mut psi = vec![u.frames()[0].sub(&y.frames()[0])?];
    for n in 0..nt - 1 {
        let terms = ctx.terms(n, &phi[n], &psi[n], None)?;
        let big_phi = sum_part(&terms, Part::Phi, grid);
        let big_psi = sum_part(&terms, Part::Psi, grid).add(&ctx.psi_poly(&psi[n]))?;
        phi.push(stepper.step(&phi[n], &big_phi.scale(-1.0))?);
        psi.push(stepper.step(&psi[n], &big_psi.scale(-1.0))?);
    }
    let phi = SpaceTimeField::new(grid, u.dt(), phi)?;
    let psi = SpaceTimeField::new(grid, u.dt(), psi)?;
    let v = phi.add(&psi)?.sub(&enh.int_ybar2)?.sub(&enh.int_y3)?;

    let recombination_residual = y
        .add(&v)?
        .sub(u)?
        .frames()
        .iter()
        .fold(0.0f64, |m, f| m.max(f.max_abs()));
    let vt = modified_para(&v, &enh.int_y2, &Mollifier::new()?, p)?.field;
    let theta = phi.add(&vt.scale(3.0))?;
    let ansatz_residual = phi
        .sub(&theta)?
        .add(&vt.scale(3.0))?
        .frames()
        .iter()
        .fold(0.0f64, |m, f| m.max(f.max_abs()));

    let mut phi_src = Vec::with_capacity(nt);
    let mut psi_src = Vec::with_capacity(nt);
    let mut poly = Vec::with_capacity(nt);
    let mut norms: Vec<(String, Part, f64)> = Vec::new();
    let mut direct_rhs_residual = 0.0f64;
    for n in 0..nt {
        let terms = ctx.terms(n, &phi.frames()[n], &psi.frames()[n], Some(&vt.frames()[n]))?;
        if norms.is_empty() {
            norms = terms.iter().map(|t| (t.name.clone(), t.part, 0.0)).collect();
        }
        for (slot, t) in norms.iter_mut().zip(&terms) {
            slot.2 = slot.2.max(t.field.max_abs());
        }
        let fp = sum_part(&terms, Part::Phi, grid);
        let fs = sum_part(&terms, Part::Psi, grid);
        let pp = ctx.psi_poly(&psi.frames()[n]);
        let direct = ctx.direct_rhs(n, &v.frames()[n])?;
        let total = fp.add(&fs)?.add(&pp)?;
        let scale = direct.max_abs().max(f64::MIN_POSITIVE);
        direct_rhs_residual = direct_rhs_residual.max(total.sub(&direct)?.max_abs() / scale);
        phi_src.push(fp);
        psi_src.push(fs);
        poly.push(pp);
    }
    let phi_source = SpaceTimeField::new(grid, u.dt(), phi_src)?;
    let psi_source = SpaceTimeField::new(grid, u.dt(), psi_src)?;
    let psi_poly = SpaceTimeField::new(grid, u.dt(), poly)?;

    let mut phi_eq = 0.0f64;
    let mut psi_eq = 0.0f64;
    for n in 0..nt - 1 {
        let lp = stepper.source(&phi.frames()[n], &phi.frames()[n + 1])?;
        let ls = stepper.source(&psi.frames()[n], &psi.frames()[n + 1])?;
        let rp = lp.add(&phi_source.frames()[n])?;
        let rs = ls.add(&psi_source.frames()[n])?.add(&psi_poly.frames()[n])?;
        let sp = lp.max_abs().max(phi_source.frames()[n].max_abs()).max(1.0);
        let ss = ls.max_abs().max(psi_source.frames()[n].max_abs()).max(1.0);
        phi_eq = phi_eq.max(rp.max_abs() / sp);
        psi_eq = psi_eq.max(rs.max_abs() / ss);
    }

    let u_scale = u.max_abs().max(1.0);
    if recombination_residual > setup.tolerance * u_scale {
        return Err(Error::Consistency(format!(
            "recombination residual {recombination_residual:e} exceeds {:e}",
            setup.tolerance * u_scale
        )));
    }
    Ok(DecompositionState {
        v,
        phi,
        psi,
        theta,
        phi_source,
        psi_source,
        psi_poly,
        lambda: ctx.lambda,
        recombination_residual,
        ansatz_residual,
        direct_rhs_residual,
        phi_equation_residual: phi_eq,
        psi_equation_residual: psi_eq,
        term_norms: norms,
        odd_powers: ctx.odd_powers(),
    })
}

/// Settings of an ε-sweep against the classical cubic reference
/// `L u + λ₃,ε u³ = η_ε` driven by the same noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergeStudy {
    pub eps_grid: Vec<f64>,
    pub dim: usize,
    pub n_points: usize,
    pub box_length: f64,
    pub final_time: f64,
    /// Spacing of the common observation times; must be a multiple of every `ε²/8`.
    pub obs_dt: f64,
    pub kappa: f64,
    pub weight: Weight,
    pub noise: crate::noise::NoiseSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergeRow {
    pub epsilon: f64,
    pub seed: u64,
    pub lambda3: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergeReport {
    pub rows: Vec<ConvergeRow>,
    /// `(ε, median distance)` in the order of the ε grid.
    pub medians: Vec<(f64, f64)>,
    /// Slope of `log₂ median` against `log₂ ε`.
    pub slope: Option<f64>,
    /// Medians strictly decrease as ε decreases.
    pub monotone: bool,
}

fn observe(f: &SpaceTimeField, obs_dt: f64) -> Result<SpaceTimeField> {
    let ratio = obs_dt / f.dt();
    let stride = ratio.round();
    if stride < 1.0 || (ratio - stride).abs() > 1e-9 * ratio {
        return Err(Error::Precondition(format!("observation step {obs_dt} is not a multiple of {}", f.dt())));
    }
    let frames: Vec<RealField> = f.frames().iter().step_by(stride as usize).cloned().collect();
    if frames.len() < 2 {
        return Err(Error::Precondition("fewer than two observation times".into()));
    }
    SpaceTimeField::new(*f.grid(), obs_dt, frames)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `‖u_ε − u_ref‖_{C_T C^{−κ}(weight)}` per (ε, seed), parallel over pairs.
pub fn converge_sweep(
    study: &ConvergeStudy,
    family: &(dyn Fn(f64) -> Result<NonlinearitySpec> + Sync),
    seeds: &[u64],
    u0: &RealField,
) -> Result<ConvergeReport> {
    use rayon::prelude::*;
    let grid = crate::grid::Grid::new(study.dim, study.n_points, study.box_length)?;
    u0.check_grid(&RealField::zeros(grid))?;
    let p = DyadicPartition::new(&grid);
    let jobs: Vec<(f64, u64)> = study.eps_grid.iter().flat_map(|e| seeds.iter().map(move |s| (*e, *s))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(eps, seed)| -> Result<ConvergeRow> {
            let spec = family(eps)?;
            let sim = simulate_u_eps(eps, &spec, &study.noise, u0, seed, study.final_time)?;
            let kernel = crate::noise::NoiseKernel::new(&study.noise, &grid, sim.eta.dt(), eps)?;
            let chaos = crate::chaos::chaos_coeffs(&spec, kernel.sigma_sq(), spec.degree())?;
            let lambda3 = chaos.coeff(3);
            let reference = NonlinearitySpec::new(lambda3, 3, vec![])?;
            let u_ref = solve_classical(&reference, &sim.eta, u0, study.noise.mu, sim.eta.dt())?;
            let diff = observe(&sim.u.sub(&u_ref)?, study.obs_dt)?;
            let distance = crate::besov::ct_besov_norm(&diff, -study.kappa, &study.weight, &p)?;
            Ok(ConvergeRow { epsilon: eps, seed, lambda3, distance })
        })
        .collect::<Result<Vec<_>>>()?;
    let medians: Vec<(f64, f64)> = study
        .eps_grid
        .iter()
        .map(|e| (*e, median(rows.iter().filter(|r| r.epsilon == *e).map(|r| r.distance).collect())))
        .collect();
    let mut by_eps = medians.clone();
    by_eps.sort_by(|a, b| b.0.total_cmp(&a.0));
    let monotone = by_eps.windows(2).all(|w| w[1].1 < w[0].1);
    let pts: Vec<(f64, f64)> = medians.iter().filter(|m| m.1 > 0.0).map(|m| (m.0.log2(), m.1.log2())).collect();
    let slope = (pts.len() >= 2).then(|| {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        crate::trees::linear_fit(&x, &y).0
    });
    Ok(ConvergeReport { rows, medians, slope, monotone })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaos::chaos_coeffs;
    use crate::grid::Grid;
    use crate::noise::NoiseSpec;
    use crate::trees::build_enhancement;

    fn rk4_scalar(u0: f64, t: f64, mu: f64, c0: f64, m: i32) -> f64 {
        let f = |u: f64| -mu * u - c0 * u.powi(m);
        let n = 200_000;
        let h = t / n as f64;
        let mut u = u0;
        for _ in 0..n {
            let k1 = f(u);
            let k2 = f(u + 0.5 * h * k1);
            let k3 = f(u + 0.5 * h * k2);
            let k4 = f(u + h * k3);
            u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        u
    }

    #[test]
    fn zero_data_stays_zero() {
        let g = Grid::new(1, 16, 4.0).unwrap();
        let eta = SpaceTimeField::zeros(g, 0.1, 5).unwrap();
        let u = solve_classical(&NonlinearitySpec::monomial(3).unwrap(), &eta, &RealField::zeros(g), 1.0, 0.01).unwrap();
        assert_eq!(u.max_abs(), 0.0);
    }

    #[test]
    fn constant_data_follows_scalar_ode() {
        let g = Grid::new(1, 8, 4.0).unwrap();
        let eta = SpaceTimeField::zeros(g, 0.25, 3).unwrap();
        let spec = NonlinearitySpec::new(1.0, 3, vec![]).unwrap();
        let u = solve_classical(&spec, &eta, &RealField::constant(g, 1.5), 1.0, 0.25 / 4096.0).unwrap();
        let exact = rk4_scalar(1.5, 0.5, 1.0, 1.0, 3);
        let got = u.frames()[2].values()[0];
        assert!((got - exact).abs() < 1e-4, "{got} vs {exact}");
    }

    #[test]
    fn divergence_guard_fires() {
        let g = Grid::new(1, 8, 4.0).unwrap();
        let eta = SpaceTimeField::zeros(g, 0.5, 3).unwrap();
        let spec = NonlinearitySpec::new(1.0, 3, vec![]).unwrap();
        let r = solve_classical(&spec, &eta, &RealField::constant(g, 50.0), 1.0, 0.5);
        assert!(matches!(r, Err(Error::Divergence(_))));
    }

    #[test]
    fn step_must_divide_frames() {
        let g = Grid::new(1, 8, 4.0).unwrap();
        let eta = SpaceTimeField::zeros(g, 0.5, 3).unwrap();
        let spec = NonlinearitySpec::monomial(3).unwrap();
        assert!(solve_classical(&spec, &eta, &RealField::zeros(g), 1.0, 0.3).is_err());
    }

    #[test]
    fn linear_rescaled_model_matches_modewise_recursion() {
        let g = Grid::new(1, 32, std::f64::consts::TAU).unwrap();
        let eps = 0.5;
        let dt = eps * eps / 8.0;
        let eta = SpaceTimeField::from_fn(g, dt, 9, |t, x| (2.0 * x[0]).sin() * (1.0 + t) + (5.0 * x[0]).cos()).unwrap();
        let u0 = RealField::from_fn(g, |x| x[0].cos());
        let spec = NonlinearitySpec::new(1.0, 1, vec![]).unwrap();
        let u = simulate_with_noise(&spec, eps, &eta, &u0, 1.0).unwrap();
        let st = HeatStepper::new(g, dt, 1.0);
        // per mode: û ← (E − S/ε) û + S η̂, realised through the stepper on the linear forcing
        let mut w = u0.clone();
        for n in 0..8 {
            let f = eta.frames()[n].sub(&w.scale(1.0 / eps)).unwrap();
            w = st.step(&w, &f).unwrap();
            assert!(w.sub(&u.frames()[n + 1]).unwrap().max_abs() < 1e-12);
        }
        let mode = |f: &RealField, k: f64| -> f64 {
            f.values().iter().enumerate().map(|(i, v)| v * (k * g.coords(i)[0]).sin()).sum::<f64>() * 2.0 / 32.0
        };
        let lam = 4.0 + 1.0;
        let e = (-dt * lam).exp();
        let s = (1.0 - e) / lam;
        let mut c = 0.0f64;
        for n in 0..8 {
            c = (e - s / eps) * c + s * (1.0 + n as f64 * dt);
        }
        assert!((mode(&u.frames()[8], 2.0) - c).abs() < 1e-10);
    }

    #[test]
    fn unit_epsilon_is_the_classical_equation() {
        let g = Grid::new(1, 16, 8.0).unwrap();
        let eta = SpaceTimeField::from_fn(g, 0.1, 6, |t, x| (x[0] + t).sin()).unwrap();
        let u0 = RealField::from_fn(g, |x| 0.5 * x[0].cos());
        let spec = NonlinearitySpec::new(1.0, 5, vec![0.1, -0.2, 0.3]).unwrap();
        let a = simulate_with_noise(&spec, 1.0, &eta, &u0, 1.0).unwrap();
        let b = solve_classical(&spec, &eta, &u0, 1.0, 0.1).unwrap();
        assert!(a.sub(&b).unwrap().max_abs() < 1e-12);
    }

    fn decomposition_run(spec: NonlinearitySpec, m1: usize, seed: u64) -> DecompositionState {
        let g = Grid::new(1, 64, std::f64::consts::TAU).unwrap();
        let p = DyadicPartition::new(&g);
        let eps = 0.5;
        let noise = NoiseSpec::default();
        let u0 = RealField::from_fn(g, |x| 0.3 * x[0].sin());
        let sim = simulate_u_eps(eps, &spec, &noise, &u0, seed, 0.5).unwrap();
        let kernel = crate::noise::NoiseKernel::new(&noise, &g, eps * eps / 8.0, eps).unwrap();
        let s2 = kernel.sigma_sq();
        let chaos = chaos_coeffs(&spec, s2, spec.degree()).unwrap();
        let tilde = TildeF::new(&spec, &chaos).unwrap();
        let mut rc = RenormConstants::zero();
        rc.d22 = 0.7;
        rc.d31 = -0.4;
        rc.d22_bar = 0.2;
        rc.d32 = 0.3;
        rc.d32_prime = 2.0 * rc.d31 + 3.0 * rc.d22;
        let enh = build_enhancement(&sim.y, &tilde, Some(&rc), eps, noise.mu, &p).unwrap();
        let setup = DecompositionSetup {
            spec: &spec,
            tilde: &tilde,
            rc: &rc,
            epsilon: eps,
            mu: noise.mu,
            m1,
            loc_base: 1,
            tolerance: 1e-9,
        };
        decompose(&sim.u, &sim.y, &enh, &setup, &p).unwrap()
    }

    #[test]
    fn decomposition_recombines_and_matches_direct_rhs() {
        for (spec, m1) in [
            (NonlinearitySpec::monomial(5).unwrap(), 4),
            (NonlinearitySpec::new(1.0, 5, vec![0.2, -0.3, 0.1, 0.4, 0.25]).unwrap(), 5),
            (NonlinearitySpec::new(1.0, 5, vec![0.2, -0.3, 0.1, 0.4, 0.25]).unwrap(), 4),
            (NonlinearitySpec::new(0.5, 7, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.3]).unwrap(), 6),
        ] {
            let st = decomposition_run(spec, m1, 11);
            assert!(st.recombination_residual < 1e-9, "{}", st.recombination_residual);
            assert!(st.direct_rhs_residual < 1e-8, "{}", st.direct_rhs_residual);
            assert!(st.phi_equation_residual < 1e-8 && st.psi_equation_residual < 1e-8);
            assert!(st.ansatz_residual < 1e-12);
            assert!(st.phi.frames()[0].max_abs() == 0.0);
        }
    }

    #[test]
    fn stopping_time_is_monotone_in_m() {
        let st = decomposition_run(NonlinearitySpec::monomial(5).unwrap(), 4, 3);
        let g = *st.phi.grid();
        let mon = NormMonitor::new(&st.phi, &st.psi, &st.theta, 0.5, 5, &AnalysisParams::default(), &DyadicPartition::new(&g))
            .unwrap();
        let mut last = 0.0;
        for k in -8..8 {
            let t = mon.stopping_time(2f64.powi(k));
            assert!(t >= last);
            last = t;
        }
    }

    fn mp_input() -> MaxPrincipleInput {
        MaxPrincipleInput { lambda3: 1.0, c0: 1.0, a1: 0.0, m: 5, l: 5, epsilon: 0.25, mu: 1.0, nu: 1.0, delta: 0.5 }
    }

    #[test]
    fn zero_trajectory_has_margin_m_delta() {
        let g = Grid::new(1, 16, 8.0).unwrap();
        let z = SpaceTimeField::zeros(g, 0.1, 4).unwrap();
        let r = max_principle_check(&z, &z, &mp_input()).unwrap();
        assert!((r.margin - r.m_delta).abs() < 1e-12 && r.holds());
    }

    #[test]
    fn inconsistent_pair_is_rejected() {
        let g = Grid::new(1, 16, 8.0).unwrap();
        let z = SpaceTimeField::zeros(g, 0.1, 4).unwrap();
        let one = z.map(|_| 1.0);
        assert!(matches!(max_principle_check(&z, &one, &mp_input()), Err(Error::Precondition(_))));
    }

    #[test]
    fn scalar_forcing_sweep_keeps_nonnegative_margin() {
        let g = Grid::new(1, 8, 8.0).unwrap();
        let inp = mp_input();
        let st = HeatStepper::new(g, 0.001, inp.mu);
        for force in [0.0, 0.5, 2.0, 10.0, 100.0, 1000.0] {
            let mut psi = vec![RealField::constant(g, 0.2)];
            let src = RealField::constant(g, force);
            for n in 0..1000 {
                let rhs = src.sub(&psi[n].map(|x| max_principle_poly(&inp, x))).unwrap();
                psi.push(st.step(&psi[n], &rhs).unwrap());
            }
            let psi = SpaceTimeField::new(g, 0.001, psi).unwrap();
            let source = psi.map(|_| force);
            let r = max_principle_check(&psi, &source, &inp).unwrap();
            assert!(r.holds(), "force {force}: {r:?}");
        }
    }
}
