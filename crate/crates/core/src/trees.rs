//! Enhanced-noise trees built from the stationary field `Y_ε`, the
//! λ-weighted limit enhancement, block-decay regularity fits and the
//! small-ε decay statistics of the level-zero tree.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::besov::{ct_besov_norm, DyadicPartition, Weight};
use crate::chaos::{chaos_coeffs, hermite, LambdaVector, NonlinearitySpec, RenormConstants, TildeF};
use crate::error::{Error, Result};
use crate::grid::{duhamel_solve, RealField, SpaceTimeField};
use crate::noise::{mean_se, sample_eta, GaussianEnsemble, NoiseKernel, NoiseSpec};
use crate::paracalc::resonant;

/// Component names in enhancement order.
pub const COMPONENT_NAMES: [&str; 9] = ["Y0", "Y1", "Y2", "Ybar2", "IY3", "Y31", "Y22", "Ybar22", "Y32"];

/// Target homogeneities `α_τ` for a given `κ`, in enhancement order.
pub fn homogeneities(kappa: f64) -> [f64; 9] {
    [
        -kappa,
        -0.5 - kappa,
        -1.0 - kappa,
        -1.0 - kappa,
        0.5 - kappa,
        -kappa,
        -kappa,
        -kappa,
        -0.5 - kappa,
    ]
}

/// The nine enhanced-noise components plus the auxiliary integrated trees.
#[derive(Debug, Clone)]
pub struct Enhancement {
    pub y0: SpaceTimeField,
    pub y1: SpaceTimeField,
    pub y2: SpaceTimeField,
    pub ybar2: SpaceTimeField,
    pub int_y3: SpaceTimeField,
    pub y31: SpaceTimeField,
    pub y22: SpaceTimeField,
    pub ybar22: SpaceTimeField,
    pub y32: SpaceTimeField,
    /// `⟨Y²⟩` with `L⟨Y²⟩ = Y²`, zero at `t = 0`.
    pub int_y2: SpaceTimeField,
    /// `⟨Ȳ²⟩` with `L⟨Ȳ²⟩ = Ȳ²`, zero at `t = 0`.
    pub int_ybar2: SpaceTimeField,
    /// Cherry `Y³ = ε^{−3/2} F̃(ε^{1/2} Y)`.
    pub y3: SpaceTimeField,
}

impl Enhancement {
    pub fn components(&self) -> [&SpaceTimeField; 9] {
        [
            &self.y0,
            &self.y1,
            &self.y2,
            &self.ybar2,
            &self.int_y3,
            &self.y31,
            &self.y22,
            &self.ybar22,
            &self.y32,
        ]
    }
}

fn resonant_st(a: &SpaceTimeField, b: &SpaceTimeField, p: &DyadicPartition) -> Result<SpaceTimeField> {
    a.zip_frames(b, |x, y| resonant(x, y, p))
}

/// Builds the enhancement from one realization of `Y_ε`.
///
/// `rc` must come from the same `ε` and variance as `tilde`; pass `None` to
/// get a dependency error instead of silently unrenormalized products.
pub fn build_enhancement(
    y: &SpaceTimeField,
    tilde: &TildeF,
    rc: Option<&RenormConstants>,
    epsilon: f64,
    mu: f64,
    p: &DyadicPartition,
) -> Result<Enhancement> {
    let rc = rc.ok_or_else(|| Error::Dependency("renormalization constants are required".into()))?;
    let se = epsilon.sqrt();
    let var_y = tilde.sigma_sq / epsilon;
    let f2 = tilde.f.get(2).copied().unwrap_or(0.0);
    let at = |k: usize, c: f64| y.map(|v| c * tilde.derivative(k, se * v));
    let y0 = at(3, 1.0 / 6.0);
    let y1 = at(2, epsilon.powf(-0.5) / 6.0);
    let y2 = at(1, 1.0 / (3.0 * epsilon));
    let y3 = at(0, epsilon.powf(-1.5));
    let ybar2 = y.map(|v| epsilon.powf(-0.5) * f2 * hermite(2, v, var_y));
    let zero = RealField::zeros(*y.grid());
    let int_y3 = duhamel_solve(&y3, mu, &zero)?;
    let int_y2 = duhamel_solve(&y2, mu, &zero)?;
    let int_ybar2 = duhamel_solve(&ybar2, mu, &zero)?;
    let y31 = resonant_st(&int_y3, &y1, p)?.map(|v| v - rc.d31);
    let y22 = resonant_st(&int_y2, &y2, p)?.map(|v| v - rc.d22);
    let ybar22 = resonant_st(&int_ybar2, &y2, p)?.map(|v| v - rc.d22_bar);
    let mut y32 = resonant_st(&int_y3, &y2, p)?.map(|v| v - rc.d32);
    y32.axpy(-rc.d32_prime, y)?;
    Ok(Enhancement { y0, y1, y2, ybar2, int_y3, y31, y22, ybar22, y32, int_y2, int_ybar2, y3 })
}

/// Trees of a reference Gaussian field `X` used by the limit enhancement.
#[derive(Debug, Clone)]
pub struct LimitTrees {
    pub x: SpaceTimeField,
    pub wick2: SpaceTimeField,
    pub int3: SpaceTimeField,
    pub int2: SpaceTimeField,
    pub x31: SpaceTimeField,
    pub x22: SpaceTimeField,
    pub x32: SpaceTimeField,
}

/// `⟨X²⟩ ∘ ⟦X²⟧` for one realization (before subtracting `b/3`).
pub fn raw_x22(x: &SpaceTimeField, var_x: f64, mu: f64, p: &DyadicPartition) -> Result<SpaceTimeField> {
    let wick2 = x.map(|v| hermite(2, v, var_x));
    let int2 = duhamel_solve(&wick2, mu, &RealField::zeros(*x.grid()))?;
    resonant_st(&int2, &wick2, p)
}

/// Builds the reference trees with `⟦X^n⟧ = H_n(X, var_x)` and the
/// per-frame constant `b(t_n)` given in `b`.
pub fn build_limit_trees(
    x: &SpaceTimeField,
    var_x: f64,
    b: &[f64],
    mu: f64,
    p: &DyadicPartition,
) -> Result<LimitTrees> {
    if b.len() != x.n_frames() {
        return Err(Error::Shape("b table must have one value per frame".into()));
    }
    let zero = RealField::zeros(*x.grid());
    let wick2 = x.map(|v| hermite(2, v, var_x));
    let wick3 = x.map(|v| hermite(3, v, var_x));
    let int3 = duhamel_solve(&wick3, mu, &zero)?;
    let int2 = duhamel_solve(&wick2, mu, &zero)?;
    let x31 = resonant_st(&int3, x, p)?;
    let mut x22 = resonant_st(&int2, &wick2, p)?;
    let mut x32 = resonant_st(&int3, &wick2, p)?;
    for (n, bn) in b.iter().enumerate() {
        x22.frames_mut()[n] = x22.frames()[n].map(|v| v - bn / 3.0);
        let xn = x.frames()[n].scale(*bn);
        x32.frames_mut()[n] = x32.frames()[n].sub(&xn)?;
    }
    Ok(LimitTrees { x: x.clone(), wick2, int3, int2, x31, x22, x32 })
}

/// `b(t) = 3 E[(⟨X²⟩ ∘ ⟦X²⟧)(t, 0)]` per frame with standard errors, from
/// independent realizations (space-averaged within each realization).
pub fn estimate_b(samples: &[SpaceTimeField], var_x: f64, mu: f64, p: &DyadicPartition) -> Result<Vec<(f64, f64, f64)>> {
    if samples.len() < 2 {
        return Err(Error::Shape("need at least two realizations".into()));
    }
    let per: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|x| -> Result<Vec<f64>> {
            let r = raw_x22(x, var_x, mu, p)?;
            Ok(r.frames().iter().map(|f| 3.0 * f.values().iter().sum::<f64>() / f.values().len() as f64).collect())
        })
        .collect::<Result<_>>()?;
    let nt = samples[0].n_frames();
    Ok((0..nt)
        .map(|n| {
            let col: Vec<f64> = per.iter().map(|v| v[n]).collect();
            let (m, se) = mean_se(&col);
            (n as f64 * samples[0].dt(), m, se)
        })
        .collect())
}

/// `(λ₃, λ₃X, λ₃⟦X²⟧, λ₂⟦X²⟧, λ₃⟨X³⟩, λ₃²X³¹, λ₃²X²², λ₃λ₂X²², λ₃²X³²)`.
pub fn limit_enhancement(lambda: &LambdaVector, t: &LimitTrees) -> Result<[SpaceTimeField; 9]> {
    if !(lambda.lambda3 > 0.0) {
        return Err(Error::Admissibility(format!("lambda3 must be positive, got {}", lambda.lambda3)));
    }
    let l3 = lambda.lambda3;
    let l2 = lambda.lambda2;
    Ok([
        t.x.map(|_| l3),
        t.x.scale(l3),
        t.wick2.scale(l3),
        t.wick2.scale(l2),
        t.int3.scale(l3),
        t.x31.scale(l3 * l3),
        t.x22.scale(l3 * l3),
        t.x22.scale(l3 * l2),
        t.x32.scale(l3 * l3),
    ])
}

/// Least-squares Besov exponent estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityFit {
    pub exponent: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub blocks: Vec<i32>,
    pub log2_norms: Vec<f64>,
}

/// Two-sided 95% Student quantiles for 1..=30 degrees of freedom.
const T_975: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160, 2.145, 2.131,
    2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
];

/// Slope fit of `y` against `x` with the half-width of its 95% interval.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let half = if x.len() > 2 {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        let se = (rss / (n - 2.0) / sxx).sqrt();
        T_975[(x.len() - 3).min(29)] * se
    } else {
        f64::INFINITY
    };
    (slope, intercept, half)
}

/// `sup_t ‖ρ Δ_j f(t)‖_∞` for every block.
pub fn ct_block_norms(f: &SpaceTimeField, w: &Weight, p: &DyadicPartition) -> Result<Vec<f64>> {
    let mut out = vec![0.0f64; p.n_blocks()];
    for fr in f.frames() {
        for (o, v) in out.iter_mut().zip(crate::besov::block_norms(fr, w, p)?) {
            *o = o.max(v);
        }
    }
    Ok(out)
}

/// Absolute block size below which a field counts as numerically zero.
pub const NOISE_FLOOR: f64 = 1e-12;

/// Fits `−slope` of `log₂ ‖ρΔ_j f‖` over `j_range` (defaults to all blocks
/// `j ≥ 0`); blocks below `1e−13` of the largest, or below [`NOISE_FLOOR`],
/// are dropped.
pub fn fit_block_norms(norms: &[f64], j_range: Option<(i32, i32)>) -> Result<RegularityFit> {
    let top = norms.iter().cloned().fold(0.0, f64::max);
    if top < NOISE_FLOOR {
        return Err(Error::Fit(format!("largest block {top:e} is below the noise floor")));
    }
    let (lo, hi) = j_range.unwrap_or((0, norms.len() as i32 - 2));
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for j in lo.max(-1)..=hi.min(norms.len() as i32 - 2) {
        let v = norms[(j + 1) as usize];
        if top > 0.0 && v > 1e-13 * top {
            xs.push(j as f64);
            ys.push(v.log2());
        }
    }
    if xs.len() < 4 {
        return Err(Error::Fit(format!("only {} blocks above the noise floor", xs.len())));
    }
    let (slope, _, half) = linear_fit(&xs, &ys);
    Ok(RegularityFit {
        exponent: -slope,
        ci_low: -slope - half,
        ci_high: -slope + half,
        blocks: xs.iter().map(|v| *v as i32).collect(),
        log2_norms: ys,
    })
}

pub fn measure_regularity(
    f: &SpaceTimeField,
    w: &Weight,
    j_range: Option<(i32, i32)>,
    p: &DyadicPartition,
) -> Result<RegularityFit> {
    fit_block_norms(&ct_block_norms(f, w, p)?, j_range)
}

/// Whether measured exponents respect every strict ordering of the targets.
/// Returns the offending index pairs.
pub fn ordering_violations(measured: &[f64], targets: &[f64]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for a in 0..targets.len() {
        for b in 0..targets.len() {
            if targets[a] < targets[b] - 1e-12 && measured[a] >= measured[b] {
                out.push((a, b));
            }
        }
    }
    out
}

/// Settings of the small-ε decay study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayStudy {
    pub eps_grid: Vec<f64>,
    pub dim: usize,
    pub n_points: usize,
    pub box_length: f64,
    pub final_time: f64,
    /// Only every `frame_stride`-th frame enters the sup over time.
    pub frame_stride: usize,
    pub kappa: f64,
    pub eps_exp: f64,
    pub weight: Weight,
    pub noise: NoiseSpec,
}

/// Per-ε ensemble statistics of one norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub epsilon: f64,
    pub mean: f64,
    pub se: f64,
    pub median: f64,
    pub q10: f64,
    pub q90: f64,
}

/// Decay of `‖Y∅_ε − λ₃‖` and `‖(ε^{1/2}Y)^2 − E‖` in `C_T C^{−κ−ϵ}(ρ^σ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub level_zero: Vec<DecayRow>,
    pub level_zero_slope: Option<f64>,
    /// `true` when `Y∅ − λ₃` vanished identically at every ε.
    pub level_zero_exact: bool,
    pub square: Vec<DecayRow>,
    pub square_slope: Option<f64>,
    pub kappa: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

fn row(epsilon: f64, vals: &[f64]) -> DecayRow {
    let (mean, se) = mean_se(vals);
    let mut s = vals.to_vec();
    s.sort_by(f64::total_cmp);
    DecayRow { epsilon, mean, se, median: quantile(&s, 0.5), q10: quantile(&s, 0.1), q90: quantile(&s, 0.9) }
}

fn decay_slope(rows: &[DecayRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.mean > 0.0)
        .map(|r| (r.epsilon.log2(), r.mean.log2()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    Some(linear_fit(&x, &y).0)
}

/// Ensemble study over the ε grid; `family(ε)` gives the nonlinearity.
pub fn decay_stats(
    study: &DecayStudy,
    family: &(dyn Fn(f64) -> Result<NonlinearitySpec> + Sync),
    ensemble: &GaussianEnsemble,
) -> Result<DecayReport> {
    let grid = crate::grid::Grid::new(study.dim, study.n_points, study.box_length)?;
    let p = DyadicPartition::new(&grid);
    let alpha = -study.kappa - study.eps_exp;
    let mut level_zero = Vec::new();
    let mut square = Vec::new();
    let mut exact = true;
    for &eps in &study.eps_grid {
        let dt = eps * eps / 8.0;
        let kernel = NoiseKernel::new(&study.noise, &grid, dt, eps)?;
        let n_frames = ((study.final_time / dt).round() as usize).max(1) + 1;
        let spec = family(eps)?;
        let s2 = kernel.sigma_sq();
        let chaos = chaos_coeffs(&spec, s2, spec.degree() + 2)?;
        let tilde = TildeF::new(&spec, &chaos)?;
        let lambda3 = chaos.coeff(3);
        let vals = (0..ensemble.n_samples)
            .into_par_iter()
            .map(|i| -> Result<(f64, f64)> {
                let s = sample_eta(&kernel, n_frames, ensemble.member_seed(i))?;
                let frames: Vec<RealField> =
                    s.y.frames().iter().step_by(study.frame_stride.max(1)).cloned().collect();
                let frames = if frames.len() < 2 { s.y.frames()[..2].to_vec() } else { frames };
                let y = SpaceTimeField::new(grid, dt * study.frame_stride.max(1) as f64, frames)?;
                let se = eps.sqrt();
                let d0 = y.map(|v| tilde.derivative(3, se * v) / 6.0 - lambda3);
                let sq = y.map(|v| (se * v).powi(2) - s2);
                Ok((ct_besov_norm(&d0, alpha, &study.weight, &p)?, ct_besov_norm(&sq, alpha, &study.weight, &p)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let (a, b): (Vec<f64>, Vec<f64>) = vals.into_iter().unzip();
        if a.iter().any(|v| *v > 1e-12) {
            exact = false;
        }
        level_zero.push(row(eps, &a));
        square.push(row(eps, &b));
    }
    let level_zero_slope = if exact { None } else { decay_slope(&level_zero) };
    Ok(DecayReport {
        square_slope: decay_slope(&square),
        level_zero_slope,
        level_zero_exact: exact,
        level_zero,
        square,
        kappa: study.kappa,
    })
}
