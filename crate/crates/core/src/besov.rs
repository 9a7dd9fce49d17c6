//! Polynomial weights, the Littlewood–Paley partition, weighted Besov and
//! Hölder norms, space-time norm families and the interpolation functional.
//!
//! Blocks are indexed on the integer wave index `|idx|` (frequency in units of
//! `2π/ℓ`), which coincides with the physical frequency on a box of side `2π`.
//! Cutoff constants: `χ = 1` on `r ≤ 3/4`, `χ = 0` on `r ≥ 4/3`, quintic
//! smoothstep in between; annulus `θ(r) = χ(r/2) − χ(r)` lives in `[3/4, 8/3]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{to_physical, to_spectral, Grid, RealField, SpaceTimeField, SpectralField};

pub const CHI_INNER: f64 = 0.75;
pub const CHI_OUTER: f64 = 4.0 / 3.0;

/// Radial ball cutoff.
pub fn chi(r: f64) -> f64 {
    if r <= CHI_INNER {
        1.0
    } else if r >= CHI_OUTER {
        0.0
    } else {
        let t = (r - CHI_INNER) / (CHI_OUTER - CHI_INNER);
        1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }
}

/// Radial annulus profile `θ(r) = χ(r/2) − χ(r)`.
pub fn theta(r: f64) -> f64 {
    chi(0.5 * r) - chi(r)
}

/// Polynomial weight `ρ^a` with `ρ(x) = (1 + |x|²)^{−ν/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weight {
    pub nu: f64,
    pub power: f64,
}

impl Weight {
    pub fn new(nu: f64, power: f64) -> Result<Self> {
        if !(nu >= 0.0) || !power.is_finite() {
            return Err(Error::Domain(format!("invalid weight nu={nu}, power={power}")));
        }
        Ok(Self { nu, power })
    }

    /// `ρ ≡ 1`.
    pub fn unit() -> Self {
        Self { nu: 0.0, power: 0.0 }
    }

    pub fn pow(&self, a: f64) -> Self {
        Self { nu: self.nu, power: self.power * a }
    }

    /// `ρ^a·ρ^b = ρ^{a+b}` for weights with the same `ν`.
    pub fn times(&self, other: &Self) -> Result<Self> {
        if self.nu != other.nu {
            return Err(Error::Params("weights with different nu cannot be merged".into()));
        }
        Ok(Self { nu: self.nu, power: self.power + other.power })
    }

    pub fn value(&self, x: [f64; 3]) -> f64 {
        let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        (1.0 + r2).powf(-0.5 * self.nu * self.power)
    }

    pub fn field(&self, grid: &Grid) -> RealField {
        RealField::from_fn(*grid, |x| self.value(x))
    }

    pub fn is_unit(&self) -> bool {
        self.nu == 0.0 || self.power == 0.0
    }
}

/// Littlewood–Paley blocks `j = −1..=j_max` on one grid.
#[derive(Debug, Clone)]
pub struct DyadicPartition {
    grid: Grid,
    j_max: i32,
    radius: Vec<f64>,
}

impl DyadicPartition {
    pub fn new(grid: &Grid) -> Self {
        let radius = (0..grid.len()).map(|k| grid.index_norm(k)).collect();
        Self { grid: *grid, j_max: grid.j_max(), radius }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn j_max(&self) -> i32 {
        self.j_max
    }

    pub fn blocks(&self) -> std::ops::RangeInclusive<i32> {
        -1..=self.j_max
    }

    pub fn n_blocks(&self) -> usize {
        (self.j_max + 2) as usize
    }

    fn check(&self, j: i32) -> Result<()> {
        if j < -1 || j > self.j_max {
            return Err(Error::Index(format!("block {j} outside -1..={}", self.j_max)));
        }
        Ok(())
    }

    /// Multiplier `θ_j(k)`; the top block absorbs every frequency above it.
    pub fn multiplier(&self, j: i32, flat: usize) -> f64 {
        let r = self.radius[flat];
        if j == -1 {
            chi(r)
        } else if j == self.j_max {
            1.0 - chi(r / 2f64.powi(j))
        } else {
            theta(r / 2f64.powi(j))
        }
    }

    /// Multiplier of `S_j = Σ_{i ≤ j} Δ_i` (zero for `j < −1`).
    pub fn low_pass_multiplier(&self, j: i32, flat: usize) -> f64 {
        if j < -1 {
            0.0
        } else if j >= self.j_max {
            1.0
        } else {
            chi(self.radius[flat] / 2f64.powi(j + 1))
        }
    }

    pub fn block_of_spectrum(&self, s: &SpectralField, j: i32) -> Result<RealField> {
        self.check(j)?;
        Ok(to_physical(&s.multiplied(|k| self.multiplier(j, k))))
    }

    pub fn low_pass_of_spectrum(&self, s: &SpectralField, j: i32) -> RealField {
        to_physical(&s.multiplied(|k| self.low_pass_multiplier(j, k)))
    }

    /// All blocks `Δ_{-1} f, …, Δ_{j_max} f` from a single forward transform.
    pub fn all_blocks(&self, f: &RealField) -> Result<Vec<RealField>> {
        self.check_grid(f)?;
        let s = to_spectral(f);
        self.blocks().map(|j| self.block_of_spectrum(&s, j)).collect()
    }

    pub fn check_grid(&self, f: &RealField) -> Result<()> {
        if *f.grid() != self.grid {
            return Err(Error::Dimension("partition built for a different grid".into()));
        }
        Ok(())
    }
}

/// `Δ_j f`.
pub fn lp_block(f: &RealField, j: i32, p: &DyadicPartition) -> Result<RealField> {
    p.check_grid(f)?;
    p.check(j)?;
    p.block_of_spectrum(&to_spectral(f), j)
}

fn weighted_sup(f: &RealField, rho: Option<&RealField>) -> f64 {
    match rho {
        None => f.max_abs(),
        Some(r) => f.values().iter().zip(r.values()).fold(0.0, |m, (a, b)| m.max((a * b).abs())),
    }
}

fn weight_field(w: &Weight, grid: &Grid) -> Option<RealField> {
    (!w.is_unit()).then(|| w.field(grid))
}

/// `‖ρ Δ_j f‖_∞` for every block, in block order.
pub fn block_norms(f: &RealField, w: &Weight, p: &DyadicPartition) -> Result<Vec<f64>> {
    let rho = weight_field(w, f.grid());
    Ok(p.all_blocks(f)?.iter().map(|b| weighted_sup(b, rho.as_ref())).collect())
}

fn besov_from_blocks(norms: &[f64], alpha: f64) -> f64 {
    norms
        .iter()
        .enumerate()
        .map(|(i, v)| 2f64.powf(alpha * (i as f64 - 1.0)) * v)
        .fold(0.0, f64::max)
}

/// `sup_j 2^{jα} ‖ρ Δ_j f‖_∞`.
pub fn besov_norm(f: &RealField, alpha: f64, w: &Weight, p: &DyadicPartition) -> Result<f64> {
    Ok(besov_from_blocks(&block_norms(f, w, p)?, alpha))
}

/// `‖ρ f‖_∞ + sup_h |h|^{−α} ‖ρ (f(·+h) − f)‖_∞` over axis-aligned lattice
/// shifts `0 < |h| ≤ 1`.
pub fn holder_norm(f: &RealField, alpha: f64, w: &Weight) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("Hölder exponent must lie in (0,1), got {alpha}")));
    }
    let g = *f.grid();
    let rho = weight_field(w, &g);
    let base = weighted_sup(f, rho.as_ref());
    let h = g.spacing();
    let max_shift = ((1.0 / h).floor() as usize).min(g.n_points() / 2).max(1);
    let mut best: f64 = 0.0;
    for axis in 0..g.dim() {
        for m in 1..=max_shift {
            let scale = (m as f64 * h).powf(-alpha);
            for i in 0..g.len() {
                let mut idx = g.unflatten(i);
                idx[axis] += m;
                let diff = (f.values()[g.flatten(idx)] - f.values()[i]).abs();
                let r = rho.as_ref().map_or(1.0, |r| r.values()[i]);
                best = best.max(scale * r * diff);
            }
        }
    }
    Ok(base + best)
}

/// Norm family values of a space-time field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeNorms {
    /// `sup_t ‖f(t)‖_{C^α(ρ)}`
    pub ct_besov: f64,
    /// `sup_t ‖ρ f(t)‖_∞`
    pub linf_linf: f64,
    /// `sup_{s<t} ‖(ρf)(t) − (ρf)(s)‖_∞ / |t−s|^a` when requested.
    pub time_holder: Option<f64>,
}

pub fn spacetime_norms(
    f: &SpaceTimeField,
    alpha: f64,
    w: &Weight,
    p: &DyadicPartition,
    time_holder: Option<f64>,
) -> Result<SpaceTimeNorms> {
    if f.n_frames() < 2 {
        return Err(Error::Shape("space-time norms need at least two frames".into()));
    }
    let rho = weight_field(w, f.grid());
    let mut ct = 0.0f64;
    let mut linf = 0.0f64;
    for fr in f.frames() {
        ct = ct.max(besov_norm(fr, alpha, w, p)?);
        linf = linf.max(weighted_sup(fr, rho.as_ref()));
    }
    let th = time_holder.map(|a| {
        let frames = f.frames();
        let mut best = 0.0f64;
        for t in 1..frames.len() {
            for s in 0..t {
                let d = frames[t]
                    .values()
                    .iter()
                    .zip(frames[s].values())
                    .enumerate()
                    .fold(0.0f64, |m, (i, (x, y))| {
                        let r = rho.as_ref().map_or(1.0, |r| r.values()[i]);
                        m.max((r * (x - y)).abs())
                    });
                best = best.max(d / (((t - s) as f64) * f.dt()).powf(a));
            }
        }
        best
    });
    Ok(SpaceTimeNorms { ct_besov: ct, linf_linf: linf, time_holder: th })
}

/// `sup_t ‖f(t)‖_{C^α(ρ)}` only.
pub fn ct_besov_norm(f: &SpaceTimeField, alpha: f64, w: &Weight, p: &DyadicPartition) -> Result<f64> {
    f.frames().iter().try_fold(0.0f64, |m, fr| Ok(m.max(besov_norm(fr, alpha, w, p)?)))
}

/// `sup_t ‖ρ f(t)‖_∞` only.
pub fn linf_linf_norm(f: &SpaceTimeField, w: &Weight) -> f64 {
    let rho = weight_field(w, f.grid());
    f.frames().iter().fold(0.0, |m, fr| m.max(weighted_sup(fr, rho.as_ref())))
}

/// Ratio `‖ψ‖_{C_T C^α(ρ₁)} / (‖ψ‖_{C_T L^∞(ρ₂)}^{1−θ} ‖ψ‖_{C_T C^{2−κ}(ρ₃)}^θ)` with
/// `θ = α/(2−κ)` and `ρ₁ = ρ₂^{1−θ} ρ₃^θ`.
pub fn interpolation_gap(
    psi: &SpaceTimeField,
    alpha: f64,
    kappa: f64,
    w2: &Weight,
    w3: &Weight,
    p: &DyadicPartition,
) -> Result<f64> {
    let top = 2.0 - kappa;
    if !(alpha >= 0.0 && alpha <= top) {
        return Err(Error::Domain(format!("interpolation exponent {alpha} outside [0, {top}]")));
    }
    if w2.nu != w3.nu {
        return Err(Error::Params("interpolated weights must share nu".into()));
    }
    let th = alpha / top;
    let w1 = Weight { nu: w2.nu, power: (1.0 - th) * w2.power + th * w3.power };
    let lhs = ct_besov_norm(psi, alpha, &w1, p)?;
    let low = linf_linf_norm(psi, w2);
    let high = ct_besov_norm(psi, top, w3, p)?;
    let rhs = low.powf(1.0 - th) * high.powf(th);
    if rhs == 0.0 {
        return Ok(if lhs == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(lhs / rhs)
}

/// One row of a JSON norm report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub norm_family: String,
    pub alpha: f64,
    pub weight_power: f64,
    pub value: f64,
}

/// Exponent bundle of the a-priori analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisParams {
    pub alpha: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub gamma1: f64,
    pub gamma_prime: f64,
    pub gamma_dprime: f64,
    pub eps_exp: f64,
    pub sigma_w: f64,
    pub delta: f64,
    pub delta0: f64,
    pub m: u32,
    pub m1: u32,
    pub mu: f64,
    pub nu: f64,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            kappa: 0.045,
            gamma: 0.005,
            gamma1: 0.25,
            gamma_prime: 0.22,
            gamma_dprime: 0.21,
            eps_exp: 0.002,
            sigma_w: 0.1,
            delta: 0.5,
            delta0: 0.1,
            m: 5,
            m1: 4,
            mu: 1.0,
            nu: 1.0,
        }
    }
}

impl AnalysisParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Params(msg));
        if self.m % 2 == 0 || self.m < 5 {
            return fail(format!("m must be odd and >= 5, got {}", self.m));
        }
        if self.m1 < 4 || self.m1 > self.m {
            return fail(format!("m1 must satisfy 4 <= m1 <= m, got {}", self.m1));
        }
        let a_max = 3.0 / (10.0 * self.m as f64);
        if !(self.alpha > 0.0 && self.alpha < a_max) {
            return fail(format!("alpha must lie in (0, {a_max}), got {}", self.alpha));
        }
        if !(0.0 < self.eps_exp && self.eps_exp < self.gamma && self.gamma < self.kappa && self.kappa < self.alpha) {
            return fail("need 0 < eps_exp < gamma < kappa < alpha".into());
        }
        if (self.gamma - (self.alpha - self.kappa)).abs() > 1e-12 {
            return fail("need gamma = alpha - kappa".into());
        }
        if !(self.gamma + self.eps_exp < 4.0 * self.alpha * self.alpha) {
            return fail("need gamma + eps_exp < 4 alpha^2".into());
        }
        if !(self.gamma1 > 4.0 * self.alpha) {
            return fail("need gamma1 > 4 alpha".into());
        }
        if !(self.gamma_dprime < self.gamma_prime && self.gamma_prime < self.gamma1) {
            return fail("need gamma'' < gamma' < gamma1".into());
        }
        if !(self.mu > 0.0) || !(self.nu >= 0.0) || !(self.delta > 0.0) || !(self.sigma_w >= 0.0) {
            return fail("mu, delta must be positive; nu, sigma_w nonnegative".into());
        }
        Ok(())
    }
}
