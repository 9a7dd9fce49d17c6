//! Correlated Gaussian noise `η_ε = ζ_ε ⋆ ξ`, the stationary solution `Y_ε` of
//! `L Y = η_ε`, its covariance `C_ε`, and Wick powers.
//!
//! The seed kernel is separable, `ζ(t,x) = a(t) b(x)`, with `a` a bump on
//! `[0, 1/2]` and `b` a radial bump on `B(0, 1/2)`, so `Σ = ζ ⋆ ζ̃` is supported
//! in `[−1/2, 1/2] × B(0, 1)` and nonnegative-definite by construction. At scale
//! `ε` the kernel is `ε^{−5} ζ(t/ε², x/ε)`, which realizes
//! `ε^{−5/2} η(t/ε², x/ε)` in law. Both factors are normalized on the lattice so
//! that their discrete integrals are exactly one.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::chaos::hermite;
use crate::error::{Error, Result};
use crate::grid::{heat_symbol, phi1, to_physical, to_spectral, Grid, RealField, SpaceTimeField, SpectralField};

/// Shape of the noise and the mass of the linear operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mu: f64,
    /// Time support of `a` at unit scale (must be ≤ 1/2).
    pub time_support: f64,
    /// Radius of `b` at unit scale (must be ≤ 1/2).
    pub space_radius: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { mu: 1.0, time_support: 0.5, space_radius: 0.5 }
    }
}

fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - u * u)).exp()
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) {
            return Err(Error::Domain(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.time_support > 0.0 && self.time_support <= 0.5) {
            return Err(Error::Params("time support must lie in (0, 1/2]".into()));
        }
        if !(self.space_radius > 0.0 && self.space_radius <= 0.5) {
            return Err(Error::Params("space radius must lie in (0, 1/2]".into()));
        }
        Ok(())
    }

    /// Unnormalized time profile at unit scale.
    pub fn time_profile(&self, t: f64) -> f64 {
        let half = 0.5 * self.time_support;
        bump((t - half) / half)
    }

    /// Unnormalized radial space profile at unit scale.
    pub fn space_profile(&self, r: f64) -> f64 {
        bump(r / self.space_radius)
    }

    /// SHA-256 of the JSON encoding, for manifests.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("serializable");
        crate::sha256_hex(json.as_bytes())
    }
}

/// Lattice realization of the scale-`ε` kernel on one grid and step.
#[derive(Debug, Clone)]
pub struct NoiseKernel {
    grid: Grid,
    dt: f64,
    epsilon: f64,
    mu: f64,
    /// Time weights at `t_i = i·dt`, normalized to `dt·Σ a_i = 1`.
    a: Vec<f64>,
    /// Transform of `h^d·b`, real and even, equal to one at `k = 0`.
    b_hat: Vec<f64>,
}

impl NoiseKernel {
    /// Requires `spacing ≤ ε/4` and `dt ≤ ε²/4`.
    pub fn new(spec: &NoiseSpec, grid: &Grid, dt: f64, epsilon: f64) -> Result<Self> {
        spec.validate()?;
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::Domain(format!("epsilon must lie in (0, 1], got {epsilon}")));
        }
        if grid.spacing() > 0.25 * epsilon * (1.0 + 1e-12) {
            return Err(Error::Resolution(format!(
                "spacing {} does not resolve the noise scale {epsilon} (need <= eps/4)",
                grid.spacing()
            )));
        }
        if !(dt > 0.0) || dt > 0.25 * epsilon * epsilon * (1.0 + 1e-12) {
            return Err(Error::Resolution(format!("time step {dt} exceeds eps^2/4")));
        }
        let e2 = epsilon * epsilon;
        let m = (spec.time_support * e2 / dt).ceil() as usize;
        let mut a: Vec<f64> = (0..=m).map(|i| spec.time_profile(i as f64 * dt / e2)).collect();
        while a.len() > 1 && a.last() == Some(&0.0) {
            a.pop();
        }
        let mass: f64 = dt * a.iter().sum::<f64>();
        a.iter_mut().for_each(|v| *v /= mass);

        let h = grid.spacing();
        let b = RealField::new(
            *grid,
            (0..grid.len())
                .map(|i| {
                    let k = grid.wave_indices(i);
                    let r = h * ((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64).sqrt();
                    spec.space_profile(r / epsilon)
                })
                .collect(),
        )?;
        let spec_b = to_spectral(&b);
        let b0 = spec_b.coefficients()[0].re;
        let b_hat: Vec<f64> = spec_b.coefficients().iter().map(|c| c.re / b0).collect();
        let min = b_hat.iter().map(|v| v * v).fold(f64::INFINITY, f64::min);
        if min < -1e-12 {
            return Err(Error::Covariance("spatial covariance spectrum is negative".into()));
        }
        Ok(Self { grid: *grid, dt, epsilon, mu: spec.mu, a, b_hat })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn time_weights(&self) -> &[f64] {
        &self.a
    }

    pub fn space_transform(&self) -> &[f64] {
        &self.b_hat
    }

    /// Variance of a lattice white-noise value, `1/(dt·h^d)`.
    fn white_variance(&self) -> f64 {
        1.0 / (self.dt * self.grid.cell_volume())
    }

    fn mode_params(&self, k: usize) -> (f64, f64, f64) {
        let lam = heat_symbol(&self.grid, k, self.mu);
        let decay = (-self.dt * lam).exp();
        let phi = self.dt * phi1(self.dt * lam);
        (lam, decay, phi)
    }

    /// Stationary variance of the driving OU chain in transform units.
    fn ou_variance(&self, k: usize) -> f64 {
        let (_, e, phi) = self.mode_params(k);
        self.grid.len() as f64 * self.white_variance() * phi * phi / (1.0 - e * e)
    }

    /// `Cov(η(t,x), η(t + lag_n·dt, x + y))` for a lattice displacement `y`
    /// given by its flat index (periodic).
    pub fn eta_covariance(&self, lag_n: i64, y_flat: usize) -> f64 {
        let lag = lag_n.unsigned_abs() as usize;
        let at: f64 = if lag >= self.a.len() {
            0.0
        } else {
            self.dt * (0..self.a.len() - lag).map(|i| self.a[i] * self.a[i + lag]).sum::<f64>()
        };
        let n = self.grid.len() as f64;
        let y = self.grid.unflatten(y_flat);
        let spatial: f64 = self
            .b_hat
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let kk = self.grid.unflatten(k);
                let phase = 2.0 * std::f64::consts::PI
                    * (0..self.grid.dim()).map(|a| (kk[a] * y[a]) as f64).sum::<f64>()
                    / self.grid.n_points() as f64;
                b * b * phase.cos()
            })
            .sum::<f64>()
            / (n * self.grid.cell_volume());
        at * spatial
    }

    /// `Σ_{i,j} a_i a_j e^{−λ|s + (i−j)dt|}·dt²` for one mode.
    fn time_factor(&self, lam: f64, s: f64) -> f64 {
        let dt = self.dt;
        let mut acc = 0.0;
        for (i, ai) in self.a.iter().enumerate() {
            for (j, aj) in self.a.iter().enumerate() {
                acc += ai * aj * (-lam * (s + (i as f64 - j as f64) * dt).abs()).exp();
            }
        }
        acc * dt * dt
    }

    /// Spectral profile of `C_ε(s, ·)`: `|B_k|² V_k A_k(s)/N²`.
    fn covariance_spectrum(&self, s: f64) -> Vec<f64> {
        let n2 = (self.grid.len() as f64).powi(2);
        (0..self.grid.len())
            .map(|k| {
                let (lam, _, _) = self.mode_params(k);
                self.b_hat[k] * self.b_hat[k] * self.ou_variance(k) * self.time_factor(lam, s.abs()) / n2
            })
            .collect()
    }

    /// `C_ε(s, x) = Cov(Y(0, 0), Y(s, x))` as a field over lattice `x`
    /// (centered coordinates: the origin is at the grid's origin index).
    pub fn covariance_field(&self, s: f64) -> Result<RealField> {
        let spec = self.covariance_spectrum(s);
        let g = self.grid;
        // shift so that lag zero sits at the centered origin: multiply by (−1)^{Σidx}
        let coeffs = spec
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let idx = g.wave_indices(k);
                let sign = if (idx[0] + idx[1] + idx[2]).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                Complex64::new(sign * v * g.len() as f64, 0.0)
            })
            .collect();
        Ok(to_physical(&SpectralField::new(g, coeffs)?))
    }

    /// `C_ε(s, x)` at one point (lattice displacement by flat index).
    pub fn covariance(&self, s: f64, y_flat: usize) -> f64 {
        let spec = self.covariance_spectrum(s);
        let g = self.grid;
        let y = g.unflatten(y_flat);
        spec.iter()
            .enumerate()
            .map(|(k, v)| {
                let kk = g.unflatten(k);
                let phase = 2.0 * std::f64::consts::PI
                    * (0..g.dim()).map(|a| (kk[a] * y[a]) as f64).sum::<f64>()
                    / g.n_points() as f64;
                v * phase.cos()
            })
            .sum()
    }

    /// `σ_ε² = ε·C_ε(0, 0)`.
    pub fn sigma_sq(&self) -> f64 {
        self.epsilon * self.covariance(0.0, 0)
    }
}

/// One realization of the noise and the stationary linear solution.
#[derive(Debug, Clone)]
pub struct NoiseSample {
    pub eta: SpaceTimeField,
    pub y: SpaceTimeField,
}

fn white_spectrum(rng: &mut ChaCha8Rng, grid: &Grid, scale: f64) -> Vec<Complex64> {
    let vals: Vec<f64> = (0..grid.len())
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect::<Vec<f64>>();
    to_spectral(&RealField::new(*grid, vals).expect("grid length")).coefficients().to_vec()
}

/// Samples `η_ε` on `n_frames` frames and the stationary `Y_ε` with `L Y = η`.
///
/// Per mode the driving chain `X_{n+1} = e^{−λdt} X_n + φ₁ ξ_n` starts from its
/// exact stationary law; `η` and `Y` are the same space-time convolution of
/// `ξ` and `X`, so `Y_{n+1} = e^{−λdt} Y_n + φ₁ η_n` holds exactly.
pub fn sample_eta(kernel: &NoiseKernel, n_frames: usize, seed: u64) -> Result<NoiseSample> {
    if n_frames < 2 {
        return Err(Error::Shape("need at least two frames".into()));
    }
    let g = kernel.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = kernel.a.len() - 1;
    let sd = kernel.white_variance().sqrt();
    let modes: Vec<(f64, f64, f64)> = (0..g.len()).map(|k| kernel.mode_params(k)).collect();

    let mut x_hist: Vec<Vec<Complex64>> = Vec::with_capacity(m + n_frames);
    let mut xi_hist: Vec<Vec<Complex64>> = Vec::with_capacity(m + n_frames);
    let mut x = white_spectrum(&mut rng, &g, 1.0);
    for (k, c) in x.iter_mut().enumerate() {
        *c *= (kernel.ou_variance(k) / g.len() as f64).sqrt();
    }
    for step in 0..(m + n_frames) {
        let xi = white_spectrum(&mut rng, &g, sd);
        let next: Vec<Complex64> = x
            .iter()
            .zip(&xi)
            .zip(&modes)
            .map(|((xv, w), (_, e, phi))| xv * *e + w * *phi)
            .collect();
        x_hist.push(std::mem::replace(&mut x, next));
        xi_hist.push(xi);
        let _ = step;
    }
    // history index h corresponds to time index h − m
    let conv = |hist: &[Vec<Complex64>], n: usize| -> RealField {
        let mut acc = vec![Complex64::default(); g.len()];
        for (i, ai) in kernel.a.iter().enumerate() {
            let src = &hist[n + m - i];
            for (a, s) in acc.iter_mut().zip(src) {
                *a += s * (kernel.dt * ai);
            }
        }
        for (k, a) in acc.iter_mut().enumerate() {
            *a *= kernel.b_hat[k];
        }
        to_physical(&SpectralField::new(g, acc).expect("grid length"))
    };
    let eta: Vec<RealField> = (0..n_frames).map(|n| conv(&xi_hist, n)).collect();
    let y: Vec<RealField> = (0..n_frames).map(|n| conv(&x_hist, n)).collect();
    Ok(NoiseSample {
        eta: SpaceTimeField::new(g, kernel.dt, eta)?,
        y: SpaceTimeField::new(g, kernel.dt, y)?,
    })
}

/// Solves `L Y = η` from `y0` with the exponential-Euler recursion (the
/// per-mode OU update).
pub fn stationary_y(eta: &SpaceTimeField, mu: f64, y0: &RealField) -> Result<SpaceTimeField> {
    if !(mu > 0.0) {
        return Err(Error::Domain(format!("mu must be positive, got {mu}")));
    }
    crate::grid::duhamel_solve(eta, mu, y0)
}

fn catmull_rom(p: [f64; 4], t: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    0.5 * ((2.0 * p[1])
        + (-p[0] + p[2]) * t
        + (2.0 * p[0] - 5.0 * p[1] + 4.0 * p[2] - p[3]) * t2
        + (-p[0] + 3.0 * p[1] - 3.0 * p[2] + p[3]) * t3)
}

/// Separable cubic interpolation of a space-time field: periodic in space,
/// clamped in time.
pub fn interpolate(f: &SpaceTimeField, t: f64, x: [f64; 3]) -> f64 {
    let g = f.grid();
    let n = g.n_points() as i64;
    let h = g.spacing();
    let d = g.dim();
    let tau = t / f.dt();
    let t0 = tau.floor() as i64;
    let ft = tau - t0 as f64;
    let nt = f.n_frames() as i64;
    let mut base = [0i64; 3];
    let mut frac = [0.0; 3];
    for a in 0..d {
        let u = (x[a] + 0.5 * g.box_length()) / h;
        base[a] = u.floor() as i64;
        frac[a] = u - base[a] as f64;
    }
    let sample = |ti: i64, off: [i64; 3]| -> f64 {
        let fr = &f.frames()[ti.clamp(0, nt - 1) as usize];
        let mut idx = [0usize; 3];
        for a in 0..d {
            idx[a] = (base[a] + off[a]).rem_euclid(n) as usize;
        }
        fr.values()[g.flatten(idx)]
    };
    let spatial = |ti: i64| -> f64 {
        match d {
            1 => catmull_rom(std::array::from_fn(|i| sample(ti, [i as i64 - 1, 0, 0])), frac[0]),
            2 => {
                let rows: [f64; 4] = std::array::from_fn(|i| {
                    catmull_rom(std::array::from_fn(|j| sample(ti, [i as i64 - 1, j as i64 - 1, 0])), frac[1])
                });
                catmull_rom(rows, frac[0])
            }
            _ => {
                let planes: [f64; 4] = std::array::from_fn(|i| {
                    let rows: [f64; 4] = std::array::from_fn(|j| {
                        catmull_rom(
                            std::array::from_fn(|l| sample(ti, [i as i64 - 1, j as i64 - 1, l as i64 - 1])),
                            frac[2],
                        )
                    });
                    catmull_rom(rows, frac[1])
                });
                catmull_rom(planes, frac[0])
            }
        }
    };
    catmull_rom(std::array::from_fn(|i| spatial(t0 + i as i64 - 1)), ft)
}

/// `η_ε(t, x) = ε^{−5/2} η(t/ε², x/ε)` sampled on `target` with step `dt` and
/// `n_frames` frames.
pub fn rescale_eta(
    eta: &SpaceTimeField,
    epsilon: f64,
    target: &Grid,
    dt: f64,
    n_frames: usize,
) -> Result<SpaceTimeField> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 1], got {epsilon}")));
    }
    if target.dim() != eta.grid().dim() {
        return Err(Error::Dimension("target grid has a different dimension".into()));
    }
    let e2 = epsilon * epsilon;
    let t_end = (n_frames.max(1) - 1) as f64 * dt / e2;
    if t_end > eta.final_time() * (1.0 + 1e-12) {
        return Err(Error::Range(format!(
            "rescaled window needs source time {t_end}, source covers {}",
            eta.final_time()
        )));
    }
    if target.box_length() / epsilon > eta.grid().box_length() * (1.0 + 1e-12) {
        return Err(Error::Range("rescaled window exceeds the source box".into()));
    }
    let amp = epsilon.powf(-2.5);
    let frames = (0..n_frames)
        .map(|n| {
            let t = n as f64 * dt / e2;
            RealField::from_fn(*target, |x| {
                amp * interpolate(eta, t, [x[0] / epsilon, x[1] / epsilon, x[2] / epsilon])
            })
        })
        .collect();
    SpaceTimeField::new(*target, dt, frames)
}

/// Pointwise `H_n(Y(x), σ²)`.
pub fn wick_power(y: &RealField, n: usize, sigma_sq: f64) -> Result<RealField> {
    if n > 9 {
        return Err(Error::Domain(format!("Wick powers are limited to n <= 9, got {n}")));
    }
    Ok(y.map(|v| hermite(n, v, sigma_sq)))
}

/// Master seed plus pairwise-distinct derived member seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianEnsemble {
    pub master_seed: u64,
    pub n_samples: usize,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl GaussianEnsemble {
    pub fn new(master_seed: u64, n_samples: usize) -> Self {
        Self { master_seed, n_samples }
    }

    /// Seed of member `i`. SplitMix64 is a bijection, so distinct members get
    /// distinct seeds.
    pub fn member_seed(&self, i: usize) -> u64 {
        splitmix64(self.master_seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
    }

    pub fn member_seeds(&self) -> Vec<u64> {
        (0..self.n_samples).map(|i| self.member_seed(i)).collect()
    }

    pub fn manifest(&self, spec: &NoiseSpec) -> EnsembleManifest {
        EnsembleManifest {
            master_seed: self.master_seed,
            member_seeds: self.member_seeds(),
            spec_hash: spec.hash(),
        }
    }
}

/// JSON manifest allowing exact reruns of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub master_seed: u64,
    pub member_seeds: Vec<u64>,
    pub spec_hash: String,
}

/// Mean and standard error of independent samples.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte-Carlo and quadrature values of one covariance quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceCheck {
    pub quadrature: f64,
    pub monte_carlo: f64,
    pub standard_error: f64,
}

impl CovarianceCheck {
    pub fn z_score(&self) -> f64 {
        (self.monte_carlo - self.quadrature).abs() / self.standard_error
    }
}

/// `C_ε(s, x)` estimated from independent `Y` samples (one product per
/// sample, taken at frame 0 and the origin) against the exact value.
/// Fails when the two differ by more than five standard errors.
pub fn cov_y_check(kernel: &NoiseKernel, samples: &[SpaceTimeField], lag_n: usize, y_flat: usize) -> Result<CovarianceCheck> {
    if samples.len() < 100 {
        return Err(Error::Shape("Monte-Carlo covariance needs at least 100 samples".into()));
    }
    let g = kernel.grid();
    let o = g.origin_index();
    let mut shifted = g.unflatten(o);
    let y = g.unflatten(y_flat);
    for a in 0..g.dim() {
        shifted[a] += y[a];
    }
    let target = g.flatten(shifted);
    let prods: Vec<f64> = samples
        .iter()
        .map(|s| s.frames()[0].values()[o] * s.frames()[lag_n].values()[target])
        .collect();
    let (mc, se) = mean_se(&prods);
    let check = CovarianceCheck {
        quadrature: kernel.covariance(lag_n as f64 * kernel.dt(), y_flat),
        monte_carlo: mc,
        standard_error: se,
    };
    if check.z_score() > 5.0 {
        return Err(Error::Calibration(format!(
            "covariance disagreement: quadrature {} vs MC {} ± {}",
            check.quadrature, mc, se
        )));
    }
    Ok(check)
}

/// `σ_ε²` by Monte Carlo (`ε·Y(0,0)²` per sample) against `ε·C_ε(0,0)`.
pub fn sigma_eps_check(kernel: &NoiseKernel, samples: &[SpaceTimeField]) -> Result<CovarianceCheck> {
    let c = cov_y_check(kernel, samples, 0, 0)?;
    let e = kernel.epsilon();
    Ok(CovarianceCheck {
        quadrature: e * c.quadrature,
        monte_carlo: e * c.monte_carlo,
        standard_error: e * c.standard_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel(eps: f64) -> NoiseKernel {
        let g = Grid::new(1, 64, 4.0 * eps).unwrap();
        NoiseKernel::new(&NoiseSpec::default(), &g, eps * eps / 8.0, eps).unwrap()
    }

    #[test]
    fn kernel_normalization() {
        let k = kernel(0.5);
        let mass: f64 = k.dt() * k.time_weights().iter().sum::<f64>();
        assert!((mass - 1.0).abs() < 1e-14);
        assert!((k.space_transform()[0] - 1.0).abs() < 1e-14);
        let g = Grid::new(1, 8, 4.0).unwrap();
        assert!(NoiseKernel::new(&NoiseSpec::default(), &g, 0.01, 0.5).is_err());
    }

    #[test]
    fn sampled_y_obeys_recursion() {
        let k = kernel(0.5);
        let s = sample_eta(&k, 20, 7).unwrap();
        let y = stationary_y(&s.eta, k.mu(), &s.y.frames()[0]).unwrap();
        assert!(y.sub(&s.y).unwrap().max_abs() < 1e-10 * s.y.max_abs());
        let zero = SpaceTimeField::zeros(*k.grid(), k.dt(), 5).unwrap();
        let y0 = stationary_y(&zero, 1.0, &RealField::zeros(*k.grid())).unwrap();
        assert_eq!(y0.max_abs(), 0.0);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let k = kernel(0.5);
        let a = sample_eta(&k, 4, 11).unwrap();
        let b = sample_eta(&k, 4, 11).unwrap();
        let c = sample_eta(&k, 4, 12).unwrap();
        assert_eq!(a.eta, b.eta);
        assert_ne!(a.eta, c.eta);
    }

    #[test]
    fn covariance_field_matches_pointwise() {
        let k = kernel(0.5);
        let f = k.covariance_field(0.03).unwrap();
        let g = k.grid();
        let o = g.origin_index();
        for shift in [0usize, 1, 5] {
            assert!((f.values()[o + shift] - k.covariance(0.03, shift)).abs() < 1e-12 * f.max_abs());
        }
    }

    #[test]
    fn rescale_identity_and_nodes() {
        let k = kernel(1.0);
        let s = sample_eta(&k, 9, 3).unwrap();
        let same = rescale_eta(&s.eta, 1.0, k.grid(), k.dt(), 9).unwrap();
        assert!(same.sub(&s.eta).unwrap().max_abs() < 1e-12);
        let small = Grid::new(1, 64, 2.0).unwrap();
        let r = rescale_eta(&s.eta, 0.5, &small, k.dt() / 4.0, 9).unwrap();
        // x/ε of target node i is source node i; t/ε² of frame 4 is source frame 4
        let amp = 0.5f64.powf(-2.5);
        for (v, src) in r.frames()[4].values().iter().zip(s.eta.frames()[4].values()) {
            assert!((v - amp * src).abs() < 1e-10 * amp * s.eta.max_abs());
        }
        assert!(rescale_eta(&s.eta, 0.5, &small, k.dt(), 9).is_err());
    }

    #[test]
    fn wick_cubic() {
        let g = Grid::new(1, 8, 1.0).unwrap();
        let y = RealField::from_fn(g, |x| x[0] * 3.0);
        let w = wick_power(&y, 3, 0.7).unwrap();
        for (a, b) in w.values().iter().zip(y.values()) {
            assert!((a - (b * b * b - 2.1 * b)).abs() < 1e-12);
        }
        assert!(wick_power(&y, 10, 1.0).is_err());
    }

    #[test]
    fn member_seeds_distinct() {
        let e = GaussianEnsemble::new(42, 1000);
        let mut s = e.member_seeds();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 1000);
    }
}
