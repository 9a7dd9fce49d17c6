//! Hermite polynomials with variance, chaos coefficients `f_n`, the reduced
//! nonlinearity `F̃`, the renormalization constants, the λ-vector, and the
//! structural checks on a nonlinearity family.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{heat_average_at_origin, heat_propagate, HeatQuadrature, RealField};
use crate::quadrature::gauss_hermite;

/// Largest polynomial degree admitted for a nonlinearity.
pub const MAX_DEGREE: usize = 9;

/// `H_n(x, σ²)`: `H_0 = 1`, `H_1 = x`, `H_{n+1} = x H_n − n σ² H_{n−1}`.
pub fn hermite(n: usize, x: f64, sigma_sq: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let next = x * cur - k as f64 * sigma_sq * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// All `H_0..=H_n` at one point.
pub fn hermite_all(n: usize, x: f64, sigma_sq: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    if n >= 1 {
        out.push(x);
    }
    for k in 1..n {
        out.push(x * out[k] - k as f64 * sigma_sq * out[k - 1]);
    }
    out
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |a, k| a * k as f64)
}

pub fn binomial(n: usize, k: usize) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// Evaluates `Σ c_i x^i` and its `k`-th derivative.
pub fn poly_derivative(coeffs: &[f64], k: usize, x: f64) -> f64 {
    let mut acc = 0.0;
    for i in (k..coeffs.len()).rev() {
        let fall = ((i - k + 1)..=i).fold(1.0, |a, j| a * j as f64);
        acc = acc * x + coeffs[i] * fall;
    }
    acc
}

/// `F(x) = C₀ x^m + G(x)` with `m` odd and `G` a polynomial of degree below `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearitySpec {
    pub c0: f64,
    pub m: usize,
    /// Ascending coefficients of `G`.
    pub g: Vec<f64>,
}

impl NonlinearitySpec {
    pub fn new(c0: f64, m: usize, g: Vec<f64>) -> Result<Self> {
        if !(c0 > 0.0) {
            return Err(Error::Params(format!("leading coefficient must be positive, got {c0}")));
        }
        if m % 2 == 0 {
            return Err(Error::Params(format!("leading degree must be odd, got {m}")));
        }
        if m > MAX_DEGREE {
            return Err(Error::Params(format!("degree {m} exceeds the derivative budget {MAX_DEGREE}")));
        }
        if g.len() > m {
            return Err(Error::Params("G must have degree below m".into()));
        }
        Ok(Self { c0, m, g })
    }

    /// `F(x) = x^m`.
    pub fn monomial(m: usize) -> Result<Self> {
        Self::new(1.0, m, Vec::new())
    }

    /// Ascending coefficients of `F`.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.m + 1];
        c[..self.g.len()].copy_from_slice(&self.g);
        c[self.m] += self.c0;
        c
    }

    pub fn degree(&self) -> usize {
        self.m
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.derivative(0, x)
    }

    pub fn derivative(&self, k: usize, x: f64) -> f64 {
        let lead = if k > self.m {
            0.0
        } else {
            let fall = ((self.m - k + 1)..=self.m).fold(1.0, |a, j| a * j as f64);
            self.c0 * fall * x.powi((self.m - k) as i32)
        };
        lead + poly_derivative(&self.g, k, x)
    }

    pub fn g_derivative(&self, k: usize, x: f64) -> f64 {
        poly_derivative(&self.g, k, x)
    }

    /// Degree of `G` (0 for `G ≡ 0`).
    pub fn g_degree(&self) -> usize {
        self.g.iter().rposition(|c| *c != 0.0).unwrap_or(0)
    }
}

/// Coefficients `f_0..f_{n_max}` of `F` in the Hermite basis of variance `σ²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosExpansion {
    pub sigma_sq: f64,
    pub f: Vec<f64>,
}

impl ChaosExpansion {
    pub fn coeff(&self, n: usize) -> f64 {
        self.f.get(n).copied().unwrap_or(0.0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let h = hermite_all(self.f.len().saturating_sub(1), x, self.sigma_sq);
        self.f.iter().zip(&h).map(|(a, b)| a * b).sum()
    }
}

/// `E[g(Z)]` for `Z ~ N(0, σ²)` by Gauss–Hermite quadrature.
pub fn gaussian_expectation(g: impl Fn(f64) -> f64, sigma_sq: f64, nodes: usize) -> Result<f64> {
    let (x, w) = gauss_hermite(nodes)?;
    let s = sigma_sq.sqrt();
    Ok(x.iter().zip(&w).map(|(x, w)| w * g(s * x)).sum())
}

/// `f_n = E[F(Z) H_n(Z, σ²)] / (n! σ^{2n})` with `nodes` quadrature points.
pub fn chaos_coeffs_with_nodes(
    spec: &NonlinearitySpec,
    sigma_sq: f64,
    n_max: usize,
    nodes: usize,
) -> Result<ChaosExpansion> {
    if !(sigma_sq > 0.0) {
        return Err(Error::Domain(format!("variance must be positive, got {sigma_sq}")));
    }
    if nodes <= spec.degree() {
        return Err(Error::Accuracy(format!(
            "{nodes} quadrature nodes cannot resolve a degree-{} nonlinearity",
            spec.degree()
        )));
    }
    let (x, w) = gauss_hermite(nodes)?;
    let s = sigma_sq.sqrt();
    let mut f = vec![0.0; n_max + 1];
    for (xi, wi) in x.iter().zip(&w) {
        let z = s * xi;
        let fz = spec.eval(z);
        let h = hermite_all(n_max, z, sigma_sq);
        for n in 0..=n_max {
            f[n] += wi * fz * h[n];
        }
    }
    for (n, v) in f.iter_mut().enumerate() {
        *v /= factorial(n) * sigma_sq.powi(n as i32);
        if n > spec.degree() {
            *v = 0.0;
        }
    }
    Ok(ChaosExpansion { sigma_sq, f })
}

/// Chaos coefficients with enough nodes to be exact for the polynomial.
pub fn chaos_coeffs(spec: &NonlinearitySpec, sigma_sq: f64, n_max: usize) -> Result<ChaosExpansion> {
    chaos_coeffs_with_nodes(spec, sigma_sq, n_max, (spec.degree() + n_max) / 2 + 2)
}

/// `F̃ = F − f_0 − f_1 x − f_2 H_2 = Σ_{n≥3} f_n H_n` and its derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TildeF {
    pub sigma_sq: f64,
    /// Full chaos coefficients; entries below 3 are ignored by the evaluators.
    pub f: Vec<f64>,
    /// `F` itself, for the direct representation.
    pub spec: NonlinearitySpec,
}

impl TildeF {
    /// Builds `F̃` and checks that the chaos and direct representations agree.
    pub fn new(spec: &NonlinearitySpec, chaos: &ChaosExpansion) -> Result<Self> {
        let t = Self { sigma_sq: chaos.sigma_sq, f: chaos.f.clone(), spec: spec.clone() };
        let s = chaos.sigma_sq.sqrt();
        for i in -20..=20 {
            let x = 0.3 * i as f64 * s;
            for k in 0..=3 {
                let a = t.derivative(k, x);
                let b = t.direct_derivative(k, x);
                let scale = 1.0 + a.abs().max(b.abs());
                if (a - b).abs() > 1e-9 * scale {
                    return Err(Error::Consistency(format!(
                        "F̃^({k}) mismatch at {x}: chaos {a} vs direct {b}"
                    )));
                }
            }
        }
        Ok(t)
    }

    pub fn coeff(&self, n: usize) -> f64 {
        if n < 3 {
            0.0
        } else {
            self.f.get(n).copied().unwrap_or(0.0)
        }
    }

    pub fn n_max(&self) -> usize {
        self.f.len().saturating_sub(1)
    }

    /// `F̃^{(k)}(x) = Σ_n f_n n!/(n−k)! H_{n−k}(x)`.
    pub fn derivative(&self, k: usize, x: f64) -> f64 {
        let n_max = self.n_max();
        if n_max < 3 {
            return 0.0;
        }
        let h = hermite_all(n_max, x, self.sigma_sq);
        (3.max(k)..=n_max)
            .map(|n| self.coeff(n) * factorial(n) / factorial(n - k) * h[n - k])
            .sum()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.derivative(0, x)
    }

    /// Same derivative from `F − f_0 − f_1 x − f_2 H_2`.
    pub fn direct_derivative(&self, k: usize, x: f64) -> f64 {
        let f0 = self.f.first().copied().unwrap_or(0.0);
        let f1 = self.f.get(1).copied().unwrap_or(0.0);
        let f2 = self.f.get(2).copied().unwrap_or(0.0);
        let low = match k {
            0 => f0 + f1 * x + f2 * (x * x - self.sigma_sq),
            1 => f1 + 2.0 * f2 * x,
            2 => 2.0 * f2,
            _ => 0.0,
        };
        self.spec.derivative(k, x) - low
    }
}

/// Mehler-series two-point expectations as functions of the covariance `c`
/// of the two Gaussian arguments.
#[derive(Debug, Clone)]
pub struct MehlerSeries {
    /// `E[F̃'(Z₁) F̃'(Z₂)] = Σ n² f_n² (n−1)! c^{n−1}`
    pub e11: Vec<f64>,
    /// `E[F̃(Z₁) F̃''(Z₂)] = Σ f_n f_{n+2} (n+2)(n+1) n! c^n`
    pub e02: Vec<f64>,
    /// `E[F̃(Z₁) F̃'(Z₂)] = Σ f_n f_{n+1} (n+1) n! c^n`
    pub e01: Vec<f64>,
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |a, v| a * x + v)
}

impl MehlerSeries {
    pub fn new(t: &TildeF) -> Self {
        let n_max = t.n_max();
        let mut e11 = vec![0.0; n_max + 1];
        let mut e02 = vec![0.0; n_max + 1];
        let mut e01 = vec![0.0; n_max + 1];
        for n in 3..=n_max {
            let f = t.coeff(n);
            e11[n - 1] += (n * n) as f64 * f * f * factorial(n - 1);
            e02[n] += f * t.coeff(n + 2) * ((n + 2) * (n + 1)) as f64 * factorial(n);
            e01[n] += f * t.coeff(n + 1) * (n + 1) as f64 * factorial(n);
        }
        Self { e11, e02, e01 }
    }

    pub fn eval11(&self, c: f64) -> f64 {
        horner(&self.e11, c)
    }

    pub fn eval02(&self, c: f64) -> f64 {
        horner(&self.e02, c)
    }

    pub fn eval01(&self, c: f64) -> f64 {
        horner(&self.e01, c)
    }
}

/// Renormalization constants at one `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenormConstants {
    pub d22: f64,
    pub d22_bar: f64,
    pub d31: f64,
    pub d32: f64,
    /// `2 d31 + 3 d22`, enforced.
    pub d32_prime: f64,
    /// `d′` from an independent joint-Gaussian quadrature path.
    pub d32_prime_independent: f64,
    /// Largest heat-kernel tail bound among the integrals.
    pub truncation: f64,
    /// `(t, b_ε(t))` table, filled by the tree module when estimated.
    pub b_eps: Vec<(f64, f64)>,
}

impl RenormConstants {
    pub fn zero() -> Self {
        Self {
            d22: 0.0,
            d22_bar: 0.0,
            d31: 0.0,
            d32: 0.0,
            d32_prime: 0.0,
            d32_prime_independent: 0.0,
            truncation: 0.0,
            b_eps: Vec::new(),
        }
    }
}

/// Inputs shared by the renormalization engines.
pub struct RenormProblem<'a> {
    pub tilde: &'a TildeF,
    /// `s ↦ C_ε(s, ·)` as a centered field (covariance of `Y_ε`).
    pub covariance: &'a (dyn Fn(f64) -> Result<RealField> + Sync),
    pub epsilon: f64,
    pub mu: f64,
    pub quad: HeatQuadrature,
}

/// Integrals `∫ P_s(x) h(εC_ε(s,x)) ds dx` for the four integrands at once.
struct FourIntegrals {
    i11: f64,
    i02: f64,
    i01: f64,
    icc: f64,
    tail: f64,
}

fn integrate_mehler(pb: &RenormProblem, ser: &MehlerSeries) -> Result<FourIntegrals> {
    let (nodes, weights) = pb.quad.time_rule(pb.mu)?;
    let e = pb.epsilon;
    let parts = nodes
        .par_iter()
        .zip(weights.par_iter())
        .map(|(&s, &w)| -> Result<[f64; 4]> {
            let c = (pb.covariance)(s)?;
            let f11 = c.map(|v| ser.eval11(e * v));
            let f02 = c.map(|v| ser.eval02(e * v));
            let f01 = c.map(|v| ser.eval01(e * v));
            let fcc = c.map(|v| v * v);
            Ok([
                w * heat_average_at_origin(&f11, s, pb.mu)?,
                w * heat_average_at_origin(&f02, s, pb.mu)?,
                w * heat_average_at_origin(&f01, s, pb.mu)?,
                w * heat_average_at_origin(&fcc, s, pb.mu)?,
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = [0.0; 4];
    for p in &parts {
        for i in 0..4 {
            acc[i] += p[i];
        }
    }
    let t_cut = pb.quad.resolve_t_cut(pb.mu);
    let c_end = (pb.covariance)(t_cut)?;
    let bound = [
        c_end.map(|v| ser.eval11(e * v)).max_abs(),
        c_end.map(|v| ser.eval02(e * v)).max_abs(),
        c_end.map(|v| ser.eval01(e * v)).max_abs(),
        c_end.map(|v| v * v).max_abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    Ok(FourIntegrals {
        i11: acc[0],
        i02: acc[1],
        i01: acc[2],
        icc: acc[3],
        tail: bound * (-pb.mu * t_cut).exp() / pb.mu,
    })
}

/// `∫ P_s(x) (E[F̃'F̃'] + E[F̃F̃'']) (εC) ds dx` by a two-dimensional
/// Gauss–Hermite rule for the joint Gaussian pair, with its own time rule.
fn integrate_joint(pb: &RenormProblem, nodes_per_panel: usize) -> Result<f64> {
    let quad = HeatQuadrature { nodes_per_panel, ..pb.quad };
    let (nodes, weights) = quad.time_rule(pb.mu)?;
    let n_gh = pb.tilde.n_max() + 4;
    let (gx, gw) = gauss_hermite(n_gh)?;
    let s2 = pb.tilde.sigma_sq;
    let sd = s2.sqrt();
    let e = pb.epsilon;
    let t = pb.tilde;
    // the inner sums use the direct polynomial form, the Mehler path the chaos form
    let outer: Vec<(f64, f64)> =
        gx.iter().map(|u| (t.direct_derivative(0, sd * u), t.direct_derivative(1, sd * u))).collect();
    let parts = nodes
        .par_iter()
        .zip(weights.par_iter())
        .map(|(&s, &w)| -> Result<f64> {
            let c = (pb.covariance)(s)?;
            let g = c.map(|v| {
                let cc = (e * v).clamp(-s2, s2);
                let a = cc / sd;
                let b = (s2 - a * a).max(0.0).sqrt();
                let mut acc = 0.0;
                for ((u, wu), (f0, f1)) in gx.iter().zip(&gw).zip(&outer) {
                    for (v2, wv) in gx.iter().zip(&gw) {
                        let z2 = a * u + b * v2;
                        acc += wu * wv * (f1 * t.direct_derivative(1, z2) + f0 * t.direct_derivative(2, z2));
                    }
                }
                acc
            });
            Ok(w * heat_average_at_origin(&g, s, pb.mu)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.iter().sum())
}

/// All renormalization constants for `F̃` at scale `ε`, with `f₂, f₃` taken
/// from the expansion.
pub fn d_constants(pb: &RenormProblem) -> Result<RenormConstants> {
    let ser = MehlerSeries::new(pb.tilde);
    let e = pb.epsilon;
    let ints = integrate_mehler(pb, &ser)?;
    let d22 = e.powi(-2) / 9.0 * ints.i11;
    let d31 = e.powi(-2) / 6.0 * ints.i02;
    let d32 = e.powf(-2.5) / 3.0 * ints.i01;
    let f2 = pb.tilde.f.get(2).copied().unwrap_or(0.0);
    let f3 = pb.tilde.coeff(3);
    let d22_bar = 2.0 * e.powf(-0.5) * f3 * f2 * ints.icc;
    let independent = if pb.tilde.n_max() >= 3 {
        e.powi(-2) / 3.0 * integrate_joint(pb, pb.quad.nodes_per_panel.saturating_sub(2).max(4))?
    } else {
        0.0
    };
    let scale = 1.0 + d22.abs().max(d31.abs()).max(d32.abs());
    if ints.tail > 1e-6 * scale {
        return Err(Error::Truncation(format!("heat-kernel tail {} too large", ints.tail)));
    }
    Ok(RenormConstants {
        d22,
        d22_bar,
        d31,
        d32,
        d32_prime: 2.0 * d31 + 3.0 * d22,
        d32_prime_independent: independent,
        truncation: ints.tail,
        b_eps: Vec::new(),
    })
}

/// Monte-Carlo estimate with standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub se: f64,
}

/// Monte-Carlo values of `(d22, d22_bar, d31, d32)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenormMc {
    pub d22: McEstimate,
    pub d22_bar: McEstimate,
    pub d31: McEstimate,
    pub d32: McEstimate,
}

/// Direct Monte-Carlo oracle: at every time node, `pairs` joint Gaussian
/// pairs `(Z₁, Z₂)` with covariance `εC_ε(s,x)` are drawn once and reused
/// across `x`; the space integral is the exact heat-kernel sum.
pub fn d_constants_mc(pb: &RenormProblem, pairs: usize, seed: u64) -> Result<RenormMc> {
    let (nodes, weights) = pb.quad.time_rule(pb.mu)?;
    let e = pb.epsilon;
    let t = pb.tilde;
    let s2 = t.sigma_sq;
    let sd = s2.sqrt();
    let per_node = nodes
        .par_iter()
        .zip(weights.par_iter())
        .enumerate()
        .map(|(q, (&s, &w))| -> Result<[(f64, f64); 4]> {
            let c = (pb.covariance)(s)?;
            let g = *c.grid();
            let mut delta = RealField::zeros(g);
            delta.values_mut()[g.origin_index()] = 1.0;
            let kernel = heat_propagate(&delta, s, pb.mu)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (q as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let coefs: Vec<(f64, f64, f64)> = c
                .values()
                .iter()
                .map(|v| {
                    let cc = (e * v).clamp(-s2, s2);
                    let a = cc / sd;
                    (a, (s2 - a * a).max(0.0).sqrt(), *v)
                })
                .collect();
            let mut sums = [0.0f64; 4];
            let mut sq = [0.0f64; 4];
            for _ in 0..pairs {
                let u: f64 = StandardNormal.sample(&mut rng);
                let v: f64 = StandardNormal.sample(&mut rng);
                let z1 = sd * u;
                let f0 = t.derivative(0, z1);
                let f1 = t.derivative(1, z1);
                let h2 = z1 * z1 - s2;
                let mut tau = [0.0f64; 4];
                for ((a, b, _), k) in coefs.iter().zip(kernel.values()) {
                    if *k == 0.0 {
                        continue;
                    }
                    let z2 = a * u + b * v;
                    tau[0] += k * f1 * t.derivative(1, z2);
                    tau[1] += k * 0.5 * h2 * (z2 * z2 - s2) / (e * e);
                    tau[2] += k * f0 * t.derivative(2, z2);
                    tau[3] += k * f0 * t.derivative(1, z2);
                }
                for i in 0..4 {
                    sums[i] += tau[i];
                    sq[i] += tau[i] * tau[i];
                }
            }
            let n = pairs as f64;
            let mut out = [(0.0, 0.0); 4];
            for i in 0..4 {
                let mean = sums[i] / n;
                let var = (sq[i] / n - mean * mean).max(0.0) * n / (n - 1.0);
                out[i] = (w * mean, w * w * var / n);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut tot = [(0.0f64, 0.0f64); 4];
    for p in &per_node {
        for i in 0..4 {
            tot[i].0 += p[i].0;
            tot[i].1 += p[i].1;
        }
    }
    let f2 = t.f.get(2).copied().unwrap_or(0.0);
    let f3 = t.coeff(3);
    let est = |i: usize, factor: f64| McEstimate { value: factor * tot[i].0, se: factor.abs() * tot[i].1.sqrt() };
    Ok(RenormMc {
        d22: est(0, e.powi(-2) / 9.0),
        d22_bar: est(1, 2.0 * e.powf(-0.5) * f3 * f2),
        d31: est(2, e.powi(-2) / 6.0),
        d32: est(3, e.powf(-2.5) / 3.0),
    })
}

/// `(λ₀, λ₁, λ₂, λ₃)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaVector {
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl LambdaVector {
    pub fn as_array(&self) -> [f64; 4] {
        [self.lambda0, self.lambda1, self.lambda2, self.lambda3]
    }
}

/// `λ₃ = f₃`, `λ₂ = ε^{−1/2} f₂`, `λ₁ = ε^{−1} f₁ − 9 d22 − 6 d31`,
/// `λ₀ = ε^{−3/2} f₀ − ε^{−1/2} f₂ d31 − 3 d32 − 3 d̄22`.
pub fn lambda_vector(f: [f64; 4], d: &RenormConstants, epsilon: f64) -> LambdaVector {
    let [f0, f1, f2, f3] = f;
    LambdaVector {
        lambda3: f3,
        lambda2: epsilon.powf(-0.5) * f2,
        lambda1: f1 / epsilon - 9.0 * d.d22 - 6.0 * d.d31,
        lambda0: epsilon.powf(-1.5) * f0 - epsilon.powf(-0.5) * f2 * d.d31 - 3.0 * d.d32 - 3.0 * d.d22_bar,
    }
}

/// Coefficients `b_l = C₀ m!/((m−l)! l!)`, `c_l = E[G^{(l)}(Z)]/l!` and
/// `a_l = b_l E[Z^{m−l}] + c_l` for `Z ~ N(0, σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerCoefficient {
    pub l: usize,
    pub b: f64,
    pub c: f64,
    pub a: f64,
}

pub fn power_coefficients(spec: &NonlinearitySpec, sigma_sq: f64) -> Result<Vec<PowerCoefficient>> {
    let nodes = spec.degree() + 2;
    (4..=spec.m)
        .map(|l| {
            let b = spec.c0 * binomial(spec.m, l);
            let c = gaussian_expectation(|z| spec.g_derivative(l, z), sigma_sq, nodes)? / factorial(l);
            let moment = gaussian_expectation(|z| z.powi((spec.m - l) as i32), sigma_sq, nodes)?;
            Ok(PowerCoefficient { l, b, c, a: b * moment + c })
        })
        .collect()
}

/// One ε-slice of a nonlinearity family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyMember {
    pub epsilon: f64,
    pub spec: NonlinearitySpec,
    pub sigma_sq: f64,
    pub lambda: LambdaVector,
}

/// Outcome of the structural checks on a family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub shape_ok: bool,
    pub derivative_bound_ok: bool,
    pub lambda_cauchy_ok: bool,
    pub lambda3_positive: bool,
    pub young_inequality_ok: bool,
    pub delta: f64,
    /// `(ε, x, y, lhs − rhs)` of the worst violation of the mixed-power inequality.
    pub witness: Option<(f64, f64, f64, f64)>,
    pub messages: Vec<String>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.shape_ok
            && self.derivative_bound_ok
            && self.lambda_cauchy_ok
            && self.lambda3_positive
            && self.young_inequality_ok
    }
}

/// Checks the structural hypotheses on a family indexed by decreasing `ε`:
/// shape `C₀x^m + G` with bounded `G^{(m₁)}`, the exponential derivative bound,
/// convergence of `λ_ε` (successive differences shrink below `cauchy_tol`),
/// `λ₃ > 0`, and the mixed-power inequality on a log-spaced `(x, y)` grid.
pub fn assumption1_check(family: &[FamilyMember], m1: usize, cauchy_tol: f64) -> Result<AssumptionReport> {
    if family.is_empty() {
        return Err(Error::Shape("empty family".into()));
    }
    let mut messages = Vec::new();
    let mut shape_ok = true;
    let mut c1: f64 = 0.0;
    for fm in family {
        let s = &fm.spec;
        if m1 < 4 || m1 > s.m {
            shape_ok = false;
            messages.push(format!("m1 = {m1} outside [4, {}]", s.m));
        }
        if s.g_degree() > m1 {
            shape_ok = false;
            messages.push(format!("G^({m1}) is unbounded at eps = {}", fm.epsilon));
        } else if m1 < s.g.len() {
            c1 = c1.max((s.g[m1] * factorial(m1)).abs());
        }
    }
    let derivative_bound_ok = family.iter().all(|fm| {
        (-400..=400).all(|i| {
            let x = 0.05 * i as f64;
            let tot: f64 = (0..=9).map(|k| fm.spec.derivative(k, x).abs()).sum();
            tot.is_finite() && tot * (-x.abs()).exp() < 1e12
        })
    });
    let lams: Vec<[f64; 4]> = family.iter().map(|f| f.lambda.as_array()).collect();
    let lambda_cauchy_ok = if lams.len() < 3 {
        true
    } else {
        let last = lams[lams.len() - 1];
        let prev = lams[lams.len() - 2];
        (0..4).all(|i| (last[i] - prev[i]).abs() <= cauchy_tol * (1.0 + last[i].abs()))
    };
    if !lambda_cauchy_ok {
        messages.push("lambda_eps has not settled on the eps grid".into());
    }
    let lambda3 = family.last().map(|f| f.lambda.lambda3).unwrap_or(0.0);
    let lambda3_positive = lambda3 > 0.0;
    let mut witness = None;
    let mut worst = 0.0f64;
    let mut delta = 0.0;
    for fm in family {
        let s = &fm.spec;
        let m = s.m as f64;
        if s.m <= 3 {
            continue;
        }
        delta = 1e-6 * s.c0.min(lambda3.abs().max(1e-300));
        let coeffs = power_coefficients(s, fm.sigma_sq)?;
        for ix in -40..=40 {
            for iy in -40..=40 {
                let x = 10f64.powf(ix as f64 * 0.2);
                let y = 10f64.powf(iy as f64 * 0.2);
                let mixed = |l: f64| x.powf((l - 3.0) / (m - 3.0)) * y.powf((m - l) / (m - 3.0));
                let mut rhs = 0.0;
                for pc in coeffs.iter().filter(|pc| pc.l < m1) {
                    let weight = if pc.l % 2 == 0 { pc.c.abs() } else { pc.a.min(0.0).abs() };
                    rhs += 2.0 * weight * mixed(pc.l as f64);
                }
                rhs += 2.0 * c1 / factorial(m1) * mixed(m1 as f64);
                let lhs = (s.c0 - delta) * x + (lambda3 - delta) * y;
                let gap = lhs - rhs;
                if gap < worst {
                    worst = gap;
                    witness = Some((fm.epsilon, x, y, gap));
                }
            }
        }
    }
    let young_inequality_ok = witness.is_none();
    Ok(AssumptionReport {
        shape_ok,
        derivative_bound_ok,
        lambda_cauchy_ok,
        lambda3_positive,
        young_inequality_ok,
        delta,
        witness,
        messages,
    })
}
