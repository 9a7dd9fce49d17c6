//! Periodic lattices, field containers, spectral transforms and the heat
//! semigroup of `L = d/dt + (-Δ + μ)`.
//!
//! Transforms are unnormalized in the forward direction and carry `1/N` on the
//! way back. Coordinates are centered: along each axis `x_i = i·h − ℓ/2`, so the
//! origin sits at index `n/2`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::graded_time_rule;

/// A periodic `dim`-dimensional lattice with `n_points` per axis on a box of
/// side `box_length`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    n_points: usize,
    box_length: f64,
}

impl Grid {
    pub fn new(dim: usize, n_points: usize, box_length: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Dimension(format!("dim must be 1, 2 or 3, got {dim}")));
        }
        if n_points < 8 || !n_points.is_power_of_two() {
            return Err(Error::Dimension(format!(
                "n_points must be a power of two >= 8, got {n_points}"
            )));
        }
        if !(box_length > 0.0) || !box_length.is_finite() {
            return Err(Error::Domain(format!("box_length must be positive, got {box_length}")));
        }
        Ok(Self { dim, n_points, box_length })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn box_length(&self) -> f64 {
        self.box_length
    }

    pub fn spacing(&self) -> f64 {
        self.box_length / self.n_points as f64
    }

    /// Total number of lattice sites, `n_points^dim`.
    pub fn len(&self) -> usize {
        self.n_points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Physical volume of one cell, `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Signed wave index of a 1-d position `i`, in `[-n/2, n/2)`.
    pub fn wave_index(&self, i: usize) -> i64 {
        let n = self.n_points as i64;
        let i = i as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    /// Multi-index of a flat (row-major) position; unused axes are zero.
    pub fn unflatten(&self, flat: usize) -> [usize; 3] {
        let n = self.n_points;
        let mut out = [0usize; 3];
        let mut rem = flat;
        for a in (0..self.dim).rev() {
            out[a] = rem % n;
            rem /= n;
        }
        out
    }

    pub fn flatten(&self, idx: [usize; 3]) -> usize {
        let n = self.n_points;
        (0..self.dim).fold(0, |acc, a| acc * n + idx[a] % n)
    }

    /// Signed wave indices of a flat spectral position.
    pub fn wave_indices(&self, flat: usize) -> [i64; 3] {
        let m = self.unflatten(flat);
        let mut out = [0i64; 3];
        for a in 0..self.dim {
            out[a] = self.wave_index(m[a]);
        }
        out
    }

    /// Euclidean length of the integer wave index (frequency in units of `2π/ℓ`).
    pub fn index_norm(&self, flat: usize) -> f64 {
        let k = self.wave_indices(flat);
        ((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64).sqrt()
    }

    /// Physical squared frequency `|k|²` with `k = 2π·idx/ℓ`.
    pub fn k_squared(&self, flat: usize) -> f64 {
        let k = self.wave_indices(flat);
        let s = 2.0 * std::f64::consts::PI / self.box_length;
        s * s * (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64
    }

    /// Centered physical coordinates of a flat position.
    pub fn coords(&self, flat: usize) -> [f64; 3] {
        let m = self.unflatten(flat);
        let h = self.spacing();
        let mut out = [0.0; 3];
        for a in 0..self.dim {
            out[a] = m[a] as f64 * h - 0.5 * self.box_length;
        }
        out
    }

    /// Flat index of the lattice site at the origin.
    pub fn origin_index(&self) -> usize {
        let c = self.n_points / 2;
        self.flatten([c, c, c])
    }

    /// Largest Littlewood–Paley block index resolved by this grid.
    pub fn j_max(&self) -> i32 {
        self.n_points.trailing_zeros() as i32 - 2
    }
}

/// A real field sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    grid: Grid,
    values: Vec<f64>,
}

impl RealField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "field has {} values, grid expects {}",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { grid: self.grid, values })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// `self += c·other`
    pub fn axpy(&mut self, c: f64, other: &Self) -> Result<()> {
        self.check_grid(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn check_grid(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::Dimension("fields live on different grids".into()));
        }
        Ok(())
    }
}

/// Fourier coefficients of a real field (Hermitian-symmetric).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: Grid,
    coefficients: Vec<Complex64>,
}

impl SpectralField {
    pub fn new(grid: Grid, coefficients: Vec<Complex64>) -> Result<Self> {
        if coefficients.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "spectrum has {} coefficients, grid expects {}",
                coefficients.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, coefficients })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut [Complex64] {
        &mut self.coefficients
    }

    /// Multiply coefficient `k` by `m(k)`, where `k` is the flat spectral index.
    pub fn apply_multiplier(&mut self, m: impl Fn(usize) -> f64) {
        for (k, c) in self.coefficients.iter_mut().enumerate() {
            *c *= m(k);
        }
    }

    /// `max_k |c_k − conj(c_{−k})|` relative to `max_k |c_k|`.
    pub fn hermitian_defect(&self) -> f64 {
        let g = self.grid;
        let n = g.n_points();
        let scale = self.coefficients.iter().fold(0.0f64, |m, c| m.max(c.norm()));
        if scale == 0.0 {
            return 0.0;
        }
        let defect = (0..g.len()).fold(0.0f64, |m, k| {
            let idx = g.unflatten(k);
            let mut neg = [0usize; 3];
            for a in 0..g.dim() {
                neg[a] = (n - idx[a]) % n;
            }
            let c = self.coefficients[k] - self.coefficients[g.flatten(neg)].conj();
            m.max(c.norm())
        });
        defect / scale
    }

    pub fn multiplied(&self, m: impl Fn(usize) -> f64) -> Self {
        let mut out = self.clone();
        out.apply_multiplier(m);
        out
    }
}

/// Frames `f(t_n)`, `t_n = n·dt`, on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    grid: Grid,
    dt: f64,
    frames: Vec<RealField>,
}

impl SpaceTimeField {
    pub fn new(grid: Grid, dt: f64, frames: Vec<RealField>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::Shape("a space-time field needs at least two frames".into()));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Domain(format!("time step must be positive, got {dt}")));
        }
        if frames.iter().any(|f| *f.grid() != grid) {
            return Err(Error::Dimension("frame grid differs from field grid".into()));
        }
        Ok(Self { grid, dt, frames })
    }

    pub fn zeros(grid: Grid, dt: f64, n_frames: usize) -> Result<Self> {
        Self::new(grid, dt, vec![RealField::zeros(grid); n_frames])
    }

    pub fn from_fn(grid: Grid, dt: f64, n_frames: usize, f: impl Fn(f64, [f64; 3]) -> f64) -> Result<Self> {
        let frames = (0..n_frames)
            .map(|n| RealField::from_fn(grid, |x| f(n as f64 * dt, x)))
            .collect();
        Self::new(grid, dt, frames)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn frames(&self) -> &[RealField] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [RealField] {
        &mut self.frames
    }

    pub fn into_frames(self) -> Vec<RealField> {
        self.frames
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    /// Final time `(n_frames − 1)·dt`.
    pub fn final_time(&self) -> f64 {
        (self.frames.len() - 1) as f64 * self.dt
    }

    pub fn max_abs(&self) -> f64 {
        self.frames.iter().fold(0.0, |m, f| m.max(f.max_abs()))
    }

    pub fn map_frames(&self, f: impl Fn(&RealField) -> Result<RealField>) -> Result<Self> {
        let frames = self.frames.iter().map(f).collect::<Result<Vec<_>>>()?;
        Self::new(self.grid, self.dt, frames)
    }

    pub fn zip_frames(
        &self,
        other: &Self,
        f: impl Fn(&RealField, &RealField) -> Result<RealField>,
    ) -> Result<Self> {
        self.check_compatible(other)?;
        let frames = self
            .frames
            .iter()
            .zip(&other.frames)
            .map(|(a, b)| f(a, b))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.grid, self.dt, frames)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_frames(other, |a, b| a.add(b))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_frames(other, |a, b| a.sub(b))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_frames(other, |a, b| a.mul(b))
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            dt: self.dt,
            frames: self.frames.iter().map(|f| f.scale(c)).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            dt: self.dt,
            frames: self.frames.iter().map(|fr| fr.map(&f)).collect(),
        }
    }

    /// `self += c·other`
    pub fn axpy(&mut self, c: f64, other: &Self) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.frames.iter_mut().zip(&other.frames) {
            a.axpy(c, b)?;
        }
        Ok(())
    }

    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid || self.frames.len() != other.frames.len() {
            return Err(Error::Dimension("space-time fields have different shapes".into()));
        }
        if (self.dt - other.dt).abs() > 1e-14 * self.dt {
            return Err(Error::Dimension("space-time fields have different time steps".into()));
        }
        Ok(())
    }
}

type PlanKey = (usize, bool);

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<PlanKey, Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (planner, cache) = &mut *guard;
        cache
            .entry((n, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(n)
                } else {
                    planner.plan_fft_forward(n)
                }
            })
            .clone()
    })
}

/// In-place d-dimensional transform by successive 1-d passes along each axis.
fn fft_nd(data: &mut [Complex64], grid: &Grid, inverse: bool) {
    let n = grid.n_points();
    let fft = plan(n, inverse);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let total = data.len();
    let mut line = vec![Complex64::default(); total];
    for axis in 0..grid.dim() {
        let stride = n.pow((grid.dim() - 1 - axis) as u32);
        if stride == 1 {
            fft.process_with_scratch(data, &mut scratch);
            continue;
        }
        // gather every line along `axis` into contiguous storage
        let block = stride * n;
        let mut w = 0;
        for outer in (0..total).step_by(block) {
            for inner in 0..stride {
                for i in 0..n {
                    line[w] = data[outer + inner + i * stride];
                    w += 1;
                }
            }
        }
        fft.process_with_scratch(&mut line, &mut scratch);
        let mut r = 0;
        for outer in (0..total).step_by(block) {
            for inner in 0..stride {
                for i in 0..n {
                    data[outer + inner + i * stride] = line[r];
                    r += 1;
                }
            }
        }
    }
}

/// Forward transform, `F(k) = Σ_x f(x) e^{-2πi k·x/N}`.
pub fn to_spectral(f: &RealField) -> SpectralField {
    let mut data: Vec<Complex64> = f.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_nd(&mut data, f.grid(), false);
    SpectralField { grid: *f.grid(), coefficients: data }
}

/// Inverse transform. The real part is kept, which is the orthogonal
/// projection onto Hermitian spectra; use [`SpectralField::hermitian_defect`]
/// to validate externally built coefficients.
pub fn to_physical(g: &SpectralField) -> RealField {
    let mut data = g.coefficients.clone();
    fft_nd(&mut data, g.grid(), true);
    let norm = 1.0 / data.len() as f64;
    RealField { grid: g.grid, values: data.iter().map(|c| c.re * norm).collect() }
}

/// Apply a real Fourier multiplier `m(k)` (flat spectral index) to a field.
pub fn apply_multiplier(f: &RealField, m: impl Fn(usize) -> f64) -> RealField {
    let mut s = to_spectral(f);
    s.apply_multiplier(m);
    to_physical(&s)
}

/// Symbol `|k|² + μ` of `−Δ + μ`.
pub fn heat_symbol(grid: &Grid, flat: usize, mu: f64) -> f64 {
    grid.k_squared(flat) + mu
}

/// `e^{−t(−Δ+μ)} f`.
pub fn heat_propagate(f: &RealField, t: f64, mu: f64) -> Result<RealField> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("propagation time must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(f.clone());
    }
    let g = *f.grid();
    Ok(apply_multiplier(f, |k| (-t * heat_symbol(&g, k, mu)).exp()))
}

/// `φ1(z) = (1 − e^{−z})/z` with its small-argument limit.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - 0.5 * z + z * z / 6.0
    } else {
        -(-z).exp_m1() / z
    }
}

/// Quadrature controls for [`heat_kernel_functional`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatQuadrature {
    /// Truncation time; `None` picks the smallest `T` with `e^{−μT}/μ ≤ tail_tol`.
    pub t_cut: Option<f64>,
    pub tail_tol: f64,
    /// Width of the first graded panel near `s = 0`.
    pub first_panel: f64,
    pub nodes_per_panel: usize,
}

impl Default for HeatQuadrature {
    fn default() -> Self {
        Self { t_cut: None, tail_tol: 1e-10, first_panel: 2f64.powi(-20), nodes_per_panel: 12 }
    }
}

impl HeatQuadrature {
    pub fn resolve_t_cut(&self, mu: f64) -> f64 {
        self.t_cut.unwrap_or_else(|| (1.0 / (mu * self.tail_tol)).ln().max(1.0) / mu)
    }

    /// Time nodes and weights on `[0, T_cut]`.
    pub fn time_rule(&self, mu: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        graded_time_rule(self.resolve_t_cut(mu), self.first_panel, self.nodes_per_panel)
    }
}

/// Value of a heat-kernel integral together with its truncation bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatIntegral {
    pub value: f64,
    /// `e^{−μT}/μ · sup|g(T,·)|`, the neglected tail for integrands bounded by their value at `T`.
    pub tail_bound: f64,
    pub t_cut: f64,
}

/// `∫₀^T ∫ P_s(x) g(s,x) dx ds` for the periodic heat kernel of `−Δ + μ`.
///
/// The inner space integral is `(P_s ⋆ g(s,·))(0)`, evaluated in frequency
/// space; the time integral uses graded Gauss–Legendre panels.
pub fn heat_kernel_functional(
    g: impl Fn(f64) -> Result<RealField>,
    mu: f64,
    quad: &HeatQuadrature,
) -> Result<HeatIntegral> {
    if !(mu > 0.0) {
        return Err(Error::Domain(format!("heat-kernel integrals need mu > 0, got {mu}")));
    }
    let t_cut = quad.resolve_t_cut(mu);
    let (nodes, weights) = quad.time_rule(mu)?;
    let mut value = 0.0;
    for (&s, &w) in nodes.iter().zip(&weights) {
        value += w * heat_average_at_origin(&g(s)?, s, mu)?;
    }
    let tail = g(t_cut)?.max_abs() * (-mu * t_cut).exp() / mu;
    Ok(HeatIntegral { value, tail_bound: tail, t_cut })
}

/// `∫ P_s(x) f(x) dx`, i.e. `(e^{−s(−Δ+μ)} f)` at the origin.
pub fn heat_average_at_origin(f: &RealField, s: f64, mu: f64) -> Result<f64> {
    let grid = *f.grid();
    if grid.len() == 1 {
        return Ok(f.values()[0] * (-s * mu).exp());
    }
    let spec = to_spectral(f);
    // e^{ik·x} at the origin index n/2 is (−1)^{Σ idx}
    let sum: f64 = spec
        .coefficients()
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let idx = grid.wave_indices(k);
            let sign = if (idx[0] + idx[1] + idx[2]).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            sign * c.re * (-s * heat_symbol(&grid, k, mu)).exp()
        })
        .sum();
    Ok(sum / grid.len() as f64)
}

/// Exponential-Euler integration of `L v = f`, `v(0) = v0`:
/// `v^{n+1} = e^{−dt(−Δ+μ)} v^n + φ1 f^n` with `φ1 = (1 − e^{−dt(−Δ+μ)})/(−Δ+μ)`.
/// The last frame of `f` is not used.
pub fn duhamel_solve(f: &SpaceTimeField, mu: f64, v0: &RealField) -> Result<SpaceTimeField> {
    let grid = *f.grid();
    if *v0.grid() != grid {
        return Err(Error::Dimension("initial datum lives on a different grid".into()));
    }
    let stepper = HeatStepper::new(grid, f.dt(), mu);
    let mut frames = Vec::with_capacity(f.n_frames());
    let mut v = v0.clone();
    frames.push(v.clone());
    for fr in &f.frames()[..f.n_frames() - 1] {
        v = stepper.step(&v, fr)?;
        frames.push(v.clone());
    }
    SpaceTimeField::new(grid, f.dt(), frames)
}

/// Precomputed exponential-Euler multipliers for one grid, step and mass.
#[derive(Debug, Clone)]
pub struct HeatStepper {
    grid: Grid,
    decay: Vec<f64>,
    phi: Vec<f64>,
}

impl HeatStepper {
    pub fn new(grid: Grid, dt: f64, mu: f64) -> Self {
        let (decay, phi) = (0..grid.len())
            .map(|k| {
                let lam = heat_symbol(&grid, k, mu);
                ((-dt * lam).exp(), dt * phi1(dt * lam))
            })
            .unzip();
        Self { grid, decay, phi }
    }

    /// One step `E v + φ1 f`.
    pub fn step(&self, v: &RealField, f: &RealField) -> Result<RealField> {
        if *v.grid() != self.grid || *f.grid() != self.grid {
            return Err(Error::Dimension("stepper used on a foreign grid".into()));
        }
        let sv = to_spectral(v);
        let sf = to_spectral(f);
        let coeffs = sv
            .coefficients()
            .iter()
            .zip(sf.coefficients())
            .enumerate()
            .map(|(k, (a, b))| a * self.decay[k] + b * self.phi[k])
            .collect();
        Ok(to_physical(&SpectralField::new(self.grid, coeffs)?))
    }

    /// Discrete source `φ1^{-1}(v^{n+1} − E v^n)`, the exact inverse of [`step`](Self::step).
    pub fn source(&self, v_now: &RealField, v_next: &RealField) -> Result<RealField> {
        let a = to_spectral(v_now);
        let b = to_spectral(v_next);
        let coeffs = a
            .coefficients()
            .iter()
            .zip(b.coefficients())
            .enumerate()
            .map(|(k, (x, y))| (y - x * self.decay[k]) / self.phi[k])
            .collect();
        Ok(to_physical(&SpectralField::new(self.grid, coeffs)?))
    }
}

/// Applies the discrete heat operator to a trajectory: frame `n` of the result
/// is the source that maps frame `n` to frame `n+1`. The last frame repeats
/// the previous one so that the output has the input's shape.
pub fn discrete_heat_operator(v: &SpaceTimeField, mu: f64) -> Result<SpaceTimeField> {
    let stepper = HeatStepper::new(*v.grid(), v.dt(), mu);
    let mut frames = v
        .frames()
        .windows(2)
        .map(|w| stepper.source(&w[0], &w[1]))
        .collect::<Result<Vec<_>>>()?;
    let last = frames.last().cloned().expect("at least two frames");
    frames.push(last);
    SpaceTimeField::new(*v.grid(), v.dt(), frames)
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"SPDEFLD1";

/// Grid metadata written next to a binary snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub format: String,
    pub dim: usize,
    pub n_points: usize,
    pub box_length: f64,
    pub spacing: f64,
    pub time: Option<f64>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `field` as a 32-byte header (magic, dim, n_points, box length) followed
/// by little-endian `f64` values, plus a `<path>.json` sidecar.
pub fn write_snapshot(path: &Path, field: &RealField, time: Option<f64>) -> Result<()> {
    let g = field.grid();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&(g.dim() as u64).to_le_bytes())?;
    w.write_all(&(g.n_points() as u64).to_le_bytes())?;
    w.write_all(&g.box_length().to_le_bytes())?;
    for v in field.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    let meta = SnapshotMeta {
        format: "SPDEFLD1".into(),
        dim: g.dim(),
        n_points: g.n_points(),
        box_length: g.box_length(),
        spacing: g.spacing(),
        time,
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<RealField> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 32];
    r.read_exact(&mut header)?;
    if &header[..8] != SNAPSHOT_MAGIC {
        return Err(Error::Shape("not a SPDEFLD1 snapshot".into()));
    }
    let word = |i: usize| -> [u8; 8] { header[i..i + 8].try_into().expect("8 bytes") };
    let dim = u64::from_le_bytes(word(8)) as usize;
    let n = u64::from_le_bytes(word(16)) as usize;
    let box_length = f64::from_le_bytes(word(24));
    let grid = Grid::new(dim, n, box_length)?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * grid.len() {
        return Err(Error::Dimension(format!(
            "snapshot payload has {} bytes, expected {}",
            bytes.len(),
            8 * grid.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    RealField::new(grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn pseudo_random(grid: Grid, seed: u64) -> RealField {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let values = (0..grid.len())
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect();
        RealField::new(grid, values).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(4, 16, 1.0).is_err());
        assert!(Grid::new(1, 12, 1.0).is_err());
        assert!(Grid::new(1, 4, 1.0).is_err());
        assert!(Grid::new(2, 16, 0.0).is_err());
    }

    #[test]
    fn delta_has_flat_spectrum() {
        let g = Grid::new(2, 8, 1.0).unwrap();
        let mut v = vec![0.0; g.len()];
        v[0] = 1.0;
        let s = to_spectral(&RealField::new(g, v).unwrap());
        for c in s.coefficients() {
            assert!((c - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn constant_has_single_mode() {
        let g = Grid::new(3, 8, 2.0).unwrap();
        let s = to_spectral(&RealField::constant(g, 2.5));
        assert!((s.coefficients()[0].re - 2.5 * g.len() as f64).abs() < 1e-10);
        assert!(s.coefficients()[1..].iter().all(|c| c.norm() < 1e-10));
    }

    #[test]
    fn roundtrip_and_parseval() {
        for (d, n) in [(1, 64), (2, 16), (3, 8)] {
            let g = Grid::new(d, n, 3.0).unwrap();
            let f = pseudo_random(g, d as u64);
            let s = to_spectral(&f);
            assert!(s.hermitian_defect() < 1e-12);
            let back = to_physical(&s);
            let err = f.sub(&back).unwrap().max_abs();
            assert!(err <= 1e-12 * f.max_abs());
            let e_x: f64 = f.values().iter().map(|v| v * v).sum();
            let e_k: f64 = s.coefficients().iter().map(|c| c.norm_sqr()).sum::<f64>() / g.len() as f64;
            assert!((e_x - e_k).abs() < 1e-10 * e_x);
        }
    }

    #[test]
    fn heat_on_constant_and_mode() {
        let g = Grid::new(1, 32, 2.0 * PI).unwrap();
        let c = RealField::constant(g, 3.0);
        let out = heat_propagate(&c, 0.7, 1.3).unwrap();
        assert!(out.values().iter().all(|v| (v - 3.0 * (-0.7f64 * 1.3).exp()).abs() < 1e-12));
        let mode = RealField::from_fn(g, |x| (3.0 * x[0]).cos());
        let out = heat_propagate(&mode, 0.1, 1.0).unwrap();
        let expect = mode.scale((-0.1f64 * 10.0).exp());
        assert!(out.sub(&expect).unwrap().max_abs() < 1e-12);
        assert!(heat_propagate(&mode, -1.0, 1.0).is_err());
    }

    #[test]
    fn heat_semigroup_and_contraction() {
        let g = Grid::new(2, 16, 4.0).unwrap();
        let f = pseudo_random(g, 9);
        let a = heat_propagate(&heat_propagate(&f, 0.01, 0.5).unwrap(), 0.02, 0.5).unwrap();
        let b = heat_propagate(&f, 0.03, 0.5).unwrap();
        assert!(a.sub(&b).unwrap().max_abs() < 1e-12);
        assert!(b.max_abs() <= f.max_abs());
    }

    #[test]
    fn heat_functional_of_one() {
        let g = Grid::new(1, 16, 1.0).unwrap();
        let r = heat_kernel_functional(|_| Ok(RealField::constant(g, 1.0)), 1.0, &HeatQuadrature::default())
            .unwrap();
        assert!((r.value - 1.0).abs() < 1e-9);
        assert!(r.tail_bound < 1e-9);
        assert!(heat_kernel_functional(|_| Ok(RealField::zeros(g)), 0.0, &HeatQuadrature::default()).is_err());
    }

    #[test]
    fn duhamel_constant_forcing() {
        let g = Grid::new(1, 8, 1.0).unwrap();
        let dt = 0.01;
        let f = SpaceTimeField::from_fn(g, dt, 201, |_, _| 2.0).unwrap();
        let v = duhamel_solve(&f, 1.0, &RealField::zeros(g)).unwrap();
        // exponential Euler is exact for time-constant forcing
        let t = v.final_time();
        let want = 2.0 * (1.0 - (-t).exp());
        assert!((v.frames()[200].values()[3] - want).abs() < 1e-12);
        let src = discrete_heat_operator(&v, 1.0).unwrap();
        assert!(src.sub(&f).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn snapshot_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(2, 8, 1.5).unwrap();
        let f = pseudo_random(g, 4);
        let p = dir.path().join("f.bin");
        write_snapshot(&p, &f, Some(0.5)).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 32 + 8 * 64);
        assert_eq!(read_snapshot(&p).unwrap(), f);
        assert!(sidecar_path(&p).exists());
    }
}
