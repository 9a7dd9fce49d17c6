//! Bony paraproducts, resonant products, commutators, the time-mollified
//! paraproduct and the space-time localization operators `V_>`, `V_≤`.
//!
//! Conventions: `f ≺ g = Σ_j (Σ_{i ≤ j−2} Δ_i f) Δ_j g`,
//! `f ∘ g = Σ_{|i−j| ≤ 1} Δ_i f Δ_j g`, `f ≻ g = g ≺ f`.

use serde::{Deserialize, Serialize};

use crate::besov::{chi, theta, DyadicPartition};
use crate::error::Result;
use crate::grid::{to_physical, to_spectral, RealField, SpaceTimeField};
use crate::quadrature::gauss_legendre;

/// Littlewood–Paley blocks of one field with their cumulative low-pass sums.
#[derive(Debug, Clone)]
pub struct BlockSet {
    blocks: Vec<RealField>,
    partial: Vec<RealField>,
}

impl BlockSet {
    pub fn new(f: &RealField, p: &DyadicPartition) -> Result<Self> {
        let blocks = p.all_blocks(f)?;
        let mut partial = Vec::with_capacity(blocks.len());
        let mut acc = RealField::zeros(*f.grid());
        for b in &blocks {
            acc.axpy(1.0, b)?;
            partial.push(acc.clone());
        }
        Ok(Self { blocks, partial })
    }

    /// `Δ_j f`, `j ≥ −1`.
    pub fn block(&self, j: i32) -> &RealField {
        &self.blocks[(j + 1) as usize]
    }

    /// `Σ_{i ≤ j} Δ_i f`, or `None` when empty (`j < −1`).
    pub fn low_pass(&self, j: i32) -> Option<&RealField> {
        if j < -1 {
            None
        } else {
            Some(&self.partial[((j + 1) as usize).min(self.partial.len() - 1)])
        }
    }

    pub fn j_max(&self) -> i32 {
        self.blocks.len() as i32 - 2
    }
}

fn accumulate_product(out: &mut [f64], a: &RealField, b: &RealField) {
    for ((o, x), y) in out.iter_mut().zip(a.values()).zip(b.values()) {
        *o += x * y;
    }
}

fn para_lt_sets(f: &BlockSet, g: &BlockSet) -> RealField {
    let grid = *g.block(-1).grid();
    let mut out = vec![0.0; grid.len()];
    for j in 1..=g.j_max() {
        if let Some(s) = f.low_pass(j - 2) {
            accumulate_product(&mut out, s, g.block(j));
        }
    }
    RealField::new(grid, out).expect("grid length")
}

fn resonant_sets(f: &BlockSet, g: &BlockSet) -> RealField {
    let grid = *g.block(-1).grid();
    let jm = g.j_max();
    let mut out = vec![0.0; grid.len()];
    for j in -1..=jm {
        for i in (j - 1).max(-1)..=(j + 1).min(jm) {
            accumulate_product(&mut out, f.block(i), g.block(j));
        }
    }
    RealField::new(grid, out).expect("grid length")
}

fn check_pair(f: &RealField, g: &RealField) -> Result<()> {
    f.check_grid(g)
}

/// `f ≺ g`
pub fn para_lt(f: &RealField, g: &RealField, p: &DyadicPartition) -> Result<RealField> {
    check_pair(f, g)?;
    Ok(para_lt_sets(&BlockSet::new(f, p)?, &BlockSet::new(g, p)?))
}

/// `f ≻ g = g ≺ f`
pub fn para_gt(f: &RealField, g: &RealField, p: &DyadicPartition) -> Result<RealField> {
    para_lt(g, f, p)
}

/// `f ∘ g`
pub fn resonant(f: &RealField, g: &RealField, p: &DyadicPartition) -> Result<RealField> {
    check_pair(f, g)?;
    Ok(resonant_sets(&BlockSet::new(f, p)?, &BlockSet::new(g, p)?))
}

/// `f ≼ g = f ≺ g + f ∘ g`
pub fn para_le(f: &RealField, g: &RealField, p: &DyadicPartition) -> Result<RealField> {
    let b = bony(f, g, p)?;
    b.lt.add(&b.res)
}

/// `f ≽ g = f ≻ g + f ∘ g`
pub fn para_ge(f: &RealField, g: &RealField, p: &DyadicPartition) -> Result<RealField> {
    let b = bony(f, g, p)?;
    b.gt.add(&b.res)
}

/// The three pieces of Bony's decomposition of `fg`.
#[derive(Debug, Clone)]
pub struct Bony {
    pub lt: RealField,
    pub res: RealField,
    pub gt: RealField,
}

pub fn bony(f: &RealField, g: &RealField, p: &DyadicPartition) -> Result<Bony> {
    check_pair(f, g)?;
    let bf = BlockSet::new(f, p)?;
    let bg = BlockSet::new(g, p)?;
    Ok(Bony { lt: para_lt_sets(&bf, &bg), res: resonant_sets(&bf, &bg), gt: para_lt_sets(&bg, &bf) })
}

/// `com(f, g, h) = (f ≺ g) ∘ h − f (g ∘ h)`
pub fn commutator(f: &RealField, g: &RealField, h: &RealField, p: &DyadicPartition) -> Result<RealField> {
    let fg = para_lt(f, g, p)?;
    let a = resonant(&fg, h, p)?;
    let b = f.mul(&resonant(g, h, p)?)?;
    a.sub(&b)
}

/// Applies a binary field operation frame by frame.
pub fn framewise(
    f: &SpaceTimeField,
    g: &SpaceTimeField,
    op: impl Fn(&RealField, &RealField) -> Result<RealField>,
) -> Result<SpaceTimeField> {
    f.zip_frames(g, op)
}

/// Time mollifier `Q(s) = c·exp(−1/(1−s²))` on `(−1, 1)` with unit mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mollifier {
    norm: f64,
}

fn raw_bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

impl Mollifier {
    pub fn new() -> Result<Self> {
        let mass = composite_integral(raw_bump, -1.0, 1.0, 64, 16)?;
        Ok(Self { norm: 1.0 / mass })
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.norm * raw_bump(s)
    }
}

pub(crate) fn composite_integral(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    panels: usize,
    nodes: usize,
) -> Result<f64> {
    let (x, w) = gauss_legendre(nodes, 0.0, 1.0)?;
    let h = (b - a) / panels as f64;
    Ok((0..panels)
        .map(|p| {
            let lo = a + p as f64 * h;
            x.iter().zip(&w).map(|(x, w)| w * h * f(lo + h * x)).sum::<f64>()
        })
        .sum())
}

/// Result of [`modified_para`].
#[derive(Debug, Clone)]
pub struct ModifiedPara {
    pub field: SpaceTimeField,
    /// Blocks whose mollification window `2^{−2i}` is shorter than `dt`; for
    /// those `Q_i` reduces to sampling the current frame.
    pub degenerate_blocks: Vec<i32>,
}

/// Normalized lattice weights of `Q_i` at offsets `m·dt`, `m = −M..=M`.
fn mollifier_weights(q: &Mollifier, i: i32, dt: f64) -> (Vec<f64>, bool) {
    let width = 2f64.powi(-2 * i);
    let m_max = (width / dt).floor() as i64;
    if m_max == 0 {
        return (vec![1.0], true);
    }
    let raw: Vec<f64> = (-m_max..=m_max).map(|m| q.eval(m as f64 * dt / width)).collect();
    let total: f64 = raw.iter().sum();
    (raw.into_iter().map(|w| w / total).collect(), false)
}

/// `f ⋔ g = Σ_j S_{j}(Q_j f) Δ_j g`, with the same low-pass `Σ_{i ≤ j−2}` as `≺`.
///
/// `Q_j f(t) = ∫ 2^{2j} Q(2^{2j}(t−s)) f(s∨0) ds` is evaluated by a
/// unit-mass lattice rule on the frame times; times beyond the last frame are
/// clamped to it.
pub fn modified_para(
    f: &SpaceTimeField,
    g: &SpaceTimeField,
    q: &Mollifier,
    p: &DyadicPartition,
) -> Result<ModifiedPara> {
    f.check_compatible(g)?;
    let grid = *f.grid();
    let nt = f.n_frames();
    let dt = f.dt();
    let f_spec: Vec<_> = f.frames().iter().map(to_spectral).collect();
    let g_blocks = g
        .frames()
        .iter()
        .map(|fr| p.all_blocks(fr))
        .collect::<Result<Vec<_>>>()?;
    let mut out: Vec<Vec<f64>> = vec![vec![0.0; grid.len()]; nt];
    let mut degenerate = Vec::new();
    for j in 1..=p.j_max() {
        let (weights, degen) = mollifier_weights(q, j, dt);
        if degen {
            degenerate.push(j);
        }
        let half = (weights.len() / 2) as i64;
        for n in 0..nt {
            let mut acc = vec![num_complex::Complex64::default(); grid.len()];
            for (idx, w) in weights.iter().enumerate() {
                let m = idx as i64 - half;
                let src = (n as i64 - m).clamp(0, nt as i64 - 1) as usize;
                for (a, c) in acc.iter_mut().zip(f_spec[src].coefficients()) {
                    *a += c * *w;
                }
            }
            let mut spec = crate::grid::SpectralField::new(grid, acc)?;
            spec.apply_multiplier(|k| p.low_pass_multiplier(j - 2, k));
            let low = to_physical(&spec);
            let gb = &g_blocks[n][(j + 1) as usize];
            for ((o, a), b) in out[n].iter_mut().zip(low.values()).zip(gb.values()) {
                *o += a * b;
            }
        }
    }
    let frames = out
        .into_iter()
        .map(|v| RealField::new(grid, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(ModifiedPara { field: SpaceTimeField::new(grid, dt, frames)?, degenerate_blocks: degenerate })
}

/// Space shells `w_k` in `|x|`, time shells `v_ℓ` in `t`, and the level
/// schedule `L_{k,ℓ} = L + ⌈(k+ℓ)/2⌉`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSchedule {
    pub base: i32,
    /// Top space shell; the last shell absorbs everything beyond.
    pub k_max: i32,
    /// Top time shell.
    pub l_max: i32,
}

fn dyadic_shell(r: f64, k: i32, top: i32) -> f64 {
    if k == -1 {
        if top == -1 {
            1.0
        } else {
            chi(r)
        }
    } else if k == top {
        1.0 - chi(r / 2f64.powi(k))
    } else {
        theta(r / 2f64.powi(k))
    }
}

impl LocalizationSchedule {
    /// Shell counts sized so the outermost shells reach the box corner and `T`.
    pub fn for_field(base: i32, f: &SpaceTimeField) -> Self {
        let g = f.grid();
        let r_max = 0.5 * g.box_length() * (g.dim() as f64).sqrt();
        let shells = |extent: f64| -> i32 { (extent.max(1.0).log2().ceil() as i32 + 1).max(0) };
        Self { base, k_max: shells(r_max), l_max: shells(f.final_time()) }
    }

    pub fn level(&self, k: i32, l: i32) -> i32 {
        self.base + (k + l).div_euclid(2) + (k + l).rem_euclid(2)
    }

    pub fn space_weight(&self, k: i32, x: [f64; 3]) -> f64 {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        dyadic_shell(r, k, self.k_max)
    }

    pub fn time_weight(&self, l: i32, t: f64) -> f64 {
        dyadic_shell(t, l, self.l_max)
    }
}

/// `(V_> f, V_≤ f)` with `V_> f = Σ v_ℓ w_k Δ_{>L_{kℓ}} f` and
/// `V_≤ f = Σ v_ℓ w_k Δ_{≤L_{kℓ}} f`.
pub fn localize(
    f: &SpaceTimeField,
    sched: &LocalizationSchedule,
    p: &DyadicPartition,
) -> Result<(SpaceTimeField, SpaceTimeField)> {
    let grid = *f.grid();
    let space: Vec<Vec<f64>> = (-1..=sched.k_max)
        .map(|k| (0..grid.len()).map(|i| sched.space_weight(k, grid.coords(i))).collect())
        .collect();
    let mut gt_frames = Vec::with_capacity(f.n_frames());
    let mut le_frames = Vec::with_capacity(f.n_frames());
    for (n, fr) in f.frames().iter().enumerate() {
        let t = n as f64 * f.dt();
        let blocks = BlockSet::new(fr, p)?;
        let mut gt = vec![0.0; grid.len()];
        let mut le = vec![0.0; grid.len()];
        for l in -1..=sched.l_max {
            let vt = sched.time_weight(l, t);
            if vt == 0.0 {
                continue;
            }
            for k in -1..=sched.k_max {
                let low = blocks.low_pass(sched.level(k, l));
                let wk = &space[(k + 1) as usize];
                for i in 0..grid.len() {
                    let c = vt * wk[i];
                    if c == 0.0 {
                        continue;
                    }
                    let lo = low.map_or(0.0, |s| s.values()[i]);
                    le[i] += c * lo;
                    gt[i] += c * (fr.values()[i] - lo);
                }
            }
        }
        gt_frames.push(RealField::new(grid, gt)?);
        le_frames.push(RealField::new(grid, le)?);
    }
    Ok((
        SpaceTimeField::new(grid, f.dt(), gt_frames)?,
        SpaceTimeField::new(grid, f.dt(), le_frames)?,
    ))
}

pub fn localize_gt(f: &SpaceTimeField, sched: &LocalizationSchedule, p: &DyadicPartition) -> Result<SpaceTimeField> {
    Ok(localize(f, sched, p)?.0)
}

pub fn localize_le(f: &SpaceTimeField, sched: &LocalizationSchedule, p: &DyadicPartition) -> Result<SpaceTimeField> {
    Ok(localize(f, sched, p)?.1)
}
