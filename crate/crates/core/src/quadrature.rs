//! Gaussian quadrature rules built with the Golub–Welsch eigenvalue method.
//!
//! Both rules are returned as `(nodes, weights)` pairs. Gauss–Hermite uses the
//! probabilists' weight, normalized so that the weights sum to one: the rule
//! computes `E[g(Z)]` for `Z ~ N(0, 1)` directly.

use crate::error::{Error, Result};

/// Symmetric tridiagonal eigensolver (implicit QL with Wilkinson shifts).
///
/// Returns the eigenvalues together with the first component of each
/// normalized eigenvector.
fn tridiagonal_eigen(diag: &[f64], offdiag: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(offdiag);
    // z holds only the first row of the eigenvector matrix.
    let mut z = vec![0.0; n];
    z[0] = 1.0;

    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::Accuracy("tridiagonal QL did not converge".into()));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                let zf = z[i + 1];
                z[i + 1] = s * z[i] + c * zf;
                z[i] = c * z[i] - s * zf;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok((d, z))
}

fn sorted_rule(nodes: Vec<f64>, first: Vec<f64>, mass: f64) -> (Vec<f64>, Vec<f64>) {
    let mut pairs: Vec<(f64, f64)> = nodes
        .into_iter()
        .zip(first)
        .map(|(x, v)| (x, mass * v * v))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Gauss–Legendre rule with `n` nodes on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::Domain("quadrature needs at least one node".into()));
    }
    if n == 1 {
        return Ok((vec![0.5 * (a + b)], vec![b - a]));
    }
    let diag = vec![0.0; n];
    let off: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    let (x, z) = tridiagonal_eigen(&diag, &off)?;
    let (x, w) = sorted_rule(x, z, 2.0);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    Ok((
        x.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|wi| wi * half).collect(),
    ))
}

/// Gauss–Hermite rule for the standard normal law (weights sum to one).
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::Domain("quadrature needs at least one node".into()));
    }
    if n == 1 {
        return Ok((vec![0.0], vec![1.0]));
    }
    let diag = vec![0.0; n];
    let off: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
    let (x, z) = tridiagonal_eigen(&diag, &off)?;
    Ok(sorted_rule(x, z, 1.0))
}

/// Composite Gauss–Legendre rule on `[0, t_max]` with geometrically graded
/// panels `[0, h0], [h0, 2h0], [2h0, 4h0], ...`, suited to integrands that
/// vary on every time scale between `h0` and `t_max`.
pub fn graded_time_rule(t_max: f64, h0: f64, nodes_per_panel: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(t_max > 0.0) || !(h0 > 0.0) {
        return Err(Error::Domain("graded rule needs positive extents".into()));
    }
    let (gx, gw) = gauss_legendre(nodes_per_panel, 0.0, 1.0)?;
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let mut lo = 0.0;
    let mut hi = h0.min(t_max);
    loop {
        let len = hi - lo;
        for (x, w) in gx.iter().zip(&gw) {
            nodes.push(lo + len * x);
            weights.push(len * w);
        }
        if hi >= t_max {
            break;
        }
        lo = hi;
        hi = (2.0 * hi).min(t_max);
    }
    Ok((nodes, weights))
}
