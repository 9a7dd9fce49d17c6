//! Fast invariant suite on the configured grid and nonlinearity.

use phi4_core::besov::DyadicPartition;
use phi4_core::chaos::{chaos_coeffs, gaussian_expectation, hermite, NonlinearitySpec};
use phi4_core::noise::{sample_eta, GaussianEnsemble};
use phi4_core::paracalc::{bony, localize, LocalizationSchedule};
use phi4_core::solver::solve_classical;
use phi4_core::{ExperimentConfig, Grid, RealField, SpaceTimeField};

use crate::artifacts::{num, Artifacts};
use crate::commands::{max_principle_of, renormalize};
use crate::{AnyResult, Outcome};

struct Check {
    name: &'static str,
    value: f64,
    tolerance: f64,
    note: String,
}

impl Check {
    fn below(name: &'static str, value: f64, tolerance: f64) -> Self {
        Self { name, value, tolerance, note: String::new() }
    }

    fn passed(&self) -> bool {
        self.value <= self.tolerance
    }
}

fn rel(a: &RealField, b: &RealField) -> AnyResult<f64> {
    Ok(a.sub(b)?.max_abs() / b.max_abs().max(f64::MIN_POSITIVE))
}

fn bony_check(y: &SpaceTimeField, p: &DyadicPartition) -> AnyResult<Check> {
    let f = &y.frames()[0];
    let g = y.frames()[y.n_frames() - 1].map(|v| v * v - 0.5 * v);
    let b = bony(f, &g, p)?;
    let sum = b.lt.add(&b.res)?.add(&b.gt)?;
    Ok(Check::below("bony_identity", rel(&sum, &f.mul(&g)?)?, 1e-10))
}

fn hermite_check() -> AnyResult<Check> {
    let mut worst = 0.0f64;
    for s2 in [0.5, 1.0, 2.0] {
        for m in 0..=9 {
            for n in 0..=9 {
                let e = gaussian_expectation(|x| hermite(m, x, s2) * hermite(n, x, s2), s2, 24)?;
                let want = if m == n { (1..=n).map(|k| k as f64).product::<f64>() * s2.powi(n as i32) } else { 0.0 };
                let scale = ((1..=m.max(n)).map(|k| k as f64).product::<f64>() * s2.powi(m.max(n) as i32)).max(1.0);
                worst = worst.max((e - want).abs() / scale);
            }
        }
    }
    Ok(Check::below("hermite_orthogonality", worst, 1e-8))
}

fn chaos_check() -> AnyResult<Check> {
    let mut worst = 0.0f64;
    for s2 in [0.5, 1.0, 2.0] {
        let c3 = chaos_coeffs(&NonlinearitySpec::monomial(3)?, s2, 3)?;
        let c5 = chaos_coeffs(&NonlinearitySpec::monomial(5)?, s2, 5)?;
        for (got, want) in [
            (c3.coeff(3), 1.0),
            (c3.coeff(1), 3.0 * s2),
            (c5.coeff(5), 1.0),
            (c5.coeff(3), 10.0 * s2),
            (c5.coeff(1), 15.0 * s2 * s2),
        ] {
            worst = worst.max((got - want).abs());
        }
    }
    Ok(Check::below("chaos_exactness", worst, 1e-9))
}

/// `u' = −μu − u³` from `u(0) = 2` at `t = 1/2` against its closed form.
fn solver_check() -> AnyResult<Check> {
    let g = Grid::new(1, 8, 1.0)?;
    let eta = SpaceTimeField::new(g, 0.125, vec![RealField::zeros(g); 5])?;
    let dt = 0.125 / 262144.0;
    let u = solve_classical(&NonlinearitySpec::monomial(3)?, &eta, &RealField::constant(g, 2.0), 1.0, dt)?;
    let exact = ((0.25f64 + 1.0) * 1f64.exp() - 1.0).powf(-0.5);
    Ok(Check::below("cubic_ode_closed_form", (u.frames()[4].values()[0] - exact).abs(), 1e-6))
}

pub fn run(cfg: &ExperimentConfig, art: &mut Artifacts) -> AnyResult<Outcome> {
    let grid = cfg.grid.build()?;
    let p = DyadicPartition::new(&grid);
    let spec = cfg.nonlinearity.spec()?;
    let eps = cfg.eps_grid.iter().cloned().fold(0.0, f64::max);
    let r = renormalize(cfg, &spec, &grid, eps)?;
    let seed = GaussianEnsemble::new(cfg.master_seed, 1).member_seed(0);
    let y = sample_eta(&r.kernel, 9, seed)?.y;
    let again = sample_eta(&r.kernel, 9, seed)?.y;

    let mut checks = vec![bony_check(&y, &p)?, hermite_check()?, chaos_check()?, solver_check()?];
    checks.push(Check::below("seed_determinism", y.sub(&again)?.max_abs(), 0.0));
    let dp = (r.rc.d32_prime - r.rc.d32_prime_independent).abs() / (1.0 + r.rc.d32_prime.abs());
    checks.push(Check::below("d_prime_relation", dp, 1e-6));
    let sched = LocalizationSchedule::for_field(cfg.loc_base, &y);
    let (gt, le) = localize(&y, &sched, &p)?;
    let rec = gt.add(&le)?.sub(&y)?.max_abs() / y.max_abs();
    checks.push(Check::below("localization_reconstruction", rec, 1e-10));

    if spec.m >= 5 {
        let mut small = cfg.clone();
        small.ensemble_size = 1;
        let st = crate::commands::decompose_one(&small, &spec, &grid, &p, &r, eps, seed)?;
        checks.push(Check::below("recombination", st.recombination_residual, 1e-9));
        checks.push(Check::below("direct_rhs", st.direct_rhs_residual, 1e-8));
        let mp = max_principle_of(&spec, cfg.analysis.nu, eps, cfg.noise.mu, &st)?;
        checks.push(Check { name: "max_principle_margin", value: -mp.margin, tolerance: 0.0, note: format!("margin {}", mp.margin) });
    } else {
        eprintln!("selftest: degree {} < 5, decomposition checks skipped", spec.m);
    }

    let rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| vec![c.name.to_string(), num(c.value), num(c.tolerance), c.passed().to_string(), c.note.clone()])
        .collect();
    art.csv("selftest.csv", &["check", "value", "tolerance", "passed", "note"], &rows)?;
    for c in &checks {
        println!("{:<28} {} ({:e} vs {:e})", c.name, if c.passed() { "ok" } else { "FAIL" }, c.value, c.tolerance);
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    Ok(Outcome { ok: failed == 0, summary: format!("{}/{} checks pass", checks.len() - failed, checks.len()) })
}
