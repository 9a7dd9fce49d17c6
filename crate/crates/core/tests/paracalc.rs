use phi4_core::besov::{lp_block, DyadicPartition};
use phi4_core::paracalc::{
    bony, commutator, localize, modified_para, para_ge, para_le, para_lt, resonant, LocalizationSchedule, Mollifier,
};
use phi4_core::{Grid, RealField, SpaceTimeField};
use proptest::prelude::*;
use std::f64::consts::TAU;

fn field(g: Grid, vals: Vec<f64>) -> RealField {
    RealField::new(g, vals).unwrap()
}

/// `Σ_j (Σ_{i ≤ j−2} Δ_i f) Δ_j g` straight from the blocks.
fn para_from_blocks(f: &RealField, g: &RealField, p: &DyadicPartition) -> RealField {
    let mut out = RealField::zeros(*f.grid());
    for j in p.blocks() {
        let gj = lp_block(g, j, p).unwrap();
        for i in p.blocks().filter(|&i| i <= j - 2) {
            out = out.add(&lp_block(f, i, p).unwrap().mul(&gj).unwrap()).unwrap();
        }
    }
    out
}

fn resonant_from_blocks(f: &RealField, g: &RealField, p: &DyadicPartition) -> RealField {
    let mut out = RealField::zeros(*f.grid());
    for j in p.blocks() {
        let gj = lp_block(g, j, p).unwrap();
        for i in p.blocks().filter(|&i| (i - j).abs() <= 1) {
            out = out.add(&lp_block(f, i, p).unwrap().mul(&gj).unwrap()).unwrap();
        }
    }
    out
}

proptest! {
    #[test]
    fn bony_sums_to_product(a in prop::collection::vec(-2.0f64..2.0, 32 * 32), b in prop::collection::vec(-2.0f64..2.0, 32 * 32)) {
        let g = Grid::new(2, 32, 3.0).unwrap();
        let p = DyadicPartition::new(&g);
        let (f, h) = (field(g, a), field(g, b));
        let parts = bony(&f, &h, &p).unwrap();
        let fg = f.mul(&h).unwrap();
        let sum = parts.lt.add(&parts.res).unwrap().add(&parts.gt).unwrap();
        prop_assert!(sum.sub(&fg).unwrap().max_abs() <= 1e-10 * fg.max_abs().max(1e-300));
    }

    #[test]
    fn paraproduct_is_bilinear(
        a in prop::collection::vec(-1.0f64..1.0, 64),
        b in prop::collection::vec(-1.0f64..1.0, 64),
        c in prop::collection::vec(-1.0f64..1.0, 64),
        s in -3.0f64..3.0,
        t in -3.0f64..3.0,
    ) {
        let g = Grid::new(1, 64, TAU).unwrap();
        let p = DyadicPartition::new(&g);
        let (f1, f2, h) = (field(g, a), field(g, b), field(g, c));
        let lhs = para_lt(&f1.scale(s).add(&f2.scale(t)).unwrap(), &h, &p).unwrap();
        let rhs = para_lt(&f1, &h, &p).unwrap().scale(s).add(&para_lt(&f2, &h, &p).unwrap().scale(t)).unwrap();
        prop_assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn products_match_block_oracle(a in prop::collection::vec(-1.0f64..1.0, 64), b in prop::collection::vec(-1.0f64..1.0, 64)) {
        let g = Grid::new(1, 64, TAU).unwrap();
        let p = DyadicPartition::new(&g);
        let (f, h) = (field(g, a), field(g, b));
        prop_assert!(para_lt(&f, &h, &p).unwrap().sub(&para_from_blocks(&f, &h, &p)).unwrap().max_abs() < 1e-11);
        prop_assert!(resonant(&f, &h, &p).unwrap().sub(&resonant_from_blocks(&f, &h, &p)).unwrap().max_abs() < 1e-11);
        let le = para_le(&f, &h, &p).unwrap();
        let ge = para_ge(&h, &f, &p).unwrap();
        prop_assert!(le.sub(&ge).unwrap().max_abs() < 1e-11);
    }

    #[test]
    fn commutator_matches_block_oracle(
        a in prop::collection::vec(-1.0f64..1.0, 64),
        b in prop::collection::vec(-1.0f64..1.0, 64),
        c in prop::collection::vec(-1.0f64..1.0, 64),
    ) {
        let g = Grid::new(1, 64, TAU).unwrap();
        let p = DyadicPartition::new(&g);
        let (f, gg, h) = (field(g, a), field(g, b), field(g, c));
        let want = resonant_from_blocks(&para_from_blocks(&f, &gg, &p), &h, &p)
            .sub(&f.mul(&resonant_from_blocks(&gg, &h, &p)).unwrap())
            .unwrap();
        prop_assert!(commutator(&f, &gg, &h, &p).unwrap().sub(&want).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn localization_reconstructs(vals in prop::collection::vec(-1.0f64..1.0, 64 * 3), base in 0i32..8) {
        let g = Grid::new(1, 64, 8.0).unwrap();
        let p = DyadicPartition::new(&g);
        let frames = vals.chunks(64).map(|c| field(g, c.to_vec())).collect();
        let f = SpaceTimeField::new(g, 0.5, frames).unwrap();
        let (gt, le) = localize(&f, &LocalizationSchedule::for_field(base, &f), &p).unwrap();
        prop_assert!(gt.add(&le).unwrap().sub(&f).unwrap().max_abs() < 1e-10);
    }
}

#[test]
fn constant_left_factor_drops_the_two_lowest_blocks() {
    let g = Grid::new(1, 128, TAU).unwrap();
    let p = DyadicPartition::new(&g);
    let h = RealField::from_fn(g, |x| (0..40).map(|k| ((k * k) as f64 * 0.37 + k as f64 * x[0]).sin()).sum());
    let got = para_lt(&RealField::constant(g, 1.0), &h, &p).unwrap();
    let want = h.sub(&lp_block(&h, -1, &p).unwrap()).unwrap().sub(&lp_block(&h, 0, &p).unwrap()).unwrap();
    assert!(got.sub(&want).unwrap().max_abs() < 1e-11);
}

#[test]
fn separated_modes_are_pure_paraproduct() {
    let g = Grid::new(1, 1024, TAU).unwrap();
    let p = DyadicPartition::new(&g);
    let f = RealField::from_fn(g, |x| (4.0 * x[0]).cos());
    let h = RealField::from_fn(g, |x| (180.0 * x[0]).sin());
    let b = bony(&f, &h, &p).unwrap();
    assert!(b.lt.sub(&f.mul(&h).unwrap()).unwrap().max_abs() < 1e-11);
    assert!(b.res.max_abs() < 1e-11 && b.gt.max_abs() < 1e-11);
}

#[test]
fn modified_paraproduct_gap_shrinks_with_time_smoothness() {
    let g = Grid::new(1, 64, TAU).unwrap();
    let p = DyadicPartition::new(&g);
    let q = Mollifier::new().unwrap();
    let dt = 1.0 / 512.0;
    let h = SpaceTimeField::from_fn(g, dt, 129, |_, x| (20.0 * x[0]).cos() + (9.0 * x[0]).sin()).unwrap();
    let mut gaps = Vec::new();
    for omega in [64.0, 16.0, 4.0, 1.0] {
        let f = SpaceTimeField::from_fn(g, dt, 129, |t, x| (omega * t).sin() * x[0].cos()).unwrap();
        let plain = f.zip_frames(&h, |a, b| para_lt(a, b, &p)).unwrap();
        let modified = modified_para(&f, &h, &q, &p).unwrap().field;
        gaps.push(plain.sub(&modified).unwrap().max_abs());
    }
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    let zero = SpaceTimeField::zeros(g, dt, 129).unwrap();
    let f = SpaceTimeField::from_fn(g, dt, 129, |t, x| t * x[0].cos()).unwrap();
    assert_eq!(modified_para(&f, &zero, &q, &p).unwrap().field.max_abs(), 0.0);
}

#[test]
fn huge_base_level_sends_everything_low() {
    let g = Grid::new(2, 16, 4.0).unwrap();
    let p = DyadicPartition::new(&g);
    let f = SpaceTimeField::from_fn(g, 0.1, 3, |t, x| (3.0 * x[0] + t).sin() * (5.0 * x[1]).cos()).unwrap();
    let (gt, le) = localize(&f, &LocalizationSchedule::for_field(50, &f), &p).unwrap();
    assert!(gt.max_abs() < 1e-12);
    assert!(le.sub(&f).unwrap().max_abs() < 1e-12);
}
