use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::Image;
use crate::render::ComponentMaps;

fn rand_image(w: usize, h: usize, c: usize, lo: f64, hi: f64, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(w, h, c, |_, _, _| rng.random_range(lo..hi))
}

#[test]
fn weighted_l1_examples() {
    let p = Image::filled(2, 2, 1, 0.1);
    let t = Image::filled(2, 2, 1, 0.2);
    assert_eq!(l1_weighted(&p, &p, 1e-3).unwrap(), 0.0);
    assert_relative_eq!(l1_weighted(&p, &t, 1e-3).unwrap(), 0.1 / 0.101, epsilon = 1e-12);
    let (_, g) = l1_weighted_grad(&p, &t, &p, 1e-3).unwrap();
    assert_relative_eq!(g[0] * 4.0, -1.0 / 0.101, epsilon = 1e-12);
}

#[test]
fn smoothness_weight_examples() {
    let flat = Image::filled(6, 5, 1, 0.3);
    let w = smoothness_weights(&flat, 0.01).unwrap();
    assert_relative_eq!(w.w_x.get(0, 0, 0), 100.0, max_relative = 1e-9);
    assert_eq!(w.w_x.get(5, 2, 0), 0.0);
    assert_eq!(w.w_y.get(2, 4, 0), 0.0);
    let edge = Image::from_fn(12, 6, 1, |x, _, _| if x < 6 { 0.0 } else { 1.0 });
    let we = smoothness_weights(&edge, 0.01).unwrap();
    assert!(we.w_x.get(5, 3, 0) < 10.0);
    assert!(we.w_x.get(0, 3, 0) > we.w_x.get(5, 3, 0));
    // blurred gradient of 0.09 with eps 0.01 gives weight 10
    let ramp = Image::from_fn(30, 9, 1, |x, _, _| 0.09 * x as f64);
    let wr = smoothness_weights(&ramp, 0.01).unwrap();
    assert_relative_eq!(wr.w_x.get(15, 4, 0), 10.0, max_relative = 1e-9);
}

#[test]
fn smoothness_loss_examples() {
    let ones = SmoothnessWeights {
        w_x: Image::filled(4, 3, 1, 1.0),
        w_y: Image::filled(4, 3, 1, 0.0),
    };
    assert_eq!(smoothness_loss(&Image::filled(4, 3, 1, 0.7), &ones).unwrap(), 0.0);
    let step = Image::from_fn(4, 3, 1, |x, y, _| if x >= 2 && y == 1 { 0.5 } else { 0.0 });
    let mut w = ones.clone();
    w.w_x = Image::from_fn(4, 3, 1, |x, _, _| if x == 1 { 1.0 } else { 0.0 });
    assert_relative_eq!(smoothness_loss(&step, &w).unwrap(), 0.5 / 12.0, epsilon = 1e-15);
    let doubled = SmoothnessWeights {
        w_x: w.w_x.map(|v| 2.0 * v),
        w_y: w.w_y.clone(),
    };
    assert_relative_eq!(smoothness_loss(&step, &doubled).unwrap(), 1.0 / 12.0, epsilon = 1e-15);
}

#[test]
fn init_and_residual_examples() {
    let low = Image::from_data(1, 1, 3, vec![0.1, 0.3, 0.2]).unwrap();
    assert_eq!(init_illum_loss(&Image::filled(1, 1, 1, 0.3), &low).unwrap(), 0.0);
    assert_relative_eq!(
        init_illum_loss(&Image::filled(1, 1, 1, 0.5), &low).unwrap(),
        0.2,
        epsilon = 1e-15
    );
    assert_eq!(residual_loss(&Image::new(3, 2, 3)), 0.0);
    let rs = Image::filled(3, 2, 3, 0.1);
    assert_relative_eq!(residual_loss(&rs), 0.1, epsilon = 1e-15);
    assert_eq!(residual_loss(&rs.map(|v| -v)), residual_loss(&rs));
}

#[test]
fn enhancement_examples() {
    let s = Image::filled(1, 1, 1, 0.1);
    let e = Image::filled(1, 1, 3, 0.5);
    let r = Image::filled(1, 1, 3, 0.4);
    let prior = Image::filled(1, 1, 3, 0.2);
    let v = enhancement_loss(&s, &e, &r, &prior, 4.0, 1e-3).unwrap();
    assert_relative_eq!(v, (0.5 / 0.101 - 4.0f64).abs(), epsilon = 1e-12);
    let exact = Image::filled(1, 1, 3, 4.0 * 0.1);
    let prior_exact = Image::filled(1, 1, 3, 0.4 * 0.4);
    let v0 = enhancement_loss(&s, &exact, &r, &prior_exact, 0.4 / 0.101, 1e-3).unwrap();
    assert!(v0 < 1e-12, "{v0}");
}

#[test]
fn pcc_examples() {
    let d = rand_image(8, 6, 1, 1.0, 3.0, 1);
    assert!(depth_pcc_loss(&d, &d).unwrap().unwrap() < 1e-12);
    assert_relative_eq!(
        depth_pcc_loss(&d, &d.map(|v| -v)).unwrap().unwrap(),
        2.0,
        epsilon = 1e-12
    );
    assert!(depth_pcc_loss(&d, &d.map(|v| 3.0 * v + 7.0)).unwrap().unwrap() < 1e-12);
    assert!(depth_pcc_loss(&Image::filled(8, 6, 1, 2.0), &d).unwrap().is_none());
    assert!(depth_pcc_loss(&d, &Image::filled(8, 6, 1, 0.1)).unwrap().is_none());
}

#[test]
fn pcc_gradient_matches_finite_differences() {
    let d = rand_image(7, 5, 1, 1.0, 3.0, 2);
    let prior = rand_image(7, 5, 1, 0.0, 1.0, 3);
    let mask: Vec<bool> = (0..35).map(|i| i % 4 != 0).collect();
    let (_, g) = depth_pcc_loss_grad(&d, &prior, &mask).unwrap().unwrap();
    let h = 1e-6;
    for i in 0..35 {
        let mut p = d.clone();
        let mut m = d.clone();
        p.data[i] += h;
        m.data[i] -= h;
        let fp = depth_pcc_loss_grad(&p, &prior, &mask).unwrap().unwrap().0;
        let fm = depth_pcc_loss_grad(&m, &prior, &mask).unwrap().unwrap().0;
        assert_relative_eq!(g[i], (fp - fm) / (2.0 * h), epsilon = 1e-8);
    }
}

#[test]
fn schedule_endpoints() {
    let cfg = LossConfig::default();
    let w0 = lambda_schedule(0, &cfg);
    assert_eq!((w0.ill, w0.re, w0.enh, w0.dssim), (1.0, 2.0, 0.0, 0.2));
    assert_eq!(lambda_schedule(1000, &cfg).re, 1.25);
    assert_eq!(lambda_schedule(1999, &cfg).enh, 0.0);
    assert_eq!(lambda_schedule(2000, &cfg).enh, 1.0);
    let w = lambda_schedule(7999, &cfg);
    assert_eq!((w.ill, w.re, w.enh, w.dssim), (1.0, 0.5, 1.0, 0.2));
}

fn maps(seed: u64, w: usize, h: usize) -> ComponentMaps {
    ComponentMaps {
        reflectance: rand_image(w, h, 3, 0.05, 0.95, seed),
        illumination: rand_image(w, h, 1, 0.05, 0.6, seed + 1),
        residual: Some(rand_image(w, h, 3, -0.1, 0.1, seed + 2)),
        enhanced: Some(rand_image(w, h, 3, 0.1, 2.0, seed + 3)),
        depth: rand_image(w, h, 1, 1.0, 2.0, seed + 4),
        alpha: rand_image(w, h, 1, 0.0, 1.0, seed + 5),
    }
}

#[test]
fn perfect_fit_without_residual_has_zero_reconstruction() {
    let mut m = maps(10, 12, 12);
    m.residual = Some(Image::new(12, 12, 3));
    let low = crate::render::compose_low(&m);
    let t = ViewTargets::new(low, None, 1e-2).unwrap();
    let (b, _) = total_loss(&m, &t, 0, &LossConfig::default(), None).unwrap();
    assert!(b.recon.abs() < 1e-15);
    assert_eq!(b.re, 0.0);
    assert_eq!(b.enh, None);
}

#[test]
fn dssim_weight_zero_reduces_to_weighted_l1() {
    let m = maps(20, 12, 12);
    let t = ViewTargets::new(rand_image(12, 12, 3, 0.0, 0.3, 30), None, 1e-2).unwrap();
    let cfg = LossConfig {
        lambda_dssim: 0.0,
        ..LossConfig::default()
    };
    let (b, _) = total_loss(&m, &t, 0, &cfg, None).unwrap();
    assert_relative_eq!(
        b.recon,
        l1_weighted(&crate::render::compose_low(&m), &t.low, 1e-3).unwrap(),
        epsilon = 1e-15
    );
}

#[test]
fn total_loss_gradients_match_finite_differences() {
    let (w, h) = (12, 13);
    let base = maps(40, w, h);
    let t = ViewTargets::new(
        rand_image(w, h, 3, 0.0, 0.3, 50),
        Some(rand_image(w, h, 3, 0.2, 0.9, 51)),
        1e-2,
    )
    .unwrap();
    let cfg = LossConfig::default();
    let iter = 2100;
    let stop = StopGrad::from_maps(&base);
    let (_, g) = total_loss(&base, &t, iter, &cfg, None).unwrap();
    let f = |m: &ComponentMaps| total_loss(m, &t, iter, &cfg, Some(&stop)).unwrap().0.total;
    let hstep = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    for _ in 0..30 {
        let which = rng.random_range(0..4);
        let mut p = base.clone();
        let mut m = base.clone();
        let (pi, mi, grad) = match which {
            0 => (&mut p.reflectance, &mut m.reflectance, &g.reflectance),
            1 => (&mut p.illumination, &mut m.illumination, &g.illumination),
            2 => (p.residual.as_mut().unwrap(), m.residual.as_mut().unwrap(), &g.residual),
            _ => (p.enhanced.as_mut().unwrap(), m.enhanced.as_mut().unwrap(), &g.enhanced),
        };
        let i = rng.random_range(0..pi.data.len());
        pi.data[i] += hstep;
        mi.data[i] -= hstep;
        let num = (f(&p) - f(&m)) / (2.0 * hstep);
        assert_relative_eq!(grad[i], num, max_relative = 1e-5, epsilon = 1e-9);
    }
}

#[test]
fn reconstruction_dssim_path_does_not_reach_residual() {
    let m = maps(70, 12, 12);
    let t = ViewTargets::new(rand_image(12, 12, 3, 0.0, 0.3, 71), None, 1e-2).unwrap();
    let with = total_loss(&m, &t, 0, &LossConfig::default(), None).unwrap().1;
    let without = total_loss(
        &m,
        &t,
        0,
        &LossConfig {
            lambda_dssim: 0.0,
            ..LossConfig::default()
        },
        None,
    )
    .unwrap()
    .1;
    // only the (1 - λ) scaling of the L1 part differs
    let (_, d_l1) = l1_weighted_grad(
        &crate::render::compose_low(&m),
        &t.low,
        &crate::render::compose_low(&m),
        1e-3,
    )
    .unwrap();
    for i in 0..with.residual.len() {
        assert_relative_eq!(with.residual[i] - without.residual[i], -0.2 * d_l1[i], epsilon = 1e-15);
    }
}

proptest! {
    #[test]
    fn pcc_is_affine_invariant_and_bounded(seed in 0u64..300, a in 0.01f64..50.0, b in -20.0f64..20.0) {
        let d = rand_image(6, 6, 1, 0.5, 4.0, seed);
        let prior = rand_image(6, 6, 1, 0.0, 1.0, seed + 1000);
        let base = depth_pcc_loss(&d, &prior).unwrap().unwrap();
        let moved = depth_pcc_loss(&d.map(|v| a * v + b), &prior).unwrap().unwrap();
        let moved_prior = depth_pcc_loss(&d, &prior.map(|v| a * v + b)).unwrap().unwrap();
        prop_assert!((base - moved).abs() < 1e-9);
        prop_assert!((base - moved_prior).abs() < 1e-9);
        prop_assert!((0.0..=2.0).contains(&base));
    }

    #[test]
    fn losses_are_non_negative(seed in 0u64..200) {
        let m = maps(seed, 11, 11);
        let t = ViewTargets::new(rand_image(11, 11, 3, 0.0, 0.5, seed + 7), Some(rand_image(11, 11, 3, 0.0, 1.0, seed + 8)), 1e-2).unwrap();
        let (b, _) = total_loss(&m, &t, 5000, &LossConfig::default(), None).unwrap();
        prop_assert!(b.recon >= 0.0 && b.ill >= 0.0 && b.re >= 0.0 && b.enh.unwrap() >= 0.0);
    }
}
