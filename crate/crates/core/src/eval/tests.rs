use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

/// Textbook sRGB → CIELAB (D65), written out longhand with scalar arithmetic.
fn reference_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = |c: f64| {
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    };
    let (r, g, b) = (lin(rgb[0]), lin(rgb[1]), lin(rgb[2]));
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let f = |t: f64| {
        let d: f64 = 6.0 / 29.0;
        if t > d * d * d {
            t.cbrt()
        } else {
            t / (3.0 * d * d) + 4.0 / 29.0
        }
    };
    let (fx, fy, fz) = (f(x / 0.95047), f(y), f(z / 1.08883));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

fn smooth_rgb(w: usize, h: usize, seed: u64, lo: f64, hi: f64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ph: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..6.0)).collect();
    Image::from_fn(w, h, 3, |x, y, c| {
        let t = 0.5 + 0.5 * ((x as f64 * 0.3 + ph[c]).sin() * (y as f64 * 0.2 + ph[c + 3]).cos());
        lo + (hi - lo) * t
    })
}

fn noise(w: usize, h: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(w, h, 3, |_, _, _| rng.random::<f64>())
}

#[test]
fn lab_matches_textbook_conversion() {
    for rgb in [
        [1.0, 1.0, 1.0],
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.2, 0.5, 0.7],
        [0.01, 0.02, 0.005],
    ] {
        let ours = srgb_to_lab(rgb);
        let theirs = reference_lab(rgb);
        for c in 0..3 {
            assert_relative_eq!(ours[c], theirs[c], epsilon = 1e-10);
        }
    }
    let white = srgb_to_lab([1.0; 3]);
    assert_relative_eq!(white[0], 100.0, epsilon = 1e-4);
    let red = srgb_to_lab([1.0, 0.0, 0.0]);
    assert_relative_eq!(red[0], 53.24, epsilon = 0.01);
    assert_relative_eq!(red[1], 80.09, epsilon = 0.02);
    assert_relative_eq!(red[2], 67.20, epsilon = 0.02);
}

#[test]
fn aligning_an_image_to_itself_is_the_identity() {
    let img = smooth_rgb(16, 16, 1, 0.1, 0.9);
    let (out, al) = affine_align_luminance(&img, &img).unwrap();
    assert!(al.applied);
    assert_relative_eq!(al.a, 1.0, epsilon = 1e-12);
    assert_relative_eq!(al.b, 0.0, epsilon = 1e-10);
    for (x, y) in out.data.iter().zip(&img.data) {
        assert_relative_eq!(x, y, epsilon = 1e-10);
    }
}

fn planted(reference: &Image, a: f64, b: f64) -> Image {
    let mut out = reference.clone();
    for (i, p) in reference.data.chunks_exact(3).enumerate() {
        let lab = srgb_to_lab([p[0], p[1], p[2]]);
        let rgb = lab_to_srgb([a * lab[0] + b, lab[1], lab[2]]);
        out.data[3 * i..3 * i + 3].copy_from_slice(&rgb);
    }
    out
}

#[test]
fn recovers_planted_affine_luminance() {
    let reference = smooth_rgb(16, 16, 2, 0.02, 0.12);
    let pred = planted(&reference, 2.0, 3.0);
    assert!(pred.data.iter().all(|v| (0.0..=1.0).contains(v)));
    let (out, al) = affine_align_luminance(&pred, &reference).unwrap();
    assert_relative_eq!(al.a, 2.0, epsilon = 1e-6);
    assert_relative_eq!(al.b, 3.0, epsilon = 1e-6);
    for (x, y) in out.data.iter().zip(&reference.data) {
        assert_relative_eq!(x, y, epsilon = 1e-6);
    }
    let (_, again) = affine_align_luminance(&out, &reference).unwrap();
    assert_relative_eq!(again.a, 1.0, epsilon = 1e-9);
    assert_relative_eq!(again.b, 0.0, epsilon = 1e-9);
}

#[test]
fn fitted_pair_minimizes_luminance_residual() {
    let reference = smooth_rgb(12, 12, 3, 0.1, 0.6);
    let pred = noise(12, 12, 4).map(|v| 0.5 * v + 0.2);
    let (_, al) = affine_align_luminance(&pred, &reference).unwrap();
    let lx: Vec<f64> = reference
        .data
        .chunks_exact(3)
        .map(|p| srgb_to_lab([p[0], p[1], p[2]])[0])
        .collect();
    let ly: Vec<f64> = pred
        .data
        .chunks_exact(3)
        .map(|p| srgb_to_lab([p[0], p[1], p[2]])[0])
        .collect();
    let residual = |a: f64, b: f64| lx.iter().zip(&ly).map(|(x, y)| (y - a * x - b).powi(2)).sum::<f64>();
    let best = residual(al.a, al.b);
    for (da, db) in [(1e-3, 0.0), (-1e-3, 0.0), (0.0, 1e-2), (0.0, -1e-2), (1e-3, -1e-2)] {
        assert!(residual(al.a + da, al.b + db) > best);
    }
}

#[test]
fn constant_reference_skips_alignment() {
    let reference = Image::filled(12, 12, 3, 0.4);
    let pred = noise(12, 12, 5);
    let (out, al) = affine_align_luminance(&pred, &reference).unwrap();
    assert!(!al.applied);
    assert_eq!(out, pred);
    assert!(affine_align_luminance(&pred, &Image::new(12, 12, 1)).is_err());
}

#[test]
fn psnr_examples() {
    let a = noise(8, 8, 6);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
    let b = Image::filled(8, 8, 3, 0.2);
    let c = Image::filled(8, 8, 3, 0.3);
    assert_relative_eq!(psnr(&b, &c, 1.0).unwrap(), 20.0, epsilon = 1e-9);
    let d = Image::filled(8, 8, 3, 0.7);
    assert_relative_eq!(psnr(&b, &d, 1.0).unwrap(), 6.020599913279624, epsilon = 1e-9);
    assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
}

#[test]
fn ssim_identities() {
    let a = noise(24, 20, 7);
    let b = noise(24, 20, 8);
    assert_relative_eq!(ssim(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
    let s = ssim(&a, &b).unwrap();
    assert_relative_eq!(dssim(&a, &b).unwrap(), (1.0 - s) / 2.0, epsilon = 1e-12);
    assert_eq!(s, ssim(&b, &a).unwrap());
}

#[test]
fn independent_noise_has_ssim_near_zero() {
    // Monte-Carlo over 20 pairs of 32×32 uniform noise: mean ≈ 0.005
    let mean = (0..20)
        .map(|i| ssim(&noise(32, 32, 100 + 2 * i), &noise(32, 32, 101 + 2 * i)).unwrap())
        .sum::<f64>()
        / 20.0;
    assert!(mean.abs() < 0.03, "{mean}");
}

proptest! {
    #[test]
    fn lab_round_trip(r in 0.0f64..1.0, g in 0.0f64..1.0, b in 0.0f64..1.0) {
        let back = lab_to_srgb(srgb_to_lab([r, g, b]));
        prop_assert!((back[0] - r).abs() < 1e-9 && (back[1] - g).abs() < 1e-9 && (back[2] - b).abs() < 1e-9);
    }
}
