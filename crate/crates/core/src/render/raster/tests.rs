use approx::assert_relative_eq;
use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn splat(x: f64, y: f64, depth: f64, index: usize, cov: Matrix2<f64>) -> Splat2D {
    Splat2D {
        mean2d: Vector2::new(x, y),
        cov2d: cov,
        conic: cov.try_inverse().unwrap(),
        depth,
        gaussian_index: index,
        extent: Vector2::new(cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt()) * 3.0,
    }
}

#[test]
fn single_saturated_splat_at_its_mean() {
    let s = [splat(2.5, 2.5, 1.0, 0, Matrix2::identity())];
    let layer = SplatLayer {
        splats: &s,
        opacity: &[1.0],
        payload: &[0.2, 0.4, 0.6],
        channels: 3,
    };
    let (c, alpha) = composite(&layer, &[0], &Vector2::new(2.5, 2.5));
    assert_relative_eq!(
        c.as_slice(),
        [0.99 * 0.2, 0.99 * 0.4, 0.99 * 0.6].as_slice(),
        epsilon = 1e-15
    );
    assert_relative_eq!(alpha, 0.99, epsilon = 1e-15);
}

#[test]
fn two_coincident_half_splats() {
    let s = [
        splat(1.5, 1.5, 1.0, 0, Matrix2::identity()),
        splat(1.5, 1.5, 1.0, 1, Matrix2::identity()),
    ];
    let layer = SplatLayer {
        splats: &s,
        opacity: &[0.5, 0.5],
        payload: &[1.0, 3.0],
        channels: 1,
    };
    let (c, alpha) = composite(&layer, &[0, 1], &Vector2::new(1.5, 1.5));
    assert_relative_eq!(c[0], 0.5 * 1.0 + 0.25 * 3.0, epsilon = 1e-15);
    assert_relative_eq!(alpha, 0.75, epsilon = 1e-15);
}

#[test]
fn empty_layer_is_black_and_transparent() {
    let layer = SplatLayer {
        splats: &[],
        opacity: &[],
        payload: &[],
        channels: 2,
    };
    let plan = RasterPlan::new(&[], 5, 3);
    let out = rasterize(&layer, &plan);
    assert!(out.color.iter().all(|&v| v == 0.0));
    assert!(out.transmittance.iter().all(|&t| t == 1.0));
}

#[test]
fn tiled_render_matches_direct_compositing() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (w, h) = (37, 21);
    let splats: Vec<Splat2D> = (0..60)
        .map(|i| {
            let a = rng.random_range(0.5..6.0);
            let b = rng.random_range(0.5..6.0);
            let c = rng.random_range(-0.4..0.4) * (a * b as f64).sqrt();
            splat(
                rng.random_range(-3.0..40.0),
                rng.random_range(-3.0..24.0),
                rng.random_range(1.0..2.0),
                i,
                Matrix2::new(a, c, c, b),
            )
        })
        .collect();
    let opacity: Vec<f64> = (0..60).map(|_| rng.random_range(0.0..1.0)).collect();
    let payload: Vec<f64> = (0..120).map(|_| rng.random_range(0.0..1.0)).collect();
    let layer = SplatLayer {
        splats: &splats,
        opacity: &opacity,
        payload: &payload,
        channels: 2,
    };
    let out = rasterize(&layer, &RasterPlan::new(&splats, w, h));
    let mut order: Vec<usize> = (0..60).collect();
    order.sort_by(|&a, &b| splats[a].depth.total_cmp(&splats[b].depth));
    for y in 0..h {
        for x in 0..w {
            let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            // restrict to splats whose 3σ box covers the pixel, as the tiles do
            let near: Vec<usize> = order
                .iter()
                .copied()
                .filter(|&i| {
                    let s = &splats[i];
                    (p.x - s.mean2d.x).abs() <= s.extent.x && (p.y - s.mean2d.y).abs() <= s.extent.y
                })
                .collect();
            let (c, alpha) = composite(&layer, &near, &p);
            let i = y * w + x;
            assert_relative_eq!(out.color[2 * i], c[0], epsilon = 1e-13);
            assert_relative_eq!(out.color[2 * i + 1], c[1], epsilon = 1e-13);
            assert_relative_eq!(1.0 - out.transmittance[i], alpha, epsilon = 1e-13);
        }
    }
}

#[test]
fn payload_gradient_of_single_splat_is_t_sigma() {
    let s = [splat(1.7, 1.2, 1.0, 0, Matrix2::new(2.0, 0.3, 0.3, 1.5))];
    let layer = SplatLayer {
        splats: &s,
        opacity: &[0.6],
        payload: &[0.5],
        channels: 1,
    };
    let plan = RasterPlan::new(&s, 4, 3);
    let out = rasterize(&layer, &plan);
    let mut d = vec![0.0; 12];
    d[4 + 1] = 1.0;
    let g = rasterize_backward(&layer, &plan, &out, &d, None, layer.channels);
    let (_, alpha) = composite(&layer, &[0], &Vector2::new(1.5, 1.5));
    assert_relative_eq!(g.d_payload[0], alpha, epsilon = 1e-15);
    let zero = rasterize_backward(&layer, &plan, &out, &[0.0; 12], Some(&[0.0; 12]), layer.channels);
    assert_eq!(zero.d_opacity[0], 0.0);
    assert_eq!(zero.d_mean2d[0], Vector2::zeros());
}

#[test]
fn backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (w, h) = (12, 10);
    let n = 9;
    let mut splats: Vec<Splat2D> = (0..n)
        .map(|i| {
            let a = rng.random_range(1.0..5.0);
            let b = rng.random_range(1.0..5.0);
            let c = rng.random_range(-0.3..0.3) * (a * b as f64).sqrt();
            splat(
                rng.random_range(2.0..10.0),
                rng.random_range(2.0..8.0),
                rng.random_range(1.0..2.0),
                i,
                Matrix2::new(a, c, c, b),
            )
        })
        .collect();
    for s in &mut splats {
        // generous support so that perturbations never move a box edge
        s.extent *= 5.0;
    }
    let mut opacity: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.8)).collect();
    let mut payload: Vec<f64> = (0..2 * n).map(|_| rng.random_range(0.0..1.0)).collect();
    let d_color: Vec<f64> = (0..w * h * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
    let d_alpha: Vec<f64> = (0..w * h).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = |splats: &[Splat2D], opacity: &[f64], payload: &[f64]| -> f64 {
        let layer = SplatLayer {
            splats,
            opacity,
            payload,
            channels: 2,
        };
        let out = rasterize(&layer, &RasterPlan::new(splats, w, h));
        out.color.iter().zip(&d_color).map(|(a, b)| a * b).sum::<f64>()
            + out
                .transmittance
                .iter()
                .zip(&d_alpha)
                .map(|(t, g)| (1.0 - t) * g)
                .sum::<f64>()
    };
    let layer = SplatLayer {
        splats: &splats,
        opacity: &opacity,
        payload: &payload,
        channels: 2,
    };
    let plan = RasterPlan::new(&splats, w, h);
    let out = rasterize(&layer, &plan);
    let g = rasterize_backward(&layer, &plan, &out, &d_color, Some(&d_alpha), 2);

    // channel 1 detached from geometry: same payload adjoints, geometry as if its adjoint were zero
    let detached = rasterize_backward(&layer, &plan, &out, &d_color, Some(&d_alpha), 1);
    let mut first_only = d_color.clone();
    first_only.iter_mut().skip(1).step_by(2).for_each(|v| *v = 0.0);
    let reference = rasterize_backward(&layer, &plan, &out, &first_only, Some(&d_alpha), 2);
    assert_eq!(detached.d_payload, g.d_payload);
    assert_eq!(detached.d_opacity, reference.d_opacity);
    assert_eq!(detached.d_mean2d, reference.d_mean2d);
    assert_eq!(detached.d_conic, reference.d_conic);

    let eps = 1e-6;
    for i in 0..n {
        let o = opacity[i];
        opacity[i] = o + eps;
        let fp = loss(&splats, &opacity, &payload);
        opacity[i] = o - eps;
        let fm = loss(&splats, &opacity, &payload);
        opacity[i] = o;
        assert_relative_eq!(
            g.d_opacity[i],
            (fp - fm) / (2.0 * eps),
            max_relative = 1e-6,
            epsilon = 1e-9
        );

        let p = payload[2 * i + 1];
        payload[2 * i + 1] = p + eps;
        let fp = loss(&splats, &opacity, &payload);
        payload[2 * i + 1] = p - eps;
        let fm = loss(&splats, &opacity, &payload);
        payload[2 * i + 1] = p;
        assert_relative_eq!(
            g.d_payload[2 * i + 1],
            (fp - fm) / (2.0 * eps),
            max_relative = 1e-6,
            epsilon = 1e-9
        );

        for a in 0..2 {
            let m = splats[i].mean2d[a];
            splats[i].mean2d[a] = m + eps;
            let fp = loss(&splats, &opacity, &payload);
            splats[i].mean2d[a] = m - eps;
            let fm = loss(&splats, &opacity, &payload);
            splats[i].mean2d[a] = m;
            assert_relative_eq!(
                g.d_mean2d[i][a],
                (fp - fm) / (2.0 * eps),
                max_relative = 1e-5,
                epsilon = 1e-8
            );
        }
        for e in 0..4 {
            let c = splats[i].conic[e];
            splats[i].conic[e] = c + eps;
            let fp = loss(&splats, &opacity, &payload);
            splats[i].conic[e] = c - eps;
            let fm = loss(&splats, &opacity, &payload);
            splats[i].conic[e] = c;
            assert_relative_eq!(
                g.d_conic[i][e],
                (fp - fm) / (2.0 * eps),
                max_relative = 1e-5,
                epsilon = 1e-8
            );
        }
    }
}

#[test]
fn output_is_independent_of_thread_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let splats: Vec<Splat2D> = (0..40)
        .map(|i| {
            splat(
                rng.random_range(0.0..30.0),
                rng.random_range(0.0..30.0),
                rng.random_range(1.0..3.0),
                i,
                Matrix2::new(4.0, 0.5, 0.5, 3.0),
            )
        })
        .collect();
    let opacity: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
    let payload: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
    let layer = SplatLayer {
        splats: &splats,
        opacity: &opacity,
        payload: &payload,
        channels: 1,
    };
    let plan = RasterPlan::new(&splats, 30, 30);
    let d: Vec<f64> = (0..900).map(|_| rng.random_range(-1.0..1.0)).collect();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let out = rasterize(&layer, &plan);
            let g = rasterize_backward(&layer, &plan, &out, &d, None, layer.channels);
            (out, g)
        })
    };
    let (o1, g1) = run(1);
    let (o4, g4) = run(4);
    assert_eq!(o1, o4);
    assert_eq!(g1, g4);
}

#[test]
fn trace_agrees_with_composite() {
    let s = [
        splat(1.5, 1.5, 1.0, 0, Matrix2::identity()),
        splat(1.8, 1.2, 2.0, 1, Matrix2::identity() * 2.0),
        splat(1.5, 1.5, 3.0, 2, Matrix2::identity()),
    ];
    let layer = SplatLayer {
        splats: &s,
        opacity: &[0.6, 0.9, 0.4],
        payload: &[1.0, 3.0, 0.5],
        channels: 1,
    };
    let px = Vector2::new(1.5, 1.5);
    let (c, alpha) = composite(&layer, &[0, 1, 2], &px);
    let trace = composite_trace(&layer, &[0, 1, 2], &px);
    assert_eq!(trace.len(), 3);
    let sum: f64 = trace.iter().map(|t| t.weight * layer.payload[t.index]).sum();
    assert_relative_eq!(sum, c[0], epsilon = 1e-15);
    assert_relative_eq!(1.0 - trace[2].transmittance, alpha, epsilon = 1e-15);
}
