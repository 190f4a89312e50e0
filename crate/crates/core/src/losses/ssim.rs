//! SSIM with an 11×11 Gaussian window (σ = 1.5) evaluated only where the
//! window fits inside the image, plus its gradient with respect to the
//! first argument.

use crate::error::{Error, Result};
use crate::geometry::Image;

pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

/// Normalized 1D Gaussian taps of odd length `size`.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable valid-mode filtering of a `w × h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: spreads an `ow × oh` plane back onto `w × h`.
fn filter_valid_adjoint(grad: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let g = grad[y * ow + x];
            for i in 0..n {
                tmp[(y + i) * ow + x] += k[i] * g;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let g = tmp[y * ow + x];
            for i in 0..n {
                out[y * w + x + i] += k[i] * g;
            }
        }
    }
    out
}

fn check(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::invalid("ssim: image shapes differ"));
    }
    if a.width < WINDOW || a.height < WINDOW {
        return Err(Error::invalid(format!(
            "ssim: images must be at least {WINDOW}×{WINDOW}, got {}×{}",
            a.width, a.height
        )));
    }
    Ok(())
}

fn plane(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(img.channels).copied().collect()
}

struct Stats {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    b1: Vec<f64>,
    b2: Vec<f64>,
}

fn stats(x: &[f64], y: &[f64], w: usize, h: usize, k: &[f64]) -> Stats {
    let sq = |v: &[f64]| v.iter().map(|a| a * a).collect::<Vec<_>>();
    let mu_x = filter_valid(x, w, h, k);
    let mu_y = filter_valid(y, w, h, k);
    let e_xx = filter_valid(&sq(x), w, h, k);
    let e_yy = filter_valid(&sq(y), w, h, k);
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let e_xy = filter_valid(&xy, w, h, k);
    let n = mu_x.len();
    let mut s = Stats {
        a1: vec![0.0; n],
        a2: vec![0.0; n],
        b1: vec![0.0; n],
        b2: vec![0.0; n],
        mu_x,
        mu_y,
    };
    for i in 0..n {
        let (mx, my) = (s.mu_x[i], s.mu_y[i]);
        let sxx = e_xx[i] - mx * mx;
        let syy = e_yy[i] - my * my;
        let sxy = e_xy[i] - mx * my;
        s.a1[i] = 2.0 * mx * my + C1;
        s.a2[i] = 2.0 * sxy + C2;
        s.b1[i] = mx * mx + my * my + C1;
        s.b2[i] = sxx + syy + C2;
    }
    s
}

/// Mean SSIM over all channels and window positions.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check(a, b)?;
    let k = gaussian_kernel(WINDOW, WINDOW_SIGMA);
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..a.channels {
        let s = stats(&plane(a, c), &plane(b, c), a.width, a.height, &k);
        for i in 0..s.a1.len() {
            total += s.a1[i] * s.a2[i] / (s.b1[i] * s.b2[i]);
        }
        count += s.a1.len();
    }
    Ok(total / count as f64)
}

/// `(1 - SSIM) / 2`.
pub fn dssim(a: &Image, b: &Image) -> Result<f64> {
    Ok((1.0 - ssim(a, b)?) / 2.0)
}

/// DSSIM value and its gradient with respect to `a` (same layout as `a`).
pub fn dssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Vec<f64>)> {
    check(a, b)?;
    let k = gaussian_kernel(WINDOW, WINDOW_SIGMA);
    let (w, h, ch) = (a.width, a.height, a.channels);
    let windows = (w + 1 - WINDOW) * (h + 1 - WINDOW);
    let d_map = -0.5 / (windows * ch) as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; a.data.len()];
    for c in 0..ch {
        let x = plane(a, c);
        let y = plane(b, c);
        let s = stats(&x, &y, w, h, &k);
        let mut g_mu = vec![0.0; windows];
        let mut g_xx = vec![0.0; windows];
        let mut g_xy = vec![0.0; windows];
        for i in 0..windows {
            let den = s.b1[i] * s.b2[i];
            let v = s.a1[i] * s.a2[i] / den;
            total += v;
            let (mx, my) = (s.mu_x[i], s.mu_y[i]);
            g_mu[i] = d_map * (2.0 * my * (s.a2[i] - s.a1[i]) / den - 2.0 * mx * v * (1.0 / s.b1[i] - 1.0 / s.b2[i]));
            g_xx[i] = d_map * (-v / s.b2[i]);
            g_xy[i] = d_map * (2.0 * s.a1[i] / den);
        }
        let d_mu = filter_valid_adjoint(&g_mu, w, h, &k);
        let d_xx = filter_valid_adjoint(&g_xx, w, h, &k);
        let d_xy = filter_valid_adjoint(&g_xy, w, h, &k);
        for p in 0..w * h {
            grad[p * ch + c] = d_mu[p] + 2.0 * x[p] * d_xx[p] + y[p] * d_xy[p];
        }
    }
    let ssim = total / (windows * ch) as f64;
    Ok(((1.0 - ssim) / 2.0, grad))
}
