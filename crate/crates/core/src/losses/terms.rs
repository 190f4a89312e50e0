//! Individual objectives. Each `*_grad` variant returns the value and the
//! gradient with respect to its differentiable image argument. L1 kinks take
//! subgradient 0. Means run over every element (pixels × channels).

use crate::error::{Error, Result};
use crate::geometry::Image;

use super::ssim::gaussian_kernel;

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn same_shape(a: &Image, b: &Image, what: &str) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{what}: shape mismatch {}×{}×{} vs {}×{}×{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )))
    }
}

/// `mean |pred - target| / (sg(pred) + eps)`. The denominator is taken from
/// `denom` (normally `pred` itself) and clamped at zero since the composed
/// prediction can dip below zero through the residual.
pub fn l1_weighted_grad(pred: &Image, target: &Image, denom: &Image, eps: f64) -> Result<(f64, Vec<f64>)> {
    same_shape(pred, target, "l1_weighted")?;
    same_shape(pred, denom, "l1_weighted")?;
    let n = pred.data.len() as f64;
    let mut value = 0.0;
    let grad = pred
        .data
        .iter()
        .zip(&target.data)
        .zip(&denom.data)
        .map(|((&p, &t), &d)| {
            let den = d.max(0.0) + eps;
            value += (p - t).abs() / den;
            sign(p - t) / (den * n)
        })
        .collect();
    Ok((value / n, grad))
}

pub fn l1_weighted(pred: &Image, target: &Image, eps: f64) -> Result<f64> {
    Ok(l1_weighted_grad(pred, target, pred, eps)?.0)
}

/// Edge-aware weights from a gray image: blur, forward differences, and
/// `1 / (|diff| + eps)`. The last column of `w_x` and last row of `w_y` are 0.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothnessWeights {
    pub w_x: Image,
    pub w_y: Image,
}

/// 5×5 Gaussian (σ = 1) blur with replicated borders.
pub fn blur5(img: &Image) -> Image {
    let k = gaussian_kernel(5, 1.0);
    let (w, h) = (img.width as isize, img.height as isize);
    let clamp = |v: isize, n: isize| v.clamp(0, n - 1) as usize;
    let horizontal = Image::from_fn(img.width, img.height, img.channels, |x, y, c| {
        (0..5)
            .map(|i| k[i] * img.get(clamp(x as isize + i as isize - 2, w), y, c))
            .sum()
    });
    Image::from_fn(img.width, img.height, img.channels, |x, y, c| {
        (0..5)
            .map(|i| k[i] * horizontal.get(x, clamp(y as isize + i as isize - 2, h), c))
            .sum()
    })
}

pub fn smoothness_weights(gray: &Image, eps: f64) -> Result<SmoothnessWeights> {
    if gray.channels != 1 {
        return Err(Error::invalid("smoothness weights need a single-channel image"));
    }
    let b = blur5(gray);
    let (w, h) = (gray.width, gray.height);
    Ok(SmoothnessWeights {
        w_x: Image::from_fn(w, h, 1, |x, y, _| {
            if x + 1 < w {
                1.0 / ((b.get(x + 1, y, 0) - b.get(x, y, 0)).abs() + eps)
            } else {
                0.0
            }
        }),
        w_y: Image::from_fn(w, h, 1, |x, y, _| {
            if y + 1 < h {
                1.0 / ((b.get(x, y + 1, 0) - b.get(x, y, 0)).abs() + eps)
            } else {
                0.0
            }
        }),
    })
}

/// `mean(w_x |∂x S|) + mean(w_y |∂y S|)` with forward differences.
pub fn smoothness_loss_grad(s: &Image, weights: &SmoothnessWeights) -> Result<(f64, Vec<f64>)> {
    same_shape(s, &weights.w_x, "smoothness_loss")?;
    let (w, h) = (s.width, s.height);
    let n = (w * h) as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x + 1 < w {
                let d = s.data[p + 1] - s.data[p];
                let wx = weights.w_x.data[p];
                value += wx * d.abs();
                let g = wx * sign(d) / n;
                grad[p + 1] += g;
                grad[p] -= g;
            }
            if y + 1 < h {
                let d = s.data[p + w] - s.data[p];
                let wy = weights.w_y.data[p];
                value += wy * d.abs();
                let g = wy * sign(d) / n;
                grad[p + w] += g;
                grad[p] -= g;
            }
        }
    }
    Ok((value / n, grad))
}

pub fn smoothness_loss(s: &Image, weights: &SmoothnessWeights) -> Result<f64> {
    Ok(smoothness_loss_grad(s, weights)?.0)
}

/// `mean |S - max_c C_low|`; `low_max` is the precomputed channel maximum.
pub fn init_illum_loss_grad(s: &Image, low_max: &Image) -> Result<(f64, Vec<f64>)> {
    same_shape(s, low_max, "init_illum_loss")?;
    let n = s.data.len() as f64;
    let value = s
        .data
        .iter()
        .zip(&low_max.data)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n;
    let grad = s.data.iter().zip(&low_max.data).map(|(a, b)| sign(a - b) / n).collect();
    Ok((value, grad))
}

pub fn init_illum_loss(s: &Image, low: &Image) -> Result<f64> {
    Ok(init_illum_loss_grad(s, &low.channel_max())?.0)
}

pub fn illum_prior_loss(s: &Image, low: &Image, weights: &SmoothnessWeights, lambda_smo: f64) -> Result<f64> {
    Ok(init_illum_loss(s, low)? + lambda_smo * smoothness_loss(s, weights)?)
}

/// `mean |Rs|`.
pub fn residual_loss_grad(rs: &Image) -> (f64, Vec<f64>) {
    let n = rs.data.len() as f64;
    let value = rs.data.iter().map(|v| v.abs()).sum::<f64>() / n;
    (value, rs.data.iter().map(|&v| sign(v) / n).collect())
}

pub fn residual_loss(rs: &Image) -> f64 {
    residual_loss_grad(rs).0
}

/// Enhancement objective value and gradients with respect to
/// `(R, S̃)`. `s_denom` supplies `sg(S)`.
pub struct EnhancementGrads {
    pub value: f64,
    pub d_reflectance: Vec<f64>,
    pub d_enhanced: Vec<f64>,
}

/// `mean |S̃ / (sg(S) + eps) - γ| + mean |R ⊙ S̃ - C_pri|`.
pub fn enhancement_loss_grad(
    reflectance: &Image,
    enhanced: &Image,
    s_denom: &Image,
    prior: &Image,
    gamma: f64,
    eps: f64,
) -> Result<EnhancementGrads> {
    same_shape(reflectance, enhanced, "enhancement_loss")?;
    same_shape(reflectance, prior, "enhancement_loss")?;
    if s_denom.channels != 1 || s_denom.width != enhanced.width || s_denom.height != enhanced.height {
        return Err(Error::invalid(
            "enhancement_loss: illumination must be single-channel and same size",
        ));
    }
    let n = enhanced.data.len() as f64;
    let mut ratio = 0.0;
    let mut fid = 0.0;
    let mut d_reflectance = vec![0.0; enhanced.data.len()];
    let mut d_enhanced = vec![0.0; enhanced.data.len()];
    for (i, (&e, &r)) in enhanced.data.iter().zip(&reflectance.data).enumerate() {
        let den = s_denom.data[i / 3].max(0.0) + eps;
        let u = e / den - gamma;
        ratio += u.abs();
        d_enhanced[i] += sign(u) / (den * n);
        let v = r * e - prior.data[i];
        fid += v.abs();
        let g = sign(v) / n;
        d_reflectance[i] += g * e;
        d_enhanced[i] += g * r;
    }
    Ok(EnhancementGrads {
        value: ratio / n + fid / n,
        d_reflectance,
        d_enhanced,
    })
}

pub fn enhancement_loss(
    s: &Image,
    enhanced: &Image,
    reflectance: &Image,
    prior: &Image,
    gamma: f64,
    eps: f64,
) -> Result<f64> {
    Ok(enhancement_loss_grad(reflectance, enhanced, s, prior, gamma, eps)?.value)
}

/// Pearson-correlation depth loss `1 - ρ` over pixels whose mask value is
/// true. Returns `None` when fewer than two pixels are covered or either
/// signal is constant there. The gradient is with respect to `rendered`.
pub fn depth_pcc_loss_grad(rendered: &Image, prior: &Image, mask: &[bool]) -> Result<Option<(f64, Vec<f64>)>> {
    same_shape(rendered, prior, "depth_pcc_loss")?;
    if rendered.channels != 1 || mask.len() != rendered.data.len() {
        return Err(Error::invalid(
            "depth_pcc_loss: expects single-channel maps and a full mask",
        ));
    }
    let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if idx.len() < 2 {
        return Ok(None);
    }
    let m = idx.len() as f64;
    let mx = idx.iter().map(|&i| rendered.data[i]).sum::<f64>() / m;
    let my = idx.iter().map(|&i| prior.data[i]).sum::<f64>() / m;
    let (mut sxx, mut syy, mut sxy, mut xx, mut yy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &i in &idx {
        let (x, y) = (rendered.data[i], prior.data[i]);
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
        xx += x * x;
        yy += y * y;
    }
    // constant signals leave only rounding noise in the centered sums
    if sxx <= 1e-24 * xx.max(f64::MIN_POSITIVE) || syy <= 1e-24 * yy.max(f64::MIN_POSITIVE) {
        return Ok(None);
    }
    let norm = (sxx * syy).sqrt();
    let rho = sxy / norm;
    let mut grad = vec![0.0; mask.len()];
    for &i in &idx {
        let (dx, dy) = (rendered.data[i] - mx, prior.data[i] - my);
        grad[i] = -(dy / norm - rho * dx / sxx);
    }
    Ok(Some(((1.0 - rho).clamp(0.0, 2.0), grad)))
}

/// PCC loss over every pixel (no coverage mask).
pub fn depth_pcc_loss(rendered: &Image, prior: &Image) -> Result<Option<f64>> {
    let mask = vec![true; rendered.data.len()];
    Ok(depth_pcc_loss_grad(rendered, prior, &mask)?.map(|(v, _)| v))
}
