//! Front-to-back alpha compositing of depth-sorted splats with an arbitrary
//! number of payload channels, and its exact reverse pass.
//!
//! Splats are sorted once per view by `(depth, gaussian_index)` and binned
//! into 16×16 tiles; every tile list keeps the global order, so tiling never
//! changes the result. Work is split into fixed bands of rows and gradient
//! buffers are merged band by band, which keeps output bit-identical for any
//! thread count.

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;

use super::project::Splat2D;

pub const SIGMA_MAX: f64 = 0.99;
pub const T_MIN: f64 = 1e-4;
pub const TILE: usize = 16;
const BAND_ROWS: usize = 4;

/// Splats plus their per-splat opacity and payload (`channels` values each).
#[derive(Clone, Copy, Debug)]
pub struct SplatLayer<'a> {
    pub splats: &'a [Splat2D],
    pub opacity: &'a [f64],
    pub payload: &'a [f64],
    pub channels: usize,
}

#[derive(Clone, Debug)]
pub struct RasterPlan {
    width: usize,
    height: usize,
    tiles_x: usize,
    /// Inclusive pixel box `[x0, x1, y0, y1]` per splat; empty when x0 > x1.
    boxes: Vec<[usize; 4]>,
    tiles: Vec<Vec<u32>>,
}

impl RasterPlan {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn new(splats: &[Splat2D], width: usize, height: usize) -> Self {
        let mut order: Vec<usize> = (0..splats.len()).collect();
        order.sort_by(|&a, &b| {
            splats[a]
                .depth
                .total_cmp(&splats[b].depth)
                .then(splats[a].gaussian_index.cmp(&splats[b].gaussian_index))
        });
        let tiles_x = width.div_ceil(TILE);
        let tiles_y = height.div_ceil(TILE);
        let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
        let boxes: Vec<[usize; 4]> = splats.iter().map(|s| pixel_box(s, width, height)).collect();
        for &i in &order {
            let [x0, x1, y0, y1] = boxes[i];
            if x0 > x1 || y0 > y1 {
                continue;
            }
            for ty in y0 / TILE..=y1 / TILE {
                for tx in x0 / TILE..=x1 / TILE {
                    tiles[ty * tiles_x + tx].push(i as u32);
                }
            }
        }
        RasterPlan {
            width,
            height,
            tiles_x,
            boxes,
            tiles,
        }
    }

    /// Splats whose support box covers pixel `(x, y)`, front to back.
    pub fn candidates(&self, x: usize, y: usize) -> impl Iterator<Item = usize> + '_ {
        self.tiles[(y / TILE) * self.tiles_x + x / TILE]
            .iter()
            .map(|&i| i as usize)
            .filter(move |&i| {
                let [x0, x1, y0, y1] = self.boxes[i];
                x >= x0 && x <= x1 && y >= y0 && y <= y1
            })
    }
}

fn pixel_box(s: &Splat2D, width: usize, height: usize) -> [usize; 4] {
    let range = |center: f64, half: f64, n: usize| -> (usize, usize) {
        // pixel index i is sampled at i + 0.5
        let lo = (center - half - 0.5).ceil().max(0.0);
        let hi = (center + half - 0.5).floor().min(n as f64 - 1.0);
        if lo > hi {
            (1, 0)
        } else {
            (lo as usize, hi as usize)
        }
    };
    let (x0, x1) = range(s.mean2d.x, s.extent.x, width);
    let (y0, y1) = range(s.mean2d.y, s.extent.y, height);
    if x0 > x1 || y0 > y1 {
        [1, 0, 1, 0]
    } else {
        [x0, x1, y0, y1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Hit {
    sigma: f64,
    gauss: f64,
    clamped: bool,
    offset: Vector2<f64>,
}

#[inline]
fn hit(s: &Splat2D, opacity: f64, pixel: &Vector2<f64>) -> Hit {
    let offset = pixel - s.mean2d;
    let q = (offset.transpose() * s.conic * offset)[0];
    let gauss = (-0.5 * q).exp();
    let raw = opacity * gauss;
    Hit {
        sigma: raw.min(SIGMA_MAX),
        gauss,
        clamped: raw > SIGMA_MAX,
        offset,
    }
}

/// Composites splats already sorted front to back at one pixel. Returns the
/// payload value and the accumulated alpha `1 - T_final`.
pub fn composite(layer: &SplatLayer, order: &[usize], pixel: &Vector2<f64>) -> (Vec<f64>, f64) {
    let c = layer.channels;
    let mut out = vec![0.0; c];
    let mut t = 1.0;
    for &i in order {
        let h = hit(&layer.splats[i], layer.opacity[i], pixel);
        let w = t * h.sigma;
        for (o, p) in out.iter_mut().zip(&layer.payload[i * c..(i + 1) * c]) {
            *o += w * p;
        }
        t *= 1.0 - h.sigma;
        if t < T_MIN {
            break;
        }
    }
    (out, 1.0 - t)
}

/// One splat's share of a composited pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contribution {
    pub index: usize,
    /// `T · σ` for this splat.
    pub weight: f64,
    /// Transmittance left after this splat.
    pub transmittance: f64,
}

/// Per-splat record of [`composite`] at one pixel, in compositing order and
/// ending where compositing stops.
pub fn composite_trace(layer: &SplatLayer, order: &[usize], pixel: &Vector2<f64>) -> Vec<Contribution> {
    let mut trace = Vec::new();
    let mut t = 1.0;
    for &i in order {
        let h = hit(&layer.splats[i], layer.opacity[i], pixel);
        let weight = t * h.sigma;
        t *= 1.0 - h.sigma;
        trace.push(Contribution {
            index: i,
            weight,
            transmittance: t,
        });
        if t < T_MIN {
            break;
        }
    }
    trace
}

#[derive(Clone, Debug, PartialEq)]
pub struct RasterOutput {
    /// Row-major, `channels` values per pixel.
    pub color: Vec<f64>,
    /// Final transmittance per pixel.
    pub transmittance: Vec<f64>,
}

pub fn rasterize(layer: &SplatLayer, plan: &RasterPlan) -> RasterOutput {
    let (w, h, c) = (plan.width, plan.height, layer.channels);
    let mut color = vec![0.0; w * h * c];
    let mut transmittance = vec![1.0; w * h];
    color
        .par_chunks_mut(BAND_ROWS * w * c)
        .zip(transmittance.par_chunks_mut(BAND_ROWS * w))
        .enumerate()
        .for_each(|(band, (color, trans))| {
            let y_start = band * BAND_ROWS;
            for (ly, row_t) in trans.chunks_mut(w).enumerate() {
                let y = y_start + ly;
                for (x, t_out) in row_t.iter_mut().enumerate() {
                    let pixel = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                    let out = &mut color[(ly * w + x) * c..(ly * w + x + 1) * c];
                    let mut t = 1.0;
                    for i in plan.candidates(x, y) {
                        let hh = hit(&layer.splats[i], layer.opacity[i], &pixel);
                        let wgt = t * hh.sigma;
                        for (o, p) in out.iter_mut().zip(&layer.payload[i * c..(i + 1) * c]) {
                            *o += wgt * p;
                        }
                        t *= 1.0 - hh.sigma;
                        if t < T_MIN {
                            break;
                        }
                    }
                    *t_out = t;
                }
            }
        });
    RasterOutput { color, transmittance }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RasterGrads {
    pub d_opacity: Vec<f64>,
    pub d_payload: Vec<f64>,
    pub d_mean2d: Vec<Vector2<f64>>,
    pub d_conic: Vec<Matrix2<f64>>,
}

impl RasterGrads {
    fn zeros(n: usize, c: usize) -> Self {
        RasterGrads {
            d_opacity: vec![0.0; n],
            d_payload: vec![0.0; n * c],
            d_mean2d: vec![Vector2::zeros(); n],
            d_conic: vec![Matrix2::zeros(); n],
        }
    }

    fn add(&mut self, other: &RasterGrads) {
        let add = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.d_opacity, &other.d_opacity);
        add(&mut self.d_payload, &other.d_payload);
        self.d_mean2d.iter_mut().zip(&other.d_mean2d).for_each(|(x, y)| *x += y);
        self.d_conic.iter_mut().zip(&other.d_conic).for_each(|(x, y)| *x += y);
    }

    /// Gradient on the 2D covariance via `d(Σ⁻¹) = -Σ⁻¹ dΣ Σ⁻¹`.
    pub fn d_cov2d(&self, splats: &[Splat2D]) -> Vec<Matrix2<f64>> {
        splats
            .iter()
            .zip(&self.d_conic)
            .map(|(s, g)| -(s.conic.transpose() * g * s.conic.transpose()))
            .collect()
    }
}

/// Reverse pass. `d_color` holds the adjoint of every output channel and
/// `d_alpha` (optional) the adjoint of `1 - T_final`. Channels at index
/// `geometry_channels` and above reach only their payloads: the compositing
/// weights are treated as constants for them.
pub fn rasterize_backward(
    layer: &SplatLayer,
    plan: &RasterPlan,
    output: &RasterOutput,
    d_color: &[f64],
    d_alpha: Option<&[f64]>,
    geometry_channels: usize,
) -> RasterGrads {
    let (w, h, c) = (plan.width, plan.height, layer.channels);
    let n = layer.splats.len();
    let bands = h.div_ceil(BAND_ROWS);
    let partials: Vec<RasterGrads> = (0..bands)
        .into_par_iter()
        .map(|band| {
            let mut g = RasterGrads::zeros(n, c);
            let mut hits: Vec<(usize, Hit, f64)> = Vec::new();
            let mut acc = vec![0.0; c];
            for y in band * BAND_ROWS..((band + 1) * BAND_ROWS).min(h) {
                for x in 0..w {
                    let p = y * w + x;
                    let dc = &d_color[p * c..(p + 1) * c];
                    let da = d_alpha.map_or(0.0, |a| a[p]);
                    if da == 0.0 && dc.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let pixel = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                    hits.clear();
                    let mut t = 1.0;
                    for i in plan.candidates(x, y) {
                        let hh = hit(&layer.splats[i], layer.opacity[i], &pixel);
                        hits.push((i, hh, t));
                        t *= 1.0 - hh.sigma;
                        if t < T_MIN {
                            break;
                        }
                    }
                    let t_final = output.transmittance[p];
                    acc.fill(0.0);
                    for &(i, hh, t_i) in hits.iter().rev() {
                        let payload = &layer.payload[i * c..(i + 1) * c];
                        let one_minus = 1.0 - hh.sigma;
                        let mut d_sigma = da * t_final / one_minus;
                        for ch in 0..c {
                            if ch < geometry_channels {
                                d_sigma += dc[ch] * (t_i * payload[ch] - acc[ch] / one_minus);
                                acc[ch] += t_i * hh.sigma * payload[ch];
                            }
                            g.d_payload[i * c + ch] += dc[ch] * t_i * hh.sigma;
                        }
                        if hh.clamped {
                            continue;
                        }
                        g.d_opacity[i] += d_sigma * hh.gauss;
                        let s = &layer.splats[i];
                        // d sigma / d q with q the Mahalanobis form
                        let d_q = -0.5 * d_sigma * layer.opacity[i] * hh.gauss;
                        g.d_mean2d[i] -= (s.conic + s.conic.transpose()) * hh.offset * d_q;
                        g.d_conic[i] += hh.offset * hh.offset.transpose() * d_q;
                    }
                }
            }
            g
        })
        .collect();
    let mut total = RasterGrads::zeros(n, c);
    for part in &partials {
        total.add(part);
    }
    total
}

#[cfg(test)]
mod tests;
