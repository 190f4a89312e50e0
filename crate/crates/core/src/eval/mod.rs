//! Scoring of enhanced renders: affine luminance alignment in CIELAB,
//! PSNR and SSIM.

use std::path::Path;
use std::sync::LazyLock;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Image;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;
/// Slopes smaller than this are treated as a failed fit.
pub const MIN_SLOPE: f64 = 1e-6;

/// D65 reference white in XYZ.
pub const WHITE_D65: [f64; 3] = [0.95047, 1.0, 1.08883];

#[rustfmt::skip]
static RGB_TO_XYZ: Matrix3<f64> = Matrix3::new(
    0.4124564, 0.3575761, 0.1804375,
    0.2126729, 0.7151522, 0.0721750,
    0.0193339, 0.1191920, 0.9503041,
);

// exact inverse so that conversions round-trip to machine precision
static XYZ_TO_RGB: LazyLock<Matrix3<f64>> =
    LazyLock::new(|| RGB_TO_XYZ.try_inverse().expect("sRGB primaries are invertible"));

pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

const LAB_DELTA: f64 = 6.0 / 29.0;

fn lab_f(t: f64) -> f64 {
    if t > LAB_DELTA.powi(3) {
        t.cbrt()
    } else {
        t / (3.0 * LAB_DELTA * LAB_DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > LAB_DELTA {
        t * t * t
    } else {
        3.0 * LAB_DELTA * LAB_DELTA * (t - 4.0 / 29.0)
    }
}

pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = Vector3::new(srgb_to_linear(rgb[0]), srgb_to_linear(rgb[1]), srgb_to_linear(rgb[2]));
    let xyz = RGB_TO_XYZ * lin;
    let fx = lab_f(xyz.x / WHITE_D65[0]);
    let fy = lab_f(xyz.y / WHITE_D65[1]);
    let fz = lab_f(xyz.z / WHITE_D65[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn lab_to_srgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = Vector3::new(
        WHITE_D65[0] * lab_f_inv(fx),
        WHITE_D65[1] * lab_f_inv(fy),
        WHITE_D65[2] * lab_f_inv(fz),
    );
    let lin = *XYZ_TO_RGB * xyz;
    [linear_to_srgb(lin.x), linear_to_srgb(lin.y), linear_to_srgb(lin.z)]
}

fn to_lab(img: &Image) -> Vec<[f64; 3]> {
    img.data
        .chunks_exact(3)
        .map(|p| srgb_to_lab([p[0], p[1], p[2]]))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub a: f64,
    pub b: f64,
    /// False when the fit was degenerate and the prediction was returned as is.
    pub applied: bool,
}

/// Fits `pred_L ≈ a·ref_L + b` by least squares and maps the prediction's
/// luminance back through the inverse, keeping its chroma. The result is
/// clipped to `[0, 1]`.
pub fn affine_align_luminance(pred: &Image, reference: &Image) -> Result<(Image, Alignment)> {
    if !pred.same_shape(reference) || pred.channels != 3 {
        return Err(Error::invalid(format!(
            "alignment needs two 3-channel images of equal size, got {}x{}x{} and {}x{}x{}",
            pred.width, pred.height, pred.channels, reference.width, reference.height, reference.channels
        )));
    }
    let p = to_lab(pred);
    let r = to_lab(reference);
    let n = p.len() as f64;
    let mx = r.iter().map(|v| v[0]).sum::<f64>() / n;
    let my = p.iter().map(|v| v[0]).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (x, y) in r.iter().zip(&p) {
        cov += (x[0] - mx) * (y[0] - my);
        var += (x[0] - mx) * (x[0] - mx);
    }
    let identity = |a, b| Ok((pred.clone(), Alignment { a, b, applied: false }));
    if var <= 1e-20 * n * (1.0 + mx * mx) {
        log::warn!("alignment skipped: reference luminance is constant");
        return identity(1.0, 0.0);
    }
    let a = cov / var;
    let b = my - a * mx;
    if a.abs() < MIN_SLOPE {
        log::warn!("alignment skipped: slope {a:e} too small");
        return identity(a, b);
    }
    let mut out = Image::new(pred.width, pred.height, 3);
    for (i, lab) in p.iter().enumerate() {
        let rgb = lab_to_srgb([(lab[0] - b) / a, lab[1], lab[2]]);
        for c in 0..3 {
            out.data[3 * i + c] = rgb[c].clamp(0.0, 1.0);
        }
    }
    Ok((out, Alignment { a, b, applied: true }))
}

pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::invalid("psnr: image shapes differ"));
    }
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

pub use crate::losses::{dssim, ssim};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alignment: Option<Alignment>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanScore {
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewScore>,
    pub mean: MeanScore,
}

pub fn score_pair(name: &str, pred: &Image, reference: &Image, align: bool) -> Result<ViewScore> {
    let (pred, alignment) = if align {
        let (img, al) = affine_align_luminance(pred, reference)?;
        (img, Some(al))
    } else {
        (pred.clone(), None)
    };
    Ok(ViewScore {
        name: name.to_string(),
        psnr: psnr(&pred, reference, 1.0)?,
        ssim: ssim(&pred, reference)?,
        alignment,
    })
}

fn png_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

/// Scores every PNG in `pred_dir` against the file of the same name in
/// `ref_dir`.
pub fn evaluate_directories(pred_dir: &Path, ref_dir: &Path, align: bool) -> Result<EvalReport> {
    let names = png_names(pred_dir)?;
    if names.is_empty() {
        return Err(Error::invalid(format!("no PNG files in {}", pred_dir.display())));
    }
    let mut views = Vec::with_capacity(names.len());
    for name in &names {
        let reference = ref_dir.join(name);
        if !reference.exists() {
            return Err(Error::invalid(format!("missing reference {}", reference.display())));
        }
        let pred = Image::load_png(&pred_dir.join(name))?;
        let reference = Image::load_png(&reference)?;
        views.push(score_pair(name, &pred, &reference, align)?);
    }
    let n = views.len() as f64;
    let mean = MeanScore {
        psnr: views.iter().map(|v| v.psnr).sum::<f64>() / n,
        ssim: views.iter().map(|v| v.ssim).sum::<f64>() / n,
    };
    Ok(EvalReport { views, mean })
}

#[cfg(test)]
mod tests;
