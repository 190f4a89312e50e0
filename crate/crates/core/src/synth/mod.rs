//! Synthetic multi-view scenes with known reflectance, illumination and
//! depth, degraded into low-light observations.

mod raycast;

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{save_ply, Camera, Image, PlyFormat, PointCloud};
use crate::train::{Dataset, Manifest, ManifestEntry, Split, View, MANIFEST_FILE};

pub use raycast::{Hit, Surface};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightBlob {
    pub center: [f64; 3],
    pub width: f64,
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub views: usize,
    /// Every `test_every`-th view (1-based) is held out; 0 keeps all for training.
    pub test_every: usize,
    pub ring_radius: f64,
    /// Camera offset along world Y; negative is above the floor.
    pub ring_height: f64,
    pub focal: f64,
    /// Exposure scale `d` applied to the illumination.
    pub darkness: f64,
    pub noise_sigma: f64,
    /// Per-view color shifts are drawn uniformly from `[-color_shift, color_shift]³`.
    pub color_shift: f64,
    /// Brightening ratio used by the default prior provider.
    pub gamma: f64,
    pub cloud_points: usize,
    pub cloud_jitter: f64,
    pub ambient: f64,
    pub lights: Vec<LightBlob>,
    pub surfaces: Vec<Surface>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            width: 64,
            height: 64,
            views: 8,
            test_every: 4,
            ring_radius: 3.0,
            ring_height: -1.2,
            focal: 80.0,
            darkness: 0.25,
            noise_sigma: 0.0,
            color_shift: 0.0,
            gamma: 4.0,
            cloud_points: 6000,
            cloud_jitter: 0.0,
            ambient: 0.25,
            lights: vec![
                LightBlob {
                    center: [-0.6, -0.5, 0.4],
                    width: 0.6,
                    intensity: 1.0,
                },
                LightBlob {
                    center: [0.7, -0.2, -0.6],
                    width: 0.5,
                    intensity: 0.7,
                },
            ],
            surfaces: vec![
                Surface::Plane {
                    center: [0.0, 0.5, 0.0],
                    u: [1.3, 0.0, 0.0],
                    v: [0.0, 0.0, 1.3],
                    albedo: [0.8, 0.7, 0.5],
                    cells: 6.0,
                    contrast: 0.45,
                },
                Surface::Sphere {
                    center: [-0.4, 0.15, 0.1],
                    radius: 0.35,
                    albedo: [0.85, 0.25, 0.2],
                    cells: 4.0,
                    contrast: 0.3,
                },
                Surface::Sphere {
                    center: [0.45, 0.25, -0.2],
                    radius: 0.25,
                    albedo: [0.2, 0.45, 0.85],
                    cells: 3.0,
                    contrast: 0.4,
                },
            ],
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.views == 0 {
            return Err(Error::invalid("synth: width, height and views must be positive"));
        }
        if !(self.darkness > 0.0 && self.darkness <= 1.0) {
            return Err(Error::invalid("synth: darkness must lie in (0, 1]"));
        }
        if !(self.noise_sigma >= 0.0 && self.color_shift >= 0.0 && self.cloud_jitter >= 0.0) {
            return Err(Error::invalid(
                "synth: noise, color shift and jitter must be non-negative",
            ));
        }
        if !(self.gamma > 0.0 && self.ambient > 0.0 && self.focal > 0.0 && self.ring_radius > 0.0) {
            return Err(Error::invalid(
                "synth: gamma, ambient, focal and ring radius must be positive",
            ));
        }
        if self.lights.iter().any(|l| !(l.width > 0.0 && l.intensity >= 0.0)) {
            return Err(Error::invalid(
                "synth: light blobs need positive width and non-negative intensity",
            ));
        }
        if self.surfaces.is_empty() {
            return Err(Error::invalid("synth: at least one surface is required"));
        }
        for s in &self.surfaces {
            s.validate()?;
        }
        if self.test_every == 1 {
            return Err(Error::invalid("synth: test_every = 1 leaves no training views"));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SynthSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SynthSpec::from_toml(&text)
    }

    /// Positive illumination field: ambient plus Gaussian light blobs.
    pub fn illumination(&self, p: &Vector3<f64>) -> f64 {
        self.ambient
            + self
                .lights
                .iter()
                .map(|l| {
                    let d2 = (p - Vector3::from(l.center)).norm_squared();
                    l.intensity * (-d2 / (2.0 * l.width * l.width)).exp()
                })
                .sum::<f64>()
    }

    pub fn cameras(&self) -> Result<Vec<Camera>> {
        (0..self.views)
            .map(|i| {
                let phi = std::f64::consts::TAU * i as f64 / self.views as f64;
                let eye = Vector3::new(
                    self.ring_radius * phi.sin(),
                    self.ring_height,
                    -self.ring_radius * phi.cos(),
                );
                Camera::look_at(
                    eye,
                    Vector3::new(0.0, 0.2, 0.0),
                    Vector3::new(0.0, -1.0, 0.0),
                    self.focal,
                    (self.width, self.height),
                )
            })
            .collect()
    }

    pub fn split(&self, view: usize) -> Split {
        if self.test_every > 0 && (view + 1) % self.test_every == 0 {
            Split::Test
        } else {
            Split::Train
        }
    }
}

/// Gray-world white balance of `gamma · low`, clipped to `[0, 1]`.
pub fn prior_provider(low: &Image, gamma: f64) -> Result<Image> {
    if !(gamma > 0.0) {
        return Err(Error::invalid("prior gamma must be positive"));
    }
    if low.channels != 3 {
        return Err(Error::invalid("prior provider expects a 3-channel image"));
    }
    let n = low.pixel_count() as f64;
    let mut means = [0.0; 3];
    for px in low.data.chunks_exact(3) {
        for c in 0..3 {
            means[c] += px[c] / n;
        }
    }
    let gray = means.iter().sum::<f64>() / 3.0;
    let gain: Vec<f64> = means.iter().map(|&m| if m > 0.0 { gray / m } else { 1.0 }).collect();
    let mut out = low.clone();
    for px in out.data.chunks_exact_mut(3) {
        for c in 0..3 {
            px[c] = (gamma * gain[c] * px[c]).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthView {
    pub name: String,
    pub camera: Camera,
    pub split: Split,
    pub low: Image,
    pub prior: Image,
    /// Noise-free `R ⊙ (d·S)`.
    pub clean: Image,
    pub reflectance: Image,
    /// Illumination before the exposure scale `d`.
    pub illumination: Image,
    /// Camera-space depth; 0 where no surface is hit.
    pub depth: Image,
    pub mask: Vec<bool>,
    pub noise: Image,
    pub color_shift: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthBundle {
    pub spec: SynthSpec,
    pub seed: u64,
    pub cloud: PointCloud,
    pub views: Vec<SynthView>,
}

fn render_view(spec: &SynthSpec, cam: &Camera, index: usize, seed: u64) -> Result<SynthView> {
    let (w, h) = (cam.width, cam.height);
    let mut reflectance = Image::new(w, h, 3);
    let mut illumination = Image::new(w, h, 1);
    let mut depth = Image::new(w, h, 1);
    let mut mask = vec![false; w * h];
    let origin = cam.center();
    for y in 0..h {
        for x in 0..w {
            let dir_cam = Vector3::new(
                (x as f64 + 0.5 - cam.cx) / cam.fx,
                (y as f64 + 0.5 - cam.cy) / cam.fy,
                1.0,
            );
            let dir = cam.rotation.transpose() * dir_cam;
            if let Some(hit) = raycast::cast(&spec.surfaces, &origin, &dir) {
                let i = y * w + x;
                mask[i] = true;
                for c in 0..3 {
                    reflectance.data[3 * i + c] = hit.albedo[c];
                }
                illumination.data[i] = spec.illumination(&hit.point);
                // ray parameter equals camera-space depth since dir_cam.z = 1
                depth.data[i] = hit.t;
            }
        }
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::invalid(format!("synth: camera {index} sees no geometry")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let mut color_shift = [0.0; 3];
    for c in &mut color_shift {
        *c = if spec.color_shift > 0.0 {
            rng.random_range(-spec.color_shift..=spec.color_shift)
        } else {
            0.0
        };
    }
    let normal = Normal::new(0.0, spec.noise_sigma.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let mut noise = Image::new(w, h, 3);
    if spec.noise_sigma > 0.0 {
        for v in &mut noise.data {
            *v = normal.sample(&mut rng);
        }
    }
    let mut clean = Image::new(w, h, 3);
    let mut low = Image::new(w, h, 3);
    for i in 0..w * h {
        for c in 0..3 {
            let k = 3 * i + c;
            clean.data[k] = reflectance.data[k] * spec.darkness * illumination.data[i];
            low.data[k] = (clean.data[k] + noise.data[k] + color_shift[c]).clamp(0.0, 1.0);
        }
    }
    let prior = prior_provider(&low, spec.gamma)?;
    Ok(SynthView {
        name: format!("view_{index:03}"),
        camera: cam.clone(),
        split: spec.split(index),
        low,
        prior,
        clean,
        reflectance,
        illumination,
        depth,
        mask,
        noise,
        color_shift,
    })
}

fn sample_cloud(spec: &SynthSpec, seed: u64) -> Result<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let areas: Vec<f64> = spec.surfaces.iter().map(|s| s.area()).collect();
    let total: f64 = areas.iter().sum();
    let jitter = Normal::new(0.0, spec.cloud_jitter).map_err(|e| Error::invalid(e.to_string()))?;
    let mut points = Vec::with_capacity(spec.cloud_points);
    let mut colors = Vec::with_capacity(spec.cloud_points);
    for _ in 0..spec.cloud_points {
        let mut pick = rng.random::<f64>() * total;
        let mut surface = &spec.surfaces[spec.surfaces.len() - 1];
        for (s, &a) in spec.surfaces.iter().zip(&areas) {
            if pick < a {
                surface = s;
                break;
            }
            pick -= a;
        }
        let (p, albedo) = surface.sample(&mut rng);
        let q = if spec.cloud_jitter > 0.0 {
            p + Vector3::new(
                jitter.sample(&mut rng),
                jitter.sample(&mut rng),
                jitter.sample(&mut rng),
            )
        } else {
            p
        };
        let s = spec.darkness * spec.illumination(&p);
        points.push(q);
        colors.push(Vector3::from(albedo) * s);
    }
    PointCloud::new(points, Some(colors))
}

/// Renders every view of the spec; deterministic for a given seed.
pub fn generate(spec: &SynthSpec, seed: u64) -> Result<SynthBundle> {
    spec.validate()?;
    let cameras = spec.cameras()?;
    let views = cameras
        .par_iter()
        .enumerate()
        .map(|(i, cam)| render_view(spec, cam, i, seed))
        .collect::<Result<Vec<_>>>()?;
    let cloud = sample_cloud(spec, seed)?;
    Ok(SynthBundle {
        spec: spec.clone(),
        seed,
        cloud,
        views,
    })
}

#[derive(Serialize)]
struct ScaleSidecar {
    /// Multiply the normalized PNG values by this to recover the map.
    scale: f64,
}

fn save_scaled(img: &Image, dir: &Path, name: &str) -> Result<()> {
    let scale = img.min_max().1.max(f64::MIN_POSITIVE);
    img.map(|v| v / scale).save_png16(&dir.join(format!("{name}.png")))?;
    let path = dir.join(format!("{name}.json"));
    let text = serde_json::to_string_pretty(&ScaleSidecar { scale })?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

impl SynthView {
    /// Undarkened, noise-free `clip(R ⊙ S)`: the reference an enhanced
    /// render is scored against.
    pub fn normal_light(&self) -> Image {
        let mut out = self.reflectance.clone();
        for (p, px) in out.data.chunks_exact_mut(3).enumerate() {
            let s = self.illumination.data[p];
            px.iter_mut().for_each(|c| *c = (*c * s).clamp(0.0, 1.0));
        }
        out
    }
}

impl SynthBundle {
    /// In-memory training data: low-light views, priors and ground-truth
    /// depth standing in for the monocular depth prior.
    pub fn dataset(&self) -> Dataset {
        let views = self
            .views
            .iter()
            .map(|v| View {
                name: v.name.clone(),
                camera: v.camera.clone(),
                split: v.split,
                low: v.low.clone(),
                prior: Some(v.prior.clone()),
                depth_prior: Some(v.depth.clone()),
            })
            .collect();
        Dataset::new(views).expect("generated views are consistent")
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let sub = |p: &str| -> Result<std::path::PathBuf> {
            let d = dir.join(p);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            Ok(d)
        };
        let views_dir = sub("views")?;
        let priors_dir = sub("priors")?;
        let depth_dir = sub("depth")?;
        let r_dir = sub("gt/R")?;
        let s_dir = sub("gt/S")?;
        let gt_depth_dir = sub("gt/depth")?;
        let normal_dir = sub("gt/normal")?;
        save_ply(&dir.join("cloud.ply"), &self.cloud, PlyFormat::BinaryLittleEndian)?;
        let manifest = Manifest {
            views: self
                .views
                .iter()
                .map(|v| ManifestEntry {
                    name: v.name.clone(),
                    split: v.split,
                    camera: v.camera.clone(),
                })
                .collect(),
        };
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        for v in &self.views {
            let file = format!("{}.png", v.name);
            v.low.save_png(&views_dir.join(&file))?;
            v.prior.save_png(&priors_dir.join(&file))?;
            let (_, dmax) = v.depth.min_max();
            v.depth.map(|d| d / dmax).save_png16(&depth_dir.join(&file))?;
            v.reflectance.save_png(&r_dir.join(&file))?;
            v.normal_light().save_png(&normal_dir.join(&file))?;
            save_scaled(&v.illumination, &s_dir, &v.name)?;
            save_scaled(&v.depth, &gt_depth_dir, &v.name)?;
        }
        Ok(())
    }
}
