use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Textured scene primitive. Albedo is modulated by a checkerboard with
/// `cells` squares per unit of surface parameter and darkening `contrast`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Surface {
    /// Parallelogram `center + a·u + b·v`, `a, b ∈ [-1, 1]`.
    Plane {
        center: [f64; 3],
        u: [f64; 3],
        v: [f64; 3],
        albedo: [f64; 3],
        cells: f64,
        contrast: f64,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
        albedo: [f64; 3],
        cells: f64,
        contrast: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vector3<f64>,
    pub albedo: [f64; 3],
}

const RAY_EPS: f64 = 1e-9;

fn checker(s: f64, t: f64, cells: f64) -> f64 {
    let k = (s * cells).floor() as i64 + (t * cells).floor() as i64;
    k.rem_euclid(2) as f64
}

fn textured(albedo: &[f64; 3], contrast: f64, pattern: f64) -> [f64; 3] {
    let f = 1.0 - contrast * pattern;
    [albedo[0] * f, albedo[1] * f, albedo[2] * f]
}

impl Surface {
    pub fn validate(&self) -> Result<()> {
        let (albedo, contrast, cells) = match self {
            Surface::Plane {
                u,
                v,
                albedo,
                contrast,
                cells,
                ..
            } => {
                if Vector3::from(*u).cross(&Vector3::from(*v)).norm() < 1e-12 {
                    return Err(Error::invalid("synth: plane edge vectors are parallel"));
                }
                (albedo, contrast, cells)
            }
            Surface::Sphere {
                radius,
                albedo,
                contrast,
                cells,
                ..
            } => {
                if !(*radius > 0.0) {
                    return Err(Error::invalid("synth: sphere radius must be positive"));
                }
                (albedo, contrast, cells)
            }
        };
        if albedo.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::invalid("synth: albedo must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(contrast) || !(*cells > 0.0) {
            return Err(Error::invalid(
                "synth: texture contrast must lie in [0, 1] and cells be positive",
            ));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        match self {
            Surface::Plane { u, v, .. } => 4.0 * Vector3::from(*u).cross(&Vector3::from(*v)).norm(),
            Surface::Sphere { radius, .. } => 4.0 * std::f64::consts::PI * radius * radius,
        }
    }

    fn plane_albedo(albedo: &[f64; 3], a: f64, b: f64, cells: f64, contrast: f64) -> [f64; 3] {
        textured(albedo, contrast, checker((a + 1.0) / 2.0, (b + 1.0) / 2.0, cells))
    }

    fn sphere_albedo(albedo: &[f64; 3], n: &Vector3<f64>, cells: f64, contrast: f64) -> [f64; 3] {
        let lon = n.z.atan2(n.x) / std::f64::consts::TAU + 0.5;
        let lat = n.y.clamp(-1.0, 1.0).acos() / std::f64::consts::PI;
        textured(albedo, contrast, checker(lon, lat, cells))
    }

    /// Uniform sample on the surface with its albedo.
    pub fn sample(&self, rng: &mut impl Rng) -> (Vector3<f64>, [f64; 3]) {
        match self {
            Surface::Plane {
                center,
                u,
                v,
                albedo,
                cells,
                contrast,
            } => {
                let a = rng.random_range(-1.0..1.0);
                let b = rng.random_range(-1.0..1.0);
                let p = Vector3::from(*center) + Vector3::from(*u) * a + Vector3::from(*v) * b;
                (p, Self::plane_albedo(albedo, a, b, *cells, *contrast))
            }
            Surface::Sphere {
                center,
                radius,
                albedo,
                cells,
                contrast,
            } => {
                let z: f64 = rng.random_range(-1.0..1.0);
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                let r = (1.0 - z * z).sqrt();
                let n = Vector3::new(r * phi.cos(), z, r * phi.sin());
                (
                    Vector3::from(*center) + n * *radius,
                    Self::sphere_albedo(albedo, &n, *cells, *contrast),
                )
            }
        }
    }

    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        match self {
            Surface::Plane {
                center,
                u,
                v,
                albedo,
                cells,
                contrast,
            } => {
                let (c, u, v) = (Vector3::from(*center), Vector3::from(*u), Vector3::from(*v));
                let n = u.cross(&v);
                let denom = dir.dot(&n);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = (c - origin).dot(&n) / denom;
                if t <= RAY_EPS {
                    return None;
                }
                let p = origin + dir * t;
                let rel = p - c;
                // solve rel = a·u + b·v in the plane
                let (uu, uv, vv) = (u.dot(&u), u.dot(&v), v.dot(&v));
                let (ru, rv) = (rel.dot(&u), rel.dot(&v));
                let det = uu * vv - uv * uv;
                let a = (ru * vv - rv * uv) / det;
                let b = (rv * uu - ru * uv) / det;
                if a.abs() > 1.0 || b.abs() > 1.0 {
                    return None;
                }
                Some(Hit {
                    t,
                    point: p,
                    albedo: Self::plane_albedo(albedo, a, b, *cells, *contrast),
                })
            }
            Surface::Sphere {
                center,
                radius,
                albedo,
                cells,
                contrast,
            } => {
                let c = Vector3::from(*center);
                let oc = origin - c;
                let a = dir.norm_squared();
                let half_b = oc.dot(dir);
                let disc = half_b * half_b - a * (oc.norm_squared() - radius * radius);
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = [(-half_b - sq) / a, (-half_b + sq) / a]
                    .into_iter()
                    .find(|&t| t > RAY_EPS)?;
                let p = origin + dir * t;
                let n = (p - c) / *radius;
                Some(Hit {
                    t,
                    point: p,
                    albedo: Self::sphere_albedo(albedo, &n, *cells, *contrast),
                })
            }
        }
    }
}

/// Nearest hit along the ray over all surfaces.
pub fn cast(surfaces: &[Surface], origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
    surfaces
        .iter()
        .filter_map(|s| s.intersect(origin, dir))
        .min_by(|a, b| a.t.total_cmp(&b.t))
}
