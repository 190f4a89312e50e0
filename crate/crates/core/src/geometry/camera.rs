use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera with a world-to-camera pose.
///
/// Convention: `x_cam = R * x_world + t`, +Z looks forward, +Y points down the
/// image, pixel (0, 0) is the top-left corner of the top-left pixel. Pixel
/// `(col, row)` is sampled at its center `(col + 0.5, row + 0.5)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraJson", into = "CameraJson")]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
}

/// On-disk camera layout: `{focal, principal, R (row-major), t, size}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraJson {
    pub focal: [f64; 2],
    pub principal: [f64; 2],
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub size: [usize; 2],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    pub depth: f64,
}

impl Projection {
    /// Points at or behind the image plane must be culled by the caller.
    pub fn behind_camera(&self) -> bool {
        self.depth <= 0.0
    }
}

impl Camera {
    pub fn new(
        focal: (f64, f64),
        principal: (f64, f64),
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        size: (usize, usize),
    ) -> Result<Self> {
        let cam = Camera {
            fx: focal.0,
            fy: focal.1,
            cx: principal.0,
            cy: principal.1,
            rotation,
            translation,
            width: size.0,
            height: size.1,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`; `up` is the world up direction.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        size: (usize, usize),
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-12 {
            return Err(Error::invalid("look_at: up vector parallel to view direction"));
        }
        let right = right.normalize();
        // image +Y points down
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Camera::new(
            (focal, focal),
            (size.0 as f64 / 2.0, size.1 as f64 / 2.0),
            rotation,
            translation,
            size,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("camera focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera resolution must be non-zero"));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::invalid("principal point outside the image"));
        }
        let ortho = self.rotation.transpose() * self.rotation - Matrix3::identity();
        if ortho.amax() > 1e-9 || self.rotation.determinant() <= 0.0 {
            return Err(Error::invalid("camera rotation is not a proper rotation"));
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("camera translation not finite"));
        }
        Ok(())
    }

    pub fn to_camera(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn project_point(&self, x: &Vector3<f64>) -> Projection {
        self.project_camera_point(&self.to_camera(x))
    }

    pub fn project_camera_point(&self, xc: &Vector3<f64>) -> Projection {
        let z = xc.z;
        Projection {
            pixel: Vector2::new(self.fx * xc.x / z + self.cx, self.fy * xc.y / z + self.cy),
            depth: z,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

impl TryFrom<CameraJson> for Camera {
    type Error = Error;

    fn try_from(j: CameraJson) -> Result<Self> {
        Camera::new(
            (j.focal[0], j.focal[1]),
            (j.principal[0], j.principal[1]),
            Matrix3::from_row_slice(&j.r),
            Vector3::from_column_slice(&j.t),
            (j.size[0], j.size[1]),
        )
    }
}

impl From<Camera> for CameraJson {
    fn from(c: Camera) -> Self {
        let mut r = [0.0; 9];
        for row in 0..3 {
            for col in 0..3 {
                r[row * 3 + col] = c.rotation[(row, col)];
            }
        }
        CameraJson {
            focal: [c.fx, c.fy],
            principal: [c.cx, c.cy],
            r,
            t: [c.translation.x, c.translation.y, c.translation.z],
            size: [c.width, c.height],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;
    use proptest::prelude::*;

    fn identity_cam(f: f64, c: f64, size: usize) -> Camera {
        Camera::new((f, f), (c, c), Matrix3::identity(), Vector3::zeros(), (size, size)).unwrap()
    }

    #[test]
    fn identity_projection_at_origin() {
        let cam = identity_cam(1.0, 0.0, 4);
        let p = cam.project_point(&Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(p.pixel, Vector2::new(0.0, 0.0));
        assert_eq!(p.depth, 1.0);
        assert!(!p.behind_camera());
    }

    #[test]
    fn pinhole_formula() {
        let cam = identity_cam(100.0, 50.0, 100);
        let p = cam.project_point(&Vector3::new(0.1, 0.0, 1.0));
        assert_relative_eq!(p.pixel.x, 60.0, epsilon = 1e-12);
        assert_relative_eq!(p.pixel.y, 50.0, epsilon = 1e-12);
        assert_eq!(p.depth, 1.0);
    }

    #[test]
    fn point_behind_camera_is_flagged() {
        let cam = identity_cam(1.0, 0.0, 4);
        assert!(cam.project_point(&Vector3::new(0.0, 0.0, -1.0)).behind_camera());
    }

    #[test]
    fn rejects_bad_intrinsics_and_rotation() {
        let r = Matrix3::identity();
        let t = Vector3::zeros();
        assert!(Camera::new((0.0, 1.0), (1.0, 1.0), r, t, (4, 4)).is_err());
        assert!(Camera::new((1.0, 1.0), (4.0, 1.0), r, t, (4, 4)).is_err());
        assert!(Camera::new((1.0, 1.0), (1.0, 1.0), r * 1.01, t, (4, 4)).is_err());
        assert!(Camera::new((1.0, 1.0), (1.0, 1.0), -r, t, (4, 4)).is_err());
    }

    #[test]
    fn json_layout_round_trip() {
        let cam = Camera::look_at(
            Vector3::new(1.0, -0.5, -4.0),
            Vector3::zeros(),
            Vector3::new(0.0, -1.0, 0.0),
            30.0,
            (32, 24),
        )
        .unwrap();
        let text = serde_json::to_string(&cam).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["focal", "principal", "R", "t", "size"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: Camera = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cam);
    }

    #[test]
    fn look_at_centers_target() {
        let cam = Camera::look_at(
            Vector3::new(3.0, -1.0, 2.0),
            Vector3::new(0.1, 0.2, 0.3),
            Vector3::new(0.0, -1.0, 0.0),
            40.0,
            (64, 48),
        )
        .unwrap();
        let p = cam.project_point(&Vector3::new(0.1, 0.2, 0.3));
        assert_relative_eq!(p.pixel.x, 32.0, epsilon = 1e-9);
        assert_relative_eq!(p.pixel.y, 24.0, epsilon = 1e-9);
        assert_relative_eq!(cam.center(), Vector3::new(3.0, -1.0, 2.0), epsilon = 1e-12);
    }

    proptest! {
        // Projecting x under pose P equals projecting P·x under the identity pose.
        #[test]
        fn projection_commutes_with_rigid_motion(
            ax in -3.0f64..3.0, ay in -3.0f64..3.0, az in -3.0f64..3.0,
            tx in -2.0f64..2.0, ty in -2.0f64..2.0, tz in 3.0f64..6.0,
            px in -1.0f64..1.0, py in -1.0f64..1.0, pz in -1.0f64..1.0,
        ) {
            let rot = Rotation3::from_euler_angles(ax, ay, az).into_inner();
            let t = Vector3::new(tx, ty, tz);
            let posed = Camera::new((50.0, 60.0), (20.0, 15.0), rot, t, (40, 30)).unwrap();
            let ident = Camera::new((50.0, 60.0), (20.0, 15.0), Matrix3::identity(), Vector3::zeros(), (40, 30)).unwrap();
            let x = Vector3::new(px, py, pz);
            let a = posed.project_point(&x);
            let b = ident.project_point(&(rot * x + t));
            prop_assert!((a.pixel - b.pixel).norm() < 1e-9);
            prop_assert!((a.depth - b.depth).abs() < 1e-12);
        }
    }
}
