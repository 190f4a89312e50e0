use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::geometry::Camera;

pub const NEAR_PLANE: f64 = 0.01;
/// Added to the diagonal of every projected covariance (px²).
pub const DILATION: f64 = 0.3;
/// Support radius in standard deviations.
pub const EXTENT_SIGMAS: f64 = 3.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub gaussian_index: usize,
    /// Per-axis half-width of the support box in pixels.
    pub extent: Vector2<f64>,
}

fn jacobian(cam: &Camera, xc: &Vector3<f64>) -> Matrix2x3<f64> {
    let z = xc.z;
    Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * xc.x / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * xc.y / (z * z),
    )
}

/// Projects a 3D Gaussian. Returns `None` when it is behind the near plane
/// or lies entirely outside the frame.
pub fn project_gaussian(
    cam: &Camera,
    mu: &Vector3<f64>,
    cov3d: &Matrix3<f64>,
    gaussian_index: usize,
) -> Option<Splat2D> {
    let xc = cam.to_camera(mu);
    if !(xc.z > NEAR_PLANE) {
        return None;
    }
    let mean2d = Vector2::new(cam.fx * xc.x / xc.z + cam.cx, cam.fy * xc.y / xc.z + cam.cy);
    let j = jacobian(cam, &xc);
    let w = cam.rotation;
    let cov2d = j * (w * cov3d * w.transpose()) * j.transpose() + Matrix2::identity() * DILATION;
    let extent = Vector2::new(cov2d[(0, 0)].sqrt(), cov2d[(1, 1)].sqrt()) * EXTENT_SIGMAS;
    let (wf, hf) = (cam.width as f64, cam.height as f64);
    if mean2d.x + extent.x < 0.0 || mean2d.x - extent.x > wf || mean2d.y + extent.y < 0.0 || mean2d.y - extent.y > hf {
        return None;
    }
    let conic = cov2d.try_inverse()?;
    if !mean2d.iter().chain(conic.iter()).all(|v| v.is_finite()) {
        return None;
    }
    Some(Splat2D {
        mean2d,
        cov2d,
        conic,
        depth: xc.z,
        gaussian_index,
        extent,
    })
}

/// Pulls gradients on a splat's 2D mean, 2D covariance and depth back to the
/// 3D mean and covariance.
pub fn project_gaussian_backward(
    cam: &Camera,
    mu: &Vector3<f64>,
    cov3d: &Matrix3<f64>,
    d_mean2d: &Vector2<f64>,
    d_cov2d: &Matrix2<f64>,
    d_depth: f64,
) -> (Vector3<f64>, Matrix3<f64>) {
    let xc = cam.to_camera(mu);
    let (x, y, z) = (xc.x, xc.y, xc.z);
    let (fx, fy) = (cam.fx, cam.fy);
    let w = cam.rotation;
    let j = jacobian(cam, &xc);
    let m = w * cov3d * w.transpose();

    let mut d_xc = Vector3::new(
        d_mean2d.x * fx / z,
        d_mean2d.y * fy / z,
        -d_mean2d.x * fx * x / (z * z) - d_mean2d.y * fy * y / (z * z) + d_depth,
    );
    let d_m = j.transpose() * d_cov2d * j;
    let d_j = (d_cov2d + d_cov2d.transpose()) * j * m;
    let z2 = z * z;
    let z3 = z2 * z;
    d_xc.z += -d_j[(0, 0)] * fx / z2 + d_j[(0, 2)] * 2.0 * fx * x / z3 - d_j[(1, 1)] * fy / z2
        + d_j[(1, 2)] * 2.0 * fy * y / z3;
    d_xc.x += -d_j[(0, 2)] * fx / z2;
    d_xc.y += -d_j[(1, 2)] * fy / z2;

    (w.transpose() * d_xc, w.transpose() * d_m * w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cam() -> Camera {
        Camera::new(
            (100.0, 120.0),
            (32.0, 30.0),
            Matrix3::identity(),
            Vector3::zeros(),
            (64, 60),
        )
        .unwrap()
    }

    #[test]
    fn axis_gaussian_projects_isotropically() {
        let c = Camera::new(
            (80.0, 80.0),
            (32.0, 32.0),
            Matrix3::identity(),
            Vector3::zeros(),
            (64, 64),
        )
        .unwrap();
        let s = project_gaussian(&c, &Vector3::new(0.0, 0.0, 4.0), &(Matrix3::identity() * 0.01), 0).unwrap();
        let expected = (80.0 * 0.1 / 4.0f64).powi(2) + DILATION;
        assert_relative_eq!(s.cov2d, Matrix2::identity() * expected, epsilon = 1e-12);
        assert_eq!(s.mean2d, Vector2::new(32.0, 32.0));
        assert_eq!(s.depth, 4.0);
    }

    #[test]
    fn doubling_depth_quarters_covariance() {
        let c = cam();
        let cov = Matrix3::new(0.02, 0.005, 0.0, 0.005, 0.01, 0.001, 0.0, 0.001, 0.03);
        let a = project_gaussian(&c, &Vector3::new(0.0, 0.0, 2.0), &cov, 0).unwrap();
        let b = project_gaussian(&c, &Vector3::new(0.0, 0.0, 4.0), &cov, 0).unwrap();
        let pre = |s: &Splat2D| s.cov2d - Matrix2::identity() * DILATION;
        assert_relative_eq!(pre(&a) / 4.0, pre(&b), epsilon = 1e-12);
    }

    #[test]
    fn near_and_offscreen_gaussians_are_culled() {
        let c = cam();
        let cov = Matrix3::identity() * 1e-4;
        assert!(project_gaussian(&c, &Vector3::new(0.0, 0.0, 0.005), &cov, 0).is_none());
        assert!(project_gaussian(&c, &Vector3::new(0.0, 0.0, -1.0), &cov, 0).is_none());
        assert!(project_gaussian(&c, &Vector3::new(50.0, 0.0, 1.0), &cov, 0).is_none());
        assert!(project_gaussian(&c, &Vector3::new(0.0, 0.0, 1.0), &cov, 0).is_some());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let rot = crate::scene::quat_to_rotation(&nalgebra::Vector4::new(0.9, 0.1, -0.3, 0.2).normalize());
        let c = Camera::new((90.0, 110.0), (30.0, 28.0), rot, Vector3::new(0.1, -0.2, 3.0), (64, 60)).unwrap();
        let mu = Vector3::new(0.3, 0.2, -0.4);
        let cov = Matrix3::new(0.05, 0.01, -0.004, 0.01, 0.03, 0.002, -0.004, 0.002, 0.04);
        // scalar functional L = a·mean + <B, cov2d> + c·depth
        let a = Vector2::new(0.7, -1.3);
        let b = Matrix2::new(0.4, -0.2, 0.9, 0.3);
        let cd = 0.8;
        let loss = |mu: &Vector3<f64>, cov: &Matrix3<f64>| {
            let s = project_gaussian(&c, mu, cov, 0).unwrap();
            a.dot(&s.mean2d) + b.component_mul(&s.cov2d).sum() + cd * s.depth
        };
        let (d_mu, d_cov) = project_gaussian_backward(&c, &mu, &cov, &a, &b, cd);
        let h = 1e-6;
        for i in 0..3 {
            let mut p = mu;
            let mut m = mu;
            p[i] += h;
            m[i] -= h;
            assert_relative_eq!(
                d_mu[i],
                (loss(&p, &cov) - loss(&m, &cov)) / (2.0 * h),
                max_relative = 1e-6
            );
        }
        for i in 0..9 {
            let mut p = cov;
            let mut m = cov;
            p[i] += h;
            m[i] -= h;
            assert_relative_eq!(
                d_cov[i],
                (loss(&mu, &p) - loss(&mu, &m)) / (2.0 * h),
                max_relative = 1e-6,
                epsilon = 1e-9
            );
        }
    }
}
