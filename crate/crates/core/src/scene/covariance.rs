use nalgebra::{Matrix3, Vector3, Vector4};

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_rotation(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// `Σ = R diag(s)² Rᵀ`.
pub fn build_covariance(scale: &Vector3<f64>, quat: &Vector4<f64>) -> Matrix3<f64> {
    let m = quat_to_rotation(quat) * Matrix3::from_diagonal(scale);
    m * m.transpose()
}

/// Pulls `dL/dΣ` back to the scale vector and the (unit) quaternion.
pub fn build_covariance_backward(
    scale: &Vector3<f64>,
    quat: &Vector4<f64>,
    d_cov: &Matrix3<f64>,
) -> (Vector3<f64>, Vector4<f64>) {
    let r = quat_to_rotation(quat);
    let m = r * Matrix3::from_diagonal(scale);
    let d_m = (d_cov + d_cov.transpose()) * m;
    let mut d_scale = Vector3::zeros();
    let mut d_r = Matrix3::zeros();
    for j in 0..3 {
        for i in 0..3 {
            d_scale[j] += d_m[(i, j)] * r[(i, j)];
            d_r[(i, j)] = d_m[(i, j)] * scale[j];
        }
    }
    let (w, x, y, z) = (quat[0], quat[1], quat[2], quat[3]);
    let dr_dw = Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0);
    let dr_dx = Matrix3::new(
        0.0,
        2.0 * y,
        2.0 * z,
        2.0 * y,
        -4.0 * x,
        -2.0 * w,
        2.0 * z,
        2.0 * w,
        -4.0 * x,
    );
    let dr_dy = Matrix3::new(
        -4.0 * y,
        2.0 * x,
        2.0 * w,
        2.0 * x,
        0.0,
        2.0 * z,
        -2.0 * w,
        2.0 * z,
        -4.0 * y,
    );
    let dr_dz = Matrix3::new(
        -4.0 * z,
        -2.0 * w,
        2.0 * x,
        2.0 * w,
        -4.0 * z,
        2.0 * y,
        2.0 * x,
        2.0 * y,
        0.0,
    );
    let d_quat = Vector4::new(
        d_r.component_mul(&dr_dw).sum(),
        d_r.component_mul(&dr_dx).sum(),
        d_r.component_mul(&dr_dy).sum(),
        d_r.component_mul(&dr_dz).sum(),
    );
    (d_scale, d_quat)
}
