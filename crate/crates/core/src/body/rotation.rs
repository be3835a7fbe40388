use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub(crate) const MIN_SEED_NORM: f64 = 1e-9;
pub(crate) const MAX_SEED_COS: f64 = 1.0 - 1e-9;

/// Gram-Schmidt decoding of two 3D column seeds `[a1, a2]` into a rotation
/// with columns `(b1, b2, b1 × b2)`.
pub fn rot6d_to_matrix(r: &[f64]) -> Result<Matrix3<f64>> {
    if r.len() != 6 {
        return Err(Error::shape("rot6d", 6, r.len()));
    }
    let a1 = Vector3::new(r[0], r[1], r[2]);
    let a2 = Vector3::new(r[3], r[4], r[5]);
    let n1 = a1.norm();
    if n1 < MIN_SEED_NORM {
        return Err(Error::DegenerateRotation(format!("first seed norm {n1:e}")));
    }
    let n2 = a2.norm();
    if n2 < MIN_SEED_NORM || (a1.dot(&a2) / (n1 * n2)).abs() > MAX_SEED_COS {
        return Err(Error::DegenerateRotation("seeds are parallel".into()));
    }
    let b1 = a1 / n1;
    let u = a2 - b1 * b1.dot(&a2);
    let b2 = u / u.norm();
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

/// First two columns of a rotation matrix.
pub fn matrix_to_rot6d(m: &Matrix3<f64>) -> [f64; 6] {
    [m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]]
}
