use nalgebra::{Matrix3, Vector3};

use super::{rot6d_to_matrix, KinematicTree, NUM_SHAPE, ROT6D};
use crate::error::{Error, Result};

pub const DENSE_FRACTIONS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
pub const NUM_DENSE_POINTS: usize = 16 + 15 * DENSE_FRACTIONS.len();

/// Pelvis-rooted joint positions in meters.
///
/// `theta` holds one 6D rotation per joint (root first, as global
/// orientation); `beta` holds the log-scales of the four bone groups.
pub fn forward_kinematics(theta: &[f64], beta: &[f64], tree: &KinematicTree) -> Result<Vec<Vector3<f64>>> {
    let j = tree.num_joints();
    if theta.len() != j * ROT6D {
        return Err(Error::shape("forward_kinematics pose", j * ROT6D, theta.len()));
    }
    if beta.len() != NUM_SHAPE {
        return Err(Error::shape("forward_kinematics shape", NUM_SHAPE, beta.len()));
    }
    let mut global = vec![Matrix3::identity(); j];
    let mut pos = vec![Vector3::zeros(); j];
    for i in 0..j {
        let r = rot6d_to_matrix(&theta[i * ROT6D..(i + 1) * ROT6D])?;
        match tree.parent(i) {
            None => global[i] = r,
            Some(p) => {
                let scale = beta[tree.groups[i] as usize].exp();
                let o = Vector3::from(tree.offsets[i]) * scale;
                pos[i] = pos[p] + global[p] * o;
                global[i] = global[p] * r;
            }
        }
    }
    Ok(pos)
}

/// Distance of every non-root joint to its parent.
pub fn bone_lengths(joints: &[Vector3<f64>], tree: &KinematicTree) -> Vec<f64> {
    tree.bones().iter().map(|&(p, c)| (joints[c] - joints[p]).norm()).collect()
}

/// All joints followed by four interpolants per bone at fractions
/// 0.2, 0.4, 0.6 and 0.8 from parent to child.
pub fn dense_body_points(joints: &[Vector3<f64>], tree: &KinematicTree) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(NUM_DENSE_POINTS);
    out.extend_from_slice(joints);
    for (p, c) in tree.bones() {
        let (a, b) = (joints[p], joints[c]);
        for &t in &DENSE_FRACTIONS {
            out.push(a * (1.0 - t) + b * t);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{matrix_to_rot6d, NUM_JOINTS, REST_OFFSETS};
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_pose() -> Vec<f64> {
        (0..NUM_JOINTS).flat_map(|_| [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).collect()
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..NUM_JOINTS * 6).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn rest_positions() -> Vec<Vector3<f64>> {
        let tree = KinematicTree::standard();
        let mut pos = vec![Vector3::zeros(); NUM_JOINTS];
        for i in 1..NUM_JOINTS {
            pos[i] = pos[tree.parent(i).unwrap()] + Vector3::from(REST_OFFSETS[i]);
        }
        pos
    }

    #[test]
    fn identity_rotations_give_rest_pose() {
        let tree = KinematicTree::standard();
        let joints = forward_kinematics(&identity_pose(), &[0.0; 4], &tree).unwrap();
        assert_eq!(joints, rest_positions());
    }

    #[test]
    fn root_rotation_is_rigid() {
        let tree = KinematicTree::standard();
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2).into_inner();
        let mut pose = identity_pose();
        pose[..6].copy_from_slice(&matrix_to_rot6d(&r));
        let joints = forward_kinematics(&pose, &[0.0; 4], &tree).unwrap();
        for (a, b) in joints.iter().zip(rest_positions()) {
            assert!((a - r * b).norm() < 1e-15);
        }
    }

    #[test]
    fn bone_lengths_invariant_under_pose() {
        let tree = KinematicTree::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let beta: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.3..0.3)).collect();
            let joints = forward_kinematics(&random_pose(&mut rng), &beta, &tree).unwrap();
            for ((_, c), len) in tree.bones().into_iter().zip(bone_lengths(&joints, &tree)) {
                let expected = Vector3::from(REST_OFFSETS[c]).norm() * beta[tree.groups[c] as usize].exp();
                assert!((len - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dense_points_interpolate_bones() {
        let tree = KinematicTree::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let joints = forward_kinematics(&random_pose(&mut rng), &[0.0; 4], &tree).unwrap();
        let dense = dense_body_points(&joints, &tree);
        assert_eq!(dense.len(), 76);
        for (b, (p, c)) in tree.bones().into_iter().enumerate() {
            for (k, &t) in DENSE_FRACTIONS.iter().enumerate() {
                let q = dense[NUM_JOINTS + 4 * b + k];
                assert!((q - (joints[p] * (1.0 - t) + joints[c] * t)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn rest_interpolants_are_collinear() {
        let tree = KinematicTree::standard();
        let joints = rest_positions();
        let dense = dense_body_points(&joints, &tree);
        for (b, (p, c)) in tree.bones().into_iter().enumerate() {
            let dir = joints[c] - joints[p];
            for k in 0..4 {
                let off = dense[NUM_JOINTS + 4 * b + k] - joints[p];
                assert!(off.cross(&dir).norm() < 1e-15);
            }
        }
    }
}
