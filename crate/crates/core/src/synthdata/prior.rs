use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::body::{matrix_to_rot6d, NUM_JOINTS, POSE_DIM};

fn deg(v: f64) -> f64 {
    v.to_radians()
}

fn rot(axis: Vector3<f64>, angle: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
}

/// Flexion about x, abduction about z, twist about y, applied in that order
/// to the child bone.
fn local(flex: f64, abd: f64, twist: f64) -> Rotation3<f64> {
    rot(Vector3::y(), twist) * rot(Vector3::z(), abd) * rot(Vector3::x(), flex)
}

/// Joint-angle prior in the camera frame (x right, y down, z away from the
/// camera, subject facing the camera). Positive flexion about x swings a
/// downward bone away from the camera.
pub fn sample_pose<R: Rng + ?Sized>(rng: &mut R) -> Vec<f64> {
    let small = |rng: &mut R, sd: f64| Normal::new(0.0, deg(sd)).expect("positive sd").sample(rng);
    let mut r = vec![Rotation3::identity(); NUM_JOINTS];
    r[0] = rot(Vector3::y(), deg(rng.gen_range(-60.0..60.0)))
        * rot(Vector3::x(), deg(rng.gen_range(-10.0..10.0)))
        * rot(Vector3::z(), deg(rng.gen_range(-8.0..8.0)));
    r[1] = local(small(rng, 8.0), small(rng, 5.0), small(rng, 8.0));
    r[2] = local(small(rng, 8.0), small(rng, 5.0), small(rng, 8.0));
    r[3] = local(small(rng, 12.0), small(rng, 8.0), small(rng, 15.0));
    for (hip, knee, ankle, side) in [(4usize, 5usize, 6usize, -1.0), (7, 8, 9, 1.0)] {
        r[hip] = local(-deg(rng.gen_range(-20.0..80.0)), side * deg(rng.gen_range(0.0..30.0)), small(rng, 10.0));
        r[knee] = local(deg(rng.gen_range(0.0..110.0)), 0.0, small(rng, 5.0));
        r[ankle] = local(small(rng, 10.0), small(rng, 5.0), small(rng, 5.0));
    }
    for (shoulder, elbow, wrist, side) in [(10usize, 11usize, 12usize, -1.0), (13, 14, 15, 1.0)] {
        r[shoulder] = local(-deg(rng.gen_range(-30.0..90.0)), side * deg(rng.gen_range(0.0..100.0)), small(rng, 15.0));
        r[elbow] = local(-deg(rng.gen_range(0.0..130.0)), 0.0, small(rng, 10.0));
        r[wrist] = local(small(rng, 15.0), small(rng, 10.0), small(rng, 10.0));
    }
    let mut out = Vec::with_capacity(POSE_DIM);
    for m in r {
        out.extend_from_slice(&matrix_to_rot6d(m.matrix()));
    }
    out
}
