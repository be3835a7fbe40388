//! Tape primitives for the body pipeline: rotation decoding, forward
//! kinematics and crop projection over row batches.

use nalgebra::{Matrix3, Vector3};
use ndarray::Array2;

use super::rotation::{MAX_SEED_COS, MIN_SEED_NORM};
use super::{KinematicTree, CROP_SIZE, DENSE_FRACTIONS, NUM_SHAPE, ROT6D};
use crate::diffcore::{CustomOp, Tape, Var};
use crate::error::{Error, Result};

const MIN_SCALE_BOX: f64 = 1e-6;
const MIN_DEPTH: f64 = 1e-6;

fn v3(row: &[f64]) -> Vector3<f64> {
    Vector3::new(row[0], row[1], row[2])
}

fn mat_at(row: &[f64], j: usize) -> Matrix3<f64> {
    Matrix3::from_row_slice(&row[9 * j..9 * j + 9])
}

fn put_mat(row: &mut [f64], j: usize, m: &Matrix3<f64>) {
    for r in 0..3 {
        for c in 0..3 {
            row[9 * j + 3 * r + c] = m[(r, c)];
        }
    }
}

struct Rot6d;

/// Decodes `rows × 6J` seeds into `rows × 9J` row-major rotation matrices.
pub fn rot6d_tape(tape: &mut Tape, seeds: Var) -> Result<Var> {
    let (n, m) = tape.shape(seeds);
    if m % ROT6D != 0 {
        return Err(Error::shape("rot6d_tape columns", "multiple of 6", m));
    }
    let joints = m / ROT6D;
    let x = tape.value(seeds);
    let mut out = Array2::zeros((n, 9 * joints));
    for r in 0..n {
        let row = x.row(r);
        let row = row.as_slice().expect("standard layout");
        let mut dst = out.row_mut(r);
        let dst = dst.as_slice_mut().expect("standard layout");
        for j in 0..joints {
            let rot = super::rot6d_to_matrix(&row[6 * j..6 * j + 6])
                .map_err(|e| Error::DegenerateRotation(format!("row {r} joint {j}: {e}")))?;
            put_mat(dst, j, &rot);
        }
    }
    Ok(tape.custom(&[seeds], out, Box::new(Rot6d)))
}

impl CustomOp for Rot6d {
    fn name(&self) -> &'static str {
        "rot6d"
    }

    fn backward(&self, inputs: &[&Array2<f64>], _output: &Array2<f64>, g: &Array2<f64>) -> Vec<Array2<f64>> {
        let x = inputs[0];
        let joints = x.ncols() / ROT6D;
        let mut gx = Array2::zeros(x.dim());
        for r in 0..x.nrows() {
            for j in 0..joints {
                let a1 = Vector3::new(x[[r, 6 * j]], x[[r, 6 * j + 1]], x[[r, 6 * j + 2]]);
                let a2 = Vector3::new(x[[r, 6 * j + 3]], x[[r, 6 * j + 4]], x[[r, 6 * j + 5]]);
                let gm = |row: usize, col: usize| g[[r, 9 * j + 3 * row + col]];
                let col = |c: usize| Vector3::new(gm(0, c), gm(1, c), gm(2, c));
                let (g1, g2, g3) = (col(0), col(1), col(2));

                let n1 = a1.norm();
                let b1 = a1 / n1;
                let d = b1.dot(&a2);
                let u = a2 - b1 * d;
                let nu = u.norm();
                let b2 = u / nu;

                let mut gb1 = g1 + b2.cross(&g3);
                let gb2 = g2 + g3.cross(&b1);
                let gu = (gb2 - b2 * b2.dot(&gb2)) / nu;
                let ga2 = gu - b1 * b1.dot(&gu);
                gb1 -= gu * d + a2 * b1.dot(&gu);
                let ga1 = (gb1 - b1 * b1.dot(&gb1)) / n1;

                for k in 0..3 {
                    gx[[r, 6 * j + k]] = ga1[k];
                    gx[[r, 6 * j + 3 + k]] = ga2[k];
                }
            }
        }
        vec![gx]
    }
}

struct ForwardKinematics {
    parents: Vec<i32>,
    offsets: Vec<Vector3<f64>>,
    groups: Vec<usize>,
}

impl ForwardKinematics {
    fn new(tree: &KinematicTree) -> Self {
        Self {
            parents: tree.parents.clone(),
            offsets: tree.offsets.iter().map(|o| Vector3::from(*o)).collect(),
            groups: tree.groups.iter().map(|g| *g as usize).collect(),
        }
    }

    fn globals(&self, rot: &[f64]) -> Vec<Matrix3<f64>> {
        let mut global: Vec<Matrix3<f64>> = Vec::with_capacity(self.parents.len());
        for (i, &p) in self.parents.iter().enumerate() {
            let r = mat_at(rot, i);
            global.push(if p < 0 { r } else { global[p as usize] * r });
        }
        global
    }
}

/// Pelvis-rooted joints `rows × 3J` from rotations `rows × 9J` and
/// shape log-scales `rows × 4`.
pub fn fk_tape(tape: &mut Tape, rot: Var, beta: Var, tree: &KinematicTree) -> Result<Var> {
    let j = tree.num_joints();
    let (n, m) = tape.shape(rot);
    if m != 9 * j {
        return Err(Error::shape("fk_tape rotations", 9 * j, m));
    }
    if tape.shape(beta) != (n, NUM_SHAPE) {
        return Err(Error::shape("fk_tape shape", format!("({n}, {NUM_SHAPE})"), format!("{:?}", tape.shape(beta))));
    }
    let op = ForwardKinematics::new(tree);
    let (rv, bv) = (tape.value(rot), tape.value(beta));
    let mut out = Array2::zeros((n, 3 * j));
    for r in 0..n {
        let rrow = rv.row(r);
        let global = op.globals(rrow.as_slice().expect("standard layout"));
        let mut pos = vec![Vector3::zeros(); j];
        for i in 0..j {
            if op.parents[i] >= 0 {
                let p = op.parents[i] as usize;
                let k = bv[[r, op.groups[i]]].exp();
                pos[i] = pos[p] + global[p] * (op.offsets[i] * k);
            }
            for c in 0..3 {
                out[[r, 3 * i + c]] = pos[i][c];
            }
        }
    }
    Ok(tape.custom(&[rot, beta], out, Box::new(op)))
}

impl CustomOp for ForwardKinematics {
    fn name(&self) -> &'static str {
        "forward_kinematics"
    }

    fn backward(&self, inputs: &[&Array2<f64>], _output: &Array2<f64>, g: &Array2<f64>) -> Vec<Array2<f64>> {
        let (rot, beta) = (inputs[0], inputs[1]);
        let j = self.parents.len();
        let mut grot = Array2::zeros(rot.dim());
        let mut gbeta = Array2::zeros(beta.dim());
        for r in 0..rot.nrows() {
            let rrow = rot.row(r);
            let rrow = rrow.as_slice().expect("standard layout");
            let global = self.globals(rrow);
            let mut gp: Vec<Vector3<f64>> =
                (0..j).map(|i| v3(&[g[[r, 3 * i]], g[[r, 3 * i + 1]], g[[r, 3 * i + 2]]])).collect();
            let mut gg = vec![Matrix3::zeros(); j];
            let mut grow = vec![0.0; 9 * j];
            for i in (0..j).rev() {
                let ri = mat_at(rrow, i);
                if self.parents[i] < 0 {
                    put_mat(&mut grow, i, &gg[i]);
                    continue;
                }
                let p = self.parents[i] as usize;
                let k = beta[[r, self.groups[i]]].exp();
                let o = self.offsets[i];
                let gpi = gp[i];
                gp[p] += gpi;
                gg[p] += gpi * (o * k).transpose();
                gbeta[[r, self.groups[i]]] += gpi.dot(&(global[p] * o)) * k;
                let ggi = gg[i];
                gg[p] += ggi * ri.transpose();
                put_mat(&mut grow, i, &(global[p].transpose() * ggi));
            }
            grot.row_mut(r).assign(&ndarray::ArrayView1::from(&grow));
        }
        vec![grot, gbeta]
    }
}

/// Per-row camera intrinsics for [`project_tape`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub cx: f64,
    pub cy: f64,
    pub bbox_size: f64,
    pub focal: f64,
    pub image_w: f64,
    pub image_h: f64,
}

impl Intrinsics {
    pub fn from_camera(cam: &super::CameraModel) -> Self {
        Self {
            cx: cam.bbox.cx,
            cy: cam.bbox.cy,
            bbox_size: cam.bbox.size,
            focal: cam.focal,
            image_w: cam.image_w,
            image_h: cam.image_h,
        }
    }
}

struct Project {
    intr: Vec<Intrinsics>,
}

struct Rig {
    t: Vector3<f64>,
    off: [f64; 2],
    k: f64,
}

impl Project {
    fn rig(&self, r: usize, cam: &[f64]) -> Rig {
        let c = &self.intr[r];
        let (s, tx, ty) = (cam[0], cam[1], cam[2]);
        let sb = s * c.bbox_size;
        let off = [2.0 * (c.cx - c.image_w / 2.0) / sb, 2.0 * (c.cy - c.image_h / 2.0) / sb];
        Rig { t: Vector3::new(tx + off[0], ty + off[1], 2.0 * c.focal / sb), off, k: 2.0 * c.focal / c.bbox_size }
    }
}

/// Projects body-frame points `rows × 3K` with per-row weak cameras
/// `rows × 3` (`[s, t_x, t_y]`) to crop-normalized coordinates `rows × 2K`.
pub fn project_tape(tape: &mut Tape, points: Var, cam: Var, intr: &[Intrinsics]) -> Result<Var> {
    let (n, m) = tape.shape(points);
    if m % 3 != 0 {
        return Err(Error::shape("project_tape points", "multiple of 3", m));
    }
    if tape.shape(cam) != (n, 3) {
        return Err(Error::shape("project_tape camera", format!("({n}, 3)"), format!("{:?}", tape.shape(cam))));
    }
    if intr.len() != n {
        return Err(Error::shape("project_tape intrinsics", n, intr.len()));
    }
    let kpts = m / 3;
    let op = Project { intr: intr.to_vec() };
    let (pv, cv) = (tape.value(points), tape.value(cam));
    let mut out = Array2::zeros((n, 2 * kpts));
    let mut behind = Vec::new();
    for r in 0..n {
        let c = &intr[r];
        let sb = cv[[r, 0]] * c.bbox_size;
        if !(sb >= MIN_SCALE_BOX) {
            return Err(Error::DegenerateCamera(format!("row {r}: s·b = {sb:e}")));
        }
        let camrow = cv.row(r);
        let rig = op.rig(r, camrow.as_slice().expect("standard layout"));
        // u = (2/b)·(f·X/Z + W/2 − c_x)
        let (ex, ey) = (c.image_w / 2.0 - c.cx, c.image_h / 2.0 - c.cy);
        for i in 0..kpts {
            let p = Vector3::new(pv[[r, 3 * i]], pv[[r, 3 * i + 1]], pv[[r, 3 * i + 2]]) + rig.t;
            if !(p.z > MIN_DEPTH) {
                behind.push(r * kpts + i);
                continue;
            }
            out[[r, 2 * i]] = rig.k * p.x / p.z + 2.0 * ex / c.bbox_size;
            out[[r, 2 * i + 1]] = rig.k * p.y / p.z + 2.0 * ey / c.bbox_size;
        }
    }
    if !behind.is_empty() {
        return Err(Error::BehindCamera(behind));
    }
    Ok(tape.custom(&[points, cam], out, Box::new(op)))
}

impl CustomOp for Project {
    fn name(&self) -> &'static str {
        "project"
    }

    fn backward(&self, inputs: &[&Array2<f64>], _output: &Array2<f64>, g: &Array2<f64>) -> Vec<Array2<f64>> {
        let (pts, cam) = (inputs[0], inputs[1]);
        let kpts = pts.ncols() / 3;
        let mut gpts = Array2::zeros(pts.dim());
        let mut gcam = Array2::zeros(cam.dim());
        for r in 0..pts.nrows() {
            let camrow = cam.row(r);
            let rig = self.rig(r, camrow.as_slice().expect("standard layout"));
            let s = cam[[r, 0]];
            for i in 0..kpts {
                let p = Vector3::new(pts[[r, 3 * i]], pts[[r, 3 * i + 1]], pts[[r, 3 * i + 2]]) + rig.t;
                let (gu, gv) = (g[[r, 2 * i]], g[[r, 2 * i + 1]]);
                let gx = gu * rig.k / p.z;
                let gy = gv * rig.k / p.z;
                let gz = -(gu * rig.k * p.x + gv * rig.k * p.y) / (p.z * p.z);
                gpts[[r, 3 * i]] += gx;
                gpts[[r, 3 * i + 1]] += gy;
                gpts[[r, 3 * i + 2]] += gz;
                gcam[[r, 1]] += gx;
                gcam[[r, 2]] += gy;
                gcam[[r, 0]] -= (gx * rig.off[0] + gy * rig.off[1] + gz * rig.t.z) / s;
            }
        }
        vec![gpts, gcam]
    }
}

/// Linear map taking `rows × 3J` joints to `rows × 3P` dense body points
/// by right multiplication.
pub fn dense_map(tree: &KinematicTree) -> Array2<f64> {
    let j = tree.num_joints();
    let bones = tree.bones();
    let p = j + bones.len() * DENSE_FRACTIONS.len();
    let mut m = Array2::zeros((3 * j, 3 * p));
    let mut set = |src: usize, dst: usize, w: f64| {
        for c in 0..3 {
            m[[3 * src + c, 3 * dst + c]] += w;
        }
    };
    for i in 0..j {
        set(i, i, 1.0);
    }
    for (b, (pa, ch)) in bones.into_iter().enumerate() {
        for (f, &t) in DENSE_FRACTIONS.iter().enumerate() {
            let dst = j + DENSE_FRACTIONS.len() * b + f;
            set(pa, dst, 1.0 - t);
            set(ch, dst, t);
        }
    }
    m
}

/// Converts crop-normalized coordinates to crop pixels.
pub fn normalized_to_crop(u: f64) -> f64 {
    (u + 1.0) * CROP_SIZE as f64 / 2.0
}

/// Converts crop pixels to crop-normalized coordinates.
pub fn crop_to_normalized(px: f64) -> f64 {
    px * 2.0 / CROP_SIZE as f64 - 1.0
}

/// Raw-seed orthonormality penalty per row: mean over joints of
/// `(‖a1‖²−1)² + (‖a2‖²−1)² + (a1·a2)²`, returned as `rows × 1`.
pub fn orth_tape(tape: &mut Tape, seeds: Var) -> Result<Var> {
    let (n, m) = tape.shape(seeds);
    if m % ROT6D != 0 {
        return Err(Error::shape("orth_tape columns", "multiple of 6", m));
    }
    let joints = m / ROT6D;
    let x = tape.value(seeds);
    let mut out = Array2::zeros((n, 1));
    for r in 0..n {
        let mut acc = 0.0;
        for j in 0..joints {
            let a1 = Vector3::new(x[[r, 6 * j]], x[[r, 6 * j + 1]], x[[r, 6 * j + 2]]);
            let a2 = Vector3::new(x[[r, 6 * j + 3]], x[[r, 6 * j + 4]], x[[r, 6 * j + 5]]);
            acc += (a1.norm_squared() - 1.0).powi(2) + (a2.norm_squared() - 1.0).powi(2) + a1.dot(&a2).powi(2);
        }
        out[[r, 0]] = acc / joints as f64;
    }
    Ok(tape.custom(&[seeds], out, Box::new(Orth)))
}

struct Orth;

impl CustomOp for Orth {
    fn name(&self) -> &'static str {
        "orth"
    }

    fn backward(&self, inputs: &[&Array2<f64>], _output: &Array2<f64>, g: &Array2<f64>) -> Vec<Array2<f64>> {
        let x = inputs[0];
        let joints = x.ncols() / ROT6D;
        let mut gx = Array2::zeros(x.dim());
        for r in 0..x.nrows() {
            let w = g[[r, 0]] / joints as f64;
            for j in 0..joints {
                let a1 = Vector3::new(x[[r, 6 * j]], x[[r, 6 * j + 1]], x[[r, 6 * j + 2]]);
                let a2 = Vector3::new(x[[r, 6 * j + 3]], x[[r, 6 * j + 4]], x[[r, 6 * j + 5]]);
                let d = a1.dot(&a2);
                let g1 = a1 * (4.0 * (a1.norm_squared() - 1.0)) + a2 * (2.0 * d);
                let g2 = a2 * (4.0 * (a2.norm_squared() - 1.0)) + a1 * (2.0 * d);
                for k in 0..3 {
                    gx[[r, 6 * j + k]] = w * g1[k];
                    gx[[r, 6 * j + 3 + k]] = w * g2[k];
                }
            }
        }
        vec![gx]
    }
}

/// Rejects seeds the decoder cannot handle, without a tape.
pub fn seeds_are_decodable(seeds: &[f64]) -> bool {
    seeds.chunks(ROT6D).all(|s| {
        let a1 = v3(&s[..3]);
        let a2 = v3(&s[3..]);
        let (n1, n2) = (a1.norm(), a2.norm());
        n1 >= MIN_SEED_NORM && n2 >= MIN_SEED_NORM && (a1.dot(&a2) / (n1 * n2)).abs() <= MAX_SEED_COS
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{dense_body_points, forward_kinematics, BBox, CameraModel, WeakCamera, NUM_JOINTS};
    use crate::diffcore::{grad_check, ParamStore};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(lo..hi)).collect()
    }

    fn weighted<F>(w: &[f64], f: F) -> impl Fn(&[f64]) -> Result<(f64, Vec<f64>)> + '_
    where
        F: Fn(&mut Tape, Var) -> Result<Var> + 'static,
    {
        move |x: &[f64]| {
            let mut tape = Tape::new();
            let mut store = ParamStore::new();
            let v = tape.row(x);
            let y = f(&mut tape, v)?;
            let wv = tape.row(w);
            let prod = tape.mul(y, wv)?;
            let s = tape.sum(prod);
            let val = tape.scalar(s);
            let g = tape.backward(s, crate::diffcore::unit_seed(), &mut store)?;
            Ok((val, g.get(v).into_raw_vec_and_offset().0))
        }
    }

    #[test]
    fn rot6d_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let x = rand_vec(&mut rng, 12, -1.5, 1.5);
            let w = rand_vec(&mut rng, 18, -1.0, 1.0);
            let err = grad_check(weighted(&w, rot6d_tape), &x, 1e-6).unwrap();
            assert!(err < 1e-6, "{err}");
        }
    }

    #[test]
    fn rot6d_matches_scalar_decoder() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_vec(&mut rng, 12, -1.0, 1.0);
        let mut tape = Tape::new();
        let v = tape.row(&x);
        let y = rot6d_tape(&mut tape, v).unwrap();
        for j in 0..2 {
            let m = crate::body::rot6d_to_matrix(&x[6 * j..6 * j + 6]).unwrap();
            let row = tape.value(y).row(0).to_vec();
            assert_eq!(mat_at(&row, j), m);
        }
    }

    #[test]
    fn degenerate_seeds_error_on_tape() {
        let mut tape = Tape::new();
        let v = tape.row(&[0.0; 6]);
        assert!(matches!(rot6d_tape(&mut tape, v), Err(Error::DegenerateRotation(_))));
        assert!(!seeds_are_decodable(&[0.0; 6]));
        assert!(seeds_are_decodable(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
    }

    fn fk_from_flat(tree: KinematicTree) -> impl Fn(&mut Tape, Var) -> Result<Var> + 'static {
        move |t: &mut Tape, v: Var| {
            let seeds = t.gather_cols(v, &(0..96).collect::<Vec<_>>())?;
            let beta = t.gather_cols(v, &(96..100).collect::<Vec<_>>())?;
            let rot = rot6d_tape(t, seeds)?;
            fk_tape(t, rot, beta, &tree)
        }
    }

    #[test]
    fn fk_gradient_matches_finite_differences() {
        let tree = KinematicTree::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..3 {
            let mut x = rand_vec(&mut rng, 96, -1.0, 1.0);
            x.extend(rand_vec(&mut rng, 4, -0.3, 0.3));
            let w = rand_vec(&mut rng, 48, -1.0, 1.0);
            let err = grad_check(weighted(&w, fk_from_flat(tree.clone())), &x, 1e-6).unwrap();
            assert!(err < 1e-6, "{err}");
        }
    }

    #[test]
    fn fk_tape_matches_scalar_kinematics() {
        let tree = KinematicTree::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut x = rand_vec(&mut rng, 96, -1.0, 1.0);
        let beta = rand_vec(&mut rng, 4, -0.3, 0.3);
        x.extend(&beta);
        let mut tape = Tape::new();
        let v = tape.row(&x);
        let y = fk_from_flat(tree.clone())(&mut tape, v).unwrap();
        let joints = forward_kinematics(&x[..96], &beta, &tree).unwrap();
        for (i, p) in joints.iter().enumerate() {
            for c in 0..3 {
                assert!((tape.value(y)[[0, 3 * i + c]] - p[c]).abs() < 1e-12);
            }
        }
    }

    fn rig(rng: &mut ChaCha8Rng) -> CameraModel {
        CameraModel {
            weak: WeakCamera { s: rng.gen_range(0.7..1.0), tx: rng.gen_range(-0.1..0.1), ty: rng.gen_range(-0.1..0.1) },
            bbox: BBox {
                cx: rng.gen_range(300.0..700.0),
                cy: rng.gen_range(300.0..700.0),
                size: rng.gen_range(200.0..320.0),
            },
            focal: rng.gen_range(900.0..1500.0),
            image_w: 1024.0,
            image_h: 1024.0,
        }
    }

    #[test]
    fn projection_matches_camera_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cam = rig(&mut rng);
        let pts = rand_vec(&mut rng, 12, -0.8, 0.8);
        let mut tape = Tape::new();
        let p = tape.row(&pts);
        let c = tape.row(&[cam.weak.s, cam.weak.tx, cam.weak.ty]);
        let y = project_tape(&mut tape, p, c, &[Intrinsics::from_camera(&cam)]).unwrap();
        let v3s: Vec<_> = pts.chunks(3).map(v3).collect();
        let expect = cam.project_normalized(&v3s).unwrap();
        for (i, e) in expect.iter().enumerate() {
            assert!((tape.value(y)[[0, 2 * i]] - e[0]).abs() < 1e-12);
            assert!((tape.value(y)[[0, 2 * i + 1]] - e[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..5 {
            let cam = rig(&mut rng);
            let intr = Intrinsics::from_camera(&cam);
            let mut x = rand_vec(&mut rng, 15, -0.8, 0.8);
            x.extend([cam.weak.s, cam.weak.tx, cam.weak.ty]);
            let w = rand_vec(&mut rng, 10, -1.0, 1.0);
            let f = move |t: &mut Tape, v: Var| {
                let p = t.gather_cols(v, &(0..15).collect::<Vec<_>>())?;
                let c = t.gather_cols(v, &[15, 16, 17])?;
                project_tape(t, p, c, &[intr])
            };
            let err = grad_check(weighted(&w, f), &x, 1e-6).unwrap();
            assert!(err < 1e-6, "{err}");
        }
    }

    #[test]
    fn projection_rejects_points_behind_camera() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cam = rig(&mut rng);
        let t = cam.translation().unwrap();
        let mut tape = Tape::new();
        let p = tape.row(&[0.0, 0.0, 0.0, 0.0, 0.0, -t.z - 1.0]);
        let c = tape.row(&[cam.weak.s, cam.weak.tx, cam.weak.ty]);
        match project_tape(&mut tape, p, c, &[Intrinsics::from_camera(&cam)]) {
            Err(Error::BehindCamera(idx)) => assert_eq!(idx, vec![1]),
            other => panic!("{:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn orth_penalty_values_and_gradient() {
        let mut tape = Tape::new();
        let v = tape.row(&[2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let y = orth_tape(&mut tape, v).unwrap();
        assert_eq!(tape.scalar(y), 9.0 / 2.0);

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = rand_vec(&mut rng, 18, -1.5, 1.5);
        let err = grad_check(weighted(&[0.7], orth_tape), &x, 1e-6).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn dense_map_matches_dense_points() {
        let tree = KinematicTree::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let theta = rand_vec(&mut rng, 96, -1.0, 1.0);
        let joints = forward_kinematics(&theta, &[0.1, -0.1, 0.05, 0.0], &tree).unwrap();
        let flat: Vec<f64> = joints.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        let row = Array2::from_shape_vec((1, 3 * NUM_JOINTS), flat).unwrap();
        let dense = row.dot(&dense_map(&tree));
        for (i, q) in dense_body_points(&joints, &tree).iter().enumerate() {
            for c in 0..3 {
                assert!((dense[[0, 3 * i + c]] - q[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn crop_normalization_round_trip() {
        assert_eq!(normalized_to_crop(0.0), 128.0);
        assert_eq!(crop_to_normalized(256.0), 1.0);
        assert_eq!(normalized_to_crop(crop_to_normalized(37.5)), 37.5);
    }
}
