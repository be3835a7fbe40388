//! Flow condition `[c_ctx, c_P, c_B]` and the deterministic shape/camera head.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::body::ops::crop_to_normalized;
use crate::body::{bbox_feature, BBox, NUM_JOINTS, NUM_SHAPE};
use crate::diffcore::{forward_mlp, Activation, Mlp, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::heatmaps::Keypoint;

pub const CTX_DIM: usize = 16;
pub const POSE_INPUT_DIM: usize = NUM_JOINTS * 3;
pub const BBOX_DIM: usize = 3;
/// `β` followed by the raw camera outputs `[s_raw, t_x, t_y]`.
pub const HEAD_OUTPUT_DIM: usize = NUM_SHAPE + 3;
/// Mean per-joint 2D distance (crop px) above which an example's detection
/// is considered to belong to another person.
pub const DETECTOR_FILTER_PX: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditionConfig {
    pub use_pose: bool,
    pub use_bbox: bool,
    /// Width of the pose embedding `c_P` (the reference design uses 256).
    pub pose_embed: usize,
    pub head_hidden: usize,
}

impl Default for ConditionConfig {
    fn default() -> Self {
        Self { use_pose: true, use_bbox: true, pose_embed: 32, head_hidden: 64 }
    }
}

impl ConditionConfig {
    pub fn dim(&self) -> usize {
        CTX_DIM + if self.use_pose { self.pose_embed } else { 0 } + if self.use_bbox { BBOX_DIM } else { 0 }
    }

    /// Column layout of the condition, recorded with checkpoints.
    pub fn layout(&self) -> Vec<(&'static str, usize)> {
        let mut out = vec![("ctx", CTX_DIM)];
        if self.use_pose {
            out.push(("pose", self.pose_embed));
        }
        if self.use_bbox {
            out.push(("bbox", BBOX_DIM));
        }
        out
    }
}

/// Raw per-example inputs of the condition network.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionFeatures {
    pub ctx: [f64; CTX_DIM],
    /// Per joint `[u, v, confidence]`, `u, v` crop-normalized; zeros for
    /// invalid detections.
    pub pose: [f64; POSE_INPUT_DIM],
    pub bbox: [f64; BBOX_DIM],
}

impl ConditionFeatures {
    pub fn new(ctx: [f64; CTX_DIM], keypoints: &[Keypoint], bbox: &BBox, focal: f64) -> Result<Self> {
        if !(focal > 0.0) {
            return Err(Error::InvalidArgument(format!("focal length {focal}")));
        }
        if keypoints.len() != NUM_JOINTS {
            return Err(Error::shape("condition keypoints", NUM_JOINTS, keypoints.len()));
        }
        let mut pose = [0.0; POSE_INPUT_DIM];
        for (k, kp) in keypoints.iter().enumerate().filter(|(_, kp)| kp.valid) {
            pose[3 * k] = crop_to_normalized(kp.position[0]);
            pose[3 * k + 1] = crop_to_normalized(kp.position[1]);
            pose[3 * k + 2] = kp.confidence;
        }
        Ok(Self { ctx, pose, bbox: bbox_feature(bbox, focal) })
    }
}

/// True when the detected pose plausibly belongs to the target person.
pub fn passes_detector_filter(gt2d: &[[f64; 2]], keypoints: &[Keypoint], threshold: f64) -> bool {
    let d: Vec<f64> = gt2d
        .iter()
        .zip(keypoints)
        .filter(|(_, kp)| kp.valid)
        .map(|(g, kp)| ((g[0] - kp.position[0]).powi(2) + (g[1] - kp.position[1]).powi(2)).sqrt())
        .collect();
    !d.is_empty() && d.iter().sum::<f64>() / (d.len() as f64) <= threshold
}

/// Pose embedding and regression head.
#[derive(Debug, Clone)]
pub struct ConditionNet {
    pub config: ConditionConfig,
    embed: Option<Mlp>,
    head: Mlp,
}

/// Shape and camera estimates on a tape: `β: B×4`, `cam: B×3` with `s > 0`.
pub struct HeadOutput {
    pub beta: Var,
    pub cam: Var,
}

impl ConditionNet {
    pub fn init<R: Rng>(store: &mut ParamStore, config: ConditionConfig, rng: &mut R) -> Result<Self> {
        let embed = if config.use_pose {
            let dims = [POSE_INPUT_DIM, config.pose_embed, config.pose_embed];
            Some(Mlp::init(store, "embed", &dims, false, rng)?)
        } else {
            None
        };
        let h = config.head_hidden;
        let head = Mlp::init(store, "head", &[config.dim(), h, h, HEAD_OUTPUT_DIM], true, rng)?;
        Ok(Self { config, embed, head })
    }

    pub fn bind(store: &ParamStore, config: ConditionConfig) -> Result<Self> {
        let embed = if config.use_pose { Some(Mlp::bind(store, "embed", 2)?) } else { None };
        let head = Mlp::bind(store, "head", 3)?;
        if head.input_dim(store) != config.dim() {
            return Err(Error::shape("head input", config.dim(), head.input_dim(store)));
        }
        Ok(Self { config, embed, head })
    }

    /// Condition rows `B × dim` from per-example features.
    pub fn condition_tape(&self, tape: &mut Tape, store: &ParamStore, feats: &[ConditionFeatures]) -> Result<Var> {
        let b = feats.len();
        let ctx = Array2::from_shape_fn((b, CTX_DIM), |(i, j)| feats[i].ctx[j]);
        let mut parts = vec![tape.leaf(ctx)];
        if let Some(embed) = &self.embed {
            let pose = Array2::from_shape_fn((b, POSE_INPUT_DIM), |(i, j)| feats[i].pose[j]);
            let x = tape.leaf(pose);
            parts.push(embed.forward(tape, store, x)?);
        }
        if self.config.use_bbox {
            let bbox = Array2::from_shape_fn((b, BBOX_DIM), |(i, j)| feats[i].bbox[j]);
            parts.push(tape.leaf(bbox));
        }
        tape.concat_cols(&parts)
    }

    pub fn head_tape(&self, tape: &mut Tape, store: &ParamStore, cond: Var) -> Result<HeadOutput> {
        let out = forward_mlp(tape, store, cond, &self.head.layers, Activation::Relu)?;
        let beta = tape.gather_cols(out, &[0, 1, 2, 3])?;
        let s_raw = tape.gather_cols(out, &[4])?;
        let s = tape.softplus(s_raw);
        let t = tape.gather_cols(out, &[5, 6])?;
        let cam = tape.concat_cols(&[s, t])?;
        Ok(HeadOutput { beta, cam })
    }

    /// Condition values without recording gradients.
    pub fn condition(&self, store: &ParamStore, feats: &[ConditionFeatures]) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let c = self.condition_tape(&mut tape, store, feats)?;
        Ok(tape.value(c).clone())
    }

    /// Shape and camera `(B×4, B×3)` for condition rows.
    pub fn regress(&self, store: &ParamStore, cond: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let mut tape = Tape::new();
        let c = tape.leaf(cond.clone());
        let h = self.head_tape(&mut tape, store, c)?;
        Ok((tape.value(h.beta).clone(), tape.value(h.cam).clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check, unit_seed};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn features(rng: &mut ChaCha8Rng) -> ConditionFeatures {
        let mut ctx = [0.0; CTX_DIM];
        ctx.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let kps: Vec<Keypoint> = (0..NUM_JOINTS)
            .map(|_| Keypoint {
                position: [rng.gen_range(0.0..256.0), rng.gen_range(0.0..256.0)],
                confidence: rng.gen_range(0.0..1.0),
                valid: true,
            })
            .collect();
        ConditionFeatures::new(ctx, &kps, &BBox { cx: 400.0, cy: 500.0, size: 250.0 }, 1200.0).unwrap()
    }

    #[test]
    fn bbox_feature_is_exact() {
        let kps = vec![Keypoint { position: [0.0, 0.0], confidence: 0.0, valid: false }; NUM_JOINTS];
        let f =
            ConditionFeatures::new([0.0; CTX_DIM], &kps, &BBox { cx: 128.0, cy: 128.0, size: 256.0 }, 1000.0).unwrap();
        assert_eq!(f.bbox, [0.128, 0.128, 0.256]);
        assert!(f.pose.iter().all(|v| *v == 0.0));
        assert!(ConditionFeatures::new([0.0; CTX_DIM], &kps, &BBox { cx: 1.0, cy: 1.0, size: 1.0 }, 0.0).is_err());
    }

    #[test]
    fn zero_embedding_and_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let net = ConditionNet::init(&mut store, ConditionConfig::default(), &mut rng).unwrap();
        for id in store.ids().filter(|id| store.name(*id).starts_with("embed.1")).collect::<Vec<_>>() {
            store.value_mut(id).fill(0.0);
        }
        let f = features(&mut rng);
        let c = net.condition(&store, std::slice::from_ref(&f)).unwrap();
        assert_eq!(c.ncols(), 51);
        assert!(c.slice(ndarray::s![0, CTX_DIM..CTX_DIM + 32]).iter().all(|v| *v == 0.0));
        let (beta, cam) = net.regress(&store, &c).unwrap();
        assert!(beta.iter().all(|v| *v == 0.0));
        assert!((cam[[0, 0]] - 2f64.ln()).abs() < 1e-15);
        assert_eq!((cam[[0, 1]], cam[[0, 2]]), (0.0, 0.0));
    }

    #[test]
    fn condition_is_deterministic() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        let na = ConditionNet::init(&mut a, ConditionConfig::default(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let nb = ConditionNet::init(&mut b, ConditionConfig::default(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let f = features(&mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(na.condition(&a, std::slice::from_ref(&f)).unwrap(), nb.condition(&b, &[f]).unwrap());
    }

    #[test]
    fn toggles_change_dimension() {
        let cfg = ConditionConfig { use_pose: false, use_bbox: false, ..Default::default() };
        assert_eq!(cfg.dim(), CTX_DIM);
        let mut store = ParamStore::new();
        let net = ConditionNet::init(&mut store, cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let c = net.condition(&store, &[features(&mut ChaCha8Rng::seed_from_u64(1))]).unwrap();
        assert_eq!(c.dim(), (1, CTX_DIM));
        assert!(ConditionNet::bind(&store, ConditionConfig::default()).is_err());
    }

    #[test]
    fn head_gradient_reaches_condition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let net = ConditionNet::init(&mut store, ConditionConfig::default(), &mut rng).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).mapv_inplace(|v| v + 0.1 * rng.gen_range(-1.0..1.0));
        }
        let x: Vec<f64> = (0..51).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = |v: &[f64]| {
            let mut s = store.clone();
            let mut tape = Tape::new();
            let c = tape.row(v);
            let h = net.head_tape(&mut tape, &s, c)?;
            let out = tape.concat_cols(&[h.beta, h.cam])?;
            let wv = tape.row(&w);
            let p = tape.mul(out, wv)?;
            let y = tape.sum(p);
            let val = tape.scalar(y);
            let g = tape.backward(y, unit_seed(), &mut s)?;
            Ok((val, g.get(c).into_raw_vec_and_offset().0))
        };
        assert!(grad_check(f, &x, 1e-6).unwrap() < 1e-4);
    }

    #[test]
    fn detector_filter() {
        let gt = vec![[100.0, 100.0]; NUM_JOINTS];
        let near: Vec<Keypoint> =
            gt.iter().map(|g| Keypoint { position: [g[0] + 3.0, g[1] + 4.0], confidence: 0.9, valid: true }).collect();
        assert!(passes_detector_filter(&gt, &near, DETECTOR_FILTER_PX));
        let far: Vec<Keypoint> =
            gt.iter().map(|g| Keypoint { position: [g[0] + 40.0, g[1]], confidence: 0.9, valid: true }).collect();
        assert!(!passes_detector_filter(&gt, &far, DETECTOR_FILTER_PX));
    }
}
