//! The full conditional pose model: condition network, shape/camera head,
//! pose flow and the differentiable body pipeline behind it.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::body::ops::{dense_map, fk_tape, normalized_to_crop, project_tape, rot6d_tape, Intrinsics};
use crate::body::{CameraModel, KinematicTree, NUM_JOINTS, NUM_SHAPE, POSE_DIM};
use crate::condition::{
    passes_detector_filter, ConditionConfig, ConditionFeatures, ConditionNet, HeadOutput, DETECTOR_FILTER_PX,
};
use crate::diffcore::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::flow::{FlowConfig, FlowModel, DEFAULT_ALPHA, DEFAULT_LAYERS};
use crate::heatmaps::{argmax_pose, classify_joints, GridSampler, JointStatus};
use crate::losses::{build_supervision_plan, SupervisionPlan};
use crate::masks::PersonMask;
use crate::synthdata::Scene;

const FLOW_PREFIX: &str = "flow";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub condition: ConditionConfig,
    pub flow_layers: usize,
    pub flow_hidden: usize,
    pub alpha: f64,
    /// Shift-only couplings (a NICE-style flow).
    pub volume_preserving: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            condition: ConditionConfig::default(),
            flow_layers: DEFAULT_LAYERS,
            flow_hidden: 64,
            alpha: DEFAULT_ALPHA,
            volume_preserving: false,
        }
    }
}

impl ModelConfig {
    pub fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            dim: POSE_DIM,
            cond_dim: self.condition.dim(),
            layers: self.flow_layers,
            hidden: self.flow_hidden,
            alpha: self.alpha,
            volume_preserving: self.volume_preserving,
        }
    }
}

/// 6D seeds of the identity rotation for every joint. The flow models
/// offsets from this pose, so a freshly initialized model's mode is the
/// rest pose.
pub fn identity_pose() -> Vec<f64> {
    (0..NUM_JOINTS).flat_map(|_| [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).collect()
}

/// Everything the model and losses need from one scene, without the dense
/// heatmaps.
#[derive(Debug, Clone)]
pub struct Example {
    pub seed: u64,
    pub features: ConditionFeatures,
    pub intrinsics: Intrinsics,
    pub camera: CameraModel,
    pub theta: Vec<f64>,
    pub beta: [f64; NUM_SHAPE],
    pub gt2d: Vec<[f64; 2]>,
    pub status: Vec<JointStatus>,
    pub occluded: Vec<bool>,
    pub plan: SupervisionPlan,
    /// Per joint; `None` when no cell reaches the retention threshold.
    pub samplers: Vec<Option<GridSampler>>,
    /// Present only when the scene has a usable mask.
    pub mask: Option<Arc<PersonMask>>,
    pub object_occluded: bool,
    pub passes_filter: bool,
}

impl Example {
    pub fn from_scene(scene: &Scene, tree: &KinematicTree) -> Result<Self> {
        let kps = argmax_pose(&scene.heatmap);
        let features = ConditionFeatures::new(scene.ctx, &kps, &scene.camera.bbox, scene.camera.focal)?;
        let status = classify_joints(&scene.heatmap, &scene.gt2d)?;
        let plan = build_supervision_plan(&status, tree);
        let samplers = (0..NUM_JOINTS).map(|k| GridSampler::new(scene.heatmap.grid(k)).ok()).collect();
        Ok(Self {
            seed: scene.seed,
            features,
            intrinsics: Intrinsics::from_camera(&scene.camera),
            camera: scene.camera,
            theta: scene.theta.clone(),
            beta: scene.beta,
            gt2d: scene.gt2d.clone(),
            status,
            occluded: scene.occluded.clone(),
            plan,
            samplers,
            mask: scene.mask_available.then(|| Arc::new(scene.mask.clone())),
            object_occluded: scene.mask.object_occluded,
            passes_filter: passes_detector_filter(&scene.gt2d, &kps, DETECTOR_FILTER_PX),
        })
    }
}

/// Pose pipeline nodes for a block of rows.
pub struct PoseNodes {
    /// `rows × 96` raw 6D seeds.
    pub seeds: Var,
    /// `rows × 48` pelvis-rooted joints in meters.
    pub joints: Var,
    /// `rows × 32` crop-normalized joint projections.
    pub proj: Var,
}

/// Mode (row 0) followed by `N` sampled hypotheses for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSet {
    /// `(1+N) × 96` 6D poses.
    pub poses: Array2<f64>,
    /// `(1+N) × 48` joints in meters.
    pub joints: Array2<f64>,
    /// `(1+N) × 228` dense body points in meters.
    pub dense: Array2<f64>,
    /// `(1+N) × 32` joint projections in crop pixels.
    pub proj: Array2<f64>,
    pub beta: [f64; NUM_SHAPE],
    /// Weak camera `[s, t_x, t_y]`.
    pub camera: [f64; 3],
}

impl HypothesisSet {
    pub fn num_samples(&self) -> usize {
        self.poses.nrows() - 1
    }

    /// Points `k` of row `r` of a `rows × 3K` block.
    pub fn points(block: &Array2<f64>, r: usize) -> Vec<[f64; 3]> {
        block.row(r).as_slice().expect("standard layout").chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
    }

    pub fn projection(&self, r: usize) -> Vec<[f64; 2]> {
        self.proj.row(r).as_slice().expect("standard layout").chunks(2).map(|c| [c[0], c[1]]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct AmbiModel {
    pub config: ModelConfig,
    pub cond_net: ConditionNet,
    pub flow: FlowModel,
    pub tree: KinematicTree,
    dense: Array2<f64>,
}

impl AmbiModel {
    pub fn init<R: Rng>(store: &mut ParamStore, config: ModelConfig, rng: &mut R) -> Result<Self> {
        let cond_net = ConditionNet::init(store, config.condition, rng)?;
        let flow = FlowModel::init(store, FLOW_PREFIX, config.flow_config(), rng)?;
        let tree = KinematicTree::standard();
        let dense = dense_map(&tree);
        Ok(Self { config, cond_net, flow, tree, dense })
    }

    pub fn bind(store: &ParamStore, config: ModelConfig) -> Result<Self> {
        let cond_net = ConditionNet::bind(store, config.condition)?;
        let flow = FlowModel::bind(store, FLOW_PREFIX, config.flow_config())?;
        let tree = KinematicTree::standard();
        let dense = dense_map(&tree);
        Ok(Self { config, cond_net, flow, tree, dense })
    }

    pub fn condition_tape(&self, tape: &mut Tape, store: &ParamStore, examples: &[&Example]) -> Result<Var> {
        let feats: Vec<ConditionFeatures> = examples.iter().map(|e| e.features.clone()).collect();
        self.cond_net.condition_tape(tape, store, &feats)
    }

    pub fn head_tape(&self, tape: &mut Tape, store: &ParamStore, cond: Var) -> Result<HeadOutput> {
        self.cond_net.head_tape(tape, store, cond)
    }

    /// Flow output rows → seeds → rotations → joints → projections.
    pub fn pose_pipeline(
        &self,
        tape: &mut Tape,
        flow_out: Var,
        beta: Var,
        cam: Var,
        intrinsics: &[Intrinsics],
    ) -> Result<PoseNodes> {
        let id = tape.row(&identity_pose());
        let seeds = tape.add_bias(flow_out, id)?;
        let rot = rot6d_tape(tape, seeds)?;
        let joints = fk_tape(tape, rot, beta, &self.tree)?;
        let proj = project_tape(tape, joints, cam, intrinsics)?;
        Ok(PoseNodes { seeds, joints, proj })
    }

    /// Mean flow NLL of ground-truth poses, offset by the identity pose.
    pub fn nll_tape(&self, tape: &mut Tape, store: &ParamStore, examples: &[&Example], cond: Var) -> Result<Var> {
        let id = identity_pose();
        let x = Array2::from_shape_fn((examples.len(), POSE_DIM), |(i, j)| examples[i].theta[j] - id[j]);
        let xv = tape.leaf(x);
        self.flow.nll_tape(tape, store, xv, cond)
    }

    pub fn dense_tape(&self, tape: &mut Tape, joints: Var) -> Result<Var> {
        let m = tape.leaf(self.dense.clone());
        tape.matmul(joints, m)
    }

    /// Mode and `n` samples for one example. Latents come from `rng`.
    pub fn hypotheses<R: Rng>(&self, store: &ParamStore, ex: &Example, n: usize, rng: &mut R) -> Result<HypothesisSet> {
        let z =
            Array2::from_shape_fn((n + 1, POSE_DIM), |(r, _)| if r == 0 { 0.0 } else { rng.sample(StandardNormal) });
        self.hypotheses_from_latents(store, ex, z)
    }

    pub fn hypotheses_from_latents(&self, store: &ParamStore, ex: &Example, z: Array2<f64>) -> Result<HypothesisSet> {
        if z.ncols() != POSE_DIM {
            return Err(Error::shape("latent columns", POSE_DIM, z.ncols()));
        }
        let rows = z.nrows();
        let mut tape = Tape::new();
        let cond = self.condition_tape(&mut tape, store, &[ex])?;
        let head = self.head_tape(&mut tape, store, cond)?;
        let idx = vec![0; rows];
        let cond_rows = tape.gather_rows(cond, &idx)?;
        let beta_rows = tape.gather_rows(head.beta, &idx)?;
        let cam_rows = tape.gather_rows(head.cam, &idx)?;
        let zv = tape.leaf(z);
        let pass = self.flow.forward_tape(&mut tape, store, zv, cond_rows)?;
        let intr = vec![ex.intrinsics; rows];
        let nodes = self.pose_pipeline(&mut tape, pass.output, beta_rows, cam_rows, &intr)?;
        let dense = self.dense_tape(&mut tape, nodes.joints)?;
        let beta = tape.value(head.beta);
        let cam = tape.value(head.cam);
        Ok(HypothesisSet {
            poses: tape.value(nodes.seeds).clone(),
            joints: tape.value(nodes.joints).clone(),
            dense: tape.value(dense).clone(),
            proj: tape.value(nodes.proj).mapv(normalized_to_crop),
            beta: [beta[[0, 0]], beta[[0, 1]], beta[[0, 2]], beta[[0, 3]]],
            camera: [cam[[0, 0]], cam[[0, 1]], cam[[0, 2]]],
        })
    }
}

/// 6D seeds of one hypothesis row.
pub fn seeds_of(poses: &Array2<f64>, r: usize) -> Vec<f64> {
    poses.row(r).to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{dense_body_points, forward_kinematics};
    use crate::synthdata::{generate_scene, SceneConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fresh_model_mode_is_rest_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let model = AmbiModel::init(&mut store, ModelConfig::default(), &mut rng).unwrap();
        let tree = KinematicTree::standard();
        let scene = generate_scene(3, &SceneConfig::default(), &tree).unwrap();
        let ex = Example::from_scene(&scene, &tree).unwrap();
        let h = model.hypotheses(&store, &ex, 4, &mut rng).unwrap();
        assert_eq!(h.num_samples(), 4);
        assert_eq!(h.poses.row(0).to_vec(), identity_pose());
        let rest = forward_kinematics(&identity_pose(), &[0.0; 4], &tree).unwrap();
        for (k, p) in HypothesisSet::points(&h.joints, 0).iter().enumerate() {
            assert!((p[0] - rest[k].x).abs() < 1e-12 && (p[1] - rest[k].y).abs() < 1e-12);
        }
        assert_ne!(h.poses.row(1), h.poses.row(2));
    }

    #[test]
    fn hypotheses_match_scalar_pipeline() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let model = AmbiModel::init(&mut store, ModelConfig::default(), &mut rng).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).mapv_inplace(|v| v + 0.02 * rng.gen_range(-1.0..1.0));
        }
        let tree = KinematicTree::standard();
        let scene = generate_scene(5, &SceneConfig::default(), &tree).unwrap();
        let ex = Example::from_scene(&scene, &tree).unwrap();
        let h = model.hypotheses(&store, &ex, 3, &mut rng).unwrap();
        for r in 0..4 {
            let theta = seeds_of(&h.poses, r);
            let joints = forward_kinematics(&theta, &h.beta, &tree).unwrap();
            let dense = dense_body_points(&joints, &tree);
            for (k, p) in HypothesisSet::points(&h.dense, r).iter().enumerate() {
                assert!((p[0] - dense[k].x).abs() < 1e-12 && (p[2] - dense[k].z).abs() < 1e-12);
            }
            let cam = CameraModel {
                weak: crate::body::WeakCamera { s: h.camera[0], tx: h.camera[1], ty: h.camera[2] },
                ..scene.camera
            };
            let proj = cam.project(&joints).unwrap();
            for (a, b) in proj.iter().zip(h.projection(r)) {
                assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
            }
        }
    }
}
