//! Simplified kinematic body: a 16-joint tree, 6D rotations, grouped bone
//! scaling, dense body points and the crop camera.

mod camera;
mod kinematics;
pub mod ops;
mod rotation;

pub use camera::{bbox_feature, weak_to_perspective, BBox, CameraModel, WeakCamera, CROP_SIZE};
pub use kinematics::{bone_lengths, dense_body_points, forward_kinematics, DENSE_FRACTIONS, NUM_DENSE_POINTS};
pub use rotation::{matrix_to_rot6d, rot6d_to_matrix};

use serde::{Deserialize, Serialize};

pub const NUM_JOINTS: usize = 16;
pub const ROT6D: usize = 6;
/// Dimension of the pose vector: one 6D rotation per joint.
pub const POSE_DIM: usize = NUM_JOINTS * ROT6D;
pub const NUM_SHAPE: usize = 4;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis",
    "spine",
    "neck",
    "head",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
];

pub const PARENTS: [i32; NUM_JOINTS] = [-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 2, 10, 11, 2, 13, 14];

/// Elbows, wrists, knees and ankles.
pub const HIGHLY_ARTICULATED: [usize; 8] = [5, 6, 8, 9, 11, 12, 14, 15];

/// Bone-length groups scaled by the shape coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoneGroup {
    Torso = 0,
    Arms = 1,
    Legs = 2,
    Head = 3,
}

/// Rest-pose offsets from each joint's parent, in meters, camera frame
/// (x right, y down, z forward). The subject faces the camera.
pub const REST_OFFSETS: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.0, 0.0],
    [0.0, -0.25, 0.0],
    [0.0, -0.25, 0.0],
    [0.0, -0.15, 0.0],
    [0.10, 0.05, 0.0],
    [0.0, 0.42, 0.0],
    [0.0, 0.40, 0.0],
    [-0.10, 0.05, 0.0],
    [0.0, 0.42, 0.0],
    [0.0, 0.40, 0.0],
    [0.18, 0.02, 0.0],
    [0.0, 0.28, 0.0],
    [0.0, 0.25, 0.0],
    [-0.18, 0.02, 0.0],
    [0.0, 0.28, 0.0],
    [0.0, 0.25, 0.0],
];

pub const BONE_GROUPS: [BoneGroup; NUM_JOINTS] = [
    BoneGroup::Torso,
    BoneGroup::Torso,
    BoneGroup::Torso,
    BoneGroup::Head,
    BoneGroup::Torso,
    BoneGroup::Legs,
    BoneGroup::Legs,
    BoneGroup::Torso,
    BoneGroup::Legs,
    BoneGroup::Legs,
    BoneGroup::Torso,
    BoneGroup::Arms,
    BoneGroup::Arms,
    BoneGroup::Torso,
    BoneGroup::Arms,
    BoneGroup::Arms,
];

/// Self-describing skeleton, serialized into dataset manifests and
/// checkpoint metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicTree {
    pub names: Vec<String>,
    pub parents: Vec<i32>,
    pub offsets: Vec<[f64; 3]>,
    pub groups: Vec<BoneGroup>,
    pub highly_articulated: Vec<usize>,
}

impl Default for KinematicTree {
    fn default() -> Self {
        Self::standard()
    }
}

impl KinematicTree {
    pub fn standard() -> Self {
        Self {
            names: JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
            parents: PARENTS.to_vec(),
            offsets: REST_OFFSETS.to_vec(),
            groups: BONE_GROUPS.to_vec(),
            highly_articulated: HIGHLY_ARTICULATED.to_vec(),
        }
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        usize::try_from(self.parents[j]).ok()
    }

    pub fn is_highly_articulated(&self, j: usize) -> bool {
        self.highly_articulated.contains(&j)
    }

    /// `(parent, child)` pairs for every non-root joint, in child order.
    pub fn bones(&self) -> Vec<(usize, usize)> {
        (0..self.num_joints()).filter_map(|j| self.parent(j).map(|p| (p, j))).collect()
    }
}
