use serde::{Deserialize, Serialize};

use crate::body::KinematicTree;
use crate::heatmaps::JointStatus;

/// Where the MMD targets of a joint come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSource {
    HeatmapSamples,
    DuplicatedGroundTruth,
    Excluded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanReason {
    UncertainArticulated,
    Confident,
    VisibleRigid,
    OutsideCrop,
    InvisibleRigid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointPlan {
    pub source: TargetSource,
    pub reason: PlanReason,
}

/// Per-joint gating of the distribution loss.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupervisionPlan {
    pub joints: Vec<JointPlan>,
}

impl SupervisionPlan {
    pub fn included(&self) -> impl Iterator<Item = (usize, TargetSource)> + '_ {
        self.joints.iter().enumerate().filter(|(_, p)| p.source != TargetSource::Excluded).map(|(k, p)| (k, p.source))
    }
}

pub fn build_supervision_plan(status: &[JointStatus], tree: &KinematicTree) -> SupervisionPlan {
    let joints = status
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let articulated = tree.is_highly_articulated(k);
            let (source, reason) = if !s.inside_crop {
                (TargetSource::Excluded, PlanReason::OutsideCrop)
            } else if articulated && s.uncertain {
                (TargetSource::HeatmapSamples, PlanReason::UncertainArticulated)
            } else if articulated {
                (TargetSource::DuplicatedGroundTruth, PlanReason::Confident)
            } else if s.visible {
                (TargetSource::DuplicatedGroundTruth, PlanReason::VisibleRigid)
            } else {
                (TargetSource::Excluded, PlanReason::InvisibleRigid)
            };
            JointPlan { source, reason }
        })
        .collect();
    SupervisionPlan { joints }
}
