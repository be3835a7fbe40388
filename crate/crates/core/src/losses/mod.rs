//! Training objectives and their weighted combination.

mod mask;
mod mmd;
mod plan;

pub use mask::{loss_mask, mask_pairs, MaskJoint};
pub use mmd::{imq_kernel, mmd, mmd_tape, JointTargets, KernelSpec};
pub use plan::{build_supervision_plan, JointPlan, PlanReason, SupervisionPlan, TargetSource};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub beta: f64,
    pub l2d: f64,
    pub nll: f64,
    pub orth: f64,
    pub mmd: f64,
    pub mask: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { beta: 5e-4, l2d: 1e-2, nll: 1e-1, orth: 1e-1, mmd: 5e-2, mask: 1e-1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.beta, self.l2d, self.nll, self.orth, self.mmd, self.mask];
        if all.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be non-negative: {self:?}")));
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            beta: self.beta * k,
            l2d: self.l2d * k,
            nll: self.nll * k,
            orth: self.orth * k,
            mmd: self.mmd * k,
            mask: self.mask * k,
        }
    }
}

/// How the 2D reprojection loss treats random hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum L2dVariant {
    #[default]
    ModeOnly,
    AllSamples,
    VisibleSamples,
}

/// Unweighted loss values of one iteration. `l2d_samples` carries the
/// random-hypothesis reprojection term of the ablation variants and is
/// weighted separately.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub beta: f64,
    pub l2d: f64,
    pub l2d_samples: f64,
    pub nll: f64,
    pub orth: f64,
    pub mmd: f64,
    pub mask: f64,
}

impl LossTerms {
    pub const NAMES: [&'static str; 7] = ["beta", "l2d", "l2d_samples", "nll", "orth", "mmd", "mask"];

    pub fn values(&self) -> [f64; 7] {
        [self.beta, self.l2d, self.l2d_samples, self.nll, self.orth, self.mmd, self.mask]
    }
}

/// Weighted sum of the terms.
pub fn total_loss(t: &LossTerms, w: &LossWeights, l2d_sample_weight: f64) -> f64 {
    w.beta * t.beta
        + w.l2d * t.l2d
        + l2d_sample_weight * t.l2d_samples
        + w.nll * t.nll
        + w.orth * t.orth
        + w.mmd * t.mmd
        + w.mask * t.mask
}

/// Mean over included joints of `|dx| + |dy|`; zero when nothing is included.
pub fn loss_2d(pred: &[[f64; 2]], gt: &[[f64; 2]], include: Option<&[bool]>) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (k, (p, g)) in pred.iter().zip(gt).enumerate() {
        if include.is_none_or(|m| m[k]) {
            total += (p[0] - g[0]).abs() + (p[1] - g[1]).abs();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

pub fn loss_beta(beta: &[f64], beta_gt: &[f64]) -> f64 {
    beta.iter().zip(beta_gt).map(|(a, b)| (a - b).powi(2)).sum()
}

/// Mean over joints of `(‖a1‖²−1)² + (‖a2‖²−1)² + (a1·a2)²`.
pub fn loss_orth(seeds: &[f64]) -> f64 {
    let joints = seeds.len() / 6;
    seeds
        .chunks(6)
        .map(|s| {
            let n1: f64 = s[..3].iter().map(|v| v * v).sum();
            let n2: f64 = s[3..].iter().map(|v| v * v).sum();
            let d: f64 = (0..3).map(|i| s[i] * s[3 + i]).sum();
            (n1 - 1.0).powi(2) + (n2 - 1.0).powi(2) + d * d
        })
        .sum::<f64>()
        / joints as f64
}

/// `Σ w ⊙ |x − target|` as a `1×1` node.
pub fn weighted_l1_tape(tape: &mut Tape, x: Var, target: Array2<f64>, weight: Array2<f64>) -> Result<Var> {
    let t = tape.leaf(target);
    let w = tape.leaf(weight);
    let d = tape.sub(x, t)?;
    let a = tape.abs(d);
    let m = tape.mul(a, w)?;
    Ok(tape.sum(m))
}

/// Batch mean of `‖x − target‖²` over rows, as a `1×1` node.
pub fn mean_squared_tape(tape: &mut Tape, x: Var, target: Array2<f64>) -> Result<Var> {
    let rows = tape.shape(x).0.max(1);
    let t = tape.leaf(target);
    let d = tape.sub(x, t)?;
    let s = tape.squared_norm(d);
    Ok(tape.scale(s, 1.0 / rows as f64))
}
