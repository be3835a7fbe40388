//! Keypoint heatmaps: max-likelihood decoding, confidence rules and
//! multinomial sampling.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::body::CROP_SIZE;
use crate::error::{Error, Result};

pub const GRID_W: usize = 48;
pub const GRID_H: usize = 64;
pub const GRID_CELLS: usize = GRID_W * GRID_H;

/// Cells below this value are dropped before sampling.
pub const DISCARD_THRESHOLD: f64 = 0.05;
/// Joints whose peak is below this are uncertain.
pub const UNCERTAIN_THRESHOLD: f64 = 0.7;
/// Joints whose peak reaches this are visible.
pub const VISIBLE_THRESHOLD: f64 = 0.5;

const CELL_W: f64 = CROP_SIZE as f64 / GRID_W as f64;
const CELL_H: f64 = CROP_SIZE as f64 / GRID_H as f64;

fn widen(v: f32) -> f64 {
    v.to_string().parse().unwrap_or(v as f64)
}

/// Crop-pixel center of grid cell `(x, y)`.
pub fn cell_center(x: usize, y: usize) -> [f64; 2] {
    [(x as f64 + 0.5) * CELL_W, (y as f64 + 0.5) * CELL_H]
}

/// Grid cell containing a crop pixel, if inside the crop.
pub fn cell_of(p: [f64; 2]) -> Option<(usize, usize)> {
    let (x, y) = ((p[0] / CELL_W).floor(), (p[1] / CELL_H).floor());
    (x >= 0.0 && y >= 0.0 && (x as usize) < GRID_W && (y as usize) < GRID_H).then_some((x as usize, y as usize))
}

/// `K` row-major `48 × 64` confidence grids (index `y·48 + x`).
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    data: Vec<f32>,
    joints: usize,
}

impl Heatmap {
    pub fn zeros(joints: usize) -> Self {
        Self { data: vec![0.0; joints * GRID_CELLS], joints }
    }

    pub fn from_data(joints: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != joints * GRID_CELLS {
            return Err(Error::shape("heatmap data", joints * GRID_CELLS, data.len()));
        }
        if let Some(bad) = data.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("heatmap value {bad} is not non-negative")));
        }
        Ok(Self { data, joints })
    }

    pub fn num_joints(&self) -> usize {
        self.joints
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn grid(&self, k: usize) -> &[f32] {
        &self.data[k * GRID_CELLS..(k + 1) * GRID_CELLS]
    }

    pub fn grid_mut(&mut self, k: usize) -> &mut [f32] {
        &mut self.data[k * GRID_CELLS..(k + 1) * GRID_CELLS]
    }

    /// Peak value of joint `k`, widened through its shortest decimal form so
    /// a stored `0.7f32` compares equal to `0.7`.
    pub fn max_confidence(&self, k: usize) -> f64 {
        widen(self.grid(k).iter().copied().fold(0.0f32, f32::max))
    }
}

/// Decoded keypoint of one joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub position: [f64; 2],
    pub confidence: f64,
    pub valid: bool,
}

/// Highest-likelihood 2D pose in crop pixels. Ties go to the lowest linear
/// index; all-zero grids yield an invalid keypoint at the crop center.
pub fn argmax_pose(hm: &Heatmap) -> Vec<Keypoint> {
    (0..hm.num_joints())
        .map(|k| {
            let mut best = (0usize, 0.0f32);
            for (i, &v) in hm.grid(k).iter().enumerate() {
                if v > best.1 {
                    best = (i, v);
                }
            }
            if best.1 <= 0.0 {
                let c = CROP_SIZE as f64 / 2.0;
                return Keypoint { position: [c, c], confidence: 0.0, valid: false };
            }
            Keypoint { position: cell_center(best.0 % GRID_W, best.0 / GRID_W), confidence: widen(best.1), valid: true }
        })
        .collect()
}

/// One heatmap draw: position in `[-1, 1]²` and the value of its cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSample {
    pub position: [f64; 2],
    pub confidence: f64,
}

/// Reusable multinomial over the retained cells of one grid.
#[derive(Debug, Clone)]
pub struct GridSampler {
    cells: Vec<usize>,
    values: Vec<f64>,
    index: WeightedIndex<f64>,
}

impl GridSampler {
    pub fn new(grid: &[f32]) -> Result<Self> {
        if grid.len() != GRID_CELLS {
            return Err(Error::shape("heatmap grid", GRID_CELLS, grid.len()));
        }
        let (cells, values): (Vec<usize>, Vec<f64>) = grid
            .iter()
            .enumerate()
            .filter(|(_, &v)| v >= DISCARD_THRESHOLD as f32)
            .map(|(i, &v)| (i, v as f64))
            .unzip();
        if cells.is_empty() {
            return Err(Error::DegenerateHeatmap);
        }
        let index = WeightedIndex::new(&values).map_err(|_| Error::DegenerateHeatmap)?;
        Ok(Self { cells, values, index })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> HeatmapSample {
        let i = self.index.sample(rng);
        let cell = self.cells[i];
        let (x, y) = ((cell % GRID_W) as f64, (cell / GRID_W) as f64);
        let px = (x + rng.gen::<f64>()) * CELL_W;
        let py = (y + rng.gen::<f64>()) * CELL_H;
        let half = CROP_SIZE as f64 / 2.0;
        HeatmapSample { position: [(px - half) / half, (py - half) / half], confidence: self.values[i] }
    }
}

/// `n` i.i.d. draws from the normalized mass of cells at or above the
/// discard threshold, jittered uniformly within the drawn cell.
pub fn sample_heatmap<R: Rng + ?Sized>(grid: &[f32], n: usize, rng: &mut R) -> Result<Vec<HeatmapSample>> {
    let sampler = GridSampler::new(grid)?;
    Ok((0..n).map(|_| sampler.draw(rng)).collect())
}

/// Per-joint confidence flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointStatus {
    pub visible: bool,
    pub uncertain: bool,
    pub inside_crop: bool,
}

impl JointStatus {
    pub fn from_confidence(max_conf: f64, gt: [f64; 2]) -> Self {
        let crop = CROP_SIZE as f64;
        Self {
            visible: max_conf >= VISIBLE_THRESHOLD,
            uncertain: max_conf < UNCERTAIN_THRESHOLD,
            inside_crop: (0.0..crop).contains(&gt[0]) && (0.0..crop).contains(&gt[1]),
        }
    }
}

pub fn classify_joints(hm: &Heatmap, gt2d: &[[f64; 2]]) -> Result<Vec<JointStatus>> {
    if gt2d.len() != hm.num_joints() {
        return Err(Error::shape("classify_joints keypoints", hm.num_joints(), gt2d.len()));
    }
    Ok(gt2d.iter().enumerate().map(|(k, &g)| JointStatus::from_confidence(hm.max_confidence(k), g)).collect())
}
