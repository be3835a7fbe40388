//! Synthetic scenes with known poses, multimodal heatmaps and person masks.

mod io;
mod prior;
mod render;

pub use io::{generate_dataset, read_dataset, write_dataset, DatasetManifest, DATASET_MAGIC, DATASET_VERSION};
pub use prior::sample_pose;
pub use render::{body_silhouette, gaussian_blob, PixelRect, BONE_RADII, HEAD_RADIUS};

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::body::{
    dense_body_points, forward_kinematics, BBox, CameraModel, KinematicTree, WeakCamera, CROP_SIZE, NUM_JOINTS,
    NUM_SHAPE,
};
use crate::condition::CTX_DIM;
use crate::error::{Error, Result};
use crate::heatmaps::{Heatmap, GRID_CELLS};
use crate::masks::{detect_object_occlusion, PersonMask, Provenance, OCCLUSION_TAU};

pub const IMAGE_SIZE: f64 = 1024.0;
const OCCLUDER_SLOTS: usize = 2;
const SLOT_DIM: usize = 6;
const CTX_NOISE_DIMS: usize = CTX_DIM - OCCLUDER_SLOTS * SLOT_DIM;
const MIN_MODE_SEPARATION_PX: f64 = 30.0;
const CROP_MARGIN_PX: f64 = 2.0;

/// Knobs of the ambiguity injected into generated scenes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// Probability that a scene contains at least one occluder.
    pub occlusion_prob: f64,
    /// Probability of a second occluder given the first.
    pub second_occluder_prob: f64,
    /// Probability that an occluder is another person rather than an object.
    pub person_occluder_prob: f64,
    /// Upper bound of the uniform background noise added to empty cells.
    pub heatmap_noise: f64,
    /// Probability that an occluded joint gets a two-mode heatmap.
    pub bimodal_prob: f64,
    /// Probability that a visible joint gets a low-confidence peak.
    pub uncertain_visible_prob: f64,
    /// Probability that the heatmaps belong to a displaced detection.
    pub wrong_detection_prob: f64,
    pub mask_available_prob: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            occlusion_prob: 0.5,
            second_occluder_prob: 0.3,
            person_occluder_prob: 0.6,
            heatmap_noise: 0.02,
            bimodal_prob: 0.5,
            uncertain_visible_prob: 0.1,
            wrong_detection_prob: 0.02,
            mask_available_prob: 0.8,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("occlusion_prob", self.occlusion_prob),
            ("second_occluder_prob", self.second_occluder_prob),
            ("person_occluder_prob", self.person_occluder_prob),
            ("bimodal_prob", self.bimodal_prob),
            ("uncertain_visible_prob", self.uncertain_visible_prob),
            ("wrong_detection_prob", self.wrong_detection_prob),
            ("mask_available_prob", self.mask_available_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if !(self.heatmap_noise >= 0.0 && self.heatmap_noise.is_finite()) {
            return Err(Error::Config(format!("heatmap_noise = {} must be non-negative", self.heatmap_noise)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OccluderKind {
    Object,
    Person,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occluder {
    pub rect: PixelRect,
    pub kind: OccluderKind,
}

impl Occluder {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let r = &self.rect;
        p[0] >= r.x0 as f64 && p[0] < r.x1 as f64 && p[1] >= r.y0 as f64 && p[1] < r.y1 as f64
    }
}

/// Shape of the heatmap rendered for one joint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlobKind {
    /// Joint outside the crop; the grid holds only background noise.
    Absent,
    Visible,
    UncertainVisible,
    Bimodal,
    Diffuse,
}

impl BlobKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            BlobKind::Absent => 0,
            BlobKind::Visible => 1,
            BlobKind::UncertainVisible => 2,
            BlobKind::Bimodal => 3,
            BlobKind::Diffuse => 4,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => BlobKind::Absent,
            1 => BlobKind::Visible,
            2 => BlobKind::UncertainVisible,
            3 => BlobKind::Bimodal,
            4 => BlobKind::Diffuse,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub seed: u64,
    pub theta: Vec<f64>,
    pub beta: [f64; NUM_SHAPE],
    pub camera: CameraModel,
    pub occluders: Vec<Occluder>,
    /// Ground-truth joint projections in crop pixels.
    pub gt2d: Vec<[f64; 2]>,
    /// Joint lies under an occluder.
    pub occluded: Vec<bool>,
    pub blobs: Vec<BlobKind>,
    /// Center of each rendered mode, crop pixels.
    pub modes: Vec<Vec<[f64; 2]>>,
    pub heatmap: Heatmap,
    pub mask: PersonMask,
    pub mask_available: bool,
    pub wrong_detection: bool,
    pub ctx: [f64; CTX_DIM],
}

impl Scene {
    pub fn joints3d(&self, tree: &KinematicTree) -> Result<Vec<Vector3<f64>>> {
        forward_kinematics(&self.theta, &self.beta, tree)
    }

    pub fn dense3d(&self, tree: &KinematicTree) -> Result<Vec<Vector3<f64>>> {
        Ok(dense_body_points(&self.joints3d(tree)?, tree))
    }

    /// Dense body points in crop pixels.
    pub fn dense2d(&self, tree: &KinematicTree) -> Result<Vec<[f64; 2]>> {
        self.camera.project(&self.dense3d(tree)?)
    }

    pub fn object_occluded(&self) -> bool {
        self.mask.object_occluded
    }
}

fn in_crop(p: [f64; 2], margin: f64) -> bool {
    let n = CROP_SIZE as f64;
    p[0] >= margin && p[0] < n - margin && p[1] >= margin && p[1] < n - margin
}

fn place_occluder<R: Rng>(rng: &mut R, anchor: [f64; 2], config: &SceneConfig) -> Occluder {
    let n = CROP_SIZE as f64;
    let cx = anchor[0] + rng.gen_range(-10.0..10.0);
    let cy = anchor[1] + rng.gen_range(-10.0..10.0);
    let hw = rng.gen_range(14.0..34.0);
    let hh = rng.gen_range(14.0..34.0);
    let kind = if rng.gen_bool(config.person_occluder_prob) { OccluderKind::Person } else { OccluderKind::Object };
    let clip = |v: f64| v.round().clamp(0.0, n) as usize;
    let rect = PixelRect { x0: clip(cx - hw), y0: clip(cy - hh), x1: clip(cx + hw), y1: clip(cy + hh) };
    Occluder { rect, kind }
}

/// Reflection of `p` across the nearest edge of `rect`, pushed outward so
/// that the two modes are at least the minimum separation apart.
fn mirror_across_edge(p: [f64; 2], rect: &PixelRect) -> [f64; 2] {
    let candidates = [
        (p[0] - rect.x0 as f64, [-1.0, 0.0]),
        (rect.x1 as f64 - p[0], [1.0, 0.0]),
        (p[1] - rect.y0 as f64, [0.0, -1.0]),
        (rect.y1 as f64 - p[1], [0.0, 1.0]),
    ];
    let (d, dir) = candidates.into_iter().min_by(|a, b| a.0.total_cmp(&b.0)).expect("four edges");
    let shift = (2.0 * d).max(MIN_MODE_SEPARATION_PX);
    [p[0] + dir[0] * shift, p[1] + dir[1] * shift]
}

fn max_into(acc: &mut [f64], blob: &[f64]) {
    acc.iter_mut().zip(blob).for_each(|(a, b)| *a = a.max(*b));
}

/// Deterministic scene from a seed.
pub fn generate_scene(seed: u64, config: &SceneConfig, tree: &KinematicTree) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = sample_pose(&mut rng);
    let shape_dist = Normal::new(0.0, 0.08).expect("positive sd");
    let mut beta = [0.0; NUM_SHAPE];
    beta.iter_mut().for_each(|b| *b = shape_dist.sample(&mut rng));

    let focal = rng.gen_range(900.0..1500.0);
    let bbox =
        BBox { cx: rng.gen_range(300.0..724.0), cy: rng.gen_range(300.0..724.0), size: rng.gen_range(200.0..320.0) };
    let t_dist = Normal::new(0.0, 0.05).expect("positive sd");
    let weak = WeakCamera { s: rng.gen_range(0.8..1.0), tx: t_dist.sample(&mut rng), ty: t_dist.sample(&mut rng) };
    let camera = CameraModel { weak, bbox, focal, image_w: IMAGE_SIZE, image_h: IMAGE_SIZE };

    let joints = forward_kinematics(&theta, &beta, tree)?;
    let gt2d = camera.project(&joints)?;
    let inside: Vec<bool> = gt2d.iter().map(|p| in_crop(*p, 0.0)).collect();

    let mut occluders = Vec::new();
    if rng.gen_bool(config.occlusion_prob) {
        let count = if rng.gen_bool(config.second_occluder_prob) { 2 } else { 1 };
        let anchors: Vec<usize> = tree.highly_articulated.iter().copied().filter(|&k| in_crop(gt2d[k], 4.0)).collect();
        for _ in 0..count {
            if anchors.is_empty() {
                break;
            }
            let k = anchors[rng.gen_range(0..anchors.len())];
            occluders.push(place_occluder(&mut rng, gt2d[k], config));
        }
    }
    let occluded: Vec<bool> =
        gt2d.iter().zip(&inside).map(|(p, &ins)| ins && occluders.iter().any(|o| o.contains(*p))).collect();

    let wrong_detection = rng.gen_bool(config.wrong_detection_prob);
    let offset = if wrong_detection {
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let r = rng.gen_range(40.0..80.0);
        [r * angle.cos(), r * angle.sin()]
    } else {
        [0.0, 0.0]
    };

    let mut data = Vec::with_capacity(NUM_JOINTS * GRID_CELLS);
    let mut blobs = Vec::with_capacity(NUM_JOINTS);
    let mut modes = Vec::with_capacity(NUM_JOINTS);
    for k in 0..NUM_JOINTS {
        let center = [gt2d[k][0] + offset[0], gt2d[k][1] + offset[1]];
        let mut grid = vec![0.0; GRID_CELLS];
        let (kind, centers) = if !inside[k] {
            (BlobKind::Absent, vec![])
        } else if !occluded[k] {
            let (kind, amp) = if rng.gen_bool(config.uncertain_visible_prob) {
                (BlobKind::UncertainVisible, rng.gen_range(0.52..0.68))
            } else {
                (BlobKind::Visible, rng.gen_range(0.75..0.98))
            };
            grid = gaussian_blob(center, 2.0, amp);
            (kind, vec![center])
        } else {
            let rect = occluders.iter().find(|o| o.contains(gt2d[k])).expect("occluded joint has an occluder").rect;
            let mirror = mirror_across_edge(center, &rect);
            if rng.gen_bool(config.bimodal_prob) && in_crop(mirror, CROP_MARGIN_PX) {
                let a1 = rng.gen_range(0.2..0.45);
                let a2 = rng.gen_range(0.2..0.45);
                grid = gaussian_blob(center, 1.5, a1);
                max_into(&mut grid, &gaussian_blob(mirror, 1.5, a2));
                (BlobKind::Bimodal, vec![center, mirror])
            } else {
                let jitter = Normal::new(0.0, 6.0).expect("positive sd");
                let c = [center[0] + jitter.sample(&mut rng), center[1] + jitter.sample(&mut rng)];
                let sigma = rng.gen_range(3.0..5.0);
                grid = gaussian_blob(c, sigma, rng.gen_range(0.15..0.45));
                (BlobKind::Diffuse, vec![c])
            }
        };
        for v in grid.iter_mut() {
            if *v < 0.02 {
                *v += rng.gen::<f64>() * config.heatmap_noise;
            }
        }
        data.extend(grid.iter().map(|v| *v as f32));
        blobs.push(kind);
        modes.push(centers);
    }
    let heatmap = Heatmap::from_data(NUM_JOINTS, data)?;

    let t = camera.translation()?;
    let depths = render::depths(&joints, &t);
    let px_per_meter = focal * CROP_SIZE as f64 / bbox.size;
    let mut mask = body_silhouette(&gt2d, &depths, px_per_meter, tree);
    for o in occluders.iter().filter(|o| o.kind == OccluderKind::Person) {
        render::fill_rect(&mut mask, o.rect, true);
        mask.provenance = Provenance::Union;
    }
    for o in occluders.iter().filter(|o| o.kind == OccluderKind::Object) {
        render::fill_rect(&mut mask, o.rect, false);
    }
    let dense2d = camera.project(&dense_body_points(&joints, tree))?;
    mask.object_occluded = match detect_object_occlusion(&dense2d, &mask, OCCLUSION_TAU) {
        Ok(v) => v,
        Err(Error::InvalidArgument(_)) => false,
        Err(e) => return Err(e),
    };
    let mask_available = rng.gen_bool(config.mask_available_prob);

    let mut ctx = [0.0; CTX_DIM];
    for (slot, o) in occluders.iter().take(OCCLUDER_SLOTS).enumerate() {
        let r = &o.rect;
        let half = CROP_SIZE as f64 / 2.0;
        let v = [
            1.0,
            (r.x0 + r.x1) as f64 / 2.0 / half - 1.0,
            (r.y0 + r.y1) as f64 / 2.0 / half - 1.0,
            (r.x1 - r.x0) as f64 / 2.0 / half,
            (r.y1 - r.y0) as f64 / 2.0 / half,
            if o.kind == OccluderKind::Person { 1.0 } else { 0.0 },
        ];
        ctx[slot * SLOT_DIM..(slot + 1) * SLOT_DIM].copy_from_slice(&v);
    }
    let noise = Normal::new(0.0, 1.0).expect("unit sd");
    for v in ctx[CTX_DIM - CTX_NOISE_DIMS..].iter_mut() {
        *v = noise.sample(&mut rng);
    }

    Ok(Scene {
        seed,
        theta,
        beta,
        camera,
        occluders,
        gt2d,
        occluded,
        blobs,
        modes,
        heatmap,
        mask,
        mask_available,
        wrong_detection,
        ctx,
    })
}
