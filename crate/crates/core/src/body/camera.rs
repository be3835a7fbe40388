use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side of the square crop fed to the model, in pixels.
pub const CROP_SIZE: usize = 256;
const HALF_CROP: f64 = CROP_SIZE as f64 / 2.0;
const MIN_SCALE_BOX: f64 = 1e-6;
const MIN_DEPTH: f64 = 1e-6;

/// Weak-perspective camera: scale `s` and translation in crop-normalized units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakCamera {
    pub s: f64,
    pub tx: f64,
    pub ty: f64,
}

impl WeakCamera {
    /// Crop-pixel projection `128 + 128·s·(x + t)`, depth ignored.
    pub fn project(&self, p: &Vector3<f64>) -> [f64; 2] {
        [HALF_CROP + HALF_CROP * self.s * (p.x + self.tx), HALF_CROP + HALF_CROP * self.s * (p.y + self.ty)]
    }
}

/// Square person box in full-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub size: f64,
}

impl BBox {
    pub fn crop_to_image(&self, q: [f64; 2]) -> [f64; 2] {
        let k = self.size / CROP_SIZE as f64;
        [(q[0] - HALF_CROP) * k + self.cx, (q[1] - HALF_CROP) * k + self.cy]
    }

    pub fn image_to_crop(&self, q: [f64; 2]) -> [f64; 2] {
        let k = CROP_SIZE as f64 / self.size;
        [(q[0] - self.cx) * k + HALF_CROP, (q[1] - self.cy) * k + HALF_CROP]
    }
}

/// Box feature `[c_x, c_y, b] / f`.
pub fn bbox_feature(bbox: &BBox, focal: f64) -> [f64; 3] {
    [bbox.cx / focal, bbox.cy / focal, bbox.size / focal]
}

/// Perspective translation equivalent to a weak-perspective camera on a box.
///
/// `t_z = 2f/(s·b)`; the lateral terms shift the box center back to the
/// full-image principal point.
pub fn weak_to_perspective(
    weak: &WeakCamera,
    bbox: &BBox,
    focal: f64,
    image_w: f64,
    image_h: f64,
) -> Result<Vector3<f64>> {
    let sb = weak.s * bbox.size;
    if !(sb >= MIN_SCALE_BOX) {
        return Err(Error::DegenerateCamera(format!("s·b = {sb:e}")));
    }
    if !(focal > 0.0) {
        return Err(Error::DegenerateCamera(format!("focal {focal}")));
    }
    Ok(Vector3::new(
        weak.tx + 2.0 * (bbox.cx - image_w / 2.0) / sb,
        weak.ty + 2.0 * (bbox.cy - image_h / 2.0) / sb,
        2.0 * focal / sb,
    ))
}

/// Full-image pinhole camera derived from a weak-perspective crop camera.
///
/// Camera axes: x right, y down, z forward. The principal point is the
/// full-image center; crop coordinates follow from the box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub weak: WeakCamera,
    pub bbox: BBox,
    pub focal: f64,
    pub image_w: f64,
    pub image_h: f64,
}

impl CameraModel {
    pub fn translation(&self) -> Result<Vector3<f64>> {
        weak_to_perspective(&self.weak, &self.bbox, self.focal, self.image_w, self.image_h)
    }

    pub fn bbox_feature(&self) -> [f64; 3] {
        bbox_feature(&self.bbox, self.focal)
    }

    /// Projects body-frame points into crop pixels.
    pub fn project(&self, points: &[Vector3<f64>]) -> Result<Vec<[f64; 2]>> {
        let t = self.translation()?;
        let behind: Vec<usize> =
            points.iter().enumerate().filter(|(_, p)| !(p.z + t.z > MIN_DEPTH)).map(|(i, _)| i).collect();
        if !behind.is_empty() {
            return Err(Error::BehindCamera(behind));
        }
        let (px, py) = (self.image_w / 2.0, self.image_h / 2.0);
        Ok(points
            .iter()
            .map(|p| {
                let c = p + t;
                let q = [self.focal * c.x / c.z + px, self.focal * c.y / c.z + py];
                self.bbox.image_to_crop(q)
            })
            .collect())
    }

    /// Projection in crop-normalized coordinates, `[-1, 1]` across the crop.
    pub fn project_normalized(&self, points: &[Vector3<f64>]) -> Result<Vec<[f64; 2]>> {
        Ok(self
            .project(points)?
            .into_iter()
            .map(|[u, v]| [(u - HALF_CROP) / HALF_CROP, (v - HALF_CROP) / HALF_CROP])
            .collect())
    }

    /// Body-frame point on the ray through a crop pixel at the given camera depth.
    pub fn unproject(&self, crop_px: [f64; 2], depth: f64) -> Result<Vector3<f64>> {
        if !(depth > MIN_DEPTH) {
            return Err(Error::InvalidArgument(format!("unproject depth {depth}")));
        }
        let t = self.translation()?;
        let q = self.bbox.crop_to_image(crop_px);
        let x = (q[0] - self.image_w / 2.0) * depth / self.focal;
        let y = (q[1] - self.image_h / 2.0) * depth / self.focal;
        Ok(Vector3::new(x, y, depth) - t)
    }
}
