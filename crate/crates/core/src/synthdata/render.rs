use nalgebra::Vector3;

use crate::body::{KinematicTree, CROP_SIZE};
use crate::heatmaps::{cell_center, GRID_CELLS, GRID_H, GRID_W};
use crate::masks::PersonMask;

const CELL_W: f64 = CROP_SIZE as f64 / GRID_W as f64;
const CELL_H: f64 = CROP_SIZE as f64 / GRID_H as f64;

/// Capsule radius in meters of the bone ending at each joint.
pub const BONE_RADII: [f64; 16] =
    [0.0, 0.12, 0.12, 0.07, 0.09, 0.075, 0.055, 0.09, 0.075, 0.055, 0.06, 0.045, 0.04, 0.06, 0.045, 0.04];
pub const HEAD_RADIUS: f64 = 0.10;
/// Added to every capsule radius so that a point on a bone axis always
/// lands in a set pixel under floor-to-pixel lookup.
const RASTER_MARGIN_PX: f64 = 0.75;

/// Isotropic Gaussian in grid-cell units centered at a crop point, rescaled
/// so its largest cell equals `amplitude`.
pub fn gaussian_blob(center: [f64; 2], sigma_cells: f64, amplitude: f64) -> Vec<f64> {
    let mut g: Vec<f64> = (0..GRID_CELLS)
        .map(|i| {
            let c = cell_center(i % GRID_W, i / GRID_W);
            let dx = (c[0] - center[0]) / CELL_W;
            let dy = (c[1] - center[1]) / CELL_H;
            (-(dx * dx + dy * dy) / (2.0 * sigma_cells * sigma_cells)).exp()
        })
        .collect();
    let peak = g.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        g.iter_mut().for_each(|v| *v *= amplitude / peak);
    }
    g
}

/// Axis-aligned rectangle `[x0, x1) × [y0, y1)` on integer crop pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (abx, aby) = (b[0] - a[0], b[1] - a[1]);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 { (((p[0] - a[0]) * abx + (p[1] - a[1]) * aby) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (qx, qy) = (a[0] + t * abx - p[0], a[1] + t * aby - p[1]);
    (qx * qx + qy * qy).sqrt()
}

fn fill_capsule(mask: &mut PersonMask, a: [f64; 2], b: [f64; 2], radius: f64) {
    let n = CROP_SIZE as f64;
    let lo = |u: f64, v: f64| ((u.min(v) - radius - 1.0).floor().max(0.0)) as usize;
    let hi = |u: f64, v: f64| ((u.max(v) + radius + 1.0).ceil().min(n)).max(0.0) as usize;
    let (x0, x1, y0, y1) = (lo(a[0], b[0]), hi(a[0], b[0]), lo(a[1], b[1]), hi(a[1], b[1]));
    for y in y0..y1 {
        for x in x0..x1 {
            if segment_distance([x as f64 + 0.5, y as f64 + 0.5], a, b) <= radius {
                mask.set(x, y, true);
            }
        }
    }
}

/// Silhouette of capsules along every bone plus a head disc.
/// `joints2d` are crop pixels, `depths` camera-frame depths of the joints and
/// `px_per_meter_at_unit_depth` is `f · 256 / b`.
pub fn body_silhouette(
    joints2d: &[[f64; 2]],
    depths: &[f64],
    px_per_meter_at_unit_depth: f64,
    tree: &KinematicTree,
) -> PersonMask {
    let mut mask = PersonMask::empty();
    for (p, c) in tree.bones() {
        let z = 0.5 * (depths[p] + depths[c]);
        let r = BONE_RADII[c] * px_per_meter_at_unit_depth / z + RASTER_MARGIN_PX;
        fill_capsule(&mut mask, joints2d[p], joints2d[c], r);
    }
    let head = 3;
    let r = HEAD_RADIUS * px_per_meter_at_unit_depth / depths[head] + RASTER_MARGIN_PX;
    fill_capsule(&mut mask, joints2d[head], joints2d[head], r);
    mask
}

pub fn fill_rect(mask: &mut PersonMask, rect: PixelRect, value: bool) {
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            mask.set(x, y, value);
        }
    }
}

/// Camera-frame depths of body-frame points under a translation.
pub fn depths(points: &[Vector3<f64>], t: &Vector3<f64>) -> Vec<f64> {
    points.iter().map(|p| p.z + t.z).collect()
}
