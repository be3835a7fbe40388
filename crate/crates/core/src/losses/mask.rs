use crate::body::ops::normalized_to_crop;
use crate::masks::PersonMask;

fn to_crop(p: [f64; 2]) -> [f64; 2] {
    [normalized_to_crop(p[0]), normalized_to_crop(p[1])]
}

/// Flow samples of one invisible joint and the heatmap samples of the same
/// joint, both crop-normalized.
#[derive(Debug, Clone, Copy)]
pub struct MaskJoint<'a> {
    pub samples: &'a [[f64; 2]],
    pub heatmap: &'a [[f64; 2]],
}

/// For every flow sample outside the mask, the nearest heatmap sample that
/// lies inside it. Empty when no heatmap sample survives the mask filter.
pub fn mask_pairs(joint: MaskJoint<'_>, mask: &PersonMask) -> Vec<(usize, [f64; 2])> {
    let kept: Vec<[f64; 2]> = joint.heatmap.iter().copied().filter(|h| mask.inside(to_crop(*h))).collect();
    if kept.is_empty() {
        return Vec::new();
    }
    joint
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| !mask.inside(to_crop(**s)))
        .map(|(i, s)| {
            let nearest = kept
                .iter()
                .copied()
                .min_by(|a, b| {
                    let da = (a[0] - s[0]).powi(2) + (a[1] - s[1]).powi(2);
                    let db = (b[0] - s[0]).powi(2) + (b[1] - s[1]).powi(2);
                    da.total_cmp(&db)
                })
                .expect("kept is non-empty");
            (i, nearest)
        })
        .collect()
}

/// Mean l1 distance of outside-mask flow samples to their nearest in-mask
/// heatmap sample, over all contributing samples of all given joints.
pub fn loss_mask(joints: &[MaskJoint<'_>], mask: &PersonMask, object_occluded: bool) -> f64 {
    if object_occluded {
        return 0.0;
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for j in joints {
        for (i, t) in mask_pairs(*j, mask) {
            let s = j.samples[i];
            total += (s[0] - t[0]).abs() + (s[1] - t[1]).abs();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}
