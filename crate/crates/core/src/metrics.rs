//! Evaluation protocol: accuracy of the mode and of the best hypothesis,
//! 2D consistency, 3D diversity and mask plausibility.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body::NUM_JOINTS;
use crate::diffcore::ParamStore;
use crate::error::{Error, Result};
use crate::masks::{distance_transform, PersonMask};
use crate::model::{AmbiModel, Example, HypothesisSet};

const MM: f64 = 1000.0;

fn check_pair<T>(a: &[T], b: &[T], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(what, b.len(), a.len()));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument(format!("{what}: no points")));
    }
    Ok(())
}

fn v(p: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

fn mean_distance(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).sum::<f64>() / a.len() as f64
}

/// Root-aligned mean Euclidean distance; point 0 is the pelvis.
pub fn mpjpe(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<f64> {
    check_pair(pred, gt, "mpjpe")?;
    let (rp, rg) = (v(&pred[0]), v(&gt[0]));
    let a: Vec<_> = pred.iter().map(|p| v(p) - rp).collect();
    let b: Vec<_> = gt.iter().map(|p| v(p) - rg).collect();
    Ok(mean_distance(&a, &b))
}

/// Root-aligned mean distance over dense body points.
pub fn pve(pred_dense: &[[f64; 3]], gt_dense: &[[f64; 3]]) -> Result<f64> {
    mpjpe(pred_dense, gt_dense)
}

/// Similarity transform `y ≈ s·R·x + t` minimizing the summed squared error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x * self.scale + self.translation
    }
}

fn centroid(p: &[Vector3<f64>]) -> Vector3<f64> {
    p.iter().sum::<Vector3<f64>>() / p.len() as f64
}

/// Least-squares similarity from `src` onto `dst` with reflections excluded.
/// `None` when the cross-covariance is rank-deficient.
pub fn procrustes(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<Similarity> {
    let (mx, my) = (centroid(src), centroid(dst));
    let n = src.len() as f64;
    let mut cov = Matrix3::zeros();
    let mut var_x = 0.0;
    for (x, y) in src.iter().zip(dst) {
        let (dx, dy) = (x - mx, y - my);
        cov += dy * dx.transpose();
        var_x += dx.norm_squared();
    }
    cov /= n;
    var_x /= n;
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut d = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|a, b| d[*b].total_cmp(&d[*a]));
    if !(var_x > 1e-300) || d[order[1]] <= 1e-12 * d[order[0]].max(1e-300) {
        return None;
    }
    let mut s = Matrix3::identity();
    if (u.determinant() * vt.determinant()) < 0.0 {
        s[(order[2], order[2])] = -1.0;
    }
    let rotation = u * s * vt;
    for i in 0..3 {
        d[i] *= s[(i, i)];
    }
    let scale = d.sum() / var_x;
    Some(Similarity { scale, rotation, translation: my - rotation * mx * scale })
}

/// MPJPE after similarity Procrustes alignment of `pred` onto `gt`. A
/// rank-deficient configuration falls back to centroid alignment.
pub fn pa_mpjpe(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<f64> {
    check_pair(pred, gt, "pa_mpjpe")?;
    if pred.len() < 3 {
        return Err(Error::InvalidArgument("pa_mpjpe needs at least 3 points".into()));
    }
    let a: Vec<_> = pred.iter().map(v).collect();
    let b: Vec<_> = gt.iter().map(v).collect();
    let aligned: Vec<Vector3<f64>> = match procrustes(&a, &b) {
        Some(sim) => a.iter().map(|x| sim.apply(x)).collect(),
        None => {
            log::warn!("rank-deficient Procrustes problem; using translation-only alignment");
            let shift = centroid(&b) - centroid(&a);
            a.iter().map(|x| x + shift).collect()
        }
    };
    Ok(mean_distance(&aligned, &b))
}

/// Per-metric minimum over the first `n` sampled hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinOfN {
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub pve: f64,
}

/// Accuracy of each row of a hypothesis set, in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct RowErrors {
    pub mpjpe: Vec<f64>,
    pub pa_mpjpe: Vec<f64>,
    pub pve: Vec<f64>,
}

pub fn row_errors(h: &HypothesisSet, gt_joints: &[[f64; 3]], gt_dense: &[[f64; 3]]) -> Result<RowErrors> {
    let rows = h.poses.nrows();
    let mut out = RowErrors { mpjpe: Vec::with_capacity(rows), pa_mpjpe: Vec::new(), pve: Vec::new() };
    let mm = |p: Vec<[f64; 3]>| p.into_iter().map(|q| q.map(|c| c * MM)).collect::<Vec<_>>();
    let (gj, gd) = (mm(gt_joints.to_vec()), mm(gt_dense.to_vec()));
    for r in 0..rows {
        let j = mm(HypothesisSet::points(&h.joints, r));
        let d = mm(HypothesisSet::points(&h.dense, r));
        out.mpjpe.push(mpjpe(&j, &gj)?);
        out.pa_mpjpe.push(pa_mpjpe(&j, &gj)?);
        out.pve.push(pve(&d, &gd)?);
    }
    Ok(out)
}

/// Minimum over sampled rows `1..=n` (row 0 is the mode).
pub fn min_of_n(errors: &RowErrors, n: usize) -> Result<MinOfN> {
    let available = errors.mpjpe.len().saturating_sub(1);
    if n == 0 || n > available {
        return Err(Error::InvalidArgument(format!("min_of_n: n = {n} with {available} samples")));
    }
    let min = |v: &[f64]| v[1..=n].iter().copied().fold(f64::INFINITY, f64::min);
    Ok(MinOfN { mpjpe: min(&errors.mpjpe), pa_mpjpe: min(&errors.pa_mpjpe), pve: min(&errors.pve) })
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Mean 2D distance over visible joints for the mode and averaged over the
/// samples; `None` when no joint is visible.
pub fn kp2d_error(
    mode: &[[f64; 2]],
    samples: &[Vec<[f64; 2]>],
    gt2d: &[[f64; 2]],
    visible: &[bool],
) -> Option<(f64, f64)> {
    let vis: Vec<usize> = (0..gt2d.len()).filter(|&k| visible[k]).collect();
    if vis.is_empty() {
        return None;
    }
    let err = |p: &[[f64; 2]]| vis.iter().map(|&k| dist2(p[k], gt2d[k])).sum::<f64>() / vis.len() as f64;
    let sample_err =
        if samples.is_empty() { f64::NAN } else { samples.iter().map(|s| err(s)).sum::<f64>() / samples.len() as f64 };
    Some((err(mode), sample_err))
}

/// Mean distance to the per-keypoint hypothesis mean, averaged over the
/// visible and the invisible keypoints separately.
pub fn kp3d_spread(hyps: &[Vec<[f64; 3]>], visible: &[bool]) -> (Option<f64>, Option<f64>) {
    if hyps.is_empty() {
        return (None, None);
    }
    let per_kp: Vec<f64> = (0..visible.len())
        .map(|k| {
            let mean = hyps.iter().map(|h| v(&h[k])).sum::<Vector3<f64>>() / hyps.len() as f64;
            hyps.iter().map(|h| (v(&h[k]) - mean).norm()).sum::<f64>() / hyps.len() as f64
        })
        .collect();
    let class = |want: bool| {
        let vals: Vec<f64> = per_kp.iter().zip(visible).filter(|(_, &vis)| vis == want).map(|(s, _)| *s).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    (class(true), class(false))
}

/// Mean distance of 2D points to their mean.
pub fn spread_2d(points: &[[f64; 2]]) -> f64 {
    let n = points.len() as f64;
    let mean = [points.iter().map(|p| p[0]).sum::<f64>() / n, points.iter().map(|p| p[1]).sum::<f64>() / n];
    points.iter().map(|p| dist2(*p, mean)).sum::<f64>() / n
}

/// `(PercIn, MinDist)` of projected samples against a mask: percentage
/// inside, and the mean distance to the mask over the samples outside it.
pub fn plausibility(samples: &[[f64; 2]], mask: &PersonMask) -> Result<Option<(f64, f64)>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let outside: Vec<[f64; 2]> = samples.iter().copied().filter(|p| !mask.inside(*p)).collect();
    let perc_in = 100.0 * (samples.len() - outside.len()) as f64 / samples.len() as f64;
    if outside.is_empty() {
        return Ok(Some((perc_in, 0.0)));
    }
    let field = distance_transform(mask)?;
    let min_dist = outside.iter().map(|p| field.distance(*p)).sum::<f64>() / outside.len() as f64;
    Ok(Some((perc_in, min_dist)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_hypotheses: usize,
    pub seed: u64,
    /// Hypothesis counts at which min-of-N PVE is also reported.
    pub n_list: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_hypotheses: 100, seed: 0, n_list: vec![] }
    }
}

/// Spread of one uncertain joint's sample projections and of its heatmap
/// samples, crop pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointSpread {
    pub joint: usize,
    pub model: f64,
    pub heatmap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub seed: u64,
    pub mode_mpjpe: f64,
    pub mode_pa_mpjpe: f64,
    pub mode_pve: f64,
    pub min_mpjpe: f64,
    pub min_pa_mpjpe: f64,
    pub min_pve: f64,
    pub kp2d_mode: Option<f64>,
    pub kp2d_sample: Option<f64>,
    pub spread_visible: Option<f64>,
    pub spread_invisible: Option<f64>,
    pub perc_in: Option<f64>,
    pub min_dist: Option<f64>,
    /// Min-of-N PVE for each entry of the configured `n_list`.
    pub min_pve_sweep: Vec<(usize, f64)>,
    pub uncertain_spread: Vec<JointSpread>,
}

/// Mean of each metric over the scenes where it is defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scenes: usize,
    pub mode_mpjpe: f64,
    pub mode_pa_mpjpe: f64,
    pub mode_pve: f64,
    pub min_mpjpe: f64,
    pub min_pa_mpjpe: f64,
    pub min_pve: f64,
    pub kp2d_mode: Option<f64>,
    pub kp2d_sample: Option<f64>,
    pub spread_visible: Option<f64>,
    pub spread_invisible: Option<f64>,
    pub perc_in: Option<f64>,
    pub min_dist: Option<f64>,
    /// Scenes contributing to PercIn and MinDist.
    pub plausibility_scenes: usize,
    pub min_pve_sweep: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_hypotheses: usize,
    pub seed: u64,
    pub aggregate: Aggregate,
    pub scenes: Vec<SceneMetrics>,
}

/// Per-scene random stream, independent of evaluation order.
pub fn scene_rng(eval_seed: u64, scene_seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(eval_seed);
    rng.set_stream(scene_seed);
    rng
}

pub fn evaluate_scene(model: &AmbiModel, store: &ParamStore, ex: &Example, cfg: &EvalConfig) -> Result<SceneMetrics> {
    let n = cfg.n_hypotheses;
    if n == 0 {
        return Err(Error::InvalidArgument("n_hypotheses must be at least 1".into()));
    }
    let mut rng = scene_rng(cfg.seed, ex.seed);
    let h = model.hypotheses(store, ex, n, &mut rng)?;
    let tree = &model.tree;
    let gt_joints = crate::body::forward_kinematics(&ex.theta, &ex.beta, tree)?;
    let gt_dense = crate::body::dense_body_points(&gt_joints, tree);
    let arr = |p: &[Vector3<f64>]| p.iter().map(|q| [q.x, q.y, q.z]).collect::<Vec<_>>();
    let errors = row_errors(&h, &arr(&gt_joints), &arr(&gt_dense))?;
    let best = min_of_n(&errors, n)?;
    let min_pve_sweep = cfg
        .n_list
        .iter()
        .filter(|&&m| m >= 1 && m <= n)
        .map(|&m| Ok((m, min_of_n(&errors, m)?.pve)))
        .collect::<Result<Vec<_>>>()?;

    let visible: Vec<bool> = ex.status.iter().map(|s| s.visible).collect();
    let samples: Vec<Vec<[f64; 2]>> = (1..=n).map(|r| h.projection(r)).collect();
    let kp2d = kp2d_error(&h.projection(0), &samples, &ex.gt2d, &visible);
    let hyps3d: Vec<Vec<[f64; 3]>> =
        (1..=n).map(|r| HypothesisSet::points(&h.joints, r).into_iter().map(|p| p.map(|c| c * MM)).collect()).collect();
    let (spread_visible, spread_invisible) = kp3d_spread(&hyps3d, &visible);

    let invisible: Vec<usize> = (0..NUM_JOINTS).filter(|&k| ex.status[k].inside_crop && !visible[k]).collect();
    let plaus = match &ex.mask {
        Some(mask) if !ex.object_occluded && !invisible.is_empty() => {
            let pts: Vec<[f64; 2]> = samples.iter().flat_map(|s| invisible.iter().map(move |&k| s[k])).collect();
            plausibility(&pts, mask)?
        }
        _ => None,
    };

    let mut uncertain_spread = Vec::new();
    if n >= 2 {
        for k in tree.highly_articulated.iter().copied() {
            let (st, Some(sampler)) = (ex.status[k], &ex.samplers[k]) else { continue };
            if !(st.uncertain && st.inside_crop) {
                continue;
            }
            let model_pts: Vec<[f64; 2]> = samples.iter().map(|s| s[k]).collect();
            let heat: Vec<[f64; 2]> = (0..n)
                .map(|_| {
                    let p = sampler.draw(&mut rng).position;
                    [crate::body::ops::normalized_to_crop(p[0]), crate::body::ops::normalized_to_crop(p[1])]
                })
                .collect();
            uncertain_spread.push(JointSpread { joint: k, model: spread_2d(&model_pts), heatmap: spread_2d(&heat) });
        }
    }

    Ok(SceneMetrics {
        seed: ex.seed,
        mode_mpjpe: errors.mpjpe[0],
        mode_pa_mpjpe: errors.pa_mpjpe[0],
        mode_pve: errors.pve[0],
        min_mpjpe: best.mpjpe,
        min_pa_mpjpe: best.pa_mpjpe,
        min_pve: best.pve,
        kp2d_mode: kp2d.map(|k| k.0),
        kp2d_sample: kp2d.map(|k| k.1),
        spread_visible,
        spread_invisible,
        perc_in: plaus.map(|p| p.0),
        min_dist: plaus.map(|p| p.1),
        min_pve_sweep,
        uncertain_spread,
    })
}

fn mean_of(vals: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut c) = (0.0, 0usize);
    for v in vals {
        s += v;
        c += 1;
    }
    (c > 0).then(|| s / c as f64)
}

pub fn aggregate(scenes: &[SceneMetrics]) -> Aggregate {
    let m = |f: fn(&SceneMetrics) -> f64| mean_of(scenes.iter().map(f)).unwrap_or(f64::NAN);
    let o = |f: fn(&SceneMetrics) -> Option<f64>| mean_of(scenes.iter().filter_map(f));
    let sweep_ns: Vec<usize> =
        scenes.first().map(|s| s.min_pve_sweep.iter().map(|p| p.0).collect()).unwrap_or_default();
    let min_pve_sweep = sweep_ns
        .iter()
        .enumerate()
        .map(|(i, &n)| (n, mean_of(scenes.iter().map(|s| s.min_pve_sweep[i].1)).unwrap_or(f64::NAN)))
        .collect();
    Aggregate {
        scenes: scenes.len(),
        mode_mpjpe: m(|s| s.mode_mpjpe),
        mode_pa_mpjpe: m(|s| s.mode_pa_mpjpe),
        mode_pve: m(|s| s.mode_pve),
        min_mpjpe: m(|s| s.min_mpjpe),
        min_pa_mpjpe: m(|s| s.min_pa_mpjpe),
        min_pve: m(|s| s.min_pve),
        kp2d_mode: o(|s| s.kp2d_mode),
        kp2d_sample: o(|s| s.kp2d_sample),
        spread_visible: o(|s| s.spread_visible),
        spread_invisible: o(|s| s.spread_invisible),
        perc_in: o(|s| s.perc_in),
        min_dist: o(|s| s.min_dist),
        plausibility_scenes: scenes.iter().filter(|s| s.perc_in.is_some()).count(),
        min_pve_sweep,
    }
}

/// Evaluates every example in order.
pub fn evaluate(
    model: &AmbiModel,
    store: &ParamStore,
    examples: &[Example],
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let scenes = examples.iter().map(|ex| evaluate_scene(model, store, ex, cfg)).collect::<Result<Vec<_>>>()?;
    Ok(report(scenes, cfg))
}

pub fn report(scenes: Vec<SceneMetrics>, cfg: &EvalConfig) -> MetricsReport {
    MetricsReport { n_hypotheses: cfg.n_hypotheses, seed: cfg.seed, aggregate: aggregate(&scenes), scenes }
}

/// Best-of-prefix errors of one scene for each `n` in `n_list`, from a
/// single draw of `max(n_list)` hypotheses.
pub fn sweep_scene(
    model: &AmbiModel,
    store: &ParamStore,
    ex: &Example,
    n_list: &[usize],
    seed: u64,
) -> Result<Vec<MinOfN>> {
    let max = n_list.iter().copied().max().unwrap_or(0);
    if max == 0 || n_list.contains(&0) {
        return Err(Error::InvalidArgument("n_list entries must be at least 1".into()));
    }
    let mut rng = scene_rng(seed, ex.seed);
    let h = model.hypotheses(store, ex, max, &mut rng)?;
    let gt = crate::body::forward_kinematics(&ex.theta, &ex.beta, &model.tree)?;
    let dense = crate::body::dense_body_points(&gt, &model.tree);
    let arr = |p: &[Vector3<f64>]| p.iter().map(|q| [q.x, q.y, q.z]).collect::<Vec<_>>();
    let errors = row_errors(&h, &arr(&gt), &arr(&dense))?;
    n_list.iter().map(|&n| min_of_n(&errors, n)).collect()
}

/// Mean over scenes of per-scene sweeps, in `n_list` order.
pub fn mean_sweep(per_scene: &[Vec<MinOfN>], n_list: &[usize]) -> Vec<(usize, MinOfN)> {
    let c = per_scene.len().max(1) as f64;
    n_list
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let mut m = MinOfN { mpjpe: 0.0, pa_mpjpe: 0.0, pve: 0.0 };
            for s in per_scene {
                m.mpjpe += s[i].mpjpe / c;
                m.pa_mpjpe += s[i].pa_mpjpe / c;
                m.pve += s[i].pve / c;
            }
            (n, m)
        })
        .collect()
}

pub fn sweep_csv(rows: &[(usize, MinOfN)]) -> Vec<u8> {
    let mut out = String::from("n,min_mpjpe,min_pa_mpjpe,min_pve\n");
    for (n, m) in rows {
        out.push_str(&format!("{n},{},{},{}\n", m.mpjpe, m.pa_mpjpe, m.pve));
    }
    out.into_bytes()
}

/// Per-joint ratio of mean model spread to mean heatmap spread over all
/// uncertain instances, with the instance count.
pub fn spread_ratios(report: &MetricsReport) -> Vec<(usize, f64, usize)> {
    let mut acc: std::collections::BTreeMap<usize, (f64, f64, usize)> = Default::default();
    for s in &report.scenes {
        for j in &s.uncertain_spread {
            let e = acc.entry(j.joint).or_default();
            e.0 += j.model;
            e.1 += j.heatmap;
            e.2 += 1;
        }
    }
    acc.into_iter().map(|(k, (m, h, c))| (k, m / h, c)).collect()
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }

    /// One row per scene followed by an aggregate row.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = [
            "scene",
            "mode_mpjpe",
            "mode_pa_mpjpe",
            "mode_pve",
            "min_mpjpe",
            "min_pa_mpjpe",
            "min_pve",
            "kp2d_mode",
            "kp2d_sample",
            "spread_visible",
            "spread_invisible",
            "perc_in",
            "min_dist",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let sweep_ns: Vec<usize> = self.aggregate.min_pve_sweep.iter().map(|p| p.0).collect();
        header.extend(sweep_ns.iter().map(|n| format!("min_pve_n{n}")));
        let f = |v: f64| v.to_string();
        let o = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let err = |e: csv::Error| Error::InvalidArgument(e.to_string());
        w.write_record(&header).map_err(err)?;
        for s in &self.scenes {
            let mut rec = vec![
                s.seed.to_string(),
                f(s.mode_mpjpe),
                f(s.mode_pa_mpjpe),
                f(s.mode_pve),
                f(s.min_mpjpe),
                f(s.min_pa_mpjpe),
                f(s.min_pve),
                o(s.kp2d_mode),
                o(s.kp2d_sample),
                o(s.spread_visible),
                o(s.spread_invisible),
                o(s.perc_in),
                o(s.min_dist),
            ];
            rec.extend(s.min_pve_sweep.iter().map(|p| f(p.1)));
            w.write_record(&rec).map_err(err)?;
        }
        let a = &self.aggregate;
        let mut rec = vec![
            "aggregate".to_string(),
            f(a.mode_mpjpe),
            f(a.mode_pa_mpjpe),
            f(a.mode_pve),
            f(a.min_mpjpe),
            f(a.min_pa_mpjpe),
            f(a.min_pve),
            o(a.kp2d_mode),
            o(a.kp2d_sample),
            o(a.spread_visible),
            o(a.spread_invisible),
            o(a.perc_in),
            o(a.min_dist),
        ];
        rec.extend(a.min_pve_sweep.iter().map(|p| f(p.1)));
        w.write_record(&rec).map_err(err)?;
        w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
        (0..n)
            .map(|_| [rng.gen_range(-500.0..500.0), rng.gen_range(-800.0..800.0), rng.gen_range(-200.0..200.0)])
            .collect()
    }

    #[test]
    fn mpjpe_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gt = random_points(&mut rng, 16);
        assert_eq!(mpjpe(&gt, &gt).unwrap(), 0.0);
        let mut pred = gt.clone();
        pred[5][0] += 3.0;
        pred[5][1] += 4.0;
        assert!((mpjpe(&pred, &gt).unwrap() - 0.3125).abs() < 1e-12);
        let shifted: Vec<_> = gt.iter().map(|p| [p[0] + 10.0, p[1], p[2]]).collect();
        assert!(pve(&shifted, &gt).unwrap() < 1e-12);
        assert!(mpjpe(&gt[..3], &gt).is_err());
    }

    #[test]
    fn mpjpe_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (a, b) = (random_points(&mut rng, 16), random_points(&mut rng, 16));
            let mut acc = 0.0;
            for k in 0..16 {
                let mut s = 0.0;
                for c in 0..3 {
                    s += ((a[k][c] - a[0][c]) - (b[k][c] - b[0][c])).powi(2);
                }
                acc += s.sqrt();
            }
            assert!((mpjpe(&a, &b).unwrap() - acc / 16.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pa_removes_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let gt = random_points(&mut rng, 16);
            let r = Rotation3::new(Vector3::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            ));
            let s = rng.gen_range(0.3..3.0);
            let t = Vector3::new(rng.gen_range(-1e3..1e3), rng.gen_range(-1e3..1e3), rng.gen_range(-1e3..1e3));
            let pred: Vec<_> = gt.iter().map(|p| r * v(p) * s + t).map(|q: Vector3<f64>| [q.x, q.y, q.z]).collect();
            assert!(pa_mpjpe(&pred, &gt).unwrap() < 1e-9);
        }
    }

    #[test]
    fn degenerate_procrustes_falls_back() {
        let gt: Vec<[f64; 3]> = (0..5).map(|i| [i as f64, 0.0, 0.0]).collect();
        let pred: Vec<[f64; 3]> = (0..5).map(|i| [i as f64 + 1.0, 0.0, 0.0]).collect();
        assert!(pa_mpjpe(&pred, &gt).unwrap() < 1e-12);
        assert!(pa_mpjpe(&pred[..2], &gt[..2]).is_err());
    }

    #[test]
    fn spreads() {
        let h = vec![vec![[1.0, 0.0, 0.0], [0.0; 3]], vec![[-1.0, 0.0, 0.0], [0.0; 3]]];
        assert_eq!(kp3d_spread(&h, &[true, false]), (Some(1.0), Some(0.0)));
        assert_eq!(kp3d_spread(&h, &[true, true]), (Some(0.5), None));
        assert_eq!(spread_2d(&[[0.0, 0.0], [2.0, 0.0]]), 1.0);
        assert_eq!(spread_2d(&[[0.0, 0.0], [0.0, 6.0]]), 3.0);
    }

    #[test]
    fn kp2d_examples() {
        let gt = vec![[10.0, 10.0]; 4];
        assert_eq!(kp2d_error(&gt, std::slice::from_ref(&gt), &gt, &[true; 4]), Some((0.0, 0.0)));
        assert_eq!(kp2d_error(&gt, &[], &gt, &[false; 4]), None);
        let off: Vec<_> = gt.iter().map(|p| [p[0] + 3.0, p[1]]).collect();
        assert_eq!(kp2d_error(&off, &[off.clone(), gt.clone()], &gt, &[true; 4]), Some((3.0, 1.5)));
    }

    #[test]
    fn plausibility_examples() {
        let mut m = PersonMask::empty();
        for y in 100..150 {
            for x in 100..150 {
                m.set(x, y, true);
            }
        }
        assert_eq!(plausibility(&[[120.5, 120.5], [101.0, 149.9]], &m).unwrap(), Some((100.0, 0.0)));
        let (p, d) =
            plausibility(&[[95.5, 120.5], [120.5, 154.5], [120.5, 120.5], [120.5, 120.5]], &m).unwrap().unwrap();
        assert_eq!(p, 50.0);
        assert!((d - 5.0).abs() < 1e-12, "{d}");
        assert_eq!(plausibility(&[], &m).unwrap(), None);
    }

    #[test]
    fn min_of_n_prefix() {
        let e = RowErrors {
            mpjpe: vec![9.0, 5.0, 3.0, 4.0],
            pa_mpjpe: vec![1.0, 2.0, 1.5, 0.5],
            pve: vec![0.0, 7.0, 8.0, 6.0],
        };
        assert_eq!(min_of_n(&e, 1).unwrap(), MinOfN { mpjpe: 5.0, pa_mpjpe: 2.0, pve: 7.0 });
        assert_eq!(min_of_n(&e, 3).unwrap(), MinOfN { mpjpe: 3.0, pa_mpjpe: 0.5, pve: 6.0 });
        assert!(min_of_n(&e, 4).is_err());
        assert!(min_of_n(&e, 0).is_err());
    }
}
