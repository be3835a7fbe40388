//! Optimization loop, run configuration, checkpoints and the training log.

mod adam;
mod config;

pub use adam::{adam_step, AdamState};
pub use config::{ablation_rows, load_config, preset_source, TrainConfig, PRESETS, TABLE3_ROWS, TABLES2_ROWS};

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::body::ops::crop_to_normalized;
use crate::body::ops::orth_tape;
use crate::body::{CROP_SIZE, NUM_JOINTS, NUM_SHAPE, POSE_DIM};
use crate::diffcore::{checkpoint, unit_seed, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::losses::{
    mask_pairs, mean_squared_tape, mmd_tape, total_loss, weighted_l1_tape, JointTargets, L2dVariant, LossTerms,
    MaskJoint, TargetSource,
};
use crate::model::{AmbiModel, Example, ModelConfig};

/// Crop pixels per crop-normalized unit.
const PX_PER_UNIT: f64 = CROP_SIZE as f64 / 2.0;

/// One recorded batch loss: the tape, the weighted total node and the
/// unweighted term values.
pub struct BatchLoss {
    pub tape: Tape,
    pub total: Var,
    pub terms: LossTerms,
}

fn normalized(p: [f64; 2]) -> [f64; 2] {
    [crop_to_normalized(p[0]), crop_to_normalized(p[1])]
}

/// Records every enabled loss for a batch. Random latents and heatmap
/// draws come from `rng` in a fixed order.
pub fn batch_loss<R: Rng>(
    model: &AmbiModel,
    store: &ParamStore,
    batch: &[&Example],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<BatchLoss> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let n = if cfg.needs_samples() { cfg.n_samples } else { 0 };
    let k = NUM_JOINTS;
    let mut tape = Tape::new();
    let mut terms = LossTerms::default();

    let cond = model.condition_tape(&mut tape, store, batch)?;
    let head = model.head_tape(&mut tape, store, cond)?;
    let beta_gt = Array2::from_shape_fn((b, NUM_SHAPE), |(i, j)| batch[i].beta[j]);
    let l_beta = mean_squared_tape(&mut tape, head.beta, beta_gt)?;
    let l_nll = model.nll_tape(&mut tape, store, batch, cond)?;

    let rows = b * (1 + n);
    let idx: Vec<usize> = (0..b).chain((0..b * n).map(|r| r / n)).collect();
    let z = Array2::from_shape_fn((rows, POSE_DIM), |(r, _)| if r < b { 0.0 } else { rng.sample(StandardNormal) });
    let cond_rows = tape.gather_rows(cond, &idx)?;
    let beta_rows = tape.gather_rows(head.beta, &idx)?;
    let cam_rows = tape.gather_rows(head.cam, &idx)?;
    let zv = tape.leaf(z);
    let pass = model.flow.forward_tape(&mut tape, store, zv, cond_rows)?;
    let intr: Vec<_> = idx.iter().map(|&i| batch[i].intrinsics).collect();
    let nodes = model.pose_pipeline(&mut tape, pass.output, beta_rows, cam_rows, &intr)?;

    let mode_proj = tape.gather_rows(nodes.proj, &(0..b).collect::<Vec<_>>())?;
    let target = Array2::from_shape_fn((b, 2 * k), |(i, c)| crop_to_normalized(batch[i].gt2d[c / 2][c % 2]));
    let weight = Array2::from_elem((b, 2 * k), PX_PER_UNIT / (k * b) as f64);
    let l_2d = weighted_l1_tape(&mut tape, mode_proj, target, weight)?;

    let orth_rows = orth_tape(&mut tape, nodes.seeds)?;
    let orth_sum = tape.sum(orth_rows);
    let l_orth = tape.scale(orth_sum, 1.0 / rows as f64);

    let mut l_2d_samples = None;
    let mut l_mmd = None;
    let mut l_mask = None;
    if n > 0 {
        let sample_proj = tape.gather_rows(nodes.proj, &(b..rows).collect::<Vec<_>>())?;
        let pv = tape.value(sample_proj).clone();
        let mask_used = |ex: &Example| cfg.use_mask && ex.mask.is_some() && !ex.object_occluded;

        // Heatmap draws, in example-major then joint order.
        let mut draws: Vec<Vec<Option<Vec<[f64; 2]>>>> = vec![vec![None; k]; b];
        for (i, ex) in batch.iter().enumerate() {
            for j in 0..k {
                let for_mmd = cfg.use_mmd && ex.plan.joints[j].source == TargetSource::HeatmapSamples;
                let for_mask = mask_used(ex) && ex.status[j].inside_crop && !ex.status[j].visible;
                if let (true, Some(sampler)) = (for_mmd || for_mask, &ex.samplers[j]) {
                    draws[i][j] = Some((0..n).map(|_| sampler.draw(rng).position).collect());
                }
            }
        }

        if cfg.l2d_variant != L2dVariant::ModeOnly {
            let mut weight = Array2::zeros((b * n, 2 * k));
            for (i, ex) in batch.iter().enumerate() {
                let include: Vec<bool> = match cfg.l2d_variant {
                    L2dVariant::VisibleSamples => ex.status.iter().map(|s| s.visible).collect(),
                    _ => vec![true; k],
                };
                let count = include.iter().filter(|v| **v).count();
                if count == 0 {
                    continue;
                }
                let w = PX_PER_UNIT / (count * b * n) as f64;
                for r in i * n..(i + 1) * n {
                    for j in (0..k).filter(|&j| include[j]) {
                        weight[[r, 2 * j]] = w;
                        weight[[r, 2 * j + 1]] = w;
                    }
                }
            }
            let target =
                Array2::from_shape_fn((b * n, 2 * k), |(r, c)| crop_to_normalized(batch[r / n].gt2d[c / 2][c % 2]));
            l_2d_samples = Some(weighted_l1_tape(&mut tape, sample_proj, target, weight)?);
        }

        if cfg.use_mmd {
            let targets: Vec<Vec<JointTargets>> = batch
                .iter()
                .enumerate()
                .map(|(i, ex)| {
                    ex.plan
                        .included()
                        .filter_map(|(j, src)| match src {
                            TargetSource::HeatmapSamples => {
                                draws[i][j].clone().map(|t| JointTargets { joint: j, targets: t })
                            }
                            TargetSource::DuplicatedGroundTruth => {
                                Some(JointTargets { joint: j, targets: vec![normalized(ex.gt2d[j]); n] })
                            }
                            TargetSource::Excluded => None,
                        })
                        .collect()
                })
                .collect();
            l_mmd = Some(mmd_tape(&mut tape, sample_proj, targets, n, &cfg.kernel)?);
        }

        if cfg.use_mask {
            let mut target = Array2::zeros((b * n, 2 * k));
            let mut weight = Array2::zeros((b * n, 2 * k));
            for (i, ex) in batch.iter().enumerate() {
                let Some(mask) = ex.mask.as_deref().filter(|_| mask_used(ex)) else { continue };
                let mut pairs = Vec::new();
                for j in 0..k {
                    let Some(heat) = &draws[i][j] else { continue };
                    if ex.status[j].visible || !ex.status[j].inside_crop {
                        continue;
                    }
                    let samples: Vec<[f64; 2]> =
                        (0..n).map(|s| [pv[[i * n + s, 2 * j]], pv[[i * n + s, 2 * j + 1]]]).collect();
                    for (s, t) in mask_pairs(MaskJoint { samples: &samples, heatmap: heat }, mask) {
                        pairs.push((i * n + s, j, t));
                    }
                }
                let w = 1.0 / (pairs.len().max(1) * b) as f64;
                for (r, j, t) in pairs {
                    target[[r, 2 * j]] = t[0];
                    target[[r, 2 * j + 1]] = t[1];
                    weight[[r, 2 * j]] = w;
                    weight[[r, 2 * j + 1]] = w;
                }
            }
            l_mask = Some(weighted_l1_tape(&mut tape, sample_proj, target, weight)?);
        }
    }

    let w = &cfg.weights;
    let parts = [
        (Some(l_beta), w.beta),
        (Some(l_2d), w.l2d),
        (l_2d_samples, cfg.l2d_sample_weight),
        (Some(l_nll), w.nll),
        (Some(l_orth), w.orth),
        (l_mmd, w.mmd),
        (l_mask, w.mask),
    ];
    let mut total: Option<Var> = None;
    for (node, weight) in parts.into_iter() {
        let Some(node) = node else { continue };
        let scaled = tape.scale(node, weight);
        total = Some(match total {
            Some(t) => tape.add(t, scaled)?,
            None => scaled,
        });
    }
    let value = |tape: &Tape, v: Option<Var>| v.map_or(0.0, |v| tape.scalar(v));
    terms.beta = tape.scalar(l_beta);
    terms.l2d = tape.scalar(l_2d);
    terms.l2d_samples = value(&tape, l_2d_samples);
    terms.nll = tape.scalar(l_nll);
    terms.orth = tape.scalar(l_orth);
    terms.mmd = value(&tape, l_mmd);
    terms.mask = value(&tape, l_mask);
    Ok(BatchLoss { tape, total: total.expect("at least one term"), terms })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub terms: LossTerms,
    pub total: f64,
    /// Seconds since training started; the only non-deterministic column.
    pub wall_time: f64,
}

pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub model: AmbiModel,
    pub store: ParamStore,
    adam: AdamState,
    /// Initialization, latents and heatmap draws.
    rng: ChaCha8Rng,
    /// Batch order only, so configs that draw different numbers of samples
    /// still visit examples in the same order.
    order_rng: ChaCha8Rng,
    warmup_config: TrainConfig,
    pool: Vec<&'a Example>,
    order: Vec<usize>,
    cursor: usize,
    iteration: usize,
    pub log: Vec<LogRow>,
    start: Instant,
}

impl<'a> Trainer<'a> {
    /// Initializes parameters from the config seed. Examples whose detected
    /// pose fails the detector filter are left out.
    pub fn new(config: TrainConfig, examples: &'a [Example]) -> Result<Self> {
        config.validate()?;
        let pool: Vec<&Example> = examples.iter().filter(|e| e.passes_filter).collect();
        if pool.is_empty() {
            return Err(Error::Dataset("no usable training examples".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let model = AmbiModel::init(&mut store, config.model, &mut rng)?;
        let adam = AdamState::new(&store);
        let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
        order_rng.set_stream(1);
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut order_rng);
        log::info!("training on {} of {} examples, {} parameters", pool.len(), examples.len(), store.num_scalars());
        Ok(Self {
            warmup_config: config.without_sample_losses(),
            config,
            model,
            store,
            adam,
            rng,
            order_rng,
            pool,
            order,
            cursor: 0,
            iteration: 0,
            log: Vec::new(),
            start: Instant::now(),
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn next_batch(&mut self) -> Vec<&'a Example> {
        let mut out = Vec::with_capacity(self.config.batch_size);
        while out.len() < self.config.batch_size {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.order_rng);
                self.cursor = 0;
            }
            out.push(self.pool[self.order[self.cursor]]);
            self.cursor += 1;
        }
        out
    }

    /// One optimization step.
    pub fn step(&mut self) -> Result<&LogRow> {
        let batch = self.next_batch();
        let cfg = if self.iteration < self.config.sample_warmup { &self.warmup_config } else { &self.config };
        let mut loss = batch_loss(&self.model, &self.store, &batch, cfg, &mut self.rng)?;
        let total = loss.tape.scalar(loss.total);
        let values = loss.terms.values();
        if !total.is_finite() || values.iter().any(|v| !v.is_finite()) {
            let breakdown =
                LossTerms::NAMES.iter().zip(values).map(|(n, v)| format!("{n}={v}")).collect::<Vec<_>>().join(", ");
            return Err(Error::NonFiniteLoss { iteration: self.iteration, breakdown });
        }
        loss.tape.backward(loss.total, unit_seed(), &mut self.store)?;
        adam_step(&mut self.store, &mut self.adam, self.config.lr, self.config.weight_decay)?;
        self.log.push(LogRow {
            iteration: self.iteration,
            terms: loss.terms,
            total,
            wall_time: self.start.elapsed().as_secs_f64(),
        });
        self.iteration += 1;
        Ok(self.log.last().expect("just pushed"))
    }

    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        checkpoint::encode(&self.store, &checkpoint_metadata(&self.config, self.iteration))
    }

    /// Runs the remaining iterations, writing intermediate checkpoints when
    /// configured and a final one to `checkpoint_path`.
    pub fn run(mut self, checkpoint_path: Option<&Path>) -> Result<TrainOutput> {
        let every = self.config.checkpoint_every;
        while self.iteration < self.config.iterations {
            let row = self.step()?;
            if row.iteration % 100 == 0 {
                log::info!("iter {} total {:.5} nll {:.4}", row.iteration, row.total, row.terms.nll);
            }
            if let (Some(path), true) = (checkpoint_path, every > 0 && self.iteration.is_multiple_of(every)) {
                let mut p = path.as_os_str().to_owned();
                p.push(format!(".{}", self.iteration));
                write_atomic(Path::new(&p), &self.checkpoint_bytes()?)?;
            }
        }
        if let Some(path) = checkpoint_path {
            write_atomic(path, &self.checkpoint_bytes()?)?;
        }
        Ok(TrainOutput { config: self.config, model: self.model, store: self.store, log: self.log })
    }
}

pub struct TrainOutput {
    pub config: TrainConfig,
    pub model: AmbiModel,
    pub store: ParamStore,
    pub log: Vec<LogRow>,
}

/// Trains from the config seed without writing files.
pub fn train(config: TrainConfig, examples: &[Example]) -> Result<TrainOutput> {
    Trainer::new(config, examples)?.run(None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub format: String,
    pub iteration: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn checkpoint_metadata(config: &TrainConfig, iteration: usize) -> serde_json::Value {
    serde_json::to_value(CheckpointMetadata {
        format: "ambiflow-checkpoint".into(),
        iteration,
        model: config.model,
        train: config.clone(),
    })
    .expect("metadata serializes")
}

pub fn load_checkpoint(path: &Path) -> Result<(AmbiModel, ParamStore, CheckpointMetadata)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(AmbiModel, ParamStore, CheckpointMetadata)> {
    let (meta, store) = checkpoint::decode(bytes)?;
    let meta: CheckpointMetadata =
        serde_json::from_value(meta).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    let model = AmbiModel::bind(&store, meta.model)?;
    Ok((model, store, meta))
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Training log as CSV: iteration, every loss term, total, wall time.
pub fn log_csv(log: &[LogRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["iter"];
    header.extend(LossTerms::NAMES);
    header.extend(["total", "wall_time"]);
    w.write_record(&header).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for r in log {
        let mut rec = vec![r.iteration.to_string()];
        rec.extend(r.terms.values().iter().map(|v| v.to_string()));
        rec.push(r.total.to_string());
        rec.push(format!("{:.3}", r.wall_time));
        w.write_record(&rec).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Weighted total recomputed from logged terms.
pub fn logged_total(row: &LogRow, cfg: &TrainConfig) -> f64 {
    total_loss(&row.terms, &cfg.weights, cfg.l2d_sample_weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::KinematicTree;
    use crate::synthdata::{generate_scene, SceneConfig};

    fn examples(n: u64, occlusion: f64) -> Vec<Example> {
        let tree = KinematicTree::standard();
        let cfg = SceneConfig { occlusion_prob: occlusion, ..Default::default() };
        (0..n).map(|s| Example::from_scene(&generate_scene(s, &cfg, &tree).unwrap(), &tree).unwrap()).collect()
    }

    fn small(extra: &[&str]) -> TrainConfig {
        let mut o: Vec<String> =
            ["batch_size=4", "iterations=3", "n_samples=3", "model.flow_hidden=16", "model.flow_layers=2"]
                .iter()
                .map(|s| s.to_string())
                .collect();
        o.extend(extra.iter().map(|s| s.to_string()));
        load_config(None, None, &o).unwrap()
    }

    #[test]
    fn total_matches_logged_terms() {
        let ex = examples(12, 0.9);
        for extra in [
            &[][..],
            &["l2d_variant=\"visible_samples\"", "l2d_sample_weight=0.01"][..],
            &["use_mmd=false", "use_mask=false"][..],
        ] {
            let out = train(small(extra), &ex).unwrap();
            for row in &out.log {
                assert!((logged_total(row, &out.config) - row.total).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn warmup_defers_sample_losses() {
        let ex = examples(12, 1.0);
        let out = train(small(&["iterations=4", "sample_warmup=2", "weights.mmd=1"]), &ex).unwrap();
        assert!(out.log[..2].iter().all(|r| r.terms.mmd == 0.0 && r.terms.mask == 0.0));
        assert!(out.log[2..].iter().all(|r| r.terms.mmd > 0.0));
        assert!(load_config(None, None, &["iterations=5".into(), "sample_warmup=5".into()]).is_err());
        let plain = train(small(&["iterations=2", "use_mmd=false", "use_mask=false"]), &ex).unwrap();
        assert_eq!(out.log[0].terms.nll, plain.log[0].terms.nll);
    }

    #[test]
    fn same_seed_same_checkpoint() {
        let ex = examples(10, 0.5);
        let a = Trainer::new(small(&[]), &ex).unwrap();
        let b = Trainer::new(small(&[]), &ex).unwrap();
        let (a, b) = (a.run(None).unwrap(), b.run(None).unwrap());
        assert_eq!(a.store.flat_values(), b.store.flat_values());
        let strip = |l: &[LogRow]| l.iter().map(|r| (r.iteration, r.terms, r.total)).collect::<Vec<_>>();
        assert_eq!(strip(&a.log), strip(&b.log));
        let c = train(small(&["seed=9"]), &ex).unwrap();
        assert_ne!(a.store.flat_values(), c.store.flat_values());
    }

    #[test]
    fn checkpoint_round_trip() {
        let ex = examples(6, 0.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let cfg = small(&["checkpoint_every=2"]);
        let out = Trainer::new(cfg.clone(), &ex).unwrap().run(Some(&path)).unwrap();
        assert!(dir.path().join("model.ckpt.2").exists());
        let (_, store, meta) = load_checkpoint(&path).unwrap();
        assert_eq!(store.flat_values(), out.store.flat_values());
        assert_eq!(meta.train, cfg);
        assert_eq!(meta.iteration, 3);
    }

    #[test]
    fn log_has_every_column() {
        let ex = examples(6, 0.5);
        let out = train(small(&[]), &ex).unwrap();
        let text = String::from_utf8(log_csv(&out.log).unwrap()).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header, "iter,beta,l2d,l2d_samples,nll,orth,mmd,mask,total,wall_time");
        assert_eq!(text.lines().count(), 4);
    }
}
