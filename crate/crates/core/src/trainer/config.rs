//! Run configuration layered as defaults, then a named preset, then a TOML
//! file, then `key.path=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::losses::{KernelSpec, L2dVariant, LossWeights};
use crate::model::ModelConfig;
use crate::synthdata::SceneConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Flow samples drawn per example for the sample-level losses.
    pub n_samples: usize,
    pub use_mmd: bool,
    pub use_mask: bool,
    pub l2d_variant: L2dVariant,
    pub l2d_sample_weight: f64,
    /// Iterations trained before the sample-level losses switch on.
    pub sample_warmup: usize,
    /// Write an intermediate checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: usize,
    /// Scenes generated for training when no dataset file is given.
    pub train_scenes: usize,
    /// Base seed of generated training scenes.
    pub data_seed: u64,
    pub weights: LossWeights,
    pub kernel: KernelSpec,
    pub model: ModelConfig,
    pub data: SceneConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lr: 1e-4,
            weight_decay: 1e-4,
            batch_size: 64,
            iterations: 10_000,
            n_samples: 25,
            use_mmd: true,
            use_mask: true,
            l2d_variant: L2dVariant::ModeOnly,
            l2d_sample_weight: 0.0,
            sample_warmup: 0,
            checkpoint_every: 0,
            train_scenes: 4096,
            data_seed: 1_000_000,
            weights: LossWeights::default(),
            kernel: KernelSpec::default(),
            model: ModelConfig::default(),
            data: SceneConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.use_mmd && self.n_samples < 2 {
            return Err(Error::Config("the MMD loss needs n_samples >= 2".into()));
        }
        if self.needs_samples() && self.n_samples == 0 {
            return Err(Error::Config("sample-level losses need n_samples >= 1".into()));
        }
        if !(self.l2d_sample_weight >= 0.0) {
            return Err(Error::Config("l2d_sample_weight must be non-negative".into()));
        }
        if self.needs_samples() && self.sample_warmup >= self.iterations {
            return Err(Error::Config(format!(
                "sample_warmup ({}) leaves no iterations for the sample-level losses ({})",
                self.sample_warmup, self.iterations
            )));
        }
        self.weights.validate()?;
        self.kernel.validate()?;
        self.data.validate()
    }

    /// The same run with every sample-level loss disabled.
    pub fn without_sample_losses(&self) -> Self {
        Self { use_mmd: false, use_mask: false, l2d_variant: L2dVariant::ModeOnly, ..self.clone() }
    }

    /// True when any enabled loss looks at random hypotheses.
    pub fn needs_samples(&self) -> bool {
        self.use_mmd || self.use_mask || self.l2d_variant != L2dVariant::ModeOnly
    }
}

macro_rules! presets {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../presets/", $name, ".toml")))),*]
    };
}

/// Named configuration presets shipped with the crate.
pub const PRESETS: &[(&str, &str)] = presets!(
    "table3_prohmr",
    "table3_bbox",
    "table3_pose",
    "table3_realnvp",
    "table3_mmd",
    "table3_mask",
    "tables2_none",
    "tables2_l2d_all_1e-3",
    "tables2_l2d_all_5e-3",
    "tables2_l2d_all_1e-2",
    "tables2_l2d_visible_1e-3",
    "tables2_l2d_visible_5e-3",
    "tables2_l2d_visible_1e-2",
    "tables2_mmd",
    "reference",
);

/// Rows of the component ablation, in order, with their presets.
pub const TABLE3_ROWS: &[(&str, &str)] = &[
    ("baseline (additive flow)", "table3_prohmr"),
    ("+ bbox condition", "table3_bbox"),
    ("+ 2D pose condition", "table3_pose"),
    ("+ affine couplings", "table3_realnvp"),
    ("+ MMD loss", "table3_mmd"),
    ("+ mask loss", "table3_mask"),
];

/// Rows of the sample-supervision ablation, in order, with their presets.
pub const TABLES2_ROWS: &[(&str, &str)] = &[
    ("no sample supervision", "tables2_none"),
    ("L2D all joints, 1e-3", "tables2_l2d_all_1e-3"),
    ("L2D all joints, 5e-3", "tables2_l2d_all_5e-3"),
    ("L2D all joints, 1e-2", "tables2_l2d_all_1e-2"),
    ("L2D visible joints, 1e-3", "tables2_l2d_visible_1e-3"),
    ("L2D visible joints, 5e-3", "tables2_l2d_visible_5e-3"),
    ("L2D visible joints, 1e-2", "tables2_l2d_visible_1e-2"),
    ("MMD", "tables2_mmd"),
];

pub fn preset_source(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| *s)
        .ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))
}

/// Rows of a named ablation group (`table3` or `tables2`).
pub fn ablation_rows(group: &str) -> Result<&'static [(&'static str, &'static str)]> {
    match group {
        "table3" => Ok(TABLE3_ROWS),
        "tables2" => Ok(TABLES2_ROWS),
        other => Err(Error::Config(format!("unknown ablation group `{other}` (expected table3 or tables2)"))),
    }
}

fn merge(base: &mut Table, layer: Table) {
    for (k, v) in layer {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(l)) => merge(b, l),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_table(src: &str, what: &str) -> Result<Table> {
    src.parse::<Table>().map_err(|e| Error::Config(format!("{what}: {e}")))
}

/// Parses `a.b.c=value`; the value is read as TOML, falling back to a bare string.
fn override_table(spec: &str) -> Result<Table> {
    let (path, raw) =
        spec.split_once('=').ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override `{spec}` has an empty key")));
    }
    let mut table = Table::new();
    let mut cur = &mut table;
    for k in &keys[..keys.len() - 1] {
        cur = match cur.entry(k.to_string()).or_insert_with(|| Value::Table(Table::new())) {
            Value::Table(t) => t,
            _ => unreachable!("fresh table"),
        };
    }
    cur.insert(keys[keys.len() - 1].to_string(), value);
    Ok(table)
}

/// Builds and validates a configuration from its layers.
pub fn load_config(preset: Option<&str>, file: Option<&Path>, overrides: &[String]) -> Result<TrainConfig> {
    let mut base = Table::try_from(TrainConfig::default()).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(name) = preset {
        merge(&mut base, parse_table(preset_source(name)?, name)?);
    }
    if let Some(path) = file {
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        merge(&mut base, parse_table(&src, &path.display().to_string())?);
    }
    for spec in overrides {
        merge(&mut base, override_table(spec)?);
    }
    let config: TrainConfig =
        Value::Table(base).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        assert_eq!(load_config(None, None, &[]).unwrap(), TrainConfig::default());
    }

    #[test]
    fn every_preset_loads() {
        for (name, _) in PRESETS {
            load_config(Some(name), None, &[]).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn ablation_rows_map_to_distinct_presets() {
        for group in ["table3", "tables2"] {
            let rows = ablation_rows(group).unwrap();
            let mut names: Vec<_> = rows.iter().map(|r| r.1).collect();
            names.sort();
            names.dedup();
            assert_eq!(names.len(), rows.len());
            for (_, p) in rows {
                preset_source(p).unwrap();
            }
        }
        let base = load_config(Some("table3_prohmr"), None, &[]).unwrap();
        assert!(base.model.volume_preserving && !base.model.condition.use_pose && !base.use_mmd);
        let full = load_config(Some("table3_mask"), None, &[]).unwrap();
        assert!(!full.model.volume_preserving && full.use_mmd && full.use_mask);
        let vis = load_config(Some("tables2_l2d_visible_5e-3"), None, &[]).unwrap();
        assert_eq!((vis.l2d_variant, vis.l2d_sample_weight), (L2dVariant::VisibleSamples, 5e-3));
    }

    #[test]
    fn overrides_apply_last() {
        let c = load_config(
            Some("table3_mmd"),
            None,
            &["iterations=7".into(), "model.condition.pose_embed=8".into(), "weights.mmd=0.5".into()],
        )
        .unwrap();
        assert_eq!((c.iterations, c.model.condition.pose_embed, c.weights.mmd), (7, 8, 0.5));
        assert!(c.use_mmd);
    }

    #[test]
    fn invalid_layers_rejected() {
        assert!(load_config(None, None, &["no_such_key=1".into()]).is_err());
        assert!(load_config(None, None, &["lr=0".into()]).is_err());
        assert!(load_config(None, None, &["batch_size=0".into()]).is_err());
        assert!(load_config(None, None, &["n_samples=1".into()]).is_err());
        assert!(load_config(None, None, &["iterations".into()]).is_err());
        assert!(load_config(Some("nope"), None, &[]).is_err());
        assert!(ablation_rows("table9").is_err());
    }

    #[test]
    fn config_file_layer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "batch_size = 3\n[data]\nocclusion_prob = 0.25\n").unwrap();
        let c = load_config(Some("table3_pose"), Some(&path), &["batch_size=5".into()]).unwrap();
        assert_eq!(c.batch_size, 5);
        assert_eq!(c.data.occlusion_prob, 0.25);
        assert!(!c.use_mmd);
    }
}
