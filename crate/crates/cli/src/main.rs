use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ambiflow::body::KinematicTree;
use ambiflow::diffcore::ParamStore;
use ambiflow::metrics::{self, EvalConfig, MetricsReport, SceneMetrics};
use ambiflow::model::{AmbiModel, Example, HypothesisSet};
use ambiflow::synthdata::{self, generate_scene, SceneConfig};
use ambiflow::trainer::{self, ablation_rows, load_config, write_atomic, TrainConfig, Trainer};
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "ambiflow", version, about = "Multi-hypothesis 3D pose from ambiguous 2D heatmaps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset file and its manifest sidecar.
    GenData(GenData),
    /// Train a model and write a checkpoint and a training log.
    Train(Train),
    /// Evaluate a checkpoint and write JSON and CSV reports.
    Eval(Eval),
    /// Write sampled hypotheses for every scene as JSON.
    Sample(Sample),
    /// Min-of-N errors for a list of hypothesis counts, as CSV.
    SweepN(SweepN),
    /// Train and evaluate every row of an ablation group.
    Ablate(Ablate),
}

#[derive(Args, Debug)]
struct GenData {
    /// Number of scenes.
    #[arg(long)]
    n: usize,
    /// Scene `i` uses seed `seed + i`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Probability that a scene receives occluders.
    #[arg(long)]
    occlusion_prob: Option<f64>,
    /// TOML file with scene generation settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output dataset path; the manifest goes to `<out>.manifest.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Train {
    /// Named preset applied over the defaults.
    #[arg(long)]
    preset: Option<String>,
    /// TOML config layered over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key.path=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Training dataset; scenes are generated from the config when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Training log CSV; defaults to `<out>.log.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Worker threads for example preparation.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct Eval {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Evaluation dataset.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 100)]
    n_hypotheses: usize,
    /// Seed of the hypothesis draws.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON report path; the CSV report is written next to it.
    #[arg(long)]
    report: PathBuf,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct Sample {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 100)]
    n_hypotheses: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Only the first this many scenes.
    #[arg(long)]
    limit: Option<usize>,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct SweepN {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated hypothesis counts.
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,25,50,100")]
    n_list: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct Ablate {
    /// Ablation group: `table3` or `tables2`.
    #[arg(long)]
    preset: String,
    /// Evaluation dataset.
    #[arg(long)]
    data: PathBuf,
    /// Training dataset; scenes are generated from each config when omitted.
    #[arg(long)]
    train_data: Option<PathBuf>,
    /// TOML config layered over every row's preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key.path=value` overrides applied to every row.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Overrides every row's training seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 100)]
    n_hypotheses: usize,
    /// Output directory for checkpoints, reports and `ablation.csv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
}

fn pool(threads: Option<usize>) -> anyhow::Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            bail!("--threads must be at least 1");
        }
        b = b.num_threads(t);
    }
    Ok(b.build()?)
}

fn require_file(path: &Path, what: &str) -> anyhow::Result<()> {
    if !path.is_file() {
        bail!("{what} not found: {}", path.display());
    }
    Ok(())
}

fn require_parent(path: &Path) -> anyhow::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !dir.is_dir() {
        bail!("output directory does not exist: {}", dir.display());
    }
    Ok(())
}

fn load_examples(path: &Path, pool: &rayon::ThreadPool) -> anyhow::Result<Vec<Example>> {
    require_file(path, "dataset")?;
    let (manifest, scenes) = synthdata::read_dataset(path).with_context(|| format!("reading {}", path.display()))?;
    let tree = manifest.skeleton;
    let examples =
        pool.install(|| scenes.par_iter().map(|s| Example::from_scene(s, &tree)).collect::<Result<Vec<_>, _>>())?;
    if examples.is_empty() {
        bail!("dataset {} has no scenes", path.display());
    }
    Ok(examples)
}

fn generated_examples(cfg: &TrainConfig, pool: &rayon::ThreadPool) -> anyhow::Result<Vec<Example>> {
    let tree = KinematicTree::standard();
    Ok(pool.install(|| {
        (0..cfg.train_scenes as u64)
            .into_par_iter()
            .map(|i| Example::from_scene(&generate_scene(cfg.data_seed + i, &cfg.data, &tree)?, &tree))
            .collect::<Result<Vec<_>, _>>()
    })?)
}

fn load_model(path: &Path) -> anyhow::Result<(AmbiModel, ParamStore)> {
    require_file(path, "checkpoint")?;
    let (model, store, _) =
        trainer::load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok((model, store))
}

fn csv_path(report: &Path) -> PathBuf {
    if report.extension().is_some_and(|e| e == "json") {
        report.with_extension("csv")
    } else {
        let mut p = report.as_os_str().to_owned();
        p.push(".csv");
        p.into()
    }
}

fn evaluate_parallel(
    model: &AmbiModel,
    store: &ParamStore,
    examples: &[Example],
    cfg: &EvalConfig,
    pool: &rayon::ThreadPool,
) -> anyhow::Result<MetricsReport> {
    let scenes: Vec<SceneMetrics> = pool.install(|| {
        examples.par_iter().map(|ex| metrics::evaluate_scene(model, store, ex, cfg)).collect::<Result<Vec<_>, _>>()
    })?;
    Ok(metrics::report(scenes, cfg))
}

fn write_report(report: &MetricsReport, path: &Path) -> anyhow::Result<()> {
    write_atomic(path, &report.to_json()?)?;
    write_atomic(&csv_path(path), &report.to_csv()?)?;
    Ok(())
}

fn gen_data(a: GenData) -> anyhow::Result<()> {
    let mut config = match &a.config {
        Some(p) => {
            require_file(p, "config")?;
            let src = std::fs::read_to_string(p)?;
            toml::from_str::<SceneConfig>(&src).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SceneConfig::default(),
    };
    if let Some(p) = a.occlusion_prob {
        config.occlusion_prob = p;
    }
    config.validate()?;
    require_parent(&a.out)?;
    let digest = synthdata::generate_dataset(a.n, a.seed, &config, &a.out)?;
    println!("{digest}  {}", a.out.display());
    Ok(())
}

fn train(a: Train) -> anyhow::Result<()> {
    let mut config = load_config(a.preset.as_deref(), a.config.as_deref(), &a.overrides)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    require_parent(&a.out)?;
    let pool = pool(a.threads)?;
    let examples = match &a.data {
        Some(p) => load_examples(p, &pool)?,
        None => generated_examples(&config, &pool)?,
    };
    let out = Trainer::new(config, &examples)?.run(Some(&a.out))?;
    let log_path = a.log.unwrap_or_else(|| {
        let mut p = a.out.as_os_str().to_owned();
        p.push(".log.csv");
        p.into()
    });
    write_atomic(&log_path, &trainer::log_csv(&out.log)?)?;
    if let Some(last) = out.log.last() {
        println!("iterations {} final loss {:.6}", last.iteration, last.total);
    }
    Ok(())
}

fn eval(a: Eval) -> anyhow::Result<()> {
    let (model, store) = load_model(&a.checkpoint)?;
    require_parent(&a.report)?;
    let pool = pool(a.threads)?;
    let examples = load_examples(&a.data, &pool)?;
    let cfg = EvalConfig { n_hypotheses: a.n_hypotheses, seed: a.seed, n_list: vec![] };
    let report = evaluate_parallel(&model, &store, &examples, &cfg, &pool)?;
    write_report(&report, &a.report)?;
    let g = &report.aggregate;
    println!(
        "scenes {} mode PVE {:.2} mm, min-of-{} PVE {:.2} mm, MPJPE {:.2} mm, PA-MPJPE {:.2} mm",
        g.scenes, g.mode_pve, a.n_hypotheses, g.min_pve, g.min_mpjpe, g.min_pa_mpjpe
    );
    Ok(())
}

fn rows<T: Clone>(block: &ndarray::Array2<f64>, r: usize, width: usize, f: impl Fn(&[f64]) -> T) -> Vec<T> {
    block.row(r).as_slice().expect("standard layout").chunks(width).map(f).collect()
}

fn sample(a: Sample) -> anyhow::Result<()> {
    let (model, store) = load_model(&a.checkpoint)?;
    require_parent(&a.out)?;
    if a.n_hypotheses == 0 {
        bail!("--n-hypotheses must be at least 1");
    }
    let pool = pool(a.threads)?;
    let mut examples = load_examples(&a.data, &pool)?;
    if let Some(l) = a.limit {
        examples.truncate(l);
    }
    let scenes: Vec<serde_json::Value> = pool.install(|| {
        examples
            .par_iter()
            .map(|ex| {
                let mut rng = metrics::scene_rng(a.seed, ex.seed);
                let h: HypothesisSet = model.hypotheses(&store, ex, a.n_hypotheses, &mut rng)?;
                let all = 0..h.poses.nrows();
                Ok(json!({
                    "scene": ex.seed,
                    "mode_row": 0,
                    "poses_6d": all.clone().map(|r| h.poses.row(r).to_vec()).collect::<Vec<_>>(),
                    "joints3d": all.clone().map(|r| rows(&h.joints, r, 3, |c| [c[0], c[1], c[2]])).collect::<Vec<_>>(),
                    "projections": all.map(|r| h.projection(r)).collect::<Vec<_>>(),
                    "beta": h.beta.to_vec(),
                    "camera": h.camera,
                }))
            })
            .collect::<ambiflow::Result<Vec<_>>>()
    })?;
    let doc = json!({ "n_hypotheses": a.n_hypotheses, "seed": a.seed, "scenes": scenes });
    let mut bytes = serde_json::to_vec(&doc)?;
    bytes.push(b'\n');
    write_atomic(&a.out, &bytes)?;
    Ok(())
}

fn sweep_n(a: SweepN) -> anyhow::Result<()> {
    if a.n_list.is_empty() || a.n_list.contains(&0) {
        bail!("--n-list entries must be positive");
    }
    let (model, store) = load_model(&a.checkpoint)?;
    require_parent(&a.out)?;
    let pool = pool(a.threads)?;
    let examples = load_examples(&a.data, &pool)?;
    let per_scene = pool.install(|| {
        examples
            .par_iter()
            .map(|ex| metrics::sweep_scene(&model, &store, ex, &a.n_list, a.seed))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let rows = metrics::mean_sweep(&per_scene, &a.n_list);
    write_atomic(&a.out, &metrics::sweep_csv(&rows))?;
    for (n, m) in rows {
        println!("N={n:<5} min PVE {:.2} mm", m.pve);
    }
    Ok(())
}

fn ablate(a: Ablate) -> anyhow::Result<()> {
    let group = ablation_rows(&a.preset)?;
    let configs = group
        .iter()
        .map(|(_, preset)| {
            let mut c = load_config(Some(preset), a.config.as_deref(), &a.overrides)?;
            if let Some(seed) = a.seed {
                c.seed = seed;
            }
            Ok(c)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let pool = pool(a.threads)?;
    let eval_examples = load_examples(&a.data, &pool)?;
    let shared = a.train_data.as_ref().map(|p| load_examples(p, &pool)).transpose()?;
    let eval_cfg = EvalConfig { n_hypotheses: a.n_hypotheses, seed: 0, n_list: vec![] };
    let mut table =
        String::from("row,preset,mode_mpjpe,mode_pa_mpjpe,mode_pve,min_mpjpe,min_pa_mpjpe,min_pve,perc_in,min_dist\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for ((label, preset), config) in group.iter().zip(configs) {
        log::info!("training {preset}");
        let owned;
        let examples = match &shared {
            Some(e) => e,
            None => {
                owned = generated_examples(&config, &pool)?;
                &owned
            }
        };
        let ckpt = a.out.join(format!("{preset}.ckpt"));
        let out = Trainer::new(config, examples)?.run(Some(&ckpt))?;
        write_atomic(&a.out.join(format!("{preset}.log.csv")), &trainer::log_csv(&out.log)?)?;
        let report = evaluate_parallel(&out.model, &out.store, &eval_examples, &eval_cfg, &pool)?;
        write_report(&report, &a.out.join(format!("{preset}.report.json")))?;
        let g = &report.aggregate;
        table.push_str(&format!(
            "\"{label}\",{preset},{},{},{},{},{},{},{},{}\n",
            g.mode_mpjpe,
            g.mode_pa_mpjpe,
            g.mode_pve,
            g.min_mpjpe,
            g.min_pa_mpjpe,
            g.min_pve,
            opt(g.perc_in),
            opt(g.min_dist)
        ));
        println!("{label:<28} min PVE {:>8.2}  mode PVE {:>8.2}", g.min_pve, g.mode_pve);
    }
    write_atomic(&a.out.join("ablation.csv"), table.as_bytes())?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Sample(a) => sample(a),
        Command::SweepN(a) => sweep_n(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AMBIFLOW_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
