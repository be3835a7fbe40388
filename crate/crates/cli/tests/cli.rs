use std::path::Path;
use std::process::{Command, Output};

fn ambiflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ambiflow")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = ambiflow(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &[&str] = &[
    "--set",
    "iterations=3",
    "--set",
    "batch_size=3",
    "--set",
    "n_samples=3",
    "--set",
    "model.flow_hidden=8",
    "--set",
    "model.condition.pose_embed=8",
    "--set",
    "model.condition.head_hidden=8",
];

#[test]
fn help_on_every_command() {
    let out = ok(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    for cmd in ["gen-data", "train", "eval", "sample", "sweep-n", "ablate"] {
        assert!(text.contains(cmd), "{cmd} missing from top-level help");
        let sub = ok(&[cmd, "--help"]);
        let s = String::from_utf8_lossy(&sub.stdout);
        assert!(s.contains("--out") || s.contains("--report"), "{cmd}: {s}");
    }
    let s = String::from_utf8_lossy(&ok(&["eval", "--help"]).stdout).to_string();
    for flag in ["--checkpoint", "--data", "--n-hypotheses", "--report", "--threads", "--seed"] {
        assert!(s.contains(flag), "eval help lacks {flag}");
    }
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(ambiflow(&["gen-data", "--bogus"]).status.code(), Some(1));
    assert_eq!(ambiflow(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(ambiflow(&["eval"]).status.code(), Some(1));
}

#[test]
fn missing_checkpoint_exits_2_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("nowhere.ckpt");
    let out =
        ambiflow(&["eval", "--checkpoint", p(&ckpt), "--data", "x.afds", "--report", p(&dir.path().join("r.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(p(&ckpt)));
    assert!(!dir.path().join("r.json").exists());
}

#[test]
fn invalid_config_rejected_before_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let out = ambiflow(&["train", "--out", p(&ckpt), "--set", "lr=-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!ckpt.exists());
    let out = ambiflow(&["gen-data", "--n", "2", "--occlusion-prob", "1.5", "--out", p(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("d").exists());
}

#[test]
fn pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    let gen = |out: &Path| {
        let o = ok(&["gen-data", "--n", "6", "--seed", "11", "--occlusion-prob", "0.5", "--out", p(out)]);
        String::from_utf8(o.stdout).unwrap()
    };
    let digest = gen(&d("a.afds"));
    assert_eq!(digest.split_whitespace().next(), gen(&d("b.afds")).split_whitespace().next());
    assert_eq!(std::fs::read(d("a.afds")).unwrap(), std::fs::read(d("b.afds")).unwrap());
    assert!(d("a.afds.manifest.json").exists());

    let data = d("a.afds");
    let train = |out: &Path| {
        let mut args = vec!["train", "--preset", "table3_mask", "--data", p(&data), "--out", p(out), "--seed", "4"];
        args.extend_from_slice(TINY);
        ok(&args);
    };
    train(&d("m1.ckpt"));
    train(&d("m2.ckpt"));
    assert_eq!(std::fs::read(d("m1.ckpt")).unwrap(), std::fs::read(d("m2.ckpt")).unwrap());
    let log = std::fs::read_to_string(d("m1.ckpt.log.csv")).unwrap();
    assert!(log.starts_with("iter,beta,l2d,l2d_samples,nll,orth,mmd,mask,total,wall_time"));
    assert_eq!(log.lines().count(), 4);

    for (i, threads) in ["1", "2"].iter().enumerate() {
        let report = d(&format!("r{i}.json"));
        ok(&[
            "eval",
            "--checkpoint",
            p(&d("m1.ckpt")),
            "--data",
            p(&d("a.afds")),
            "--n-hypotheses",
            "7",
            "--report",
            p(&report),
            "--threads",
            threads,
        ]);
    }
    assert_eq!(std::fs::read(d("r0.json")).unwrap(), std::fs::read(d("r1.json")).unwrap());
    let csv = std::fs::read_to_string(d("r0.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6 + 1);
    assert!(csv.lines().last().unwrap().starts_with("aggregate,"));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(d("r0.json")).unwrap()).unwrap();
    assert_eq!(json["n_hypotheses"], 7);

    ok(&[
        "sweep-n",
        "--checkpoint",
        p(&d("m1.ckpt")),
        "--data",
        p(&d("a.afds")),
        "--n-list",
        "1,5,10",
        "--out",
        p(&d("sweep.csv")),
    ]);
    let sweep = std::fs::read_to_string(d("sweep.csv")).unwrap();
    let pve: Vec<f64> = sweep.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert_eq!(pve.len(), 3);
    assert!(pve.windows(2).all(|w| w[1] <= w[0]), "{pve:?}");

    ok(&[
        "sample",
        "--checkpoint",
        p(&d("m1.ckpt")),
        "--data",
        p(&d("a.afds")),
        "--n-hypotheses",
        "4",
        "--limit",
        "2",
        "--out",
        p(&d("samples.json")),
    ]);
    let s: serde_json::Value = serde_json::from_slice(&std::fs::read(d("samples.json")).unwrap()).unwrap();
    let scenes = s["scenes"].as_array().unwrap();
    assert_eq!(scenes.len(), 2);
    assert_eq!(scenes[0]["poses_6d"].as_array().unwrap().len(), 5);
    assert_eq!(scenes[0]["poses_6d"][0].as_array().unwrap().len(), 96);
    assert_eq!(scenes[0]["joints3d"][1].as_array().unwrap().len(), 16);
    assert_eq!(scenes[0]["projections"][1][0].as_array().unwrap().len(), 2);
}

#[test]
fn ablate_writes_comparison_table() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("e.afds");
    ok(&["gen-data", "--n", "4", "--seed", "3", "--out", p(&data)]);
    let out = dir.path().join("abl");
    let mut args = vec![
        "ablate",
        "--preset",
        "table3",
        "--data",
        p(&data),
        "--train-data",
        p(&data),
        "--n-hypotheses",
        "3",
        "--out",
        p(&out),
    ];
    args.extend_from_slice(TINY);
    ok(&args);
    let table = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 7);
    assert!(table.contains("table3_prohmr") && table.contains("table3_mask"));
    assert!(out.join("table3_mmd.ckpt").exists() && out.join("table3_mmd.report.csv").exists());
    assert_eq!(
        ambiflow(&["ablate", "--preset", "table9", "--data", p(&data), "--out", p(&out)]).status.code(),
        Some(2)
    );
}
