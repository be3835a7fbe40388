use ambiflow::synthdata::{generate_dataset, read_dataset, SceneConfig};

// Regression golden: any change to scene generation or the file layout
// must be deliberate and update this digest.
const GOLDEN_64_SEED_7: &str = "3fb89623b34d4c98445ef3f3adb7b143bb7e62ba175b9ce18c09c35834c3e1a2";

#[test]
fn golden_digest() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.afds");
    let digest = generate_dataset(64, 7, &SceneConfig::default(), &path).unwrap();
    assert_eq!(digest, GOLDEN_64_SEED_7);
    let again = generate_dataset(64, 7, &SceneConfig::default(), &dir.path().join("h.afds")).unwrap();
    assert_eq!(digest, again);
    let (manifest, scenes) = read_dataset(&path).unwrap();
    assert_eq!((manifest.count, manifest.base_seed, scenes.len()), (64, 7, 64));
    assert!(scenes.iter().enumerate().all(|(i, s)| s.seed == 7 + i as u64));
}

#[test]
fn empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.afds");
    generate_dataset(0, 3, &SceneConfig::default(), &path).unwrap();
    let (manifest, scenes) = read_dataset(&path).unwrap();
    assert_eq!(manifest.count, 0);
    assert!(scenes.is_empty());
    assert!(dir.path().join("e.afds.manifest.json").exists());
}

#[test]
fn occlusion_probability_extremes() {
    let dir = tempfile::tempdir().unwrap();
    let none = SceneConfig { occlusion_prob: 0.0, ..Default::default() };
    generate_dataset(20, 0, &none, &dir.path().join("a")).unwrap();
    let (_, scenes) = read_dataset(&dir.path().join("a")).unwrap();
    assert!(scenes.iter().all(|s| s.occluders.is_empty()));
    let all = SceneConfig { occlusion_prob: 1.0, ..Default::default() };
    generate_dataset(20, 0, &all, &dir.path().join("b")).unwrap();
    let (_, scenes) = read_dataset(&dir.path().join("b")).unwrap();
    assert!(scenes.iter().all(|s| !s.occluders.is_empty()));
}
