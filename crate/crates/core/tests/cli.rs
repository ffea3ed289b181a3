//! End-to-end runs of the command-line pipeline on a tiny configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const TINY: &str = r#"
seed = 5
output_dir = "out"
[dataset.synthetic]
n_per_condition = 4
[gan.train]
image_size = 64
base_channels = 4
n_res_blocks = 1
disc_base_channels = 4
max_iters = 3
checkpoint_every = 2
[features]
layers = ["Conv1", "Conv2", "Conv3"]
[placerec]
conditions = ["summer", "winter", "fall"]
[pose.train]
input_size = 16
widths = [4, 4]
fc_width = 8
max_iters = 5
batch_size = 4
"#;

const STAGES: [&str; 6] = [
    "synth",
    "train-features",
    "analyze-layers",
    "placerec",
    "train-pose",
    "eval-pose",
];

fn invloc(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_invloc"))
        .args(args)
        .arg("--config")
        .arg(config)
        .env_remove("INVLOC_OUT")
        .output()
        .unwrap()
}

fn ok(config: &Path, args: &[&str]) {
    let out = invloc(config, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn setup(extra: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    fs::write(&config, format!("{TINY}{extra}")).unwrap();
    (dir, config)
}

/// sha256 of every CSV and JSON report under `root`, keyed by relative path.
fn report_hashes(root: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "json")) {
                let digest = Sha256::digest(fs::read(&p).unwrap());
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    hex::encode(digest),
                );
            }
        }
    }
    out
}

#[test]
fn pipeline_reruns_reproduce_every_report() {
    let (dir, config) = setup("");
    for stage in STAGES {
        ok(&config, &[stage]);
    }
    let out = dir.path().join("out");
    let first = report_hashes(&out);
    for name in [
        "data/poses.csv",
        "gan/loss.csv",
        "layers/layer_f1.csv",
        "layers/layer_analysis.json",
        "placerec/f1_summary.csv",
        "placerec/summer__winter/pr.csv",
        "placerec/summer__winter/top1.csv",
        "pose/train_summary.json",
        "pose_eval/report.json",
        "pose_eval/summary.csv",
    ] {
        assert!(first.contains_key(Path::new(name)), "missing {name}");
    }
    assert!(out.join("placerec/summer__winter/pr.png").exists());
    assert!(out
        .join("pose_eval")
        .read_dir()
        .unwrap()
        .any(|e| e.unwrap().path().extension() == Some("png".as_ref())));

    for stage in STAGES {
        ok(&config, &[stage, "--force"]);
    }
    assert_eq!(report_hashes(&out), first);
}

#[test]
fn existing_outputs_need_force() {
    let (dir, config) = setup("");
    ok(&config, &["synth"]);
    let marker = dir.path().join("out/data/poses.csv");
    let before = fs::read(&marker).unwrap();
    let refused = invloc(&config, &["synth"]);
    assert!(!refused.status.success());
    assert!(String::from_utf8_lossy(&refused.stderr).contains("--force"));
    ok(&config, &["synth", "--force"]);
    assert_eq!(fs::read(&marker).unwrap(), before);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let (_dir, config) = setup("[gan]\nomegaa = 3\n");
    let out = invloc(&config, &["synth"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("omegaa"));
}

#[test]
fn resumed_feature_training_matches_a_single_run() {
    let (straight, config) = setup("");
    ok(&config, &["synth"]);
    ok(&config, &["train-features"]);

    let (split, config2) = setup("");
    let short = fs::read_to_string(&config2)
        .unwrap()
        .replace("max_iters = 3", "max_iters = 2");
    fs::write(&config2, short).unwrap();
    ok(&config2, &["synth"]);
    ok(&config2, &["train-features"]);
    fs::write(&config2, TINY).unwrap();
    ok(&config2, &["train-features", "--resume"]);

    let read = |d: &Path, f: &str| fs::read(d.join("out/gan").join(f)).unwrap();
    assert_eq!(
        read(split.path(), "loss.csv"),
        read(straight.path(), "loss.csv")
    );
    assert_eq!(
        read(split.path(), "checkpoint.bin"),
        read(straight.path(), "checkpoint.bin")
    );
}

#[test]
fn imported_score_matrices_give_the_same_reports() {
    let (dir, config) = setup("");
    for stage in &STAGES[..4] {
        ok(&config, &[stage]);
    }
    let out = dir.path().join("out");
    let import = dir.path().join("import");
    fs::create_dir(&import).unwrap();
    for pair in ["summer__winter", "summer__fall", "winter__fall"] {
        let src = out.join("placerec").join(pair);
        fs::copy(src.join("scores.bin"), import.join(format!("{pair}.bin"))).unwrap();
        fs::copy(
            src.join("scores.bin.ids.csv"),
            import.join(format!("{pair}.bin.ids.csv")),
        )
        .unwrap();
    }
    let computed = report_hashes(&out.join("placerec"));

    let imported = TINY.replace("[placerec]\n", "[placerec]\nimport_dir = \"import\"\n");
    fs::write(&config, imported).unwrap();
    ok(&config, &["placerec", "--force"]);
    assert_eq!(report_hashes(&out.join("placerec")), computed);
}

#[test]
fn features_are_extracted_at_dataset_size() {
    // frames rendered at 128, generator trained on 64×64 downsamples
    let (dir, config) = setup("[dataset]\nsize = 128\n");
    for stage in STAGES {
        ok(&config, &[stage]);
    }
    let cache = dir.path().join("out/features/cache");
    let short = fs::read_dir(&cache)
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let conv3 = short.join("Conv3@128");
    let entry = fs::read_dir(&conv3)
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let (h, w, _) = invloc::features::read_plane(&entry).unwrap();
    assert_eq!((h, w), (32, 32));
    let img = image::open(dir.path().join("out/data/summer/00000.png")).unwrap();
    assert_eq!((img.width(), img.height()), (128, 128));
}
