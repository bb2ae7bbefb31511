use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndf::cli::{checkpoint_path, exit, read_reports, LATEST_CHECKPOINT, LOG_FILE, MODEL_FILE};
use ndf::train::{read_log, AblationMode};

const CONFIG: &str = r#"
[paths]
dataset = "data"
output = "runs"
[scene]
width = 24
height = 24
[scene.motion]
frames = 5
[train]
iterations = 4
batch_size = 32
checkpoint_every = 2
[eval]
stride = 4
held_out_rays = 64
"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn ndf(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_ndf"))
            .current_dir(self.dir.path())
            .args(args)
            .args(["--config", "run.toml"])
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.ndf(args);
        assert_eq!(
            out.status.code(),
            Some(exit::OK),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn with_scene() -> Self {
        let ws = Self::new();
        ws.ok(&["gen-scene"]);
        ws
    }
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn gen_scene_refuses_to_overwrite_without_force() {
    let ws = Workspace::new();
    let first = ws.ok(&["gen-scene"]);
    assert!(first.contains("40 images"), "{first}");
    assert!(ws.path("data/manifest.json").is_file());
    assert!(ws.path("data/config.toml").is_file());
    let manifest = read(&ws.path("data/manifest.json"));

    let again = ws.ndf(&["gen-scene"]);
    assert_eq!(again.status.code(), Some(exit::EXISTS));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));

    ws.ok(&["gen-scene", "--force"]);
    assert_eq!(read(&ws.path("data/manifest.json")), manifest);
}

#[test]
fn unwritable_output_names_the_path() {
    let ws = Workspace::new();
    std::fs::write(ws.path("blocker"), b"file").unwrap();
    let out = ws.ndf(&["gen-scene", "--out", "blocker/data"]);
    assert_ne!(out.status.code(), Some(exit::OK));
    assert!(String::from_utf8_lossy(&out.stderr).contains("blocker"));
}

#[test]
fn bad_arguments_and_config_use_the_usage_code() {
    let ws = Workspace::new();
    assert_eq!(ws.ndf(&["frobnicate"]).status.code(), Some(exit::USAGE));
    assert_eq!(
        ws.ndf(&["gen-scene", "--set", "scene.colour=1"]).status.code(),
        Some(exit::USAGE)
    );
    assert_eq!(
        ws.ndf(&["train", "--mode", "sideways"]).status.code(),
        Some(exit::USAGE)
    );
    let missing = ws.ndf(&["train"]);
    assert_eq!(missing.status.code(), Some(exit::IO));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("gen-scene"));
}

#[test]
fn train_writes_log_checkpoints_and_effective_config() {
    let ws = Workspace::with_scene();
    let out = ws.ok(&["train", "--mode", "no_pose"]);
    assert!(out.contains("mode no_pose"), "{out}");
    let run = ws.path("runs/no_pose");
    let (header, records) = read_log(&run.join(LOG_FILE)).unwrap();
    assert_eq!(header.mode, AblationMode::NoPose);
    assert_eq!(records.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    for f in [MODEL_FILE, LATEST_CHECKPOINT, "config.toml", "summary.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    assert!(checkpoint_path(&run, 2).is_file());
    let echoed = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(echoed.contains("mode = \"no_pose\""));
    assert!(echoed.contains("learning_rate"));

    assert_eq!(ws.ndf(&["train", "--mode", "no_pose"]).status.code(), Some(exit::EXISTS));
    ws.ok(&["train", "--mode", "no_pose", "--force"]);
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let ws = Workspace::with_scene();
    ws.ok(&["train", "--out", "straight"]);

    // An interrupted run: the log and checkpoint as of iteration 2.
    let cut = ws.path("cut");
    std::fs::create_dir_all(&cut).unwrap();
    std::fs::copy(checkpoint_path(&ws.path("straight"), 2), cut.join(LATEST_CHECKPOINT)).unwrap();
    std::fs::copy(ws.path("straight").join(LOG_FILE), cut.join(LOG_FILE)).unwrap();
    ws.ok(&["train", "--out", "cut", "--resume"]);

    assert_eq!(read(&cut.join(LOG_FILE)), read(&ws.path("straight").join(LOG_FILE)));
    assert_eq!(read(&cut.join(MODEL_FILE)), read(&ws.path("straight").join(MODEL_FILE)));
}

#[test]
fn training_output_is_independent_of_worker_count() {
    let ws = Workspace::with_scene();
    ws.ok(&["train", "--out", "w1", "--workers", "1"]);
    ws.ok(&["train", "--out", "w3", "--workers", "3"]);
    for f in [LOG_FILE, MODEL_FILE] {
        assert_eq!(read(&ws.path("w1").join(f)), read(&ws.path("w3").join(f)), "{f}");
    }
}

#[test]
fn render_paths_produce_finite_deterministic_images() {
    let ws = Workspace::with_scene();
    ws.ok(&["train"]);
    let ckpt = "runs/full/model.ndft";

    let listed = ws.ok(&["render", "--checkpoint", ckpt, "--frame", "1", "--camera", "3", "--out", "a"]);
    assert!(listed.contains("frame001_cam03.png"));
    let img = ndf::imaging::Image::load_png(&ws.path("a/frame001_cam03.png")).unwrap();
    assert_eq!((img.width, img.height), (24, 24));

    let joints = ndf::scene::load_dataset(&ws.path("data")).unwrap().model.joint_count();
    let mut rotations = vec![[0.0; 3]; joints];
    rotations[4] = [1.4, 0.0, 0.0];
    let pose = serde_json::json!({ "root_translation": [0.0, 0.0, 0.0], "joint_rotations": rotations });
    std::fs::write(ws.path("hand.json"), pose.to_string()).unwrap();
    let listed = ws.ok(&["render", "--checkpoint", ckpt, "--pose-file", "hand.json", "--out", "b"]);
    assert!(listed.contains("hand_cam00.png"));

    let bad = serde_json::json!({ "root_translation": [0.0, 0.0, 0.0], "joint_rotations": [[0.0, 0.0, 0.0]] });
    std::fs::write(ws.path("bad.json"), bad.to_string()).unwrap();
    let out = ws.ndf(&["render", "--checkpoint", ckpt, "--pose-file", "bad.json"]);
    assert_eq!(out.status.code(), Some(exit::DATA));

    for dir in ["o1", "o2"] {
        let listed = ws.ok(&["render", "--checkpoint", ckpt, "--novel", "0", "--orbit", "--out", dir, "--set", "render.write_pfm=true"]);
        assert_eq!(listed.lines().filter(|l| l.ends_with(".png")).count(), 8);
    }
    for i in 0..8 {
        let name = format!("novel00_orbit{i:02}.pfm");
        assert_eq!(read(&ws.path("o1").join(&name)), read(&ws.path("o2").join(&name)));
    }

    let out = ws.ndf(&["render", "--checkpoint", "missing.ndft"]);
    assert_eq!(out.status.code(), Some(exit::IO));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.ndft"));
}

#[test]
fn eval_ground_truth_reports_perfect_scores() {
    let ws = Workspace::with_scene();
    let table = ws.ok(&["eval", "--ground-truth-as-model", "--out", "gt.toml"]);
    assert!(table.contains("novel_view") && table.contains("novel_pose"));
    let reports = read_reports(&ws.path("gt.toml")).unwrap();
    assert_eq!(reports.len(), 2);
    for r in &reports {
        assert_eq!(r.mean_ssim, 1.0);
        assert_eq!(r.mean_psnr, f64::INFINITY);
        assert!(!r.images.is_empty());
    }
    assert_eq!(
        ws.ndf(&["eval", "--ground-truth-as-model", "--split", "sideways"]).status.code(),
        Some(exit::USAGE)
    );
}

#[test]
fn ablate_emits_one_row_per_mode_and_split() {
    let ws = Workspace::with_scene();
    let table = ws.ok(&["ablate", "--set", "train.iterations=2", "--set", "eval.stride=8"]);
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 10, "{table}");
    for (i, mode) in AblationMode::ALL.iter().enumerate() {
        for (j, split) in ["novel_view", "novel_pose"].iter().enumerate() {
            let cols: Vec<&str> = rows[2 * i + j].split_whitespace().collect();
            assert_eq!((cols[0], cols[1]), (mode.name(), *split));
            assert!(cols[3].parse::<f64>().unwrap().is_finite());
        }
    }
    assert!(ws.path("runs/ablate/ablation.txt").is_file());
    // Finished modes are reused on a re-run.
    let before = read(&ws.path("runs/ablate/full/model.ndft"));
    let again = ws.ok(&["ablate", "--set", "train.iterations=2", "--set", "eval.stride=8", "--modes", "full"]);
    assert_eq!(again.lines().count(), 3);
    assert_eq!(read(&ws.path("runs/ablate/full/model.ndft")), before);
}

#[test]
fn inspect_projection_lists_every_candidate() {
    let ws = Workspace::with_scene();
    let text = ws.ok(&["inspect-projection", "--frame", "0", "--camera", "0", "--pixel", "12", "12"]);
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 64);
    assert!(rows.iter().any(|r| r[9] == 1.0));
    for r in &rows {
        assert_eq!(r[9] == 1.0, r[7] < 0.1);
    }
    let out = ws.ndf(&["inspect-projection", "--pixel", "99", "0"]);
    assert_eq!(out.status.code(), Some(exit::USAGE));
}
