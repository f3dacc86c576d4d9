//! End-to-end runs of the `charflow` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use charflow::analytic::SceneConfig;
use charflow::io::{read_pathlines, Grid};
use charflow::radiance::RenderSettings;
use sha2::{Digest, Sha256};

fn charflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_charflow")).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = charflow(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn sha(path: &Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}

/// Fit-only run on a rigid rotation about z.
const ROTATION: &str = r#"
[model]
width = 64

[fit]
iters = 4000
lr = 2e-3
lr_final = 1e-5
batch = 256
flow = { kind = "rigid_rotation", axis = [0.0, 0.0, 1.0], omega = 2.0, center = [0.0, 0.0, 0.0] }
weights = { supervision = 30.0 }

[train]
stage1_iters = 0
stage2_iters = 0

[eval]
samples = 128
velocity_grid = [8, 8, 8, 4]

[pathlines]
n = 60
t0 = 0.0
t1 = 0.25
steps = 10
"#;

#[test]
fn pathlines_of_a_fitted_rotation_stay_on_circles() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", ROTATION);
    let cfg = cfg.to_str().unwrap();
    run_ok(&["train", "--config", cfg, "--seed", "3"]);
    run_ok(&["pathlines", "--config", cfg, "--seed", "3"]);
    let csv = std::fs::File::open(dir.path().join("charflow-out/pathlines.csv")).unwrap();
    let pts = read_pathlines(csv).unwrap();
    assert_eq!(pts.len(), 60 * 11);

    let mut drifts = Vec::new();
    for id in 0..60 {
        let line: Vec<_> = pts.iter().filter(|p| p.id == id).collect();
        let r0 = line[0].x.hypot(line[0].y);
        if r0 < 0.25 {
            continue;
        }
        let worst = line.iter().map(|p| (p.x.hypot(p.y) - r0).abs()).fold(0.0f64, f64::max);
        drifts.push(worst / r0);
    }
    let mean = drifts.iter().sum::<f64>() / drifts.len() as f64;
    assert!(drifts.len() > 20);
    assert!(mean < 0.01, "mean relative radius drift {mean}");
}

#[test]
fn eval_is_read_only_and_finite_on_an_untrained_model() {
    let dir = tempfile::tempdir().unwrap();
    let text = ROTATION.replace("iters = 4000", "iters = 0");
    let cfg = write(dir.path(), "run.toml", &text);
    let cfg = cfg.to_str().unwrap();
    run_ok(&["train", "--config", cfg]);
    let ck = dir.path().join("charflow-out/checkpoint.chk");
    let before = sha(&ck);
    let report = run_ok(&["eval", "--config", cfg, "--threads", "1"]);
    assert_eq!(sha(&ck), before);
    assert!(report.contains("velocity relative L2 error"));
    let csv = std::fs::read_to_string(dir.path().join("charflow-out/report.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(v.is_finite(), "{line}");
    }
}

#[test]
fn export_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let text = ROTATION.replace("iters = 4000", "iters = 0") + "\n[export]\nwhat = \"vorticity\"\nres = [4, 3, 2]\nt = 0.3\n";
    let cfg = write(dir.path(), "run.toml", &text);
    let cfg = cfg.to_str().unwrap();
    run_ok(&["train", "--config", cfg]);
    run_ok(&["export", "--config", cfg]);
    let a = Grid::load(&dir.path().join("charflow-out/vorticity_t0.3000.chgr")).unwrap();
    let ck = charflow::nn::Checkpoint::load(&dir.path().join("charflow-out/checkpoint.chk")).unwrap();
    let (model, _) = charflow::radiance::SceneModel::from_checkpoint(&ck).unwrap();
    let b = charflow::io::export_grid(&model, charflow::io::ExportKind::Vorticity, [4, 3, 2], 0.3).unwrap();
    assert_eq!((a.dims, a.channels), (b.dims, b.channels));
    assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
}

fn tiny_scene(dir: &Path) -> PathBuf {
    let mut sc = SceneConfig::mini_plume();
    sc.frames = 3;
    sc.cameras.count = 2;
    sc.cameras.width = 8;
    sc.cameras.height = 8;
    sc.cameras.holdout = vec![[10.0, 10.0]];
    sc.render = RenderSettings { dynamic_samples: 12, static_samples: 12, ..RenderSettings::default() };
    write(dir, "scene.toml", &toml::to_string(&sc).unwrap())
}

const TINY_TRAIN: &str = r#"
[scene]
config = "scene.toml"

[model]
width = 8
obstacle = "learned"
static_width = 8

[train]
stage1_iters = 2
stage2_iters = 2
batch = { rays = 16, physics = 16, mapping = 16, boundary = 16 }
render = { dynamic_samples = 6, static_samples = 6, background = [0.0, 0.0, 0.0] }

[eval]
samples = 32
intervals = [1.0, 5.0]
velocity_grid = [4, 4, 4, 2]
density_res = 4
render = { dynamic_samples = 6, static_samples = 6, background = [0.0, 0.0, 0.0] }
"#;

#[test]
fn single_thread_training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    tiny_scene(dir.path());
    let cfg = write(dir.path(), "run.toml", TINY_TRAIN);
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&["train", "--config", cfg, "--seed", "5", "--threads", "1", "--out", a.to_str().unwrap()]);
    run_ok(&["train", "--config", cfg, "--seed", "5", "--threads", "1", "--out", b.to_str().unwrap()]);
    assert_eq!(sha(&a.join("checkpoint.chk")), sha(&b.join("checkpoint.chk")));
    let log = std::fs::read_to_string(a.join("losses.csv")).unwrap();
    assert!(log.lines().any(|l| l.starts_with("3,boundary_u,")));

    let report = run_ok(&["eval", "--config", cfg, "--out", a.to_str().unwrap()]);
    assert!(report.contains("held-out view"));
    let csv = std::fs::read_to_string(a.join("report.csv")).unwrap();
    assert!(csv.contains("loss.image"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[train]\nlearning_rate = 1.0\n");
    let out = charflow(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    let cfg = write(dir.path(), "zero.toml", "[train]\nshards = 0\n");
    assert_eq!(charflow(&["train", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    let missing = dir.path().join("missing.toml");
    assert_eq!(charflow(&["eval", "--config", missing.to_str().unwrap()]).status.code(), Some(2));

    let good = write(dir.path(), "fit.toml", "[fit]\niters = 1\n");
    let out = charflow(&["train", "--config", good.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "fit without a flow: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn numeric_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = ROTATION.replace("lr = 2e-3", "lr = 1e300").replace("iters = 4000", "iters = 5");
    let cfg = write(dir.path(), "run.toml", &text);
    let out = charflow(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
