use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gaple::gridhouse::parse_layout;

const SMALL: &str = r#"
seed = 5

[houses]
width = 11
height = 11
rooms = 2
room_min = 3
room_max = 4
objects = 2

[render]
width = 32
height = 32

[perception]
epochs = 1
sample_cap = 20

[policy]
max_env_steps = 3000
log_interval = 1000
checkpoint_every = 1000

[eval]
n_starts = 5
cap = 200

[analysis]
sample_cap = 300

[analysis.houses]
count = 1
"#;

fn gaple(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaple"))
        .args(args)
        .env_remove("GAPLE_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = gaple(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn pipeline(config: &Path, out: &Path) {
    let (c, o) = (config.to_str().unwrap(), out.to_str().unwrap());
    for cmd in ["gen-houses", "train-perception", "train-policy", "eval", "analyze"] {
        ok(&["--config", c, "--out-dir", o, cmd]);
    }
    let layout = out.join("houses/house_00.txt");
    let house = parse_layout(&fs::read_to_string(&layout).unwrap()).unwrap();
    let (x, y) = house.floor_cells()[0];
    let pose = format!("{x},{y},E");
    ok(&["--config", c, "--out-dir", o, "render", "--layout", layout.to_str().unwrap(), "--pose", &pose]);
}

#[test]
fn smoke_run_produces_all_artifacts_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(&cfg, &a);
    pipeline(&cfg, &b);
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    for name in [
        "houses/house_00.txt",
        "perception.ckpt",
        "perception_loss.csv",
        "perception_metrics.csv",
        "policy.ckpt",
        "train_log.csv",
        "train_summary.csv",
        "pairs.csv",
        "checkpoints/policy_000001000.ckpt",
        "eval_train.csv",
        "eval_random_train.csv",
        "analysis_summary.csv",
        "curve_depth10_house00.csv",
        "curve_gray10_house00.csv",
        "semantic.pgm",
        "depth.pgm",
        "rgb.ppm",
        "labels.csv",
    ] {
        assert!(sa.contains_key(Path::new(name)), "missing {name}");
    }
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert!(v == &sb[k], "{} differs between runs", k.display());
    }
    let rgb = &sa[Path::new("rgb.ppm")];
    assert!(rgb.starts_with(b"P6\n32 32\n255\n"));
    assert_eq!(rgb.len(), b"P6\n32 32\n255\n".len() + 32 * 32 * 3);
    let depth = &sa[Path::new("depth.pgm")];
    assert_eq!(depth.len(), b"P5\n32 32\n65535\n".len() + 32 * 32 * 2);
}

#[test]
fn seed_flag_changes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let c = cfg.to_str().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["--config", c, "--out-dir", a.to_str().unwrap(), "--seed", "1", "gen-houses"]);
    ok(&["--config", c, "--out-dir", b.to_str().unwrap(), "--seed", "2", "gen-houses"]);
    assert_ne!(fs::read(a.join("houses/house_00.txt")).unwrap(), fs::read(b.join("houses/house_00.txt")).unwrap());
}

#[test]
fn unknown_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[policy]\nlerning_rate = 0.1\n");
    let out = gaple(&["--config", cfg.to_str().unwrap(), "--out-dir", tmp.path().to_str().unwrap(), "gen-houses"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("lerning_rate"), "{err}");
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn eval_without_checkpoint_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = gaple(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        tmp.path().to_str().unwrap(),
        "eval",
        "--checkpoint",
        "no/such/policy.ckpt",
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("file not found") && err.contains("no/such/policy.ckpt"), "{err}");
}

#[test]
fn objects_setting_reports_held_out_gap() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "[render]\nwidth = 32\nheight = 32\n[policy]\nmax_env_steps = 2000\n[eval]\nn_starts = 5\ncap = 100\n";
    let cfg = write_config(tmp.path(), text);
    let (c, o) = (cfg.to_str().unwrap(), tmp.path().to_str().unwrap());
    ok(&["--config", c, "--out-dir", o, "--setting", "objects", "train-policy"]);
    ok(&["--config", c, "--out-dir", o, "--setting", "objects", "eval"]);
    let pairs = fs::read_to_string(tmp.path().join("pairs.csv")).unwrap();
    assert_eq!(pairs.lines().filter(|l| l.contains(",train,")).count(), 3);
    assert_eq!(pairs.lines().filter(|l| l.contains(",test,")).count(), 2);
    let gap = fs::read_to_string(tmp.path().join("gap.csv")).unwrap();
    assert!(gap.starts_with("k,policy_gap,random_gap\n"));
    assert_eq!(gap.lines().count(), 6);
    assert!(tmp.path().join("eval_test.csv").exists());
}

#[test]
fn predicted_observations_use_perception_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}\n").replace("[policy]\n", "[policy]\nobservation = \"predicted\"\n");
    let cfg = write_config(tmp.path(), &text);
    let (c, o) = (cfg.to_str().unwrap(), tmp.path().to_str().unwrap());
    let out = gaple(&["--config", c, "--out-dir", o, "train-policy"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("perception.ckpt"));
    ok(&["--config", c, "--out-dir", o, "train-perception"]);
    ok(&["--config", c, "--out-dir", o, "train-policy"]);
}

#[test]
fn bad_pose_and_bad_workers_env() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().to_str().unwrap();
    ok(&["--out-dir", o, "gen-houses"]);
    let layout = tmp.path().join("houses/house_00.txt");
    let out = gaple(&["--out-dir", o, "render", "--layout", layout.to_str().unwrap(), "--pose", "0,0,N"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not on a floor cell"));
    let out = Command::new(env!("CARGO_BIN_EXE_gaple"))
        .args(["--out-dir", o, "gen-houses"])
        .env("GAPLE_THREADS", "many")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("GAPLE_THREADS"));
}
