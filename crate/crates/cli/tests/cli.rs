use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3

[synth]
height = 16
width = 16
train_videos = 2
test_videos = 2
frames_per_video = 24
sprites = 2
disk_radius = [2.0, 3.0]
square_side = [5.0, 6.0]
speed = [0.5, 1.0]
event_frames = [5, 7]

[train]
epochs = 1
batch_size = 4
learning_rate = 1e-3

[model]
base_channels = 4
depth = 2
"#;

fn ddl_vad(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ddl-vad"));
    for a in args {
        cmd.arg(a);
    }
    cmd.env_remove("DDL_VAD_THREADS").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    let data = root.join("data");
    let o = ddl_vad(&[&"synth", &"--config", &config, &"--out", &data]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    Fixture { _dir: dir, root, config, data }
}

fn train(f: &Fixture, mode: &str, out: &Path) -> Output {
    ddl_vad(&[&"train", &"--config", &f.config, &"--mode", &mode, &"--data", &f.data, &"--out", &out])
}

#[test]
fn synth_is_deterministic_and_prints_the_manifest() {
    let f = fixture();
    let again = f.root.join("again");
    let o = ddl_vad(&[&"synth", &"--config", &f.config, &"--out", &again]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("manifest.json"));
    assert_eq!(
        std::fs::read(f.data.join("manifest.json")).unwrap(),
        std::fs::read(again.join("manifest.json")).unwrap()
    );
}

#[test]
fn unknown_config_key_exits_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[synth]\nframe_rate = 30\n").unwrap();
    let o = ddl_vad(&[&"synth", &"--config", &cfg, &"--out", &dir.path().join("d")]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("frame_rate"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = ddl_vad(&[&"synth", &"--config", &dir.path().join("nope.toml"), &"--out", &dir.path().join("d")]);
    assert_eq!(code(&o), 3);
}

#[test]
fn missing_data_flag_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = ddl_vad(&[&"train", &"--mode", &"ddl", &"--out", &dir.path().join("r")]);
    assert_eq!(code(&o), 2);
}

#[test]
fn even_median_window_exits_2() {
    let f = fixture();
    let run = f.root.join("run");
    assert_eq!(code(&train(&f, "none", &run)), 0);
    let ck = run.join("checkpoint_final.ckpt");
    let o = ddl_vad(&[&"score", &"--checkpoint", &ck, &"--data", &f.data, &"--out", &f.root.join("s"), &"--median", &"4"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn bad_thread_count_exits_2() {
    let f = fixture();
    let o = Command::new(env!("CARGO_BIN_EXE_ddl-vad"))
        .args(["train", "--mode", "none"])
        .arg("--data")
        .arg(&f.data)
        .arg("--out")
        .arg(f.root.join("r"))
        .env("DDL_VAD_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn mode_flag_controls_the_sigma_trace() {
    let f = fixture();
    let sdl = f.root.join("sdl");
    assert_eq!(code(&train(&f, "sdl", &sdl)), 0);
    let trace = std::fs::read_to_string(sdl.join("sigma_trace.csv")).unwrap();
    let sigmas: Vec<f64> = trace.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert!(sigmas.len() > 1);
    assert!(sigmas.iter().all(|&s| s == 0.5));

    let none = f.root.join("none");
    assert_eq!(code(&train(&f, "none", &none)), 0);
    assert!(!none.join("sigma_trace.csv").exists());
    assert!(none.join("train_log.csv").exists());
}

#[test]
fn run_config_echo_reproduces_the_run() {
    let f = fixture();
    let a = f.root.join("a");
    assert_eq!(code(&train(&f, "ddl", &a)), 0);
    let b = f.root.join("b");
    let echo = a.join("run_config.json");
    let o = ddl_vad(&[&"train", &"--config", &echo, &"--data", &f.data, &"--out", &b]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for file in ["sigma_trace.csv", "train_log.csv", "checkpoint_final.ckpt"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn eval_with_missing_labels_exits_3() {
    let f = fixture();
    let run = f.root.join("run");
    assert_eq!(code(&train(&f, "none", &run)), 0);
    let scores = f.root.join("scores");
    let o = ddl_vad(&[&"score", &"--checkpoint", &run.join("checkpoint_final.ckpt"), &"--data", &f.data, &"--out", &scores]);
    assert_eq!(code(&o), 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.data.join("manifest.json")).unwrap()).unwrap();
    let labels = manifest["test"][0]["labels"].as_str().unwrap();
    std::fs::remove_file(f.data.join(labels)).unwrap();
    let o = ddl_vad(&[&"eval", &"--scores", &scores, &"--data", &f.data]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn eval_reports_scene_median() {
    let f = fixture();
    let run = f.root.join("run");
    assert_eq!(code(&train(&f, "none", &run)), 0);
    let scores = f.root.join("scores");
    let o = ddl_vad(&[&"score", &"--checkpoint", &run.join("checkpoint_final.ckpt"), &"--data", &f.data, &"--out", &scores]);
    assert_eq!(code(&o), 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.data.join("manifest.json")).unwrap()).unwrap();
    let ids: Vec<String> =
        manifest["test"].as_array().unwrap().iter().map(|v| v["id"].as_str().unwrap().to_string()).collect();
    let scenes = f.root.join("scenes.json");
    std::fs::write(&scenes, serde_json::json!({"A": [ids[0]], "B": [ids[1]]}).to_string()).unwrap();
    let out = f.root.join("eval.json");
    let o = ddl_vad(&[&"eval", &"--scores", &scores, &"--data", &f.data, &"--scene-map", &scenes, &"--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let a = report["per_scene_auc"]["A"].as_f64().unwrap();
    let b = report["per_scene_auc"]["B"].as_f64().unwrap();
    assert!((report["scene_median_auc"].as_f64().unwrap() - (a + b) / 2.0).abs() < 1e-12);
}

#[test]
fn ablate_writes_a_two_by_three_table() {
    let f = fixture();
    let out = f.root.join("ablate");
    let o = ddl_vad(&[&"ablate", &"--config", &f.config, &"--data", &f.data, &"--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = std::fs::read_to_string(out.join("ablation_table.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "variant,without DDL,with SDL,with DDL");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0][0], rows[1][0]), ("unet_baseline", "c3dsu"));
    let cells: Vec<f64> = rows.iter().flat_map(|r| r[1..].iter().map(|c| c.parse::<f64>().unwrap())).collect();
    assert_eq!(cells.len(), 6);
    assert!(cells.iter().all(|c| (0.0..=1.0).contains(c)));
}

#[test]
fn report_needs_run_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = ddl_vad(&[&"report", &"--run", &dir.path().join("missing"), &"--out", &dir.path().join("r")]);
    assert_eq!(code(&o), 3);
}

#[test]
fn report_emits_sigma_plot_only_with_a_weight() {
    let f = fixture();
    for (mode, plot) in [("ddl", true), ("none", false)] {
        let run = f.root.join(mode);
        assert_eq!(code(&train(&f, mode, &run)), 0);
        let out = f.root.join(format!("report-{mode}"));
        let o = ddl_vad(&[&"report", &"--run", &run, &"--out", &out]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert_eq!(out.join("sigma_trace.png").exists(), plot, "{mode}");
        assert_eq!(std::fs::read_dir(out.join("panels")).unwrap().count(), 2);
        assert!(out.join("summary.txt").exists());
    }
}
