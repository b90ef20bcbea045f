use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use favbot_core::controller::MissionReport;
use favbot_core::kinematics::read_trajectory_csv;
use favbot_core::telemetry::TelemetryFrame;
use favbot_core::vision::import_params;

fn favbot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_favbot")).args(args).output().expect("spawn favbot")
}

fn repo(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel).to_string_lossy().into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn track(out: &Path, extra: &[&str]) -> Output {
    let (params, scen) = (repo("params/set1.toml"), repo("scenarios/static_star.toml"));
    let mut args = vec!["track", "--params", &params, "--scenario", &scen, "-o", s(out)];
    args.extend_from_slice(extra);
    favbot(&args)
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&favbot(&["--help"])), 0);
    assert_eq!(code(&favbot(&["--version"])), 0);
    let o = favbot(&["frobnicate"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&favbot(&["sweep", "--start", "abc"])), 1);
    assert_eq!(code(&favbot(&["track"])), 1);
}

#[test]
fn sweep_writes_a_complete_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sw");
    let o = favbot(&["sweep", "--start", "8", "--end", "10", "--duration", "3", "-o", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["characterization.csv", "calibration.csv", "run.json", "speed.svg", "omega.svg"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    for f in 8..=10 {
        let t = read_trajectory_csv(fs::File::open(out.join(format!("trajectories/{f:03}khz.csv"))).unwrap()).unwrap();
        assert_eq!(t.len(), 91);
    }
    let csv = fs::read_to_string(out.join("characterization.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "sweep");
    assert_eq!(run["config"][2]["start_khz"], 8);
    let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(leftovers.len(), 1, "{leftovers:?}");
}

#[test]
fn existing_output_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sw");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("keep"), "x").unwrap();
    let args = ["sweep", "--start", "5", "--end", "5", "--duration", "1", "-o", s(&out)];
    let o = favbot(&args);
    assert_eq!(code(&o), 2);
    assert!(out.join("keep").exists());
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(code(&favbot(&forced)), 0);
    assert!(!out.join("keep").exists() && out.join("characterization.csv").exists());
}

#[test]
fn bad_inputs_are_runtime_errors_and_leave_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let o = favbot(&["track", "--params", "/nonexistent.toml", "--scenario", &repo("scenarios/static_star.toml"), "-o", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent.toml"));
    assert!(!out.exists());
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "freq_khz,v_t\n1,2\n").unwrap();
    let o = favbot(&["--calibration", s(&bad), "scout", "-o", s(&out)]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&favbot(&["sweep", "--start", "50", "--end", "40", "-o", s(&out)])), 2);
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn track_outputs_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = track(out, &["--noise", "1", "--seed", "3"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["report.json", "trajectory.csv", "telemetry.jsonl"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs between identical runs");
    }
    for f in ["trajectory.svg", "params.toml", "scenario.toml", "calibration.csv", "run.json"] {
        assert!(a.join(f).is_file(), "{f}");
    }
    let report: MissionReport = serde_json::from_str(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.trajectory_csv_path.as_deref(), Some("trajectory.csv"));
    assert!(report.waypoints[0].reached);
    let traj = read_trajectory_csv(fs::File::open(a.join("trajectory.csv")).unwrap()).unwrap();
    assert!(traj.windows(2).all(|w| w[1].t > w[0].t));
    let frames: Vec<TelemetryFrame> = fs::read_to_string(a.join("telemetry.jsonl"))
        .unwrap()
        .lines()
        .map(|l| TelemetryFrame::from_json_line(l).unwrap())
        .collect();
    assert!(frames.windows(2).all(|w| w[1].t >= w[0].t));
    assert!(frames.len() > report.segments.len());

    // a different seed gives a different noisy run
    let c = dir.path().join("c");
    assert_eq!(code(&track(&c, &["--noise", "1", "--seed", "4"])), 0);
    assert_ne!(fs::read(a.join("trajectory.csv")).unwrap(), fs::read(c.join("trajectory.csv")).unwrap());
}

#[test]
fn exhausted_budget_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let o = track(&out, &["--max-cycles", "2"]);
    assert_eq!(code(&o), 3);
    let report: MissionReport = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.cycles, 2);
    assert!(!report.waypoints.iter().any(|h| h.reached));
}

#[test]
fn scout_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let o = favbot(&["scout", "--cycles", "4", "-o", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("scout.json")).unwrap()).unwrap();
    assert_eq!(r["cycles"].as_array().unwrap().len(), 4);
    assert!(r["net_displacement_cm"].as_f64().unwrap() < 1.0);
    assert!(out.join("heading.svg").is_file() && out.join("trajectory.csv").is_file());
}

#[test]
fn train_then_track_with_the_weights() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.toml");
    fs::write(&cfg, "batch_size = 16\nlearning_rate = 0.002\n").unwrap();
    let out = dir.path().join("tr");
    let o = favbot(&[
        "train", "--config", s(&cfg), "--dataset-size", "300", "--epochs", "2", "--seed", "5", "--save-dataset", "-o", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    import_params(&fs::read(out.join("weights.favw")).unwrap()).unwrap();
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    let resolved: toml::Value = toml::from_str(&fs::read_to_string(out.join("train_config.toml")).unwrap()).unwrap();
    assert_eq!(resolved["batch_size"].as_integer(), Some(16));
    assert_eq!(resolved["dataset_size"].as_integer(), Some(300));
    assert_eq!(resolved["seed"].as_integer(), Some(5));
    assert!(out.join("dataset").is_dir());

    // the weights load into the tracker; a barely trained model need not reach the target
    let weights: PathBuf = out.join("weights.favw");
    let t = dir.path().join("t");
    let o = track(&t, &["--weights", s(&weights), "--max-cycles", "5"]);
    assert!(matches!(code(&o), 0 | 3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(t.join("weights.favw").is_file());
}

#[test]
fn corrupt_weights_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.favw");
    fs::write(&w, b"FAVW\x01\x00").unwrap();
    let o = track(&dir.path().join("t"), &["--weights", s(&w)]);
    assert_eq!(code(&o), 2);
}
