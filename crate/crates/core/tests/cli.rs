use std::fmt::Write as _;
use std::path::Path;
use std::process::{Command, Output};

use psbt_core::cli::ExperimentConfig;
use psbt_core::gridmodel::{read_events_csv, GridSpec, RateGrid};
use psbt_core::Point;

fn psbt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psbt")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn default_config_round_trips() {
    let out = psbt(&["default-config"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = ExperimentConfig::from_toml(&text, Path::new(".")).unwrap();
    assert_eq!(cfg.planning.n, 6);
    assert_eq!(cfg.width, 50);
}

#[test]
fn invalid_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[planning]\nn = 0\n").unwrap();
    let out = psbt(&["plan", "--config", p(&cfg), "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n"));

    std::fs::write(&cfg, "[planning]\nunknown_key = 1\n").unwrap();
    let out = psbt(&["plan", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = psbt(&["plan", "--grid", p(&dir.path().join("nope.json")), "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn malformed_detection_log_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.csv");
    std::fs::write(&log, "time_s,robot_x,robot_y,person_x,person_y\n0,1,1,,\n1,1,x,,\n").unwrap();
    let out = psbt(&["train", "--detections", p(&log), "--out", p(&dir.path().join("g.json"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

/// Static robot observing simulated arrivals: the learned rates over the
/// detection disc must come back close to the truth.
#[test]
fn train_plan_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let spec = GridSpec::default();
    let robot = Point::new(10.5, 12.5);
    let truth = RateGrid::from_rate_fn(spec, |_, c| {
        if c.distance(&robot) <= 2.0 {
            0.05
        } else if c.distance(&Point::new(30.5, 8.5)) <= 3.0 {
            0.02
        } else {
            1e-4
        }
    })
    .unwrap();
    let truth_path = dir.path().join("truth.json");
    std::fs::write(&truth_path, truth.to_json()).unwrap();

    let events_path = dir.path().join("events.csv");
    let horizon = 20_000.0;
    let out = psbt(&[
        "arrivals", "--grid", p(&truth_path), "--horizon", "20000", "--seed", "11", "--out", p(&events_path),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let events = read_events_csv(std::fs::File::open(&events_path).unwrap()).unwrap();

    // replay as a detection log: one empty row per second plus one row per
    // detected person
    let mut log = String::from("time_s,robot_x,robot_y,person_x,person_y\n");
    let mut by_time = std::collections::BTreeMap::<u64, Vec<Point>>::new();
    for e in &events {
        let c = spec.cell_center(e.cell());
        if c.distance(&robot) <= 2.0 {
            for _ in 0..e.count {
                by_time.entry(e.time_s as u64).or_default().push(c);
            }
        }
    }
    for t in 0..horizon as u64 {
        writeln!(log, "{t},{},{},,", robot.x, robot.y).unwrap();
        for q in by_time.get(&t).into_iter().flatten() {
            writeln!(log, "{t}.5,{},{},{},{}", robot.x, robot.y, q.x, q.y).unwrap();
        }
    }
    let log_path = dir.path().join("log.csv");
    std::fs::write(&log_path, log).unwrap();
    let learned_path = dir.path().join("learned.json");
    let out = psbt(&["train", "--detections", p(&log_path), "--out", p(&learned_path)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let learned = RateGrid::from_json(&std::fs::read_to_string(&learned_path).unwrap()).unwrap();
    let disc: Vec<_> = spec.cells().filter(|&c| spec.cell_center(c).distance(&robot) <= 2.0).collect();
    let total: f64 = disc.iter().map(|&c| learned.rate(c)).sum();
    let expected = 0.05 * disc.len() as f64;
    assert!((total - expected).abs() / expected < 0.05, "learned {total}, truth {expected}");
    for &c in &disc {
        assert!((learned.rate(c) - 0.05).abs() / 0.05 < 0.15, "cell {c:?}: {}", learned.rate(c));
        assert_eq!(learned.cell(c).beta, 1.0 + horizon);
    }
    // cells never observed keep the prior
    assert_eq!(learned.cell(psbt_core::gridmodel::CellIndex::new(40, 20)).alpha, 1.0);

    let out_dir = dir.path().join("out");
    let help = format!("{},{}", robot.x, robot.y);
    let out = psbt(&[
        "plan", "--grid", p(&truth_path), "--help-location", &help, "--out-dir", p(&out_dir), "--all-candidates",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let plan: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["strategy"], "PSBT");
    assert_eq!(plan["candidates"]["total"].as_u64().unwrap(), 730);
    assert!(plan.get("planning_time_s").is_none());
    assert!(out_dir.join("p_curve.csv").exists());

    let out = psbt(&[
        "evaluate",
        "--grid",
        p(&truth_path),
        "--truth",
        p(&truth_path),
        "--help-location",
        &help,
        "--out-dir",
        p(&out_dir),
        "--runs",
        "300",
        "--strategies",
        "PSBT,W,GM",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("PSBT,300,"));
    let runs = std::fs::read_to_string(out_dir.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 3 * 300);
}

#[test]
fn plan_with_a_baseline_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.json");
    std::fs::write(&grid, RateGrid::new(GridSpec::default()).unwrap().to_json()).unwrap();
    let out = psbt(&["plan", "--strategy", "W", "--grid", p(&grid), "--out-dir", p(dir.path()), "--record-timing"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let plan: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["strategy"], "W");
    assert_eq!(plan["label"], "W0, Home");
    assert!(plan["planning_time_s"].as_f64().is_some());

    let out = psbt(&["plan", "--strategy", "XYZ"]);
    assert_eq!(out.status.code(), Some(2));
}
