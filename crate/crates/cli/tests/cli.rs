use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use shiftrisk::estimation::{conditional_accuracy, LabeledSample};
use shiftrisk::monitor::MonitorConfig;

const POLYP: &str = include_str!("../../../configs/polyp.toml");

fn shiftrisk(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shiftrisk"))
        .args(args)
        .current_dir(dir)
        .env_remove("SHIFTRISK_OUTPUT")
        .env_remove("SHIFTRISK_JOBS")
        .output()
        .expect("binary runs")
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().to_path_buf();
    fs::write(path.join("polyp.toml"), POLYP).unwrap();
    (dir, path)
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn simulate_writes_one_row_per_batch() {
    let (_guard, dir) = setup();
    fs::write(dir.join("short.toml"), "[stream]\nhorizon = 250\n").unwrap();
    let out = shiftrisk(&dir, &["-c", "polyp.toml", "-c", "short.toml", "-o", "trace.csv", "simulate"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(dir.join("trace.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("index,is_ood,"));
    assert_eq!(lines.count(), 250);
}

#[test]
fn simulate_rejects_out_of_range_rate() {
    let (_guard, dir) = setup();
    fs::write(dir.join("bad.toml"), "[stream]\nshift_rate = 1.3\n").unwrap();
    let out = shiftrisk(&dir, &["-c", "polyp.toml", "-c", "bad.toml", "-o", "trace.csv", "simulate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("shift_rate"), "{}", stderr(&out));
    assert!(!dir.join("trace.csv").exists());
}

#[test]
fn simulate_fills_accuracies_from_oracle() {
    let (_guard, dir) = setup();
    let config = r#"
schema_version = 1

[oracle]
ind = 0.9
folds = [{ name = "a", accuracy = 0.5 }, { name = "b", accuracy = 0.2 }]

[monitor]
topology = "base"
profile = { tpr = 0.8, tnr = 0.9 }
capacity = 20

[stream]
shift_rate = 0.4
horizon = 50
seed = 3
"#;
    fs::write(dir.join("noacc.toml"), config).unwrap();
    let out = shiftrisk(&dir, &["-c", "noacc.toml", "-o", "t.json", "--format", "structured", "simulate"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("t.json")).unwrap()).unwrap();
    assert_eq!(doc["schema_version"], 1);
    assert_eq!(doc["records"].as_array().unwrap().len(), 50);
}

#[test]
fn output_path_from_environment() {
    let (_guard, dir) = setup();
    fs::write(dir.join("short.toml"), "[stream]\nhorizon = 10\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_shiftrisk"))
        .args(["-c", "polyp.toml", "-c", "short.toml", "simulate"])
        .current_dir(&dir)
        .env("SHIFTRISK_OUTPUT", "env.csv")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read_to_string(dir.join("env.csv")).unwrap().lines().count(), 11);
}

fn perfect_monitor(dir: &Path) {
    fs::write(
        dir.join("perfect.toml"),
        "[monitor]\nprofile = { tpr = 1.0, tnr = 1.0 }\n",
    )
    .unwrap();
}

#[test]
fn all_negative_stream_with_perfect_detector() {
    let (_guard, dir) = setup();
    perfect_monitor(&dir);
    fs::write(dir.join("v.txt"), "0\n".repeat(150)).unwrap();
    let out = shiftrisk(
        &dir,
        &["-c", "polyp.toml", "-c", "perfect.toml", "--format", "structured", "monitor", "-i", "v.txt"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 150);
    let last: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(last["p_hat"], 0.0);
    assert_eq!(last["alert"], false);
    assert_eq!(last["using_prior"], false);
}

fn rv_risk_by_hand(p: f64, tpr: f64, tnr: f64, a_ind: f64, a_ood: f64) -> f64 {
    let (c, n, u, f) = (635.0, 1905.0, 1955.0, 6735.0);
    let model = |a: f64| a * c + (1.0 - a) * f;
    (1.0 - p) * (tnr * model(a_ind) + (1.0 - tnr) * u) + p * (tpr * n + (1.0 - tpr) * model(a_ood))
}

#[test]
fn stream_above_threshold_raises_alert() {
    let (_guard, dir) = setup();
    // forward bias of p = 1 under (0.95, 0.55) is 0.95: 19 positives in 20
    let block = "1\n".repeat(19) + "0\n";
    fs::write(dir.join("v.txt"), block.repeat(10)).unwrap();
    let out = shiftrisk(&dir, &["-c", "polyp.toml", "--format", "structured", "monitor", "-i", "v.txt"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let last: serde_json::Value = serde_json::from_str(stdout(&out).lines().last().unwrap()).unwrap();
    assert!((last["raw_mean"].as_f64().unwrap() - 0.95).abs() < 1e-9);
    assert!((last["p_hat"].as_f64().unwrap() - 1.0).abs() < 1e-8);
    let want = rv_risk_by_hand(1.0, 0.95, 0.55, 0.90, 0.5933333333333334);
    assert!((last["expected_risk"].as_f64().unwrap() - want).abs() < 1e-3, "{want}");
    assert!(want > 1925.0);

    // p = 0.2 gives 0.55, which stays below the threshold
    let block = "1\n".repeat(11) + &"0\n".repeat(9);
    fs::write(dir.join("calm.txt"), block.repeat(10)).unwrap();
    let out = shiftrisk(&dir, &["-c", "polyp.toml", "monitor", "-i", "calm.txt"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(rv_risk_by_hand(0.2, 0.95, 0.55, 0.90, 0.5933333333333334) < 1925.0);
}

#[test]
fn malformed_verdict_names_line() {
    let (_guard, dir) = setup();
    fs::write(dir.join("v.txt"), "0\n1\nyes\n0\n").unwrap();
    let out = shiftrisk(&dir, &["-c", "polyp.toml", "monitor", "-i", "v.txt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn uninformative_detector_exits_immediately() {
    let (_guard, dir) = setup();
    fs::write(dir.join("coin.toml"), "[monitor]\nprofile = { tpr = 0.5, tnr = 0.52 }\n").unwrap();
    fs::write(dir.join("v.txt"), "0\n").unwrap();
    let out = shiftrisk(&dir, &["-c", "polyp.toml", "-c", "coin.toml", "monitor", "-i", "v.txt"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stdout(&out).is_empty());
    assert!(stderr(&out).contains("uninformative"), "{}", stderr(&out));
}

#[test]
fn snapshot_resume_matches_uninterrupted_run() {
    let (_guard, dir) = setup();
    let verdicts: String = (0..300).map(|i| if i % 3 == 0 { "1\n" } else { "0\n" }).collect();
    let (head, tail) = verdicts.split_at(2 * 170);
    fs::write(dir.join("all.txt"), &verdicts).unwrap();
    fs::write(dir.join("head.txt"), head).unwrap();
    fs::write(dir.join("tail.txt"), tail).unwrap();
    let full = shiftrisk(&dir, &["-c", "polyp.toml", "monitor", "-i", "all.txt"]);
    let first = shiftrisk(&dir, &["-c", "polyp.toml", "monitor", "-i", "head.txt", "--snapshot", "m.snap"]);
    let second = shiftrisk(&dir, &["monitor", "-i", "tail.txt", "--resume", "m.snap"]);
    assert!(full.status.success() && first.status.success() && second.status.success());
    let (full, second) = (stdout(&full), stdout(&second));
    let resumed: Vec<&str> = second.lines().skip(1).collect();
    let expected: Vec<&str> = full.lines().skip(1 + 170).collect();
    assert_eq!(resumed, expected);
}

fn labeled_rows() -> Vec<(bool, Option<bool>, bool)> {
    (0..97)
        .map(|i| {
            let is_ood = i % 3 == 0;
            let verdict = match i % 7 {
                0 => None,
                1 | 2 => Some(!is_ood),
                _ => Some(is_ood),
            };
            (is_ood, verdict, (i * 5) % 11 < 8)
        })
        .collect()
}

fn labeled_csv(rows: &[(bool, Option<bool>, bool)]) -> String {
    let flag = |b: bool| if b { "1" } else { "0" };
    let mut text = String::from("id,is_ood,verdict,is_correct\n");
    for (i, (o, v, c)) in rows.iter().enumerate() {
        text.push_str(&format!("{i},{},{},{}\n", flag(*o), v.map_or("", flag), flag(*c)));
    }
    text
}

#[test]
fn calibration_round_trips_bit_exactly() {
    let (_guard, dir) = setup();
    let rows = labeled_rows();
    fs::write(dir.join("labeled.csv"), labeled_csv(&rows)).unwrap();
    let out = shiftrisk(&dir, &["-o", "fragment.toml", "calibrate", "-i", "labeled.csv"]);
    assert!(out.status.success(), "{}", stderr(&out));

    let out = shiftrisk(&dir, &["-c", "polyp.toml", "-c", "fragment.toml", "config"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let merged: toml::Table = stdout(&out).parse().unwrap();
    let config: MonitorConfig = merged["monitor"].clone().try_into().unwrap();

    let samples: Vec<LabeledSample> = rows
        .iter()
        .map(|&(is_ood, verdict, is_correct)| LabeledSample {
            is_ood,
            verdict,
            is_correct,
        })
        .collect();
    let want = conditional_accuracy(&samples);
    // the fragment lists all six partitions, replacing the base accuracies
    assert_eq!(config.accuracy_table(), want);

    let (ood, flagged) = rows
        .iter()
        .filter(|r| r.0 && r.1.is_some())
        .fold((0, 0), |(n, k), r| (n + 1, k + u32::from(r.1 == Some(true))));
    assert_eq!(config.profile.tpr(), flagged as f64 / ood as f64);

    fs::write(dir.join("v.txt"), "0\n1\n0\n").unwrap();
    let out = shiftrisk(&dir, &["-c", "polyp.toml", "-c", "fragment.toml", "monitor", "-i", "v.txt"]);
    // the synthetic labels make a poor model, so an alert is fine here
    assert!(matches!(out.status.code(), Some(0 | 3)), "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().count(), 1 + 3);
}

#[test]
fn perfect_labels_calibrate_to_perfect_profile() {
    let (_guard, dir) = setup();
    let rows: Vec<_> = (0..40).map(|i| (i % 2 == 0, Some(i % 2 == 0), true)).collect();
    fs::write(dir.join("labeled.csv"), labeled_csv(&rows)).unwrap();
    let out = shiftrisk(&dir, &["calibrate", "-i", "labeled.csv"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let fragment: toml::Table = stdout(&out).parse().unwrap();
    assert_eq!(fragment["monitor"]["profile"]["tpr"].as_float(), Some(1.0));
    assert_eq!(fragment["monitor"]["profile"]["tnr"].as_float(), Some(1.0));
}

#[test]
fn calibration_errors_name_the_problem() {
    let (_guard, dir) = setup();
    fs::write(dir.join("nocol.csv"), "verdict,is_correct\n1,1\n").unwrap();
    let out = shiftrisk(&dir, &["calibrate", "-i", "nocol.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("is_ood"), "{}", stderr(&out));

    fs::write(dir.join("oneclass.csv"), "is_ood,verdict,is_correct\n0,0,1\n0,1,1\n").unwrap();
    let out = shiftrisk(&dir, &["calibrate", "-i", "oneclass.csv"]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(dir.join("junk.csv"), "is_ood,verdict,is_correct\n0,0,1\n1,maybe,1\n").unwrap();
    let out = shiftrisk(&dir, &["calibrate", "-i", "junk.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

const SMALL_SWEEPS: &str = r#"
[sweep.grid]
detectors = { grid = { step = 0.1, ba_floor = 0.5 } }
trace_lengths = [20]
horizon = 40
seeds_per_cell = 2
master_seed = 5

[sweep.risk_curve]
threshold = 1925.0
seeds = 2
horizon = 200

[sweep.cba]
threshold = 1925.0
classifier_axis = [0.8, 0.9, 1.0]
detector_axis = [0.6, 0.7, 0.8, 0.9]
"#;

#[test]
fn rate_error_sweep_covers_grid() {
    let (_guard, dir) = setup();
    fs::write(dir.join("sweeps.toml"), SMALL_SWEEPS).unwrap();
    let out = shiftrisk(&dir, &["-c", "polyp.toml", "-c", "sweeps.toml", "-o", "out", "sweep", "rate-error"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = fs::read_to_string(dir.join("out/rate-error.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 55 * 9 * 2);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("out/rate-error.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["schema_version"], 1);
    assert_eq!(meta["master_seed"], 5);
    assert_eq!(meta["summary"]["cells"], 55 * 9 * 2);
    assert_eq!(meta["summary"]["by_balanced_accuracy"].as_array().unwrap().len(), 10);
}

#[test]
fn seed_flag_overrides_master_seed() {
    let (_guard, dir) = setup();
    fs::write(dir.join("sweeps.toml"), SMALL_SWEEPS).unwrap();
    let out = shiftrisk(
        &dir,
        &["-c", "polyp.toml", "-c", "sweeps.toml", "-o", "out", "--seed", "77", "sweep", "rate-error"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("out/rate-error.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["master_seed"], 77);
}

#[test]
fn cba_surface_is_rectangular() {
    let (_guard, dir) = setup();
    fs::write(dir.join("sweeps.toml"), SMALL_SWEEPS).unwrap();
    let out = shiftrisk(
        &dir,
        &["-c", "polyp.toml", "-c", "sweeps.toml", "-o", "out", "--format", "structured", "sweep", "cba"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("out/cba.json")).unwrap()).unwrap();
    assert_eq!(doc["points"].as_array().unwrap().len(), 3 * 4);
    assert_eq!(doc["classifier_axis"].as_array().unwrap().len(), 3);
    assert_eq!(doc["detector_axis"].as_array().unwrap().len(), 4);
}

#[test]
fn risk_curve_has_crossing_rows_for_both_topologies() {
    let (_guard, dir) = setup();
    fs::write(dir.join("sweeps.toml"), SMALL_SWEEPS).unwrap();
    let out = shiftrisk(&dir, &["-c", "polyp.toml", "-c", "sweeps.toml", "-o", "out", "sweep", "risk-curve"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(dir.join("out/risk-curve.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "record,topology,rate,analytic,estimated,realized");
    let crossings: Vec<&str> = text.lines().filter(|l| l.starts_with("crossing,")).collect();
    assert_eq!(crossings.len(), 2);
    assert!(crossings[0].starts_with("crossing,base,,"));
    assert!(crossings[1].starts_with("crossing,rv,,"));
    assert_eq!(text.lines().filter(|l| l.starts_with("point,")).count(), 2 * 21);
}

#[test]
fn sweep_without_grid_is_a_config_error() {
    let (_guard, dir) = setup();
    let out = shiftrisk(&dir, &["-c", "polyp.toml", "-o", "out", "sweep", "cba"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.join("out").exists());
}

#[test]
fn usage_errors_and_help() {
    let (_guard, dir) = setup();
    assert_eq!(shiftrisk(&dir, &["--help"]).status.code(), Some(0));
    assert_eq!(shiftrisk(&dir, &["--frobnicate"]).status.code(), Some(1));
    assert_eq!(shiftrisk(&dir, &["simulate"]).status.code(), Some(1));
    assert_eq!(shiftrisk(&dir, &["-c", "missing.toml", "simulate"]).status.code(), Some(1));
}

#[test]
fn tree_outline_uses_nine_digits() {
    let (_guard, dir) = setup();
    let out = shiftrisk(&dir, &["-c", "polyp.toml", "tree", "--rate", "0.3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("rv event tree: p_event=0.3, tpr=0.95, tnr=0.55"));
    assert!(text.contains("ood/neg:correct [0.593333333]"), "{text}");
    assert!(text.contains("expected_risk=1684.81"), "{text}");
}
