//! End-to-end tests of the installed binary: subcommand wiring, file
//! outputs, determinism, and the exit-code contract (0 success, 1 data
//! error, 2 usage/config error).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_transit-flow"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_success(output: &Output) {
    assert_eq!(
        output.status.code(),
        Some(0),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

/// Simulate the default scenario into `<dir>/trip` and return that path.
fn simulate_trip(dir: &Path) -> PathBuf {
    let output = run(&["simulate", "--out", "trip"], dir);
    assert_success(&output);
    dir.join("trip")
}

/// Simulate + extract, returning the features path.
fn extract_features(dir: &Path) -> PathBuf {
    simulate_trip(dir);
    let output = run(
        &[
            "extract",
            "--sensing",
            "trip/sensing.csv",
            "--gps",
            "trip/gps.csv",
            "--stations",
            "trip/stations.csv",
            "--out",
            "work",
        ],
        dir,
    );
    assert_success(&output);
    dir.join("work/features.csv")
}

#[test]
fn simulate_writes_all_trip_files_and_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(&["simulate", "--seed", "9", "--out", "a"], dir.path());
    assert_success(&output);
    for name in [
        "sensing.csv",
        "gps.csv",
        "stations.csv",
        "ground_truth.csv",
        "labels.csv",
        "scenario.conf",
    ] {
        assert!(dir.path().join("a").join(name).is_file(), "missing {name}");
    }

    let output = run(&["simulate", "--seed", "9", "--out", "b"], dir.path());
    assert_success(&output);
    assert_eq!(
        fs::read(dir.path().join("a/sensing.csv")).unwrap(),
        fs::read(dir.path().join("b/sensing.csv")).unwrap()
    );

    let output = run(&["simulate", "--seed", "10", "--out", "c"], dir.path());
    assert_success(&output);
    assert_ne!(
        fs::read(dir.path().join("a/sensing.csv")).unwrap(),
        fs::read(dir.path().join("c/sensing.csv")).unwrap()
    );
}

#[test]
fn simulate_config_seed_equals_flag_seed() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("sim.conf"), "simgen.seed = 17\n").unwrap();
    let output = run(
        &["simulate", "--config", "sim.conf", "--out", "a"],
        dir.path(),
    );
    assert_success(&output);
    let output = run(&["simulate", "--seed", "17", "--out", "b"], dir.path());
    assert_success(&output);
    assert_eq!(
        fs::read(dir.path().join("a/sensing.csv")).unwrap(),
        fs::read(dir.path().join("b/sensing.csv")).unwrap()
    );
}

#[test]
fn simulate_rejects_unknown_scenario_key_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("sim.conf"), "simgen.n_aliens = 4\n").unwrap();
    let output = run(
        &["simulate", "--config", "sim.conf", "--out", "a"],
        dir.path(),
    );
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("n_aliens"));
}

#[test]
fn extract_row_count_matches_unique_device_recount() {
    let dir = tempfile::tempdir().unwrap();
    let features = extract_features(dir.path());

    // Independent recount of unique (protocol, mac) pairs in the raw log.
    let sensing = fs::read_to_string(dir.path().join("trip/sensing.csv")).unwrap();
    let mut devices: std::collections::BTreeSet<(String, String)> = Default::default();
    for line in sensing.lines().skip(1) {
        let mut parts = line.split(',');
        let protocol = parts.next().unwrap().to_string();
        let mac = parts.next().unwrap().to_string();
        devices.insert((protocol, mac));
    }

    let feature_rows = fs::read_to_string(&features).unwrap().lines().count() - 1;
    assert_eq!(feature_rows, devices.len());
}

#[test]
fn extract_missing_stations_file_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    simulate_trip(dir.path());
    let output = run(
        &[
            "extract",
            "--sensing",
            "trip/sensing.csv",
            "--gps",
            "trip/gps.csv",
            "--stations",
            "absent_stations.csv",
            "--out",
            "work",
        ],
        dir.path(),
    );
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("absent_stations.csv"));
}

#[test]
fn extract_without_required_inputs_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(&["extract", "--out", "work"], dir.path());
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("input.sensing"));
}

#[test]
fn cluster_fcm_writes_labels_meta_and_validity() {
    let dir = tempfile::tempdir().unwrap();
    extract_features(dir.path());
    let output = run(
        &[
            "cluster",
            "--features",
            "work/features.csv",
            "--method",
            "fcm",
            "--seed",
            "7",
            "--out",
            "sep",
        ],
        dir.path(),
    );
    assert_success(&output);
    assert!(dir.path().join("sep/labels_fcm.csv").is_file());
    assert!(dir.path().join("sep/labels_fcm.meta.json").is_file());
    assert!(dir.path().join("sep/validity_fcm.json").is_file());
    let validity: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("sep/validity_fcm.json")).unwrap())
            .unwrap();
    assert!(validity["silhouette"].as_f64().unwrap() > 0.0);

    let labels = fs::read_to_string(dir.path().join("sep/labels_fcm.csv")).unwrap();
    assert!(labels.starts_with("mac,u_passenger,u_non_passenger,label,method\n"));
    assert!(labels.contains(",fcm\n"));
}

#[test]
fn filter_fm1_needs_no_seed_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    extract_features(dir.path());
    for out in ["sep_a", "sep_b"] {
        let output = run(
            &[
                "filter",
                "--features",
                "work/features.csv",
                "--method",
                "fm1",
                "--out",
                out,
            ],
            dir.path(),
        );
        assert_success(&output);
    }
    assert_eq!(
        fs::read(dir.path().join("sep_a/labels_fm1.csv")).unwrap(),
        fs::read(dir.path().join("sep_b/labels_fm1.csv")).unwrap()
    );
}

#[test]
fn unknown_or_mismatched_methods_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    extract_features(dir.path());
    for (subcommand, method) in [
        ("cluster", "kmeans"),
        ("cluster", "fm1"),
        ("filter", "fcm"),
    ] {
        let output = run(
            &[
                subcommand,
                "--features",
                "work/features.csv",
                "--method",
                method,
                "--out",
                "sep",
            ],
            dir.path(),
        );
        assert_eq!(
            output.status.code(),
            Some(2),
            "{subcommand} --method {method}: {}",
            stderr_of(&output)
        );
        assert!(stderr_of(&output).contains(method));
    }
}

/// Run separation so estimate tests have labels to work from.
fn prepare_labels(dir: &Path) {
    extract_features(dir);
    let output = run(
        &[
            "cluster",
            "--features",
            "work/features.csv",
            "--method",
            "fcm",
            "--seed",
            "7",
            "--out",
            "sep",
        ],
        dir,
    );
    assert_success(&output);
}

#[test]
fn estimate_with_truth_writes_counts_od_estimates_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    prepare_labels(dir.path());
    let output = run(
        &[
            "estimate",
            "--sensing",
            "trip/sensing.csv",
            "--gps",
            "trip/gps.csv",
            "--stations",
            "trip/stations.csv",
            "--truth",
            "trip/ground_truth.csv",
            "--labels",
            "sep/labels_fcm.csv",
            "--seed",
            "7",
            "--out",
            "est",
        ],
        dir.path(),
    );
    assert_success(&output);
    for name in [
        "stop_counts.csv",
        "od_matrix.csv",
        "assignment.json",
        "estimates.csv",
        "metrics.csv",
    ] {
        assert!(dir.path().join("est").join(name).is_file(), "missing {name}");
    }
    // One metrics row per target, stamped with the combined method name.
    let metrics = fs::read_to_string(dir.path().join("est/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    assert!(metrics.contains("onboard,fcm+rf"));
    assert!(metrics.contains("boarding,fcm+rf"));
    assert!(metrics.contains("alighting,fcm+rf"));
}

#[test]
fn estimate_without_truth_omits_metrics_with_a_notice() {
    let dir = tempfile::tempdir().unwrap();
    prepare_labels(dir.path());
    let output = run(
        &[
            "estimate",
            "--sensing",
            "trip/sensing.csv",
            "--gps",
            "trip/gps.csv",
            "--stations",
            "trip/stations.csv",
            "--labels",
            "sep/labels_fcm.csv",
            "--out",
            "est",
        ],
        dir.path(),
    );
    assert_success(&output);
    assert!(stdout_of(&output).contains("ground truth absent"));
    assert!(dir.path().join("est/stop_counts.csv").is_file());
    assert!(dir.path().join("est/od_matrix.csv").is_file());
    assert!(!dir.path().join("est/metrics.csv").exists());
    assert!(!dir.path().join("est/estimates.csv").exists());
}

#[test]
fn saved_forest_models_reproduce_in_run_estimates() {
    let dir = tempfile::tempdir().unwrap();
    prepare_labels(dir.path());
    let trip_args = [
        "--sensing",
        "trip/sensing.csv",
        "--gps",
        "trip/gps.csv",
        "--stations",
        "trip/stations.csv",
        "--truth",
        "trip/ground_truth.csv",
        "--labels",
        "sep/labels_fcm.csv",
        "--seed",
        "7",
    ];
    let mut train_args = vec!["estimate"];
    train_args.extend_from_slice(&trip_args);
    train_args.extend_from_slice(&["--save-models", "--out", "est_train"]);
    assert_success(&run(&train_args, dir.path()));

    let mut reuse_args = vec!["estimate"];
    reuse_args.extend_from_slice(&trip_args);
    reuse_args.extend_from_slice(&[
        "--model",
        "est_train/forest_onboard.json",
        "--model",
        "est_train/forest_boarding.json",
        "--model",
        "est_train/forest_alighting.json",
        "--out",
        "est_reuse",
    ]);
    let output = run(&reuse_args, dir.path());
    assert_success(&output);
    assert!(stdout_of(&output).contains("pretrained"));
    assert_eq!(
        fs::read(dir.path().join("est_train/estimates.csv")).unwrap(),
        fs::read(dir.path().join("est_reuse/estimates.csv")).unwrap(),
        "pretrained-model estimates differ from in-run training"
    );
}

fn pipeline_config() -> &'static str {
    "input.sensing = trip/sensing.csv\n\
     input.gps = trip/gps.csv\n\
     input.stations = trip/stations.csv\n\
     input.truth = trip/ground_truth.csv\n\
     input.labels = trip/labels.csv\n\
     pipeline.seed = 7\n"
}

#[test]
fn pipeline_runs_and_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    simulate_trip(dir.path());
    fs::write(dir.path().join("run.conf"), pipeline_config()).unwrap();
    for out in ["report_a", "report_b"] {
        let output = run(
            &["pipeline", "--config", "run.conf", "--out", out],
            dir.path(),
        );
        assert_success(&output);
        assert!(stdout_of(&output).contains("passenger-class F1"));
    }
    for name in ["summary.json", "metrics.csv", "stop_counts_fcm.csv", "od_matrix_fcm.csv"] {
        assert_eq!(
            fs::read(dir.path().join("report_a").join(name)).unwrap(),
            fs::read(dir.path().join("report_b").join(name)).unwrap(),
            "{name} differs between reruns"
        );
    }
    let summary: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("report_a/summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["trip_id"], "sim-7");
    assert_eq!(summary["seed"], 7);
    assert!(summary["separations"][0]["scores"]["f1"].as_f64().is_some());
}

#[test]
fn pipeline_without_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(&["pipeline", "--out", "report"], dir.path());
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("--config"));
}

#[test]
fn pipeline_unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.conf"), "pipeline.wrong = 1\n").unwrap();
    let output = run(
        &["pipeline", "--config", "bad.conf", "--out", "report"],
        dir.path(),
    );
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("pipeline.wrong"));
}

#[test]
fn evaluate_scores_matching_labels_as_perfect() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("predicted.csv"),
        "mac,u_passenger,u_non_passenger,label\n\
         aa:01,0.9,0.1,passenger\n\
         aa:02,0.2,0.8,non_passenger\n",
    )
    .unwrap();
    fs::write(
        dir.path().join("truth.csv"),
        "mac,label\naa:01,passenger\naa:02,non_passenger\n",
    )
    .unwrap();
    let output = run(
        &[
            "evaluate",
            "--predicted",
            "predicted.csv",
            "--truth-labels",
            "truth.csv",
            "--out",
            "eval",
        ],
        dir.path(),
    );
    assert_success(&output);
    assert!(stdout_of(&output).contains("accuracy 1.0000"));
    let scores: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("eval/separation_scores.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(scores["f1"], 1.0);
    assert_eq!(scores["true_positives"], 1);
}

#[test]
fn evaluate_label_set_mismatch_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("predicted.csv"),
        "mac,u_passenger,u_non_passenger,label\naa:01,0.9,0.1,passenger\n",
    )
    .unwrap();
    fs::write(
        dir.path().join("truth.csv"),
        "mac,label\naa:01,passenger\naa:02,non_passenger\n",
    )
    .unwrap();
    let output = run(
        &[
            "evaluate",
            "--predicted",
            "predicted.csv",
            "--truth-labels",
            "truth.csv",
            "--out",
            "eval",
        ],
        dir.path(),
    );
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr_of(&output).contains("label sets differ"));
}
