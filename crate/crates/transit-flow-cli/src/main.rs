//! Command-line front end for the transit-flow library.
//!
//! Subcommands map one-to-one onto the pipeline stages; `pipeline` chains
//! them and writes a full report directory. Exit codes are a stable
//! contract: 0 on success, 1 on runtime or data errors, 2 on usage or
//! configuration errors (including missing input files).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use transit_flow::cluster::{label_map, read_labels_csv, write_labels_csv, write_meta_json, LabelRow};
use transit_flow::error::Error;
use transit_flow::features::{read_features_csv, write_features_csv};
use transit_flow::ingest::load_trip;
use transit_flow::pipeline::{
    counts_options, labels_for_trip, run_counts, run_extract, run_pipeline, run_regression,
    run_regression_with_models, run_separation, write_estimates_csv, write_json, DerivedSeeds,
    InputPaths, KvConfig, PipelineConfig, RegressionMethod, SeparationMethod,
};
use transit_flow::regress::{write_metrics_csv, ForestModel, Target};
use transit_flow::ridership::{write_od_csv, write_stop_counts_csv};
use transit_flow::simgen::{self, read_class_labels_csv, score_separation, ScenarioConfig};
use transit_flow::Result;

#[derive(Parser)]
#[command(
    name = "transit-flow",
    version,
    about = "Mine transit ridership flows and O-D patterns from Wi-Fi/Bluetooth sensing logs and GPS traces",
    propagate_version = true
)]
struct Cli {
    /// Flat key-value configuration file (`section.key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Base random seed; overrides the seed from the configuration file.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory (created if absent).
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic trip (sensing log, GPS trace,
    /// stations, ground truth, device labels, scenario echo).
    Simulate(SimulateArgs),
    /// Ingest a trip and write one feature vector per detected device.
    Extract(TripArgs),
    /// Separate passenger from non-passenger devices by clustering.
    Cluster(MethodArgs),
    /// Separate passenger from non-passenger devices by threshold rules.
    Filter(MethodArgs),
    /// Resolve passenger devices to stops, build the O-D matrix, and
    /// estimate per-stop ridership.
    Estimate(EstimateArgs),
    /// Run extract, separate, and estimate end to end; write a full report.
    Pipeline,
    /// Score predicted device labels against true classes.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario preset: `default` (12 stops, 30 passengers, 60 noise
    /// devices) or `desk` (30 stops, ~5,000 devices). `simgen.*` keys from
    /// --config override preset fields.
    #[arg(long, value_parser = ["default", "desk"], default_value = "default")]
    preset: String,
}

#[derive(Args)]
struct TripArgs {
    /// Sensing log CSV (`protocol,mac,timestamp,rssi`). Overrides `input.sensing`.
    #[arg(long, value_name = "PATH")]
    sensing: Option<PathBuf>,
    /// Vehicle GPS trace CSV (`timestamp,lat,lon`). Overrides `input.gps`.
    #[arg(long, value_name = "PATH")]
    gps: Option<PathBuf>,
    /// Station table CSV. Overrides `input.stations`.
    #[arg(long, value_name = "PATH")]
    stations: Option<PathBuf>,
    /// Ground-truth per-stop counts CSV. Overrides `input.truth`.
    #[arg(long, value_name = "PATH")]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct MethodArgs {
    /// Per-device feature CSV produced by `extract`.
    #[arg(long, value_name = "PATH")]
    features: PathBuf,
    /// `cluster`: fcm or gmm. `filter`: fm1 or fm2.
    #[arg(long, value_name = "NAME")]
    method: String,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    trip: TripArgs,
    /// Device labels CSV (from `cluster`, `filter`, or hand-made).
    #[arg(long, value_name = "PATH")]
    labels: PathBuf,
    /// Regression back-end: rf or ols. Overrides `pipeline.regression`.
    #[arg(long, value_name = "NAME")]
    regression: Option<String>,
    /// Comma-separated targets. Overrides `pipeline.targets`.
    #[arg(long, value_name = "LIST")]
    targets: Option<String>,
    /// Pretrained forest model JSON; repeatable, one per target. Skips
    /// training (and the train/test split) entirely.
    #[arg(long = "model", value_name = "PATH")]
    models: Vec<PathBuf>,
    /// Save fitted forest models as `forest_<target>.json`.
    #[arg(long)]
    save_models: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predicted labels CSV (`mac,u_passenger,u_non_passenger,label[,method]`).
    #[arg(long, value_name = "PATH")]
    predicted: PathBuf,
    /// True device classes CSV (`mac,label`).
    #[arg(long = "truth-labels", value_name = "PATH")]
    truth_labels: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(&cli, args),
        Command::Extract(args) => cmd_extract(&cli, args),
        Command::Cluster(args) => cmd_separate(&cli, args, true),
        Command::Filter(args) => cmd_separate(&cli, args, false),
        Command::Estimate(args) => cmd_estimate(&cli, args),
        Command::Pipeline => cmd_pipeline(&cli),
        Command::Evaluate(args) => cmd_evaluate(&cli, args),
    }
}

/// Build the effective configuration: file (if given), then --seed override.
fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            require_file(path)?;
            PipelineConfig::from_kv(&KvConfig::from_file(path)?)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "missing input file: {}",
            path.display()
        )))
    }
}

fn ensure_out_dir(cli: &Cli) -> Result<()> {
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))
}

/// Command-line paths override configuration-file paths.
fn merge_input(cfg: &PipelineConfig, args: &TripArgs) -> Result<InputPaths> {
    let mut input = cfg.input.clone();
    if let Some(p) = &args.sensing {
        input.sensing = p.clone();
    }
    if let Some(p) = &args.gps {
        input.gps = p.clone();
    }
    if let Some(p) = &args.stations {
        input.stations = p.clone();
    }
    if let Some(p) = &args.truth {
        input.truth = Some(p.clone());
    }
    for (key, path, flag) in [
        ("input.sensing", &input.sensing, "--sensing"),
        ("input.gps", &input.gps, "--gps"),
        ("input.stations", &input.stations, "--stations"),
    ] {
        if path.as_os_str().is_empty() {
            return Err(Error::Config(format!(
                "missing required input `{key}` (set it in the config file or pass {flag})"
            )));
        }
    }
    Ok(input)
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let mut scenario = match args.preset.as_str() {
        "desk" => ScenarioConfig::desk_scale(3),
        _ => ScenarioConfig::default(),
    };
    if let Some(path) = &cli.config {
        require_file(path)?;
        let kv = KvConfig::from_file(path)?;
        for (key, value) in kv.pairs() {
            scenario.apply_kv(key, value)?;
        }
    }
    if let Some(seed) = cli.seed {
        scenario.seed = seed;
    }
    let trip = simgen::generate(&scenario)?;
    let paths = trip.write_dir(&cli.out)?;
    println!(
        "simulated trip {}: {} sensing rows, {} devices, {} stops",
        trip.trip_id,
        trip.sensing.len(),
        trip.labels.len(),
        trip.stations.len()
    );
    for path in [
        &paths.sensing,
        &paths.gps,
        &paths.stations,
        &paths.truth,
        &paths.labels,
        &paths.scenario,
    ] {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_extract(cli: &Cli, args: &TripArgs) -> Result<()> {
    let cfg = load_config(cli)?;
    let input = merge_input(&cfg, args)?;
    let stage = run_extract(&input, &cfg.load, &cfg.extract)?;
    ensure_out_dir(cli)?;
    let features_path = cli.out.join("features.csv");
    write_features_csv(&features_path, &stage.vectors)?;
    write_json(&cli.out.join("load_report.json"), &stage.load_report)?;
    println!("{}", stage.load_report);
    println!(
        "devices: {} ({} speed values capped)",
        stage.extract_report.unique_devices, stage.extract_report.speed_cap_events
    );
    println!("wrote {}", features_path.display());
    println!("wrote {}", cli.out.join("load_report.json").display());
    Ok(())
}

fn cmd_separate(cli: &Cli, args: &MethodArgs, clustering: bool) -> Result<()> {
    let cfg = load_config(cli)?;
    let method: SeparationMethod = args
        .method
        .parse()
        .map_err(|e: String| Error::Config(e))?;
    let is_clustering_method =
        matches!(method, SeparationMethod::Fcm | SeparationMethod::Gmm);
    if clustering != is_clustering_method {
        let (subcommand, allowed) = if clustering {
            ("cluster", "fcm or gmm")
        } else {
            ("filter", "fm1 or fm2")
        };
        return Err(Error::Config(format!(
            "method `{method}` is not a {subcommand} method (expected {allowed})"
        )));
    }

    require_file(&args.features)?;
    let vectors = read_features_csv(&args.features)?;
    let seeds = DerivedSeeds::from_base(cfg.seed);
    let outcome = run_separation(&vectors, method, &cfg, seeds.clustering)?;
    ensure_out_dir(cli)?;

    let labels_path = cli.out.join(format!("labels_{method}.csv"));
    write_labels_csv(&labels_path, &outcome.labels, Some(&method.to_string()))?;
    let n_passenger = outcome
        .labels
        .iter()
        .filter(|l| l.label == transit_flow::types::DeviceClass::Passenger)
        .count();
    println!(
        "{method}: {n_passenger} passenger / {} non-passenger devices",
        outcome.labels.len() - n_passenger
    );
    println!("wrote {}", labels_path.display());
    if let Some(meta) = &outcome.meta {
        let meta_path = cli.out.join(format!("labels_{method}.meta.json"));
        write_meta_json(&meta_path, meta)?;
        println!("wrote {}", meta_path.display());
    }
    if let Some(validity) = &outcome.validity {
        let validity_path = cli.out.join(format!("validity_{method}.json"));
        write_json(&validity_path, validity)?;
        println!(
            "validity: silhouette {:.4}, dunn {:.4}, davies_bouldin {:.4}, beta_cv {:.4}",
            validity.silhouette, validity.dunn, validity.davies_bouldin, validity.beta_cv
        );
        println!("wrote {}", validity_path.display());
    }
    if let Some(note) = &outcome.validity_note {
        println!("note: {note}");
    }
    Ok(())
}

/// The method stamped on the label rows, when they agree on one.
fn label_method_name(rows: &[LabelRow]) -> String {
    let names: BTreeSet<&str> = rows.iter().filter_map(|r| r.method.as_deref()).collect();
    if names.len() == 1 && rows.iter().all(|r| r.method.is_some()) {
        names.into_iter().next().expect("len checked").to_string()
    } else {
        "custom".to_string()
    }
}

fn cmd_estimate(cli: &Cli, args: &EstimateArgs) -> Result<()> {
    let cfg = load_config(cli)?;
    let input = merge_input(&cfg, &args.trip)?;
    require_file(&input.sensing)?;
    require_file(&input.gps)?;
    require_file(&input.stations)?;
    if let Some(p) = &input.truth {
        require_file(p)?;
    }
    require_file(&args.labels)?;

    let regression: RegressionMethod = match &args.regression {
        Some(name) => name.parse().map_err(|e: String| Error::Config(e))?,
        None => cfg.regression,
    };
    let targets: Vec<Target> = match &args.targets {
        Some(list) => {
            let mut out = Vec::new();
            for part in list.split(',') {
                let target: Target = part
                    .trim()
                    .parse()
                    .map_err(|e: String| Error::Config(e))?;
                if out.contains(&target) {
                    return Err(Error::Config(format!("duplicate target `{target}`")));
                }
                out.push(target);
            }
            out
        }
        None => cfg.targets.clone(),
    };

    let (trip, load_report) = load_trip(
        &input.sensing,
        &input.gps,
        &input.stations,
        input.truth.as_deref(),
        &cfg.load,
    )?;
    let rows = read_labels_csv(&args.labels)?;
    let labels = labels_for_trip(&rows, &trip)?;
    let separation_name = label_method_name(&rows);
    let assignment = match separation_name.parse::<SeparationMethod>() {
        Ok(method) => counts_options(method, &cfg),
        Err(_) => cfg.assign,
    };
    let counts = run_counts(&trip, &labels, &assignment)?;
    ensure_out_dir(cli)?;

    println!("{load_report}");
    println!(
        "assignment: {} devices assigned, {} endpoint-swapped, {} same-stop, {} out of station range",
        counts.assignment_report.n_assigned,
        counts.assignment_report.n_swapped,
        counts.assignment_report.n_excluded_same_stop,
        counts.assignment_report.n_excluded_no_station
    );
    let stop_counts_path = cli.out.join("stop_counts.csv");
    write_stop_counts_csv(&stop_counts_path, &counts.records)?;
    println!("wrote {}", stop_counts_path.display());
    let od_path = cli.out.join("od_matrix.csv");
    write_od_csv(&od_path, &counts.od)?;
    println!("wrote {}", od_path.display());
    write_json(&cli.out.join("assignment.json"), &counts.assignment_report)?;
    println!("wrote {}", cli.out.join("assignment.json").display());

    let method_name = format!("{separation_name}+{regression}");
    let seeds = DerivedSeeds::from_base(cfg.seed);
    let outcome = if args.models.is_empty() {
        run_regression(
            &counts.records,
            &method_name,
            regression,
            &targets,
            &cfg.forest,
            &cfg.ols,
            seeds.forest,
            seeds.split,
            cfg.test_fraction,
        )?
    } else {
        let mut models = Vec::new();
        for path in &args.models {
            require_file(path)?;
            models.push(ForestModel::load_json(path)?);
        }
        run_regression_with_models(&counts.records, &models, &method_name)?
    };

    for notice in &outcome.notices {
        println!("note: {notice}");
    }
    if !outcome.estimates.is_empty() {
        let estimates_path = cli.out.join("estimates.csv");
        write_estimates_csv(&estimates_path, &outcome.estimates)?;
        println!("wrote {}", estimates_path.display());
    }
    if !outcome.metrics.is_empty() {
        let metrics_path = cli.out.join("metrics.csv");
        write_metrics_csv(&metrics_path, &outcome.metrics)?;
        for row in &outcome.metrics {
            let mape = row
                .metrics
                .mape
                .map_or("n/a".to_string(), |v| format!("{v:.2}%"));
            println!(
                "{} {}: mse {:.4}, mae {:.4}, mape {} ({} zero-truth stops excluded)",
                row.method, row.target, row.metrics.mse, row.metrics.mae, mape,
                row.metrics.n_excluded_zero_truth
            );
        }
        println!("wrote {}", metrics_path.display());
    }
    if args.save_models {
        for model in &outcome.forests {
            let model_path = cli.out.join(format!("forest_{}.json", model.target));
            model.save_json(&model_path)?;
            println!("wrote {}", model_path.display());
        }
    }
    Ok(())
}

fn cmd_pipeline(cli: &Cli) -> Result<()> {
    if cli.config.is_none() {
        return Err(Error::Config(
            "the pipeline subcommand requires --config (input paths and method selection)".into(),
        ));
    }
    let cfg = load_config(cli)?;
    let outcome = run_pipeline(&cfg, &cli.out)?;
    let summary = &outcome.summary;
    println!(
        "trip {}: {} devices over {} stops",
        summary.trip_id, summary.n_devices, summary.n_stops
    );
    for sep in &summary.separations {
        let f1 = sep
            .scores
            .as_ref()
            .map_or("n/a".to_string(), |s| format!("{:.4}", s.f1));
        println!(
            "{}: {} passenger devices, {} O-D trips, passenger-class F1 {f1}",
            sep.method, sep.n_passenger, sep.od_total_trips
        );
    }
    for note in &summary.notices {
        println!("note: {note}");
    }
    println!("report written to {}", outcome.summary_path.parent().unwrap().display());
    Ok(())
}

fn cmd_evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<()> {
    require_file(&args.predicted)?;
    require_file(&args.truth_labels)?;
    let rows = read_labels_csv(&args.predicted)?;
    let predicted = label_map(&rows);
    let truth = read_class_labels_csv(&args.truth_labels)?;
    let scores = score_separation(&predicted, &truth)?;
    ensure_out_dir(cli)?;
    let scores_path = cli.out.join("separation_scores.json");
    write_json(&scores_path, &scores)?;
    println!(
        "accuracy {:.4}, precision {:.4}, recall {:.4}, f1 {:.4} (tp {}, fp {}, fn {}, tn {})",
        scores.accuracy,
        scores.precision,
        scores.recall,
        scores.f1,
        scores.true_positives,
        scores.false_positives,
        scores.false_negatives,
        scores.true_negatives
    );
    println!("wrote {}", scores_path.display());
    Ok(())
}
