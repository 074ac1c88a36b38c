//! Config-driven experiment runner.
//!
//! ```text
//! nnif --config exp.toml train
//! nnif --config exp.toml attack
//! nnif --config exp.toml detect
//! nnif --config exp.toml analyze
//! nnif --config exp.toml report
//! ```
//!
//! Exit codes: 0 on success, 2 for configuration or input errors, 3 when a
//! numerical routine fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nnif::attacks::DetectionDataset;
use nnif::detectors::DetectorMetrics;
use nnif::model::TargetModel;
use nnif::pipeline::{self, AttackReport, ExperimentConfig, TrainReport};
use nnif::Error;

#[derive(Parser)]
#[command(version, about = "Adversarial text detection workbench")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the root seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps the worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; beats the config's `out_dir`.
    #[arg(long, global = true, env = "NNIF_OUT_DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the target classifier and save a checkpoint.
    Train,
    /// Attack the test split and write the detection dataset.
    Attack {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Fit and evaluate the configured detectors.
    Detect {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Subspace scenes, separability test and the M sweep.
    Analyze {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Merge detector metrics into one CSV and Markdown table.
    Report,
}

enum Failure {
    Config(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical(_) => Failure::Numerical(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config("--config is required".into()))?;
    let raw = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut table: toml::Table = raw
        .parse()
        .map_err(|e| Failure::Config(format!("config: {e}")))?;
    if let Some(seed) = cli.seed {
        let seed = i64::try_from(seed).map_err(|_| Failure::Config("--seed must fit in i64".into()))?;
        table.insert("seed".into(), toml::Value::Integer(seed));
    }
    let mut cfg = ExperimentConfig::from_toml(&table.to_string())?;
    if let Some(out) = &cli.out {
        cfg.out_dir = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn load_model(path: &Path) -> Result<TargetModel, Failure> {
    TargetModel::load(path).map_err(|e| Failure::Config(format!("checkpoint {}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Failure::Config(format!("thread pool: {e}")))?;
    }
    let out = out_dir(&cfg);
    let ckpt = |p: &Option<PathBuf>| p.clone().unwrap_or_else(|| out.join("model.json"));
    let dataset = |p: &Option<PathBuf>| p.clone().unwrap_or_else(|| out.join("detection.jsonl"));
    let prep = pipeline::prepare_corpus(&cfg)?;

    match &cli.cmd {
        Cmd::Train => {
            let (model, report) = pipeline::train_stage(&cfg, &prep)?;
            pipeline::write(out.join("model.json"), &pipeline::stamped_json(&cfg, &model)?)?;
            pipeline::write(out.join("train.json"), &pipeline::stamped_json(&cfg, &report)?)?;
            println!("{}", serde_json::json!({ "clean_accuracy": report.clean_accuracy }));
        }
        Cmd::Attack { checkpoint } => {
            let model = load_model(&ckpt(checkpoint))?;
            pipeline::check_vocab(&cfg, &prep, &model)?;
            let (ds, report) = pipeline::attack_stage(&cfg, &prep, &model)?;
            if report.short {
                log::warn!("only {} successful pairs found", report.n_pairs);
            }
            let jsonl = pipeline::csv_stamp(&cfg) + &ds.to_jsonl()?;
            pipeline::write(out.join("detection.jsonl"), &jsonl)?;
            pipeline::write(out.join("attack.json"), &pipeline::stamped_json(&cfg, &report)?)?;
            println!(
                "{}",
                serde_json::json!({
                    "attack": report.attack,
                    "success_rate": report.success_rate,
                    "accuracy_under_attack": report.accuracy_under_attack,
                    "pairs": report.n_pairs,
                })
            );
        }
        Cmd::Detect { checkpoint, dataset: ds_path } => {
            let model = load_model(&ckpt(checkpoint))?;
            pipeline::check_vocab(&cfg, &prep, &model)?;
            let ds = DetectionDataset::read_jsonl(dataset(ds_path))?;
            let det = pipeline::detect_stage(&cfg, &prep, &model, &ds)?;
            for m in &det.metrics {
                pipeline::write(
                    out.join("metrics").join(format!("{}.json", m.detector)),
                    &pipeline::stamped_json(&cfg, m)?,
                )?;
            }
            for (name, fs) in &det.features {
                pipeline::write(
                    out.join("features").join(format!("{name}.csv")),
                    &(pipeline::csv_stamp(&cfg) + &fs.to_csv()),
                )?;
            }
            pipeline::write(out.join("detection.csv"), &pipeline::detection_table(&cfg, &det.metrics))?;
            print!("{}", pipeline::markdown_report(None, &det.metrics));
        }
        Cmd::Analyze { checkpoint, dataset: ds_path } => {
            let model = load_model(&ckpt(checkpoint))?;
            pipeline::check_vocab(&cfg, &prep, &model)?;
            let ds = DetectionDataset::read_jsonl(dataset(ds_path))?;
            let an = pipeline::analyze_stage(&cfg, &prep, &model, &ds)?;
            for scene in &an.scenes {
                let name = format!("pair_{:04}_{}.csv", scene.pair_id, scene.view.name());
                pipeline::write(out.join("scenes").join(name), &(pipeline::csv_stamp(&cfg) + &scene.to_csv()))?;
            }
            if let Some(sep) = &an.separability {
                pipeline::write(out.join("separability.json"), &pipeline::stamped_json(&cfg, sep)?)?;
                println!(
                    "separability: IF {:.4}, NN {:.4}, n = {}, p = {:.4e}",
                    sep.if_view.mean_accuracy, sep.nn_view.mean_accuracy, sep.n_trials, sep.p_value
                );
            }
            if !an.sweep.is_empty() {
                pipeline::write(out.join("m_sweep.csv"), &pipeline::sweep_table(&cfg, &an.sweep))?;
                for (m, metrics) in &an.sweep {
                    println!("M = {m}: accuracy {:.4}", metrics.accuracy);
                }
            }
        }
        Cmd::Report => {
            let attack = match out.join("attack.json") {
                p if p.exists() => Some(pipeline::read_stamped::<AttackReport>(&p)?.1),
                _ => None,
            };
            let dir = out.join("metrics");
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(|e| Failure::Config(format!("{}: {e}", dir.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            paths.sort();
            let mut metrics = Vec::new();
            for p in &paths {
                let (hash, m) = pipeline::read_stamped::<DetectorMetrics>(p)?;
                if hash != cfg.hash() {
                    log::warn!("{} was produced by a different config", p.display());
                }
                metrics.push(m);
            }
            let train = out.join("train.json");
            if train.exists() {
                let (_, t) = pipeline::read_stamped::<TrainReport>(&train)?;
                println!("clean accuracy {:.4}", t.clean_accuracy);
            }
            let md = pipeline::markdown_report(attack.as_ref(), &metrics);
            pipeline::write(out.join("report.csv"), &pipeline::detection_table(&cfg, &metrics))?;
            pipeline::write(out.join("report.md"), &md)?;
            print!("{md}");
        }
    }
    Ok(())
}
