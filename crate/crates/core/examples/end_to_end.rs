//! Full pipeline on the synthetic corpus: train, attack, detect, analyze.
//!
//! `cargo run --release --example end_to_end -- [char|word] [pairs]`

use std::time::Instant;

use nnif::pipeline::{self, AttackKind, ExperimentConfig};

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = ExperimentConfig::with_seed(7);
    if args.first().map(String::as_str) == Some("word") {
        cfg.attack.kind = AttackKind::Word;
    }
    if let Some(n) = args.get(1) {
        cfg.attack.detection_size = n.parse::<usize>()? * 2;
    }
    cfg.analysis.pairs = 20;

    let t = Instant::now();
    let prep = pipeline::prepare_corpus(&cfg)?;
    let (model, train) = pipeline::train_stage(&cfg, &prep)?;
    println!(
        "trained {} params, clean accuracy {:.4} ({:.1?})",
        train.n_params,
        train.clean_accuracy,
        t.elapsed()
    );

    let (ds, attack) = pipeline::attack_stage(&cfg, &prep, &model)?;
    println!(
        "{} attack: success {:.3}, accuracy under attack {:.3}, {} pairs ({:.1?})",
        attack.attack,
        attack.success_rate,
        attack.accuracy_under_attack,
        attack.n_pairs,
        t.elapsed()
    );

    let det = pipeline::detect_stage(&cfg, &prep, &model, &ds)?;
    print!("{}", pipeline::markdown_report(None, &det.metrics));
    println!("({:.1?})", t.elapsed());

    let an = pipeline::analyze_stage(&cfg, &prep, &model, &ds)?;
    for (m, metrics) in &an.sweep {
        println!("M = {m:3}: accuracy {:.4}", metrics.accuracy);
    }
    if let Some(s) = &an.separability {
        println!(
            "separability IF {:.4} vs NN {:.4}, n = {}, p = {:.3e}",
            s.if_view.mean_accuracy, s.nn_view.mean_accuracy, s.n_trials, s.p_value
        );
    }
    println!("done in {:.1?}", t.elapsed());
    Ok(())
}
