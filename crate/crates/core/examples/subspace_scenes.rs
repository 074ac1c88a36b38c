//! t-SNE scenes of the influence and nearest-neighbor subspaces around
//! original/adversarial pairs, and how linearly separable each view is.
//!
//! `cargo run --release --example subspace_scenes -- [pairs] [out_dir]`

use nnif::pipeline::{self, ExperimentConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = ExperimentConfig::with_seed(7);
    cfg.analysis.sweep = false;
    cfg.analysis.pairs = args.first().map_or(Ok(5), |s| s.parse())?;
    cfg.attack.detection_size = 2 * cfg.analysis.pairs.max(2);
    let prep = pipeline::prepare_corpus(&cfg)?;
    let (model, _) = pipeline::train_stage(&cfg, &prep)?;
    let (ds, _) = pipeline::attack_stage(&cfg, &prep, &model)?;
    let an = pipeline::analyze_stage(&cfg, &prep, &model, &ds)?;

    for s in an.scenes.iter().take(2) {
        println!("pair {} {} view, {} points:", s.pair_id, s.view.name(), s.points.len());
        for p in s.points.iter().take(6) {
            println!("  {:>8} {:?} ({:+.2}, {:+.2})", p.group.name(), p.train_id, p.x, p.y);
        }
    }
    if let Some(sep) = &an.separability {
        println!(
            "SVM accuracy: IF {:.4}, NN {:.4} over n = {} points, one-tailed p = {:.4}",
            sep.if_view.mean_accuracy, sep.nn_view.mean_accuracy, sep.n_trials, sep.p_value
        );
    }
    if let Some(dir) = args.get(1) {
        for s in &an.scenes {
            s.write_csv(format!("{dir}/pair_{:04}_{}.csv", s.pair_id, s.view.name()))?;
        }
        println!("wrote {} scenes to {dir}", an.scenes.len());
    }
    Ok(())
}
