//! Class-conditional Gaussians on every layer and the Mahalanobis confidence
//! of clean versus adversarial inputs.

use nnif::mahalanobis::{fit_class_gaussians, mahal_features, MahalVariant, Ridge};
use nnif::model::Layer;
use nnif::pipeline::{self, ExperimentConfig};

fn main() -> anyhow::Result<()> {
    let mut cfg = ExperimentConfig::with_seed(7);
    cfg.attack.detection_size = 60;
    let prep = pipeline::prepare_corpus(&cfg)?;
    let (model, _) = pipeline::train_stage(&cfg, &prep)?;
    let stats = fit_class_gaussians(&model, &prep.splits.train, &Layer::ALL, Ridge::default())?;
    for g in &stats.layers {
        println!("{:>6}: dim {:3}, ridge {:.3e}", g.layer.name(), g.dim, g.lambda);
    }

    let (ds, _) = pipeline::attack_stage(&cfg, &prep, &model)?;
    let mut sums = [vec![0.0; Layer::ALL.len()], vec![0.0; Layer::ALL.len()]];
    let mut counts = [0usize; 2];
    for r in &ds.records {
        let acts = model.activations(&r.text)?;
        let f = mahal_features(&stats, &acts, MahalVariant::Ensemble)?;
        let k = r.detect_label as usize;
        counts[k] += 1;
        for (s, v) in sums[k].iter_mut().zip(f) {
            *s += v;
        }
    }
    println!("\nmean score per layer (adversarial | original):");
    for (i, l) in Layer::ALL.iter().enumerate() {
        println!(
            "{:>6}: {:10.3} | {:10.3}",
            l.name(),
            sums[0][i] / counts[0] as f64,
            sums[1][i] / counts[1] as f64
        );
    }
    Ok(())
}
