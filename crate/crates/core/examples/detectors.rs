//! Builds a detection dataset with the char attack and compares the NNIF,
//! Mahalanobis and LID detectors on it.
//!
//! `cargo run --release --example detectors -- [detection_size]`

use nnif::pipeline::{self, ExperimentConfig};

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let mut cfg = ExperimentConfig::with_seed(7);
    if let Some(n) = std::env::args().nth(1) {
        cfg.attack.detection_size = n.parse()?;
    }
    let prep = pipeline::prepare_corpus(&cfg)?;
    let (model, _) = pipeline::train_stage(&cfg, &prep)?;
    let (ds, attack) = pipeline::attack_stage(&cfg, &prep, &model)?;
    let det = pipeline::detect_stage(&cfg, &prep, &model, &ds)?;
    print!("{}", pipeline::markdown_report(Some(&attack), &det.metrics));
    for m in &det.metrics {
        if !m.meta.is_empty() {
            println!("{}: {:?}", m.detector, m.meta);
        }
    }
    print!("\n{}", pipeline::detection_table(&cfg, &det.metrics));
    Ok(())
}
