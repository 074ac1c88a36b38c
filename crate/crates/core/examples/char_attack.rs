//! Character-level typo attack on the trained classifier.

use nnif::attacks::{char_attack, CharAttackConfig};
use nnif::pipeline::{self, ExperimentConfig};

fn main() -> anyhow::Result<()> {
    let cfg = ExperimentConfig::with_seed(7);
    let prep = pipeline::prepare_corpus(&cfg)?;
    let (model, _) = pipeline::train_stage(&cfg, &prep)?;
    let attack = CharAttackConfig {
        seed: 7,
        ..CharAttackConfig::default()
    };

    let (mut tried, mut flipped) = (0, 0);
    for ex in prep.splits.test.examples.iter().take(60) {
        let r = char_attack(&model, ex, &attack)?;
        tried += 1;
        if r.success {
            flipped += 1;
            if flipped <= 5 {
                println!("{} -> {}", r.original_prediction, r.adversarial_prediction);
                println!("  before: {}", ex.text);
                println!("  after:  {}", r.adversarial_text);
                println!("  words touched {:?}, {} queries", r.perturbed_positions, r.n_queries);
            }
        }
    }
    println!("success on {flipped}/{tried}");
    Ok(())
}
