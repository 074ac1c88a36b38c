//! Genetic synonym-substitution attack, printing the best fitness per
//! generation.

use nnif::attacks::{word_attack_ga_traced, GaConfig};
use nnif::pipeline::{self, ExperimentConfig};

fn main() -> anyhow::Result<()> {
    let cfg = ExperimentConfig::with_seed(7);
    let prep = pipeline::prepare_corpus(&cfg)?;
    let (model, _) = pipeline::train_stage(&cfg, &prep)?;
    let synonyms = prep.synonyms.as_ref().expect("synthetic corpus ships synonyms");
    let ga = GaConfig {
        seed: 7,
        ..GaConfig::default()
    };

    let mut n_success = 0;
    let examples = prep.splits.test.examples.iter().take(30);
    for ex in examples {
        let (r, trace) = word_attack_ga_traced(&model, ex, synonyms, &ga)?;
        if r.success {
            n_success += 1;
            if n_success <= 3 {
                println!("before: {}\nafter:  {}", ex.text, r.adversarial_text);
                let curve: Vec<String> = trace.best_fitness.iter().map(|f| format!("{f:.3}")).collect();
                println!("fitness by generation: {}\n", curve.join(" "));
            }
        }
    }
    println!("{n_success}/30 flipped with at most {:.0}% of words substituted", 100.0 * ga.max_perturb_fraction);
    Ok(())
}
