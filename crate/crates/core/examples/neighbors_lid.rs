//! Deep kNN over a hidden layer, plus local intrinsic dimensionality of a
//! clean and an attacked review.

use nnif::attacks::{char_attack, CharAttackConfig};
use nnif::model::Layer;
use nnif::neighbors::{build_index, lid_estimate, query_ranks_distances};
use nnif::pipeline::{self, ExperimentConfig};

fn main() -> anyhow::Result<()> {
    let cfg = ExperimentConfig::with_seed(7);
    let prep = pipeline::prepare_corpus(&cfg)?;
    let (model, _) = pipeline::train_stage(&cfg, &prep)?;
    let index = build_index(&model, &prep.splits.train, Layer::H2)?;
    println!("index over {} train points in {} dims", index.len(), index.dim());

    let attack = CharAttackConfig {
        seed: 7,
        ..CharAttackConfig::default()
    };
    let (ex, adv) = prep
        .splits
        .test
        .examples
        .iter()
        .find_map(|ex| {
            let r = char_attack(&model, ex, &attack).ok()?;
            r.success.then(|| (ex, r.adversarial_text))
        })
        .expect("some attack succeeds");

    for (name, text) in [("clean", ex.text.as_str()), ("adversarial", adv.as_str())] {
        let rep = model.activations(text)?.layer(Layer::H2).to_vec();
        let nn = index.nearest(&rep, 5)?;
        println!("\n{name}: {text}");
        for (id, d) in &nn {
            println!("  id {id:5} at {d:.4}");
        }
        let ids: Vec<usize> = nn.iter().map(|p| p.0).collect();
        let rd = query_ranks_distances(&index, &rep, &ids)?;
        println!("  ranks {:?}", rd.ranks);
        for k in [10, 20, 100] {
            let lid = lid_estimate(&rep, &index, k)?;
            println!("  LID@{k}: {:.3}{}", lid.value, if lid.degenerate { " (degenerate)" } else { "" });
        }
    }
    Ok(())
}
