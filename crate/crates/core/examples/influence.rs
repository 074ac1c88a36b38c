//! Most helpful and harmful training points for a test review, estimated
//! with a stochastic inverse Hessian-vector product.

use nnif::influence::{InfluenceEngine, LissaConfig};
use nnif::pipeline::{self, ExperimentConfig};

fn main() -> anyhow::Result<()> {
    let mut cfg = ExperimentConfig::with_seed(7);
    cfg.corpus.source = pipeline::CorpusSource::Synthetic {
        n_per_class: 400,
        spec: None,
    };
    let prep = pipeline::prepare_corpus(&cfg)?;
    let (model, _) = pipeline::train_stage(&cfg, &prep)?;
    let train = model.encode_corpus(&prep.splits.train)?;
    let engine = InfluenceEngine::new(&model.params, &train, train.len(), LissaConfig::default(), 7)?;

    let ex = &prep.splits.test.examples[0];
    let label = model.predict(&ex.text)?.class;
    let z = model.encode_labeled(ex.id, &ex.text, label)?;
    let report = engine.top_influences(&z, ex.id, 5)?;
    let text = |id: usize| {
        let e = prep.splits.train.examples.iter().find(|e| e.id == id).expect("sampled from train");
        format!("[{}] {}", e.label, e.text)
    };

    println!("test [{label}] {}\n\nhelpful:", ex.text);
    for id in &report.helpful {
        println!("  {:+.4e} {}", report.scores[id], text(*id));
    }
    println!("harmful:");
    for id in &report.harmful {
        println!("  {:+.4e} {}", report.scores[id], text(*id));
    }
    println!("\n{:?}", engine.counters.snapshot());
    Ok(())
}
