//! Trains the target classifier and checks its gradient against finite
//! differences on a few coordinates.

use nnif::model::{self, TwiceDifferentiable};
use nnif::pipeline::{self, ExperimentConfig};

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let cfg = ExperimentConfig::with_seed(7);
    let prep = pipeline::prepare_corpus(&cfg)?;
    let (model, report) = pipeline::train_stage(&cfg, &prep)?;
    for e in &report.history.epochs {
        println!("epoch {} loss {:.4} val {:?}", e.epoch, e.train_loss, e.val_accuracy);
    }
    println!(
        "{} parameters, vocab {}, clean test accuracy {:.4}",
        report.n_params,
        model.vocab.len(),
        report.clean_accuracy
    );

    let ex = &prep.splits.test.examples[0];
    let pred = model.predict(&ex.text)?;
    println!("{:?} -> class {} ({:.3})", ex.text, pred.class, pred.confidence);

    let z = model.encode_labeled(ex.id, &ex.text, ex.label)?;
    let p = &model.params;
    let g = p.point_grad(&z)?;
    let h = 1e-5;
    for i in [0, p.n_params() / 2, p.n_params() - 1] {
        let mut plus = p.flat().to_vec();
        let mut minus = plus.clone();
        plus[i] += h;
        minus[i] -= h;
        let fd = (p.with_values(plus)?.loss(&z)? - p.with_values(minus)?.loss(&z)?) / (2.0 * h);
        println!("param {i:6}: analytic {:+.6e}  finite diff {:+.6e}", g[i], fd);
    }

    let test = model::encode_corpus(&prep.splits.test, &model.vocab, model.max_len)?;
    println!("accuracy recomputed: {:.4}", p.accuracy(&test)?);
    Ok(())
}
