//! Generates the synthetic review corpus, splits it and builds a vocabulary.
//!
//! `cargo run --example synthetic_corpus -- [n_per_class] [out.jsonl]`

use nnif::corpus::{self, SplitFractions, SyntheticSpec};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().map_or(Ok(200), |s| s.parse())?;
    let (c, synonyms) = corpus::generate_synthetic(7, n, &SyntheticSpec::sentiment())?;
    println!("{} examples, class counts {:?}", c.len(), c.class_counts());
    for e in c.examples.iter().take(4) {
        println!("  [{}] {}", e.label, e.text);
    }

    let splits = corpus::split(&c, SplitFractions::new(0.6, 0.1, 0.3), 7)?;
    println!(
        "train/val/test = {}/{}/{}",
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    for min_freq in [1, 2, 3] {
        let v = corpus::build_vocab(&splits.train, min_freq)?;
        println!("min_freq {min_freq}: vocab {} (hash {})", v.len(), &v.hash()[..12]);
    }

    let vocab = corpus::build_vocab(&splits.train, 2)?;
    let text = &splits.test.examples[0].text;
    let seq = corpus::encode(text, &vocab, 16)?;
    println!("encode({text:?}) = {:?}", seq.ids());
    println!("decoded: {}", corpus::decode(&seq, &vocab).join(" "));
    println!("synonyms of 'great': {:?}", synonyms.get("great"));

    if let Some(path) = args.get(1) {
        corpus::write_jsonl(&c, path)?;
        println!("wrote {path}");
    }
    Ok(())
}
