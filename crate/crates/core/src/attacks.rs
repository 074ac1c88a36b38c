//! Adversarial text generation against the target model, and assembly of the
//! balanced original/adversarial detection dataset.
//!
//! Both attacks treat the model as a black box queried through
//! [`TargetModel::predict`]. Each example gets its own random stream derived
//! from `(seed, example id)`, so results do not depend on processing order.

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Example, SynonymTable};
use crate::error::{Error, Result};
use crate::model::TargetModel;
use crate::seed;

const QWERTY_JSON: &str = include_str!("../data/qwerty.json");

/// Character → physically adjacent keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyboardMap(BTreeMap<char, Vec<char>>);

impl KeyboardMap {
    pub fn qwerty() -> Self {
        Self::from_json(QWERTY_JSON).expect("bundled keyboard map is valid")
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let map: BTreeMap<char, Vec<char>> = serde_json::from_str(raw)?;
        let kb = KeyboardMap(map);
        kb.validate()?;
        Ok(kb)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&raw)
    }

    fn validate(&self) -> Result<()> {
        for c in ('a'..='z').chain('0'..='9') {
            match self.0.get(&c) {
                Some(n) if !n.is_empty() => {}
                _ => return Err(Error::invalid(format!("keyboard map has no neighbors for {c:?}"))),
            }
        }
        Ok(())
    }

    pub fn neighbors(&self, c: char) -> Option<&[char]> {
        self.0
            .get(&c.to_ascii_lowercase())
            .map(Vec::as_slice)
            .filter(|n| !n.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CharOp {
    Swap,
    Drop,
    Add,
    Keyboard,
}

impl CharOp {
    pub const ALL: [CharOp; 4] = [CharOp::Swap, CharOp::Drop, CharOp::Add, CharOp::Keyboard];

    fn applicable(self, word: &[char], kb: &KeyboardMap) -> bool {
        match self {
            // The first character stays fixed; needs a position in 1..len-1.
            CharOp::Swap | CharOp::Drop => word.len() >= 3,
            CharOp::Add => true,
            CharOp::Keyboard => word.iter().any(|&c| kb.neighbors(c).is_some()),
        }
    }

    /// Applies the op. Callers check `applicable` first.
    fn apply(self, word: &[char], kb: &KeyboardMap, rng: &mut ChaCha8Rng) -> Vec<char> {
        let mut w = word.to_vec();
        match self {
            CharOp::Swap => {
                let i = rng.random_range(1..w.len() - 1);
                w.swap(i, i + 1);
            }
            CharOp::Drop => {
                let i = rng.random_range(1..w.len() - 1);
                w.remove(i);
            }
            CharOp::Add => {
                let i = rng.random_range(0..=w.len());
                let c = char::from(b'a' + rng.random_range(0..26u8));
                w.insert(i, c);
            }
            CharOp::Keyboard => {
                let keyed: Vec<usize> = (0..w.len()).filter(|&i| kb.neighbors(w[i]).is_some()).collect();
                let i = *keyed.choose(rng).expect("applicable");
                let n = kb.neighbors(w[i]).expect("applicable");
                w[i] = *n.choose(rng).expect("non-empty");
            }
        }
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CharAttackConfig {
    pub max_word_fraction: f64,
    pub ops: Vec<CharOp>,
    #[serde(skip, default = "KeyboardMap::qwerty")]
    pub keyboard: KeyboardMap,
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for CharAttackConfig {
    fn default() -> Self {
        CharAttackConfig {
            max_word_fraction: 0.5,
            ops: CharOp::ALL.to_vec(),
            keyboard: KeyboardMap::qwerty(),
            max_attempts: 60,
            seed: 0,
        }
    }
}

impl CharAttackConfig {
    fn validate(&self) -> Result<()> {
        if !(self.max_word_fraction > 0.0 && self.max_word_fraction <= 1.0) {
            return Err(Error::invalid("max_word_fraction must lie in (0, 1]"));
        }
        if self.ops.is_empty() {
            return Err(Error::invalid("char attack needs at least one op"));
        }
        self.keyboard.validate()
    }

    /// Maximum number of distinct words that may be perturbed.
    pub fn word_budget(&self, n_words: usize) -> usize {
        (self.max_word_fraction * n_words as f64).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub original: Example,
    pub adversarial_text: String,
    pub success: bool,
    pub n_queries: usize,
    /// Whitespace-word positions that were modified.
    pub perturbed_positions: Vec<usize>,
    pub original_prediction: usize,
    pub adversarial_prediction: usize,
}

/// Random character-level perturbation until the prediction flips.
pub fn char_attack(model: &TargetModel, example: &Example, cfg: &CharAttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    let mut words: Vec<Vec<char>> = example.text.split_whitespace().map(|w| w.chars().collect()).collect();
    if words.is_empty() {
        return Err(Error::invalid("cannot attack an empty text"));
    }
    let mut rng = seed::rng(cfg.seed, "char-attack", example.id as u64);
    let original_prediction = model.predict(&example.text)?.class;
    let budget = cfg.word_budget(words.len());
    let mut perturbed: BTreeSet<usize> = BTreeSet::new();
    let mut n_queries = 0;
    let mut prediction = original_prediction;
    let mut text = example.text.clone();

    for _ in 0..cfg.max_attempts {
        let pool: Vec<usize> = if perturbed.len() < budget {
            (0..words.len()).collect()
        } else {
            perturbed.iter().copied().collect()
        };
        let pool: Vec<usize> = pool
            .into_iter()
            .filter(|&i| cfg.ops.iter().any(|op| op.applicable(&words[i], &cfg.keyboard)))
            .collect();
        let Some(&pos) = pool.choose(&mut rng) else {
            break;
        };
        let ops: Vec<CharOp> = cfg
            .ops
            .iter()
            .copied()
            .filter(|op| op.applicable(&words[pos], &cfg.keyboard))
            .collect();
        let op = *ops.choose(&mut rng).expect("pool filtered on applicability");
        words[pos] = op.apply(&words[pos], &cfg.keyboard, &mut rng);
        perturbed.insert(pos);
        text = join_words(&words);
        n_queries += 1;
        prediction = match model.predict(&text) {
            Ok(p) => p.class,
            // A word reduced to punctuation can leave nothing to encode.
            Err(Error::Invalid(_)) => continue,
            Err(e) => return Err(e),
        };
        if prediction != original_prediction {
            break;
        }
    }
    Ok(AttackResult {
        original: example.clone(),
        adversarial_text: text,
        success: prediction != original_prediction,
        n_queries,
        perturbed_positions: perturbed.into_iter().collect(),
        original_prediction,
        adversarial_prediction: prediction,
    })
}

fn join_words(words: &[Vec<char>]) -> String {
    words
        .iter()
        .map(|w| w.iter().collect::<String>())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub top_k_synonyms: usize,
    /// Cap on substituted words as a fraction of the word count.
    pub max_perturb_fraction: f64,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 20,
            generations: 10,
            top_k_synonyms: 8,
            max_perturb_fraction: 0.2,
            seed: 0,
        }
    }
}

impl GaConfig {
    fn validate(&self) -> Result<()> {
        if self.population_size < 2 || self.generations == 0 || self.top_k_synonyms == 0 {
            return Err(Error::invalid(
                "population_size >= 2, generations >= 1 and top_k_synonyms >= 1 required",
            ));
        }
        if !(self.max_perturb_fraction > 0.0 && self.max_perturb_fraction <= 1.0) {
            return Err(Error::invalid("max_perturb_fraction must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn substitution_budget(&self, n_words: usize) -> usize {
        ((self.max_perturb_fraction * n_words as f64).ceil() as usize).max(1)
    }
}

/// Per-generation trace of the genetic search.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GaTrace {
    pub best_fitness: Vec<f64>,
}

/// A word split into leading punctuation, core and trailing punctuation.
fn split_core(word: &str) -> (&str, &str, &str) {
    let start = word.find(|c: char| c.is_alphanumeric()).unwrap_or(word.len());
    let end = word
        .rfind(|c: char| c.is_alphanumeric())
        .map_or(start, |i| i + word[i..].chars().next().map_or(1, char::len_utf8));
    (&word[..start], &word[start..end], &word[end..])
}

/// Population-based genetic synonym substitution.
pub fn word_attack_ga(
    model: &TargetModel,
    example: &Example,
    synonyms: &SynonymTable,
    cfg: &GaConfig,
) -> Result<AttackResult> {
    word_attack_ga_traced(model, example, synonyms, cfg).map(|(r, _)| r)
}

/// [`word_attack_ga`] that also returns the per-generation best fitness.
pub fn word_attack_ga_traced(
    model: &TargetModel,
    example: &Example,
    synonyms: &SynonymTable,
    cfg: &GaConfig,
) -> Result<(AttackResult, GaTrace)> {
    cfg.validate()?;
    let words: Vec<&str> = example.text.split_whitespace().collect();
    if words.is_empty() {
        return Err(Error::invalid("cannot attack an empty text"));
    }
    let original_prediction = model.predict(&example.text)?.class;
    // Candidate lists are fixed up front from the original words only.
    let candidates: Vec<Vec<String>> = words
        .iter()
        .map(|w| {
            let core = split_core(w).1.to_lowercase();
            synonyms
                .get(&core)
                .map(|c| c.iter().take(cfg.top_k_synonyms).cloned().collect())
                .unwrap_or_default()
        })
        .collect();
    let slots: Vec<usize> = (0..words.len()).filter(|&i| !candidates[i].is_empty()).collect();
    let unchanged = |n_queries| AttackResult {
        original: example.clone(),
        adversarial_text: example.text.clone(),
        success: false,
        n_queries,
        perturbed_positions: Vec::new(),
        original_prediction,
        adversarial_prediction: original_prediction,
    };
    if slots.is_empty() {
        return Ok((unchanged(0), GaTrace::default()));
    }
    let budget = cfg.substitution_budget(words.len());
    let mut rng = seed::rng(cfg.seed, "word-attack", example.id as u64);

    // A member holds, per word, the chosen candidate index (None = original).
    type Member = Vec<Option<usize>>;
    let render = |m: &Member| -> String {
        words
            .iter()
            .zip(m)
            .enumerate()
            .map(|(i, (w, c))| match c {
                None => (*w).to_string(),
                Some(k) => {
                    let (pre, _, post) = split_core(w);
                    format!("{pre}{}{post}", candidates[i][*k])
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    let n_queries = Cell::new(0usize);
    let evaluate = |m: &Member| -> Result<(f64, usize)> {
        n_queries.set(n_queries.get() + 1);
        let p = model.predict(&render(m))?;
        Ok((1.0 - p.activations.probs[original_prediction], p.class))
    };
    let mutate = |m: &mut Member, rng: &mut ChaCha8Rng| {
        let used: Vec<usize> = slots.iter().copied().filter(|&i| m[i].is_some()).collect();
        let pos = if used.len() >= budget {
            *used.choose(rng).expect("budget >= 1")
        } else {
            *slots.choose(rng).expect("non-empty")
        };
        m[pos] = Some(rng.random_range(0..candidates[pos].len()));
    };

    let mut population: Vec<Member> = (0..cfg.population_size)
        .map(|_| {
            let mut m = vec![None; words.len()];
            mutate(&mut m, &mut rng);
            m
        })
        .collect();
    let mut scores: Vec<(f64, usize)> = population.iter().map(evaluate).collect::<Result<_>>()?;
    let mut trace = GaTrace::default();

    for generation in 0..cfg.generations {
        let best = best_index(&scores);
        trace.best_fitness.push(scores[best].0);
        let flipped = (0..population.len())
            .filter(|&i| scores[i].1 != original_prediction)
            .max_by(|&a, &b| scores[a].0.total_cmp(&scores[b].0).then(b.cmp(&a)));
        if let Some(i) = flipped {
            let m = &population[i];
            let result = AttackResult {
                original: example.clone(),
                adversarial_text: render(m),
                success: true,
                n_queries: n_queries.get(),
                perturbed_positions: (0..m.len()).filter(|&j| m[j].is_some()).collect(),
                original_prediction,
                adversarial_prediction: scores[i].1,
            };
            return Ok((result, trace));
        }
        if generation + 1 == cfg.generations {
            break;
        }
        let fitness: Vec<f64> = scores.iter().map(|s| s.0.max(0.0)).collect();
        let chooser = WeightedIndex::new(&fitness).ok();
        let pick = |rng: &mut ChaCha8Rng| match &chooser {
            Some(w) => w.sample(rng),
            None => rng.random_range(0..population.len()),
        };
        let mut next = vec![population[best].clone()];
        let mut next_scores = vec![scores[best]];
        while next.len() < cfg.population_size {
            let (a, b) = (pick(&mut rng), pick(&mut rng));
            let mut child: Member = population[a]
                .iter()
                .zip(&population[b])
                .map(|(x, y)| if rng.random::<bool>() { *x } else { *y })
                .collect();
            let mut used: Vec<usize> = slots.iter().copied().filter(|&i| child[i].is_some()).collect();
            if used.len() > budget {
                used.shuffle(&mut rng);
                for &i in &used[budget..] {
                    child[i] = None;
                }
            }
            mutate(&mut child, &mut rng);
            next_scores.push(evaluate(&child)?);
            next.push(child);
        }
        population = next;
        scores = next_scores;
    }
    let best = best_index(&scores);
    let m = &population[best];
    let result = AttackResult {
        original: example.clone(),
        adversarial_text: render(m),
        success: false,
        n_queries: n_queries.get(),
        perturbed_positions: (0..m.len()).filter(|&j| m[j].is_some()).collect(),
        original_prediction,
        adversarial_prediction: scores[best].1,
    };
    Ok((result, trace))
}

fn best_index(scores: &[(f64, usize)]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.0 > scores[best].0 {
            best = i;
        }
    }
    best
}

/// A configured attack.
#[derive(Debug, Clone, PartialEq)]
pub enum Attack {
    Char(CharAttackConfig),
    Word { cfg: GaConfig, synonyms: SynonymTable },
}

impl Attack {
    pub fn name(&self) -> &'static str {
        match self {
            Attack::Char(_) => "char",
            Attack::Word { .. } => "word",
        }
    }

    pub fn run(&self, model: &TargetModel, example: &Example) -> Result<AttackResult> {
        match self {
            Attack::Char(cfg) => char_attack(model, example, cfg),
            Attack::Word { cfg, synonyms } => word_attack_ga(model, example, synonyms, cfg),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectSplit {
    Train,
    Test,
}

/// Detection label of an unmodified input.
pub const ORIGINAL: u8 = 1;
/// Detection label of an adversarial input.
pub const ADVERSARIAL: u8 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub text: String,
    pub detect_label: u8,
    pub source_id: usize,
    pub split: DetectSplit,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackStats {
    pub n_test: usize,
    pub n_correct: usize,
    pub n_attacked: usize,
    pub n_success: usize,
    pub total_queries: usize,
}

impl AttackStats {
    pub fn clean_accuracy(&self) -> f64 {
        self.n_correct as f64 / self.n_test.max(1) as f64
    }

    pub fn success_rate(&self) -> f64 {
        self.n_success as f64 / self.n_attacked.max(1) as f64
    }

    /// Accuracy on the attacked examples after the attack (clean correct
    /// examples the attack did not flip).
    pub fn accuracy_under_attack(&self) -> f64 {
        (self.n_attacked - self.n_success) as f64 / self.n_attacked.max(1) as f64
    }
}

/// Balanced original/adversarial records with a pair-atomic 80-20 split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionDataset {
    pub records: Vec<DetectionRecord>,
    /// Set when fewer successful attacks than requested were found.
    pub short: bool,
    pub stats: AttackStats,
    pub results: Vec<AttackResult>,
}

impl DetectionDataset {
    pub fn split(&self, split: DetectSplit) -> Vec<&DetectionRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn n_pairs(&self) -> usize {
        self.records.len() / 2
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    /// Reads records back, skipping `#` comment lines; attack statistics are
    /// not part of the file.
    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let r: DetectionRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            if r.detect_label > 1 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "detect_label must be 0 or 1".into(),
                });
            }
            records.push(r);
        }
        Ok(DetectionDataset {
            records,
            short: false,
            stats: AttackStats::default(),
            results: Vec::new(),
        })
    }
}

/// Filters `test` to correctly classified examples, attacks them in id order
/// and pairs each successful attack with its original until `target_size / 2`
/// pairs exist.
pub fn build_detection_dataset<F>(
    model: &TargetModel,
    test: &Corpus,
    attack: F,
    target_size: usize,
    seed: u64,
) -> Result<DetectionDataset>
where
    F: Fn(&Example) -> Result<AttackResult> + Sync,
{
    let want = target_size / 2;
    if want == 0 {
        return Err(Error::invalid("target_size must be at least 2"));
    }
    let mut stats = AttackStats {
        n_test: test.len(),
        ..Default::default()
    };
    let mut correct = Vec::new();
    for ex in &test.examples {
        if model.predict(&ex.text)?.class == ex.label {
            correct.push(ex);
        }
    }
    stats.n_correct = correct.len();

    let mut kept: Vec<AttackResult> = Vec::new();
    let chunk = (rayon::current_num_threads() * 4).max(8);
    for block in correct.chunks(chunk) {
        if kept.len() >= want {
            break;
        }
        let results: Vec<AttackResult> = block.par_iter().map(|ex| attack(ex)).collect::<Result<_>>()?;
        for r in results {
            if kept.len() >= want {
                break;
            }
            stats.n_attacked += 1;
            stats.total_queries += r.n_queries;
            if r.success {
                stats.n_success += 1;
                kept.push(r);
            }
        }
    }
    let short = kept.len() < want;
    if short {
        log::warn!("only {} successful attacks, wanted {want}", kept.len());
    }
    let mut order: Vec<usize> = (0..kept.len()).collect();
    order.shuffle(&mut seed::rng(seed, "detection-split", 0));
    let n_train = (kept.len() as f64 * 0.8).round() as usize;
    let mut side = vec![DetectSplit::Test; kept.len()];
    for &i in &order[..n_train] {
        side[i] = DetectSplit::Train;
    }
    let mut records = Vec::with_capacity(kept.len() * 2);
    for (r, &split) in kept.iter().zip(&side) {
        records.push(DetectionRecord {
            text: r.original.text.clone(),
            detect_label: ORIGINAL,
            source_id: r.original.id,
            split,
        });
        records.push(DetectionRecord {
            text: r.adversarial_text.clone(),
            detect_label: ADVERSARIAL,
            source_id: r.original.id,
            split,
        });
    }
    Ok(DetectionDataset {
        records,
        short,
        stats,
        results: kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn qwerty_covers_alnum() {
        let kb = KeyboardMap::qwerty();
        assert!(kb.neighbors('g').unwrap().contains(&'h'));
        assert!(kb.neighbors('5').is_some());
        assert!(kb.neighbors('!').is_none());
        assert!(KeyboardMap::from_json("{\"a\": [\"s\"]}").is_err());
    }

    #[test]
    fn swap_keeps_first_char_and_can_reach_last_pair() {
        let kb = KeyboardMap::qwerty();
        let word: Vec<char> = "warmth".chars().collect();
        let mut seen = BTreeSet::new();
        for s in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let w: String = CharOp::Swap.apply(&word, &kb, &mut rng).into_iter().collect();
            assert!(w.starts_with('w'));
            assert_eq!(w.len(), 6);
            seen.insert(w);
        }
        assert!(seen.contains("warmht"));
        assert!(!seen.contains("awrmth"));
    }

    #[test]
    fn short_words_skip_internal_ops() {
        let kb = KeyboardMap::qwerty();
        let two: Vec<char> = "ok".chars().collect();
        assert!(!CharOp::Swap.applicable(&two, &kb));
        assert!(!CharOp::Drop.applicable(&two, &kb));
        assert!(CharOp::Add.applicable(&two, &kb));
        assert!(CharOp::Keyboard.applicable(&two, &kb));
        let punct: Vec<char> = "--".chars().collect();
        assert!(!CharOp::Keyboard.applicable(&punct, &kb));
    }

    #[test]
    fn drop_and_add_change_length_by_one() {
        let kb = KeyboardMap::qwerty();
        let w: Vec<char> = "movie".chars().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = CharOp::Drop.apply(&w, &kb, &mut rng);
        assert_eq!(d.len(), 4);
        assert_eq!(d[0], 'm');
        assert_eq!(*d.last().unwrap(), 'e');
        assert_eq!(CharOp::Add.apply(&w, &kb, &mut rng).len(), 6);
        let k = CharOp::Keyboard.apply(&w, &kb, &mut rng);
        assert_eq!(k.len(), 5);
        assert_eq!(k.iter().zip(&w).filter(|(a, b)| a != b).count(), 1);
    }

    #[test]
    fn budget_is_ceiling() {
        let cfg = CharAttackConfig::default();
        assert_eq!(cfg.word_budget(4), 2);
        assert_eq!(cfg.word_budget(5), 3);
        let ga = GaConfig::default();
        assert_eq!(ga.substitution_budget(3), 1);
        assert_eq!(ga.substitution_budget(14), 3);
    }

    #[test]
    fn split_core_keeps_punctuation() {
        assert_eq!(split_core("visits,"), ("", "visits", ","));
        assert_eq!(split_core("\"Great!\""), ("\"", "Great", "!\""));
        assert_eq!(split_core("..."), ("...", "", ""));
    }
}
