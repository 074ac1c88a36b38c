//! Labeled text corpora: JSONL loading, word tokenization, vocabularies,
//! stratified splits, and a seeded synthetic corpus generator that stands in
//! for a real sentiment dataset at desk scale.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const DEFAULT_MAX_LEN: usize = 64;

const LABEL_HEADER_KEY: &str = "__labels__";

/// A labeled training or test point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: usize,
    pub text: String,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub examples: Vec<Example>,
    pub n_classes: usize,
    /// Optional class names, indexed by class.
    pub label_names: Option<Vec<String>>,
}

impl Corpus {
    pub fn new(examples: Vec<Example>, n_classes: usize) -> Result<Self> {
        for ex in &examples {
            if ex.text.trim().is_empty() {
                return Err(Error::invalid(format!("example {} has empty text", ex.id)));
            }
            if ex.label >= n_classes {
                return Err(Error::invalid(format!(
                    "example {} has label {} >= {n_classes}",
                    ex.id, ex.label
                )));
            }
        }
        Ok(Corpus {
            examples,
            n_classes,
            label_names: None,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().map(|e| e.text.as_str())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for ex in &self.examples {
            counts[ex.label] += 1;
        }
        counts
    }

    pub fn ids(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.id).collect()
    }
}

/// Reads a JSONL corpus. The first line may be a `{"__labels__": {...}}`
/// header mapping label names to class indices.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&raw)
}

pub fn parse_jsonl(raw: &str) -> Result<Corpus> {
    let mut registry: Option<BTreeMap<String, usize>> = None;
    let mut examples = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let obj = v.as_object().ok_or_else(|| Error::Parse {
            line: lineno,
            msg: "expected a JSON object".into(),
        })?;
        if let Some(header) = obj.get(LABEL_HEADER_KEY) {
            if !examples.is_empty() || registry.is_some() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "label header must be the first line".into(),
                });
            }
            let map = header.as_object().ok_or_else(|| Error::Parse {
                line: lineno,
                msg: "label header must map names to indices".into(),
            })?;
            let mut reg = BTreeMap::new();
            for (name, idx) in map {
                let idx = idx.as_u64().ok_or_else(|| Error::Parse {
                    line: lineno,
                    msg: format!("label {name:?} has a non-integer index"),
                })?;
                reg.insert(name.clone(), idx as usize);
            }
            registry = Some(reg);
            continue;
        }
        let text = obj
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Parse {
                line: lineno,
                msg: "missing string field \"text\"".into(),
            })?;
        if text.trim().is_empty() {
            return Err(Error::Parse {
                line: lineno,
                msg: "text is empty".into(),
            });
        }
        let label = match obj.get("label") {
            Some(Value::Number(n)) => n.as_u64().map(|x| x as usize).ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("label {n} is not a non-negative integer"),
            })?,
            Some(Value::String(name)) => registry
                .as_ref()
                .and_then(|r| r.get(name).copied())
                .ok_or_else(|| Error::Parse {
                    line: lineno,
                    msg: format!("label {name:?} not in the label header"),
                })?,
            Some(other) => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("unsupported label type: {other}"),
                })
            }
            None => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "missing field \"label\"".into(),
                })
            }
        };
        examples.push(Example {
            id: examples.len(),
            text: text.to_string(),
            label,
        });
    }
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let max_label = examples.iter().map(|e| e.label).max().unwrap_or(0);
    let mut n_classes = max_label + 1;
    let label_names = registry.map(|reg| {
        let width = reg.values().copied().max().map_or(0, |m| m + 1);
        n_classes = n_classes.max(width);
        let mut names: Vec<String> = (0..n_classes).map(|c| c.to_string()).collect();
        for (name, idx) in reg {
            names[idx] = name;
        }
        names
    });
    Ok(Corpus {
        examples,
        n_classes,
        label_names,
    })
}

/// Writes a corpus as JSONL. When the corpus carries label names, a header
/// line is emitted and labels are written by name.
pub fn write_jsonl(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    if let Some(names) = &corpus.label_names {
        let header: serde_json::Map<String, Value> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), Value::from(i)))
            .collect();
        out.push_str(&serde_json::to_string(&serde_json::json!({ LABEL_HEADER_KEY: header }))?);
        out.push('\n');
    }
    for ex in &corpus.examples {
        let label = match &corpus.label_names {
            Some(names) => Value::from(names[ex.label].clone()),
            None => Value::from(ex.label),
        };
        out.push_str(&serde_json::to_string(&serde_json::json!({ "text": ex.text, "label": label }))?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Lowercases, splits on unicode whitespace and strips non-alphanumeric
/// characters from both token edges. Tokens that become empty are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Vec<String>", try_from = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_ID] != PAD_TOKEN || tokens[UNK_ID] != UNK_TOKEN {
            return Err(Error::invalid("vocabulary must start with <pad>, <unk>"));
        }
        Vocab::from_tokens(tokens.into_iter().skip(2))
    }
}

impl Vocab {
    /// Builds a vocabulary from an explicit token list (specials excluded).
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut all = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        all.extend(tokens);
        let mut index = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocab { tokens: all, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.get(token).is_some_and(|&i| i > UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Hex digest over the ordered token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        format!("{:x}", h.finalize())
    }

}

/// Tokens with frequency `>= min_freq`, ordered by descending frequency and
/// then ascending token.
pub fn build_vocab(corpus: &Corpus, min_freq: usize) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in corpus.texts() {
        for tok in tokenize(text) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|&(ref t, c)| c >= min_freq && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocab::from_tokens(kept.into_iter().map(|(t, _)| t))
}

/// Fixed-length token ids with padding only at the tail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    ids: Vec<usize>,
    true_len: usize,
}

impl TokenSeq {
    pub fn new(ids: Vec<usize>, true_len: usize) -> Result<Self> {
        if true_len == 0 || true_len > ids.len() {
            return Err(Error::invalid(format!(
                "true_len {true_len} out of range for {} ids",
                ids.len()
            )));
        }
        if ids[true_len..].iter().any(|&i| i != PAD_ID) {
            return Err(Error::invalid("padding must be confined to the tail"));
        }
        Ok(TokenSeq { ids, true_len })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn true_len(&self) -> usize {
        self.true_len
    }

    pub fn tokens(&self) -> &[usize] {
        &self.ids[..self.true_len]
    }

    pub fn max_len(&self) -> usize {
        self.ids.len()
    }
}

pub fn encode(text: &str, vocab: &Vocab, max_len: usize) -> Result<TokenSeq> {
    if max_len == 0 {
        return Err(Error::invalid("max_len must be at least 1"));
    }
    let words = tokenize(text);
    if words.is_empty() {
        return Err(Error::invalid("text has no tokens"));
    }
    let true_len = words.len().min(max_len);
    let mut ids: Vec<usize> = words[..true_len].iter().map(|w| vocab.id(w)).collect();
    ids.resize(max_len, PAD_ID);
    TokenSeq::new(ids, true_len)
}

pub fn decode(seq: &TokenSeq, vocab: &Vocab) -> Vec<String> {
    seq.tokens()
        .iter()
        .map(|&i| vocab.token(i).unwrap_or(UNK_TOKEN).to_string())
        .collect()
}

/// Word → candidate substitutes, in preference order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymTable {
    map: BTreeMap<String, Vec<String>>,
}

impl SynonymTable {
    /// Normalizes entries: keys and candidates lowercased, self-maps removed,
    /// duplicates dropped keeping the first occurrence. Empty lists vanish.
    pub fn new(entries: impl IntoIterator<Item = (String, Vec<String>)>) -> Self {
        let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (word, cands) in entries {
            let word = word.to_lowercase();
            let list = map.entry(word.clone()).or_default();
            for c in cands {
                let c = c.to_lowercase();
                if c != word && !c.is_empty() && !list.contains(&c) {
                    list.push(c);
                }
            }
        }
        map.retain(|_, v| !v.is_empty());
        SynonymTable { map }
    }

    pub fn get(&self, word: &str) -> Option<&[String]> {
        self.map.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<String>)> {
        self.map.iter()
    }

    pub fn parse_tsv(raw: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (word, rest) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: "expected word<TAB>syn1,syn2,...".into(),
            })?;
            let cands = rest
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            entries.push((word.trim().to_string(), cands));
        }
        Ok(SynonymTable::new(entries))
    }

    pub fn load_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&raw)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (w, cands) in &self.map {
            out.push_str(w);
            out.push('\t');
            out.push_str(&cands.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_tsv().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub keywords: Vec<String>,
}

/// Recipe for a synthetic corpus: disjoint per-class keyword pools, a shared
/// filler pool and per-keyword synonyms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: Vec<ClassSpec>,
    pub filler: Vec<String>,
    pub synonyms: BTreeMap<String, Vec<String>>,
    pub min_words: usize,
    pub max_words: usize,
    /// Own-class keywords injected into every example.
    pub keywords_per_example: usize,
    /// Upper bound on keywords drawn from other classes; kept below
    /// `keywords_per_example` so the label stays recoverable.
    pub max_distractors: usize,
    /// Size of a pool of generated pseudo-words forming a long tail, so
    /// that clean held-out text also carries out-of-vocabulary tokens.
    #[serde(default)]
    pub rare_pool_size: usize,
    /// Upper bound on tail words per example.
    #[serde(default)]
    pub max_rare_words: usize,
}

fn words(list: &str) -> Vec<String> {
    list.split_whitespace().map(str::to_string).collect()
}

impl SyntheticSpec {
    /// Two-class, review-style corpus.
    pub fn sentiment() -> Self {
        let pos = words("good great excellent superb wonderful brilliant delightful charming moving enjoyable");
        let neg = words("bad awful terrible dreadful boring dull poor weak tedious clumsy");
        let filler = words(
            "the a movie film plot story actor actress scene director script music camera \
             this that it was is with and of on in for at cast ending character role \
             dialogue pacing editing visuals premise sequel screen audience review minute \
             hour theater studio score light shot frame screenplay budget release \
             fine fair decent okay average ordinary modest solid plain mild \
             passable adequate serviceable middling routine standard regular typical usual common",
        );
        let syn = |list: &str| words(list);
        let mut synonyms = BTreeMap::new();
        let pairs: [(&str, &str); 20] = [
            ("good", "fine decent solid okay"),
            ("great", "grand solid fine decent"),
            ("excellent", "fine solid adequate decent"),
            ("superb", "fine solid decent grand"),
            ("wonderful", "fine pleasant decent okay"),
            ("brilliant", "bright solid fine decent"),
            ("delightful", "pleasant fine okay decent"),
            ("charming", "pleasant fine okay mild"),
            ("moving", "touching fine decent solid"),
            ("enjoyable", "pleasant passable fine okay"),
            ("bad", "mediocre average ordinary middling"),
            ("awful", "average ordinary middling routine"),
            ("terrible", "mediocre average ordinary plain"),
            ("dreadful", "average routine ordinary plain"),
            ("boring", "routine standard plain usual"),
            ("dull", "plain mild routine usual"),
            ("poor", "modest average plain mediocre"),
            ("weak", "mild modest plain average"),
            ("tedious", "routine long standard typical"),
            ("clumsy", "awkward average plain ordinary"),
        ];
        for (k, s) in pairs {
            synonyms.insert(k.to_string(), syn(s));
        }
        SyntheticSpec {
            classes: vec![
                ClassSpec {
                    name: "negative".into(),
                    keywords: neg,
                },
                ClassSpec {
                    name: "positive".into(),
                    keywords: pos,
                },
            ],
            filler,
            synonyms,
            min_words: 10,
            max_words: 18,
            keywords_per_example: 2,
            max_distractors: 1,
            rare_pool_size: 4000,
            max_rare_words: 2,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::invalid("synthetic spec needs at least two classes"));
        }
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (c, class) in self.classes.iter().enumerate() {
            if class.keywords.is_empty() {
                return Err(Error::invalid(format!("class {} has no keywords", class.name)));
            }
            for k in &class.keywords {
                if let Some(&other) = seen.get(k.as_str()) {
                    if other != c {
                        return Err(Error::invalid(format!(
                            "keyword {k:?} appears in classes {} and {}",
                            self.classes[other].name, class.name
                        )));
                    }
                }
                seen.insert(k, c);
            }
        }
        if self.filler.is_empty() {
            return Err(Error::invalid("synthetic spec needs a filler pool"));
        }
        if let Some(f) = self.filler.iter().find(|f| seen.contains_key(f.as_str())) {
            return Err(Error::invalid(format!("filler word {f:?} is also a keyword")));
        }
        if self.keywords_per_example == 0 || self.max_distractors >= self.keywords_per_example {
            return Err(Error::invalid(
                "need keywords_per_example >= 1 and max_distractors < keywords_per_example",
            ));
        }
        if self.max_rare_words > 0 && self.rare_pool_size == 0 {
            return Err(Error::invalid("max_rare_words needs a non-empty rare pool"));
        }
        if self.min_words < self.keywords_per_example + self.max_distractors + self.max_rare_words
            || self.max_words < self.min_words
        {
            return Err(Error::invalid("word-count range cannot hold the keywords"));
        }
        Ok(())
    }
}

/// Pronounceable pseudo-words that collide with no keyword or filler word.
fn rare_pool(seed: u64, spec: &SyntheticSpec) -> Vec<String> {
    const ONSETS: &[&str] = &["b", "br", "d", "f", "g", "gl", "k", "l", "m", "n", "p", "pr", "r", "s", "st", "t", "v", "z"];
    const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
    const CODAS: &[&str] = &["", "", "n", "r", "s", "l", "k", "x"];
    let taken: HashSet<&str> = spec
        .classes
        .iter()
        .flat_map(|c| c.keywords.iter())
        .chain(&spec.filler)
        .map(String::as_str)
        .collect();
    let mut rng = seed::rng(seed, "synthetic-rare", 0);
    let mut seen = HashSet::new();
    let mut pool = Vec::with_capacity(spec.rare_pool_size);
    while pool.len() < spec.rare_pool_size {
        let mut w = String::new();
        for _ in 0..rng.random_range(2..=3) {
            for part in [ONSETS, VOWELS, CODAS] {
                w.push_str(part[rng.random_range(0..part.len())]);
            }
        }
        if !taken.contains(w.as_str()) && seen.insert(w.clone()) {
            pool.push(w);
        }
    }
    pool
}

/// Generates `n_per_class` examples per class. Examples are interleaved by
/// class and ids are sequential.
pub fn generate_synthetic(
    seed: u64,
    n_per_class: usize,
    spec: &SyntheticSpec,
) -> Result<(Corpus, SynonymTable)> {
    if n_per_class == 0 {
        return Err(Error::invalid("n_per_class must be positive"));
    }
    spec.validate()?;
    let n_classes = spec.classes.len();
    let rare = rare_pool(seed, spec);
    let mut rng = seed::rng(seed, "synthetic", 0);
    let mut examples = Vec::with_capacity(n_per_class * n_classes);
    for _ in 0..n_per_class {
        for (c, class) in spec.classes.iter().enumerate() {
            let n_words = rng.random_range(spec.min_words..=spec.max_words);
            let n_distract = rng.random_range(0..=spec.max_distractors);
            let mut ws: Vec<&str> = Vec::with_capacity(n_words);
            for _ in 0..spec.keywords_per_example {
                ws.push(class.keywords[rng.random_range(0..class.keywords.len())].as_str());
            }
            for _ in 0..n_distract {
                let mut other = rng.random_range(0..n_classes - 1);
                if other >= c {
                    other += 1;
                }
                let pool = &spec.classes[other].keywords;
                ws.push(pool[rng.random_range(0..pool.len())].as_str());
            }
            if !rare.is_empty() {
                for _ in 0..rng.random_range(0..=spec.max_rare_words) {
                    ws.push(rare[rng.random_range(0..rare.len())].as_str());
                }
            }
            while ws.len() < n_words {
                ws.push(spec.filler[rng.random_range(0..spec.filler.len())].as_str());
            }
            ws.shuffle(&mut rng);
            examples.push(Example {
                id: examples.len(),
                text: ws.join(" "),
                label: c,
            });
        }
    }
    let mut corpus = Corpus::new(examples, n_classes)?;
    corpus.label_names = Some(spec.classes.iter().map(|c| c.name.clone()).collect());
    let table = SynonymTable::new(spec.synonyms.iter().map(|(k, v)| (k.clone(), v.clone())));
    Ok((corpus, table))
}

/// Split fractions; must sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Self {
        SplitFractions { train, val, test }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Corpus,
    pub val: Corpus,
    pub test: Corpus,
}

/// Largest-remainder allocation of `n` items over `fractions`.
fn allocate(n: usize, fractions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if fractions[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    counts
}

/// Label-stratified, seeded train/val/test split.
pub fn split(corpus: &Corpus, fractions: SplitFractions, seed: u64) -> Result<Splits> {
    let fr = [fractions.train, fractions.val, fractions.test];
    if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("split fractions must lie in [0,1] and sum to 1"));
    }
    let active = fr.iter().filter(|&&f| f > 0.0).count();
    let mut by_class: Vec<Vec<&Example>> = vec![Vec::new(); corpus.n_classes];
    for ex in &corpus.examples {
        by_class[ex.label].push(ex);
    }
    let mut parts: [Vec<Example>; 3] = Default::default();
    for (c, members) in by_class.iter_mut().enumerate() {
        if members.len() < active {
            return Err(Error::invalid(format!(
                "class {c} has {} examples, fewer than the {active} requested splits",
                members.len()
            )));
        }
        let mut rng = seed::rng(seed, "split", c as u64);
        members.shuffle(&mut rng);
        let counts = allocate(members.len(), &fr);
        let mut it = members.iter();
        for (part, &k) in parts.iter_mut().zip(&counts) {
            part.extend(it.by_ref().take(k).map(|e| (*e).clone()));
        }
    }
    let [mut train, mut val, mut test] = parts;
    for p in [&mut train, &mut val, &mut test] {
        p.sort_by_key(|e| e.id);
    }
    let wrap = |examples| Corpus {
        examples,
        n_classes: corpus.n_classes,
        label_names: corpus.label_names.clone(),
    };
    Ok(Splits {
        train: wrap(train),
        val: wrap(val),
        test: wrap(test),
    })
}

/// Distinct words across all texts of a corpus.
pub fn word_set(corpus: &Corpus) -> HashSet<String> {
    corpus.texts().flat_map(tokenize).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus_of(texts: &[(&str, usize)]) -> Corpus {
        Corpus::new(
            texts
                .iter()
                .enumerate()
                .map(|(i, (t, l))| Example {
                    id: i,
                    text: t.to_string(),
                    label: *l,
                })
                .collect(),
            2,
        )
        .unwrap()
    }

    #[test]
    fn jsonl_two_lines() {
        let c = parse_jsonl("{\"text\":\"good\",\"label\":0}\n{\"text\":\"bad one\",\"label\":2}\n").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.n_classes, 3);
        assert_eq!(c.examples[1].id, 1);
    }

    #[test]
    fn jsonl_errors() {
        assert!(matches!(parse_jsonl(""), Err(Error::EmptyCorpus)));
        let err = parse_jsonl("{\"text\":\"a\",\"label\":0}\nnot json\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_jsonl("{\"text\":\"a\",\"label\":\"pos\"}\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_jsonl("{\"text\":\"a\",\"label\":1.5}\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_jsonl("{\"text\":\"a\",\"label\":[1]}\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn jsonl_label_names_round_trip() {
        let raw = "{\"__labels__\":{\"neg\":0,\"pos\":1}}\n{\"text\":\"fine film\",\"label\":\"pos\"}\n{\"text\":\"dull\",\"label\":\"neg\"}\n";
        let c = parse_jsonl(raw).unwrap();
        assert_eq!(c.examples[0].label, 1);
        assert_eq!(c.label_names.as_deref(), Some(&["neg".to_string(), "pos".to_string()][..]));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        write_jsonl(&c, &p).unwrap();
        assert_eq!(load_jsonl(&p).unwrap(), c);
    }

    #[test]
    fn vocab_threshold_and_order() {
        let c = corpus_of(&[("a b", 0), ("a", 1)]);
        let v = build_vocab(&c, 1).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "a", "b"]);
        let v2 = build_vocab(&c, 2).unwrap();
        assert_eq!(v2.tokens(), &["<pad>", "<unk>", "a"]);
        assert_eq!(build_vocab(&c, 1).unwrap(), v);
        assert_eq!(v.hash(), build_vocab(&c, 1).unwrap().hash());
    }

    #[test]
    fn encode_examples() {
        let v = Vocab::from_tokens(["good".to_string(), "movie".to_string()]).unwrap();
        let s = encode("Good movie", &v, 4).unwrap();
        assert_eq!(s.ids(), &[2, 3, 0, 0]);
        assert_eq!(s.true_len(), 2);
        let long = encode("good movie good movie good movie good movie good movie", &v, 4).unwrap();
        assert_eq!(long.ids(), &[2, 3, 2, 3]);
        assert_eq!(encode("good zebra", &v, 3).unwrap().ids(), &[2, UNK_ID, 0]);
        assert!(encode("   \t ", &v, 4).is_err());
        assert!(encode("good", &v, 0).is_err());
    }

    #[test]
    fn tokenizer_strips_edges() {
        assert_eq!(tokenize("Hello, World! it's \"fine\"."), vec!["hello", "world", "it's", "fine"]);
        assert!(tokenize("... !!").is_empty());
    }

    #[test]
    fn synonym_table_normalizes() {
        let t = SynonymTable::new([
            ("Good".to_string(), vec!["good".into(), "fine".into(), "fine".into(), "ok".into()]),
            ("x".to_string(), vec!["x".into()]),
        ]);
        assert_eq!(t.get("good").unwrap(), &["fine", "ok"]);
        assert!(t.get("x").is_none());
        assert_eq!(SynonymTable::parse_tsv(&t.to_tsv()).unwrap(), t);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec::sentiment();
        let (a, ta) = generate_synthetic(3, 20, &spec).unwrap();
        let (b, tb) = generate_synthetic(3, 20, &spec).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(ta, tb);
        let (c, _) = generate_synthetic(4, 20, &spec).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.class_counts(), c.class_counts());
        assert!(generate_synthetic(3, 0, &spec).is_err());
    }

    #[test]
    fn synthetic_rejects_overlapping_pools() {
        let mut spec = SyntheticSpec::sentiment();
        spec.classes[1].keywords.push("bad".into());
        assert!(generate_synthetic(1, 5, &spec).is_err());
    }

    #[test]
    fn split_eighty_twenty() {
        let (c, _) = generate_synthetic(1, 50, &SyntheticSpec::sentiment()).unwrap();
        let s = split(&c, SplitFractions::new(0.8, 0.0, 0.2), 9).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 0, 20));
        let mut all: Vec<usize> = s.train.ids().into_iter().chain(s.test.ids()).collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split(&c, SplitFractions::new(0.8, 0.0, 0.2), 9).unwrap(), s);
    }

    #[test]
    fn split_errors() {
        let c = corpus_of(&[("a", 0), ("b", 0), ("c", 0), ("d", 1)]);
        assert!(split(&c, SplitFractions::new(0.5, 0.0, 0.5), 1).is_err());
        assert!(split(&c, SplitFractions::new(0.5, 0.1, 0.5), 1).is_err());
    }

    proptest! {
        #[test]
        fn split_partitions_and_stratifies(n0 in 3usize..40, n1 in 3usize..40, seed in 0u64..1000,
                                            tr in 0.3f64..0.8, va in 0.0f64..0.2) {
            let te = 1.0 - tr - va;
            let mut exs = Vec::new();
            for i in 0..(n0 + n1) {
                exs.push(Example { id: i, text: format!("w{i}"), label: usize::from(i >= n0) });
            }
            let c = Corpus::new(exs, 2).unwrap();
            let f = SplitFractions::new(tr, va, te);
            let s = split(&c, f, seed).unwrap();
            let mut ids: Vec<usize> = s.train.ids().into_iter().chain(s.val.ids()).chain(s.test.ids()).collect();
            ids.sort();
            prop_assert_eq!(ids, (0..n0 + n1).collect::<Vec<_>>());
            for (part, frac) in [(&s.train, tr), (&s.val, va), (&s.test, te)] {
                let counts = part.class_counts();
                for (k, n) in [n0, n1].iter().enumerate() {
                    let target = frac * *n as f64;
                    prop_assert!((counts[k] as f64 - target).abs() <= 1.0);
                }
            }
        }

        #[test]
        fn encode_decode_in_vocab(words in proptest::collection::vec("[a-z]{1,6}", 1..20), max_len in 1usize..25) {
            let text = words.join(" ");
            let c = Corpus::new(vec![Example { id: 0, text: text.clone(), label: 0 }], 1).unwrap();
            let v = build_vocab(&c, 1).unwrap();
            let seq = encode(&text, &v, max_len).unwrap();
            let back = decode(&seq, &v);
            let n = words.len().min(max_len);
            prop_assert_eq!(back, words[..n].to_vec());
        }
    }
}
