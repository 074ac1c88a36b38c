//! Config-driven experiment stages: train, attack, detect, analyze, report.
//!
//! Every randomized stage takes a seed derived from the root seed and a
//! stage label, so adding a stage never shifts another stage's stream.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    build_scene, compare_views, if_ids, m_sweep, nn_ids, separability, sweep_csv, SeparabilityReport, SubspaceScene,
    SvmConfig, TsneConfig, View,
};
use crate::attacks::{build_detection_dataset, Attack, CharAttackConfig, DetectionDataset, GaConfig, KeyboardMap};
use crate::corpus::{self, Corpus, SplitFractions, Splits, SynonymTable, SyntheticSpec};
use crate::detectors::{
    compute_nnif_reports, lid_feature_sets, mahal_feature_set, metrics_csv, DetectorMetrics, FeatureSet, LogRegConfig,
    NnifConfig,
};
use crate::error::{Error, Result};
use crate::influence::{InfluenceEngine, LissaConfig};
use crate::mahalanobis::{MahalVariant, Ridge};
use crate::model::{self, Layer, ModelConfig, ModelParams, TargetModel, TrainConfig, TrainHistory};
use crate::neighbors::build_index;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    Synthetic {
        n_per_class: usize,
        #[serde(default)]
        spec: Option<SyntheticSpec>,
    },
    File {
        path: PathBuf,
        #[serde(default)]
        synonyms: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub source: CorpusSource,
    pub split: SplitFractions,
    pub min_freq: usize,
    pub max_len: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            source: CorpusSource::Synthetic {
                n_per_class: 1500,
                spec: None,
            },
            split: SplitFractions::new(0.6, 0.1, 0.3),
            min_freq: 2,
            max_len: corpus::DEFAULT_MAX_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub hidden_dims: [usize; 2],
    pub dropout_rate: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            embed_dim: 32,
            hidden_dims: [32, 32],
            dropout_rate: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Char,
    Word,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub kind: AttackKind,
    pub char: CharAttackConfig,
    /// Keyboard adjacency JSON; QWERTY when absent.
    pub keyboard: Option<PathBuf>,
    pub word: GaConfig,
    /// Number of detection records (originals plus adversarial twins).
    pub detection_size: usize,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            kind: AttackKind::Char,
            char: CharAttackConfig::default(),
            keyboard: None,
            word: GaConfig::default(),
            detection_size: 400,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Nnif,
    MahalPenult,
    MahalEnsemble,
    Lid,
}

impl DetectorKind {
    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Nnif => "nnif",
            DetectorKind::MahalPenult => "mahal_penult",
            DetectorKind::MahalEnsemble => "mahal_ensemble",
            DetectorKind::Lid => "lid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnifSection {
    pub m: usize,
    pub sample_size: usize,
    pub layer: Layer,
    pub lissa: LissaConfig,
}

impl Default for NnifSection {
    fn default() -> Self {
        NnifSection {
            m: 10,
            sample_size: 6000,
            layer: Layer::H2,
            lissa: LissaConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectSection {
    pub detectors: Vec<DetectorKind>,
    pub nnif: NnifSection,
    pub lid_k_grid: Vec<usize>,
    pub ridge: Ridge,
    pub logreg: LogRegConfig,
}

impl Default for DetectSection {
    fn default() -> Self {
        DetectSection {
            detectors: vec![
                DetectorKind::Nnif,
                DetectorKind::MahalPenult,
                DetectorKind::MahalEnsemble,
                DetectorKind::Lid,
            ],
            nnif: NnifSection::default(),
            lid_k_grid: vec![10, 20, 100],
            ridge: Ridge::default(),
            logreg: LogRegConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub scenes: bool,
    pub sweep: bool,
    pub pairs: usize,
    pub top_k: usize,
    pub m_values: Vec<usize>,
    pub tsne: TsneConfig,
    pub svm: SvmConfig,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            scenes: true,
            sweep: true,
            pairs: 50,
            top_k: 25,
            m_values: vec![5, 10, 25, 50, 100],
            tsne: TsneConfig::default(),
            svm: SvmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub detect: DetectSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

impl ExperimentConfig {
    /// Defaults everywhere except the mandatory seed.
    pub fn with_seed(seed: u64) -> Self {
        ExperimentConfig {
            seed,
            out_dir: None,
            corpus: CorpusSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            attack: AttackSection::default(),
            detect: DetectSection::default(),
            analysis: AnalysisSection::default(),
        }
    }

    pub fn from_toml(raw: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(raw).map_err(|e| Error::invalid(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&raw)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    /// Checks referenced files and value ranges.
    pub fn validate(&self) -> Result<()> {
        match &self.corpus.source {
            CorpusSource::Synthetic { n_per_class, .. } if *n_per_class == 0 => {
                return Err(Error::invalid("corpus.source.synthetic.n_per_class must be positive"));
            }
            CorpusSource::File { path, synonyms } => {
                for p in std::iter::once(path).chain(synonyms) {
                    if !p.exists() {
                        return Err(Error::invalid(format!("corpus file {} does not exist", p.display())));
                    }
                }
                if self.attack.kind == AttackKind::Word && synonyms.is_none() {
                    return Err(Error::invalid("word attack on a file corpus needs corpus.source.file.synonyms"));
                }
            }
            _ => {}
        }
        if let Some(k) = &self.attack.keyboard {
            if !k.exists() {
                return Err(Error::invalid(format!("keyboard file {} does not exist", k.display())));
            }
        }
        if self.corpus.max_len == 0 {
            return Err(Error::invalid("corpus.max_len must be positive"));
        }
        if self.attack.detection_size < 4 {
            return Err(Error::invalid("attack.detection_size must be at least 4"));
        }
        if self.detect.detectors.is_empty() {
            return Err(Error::invalid("detect.detectors is empty"));
        }
        if self.detect.nnif.m == 0 {
            return Err(Error::invalid("detect.nnif.m must be positive"));
        }
        if self.analysis.m_values.is_empty() || self.analysis.m_values.contains(&0) {
            return Err(Error::invalid("analysis.m_values must be non-empty and positive"));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form; output location excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn stage_seed(&self, label: &str) -> u64 {
        seed::derive(self.seed, label, 0)
    }
}

/// Corpus splits plus the synonym table used by the word attack.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub splits: Splits,
    pub synonyms: Option<SynonymTable>,
}

pub fn prepare_corpus(cfg: &ExperimentConfig) -> Result<Prepared> {
    let (corpus, synonyms): (Corpus, Option<SynonymTable>) = match &cfg.corpus.source {
        CorpusSource::Synthetic { n_per_class, spec } => {
            let spec = spec.clone().unwrap_or_else(SyntheticSpec::sentiment);
            let (c, t) = corpus::generate_synthetic(cfg.stage_seed("corpus"), *n_per_class, &spec)?;
            (c, Some(t))
        }
        CorpusSource::File { path, synonyms } => (
            corpus::load_jsonl(path)?,
            synonyms.as_ref().map(SynonymTable::load_tsv).transpose()?,
        ),
    };
    let splits = corpus::split(&corpus, cfg.corpus.split, cfg.stage_seed("split"))?;
    Ok(Prepared { splits, synonyms })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub clean_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub n_params: usize,
    pub vocab_hash: String,
    pub history: TrainHistory,
}

pub fn train_stage(cfg: &ExperimentConfig, prep: &Prepared) -> Result<(TargetModel, TrainReport)> {
    let vocab = corpus::build_vocab(&prep.splits.train, cfg.corpus.min_freq)?;
    let max_len = cfg.corpus.max_len;
    let mcfg = ModelConfig {
        vocab_size: vocab.len(),
        embed_dim: cfg.model.embed_dim,
        hidden_dims: cfg.model.hidden_dims,
        n_classes: prep.splits.train.n_classes,
        dropout_rate: cfg.model.dropout_rate,
        seed: cfg.stage_seed("model"),
    };
    let init = ModelParams::init(mcfg)?;
    let train_set = corpus_seqs(&prep.splits.train, &vocab, max_len)?;
    let val_set = corpus_seqs(&prep.splits.val, &vocab, max_len)?;
    let test_set = corpus_seqs(&prep.splits.test, &vocab, max_len)?;
    let tcfg = TrainConfig {
        seed: cfg.stage_seed("train"),
        ..cfg.train.clone()
    };
    let (params, history) = model::train(&init, &train_set, &val_set, &tcfg)?;
    let clean_accuracy = params.accuracy(&test_set)?;
    let report = TrainReport {
        clean_accuracy,
        val_accuracy: history.epochs.last().and_then(|e| e.val_accuracy),
        n_params: params.n_params(),
        vocab_hash: vocab.hash(),
        history,
    };
    Ok((TargetModel { params, vocab, max_len }, report))
}

fn corpus_seqs(c: &Corpus, vocab: &corpus::Vocab, max_len: usize) -> Result<Vec<model::LabeledSeq>> {
    model::encode_corpus(c, vocab, max_len)
}

/// Fails when the checkpoint was trained on a different vocabulary than
/// the one this config produces.
pub fn check_vocab(cfg: &ExperimentConfig, prep: &Prepared, model: &TargetModel) -> Result<()> {
    let vocab = corpus::build_vocab(&prep.splits.train, cfg.corpus.min_freq)?;
    if vocab.hash() != model.vocab.hash() {
        return Err(Error::invalid("checkpoint vocabulary does not match the configured corpus"));
    }
    Ok(())
}

pub fn make_attack(cfg: &ExperimentConfig, prep: &Prepared) -> Result<Attack> {
    Ok(match cfg.attack.kind {
        AttackKind::Char => {
            let mut c = cfg.attack.char.clone();
            c.seed = cfg.stage_seed("char-attack");
            if let Some(path) = &cfg.attack.keyboard {
                c.keyboard = KeyboardMap::load(path)?;
            }
            Attack::Char(c)
        }
        AttackKind::Word => Attack::Word {
            cfg: GaConfig {
                seed: cfg.stage_seed("word-attack"),
                ..cfg.attack.word.clone()
            },
            synonyms: prep
                .synonyms
                .clone()
                .ok_or_else(|| Error::invalid("word attack needs a synonym table"))?,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attack: String,
    pub clean_accuracy: f64,
    pub success_rate: f64,
    pub accuracy_under_attack: f64,
    pub mean_queries: f64,
    pub n_pairs: usize,
    pub short: bool,
}

pub fn attack_stage(cfg: &ExperimentConfig, prep: &Prepared, model: &TargetModel) -> Result<(DetectionDataset, AttackReport)> {
    let attack = make_attack(cfg, prep)?;
    let ds = build_detection_dataset(
        model,
        &prep.splits.test,
        |ex| attack.run(model, ex),
        cfg.attack.detection_size,
        cfg.stage_seed("detection"),
    )?;
    let s = &ds.stats;
    let report = AttackReport {
        attack: attack.name().to_string(),
        clean_accuracy: s.clean_accuracy(),
        success_rate: s.success_rate(),
        accuracy_under_attack: s.accuracy_under_attack(),
        mean_queries: s.total_queries as f64 / s.n_attacked.max(1) as f64,
        n_pairs: ds.n_pairs(),
        short: ds.short,
    };
    Ok((ds, report))
}

pub fn nnif_config(cfg: &ExperimentConfig, m: usize) -> NnifConfig {
    let n = &cfg.detect.nnif;
    NnifConfig {
        m,
        sample_size: n.sample_size,
        layer: n.layer,
        lissa: LissaConfig {
            seed: cfg.stage_seed("lissa"),
            ..n.lissa.clone()
        },
        logreg: cfg.detect.logreg.clone(),
        seed: cfg.stage_seed("influence"),
    }
}

#[derive(Debug, Clone)]
pub struct DetectOutput {
    pub metrics: Vec<DetectorMetrics>,
    pub features: BTreeMap<String, FeatureSet>,
}

pub fn detect_stage(cfg: &ExperimentConfig, prep: &Prepared, model: &TargetModel, ds: &DetectionDataset) -> Result<DetectOutput> {
    let train = &prep.splits.train;
    let d = &cfg.detect;
    let mut kinds = d.detectors.clone();
    kinds.dedup();
    let mut metrics = Vec::new();
    let mut features = BTreeMap::new();
    for kind in kinds {
        let (fs, mut m) = match kind {
            DetectorKind::Nnif => {
                let ncfg = nnif_config(cfg, d.nnif.m);
                let reports = compute_nnif_reports(model, train, ds, &ncfg)?;
                let fs = reports.features(&ds.records, ncfg.m)?;
                let (_, mut m) = fs.fit_evaluate(kind.name(), &d.logreg)?;
                m.meta.insert("m".into(), ncfg.m as f64);
                (fs, m)
            }
            DetectorKind::MahalPenult | DetectorKind::MahalEnsemble => {
                let variant = if kind == DetectorKind::MahalPenult {
                    MahalVariant::Penultimate
                } else {
                    MahalVariant::Ensemble
                };
                let fs = mahal_feature_set(model, train, ds, variant, d.ridge)?;
                let (_, m) = fs.fit_evaluate(kind.name(), &d.logreg)?;
                (fs, m)
            }
            DetectorKind::Lid => {
                let mut best: Option<(f64, FeatureSet, DetectorMetrics)> = None;
                let mut grid = d.lid_k_grid.clone();
                grid.sort_unstable();
                grid.retain(|&k| k < train.len());
                for (k, fs) in lid_feature_sets(model, train, ds, &grid)? {
                    let (lr, mut m) = fs.fit_evaluate(kind.name(), &d.logreg)?;
                    let train_acc = crate::detectors::evaluate_detector(&lr, &fs.train_x, &fs.train_y).accuracy;
                    if best.as_ref().is_none_or(|b| train_acc > b.0) {
                        m.meta.insert("k".into(), k as f64);
                        m.meta.insert("train_accuracy".into(), train_acc);
                        best = Some((train_acc, fs, m));
                    }
                }
                let (_, fs, m) = best.ok_or_else(|| Error::invalid("LID k grid is empty"))?;
                (fs, m)
            }
        };
        m.detector = kind.name().to_string();
        features.insert(kind.name().to_string(), fs);
        metrics.push(m);
    }
    Ok(DetectOutput { metrics, features })
}

#[derive(Debug, Clone)]
pub struct AnalysisOutput {
    pub scenes: Vec<SubspaceScene>,
    pub separability: Option<SeparabilityReport>,
    pub sweep: Vec<(usize, DetectorMetrics)>,
    pub ihvp_calls: usize,
}

pub fn analyze_stage(cfg: &ExperimentConfig, prep: &Prepared, model: &TargetModel, ds: &DetectionDataset) -> Result<AnalysisOutput> {
    let a = &cfg.analysis;
    let train = &prep.splits.train;
    let mut out = AnalysisOutput {
        scenes: Vec::new(),
        separability: None,
        sweep: Vec::new(),
        ihvp_calls: 0,
    };
    if a.sweep {
        let m_max = *a.m_values.iter().max().expect("validated non-empty");
        let ncfg = nnif_config(cfg, m_max);
        let reports = compute_nnif_reports(model, train, ds, &ncfg)?;
        out.ihvp_calls += reports.counters.ihvp_calls;
        out.sweep = m_sweep(&reports, &ds.records, &a.m_values, &cfg.detect.logreg)?;
    }
    if a.scenes {
        let layer = cfg.detect.nnif.layer;
        let index = build_index(model, train, layer)?;
        let seqs = model.encode_corpus(train)?;
        let ncfg = nnif_config(cfg, a.top_k);
        let s = ncfg.sample_size.min(seqs.len());
        let engine = InfluenceEngine::new(&model.params, &seqs, s, ncfg.lissa.clone(), ncfg.seed)?;
        let pairs: Vec<(usize, &str, &str)> = ds
            .records
            .chunks(2)
            .take(a.pairs)
            .enumerate()
            .map(|(i, p)| (i, p[0].text.as_str(), p[1].text.as_str()))
            .collect();
        let tsne = TsneConfig {
            seed: cfg.stage_seed("tsne"),
            ..a.tsne.clone()
        };
        let scenes: Vec<Vec<SubspaceScene>> = pairs
            .par_iter()
            .map(|&(i, orig, adv)| {
                let ao = model.activations(orig)?;
                let aa = model.activations(adv)?;
                let (ro, ra) = (ao.layer(layer), aa.layer(layer));
                let zo = model.encode_labeled(2 * i, orig, ao.predicted())?;
                let za = model.encode_labeled(2 * i + 1, adv, aa.predicted())?;
                let rep_o = engine.top_influences(&zo, 2 * i, a.top_k)?;
                let rep_a = engine.top_influences(&za, 2 * i + 1, a.top_k)?;
                let if_scene = build_scene(
                    i,
                    &index,
                    [ro, ra],
                    &if_ids(&rep_o, a.top_k)?,
                    &if_ids(&rep_a, a.top_k)?,
                    View::If,
                    &tsne,
                )?;
                let nn_scene = build_scene(
                    i,
                    &index,
                    [ro, ra],
                    &nn_ids(&index, ro, a.top_k)?,
                    &nn_ids(&index, ra, a.top_k)?,
                    View::Nn,
                    &tsne,
                )?;
                Ok(vec![if_scene, nn_scene])
            })
            .collect::<Result<_>>()?;
        out.scenes = scenes.into_iter().flatten().collect();
        out.ihvp_calls += engine.counters.snapshot().ihvp_calls;
        let if_view = separability(&out.scenes, View::If, &a.svm);
        let nn_view = separability(&out.scenes, View::Nn, &a.svm);
        out.separability = Some(compare_views(if_view, nn_view)?);
    }
    Ok(out)
}

/// Header line stamped on every CSV output.
pub fn csv_stamp(cfg: &ExperimentConfig) -> String {
    format!("# config_hash={} seed={}\n", cfg.hash(), cfg.seed)
}

/// JSON object with the config hash and seed next to the payload.
pub fn stamped_json<T: Serialize>(cfg: &ExperimentConfig, payload: &T) -> Result<String> {
    #[derive(Serialize)]
    struct Stamped<'a, T> {
        config_hash: String,
        seed: u64,
        #[serde(flatten)]
        payload: &'a T,
    }
    Ok(serde_json::to_string_pretty(&Stamped {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        payload,
    })?)
}

/// Reads a JSON file written by [`stamped_json`].
pub fn read_stamped<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<(String, T)> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&raw)?;
    let hash = value
        .get("config_hash")
        .and_then(|h| h.as_str())
        .ok_or_else(|| Error::invalid(format!("{} has no config_hash", path.display())))?
        .to_string();
    Ok((hash, serde_json::from_value(value)?))
}

pub fn write(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Detector table: one stamped CSV row per detector.
pub fn detection_table(cfg: &ExperimentConfig, metrics: &[DetectorMetrics]) -> String {
    csv_stamp(cfg) + &metrics_csv(metrics)
}

pub fn sweep_table(cfg: &ExperimentConfig, curve: &[(usize, DetectorMetrics)]) -> String {
    csv_stamp(cfg) + &sweep_csv(curve)
}

/// Merges detector metrics into a Markdown table.
pub fn markdown_report(attack: Option<&AttackReport>, metrics: &[DetectorMetrics]) -> String {
    let mut out = String::new();
    if let Some(a) = attack {
        writeln!(
            out,
            "Attack `{}`: clean accuracy {:.4}, success rate {:.4}, accuracy under attack {:.4}, {} pairs\n",
            a.attack, a.clean_accuracy, a.success_rate, a.accuracy_under_attack, a.n_pairs
        )
        .unwrap();
    }
    out.push_str("| detector | accuracy | auc | n |\n|---|---|---|---|\n");
    for m in metrics {
        writeln!(out, "| {} | {:.4} | {:.4} | {} |", m.detector, m.accuracy, m.auc, m.n).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml_uses_defaults() {
        let cfg = ExperimentConfig::from_toml("seed = 3").unwrap();
        assert_eq!(cfg, ExperimentConfig::with_seed(3));
        assert!(ExperimentConfig::from_toml("").is_err());
        assert!(ExperimentConfig::from_toml("seed = 1\nbogus = 2").is_err());
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let cfg = ExperimentConfig::with_seed(11);
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back.hash(), cfg.hash());
        let mut moved = cfg.clone();
        moved.out_dir = Some("elsewhere".into());
        assert_eq!(moved.hash(), cfg.hash());
        assert_ne!(ExperimentConfig::with_seed(12).hash(), cfg.hash());
    }

    #[test]
    fn missing_corpus_file_is_invalid() {
        let cfg = ExperimentConfig::from_toml(
            "seed = 1\n[corpus.source.file]\npath = \"/definitely/not/here.jsonl\"\n",
        )
        .unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Invalid(_))));
    }
}
