//! Detection features (NNIF, Mahalanobis, LID), a full-batch logistic
//! regression detector and its evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{DetectSplit, DetectionDataset, DetectionRecord};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::influence::{CounterSnapshot, InfluenceEngine, InfluenceReport, LissaConfig};
use crate::mahalanobis::{fit_class_gaussians, mahal_features, MahalVariant, Ridge};
use crate::model::{Layer, LayerActivations, TargetModel};
use crate::neighbors::{build_index, lid_estimate, query_ranks_distances, RepIndex};

/// Finite stand-in for a divergent LID estimate.
pub const LID_CAP: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnifFeatures {
    pub ranks_helpful: Vec<f64>,
    pub dists_helpful: Vec<f64>,
    pub ranks_harmful: Vec<f64>,
    pub dists_harmful: Vec<f64>,
}

impl NnifFeatures {
    /// `(R↑, D↑, R↓, D↓)` concatenated.
    pub fn to_vec(&self) -> Vec<f64> {
        [
            &self.ranks_helpful[..],
            &self.dists_helpful,
            &self.ranks_harmful,
            &self.dists_harmful,
        ]
        .concat()
    }

    pub fn names(m: usize) -> Vec<String> {
        ["r_helpful", "d_helpful", "r_harmful", "d_harmful"]
            .iter()
            .flat_map(|p| (0..m).map(move |i| format!("{p}_{i}")))
            .collect()
    }
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Ranks and distances of the report's helpful and harmful ids, each block
/// sorted ascending.
pub fn nnif_features(report: &InfluenceReport, index: &RepIndex, query_rep: &[f64]) -> Result<NnifFeatures> {
    let up = query_ranks_distances(index, query_rep, &report.helpful)?;
    let down = query_ranks_distances(index, query_rep, &report.harmful)?;
    let ranks = |r: Vec<usize>| sorted(r.into_iter().map(|x| x as f64).collect());
    Ok(NnifFeatures {
        ranks_helpful: ranks(up.ranks),
        dists_helpful: sorted(up.dists),
        ranks_harmful: ranks(down.ranks),
        dists_harmful: sorted(down.dists),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegConfig {
    pub l2: f64,
    pub max_steps: usize,
    pub tol: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            l2: 1.0,
            max_steps: 5000,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features with zero training variance; their weights stay 0.
    pub constant: Vec<bool>,
    pub l2: f64,
    pub steps: usize,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LogRegModel {
    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        let z = self.standardize(x);
        self.bias + z.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Probability of the positive (original) class.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.decision(x))
    }
}

/// Standardized design with a fixed row order so the fit does not depend on
/// how the rows were presented.
struct Design {
    rows: Vec<Vec<f64>>,
    y: Vec<f64>,
    free: Vec<bool>,
    l2: f64,
}

impl Design {
    fn n(&self) -> f64 {
        self.rows.len() as f64
    }

    /// Mean logistic loss plus `l2/(2n)‖w‖²`; bias unpenalized.
    fn objective(&self, w: &[f64], b: f64) -> f64 {
        let mut s = 0.0;
        for (x, y) in self.rows.iter().zip(&self.y) {
            let z = b + dot(x, w);
            s += softplus(z) - y * z;
        }
        s / self.n() + self.l2 / (2.0 * self.n()) * dot(w, w)
    }

    fn gradient(&self, w: &[f64], b: f64) -> (Vec<f64>, f64) {
        let mut gw = vec![0.0; w.len()];
        let mut gb = 0.0;
        for (x, y) in self.rows.iter().zip(&self.y) {
            let r = sigmoid(b + dot(x, w)) - y;
            gb += r;
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += r * xi;
            }
        }
        let n = self.n();
        for ((g, wi), free) in gw.iter_mut().zip(w).zip(&self.free) {
            *g = if *free { *g / n + self.l2 / n * wi } else { 0.0 };
        }
        (gw, gb / n)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient of the training objective at `(w, b)` in standardized space.
/// Exposed for finite-difference checks.
pub fn logreg_objective_and_grad(model: &LogRegModel, x: &[Vec<f64>], y: &[u8]) -> (f64, Vec<f64>, f64) {
    let d = design(model, x, y);
    let (gw, gb) = d.gradient(&model.weights, model.bias);
    (d.objective(&model.weights, model.bias), gw, gb)
}

fn design(model: &LogRegModel, x: &[Vec<f64>], y: &[u8]) -> Design {
    let mut pairs: Vec<(Vec<f64>, f64)> = x.iter().zip(y).map(|(r, &l)| (model.standardize(r), l as f64)).collect();
    pairs.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.total_cmp(&b.1))
    });
    let (rows, y) = pairs.into_iter().unzip();
    Design {
        rows,
        y,
        free: model.constant.iter().map(|c| !c).collect(),
        l2: model.l2,
    }
}

/// Full-batch, diagonally preconditioned gradient descent with Armijo
/// backtracking on standardized features.
pub fn fit_logreg(x: &[Vec<f64>], y: &[u8], cfg: &LogRegConfig) -> Result<LogRegModel> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("logistic regression needs n >= 2 rows with one label each"));
    }
    if !(y.contains(&0) && y.contains(&1)) || y.iter().any(|&l| l > 1) {
        return Err(Error::invalid("logistic regression needs both labels 0 and 1"));
    }
    if !(cfg.l2 >= 0.0) {
        return Err(Error::invalid("l2 must be >= 0"));
    }
    let f = x[0].len();
    if x.iter().any(|r| r.len() != f || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("feature rows must be finite and equally long"));
    }
    // Canonical row order makes every floating-point sum below independent
    // of how the caller ordered the data.
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| {
        x[i].iter()
            .zip(&x[j])
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y[i].cmp(&y[j]))
    });
    let x: Vec<Vec<f64>> = order.iter().map(|&i| x[i].clone()).collect();
    let y: Vec<u8> = order.iter().map(|&i| y[i]).collect();
    let (x, y) = (&x[..], &y[..]);
    let n = x.len() as f64;
    let mut mean = vec![0.0; f];
    for r in x {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; f];
    for r in x {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let constant: Vec<bool> = var.iter().map(|v| !(v / n > 1e-24)).collect();
    let std: Vec<f64> = var
        .iter()
        .zip(&constant)
        .map(|(v, &c)| if c { 1.0 } else { (v / n).sqrt() })
        .collect();

    let mut model = LogRegModel {
        weights: vec![0.0; f],
        bias: 0.0,
        mean,
        std,
        constant,
        l2: cfg.l2,
        steps: 0,
    };
    let d = design(&model, x, y);
    let (mut w, mut b) = (model.weights.clone(), 0.0);
    let mut obj = d.objective(&w, b);
    // Diagonal preconditioner: curvature bound of the logistic term on
    // standardized features plus the ridge.
    let pw = 1.0 / (0.25 + cfg.l2 / n);
    let pb = 4.0;
    let mut t: f64 = 1.0;
    for step in 0..cfg.max_steps {
        let (gw, gb) = d.gradient(&w, b);
        if (dot(&gw, &gw) + gb * gb).sqrt() < cfg.tol {
            break;
        }
        model.steps = step + 1;
        let decrease = pw * dot(&gw, &gw) + pb * gb * gb;
        t = (t * 2.0).min(1.0);
        loop {
            let nw: Vec<f64> = w.iter().zip(&gw).map(|(a, g)| a - t * pw * g).collect();
            let nb = b - t * pb * gb;
            let nobj = d.objective(&nw, nb);
            if nobj <= obj - 0.5 * t * decrease {
                w = nw;
                b = nb;
                obj = nobj;
                break;
            }
            t *= 0.5;
            if t < 1e-20 {
                model.weights = w;
                model.bias = b;
                return Ok(model);
            }
        }
    }
    model.weights = w;
    model.bias = b;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorMetrics {
    pub detector: String,
    pub accuracy: f64,
    pub auc: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n: usize,
    /// Extra bookkeeping, such as the selected LID k.
    #[serde(default)]
    pub meta: BTreeMap<String, f64>,
}

/// Area under the ROC curve by the rank statistic; ties get midranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> f64 {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return 0.5;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    let pos_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    (pos_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64
}

/// Accuracy and confusion at probability 0.5; originals are the positive class.
pub fn evaluate_detector(model: &LogRegModel, x: &[Vec<f64>], y: &[u8]) -> DetectorMetrics {
    let scores: Vec<f64> = x.iter().map(|r| model.predict_proba(r)).collect();
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (s, &l) in scores.iter().zip(y) {
        match (*s >= 0.5, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let n = y.len();
    DetectorMetrics {
        detector: String::new(),
        accuracy: (tp + tn) as f64 / n.max(1) as f64,
        auc: auc(&scores, y),
        tp,
        fp,
        tn,
        fn_,
        n,
        meta: BTreeMap::new(),
    }
}

/// Per-record features split by the dataset's detection split.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub names: Vec<String>,
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<u8>,
    pub test_x: Vec<Vec<f64>>,
    pub test_y: Vec<u8>,
}

impl FeatureSet {
    /// `rows[i]` belongs to `records[i]`.
    pub fn from_rows(names: Vec<String>, records: &[DetectionRecord], rows: Vec<Vec<f64>>) -> Self {
        let mut fs = FeatureSet {
            names,
            train_x: Vec::new(),
            train_y: Vec::new(),
            test_x: Vec::new(),
            test_y: Vec::new(),
        };
        for (r, x) in records.iter().zip(rows) {
            match r.split {
                DetectSplit::Train => {
                    fs.train_x.push(x);
                    fs.train_y.push(r.detect_label);
                }
                DetectSplit::Test => {
                    fs.test_x.push(x);
                    fs.test_y.push(r.detect_label);
                }
            }
        }
        fs
    }

    /// Fits on the train split and scores the held-out test split.
    pub fn fit_evaluate(&self, name: &str, cfg: &LogRegConfig) -> Result<(LogRegModel, DetectorMetrics)> {
        let model = fit_logreg(&self.train_x, &self.train_y, cfg)?;
        let mut metrics = evaluate_detector(&model, &self.test_x, &self.test_y);
        metrics.detector = name.to_string();
        Ok((model, metrics))
    }

    /// CSV with a `split,label` prefix and one column per feature.
    pub fn to_csv(&self) -> String {
        let mut out = format!("split,label,{}\n", self.names.join(","));
        let parts = [("train", &self.train_x, &self.train_y), ("test", &self.test_x, &self.test_y)];
        for (split, xs, ys) in parts {
            for (x, y) in xs.iter().zip(ys.iter()) {
                write!(out, "{split},{y}").unwrap();
                for v in x {
                    write!(out, ",{v:?}").unwrap();
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn record_activations(model: &TargetModel, records: &[DetectionRecord]) -> Result<Vec<LayerActivations>> {
    records.par_iter().map(|r| model.activations(&r.text)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnifConfig {
    pub m: usize,
    pub sample_size: usize,
    pub layer: Layer,
    pub lissa: LissaConfig,
    pub logreg: LogRegConfig,
    pub seed: u64,
}

impl Default for NnifConfig {
    fn default() -> Self {
        NnifConfig {
            m: 500,
            sample_size: 6000,
            layer: Layer::H2,
            lissa: LissaConfig::default(),
            logreg: LogRegConfig::default(),
            seed: 0,
        }
    }
}

/// Influence reports for every detection record, computed once at `cfg.m`.
#[derive(Debug, Clone)]
pub struct NnifReports {
    pub reports: Vec<InfluenceReport>,
    pub index: RepIndex,
    pub reps: Vec<Vec<f64>>,
    pub counters: CounterSnapshot,
}

impl NnifReports {
    /// Features from the top `m` of each report.
    pub fn features(&self, records: &[DetectionRecord], m: usize) -> Result<FeatureSet> {
        let rows = self
            .reports
            .par_iter()
            .zip(&self.reps)
            .map(|(rep, q)| Ok(nnif_features(&rep.truncated(m)?, &self.index, q)?.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureSet::from_rows(NnifFeatures::names(m), records, rows))
    }
}

/// Scores each record against a fixed training sample. The test point's
/// label is the model's own prediction; record `i` uses test id `i`.
pub fn compute_nnif_reports(
    model: &TargetModel,
    train: &Corpus,
    ds: &DetectionDataset,
    cfg: &NnifConfig,
) -> Result<NnifReports> {
    let train_seqs = model.encode_corpus(train)?;
    let s = cfg.sample_size.min(train_seqs.len());
    if cfg.sample_size > train_seqs.len() {
        log::info!("sample size {} capped at {} train points", cfg.sample_size, s);
    }
    let engine = InfluenceEngine::new(&model.params, &train_seqs, s, cfg.lissa.clone(), cfg.seed)?;
    let index = build_index(model, train, cfg.layer)?;
    let acts = record_activations(model, &ds.records)?;
    let reports = ds
        .records
        .par_iter()
        .zip(&acts)
        .enumerate()
        .map(|(i, (r, a))| {
            let z = model.encode_labeled(i, &r.text, a.predicted())?;
            engine.top_influences(&z, i, cfg.m)
        })
        .collect::<Result<Vec<_>>>()?;
    let reps = acts.iter().map(|a| a.layer(cfg.layer).to_vec()).collect();
    Ok(NnifReports {
        reports,
        index,
        reps,
        counters: engine.counters.snapshot(),
    })
}

pub fn run_nnif_detector(
    model: &TargetModel,
    train: &Corpus,
    ds: &DetectionDataset,
    cfg: &NnifConfig,
) -> Result<DetectorMetrics> {
    let reports = compute_nnif_reports(model, train, ds, cfg)?;
    let fs = reports.features(&ds.records, cfg.m)?;
    let (_, mut metrics) = fs.fit_evaluate("nnif", &cfg.logreg)?;
    metrics.meta.insert("m".into(), cfg.m as f64);
    Ok(metrics)
}

pub fn mahal_feature_set(
    model: &TargetModel,
    train: &Corpus,
    ds: &DetectionDataset,
    variant: MahalVariant,
    ridge: Ridge,
) -> Result<FeatureSet> {
    let stats = fit_class_gaussians(model, train, variant.layers(), ridge)?;
    let acts = record_activations(model, &ds.records)?;
    let rows = acts
        .iter()
        .map(|a| mahal_features(&stats, a, variant))
        .collect::<Result<Vec<_>>>()?;
    let names = variant.layers().iter().map(|l| format!("mahal_{}", l.name())).collect();
    Ok(FeatureSet::from_rows(names, &ds.records, rows))
}

pub fn run_mahal_detector(
    model: &TargetModel,
    train: &Corpus,
    ds: &DetectionDataset,
    variant: MahalVariant,
    ridge: Ridge,
    logreg: &LogRegConfig,
) -> Result<DetectorMetrics> {
    let name = match variant {
        MahalVariant::Penultimate => "mahal_penult",
        MahalVariant::Ensemble => "mahal_ensemble",
    };
    let fs = mahal_feature_set(model, train, ds, variant, ridge)?;
    Ok(fs.fit_evaluate(name, logreg)?.1)
}

/// Per-layer LID features at each `k`.
pub fn lid_feature_sets(
    model: &TargetModel,
    train: &Corpus,
    ds: &DetectionDataset,
    k_grid: &[usize],
) -> Result<Vec<(usize, FeatureSet)>> {
    if k_grid.is_empty() {
        return Err(Error::invalid("LID k grid is empty"));
    }
    let indexes = Layer::ALL
        .iter()
        .map(|&l| build_index(model, train, l))
        .collect::<Result<Vec<_>>>()?;
    let acts = record_activations(model, &ds.records)?;
    let names: Vec<String> = Layer::ALL.iter().map(|l| format!("lid_{}", l.name())).collect();
    k_grid
        .iter()
        .map(|&k| {
            let rows = acts
                .par_iter()
                .map(|a| {
                    indexes
                        .iter()
                        .map(|idx| Ok(lid_estimate(a.layer(idx.layer()), idx, k)?.value.min(LID_CAP)))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((k, FeatureSet::from_rows(names.clone(), &ds.records, rows)))
        })
        .collect()
}

/// Picks `k` by detection-train accuracy (ties to the smaller k).
pub fn run_lid_detector(
    model: &TargetModel,
    train: &Corpus,
    ds: &DetectionDataset,
    k_grid: &[usize],
    logreg: &LogRegConfig,
) -> Result<DetectorMetrics> {
    let mut sets = lid_feature_sets(model, train, ds, k_grid)?;
    sets.sort_by_key(|(k, _)| *k);
    let mut best: Option<(f64, usize, DetectorMetrics)> = None;
    for (k, fs) in &sets {
        let (lr, mut metrics) = fs.fit_evaluate("lid", logreg)?;
        let train_acc = evaluate_detector(&lr, &fs.train_x, &fs.train_y).accuracy;
        if best.as_ref().is_none_or(|b| train_acc > b.0) {
            metrics.meta.insert("k".into(), *k as f64);
            metrics.meta.insert("train_accuracy".into(), train_acc);
            best = Some((train_acc, *k, metrics));
        }
    }
    Ok(best.expect("grid is non-empty").2)
}

/// One row per detector, in the given order.
pub fn metrics_csv(rows: &[DetectorMetrics]) -> String {
    let mut out = String::from("detector,accuracy,auc,tp,fp,tn,fn,n\n");
    for m in rows {
        writeln!(
            out,
            "{},{:.6},{:.6},{},{},{},{},{}",
            m.detector, m.accuracy, m.auc, m.tp, m.fp, m.tn, m.fn_, m.n
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_toy_set() {
        let x = vec![vec![0.0, 0.0], vec![0.2, 0.1], vec![2.0, 2.0], vec![2.2, 1.9]];
        let y = vec![0, 0, 1, 1];
        let m = fit_logreg(&x, &y, &LogRegConfig::default()).unwrap();
        assert_eq!(evaluate_detector(&m, &x, &y).accuracy, 1.0);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(fit_logreg(&[vec![1.0], vec![2.0]], &[1, 1], &LogRegConfig::default()).is_err());
    }

    #[test]
    fn huge_l2_gives_prior() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let y = vec![0, 1, 1, 1];
        let cfg = LogRegConfig {
            l2: 1e12,
            ..Default::default()
        };
        let m = fit_logreg(&x, &y, &cfg).unwrap();
        assert!(m.weights[0].abs() < 1e-9);
        assert!((m.predict_proba(&[0.0]) - 0.75).abs() < 1e-6);
    }

    #[test]
    fn auc_extremes() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]), 1.0);
        assert_eq!(auc(&[0.5; 4], &[0, 1, 0, 1]), 0.5);
    }

    #[test]
    fn constant_feature_is_ignored() {
        let x = vec![vec![5.0, 0.0], vec![5.0, 1.0], vec![5.0, 2.0], vec![5.0, 3.0]];
        let m = fit_logreg(&x, &[0, 0, 1, 1], &LogRegConfig::default()).unwrap();
        assert_eq!(m.weights[0], 0.0);
        assert_eq!(m.std[0], 1.0);
    }

    #[test]
    fn feature_names_match_length() {
        assert_eq!(NnifFeatures::names(3).len(), 12);
    }
}
