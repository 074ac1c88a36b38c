//! Neighborhood analyses: exact t-SNE scenes of influence and nearest
//! neighbor sets, linear separability of those scenes, a one-tailed test of
//! proportions, and the detection accuracy sweep over M.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::attacks::DetectionRecord;
use crate::detectors::{DetectorMetrics, LogRegConfig, NnifReports};
use crate::error::{Error, Result};
use crate::influence::InfluenceReport;
use crate::neighbors::RepIndex;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iters: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum_switch: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 15.0,
            iters: 500,
            learning_rate: 100.0,
            exaggeration: 4.0,
            exaggeration_iters: 100,
            momentum_switch: 250,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneOutput {
    pub coords: Vec<[f64; 2]>,
    /// Largest |H(Pᵢ) − ln(perplexity)| over points, in nats.
    pub max_entropy_error: f64,
    /// KL(P‖Q) right after early exaggeration ends.
    pub kl_after_exaggeration: f64,
    pub kl_final: f64,
}

const ENTROPY_TOL: f64 = 1e-5;

/// Row-conditional Gaussian affinities with bandwidths found by bisection so
/// that each row's entropy equals `ln(perplexity)`. Returns the rows and the
/// worst entropy error.
pub fn conditional_affinities(d2: &[Vec<f64>], perplexity: f64) -> Result<(Vec<Vec<f64>>, f64)> {
    let n = d2.len();
    let target = perplexity.ln();
    let mut rows = Vec::with_capacity(n);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let dmin = (0..n)
            .filter(|&j| j != i)
            .map(|j| d2[i][j])
            .fold(f64::INFINITY, f64::min);
        let row_at = |beta: f64| {
            let mut p: Vec<f64> = (0..n)
                .map(|j| if j == i { 0.0 } else { (-beta * (d2[i][j] - dmin)).exp() })
                .collect();
            let s: f64 = p.iter().sum();
            let mut h = 0.0;
            for (j, v) in p.iter_mut().enumerate() {
                *v /= s;
                if j != i && *v > 0.0 {
                    h -= *v * v.ln();
                }
            }
            (p, h)
        };
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let mut beta = 1.0;
        let mut found = None;
        for _ in 0..500 {
            let (p, h) = row_at(beta);
            let err = h - target;
            if err.abs() < ENTROPY_TOL {
                found = Some((p, err.abs()));
                break;
            }
            if err > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            if !beta.is_finite() || beta > 1e300 {
                break;
            }
        }
        let (p, err) = found.ok_or_else(|| {
            Error::numerical(format!("perplexity search failed at point {i}; too many duplicate points?"))
        })?;
        worst = worst.max(err);
        rows.push(p);
    }
    Ok((rows, worst))
}

fn sq_dists(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// Student-t affinities and their normalizer.
fn q_matrix(y: &[[f64; 2]]) -> (Vec<Vec<f64>>, f64) {
    let n = y.len();
    let mut num = vec![vec![0.0; n]; n];
    let mut z = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i][j] = v;
            num[j][i] = v;
            z += 2.0 * v;
        }
    }
    (num, z)
}

fn kl(p: &[Vec<f64>], y: &[[f64; 2]]) -> f64 {
    let (num, z) = q_matrix(y);
    let mut s = 0.0;
    for i in 0..p.len() {
        for j in 0..p.len() {
            if i != j && p[i][j] > 0.0 {
                s += p[i][j] * (p[i][j] / (num[i][j] / z).max(1e-300)).ln();
            }
        }
    }
    s
}

/// Exact t-SNE into two dimensions.
pub fn tsne_2d(points: &[Vec<f64>], cfg: &TsneConfig) -> Result<TsneOutput> {
    let n = points.len();
    if n < 3 {
        return Err(Error::invalid("t-SNE needs at least 3 points"));
    }
    if !(cfg.perplexity > 0.0 && cfg.perplexity < n as f64 / 3.0) {
        return Err(Error::invalid(format!(
            "perplexity {} must lie in (0, n/3) for n = {n}",
            cfg.perplexity
        )));
    }
    if cfg.iters < cfg.exaggeration_iters {
        return Err(Error::invalid("t-SNE iters must cover the exaggeration phase"));
    }
    let (cond, max_entropy_error) = conditional_affinities(&sq_dists(points), cfg.perplexity)?;
    let mut p = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            p[i][j] = ((cond[i][j] + cond[j][i]) / (2.0 * n as f64)).max(1e-12);
        }
        p[i][i] = 0.0;
    }

    let mut rng = seed::rng(cfg.seed, "tsne", 0);
    let normal = Normal::new(0.0, 1e-2).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut vel = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_after_exaggeration = f64::NAN;

    for it in 0..cfg.iters {
        let ex = if it < cfg.exaggeration_iters { cfg.exaggeration } else { 1.0 };
        let momentum = if it < cfg.momentum_switch { 0.5 } else { 0.8 };
        let (num, z) = q_matrix(&y);
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let m = (ex * p[i][j] - num[i][j] / z) * num[i][j];
                g[0] += 4.0 * m * (y[i][0] - y[j][0]);
                g[1] += 4.0 * m * (y[i][1] - y[j][1]);
            }
            for k in 0..2 {
                gains[i][k] = if (g[k] > 0.0) != (vel[i][k] > 0.0) {
                    gains[i][k] + 0.2
                } else {
                    (gains[i][k] * 0.8).max(0.01)
                };
                vel[i][k] = momentum * vel[i][k] - cfg.learning_rate * gains[i][k] * g[k];
            }
        }
        for (yi, v) in y.iter_mut().zip(&vel) {
            yi[0] += v[0];
            yi[1] += v[1];
        }
        let mean = [
            y.iter().map(|c| c[0]).sum::<f64>() / n as f64,
            y.iter().map(|c| c[1]).sum::<f64>() / n as f64,
        ];
        for yi in y.iter_mut() {
            yi[0] -= mean[0];
            yi[1] -= mean[1];
        }
        if it + 1 == cfg.exaggeration_iters {
            kl_after_exaggeration = kl(&p, &y);
        }
    }
    if y.iter().any(|c| !c[0].is_finite() || !c[1].is_finite()) {
        return Err(Error::numerical("t-SNE produced non-finite coordinates"));
    }
    let kl_final = kl(&p, &y);
    if cfg.exaggeration_iters == 0 {
        kl_after_exaggeration = kl_final;
    }
    Ok(TsneOutput {
        coords: y,
        max_entropy_error,
        kl_after_exaggeration,
        kl_final,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    If,
    Nn,
}

impl View {
    pub fn name(self) -> &'static str {
        match self {
            View::If => "if",
            View::Nn => "nn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Test,
    Adv,
    NnOrig,
    NnAdv,
    IfOrig,
    IfAdv,
}

impl Group {
    pub fn name(self) -> &'static str {
        match self {
            Group::Test => "test",
            Group::Adv => "adv",
            Group::NnOrig => "nn_orig",
            Group::NnAdv => "nn_adv",
            Group::IfOrig => "if_orig",
            Group::IfAdv => "if_adv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePoint {
    pub group: Group,
    pub train_id: Option<usize>,
    /// Neighbor of both anchors; kept once and left out of separability.
    pub shared: bool,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceScene {
    pub pair_id: usize,
    pub view: View,
    pub points: Vec<ScenePoint>,
    pub deduplicated: bool,
}

impl SubspaceScene {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,group,train_id,shared\n");
        for p in &self.points {
            let id = p.train_id.map(|i| i.to_string()).unwrap_or_default();
            writeln!(out, "{:?},{:?},{},{id},{}", p.x, p.y, p.group.name(), p.shared).unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Top `k` nearest train ids of a representation.
pub fn nn_ids(index: &RepIndex, rep: &[f64], k: usize) -> Result<Vec<usize>> {
    Ok(index.nearest(rep, k)?.into_iter().map(|(id, _)| id).collect())
}

/// Top `k` helpful train ids of a report.
pub fn if_ids(report: &InfluenceReport, k: usize) -> Result<Vec<usize>> {
    if k > report.helpful.len() {
        return Err(Error::invalid(format!(
            "report holds {} helpful ids, scene needs {k}",
            report.helpful.len()
        )));
    }
    Ok(report.helpful[..k].to_vec())
}

/// Projects both anchors and their neighbor sets with t-SNE. Neighbor
/// representations come from `index`. Perplexity is lowered when
/// deduplication leaves too few points for the configured value.
pub fn build_scene(
    pair_id: usize,
    index: &RepIndex,
    anchors: [&[f64]; 2],
    orig_ids: &[usize],
    adv_ids: &[usize],
    view: View,
    tsne: &TsneConfig,
) -> Result<SubspaceScene> {
    let (g_orig, g_adv) = match view {
        View::If => (Group::IfOrig, Group::IfAdv),
        View::Nn => (Group::NnOrig, Group::NnAdv),
    };
    let adv_set: BTreeSet<usize> = adv_ids.iter().copied().collect();
    let orig_set: BTreeSet<usize> = orig_ids.iter().copied().collect();
    let mut meta: Vec<(Group, Option<usize>, bool)> = vec![(Group::Test, None, false), (Group::Adv, None, false)];
    let mut reps: Vec<Vec<f64>> = vec![anchors[0].to_vec(), anchors[1].to_vec()];
    let mut seen = BTreeSet::new();
    let mut dedup = false;
    for (ids, group) in [(orig_ids, g_orig), (adv_ids, g_adv)] {
        for &id in ids {
            if !seen.insert(id) {
                dedup = true;
                continue;
            }
            let rep = index
                .rep(id)
                .ok_or_else(|| Error::invalid(format!("train id {id} is not in the index")))?;
            let shared = orig_set.contains(&id) && adv_set.contains(&id);
            meta.push((group, Some(id), shared));
            reps.push(rep.to_vec());
        }
    }
    let n = reps.len() as f64;
    let mut cfg = tsne.clone();
    if cfg.perplexity >= n / 3.0 {
        cfg.perplexity = (n - 1.0) / 3.0 - 0.5;
    }
    cfg.seed = seed::derive(tsne.seed, view.name(), pair_id as u64);
    let out = tsne_2d(&reps, &cfg)?;
    let points = meta
        .into_iter()
        .zip(out.coords)
        .map(|((group, train_id, shared), c)| ScenePoint {
            group,
            train_id,
            shared,
            x: c[0],
            y: c[1],
        })
        .collect();
    Ok(SubspaceScene {
        pair_id,
        view,
        points,
        deduplicated: dedup,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub lambda: f64,
    pub iters: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            lambda: 1e-3,
            iters: 2000,
        }
    }
}

/// Training accuracy of a soft-margin linear SVM fit by full-batch
/// subgradient descent (step `1/(λt)`), keeping the best-objective iterate.
pub fn linear_svm_accuracy(x: &[[f64; 2]], y: &[bool], cfg: &SvmConfig) -> f64 {
    let n = x.len() as f64;
    let mean = [x.iter().map(|p| p[0]).sum::<f64>() / n, x.iter().map(|p| p[1]).sum::<f64>() / n];
    let sd = |k: usize| {
        let v = x.iter().map(|p| (p[k] - mean[k]).powi(2)).sum::<f64>() / n;
        if v > 0.0 {
            v.sqrt()
        } else {
            1.0
        }
    };
    let sd = [sd(0), sd(1)];
    let xs: Vec<[f64; 2]> = x.iter().map(|p| [(p[0] - mean[0]) / sd[0], (p[1] - mean[1]) / sd[1]]).collect();
    let ys: Vec<f64> = y.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
    let eval = |w: &[f64; 3]| {
        let mut hinge = 0.0;
        let mut correct = 0;
        for (p, t) in xs.iter().zip(&ys) {
            let f = w[0] * p[0] + w[1] * p[1] + w[2];
            hinge += (1.0 - t * f).max(0.0);
            if (f >= 0.0) == (*t > 0.0) {
                correct += 1;
            }
        }
        let obj = 0.5 * cfg.lambda * (w[0] * w[0] + w[1] * w[1]) + hinge / n;
        (obj, correct as f64 / n)
    };
    let mut w = [0.0; 3];
    let mut best = eval(&w);
    for t in 1..=cfg.iters {
        let mut g = [cfg.lambda * w[0], cfg.lambda * w[1], 0.0];
        for (p, yt) in xs.iter().zip(&ys) {
            if yt * (w[0] * p[0] + w[1] * p[1] + w[2]) < 1.0 {
                g[0] -= yt * p[0] / n;
                g[1] -= yt * p[1] / n;
                g[2] -= yt / n;
            }
        }
        let eta = 1.0 / (cfg.lambda * t as f64);
        for k in 0..3 {
            w[k] -= eta * g[k];
        }
        let cur = eval(&w);
        if cur.0 < best.0 {
            best = cur;
        }
    }
    best.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityResult {
    pub view: View,
    pub per_scene: Vec<f64>,
    pub mean_accuracy: f64,
    /// Points classified across all scored scenes.
    pub n_points: usize,
    pub skipped: usize,
}

/// Mean per-scene SVM accuracy at separating the neighbors of the original
/// from those of the adversarial point. Anchors and shared points are left
/// out.
pub fn separability(scenes: &[SubspaceScene], view: View, cfg: &SvmConfig) -> SeparabilityResult {
    let mut per_scene = Vec::new();
    let mut n_points = 0;
    let mut skipped = 0;
    for s in scenes.iter().filter(|s| s.view == view) {
        let pts: Vec<&ScenePoint> = s
            .points
            .iter()
            .filter(|p| p.train_id.is_some() && !p.shared)
            .collect();
        let labels: Vec<bool> = pts.iter().map(|p| matches!(p.group, Group::NnOrig | Group::IfOrig)).collect();
        if !labels.contains(&true) || !labels.contains(&false) {
            skipped += 1;
            continue;
        }
        let xy: Vec<[f64; 2]> = pts.iter().map(|p| [p.x, p.y]).collect();
        per_scene.push(linear_svm_accuracy(&xy, &labels, cfg));
        n_points += pts.len();
    }
    let mean_accuracy = if per_scene.is_empty() {
        f64::NAN
    } else {
        per_scene.iter().sum::<f64>() / per_scene.len() as f64
    };
    SeparabilityResult {
        view,
        per_scene,
        mean_accuracy,
        n_points,
        skipped,
    }
}

/// Upper-tail p-value of the pooled two-proportion z statistic for
/// H1: `acc_if > acc_nn`, with `n` trials on each side.
pub fn proportions_ztest_one_tailed(acc_if: f64, acc_nn: f64, n: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&acc_if) || !(0.0..=1.0).contains(&acc_nn) || n == 0 {
        return Err(Error::invalid("accuracies must lie in [0, 1] and n >= 1"));
    }
    let pooled = (acc_if + acc_nn) / 2.0;
    let se = (pooled * (1.0 - pooled) * 2.0 / n as f64).sqrt();
    let diff = acc_if - acc_nn;
    if se == 0.0 {
        return Ok(if diff == 0.0 {
            0.5
        } else if diff > 0.0 {
            0.0
        } else {
            1.0
        });
    }
    let z = diff / se;
    Ok(StdNormal::standard().sf(z))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub if_view: SeparabilityResult,
    pub nn_view: SeparabilityResult,
    /// Trials per side used by the test: points scored in the IF view.
    pub n_trials: usize,
    pub p_value: f64,
}

pub fn compare_views(if_view: SeparabilityResult, nn_view: SeparabilityResult) -> Result<SeparabilityReport> {
    let n_trials = if_view.n_points.min(nn_view.n_points);
    if n_trials == 0 {
        return Err(Error::invalid("no scene could be scored"));
    }
    let p_value = proportions_ztest_one_tailed(if_view.mean_accuracy, nn_view.mean_accuracy, n_trials)?;
    Ok(SeparabilityReport {
        if_view,
        nn_view,
        n_trials,
        p_value,
    })
}

/// Detection accuracy for each `M`, truncating reports computed once at the
/// largest `M`.
pub fn m_sweep(
    reports: &NnifReports,
    records: &[DetectionRecord],
    m_values: &[usize],
    logreg: &LogRegConfig,
) -> Result<Vec<(usize, DetectorMetrics)>> {
    let have = reports.reports.first().map_or(0, |r| r.m());
    if let Some(&m) = m_values.iter().find(|&&m| m > have || m == 0) {
        return Err(Error::invalid(format!("M = {m} not available from reports at M = {have}")));
    }
    m_values
        .iter()
        .map(|&m| {
            let fs = reports.features(records, m)?;
            let (_, mut metrics) = fs.fit_evaluate("nnif", logreg)?;
            metrics.meta.insert("m".into(), m as f64);
            Ok((m, metrics))
        })
        .collect()
}

pub fn sweep_csv(curve: &[(usize, DetectorMetrics)]) -> String {
    let mut out = String::from("M,accuracy\n");
    for (m, metrics) in curve {
        writeln!(out, "{m},{:.6}", metrics.accuracy).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_input_rejected() {
        let pts = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert!(tsne_2d(&pts, &TsneConfig::default()).is_err());
        let cfg = TsneConfig {
            perplexity: 1.0,
            ..Default::default()
        };
        assert!(tsne_2d(&pts, &cfg).is_err());
    }

    #[test]
    fn all_duplicates_fail_calibration() {
        let pts = vec![vec![1.0, 1.0]; 12];
        let cfg = TsneConfig {
            perplexity: 3.0,
            ..Default::default()
        };
        assert!(matches!(tsne_2d(&pts, &cfg), Err(Error::Numerical(_))));
    }

    #[test]
    fn ztest_equal_is_half() {
        assert_eq!(proportions_ztest_one_tailed(0.6, 0.6, 50).unwrap(), 0.5);
        assert!(proportions_ztest_one_tailed(1.2, 0.6, 50).is_err());
    }

    #[test]
    fn svm_separates_clean_groups() {
        let x: Vec<[f64; 2]> = (0..20).map(|i| [i as f64 * 0.1, if i < 10 { 0.0 } else { 5.0 }]).collect();
        let y: Vec<bool> = (0..20).map(|i| i < 10).collect();
        assert_eq!(linear_svm_accuracy(&x, &y, &SvmConfig::default()), 1.0);
    }
}
