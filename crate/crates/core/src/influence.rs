//! Influence of training points on a test point's loss.
//!
//! `I_up,loss(z, z_test) = −∇θL(z_test)ᵀ H⁻¹ ∇θL(z)` is the first-order
//! change of the test loss when `z` is upweighted by ε. The inverse-Hessian
//! product is estimated with the LiSSA recursion over freshly sampled
//! minibatches; it is computed once per test point and reused for every
//! scored training point.
//!
//! Sign: a negative score means upweighting `z` lowers the test loss, so the
//! *helpful* set holds the lowest scores and the *harmful* set the highest.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, LabeledSeq, TwiceDifferentiable};
use crate::seed;

const DIVERGENCE_NORM: f64 = 1e8;

/// Access to minibatch Hessian-vector products over a fixed point set.
pub trait CurvatureOracle: Sync {
    fn dim(&self) -> usize;
    fn n_points(&self) -> usize;
    /// Hessian of the mean objective over `batch` (indices into the point set) times `v`.
    fn batch_hvp(&self, batch: &[usize], v: &[f64]) -> Result<Vec<f64>>;
}

/// A differentiable model paired with its training points.
pub struct DataCurvature<'a, M: TwiceDifferentiable> {
    pub model: &'a M,
    pub points: &'a [M::Point],
}

impl<M: TwiceDifferentiable> CurvatureOracle for DataCurvature<'_, M> {
    fn dim(&self) -> usize {
        self.model.n_params()
    }

    fn n_points(&self) -> usize {
        self.points.len()
    }

    fn batch_hvp(&self, batch: &[usize], v: &[f64]) -> Result<Vec<f64>> {
        let pts: Vec<&M::Point> = batch.iter().map(|&i| &self.points[i]).collect();
        self.model.batch_hvp(&pts, v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LissaConfig {
    pub depth: usize,
    pub repeats: usize,
    pub scale: f64,
    pub damping: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LissaConfig {
    fn default() -> Self {
        LissaConfig {
            depth: 100,
            repeats: 4,
            scale: 25.0,
            damping: 0.01,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl LissaConfig {
    fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.repeats == 0 || self.batch_size == 0 {
            return Err(Error::invalid("LiSSA depth, repeats and batch_size must be >= 1"));
        }
        if self.scale <= 0.0 || !(0.0..1.0).contains(&self.damping) {
            return Err(Error::invalid("LiSSA needs scale > 0 and damping in [0, 1)"));
        }
        Ok(())
    }
}

/// Stochastic estimate of `H⁻¹ v`:
/// `r₀ = v`, `rⱼ = v + (1 − damping) rⱼ₋₁ − H_batchⱼ rⱼ₋₁ / scale`,
/// estimate `r_depth / scale`, averaged over repeats.
pub fn inverse_hvp_lissa(op: &impl CurvatureOracle, v: &[f64], cfg: &LissaConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if v.len() != op.dim() {
        return Err(Error::invalid("vector dimension does not match the model"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::numerical("non-finite vector passed to LiSSA"));
    }
    let n = op.n_points();
    if n == 0 {
        return Err(Error::invalid("LiSSA needs at least one data point"));
    }
    let batch = cfg.batch_size.min(n);
    let mut estimate = vec![0.0; v.len()];
    for repeat in 0..cfg.repeats {
        let mut rng = seed::rng(cfg.seed, "lissa", repeat as u64);
        let mut cur = v.to_vec();
        for step in 0..cfg.depth {
            let idx = index::sample(&mut rng, n, batch).into_vec();
            let hv = op.batch_hvp(&idx, &cur)?;
            let mut norm2 = 0.0;
            for ((c, &vi), h) in cur.iter_mut().zip(v).zip(&hv) {
                *c = vi + (1.0 - cfg.damping) * *c - h / cfg.scale;
                norm2 += *c * *c;
            }
            if !(norm2.sqrt() <= DIVERGENCE_NORM) {
                return Err(Error::numerical(format!(
                    "LiSSA diverged at repeat {repeat}, step {step}; increase scale or damping"
                )));
            }
        }
        for (e, c) in estimate.iter_mut().zip(&cur) {
            *e += c / cfg.scale;
        }
    }
    let k = cfg.repeats as f64;
    for e in estimate.iter_mut() {
        *e /= k;
    }
    Ok(estimate)
}

/// `−⟨H⁻¹∇L(z_test), ∇L(z_train)⟩`.
pub fn influence_score<M: TwiceDifferentiable>(model: &M, z_train: &M::Point, ihvp_test: &[f64]) -> Result<f64> {
    let g = model.point_grad(z_train)?;
    Ok(-dot(ihvp_test, &g))
}

/// Points that carry a stable identifier.
pub trait Identified {
    fn id(&self) -> usize;
}

impl Identified for LabeledSeq {
    fn id(&self) -> usize {
        self.id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub test_id: usize,
    pub sampled_train_ids: Vec<usize>,
    /// Train id → I_up,loss. May hold only the selected ids when persisted
    /// in truncated form.
    pub scores: BTreeMap<usize, f64>,
    /// Most helpful first (ascending score).
    pub helpful: Vec<usize>,
    /// Most harmful first (descending score).
    pub harmful: Vec<usize>,
}

impl InfluenceReport {
    pub fn m(&self) -> usize {
        self.helpful.len()
    }

    /// Keeps the top `m` of each list.
    pub fn truncated(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.m() {
            return Err(Error::invalid(format!("cannot truncate a top-{} report to {m}", self.m())));
        }
        Ok(InfluenceReport {
            helpful: self.helpful[..m].to_vec(),
            harmful: self.harmful[..m].to_vec(),
            ..self.clone()
        })
    }

    /// JSON form; unless `full`, scores are limited to the selected ids.
    pub fn to_json(&self, full: bool) -> Result<String> {
        if full {
            return Ok(serde_json::to_string(self)?);
        }
        let keep: BTreeMap<usize, f64> = self
            .helpful
            .iter()
            .chain(&self.harmful)
            .map(|id| (*id, self.scores[id]))
            .collect();
        let slim = InfluenceReport {
            scores: keep,
            ..self.clone()
        };
        Ok(serde_json::to_string(&slim)?)
    }
}

/// Work counters used to check that influence work is not repeated.
#[derive(Debug, Default)]
pub struct InfluenceCounters {
    pub ihvp_calls: AtomicUsize,
    pub train_grads: AtomicUsize,
    pub inner_products: AtomicUsize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterSnapshot {
    pub ihvp_calls: usize,
    pub train_grads: usize,
    pub inner_products: usize,
}

impl InfluenceCounters {
    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            ihvp_calls: self.ihvp_calls.load(Ordering::Relaxed),
            train_grads: self.train_grads.load(Ordering::Relaxed),
            inner_products: self.inner_products.load(Ordering::Relaxed),
        }
    }
}

/// Scores a fixed uniform sample of training points against test points.
pub struct InfluenceEngine<'a, M: TwiceDifferentiable> {
    model: &'a M,
    train: &'a [M::Point],
    sample: Vec<usize>,
    lissa: LissaConfig,
    pub counters: InfluenceCounters,
}

impl<'a, M> InfluenceEngine<'a, M>
where
    M: TwiceDifferentiable,
    M::Point: Identified,
{
    /// Draws `sample_size` training points without replacement. The sample
    /// is shared by every test point scored with this engine.
    pub fn new(model: &'a M, train: &'a [M::Point], sample_size: usize, lissa: LissaConfig, seed: u64) -> Result<Self> {
        lissa.validate()?;
        if sample_size == 0 || sample_size > train.len() {
            return Err(Error::invalid(format!(
                "sample size {sample_size} must lie in 1..={}",
                train.len()
            )));
        }
        let mut rng = seed::rng(seed, "influence-sample", 0);
        let mut sample = index::sample(&mut rng, train.len(), sample_size).into_vec();
        sample.sort_unstable();
        Ok(InfluenceEngine {
            model,
            train,
            sample,
            lissa,
            counters: InfluenceCounters::default(),
        })
    }

    pub fn sample_size(&self) -> usize {
        self.sample.len()
    }

    pub fn sampled_ids(&self) -> Vec<usize> {
        self.sample.iter().map(|&i| self.train[i].id()).collect()
    }

    /// `H⁻¹ ∇L(z_test)` with a LiSSA stream derived from the test id.
    pub fn test_ihvp(&self, z_test: &M::Point, test_id: usize) -> Result<Vec<f64>> {
        self.counters.ihvp_calls.fetch_add(1, Ordering::Relaxed);
        let v = self.model.point_grad(z_test)?;
        let cfg = LissaConfig {
            seed: seed::derive(self.lissa.seed, "lissa-test", test_id as u64),
            ..self.lissa.clone()
        };
        let op = DataCurvature {
            model: self.model,
            points: self.train,
        };
        inverse_hvp_lissa(&op, &v, &cfg)
    }

    /// Scores every sampled training point and selects the top `m` helpful
    /// and harmful ids. Ties are broken by lower train id.
    pub fn top_influences(&self, z_test: &M::Point, test_id: usize, m: usize) -> Result<InfluenceReport> {
        if m == 0 || 2 * m > self.sample.len() {
            return Err(Error::invalid(format!(
                "need 1 <= M and 2M <= S (M = {m}, S = {})",
                self.sample.len()
            )));
        }
        let ihvp = self.test_ihvp(z_test, test_id)?;
        let mut scored: Vec<(usize, f64)> = Vec::with_capacity(self.sample.len());
        for &i in &self.sample {
            let z = &self.train[i];
            self.counters.train_grads.fetch_add(1, Ordering::Relaxed);
            self.counters.inner_products.fetch_add(1, Ordering::Relaxed);
            let s = influence_score(self.model, z, &ihvp)?;
            if !s.is_finite() {
                return Err(Error::numerical(format!("non-finite influence for train id {}", z.id())));
            }
            scored.push((z.id(), s));
        }
        Ok(select(test_id, scored, m))
    }
}

fn select(test_id: usize, mut scored: Vec<(usize, f64)>, m: usize) -> InfluenceReport {
    let sampled_train_ids: Vec<usize> = scored.iter().map(|s| s.0).collect();
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let helpful: Vec<usize> = scored.iter().take(m).map(|s| s.0).collect();
    let mut by_harm = scored.clone();
    by_harm.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let harmful: Vec<usize> = by_harm.iter().take(m).map(|s| s.0).collect();
    InfluenceReport {
        test_id,
        sampled_train_ids,
        scores: scored.into_iter().collect(),
        helpful,
        harmful,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Diag(Vec<f64>);

    impl CurvatureOracle for Diag {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn n_points(&self) -> usize {
            1
        }
        fn batch_hvp(&self, _: &[usize], v: &[f64]) -> Result<Vec<f64>> {
            Ok(self.0.iter().zip(v).map(|(a, b)| a * b).collect())
        }
    }

    #[test]
    fn zero_vector_maps_to_zero() {
        let op = Diag(vec![1.0, 2.0, 3.0]);
        let r = inverse_hvp_lissa(&op, &[0.0; 3], &LissaConfig::default()).unwrap();
        assert_eq!(r, vec![0.0; 3]);
    }

    #[test]
    fn diagonal_inverse() {
        let op = Diag(vec![1.0, 2.0, 4.0]);
        let cfg = LissaConfig {
            depth: 400,
            repeats: 1,
            scale: 5.0,
            damping: 0.0,
            ..Default::default()
        };
        let r = inverse_hvp_lissa(&op, &[1.0, 1.0, 1.0], &cfg).unwrap();
        for (x, want) in r.iter().zip([1.0, 0.5, 0.25]) {
            assert!((x - want).abs() < 1e-6, "{x} vs {want}");
        }
    }

    #[test]
    fn divergence_is_reported() {
        let op = Diag(vec![100.0]);
        let cfg = LissaConfig {
            scale: 1.0,
            damping: 0.0,
            ..Default::default()
        };
        assert!(matches!(inverse_hvp_lissa(&op, &[1.0], &cfg), Err(Error::Numerical(_))));
    }

    #[test]
    fn selection_orders_and_breaks_ties() {
        let r = select(7, vec![(10, 0.5), (11, -1.0), (12, 0.5), (13, -1.0), (14, 0.0)], 2);
        assert_eq!(r.helpful, vec![11, 13]);
        assert_eq!(r.harmful, vec![10, 12]);
        assert_eq!(r.sampled_train_ids, vec![10, 11, 12, 13, 14]);
        let slim: InfluenceReport = serde_json::from_str(&r.to_json(false).unwrap()).unwrap();
        assert_eq!(slim.scores.len(), 4);
        let t = r.truncated(1).unwrap();
        assert_eq!((t.helpful, t.harmful), (vec![11], vec![10]));
        assert!(r.truncated(3).is_err());
    }
}
