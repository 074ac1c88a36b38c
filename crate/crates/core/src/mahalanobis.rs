//! Class-conditional Gaussians with a tied covariance per layer, and the
//! Mahalanobis confidence score `M(x) = max_c −(x − μ_c)ᵀ Σ⁻¹ (x − μ_c)`.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::{Layer, LayerActivations, TargetModel};

const RETRIES: usize = 3;

/// Ridge added to the covariance before inversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum Ridge {
    Absolute(f64),
    /// Multiple of the mean diagonal of the scatter matrix; falls back to
    /// the raw value when the scatter is zero.
    Relative(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative(1e-3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGaussian {
    pub layer: Layer,
    pub dim: usize,
    pub means: Vec<Vec<f64>>,
    /// Row-major `dim × dim`, ridge included.
    pub covariance: Vec<f64>,
    pub precision: Vec<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub layers: Vec<LayerGaussian>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MahalVariant {
    Penultimate,
    Ensemble,
}

impl MahalVariant {
    pub fn layers(self) -> &'static [Layer] {
        match self {
            MahalVariant::Penultimate => &[Layer::H2],
            MahalVariant::Ensemble => &Layer::ALL,
        }
    }
}

/// Means and tied covariance from representations with class labels.
pub fn fit_layer_gaussian(
    layer: Layer,
    reps: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    ridge: Ridge,
) -> Result<LayerGaussian> {
    if reps.len() != labels.len() || reps.is_empty() {
        return Err(Error::invalid("need one label per representation"));
    }
    let d = reps[0].len();
    if reps.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("ragged representations"));
    }
    let mut counts = vec![0usize; n_classes];
    let mut means = vec![vec![0.0; d]; n_classes];
    for (r, &y) in reps.iter().zip(labels) {
        if y >= n_classes {
            return Err(Error::invalid(format!("label {y} outside {n_classes} classes")));
        }
        counts[y] += 1;
        for (m, x) in means[y].iter_mut().zip(r) {
            *m += x;
        }
    }
    if let Some(c) = counts.iter().position(|&n| n < 2) {
        return Err(Error::invalid(format!("class {c} has fewer than 2 examples")));
    }
    for (m, &n) in means.iter_mut().zip(&counts) {
        for v in m.iter_mut() {
            *v /= n as f64;
        }
    }

    let n = reps.len() as f64;
    let mut scatter = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for (r, &y) in reps.iter().zip(labels) {
        for ((c, x), m) in centered.iter_mut().zip(r).zip(&means[y]) {
            *c = x - m;
        }
        for i in 0..d {
            for j in i..d {
                scatter[i * d + j] += centered[i] * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = scatter[i * d + j] / n;
            scatter[i * d + j] = v;
            scatter[j * d + i] = v;
        }
    }

    let mut lambda = match ridge {
        Ridge::Absolute(l) => l,
        Ridge::Relative(r) => {
            let diag = (0..d).map(|i| scatter[i * d + i]).sum::<f64>() / d as f64;
            if diag > 0.0 {
                r * diag
            } else {
                r
            }
        }
    };
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("ridge must be finite and >= 0"));
    }
    for attempt in 0..=RETRIES {
        let mut cov = scatter.clone();
        for i in 0..d {
            cov[i * d + i] += lambda;
        }
        if let Some(chol) = DMatrix::from_row_slice(d, d, &cov).cholesky() {
            let inv = chol.inverse();
            let mut precision = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    precision[i * d + j] = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                }
            }
            return Ok(LayerGaussian {
                layer,
                dim: d,
                means,
                covariance: cov,
                precision,
                lambda,
            });
        }
        log::warn!("covariance of {} not positive definite at λ = {lambda:e} (attempt {attempt})", layer.name());
        lambda = if lambda > 0.0 { lambda * 10.0 } else { 1e-6 };
    }
    Err(Error::numerical(format!(
        "covariance of layer {} is not positive definite after {RETRIES} retries",
        layer.name()
    )))
}

impl LayerGaussian {
    /// Squared Mahalanobis distance to the mean of class `c`.
    pub fn distance2(&self, c: usize, rep: &[f64]) -> f64 {
        let d = self.dim;
        let diff: Vec<f64> = rep.iter().zip(&self.means[c]).map(|(x, m)| x - m).collect();
        let mut s = 0.0;
        for i in 0..d {
            let row = &self.precision[i * d..(i + 1) * d];
            s += diff[i] * row.iter().zip(&diff).map(|(p, v)| p * v).sum::<f64>();
        }
        s.max(0.0)
    }

    pub fn score(&self, rep: &[f64]) -> Result<f64> {
        if rep.len() != self.dim {
            return Err(Error::invalid(format!(
                "representation has dimension {}, layer {} has {}",
                rep.len(),
                self.layer.name(),
                self.dim
            )));
        }
        Ok((0..self.means.len())
            .map(|c| -self.distance2(c, rep))
            .fold(f64::NEG_INFINITY, f64::max))
    }
}

impl GaussianStats {
    pub fn layer(&self, layer: Layer) -> Result<&LayerGaussian> {
        self.layers
            .iter()
            .find(|g| g.layer == layer)
            .ok_or_else(|| Error::invalid(format!("no Gaussian fitted for layer {}", layer.name())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(serde_json::from_str(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?)
    }
}

pub fn fit_class_gaussians(model: &TargetModel, train: &Corpus, layers: &[Layer], ridge: Ridge) -> Result<GaussianStats> {
    let acts: Vec<LayerActivations> = train
        .examples
        .par_iter()
        .map(|e| model.activations(&e.text))
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = train.examples.iter().map(|e| e.label).collect();
    let layers = layers
        .iter()
        .map(|&l| {
            let reps: Vec<Vec<f64>> = acts.iter().map(|a| a.layer(l).to_vec()).collect();
            fit_layer_gaussian(l, &reps, &labels, model.params.config().n_classes, ridge)
        })
        .collect::<Result<_>>()?;
    Ok(GaussianStats { layers })
}

pub fn mahal_score(stats: &GaussianStats, layer: Layer, rep: &[f64]) -> Result<f64> {
    stats.layer(layer)?.score(rep)
}

/// `[M_h2]` for the penultimate variant, one score per layer in fixed order
/// for the ensemble.
pub fn mahal_features(stats: &GaussianStats, acts: &LayerActivations, variant: MahalVariant) -> Result<Vec<f64>> {
    variant
        .layers()
        .iter()
        .map(|&l| mahal_score(stats, l, acts.layer(l)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_scatter_gives_ridge() {
        let reps = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![2.0, 0.0], vec![2.0, 0.0]];
        let g = fit_layer_gaussian(Layer::H2, &reps, &[0, 0, 1, 1], 2, Ridge::Absolute(0.5)).unwrap();
        assert_eq!(g.means, vec![vec![0.0, 0.0], vec![2.0, 0.0]]);
        assert_eq!(g.covariance, vec![0.5, 0.0, 0.0, 0.5]);
        assert_eq!(g.score(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn identity_midpoint_scores_minus_one() {
        let g = LayerGaussian {
            layer: Layer::H2,
            dim: 2,
            means: vec![vec![0.0, 0.0], vec![2.0, 0.0]],
            covariance: vec![1.0, 0.0, 0.0, 1.0],
            precision: vec![1.0, 0.0, 0.0, 1.0],
            lambda: 0.0,
        };
        assert_eq!(g.score(&[1.0, 0.0]).unwrap(), -1.0);
        assert!(g.score(&[1.0]).is_err());
    }

    #[test]
    fn singular_scatter_is_retried() {
        let reps = vec![vec![1.0, 1.0], vec![3.0, 3.0], vec![0.0, 0.0], vec![2.0, 2.0]];
        let g = fit_layer_gaussian(Layer::H1, &reps, &[0, 0, 1, 1], 2, Ridge::Absolute(0.0)).unwrap();
        assert!(g.lambda > 0.0);
    }

    #[test]
    fn too_few_per_class() {
        let reps = vec![vec![1.0], vec![2.0], vec![3.0]];
        assert!(fit_layer_gaussian(Layer::H1, &reps, &[0, 0, 1], 2, Ridge::default()).is_err());
    }
}
