//! Brute-force deep-kNN index over one layer's representations, and the
//! maximum-likelihood LID estimator built on the same distances.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::{Layer, TargetModel};

/// Train representations for one layer, one row per train example.
#[derive(Debug, Clone, PartialEq)]
pub struct RepIndex {
    layer: Layer,
    ids: Vec<usize>,
    dim: usize,
    rows: Vec<f64>,
    pos: HashMap<usize, usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    layer: Layer,
    dim: usize,
    ids: Vec<usize>,
}

/// Ranks (1-based) and l2 distances of queried train ids.
#[derive(Debug, Clone, PartialEq)]
pub struct RankDist {
    pub ranks: Vec<usize>,
    pub dists: Vec<f64>,
}

impl RepIndex {
    /// `rows` is row-major `[ids.len() × dim]`.
    pub fn from_rows(layer: Layer, ids: Vec<usize>, dim: usize, rows: Vec<f64>) -> Result<Self> {
        if dim == 0 || rows.len() != ids.len() * dim {
            return Err(Error::invalid("index rows do not match ids × dim"));
        }
        if rows.iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical("non-finite representation in index"));
        }
        let mut pos = HashMap::with_capacity(ids.len());
        for (i, &id) in ids.iter().enumerate() {
            if pos.insert(id, i).is_some() {
                return Err(Error::invalid(format!("duplicate train id {id} in index")));
            }
        }
        Ok(RepIndex {
            layer,
            ids,
            dim,
            rows,
            pos,
        })
    }

    pub fn layer(&self) -> Layer {
        self.layer
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// Representation stored for a train id.
    pub fn rep(&self, id: usize) -> Option<&[f64]> {
        self.pos.get(&id).map(|&i| self.row(i))
    }

    fn check_query(&self, query: &[f64]) -> Result<()> {
        if query.len() != self.dim {
            return Err(Error::invalid(format!(
                "query has dimension {}, index has {}",
                query.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Distances from `query` to every row, in row order.
    pub fn distances(&self, query: &[f64]) -> Result<Vec<f64>> {
        self.check_query(query)?;
        Ok((0..self.len()).map(|i| l2(query, self.row(i))).collect())
    }

    /// Row positions sorted by (distance, id).
    fn order(&self, dists: &[f64]) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(self.ids[a].cmp(&self.ids[b])));
        order
    }

    /// The `k` nearest train ids with their distances.
    pub fn nearest(&self, query: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
        if k > self.len() {
            return Err(Error::invalid(format!("asked for {k} neighbors of {}", self.len())));
        }
        let dists = self.distances(query)?;
        Ok(self.order(&dists)[..k].iter().map(|&i| (self.ids[i], dists[i])).collect())
    }

    /// Matrix as CSV (`id,x0,..`) plus a JSON sidecar with layer and ids.
    pub fn save(&self, csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<()> {
        let mut csv = String::from("id");
        for j in 0..self.dim {
            write!(csv, ",x{j}").unwrap();
        }
        csv.push('\n');
        for (i, id) in self.ids.iter().enumerate() {
            write!(csv, "{id}").unwrap();
            for x in self.row(i) {
                write!(csv, ",{x:?}").unwrap();
            }
            csv.push('\n');
        }
        let csv_path = csv_path.as_ref();
        fs::write(csv_path, csv).map_err(|e| Error::io(csv_path, e))?;
        let side = Sidecar {
            layer: self.layer,
            dim: self.dim,
            ids: self.ids.clone(),
        };
        let json_path = json_path.as_ref();
        fs::write(json_path, serde_json::to_string(&side)?).map_err(|e| Error::io(json_path, e))
    }

    pub fn load(csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<Self> {
        let json_path = json_path.as_ref();
        let side: Sidecar =
            serde_json::from_str(&fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?)?;
        let csv_path = csv_path.as_ref();
        let raw = fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for (n, line) in raw.lines().enumerate().skip(1) {
            let bad = |msg: &str| Error::Parse {
                line: n + 1,
                msg: msg.to_string(),
            };
            let mut cells = line.split(',');
            let id = cells
                .next()
                .and_then(|c| c.parse::<usize>().ok())
                .ok_or_else(|| bad("bad id"))?;
            let vals: Vec<f64> = cells
                .map(|c| c.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("bad number"))?;
            if vals.len() != side.dim {
                return Err(bad("wrong column count"));
            }
            ids.push(id);
            rows.extend(vals);
        }
        if ids != side.ids {
            return Err(Error::invalid("index CSV ids disagree with the sidecar"));
        }
        RepIndex::from_rows(side.layer, ids, side.dim, rows)
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s.sqrt()
}

/// Eval-mode representations of every train example, ordered by id.
pub fn build_index(model: &TargetModel, train: &Corpus, layer: Layer) -> Result<RepIndex> {
    let mut examples: Vec<_> = train.examples.iter().collect();
    examples.sort_by_key(|e| e.id);
    let reps: Vec<Vec<f64>> = examples
        .par_iter()
        .map(|e| Ok(model.activations(&e.text)?.layer(layer).to_vec()))
        .collect::<Result<_>>()?;
    let dim = model.params.config().layer_dim(layer);
    let ids = examples.iter().map(|e| e.id).collect();
    RepIndex::from_rows(layer, ids, dim, reps.concat())
}

/// Global ranks and distances of `ids` among all indexed train points.
pub fn query_ranks_distances(index: &RepIndex, query: &[f64], ids: &[usize]) -> Result<RankDist> {
    let dists = index.distances(query)?;
    let order = index.order(&dists);
    let mut rank_of = vec![0usize; index.len()];
    for (r, &i) in order.iter().enumerate() {
        rank_of[i] = r + 1;
    }
    let mut ranks = Vec::with_capacity(ids.len());
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let &i = index
            .pos
            .get(id)
            .ok_or_else(|| Error::invalid(format!("train id {id} is not in the index")))?;
        ranks.push(rank_of[i]);
        out.push(dists[i]);
    }
    Ok(RankDist { ranks, dists: out })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidEstimate {
    pub value: f64,
    /// Set when all k distances coincide and the estimator diverges.
    pub degenerate: bool,
}

/// MLE of local intrinsic dimensionality from the `k` smallest positive
/// distances: `−((1/k) Σ ln(rᵢ / r_k))⁻¹`.
pub fn lid_from_distances(dists: &[f64], k: usize) -> Result<LidEstimate> {
    if k < 2 {
        return Err(Error::invalid("LID needs k >= 2"));
    }
    let mut pos: Vec<f64> = dists.iter().copied().filter(|d| *d > 0.0).collect();
    if pos.len() < k {
        return Err(Error::invalid(format!(
            "only {} positive distances, LID needs {k}",
            pos.len()
        )));
    }
    pos.sort_by(f64::total_cmp);
    let rk = pos[k - 1];
    let mean: f64 = pos[..k].iter().map(|r| (r / rk).ln()).sum::<f64>() / k as f64;
    if mean == 0.0 {
        return Ok(LidEstimate {
            value: f64::INFINITY,
            degenerate: true,
        });
    }
    Ok(LidEstimate {
        value: -1.0 / mean,
        degenerate: false,
    })
}

pub fn lid_estimate(query: &[f64], index: &RepIndex, k: usize) -> Result<LidEstimate> {
    if k >= index.len() {
        return Err(Error::invalid(format!("LID k = {k} must be below n_train = {}", index.len())));
    }
    lid_from_distances(&index.distances(query)?, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(ids: Vec<usize>, xs: &[f64]) -> RepIndex {
        RepIndex::from_rows(Layer::H2, ids, 1, xs.to_vec()).unwrap()
    }

    #[test]
    fn collinear_ranks() {
        let idx = line(vec![5, 6, 7], &[2.0, 0.0, 1.0]);
        let rd = query_ranks_distances(&idx, &[0.0], &[5, 6, 7]).unwrap();
        assert_eq!(rd.ranks, vec![3, 1, 2]);
        assert_eq!(rd.dists, vec![2.0, 0.0, 1.0]);
    }

    #[test]
    fn ties_go_to_lower_id() {
        let idx = line(vec![9, 3, 4], &[1.0, 1.0, 1.0]);
        let rd = query_ranks_distances(&idx, &[1.0], &[9, 3, 4]).unwrap();
        assert_eq!(rd.ranks, vec![3, 1, 2]);
        assert!(query_ranks_distances(&idx, &[1.0], &[42]).is_err());
        assert!(query_ranks_distances(&idx, &[1.0, 2.0], &[3]).is_err());
    }

    #[test]
    fn lid_degenerate_and_errors() {
        let e = lid_from_distances(&[1.0; 5], 3).unwrap();
        assert!(e.degenerate && e.value.is_infinite());
        assert!(lid_from_distances(&[0.0, 0.0, 1.0], 2).is_err());
        assert!(lid_from_distances(&[1.0, 2.0], 1).is_err());
    }

    #[test]
    fn lid_is_scale_invariant() {
        let d = [0.3, 0.7, 1.1, 1.9, 2.4, 3.0];
        let a = lid_from_distances(&d, 5).unwrap().value;
        let scaled: Vec<f64> = d.iter().map(|x| x * 17.5).collect();
        let b = lid_from_distances(&scaled, 5).unwrap().value;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let idx = RepIndex::from_rows(Layer::Pooled, vec![1, 4], 2, vec![0.1, -2.5e-7, 3.0, 1.0 / 3.0]).unwrap();
        let (c, j) = (dir.path().join("i.csv"), dir.path().join("i.json"));
        idx.save(&c, &j).unwrap();
        assert_eq!(RepIndex::load(&c, &j).unwrap(), idx);
    }
}
