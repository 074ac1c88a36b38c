//! Library outputs checked against independent, brute-force reimplementations.

use nnif::analysis::{conditional_affinities, linear_svm_accuracy, SvmConfig};
use nnif::attacks::{build_detection_dataset, char_attack, CharAttackConfig, DetectSplit};
use nnif::detectors::{auc, fit_logreg, logreg_objective_and_grad, LogRegConfig};
use nnif::model::Layer;
use nnif::neighbors::{lid_from_distances, query_ranks_distances, RepIndex};
use nnif::pipeline::{self, ExperimentConfig};
use proptest::prelude::*;

fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut total = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                total += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auc_matches_pairwise_count(
        pts in prop::collection::vec((0u8..6, 0u8..2), 2..40)
    ) {
        let scores: Vec<f64> = pts.iter().map(|p| p.0 as f64).collect();
        let labels: Vec<u8> = pts.iter().map(|p| p.1).collect();
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        prop_assert!((auc(&scores, &labels) - pairwise_auc(&scores, &labels)).abs() < 1e-12);
    }

    #[test]
    fn ranks_match_sorted_scan(
        xs in prop::collection::vec(prop::collection::vec(-3i32..3, 3), 5..30),
        q in prop::collection::vec(-3i32..3, 3),
    ) {
        let n = xs.len();
        let ids: Vec<usize> = (0..n).map(|i| 1000 - 7 * i).collect();
        let rows: Vec<f64> = xs.iter().flatten().map(|&v| v as f64).collect();
        let index = RepIndex::from_rows(Layer::H2, ids.clone(), 3, rows).unwrap();
        let q: Vec<f64> = q.iter().map(|&v| v as f64).collect();
        let dist = |x: &Vec<i32>| x.iter().zip(&q).map(|(a, b)| (*a as f64 - b).powi(2)).sum::<f64>().sqrt();
        let mut order: Vec<(f64, usize)> = xs.iter().zip(&ids).map(|(x, &id)| (dist(x), id)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let rd = query_ranks_distances(&index, &q, &ids).unwrap();
        for (k, id) in ids.iter().enumerate() {
            let rank = order.iter().position(|o| o.1 == *id).unwrap() + 1;
            prop_assert_eq!(rd.ranks[k], rank);
            prop_assert!((rd.dists[k] - dist(&xs[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn lid_matches_formula(d in prop::collection::vec(0.01f64..10.0, 12..30), k in 2usize..10) {
        let mut s = d.clone();
        s.sort_by(f64::total_cmp);
        let rk = s[k - 1];
        let oracle = -1.0 / (s[..k].iter().map(|r| (r / rk).ln()).sum::<f64>() / k as f64);
        let got = lid_from_distances(&d, k).unwrap();
        if got.degenerate {
            prop_assert!(s[..k].iter().all(|r| *r == rk));
        } else {
            prop_assert!((got.value - oracle).abs() <= 1e-9 * oracle.abs());
        }
    }
}

#[test]
fn logreg_gradient_matches_finite_differences() {
    let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 * 0.7).sin(), (i % 5) as f64, 3.0]).collect();
    let y: Vec<u8> = (0..30).map(|i| u8::from((i as f64 * 0.7).sin() + 0.3 * (i % 3) as f64 > 0.2)).collect();
    let mut model = fit_logreg(&x, &y, &LogRegConfig { max_steps: 3, ..Default::default() }).unwrap();
    model.weights = vec![0.3, -0.2, 0.0];
    model.bias = 0.1;
    let (_, gw, gb) = logreg_objective_and_grad(&model, &x, &y);
    let h = 1e-6;
    for k in 0..2 {
        let mut p = model.clone();
        p.weights[k] += h;
        let mut m = model.clone();
        m.weights[k] -= h;
        let fd = (logreg_objective_and_grad(&p, &x, &y).0 - logreg_objective_and_grad(&m, &x, &y).0) / (2.0 * h);
        assert!((fd - gw[k]).abs() < 1e-7, "w{k}: {fd} vs {}", gw[k]);
    }
    assert_eq!(gw[2], 0.0, "constant column carries no gradient");
    let mut p = model.clone();
    p.bias += h;
    let mut m = model.clone();
    m.bias -= h;
    let fd = (logreg_objective_and_grad(&p, &x, &y).0 - logreg_objective_and_grad(&m, &x, &y).0) / (2.0 * h);
    assert!((fd - gb).abs() < 1e-7);
}

#[test]
fn logreg_fit_is_stationary_and_order_free() {
    let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 10.0, ((i * 7) % 11) as f64]).collect();
    let y: Vec<u8> = (0..40).map(|i| u8::from((i * 13) % 40 > 15)).collect();
    let cfg = LogRegConfig::default();
    let a = fit_logreg(&x, &y, &cfg).unwrap();
    let (_, gw, gb) = logreg_objective_and_grad(&a, &x, &y);
    assert!(gw.iter().chain([&gb]).all(|g| g.abs() < 1e-5));
    let (xr, yr): (Vec<Vec<f64>>, Vec<u8>) = x.iter().cloned().zip(y.iter().copied()).rev().unzip();
    let b = fit_logreg(&xr, &yr, &cfg).unwrap();
    assert_eq!(a.weights, b.weights);
    assert_eq!(a.bias, b.bias);
}

#[test]
fn affinities_hit_target_entropy() {
    let pts: Vec<f64> = (0..30).map(|i| (i as f64).powf(1.3)).collect();
    let d2: Vec<Vec<f64>> = pts.iter().map(|a| pts.iter().map(|b| (a - b).powi(2)).collect()).collect();
    let (rows, worst) = conditional_affinities(&d2, 5.0).unwrap();
    assert!(worst <= 1e-5);
    for (i, r) in rows.iter().enumerate() {
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(r[i], 0.0);
        let h: f64 = -r.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>();
        assert!((h - 5f64.ln()).abs() <= 1e-5);
    }
}

#[test]
fn svm_separates_separable_points() {
    let x: Vec<[f64; 2]> = (0..40).map(|i| [i as f64, ((i * 3) % 7) as f64]).collect();
    let y: Vec<bool> = (0..40).map(|i| i >= 20).collect();
    assert_eq!(linear_svm_accuracy(&x, &y, &SvmConfig::default()), 1.0);
}

#[test]
fn detection_dataset_is_balanced_and_pair_atomic() {
    let mut cfg = ExperimentConfig::with_seed(3);
    cfg.corpus.source = pipeline::CorpusSource::Synthetic {
        n_per_class: 300,
        spec: None,
    };
    let prep = pipeline::prepare_corpus(&cfg).unwrap();
    let (model, _) = pipeline::train_stage(&cfg, &prep).unwrap();
    let attack = CharAttackConfig {
        seed: 3,
        ..CharAttackConfig::default()
    };
    let ds = build_detection_dataset(&model, &prep.splits.test, |ex| char_attack(&model, ex, &attack), 40, 3).unwrap();
    assert_eq!(ds.records.len(), 40);
    for pair in ds.records.chunks(2) {
        assert_eq!(pair[0].detect_label, 1);
        assert_eq!(pair[1].detect_label, 0);
        assert_eq!(pair[0].source_id, pair[1].source_id);
        assert_eq!(pair[0].split, pair[1].split);
    }
    let test_pairs = ds.split(DetectSplit::Test).len() / 2;
    assert_eq!(test_pairs, 4);
    for r in &ds.results {
        assert!(r.success);
        assert_ne!(model.predict(&r.adversarial_text).unwrap().class, r.original_prediction);
    }
}
