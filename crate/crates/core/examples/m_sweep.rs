//! NNIF detection accuracy as a function of M. Influence reports are
//! computed once at the largest M and truncated for the smaller ones.

use nnif::analysis::m_sweep;
use nnif::detectors::compute_nnif_reports;
use nnif::pipeline::{self, ExperimentConfig};

fn main() -> anyhow::Result<()> {
    let cfg = ExperimentConfig::with_seed(7);
    let grid = [5, 10, 25, 50, 100];
    let prep = pipeline::prepare_corpus(&cfg)?;
    let (model, _) = pipeline::train_stage(&cfg, &prep)?;
    let (ds, _) = pipeline::attack_stage(&cfg, &prep, &model)?;
    let ncfg = pipeline::nnif_config(&cfg, 100);
    let reports = compute_nnif_reports(&model, &prep.splits.train, &ds, &ncfg)?;
    let curve = m_sweep(&reports, &ds.records, &grid, &cfg.detect.logreg)?;
    for (m, metrics) in &curve {
        println!("M = {m:3}: accuracy {:.4}, auc {:.4}", metrics.accuracy, metrics.auc);
    }
    println!(
        "{} inverse HVPs for {} records",
        reports.counters.ihvp_calls,
        ds.records.len()
    );
    Ok(())
}
