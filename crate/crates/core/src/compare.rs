//! Side-by-side strategy comparison on identical seeds and datasets.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::data::generate_dataset;
use crate::error::{Error, Result};
use crate::metrics::EvalMetric;
use crate::numfmt::g6;
use crate::pipeline::{train_run_with, TrainConfig};
use crate::selection::SelectionStrategy;

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub strategy: String,
    pub final_eval: Option<EvalMetric>,
    pub best_eval: Option<EvalMetric>,
    pub best_iteration: Option<u64>,
    /// iterations-to-best(first strategy) / iterations-to-best(this one);
    /// the hardware-independent speedup reading.
    pub speedup_vs_first: Option<f64>,
    pub wall_time_s: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareSummary {
    pub seed: u64,
    pub rows: Vec<CompareRow>,
}

/// Run every strategy over the same dataset and seed. A failing run is
/// reported in its row without aborting the others.
pub fn cli_compare(
    cfg: &TrainConfig,
    strategies: &[SelectionStrategy],
    out_dir: Option<&Path>,
) -> Result<CompareSummary> {
    if strategies.len() < 2 {
        return Err(Error::Config("compare needs at least 2 strategies".into()));
    }
    let data = generate_dataset(&cfg.dataset)?;
    let mut rows = Vec::with_capacity(strategies.len());
    for strategy in strategies {
        let mut run_cfg = cfg.clone();
        run_cfg.selection = *strategy;
        let sub_dir = out_dir.map(|d| d.join(sanitize(&strategy.name())));
        let row = match train_run_with(&run_cfg, &data, sub_dir.as_deref()) {
            Ok(out) => CompareRow {
                strategy: strategy.name(),
                final_eval: Some(out.summary.final_eval),
                best_eval: Some(out.summary.best_eval),
                best_iteration: Some(out.summary.best_iteration),
                speedup_vs_first: None,
                wall_time_s: Some(out.summary.wall_time_s),
                error: None,
            },
            Err(e) => CompareRow {
                strategy: strategy.name(),
                final_eval: None,
                best_eval: None,
                best_iteration: None,
                speedup_vs_first: None,
                wall_time_s: None,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }

    let base_best = rows[0].best_iteration;
    for row in rows.iter_mut() {
        if let (Some(base), Some(own)) = (base_best, row.best_iteration) {
            row.speedup_vs_first = Some(base.max(1) as f64 / own.max(1) as f64);
        }
    }

    let summary = CompareSummary { seed: cfg.seed, rows };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(&summary)
            .map_err(|e| Error::Config(format!("comparison serialization failed: {e}")))?;
        std::fs::write(dir.join("comparison.json"), json)?;
        write_comparison_csv(&summary, &dir.join("comparison.csv"))?;
    }
    Ok(summary)
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

fn write_comparison_csv(summary: &CompareSummary, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "strategy,final_primary,best_primary,best_iteration,speedup_vs_first,status"
    )?;
    for row in &summary.rows {
        let final_p = row.final_eval.map(|e| g6(e.primary())).unwrap_or_default();
        let best_p = row.best_eval.map(|e| g6(e.primary())).unwrap_or_default();
        let best_it = row.best_iteration.map(|i| i.to_string()).unwrap_or_default();
        let speedup = row.speedup_vs_first.map(g6).unwrap_or_default();
        let status = row.error.as_deref().unwrap_or("ok");
        writeln!(
            out,
            "{},{final_p},{best_p},{best_it},{speedup},{status}",
            row.strategy
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetKind, DatasetSpec};
    use crate::pipeline::RewarderLossKindConfig;
    use crate::selection::{DecayMode, SelectionKind};

    fn cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            total_iters: 30,
            stage2_start_fraction: 0.2,
            subsample_ratio: 0.5,
            batch_labeled: 8,
            batch_unlabeled: 8,
            batch_reward: 8,
            student_lr: 5e-3,
            student_weight_decay: 0.0,
            rewarder_lr: 1e-3,
            rewarder_loss: RewarderLossKindConfig::Mse,
            embed_dim: 8,
            ema_momentum: 0.5,
            student_hidden: vec![10],
            selection: SelectionStrategy::new(SelectionKind::RewardAverage),
            augment_noise: 0.05,
            teacher_noise: 0.0,
            log_interval: 10,
            eval_subset: 30,
            stage2_rewarder_labeled_only: false,
            early_stop_patience: None,
            dataset: DatasetSpec {
                kind: DatasetKind::GaussianBlobs { classes: 3, dims: 5, spread: 0.3 },
                n_labeled_per_class: 4,
                n_unlabeled: 40,
                n_test: 40,
                seed,
            },
        }
    }

    #[test]
    fn identical_strategies_give_identical_rows() {
        let s = SelectionStrategy::new(SelectionKind::RewardAverage)
            .with_decay(DecayMode::Off);
        let summary = cli_compare(&cfg(5), &[s, s], None).unwrap();
        let a = &summary.rows[0];
        let b = &summary.rows[1];
        assert_eq!(a.final_eval, b.final_eval);
        assert_eq!(a.best_eval, b.best_eval);
        assert_eq!(a.best_iteration, b.best_iteration);
        assert_eq!(a.speedup_vs_first, Some(1.0));
        assert_eq!(b.speedup_vs_first, Some(1.0));
    }

    #[test]
    fn fewer_than_two_strategies_rejected() {
        let s = SelectionStrategy::new(SelectionKind::AcceptAll);
        assert!(matches!(cli_compare(&cfg(1), &[s], None), Err(Error::Config(_))));
    }

    #[test]
    fn comparison_artifacts_written() {
        let dir = tempfile::tempdir().unwrap();
        let a = SelectionStrategy::new(SelectionKind::AcceptAll).with_decay(DecayMode::Off);
        let b = SelectionStrategy::new(SelectionKind::ConfidenceFixed { tau: 0.95 })
            .with_decay(DecayMode::Off);
        cli_compare(&cfg(2), &[a, b], Some(dir.path())).unwrap();
        assert!(dir.path().join("comparison.json").exists());
        assert!(dir.path().join("comparison.csv").exists());
        assert!(dir.path().join("accept_all").join("metrics.csv").exists());
        assert!(dir.path().join("confidence_fixed_0.95").join("summary.json").exists());
    }
}
