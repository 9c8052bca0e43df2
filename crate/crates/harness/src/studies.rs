//! Multi-seed studies. Seeds run in parallel; results are collected in seed
//! order so every summary is independent of scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::pipeline::{
    baselines_seed, localization_seed, sweep_seed, train_through_dnn, BaselineRow,
    LocalizationRow, SweepRow,
};
use crate::stats::{confidence_interval, mean, spearman};

pub fn seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.eval.seeds as u64).map(|i| cfg.seed + i).collect()
}

fn per_seed<T: Send>(
    cfg: &ExperimentConfig,
    f: impl Fn(&ExperimentConfig) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    seeds(cfg)
        .into_par_iter()
        .map(|s| f(&cfg.with_seed(s)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub point: usize,
    pub density_per_km2: f64,
    pub shadow_sigma_db: f64,
    pub mean_eta: f64,
    /// Mean proposed improvement over mean oracle improvement, on the
    /// objective, across seeds.
    pub normalized: Option<f64>,
    pub seeds: usize,
}

pub fn sweep_study(cfg: &ExperimentConfig) -> Result<(Vec<SweepRow>, Vec<SweepSummary>)> {
    let rows: Vec<SweepRow> = per_seed(cfg, |c| sweep_seed(c, &train_through_dnn(c)?))?
        .into_iter()
        .flatten()
        .collect();
    let summary = cfg
        .sweep
        .iter()
        .enumerate()
        .map(|(i, pt)| {
            let at: Vec<&SweepRow> = rows.iter().filter(|r| r.point == i).collect();
            let etas: Vec<f64> = at.iter().filter_map(|r| r.eta).collect();
            let num: f64 = at.iter().map(|r| r.proposed_objective - r.initial_objective).sum();
            let den: f64 = at.iter().map(|r| r.oracle_objective - r.initial_objective).sum();
            SweepSummary {
                point: i,
                density_per_km2: pt.density_per_km2,
                shadow_sigma_db: pt.shadow_sigma_db,
                mean_eta: if etas.is_empty() { f64::NAN } else { mean(&etas) },
                normalized: (den > 1e-9).then(|| num / den),
                seeds: at.len(),
            }
        })
        .collect();
    Ok((rows, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub proposed_gain_db: f64,
    pub mean_field_gain_db: f64,
    pub single_agent_gain_db: f64,
    pub oracle_gain_db: f64,
    /// 95% interval of the paired difference proposed - single agent.
    pub proposed_minus_single_ci: Option<(f64, f64)>,
    pub seeds: usize,
}

pub fn baseline_study(cfg: &ExperimentConfig) -> Result<(Vec<BaselineRow>, BaselineSummary)> {
    let rows = per_seed(cfg, |c| baselines_seed(c, &train_through_dnn(c)?))?;
    let col = |f: fn(&BaselineRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let diff: Vec<f64> = rows
        .iter()
        .map(|r| r.proposed_gain_db - r.single_agent_gain_db)
        .collect();
    let summary = BaselineSummary {
        proposed_gain_db: mean(&col(|r| r.proposed_gain_db)),
        mean_field_gain_db: mean(&col(|r| r.mean_field_gain_db)),
        single_agent_gain_db: mean(&col(|r| r.single_agent_gain_db)),
        oracle_gain_db: mean(&col(|r| r.oracle_gain_db)),
        proposed_minus_single_ci: confidence_interval(&diff, 0.95),
        seeds: rows.len(),
    };
    Ok((rows, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSummary {
    pub sizes: Vec<usize>,
    pub mean_dnn: Vec<f64>,
    pub mean_fingerprint: Vec<f64>,
    /// Rank correlation of mean DNN accuracy with training-set size.
    pub spearman: f64,
    pub seeds: usize,
}

pub fn localization_study(
    cfg: &ExperimentConfig,
) -> Result<(Vec<LocalizationRow>, LocalizationSummary)> {
    let rows: Vec<LocalizationRow> =
        per_seed(cfg, |c| localization_seed(c, &train_through_dnn(c)?))?
            .into_iter()
            .flatten()
            .collect();
    let sizes = cfg.localization.sizes.clone();
    let at = |n: usize, f: fn(&LocalizationRow) -> f64| {
        mean(&rows.iter().filter(|r| r.size == n).map(f).collect::<Vec<_>>())
    };
    let mean_dnn: Vec<f64> = sizes.iter().map(|&n| at(n, |r| r.dnn)).collect();
    let mean_fingerprint = sizes.iter().map(|&n| at(n, |r| r.fingerprint)).collect();
    let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let summary = LocalizationSummary {
        spearman: spearman(&xs, &mean_dnn),
        sizes,
        mean_dnn,
        mean_fingerprint,
        seeds: cfg.eval.seeds,
    };
    Ok((rows, summary))
}
