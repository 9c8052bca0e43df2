//! CLI stages. Each reads the artifacts of the stages it depends on from the
//! output directory, writes its own artifact and appends to `metrics.csv`.

use std::path::{Path, PathBuf};

use hetnet_core::locnet::TrainingSet;
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    append_metrics, ensure_dir, read_artifact, write_artifact, write_table, MetricRow, Stage,
};
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::pipeline::{
    self, configured_small_cells, dnn_dataset, scenario_from, train_dnn_with, DeployBody, DnnBody,
    OfflineBody, OnlineBody,
};
use crate::studies::{baseline_study, sweep_study, SweepSummary};

pub const DNN_TRAINING_FILE: &str = "dnn_training.csv";
pub const SWEEP_FILE: &str = "sweep_eta.csv";
pub const BASELINES_FILE: &str = "baselines.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Deploy,
    TrainOffline,
    TrainDnn,
    TrainOnline,
    Evaluate,
    SweepEta,
    CompareBaselines,
    Oracle,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Deploy => "deploy",
            Self::TrainOffline => "train-offline",
            Self::TrainDnn => "train-dnn",
            Self::TrainOnline => "train-online",
            Self::Evaluate => "evaluate",
            Self::SweepEta => "sweep-eta",
            Self::CompareBaselines => "compare-baselines",
            Self::Oracle => "oracle",
        }
    }

    /// Commands in pipeline order.
    pub const ALL: [Command; 8] = [
        Self::Deploy,
        Self::TrainOffline,
        Self::TrainDnn,
        Self::TrainOnline,
        Self::Evaluate,
        Self::SweepEta,
        Self::CompareBaselines,
        Self::Oracle,
    ];
}

/// Runs one command and returns the files it wrote.
pub fn run(cmd: Command, cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let ctx = Ctx { cmd, cfg, out };
    match cmd {
        Command::Deploy => ctx.deploy(),
        Command::TrainOffline => ctx.train_offline(),
        Command::TrainDnn => ctx.train_dnn(),
        Command::TrainOnline => ctx.train_online(),
        Command::Evaluate => ctx.evaluate(),
        Command::SweepEta => ctx.sweep_eta(),
        Command::CompareBaselines => ctx.compare_baselines(),
        Command::Oracle => ctx.oracle(),
    }
}

struct Ctx<'a> {
    cmd: Command,
    cfg: &'a ExperimentConfig,
    out: &'a Path,
}

impl Ctx<'_> {
    fn read<T: serde::de::DeserializeOwned>(&self, stage: Stage) -> Result<T> {
        let art = read_artifact::<T>(self.out, stage)?;
        if art.config_hash != self.cfg.hash() {
            return Err(HarnessError::Config(format!(
                "{} was produced by config {}, current config is {}; rerun {}",
                stage.file(),
                art.config_hash,
                self.cfg.hash(),
                stage.name()
            )));
        }
        Ok(art.body)
    }

    fn metrics(&self, rows: &[(&str, f64)]) -> Result<PathBuf> {
        let rows: Vec<MetricRow> = rows
            .iter()
            .map(|(m, v)| MetricRow::new(self.cmd.name(), self.cfg, m, *v))
            .collect();
        append_metrics(self.out, &rows)?;
        Ok(self.out.join(crate::artifacts::METRICS_FILE))
    }

    fn write<T: Serialize>(&self, stage: Stage, body: &T) -> Result<PathBuf> {
        write_artifact(self.out, stage, self.cfg, body)
    }

    fn deploy(&self) -> Result<Vec<PathBuf>> {
        let (_, body) = pipeline::deploy(self.cfg)?;
        let d = &body.document;
        Ok(vec![
            self.write(Stage::Deploy, &body)?,
            self.metrics(&[
                ("macrocells", d.deployment().macrocells.len() as f64),
                ("picos", d.picos.len() as f64),
                ("ues", d.ues.len() as f64),
            ])?,
        ])
    }

    fn train_offline(&self) -> Result<Vec<PathBuf>> {
        let deploy: DeployBody = self.read(Stage::Deploy)?;
        let sc = scenario_from(self.cfg, &deploy)?;
        let body = pipeline::offline(self.cfg, &sc)?;
        Ok(vec![
            self.write(Stage::Offline, &body)?,
            self.metrics(&[
                ("eta", body.eta),
                ("equilibrium_reward", body.equilibrium_reward),
                ("meanfield_sweeps", body.policy.sweeps as f64),
                ("meanfield_converged", f64::from(u8::from(body.policy.converged))),
                ("stability_max_deviation_deg", body.stability.max_deviation_deg),
            ])?,
        ])
    }

    fn train_dnn(&self) -> Result<Vec<PathBuf>> {
        let deploy: DeployBody = self.read(Stage::Deploy)?;
        let offline: OfflineBody = self.read(Stage::Offline)?;
        let sc = scenario_from(self.cfg, &deploy)?;
        let small = configured_small_cells(self.cfg)?;
        let data = dnn_dataset(self.cfg, &sc, &offline.policy, &small, self.cfg.dnn.samples, self.cfg.seed)?;
        let body = train_dnn_with(self.cfg, &sc, &offline.policy, &data)?;
        let csv = write_training_set(self.out, &data)?;
        let mut m = vec![
            ("dnn_train_loss", body.trained.train_loss),
            ("dnn_test_loss", body.trained.test_loss),
            ("dnn_epochs", body.trained.epochs as f64),
        ];
        if let Some(s) = &body.score {
            m.push(("localization_dnn", s.dnn));
            m.push(("localization_fingerprint", s.fingerprint));
        }
        Ok(vec![self.write(Stage::Dnn, &body)?, csv, self.metrics(&m)?])
    }

    fn train_online(&self) -> Result<Vec<PathBuf>> {
        let deploy: DeployBody = self.read(Stage::Deploy)?;
        let offline: OfflineBody = self.read(Stage::Offline)?;
        let dnn: DnnBody = self.read(Stage::Dnn)?;
        let sc = scenario_from(self.cfg, &deploy)?;
        let body = pipeline::online(self.cfg, &sc, &offline, &dnn.trained.net)?;
        let c = &body.compactness;
        Ok(vec![
            self.write(Stage::Online, &body)?,
            self.metrics(&[
                ("compactness_band_width", c.band_width as f64),
                ("compactness_covered_fraction", c.covered as f64 / c.total as f64),
                ("greedy_action_initial_state", body.policy_map[0] as f64),
            ])?,
        ])
    }

    fn evaluate(&self) -> Result<Vec<PathBuf>> {
        let deploy: DeployBody = self.read(Stage::Deploy)?;
        let offline: OfflineBody = self.read(Stage::Offline)?;
        let online: OnlineBody = self.read(Stage::Online)?;
        let sc = scenario_from(self.cfg, &deploy)?;
        let body = pipeline::evaluate(self.cfg, &sc, &offline, &online)?;
        let mut m = vec![
            ("gain_db", body.gain_db),
            ("oracle_gain_db", body.oracle_gain_db),
            ("objective_initial", body.initial.objective),
            ("objective_proposed", body.proposed.objective),
            ("objective_oracle", body.oracle.objective),
            ("eta", body.eta),
        ];
        if let Some(n) = body.normalized {
            m.push(("normalized", n));
        }
        Ok(vec![self.write(Stage::Evaluate, &body)?, self.metrics(&m)?])
    }

    fn sweep_eta(&self) -> Result<Vec<PathBuf>> {
        let (rows, summary) = sweep_study(self.cfg)?;
        let table = write_table(self.out, SWEEP_FILE, &rows)?;
        let mut m: Vec<(String, f64)> = Vec::new();
        for p in &summary {
            m.push((format!("sweep_p{}_eta", p.point), p.mean_eta));
            if let Some(n) = p.normalized {
                m.push((format!("sweep_p{}_normalized", p.point), n));
            }
        }
        let m: Vec<(&str, f64)> = m.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        Ok(vec![
            self.write(Stage::SweepEta, &SweepBody { points: summary })?,
            table,
            self.metrics(&m)?,
        ])
    }

    fn compare_baselines(&self) -> Result<Vec<PathBuf>> {
        let (rows, summary) = baseline_study(self.cfg)?;
        let table = write_table(self.out, BASELINES_FILE, &rows)?;
        let mut m = vec![
            ("gain_db_proposed", summary.proposed_gain_db),
            ("gain_db_mean_field", summary.mean_field_gain_db),
            ("gain_db_single_agent", summary.single_agent_gain_db),
            ("gain_db_oracle", summary.oracle_gain_db),
        ];
        if let Some((lo, hi)) = summary.proposed_minus_single_ci {
            m.push(("proposed_minus_single_ci_low", lo));
            m.push(("proposed_minus_single_ci_high", hi));
        }
        Ok(vec![self.write(Stage::Baselines, &summary)?, table, self.metrics(&m)?])
    }

    fn oracle(&self) -> Result<Vec<PathBuf>> {
        let deploy: DeployBody = self.read(Stage::Deploy)?;
        let offline: OfflineBody = self.read(Stage::Offline)?;
        let sc = scenario_from(self.cfg, &deploy)?;
        let body = pipeline::oracle(self.cfg, &sc, &offline)?;
        Ok(vec![
            self.write(Stage::Oracle, &body)?,
            self.metrics(&[
                ("oracle_action", body.action as f64),
                ("objective_oracle", body.evaluation.objective),
            ])?,
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepBody {
    pub points: Vec<SweepSummary>,
}

fn write_training_set(dir: &Path, data: &TrainingSet) -> Result<PathBuf> {
    let path = dir.join(DNN_TRAINING_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    let n = data.n_clusters();
    let header = std::iter::once("input_db".to_string())
        .chain((0..n).map(|k| format!("cluster_{k}")));
    w.write_record(header)?;
    for row in data.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_guard_names_the_missing_stage() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::desk();
        let e = run(Command::TrainOnline, &cfg, dir.path()).unwrap_err();
        assert_eq!(e.kind(), "missing_stage");
        assert!(e.to_string().contains("deploy"));
    }

    #[test]
    fn stale_artifacts_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::desk();
        run(Command::Deploy, &cfg, dir.path()).unwrap();
        let e = run(Command::TrainOffline, &cfg.with_seed(2), dir.path()).unwrap_err();
        assert_eq!(e.kind(), "config");
    }
}
