//! Versioned JSON artifacts and the metrics CSV.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

pub const ARTIFACT_VERSION: u32 = 1;
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Deploy,
    Offline,
    Dnn,
    Online,
    Evaluate,
    SweepEta,
    Baselines,
    Oracle,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Self::Deploy => "deploy",
            Self::Offline => "offline",
            Self::Dnn => "dnn",
            Self::Online => "online",
            Self::Evaluate => "evaluate",
            Self::SweepEta => "sweep_eta",
            Self::Baselines => "baselines",
            Self::Oracle => "oracle",
        }
    }

    pub fn file(self) -> String {
        format!("{}.json", self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub version: u32,
    pub stage: String,
    pub seed: u64,
    pub config_hash: String,
    pub body: T,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| HarnessError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn write_artifact<T: Serialize>(
    dir: &Path,
    stage: Stage,
    cfg: &ExperimentConfig,
    body: &T,
) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join(stage.file());
    let art = Artifact {
        version: ARTIFACT_VERSION,
        stage: stage.name().to_string(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        body,
    };
    write_json(&path, &art)?;
    Ok(path)
}

pub fn read_artifact<T: DeserializeOwned>(dir: &Path, stage: Stage) -> Result<Artifact<T>> {
    let path = dir.join(stage.file());
    if !path.exists() {
        return Err(HarnessError::MissingStage {
            stage: stage.name(),
            path,
        });
    }
    let text = fs::read_to_string(&path).map_err(|source| HarnessError::Io {
        path: path.clone(),
        source,
    })?;
    let art: Artifact<T> =
        serde_json::from_str(&text).map_err(|source| HarnessError::Json {
            path: path.clone(),
            source,
        })?;
    if art.version != ARTIFACT_VERSION {
        return Err(HarnessError::Version {
            path,
            found: art.version,
            expected: ARTIFACT_VERSION,
        });
    }
    Ok(art)
}

/// One row of `metrics.csv`. Metric names are listed in the README.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    pub fn new(command: &str, cfg: &ExperimentConfig, metric: &str, value: f64) -> Self {
        Self {
            command: command.to_string(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            metric: metric.to_string(),
            value,
        }
    }
}

/// Appends rows to `dir/metrics.csv`, writing the header on first use.
pub fn append_metrics(dir: &Path, rows: &[MetricRow]) -> Result<()> {
    ensure_dir(dir)?;
    let path = dir.join(METRICS_FILE);
    let fresh = fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| HarnessError::Io { path, source })
}

/// Writes a table of serializable rows to `dir/name`, replacing the file.
pub fn write_table<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path)?;
    for r in rows {
        w.serialize(r)?;
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
    fn artifact_round_trip_and_missing_stage() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::desk();
        write_artifact(dir.path(), Stage::Oracle, &cfg, &vec![1.5, 2.0]).unwrap();
        let a: Artifact<Vec<f64>> = read_artifact(dir.path(), Stage::Oracle).unwrap();
        assert_eq!(a.body, vec![1.5, 2.0]);
        assert_eq!(a.config_hash, cfg.hash());
        let e = read_artifact::<Vec<f64>>(dir.path(), Stage::Offline).unwrap_err();
        assert_eq!(e.kind(), "missing_stage");
        assert!(e.to_string().starts_with("missing stage: offline"));
    }

    #[test]
    fn metrics_header_written_once() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::desk();
        let row = MetricRow::new("evaluate", &cfg, "gain_db", 0.1 + 0.2);
        append_metrics(dir.path(), &[row.clone()]).unwrap();
        append_metrics(dir.path(), &[row]).unwrap();
        let text = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "command,seed,config_hash,metric,value");
        assert!(lines[1].ends_with(",gain_db,0.30000000000000004"));
    }
}
