//! Experiment configuration.
//!
//! A config file is TOML. It may name a `preset` and override any subset of
//! its fields; tables are merged key by key onto the preset, and any key the
//! schema does not know is rejected. Tagged tables (those carrying a `kind`
//! key) replace the preset's value wholesale.

use std::path::Path;

use hetnet_core::env::{ClusterConfig, ScenarioConfig, WorldParams};
use hetnet_core::geometry::{DeploymentConfig, SiteLayout};
use hetnet_core::locnet::NetHyper;
use hetnet_core::mdp::{ActionSpace, RewardConfig, StateQuantizer};
use hetnet_core::meanfield::MeanFieldConfig;
use hetnet_core::online::{Normalization, OnlineHyper};
use hetnet_core::radio::RadioParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Paper,
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaConfig {
    /// Monte Carlo samples per target action.
    pub samples: usize,
    pub respond_rounds: usize,
}

/// Small-cell tier present in the online phase only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmallCellConfig {
    pub density_per_km2: f64,
    pub shadow_sigma_db: f64,
    pub tx_power_dbm: f64,
    /// Redraw positions every period instead of freezing one layout.
    pub mobile: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DnnConfig {
    pub samples: usize,
    pub load_min: f64,
    pub load_max: f64,
    /// Measurement noise added to every training cluster value (dB).
    pub noise_db: f64,
    pub input_cluster: usize,
    pub net: NetHyper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub horizon: usize,
    pub oracle_budget: usize,
    pub eta_samples: usize,
    pub stability_trials: usize,
    /// Seeds used by the multi-seed commands, starting at the global seed.
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPoint {
    pub density_per_km2: f64,
    pub shadow_sigma_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizationConfig {
    /// Training-set sizes for the accuracy-versus-size study.
    pub sizes: Vec<usize>,
    /// Load realizations the test points are localized under.
    pub test_loads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub seed: u64,
    pub deployment: DeploymentConfig,
    pub radio: RadioParams,
    pub scenario: ScenarioConfig,
    pub world: WorldParams,
    pub actions: ActionSpace,
    pub meanfield: MeanFieldConfig,
    pub beta: BetaConfig,
    pub small_cells: SmallCellConfig,
    pub online: OnlineHyper,
    pub dnn: DnnConfig,
    pub eval: EvalConfig,
    pub sweep: Vec<SweepPoint>,
    pub localization: LocalizationConfig,
}

impl ExperimentConfig {
    /// Two eNBs, two agents with two typical UEs each, four SINR levels and
    /// the 12-action grid: small enough for exhaustive oracles.
    pub fn desk() -> Self {
        Self {
            preset: Preset::Desk,
            seed: 1,
            deployment: DeploymentConfig {
                area_side_km: 1.5,
                lambda_pico: 2.0,
                n_ues: 20,
                site_layout: SiteLayout::Fixed {
                    sites: vec![[0.4, 0.4], [1.1, 1.1]],
                },
                ..Default::default()
            },
            radio: RadioParams::default(),
            scenario: ScenarioConfig {
                n_agents: 2,
                ues_per_agent: 2,
                test_points_per_cluster: 5,
                ..Default::default()
            },
            world: WorldParams {
                quantizer: StateQuantizer {
                    min_db: 0.0,
                    max_db: 12.0,
                    step_db: 4.0,
                },
                ..Default::default()
            },
            actions: ActionSpace::desk(),
            meanfield: MeanFieldConfig::default(),
            beta: BetaConfig {
                samples: 20,
                respond_rounds: 8,
            },
            small_cells: SmallCellConfig {
                density_per_km2: 2.0,
                shadow_sigma_db: 6.0,
                tx_power_dbm: 24.0,
                mobile: false,
            },
            online: OnlineHyper {
                normalization: Normalization::Signed,
                ..Default::default()
            },
            dnn: DnnConfig {
                samples: 200,
                load_min: 0.5,
                load_max: 1.5,
                noise_db: 0.3,
                input_cluster: 0,
                net: NetHyper::default(),
            },
            eval: EvalConfig {
                horizon: 50,
                oracle_budget: 200,
                eta_samples: 500,
                stability_trials: 20,
                seeds: 20,
            },
            sweep: [(0.0, 0.0), (1.0, 6.0), (2.0, 6.0), (5.0, 8.0), (10.0, 10.0), (20.0, 10.0)]
                .into_iter()
                .map(|(d, s)| SweepPoint {
                    density_per_km2: d,
                    shadow_sigma_db: s,
                })
                .collect(),
            localization: LocalizationConfig {
                sizes: vec![4, 8, 16, 32, 64, 128],
                test_loads: 20,
            },
        }
    }

    /// Poisson deployment, five typical UEs, seven SINR levels and the full
    /// 180-action grid.
    pub fn paper() -> Self {
        let desk = Self::desk();
        Self {
            preset: Preset::Paper,
            deployment: DeploymentConfig::default(),
            scenario: ScenarioConfig {
                n_agents: 3,
                ues_per_agent: 5,
                test_points_per_cluster: 5,
                cluster: ClusterConfig::default(),
                ..Default::default()
            },
            world: WorldParams {
                reward: RewardConfig::default(),
                ..Default::default()
            },
            actions: ActionSpace::paper(),
            eval: EvalConfig {
                seeds: 1,
                ..desk.eval.clone()
            },
            ..desk
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => Self::paper(),
            Preset::Desk => Self::desk(),
        }
    }

    /// Parses `text` over the preset it names (or `fallback`). A preset
    /// given explicitly by the caller wins over the file's.
    pub fn from_toml(text: &str, preset: Option<Preset>) -> Result<Self> {
        let mut file: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        let named = match file.remove("preset") {
            Some(v) => Some(
                v.try_into::<Preset>()
                    .map_err(|e| HarnessError::Config(format!("preset: {e}")))?,
            ),
            None => None,
        };
        let p = preset.or(named).unwrap_or(Preset::Desk);
        let base = toml::Table::try_from(Self::preset(p))
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let merged = merge(base, file);
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, preset: Option<Preset>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, preset)
    }

    pub fn validate(&self) -> Result<()> {
        self.deployment.validate()?;
        self.radio.validate()?;
        self.world.validate()?;
        self.actions.validate()?;
        self.meanfield.validate()?;
        self.online.validate()?;
        self.scenario.cluster.grid()?;
        let bad = |m: &str| Err(HarnessError::Config(m.into()));
        if self.beta.samples == 0 {
            return bad("beta.samples must be >= 1");
        }
        if !(self.small_cells.density_per_km2 >= 0.0 && self.small_cells.shadow_sigma_db >= 0.0) {
            return bad("small_cells density and shadowing must be >= 0");
        }
        if !(self.dnn.load_min > 0.0 && self.dnn.load_min <= self.dnn.load_max) {
            return bad("dnn load range must satisfy 0 < load_min <= load_max");
        }
        if self.dnn.samples < 2 || !(self.dnn.noise_db >= 0.0) {
            return bad("dnn.samples must be >= 2 and noise_db >= 0");
        }
        if self.eval.horizon == 0 || self.eval.eta_samples == 0 || self.eval.seeds == 0 {
            return bad("eval horizon, eta_samples and seeds must be >= 1");
        }
        Ok(())
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

fn merge(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (k, v) in over {
        match (base.remove(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if !o.contains_key("kind") => {
                base.insert(k, toml::Value::Table(merge(b, o)));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for p in [Preset::Desk, Preset::Paper] {
            let cfg = ExperimentConfig::preset(p);
            cfg.validate().unwrap();
            let text = toml::to_string(&cfg).unwrap();
            assert_eq!(ExperimentConfig::from_toml(&text, None).unwrap(), cfg);
        }
    }

    #[test]
    fn partial_override() {
        let cfg = ExperimentConfig::from_toml("seed = 9\n[online]\ntrials = 5\n", None).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.online.trials, 5);
        assert_eq!(cfg.online.mu, 0.8);
        assert_eq!(cfg.preset, Preset::Desk);
        let cfg = ExperimentConfig::from_toml("preset = \"paper\"\n", None).unwrap();
        assert_eq!(cfg.actions.len(), 180);
        let cfg = ExperimentConfig::from_toml("preset = \"paper\"\n", Some(Preset::Desk)).unwrap();
        assert_eq!(cfg.actions.len(), 12);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in ["bogus = 1\n", "[online]\ntrails = 5\n", "[world.reward]\nxi = 1\n"] {
            assert!(matches!(
                ExperimentConfig::from_toml(text, None),
                Err(HarnessError::Config(_))
            ));
        }
    }

    #[test]
    fn tagged_tables_replace() {
        let cfg = ExperimentConfig::from_toml(
            "[deployment.site_layout]\nkind = \"poisson\"\n",
            None,
        )
        .unwrap();
        assert_eq!(cfg.deployment.site_layout, SiteLayout::Poisson);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::desk();
        assert_eq!(a.hash(), ExperimentConfig::desk().hash());
        assert_ne!(a.hash(), a.with_seed(2).hash());
        assert_eq!(a.hash().len(), 16);
    }
}
