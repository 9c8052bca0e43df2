//! In-memory pipeline stages. Each function takes the outputs of the stages
//! before it and returns a serializable body; the command layer handles
//! persistence.

use hetnet_core::env::{evaluate_policy, oracle_best_action, Evaluation, OnlineEnv, Scenario, SmallCellPlacement, SmallCells, World};
use hetnet_core::geometry::{associate, sample_deployment, sample_picos, DeploymentConfig, DeploymentDocument};
use hetnet_core::locnet::{assign_ue, fingerprint_baseline, train_net, ClusterNet, TrainedNet, TrainingSet};
use hetnet_core::meanfield::{check_equilibrium_stability, estimate_beta, meanfield_train, relative_variance, BetaTable, MeanFieldConfig, MeanFieldPolicy, StabilityReport};
use hetnet_core::online::{policy_compactness, run_online_training, run_tabular_training, Compactness, FeatureContext, LinearPolicy, Period, TargetEnv};
use hetnet_core::radio::{AntennaConfig, ShadowMap};
use hetnet_core::rng::{self, tags, SimRng};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, SmallCellConfig};
use crate::error::Result;

/// Share of states the compactness band must hold.
pub const COMPACTNESS_FRACTION: f64 = 0.7;

pub fn deployment_config(cfg: &ExperimentConfig) -> DeploymentConfig {
    DeploymentConfig {
        seed: cfg.seed,
        ..cfg.deployment.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployBody {
    pub document: DeploymentDocument,
    pub agents: Vec<usize>,
    pub typical_ues: Vec<[f64; 2]>,
    pub ue_cluster: Vec<usize>,
}

pub fn deploy(cfg: &ExperimentConfig) -> Result<(Scenario, DeployBody)> {
    let dep = sample_deployment(&deployment_config(cfg))?;
    let mut r = rng::stream(cfg.seed, tags::SHADOW);
    let shadow = ShadowMap::sample(
        dep.macrocells.len(),
        dep.picos.len(),
        dep.ues.len(),
        &cfg.radio,
        &mut r,
    )?;
    let configs = vec![AntennaConfig::initial(); dep.macrocells.len()];
    let assoc = associate(&dep, &cfg.radio, &shadow, &configs)?;
    let document = DeploymentDocument::new(&dep, &assoc);
    let sc = Scenario::build(dep, &cfg.radio, &cfg.actions, &cfg.scenario, cfg.seed)?;
    let n_typical = sc.agents.len() * sc.ues_per_agent;
    let body = DeployBody {
        document,
        agents: sc.agents.clone(),
        typical_ues: sc.receivers[..n_typical].to_vec(),
        ue_cluster: sc.ue_cluster.clone(),
    };
    Ok((sc, body))
}

/// Rebuilds the tabulated scenario from a persisted deployment.
pub fn scenario_from(cfg: &ExperimentConfig, body: &DeployBody) -> Result<Scenario> {
    Ok(Scenario::build(
        body.document.deployment(),
        &cfg.radio,
        &cfg.actions,
        &cfg.scenario,
        cfg.seed,
    )?)
}

/// Small-cell tier for the online phase. A frozen layout of the deployment's
/// pico density is the deployment's own pico layer.
pub fn small_cells(sc_cfg: &SmallCellConfig, seed: u64, side_km: f64) -> Result<SmallCells> {
    let placement = if sc_cfg.mobile {
        SmallCellPlacement::Uniform {
            density_per_km2: sc_cfg.density_per_km2,
        }
    } else {
        SmallCellPlacement::Frozen {
            positions: sample_picos(seed, sc_cfg.density_per_km2, side_km)?,
        }
    };
    Ok(SmallCells {
        placement,
        shadow_sigma_db: sc_cfg.shadow_sigma_db,
        tx_power_dbm: sc_cfg.tx_power_dbm,
    })
}

pub fn configured_small_cells(cfg: &ExperimentConfig) -> Result<SmallCells> {
    small_cells(&cfg.small_cells, cfg.seed, cfg.deployment.area_side_km)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineBody {
    pub policy: MeanFieldPolicy,
    pub beta: BetaTable,
    /// Relative variance of the configured small-cell tier.
    pub eta: f64,
    pub stability: StabilityReport,
    /// Sum of agent rewards at the equilibrium joint action.
    pub equilibrium_reward: f64,
}

pub fn meanfield_config(cfg: &ExperimentConfig) -> MeanFieldConfig {
    MeanFieldConfig {
        seed: rng::derive_seed(cfg.seed, tags::MEANFIELD),
        ..cfg.meanfield.clone()
    }
}

pub fn offline(cfg: &ExperimentConfig, sc: &Scenario) -> Result<OfflineBody> {
    let world = World::new(sc, &cfg.world)?;
    let policy = meanfield_train(&world, &meanfield_config(cfg))?;
    let beta = estimate_beta(&policy, &world, cfg.beta.samples, cfg.beta.respond_rounds, cfg.seed)?;
    let small = configured_small_cells(cfg)?;
    let eta = relative_variance(&world, &small, &beta, cfg.eval.eta_samples, cfg.seed)?;
    let uniform = SmallCells {
        placement: SmallCellPlacement::Uniform {
            density_per_km2: cfg.small_cells.density_per_km2,
        },
        ..small
    };
    let stability = check_equilibrium_stability(
        &policy,
        &world,
        &uniform,
        cfg.eval.stability_trials,
        cfg.beta.respond_rounds,
        cfg.seed,
    )?;
    let equilibrium_reward = world.joint_reward(&policy.greedy_joint)?;
    Ok(OfflineBody {
        policy,
        beta,
        eta,
        stability,
        equilibrium_reward,
    })
}

fn online_env<'a>(
    cfg: &'a ExperimentConfig,
    sc: &'a Scenario,
    policy: &'a MeanFieldPolicy,
    small: &'a SmallCells,
) -> Result<OnlineEnv<'a>> {
    let mut env = OnlineEnv::new(sc, &cfg.world, policy, small)?;
    env.respond_rounds = cfg.beta.respond_rounds;
    Ok(env)
}

fn noise(std_db: f64) -> Result<Option<Normal<f64>>> {
    if std_db > 0.0 {
        Ok(Some(Normal::new(0.0, std_db).map_err(|e| {
            hetnet_core::Error::InvalidConfig(format!("measurement noise: {e}"))
        })?))
    } else {
        Ok(None)
    }
}

fn noisy(x: f64, d: &Option<Normal<f64>>, r: &mut SimRng) -> f64 {
    d.map_or(x, |d| x + d.sample(r))
}

/// Cluster-value vectors with the target at its initial configuration and
/// the neighbours settled, under random load and small-cell draws.
pub fn dnn_dataset(
    cfg: &ExperimentConfig,
    sc: &Scenario,
    policy: &MeanFieldPolicy,
    small: &SmallCells,
    n: usize,
    seed: u64,
) -> Result<TrainingSet> {
    let env = online_env(cfg, sc, policy, small)?;
    let d = noise(cfg.dnn.noise_db)?;
    let mut r = rng::stream(seed, tags::LOCNET_DATA);
    let mut vectors = Vec::with_capacity(n);
    for _ in 0..n {
        let load = r.random_range(cfg.dnn.load_min..=cfg.dnn.load_max);
        let small_mw = small.draw(sc, &mut r)?;
        let joint = env.settle(sc.initial_action, &small_mw)?;
        let v = sc.cluster_values(&joint, load, &small_mw);
        vectors.push(v.into_iter().map(|x| noisy(x, &d, &mut r)).collect());
    }
    Ok(TrainingSet {
        input_index: cfg.dnn.input_cluster,
        vectors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationScore {
    pub dnn: f64,
    pub fingerprint: f64,
}

/// Localizes every test point under `test_loads` fresh load and small-cell
/// realizations, with the DNN and with the fingerprint baseline.
pub fn localization_score(
    cfg: &ExperimentConfig,
    sc: &Scenario,
    policy: &MeanFieldPolicy,
    small: &SmallCells,
    net: &ClusterNet,
    fingerprint: &[f64],
    seed: u64,
) -> Result<LocalizationScore> {
    let env = online_env(cfg, sc, policy, small)?;
    let d = noise(cfg.dnn.noise_db)?;
    let mut r = rng::stream(seed, tags::LOCALIZE_TEST);
    let (mut hit_dnn, mut hit_fp, mut total) = (0usize, 0usize, 0usize);
    for _ in 0..cfg.localization.test_loads {
        let load = r.random_range(cfg.dnn.load_min..=cfg.dnn.load_max);
        let small_mw = small.draw(sc, &mut r)?;
        let joint = env.settle(sc.initial_action, &small_mw)?;
        let p = sc.probe(cfg.dnn.input_cluster);
        let x = noisy(sc.link(p, &joint, load, small_mw[p]).sinr_db, &d, &mut r);
        let pred = net.forward(x)?;
        for (i, &k) in sc.test_cluster.iter().enumerate() {
            let t = sc.test_point(i);
            let g = noisy(sc.link(t, &joint, load, small_mw[t]).sinr_db, &d, &mut r);
            hit_dnn += usize::from(assign_ue(g, &pred)? == k);
            hit_fp += usize::from(assign_ue(g, fingerprint)? == k);
            total += 1;
        }
    }
    if total == 0 {
        return Err(hetnet_core::Error::Empty("localization test points").into());
    }
    Ok(LocalizationScore {
        dnn: hit_dnn as f64 / total as f64,
        fingerprint: hit_fp as f64 / total as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnnBody {
    pub trained: TrainedNet,
    pub fingerprint: Vec<f64>,
    pub score: Option<LocalizationScore>,
}

pub fn train_dnn_with(
    cfg: &ExperimentConfig,
    sc: &Scenario,
    policy: &MeanFieldPolicy,
    data: &TrainingSet,
) -> Result<DnnBody> {
    let hyper = hetnet_core::locnet::NetHyper {
        seed: rng::derive_seed(cfg.seed, tags::LOCNET_INIT),
        ..cfg.dnn.net.clone()
    };
    let trained = train_net(data, &hyper)?;
    let fingerprint = fingerprint_baseline(&data.vectors)?;
    let score = if sc.test_cluster.is_empty() {
        None
    } else {
        let small = configured_small_cells(cfg)?;
        Some(localization_score(cfg, sc, policy, &small, &trained.net, &fingerprint, cfg.seed)?)
    };
    Ok(DnnBody {
        trained,
        fingerprint,
        score,
    })
}

pub fn train_dnn(cfg: &ExperimentConfig, sc: &Scenario, policy: &MeanFieldPolicy) -> Result<DnnBody> {
    let small = configured_small_cells(cfg)?;
    let data = dnn_dataset(cfg, sc, policy, &small, cfg.dnn.samples, cfg.seed)?;
    train_dnn_with(cfg, sc, policy, &data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineBody {
    /// Estimated cluster of each typical UE of the target cell.
    pub ue_clusters: Vec<usize>,
    pub context: FeatureContext,
    pub policy: LinearPolicy,
    pub policy_map: Vec<usize>,
    pub compactness: Compactness,
}

/// The observation period at the initial configuration and the DNN-based
/// cluster estimate of every typical UE.
pub fn localize(
    cfg: &ExperimentConfig,
    env: &OnlineEnv<'_>,
    net: &ClusterNet,
    seed: u64,
) -> Result<(Vec<usize>, Period)> {
    let sc = env.world.scenario;
    let d = noise(cfg.dnn.noise_db)?;
    let mut r = rng::stream(seed, tags::LOCALIZE);
    let small_mw = env.small.draw(sc, &mut r)?;
    let joint = env.settle(sc.initial_action, &small_mw)?;
    let period = env.world.with_small(small_mw.clone()).period(0, &joint, 0, &mut r)?;
    let p = sc.probe(cfg.dnn.input_cluster);
    let load = env.world.params.load;
    let x = noisy(sc.link(p, &joint, load, small_mw[p]).sinr_db, &d, &mut r);
    let pred = net.forward(x)?;
    let v = sc.radio.streams_per_ue;
    let clusters = (0..sc.ues_per_agent)
        .map(|u| {
            let avg = period.sinr_db[u * v..(u + 1) * v].iter().sum::<f64>() / v as f64;
            Ok(assign_ue(noisy(avg, &d, &mut r), &pred)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((clusters, period))
}

pub fn feature_context(
    sc: &Scenario,
    beta: &BetaTable,
    ue_clusters: &[usize],
    initial: &Period,
) -> FeatureContext {
    FeatureContext {
        initial_reports_db: initial.reports_db.clone(),
        initial_config: AntennaConfig::initial(),
        actions: sc.actions.clone(),
        beta: beta.clone(),
        ue_angles_deg: ue_clusters.iter().map(|&k| Some(sc.cluster_angles(k))).collect(),
        streams_per_ue: sc.radio.streams_per_ue,
        noise_mw: sc.noise_mw,
    }
}

pub fn online_with(
    cfg: &ExperimentConfig,
    sc: &Scenario,
    offline: &OfflineBody,
    net: &ClusterNet,
    small: &SmallCells,
) -> Result<OnlineBody> {
    let mut env = online_env(cfg, sc, &offline.policy, small)?;
    let (ue_clusters, initial) = localize(cfg, &env, net, cfg.seed)?;
    let context = feature_context(sc, &offline.beta, &ue_clusters, &initial);
    let mut r = rng::stream(cfg.seed, tags::ONLINE);
    let policy = run_online_training(&mut env, &context, &cfg.online, &mut r)?;
    let policy_map = policy.policy_map(env.n_states(), &context)?;
    let compactness = policy_compactness(&policy_map, sc.actions.len(), COMPACTNESS_FRACTION)?;
    Ok(OnlineBody {
        ue_clusters,
        context,
        policy,
        policy_map,
        compactness,
    })
}

pub fn online(
    cfg: &ExperimentConfig,
    sc: &Scenario,
    offline: &OfflineBody,
    net: &ClusterNet,
) -> Result<OnlineBody> {
    online_with(cfg, sc, offline, net, &configured_small_cells(cfg)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalBody {
    pub initial: Evaluation,
    pub proposed: Evaluation,
    pub oracle_action: usize,
    pub oracle: Evaluation,
    /// Mean SINR change of the target's UEs over the initial configuration.
    pub gain_db: f64,
    pub oracle_gain_db: f64,
    /// `(proposed - initial) / (oracle - initial)` on the objective; absent
    /// when the initial configuration is already optimal.
    pub normalized: Option<f64>,
    pub eta: f64,
}

pub fn normalized(proposed: f64, initial: f64, oracle: f64) -> Option<f64> {
    let den = oracle - initial;
    (den > 1e-9).then(|| (proposed - initial) / den)
}

pub fn evaluate_with(
    cfg: &ExperimentConfig,
    sc: &Scenario,
    offline: &OfflineBody,
    online: &OnlineBody,
    small: &SmallCells,
    eta: f64,
) -> Result<EvalBody> {
    let mut env = online_env(cfg, sc, &offline.policy, small)?;
    let reward = &cfg.world.reward;
    let h = cfg.eval.horizon;
    let init = sc.initial_action;
    let initial = evaluate_policy(&mut env, &mut |_| Ok(init), h, reward, cfg.seed)?;
    let map = &online.policy_map;
    let proposed = evaluate_policy(&mut env, &mut |s| Ok(map[s as usize]), h, reward, cfg.seed)?;
    let (oracle_action, oracle) = oracle_best_action(&mut env, h, reward, cfg.seed, cfg.eval.oracle_budget)?;
    Ok(EvalBody {
        gain_db: proposed.mean_sinr_db - initial.mean_sinr_db,
        oracle_gain_db: oracle.mean_sinr_db - initial.mean_sinr_db,
        normalized: normalized(proposed.objective, initial.objective, oracle.objective),
        initial,
        proposed,
        oracle_action,
        oracle,
        eta,
    })
}

pub fn evaluate(
    cfg: &ExperimentConfig,
    sc: &Scenario,
    offline: &OfflineBody,
    online: &OnlineBody,
) -> Result<EvalBody> {
    evaluate_with(cfg, sc, offline, online, &configured_small_cells(cfg)?, offline.eta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleBody {
    pub action: usize,
    pub config: AntennaConfig,
    pub evaluation: Evaluation,
    /// Objective of every action, from a second independent pass.
    pub objectives: Vec<f64>,
    pub recheck_agrees: bool,
}

pub fn oracle(cfg: &ExperimentConfig, sc: &Scenario, offline: &OfflineBody) -> Result<OracleBody> {
    let small = configured_small_cells(cfg)?;
    let mut env = online_env(cfg, sc, &offline.policy, &small)?;
    let reward = &cfg.world.reward;
    let h = cfg.eval.horizon;
    let (action, evaluation) = oracle_best_action(&mut env, h, reward, cfg.seed, cfg.eval.oracle_budget)?;
    let objectives = (0..sc.actions.len())
        .map(|a| Ok(evaluate_policy(&mut env, &mut |_| Ok(a), h, reward, cfg.seed)?.objective))
        .collect::<Result<Vec<f64>>>()?;
    let best = objectives.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let recheck = objectives.iter().position(|&o| o == best);
    Ok(OracleBody {
        action,
        config: sc.actions.decode(action)?,
        evaluation,
        objectives,
        recheck_agrees: recheck == Some(action),
    })
}

/// Everything up to and including the DNN, for one seed.
pub struct Trained {
    pub scenario: Scenario,
    pub deploy: DeployBody,
    pub offline: OfflineBody,
    pub dnn: DnnBody,
}

pub fn train_through_dnn(cfg: &ExperimentConfig) -> Result<Trained> {
    let (scenario, deploy) = deploy(cfg)?;
    let offline = offline(cfg, &scenario)?;
    let dnn = train_dnn(cfg, &scenario, &offline.policy)?;
    Ok(Trained {
        scenario,
        deploy,
        offline,
        dnn,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub seed: u64,
    pub config_hash: String,
    pub point: usize,
    pub density_per_km2: f64,
    pub shadow_sigma_db: f64,
    pub eta: Option<f64>,
    pub initial_objective: f64,
    pub proposed_objective: f64,
    pub oracle_objective: f64,
    pub normalized: Option<f64>,
    /// The point's relative variance could not be measured or the oracle
    /// does not improve on the initial configuration.
    pub flagged: bool,
}

pub fn sweep_seed(cfg: &ExperimentConfig, t: &Trained) -> Result<Vec<SweepRow>> {
    let world = World::new(&t.scenario, &cfg.world)?;
    cfg.sweep
        .iter()
        .enumerate()
        .map(|(i, pt)| {
            let sc_cfg = SmallCellConfig {
                density_per_km2: pt.density_per_km2,
                shadow_sigma_db: pt.shadow_sigma_db,
                ..cfg.small_cells.clone()
            };
            let small = small_cells(&sc_cfg, cfg.seed, cfg.deployment.area_side_km)?;
            let eta = relative_variance(&world, &small, &t.offline.beta, cfg.eval.eta_samples, cfg.seed).ok();
            let on = online_with(cfg, &t.scenario, &t.offline, &t.dnn.trained.net, &small)?;
            let ev = evaluate_with(cfg, &t.scenario, &t.offline, &on, &small, eta.unwrap_or(f64::NAN))?;
            Ok(SweepRow {
                seed: cfg.seed,
                config_hash: cfg.hash(),
                point: i,
                density_per_km2: pt.density_per_km2,
                shadow_sigma_db: pt.shadow_sigma_db,
                eta,
                initial_objective: ev.initial.objective,
                proposed_objective: ev.proposed.objective,
                oracle_objective: ev.oracle.objective,
                normalized: ev.normalized,
                flagged: eta.is_none() || ev.normalized.is_none(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub seed: u64,
    pub config_hash: String,
    pub proposed_gain_db: f64,
    pub mean_field_gain_db: f64,
    pub single_agent_gain_db: f64,
    pub oracle_gain_db: f64,
    pub proposed_action: usize,
    pub mean_field_action: usize,
    pub mean_field_converged: bool,
}

/// The proposed learner, online mean-field learning in the true environment
/// and tabular single-agent learning, all evaluated on the same realizations.
pub fn baselines_seed(cfg: &ExperimentConfig, t: &Trained) -> Result<BaselineRow> {
    let sc = &t.scenario;
    let small = configured_small_cells(cfg)?;
    let on = online_with(cfg, sc, &t.offline, &t.dnn.trained.net, &small)?;
    let ev = evaluate_with(cfg, sc, &t.offline, &on, &small, t.offline.eta)?;

    let mut env = online_env(cfg, sc, &t.offline.policy, &small)?;
    let mut r = rng::stream(cfg.seed, tags::ONLINE);
    let tab = run_tabular_training(&mut env, &cfg.online, &mut r)?;
    let reward = &cfg.world.reward;
    let h = cfg.eval.horizon;
    let single = evaluate_policy(&mut env, &mut |s| Ok(tab.greedy(s)), h, reward, cfg.seed)?;

    let world = World::new(sc, &cfg.world)?;
    let live = world.with_redraw(&small);
    let mf = meanfield_train(&live, &meanfield_config(cfg))?;
    let mf_action = mf.greedy_joint[0];
    let mean_field = evaluate_policy(&mut env, &mut |_| Ok(mf_action), h, reward, cfg.seed)?;

    let base = ev.initial.mean_sinr_db;
    Ok(BaselineRow {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        proposed_gain_db: ev.gain_db,
        mean_field_gain_db: mean_field.mean_sinr_db - base,
        single_agent_gain_db: single.mean_sinr_db - base,
        oracle_gain_db: ev.oracle_gain_db,
        proposed_action: on.policy_map[0],
        mean_field_action: mf_action,
        mean_field_converged: mf.converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRow {
    pub seed: u64,
    pub size: usize,
    pub dnn: f64,
    pub fingerprint: f64,
}

/// Localization accuracy for nested training sets of the configured sizes.
pub fn localization_seed(cfg: &ExperimentConfig, t: &Trained) -> Result<Vec<LocalizationRow>> {
    let sc = &t.scenario;
    let small = configured_small_cells(cfg)?;
    let max = cfg.localization.sizes.iter().copied().max().unwrap_or(0);
    let data = dnn_dataset(cfg, sc, &t.offline.policy, &small, max, cfg.seed)?;
    cfg.localization
        .sizes
        .iter()
        .map(|&n| {
            let subset = TrainingSet {
                input_index: data.input_index,
                vectors: data.vectors[..n].to_vec(),
            };
            let body = train_dnn_with(cfg, sc, &t.offline.policy, &subset)?;
            let s = body.score.ok_or(hetnet_core::Error::Empty("localization test points"))?;
            Ok(LocalizationRow {
                seed: cfg.seed,
                size: n,
                dnn: s.dnn,
                fingerprint: s.fingerprint,
            })
        })
        .collect()
}
