//! Offline mean-field multi-agent Q-learning.
//!
//! Each agent learns a Q table conditioned on the mean configuration of its
//! neighbours, snapped to the nearest grid action. Training proceeds in
//! sweeps: every agent learns against a frozen snapshot of its neighbours'
//! greedy actions, then all greedy actions and mean actions are recomputed at
//! a barrier. The result feeds the per-UE interference table used by the
//! online learner.

use serde::{Deserialize, Serialize};

use crate::env::{SmallCells, World};
use crate::error::{Error, Result};
use crate::mdp::ActionSpace;
use crate::online::{argmax, eps_greedy_select, tabular_q_update, EpsilonSchedule, TabularQ};
use crate::radio::AntennaConfig;
use crate::rng::{self, tags, SimRng};

/// Componentwise mean of `(tilt, v_bw, h_bw)`. The result may be off-grid.
pub fn mean_action(configs: &[AntennaConfig]) -> Result<AntennaConfig> {
    if configs.is_empty() {
        return Err(Error::Empty("neighbor configurations"));
    }
    let n = configs.len() as f64;
    let mut acc = [0.0; 3];
    for c in configs {
        for (a, v) in acc.iter_mut().zip(c.as_array()) {
            *a += v;
        }
    }
    Ok(AntennaConfig::from_array(acc.map(|a| a / n)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub reward: f64,
    pub state: u64,
}

/// A stochastic game in which every agent draws from the same action grid.
pub trait MarkovGame {
    fn n_agents(&self) -> usize;
    fn actions(&self) -> &ActionSpace;
    fn n_states(&self) -> u64;
    fn neighbors(&self, agent: usize) -> Vec<usize>;
    fn initial_action(&self) -> usize;
    /// State `agent` sits in while `joint` is held, without measurement noise.
    fn observe(&self, agent: usize, joint: &[usize]) -> Result<u64>;
    /// One decision period for `agent` from `state` with everyone playing
    /// `joint`.
    fn transition(
        &self,
        agent: usize,
        state: u64,
        joint: &[usize],
        rng: &mut SimRng,
    ) -> Result<Outcome>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeanFieldConfig {
    pub learning_rate: f64,
    pub discount: f64,
    pub t_eps: usize,
    pub steps_per_sweep: usize,
    pub max_sweeps: usize,
    pub tolerance_deg: f64,
    pub seed: u64,
}

impl Default for MeanFieldConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.2,
            discount: 0.9,
            t_eps: 100,
            steps_per_sweep: 3000,
            max_sweeps: 20,
            tolerance_deg: 0.5,
            seed: 0,
        }
    }
}

impl MeanFieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_sweeps == 0 || self.steps_per_sweep == 0 {
            return Err(Error::InvalidConfig("mean-field budget must be >= 1".into()));
        }
        if !(self.tolerance_deg > 0.0) {
            return Err(Error::InvalidConfig("tolerance must be > 0".into()));
        }
        if !(self.discount >= 0.0 && self.discount < 1.0) || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(
                "mean-field learning rate must be > 0 and discount in [0, 1)".into(),
            ));
        }
        EpsilonSchedule::new(self.t_eps)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldPolicy {
    pub n_states: u64,
    pub n_actions: usize,
    pub neighbors: Vec<Vec<usize>>,
    /// One table per agent over `(state * |A| + mean_index, action)`.
    pub q: Vec<TabularQ>,
    pub greedy_joint: Vec<usize>,
    pub mean_actions: Vec<AntennaConfig>,
    pub mean_indices: Vec<usize>,
    pub converged: bool,
    pub sweeps: usize,
}

impl MeanFieldPolicy {
    pub fn row(&self, state: u64, mean_index: usize) -> u64 {
        state * self.n_actions as u64 + mean_index as u64
    }

    /// Greedy action, or `None` when the row was never visited.
    pub fn greedy(&self, agent: usize, state: u64, mean_index: usize) -> Option<usize> {
        self.q[agent].greedy(self.row(state, mean_index))
    }
}

/// Continuous mean of the neighbours' configurations and its grid index. An
/// agent without neighbours sees a constant context.
pub fn mean_context(
    actions: &ActionSpace,
    joint: &[usize],
    neighbors: &[usize],
    fallback: usize,
) -> Result<(AntennaConfig, usize)> {
    if neighbors.is_empty() {
        return Ok((actions.decode(fallback)?, 0));
    }
    let cfgs = neighbors
        .iter()
        .map(|&j| actions.decode(joint[j]))
        .collect::<Result<Vec<_>>>()?;
    let m = mean_action(&cfgs)?;
    Ok((m, actions.nearest(&m)))
}

fn max_component_change(a: &[AntennaConfig], b: &[AntennaConfig]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            x.as_array()
                .into_iter()
                .zip(y.as_array())
                .map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

pub fn meanfield_train<G: MarkovGame + ?Sized>(
    game: &G,
    cfg: &MeanFieldConfig,
) -> Result<MeanFieldPolicy> {
    cfg.validate()?;
    let n_agents = game.n_agents();
    if n_agents == 0 {
        return Err(Error::Empty("agents"));
    }
    let actions = game.actions();
    let n_actions = actions.len();
    let n_states = game.n_states();
    let aug_states = n_states
        .checked_mul(n_actions as u64)
        .ok_or_else(|| Error::InvalidConfig("augmented state space overflows".into()))?;
    let neighbors: Vec<Vec<usize>> = (0..n_agents).map(|k| game.neighbors(k)).collect();
    let init = game.initial_action();
    let sched = EpsilonSchedule::new(cfg.t_eps)?;

    let mut q: Vec<TabularQ> = (0..n_agents)
        .map(|_| TabularQ::new(aug_states, n_actions))
        .collect();
    let mut joint = vec![init; n_agents];
    let context = |joint: &[usize]| -> Result<Vec<(AntennaConfig, usize)>> {
        (0..n_agents)
            .map(|k| mean_context(actions, joint, &neighbors[k], init))
            .collect()
    };
    let mut ctx = context(&joint)?;
    let mut converged = false;
    let mut sweeps = 0;

    while sweeps < cfg.max_sweeps && !converged {
        for k in 0..n_agents {
            let m = ctx[k].1 as u64;
            let row = |s: u64| s * n_actions as u64 + m;
            let mut r = rng::stream(
                rng::derive_seed(cfg.seed, ((sweeps as u64) << 20) | k as u64),
                tags::MEANFIELD,
            );
            let mut local = joint.clone();
            let mut s = game.observe(k, &local)?;
            for n in 0..cfg.steps_per_sweep {
                let a = eps_greedy_select(&q[k].values(row(s)), sched.value(n), &mut r)?;
                local[k] = a;
                let out = game.transition(k, s, &local, &mut r)?;
                let a_next = argmax(&q[k].values(row(out.state))).unwrap_or(0);
                tabular_q_update(
                    &mut q[k],
                    row(s),
                    a,
                    out.reward,
                    row(out.state),
                    a_next,
                    cfg.learning_rate,
                    cfg.discount,
                )?;
                s = out.state;
            }
        }
        sweeps += 1;
        let next: Vec<usize> = (0..n_agents)
            .map(|k| {
                let s = game.observe(k, &joint)?;
                let m = ctx[k].1 as u64;
                Ok(q[k].greedy(s * n_actions as u64 + m).unwrap_or(joint[k]))
            })
            .collect::<Result<_>>()?;
        let next_ctx = context(&next)?;
        let prev_means: Vec<AntennaConfig> = ctx.iter().map(|c| c.0).collect();
        let next_means: Vec<AntennaConfig> = next_ctx.iter().map(|c| c.0).collect();
        converged = sweeps > 1 && max_component_change(&prev_means, &next_means) < cfg.tolerance_deg;
        if n_agents == 1 || neighbors.iter().all(Vec::is_empty) {
            converged = true;
        }
        joint = next;
        ctx = next_ctx;
    }

    Ok(MeanFieldPolicy {
        n_states,
        n_actions,
        neighbors,
        q,
        greedy_joint: joint,
        mean_actions: ctx.iter().map(|c| c.0).collect(),
        mean_indices: ctx.iter().map(|c| c.1).collect(),
        converged,
        sweeps,
    })
}

/// Lets the agents flagged in `free` play greedy responses until the joint
/// action stops changing (or `max_rounds` elapse). With `rng` the agents
/// observe noisy period reports instead of the noise-free state.
pub fn respond<G: MarkovGame + ?Sized>(
    game: &G,
    policy: &MeanFieldPolicy,
    start: &[usize],
    free: &[bool],
    max_rounds: usize,
    mut rng: Option<&mut SimRng>,
) -> Result<Vec<usize>> {
    let actions = game.actions();
    let mut joint = start.to_vec();
    for _ in 0..max_rounds {
        let mut next = joint.clone();
        for j in (0..joint.len()).filter(|&j| free[j]) {
            let s = match rng.as_deref_mut() {
                Some(r) => {
                    let s0 = game.observe(j, &joint)?;
                    game.transition(j, s0, &joint, r)?.state
                }
                None => game.observe(j, &joint)?,
            };
            let (_, m) = mean_context(actions, &joint, &policy.neighbors[j], game.initial_action())?;
            next[j] = policy
                .greedy(j, s, m)
                .unwrap_or(policy.greedy_joint[j]);
        }
        if next == joint {
            break;
        }
        joint = next;
    }
    Ok(joint)
}

/// Expected macro-tier interference at each typical UE of the target cell,
/// per target action, with the other agents at their equilibrium responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaTable {
    pub n_states: u64,
    /// `per_ue[u][a]` in mW.
    pub per_ue: Vec<Vec<f64>>,
    pub std_err: Vec<Vec<f64>>,
    pub beta0: Vec<f64>,
    pub initial_action: usize,
    pub equilibrium_mean_actions: Vec<AntennaConfig>,
}

impl BetaTable {
    /// The table is replicated across states: interference at a UE depends on
    /// the neighbours and the target's action, not on the target's own
    /// quantized SINR vector.
    pub fn get(&self, ue: usize, state: u64, action: usize) -> Result<f64> {
        if state >= self.n_states {
            return Err(Error::OutOfRange {
                what: "state",
                index: state,
                limit: self.n_states,
            });
        }
        let row = self.per_ue.get(ue).ok_or(Error::OutOfRange {
            what: "UE",
            index: ue as u64,
            limit: self.per_ue.len() as u64,
        })?;
        row.get(action).copied().ok_or(Error::OutOfRange {
            what: "action",
            index: action as u64,
            limit: row.len() as u64,
        })
    }

    pub fn state_independent(&self) -> bool {
        true
    }

    /// Uniform average over all (state, action) entries, per UE.
    pub fn mean_per_ue(&self) -> Vec<f64> {
        self.per_ue
            .iter()
            .map(|r| r.iter().sum::<f64>() / r.len() as f64)
            .collect()
    }
}

/// Monte Carlo estimate of the interference table. Agent 0 is the target.
pub fn estimate_beta(
    policy: &MeanFieldPolicy,
    world: &World<'_>,
    samples: usize,
    respond_rounds: usize,
    seed: u64,
) -> Result<BetaTable> {
    if samples == 0 {
        return Err(Error::InvalidConfig("samples_per_cell must be >= 1".into()));
    }
    let sc = world.scenario;
    let n_actions = sc.actions.len();
    let n_ues = sc.ues_per_agent;
    let mut free = vec![true; sc.agents.len()];
    free[0] = false;
    let mut r = rng::stream(seed, tags::BETA);
    let mut sum = vec![vec![0.0; n_actions]; n_ues];
    let mut sq = vec![vec![0.0; n_actions]; n_ues];
    for a in 0..n_actions {
        let mut start = policy.greedy_joint.clone();
        start[0] = a;
        for _ in 0..samples {
            let noisy = world.params.cqi_noise_db > 0.0;
            let joint = respond(
                world,
                policy,
                &start,
                &free,
                respond_rounds,
                noisy.then_some(&mut r),
            )?;
            for (u, (su, qu)) in sum.iter_mut().zip(sq.iter_mut()).enumerate() {
                let i = sc.macro_interference_mw(sc.receiver(0, u), &joint);
                su[a] += i;
                qu[a] += i * i;
            }
        }
    }
    let n = samples as f64;
    let per_ue: Vec<Vec<f64>> = sum
        .iter()
        .map(|r| r.iter().map(|s| s / n).collect())
        .collect();
    let std_err = sum
        .iter()
        .zip(&sq)
        .map(|(s, q)| {
            s.iter()
                .zip(q)
                .map(|(s, q)| {
                    if samples < 2 {
                        return 0.0;
                    }
                    let m = s / n;
                    let var = ((q - n * m * m) / (n - 1.0)).max(0.0);
                    (var / n).sqrt()
                })
                .collect()
        })
        .collect();
    let initial_action = sc.initial_action;
    let beta0 = per_ue.iter().map(|r| r[initial_action]).collect();
    Ok(BetaTable {
        n_states: world.n_states(),
        per_ue,
        std_err,
        beta0,
        initial_action,
        equilibrium_mean_actions: policy.mean_actions.clone(),
    })
}

/// `eta = mean_u var(I_small,u) / E[beta_u]^2` from per-UE small-cell
/// interference samples (population variance).
pub fn eta_from_samples(small_samples: &[Vec<f64>], beta_mean: &[f64]) -> Result<f64> {
    if small_samples.len() != beta_mean.len() {
        return Err(Error::LengthMismatch {
            expected: beta_mean.len(),
            got: small_samples.len(),
        });
    }
    if small_samples.is_empty() {
        return Err(Error::Empty("UEs"));
    }
    let mut acc = 0.0;
    for (s, &b) in small_samples.iter().zip(beta_mean) {
        if !(b > 0.0) {
            return Err(Error::UndefinedEta);
        }
        if s.is_empty() {
            return Err(Error::Empty("small-cell samples"));
        }
        let n = s.len() as f64;
        let m = s.iter().sum::<f64>() / n;
        let var = s.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        acc += var / (b * b);
    }
    Ok(acc / small_samples.len() as f64)
}

/// Relative variance of the small-cell tier seen by the target's UEs.
pub fn relative_variance(
    world: &World<'_>,
    small: &SmallCells,
    beta: &BetaTable,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::InvalidConfig("eta samples must be >= 1".into()));
    }
    let sc = world.scenario;
    let mut r = rng::stream(seed, tags::ETA);
    let mut per_ue = vec![Vec::with_capacity(samples); sc.ues_per_agent];
    for _ in 0..samples {
        let draw = small.draw(sc, &mut r)?;
        for (u, v) in per_ue.iter_mut().enumerate() {
            v.push(draw[sc.receiver(0, u)]);
        }
    }
    eta_from_samples(&per_ue, &beta.mean_per_ue())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub trials: usize,
    /// Largest componentwise gap between the empirical mean neighbour action
    /// and the equilibrium one, over agents (degrees).
    pub max_deviation_deg: f64,
    pub empirical_mean_actions: Vec<AntennaConfig>,
}

/// Replays greedy action selection with small cells active over `trials`
/// independent small-cell draws and compares the resulting mean actions with
/// the equilibrium.
pub fn check_equilibrium_stability(
    policy: &MeanFieldPolicy,
    world: &World<'_>,
    small: &SmallCells,
    trials: usize,
    respond_rounds: usize,
    seed: u64,
) -> Result<StabilityReport> {
    let sc = world.scenario;
    let n = sc.agents.len();
    let mut r = rng::stream(seed, tags::STABILITY);
    let mut acc = vec![[0.0; 3]; n];
    let free = vec![true; n];
    for _ in 0..trials {
        let small_mw = small.draw(sc, &mut r)?;
        let w = world.with_small(small_mw);
        let joint = respond(&w, policy, &policy.greedy_joint, &free, respond_rounds, None)?;
        for k in 0..n {
            let (m, _) = mean_context(&sc.actions, &joint, &policy.neighbors[k], sc.initial_action)?;
            for (a, v) in acc[k].iter_mut().zip(m.as_array()) {
                *a += v;
            }
        }
    }
    let empirical: Vec<AntennaConfig> = if trials == 0 {
        policy.mean_actions.clone()
    } else {
        acc.iter()
            .map(|a| AntennaConfig::from_array(a.map(|v| v / trials as f64)))
            .collect()
    };
    Ok(StabilityReport {
        trials,
        max_deviation_deg: max_component_change(&empirical, &policy.mean_actions),
        empirical_mean_actions: empirical,
    })
}
