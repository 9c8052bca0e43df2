//! Online single-agent learning for the target macrocell.
//!
//! The proposed learner approximates `q(s, a) = x(s, a)^T w` with one weight
//! per stream, where `x` predicts each stream's post-action SINR from the
//! initial report, the antenna-pattern change at the stream's estimated
//! cluster, and the offline interference table. The tabular learner is the
//! classical baseline.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanfield::BetaTable;
use crate::mdp::ActionSpace;
use crate::radio::{antenna_gain, AntennaConfig};
use crate::rng::SimRng;

/// `eps = 1/k` with `k = 1 + floor(n / t_eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub t_eps: usize,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self { t_eps: 10 }
    }
}

impl EpsilonSchedule {
    pub fn new(t_eps: usize) -> Result<Self> {
        if t_eps == 0 {
            return Err(Error::InvalidConfig("t_eps must be >= 1".into()));
        }
        Ok(Self { t_eps })
    }

    pub fn k(&self, n: usize) -> usize {
        1 + n / self.t_eps
    }

    pub fn value(&self, n: usize) -> f64 {
        1.0 / self.k(n) as f64
    }
}

pub fn epsilon_value(n: usize, sched: &EpsilonSchedule) -> f64 {
    sched.value(n)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// With probability `eps` a uniformly random action (which may coincide with
/// the greedy one), otherwise the greedy action.
pub fn eps_greedy_select<R: Rng + ?Sized>(q: &[f64], eps: f64, rng: &mut R) -> Result<usize> {
    let greedy = argmax(q).ok_or(Error::Empty("action set"))?;
    if eps > 0.0 && rng.random::<f64>() < eps {
        Ok(rng.random_range(0..q.len()))
    } else {
        Ok(greedy)
    }
}

/// Selection probabilities implied by [`eps_greedy_select`].
pub fn eps_greedy_distribution(q: &[f64], eps: f64) -> Result<Vec<f64>> {
    let greedy = argmax(q).ok_or(Error::Empty("action set"))?;
    let n = q.len() as f64;
    let mut p = vec![eps / n; q.len()];
    p[greedy] += 1.0 - eps;
    Ok(p)
}

/// Sparse Q table; rows that were never written read as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularQ {
    pub n_states: u64,
    pub n_actions: usize,
    pub rows: BTreeMap<u64, Vec<f64>>,
}

impl TabularQ {
    pub fn new(n_states: u64, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            rows: BTreeMap::new(),
        }
    }

    fn check(&self, s: u64, a: usize) -> Result<()> {
        if s >= self.n_states {
            return Err(Error::OutOfRange {
                what: "state",
                index: s,
                limit: self.n_states,
            });
        }
        if a >= self.n_actions {
            return Err(Error::OutOfRange {
                what: "action",
                index: a as u64,
                limit: self.n_actions as u64,
            });
        }
        Ok(())
    }

    pub fn get(&self, s: u64, a: usize) -> Result<f64> {
        self.check(s, a)?;
        Ok(self.rows.get(&s).map_or(0.0, |r| r[a]))
    }

    pub fn set(&mut self, s: u64, a: usize, v: f64) -> Result<()> {
        self.check(s, a)?;
        let n = self.n_actions;
        self.rows.entry(s).or_insert_with(|| vec![0.0; n])[a] = v;
        Ok(())
    }

    pub fn row(&self, s: u64) -> Option<&[f64]> {
        self.rows.get(&s).map(Vec::as_slice)
    }

    /// Row values with zeros for unseen states.
    pub fn values(&self, s: u64) -> Vec<f64> {
        self.row(s)
            .map_or_else(|| vec![0.0; self.n_actions], <[f64]>::to_vec)
    }

    pub fn greedy(&self, s: u64) -> Option<usize> {
        self.row(s).and_then(argmax)
    }
}

/// `Q(s,a) += mu * (r + alpha * Q(s',a') - Q(s,a))`.
#[allow(clippy::too_many_arguments)]
pub fn tabular_q_update(
    q: &mut TabularQ,
    s: u64,
    a: usize,
    r: f64,
    s_next: u64,
    a_next: usize,
    mu: f64,
    alpha: f64,
) -> Result<()> {
    let cur = q.get(s, a)?;
    let next = q.get(s_next, a_next)?;
    let target = r + alpha * next;
    if !target.is_finite() {
        return Err(Error::Diverged);
    }
    q.set(s, a, cur + mu * (target - cur))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by the weight sum unless it is tiny or negative.
    #[default]
    Guarded,
    /// Divide by the weight sum whenever its magnitude is not tiny.
    Signed,
    Off,
}

const NORM_GUARD: f64 = 1e-9;

pub fn q_hat(x: &[f64], w: &[f64]) -> Result<f64> {
    if x.len() != w.len() {
        return Err(Error::LengthMismatch {
            expected: w.len(),
            got: x.len(),
        });
    }
    Ok(x.iter().zip(w).map(|(a, b)| a * b).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearQ {
    pub w: Vec<f64>,
    pub mu: f64,
    pub alpha: f64,
    pub normalization: Normalization,
}

impl LinearQ {
    pub fn zeros(dim: usize, mu: f64, alpha: f64, normalization: Normalization) -> Self {
        Self {
            w: vec![0.0; dim],
            mu,
            alpha,
            normalization,
        }
    }

    pub fn q_hat(&self, x: &[f64]) -> Result<f64> {
        q_hat(x, &self.w)
    }

    /// One semi-gradient step toward `r + alpha * q_next`, then the
    /// configured normalization.
    pub fn update(&mut self, r: f64, x: &[f64], q_next: f64) -> Result<()> {
        self.w = update_w(
            &self.w,
            r,
            x,
            q_next,
            self.mu,
            self.alpha,
            self.normalization,
        )?;
        Ok(())
    }
}

pub fn update_w(
    w: &[f64],
    r: f64,
    x: &[f64],
    q_next: f64,
    mu: f64,
    alpha: f64,
    normalization: Normalization,
) -> Result<Vec<f64>> {
    let target = r + alpha * q_next;
    if !target.is_finite() {
        return Err(Error::Diverged);
    }
    let delta = target - q_hat(x, w)?;
    let mut out: Vec<f64> = w.iter().zip(x).map(|(wi, xi)| wi + mu * delta * xi).collect();
    let sum: f64 = out.iter().sum();
    let divide = match normalization {
        Normalization::Guarded => sum > NORM_GUARD,
        Normalization::Signed => sum.abs() > NORM_GUARD,
        Normalization::Off => false,
    };
    if divide {
        out.iter_mut().for_each(|v| *v /= sum);
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged);
    }
    Ok(out)
}

/// Everything needed to evaluate features for any (state, action) without
/// touching the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureContext {
    /// Quantized SINR per stream at the initial configuration (dB).
    pub initial_reports_db: Vec<f64>,
    pub initial_config: AntennaConfig,
    pub actions: ActionSpace,
    pub beta: BetaTable,
    /// Estimated (azimuth offset, elevation) of each UE's cluster centre.
    pub ue_angles_deg: Vec<Option<[f64; 2]>>,
    pub streams_per_ue: usize,
    pub noise_mw: f64,
}

impl FeatureContext {
    pub fn dim(&self) -> usize {
        self.initial_reports_db.len()
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.ue_angles_deg.len() * self.streams_per_ue;
        if self.dim() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: self.dim(),
            });
        }
        if self.beta.per_ue.len() != self.ue_angles_deg.len() {
            return Err(Error::LengthMismatch {
                expected: self.ue_angles_deg.len(),
                got: self.beta.per_ue.len(),
            });
        }
        Ok(())
    }

    /// Interference change in dB for UE `u` when the target plays `a`.
    pub fn delta_beta_db(&self, u: usize, state: u64, action: usize) -> Result<f64> {
        let b = self.beta.get(u, state, action)?;
        let b0 = self.beta.beta0[u];
        Ok(10.0 * ((b + self.noise_mw) / (b0 + self.noise_mw)).log10())
    }

    /// Pattern gain change in dB at UE `u`'s estimated cluster.
    pub fn delta_gain_db(&self, u: usize, action: usize) -> Result<f64> {
        let [phi, theta] = self.ue_angles_deg[u].ok_or(Error::UnlocatedUe(u))?;
        let cfg = self.actions.decode(action)?;
        Ok(antenna_gain(phi, theta, &cfg)? - antenna_gain(phi, theta, &self.initial_config)?)
    }
}

pub fn features(state: u64, action: usize, ctx: &FeatureContext) -> Result<Vec<f64>> {
    let v = ctx.streams_per_ue;
    let mut x = Vec::with_capacity(ctx.dim());
    for (i, &g0) in ctx.initial_reports_db.iter().enumerate() {
        let u = i / v;
        x.push(g0 + ctx.delta_gain_db(u, action)? - ctx.delta_beta_db(u, state, action)?);
    }
    Ok(x)
}

/// One decision period as seen by the target cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Period {
    pub state: u64,
    pub reward: f64,
    /// Unquantized SINR per stream (dB).
    pub sinr_db: Vec<f64>,
    /// Period-averaged quantized reports per stream (dB).
    pub reports_db: Vec<f64>,
}

/// The network from the point of view of the single learning cell.
pub trait TargetEnv {
    fn n_states(&self) -> u64;
    fn n_actions(&self) -> usize;
    fn initial_action(&self) -> usize;
    /// Applies `action` for one period (decision step `n`).
    fn step(&mut self, action: usize, n: usize, rng: &mut SimRng) -> Result<Period>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineHyper {
    pub trials: usize,
    pub mu: f64,
    pub alpha: f64,
    pub t_eps: usize,
    pub normalization: Normalization,
}

impl Default for OnlineHyper {
    fn default() -> Self {
        Self {
            trials: 200,
            mu: 0.8,
            alpha: 0.9,
            t_eps: 10,
            normalization: Normalization::Guarded,
        }
    }
}

impl OnlineHyper {
    pub fn validate(&self) -> Result<()> {
        EpsilonSchedule::new(self.t_eps)?;
        if !(self.alpha >= 0.0 && self.alpha < 1.0) || !(self.mu >= 0.0) {
            return Err(Error::InvalidConfig(
                "online mu must be >= 0 and alpha in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Trained weights plus enough context to answer policy queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPolicy {
    pub q: LinearQ,
    pub trials: usize,
    pub rewards: Vec<f64>,
}

impl LinearPolicy {
    /// `argmax_a x(s,a)^T w`, or the initial action if the learner never ran.
    pub fn greedy(&self, state: u64, ctx: &FeatureContext) -> Result<usize> {
        if self.trials == 0 {
            return ctx.actions.encode(&ctx.initial_config);
        }
        let q = action_values(state, ctx, &self.q.w)?;
        argmax(&q).ok_or(Error::Empty("action set"))
    }

    pub fn policy_map(&self, n_states: u64, ctx: &FeatureContext) -> Result<Vec<usize>> {
        // Features only see the state through the interference table; when
        // that table is state-independent one evaluation covers every state.
        if self.trials == 0 || ctx.beta.state_independent() {
            let a = self.greedy(0, ctx)?;
            return Ok(vec![a; n_states as usize]);
        }
        (0..n_states).map(|s| self.greedy(s, ctx)).collect()
    }
}

pub fn action_values(state: u64, ctx: &FeatureContext, w: &[f64]) -> Result<Vec<f64>> {
    (0..ctx.actions.len())
        .map(|a| q_hat(&features(state, a, ctx)?, w))
        .collect()
}

fn fault(completed: usize, e: Error) -> Error {
    Error::EnvironmentFault {
        completed,
        reason: e.to_string(),
    }
}

/// Online loop for the proposed learner: observe the initial configuration,
/// then `trials` TD steps with epsilon-greedy exploration over `x(s,a)^T w`.
pub fn run_online_training(
    env: &mut dyn TargetEnv,
    ctx: &FeatureContext,
    hyper: &OnlineHyper,
    rng: &mut SimRng,
) -> Result<LinearPolicy> {
    hyper.validate()?;
    ctx.validate()?;
    let sched = EpsilonSchedule::new(hyper.t_eps)?;
    let mut lq = LinearQ::zeros(ctx.dim(), hyper.mu, hyper.alpha, hyper.normalization);
    let mut rewards = Vec::with_capacity(hyper.trials);
    if hyper.trials == 0 {
        return Ok(LinearPolicy {
            q: lq,
            trials: 0,
            rewards,
        });
    }
    let start = env.step(env.initial_action(), 0, rng).map_err(|e| fault(0, e))?;
    let mut s = start.state;
    let mut a = eps_greedy_select(&action_values(s, ctx, &lq.w)?, sched.value(0), rng)?;
    for n in 0..hyper.trials {
        let p = env.step(a, n + 1, rng).map_err(|e| fault(n, e))?;
        let q_next = action_values(p.state, ctx, &lq.w)?;
        let a_next = eps_greedy_select(&q_next, sched.value(n + 1), rng)?;
        let x = features(s, a, ctx)?;
        lq.update(p.reward, &x, q_next[a_next])
            .map_err(|_| Error::TrainingDiverged { step: n })?;
        rewards.push(p.reward);
        s = p.state;
        a = a_next;
    }
    Ok(LinearPolicy {
        q: lq,
        trials: hyper.trials,
        rewards,
    })
}

/// Tabular learner with the same budget and schedule. Unseen states fall
/// back to the initial action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub q: TabularQ,
    pub initial_action: usize,
}

impl TabularPolicy {
    pub fn greedy(&self, state: u64) -> usize {
        self.q.greedy(state).unwrap_or(self.initial_action)
    }
}

pub fn run_tabular_training(
    env: &mut dyn TargetEnv,
    hyper: &OnlineHyper,
    rng: &mut SimRng,
) -> Result<TabularPolicy> {
    hyper.validate()?;
    let sched = EpsilonSchedule::new(hyper.t_eps)?;
    let mut q = TabularQ::new(env.n_states(), env.n_actions());
    let initial_action = env.initial_action();
    if hyper.trials > 0 {
        let start = env.step(initial_action, 0, rng).map_err(|e| fault(0, e))?;
        let mut s = start.state;
        let mut a = eps_greedy_select(&q.values(s), sched.value(0), rng)?;
        for n in 0..hyper.trials {
            let p = env.step(a, n + 1, rng).map_err(|e| fault(n, e))?;
            let a_next = eps_greedy_select(&q.values(p.state), sched.value(n + 1), rng)?;
            tabular_q_update(&mut q, s, a, p.reward, p.state, a_next, hyper.mu, hyper.alpha)
                .map_err(|_| Error::TrainingDiverged { step: n })?;
            s = p.state;
            a = a_next;
        }
    }
    Ok(TabularPolicy { q, initial_action })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compactness {
    pub histogram: Vec<usize>,
    pub band_start: usize,
    pub band_width: usize,
    pub covered: usize,
    pub total: usize,
}

/// Action histogram and the narrowest contiguous action-index band holding at
/// least `fraction` of all states. Ties go to the lowest starting index.
pub fn policy_compactness(map: &[usize], n_actions: usize, fraction: f64) -> Result<Compactness> {
    if map.is_empty() {
        return Err(Error::Empty("policy map"));
    }
    let mut histogram = vec![0usize; n_actions];
    for &a in map {
        if a >= n_actions {
            return Err(Error::OutOfRange {
                what: "action",
                index: a as u64,
                limit: n_actions as u64,
            });
        }
        histogram[a] += 1;
    }
    let need = (fraction * map.len() as f64).ceil() as usize;
    let mut best = (0, n_actions, map.len());
    let mut sum = 0;
    let mut lo = 0;
    for hi in 0..n_actions {
        sum += histogram[hi];
        while lo < hi && sum - histogram[lo] >= need {
            sum -= histogram[lo];
            lo += 1;
        }
        if sum >= need && hi - lo + 1 < best.1 {
            best = (lo, hi - lo + 1, sum);
        }
    }
    Ok(Compactness {
        histogram,
        band_start: best.0,
        band_width: best.1,
        covered: best.2,
        total: map.len(),
    })
}
