//! SINR quantization, state/action index codecs and the ACK-based reward.
//!
//! State index convention: the first stream is the most significant digit in
//! base M. Action index convention: horizontal beamwidth varies fastest, then
//! vertical beamwidth, then tilt.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radio::AntennaConfig;

const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StateQuantizer {
    pub min_db: f64,
    pub max_db: f64,
    pub step_db: f64,
}

impl Default for StateQuantizer {
    fn default() -> Self {
        Self {
            min_db: 0.0,
            max_db: 12.0,
            step_db: 2.0,
        }
    }
}

impl StateQuantizer {
    pub fn new(min_db: f64, max_db: f64, step_db: f64) -> Result<Self> {
        let q = Self {
            min_db,
            max_db,
            step_db,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_db > self.min_db) || !(self.step_db > 0.0) {
            return Err(Error::InvalidConfig(
                "quantizer needs max > min and step > 0".into(),
            ));
        }
        let span = (self.max_db - self.min_db) / self.step_db;
        if (span - span.round()).abs() > GRID_TOL {
            return Err(Error::InvalidConfig(
                "quantizer span must be a whole number of steps".into(),
            ));
        }
        Ok(())
    }

    /// Number of levels M.
    pub fn levels(&self) -> usize {
        ((self.max_db - self.min_db) / self.step_db).round() as usize + 1
    }

    /// Clamp, then round to the nearest level (ties up).
    pub fn level(&self, gamma_db: f64) -> usize {
        let g = gamma_db.clamp(self.min_db, self.max_db);
        let l = ((g - self.min_db) / self.step_db + 0.5).floor() as usize;
        l.min(self.levels() - 1)
    }

    pub fn value(&self, level: usize) -> f64 {
        self.min_db + level as f64 * self.step_db
    }

    /// The CQI-style report: γ snapped to its level value.
    pub fn quantize(&self, gamma_db: f64) -> f64 {
        self.value(self.level(gamma_db))
    }
}

pub fn quantize_sinr(gamma_db: f64, q: &StateQuantizer) -> usize {
    q.level(gamma_db)
}

/// Bijection between per-stream levels and a flat state index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateCodec {
    pub levels: usize,
    pub streams: usize,
}

impl StateCodec {
    pub fn new(levels: usize, streams: usize) -> Result<Self> {
        if levels < 1 || streams < 1 {
            return Err(Error::InvalidConfig("state codec needs M >= 1 and N >= 1".into()));
        }
        let ok = (levels as u64).checked_pow(streams as u32).is_some();
        if !ok {
            return Err(Error::InvalidConfig("state space does not fit in u64".into()));
        }
        Ok(Self { levels, streams })
    }

    pub fn n_states(&self) -> u64 {
        (self.levels as u64).pow(self.streams as u32)
    }

    pub fn encode(&self, bins: &[usize]) -> Result<u64> {
        if bins.len() != self.streams {
            return Err(Error::LengthMismatch {
                expected: self.streams,
                got: bins.len(),
            });
        }
        let m = self.levels as u64;
        bins.iter().try_fold(0u64, |acc, &b| {
            if b >= self.levels {
                return Err(Error::OutOfRange {
                    what: "state level",
                    index: b as u64,
                    limit: m,
                });
            }
            Ok(acc * m + b as u64)
        })
    }

    pub fn decode(&self, index: u64) -> Result<Vec<usize>> {
        let n = self.n_states();
        if index >= n {
            return Err(Error::OutOfRange {
                what: "state",
                index,
                limit: n,
            });
        }
        let m = self.levels as u64;
        let mut bins = vec![0; self.streams];
        let mut rest = index;
        for b in bins.iter_mut().rev() {
            *b = (rest % m) as usize;
            rest /= m;
        }
        Ok(bins)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSpace {
    pub tilts_deg: Vec<f64>,
    pub v_beamwidths_deg: Vec<f64>,
    pub h_beamwidths_deg: Vec<f64>,
}

impl Default for ActionSpace {
    fn default() -> Self {
        Self::paper()
    }
}

fn axis_index(levels: &[f64], value: f64, axis: &'static str) -> Result<usize> {
    levels
        .iter()
        .position(|&l| (l - value).abs() <= GRID_TOL)
        .ok_or(Error::OffGrid { axis, value })
}

fn nearest_index(levels: &[f64], value: f64) -> usize {
    let mut best = 0;
    for (i, &l) in levels.iter().enumerate() {
        if (l - value).abs() < (levels[best] - value).abs() {
            best = i;
        }
    }
    best
}

impl ActionSpace {
    /// The full 6 x 5 x 6 grid.
    pub fn paper() -> Self {
        Self {
            tilts_deg: vec![0.0, 3.0, 6.0, 9.0, 12.0, 15.0],
            v_beamwidths_deg: vec![4.4, 6.8, 9.4, 10.0, 13.5],
            h_beamwidths_deg: vec![45.0, 55.0, 65.0, 70.0, 75.0, 85.0],
        }
    }

    /// A 2 x 2 x 3 grid that still contains the initial configuration.
    pub fn desk() -> Self {
        Self {
            tilts_deg: vec![9.0, 15.0],
            v_beamwidths_deg: vec![10.0, 13.5],
            h_beamwidths_deg: vec![45.0, 70.0, 85.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, axis) in [
            ("tilt", &self.tilts_deg),
            ("vertical beamwidth", &self.v_beamwidths_deg),
            ("horizontal beamwidth", &self.h_beamwidths_deg),
        ] {
            if axis.is_empty() {
                return Err(Error::InvalidConfig(format!("{name} grid is empty")));
            }
            if axis.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidConfig(format!(
                    "{name} levels must be strictly increasing"
                )));
            }
        }
        if self.v_beamwidths_deg[0] <= 0.0 || self.h_beamwidths_deg[0] <= 0.0 {
            return Err(Error::InvalidConfig("beamwidths must be > 0".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tilts_deg.len() * self.v_beamwidths_deg.len() * self.h_beamwidths_deg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn encode(&self, cfg: &AntennaConfig) -> Result<usize> {
        let t = axis_index(&self.tilts_deg, cfg.tilt_deg, "tilt")?;
        let v = axis_index(&self.v_beamwidths_deg, cfg.v_beamwidth_deg, "vertical beamwidth")?;
        let h = axis_index(
            &self.h_beamwidths_deg,
            cfg.h_beamwidth_deg,
            "horizontal beamwidth",
        )?;
        Ok(self.index_of(t, v, h))
    }

    fn index_of(&self, t: usize, v: usize, h: usize) -> usize {
        let nv = self.v_beamwidths_deg.len();
        let nh = self.h_beamwidths_deg.len();
        t * nv * nh + v * nh + h
    }

    pub fn decode(&self, index: usize) -> Result<AntennaConfig> {
        if index >= self.len() {
            return Err(Error::OutOfRange {
                what: "action",
                index: index as u64,
                limit: self.len() as u64,
            });
        }
        let nv = self.v_beamwidths_deg.len();
        let nh = self.h_beamwidths_deg.len();
        Ok(AntennaConfig::new(
            self.tilts_deg[index / (nv * nh)],
            self.v_beamwidths_deg[(index / nh) % nv],
            self.h_beamwidths_deg[index % nh],
        ))
    }

    /// Snaps an arbitrary (possibly off-grid) configuration to the nearest grid
    /// point, axis by axis. Ties go to the lower level.
    pub fn nearest(&self, cfg: &AntennaConfig) -> usize {
        self.index_of(
            nearest_index(&self.tilts_deg, cfg.tilt_deg),
            nearest_index(&self.v_beamwidths_deg, cfg.v_beamwidth_deg),
            nearest_index(&self.h_beamwidths_deg, cfg.h_beamwidth_deg),
        )
    }

    pub fn configs(&self) -> Vec<AntennaConfig> {
        (0..self.len())
            .map(|i| self.decode(i).expect("index in range"))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `c` as given.
    #[default]
    Plain,
    /// `c = lambda / (alpha^n * 10 log10 2)`, which turns the reward sum into
    /// the discounted weighted sum-rate exactly.
    RateEquivalent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Per-stream weights. Empty means 1 for every stream.
    pub weights: Vec<f64>,
    pub weight_mode: WeightMode,
    pub penalty: f64,
    pub discount: f64,
    pub gamma_min_db: f64,
    pub horizon: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            weights: Vec::new(),
            weight_mode: WeightMode::Plain,
            penalty: -100.0,
            discount: 0.9,
            gamma_min_db: 2.0,
            horizon: 50,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::InvalidConfig("discount must lie in (0, 1)".into()));
        }
        if !(self.penalty < 0.0) {
            return Err(Error::InvalidConfig("penalty must be < 0".into()));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("reward weight"));
        }
        Ok(())
    }

    /// Effective weights for `streams` streams at decision step `n`.
    pub fn stream_weights(&self, streams: usize, n: usize) -> Result<Vec<f64>> {
        let base = if self.weights.is_empty() {
            vec![1.0; streams]
        } else if self.weights.len() == streams {
            self.weights.clone()
        } else {
            return Err(Error::LengthMismatch {
                expected: streams,
                got: self.weights.len(),
            });
        };
        Ok(match self.weight_mode {
            WeightMode::Plain => base,
            WeightMode::RateEquivalent => {
                let scale = self.discount.powi(n as i32) * 10.0 * 2f64.log10();
                base.into_iter().map(|l| l / scale).collect()
            }
        })
    }

    pub fn ack(&self, gamma_db: f64) -> bool {
        gamma_db >= self.gamma_min_db
    }

    /// Reward for one period given unquantized SINRs and their quantized
    /// reports. ACK is decided on the unquantized value.
    pub fn period_reward(&self, gamma_db: &[f64], gamma_q_db: &[f64], n: usize) -> Result<f64> {
        let acks: Vec<bool> = gamma_db.iter().map(|&g| self.ack(g)).collect();
        let w = self.stream_weights(gamma_q_db.len(), n)?;
        immediate_reward(gamma_q_db, &acks, &w, self.penalty)
    }
}

/// Per-stream reward on ACK: `10 log10(1 + 10^(γ/10))`.
pub fn rate_term(gamma_db: f64) -> f64 {
    10.0 * (1.0 + 10f64.powf(gamma_db / 10.0)).log10()
}

pub fn immediate_reward(
    gamma_q_db: &[f64],
    acks: &[bool],
    weights: &[f64],
    penalty: f64,
) -> Result<f64> {
    if acks.len() != gamma_q_db.len() {
        return Err(Error::LengthMismatch {
            expected: gamma_q_db.len(),
            got: acks.len(),
        });
    }
    if weights.len() != gamma_q_db.len() {
        return Err(Error::LengthMismatch {
            expected: gamma_q_db.len(),
            got: weights.len(),
        });
    }
    Ok(gamma_q_db
        .iter()
        .zip(acks)
        .zip(weights)
        .map(|((&g, &ack), &c)| c * if ack { rate_term(g) } else { penalty })
        .sum())
}

/// Averages each stream's per-TTI reports (dB) over the period.
pub fn period_average(samples: &[Vec<f64>]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Empty("period samples"));
    }
    samples
        .iter()
        .map(|s| {
            if s.is_empty() {
                Err(Error::Empty("period samples"))
            } else {
                Ok(s.iter().sum::<f64>() / s.len() as f64)
            }
        })
        .collect()
}

/// Averages per-stream reports over the period, then quantizes and encodes.
pub fn period_state(samples: &[Vec<f64>], q: &StateQuantizer, codec: &StateCodec) -> Result<u64> {
    let avg = period_average(samples)?;
    let bins: Vec<usize> = avg.iter().map(|&g| q.level(g)).collect();
    codec.encode(&bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn quantizer_examples() {
        let q = StateQuantizer::default();
        assert_eq!(q.levels(), 7);
        assert_eq!(quantize_sinr(-3.0, &q), 0);
        assert_eq!(quantize_sinr(13.0, &q), 6);
        assert_eq!(quantize_sinr(5.2, &q), 3);
        assert_eq!(q.value(3), 6.0);
        // Exact midpoint rounds up.
        assert_eq!(quantize_sinr(5.0, &q), 3);
        assert_eq!(quantize_sinr(4.999, &q), 2);
    }

    #[test]
    fn quantizer_rejects_fractional_span() {
        assert!(StateQuantizer::new(0.0, 11.0, 2.0).is_err());
        assert!(StateQuantizer::new(0.0, 0.0, 2.0).is_err());
        assert!(StateQuantizer::new(0.0, 12.0, 0.0).is_err());
    }

    #[test]
    fn state_anchors() {
        let c = StateCodec::new(7, 5).unwrap();
        assert_eq!(c.n_states(), 16807);
        assert_eq!(c.encode(&[0, 0, 0, 0, 0]).unwrap(), 0);
        assert_eq!(c.encode(&[0, 0, 0, 0, 1]).unwrap(), 1);
        assert_eq!(c.encode(&[6; 5]).unwrap(), 16806);
        assert!(matches!(c.encode(&[7, 0, 0, 0, 0]), Err(Error::OutOfRange { .. })));
        assert!(matches!(c.decode(16807), Err(Error::OutOfRange { .. })));
        assert!(matches!(c.encode(&[0; 4]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn action_anchors() {
        let a = ActionSpace::paper();
        assert_eq!(a.len(), 180);
        assert_eq!(a.encode(&AntennaConfig::new(0.0, 4.4, 45.0)).unwrap(), 0);
        assert_eq!(a.encode(&AntennaConfig::new(0.0, 6.8, 45.0)).unwrap(), 6);
        assert_eq!(a.encode(&AntennaConfig::new(15.0, 13.5, 85.0)).unwrap(), 179);
        assert!(matches!(
            a.encode(&AntennaConfig::new(1.0, 4.4, 45.0)),
            Err(Error::OffGrid { .. })
        ));
        for i in 0..a.len() {
            assert_eq!(a.encode(&a.decode(i).unwrap()).unwrap(), i);
        }
        assert!(a.decode(180).is_err());
    }

    #[test]
    fn desk_grid_contains_initial() {
        let a = ActionSpace::desk();
        assert_eq!(a.len(), 12);
        assert!(a.encode(&AntennaConfig::initial()).is_ok());
        assert!(ActionSpace::paper().encode(&AntennaConfig::initial()).is_ok());
    }

    #[test]
    fn nearest_grid_point() {
        let a = ActionSpace::paper();
        let i = a.nearest(&AntennaConfig::new(3.0, 4.4, 45.0));
        assert_eq!(a.decode(i).unwrap(), AntennaConfig::new(3.0, 4.4, 45.0));
        // 4.5 is equidistant from 3 and 6: lower level.
        let i = a.nearest(&AntennaConfig::new(4.5, 9.9, 67.4));
        assert_eq!(a.decode(i).unwrap(), AntennaConfig::new(3.0, 10.0, 65.0));
    }

    #[test]
    fn reward_examples() {
        let r = immediate_reward(&[0.0; 5], &[true; 5], &[1.0; 5], -100.0).unwrap();
        assert!((r - 5.0 * 10.0 * 2f64.log10()).abs() < 1e-12);
        assert!((r - 15.051).abs() < 1e-3);
        let r = immediate_reward(&[6.0], &[false], &[1.0], -100.0).unwrap();
        assert_eq!(r, -100.0);
        let r = immediate_reward(&[12.0], &[true], &[1.0], -100.0).unwrap();
        assert!((r - 12.266).abs() < 1e-3);
    }

    #[test]
    fn ack_uses_unquantized_value() {
        let rc = RewardConfig::default();
        // 1.5 dB reports as 2 dB but stays below the 2 dB threshold.
        let r = rc.period_reward(&[1.5], &[2.0], 0).unwrap();
        assert_eq!(r, -100.0);
        let r = rc.period_reward(&[2.0], &[2.0], 0).unwrap();
        assert!((r - rate_term(2.0)).abs() < 1e-12);
    }

    #[test]
    fn rate_equivalent_weights() {
        let rc = RewardConfig {
            weight_mode: WeightMode::RateEquivalent,
            ..Default::default()
        };
        let w = rc.stream_weights(1, 2).unwrap();
        let expect = 1.0 / (0.81 * 10.0 * 2f64.log10());
        assert!((w[0] - expect).abs() < 1e-12);
        // c * f_r * alpha^n recovers log2(1 + rho).
        let g: f64 = 7.0;
        let rho = 10f64.powf(g / 10.0);
        let got = w[0] * rate_term(g) * 0.81;
        assert!((got - (1.0 + rho).log2()).abs() < 1e-12);
    }

    #[test]
    fn period_state_examples() {
        let q = StateQuantizer::default();
        let c = StateCodec::new(7, 1).unwrap();
        assert_eq!(period_state(&[vec![4.0, 8.0]], &q, &c).unwrap(), 3);
        assert_eq!(period_state(&[vec![7.3; 9]], &q, &c).unwrap(), q.level(7.3) as u64);
        assert_eq!(period_state(&[], &q, &c), Err(Error::Empty("period samples")));
        assert_eq!(period_state(&[vec![]], &q, &c), Err(Error::Empty("period samples")));
    }

    #[test]
    fn period_state_matches_direct_averaging() {
        let q = StateQuantizer::default();
        let c = StateCodec::new(7, 3).unwrap();
        let mut r = crate::rng::stream(1, 77);
        for _ in 0..200 {
            let samples: Vec<Vec<f64>> = (0..3)
                .map(|_| {
                    let n = r.random_range(1..60);
                    (0..n).map(|_| q.quantize(r.random_range(-5.0..16.0))).collect()
                })
                .collect();
            // Oracle: running sums, then the index built by Horner's rule.
            let mut idx = 0u64;
            for s in &samples {
                let mut acc = 0.0;
                for v in s {
                    acc += v;
                }
                let mean = acc / s.len() as f64;
                let clamped = mean.max(0.0).min(12.0);
                let lvl = ((clamped / 2.0) + 0.5).floor() as u64;
                idx = idx * 7 + lvl.min(6);
            }
            assert_eq!(period_state(&samples, &q, &c).unwrap(), idx);
        }
    }

    proptest! {
        #[test]
        fn state_codec_round_trip(m in 1usize..9, n in 1usize..6, seed in any::<u64>()) {
            let c = StateCodec::new(m, n).unwrap();
            let idx = seed % c.n_states();
            let bins = c.decode(idx).unwrap();
            prop_assert_eq!(c.encode(&bins).unwrap(), idx);
            prop_assert!(bins.iter().all(|&b| b < m));
        }

        #[test]
        fn sizes_follow_grid(m in 1usize..8, n in 1usize..5,
                             nt in 1usize..7, nv in 1usize..6, nh in 1usize..7) {
            let c = StateCodec::new(m, n).unwrap();
            prop_assert_eq!(c.n_states(), (m as u64).pow(n as u32));
            let a = ActionSpace {
                tilts_deg: (0..nt).map(|i| i as f64).collect(),
                v_beamwidths_deg: (1..=nv).map(|i| i as f64).collect(),
                h_beamwidths_deg: (1..=nh).map(|i| 10.0 * i as f64).collect(),
            };
            prop_assert_eq!(a.len(), nt * nv * nh);
            for i in 0..a.len() {
                prop_assert_eq!(a.encode(&a.decode(i).unwrap()).unwrap(), i);
            }
        }

        #[test]
        fn rate_term_increasing(a in -20.0f64..40.0, d in 1e-6f64..10.0) {
            prop_assert!(rate_term(a + d) > rate_term(a));
        }

        #[test]
        fn all_ack_reward_is_log_product(g in proptest::collection::vec(-10.0f64..30.0, 1..6)) {
            let n = g.len();
            let r = immediate_reward(&g, &vec![true; n], &vec![1.0; n], -100.0).unwrap();
            let prod: f64 = g.iter().map(|x| 1.0 + 10f64.powf(x / 10.0)).product();
            prop_assert!((r - 10.0 * prod.log10()).abs() < 1e-9);
        }

        #[test]
        fn reward_linear_in_weights(g in proptest::collection::vec(-10.0f64..30.0, 3),
                                    acks in proptest::collection::vec(any::<bool>(), 3),
                                    i in 0usize..3, k in 0.0f64..5.0) {
            let w1 = vec![1.0; 3];
            let mut w2 = w1.clone();
            w2[i] = k;
            let r1 = immediate_reward(&g, &acks, &w1, -100.0).unwrap();
            let r2 = immediate_reward(&g, &acks, &w2, -100.0).unwrap();
            let term = if acks[i] { rate_term(g[i]) } else { -100.0 };
            prop_assert!((r2 - (r1 + (k - 1.0) * term)).abs() < 1e-9);
        }
    }
}
