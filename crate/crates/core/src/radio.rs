//! Antenna patterns, path loss, shadowing and SINR composition.
//!
//! Power arithmetic is carried out in linear mW; dB only appears at the
//! interfaces. The 3-D pattern gain is kept separate from the element's
//! maximum gain so that pattern differences between two configurations can be
//! taken directly.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ue_geometry, CellId, Deployment};

pub const HORIZONTAL_FLOOR_DB: f64 = 25.0;
pub const VERTICAL_FLOOR_DB: f64 = 20.0;
pub const PATTERN_FLOOR_DB: f64 = 25.0;

#[inline]
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[inline]
pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// One macrocell antenna setting: downtilt plus vertical and horizontal
/// half-power beamwidths, all in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AntennaConfig {
    pub tilt_deg: f64,
    pub v_beamwidth_deg: f64,
    pub h_beamwidth_deg: f64,
}

impl AntennaConfig {
    pub const fn new(tilt_deg: f64, v_beamwidth_deg: f64, h_beamwidth_deg: f64) -> Self {
        Self {
            tilt_deg,
            v_beamwidth_deg,
            h_beamwidth_deg,
        }
    }

    /// Factory setting applied before any tuning.
    pub const fn initial() -> Self {
        Self::new(15.0, 10.0, 70.0)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.tilt_deg, self.v_beamwidth_deg, self.h_beamwidth_deg]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioParams {
    pub macro_tx_power_dbm: f64,
    pub pico_tx_power_dbm: f64,
    pub macro_max_gain_dbi: f64,
    pub macro_shadow_sigma_db: f64,
    pub pico_shadow_sigma_db: f64,
    pub noise_power_dbm: f64,
    pub gamma_min_db: f64,
    /// Spatial streams per UE. Single-antenna UEs give one stream.
    pub streams_per_ue: usize,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            macro_tx_power_dbm: 46.0,
            pico_tx_power_dbm: 24.0,
            macro_max_gain_dbi: 15.0,
            macro_shadow_sigma_db: 10.0,
            pico_shadow_sigma_db: 6.0,
            noise_power_dbm: -104.0,
            gamma_min_db: 2.0,
            streams_per_ue: 1,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        if self.macro_shadow_sigma_db < 0.0 || self.pico_shadow_sigma_db < 0.0 {
            return Err(Error::InvalidConfig("shadowing sigma must be >= 0".into()));
        }
        if self.streams_per_ue == 0 {
            return Err(Error::InvalidConfig("streams_per_ue must be >= 1".into()));
        }
        Ok(())
    }

    pub fn noise_mw(&self) -> f64 {
        db_to_linear(self.noise_power_dbm)
    }
}

/// Horizontal pattern attenuation in dB (always <= 0).
pub fn horizontal_gain(phi_deg: f64, phi_3db_deg: f64) -> Result<f64> {
    if !(phi_3db_deg > 0.0) {
        return Err(Error::InvalidBeamwidth(phi_3db_deg));
    }
    let r = phi_deg / phi_3db_deg;
    Ok(-(12.0 * r * r).min(HORIZONTAL_FLOOR_DB))
}

/// Vertical pattern attenuation in dB (always <= 0).
pub fn vertical_gain(theta_deg: f64, tilt_deg: f64, theta_3db_deg: f64) -> Result<f64> {
    if !(theta_3db_deg > 0.0) {
        return Err(Error::InvalidBeamwidth(theta_3db_deg));
    }
    let r = (theta_deg - tilt_deg) / theta_3db_deg;
    Ok(-(12.0 * r * r).min(VERTICAL_FLOOR_DB))
}

/// Combined 3-D pattern gain in dB, in `[-25, 0]`. The element maximum gain is
/// not included.
pub fn antenna_gain(phi_deg: f64, theta_deg: f64, cfg: &AntennaConfig) -> Result<f64> {
    let h = horizontal_gain(phi_deg, cfg.h_beamwidth_deg)?;
    let v = vertical_gain(theta_deg, cfg.tilt_deg, cfg.v_beamwidth_deg)?;
    Ok(-(-(h + v)).min(PATTERN_FLOOR_DB))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tier {
    Macro,
    Pico,
}

/// Distance-dependent path loss in dB. Macro distances are in km, pico
/// distances in m.
pub fn path_loss(tier: Tier, distance: f64) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::DegenerateLink);
    }
    Ok(match tier {
        Tier::Macro => 128.1 + 37.6 * distance.log10(),
        Tier::Pico => 38.0 + 30.0 * distance.log10(),
    })
}

/// Frozen log-normal shadowing realization, in dB, per (cell, UE) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowMap {
    /// `macro_db[sector][ue]`
    pub macro_db: Vec<Vec<f64>>,
    /// `pico_db[pico][ue]`
    pub pico_db: Vec<Vec<f64>>,
}

impl ShadowMap {
    pub fn zero(n_sectors: usize, n_picos: usize, n_ues: usize) -> Self {
        Self {
            macro_db: vec![vec![0.0; n_ues]; n_sectors],
            pico_db: vec![vec![0.0; n_ues]; n_picos],
        }
    }

    pub fn sample<R: Rng + ?Sized>(
        n_sectors: usize,
        n_picos: usize,
        n_ues: usize,
        radio: &RadioParams,
        rng: &mut R,
    ) -> Result<Self> {
        let draw = |sigma: f64, rng: &mut R| -> Result<Vec<f64>> {
            if sigma == 0.0 {
                return Ok(vec![0.0; n_ues]);
            }
            let normal = Normal::new(0.0, sigma)
                .map_err(|e| Error::InvalidConfig(format!("shadowing: {e}")))?;
            Ok((0..n_ues).map(|_| normal.sample(rng)).collect())
        };
        let macro_db = (0..n_sectors)
            .map(|_| draw(radio.macro_shadow_sigma_db, rng))
            .collect::<Result<_>>()?;
        let pico_db = (0..n_picos)
            .map(|_| draw(radio.pico_shadow_sigma_db, rng))
            .collect::<Result<_>>()?;
        Ok(Self { macro_db, pico_db })
    }

    pub fn get(&self, cell: CellId, ue: usize) -> f64 {
        match cell {
            CellId::Macro(k) => self.macro_db[k][ue],
            CellId::Pico(p) => self.pico_db[p][ue],
        }
    }
}

/// Received power from `cell` at UE `ue` in dBm, including the element's
/// maximum gain for macrocells. Picocells are isotropic at 0 dBi.
pub fn received_power_dbm(
    dep: &Deployment,
    cell: CellId,
    ue: usize,
    configs: &[AntennaConfig],
    radio: &RadioParams,
    shadow: &ShadowMap,
) -> Result<f64> {
    let pos = dep.ues[ue];
    match cell {
        CellId::Macro(k) => {
            let g = ue_geometry(dep, k, pos)?;
            let pattern = antenna_gain(g.azimuth_offset_deg, g.elevation_deg, &configs[k])?;
            let pl = path_loss(Tier::Macro, g.distance_2d_km)?;
            Ok(radio.macro_tx_power_dbm + radio.macro_max_gain_dbi + pattern
                - pl
                - shadow.get(cell, ue))
        }
        CellId::Pico(p) => {
            let d_m = dist(dep.picos[p], pos) * 1000.0;
            let pl = path_loss(Tier::Pico, d_m)?;
            Ok(radio.pico_tx_power_dbm - pl - shadow.get(cell, ue))
        }
    }
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// One link's power budget decomposed by tier. All powers in mW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSample {
    pub serving_mw: f64,
    pub macro_interference_mw: f64,
    pub small_interference_mw: f64,
    pub noise_mw: f64,
    pub sinr_db: f64,
}

impl LinkSample {
    pub fn new(serving_mw: f64, macro_mw: f64, small_mw: f64, noise_mw: f64) -> Self {
        let sinr_db = linear_to_db(serving_mw / (macro_mw + small_mw + noise_mw));
        Self {
            serving_mw,
            macro_interference_mw: macro_mw,
            small_interference_mw: small_mw,
            noise_mw,
            sinr_db,
        }
    }

    pub fn sinr_linear(&self) -> f64 {
        self.serving_mw / (self.macro_interference_mw + self.small_interference_mw + self.noise_mw)
    }
}

/// SINR of `ue` served by `serving`, with every other cell of the deployment
/// treated as an interferer.
pub fn sinr(
    dep: &Deployment,
    ue: usize,
    serving: CellId,
    configs: &[AntennaConfig],
    radio: &RadioParams,
    shadow: &ShadowMap,
) -> Result<LinkSample> {
    let mut serving_mw = 0.0;
    let mut macro_mw = 0.0;
    let mut small_mw = 0.0;
    for cell in dep.cells() {
        let p = db_to_linear(received_power_dbm(dep, cell, ue, configs, radio, shadow)?);
        if cell == serving {
            serving_mw = p;
        } else {
            match cell {
                CellId::Macro(_) => macro_mw += p,
                CellId::Pico(_) => small_mw += p,
            }
        }
    }
    Ok(LinkSample::new(serving_mw, macro_mw, small_mw, radio.noise_mw()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn horizontal_pattern_anchors() {
        assert_eq!(horizontal_gain(0.0, 70.0).unwrap(), 0.0);
        assert!(close(horizontal_gain(35.0, 70.0).unwrap(), -3.0, 1e-12));
        assert_eq!(horizontal_gain(200.0, 70.0).unwrap(), -25.0);
        assert_eq!(
            horizontal_gain(10.0, 0.0),
            Err(Error::InvalidBeamwidth(0.0))
        );
    }

    #[test]
    fn vertical_pattern_anchors() {
        assert_eq!(vertical_gain(7.0, 7.0, 10.0).unwrap(), 0.0);
        assert!(close(vertical_gain(12.0, 7.0, 10.0).unwrap(), -3.0, 1e-12));
        assert_eq!(vertical_gain(80.0, 0.0, 4.4).unwrap(), -20.0);
        assert!(vertical_gain(1.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn combined_pattern() {
        let cfg = AntennaConfig::new(6.0, 10.0, 70.0);
        assert_eq!(antenna_gain(0.0, 6.0, &cfg).unwrap(), 0.0);
        // -25 horizontal plus -20 vertical clips at 25.
        assert_eq!(antenna_gain(180.0, 90.0, &cfg).unwrap(), -25.0);
        assert!(close(antenna_gain(35.0, 11.0, &cfg).unwrap(), -6.0, 1e-12));
    }

    #[test]
    fn path_loss_anchors() {
        assert!(close(path_loss(Tier::Macro, 1.0).unwrap(), 128.1, 1e-12));
        assert!(close(path_loss(Tier::Pico, 1.0).unwrap(), 38.0, 1e-12));
        assert!(close(path_loss(Tier::Macro, 0.1).unwrap(), 90.5, 1e-9));
        assert_eq!(path_loss(Tier::Macro, 0.0), Err(Error::DegenerateLink));
        assert_eq!(path_loss(Tier::Pico, -2.0), Err(Error::DegenerateLink));
    }

    #[test]
    fn link_sample_limits() {
        let n = db_to_linear(-104.0);
        // serving power equal to noise, no interferers
        assert!(close(LinkSample::new(n, 0.0, 0.0, n).sinr_db, 0.0, 1e-12));
        // one equal interferer, noise negligible
        let s = LinkSample::new(1e-3, 1e-3, 0.0, 1e-15);
        assert!(close(s.sinr_db, 0.0, 1e-9));
    }

    proptest! {
        #[test]
        fn horizontal_symmetric(phi in -360.0f64..360.0, bw in 1.0f64..120.0) {
            prop_assert_eq!(horizontal_gain(phi, bw).unwrap(), horizontal_gain(-phi, bw).unwrap());
        }

        #[test]
        fn pattern_bounded(phi in -180.0f64..180.0, theta in -90.0f64..90.0,
                           tilt in 0.0f64..20.0, vbw in 1.0f64..20.0, hbw in 20.0f64..120.0) {
            let g = antenna_gain(phi, theta, &AntennaConfig::new(tilt, vbw, hbw)).unwrap();
            prop_assert!((-25.0..=0.0).contains(&g));
        }

        #[test]
        fn widening_never_hurts_inside_half_beam(frac in 0.0f64..1.0, bw in 20.0f64..100.0, extra in 0.0f64..40.0) {
            let phi = frac * bw / 2.0;
            let narrow = horizontal_gain(phi, bw).unwrap();
            let wide = horizontal_gain(phi, bw + extra).unwrap();
            prop_assert!(wide >= narrow);
        }

        #[test]
        fn sinr_composition_exact(s in 1e-12f64..1e-3, i in 0.0f64..1e-6, j in 0.0f64..1e-6) {
            let n = db_to_linear(-104.0);
            let l = LinkSample::new(s, i, j, n);
            prop_assert_eq!(l.sinr_db, 10.0 * (l.serving_mw / (l.macro_interference_mw + l.small_interference_mw + l.noise_mw)).log10());
        }
    }
}
