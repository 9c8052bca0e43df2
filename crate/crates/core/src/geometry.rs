//! Two-tier deployment sampling, per-link geometry and cell association.
//!
//! Positions are in km on a square area with the origin at the lower-left
//! corner. Azimuths are measured counter-clockwise from the +x axis. Every
//! eNB expands into three 120° sectors with boresights at 60°, 180° and 300°.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radio::{received_power_dbm, AntennaConfig, RadioParams, ShadowMap};
use crate::rng::{self, tags};

pub const SECTOR_BORESIGHTS_DEG: [f64; 3] = [60.0, 180.0, 300.0];
pub const SECTOR_SPAN_DEG: f64 = 120.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SiteLayout {
    /// eNB count is a Poisson draw with mean `lambda_macro * area`.
    #[default]
    Poisson,
    /// Explicit eNB positions (km); used by the miniature presets.
    Fixed { sites: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeploymentConfig {
    pub area_side_km: f64,
    pub lambda_macro: f64,
    pub lambda_pico: f64,
    pub n_ues: usize,
    pub macro_height_m: f64,
    pub ue_height_m: f64,
    pub seed: u64,
    pub site_layout: SiteLayout,
}

impl Default for DeploymentConfig {
    fn default() -> Self {
        Self {
            area_side_km: 5.0,
            lambda_macro: 0.25,
            lambda_pico: 2.0,
            n_ues: 400,
            macro_height_m: 32.0,
            ue_height_m: 1.5,
            seed: 0,
            site_layout: SiteLayout::Poisson,
        }
    }
}

impl DeploymentConfig {
    pub fn area_km2(&self) -> f64 {
        self.area_side_km * self.area_side_km
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.area_side_km > 0.0) {
            return Err(Error::InvalidConfig("area_side_km must be > 0".into()));
        }
        if matches!(self.site_layout, SiteLayout::Poisson) && !(self.lambda_macro > 0.0) {
            return Err(Error::InvalidConfig("lambda_macro must be > 0".into()));
        }
        // A zero pico density is the "no small cells" world.
        if !(self.lambda_pico >= 0.0) {
            return Err(Error::InvalidConfig("lambda_pico must be >= 0".into()));
        }
        if self.n_ues == 0 {
            return Err(Error::InvalidConfig("n_ues must be >= 1".into()));
        }
        if !(self.macro_height_m > self.ue_height_m) {
            return Err(Error::InvalidConfig(
                "macro_height_m must exceed ue_height_m".into(),
            ));
        }
        if let SiteLayout::Fixed { sites } = &self.site_layout {
            for s in sites {
                if !self.contains(*s) {
                    return Err(Error::InvalidConfig(format!(
                        "fixed site {s:?} outside the area"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0.0..=self.area_side_km).contains(&p[0]) && (0.0..=self.area_side_km).contains(&p[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroCell {
    pub site: usize,
    pub boresight_deg: f64,
}

impl MacroCell {
    /// Azimuth range covered by the sector, `[boresight - 60, boresight + 60]`.
    pub fn azimuth_range_deg(&self) -> (f64, f64) {
        (
            self.boresight_deg - SECTOR_SPAN_DEG / 2.0,
            self.boresight_deg + SECTOR_SPAN_DEG / 2.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CellId {
    Macro(usize),
    Pico(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub config: DeploymentConfig,
    pub sites: Vec<[f64; 2]>,
    pub macrocells: Vec<MacroCell>,
    pub picos: Vec<[f64; 2]>,
    pub ues: Vec<[f64; 2]>,
}

impl Deployment {
    /// Macros first, then picos. This order is the association tie-break.
    pub fn cells(&self) -> impl Iterator<Item = CellId> + '_ {
        (0..self.macrocells.len())
            .map(CellId::Macro)
            .chain((0..self.picos.len()).map(CellId::Pico))
    }

    pub fn n_cells(&self) -> usize {
        self.macrocells.len() + self.picos.len()
    }

    pub fn site_of(&self, sector: usize) -> [f64; 2] {
        self.sites[self.macrocells[sector].site]
    }

    /// Builds a deployment from explicit positions.
    pub fn from_parts(
        config: DeploymentConfig,
        sites: Vec<[f64; 2]>,
        picos: Vec<[f64; 2]>,
        ues: Vec<[f64; 2]>,
    ) -> Self {
        let macrocells = sites
            .iter()
            .enumerate()
            .flat_map(|(site, _)| {
                SECTOR_BORESIGHTS_DEG.iter().map(move |&b| MacroCell {
                    site,
                    boresight_deg: b,
                })
            })
            .collect();
        Self {
            config,
            sites,
            macrocells,
            picos,
            ues,
        }
    }
}

fn uniform_points<R: Rng + ?Sized>(n: usize, side: f64, rng: &mut R) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| [rng.random::<f64>() * side, rng.random::<f64>() * side])
        .collect()
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<usize> {
    if mean <= 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(mean).map_err(|e| Error::InvalidConfig(format!("poisson: {e}")))?;
    Ok(d.sample(rng) as usize)
}

/// Poisson pico layout of the given density on a square of side `side_km`.
/// With the deployment's seed and density this reproduces its pico layer.
pub fn sample_picos(seed: u64, density_per_km2: f64, side_km: f64) -> Result<Vec<[f64; 2]>> {
    let mut r = rng::stream(seed, tags::PICOS);
    let n = poisson_count(density_per_km2 * side_km * side_km, &mut r)?;
    Ok(uniform_points(n, side_km, &mut r))
}

/// Samples macro sites, picocells and UEs. Each population draws from its own
/// stream of the configured seed, so changing e.g. the pico density leaves
/// the macro layer and UE drop untouched.
pub fn sample_deployment(cfg: &DeploymentConfig) -> Result<Deployment> {
    cfg.validate()?;
    let side = cfg.area_side_km;
    let sites = match &cfg.site_layout {
        SiteLayout::Poisson => {
            let mut r = rng::stream(cfg.seed, tags::MACRO_SITES);
            let n = poisson_count(cfg.lambda_macro * cfg.area_km2(), &mut r)?;
            uniform_points(n, side, &mut r)
        }
        SiteLayout::Fixed { sites } => sites.clone(),
    };
    if sites.is_empty() {
        return Err(Error::EmptyDeployment);
    }
    let picos = sample_picos(cfg.seed, cfg.lambda_pico, side)?;
    let mut r = rng::stream(cfg.seed, tags::UES);
    let ues = uniform_points(cfg.n_ues, side, &mut r);
    Ok(Deployment::from_parts(cfg.clone(), sites, picos, ues))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UeGeometry {
    pub distance_2d_km: f64,
    /// Signed horizontal angle from the sector boresight, in (-180, 180].
    pub azimuth_offset_deg: f64,
    /// Downward angle from the horizontal at the BS toward the UE.
    pub elevation_deg: f64,
}

/// Wraps an angle into (-180, 180].
pub fn wrap_deg(a: f64) -> f64 {
    let mut x = a % 360.0;
    if x <= -180.0 {
        x += 360.0;
    } else if x > 180.0 {
        x -= 360.0;
    }
    x
}

/// Geometry of the link from a BS at `site` (boresight `boresight_deg`) to a
/// receiver at `pos`.
pub fn link_geometry(
    site: [f64; 2],
    boresight_deg: f64,
    pos: [f64; 2],
    macro_height_m: f64,
    ue_height_m: f64,
) -> Result<UeGeometry> {
    let dx = pos[0] - site[0];
    let dy = pos[1] - site[1];
    let d = (dx * dx + dy * dy).sqrt();
    if d == 0.0 {
        return Err(Error::DegenerateLink);
    }
    let az = dy.atan2(dx).to_degrees();
    Ok(UeGeometry {
        distance_2d_km: d,
        azimuth_offset_deg: wrap_deg(az - boresight_deg),
        elevation_deg: ((macro_height_m - ue_height_m) / (d * 1000.0))
            .atan()
            .to_degrees(),
    })
}

pub fn ue_geometry(dep: &Deployment, sector: usize, pos: [f64; 2]) -> Result<UeGeometry> {
    let cell = dep.macrocells[sector];
    link_geometry(
        dep.sites[cell.site],
        cell.boresight_deg,
        pos,
        dep.config.macro_height_m,
        dep.config.ue_height_m,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationMap {
    pub serving: Vec<CellId>,
    pub serving_power_dbm: Vec<f64>,
    /// UEs attached to each macro sector, in UE order.
    pub macro_ues: Vec<Vec<usize>>,
}

/// Max received-power association. Ties go to the lowest cell index (macros
/// before picos).
pub fn associate(
    dep: &Deployment,
    radio: &RadioParams,
    shadow: &ShadowMap,
    configs: &[AntennaConfig],
) -> Result<AssociationMap> {
    let mut serving = Vec::with_capacity(dep.ues.len());
    let mut serving_power_dbm = Vec::with_capacity(dep.ues.len());
    let mut macro_ues = vec![Vec::new(); dep.macrocells.len()];
    for ue in 0..dep.ues.len() {
        let mut best: Option<(CellId, f64)> = None;
        for cell in dep.cells() {
            let p = received_power_dbm(dep, cell, ue, configs, radio, shadow)?;
            if best.is_none_or(|(_, b)| p > b) {
                best = Some((cell, p));
            }
        }
        let (cell, p) = best.ok_or(Error::EmptyDeployment)?;
        if let CellId::Macro(k) = cell {
            macro_ues[k].push(ue);
        }
        serving.push(cell);
        serving_power_dbm.push(p);
    }
    Ok(AssociationMap {
        serving,
        serving_power_dbm,
        macro_ues,
    })
}

pub const DEPLOYMENT_DOC_VERSION: u32 = 1;

/// Persisted form of a deployment and its association.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentDocument {
    pub version: u32,
    pub config: DeploymentConfig,
    pub sites: Vec<[f64; 2]>,
    pub picos: Vec<[f64; 2]>,
    pub ues: Vec<[f64; 2]>,
    pub association: Vec<CellId>,
}

impl DeploymentDocument {
    pub fn new(dep: &Deployment, assoc: &AssociationMap) -> Self {
        Self {
            version: DEPLOYMENT_DOC_VERSION,
            config: dep.config.clone(),
            sites: dep.sites.clone(),
            picos: dep.picos.clone(),
            ues: dep.ues.clone(),
            association: assoc.serving.clone(),
        }
    }

    pub fn deployment(&self) -> Deployment {
        Deployment::from_parts(
            self.config.clone(),
            self.sites.clone(),
            self.picos.clone(),
            self.ues.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio::{path_loss, Tier};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn two_cell(ue: [f64; 2], pico: Option<[f64; 2]>) -> Deployment {
        let cfg = DeploymentConfig {
            area_side_km: 5.0,
            ..Default::default()
        };
        Deployment::from_parts(cfg, vec![[0.0, 0.0]], pico.into_iter().collect(), vec![ue])
    }

    #[test]
    fn boresight_elevation() {
        // Choose d such that (h_bs - h_ue) / d = tan 6°.
        let d_m = 30.5 / 6f64.to_radians().tan();
        let d = d_m / 1000.0;
        let b = 60f64.to_radians();
        let g = link_geometry([0.0, 0.0], 60.0, [d * b.cos(), d * b.sin()], 32.0, 1.5).unwrap();
        assert!(close(g.distance_2d_km, d, 1e-12));
        assert!(close(g.azimuth_offset_deg, 0.0, 1e-9));
        assert!(close(g.elevation_deg, 6.0, 1e-9));
    }

    #[test]
    fn azimuth_offset_sixty() {
        let a = 120f64.to_radians();
        let g = link_geometry([1.0, 1.0], 60.0, [1.0 + a.cos(), 1.0 + a.sin()], 32.0, 1.5).unwrap();
        assert!(close(g.azimuth_offset_deg, 60.0, 1e-9));
        let g = link_geometry([0.0, 0.0], 300.0, [1.0, 0.0], 32.0, 1.5).unwrap();
        assert!(close(g.azimuth_offset_deg, 60.0, 1e-9));
    }

    #[test]
    fn coincident_link_is_degenerate() {
        assert_eq!(
            link_geometry([1.0, 1.0], 60.0, [1.0, 1.0], 32.0, 1.5),
            Err(Error::DegenerateLink)
        );
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_deg(180.0), 180.0);
        assert_eq!(wrap_deg(-180.0), 180.0);
        assert!(close(wrap_deg(-190.0), 170.0, 1e-12));
        assert!(close(wrap_deg(540.0), 180.0, 1e-12));
    }

    #[test]
    fn random_geometry_matches_coordinates() {
        let mut r = rng::stream(3, 99);
        for _ in 0..200 {
            let site = [r.random::<f64>() * 5.0, r.random::<f64>() * 5.0];
            let p = [r.random::<f64>() * 5.0, r.random::<f64>() * 5.0];
            let b = SECTOR_BORESIGHTS_DEG[r.random_range(0..3)];
            let g = link_geometry(site, b, p, 32.0, 1.5).unwrap();
            // Rebuild the UE position from (distance, boresight + offset).
            let az = (b + g.azimuth_offset_deg).to_radians();
            let q = [
                site[0] + g.distance_2d_km * az.cos(),
                site[1] + g.distance_2d_km * az.sin(),
            ];
            assert!(close(q[0], p[0], 1e-9) && close(q[1], p[1], 1e-9));
            let h = g.distance_2d_km * 1000.0 * g.elevation_deg.to_radians().tan();
            assert!(close(h, 30.5, 1e-6));
            assert!(g.azimuth_offset_deg > -180.0 && g.azimuth_offset_deg <= 180.0);
        }
    }

    #[test]
    fn single_macro_single_ue() {
        let dep = two_cell([0.3, 0.2], None);
        let radio = RadioParams::default();
        let shadow = ShadowMap::zero(3, 0, 1);
        let cfgs = vec![AntennaConfig::initial(); 3];
        let a = associate(&dep, &radio, &shadow, &cfgs).unwrap();
        assert!(matches!(a.serving[0], CellId::Macro(_)));
    }

    #[test]
    fn pico_beats_far_macro() {
        // Macro 2 km away on the boresight of sector 0, pico 10 m away.
        let b = 60f64.to_radians();
        let ue = [2.0 * b.cos(), 2.0 * b.sin()];
        let pico = [ue[0] + 0.010, ue[1]];
        let dep = two_cell(ue, Some(pico));
        let radio = RadioParams::default();
        let shadow = ShadowMap::zero(3, 1, 1);
        let cfgs = vec![AntennaConfig::initial(); 3];
        let a = associate(&dep, &radio, &shadow, &cfgs).unwrap();
        assert_eq!(a.serving[0], CellId::Pico(0));
        // Hand link budget: pico 24 - (38 + 30 log10 10) = -44 dBm.
        assert!(close(a.serving_power_dbm[0], -44.0, 1e-9));
        let macro_bound = 46.0 + 15.0 - path_loss(Tier::Macro, 2.0).unwrap();
        assert!(close(macro_bound, -78.418, 1e-3));
        let m = received_power_dbm(&dep, CellId::Macro(0), 0, &cfgs, &radio, &shadow).unwrap();
        assert!(m <= macro_bound);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        // Two co-located picos give identical received power.
        let dep = two_cell([4.0, 4.0], None);
        let dep = Deployment {
            picos: vec![[4.01, 4.0], [3.99, 4.0]],
            ..dep
        };
        let radio = RadioParams::default();
        let shadow = ShadowMap::zero(3, 2, 1);
        let cfgs = vec![AntennaConfig::initial(); 3];
        let a = associate(&dep, &radio, &shadow, &cfgs).unwrap();
        assert_eq!(a.serving[0], CellId::Pico(0));
    }

    #[test]
    fn empty_deployment_error() {
        let cfg = DeploymentConfig {
            lambda_macro: 1e-12,
            ..Default::default()
        };
        assert_eq!(sample_deployment(&cfg), Err(Error::EmptyDeployment));
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = DeploymentConfig {
            seed: 42,
            ..Default::default()
        };
        let a = sample_deployment(&cfg).unwrap();
        let b = sample_deployment(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.macrocells.len(), 3 * a.sites.len());
        for p in a.sites.iter().chain(&a.picos).chain(&a.ues) {
            assert!(cfg.contains(*p));
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            DeploymentConfig {
                area_side_km: 0.0,
                ..Default::default()
            },
            DeploymentConfig {
                n_ues: 0,
                ..Default::default()
            },
            DeploymentConfig {
                lambda_macro: -1.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(sample_deployment(&cfg), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn poisson_counts_match_intensity() {
        // 200 independent drops; the sample mean must sit within 3 standard
        // errors of lambda * area for both tiers. The macro density is high
        // enough that an empty draw is practically impossible.
        let base = DeploymentConfig {
            lambda_macro: 2.0,
            n_ues: 1,
            ..Default::default()
        };
        let n = 200;
        let (mut sm, mut sp) = (0.0, 0.0);
        for seed in 0..n {
            let d = sample_deployment(&DeploymentConfig {
                seed,
                ..base.clone()
            })
            .unwrap();
            sm += d.sites.len() as f64;
            sp += d.picos.len() as f64;
        }
        for (sum, lambda) in [(sm, base.lambda_macro), (sp, base.lambda_pico)] {
            let mean = lambda * base.area_km2();
            let se = (mean / n as f64).sqrt();
            assert!((sum / n as f64 - mean).abs() < 3.0 * se, "{} vs {mean}", sum / n as f64);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn association_is_max_power_and_idempotent(seed in 0u64..10_000) {
            let cfg = DeploymentConfig {
                area_side_km: 2.0,
                lambda_macro: 1.0,
                n_ues: 30,
                seed,
                ..Default::default()
            };
            let dep = match sample_deployment(&cfg) {
                Ok(d) => d,
                Err(Error::EmptyDeployment) => return Ok(()),
                Err(e) => panic!("{e}"),
            };
            let radio = RadioParams::default();
            let mut r = rng::stream(seed, tags::SHADOW);
            let shadow = ShadowMap::sample(
                dep.macrocells.len(), dep.picos.len(), dep.ues.len(), &radio, &mut r,
            ).unwrap();
            let configs = vec![AntennaConfig::initial(); dep.macrocells.len()];
            let a = associate(&dep, &radio, &shadow, &configs).unwrap();
            let b = associate(&dep, &radio, &shadow, &configs).unwrap();
            proptest::prop_assert_eq!(&a, &b);
            for ue in 0..dep.ues.len() {
                let served = received_power_dbm(&dep, a.serving[ue], ue, &configs, &radio, &shadow).unwrap();
                proptest::prop_assert_eq!(served, a.serving_power_dbm[ue]);
                for cell in dep.cells() {
                    let p = received_power_dbm(&dep, cell, ue, &configs, &radio, &shadow).unwrap();
                    proptest::prop_assert!(p <= served);
                }
            }
            let total: usize = a.macro_ues.iter().map(Vec::len).sum();
            let n_macro = a.serving.iter().filter(|c| matches!(c, CellId::Macro(_))).count();
            proptest::prop_assert_eq!(total, n_macro);
        }
    }
}
