//! Multi-swath synthetic corpora with heterogeneous wind, rain and coast
//! draws per swath.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::dataset::{extract_patches, ExtractRules, Patch, Rejection, SwathLayers};
use crate::error::{precondition, Result};
use crate::labels::{displace, RegistrationOffset};
use crate::preproc::{incidence_normalize, Gmf};
use crate::rng;
use crate::synth::{gen_scene, Coast, Scene, SceneConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub n_swaths: usize,
    /// Fields not drawn per swath are copied from here.
    pub template: SceneConfig,
    /// Inclusive range of random cells per swath.
    pub n_cells_range: (usize, usize),
    pub wind_range_mps: (f64, f64),
    /// Probability that a swath contains a coastline.
    pub coast_probability: f64,
    /// Radar scans lag the SAR acquisition by up to this many seconds
    /// either way.
    pub max_radar_lag_s: f64,
    /// Largest injected radar shift per axis; 0 injects none.
    pub max_shift_px: i32,
    /// Seconds between consecutive swath acquisitions.
    pub swath_interval_s: i64,
    pub rules: ExtractRules,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 0,
            n_swaths: 53,
            template: SceneConfig::default(),
            n_cells_range: (1, 8),
            wind_range_mps: (2.0, 18.0),
            coast_probability: 0.3,
            max_radar_lag_s: 900.0,
            max_shift_px: 0,
            swath_interval_s: 86_400,
            rules: ExtractRules { tile_px: 64, ..ExtractRules::default() },
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_swaths < 3 {
            return Err(precondition!("a corpus needs at least 3 swaths, got {}", self.n_swaths));
        }
        if self.n_cells_range.0 > self.n_cells_range.1 {
            return Err(precondition!("empty cell-count range"));
        }
        let (w0, w1) = self.wind_range_mps;
        if !(w0 >= 0.0 && w1 >= w0) {
            return Err(precondition!("invalid wind range ({w0}, {w1})"));
        }
        if !(0.0..=1.0).contains(&self.coast_probability) {
            return Err(precondition!("coast probability must lie in [0, 1]"));
        }
        if !(self.max_radar_lag_s >= 0.0 && self.max_radar_lag_s <= self.rules.max_time_delta_s) {
            return Err(precondition!("radar lag must lie within the colocation window"));
        }
        if self.max_shift_px < 0 {
            return Err(precondition!("shift bound must be non-negative"));
        }
        self.template.validate()
    }
}

pub fn swath_id(k: usize) -> String {
    format!("swath{k:03}")
}

/// Scene configuration and radar lag of swath `k`.
pub fn swath_config(cfg: &CorpusConfig, k: usize) -> (SceneConfig, i64) {
    let mut r = rng::stream(cfg.seed, k as u64);
    let mut sc = cfg.template.clone();
    sc.seed = r.next_u64();
    sc.timestamp = cfg.template.timestamp + k as i64 * cfg.swath_interval_s;
    sc.n_cells = r.random_range(cfg.n_cells_range.0..=cfg.n_cells_range.1);
    let (w0, w1) = cfg.wind_range_mps;
    sc.wind_mps = if w1 > w0 { r.random_range(w0..w1) } else { w0 };
    sc.wind_direction_deg = r.random_range(0.0..360.0);
    let half = sc.size_px as f64 / 2.0;
    let coast = r.random_bool(cfg.coast_probability);
    let (angle, offset) = (r.random_range(0.0..360.0), r.random_range(0.0..half));
    if coast {
        sc.coast = Some(Coast { angle_deg: angle, offset_px: offset });
    }
    let lag = if cfg.max_radar_lag_s > 0.0 { r.random_range(-cfg.max_radar_lag_s..=cfg.max_radar_lag_s) } else { 0.0 };
    (sc, lag as i64)
}

/// Scene plus normalized layers; the radar grid carries the lagged time.
pub fn gen_swath(cfg: &CorpusConfig, k: usize, gmf: &impl Gmf) -> Result<(Scene, SwathLayers)> {
    let (sc, lag) = swath_config(cfg, k);
    let scene = gen_scene(&sc, gmf)?;
    let layers = SwathLayers {
        swath_id: swath_id(k),
        sigma0_norm: incidence_normalize(&scene.sigma0, gmf)?,
        incidence_deg: scene.sigma0.incidence_deg().to_vec(),
        reflectivity: scene.reflectivity.clone().with_timestamp(sc.timestamp - lag),
        wind: scene.wind.clone(),
        land: scene.land.clone(),
    };
    Ok((scene, layers))
}

#[derive(Debug, Clone)]
pub struct CorpusPatch {
    pub patch: Patch,
    /// Shift injected on the radar layer, if any.
    pub injected: Option<RegistrationOffset>,
}

#[derive(Debug, Clone, Default)]
pub struct CorpusSwath {
    pub swath_id: String,
    pub patches: Vec<CorpusPatch>,
    pub rejected: Vec<(String, Rejection)>,
}

/// Extracts one swath's patches and displaces each accepted radar patch by
/// a uniform shift in `[-max_shift_px, max_shift_px]` per axis.
pub fn corpus_swath(cfg: &CorpusConfig, k: usize, gmf: &impl Gmf) -> Result<CorpusSwath> {
    let (_, layers) = gen_swath(cfg, k, gmf)?;
    let ex = extract_patches(&layers, &cfg.rules)?;
    let mut r = rng::stream(cfg.seed ^ 0x5a17_0000_0000_0000, k as u64);
    let m = cfg.max_shift_px;
    let patches = ex
        .patches
        .into_iter()
        .map(|mut p| {
            let injected = if m > 0 {
                let off = RegistrationOffset::new(r.random_range(-m..=m), r.random_range(-m..=m));
                p.reflectivity = displace(&p.reflectivity, off.d_row, off.d_col)?;
                Some(off)
            } else {
                None
            };
            Ok(CorpusPatch { patch: p, injected })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorpusSwath { swath_id: layers.swath_id, patches, rejected: ex.rejected })
}
