//! Deterministic synthetic scenes: wind background from a GMF, Gaussian rain
//! cells with known rain rate, multiplicative contrast and gamma speckle.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Result};
use crate::labels::{dbz_from_rainrate, rainrate_from_dbz, ClassMasks, ZrParams, THRESHOLDS_DBZ};
use crate::preproc::{Gmf, Sigma0Grid};
use crate::raster::{Grid, GridGeometry};
use crate::rng;

/// One isotropic Gaussian rain cell; `radius_px` is the standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RainCell {
    pub row: f64,
    pub col: f64,
    pub peak_mmh: f64,
    pub radius_px: f64,
}

impl RainCell {
    pub fn rate_at(&self, r: f64, c: f64) -> f64 {
        let d2 = (r - self.row) * (r - self.row) + (c - self.col) * (c - self.col);
        self.peak_mmh * libm::exp(-d2 / (2.0 * self.radius_px * self.radius_px))
    }
}

/// Attenuation annulus around each cell, in units of the cell radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DarkRing {
    pub factor: f64,
    pub inner: f64,
    pub outer: f64,
}

impl Default for DarkRing {
    fn default() -> Self {
        DarkRing { factor: 0.8, inner: 1.5, outer: 2.5 }
    }
}

/// Rain-rate to sigma0 multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastModel {
    /// Core multiplier is `1 + bright_gain * min(R / saturation_mmh, 1)`.
    pub bright_gain: f64,
    pub saturation_mmh: f64,
    pub dark_ring: Option<DarkRing>,
    /// When set, the perturbation shrinks linearly to nothing at this wind.
    pub wind_fade_mps: Option<f64>,
    /// Extra multiplicative noise of rain: its standard deviation is
    /// `texture * min(R / saturation_mmh, 1)`, added in variance to speckle.
    pub texture: f64,
}

impl Default for ContrastModel {
    fn default() -> Self {
        ContrastModel { bright_gain: 0.5, saturation_mmh: 10.0, dark_ring: None, wind_fade_mps: None, texture: 0.0 }
    }
}

impl ContrastModel {
    fn fade(&self, wind: f64) -> f64 {
        match self.wind_fade_mps {
            Some(w0) if w0 > 0.0 => (1.0 - wind / w0).clamp(0.0, 1.0),
            Some(_) => 0.0,
            None => 1.0,
        }
    }

    pub fn multiplier(&self, rate_mmh: f64, in_ring: bool, wind: f64) -> f64 {
        let fade = self.fade(wind);
        let bright = self.bright_gain * (rate_mmh / self.saturation_mmh).min(1.0);
        let ring = match (in_ring, self.dark_ring) {
            (true, Some(d)) => (d.factor - 1.0) * fade,
            _ => 0.0,
        };
        (1.0 + bright * fade) * (1.0 + ring)
    }

    /// Standard deviation of the rain texture at a pixel.
    pub fn texture_std(&self, rate_mmh: f64, wind: f64) -> f64 {
        self.texture * (rate_mmh / self.saturation_mmh).min(1.0) * self.fade(wind)
    }
}

/// Land half-plane: pixels with `(r - rows/2) cos(a) + (c - cols/2) sin(a)
/// > offset_px` are land, `a` measured from the row axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coast {
    pub angle_deg: f64,
    pub offset_px: f64,
}

impl Coast {
    pub fn is_land(&self, rows: usize, cols: usize, r: usize, c: usize) -> bool {
        let a = self.angle_deg.to_radians();
        let (dr, dc) = (r as f64 - rows as f64 / 2.0, c as f64 - cols as f64 / 2.0);
        dr * libm::cos(a) + dc * libm::sin(a) > self.offset_px
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub seed: u64,
    pub size_px: usize,
    pub pixel_spacing_m: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub timestamp: i64,
    /// Background wind at the scene's middle row.
    pub wind_mps: f64,
    /// Wind change from the first to the last row.
    pub wind_gradient_mps: f64,
    pub wind_direction_deg: f64,
    pub incidence_near_deg: f64,
    pub incidence_far_deg: f64,
    pub n_cells: usize,
    pub cell_rate_range_mmh: (f64, f64),
    pub cell_radius_range_px: (f64, f64),
    /// Cells placed in addition to the `n_cells` random ones.
    pub cells: Vec<RainCell>,
    pub contrast: ContrastModel,
    /// Number of looks of the gamma speckle; 0 disables speckle.
    pub speckle_looks: u32,
    pub coast: Option<Coast>,
    /// Multiplier applied to land backscatter.
    pub land_gain: f64,
    /// Reflectivity written where the rain rate is below the floor.
    pub dbz_floor: f64,
    pub zr: ZrParams,
    pub thresholds_dbz: [f64; 3],
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            seed: 0,
            size_px: 128,
            pixel_spacing_m: 400.0,
            origin_lat: 27.0,
            origin_lon: -80.0,
            timestamp: 1_600_000_000,
            wind_mps: 7.0,
            wind_gradient_mps: 0.0,
            wind_direction_deg: 45.0,
            incidence_near_deg: 30.0,
            incidence_far_deg: 45.0,
            n_cells: 4,
            cell_rate_range_mmh: (2.0, 40.0),
            cell_radius_range_px: (3.0, 10.0),
            cells: Vec::new(),
            contrast: ContrastModel::default(),
            speckle_looks: 16,
            coast: None,
            land_gain: 3.0,
            dbz_floor: -30.0,
            zr: ZrParams::default(),
            thresholds_dbz: THRESHOLDS_DBZ,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size_px == 0 || !(self.pixel_spacing_m > 0.0) {
            return Err(precondition!("scene size and spacing must be positive"));
        }
        let (r0, r1) = self.cell_rate_range_mmh;
        let (s0, s1) = self.cell_radius_range_px;
        if !(0.0 < r0 && r0 <= r1) || !(0.0 < s0 && s0 <= s1) {
            return Err(precondition!("cell rate and radius ranges must be positive and ordered"));
        }
        if !(self.wind_mps >= 0.0) {
            return Err(precondition!("background wind must be non-negative"));
        }
        if self.cells.iter().any(|c| !(c.peak_mmh >= 0.0 && c.radius_px > 0.0)) {
            return Err(precondition!("explicit cells need non-negative peak and positive radius"));
        }
        self.zr.validate()
    }

    pub fn geometry(&self) -> Result<GridGeometry> {
        GridGeometry::with_origin(self.size_px, self.size_px, self.pixel_spacing_m, self.origin_lat, self.origin_lon)
    }

    pub fn incidence_deg(&self) -> Vec<f64> {
        let n = self.size_px;
        (0..n)
            .map(|c| {
                let t = if n > 1 { c as f64 / (n - 1) as f64 } else { 0.5 };
                self.incidence_near_deg + t * (self.incidence_far_deg - self.incidence_near_deg)
            })
            .collect()
    }

    pub fn wind_at(&self, row: usize) -> f64 {
        let n = self.size_px;
        let t = if n > 1 { row as f64 / (n - 1) as f64 - 0.5 } else { 0.0 };
        (self.wind_mps + t * self.wind_gradient_mps).max(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    /// Linear backscatter with per-column incidence.
    pub sigma0: Sigma0Grid,
    pub reflectivity: Grid,
    pub wind: Grid,
    pub land: Grid,
    /// Masks from the exact rain-rate field; land is invalid.
    pub truth: ClassMasks,
    pub rain_rate: Grid,
    pub cells: Vec<RainCell>,
}

/// Draws the random cells of a scene from stream 0 of the seed.
pub fn draw_cells(cfg: &SceneConfig) -> Vec<RainCell> {
    let mut rng = rng::stream(cfg.seed, 0);
    let n = cfg.size_px as f64;
    let mut cells: Vec<RainCell> = (0..cfg.n_cells)
        .map(|_| {
            let (r0, r1) = cfg.cell_rate_range_mmh;
            let (s0, s1) = cfg.cell_radius_range_px;
            RainCell {
                row: rng.random_range(0.0..n),
                col: rng.random_range(0.0..n),
                peak_mmh: if r1 > r0 { rng.random_range(r0..r1) } else { r0 },
                radius_px: if s1 > s0 { rng.random_range(s0..s1) } else { s0 },
            }
        })
        .collect();
    cells.extend_from_slice(&cfg.cells);
    cells
}

pub fn gen_scene(cfg: &SceneConfig, gmf: &impl Gmf) -> Result<Scene> {
    cfg.validate()?;
    let geo = cfg.geometry()?;
    let n = cfg.size_px;
    let incidence = cfg.incidence_deg();
    let cells = draw_cells(cfg);

    let mut rate = Vec::with_capacity(geo.len());
    let mut ring = Vec::with_capacity(geo.len());
    for r in 0..n {
        for c in 0..n {
            let (rf, cf) = (r as f64, c as f64);
            rate.push(cells.iter().map(|k| k.rate_at(rf, cf)).sum::<f64>());
            ring.push(cfg.contrast.dark_ring.is_some_and(|d| {
                cells.iter().any(|k| {
                    let d2 = libm::hypot(rf - k.row, cf - k.col) / k.radius_px;
                    d2 >= d.inner && d2 <= d.outer
                })
            }));
        }
    }
    let land: Vec<bool> = (0..geo.len()).map(|i| cfg.coast.is_some_and(|k| k.is_land(n, n, i / n, i % n))).collect();

    let base_var = match cfg.speckle_looks {
        0 => 0.0,
        l => 1.0 / f64::from(l),
    };
    let speckle = match base_var {
        0.0 => None,
        v => Some(Gamma::new(1.0 / v, v).map_err(|e| precondition!("speckle: {e}"))?),
    };
    let mut speckle_rng = rng::stream(cfg.seed, 1);
    let mut sigma0 = Vec::with_capacity(geo.len());
    let mut wind = Vec::with_capacity(geo.len());
    for r in 0..n {
        let w = cfg.wind_at(r);
        for c in 0..n {
            let i = r * n + c;
            let base = gmf.eval(incidence[c], w, cfg.wind_direction_deg)?;
            let (m, tex) = if land[i] {
                (cfg.land_gain, 0.0)
            } else {
                (cfg.contrast.multiplier(rate[i], ring[i], w), cfg.contrast.texture_std(rate[i], w))
            };
            // Unit-mean gamma noise whose variance is speckle plus texture.
            let var = base_var + tex * tex;
            let noise = if var == 0.0 {
                1.0
            } else if let (0.0, Some(g)) = (tex, &speckle) {
                g.sample(&mut speckle_rng)
            } else {
                Gamma::new(1.0 / var, var).map_err(|e| precondition!("speckle: {e}"))?.sample(&mut speckle_rng)
            };
            sigma0.push((base * m * noise) as f32);
            wind.push(w as f32);
        }
    }

    let refl: Vec<f32> = rate
        .iter()
        .map(|&x| {
            let z = if x > 0.0 { dbz_from_rainrate(x, cfg.zr).unwrap_or(f64::NEG_INFINITY) } else { f64::NEG_INFINITY };
            z.max(cfg.dbz_floor) as f32
        })
        .collect();

    let cut: [f64; 3] = core::array::from_fn(|k| rainrate_from_dbz(cfg.thresholds_dbz[k], cfg.zr));
    let ts = cfg.timestamp;
    let mask = |f: &dyn Fn(usize) -> bool| -> Result<Grid> { Ok(Grid::mask_from_fn(geo, |r, c| f(r * n + c))?.with_timestamp(ts)) };
    let truth = ClassMasks::new(
        mask(&|i| !land[i] && rate[i] >= cut[0])?,
        mask(&|i| !land[i] && rate[i] >= cut[1])?,
        mask(&|i| !land[i] && rate[i] >= cut[2])?,
        mask(&|i| !land[i])?,
        cfg.thresholds_dbz,
    )?;

    let grid = |v: Vec<f32>| Grid::new(geo, v).map(|g| g.with_timestamp(ts));
    Ok(Scene {
        sigma0: Sigma0Grid::new(grid(sigma0)?, incidence)?,
        reflectivity: grid(refl)?,
        wind: grid(wind)?,
        land: mask(&|i| land[i])?,
        truth,
        rain_rate: grid(rate.iter().map(|&x| x as f32).collect())?,
        cells,
    })
}
