//! Radar truth: the Z-R power law, nested rain-class masks and the integer
//! translation that aligns radar reflectivity with the SAR rain signature.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::raster::{DType, Grid, GridGeometry};

/// Rain-rate class boundaries in mm/h.
pub const RAIN_RATE_THRESHOLDS_MMH: [f64; 3] = [1.0, 3.0, 10.0];
/// The same boundaries expressed as reflectivity.
pub const THRESHOLDS_DBZ: [f64; 3] = [24.7, 31.5, 38.8];
/// Default registration search radius (pixels at 400 m/px).
pub const DEFAULT_SEARCH_RADIUS_PX: usize = 32;

/// `Z = a * R^b` with Z in mm^6/m^3 and R in mm/h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZrParams {
    pub a: f64,
    pub b: f64,
}

impl Default for ZrParams {
    fn default() -> Self {
        ZrParams { a: 300.0, b: 1.4 }
    }
}

impl ZrParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.b > 0.0) {
            return Err(precondition!("Z-R coefficients must be positive"));
        }
        Ok(())
    }
}

/// Reflectivity (dBZ) of a rain rate. Zero rain maps to negative infinity.
pub fn dbz_from_rainrate(r_mmh: f64, zr: ZrParams) -> Result<f64> {
    if !(r_mmh >= 0.0) {
        return Err(Error::Domain(alloc::format!("rain rate {r_mmh} mm/h is negative")));
    }
    if r_mmh == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(10.0 * libm::log10(zr.a * libm::pow(r_mmh, zr.b)))
}

/// Rain rate (mm/h) of a reflectivity; inverse of [`dbz_from_rainrate`].
pub fn rainrate_from_dbz(z_dbz: f64, zr: ZrParams) -> f64 {
    libm::pow(libm::pow(10.0, z_dbz / 10.0) / zr.a, 1.0 / zr.b)
}

/// The three overlapping rain masks (>= 1, 3, 10 mm/h) plus the pixels on
/// which they are defined.
#[derive(Debug, Clone)]
pub struct ClassMasks {
    pub m1: Grid,
    pub m3: Grid,
    pub m10: Grid,
    pub valid: Grid,
    pub thresholds_dbz: [f64; 3],
}

impl ClassMasks {
    /// Checks shared geometry and nesting `m10 <= m3 <= m1`.
    pub fn new(m1: Grid, m3: Grid, m10: Grid, valid: Grid, thresholds_dbz: [f64; 3]) -> Result<Self> {
        for g in [&m1, &m3, &m10, &valid] {
            if g.dtype() != DType::U8 {
                return Err(precondition!("class masks must be mask grids"));
            }
            if !g.geometry().matches(m1.geometry()) {
                return Err(precondition!("class masks must share geometry"));
            }
        }
        for i in 0..m1.len() {
            let (a, b, c) = (m1.values()[i] == 1.0, m3.values()[i] == 1.0, m10.values()[i] == 1.0);
            if (c && !b) || (b && !a) {
                return Err(precondition!("class masks are not nested at pixel {i}"));
            }
        }
        Ok(ClassMasks { m1, m3, m10, valid, thresholds_dbz })
    }

    pub fn geometry(&self) -> &GridGeometry {
        self.m1.geometry()
    }

    pub fn channels(&self) -> [&Grid; 3] {
        [&self.m1, &self.m3, &self.m10]
    }

    /// Four-interval label: number of masks set at the pixel (0..=3).
    pub fn label(&self, idx: usize) -> u8 {
        self.channels().iter().filter(|m| m.values()[idx] == 1.0).count() as u8
    }

    pub fn is_valid(&self, idx: usize) -> bool {
        self.valid.values()[idx] == 1.0
    }

    /// Label grid (0..=3) as a float grid.
    pub fn labels(&self) -> Grid {
        let values = (0..self.m1.len()).map(|i| f32::from(self.label(i))).collect();
        self.m1.with_values(values).expect("same shape")
    }
}

/// Thresholds reflectivity into nested masks. Nodata pixels are 0 in every
/// mask and 0 in `valid`.
pub fn class_masks(reflectivity: &Grid, thresholds_dbz: [f64; 3]) -> Result<ClassMasks> {
    if !(thresholds_dbz[0] < thresholds_dbz[1] && thresholds_dbz[1] < thresholds_dbz[2]) {
        return Err(precondition!("thresholds must be strictly increasing: {thresholds_dbz:?}"));
    }
    let geo = *reflectivity.geometry();
    let mut bytes: [Vec<u8>; 4] = core::array::from_fn(|_| Vec::with_capacity(geo.len()));
    for &v in reflectivity.values() {
        let valid = !reflectivity.is_nodata_value(v);
        let z = f64::from(v);
        for (k, t) in thresholds_dbz.iter().enumerate() {
            bytes[k].push(u8::from(valid && z >= *t));
        }
        bytes[3].push(u8::from(valid));
    }
    let ts = reflectivity.timestamp();
    let mk = |b: &[u8]| Grid::mask(geo, b).map(|g| g.with_timestamp(ts));
    ClassMasks::new(mk(&bytes[0])?, mk(&bytes[1])?, mk(&bytes[2])?, mk(&bytes[3])?, thresholds_dbz)
}

/// Constant integer translation of the radar raster relative to the SAR
/// image: radar content at `(r, c)` sits over SAR pixel
/// `(r - d_row, c - d_col)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegistrationOffset {
    pub d_row: i32,
    pub d_col: i32,
    pub score: f64,
}

impl RegistrationOffset {
    pub fn new(d_row: i32, d_col: i32) -> Self {
        RegistrationOffset { d_row, d_col, score: 0.0 }
    }

    pub fn negated(self) -> Self {
        RegistrationOffset { d_row: -self.d_row, d_col: -self.d_col, score: self.score }
    }

    pub fn magnitude_px(&self) -> f64 {
        libm::hypot(f64::from(self.d_row), f64::from(self.d_col))
    }
}

/// Finds the translation of `radar` that best matches `sar_feature` by
/// normalized cross-correlation over the valid overlap.
///
/// Candidates are visited by increasing `|d_row| + |d_col|`, then `d_row`,
/// then `d_col`, and only a strictly better score replaces the current
/// best, which implements the tie-breaking order.
pub fn register(sar_feature: &Grid, radar: &Grid, search_radius_px: usize) -> Result<RegistrationOffset> {
    if sar_feature.rows() != radar.rows() || sar_feature.cols() != radar.cols() {
        return Err(precondition!("registration inputs must share geometry"));
    }
    let (rows, cols) = (sar_feature.rows() as i64, sar_feature.cols() as i64);
    let sar = dense(sar_feature);
    let rad = dense(radar);
    if !has_variance(&sar) {
        return Err(Error::NoSignal("SAR feature map is flat".into()));
    }
    if !has_variance(&rad) {
        return Err(Error::NoSignal("radar mask is flat".into()));
    }

    let radius = search_radius_px as i64;
    let mut candidates: Vec<(i64, i64)> = (-radius..=radius)
        .flat_map(|dr| (-radius..=radius).map(move |dc| (dr, dc)))
        .collect();
    candidates.sort_by_key(|&(dr, dc)| (dr.abs() + dc.abs(), dr, dc));

    let mut best: Option<RegistrationOffset> = None;
    for (dr, dc) in candidates {
        let Some(score) = ncc_at(&sar, &rad, rows, cols, dr, dc) else {
            continue;
        };
        if best.map_or(true, |b| score > b.score) {
            best = Some(RegistrationOffset { d_row: dr as i32, d_col: dc as i32, score });
        }
    }
    best.ok_or_else(|| Error::NoSignal("no candidate translation has a varying overlap".into()))
}

fn dense(g: &Grid) -> Vec<Option<f64>> {
    g.values()
        .iter()
        .map(|&v| (!g.is_nodata_value(v)).then(|| f64::from(v)))
        .collect()
}

fn has_variance(v: &[Option<f64>]) -> bool {
    let mut it = v.iter().flatten();
    match it.next() {
        Some(first) => it.any(|x| x != first),
        None => false,
    }
}

/// Pearson correlation between `sar(r, c)` and `radar(r + dr, c + dc)`.
fn ncc_at(sar: &[Option<f64>], rad: &[Option<f64>], rows: i64, cols: i64, dr: i64, dc: i64) -> Option<f64> {
    let (r_lo, r_hi) = ((-dr).max(0), (rows - dr).min(rows));
    let (c_lo, c_hi) = ((-dc).max(0), (cols - dc).min(cols));
    if r_lo >= r_hi || c_lo >= c_hi {
        return None;
    }
    let (mut n, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0f64, 0.0, 0.0, 0.0, 0.0, 0.0);
    for r in r_lo..r_hi {
        let srow = r * cols;
        let rrow = (r + dr) * cols + dc;
        for c in c_lo..c_hi {
            if let (Some(x), Some(y)) = (sar[(srow + c) as usize], rad[(rrow + c) as usize]) {
                n += 1.0;
                sx += x;
                sy += y;
                sxx += x * x;
                syy += y * y;
                sxy += x * y;
            }
        }
    }
    if n < 2.0 {
        return None;
    }
    let vx = sxx - sx * sx / n;
    let vy = syy - sy * sy / n;
    let cov = sxy - sx * sy / n;
    if !(vx > 1e-12 * sxx.abs().max(1e-300) && vy > 1e-12 * syy.abs().max(1e-300)) {
        return None;
    }
    Some((cov / libm::sqrt(vx * vy)).clamp(-1.0, 1.0))
}

/// Moves the radar raster back over the SAR image: `out(r, c) = g(r + d_row,
/// c + d_col)`. Cells with no source become nodata.
pub fn apply_offset(g: &Grid, off: RegistrationOffset) -> Result<Grid> {
    let (rows, cols) = (g.rows() as i64, g.cols() as i64);
    let (dr, dc) = (i64::from(off.d_row), i64::from(off.d_col));
    if dr.abs() > rows || dc.abs() > cols {
        return Err(precondition!("offset ({dr}, {dc}) exceeds grid {rows}x{cols}"));
    }
    let mut values = Vec::with_capacity(g.len());
    for r in 0..rows {
        for c in 0..cols {
            let (sr, sc) = (r + dr, c + dc);
            values.push(if sr >= 0 && sr < rows && sc >= 0 && sc < cols {
                g.get(sr as usize, sc as usize)
            } else {
                g.nodata()
            });
        }
    }
    Grid::from_parts(*g.geometry(), g.dtype(), g.nodata(), g.timestamp(), values)
}

/// Shifts content by `(d_row, d_col)`, the inverse of [`apply_offset`].
pub fn displace(g: &Grid, d_row: i32, d_col: i32) -> Result<Grid> {
    apply_offset(g, RegistrationOffset::new(-d_row, -d_col))
}
