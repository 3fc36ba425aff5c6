//! Georeferenced single-band rasters and the operations shared by every
//! other module: resampling, tiling and coastal distance.

mod distance;
mod resample;
mod tile;

pub use distance::{distance_to_coast, DEFAULT_COAST_CAP_KM};
pub use resample::{resample, ResampleMethod};
pub use tile::{tile, tile_offsets, tile_windows, Tile};

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Result};

/// Mean Earth radius used by the flat local-tangent approximation.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Meters spanned by one degree of latitude.
pub const METERS_PER_DEGREE: f64 = core::f64::consts::PI * EARTH_RADIUS_M / 180.0;

/// Default nodata sentinel for float grids.
pub const FLOAT_NODATA: f32 = -9999.0;

/// Nodata sentinel for mask grids.
pub const MASK_NODATA: f32 = 255.0;

/// Storage type of a grid's payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    F32,
    U8,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::U8 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::U8),
            _ => None,
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }
}

/// Georeferencing subset of a [`Grid`]: shape, square pixel spacing and the
/// latitude/longitude of the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub rows: usize,
    pub cols: usize,
    pub pixel_spacing_m: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
}

impl GridGeometry {
    pub fn new(rows: usize, cols: usize, pixel_spacing_m: f64) -> Result<Self> {
        Self::with_origin(rows, cols, pixel_spacing_m, 0.0, 0.0)
    }

    pub fn with_origin(
        rows: usize,
        cols: usize,
        pixel_spacing_m: f64,
        origin_lat: f64,
        origin_lon: f64,
    ) -> Result<Self> {
        let g = GridGeometry {
            rows,
            cols,
            pixel_spacing_m,
            origin_lat,
            origin_lon,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(precondition!("grid dimensions must be positive, got {}x{}", self.rows, self.cols));
        }
        if !(self.pixel_spacing_m.is_finite() && self.pixel_spacing_m > 0.0) {
            return Err(precondition!("pixel spacing must be positive, got {}", self.pixel_spacing_m));
        }
        if !(self.origin_lat.is_finite() && self.origin_lon.is_finite()) {
            return Err(precondition!("origin must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same shape and spacing, origin within a micro-degree.
    pub fn matches(&self, other: &GridGeometry) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && (self.pixel_spacing_m - other.pixel_spacing_m).abs() <= 1e-9 * self.pixel_spacing_m
            && (self.origin_lat - other.origin_lat).abs() <= 1e-6
            && (self.origin_lon - other.origin_lon).abs() <= 1e-6
    }

    fn meters_per_degree_lon(&self) -> f64 {
        METERS_PER_DEGREE * libm::cos(self.origin_lat.to_radians())
    }

    /// Latitude/longitude of the top-left corner of pixel `(row, col)`.
    pub fn pixel_to_latlon(&self, row: f64, col: f64) -> (f64, f64) {
        let lat = self.origin_lat - row * self.pixel_spacing_m / METERS_PER_DEGREE;
        let lon = self.origin_lon + col * self.pixel_spacing_m / self.meters_per_degree_lon();
        (lat, lon)
    }

    /// Fractional pixel coordinates of a position.
    pub fn latlon_to_pixel(&self, lat: f64, lon: f64) -> (f64, f64) {
        let row = (self.origin_lat - lat) * METERS_PER_DEGREE / self.pixel_spacing_m;
        let col = (lon - self.origin_lon) * self.meters_per_degree_lon() / self.pixel_spacing_m;
        (row, col)
    }

    /// Pixel containing a position, if it falls inside the grid.
    pub fn locate(&self, lat: f64, lon: f64) -> Option<(usize, usize)> {
        let (r, c) = self.latlon_to_pixel(lat, lon);
        if !(r.is_finite() && c.is_finite()) || r < 0.0 || c < 0.0 {
            return None;
        }
        let (r, c) = (libm::floor(r) as usize, libm::floor(c) as usize);
        (r < self.rows && c < self.cols).then_some((r, c))
    }

    /// Geometry of the window starting at `(row, col)`.
    pub fn window(&self, row: usize, col: usize, rows: usize, cols: usize) -> GridGeometry {
        let (lat, lon) = self.pixel_to_latlon(row as f64, col as f64);
        GridGeometry {
            rows,
            cols,
            pixel_spacing_m: self.pixel_spacing_m,
            origin_lat: lat,
            origin_lon: lon,
        }
    }
}

/// A georeferenced single-band raster stored row-major.
///
/// Mask grids (`DType::U8`) only ever hold 0, 1 or their nodata value. Float
/// payloads are kept bit-for-bit, including NaN payloads.
#[derive(Debug, Clone)]
pub struct Grid {
    geometry: GridGeometry,
    timestamp: i64,
    nodata: f32,
    dtype: DType,
    values: Vec<f32>,
}

impl Grid {
    /// Float grid from row-major values.
    pub fn new(geometry: GridGeometry, values: Vec<f32>) -> Result<Self> {
        Self::from_parts(geometry, DType::F32, FLOAT_NODATA, 0, values)
    }

    /// Builds a grid and checks every invariant.
    pub fn from_parts(
        geometry: GridGeometry,
        dtype: DType,
        nodata: f32,
        timestamp: i64,
        values: Vec<f32>,
    ) -> Result<Self> {
        geometry.validate()?;
        if values.len() != geometry.len() {
            return Err(precondition!(
                "payload holds {} values, expected {}x{} = {}",
                values.len(),
                geometry.rows,
                geometry.cols,
                geometry.len()
            ));
        }
        if dtype == DType::U8 {
            if !(nodata >= 0.0 && nodata <= 255.0 && libm::truncf(nodata) == nodata) || nodata <= 1.0 {
                return Err(precondition!("mask nodata must be an integer in 2..=255, got {nodata}"));
            }
            if let Some(v) = values.iter().find(|&&v| v != 0.0 && v != 1.0 && v != nodata) {
                return Err(precondition!("mask grid holds value {v}, expected 0, 1 or nodata"));
            }
        }
        Ok(Grid {
            geometry,
            timestamp,
            nodata,
            dtype,
            values,
        })
    }

    pub fn filled(geometry: GridGeometry, value: f32) -> Result<Self> {
        Self::new(geometry, alloc::vec![value; geometry.len()])
    }

    pub fn from_fn(geometry: GridGeometry, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        geometry.validate()?;
        let mut values = Vec::with_capacity(geometry.len());
        for r in 0..geometry.rows {
            for c in 0..geometry.cols {
                values.push(f(r, c));
            }
        }
        Self::new(geometry, values)
    }

    /// Mask grid from a predicate.
    pub fn mask_from_fn(geometry: GridGeometry, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        geometry.validate()?;
        let mut values = Vec::with_capacity(geometry.len());
        for r in 0..geometry.rows {
            for c in 0..geometry.cols {
                values.push(if f(r, c) { 1.0 } else { 0.0 });
            }
        }
        Self::from_parts(geometry, DType::U8, MASK_NODATA, 0, values)
    }

    /// Mask grid from raw bytes (0, 1 or 255).
    pub fn mask(geometry: GridGeometry, bytes: &[u8]) -> Result<Self> {
        let values = bytes.iter().map(|&b| f32::from(b)).collect();
        Self::from_parts(geometry, DType::U8, MASK_NODATA, 0, values)
    }

    pub fn with_timestamp(mut self, timestamp: i64) -> Self {
        self.timestamp = timestamp;
        self
    }

    /// Replaces the nodata sentinel. Existing values are not rewritten.
    pub fn with_nodata(self, nodata: f32) -> Result<Self> {
        Self::from_parts(self.geometry, self.dtype, nodata, self.timestamp, self.values)
    }

    pub fn with_geometry(mut self, geometry: GridGeometry) -> Result<Self> {
        if geometry.rows != self.geometry.rows || geometry.cols != self.geometry.cols {
            return Err(precondition!("geometry change may not alter the shape"));
        }
        geometry.validate()?;
        self.geometry = geometry;
        Ok(self)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn rows(&self) -> usize {
        self.geometry.rows
    }

    pub fn cols(&self) -> usize {
        self.geometry.cols
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn pixel_spacing_m(&self) -> f64 {
        self.geometry.pixel_spacing_m
    }

    pub fn timestamp(&self) -> i64 {
        self.timestamp
    }

    pub fn nodata(&self) -> f32 {
        self.nodata
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn is_mask(&self) -> bool {
        self.dtype == DType::U8
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// Mutable access to a float payload. Masks are rebuilt through their
    /// constructors instead so the value set stays closed.
    pub fn values_mut(&mut self) -> Result<&mut [f32]> {
        if self.is_mask() {
            return Err(precondition!("mask grids are not mutable in place"));
        }
        Ok(&mut self.values)
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.geometry.cols + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[self.index(row, col)]
    }

    #[inline]
    pub fn is_nodata_value(&self, v: f32) -> bool {
        v.is_nan() || v.to_bits() == self.nodata.to_bits() || v == self.nodata
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        !self.is_nodata_value(self.get(row, col))
    }

    /// Value at `(row, col)` unless it is nodata.
    #[inline]
    pub fn valid_value(&self, row: usize, col: usize) -> Option<f32> {
        let v = self.get(row, col);
        (!self.is_nodata_value(v)).then_some(v)
    }

    /// True when the mask pixel is set (value 1).
    #[inline]
    pub fn is_set(&self, row: usize, col: usize) -> bool {
        self.get(row, col) == 1.0
    }

    pub fn count_valid(&self) -> usize {
        self.values.iter().filter(|&&v| !self.is_nodata_value(v)).count()
    }

    /// Largest valid value, if any.
    pub fn max_valid(&self) -> Option<f32> {
        self.values
            .iter()
            .copied()
            .filter(|&v| !self.is_nodata_value(v))
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f32| a.max(v))))
    }

    /// Mean of the valid values, if any.
    pub fn mean_valid(&self) -> Option<f64> {
        let (sum, n) = self
            .values
            .iter()
            .filter(|&&v| !self.is_nodata_value(v))
            .fold((0.0f64, 0usize), |(s, n), &v| (s + f64::from(v), n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    /// Copy of a rectangular window; the result is georeferenced at its own
    /// top-left corner.
    pub fn window(&self, row: usize, col: usize, rows: usize, cols: usize) -> Result<Grid> {
        if rows == 0 || cols == 0 || row + rows > self.rows() || col + cols > self.cols() {
            return Err(precondition!(
                "window {rows}x{cols} at ({row},{col}) exceeds grid {}x{}",
                self.rows(),
                self.cols()
            ));
        }
        let mut values = Vec::with_capacity(rows * cols);
        for r in row..row + rows {
            let start = self.index(r, col);
            values.extend_from_slice(&self.values[start..start + cols]);
        }
        Ok(Grid {
            geometry: self.geometry.window(row, col, rows, cols),
            timestamp: self.timestamp,
            nodata: self.nodata,
            dtype: self.dtype,
            values,
        })
    }

    /// Element-wise map onto a float grid with the same metadata.
    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Grid {
        Grid {
            geometry: self.geometry,
            timestamp: self.timestamp,
            nodata: if self.is_mask() { FLOAT_NODATA } else { self.nodata },
            dtype: DType::F32,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Same metadata, new float payload.
    pub fn with_values(&self, values: Vec<f32>) -> Result<Grid> {
        let nodata = if self.is_mask() { FLOAT_NODATA } else { self.nodata };
        Grid::from_parts(self.geometry, DType::F32, nodata, self.timestamp, values)
    }

    /// Bit-level equality of header and payload.
    pub fn bit_eq(&self, other: &Grid) -> bool {
        self.geometry.rows == other.geometry.rows
            && self.geometry.cols == other.geometry.cols
            && self.geometry.pixel_spacing_m.to_bits() == other.geometry.pixel_spacing_m.to_bits()
            && self.geometry.origin_lat.to_bits() == other.geometry.origin_lat.to_bits()
            && self.geometry.origin_lon.to_bits() == other.geometry.origin_lon.to_bits()
            && self.timestamp == other.timestamp
            && self.nodata.to_bits() == other.nodata.to_bits()
            && self.dtype == other.dtype
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
