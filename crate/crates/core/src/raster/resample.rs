use alloc::vec::Vec;

use super::{DType, Grid, GridGeometry};
use crate::error::{precondition, Result};

/// Aggregation kernel used when coarsening a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMethod {
    /// Mean of the valid cells of each block; an all-nodata block is nodata.
    BlockMean,
    /// Top-left cell of each block.
    Nearest,
}

/// Coarsens `g` to `target_spacing_m`.
///
/// Output dimensions are `ceil(n / factor)`; trailing partial blocks are
/// averaged over the cells they contain. Masks must use `Nearest`.
pub fn resample(g: &Grid, target_spacing_m: f64, method: ResampleMethod) -> Result<Grid> {
    let spacing = g.pixel_spacing_m();
    if !(target_spacing_m.is_finite() && target_spacing_m > 0.0) {
        return Err(precondition!("target spacing must be positive, got {target_spacing_m}"));
    }
    let factor = target_spacing_m / spacing;
    if factor < 1.0 - 1e-9 {
        return Err(precondition!(
            "upsampling is not supported ({spacing} m -> {target_spacing_m} m)"
        ));
    }
    let rounded = libm::round(factor);
    let integral = (factor - rounded).abs() <= 1e-9 * factor;

    match method {
        ResampleMethod::BlockMean => {
            if g.dtype() == DType::U8 {
                return Err(precondition!("mask grids must be resampled with nearest"));
            }
            if !integral {
                return Err(precondition!(
                    "block mean needs an integer factor, got {factor} ({spacing} m -> {target_spacing_m} m)"
                ));
            }
            Ok(block_mean(g, rounded as usize, target_spacing_m))
        }
        ResampleMethod::Nearest => {
            let factor = if integral { rounded } else { factor };
            Ok(nearest(g, factor, target_spacing_m))
        }
    }
}

fn out_geometry(g: &Grid, rows: usize, cols: usize, spacing: f64) -> GridGeometry {
    GridGeometry {
        rows,
        cols,
        pixel_spacing_m: spacing,
        ..*g.geometry()
    }
}

fn block_mean(g: &Grid, k: usize, spacing: f64) -> Grid {
    if k == 1 {
        return g.clone();
    }
    let rows = g.rows().div_ceil(k);
    let cols = g.cols().div_ceil(k);
    let mut values = Vec::with_capacity(rows * cols);
    for br in 0..rows {
        for bc in 0..cols {
            let mut sum = 0.0f64;
            let mut n = 0usize;
            for r in br * k..((br + 1) * k).min(g.rows()) {
                for c in bc * k..((bc + 1) * k).min(g.cols()) {
                    if let Some(v) = g.valid_value(r, c) {
                        sum += f64::from(v);
                        n += 1;
                    }
                }
            }
            values.push(if n == 0 { g.nodata() } else { (sum / n as f64) as f32 });
        }
    }
    Grid::from_parts(out_geometry(g, rows, cols, spacing), g.dtype(), g.nodata(), g.timestamp(), values)
        .expect("block mean preserves grid invariants")
}

fn nearest(g: &Grid, factor: f64, spacing: f64) -> Grid {
    let dim = |n: usize| (libm::ceil(n as f64 / factor - 1e-9) as usize).max(1);
    let (rows, cols) = (dim(g.rows()), dim(g.cols()));
    let src = |i: usize, n: usize| (libm::floor(i as f64 * factor + 1e-9) as usize).min(n - 1);
    let mut values = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let sr = src(r, g.rows());
        for c in 0..cols {
            values.push(g.get(sr, src(c, g.cols())));
        }
    }
    Grid::from_parts(out_geometry(g, rows, cols, spacing), g.dtype(), g.nodata(), g.timestamp(), values)
        .expect("nearest preserves grid invariants")
}
