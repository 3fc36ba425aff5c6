use alloc::vec;
use alloc::vec::Vec;

use super::{DType, Grid, FLOAT_NODATA};
use crate::error::{precondition, Result};

/// Distance assigned where no land lies within reach.
pub const DEFAULT_COAST_CAP_KM: f64 = 100.0;

/// Euclidean distance in kilometers from every pixel to the nearest land
/// pixel (mask value 1), capped at `cap_km`.
///
/// Exact two-pass squared distance transform (lower envelope of parabolas,
/// first down the columns then along the rows). Nodata mask cells count as
/// water.
pub fn distance_to_coast(land_mask: &Grid, cap_km: f64) -> Result<Grid> {
    if land_mask.dtype() != DType::U8 {
        return Err(precondition!("distance to coast needs a mask grid"));
    }
    if !(cap_km > 0.0) {
        return Err(precondition!("distance cap must be positive, got {cap_km}"));
    }
    let (rows, cols) = (land_mask.rows(), land_mask.cols());
    let mut d2: Vec<f64> = land_mask
        .values()
        .iter()
        .map(|&v| if v == 1.0 { 0.0 } else { f64::INFINITY })
        .collect();

    let n = rows.max(cols);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut scratch = Envelope::with_capacity(n);

    for c in 0..cols {
        for r in 0..rows {
            f[r] = d2[r * cols + c];
        }
        scratch.transform(&f[..rows], &mut out[..rows]);
        for r in 0..rows {
            d2[r * cols + c] = out[r];
        }
    }
    for r in 0..rows {
        let row = &mut d2[r * cols..(r + 1) * cols];
        f[..cols].copy_from_slice(row);
        scratch.transform(&f[..cols], &mut out[..cols]);
        row.copy_from_slice(&out[..cols]);
    }

    let km_per_px = land_mask.pixel_spacing_m() / 1000.0;
    let values = d2
        .into_iter()
        .map(|d| {
            let km = libm::sqrt(d) * km_per_px;
            km.min(cap_km) as f32
        })
        .collect();
    Grid::from_parts(*land_mask.geometry(), DType::F32, FLOAT_NODATA, land_mask.timestamp(), values)
}

struct Envelope {
    sites: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Envelope {
            sites: vec![0; n],
            bounds: vec![0.0; n + 1],
        }
    }

    /// One-dimensional squared distance transform of the sampled function
    /// `f` (infinite where there is no site).
    fn transform(&mut self, f: &[f64], out: &mut [f64]) {
        let mut first = None;
        let mut k = 0usize;
        for q in 0..f.len() {
            if !f[q].is_finite() {
                continue;
            }
            if first.is_none() {
                first = Some(q);
                self.sites[0] = q;
                self.bounds[0] = f64::NEG_INFINITY;
                self.bounds[1] = f64::INFINITY;
                continue;
            }
            let qf = q as f64;
            let mut s;
            loop {
                let v = self.sites[k];
                let vf = v as f64;
                s = ((f[q] + qf * qf) - (f[v] + vf * vf)) / (2.0 * qf - 2.0 * vf);
                if s <= self.bounds[k] && k > 0 {
                    k -= 1;
                } else {
                    break;
                }
            }
            k += 1;
            self.sites[k] = q;
            self.bounds[k] = s;
            self.bounds[k + 1] = f64::INFINITY;
        }
        if first.is_none() {
            out.fill(f64::INFINITY);
            return;
        }
        let mut k = 0usize;
        for (p, o) in out.iter_mut().enumerate() {
            while self.bounds[k + 1] < p as f64 {
                k += 1;
            }
            let v = self.sites[k];
            let d = p as f64 - v as f64;
            *o = d * d + f[v];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GridGeometry;
    use proptest::prelude::*;

    fn brute_force(mask: &Grid, cap_km: f64) -> Vec<f32> {
        let (rows, cols) = (mask.rows(), mask.cols());
        let land: Vec<(i64, i64)> = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .filter(|&(r, c)| mask.is_set(r, c))
            .map(|(r, c)| (r as i64, c as i64))
            .collect();
        let km_per_px = mask.pixel_spacing_m() / 1000.0;
        (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r as i64, c as i64)))
            .map(|(r, c)| {
                let best = land
                    .iter()
                    .map(|&(lr, lc)| (lr - r) * (lr - r) + (lc - c) * (lc - c))
                    .min();
                match best {
                    Some(d2) => (libm::sqrt(d2 as f64) * km_per_px).min(cap_km) as f32,
                    None => cap_km as f32,
                }
            })
            .collect()
    }

    #[test]
    fn all_ocean_gets_cap() {
        let m = Grid::mask(GridGeometry::new(5, 7, 1000.0).unwrap(), &[0; 35]).unwrap();
        let d = distance_to_coast(&m, DEFAULT_COAST_CAP_KM).unwrap();
        assert!(d.values().iter().all(|&v| v == 100.0));
    }

    #[test]
    fn three_four_five() {
        let geo = GridGeometry::new(6, 6, 1000.0).unwrap();
        let m = Grid::mask_from_fn(geo, |r, c| r == 0 && c == 0).unwrap();
        let d = distance_to_coast(&m, DEFAULT_COAST_CAP_KM).unwrap();
        assert_eq!(d.get(3, 4), 5.0);
        assert_eq!(d.get(0, 0), 0.0);
    }

    #[test]
    fn rejects_float_grid() {
        let g = Grid::filled(GridGeometry::new(2, 2, 1.0).unwrap(), 1.0).unwrap();
        assert!(distance_to_coast(&g, 100.0).is_err());
    }

    proptest! {
        #[test]
        fn matches_brute_force(rows in 1usize..40, cols in 1usize..40, density in 0u32..30, seed in any::<u64>()) {
            let mut s = seed | 1;
            let bytes: Vec<u8> = (0..rows * cols).map(|_| {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                u8::from((s % 100) < u64::from(density))
            }).collect();
            let m = Grid::mask(GridGeometry::new(rows, cols, 250.0).unwrap(), &bytes).unwrap();
            let fast = distance_to_coast(&m, 5.0).unwrap();
            let slow = brute_force(&m, 5.0);
            prop_assert_eq!(fast.values(), &slow[..]);
        }
    }

    #[test]
    fn matches_brute_force_64() {
        let geo = GridGeometry::new(64, 64, 400.0).unwrap();
        let m = Grid::mask_from_fn(geo, |r, c| (r * 7 + c * 13) % 97 == 0 || (c > 50 && r < 10)).unwrap();
        let fast = distance_to_coast(&m, DEFAULT_COAST_CAP_KM).unwrap();
        assert_eq!(fast.values(), &brute_force(&m, DEFAULT_COAST_CAP_KM)[..]);
    }
}
