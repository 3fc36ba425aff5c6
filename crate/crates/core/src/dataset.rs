//! Patch dataset construction: colocation pairing, tiling with rejection
//! rules, per-patch registration, swath-level balanced splits and
//! registration-offset statistics.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::koch::{highpass_bank, FilterBankSpec};
use crate::labels::{apply_offset, class_masks, register, ClassMasks, RegistrationOffset, THRESHOLDS_DBZ};
use crate::raster::{tile_windows, Grid};
use crate::rng;

/// Lower edges of the wind bins used for balancing, m/s.
pub const WIND_BIN_EDGES_MPS: [f64; 5] = [0.0, 4.0, 8.0, 12.0, 16.0];
pub const N_REFL_BINS: usize = 4;
pub const N_WIND_BINS: usize = 5;
pub const N_BINS: usize = N_REFL_BINS + N_WIND_BINS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractRules {
    pub tile_px: usize,
    /// Defaults to half the tile.
    pub stride_px: Option<usize>,
    /// Patches with a larger land fraction are rejected.
    pub max_land_fraction: f64,
    /// Patches whose maximum reflectivity is below this are rejected.
    pub min_max_dbz: f64,
    pub max_time_delta_s: f64,
    pub thresholds_dbz: [f64; 3],
}

impl Default for ExtractRules {
    fn default() -> Self {
        ExtractRules {
            tile_px: 256,
            stride_px: None,
            max_land_fraction: 0.5,
            min_max_dbz: 25.0,
            max_time_delta_s: 1200.0,
            thresholds_dbz: THRESHOLDS_DBZ,
        }
    }
}

impl ExtractRules {
    pub fn stride(&self) -> usize {
        self.stride_px.unwrap_or(self.tile_px / 2).max(1)
    }
}

/// Co-projected layers of one SAR swath and its colocated radar scan.
/// Timestamps are taken from the `sigma0_norm` and `reflectivity` grids.
#[derive(Debug, Clone)]
pub struct SwathLayers {
    pub swath_id: String,
    pub sigma0_norm: Grid,
    pub incidence_deg: Vec<f64>,
    pub reflectivity: Grid,
    pub wind: Grid,
    pub land: Grid,
}

impl SwathLayers {
    pub fn time_delta_s(&self) -> f64 {
        (self.sigma0_norm.timestamp() - self.reflectivity.timestamp()) as f64
    }

    fn validate(&self) -> Result<()> {
        let geo = self.sigma0_norm.geometry();
        for (name, g) in [("reflectivity", &self.reflectivity), ("wind", &self.wind), ("land", &self.land)] {
            if !g.geometry().matches(geo) {
                return Err(precondition!("{} layer geometry differs from sigma0 in swath {}", name, self.swath_id));
            }
        }
        if !self.land.is_mask() {
            return Err(precondition!("land layer must be a mask"));
        }
        if self.incidence_deg.len() != geo.cols {
            return Err(precondition!("incidence has {} columns, grid has {}", self.incidence_deg.len(), geo.cols));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Patch {
    pub swath_id: String,
    pub patch_id: String,
    pub row_offset: usize,
    pub col_offset: usize,
    pub sigma0_norm: Grid,
    pub incidence_deg: Vec<f64>,
    pub reflectivity: Grid,
    pub wind: Grid,
    pub land: Grid,
    pub offset_applied: RegistrationOffset,
    pub time_delta_s: f64,
}

pub fn patch_id(row_offset: usize, col_offset: usize) -> String {
    format!("r{row_offset:05}_c{col_offset:05}")
}

impl Patch {
    pub fn land_fraction(&self) -> f64 {
        let n = self.land.values().iter().filter(|&&v| v == 1.0).count();
        n as f64 / self.land.len() as f64
    }

    /// Largest valid reflectivity, `-inf` when the radar saw nothing.
    pub fn max_dbz(&self) -> f64 {
        self.reflectivity.max_valid().map_or(f64::NEG_INFINITY, f64::from)
    }

    /// Targets over this patch: land and radar nodata are invalid.
    pub fn masks(&self, thresholds_dbz: [f64; 3]) -> Result<ClassMasks> {
        let mut m = class_masks(&self.reflectivity, thresholds_dbz)?;
        let valid = Grid::mask_from_fn(*self.land.geometry(), |r, c| m.valid.is_set(r, c) && !self.land.is_set(r, c) && self.sigma0_norm.is_valid(r, c))?;
        let clear = |g: &Grid| Grid::mask_from_fn(*g.geometry(), |r, c| g.is_set(r, c) && valid.is_set(r, c));
        m = ClassMasks::new(clear(&m.m1)?, clear(&m.m3)?, clear(&m.m10)?, valid, thresholds_dbz)?;
        Ok(m)
    }

    /// Re-checks the invariants every emitted patch must satisfy.
    pub fn check(&self, rules: &ExtractRules) -> Result<()> {
        let geo = self.sigma0_norm.geometry();
        for g in [&self.reflectivity, &self.wind, &self.land] {
            if !g.geometry().matches(geo) {
                return Err(Error::Data(format!("patch {}/{} layers disagree in geometry", self.swath_id, self.patch_id)));
            }
        }
        if self.time_delta_s.abs() > rules.max_time_delta_s {
            return Err(Error::Data(format!("patch {}/{} time difference {} s", self.swath_id, self.patch_id, self.time_delta_s)));
        }
        if self.land_fraction() > rules.max_land_fraction {
            return Err(Error::Data(format!("patch {}/{} land fraction {}", self.swath_id, self.patch_id, self.land_fraction())));
        }
        // Registration may push the strongest echo out of the tile, so the
        // reflectivity rule applies to unregistered patches only.
        let unregistered = self.offset_applied.d_row == 0 && self.offset_applied.d_col == 0;
        if unregistered && self.max_dbz() < rules.min_max_dbz {
            return Err(Error::Data(format!("patch {}/{} max reflectivity {}", self.swath_id, self.patch_id, self.max_dbz())));
        }
        Ok(())
    }

    /// Heterogeneity of the normalized backscatter, the SAR side of
    /// registration.
    pub fn sar_feature(&self, bank: &FilterBankSpec) -> Result<Grid> {
        Ok(highpass_bank(&self.sigma0_norm, bank)?.heterogeneity())
    }

    /// Radar side of registration: the lowest class mask as 0/1 floats
    /// with radar nodata kept as nodata.
    pub fn radar_feature(&self, threshold_dbz: f64) -> Grid {
        let nodata = self.reflectivity.nodata();
        self.reflectivity.map(|v| {
            if v == nodata {
                nodata
            } else if f64::from(v) >= threshold_dbz {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn estimate_offset(&self, bank: &FilterBankSpec, threshold_dbz: f64, radius_px: usize) -> Result<RegistrationOffset> {
        register(&self.sar_feature(bank)?, &self.radar_feature(threshold_dbz), radius_px)
    }

    /// Moves the radar layer back by `off`, composing with any offset already
    /// applied.
    pub fn apply_registration(&self, off: RegistrationOffset) -> Result<Patch> {
        let mut out = self.clone();
        out.reflectivity = apply_offset(&self.reflectivity, off)?;
        out.offset_applied = RegistrationOffset {
            d_row: self.offset_applied.d_row + off.d_row,
            d_col: self.offset_applied.d_col + off.d_col,
            score: off.score,
        };
        Ok(out)
    }
}

/// Why a candidate tile was not emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rejection {
    Land,
    LowReflectivity,
}

#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub patches: Vec<Patch>,
    pub rejected: Vec<(String, Rejection)>,
}

/// Tiles a swath and applies the land and reflectivity rejection rules.
/// The time window is checked once for the whole swath.
pub fn extract_patches(layers: &SwathLayers, rules: &ExtractRules) -> Result<Extraction> {
    layers.validate()?;
    let dt = layers.time_delta_s();
    if dt.abs() > rules.max_time_delta_s {
        return Err(precondition!(
            "swath {} is {} s from its radar scan, beyond the {} s window",
            layers.swath_id,
            dt,
            rules.max_time_delta_s
        ));
    }
    let geo = layers.sigma0_norm.geometry();
    let mut out = Extraction::default();
    for (r0, c0) in tile_windows(geo.rows, geo.cols, rules.tile_px, rules.stride())? {
        let t = rules.tile_px;
        let patch = Patch {
            swath_id: layers.swath_id.clone(),
            patch_id: patch_id(r0, c0),
            row_offset: r0,
            col_offset: c0,
            sigma0_norm: layers.sigma0_norm.window(r0, c0, t, t)?,
            incidence_deg: layers.incidence_deg[c0..c0 + t].to_vec(),
            reflectivity: layers.reflectivity.window(r0, c0, t, t)?,
            wind: layers.wind.window(r0, c0, t, t)?,
            land: layers.land.window(r0, c0, t, t)?,
            offset_applied: RegistrationOffset::default(),
            time_delta_s: dt,
        };
        if patch.land_fraction() > rules.max_land_fraction {
            out.rejected.push((patch.patch_id, Rejection::Land));
        } else if patch.max_dbz() < rules.min_max_dbz {
            out.rejected.push((patch.patch_id, Rejection::LowReflectivity));
        } else {
            patch.check(rules)?;
            out.patches.push(patch);
        }
    }
    Ok(out)
}

/// For every SAR acquisition time, the index of the nearest radar scan
/// within `max_dt_s`, if any. Ties go to the earlier scan.
pub fn pair_colocation(sar_times: &[i64], radar_times: &[i64], max_dt_s: f64) -> Vec<Option<usize>> {
    sar_times
        .iter()
        .map(|&t| {
            radar_times
                .iter()
                .enumerate()
                .map(|(j, &rt)| ((t - rt).unsigned_abs(), rt, j))
                .filter(|&(d, _, _)| d as f64 <= max_dt_s)
                .min()
                .map(|(_, _, j)| j)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Subset {
    Train,
    Validation,
    Test,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Train, Subset::Validation, Subset::Test];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Validation => "val",
            Subset::Test => "test",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Subset::ALL.into_iter().find(|x| x.name() == s)
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-swath pixel counts: four reflectivity classes then five wind bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwathHistogram {
    pub swath_id: String,
    pub bins: [u64; N_BINS],
}

pub fn wind_bin(w: f64) -> usize {
    WIND_BIN_EDGES_MPS.iter().rposition(|&e| w >= e).unwrap_or(0)
}

impl SwathHistogram {
    /// Counts valid pixels of the given patches.
    pub fn from_patches(swath_id: &str, patches: &[&Patch], thresholds_dbz: [f64; 3]) -> Result<Self> {
        let mut bins = [0u64; N_BINS];
        for p in patches {
            let masks = p.masks(thresholds_dbz)?;
            for i in 0..masks.m1.len() {
                if !masks.is_valid(i) {
                    continue;
                }
                bins[usize::from(masks.label(i))] += 1;
                if let Some(w) = p.wind.valid_value(i / p.wind.cols(), i % p.wind.cols()) {
                    bins[N_REFL_BINS + wind_bin(f64::from(w))] += 1;
                }
            }
        }
        Ok(SwathHistogram { swath_id: swath_id.into(), bins })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub subsets: BTreeMap<String, Subset>,
    /// `shares[s][b]`: fraction of bin `b`'s pixels that landed in subset
    /// `s`; `None` for globally empty bins.
    pub shares: [[Option<f64>; N_BINS]; 3],
    pub swath_counts: [usize; 3],
    pub objective: f64,
}

impl SplitAssignment {
    pub fn subset_of(&self, swath_id: &str) -> Option<Subset> {
        self.subsets.get(swath_id).copied()
    }
}

struct Balancer<'a> {
    hist: &'a [SwathHistogram],
    totals: [u64; N_BINS],
    fractions: [f64; 3],
    bounds: [(usize, usize); 3],
}

impl Balancer<'_> {
    fn sums(&self, assign: &[usize]) -> [[u64; N_BINS]; 3] {
        let mut s = [[0u64; N_BINS]; 3];
        for (h, &k) in self.hist.iter().zip(assign) {
            for b in 0..N_BINS {
                s[k][b] += h.bins[b];
            }
        }
        s
    }

    fn objective_of(&self, sums: &[[u64; N_BINS]; 3]) -> f64 {
        let mut obj = 0.0;
        for (k, row) in sums.iter().enumerate() {
            for b in 0..N_BINS {
                if self.totals[b] > 0 {
                    obj += (row[b] as f64 / self.totals[b] as f64 - self.fractions[k]).abs();
                }
            }
        }
        obj
    }

    fn objective(&self, assign: &[usize]) -> f64 {
        self.objective_of(&self.sums(assign))
    }

    fn counts(assign: &[usize]) -> [usize; 3] {
        let mut c = [0; 3];
        for &k in assign {
            c[k] += 1;
        }
        c
    }

    fn feasible(&self, counts: &[usize; 3]) -> bool {
        counts.iter().zip(&self.bounds).all(|(&c, &(lo, hi))| c >= lo && c <= hi)
    }
}

/// Assigns whole swaths to train/validation/test so that each subset holds
/// close to its fraction of every reflectivity-class and wind-bin pixel
/// population, with swath counts within one of `fraction * n`.
///
/// Greedy placement in a seed-shuffled, size-descending order is followed
/// by single moves and pairwise swaps until no change lowers the summed
/// absolute deviation of the per-bin shares.
pub fn split_balanced(swaths: &[SwathHistogram], fractions: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    let n = swaths.len();
    if n < 3 {
        return Err(precondition!("need at least 3 swaths to split, got {n}"));
    }
    if fractions.iter().any(|&f| !(f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(precondition!("split fractions must be positive and sum to 1: {fractions:?}"));
    }
    let mut seen = BTreeMap::new();
    for s in swaths {
        if seen.insert(s.swath_id.as_str(), ()).is_some() {
            return Err(precondition!("duplicate swath id {}", s.swath_id));
        }
    }
    let mut totals = [0u64; N_BINS];
    for s in swaths {
        for b in 0..N_BINS {
            totals[b] += s.bins[b];
        }
    }
    let bounds: [(usize, usize); 3] = core::array::from_fn(|k| {
        let t = fractions[k] * n as f64;
        let lo = (libm::ceil(t - 1.0 - 1e-9).max(1.0)) as usize;
        let hi = (libm::floor(t + 1.0 + 1e-9) as usize).min(n);
        (lo, hi.max(lo))
    });
    let bal = Balancer { hist: swaths, totals, fractions, bounds };

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, 0));
    let size = |i: usize| swaths[i].bins[..N_REFL_BINS].iter().sum::<u64>();
    order.sort_by(|&a, &b| size(b).cmp(&size(a)));

    // Greedy: place each swath where the partial objective grows least,
    // keeping enough unplaced swaths to reach every lower bound.
    let mut assign = alloc::vec![usize::MAX; n];
    let mut counts = [0usize; 3];
    for (placed, &i) in order.iter().enumerate() {
        let remaining = n - placed - 1;
        let mut best: Option<(f64, usize)> = None;
        for k in 0..3 {
            if counts[k] >= bounds[k].1 {
                continue;
            }
            let mut c = counts;
            c[k] += 1;
            let deficit: usize = (0..3).map(|m| bounds[m].0.saturating_sub(c[m])).sum();
            if deficit > remaining {
                continue;
            }
            assign[i] = k;
            let partial: Vec<usize> = (0..n).filter(|&j| assign[j] != usize::MAX).collect();
            let mut sums = [[0u64; N_BINS]; 3];
            for &j in &partial {
                for b in 0..N_BINS {
                    sums[assign[j]][b] += swaths[j].bins[b];
                }
            }
            // Compare shares against the fraction of pixels placed so far.
            let placed_totals: [u64; N_BINS] = core::array::from_fn(|b| sums.iter().map(|r| r[b]).sum());
            let mut obj = 0.0;
            for (m, row) in sums.iter().enumerate() {
                for b in 0..N_BINS {
                    if placed_totals[b] > 0 {
                        obj += (row[b] as f64 / placed_totals[b] as f64 - fractions[m]).abs();
                    }
                }
            }
            assign[i] = usize::MAX;
            if best.map_or(true, |(o, _)| obj < o) {
                best = Some((obj, k));
            }
        }
        let (_, k) = best.ok_or_else(|| precondition!("swath-count bounds are infeasible"))?;
        assign[i] = k;
        counts[k] += 1;
    }

    // Local search over moves and swaps.
    let mut current = bal.objective(&assign);
    loop {
        let mut improved = false;
        for i in 0..n {
            for k in 0..3 {
                if assign[i] == k {
                    continue;
                }
                let old = assign[i];
                assign[i] = k;
                let c = Balancer::counts(&assign);
                let obj = if bal.feasible(&c) { bal.objective(&assign) } else { f64::INFINITY };
                if obj < current - 1e-12 {
                    current = obj;
                    improved = true;
                } else {
                    assign[i] = old;
                }
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                if assign[i] == assign[j] {
                    continue;
                }
                assign.swap(i, j);
                let obj = bal.objective(&assign);
                if obj < current - 1e-12 {
                    current = obj;
                    improved = true;
                } else {
                    assign.swap(i, j);
                }
            }
        }
        if !improved {
            break;
        }
    }

    let sums = bal.sums(&assign);
    let shares = core::array::from_fn(|k| core::array::from_fn(|b| (totals[b] > 0).then(|| sums[k][b] as f64 / totals[b] as f64)));
    let subsets = swaths.iter().zip(&assign).map(|(s, &k)| (s.swath_id.clone(), Subset::ALL[k])).collect();
    Ok(SplitAssignment { subsets, shares, swath_counts: Balancer::counts(&assign), objective: current })
}

/// Coefficients of determination of the registration offsets against
/// station geometry and wind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetStats {
    /// `|offset|` against station distance.
    pub r2_distance: f64,
    /// Offset bearing against the station-to-patch bearing, over non-zero
    /// offsets; `None` when fewer than three offsets have a direction.
    pub r2_direction: Option<f64>,
    /// `|offset|` against wind speed.
    pub r2_wind: f64,
    pub n: usize,
}

/// OLS R² of `y` on `x`. A constant regressor is an error; a constant
/// response with a varying regressor explains nothing and gives 0.
pub fn r_squared(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if !(sxx > 1e-12 * x.iter().map(|v| v * v).sum::<f64>().max(1e-300)) {
        return Err(Error::UndefinedMetric("regressor has zero variance".into()));
    }
    if syy <= 1e-24 * y.iter().map(|v| v * v).sum::<f64>().max(1e-300) {
        return Ok(0.0);
    }
    Ok((sxy * sxy / (sxx * syy)).clamp(0.0, 1.0))
}

/// Bearing of an image-space offset in degrees clockwise from north, rows
/// increasing southward.
pub fn offset_bearing_deg(off: &RegistrationOffset) -> f64 {
    let b = libm::atan2(f64::from(off.d_col), -f64::from(off.d_row)).to_degrees();
    if b < 0.0 {
        b + 360.0
    } else {
        b
    }
}

pub fn registration_stats(
    offsets: &[RegistrationOffset],
    distances_km: &[f64],
    winds_mps: &[f64],
    radial_bearings_deg: Option<&[f64]>,
) -> Result<OffsetStats> {
    let n = offsets.len();
    if distances_km.len() != n || winds_mps.len() != n || radial_bearings_deg.is_some_and(|b| b.len() != n) {
        return Err(precondition!("registration statistics need equal-length inputs"));
    }
    if n < 3 {
        return Err(precondition!("registration statistics need at least 3 offsets, got {n}"));
    }
    let mag: Vec<f64> = offsets.iter().map(RegistrationOffset::magnitude_px).collect();
    let r2_distance = r_squared(distances_km, &mag)?;
    let r2_wind = r_squared(winds_mps, &mag)?;
    let r2_direction = match radial_bearings_deg {
        None => None,
        Some(bearings) => {
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for (off, &radial) in offsets.iter().zip(bearings) {
                if off.d_row == 0 && off.d_col == 0 {
                    continue;
                }
                // Unwrap the offset bearing to within 180 degrees of the regressor.
                let mut b = offset_bearing_deg(off);
                while b - radial > 180.0 {
                    b -= 360.0;
                }
                while radial - b > 180.0 {
                    b += 360.0;
                }
                xs.push(radial);
                ys.push(b);
            }
            if xs.len() < 3 {
                None
            } else {
                Some(r_squared(&xs, &ys)?)
            }
        }
    };
    Ok(OffsetStats { r2_distance, r2_direction, r2_wind, n })
}
