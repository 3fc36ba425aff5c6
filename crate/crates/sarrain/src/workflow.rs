//! File-to-file pipeline stages. Each stage reads the layout written by the
//! previous one and writes its outputs under a single directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use sarrain_core::corpus::{corpus_swath, swath_config, CorpusConfig};
use sarrain_core::dataset::{
    extract_patches, registration_stats, split_balanced, ExtractRules, OffsetStats, Patch, SplitAssignment, Subset,
    SwathHistogram, SwathLayers,
};
use sarrain_core::evaluate::{baseline_sweep, threshold_grid, Scores};
use sarrain_core::glm::{group_flashes, haversine_km, rasterize_lightning, Connectivity, LightningEvent};
use sarrain_core::koch::{
    forward_responses, highpass_bank, Activation, FilterBankSpec, KochParams, Prediction,
};
use sarrain_core::labels::{ClassMasks, RegistrationOffset};
use sarrain_core::metrics::{labels_from_channels, mean_std, stratified, StratifiedCurve};
use sarrain_core::preproc::Gmf;
use sarrain_core::raster::{distance_to_coast, resample, ResampleMethod, DEFAULT_COAST_CAP_KM};
use sarrain_core::synth::{gen_scene, SceneConfig};
use sarrain_core::train::{train, TrainConfig, TrainHistory, TrainingSample};
use sarrain_core::Grid;

use crate::error::{Error, Result, WithPath};
use crate::formats::{
    history_rows, mean_std_text, read_csv, write_csv, write_csv_with_header, write_json, ManifestRow, OverrideRow,
    ReportRow,
};
use crate::store::{self, layer_path, read_masks, read_patch, write_patch, Dataset};

/// Resolutions evaluated in the experiments (m/px).
pub const RESOLUTIONS_M: [f64; 4] = [100.0, 200.0, 400.0, 800.0];
/// Koch models are not run on finer products.
pub const KOCH_MIN_RESOLUTION_M: f64 = 200.0;
/// Ground size of a patch edge, giving 256 px at 100 m/px.
pub const PATCH_EDGE_M: f64 = 25_600.0;
pub const SHIFTS_FILE: &str = "injected_shifts.csv";
pub const SPLIT_FILE: &str = "split.json";

pub fn tile_px_for(resolution_m: f64) -> usize {
    (PATCH_EDGE_M / resolution_m).round().max(1.0) as usize
}

pub fn check_resolution(resolution_m: f64, koch: bool) -> Result<()> {
    if !RESOLUTIONS_M.contains(&resolution_m) {
        return Err(Error::Usage(format!("resolution must be one of 100, 200, 400, 800 m/px, got {resolution_m}")));
    }
    if koch && resolution_m < KOCH_MIN_RESOLUTION_M {
        return Err(Error::Usage(format!(
            "Koch models are only used down to {KOCH_MIN_RESOLUTION_M} m/px, got {resolution_m}"
        )));
    }
    Ok(())
}

fn data_error(path: &Path, msg: String) -> Error {
    Error::at(path, sarrain_core::Error::Data(msg))
}

// ---------------------------------------------------------------- synth

/// Writes one synthetic swath directory; the radar grid lags by `radar_lag_s`.
pub fn synth_scene(cfg: &SceneConfig, gmf: &impl Gmf, radar_lag_s: i64, out: &Path) -> Result<()> {
    let scene = gen_scene(cfg, gmf).at(out)?;
    store::swath::write_scene(out, &scene, cfg.timestamp - radar_lag_s)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CorpusSummary {
    pub swaths: usize,
    pub patches: usize,
    pub rejected: usize,
    pub shifts: Vec<OverrideRow>,
}

/// Generates a patch dataset directly in the dataset layout. Injected radar
/// shifts are listed in `injected_shifts.csv` with the override columns.
pub fn synth_corpus(cfg: &CorpusConfig, gmf: &(impl Gmf + Sync), out: &Path) -> Result<CorpusSummary> {
    cfg.validate().at(out)?;
    let thresholds = cfg.rules.thresholds_dbz;
    let per_swath: Vec<(Vec<ManifestRow>, Vec<OverrideRow>, usize)> = (0..cfg.n_swaths)
        .into_par_iter()
        .map(|k| {
            let sw = corpus_swath(cfg, k, gmf).at(out)?;
            let mut rows = Vec::new();
            let mut shifts = Vec::new();
            for cp in &sw.patches {
                let masks = cp.patch.masks(thresholds).at(out)?;
                rows.push(write_patch(out, &cp.patch, &masks)?);
                if let Some(off) = cp.injected {
                    shifts.push(OverrideRow {
                        swath: sw.swath_id.clone(),
                        patch: cp.patch.patch_id.clone(),
                        d_row: off.d_row,
                        d_col: off.d_col,
                    });
                }
            }
            Ok((rows, shifts, sw.rejected.len()))
        })
        .collect::<Result<_>>()?;
    let mut summary = CorpusSummary { swaths: cfg.n_swaths, ..CorpusSummary::default() };
    let mut rows = Vec::new();
    for (r, s, rej) in per_swath {
        summary.patches += r.len();
        summary.rejected += rej;
        rows.extend(r);
        summary.shifts.extend(s);
    }
    Dataset { root: out.to_path_buf(), rows }.save()?;
    if cfg.max_shift_px > 0 {
        write_csv_with_header(&out.join(SHIFTS_FILE), &["swath", "patch", "d_row", "d_col"], &summary.shifts)?;
    }
    let configs: Vec<SceneConfig> = (0..cfg.n_swaths).map(|k| swath_config(cfg, k).0).collect();
    write_json(&out.join("swath_configs.json"), &configs)?;
    Ok(summary)
}

// -------------------------------------------------------------- extract

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq, PartialOrd, Ord)]
pub struct ExclusionRow {
    pub swath: String,
    pub patch: String,
}

fn resample_incidence(inc: &[f64], factor: usize) -> Vec<f64> {
    inc.chunks(factor).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

/// Brings swath layers to `resolution_m`: block mean for continuous layers,
/// nearest for the land mask.
pub fn resample_layers(layers: SwathLayers, resolution_m: f64) -> sarrain_core::Result<SwathLayers> {
    let spacing = layers.sigma0_norm.pixel_spacing_m();
    if spacing == resolution_m {
        return Ok(layers);
    }
    let block = |g: &Grid| resample(g, resolution_m, ResampleMethod::BlockMean);
    let sigma0_norm = block(&layers.sigma0_norm)?;
    let factor = (resolution_m / spacing).round() as usize;
    Ok(SwathLayers {
        incidence_deg: resample_incidence(&layers.incidence_deg, factor),
        reflectivity: block(&layers.reflectivity)?,
        wind: block(&layers.wind)?,
        land: resample(&layers.land, resolution_m, ResampleMethod::Nearest)?,
        sigma0_norm,
        swath_id: layers.swath_id,
    })
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ExtractSummary {
    pub swaths: usize,
    pub patches: usize,
    pub rejected_land: usize,
    pub rejected_reflectivity: usize,
    pub excluded: usize,
}

pub fn extract(
    swath_dirs: &[PathBuf],
    gmf: &(impl Gmf + Sync),
    resolution_m: f64,
    rules: &ExtractRules,
    exclude: &BTreeSet<ExclusionRow>,
    out: &Path,
) -> Result<ExtractSummary> {
    use sarrain_core::dataset::Rejection;
    let per_swath: Vec<(Vec<ManifestRow>, ExtractSummary)> = swath_dirs
        .par_iter()
        .map(|dir| {
            let layers = store::swath::read_layers(dir, gmf)?;
            let layers = resample_layers(layers, resolution_m).at(dir)?;
            let ex = extract_patches(&layers, rules).at(dir)?;
            let mut s = ExtractSummary { swaths: 1, ..ExtractSummary::default() };
            for (_, why) in &ex.rejected {
                match why {
                    Rejection::Land => s.rejected_land += 1,
                    Rejection::LowReflectivity => s.rejected_reflectivity += 1,
                }
            }
            let mut rows = Vec::new();
            for p in &ex.patches {
                let key = ExclusionRow { swath: p.swath_id.clone(), patch: p.patch_id.clone() };
                if exclude.contains(&key) {
                    s.excluded += 1;
                    continue;
                }
                let masks = p.masks(rules.thresholds_dbz).at(dir)?;
                rows.push(write_patch(out, p, &masks)?);
            }
            s.patches = rows.len();
            Ok((rows, s))
        })
        .collect::<Result<_>>()?;
    let mut total = ExtractSummary::default();
    let mut rows = Vec::new();
    for (r, s) in per_swath {
        rows.extend(r);
        total.swaths += s.swaths;
        total.patches += s.patches;
        total.rejected_land += s.rejected_land;
        total.rejected_reflectivity += s.rejected_reflectivity;
        total.excluded += s.excluded;
    }
    Dataset { root: out.to_path_buf(), rows }.save()?;
    Ok(total)
}

// ---------------------------------------------------------------- split

/// Assigns whole swaths to subsets and records the subset in the manifest.
pub fn split(data: &Path, fractions: [f64; 3], seed: u64, thresholds_dbz: [f64; 3]) -> Result<SplitAssignment> {
    let mut ds = Dataset::open(data)?;
    let mut by_swath: BTreeMap<String, Vec<Patch>> = BTreeMap::new();
    let patches: Vec<Patch> = ds.rows.par_iter().map(|r| read_patch(data, r)).collect::<Result<_>>()?;
    for p in patches {
        by_swath.entry(p.swath_id.clone()).or_default().push(p);
    }
    let hists: Vec<SwathHistogram> = by_swath
        .iter()
        .map(|(id, ps)| {
            let refs: Vec<&Patch> = ps.iter().collect();
            SwathHistogram::from_patches(id, &refs, thresholds_dbz).at(&data.join(id))
        })
        .collect::<Result<_>>()?;
    let assignment = split_balanced(&hists, fractions, seed).at(&data.join(store::MANIFEST))?;
    for row in &mut ds.rows {
        row.subset = assignment.subset_of(&row.swath).map(|s| s.name().to_string()).unwrap_or_default();
    }
    ds.save()?;
    write_json(&data.join(SPLIT_FILE), &assignment)?;
    Ok(assignment)
}

// ------------------------------------------------------------- register

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationRow {
    pub swath: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegisterSummary {
    pub patches: usize,
    pub overridden: usize,
    pub stats: Option<OffsetStats>,
}

/// Estimates (or takes from `overrides`) the radar shift of every patch,
/// moves the radar layer back and rewrites it with its masks. Offsets are
/// written to `offsets.csv` in `out`; with stations, offset statistics go to
/// `offset_stats.json`.
pub fn register(
    data: &Path,
    radius_px: usize,
    thresholds_dbz: [f64; 3],
    overrides: &[OverrideRow],
    stations: Option<&[StationRow]>,
    out: &Path,
) -> Result<RegisterSummary> {
    let mut ds = Dataset::open(data)?;
    let manual: BTreeMap<(String, String), RegistrationOffset> = overrides
        .iter()
        .map(|o| ((o.swath.clone(), o.patch.clone()), RegistrationOffset::new(o.d_row, o.d_col)))
        .collect();
    let bank = FilterBankSpec::default();
    let results: Vec<(Patch, RegistrationOffset, bool)> = ds
        .rows
        .par_iter()
        .map(|row| {
            let p = read_patch(data, row)?;
            let here = layer_path(data, &row.swath, &row.patch, "refl");
            let (off, manual_hit) = match manual.get(&(row.swath.clone(), row.patch.clone())) {
                Some(o) => (*o, true),
                None => (p.estimate_offset(&bank, thresholds_dbz[0], radius_px).at(&here)?, false),
            };
            let moved = p.apply_registration(off).at(&here)?;
            let masks = moved.masks(thresholds_dbz).at(&here)?;
            write_patch(data, &moved, &masks)?;
            Ok((moved, off, manual_hit))
        })
        .collect::<Result<_>>()?;
    let mut offsets = Vec::with_capacity(results.len());
    for (row, (p, off, _)) in ds.rows.iter_mut().zip(&results) {
        row.d_row = p.offset_applied.d_row;
        row.d_col = p.offset_applied.d_col;
        row.max_dbz = p.max_dbz();
        offsets.push(OverrideRow { swath: row.swath.clone(), patch: row.patch.clone(), d_row: off.d_row, d_col: off.d_col });
    }
    ds.save()?;
    write_csv_with_header(&out.join("offsets.csv"), &["swath", "patch", "d_row", "d_col"], &offsets)?;
    let stats = match stations {
        None => None,
        Some(st) => {
            let s = offset_statistics(&results, st).at(&out.join("offset_stats.json"))?;
            write_json(&out.join("offset_stats.json"), &s)?;
            Some(s)
        }
    };
    Ok(RegisterSummary { patches: results.len(), overridden: results.iter().filter(|r| r.2).count(), stats })
}

fn offset_statistics(results: &[(Patch, RegistrationOffset, bool)], stations: &[StationRow]) -> sarrain_core::Result<OffsetStats> {
    let by_swath: BTreeMap<&str, &StationRow> = stations.iter().map(|s| (s.swath.as_str(), s)).collect();
    let (mut offs, mut dist, mut wind, mut bearing) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (p, off, _) in results {
        let Some(st) = by_swath.get(p.swath_id.as_str()) else { continue };
        let geo = p.sigma0_norm.geometry();
        let (cr, cc) = (geo.rows as f64 / 2.0, geo.cols as f64 / 2.0);
        let (lat, lon) = geo.pixel_to_latlon(cr, cc);
        let (sr, sc) = geo.latlon_to_pixel(st.lat, st.lon);
        let b = (cc - sc).atan2(-(cr - sr)).to_degrees();
        offs.push(*off);
        dist.push(haversine_km(st.lat, st.lon, lat, lon));
        wind.push(p.wind.mean_valid().unwrap_or(0.0));
        bearing.push(if b < 0.0 { b + 360.0 } else { b });
    }
    registration_stats(&offs, &dist, &wind, Some(&bearing))
}

// ------------------------------------------------------------ train-koch

pub struct LoadedPatch {
    pub row: ManifestRow,
    pub patch: Patch,
    pub masks: ClassMasks,
}

/// Reads the patches of `subset` with their stored masks, checking that
/// they are at `resolution_m` when given.
pub fn load_subset(data: &Path, subset: &str, thresholds_dbz: [f64; 3], resolution_m: Option<f64>) -> Result<Vec<LoadedPatch>> {
    let ds = Dataset::open(data)?;
    ds.subset(subset)
        .par_iter()
        .map(|row| {
            let patch = read_patch(data, row)?;
            if let Some(res) = resolution_m {
                let spacing = patch.sigma0_norm.pixel_spacing_m();
                if (spacing - res).abs() > 1e-9 {
                    return Err(data_error(
                        &layer_path(data, &row.swath, &row.patch, "s0"),
                        format!("patch is at {spacing} m/px, expected {res}"),
                    ));
                }
            }
            let masks = read_masks(data, &patch, thresholds_dbz)?;
            Ok(LoadedPatch { row: (*row).clone(), patch, masks })
        })
        .collect()
}

fn training_samples(data: &Path, patches: &[LoadedPatch], bank: &FilterBankSpec) -> Result<Vec<TrainingSample>> {
    patches
        .par_iter()
        .map(|lp| {
            TrainingSample::new(&lp.patch.sigma0_norm, &lp.masks, bank)
                .at(&layer_path(data, &lp.row.swath, &lp.row.patch, "s0"))
        })
        .collect()
}

/// Detector scaling calibrated on the valid rain-free pixels of a set.
pub fn calibrate_on_background(samples: &[TrainingSample], masks: &[&ClassMasks], bank: FilterBankSpec, resolution_m: f64, spread: f64) -> sarrain_core::Result<KochParams> {
    let selections: Vec<Vec<bool>> = samples
        .iter()
        .zip(masks)
        .map(|(s, m)| s.valid.iter().enumerate().map(|(px, &v)| v && m.label(px) == 0).collect())
        .collect();
    let sets: Vec<_> = samples.iter().zip(&selections).map(|(s, sel)| (&s.responses, Some(sel.as_slice()))).collect();
    KochParams::calibrated_masked(&sets, bank, resolution_m, spread)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainRun {
    pub seed: u64,
    pub params_path: PathBuf,
    pub history_path: PathBuf,
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
}

/// Per-run file name next to `out`: `params.json` becomes
/// `params.seed7.json`, `params.seed7.history.csv`.
pub fn run_path(out: &Path, seed: u64, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("params");
    out.with_file_name(format!("{stem}.seed{seed}.{suffix}"))
}

/// Trains `cfg.runs` models with seeds `cfg.seed..`. The first run is also
/// written to `out`, the shared initialization to `<stem>.init.json`.
pub fn train_koch(
    data: &Path,
    resolution_m: f64,
    cfg: &TrainConfig,
    thresholds_dbz: [f64; 3],
    init: Option<KochParams>,
    spread: f64,
    out: &Path,
) -> Result<Vec<TrainRun>> {
    check_resolution(resolution_m, true)?;
    cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
    let bank = init.as_ref().map_or_else(FilterBankSpec::default, KochParams::bank);
    let train_p = load_subset(data, Subset::Train.name(), thresholds_dbz, Some(resolution_m))?;
    let val_p = load_subset(data, Subset::Validation.name(), thresholds_dbz, Some(resolution_m))?;
    let manifest = data.join(store::MANIFEST);
    if train_p.is_empty() {
        return Err(data_error(&manifest, "no training patches; run split first".into()));
    }
    let train_s = training_samples(data, &train_p, &bank)?;
    let val_s = training_samples(data, &val_p, &bank)?;
    let init = match init {
        Some(p) => p,
        None => {
            let masks: Vec<&ClassMasks> = train_p.iter().map(|p| &p.masks).collect();
            calibrate_on_background(&train_s, &masks, bank, resolution_m, spread).at(&manifest)?
        }
    };
    write_json(&out.with_file_name(init_name(out)), &init)?;
    let mut runs = Vec::with_capacity(cfg.runs);
    for k in 0..cfg.runs as u64 {
        let run_cfg = TrainConfig { seed: cfg.seed + k, ..cfg.clone() };
        let outcome = train(&train_s, &val_s, &run_cfg, &init).at(&manifest)?;
        let params_path = run_path(out, run_cfg.seed, "json");
        let history_path = run_path(out, run_cfg.seed, "history.csv");
        write_json(&params_path, &outcome.params)?;
        write_history(&history_path, &outcome.history)?;
        if k == 0 {
            write_json(out, &outcome.params)?;
        }
        runs.push(TrainRun {
            seed: run_cfg.seed,
            params_path,
            history_path,
            initial_train_loss: outcome.history.initial_train_loss,
            final_train_loss: outcome.history.final_train_loss,
        });
    }
    Ok(runs)
}

fn init_name(out: &Path) -> String {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("params");
    format!("{stem}.init.json")
}

pub fn write_history(path: &Path, h: &TrainHistory) -> Result<()> {
    write_csv_with_header(path, &["epoch", "train_loss", "val_loss"], &history_rows(h))
}

// -------------------------------------------------------------- predict

/// Writes three-channel predictions for every patch of `subset` under
/// `out`, in the dataset layout, with a copy of the manifest rows.
pub fn predict(data: &Path, params: &KochParams, subset: Option<&str>, activation: Activation, out: &Path) -> Result<usize> {
    params.validate().map_err(|e| Error::Usage(e.to_string()))?;
    let ds = Dataset::open(data)?;
    let rows: Vec<ManifestRow> = match subset {
        Some(s) => ds.subset(s).into_iter().cloned().collect(),
        None => ds.rows.clone(),
    };
    let bank = params.bank();
    rows.par_iter()
        .map(|row| {
            let s0 = layer_path(data, &row.swath, &row.patch, "s0");
            let g = crate::sgrid::read_grid(&s0)?;
            let resp = highpass_bank(&g, &bank).at(&s0)?;
            let pred = Prediction::from_channels(resp.geometry, &forward_responses(&resp, params, activation)).at(&s0)?;
            let pred = Prediction { channels: pred.channels.map(|c| c.with_timestamp(g.timestamp())) };
            store::write_prediction(out, &row.swath, &row.patch, &pred)
        })
        .collect::<Result<Vec<()>>>()?;
    Dataset { root: out.to_path_buf(), rows: rows.clone() }.save()?;
    Ok(rows.len())
}

// ----------------------------------------------------------------- eval

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stratification {
    Wind,
    Incidence,
    Coast,
}

impl Stratification {
    pub fn name(self) -> &'static str {
        match self {
            Stratification::Wind => "wind",
            Stratification::Incidence => "incidence",
            Stratification::Coast => "coast",
        }
    }

    pub fn edges(self) -> Vec<f64> {
        match self {
            Stratification::Wind => (0..=10).map(|k| 2.0 * k as f64).collect(),
            Stratification::Incidence => (0..=11).map(|k| 26.0 + 2.0 * k as f64).collect(),
            Stratification::Coast => vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 15.0, 20.0, 50.0, DEFAULT_COAST_CAP_KM],
        }
    }

    fn grid(self, p: &Patch) -> sarrain_core::Result<Grid> {
        match self {
            Stratification::Wind => Ok(p.wind.clone()),
            Stratification::Incidence => Grid::from_fn(*p.sigma0_norm.geometry(), |_, c| p.incidence_deg[c] as f32),
            Stratification::Coast => distance_to_coast(&p.land, DEFAULT_COAST_CAP_KM),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub pred_dir: PathBuf,
    pub scores: Scores,
    pub curve: Option<StratifiedCurve>,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub runs: Vec<EvalRun>,
    pub resolution_m: f64,
}

impl EvalReport {
    pub fn macro_f1(&self) -> Result<(f64, f64)> {
        let v: Vec<f64> = self.runs.iter().map(|r| r.scores.macro_f1()).collect::<sarrain_core::Result<_>>()?;
        Ok(mean_std(&v))
    }

    pub fn binary_f1(&self) -> Result<(f64, f64)> {
        let v: Vec<f64> = self.runs.iter().map(|r| r.scores.binary_f1()).collect::<sarrain_core::Result<_>>()?;
        Ok(mean_std(&v))
    }

    pub fn rows(&self, model: &str, cut: f64) -> Result<Vec<ReportRow>> {
        let (m, s) = self.macro_f1()?;
        let (bm, bs) = self.binary_f1()?;
        let row = |metric: &str, mean, std| ReportRow {
            model: model.to_string(),
            resolution_m: self.resolution_m,
            metric: metric.to_string(),
            threshold: format!("{cut}"),
            mean,
            std,
        };
        Ok(vec![row("macro_f1", m, s), row("binary_f1", bm, bs)])
    }

    /// Report lines `metric: mean (std)`.
    pub fn lines(&self) -> Result<Vec<String>> {
        let (m, s) = self.macro_f1()?;
        let (bm, bs) = self.binary_f1()?;
        Ok(vec![
            format!("runs: {}", self.runs.len()),
            format!("macro_f1: {}", mean_std_text(m, s)),
            format!("binary_f1: {}", mean_std_text(bm, bs)),
        ])
    }
}

/// Scores each prediction directory against the truth dataset, pooling
/// pixels over the patches listed in the prediction manifest.
pub fn evaluate(pred_dirs: &[PathBuf], truth: &Path, thresholds_dbz: [f64; 3], cut: f64, strat: Option<Stratification>) -> Result<EvalReport> {
    if pred_dirs.is_empty() {
        return Err(Error::Usage("at least one prediction directory is needed".into()));
    }
    let mut runs = Vec::with_capacity(pred_dirs.len());
    let mut resolution_m = f64::NAN;
    for dir in pred_dirs {
        let rows = Dataset::open(dir)?.rows;
        let parts: Vec<(Scores, Option<(Grid, Grid, Grid, Grid)>, f64)> = rows
            .par_iter()
            .map(|row| {
                let patch = read_patch(truth, row)?;
                let masks = read_masks(truth, &patch, thresholds_dbz)?;
                let pred = store::read_prediction(dir, &row.swath, &row.patch)?;
                let here = layer_path(dir, &row.swath, &row.patch, store::PRED_SUFFIXES[0]);
                if !pred.geometry().matches(masks.geometry()) {
                    return Err(data_error(&here, "prediction geometry differs from truth".into()));
                }
                let mut s = Scores::default();
                s.add(&pred, &masks, cut).at(&here)?;
                let st = match strat {
                    None => None,
                    Some(k) => {
                        let labels = labels_from_channels(&pred, cut);
                        let pm = Grid::mask_from_fn(*labels.geometry(), |r, c| labels.get(r, c) >= 1.0).at(&here)?;
                        Some((pm, masks.m1.clone(), k.grid(&patch).at(&here)?, masks.valid.clone()))
                    }
                };
                Ok((s, st, patch.sigma0_norm.pixel_spacing_m()))
            })
            .collect::<Result<_>>()?;
        let mut scores = Scores::default();
        let mut strata: Vec<&(Grid, Grid, Grid, Grid)> = Vec::new();
        for (sc, st, res) in &parts {
            scores.merge(sc).at(dir)?;
            resolution_m = *res;
            strata.extend(st.as_ref());
        }
        let curve = match strat {
            Some(k) if !strata.is_empty() => Some(pooled_curve(&strata, &k.edges()).at(dir)?),
            _ => None,
        };
        if scores.multiclass.total() == 0 {
            return Err(data_error(dir, "no valid pixels to score".into()));
        }
        runs.push(EvalRun { pred_dir: dir.clone(), scores, curve });
    }
    Ok(EvalReport { runs, resolution_m })
}

/// One curve over all patches: the per-patch layers are stacked row-wise so
/// that every bin pools its pixels.
fn pooled_curve(parts: &[&(Grid, Grid, Grid, Grid)], edges: &[f64]) -> sarrain_core::Result<StratifiedCurve> {
    let g0 = parts[0].0.geometry();
    let geo = sarrain_core::GridGeometry::new(g0.rows * parts.len(), g0.cols, g0.pixel_spacing_m)?;
    let stack = |pick: fn(&(Grid, Grid, Grid, Grid)) -> &Grid, mask: bool| -> sarrain_core::Result<Grid> {
        let mut values = Vec::with_capacity(geo.len());
        for p in parts {
            let g = pick(p);
            if g.rows() != g0.rows || g.cols() != g0.cols {
                return Err(sarrain_core::Error::Data("patches differ in size".into()));
            }
            values.extend_from_slice(g.values());
        }
        if mask {
            Grid::mask_from_fn(geo, |r, c| values[r * geo.cols + c] == 1.0)
        } else {
            Grid::from_parts(geo, sarrain_core::DType::F32, pick(parts[0]).nodata(), 0, values)
        }
    };
    stratified(&stack(|p| &p.0, true)?, &stack(|p| &p.1, true)?, &stack(|p| &p.2, false)?, edges, Some(&stack(|p| &p.3, true)?))
}

#[derive(Debug, Clone, Serialize)]
struct CurveRow {
    run: usize,
    lo: f64,
    hi: f64,
    count: u64,
    f1: Option<f64>,
    detection: Option<f64>,
}

pub fn write_curves(path: &Path, report: &EvalReport) -> Result<()> {
    let rows: Vec<CurveRow> = report
        .runs
        .iter()
        .enumerate()
        .flat_map(|(run, r)| {
            r.curve.iter().flat_map(move |c| {
                c.bins.iter().map(move |b| CurveRow { run, lo: b.lo, hi: b.hi, count: b.count, f1: b.f1, detection: b.detection })
            })
        })
        .collect();
    write_csv_with_header(path, &["run", "lo", "hi", "count", "f1", "detection"], &rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineResult {
    pub multiclass_f1: f64,
    pub multiclass_threshold: f64,
    /// Class (1, 2 or 3) detections are assigned to.
    pub multiclass_class: usize,
    pub binary_f1: f64,
    pub binary_threshold: f64,
}

/// Best single-threshold scores of the untrained clipped detector.
pub fn baseline(truth: &Path, subset: Option<&str>, params: &KochParams, thresholds_dbz: [f64; 3], step: f64) -> Result<BaselineResult> {
    let ds = Dataset::open(truth)?;
    let rows: Vec<&ManifestRow> = match subset {
        Some(s) => ds.subset(s),
        None => ds.rows.iter().collect(),
    };
    let bank = params.bank();
    let items: Vec<(sarrain_core::koch::FilterResponses, ClassMasks)> = rows
        .par_iter()
        .map(|row| {
            let patch = read_patch(truth, row)?;
            let masks = read_masks(truth, &patch, thresholds_dbz)?;
            let resp = highpass_bank(&patch.sigma0_norm, &bank).at(&layer_path(truth, &row.swath, &row.patch, "s0"))?;
            Ok((resp, masks))
        })
        .collect::<Result<_>>()?;
    let refs: Vec<_> = items.iter().map(|(r, m)| (r, m)).collect();
    let sw = baseline_sweep(&refs, params, &threshold_grid(step)).at(&truth.join(store::MANIFEST))?;
    let (mf, mt, mk) = sw.best_multiclass();
    let (bf, bt) = sw.best_binary();
    Ok(BaselineResult { multiclass_f1: mf, multiclass_threshold: mt, multiclass_class: mk + 1, binary_f1: bf, binary_threshold: bt })
}

// ---------------------------------------------------------- glm-cluster

#[derive(Debug, Clone, Serialize)]
pub struct GlmSummary {
    pub events: usize,
    pub in_window_clusters: usize,
    pub rejected: usize,
    pub flashes: usize,
    pub mask_pixels: usize,
}

#[derive(Debug, Clone, Serialize)]
struct FlashRow {
    flash: usize,
    n_events: usize,
    start_s: f64,
    end_s: f64,
    lat_min: f64,
    lat_max: f64,
    lon_min: f64,
    lon_max: f64,
}

/// Clusters lightning events on the geometry of `reference`, writes the
/// proxy mask `glm_mask.sgrd` and the flash table `flashes.csv`.
pub fn glm_cluster(
    events: &[LightningEvent],
    reference: &Grid,
    acquisition_time_s: f64,
    window_s: f64,
    connectivity: Connectivity,
    out: &Path,
) -> Result<GlmSummary> {
    let (mask, clustering) =
        rasterize_lightning(events, reference.geometry(), acquisition_time_s, window_s, connectivity).at(out)?;
    let mut sorted = events.to_vec();
    sorted.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
    let flashes = group_flashes(&sorted).at(out)?;
    let rows: Vec<FlashRow> = flashes
        .iter()
        .enumerate()
        .map(|(k, f)| FlashRow {
            flash: k,
            n_events: f.members.len(),
            start_s: f.start_s,
            end_s: f.end_s,
            lat_min: f.lat_range.0,
            lat_max: f.lat_range.1,
            lon_min: f.lon_range.0,
            lon_max: f.lon_range.1,
        })
        .collect();
    crate::sgrid::write_grid(&out.join("glm_mask.sgrd"), &mask.with_timestamp(reference.timestamp()))?;
    write_csv_with_header(&out.join("flashes.csv"), &["flash", "n_events", "start_s", "end_s", "lat_min", "lat_max", "lon_min", "lon_max"], &rows)?;
    Ok(GlmSummary {
        events: events.len(),
        in_window_clusters: clustering.clusters.len(),
        rejected: clustering.rejected,
        flashes: flashes.len(),
        mask_pixels: clustering.clusters.iter().map(|c| c.pixels.len()).sum(),
    })
}

// --------------------------------------------------------------- report

/// Concatenates metric tables into `table.csv` and renders one line per row.
pub fn report(inputs: &[PathBuf], split_file: Option<&Path>, out: &Path) -> Result<Vec<String>> {
    let mut rows: Vec<ReportRow> = Vec::new();
    for p in inputs {
        rows.extend(read_csv::<ReportRow>(p)?);
    }
    write_csv(&out.join("table.csv"), &rows)?;
    let mut lines: Vec<String> = rows
        .iter()
        .map(|r| format!("{} {} m/px {}: {}", r.model, r.resolution_m, r.metric, mean_std_text(r.mean, r.std)))
        .collect();
    if let Some(sf) = split_file {
        let a: SplitAssignment = crate::formats::read_json(sf)?;
        let names = ["refl_0", "refl_1", "refl_2", "refl_3", "wind_0_4", "wind_4_8", "wind_8_12", "wind_12_16", "wind_16_up"];
        let mut header = vec!["subset", "swaths"];
        header.extend(names);
        let mut records = Vec::new();
        for sub in Subset::ALL {
            let shares = a.shares[sub.index()];
            let mut rec = vec![sub.name().to_string(), a.swath_counts[sub.index()].to_string()];
            rec.extend(shares.iter().map(|v| v.map_or(String::new(), |x| format!("{x:.4}"))));
            lines.push(format!(
                "{} ({} swaths): {}",
                sub.name(),
                a.swath_counts[sub.index()],
                names
                    .iter()
                    .zip(shares)
                    .map(|(n, v)| format!("{n}={}", v.map_or("-".into(), |x| format!("{:.1}%", 100.0 * x))))
                    .collect::<Vec<_>>()
                    .join(" ")
            ));
            records.push(rec);
        }
        write_csv_with_header(&out.join("split_table.csv"), &header, &records)?;
    }
    Ok(lines)
}
