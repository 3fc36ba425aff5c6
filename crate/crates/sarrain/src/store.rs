//! On-disk layouts: raw swath directories and the patch dataset
//! `<root>/<swath>/<patch>.<layer>.sgrd` with `manifest.csv` at the root.

use std::path::{Path, PathBuf};

use sarrain_core::dataset::{Patch, SwathLayers};
use sarrain_core::koch::Prediction;
use sarrain_core::labels::{ClassMasks, RegistrationOffset};
use sarrain_core::preproc::{incidence_normalize, Gmf, Sigma0Grid};
use sarrain_core::synth::Scene;
use sarrain_core::Grid;

use crate::error::{Error, Result, WithPath};
use crate::formats::{read_csv, write_csv_with_header, ManifestRow};
use crate::sgrid::{read_grid, write_grid};

pub const MANIFEST: &str = "manifest.csv";
pub const MANIFEST_HEADER: [&str; 8] = ["swath", "patch", "subset", "time_delta_s", "d_row", "d_col", "land_frac", "max_dbz"];
pub const MASK_SUFFIXES: [&str; 3] = ["m1", "m3", "m10"];
pub const PRED_SUFFIXES: [&str; 3] = ["y1", "y3", "y10"];

pub fn layer_path(root: &Path, swath: &str, patch: &str, layer: &str) -> PathBuf {
    root.join(swath).join(format!("{patch}.{layer}.sgrd"))
}

fn incidence_grid(like: &Grid, incidence: &[f64]) -> Result<Grid> {
    Ok(Grid::from_fn(*like.geometry(), |_, c| incidence[c] as f32)?.with_timestamp(like.timestamp()))
}

fn incidence_from_grid(g: &Grid) -> Vec<f64> {
    (0..g.cols()).map(|c| f64::from(g.get(0, c))).collect()
}

/// Writes every layer of a patch plus its class masks; returns its manifest
/// row with an empty subset.
pub fn write_patch(root: &Path, p: &Patch, masks: &ClassMasks) -> Result<ManifestRow> {
    let path = |layer: &str| layer_path(root, &p.swath_id, &p.patch_id, layer);
    write_grid(&path("s0"), &p.sigma0_norm)?;
    write_grid(&path("inc"), &incidence_grid(&p.sigma0_norm, &p.incidence_deg)?)?;
    write_grid(&path("refl"), &p.reflectivity)?;
    write_grid(&path("wind"), &p.wind)?;
    write_grid(&path("land"), &p.land)?;
    for (suffix, m) in MASK_SUFFIXES.iter().zip(masks.channels()) {
        write_grid(&path(suffix), m)?;
    }
    Ok(ManifestRow {
        swath: p.swath_id.clone(),
        patch: p.patch_id.clone(),
        subset: String::new(),
        time_delta_s: p.time_delta_s,
        d_row: p.offset_applied.d_row,
        d_col: p.offset_applied.d_col,
        land_frac: p.land_fraction(),
        max_dbz: p.max_dbz(),
    })
}

/// Parses `r<row>_c<col>` patch identifiers.
pub fn parse_patch_id(id: &str) -> Option<(usize, usize)> {
    let (r, c) = id.strip_prefix('r')?.split_once("_c")?;
    Some((r.parse().ok()?, c.parse().ok()?))
}

pub fn read_patch(root: &Path, row: &ManifestRow) -> Result<Patch> {
    let path = |layer: &str| layer_path(root, &row.swath, &row.patch, layer);
    let (row_offset, col_offset) = parse_patch_id(&row.patch).unwrap_or((0, 0));
    let sigma0_norm = read_grid(&path("s0"))?;
    let inc = read_grid(&path("inc"))?;
    let p = Patch {
        swath_id: row.swath.clone(),
        patch_id: row.patch.clone(),
        row_offset,
        col_offset,
        incidence_deg: incidence_from_grid(&inc),
        reflectivity: read_grid(&path("refl"))?,
        wind: read_grid(&path("wind"))?,
        land: read_grid(&path("land"))?,
        sigma0_norm,
        offset_applied: RegistrationOffset::new(row.d_row, row.d_col),
        time_delta_s: row.time_delta_s,
    };
    for (layer, g) in [("refl", &p.reflectivity), ("wind", &p.wind), ("land", &p.land), ("inc", &inc)] {
        if !g.geometry().matches(p.sigma0_norm.geometry()) {
            return Err(Error::at(&path(layer), sarrain_core::Error::Data("layer geometry differs from s0".into())));
        }
    }
    Ok(p)
}

/// Stored masks with validity recomputed from land and radar coverage.
pub fn read_masks(root: &Path, patch: &Patch, thresholds_dbz: [f64; 3]) -> Result<ClassMasks> {
    let derived = patch.masks(thresholds_dbz).at(&layer_path(root, &patch.swath_id, &patch.patch_id, "refl"))?;
    let path = |s: &str| layer_path(root, &patch.swath_id, &patch.patch_id, s);
    let [m1, m3, m10] = MASK_SUFFIXES.map(|s| read_grid(&path(s)));
    ClassMasks::new(m1?, m3?, m10?, derived.valid, thresholds_dbz).at(&path("m1"))
}

pub fn write_prediction(root: &Path, swath: &str, patch: &str, pred: &Prediction) -> Result<()> {
    for (suffix, g) in PRED_SUFFIXES.iter().zip(&pred.channels) {
        write_grid(&layer_path(root, swath, patch, suffix), g)?;
    }
    Ok(())
}

pub fn read_prediction(root: &Path, swath: &str, patch: &str) -> Result<Prediction> {
    let [a, b, c] = PRED_SUFFIXES.map(|s| read_grid(&layer_path(root, swath, patch, s)));
    Ok(Prediction { channels: [a?, b?, c?] })
}

/// A patch dataset rooted at a directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        Ok(Dataset { root: root.to_path_buf(), rows: read_csv(&root.join(MANIFEST))? })
    }

    pub fn save(&self) -> Result<()> {
        write_csv_with_header(&self.root.join(MANIFEST), &MANIFEST_HEADER, &self.rows)
    }

    pub fn subset(&self, name: &str) -> Vec<&ManifestRow> {
        self.rows.iter().filter(|r| r.subset == name).collect()
    }

    pub fn swath_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.rows.iter().map(|r| r.swath.clone()).collect();
        ids.dedup();
        ids.sort();
        ids.dedup();
        ids
    }
}

/// Raw swath directory layout written by `synth` and read by `extract`.
pub mod swath {
    use super::*;

    pub const LAYERS: [&str; 5] = ["s0", "inc", "refl", "wind", "land"];

    pub fn write_scene(dir: &Path, scene: &Scene, radar_timestamp: i64) -> Result<()> {
        let s0 = scene.sigma0.grid();
        write_grid(&dir.join("s0.sgrd"), s0)?;
        write_grid(&dir.join("inc.sgrd"), &incidence_grid(s0, scene.sigma0.incidence_deg())?)?;
        write_grid(&dir.join("refl.sgrd"), &scene.reflectivity.clone().with_timestamp(radar_timestamp))?;
        write_grid(&dir.join("wind.sgrd"), &scene.wind)?;
        write_grid(&dir.join("land.sgrd"), &scene.land)?;
        write_grid(&dir.join("rate.sgrd"), &scene.rain_rate)?;
        for (suffix, m) in MASK_SUFFIXES.iter().zip(scene.truth.channels()) {
            write_grid(&dir.join(format!("truth.{suffix}.sgrd")), m)?;
        }
        Ok(())
    }

    /// Reads a swath directory and normalizes its backscatter with `gmf`.
    pub fn read_layers(dir: &Path, gmf: &impl Gmf) -> Result<SwathLayers> {
        let [s0, inc, refl, wind, land] = LAYERS.map(|l| read_grid(&dir.join(format!("{l}.sgrd"))));
        let (s0, inc) = (s0?, inc?);
        let s0_path = dir.join("s0.sgrd");
        let sigma0 = Sigma0Grid::new(s0, incidence_from_grid(&inc)).at(&s0_path)?;
        let swath_id = dir.file_name().and_then(|s| s.to_str()).unwrap_or("swath").to_string();
        Ok(SwathLayers {
            swath_id,
            sigma0_norm: incidence_normalize(&sigma0, gmf).at(&s0_path)?,
            incidence_deg: sigma0.incidence_deg().to_vec(),
            reflectivity: refl?,
            wind: wind?,
            land: land?,
        })
    }
}
