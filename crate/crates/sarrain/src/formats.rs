//! CSV tables and JSON documents exchanged between pipeline stages.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use sarrain_core::glm::LightningEvent;
use sarrain_core::koch::KochParams;
use sarrain_core::preproc::GmfSpec;
use sarrain_core::synth::SceneConfig;
use sarrain_core::train::TrainHistory;

use crate::error::{Error, Result, WithPath};
use crate::sgrid::write_atomic;

/// Manual registration override, one row per patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideRow {
    pub swath: String,
    pub patch: String,
    pub d_row: i32,
    pub d_col: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub swath: String,
    pub patch: String,
    /// Empty until the dataset has been split.
    pub subset: String,
    pub time_delta_s: f64,
    pub d_row: i32,
    pub d_col: i32,
    pub land_frac: f64,
    pub max_dbz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub resolution_m: f64,
    pub metric: String,
    /// Empty when the metric has no threshold.
    pub threshold: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EventRow {
    time_s: f64,
    lat: f64,
    lon: f64,
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|source| Error::Csv { path: path.into(), source })?;
    rdr.deserialize().collect::<std::result::Result<_, _>>().map_err(|source| Error::Csv { path: path.into(), source })
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let csv_err = |source| Error::Csv { path: path.into(), source };
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Csv { path: path.into(), source: e.into_error().into() })?;
    write_atomic(path, &bytes)
}

/// Writes a header-only table when `rows` is empty.
pub fn write_csv_with_header<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    if rows.is_empty() {
        return write_atomic(path, format!("{}\n", header.join(",")).as_bytes());
    }
    write_csv(path, rows)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.into(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json { path: path.into(), source })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_params(path: &Path) -> Result<KochParams> {
    let p: KochParams = read_json(path)?;
    p.validate().at(path)?;
    Ok(p)
}

pub fn read_scene_config(path: &Path) -> Result<SceneConfig> {
    let c: SceneConfig = read_json(path)?;
    c.validate().at(path)?;
    Ok(c)
}

/// Loads a coefficient file for the GMF named by its stem, e.g.
/// `cmod5n.coef`.
pub fn read_gmf(path: &Path) -> Result<GmfSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("cmod5n");
    GmfSpec::parse(name, &text).at(path)
}

pub fn read_events(path: &Path) -> Result<Vec<LightningEvent>> {
    let rows: Vec<EventRow> = read_csv(path)?;
    Ok(rows.into_iter().map(|r| LightningEvent { time_s: r.time_s, lat: r.lat, lon: r.lon }).collect())
}

pub fn write_events(path: &Path, events: &[LightningEvent]) -> Result<()> {
    let rows: Vec<EventRow> = events.iter().map(|e| EventRow { time_s: e.time_s, lat: e.lat, lon: e.lon }).collect();
    write_csv_with_header(path, &["time_s", "lat", "lon"], &rows)
}

pub fn history_rows(h: &TrainHistory) -> Vec<HistoryRow> {
    h.train_loss
        .iter()
        .zip(&h.val_loss)
        .enumerate()
        .map(|(epoch, (&train_loss, &val_loss))| HistoryRow { epoch: epoch + 1, train_loss, val_loss })
        .collect()
}

/// Formats a five-run statistic the way reports print it.
pub fn mean_std_text(mean: f64, std: f64) -> String {
    format!("{mean:.4} ({std:.4})")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        let rows = vec![ManifestRow {
            swath: "s001".into(),
            patch: "r00000_c00064".into(),
            subset: "train".into(),
            time_delta_s: -330.0,
            d_row: 4,
            d_col: -2,
            land_frac: 0.125,
            max_dbz: 41.5,
        }];
        write_csv(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("swath,patch,subset,time_delta_s,d_row,d_col,land_frac,max_dbz\n"));
        assert_eq!(read_csv::<ManifestRow>(&path).unwrap(), rows);
    }

    #[test]
    fn history_header_and_empty_val() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let rows = vec![HistoryRow { epoch: 1, train_loss: 0.25, val_loss: None }, HistoryRow { epoch: 2, train_loss: 0.2, val_loss: Some(0.3) }];
        write_csv(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "epoch,train_loss,val_loss\n1,0.25,\n2,0.2,0.3\n");
        assert_eq!(read_csv::<HistoryRow>(&path).unwrap(), rows);
    }

    #[test]
    fn params_json_shape() {
        let p = KochParams::uniform([1.0, 2.0, 3.0, 4.0], [0.5; 4], Default::default(), 400.0);
        let v = serde_json::to_value(&p).unwrap();
        for key in ["a", "c", "K", "B", "scales", "resolution_m"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["K"].as_array().unwrap().len(), 3);
        assert_eq!(v["scales"], serde_json::json!([2, 4, 8, 16]));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        write_json(&path, &p).unwrap();
        assert_eq!(read_params(&path).unwrap(), p);
    }

    #[test]
    fn missing_file_names_path() {
        let e = read_params(Path::new("/nonexistent/params.json")).unwrap_err();
        assert_eq!(e.path().unwrap(), Path::new("/nonexistent/params.json"));
    }

    #[test]
    fn events_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ev.csv");
        let ev = vec![LightningEvent { time_s: 100.0, lat: 27.1, lon: -80.2 }];
        write_events(&path, &ev).unwrap();
        assert_eq!(read_events(&path).unwrap(), ev);
        write_events(&path, &[]).unwrap();
        assert!(read_events(&path).unwrap().is_empty());
    }

    #[test]
    fn bundled_coefficients_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cmod5n.coef");
        fs::write(&path, sarrain_core::preproc::CMOD5N_COEFFICIENTS).unwrap();
        assert_eq!(read_gmf(&path).unwrap(), GmfSpec::cmod5n());
        fs::write(&path, "1.0\n2.0\n").unwrap();
        assert!(matches!(read_gmf(&path), Err(Error::Core { .. })));
    }
}
