//! Incidence-angle normalization of SAR backscatter against a geophysical
//! model function evaluated at a fixed reference wind.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::raster::Grid;

/// Reference wind speed used for normalization (m/s).
pub const REFERENCE_WIND_MPS: f64 = 10.0;
/// Reference wind direction relative to the radar azimuth (degrees).
pub const REFERENCE_DIRECTION_DEG: f64 = 45.0;

/// Incidence range over which the GMF is evaluated.
pub const GMF_INCIDENCE_RANGE_DEG: (f64, f64) = (16.0, 66.0);
/// Incidence range accepted for wide-swath products.
pub const SWATH_INCIDENCE_RANGE_DEG: (f64, f64) = (20.0, 50.0);

/// CMOD5.N coefficient table shipped with the crate.
pub const CMOD5N_COEFFICIENTS: &str = include_str!("../data/cmod5n.coef");

/// Anything that predicts linear ocean backscatter from geometry and wind.
pub trait Gmf {
    fn eval(&self, incidence_deg: f64, wind_mps: f64, direction_deg: f64) -> Result<f64>;
}

/// Functional forms the toolkit knows how to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GmfKind {
    /// C-band VV CMOD5.N, 28 coefficients.
    Cmod5n,
}

impl GmfKind {
    pub fn arity(self) -> usize {
        match self {
            GmfKind::Cmod5n => 28,
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "cmod5n" | "cmod5.n" | "cmod5_n" => Some(GmfKind::Cmod5n),
            _ => None,
        }
    }
}

/// A GMF with its coefficient table and the reference conditions used for
/// normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmfSpec {
    pub name: String,
    pub kind: GmfKind,
    pub coefficients: Vec<f64>,
    pub reference_wind_mps: f64,
    pub reference_direction_deg: f64,
}

impl GmfSpec {
    /// Parses a coefficient file: one real per line, `#` starts a comment.
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let kind = GmfKind::from_name(name).ok_or_else(|| precondition!("unknown GMF '{name}'"))?;
        let mut coefficients = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let v: f64 = body
                .parse()
                .map_err(|_| Error::Data(alloc::format!("line {}: '{body}' is not a number", lineno + 1)))?;
            coefficients.push(v);
        }
        Self::new(name, kind, coefficients)
    }

    pub fn new(name: &str, kind: GmfKind, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != kind.arity() {
            return Err(precondition!(
                "{name} expects {} coefficients, got {}",
                kind.arity(),
                coefficients.len()
            ));
        }
        Ok(GmfSpec {
            name: name.to_string(),
            kind,
            coefficients,
            reference_wind_mps: REFERENCE_WIND_MPS,
            reference_direction_deg: REFERENCE_DIRECTION_DEG,
        })
    }

    /// CMOD5.N with the bundled coefficient table.
    pub fn cmod5n() -> Self {
        Self::parse("cmod5n", CMOD5N_COEFFICIENTS).expect("bundled coefficient table is valid")
    }
}

impl Gmf for GmfSpec {
    fn eval(&self, incidence_deg: f64, wind_mps: f64, direction_deg: f64) -> Result<f64> {
        let (lo, hi) = GMF_INCIDENCE_RANGE_DEG;
        if !(incidence_deg >= lo && incidence_deg <= hi) {
            return Err(Error::Range(alloc::format!(
                "incidence {incidence_deg} deg outside [{lo}, {hi}]"
            )));
        }
        if !(wind_mps >= 0.0 && wind_mps.is_finite()) {
            return Err(Error::Range(alloc::format!("wind speed {wind_mps} m/s must be >= 0")));
        }
        if !direction_deg.is_finite() {
            return Err(Error::Range("wind direction must be finite".to_string()));
        }
        match self.kind {
            GmfKind::Cmod5n => Ok(cmod5_family(&self.coefficients, incidence_deg, wind_mps, direction_deg)),
        }
    }
}

/// The CMOD5 functional form: `B0 (1 + B1 cos(phi) + B2 cos(2 phi))^1.6`.
/// `c` holds coefficients c1..c28.
fn cmod5_family(c: &[f64], incidence_deg: f64, wind: f64, direction_deg: f64) -> f64 {
    use libm::{cos, exp, pow, tanh};
    const THETA_MID: f64 = 40.0;
    const THETA_SCALE: f64 = 25.0;
    const POWER: f64 = 1.6;
    let k = |i: usize| c[i - 1];

    let phi = direction_deg.to_radians();
    let cos_phi = cos(phi);
    let cos_2phi = 2.0 * cos_phi * cos_phi - 1.0;

    let x = (incidence_deg - THETA_MID) / THETA_SCALE;
    let xx = x * x;

    let a0 = k(1) + k(2) * x + k(3) * xx + k(4) * x * xx;
    let a1 = k(5) + k(6) * x;
    let a2 = k(7) + k(8) * x;
    let gam = k(9) + k(10) * x + k(11) * xx;
    let s0 = k(12) + k(13) * x;

    let s = a2 * wind;
    let mut a3 = 1.0 / (1.0 + exp(-s.max(s0)));
    if s < s0 {
        a3 *= pow(s / s0, s0 * (1.0 - a3));
    }
    let b0 = pow(a3, gam) * pow(10.0, a0 + a1 * wind);

    let mut b1 = k(15) * wind * (0.5 + x - tanh(4.0 * (x + k(16) + k(17) * wind)));
    b1 = k(14) * (1.0 + x) - b1;
    b1 /= exp(0.34 * (wind - k(18))) + 1.0;

    let y0 = k(19);
    let pn = k(20);
    let a = y0 - (y0 - 1.0) / pn;
    let b = 1.0 / (pn * pow(y0 - 1.0, pn - 1.0));
    let v0 = k(21) + k(22) * x + k(23) * xx;
    let d1 = k(24) + k(25) * x + k(26) * xx;
    let d2 = k(27) + k(28) * x;
    let mut v2 = wind / v0 + 1.0;
    if v2 < y0 {
        v2 = a + b * pow(v2 - 1.0, pn);
    }
    let b2 = (-d1 + d2 * v2) * exp(-v2);

    b0 * pow(1.0 + b1 * cos_phi + b2 * cos_2phi, POWER)
}

/// Linear-power backscatter with per-column incidence angles.
#[derive(Debug, Clone)]
pub struct Sigma0Grid {
    grid: Grid,
    incidence_deg: Vec<f64>,
}

impl Sigma0Grid {
    pub fn new(grid: Grid, incidence_deg: Vec<f64>) -> Result<Self> {
        if grid.is_mask() {
            return Err(precondition!("sigma0 must be a float grid"));
        }
        if incidence_deg.len() != grid.cols() {
            return Err(precondition!(
                "{} incidence angles for {} columns",
                incidence_deg.len(),
                grid.cols()
            ));
        }
        let (lo, hi) = SWATH_INCIDENCE_RANGE_DEG;
        if let Some((c, a)) = incidence_deg.iter().enumerate().find(|(_, a)| !(**a >= lo && **a <= hi)) {
            return Err(precondition!("column {c}: incidence {a} deg outside [{lo}, {hi}]"));
        }
        if let Some(v) = grid.values().iter().find(|&&v| !grid.is_nodata_value(v) && !(v >= 0.0)) {
            return Err(precondition!("sigma0 must be non-negative, found {v}"));
        }
        Ok(Sigma0Grid { grid, incidence_deg })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn incidence_deg(&self) -> &[f64] {
        &self.incidence_deg
    }

    pub fn into_parts(self) -> (Grid, Vec<f64>) {
        (self.grid, self.incidence_deg)
    }
}

/// Divides each pixel by the GMF backscatter expected at its column's
/// incidence under the reference wind (10 m/s, 45 deg). Nodata propagates.
pub fn incidence_normalize(s: &Sigma0Grid, gmf: &impl Gmf) -> Result<Grid> {
    let reference = reference_backscatter(s.incidence_deg(), gmf)?;
    let grid = s.grid();
    let cols = grid.cols();
    let values = grid
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if grid.is_nodata_value(v) {
                v
            } else {
                (f64::from(v) / reference[i % cols]) as f32
            }
        })
        .collect();
    grid.with_values(values)
}

/// GMF value at the reference wind for each column.
pub fn reference_backscatter(incidence_deg: &[f64], gmf: &impl Gmf) -> Result<Vec<f64>> {
    incidence_deg
        .iter()
        .enumerate()
        .map(|(column, &inc)| {
            let v = gmf
                .eval(inc, REFERENCE_WIND_MPS, REFERENCE_DIRECTION_DEG)
                .map_err(|e| Error::Column { column, source: Box::new(e) })?;
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Column {
                    column,
                    source: Box::new(Error::Range(alloc::format!("reference backscatter {v} is not positive"))),
                });
            }
            Ok(v)
        })
        .collect()
}
