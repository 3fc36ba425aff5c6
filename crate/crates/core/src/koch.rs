//! Koch filter bank and its differentiable multi-threshold reformulation.
//!
//! Four identity-minus-box-mean high-pass filters feed, for each rain class
//! `i` and filter `j`, an affine scaling `K[i][j] * P_j + B[i][j]`. The
//! original detector clips the scaled responses to `[0, 1]`; the trainable
//! variant passes them through a sigmoid with unit slope at its center. Both
//! fuse the four filters by a quadratic mean.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Result};
use crate::raster::{Grid, GridGeometry};

/// Default box-mean window sizes of the four high-pass filters (pixels).
pub const DEFAULT_SCALES: [usize; 4] = [2, 4, 8, 16];
/// Sigmoid steepness giving unit slope at the center.
pub const SIGMOID_STEEPNESS: f64 = 4.0;
/// Sigmoid inflection point.
pub const SIGMOID_CENTER: f64 = 0.5;

pub const N_CLASSES: usize = 3;
pub const N_FILTERS: usize = 4;
pub const N_PARAMS: usize = 2 * N_CLASSES * N_FILTERS;
/// Width of one background standard deviation after calibrated scaling.
pub const DEFAULT_CALIBRATION_SPREAD: f64 = 0.1;

/// Window sizes of the four identity-minus-local-mean filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterBankSpec {
    pub scales: [usize; 4],
}

impl Default for FilterBankSpec {
    fn default() -> Self {
        FilterBankSpec { scales: DEFAULT_SCALES }
    }
}

impl FilterBankSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scales.iter().any(|&w| w == 0) {
            return Err(precondition!("filter windows must be positive: {:?}", self.scales));
        }
        Ok(())
    }

    pub fn max_window(&self) -> usize {
        self.scales.iter().copied().max().unwrap_or(1)
    }

    /// Dense `n x n` kernel of filter `j`, centered, with `n` the odd tap
    /// count of [`box_taps`].
    pub fn kernel(&self, j: usize) -> Vec<f64> {
        let taps = box_taps(self.scales[j]);
        let n = taps.len();
        let mut k: Vec<f64> = (0..n * n).map(|i| -taps[i / n] * taps[i % n]).collect();
        k[(n / 2) * n + n / 2] += 1.0;
        k
    }
}

/// High-pass responses `P_j` of one image, stored row-major in f64.
#[derive(Debug, Clone)]
pub struct FilterResponses {
    pub geometry: GridGeometry,
    pub planes: [Vec<f64>; 4],
}

impl FilterResponses {
    pub fn len(&self) -> usize {
        self.planes[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_grids(&self) -> [Grid; 4] {
        core::array::from_fn(|j| {
            Grid::new(self.geometry, self.planes[j].iter().map(|&v| v as f32).collect())
                .expect("responses share the input geometry")
        })
    }

    /// Root-mean-square of the raw responses: a parameter-free
    /// heterogeneity map.
    pub fn heterogeneity(&self) -> Grid {
        let values = (0..self.len())
            .map(|i| {
                let s: f64 = self.planes.iter().map(|p| p[i] * p[i]).sum();
                libm::sqrt(s / N_FILTERS as f64) as f32
            })
            .collect();
        Grid::new(self.geometry, values).expect("same geometry")
    }
}

/// Applies the four high-pass filters: `P_j = g - boxmean_{w_j}(g)` with
/// mirror padding at the borders.
///
/// Values are centered on the first valid pixel before filtering so that a
/// constant image yields exactly zero. Nodata cells are filled with the mean
/// of the valid cells.
pub fn highpass_bank(g: &Grid, spec: &FilterBankSpec) -> Result<FilterResponses> {
    spec.validate()?;
    let (rows, cols) = (g.rows(), g.cols());
    let w_max = spec.max_window();
    if rows < w_max || cols < w_max {
        return Err(precondition!("grid {rows}x{cols} smaller than filter window {w_max}"));
    }
    let mean = g.mean_valid().ok_or_else(|| precondition!("grid has no valid pixels"))?;
    let reference = g
        .values()
        .iter()
        .find(|&&v| !g.is_nodata_value(v))
        .map(|&v| f64::from(v))
        .unwrap_or(mean);
    let centered: Vec<f64> = g
        .values()
        .iter()
        .map(|&v| if g.is_nodata_value(v) { mean - reference } else { f64::from(v) - reference })
        .collect();

    let planes = core::array::from_fn(|j| {
        let box_mean = box_mean_mirrored(&centered, rows, cols, spec.scales[j]);
        centered.iter().zip(box_mean).map(|(x, m)| x - m).collect()
    });
    Ok(FilterResponses { geometry: *g.geometry(), planes })
}

#[inline]
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = if i < 0 {
        -i - 1
    } else if i >= n {
        2 * n - i - 1
    } else {
        i
    };
    m as usize
}

/// Centered 1-D weights of a width-`w` box: `w` equal taps for odd `w`;
/// for even `w`, `w + 1` taps whose end taps carry half weight, so the
/// filter has no half-pixel shift.
pub fn box_taps(w: usize) -> Vec<f64> {
    let h = w / 2;
    let mut t = vec![1.0 / w as f64; 2 * h + 1];
    if w % 2 == 0 {
        t[0] *= 0.5;
        t[2 * h] *= 0.5;
    }
    t
}

fn smooth_lines(x: &[f64], n_lines: usize, len: usize, step_line: usize, step_elem: usize, taps: &[f64]) -> Vec<f64> {
    let h = (taps.len() / 2) as isize;
    let mut out = vec![0.0; x.len()];
    let mut line = vec![0.0; len];
    for l in 0..n_lines {
        for (i, v) in line.iter_mut().enumerate() {
            *v = x[l * step_line + i * step_elem];
        }
        for i in 0..len {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * line[mirror(i as isize + k as isize - h, len)];
            }
            out[l * step_line + i * step_elem] = acc;
        }
    }
    out
}

/// Separable centered box mean with mirror padding.
fn box_mean_mirrored(x: &[f64], rows: usize, cols: usize, w: usize) -> Vec<f64> {
    let taps = box_taps(w);
    let along_rows = smooth_lines(x, rows, cols, cols, 1, &taps);
    smooth_lines(&along_rows, cols, rows, 1, cols, &taps)
}

/// Logistic activation `1 / (1 + exp(-a (x - c)))`.
#[inline]
pub fn sigmoid(x: f64, a: f64, c: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-a * (x - c)))
}

/// Derivative of [`sigmoid`] with respect to `x`.
#[inline]
pub fn sigmoid_slope(x: f64, a: f64, c: f64) -> f64 {
    let s = sigmoid(x, a, c);
    a * s * (1.0 - s)
}

/// Scaling parameters of the multi-threshold Koch model for one resolution.
///
/// Row `i` of `gain`/`bias` belongs to rain class `i` (1, 3, 10 mm/h), column
/// `j` to filter `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KochParams {
    pub a: f64,
    pub c: f64,
    #[serde(rename = "K")]
    pub gain: [[f64; 4]; 3],
    #[serde(rename = "B")]
    pub bias: [[f64; 4]; 3],
    pub scales: [usize; 4],
    pub resolution_m: f64,
}

impl KochParams {
    /// Identical scaling for all three classes.
    pub fn uniform(gain: [f64; 4], bias: [f64; 4], bank: FilterBankSpec, resolution_m: f64) -> Self {
        KochParams {
            a: SIGMOID_STEEPNESS,
            c: SIGMOID_CENTER,
            gain: [gain; 3],
            bias: [bias; 3],
            scales: bank.scales,
            resolution_m,
        }
    }

    /// Initial detector scaling fitted to the filter statistics of rain-free
    /// reference responses: every filter is centered on `c` and scaled so
    /// that one standard deviation of background response spans `spread`.
    pub fn calibrated(background: &[&FilterResponses], bank: FilterBankSpec, resolution_m: f64, spread: f64) -> Result<Self> {
        let sets: Vec<(&FilterResponses, Option<&[bool]>)> = background.iter().map(|r| (*r, None)).collect();
        Self::calibrated_masked(&sets, bank, resolution_m, spread)
    }

    /// As [`KochParams::calibrated`], restricted to the pixels flagged in
    /// each optional selection.
    pub fn calibrated_masked(
        background: &[(&FilterResponses, Option<&[bool]>)],
        bank: FilterBankSpec,
        resolution_m: f64,
        spread: f64,
    ) -> Result<Self> {
        if background.is_empty() {
            return Err(precondition!("calibration needs at least one response set"));
        }
        if !(spread.is_finite() && spread > 0.0) {
            return Err(precondition!("calibration spread must be positive, got {spread}"));
        }
        let mut gain = [0.0; 4];
        for (j, g) in gain.iter_mut().enumerate() {
            let (mut n, mut s, mut ss) = (0.0f64, 0.0f64, 0.0f64);
            for (resp, sel) in background {
                for (px, &v) in resp.planes[j].iter().enumerate() {
                    if sel.is_some_and(|m| !m[px]) {
                        continue;
                    }
                    n += 1.0;
                    s += v;
                    ss += v * v;
                }
            }
            let var = if n > 0.0 { (ss - s * s / n) / n } else { 0.0 };
            if !(var > 0.0) {
                return Err(precondition!("filter {j} has no response variance"));
            }
            *g = spread / libm::sqrt(var);
        }
        Ok(Self::uniform(gain, [SIGMOID_CENTER; 4], bank, resolution_m))
    }

    pub fn bank(&self) -> FilterBankSpec {
        FilterBankSpec { scales: self.scales }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) {
            return Err(precondition!("sigmoid steepness must be positive"));
        }
        if self.to_vector().iter().any(|v| !v.is_finite()) || !self.c.is_finite() {
            return Err(precondition!("parameters must be finite"));
        }
        self.bank().validate()
    }

    /// The 24 trainable values: gains row-major, then biases.
    pub fn to_vector(&self) -> [f64; N_PARAMS] {
        let mut v = [0.0; N_PARAMS];
        for i in 0..N_CLASSES {
            for j in 0..N_FILTERS {
                v[i * N_FILTERS + j] = self.gain[i][j];
                v[N_PARAMS / 2 + i * N_FILTERS + j] = self.bias[i][j];
            }
        }
        v
    }

    pub fn set_vector(&mut self, v: &[f64; N_PARAMS]) {
        for i in 0..N_CLASSES {
            for j in 0..N_FILTERS {
                self.gain[i][j] = v[i * N_FILTERS + j];
                self.bias[i][j] = v[N_PARAMS / 2 + i * N_FILTERS + j];
            }
        }
    }
}

/// Gradients with the layout of [`KochParams`]' trainable values.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KochGradients {
    pub gain: [[f64; 4]; 3],
    pub bias: [[f64; 4]; 3],
}

impl KochGradients {
    pub fn to_vector(&self) -> [f64; N_PARAMS] {
        let mut p = KochParams::uniform([0.0; 4], [0.0; 4], FilterBankSpec::default(), 0.0);
        p.gain = self.gain;
        p.bias = self.bias;
        p.to_vector()
    }

    pub fn accumulate(&mut self, other: &KochGradients) {
        for i in 0..N_CLASSES {
            for j in 0..N_FILTERS {
                self.gain[i][j] += other.gain[i][j];
                self.bias[i][j] += other.bias[i][j];
            }
        }
    }

    pub fn scale(&mut self, f: f64) {
        for i in 0..N_CLASSES {
            for j in 0..N_FILTERS {
                self.gain[i][j] *= f;
                self.bias[i][j] *= f;
            }
        }
    }
}

/// Three per-class rain probabilities, each in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub channels: [Grid; 3],
}

impl Prediction {
    pub fn from_channels(geometry: GridGeometry, channels: &[Vec<f64>; 3]) -> Result<Self> {
        let mk = |c: &Vec<f64>| Grid::new(geometry, c.iter().map(|&v| v as f32).collect());
        Ok(Prediction { channels: [mk(&channels[0])?, mk(&channels[1])?, mk(&channels[2])?] })
    }

    pub fn geometry(&self) -> &GridGeometry {
        self.channels[0].geometry()
    }
}

/// Activation applied after the affine scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Clip,
}

/// Per-class quadratic mean of the activated responses, in f64.
pub fn forward_responses(resp: &FilterResponses, p: &KochParams, act: Activation) -> [Vec<f64>; 3] {
    core::array::from_fn(|i| {
        (0..resp.len())
            .map(|px| {
                let mut sum = 0.0;
                for j in 0..N_FILTERS {
                    let z = p.gain[i][j] * resp.planes[j][px] + p.bias[i][j];
                    let s = match act {
                        Activation::Sigmoid => sigmoid(z, p.a, p.c),
                        Activation::Clip => z.clamp(0.0, 1.0),
                    };
                    sum += s * s;
                }
                libm::sqrt(sum / N_FILTERS as f64)
            })
            .collect()
    })
}

/// Sigmoid-activated forward pass.
pub fn koch_forward(g: &Grid, p: &KochParams) -> Result<Prediction> {
    p.validate()?;
    let resp = highpass_bank(g, &p.bank())?;
    Prediction::from_channels(resp.geometry, &forward_responses(&resp, p, Activation::Sigmoid))
}

/// The original clipped detector for all three scaling rows.
pub fn koch_clipped(g: &Grid, p: &KochParams) -> Result<Prediction> {
    p.validate()?;
    let resp = highpass_bank(g, &p.bank())?;
    Prediction::from_channels(resp.geometry, &forward_responses(&resp, p, Activation::Clip))
}

/// Binary rain map of the original detector: clipped quadratic mean of the
/// first scaling row compared against `threshold`.
pub fn koch_binary(g: &Grid, p: &KochParams, threshold: f64) -> Result<Grid> {
    if !(threshold >= 0.0 && threshold < 1.0) {
        return Err(precondition!("threshold must lie in [0, 1), got {threshold}"));
    }
    let clipped = koch_clipped(g, p)?;
    let rms = &clipped.channels[0];
    Grid::mask_from_fn(*g.geometry(), |r, c| f64::from(rms.get(r, c)) >= threshold)
}

/// Chain rule through the quadratic mean, the sigmoid and the affine
/// scaling, summed over pixels. `grad_y[i][px]` is `dL/dy_i` at `px`.
pub fn backward_responses(resp: &FilterResponses, p: &KochParams, grad_y: &[Vec<f64>; 3]) -> KochGradients {
    let mut out = KochGradients::default();
    let mut s = [0.0f64; N_FILTERS];
    for i in 0..N_CLASSES {
        let gy = &grad_y[i];
        for px in 0..resp.len() {
            let g = gy[px];
            if g == 0.0 {
                continue;
            }
            let mut sum = 0.0;
            for j in 0..N_FILTERS {
                s[j] = sigmoid(p.gain[i][j] * resp.planes[j][px] + p.bias[i][j], p.a, p.c);
                sum += s[j] * s[j];
            }
            let y = libm::sqrt(sum / N_FILTERS as f64);
            if y == 0.0 {
                continue;
            }
            for j in 0..N_FILTERS {
                // dy/ds_j = s_j / (4 y); ds/dz = a s (1 - s)
                let dz = g * s[j] / (N_FILTERS as f64 * y) * p.a * s[j] * (1.0 - s[j]);
                out.gain[i][j] += dz * resp.planes[j][px];
                out.bias[i][j] += dz;
            }
        }
    }
    out
}

/// Gradients of a loss with respect to the 24 scaling parameters.
pub fn koch_backward(g: &Grid, p: &KochParams, grad_y: &[Vec<f64>; 3]) -> Result<KochGradients> {
    p.validate()?;
    if grad_y.iter().any(|c| c.len() != g.len()) {
        return Err(precondition!("gradient channels must match the input geometry"));
    }
    let resp = highpass_bank(g, &p.bank())?;
    Ok(backward_responses(&resp, p, grad_y))
}
