//! Confusion matrices, macro F1 scores, decision rules and stratified curves.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::koch::Prediction;
use crate::raster::Grid;

/// Default cut applied to each channel when deriving labels.
pub const DEFAULT_CUT: f64 = 0.5;

/// Integer counts indexed `[truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n: usize) -> Self {
        ConfusionMatrix { n, counts: vec![0; n * n] }
    }

    pub fn from_counts(n: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != n * n {
            return Err(precondition!("{} counts for a {n}x{n} matrix", counts.len()));
        }
        Ok(ConfusionMatrix { n, counts })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.n + pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Element-wise sum.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n != self.n {
            return Err(precondition!("cannot merge {}x{} into {}x{}", other.n, other.n, self.n, self.n));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    fn row_sum(&self, t: usize) -> u64 {
        (0..self.n).map(|p| self.get(t, p)).sum()
    }

    fn col_sum(&self, p: usize) -> u64 {
        (0..self.n).map(|t| self.get(t, p)).sum()
    }

    /// Mean diagonal of the row-normalized and column-normalized matrices.
    ///
    /// A class that is absent from both truth and prediction is left out of
    /// the means; a class present on one side only contributes 0.
    pub fn recall_precision(&self) -> Result<(f64, f64)> {
        if self.total() == 0 {
            return Err(Error::UndefinedMetric("confusion matrix is empty".into()));
        }
        let (mut recall, mut precision, mut classes) = (0.0, 0.0, 0usize);
        for k in 0..self.n {
            let (rs, cs) = (self.row_sum(k), self.col_sum(k));
            if rs == 0 && cs == 0 {
                continue;
            }
            classes += 1;
            let d = self.get(k, k) as f64;
            if rs > 0 {
                recall += d / rs as f64;
            }
            if cs > 0 {
                precision += d / cs as f64;
            }
        }
        Ok((recall / classes as f64, precision / classes as f64))
    }
}

/// Harmonic mean of macro recall and macro precision.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    let (r, p) = cm.recall_precision()?;
    Ok(if r + p == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
}

/// Label per pixel: the largest class index whose channel exceeds `cut`,
/// or 0 when none does.
pub fn labels_from_channels(pred: &Prediction, cut: f64) -> Grid {
    let [a, b, c] = &pred.channels;
    let values = (0..a.len())
        .map(|i| {
            let ch = [a.values()[i], b.values()[i], c.values()[i]];
            (0..3).rev().find(|&k| f64::from(ch[k]) > cut).map_or(0.0, |k| (k + 1) as f32)
        })
        .collect();
    a.with_values(values).expect("same shape")
}

fn label_of(g: &Grid, idx: usize, n: usize, what: &str) -> Result<usize> {
    let v = g.values()[idx];
    if !(v >= 0.0) || libm::truncf(v) != v || v as usize >= n {
        return Err(Error::Data(alloc::format!("{what} label {v} at pixel {idx} is not in 0..{n}")));
    }
    Ok(v as usize)
}

/// Counts `(truth, prediction)` pairs over pixels where `valid` is set.
pub fn confusion(pred_labels: &Grid, true_labels: &Grid, n: usize, valid: Option<&Grid>) -> Result<ConfusionMatrix> {
    if pred_labels.rows() != true_labels.rows() || pred_labels.cols() != true_labels.cols() {
        return Err(precondition!("prediction and truth must share geometry"));
    }
    if let Some(v) = valid {
        if v.rows() != pred_labels.rows() || v.cols() != pred_labels.cols() {
            return Err(precondition!("validity mask must share geometry"));
        }
    }
    let mut cm = ConfusionMatrix::new(n);
    for idx in 0..pred_labels.len() {
        if valid.is_some_and(|v| v.values()[idx] != 1.0) {
            continue;
        }
        let t = label_of(true_labels, idx, n, "truth")?;
        let p = label_of(pred_labels, idx, n, "predicted")?;
        cm.add(t, p);
    }
    Ok(cm)
}

/// 2x2 confusion matrix of two binary masks.
pub fn binary_confusion(pred_mask: &Grid, true_mask: &Grid, valid: Option<&Grid>) -> Result<ConfusionMatrix> {
    let as_labels = |m: &Grid| m.map(|v| if v == 1.0 { 1.0 } else { 0.0 });
    confusion(&as_labels(pred_mask), &as_labels(true_mask), 2, valid)
}

/// Macro F1 of the 2x2 confusion matrix of two binary masks.
pub fn binary_f1(pred_mask: &Grid, true_mask: &Grid, valid: Option<&Grid>) -> Result<f64> {
    macro_f1(&binary_confusion(pred_mask, true_mask, valid)?)
}

/// One populated or absent bin of a stratified curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedBin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
    pub f1: Option<f64>,
    pub detection: Option<f64>,
}

/// Binary scores as a function of a co-registered stratification variable
/// (wind speed, incidence, distance to coast).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedCurve {
    pub edges: Vec<f64>,
    pub bins: Vec<StratifiedBin>,
    /// Valid pixels whose stratification value fell outside the edges.
    pub out_of_range: u64,
}

/// Builds a stratified curve. Bins are `[e_k, e_k+1)` except the last,
/// which is closed. Empty bins carry `None`, never 0.
pub fn stratified(
    pred_mask: &Grid,
    true_mask: &Grid,
    strat: &Grid,
    edges: &[f64],
    valid: Option<&Grid>,
) -> Result<StratifiedCurve> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(precondition!("bin edges must be strictly increasing, at least two"));
    }
    for g in [true_mask, strat] {
        if g.rows() != pred_mask.rows() || g.cols() != pred_mask.cols() {
            return Err(precondition!("stratified inputs must share geometry"));
        }
    }
    let nbins = edges.len() - 1;
    let mut cms = vec![ConfusionMatrix::new(2); nbins];
    let mut out_of_range = 0;
    for idx in 0..pred_mask.len() {
        if valid.is_some_and(|v| v.values()[idx] != 1.0) {
            continue;
        }
        let Some(s) = strat.valid_value(idx / strat.cols(), idx % strat.cols()) else {
            out_of_range += 1;
            continue;
        };
        let s = f64::from(s);
        let bin = if s == edges[nbins] {
            Some(nbins - 1)
        } else {
            edges.windows(2).position(|w| s >= w[0] && s < w[1])
        };
        match bin {
            Some(b) => cms[b].add(
                usize::from(true_mask.values()[idx] == 1.0),
                usize::from(pred_mask.values()[idx] == 1.0),
            ),
            None => out_of_range += 1,
        }
    }
    let bins = cms
        .iter()
        .enumerate()
        .map(|(b, cm)| {
            let positives = cm.get(1, 0) + cm.get(1, 1);
            StratifiedBin {
                lo: edges[b],
                hi: edges[b + 1],
                count: cm.total(),
                f1: macro_f1(cm).ok(),
                detection: (positives > 0).then(|| cm.get(1, 1) as f64 / positives as f64),
            }
        })
        .collect();
    Ok(StratifiedCurve { edges: edges.to_vec(), bins, out_of_range })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GridGeometry;
    use proptest::prelude::*;

    fn labels(values: &[f32], cols: usize) -> Grid {
        Grid::new(GridGeometry::new(values.len() / cols, cols, 1.0).unwrap(), values.to_vec()).unwrap()
    }

    fn mask(bytes: &[u8], cols: usize) -> Grid {
        Grid::mask(GridGeometry::new(bytes.len() / cols, cols, 1.0).unwrap(), bytes).unwrap()
    }

    fn cm(n: usize, counts: &[u64]) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(n, counts.to_vec()).unwrap()
    }

    #[test]
    fn hand_computed_f1() {
        assert_eq!(macro_f1(&cm(2, &[50, 50, 50, 50])).unwrap(), 0.5);
        let m = cm(2, &[90, 10, 30, 70]);
        let (r, p) = m.recall_precision().unwrap();
        assert!((r - 0.8).abs() < 1e-12);
        assert!((p - 0.8125).abs() < 1e-12);
        assert!((macro_f1(&m).unwrap() - 0.806201550387597).abs() < 1e-12);
        assert_eq!(macro_f1(&cm(3, &[4, 0, 0, 0, 7, 0, 0, 0, 1])).unwrap(), 1.0);
        assert!(matches!(macro_f1(&ConfusionMatrix::new(2)), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn binary_cases() {
        let m = mask(&[1, 0, 0, 1], 2);
        assert_eq!(binary_f1(&m, &m, None).unwrap(), 1.0);
        let not_m = mask(&[0, 1, 1, 0], 2);
        assert_eq!(binary_f1(&not_m, &m, None).unwrap(), 0.0);
        let ones = mask(&[1, 1, 1, 1], 2);
        let c = binary_confusion(&m, &ones, None).unwrap();
        assert_eq!(c.counts(), &[0, 0, 2, 2]);
        let (r, p) = c.recall_precision().unwrap();
        assert_eq!((r, p), (0.25, 0.5));
        assert!((binary_f1(&m, &ones, None).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn labels_rule() {
        let geo = GridGeometry::new(1, 3, 1.0).unwrap();
        let ch = |v: [f32; 3]| Grid::new(geo, v.to_vec()).unwrap();
        let pred = Prediction { channels: [ch([0.9, 0.4, 0.0]), ch([0.8, 0.6, 0.0]), ch([0.2, 0.2, 0.0])] };
        assert_eq!(labels_from_channels(&pred, DEFAULT_CUT).values(), &[2.0, 2.0, 0.0]);
    }

    #[test]
    fn toy_three_class() {
        // 4x4 toy image enumerated by hand.
        let truth = labels(&[0., 0., 1., 1., 0., 2., 2., 1., 0., 0., 1., 2., 2., 2., 0., 0.], 4);
        let pred = labels(&[0., 1., 1., 1., 0., 2., 1., 1., 0., 0., 2., 2., 2., 0., 0., 0.], 4);
        let m = confusion(&pred, &truth, 3, None).unwrap();
        assert_eq!(m.counts(), &[6, 1, 0, 0, 3, 1, 1, 1, 3]);
    }

    #[test]
    fn bad_labels() {
        let a = labels(&[0., 3.], 2);
        assert!(matches!(confusion(&a, &a, 3, None), Err(Error::Data(_))));
        let b = labels(&[0., 0.5], 2);
        assert!(confusion(&b, &b, 3, None).is_err());
    }

    #[test]
    fn validity_mask_excludes() {
        let t = labels(&[1., 1., 0.], 3);
        let p = labels(&[1., 0., 0.], 3);
        let v = mask(&[1, 0, 1], 3);
        assert_eq!(confusion(&p, &t, 2, Some(&v)).unwrap().counts(), &[1, 0, 0, 1]);
    }

    #[test]
    fn stratified_bins() {
        let t = mask(&[1, 0, 1, 0, 1, 1], 6);
        let s = labels(&[1.0, 1.5, 2.0, 2.5, 9.0, 0.5], 6);
        let curve = stratified(&t, &t, &s, &[1.0, 2.0, 3.0, 4.0], None).unwrap();
        assert_eq!(curve.bins.iter().map(|b| b.count).collect::<Vec<_>>(), vec![2, 2, 0]);
        assert_eq!(curve.out_of_range, 2);
        assert!(curve.bins[..2].iter().all(|b| b.f1 == Some(1.0) && b.detection == Some(1.0)));
        assert_eq!(curve.bins[2].f1, None);
        assert_eq!(curve.bins[2].detection, None);
        let uniform = labels(&[5.0; 6], 6);
        let p = mask(&[1, 1, 0, 0, 1, 0], 6);
        let curve = stratified(&p, &t, &uniform, &[0.0, 10.0], None).unwrap();
        assert_eq!(curve.bins[0].f1.unwrap(), binary_f1(&p, &t, None).unwrap());
    }

    #[test]
    fn mean_std_population() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }

    fn random_cm(n: usize, seed: u64) -> ConfusionMatrix {
        let mut s = seed | 1;
        let counts = (0..n * n)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                s % 50
            })
            .collect();
        ConfusionMatrix::from_counts(n, counts).unwrap()
    }

    proptest! {
        #[test]
        fn merge_is_commutative_and_associative(n in 2usize..5, a in any::<u64>(), b in any::<u64>(), c in any::<u64>()) {
            let (x, y, z) = (random_cm(n, a), random_cm(n, b), random_cm(n, c));
            let mut xy = x.clone(); xy.merge(&y).unwrap();
            let mut yx = y.clone(); yx.merge(&x).unwrap();
            prop_assert_eq!(&xy, &yx);
            let mut l = xy.clone(); l.merge(&z).unwrap();
            let mut yz = y.clone(); yz.merge(&z).unwrap();
            let mut r = x.clone(); r.merge(&yz).unwrap();
            prop_assert_eq!(l, r);
        }

        #[test]
        fn f1_scale_invariant(n in 2usize..5, seed in any::<u64>(), k in 1u64..20) {
            let m = random_cm(n, seed);
            prop_assume!(m.total() > 0);
            let scaled = ConfusionMatrix::from_counts(n, m.counts().iter().map(|c| c * k).collect()).unwrap();
            prop_assert!((macro_f1(&m).unwrap() - macro_f1(&scaled).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn self_f1_is_one(bytes in proptest::collection::vec(0u8..2, 2..64)) {
            prop_assume!(bytes.contains(&0) && bytes.contains(&1));
            let n = bytes.len();
            let m = mask(&bytes, n);
            prop_assert_eq!(binary_f1(&m, &m, None).unwrap(), 1.0);
        }
    }
}
