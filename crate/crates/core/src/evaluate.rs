//! Scoring of predicted class maps and of the untrained binary detector.

use alloc::vec::Vec;

use crate::error::{precondition, Result};
use crate::koch::{forward_responses, Activation, FilterResponses, KochParams, Prediction};
use crate::labels::ClassMasks;
use crate::metrics::{confusion, labels_from_channels, macro_f1, ConfusionMatrix};
use crate::raster::Grid;

/// Pooled 4-class and rain/no-rain confusion matrices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scores {
    pub multiclass: ConfusionMatrix,
    pub binary: ConfusionMatrix,
}

impl Default for Scores {
    fn default() -> Self {
        Scores { multiclass: ConfusionMatrix::new(4), binary: ConfusionMatrix::new(2) }
    }
}

fn binarize(labels: &Grid) -> Grid {
    labels.map(|v| if v >= 1.0 { 1.0 } else { 0.0 })
}

impl Scores {
    /// Adds one patch. Pixels are labeled by [`labels_from_channels`]; the
    /// binary map flags every pixel with a nonzero label.
    pub fn add(&mut self, pred: &Prediction, truth: &ClassMasks, cut: f64) -> Result<()> {
        let pl = labels_from_channels(pred, cut);
        let tl = truth.labels();
        self.multiclass.merge(&confusion(&pl, &tl, 4, Some(&truth.valid))?)?;
        self.binary.merge(&confusion(&binarize(&pl), &binarize(&tl), 2, Some(&truth.valid))?)?;
        Ok(())
    }

    pub fn merge(&mut self, other: &Scores) -> Result<()> {
        self.multiclass.merge(&other.multiclass)?;
        self.binary.merge(&other.binary)
    }

    pub fn macro_f1(&self) -> Result<f64> {
        macro_f1(&self.multiclass)
    }

    pub fn binary_f1(&self) -> Result<f64> {
        macro_f1(&self.binary)
    }
}

/// Thresholds `step, 2 step, ...` strictly below 1.
pub fn threshold_grid(step: f64) -> Vec<f64> {
    if !(step > 0.0 && step < 1.0) {
        return Vec::new();
    }
    (1..).map(|k| k as f64 * step).take_while(|&t| t < 1.0 - 1e-12).collect()
}

/// Scores of the clipped detector at every threshold of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSweep {
    pub thresholds: Vec<f64>,
    /// 4-class macro F1 when detections are assigned to class 1, 2 or 3.
    pub multiclass: Vec<[f64; 3]>,
    pub binary: Vec<f64>,
}

impl BaselineSweep {
    /// `(f1, threshold, class index)` of the best 4-class score; the first
    /// maximum wins.
    pub fn best_multiclass(&self) -> (f64, f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0.0, 0);
        for (t, row) in self.thresholds.iter().zip(&self.multiclass) {
            for (k, &f) in row.iter().enumerate() {
                if f > best.0 {
                    best = (f, *t, k);
                }
            }
        }
        best
    }

    pub fn best_binary(&self) -> (f64, f64) {
        let mut best = (f64::NEG_INFINITY, 0.0);
        for (&t, &f) in self.thresholds.iter().zip(&self.binary) {
            if f > best.0 {
                best = (f, t);
            }
        }
        best
    }
}

/// Sweeps the binary detector `clipped RMS >= t` over `thresholds`.
pub fn baseline_sweep(items: &[(&FilterResponses, &ClassMasks)], p: &KochParams, thresholds: &[f64]) -> Result<BaselineSweep> {
    if items.is_empty() || thresholds.is_empty() {
        return Err(precondition!("baseline sweep needs patches and thresholds"));
    }
    let n = thresholds.len();
    let mut multi: Vec<[ConfusionMatrix; 3]> = (0..n).map(|_| core::array::from_fn(|_| ConfusionMatrix::new(4))).collect();
    let mut bin: Vec<ConfusionMatrix> = (0..n).map(|_| ConfusionMatrix::new(2)).collect();
    for (resp, masks) in items {
        if resp.len() != masks.geometry().len() {
            return Err(precondition!("responses and masks differ in size"));
        }
        let rms = &forward_responses(resp, p, Activation::Clip)[0];
        for px in 0..rms.len() {
            if !masks.is_valid(px) {
                continue;
            }
            let truth = masks.label(px) as usize;
            for (ti, &t) in thresholds.iter().enumerate() {
                let hit = rms[px] >= t;
                bin[ti].add(usize::from(truth > 0), usize::from(hit));
                for (k, cm) in multi[ti].iter_mut().enumerate() {
                    cm.add(truth, if hit { k + 1 } else { 0 });
                }
            }
        }
    }
    let mut multiclass = Vec::with_capacity(n);
    let mut binary = Vec::with_capacity(n);
    for ti in 0..n {
        let row = &multi[ti];
        multiclass.push([macro_f1(&row[0])?, macro_f1(&row[1])?, macro_f1(&row[2])?]);
        binary.push(macro_f1(&bin[ti])?);
    }
    Ok(BaselineSweep { thresholds: thresholds.to_vec(), multiclass, binary })
}

/// Disagreement between the sigmoid and clipped outputs of one parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActivationDifference {
    /// Sum of absolute differences over the sum of clipped outputs.
    pub aggregate: f64,
    /// Mean of per-pixel relative differences over pixels whose clipped
    /// output is positive.
    pub per_pixel: f64,
    pub pixels: usize,
}

pub fn activation_difference(items: &[&FilterResponses], p: &KochParams) -> Result<ActivationDifference> {
    p.validate()?;
    let (mut abs, mut total, mut rel, mut n_rel, mut n) = (0.0, 0.0, 0.0, 0usize, 0usize);
    for resp in items {
        let s = forward_responses(resp, p, Activation::Sigmoid);
        let c = forward_responses(resp, p, Activation::Clip);
        for (si, ci) in s.iter().zip(&c) {
            for (&a, &b) in si.iter().zip(ci) {
                let d = libm::fabs(a - b);
                abs += d;
                total += b;
                n += 1;
                if b > 0.0 {
                    rel += d / b;
                    n_rel += 1;
                }
            }
        }
    }
    if !(total > 0.0) {
        return Err(precondition!("clipped outputs are all zero"));
    }
    Ok(ActivationDifference { aggregate: abs / total, per_pixel: if n_rel > 0 { rel / n_rel as f64 } else { 0.0 }, pixels: n })
}
