//! Segmentation losses and the overlap metric.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::LabelMap;
use crate::nnops::{softmax_backward, softmax_voxelwise};
use crate::tensor::Tensor;

/// Smoothing term of the soft dice ratio.
pub const DICE_EPSILON: f64 = 1e-5;
/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f32 = 1e-7;

/// Sørensen–Dice overlap in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize)]
pub struct DiceScore(f64);

impl DiceScore {
    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Domain(format!("dice score {value} outside [0, 1]")));
        }
        Ok(DiceScore(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for DiceScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4}", self.0)
    }
}

/// `2|X ∩ Y| / (|X| + |Y|)` over foreground voxels. Two empty sets score 1.
pub fn dice_coefficient(pred: &LabelMap, truth: &LabelMap) -> Result<DiceScore> {
    if pred.extents() != truth.extents() {
        return Err(Error::mismatch(&truth.extents(), &pred.extents()));
    }
    let (mut both, mut total) = (0usize, 0usize);
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        both += (p & t) as usize;
        total += (p + t) as usize;
    }
    if total == 0 {
        return Ok(DiceScore(1.0));
    }
    DiceScore::new(2.0 * both as f64 / total as f64)
}

fn check_probs(probs: &Tensor, truth: &LabelMap) -> Result<()> {
    let [d, h, w] = truth.extents();
    if probs.dims() != [2, d, h, w] {
        return Err(Error::mismatch(&[2, d, h, w], probs.dims()));
    }
    Ok(())
}

/// Soft dice on the foreground channel:
/// `Ds = (2 Σ p g + ε) / (Σ p² + Σ g² + ε)`, loss `1 - Ds`.
///
/// Returns the loss and its gradient with respect to `probs`; the background
/// channel of the gradient is zero.
pub fn soft_dice_loss(probs: &Tensor, truth: &LabelMap) -> Result<(f64, Tensor)> {
    check_probs(probs, truth)?;
    let p = probs.outer(1);
    let g = truth.data();
    let (mut inter, mut p2, mut g2) = (0f64, 0f64, 0f64);
    for (&pi, &gi) in p.iter().zip(g) {
        let (pi, gi) = (pi as f64, gi as f64);
        inter += pi * gi;
        p2 += pi * pi;
        g2 += gi * gi;
    }
    let num = 2.0 * inter + DICE_EPSILON;
    let den = p2 + g2 + DICE_EPSILON;
    let loss = 1.0 - num / den;

    let mut grad = Tensor::zeros(probs.dims())?;
    let den2 = den * den;
    for ((o, &pi), &gi) in grad.outer_mut(1).iter_mut().zip(p).zip(g) {
        *o = (-(2.0 * gi as f64 * den - 2.0 * pi as f64 * num) / den2) as f32;
    }
    Ok((loss, grad))
}

/// `-mean_v w(t_v) log p_{t_v}(v)` with weight 1 for background and
/// `fg_weight` for foreground. Clamped probabilities receive zero gradient.
pub fn weighted_cross_entropy(probs: &Tensor, truth: &LabelMap, fg_weight: f64) -> Result<(f64, Tensor)> {
    check_probs(probs, truth)?;
    if !(fg_weight > 0.0 && fg_weight.is_finite()) {
        return Err(Error::Domain(format!("fg_weight must be positive, got {fg_weight}")));
    }
    let n = truth.len();
    let inv_n = 1.0 / n as f64;
    let mut grad = Tensor::zeros(probs.dims())?;
    let mut total = 0f64;
    for (v, &t) in truth.data().iter().enumerate() {
        let c = t as usize;
        let w = if t == 1 { fg_weight } else { 1.0 };
        let raw = probs.outer(c)[v];
        let p = raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP) as f64;
        total -= w * p.ln();
        if raw == p as f32 {
            grad.outer_mut(c)[v] = (-w * inv_n / p) as f32;
        }
    }
    Ok((total * inv_n, grad))
}

/// Foreground where `p1 > p0`; exact ties go to background.
pub fn binarize(probs: &Tensor) -> Result<LabelMap> {
    let dims = probs.dims();
    if dims.len() != 4 || dims[0] != 2 {
        return Err(Error::InvalidShape { dims: dims.to_vec(), reason: "expected [2, D, H, W] probabilities" });
    }
    let labels = probs.outer(0).iter().zip(probs.outer(1)).map(|(&b, &f)| (f > b) as u8).collect();
    LabelMap::new([dims[1], dims[2], dims[3]], labels)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Dice,
    WeightedCe,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Dice => "dice",
            LossKind::WeightedCe => "weighted_ce",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dice" => Ok(LossKind::Dice),
            "weighted_ce" => Ok(LossKind::WeightedCe),
            other => Err(Error::Config(format!("unknown loss {other:?} (expected dice or weighted_ce)"))),
        }
    }
}

pub struct LossOutput {
    pub loss: f64,
    pub probs: Tensor,
    pub logit_grad: Tensor,
}

/// Softmax, loss and the gradient with respect to the logits.
pub fn loss_from_logits(kind: LossKind, logits: &Tensor, truth: &LabelMap, fg_weight: f64) -> Result<LossOutput> {
    let probs = softmax_voxelwise(logits)?;
    let (loss, grad) = match kind {
        LossKind::Dice => soft_dice_loss(&probs, truth)?,
        LossKind::WeightedCe => weighted_cross_entropy(&probs, truth, fg_weight)?,
    };
    let logit_grad = softmax_backward(&probs, &grad)?;
    Ok(LossOutput { loss, probs, logit_grad })
}
