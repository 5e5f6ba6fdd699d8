//! Head losses with analytic gradients.
//!
//! * center focal loss on the heatmap,
//! * masked L1 for the offset, angle, shorter-side and ratio heads, averaged
//!   over object cells,
//! * per-cell binary cross-entropy for the center-semantic head.

use ndarray::{Array, Array3, ArrayView, ArrayView2, ArrayView3, Dimension, Zip};

use crate::error::{Error, Result};
use crate::targets::TargetMaps;

/// Probabilities are clamped to `[CLAMP_EPS, 1 - CLAMP_EPS]` before logs.
pub const CLAMP_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<D: Dimension> {
    pub loss: f64,
    /// d loss / d pred, same shape as the prediction.
    pub grad: Array<f64, D>,
}

fn same_shape(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("{what}: shape {a:?} vs {b:?}")));
    }
    Ok(())
}

/// Clamped value and the derivative of the clamp (0 outside the range).
fn clamp_prob(p: f64) -> (f64, f64) {
    if p < CLAMP_EPS {
        (CLAMP_EPS, 0.0)
    } else if p > 1.0 - CLAMP_EPS {
        (1.0 - CLAMP_EPS, 0.0)
    } else {
        (p, 1.0)
    }
}

/// Penalty-reduced focal loss over a heatmap. Cells whose target equals 1
/// are positives; the loss is normalized by `max(#positives, 1)`.
pub fn center_focal_loss<D: Dimension>(
    pred: ArrayView<'_, f64, D>,
    target: ArrayView<'_, f64, D>,
    alpha: f64,
    beta: f64,
) -> Result<LossGrad<D>> {
    same_shape(pred.shape(), target.shape(), "focal loss")?;
    let n_pos = target.iter().filter(|&&t| t == 1.0).count();
    let norm = 1.0 / n_pos.max(1) as f64;

    let mut grad = Array::zeros(pred.raw_dim());
    let mut total = 0.0;
    Zip::from(&mut grad)
        .and(&pred)
        .and(&target)
        .for_each(|g, &p_raw, &t| {
            let (p, dclamp) = clamp_prob(p_raw);
            let (term, dterm) = if t == 1.0 {
                let w = (1.0 - p).powf(alpha);
                let lp = p.ln();
                (w * lp, -alpha * (1.0 - p).powf(alpha - 1.0) * lp + w / p)
            } else {
                let wn = (1.0 - t).powf(beta);
                let pa = p.powf(alpha);
                let l1p = (1.0 - p).ln();
                (
                    wn * pa * l1p,
                    wn * (alpha * p.powf(alpha - 1.0) * l1p - pa / (1.0 - p)),
                )
            };
            total += term;
            *g = -norm * dterm * dclamp;
        });
    Ok(LossGrad {
        loss: -norm * total,
        grad,
    })
}

/// `(1/N) Σ_cells∈mask Σ_k |pred - target|` over a `K x h x w` head, with
/// `N` the number of masked cells. An empty mask gives 0.
pub fn masked_l1_loss(
    pred: ArrayView3<'_, f64>,
    target: ArrayView3<'_, f64>,
    mask: ArrayView2<'_, bool>,
) -> Result<LossGrad<ndarray::Ix3>> {
    same_shape(pred.shape(), target.shape(), "masked L1")?;
    same_shape(&pred.shape()[1..], mask.shape(), "masked L1 mask")?;
    let n = mask.iter().filter(|&&m| m).count();
    let mut grad = Array3::zeros(pred.raw_dim());
    if n == 0 {
        return Ok(LossGrad { loss: 0.0, grad });
    }
    let inv = 1.0 / n as f64;
    let mut total = 0.0;
    for ((k, r, c), g) in grad.indexed_iter_mut() {
        if !mask[[r, c]] {
            continue;
        }
        let d = pred[[k, r, c]] - target[[k, r, c]];
        total += d.abs();
        *g = if d > 0.0 {
            inv
        } else if d < 0.0 {
            -inv
        } else {
            0.0
        };
    }
    Ok(LossGrad {
        loss: total * inv,
        grad,
    })
}

/// Mean binary cross-entropy over every cell.
pub fn semantic_loss<D: Dimension>(
    pred: ArrayView<'_, f64, D>,
    target: ArrayView<'_, f64, D>,
) -> Result<LossGrad<D>> {
    same_shape(pred.shape(), target.shape(), "semantic loss")?;
    let m = pred.len().max(1) as f64;
    let mut grad = Array::zeros(pred.raw_dim());
    let mut total = 0.0;
    Zip::from(&mut grad)
        .and(&pred)
        .and(&target)
        .for_each(|g, &p_raw, &t| {
            let (p, dclamp) = clamp_prob(p_raw);
            total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
            *g = dclamp * (p - t) / (p * (1.0 - p) * m);
        });
    Ok(LossGrad {
        loss: total / m,
        grad,
    })
}

/// Raw outputs of the six heads, shaped like the matching [`TargetMaps`] grids.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub heatmap: Array3<f64>,
    pub offset: Array3<f64>,
    pub angles: Array3<f64>,
    pub shorter: Array3<f64>,
    pub ratios: Array3<f64>,
    pub semantic: Array3<f64>,
}

impl HeadOutputs {
    /// Uses the targets themselves as predictions.
    pub fn from_targets(t: &TargetMaps) -> Self {
        HeadOutputs {
            heatmap: t.heatmap.clone(),
            offset: t.offset.clone(),
            angles: t.angles.clone(),
            shorter: t.shorter.clone(),
            ratios: t.ratios.clone(),
            semantic: t.semantic.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub heatmap: f64,
    pub offset: f64,
    pub angles: f64,
    pub shorter: f64,
    pub ratios: f64,
    pub semantic: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            heatmap: 1.0,
            offset: 1.0,
            angles: 1.0,
            shorter: 1.0,
            ratios: 1.0,
            semantic: 1.0,
        }
    }
}

/// Unweighted per-head loss values.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub heatmap: f64,
    pub offset: f64,
    pub angles: f64,
    pub shorter: f64,
    pub ratios: f64,
    pub semantic: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub total: f64,
    pub breakdown: LossBreakdown,
    /// Gradients of `total`, already scaled by the weights.
    pub grads: HeadOutputs,
}

/// Weighted sum of all head losses. Focal loss uses alpha 2, beta 4.
pub fn total_loss(heads: &HeadOutputs, t: &TargetMaps, w: &LossWeights) -> Result<TotalLoss> {
    let m = t.valid_mask.view();
    let hm = center_focal_loss(heads.heatmap.view(), t.heatmap.view(), 2.0, 4.0)?;
    let off = masked_l1_loss(heads.offset.view(), t.offset.view(), m)?;
    let ang = masked_l1_loss(heads.angles.view(), t.angles.view(), m)?;
    let sh = masked_l1_loss(heads.shorter.view(), t.shorter.view(), m)?;
    let ra = masked_l1_loss(heads.ratios.view(), t.ratios.view(), m)?;
    let se = semantic_loss(heads.semantic.view(), t.semantic.view())?;
    let breakdown = LossBreakdown {
        heatmap: hm.loss,
        offset: off.loss,
        angles: ang.loss,
        shorter: sh.loss,
        ratios: ra.loss,
        semantic: se.loss,
    };
    let total = w.heatmap * hm.loss
        + w.offset * off.loss
        + w.angles * ang.loss
        + w.shorter * sh.loss
        + w.ratios * ra.loss
        + w.semantic * se.loss;
    Ok(TotalLoss {
        total,
        breakdown,
        grads: HeadOutputs {
            heatmap: hm.grad * w.heatmap,
            offset: off.grad * w.offset,
            angles: ang.grad * w.angles,
            shorter: sh.grad * w.shorter,
            ratios: ra.grad * w.ratios,
            semantic: se.grad * w.semantic,
        },
    })
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, Array2};

    #[test]
    fn focal_exact_fit() {
        let t = arr1(&[0.0, 1.0, 0.0, 0.0]);
        let r = center_focal_loss(t.view(), t.view(), 2.0, 4.0).unwrap();
        assert!(r.loss.abs() <= 1e-5, "{}", r.loss);
    }

    #[test]
    fn focal_substitution_values() {
        let r = center_focal_loss(arr1(&[0.5]).view(), arr1(&[1.0]).view(), 2.0, 4.0).unwrap();
        assert_abs_diff_eq!(r.loss, -(0.25f64) * 0.5f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(r.loss, 0.17329, epsilon = 1e-5);

        let r = center_focal_loss(arr1(&[1.0, 0.9]).view(), arr1(&[1.0, 0.0]).view(), 2.0, 4.0)
            .unwrap();
        // -(1-0)^4 * 0.9^2 * ln(0.1); the perfect peak contributes ~1e-21
        assert_abs_diff_eq!(r.loss, -0.81 * 0.1f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.loss, 1.865094, epsilon = 1e-6);
    }

    #[test]
    fn focal_shape_mismatch() {
        let e = center_focal_loss(arr1(&[0.5]).view(), arr1(&[1.0, 0.0]).view(), 2.0, 4.0);
        assert!(matches!(e, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn focal_monotone_at_positive() {
        let t = arr1(&[1.0, 0.3]);
        let mut last = f64::INFINITY;
        for k in 1..100 {
            let p = arr1(&[k as f64 / 100.0, 0.2]);
            let l = center_focal_loss(p.view(), t.view(), 2.0, 4.0)
                .unwrap()
                .loss;
            assert!(l >= 0.0 && l < last);
            last = l;
        }
    }

    fn head(vals: &[f64]) -> Array3<f64> {
        Array3::from_shape_vec((vals.len(), 1, 1), vals.to_vec()).unwrap()
    }

    #[test]
    fn l1_examples() {
        let mask = Array2::from_elem((1, 1), true);
        let p = head(&[0.8, 2.4, 3.9, 5.5]);
        let t = head(&[0.78540, 2.35619, 3.92699, 5.49779]);
        let r = masked_l1_loss(p.view(), t.view(), mask.view()).unwrap();
        assert_abs_diff_eq!(r.loss, 0.08762, epsilon = 1e-5);
        let same = masked_l1_loss(p.view(), p.view(), mask.view()).unwrap();
        assert_eq!(same.loss, 0.0);
        assert!(same.grad.iter().all(|&g| g == 0.0));

        // two objects, scalar head, errors 0.5 and 1.5
        let p = Array3::from_shape_vec((1, 1, 2), vec![1.5, 0.0]).unwrap();
        let t = Array3::from_shape_vec((1, 1, 2), vec![1.0, 1.5]).unwrap();
        let m2 = Array2::from_elem((1, 2), true);
        assert_eq!(
            masked_l1_loss(p.view(), t.view(), m2.view()).unwrap().loss,
            1.0
        );
        let none = Array2::from_elem((1, 2), false);
        assert_eq!(
            masked_l1_loss(p.view(), t.view(), none.view())
                .unwrap()
                .loss,
            0.0
        );
    }

    #[test]
    fn bce_examples() {
        let l = semantic_loss(arr1(&[0.5]).view(), arr1(&[1.0]).view())
            .unwrap()
            .loss;
        assert_abs_diff_eq!(l, 2f64.ln(), epsilon = 1e-12);
        let l0 = semantic_loss(arr1(&[0.5]).view(), arr1(&[0.0]).view())
            .unwrap()
            .loss;
        assert_abs_diff_eq!(l0, 2f64.ln(), epsilon = 1e-12);
        let t = arr1(&[1.0, 0.0, 1.0]);
        assert!(semantic_loss(t.view(), t.view()).unwrap().loss <= 1e-5);
    }
}
