//! Inference path: center-semantic fusion, peak extraction, polar decoding
//! and class-wise rotated NMS.

use std::cmp::Ordering;
use std::collections::HashSet;

use ndarray::{Array3, ArrayView3, Zip};

use crate::codec::{decode_polar, PolarCode};
use crate::error::{Error, Result};
use crate::geometry::{overlap, Quad};
use crate::par::{self, Exec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub class_id: usize,
    pub score: f64,
    pub quad: Quad,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub class_id: usize,
    pub row: usize,
    pub col: usize,
    pub score: f64,
}

/// Pixel-wise product of the heatmap and the predicted semantic map.
pub fn fuse_center_semantic(
    heatmap: ArrayView3<'_, f64>,
    semantic: ArrayView3<'_, f64>,
) -> Result<Array3<f64>> {
    if heatmap.shape() != semantic.shape() {
        return Err(Error::invalid(format!(
            "fusion shape {:?} vs {:?}",
            heatmap.shape(),
            semantic.shape()
        )));
    }
    let mut out = Array3::zeros(heatmap.raw_dim());
    Zip::from(&mut out)
        .and(&heatmap)
        .and(&semantic)
        .for_each(|o, &h, &s| *o = h * s);
    Ok(out)
}

/// Local maxima (value >= every existing 8-neighbor) at or above
/// `threshold`, best first, at most `top_k`. Equal scores are ordered by
/// (class, row, col).
pub fn extract_peaks(scores: ArrayView3<'_, f64>, top_k: usize, threshold: f64) -> Vec<Peak> {
    let (classes, rows, cols) = scores.dim();
    let mut peaks = Vec::new();
    for c in 0..classes {
        for r in 0..rows {
            for k in 0..cols {
                let v = scores[[c, r, k]];
                if v.is_nan() || v < threshold {
                    continue;
                }
                let mut is_max = true;
                'n: for dr in -1i64..=1 {
                    for dk in -1i64..=1 {
                        if dr == 0 && dk == 0 {
                            continue;
                        }
                        let (nr, nk) = (r as i64 + dr, k as i64 + dk);
                        if nr < 0 || nk < 0 || nr >= rows as i64 || nk >= cols as i64 {
                            continue;
                        }
                        if scores[[c, nr as usize, nk as usize]] > v {
                            is_max = false;
                            break 'n;
                        }
                    }
                }
                if is_max {
                    peaks.push(Peak {
                        class_id: c,
                        row: r,
                        col: k,
                        score: v,
                    });
                }
            }
        }
    }
    // already in (class,row,col) order, so a stable sort keeps the tie rule
    peaks.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal));
    peaks.truncate(top_k);
    peaks
}

/// Regression heads read at peak cells.
#[derive(Debug, Clone, Copy)]
pub struct RegressionMaps<'a> {
    pub offset: ArrayView3<'a, f64>,
    pub angles: ArrayView3<'a, f64>,
    pub shorter: ArrayView3<'a, f64>,
    pub ratios: ArrayView3<'a, f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Decoded {
    pub detections: Vec<Detection>,
    /// Peaks whose polar code could not be decoded.
    pub skipped: usize,
}

/// Turns peaks into detections by decoding the polar code at each cell.
pub fn decode_detections(peaks: &[Peak], maps: &RegressionMaps<'_>, stride: u32) -> Decoded {
    let mut out = Decoded::default();
    for p in peaks {
        let (r, c) = (p.row, p.col);
        let code = PolarCode::from_cell(
            c,
            r,
            [maps.offset[[0, r, c]], maps.offset[[1, r, c]]],
            std::array::from_fn(|i| maps.angles[[i, r, c]]),
            maps.shorter[[0, r, c]],
            std::array::from_fn(|i| maps.ratios[[i, r, c]]),
            stride,
        );
        match decode_polar(&code) {
            Ok(quad) => out.detections.push(Detection {
                class_id: p.class_id,
                score: p.score,
                quad,
            }),
            Err(e) => {
                log::debug!("peak at ({r},{c}) skipped: {e}");
                out.skipped += 1;
            }
        }
    }
    out
}

fn boxes_apart(a: &[f64; 4], b: &[f64; 4]) -> bool {
    a[2] < b[0] || b[2] < a[0] || a[3] < b[1] || b[3] < a[1]
}

/// Greedy class-wise rotated NMS. Detections are ranked by score (ties by
/// input position); one is kept iff its IoU with every kept detection of the
/// same class is below `iou_threshold`. Output is in keep order.
pub fn rotated_nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    rotated_nms_with(dets, iou_threshold, Exec::default())
}

pub fn rotated_nms_with(dets: &[Detection], iou_threshold: f64, exec: Exec) -> Vec<Detection> {
    nms_keep_indices(dets, iou_threshold, exec)
        .into_iter()
        .map(|i| dets[i])
        .collect()
}

/// Indices into `dets` of the survivors, in keep order.
pub fn nms_keep_indices(dets: &[Detection], iou_threshold: f64, exec: Exec) -> Vec<usize> {
    let n = dets.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        dets[j]
            .score
            .partial_cmp(&dets[i].score)
            .unwrap_or(Ordering::Equal)
    });
    if iou_threshold.is_nan() || iou_threshold <= 0.0 {
        // every same-class pair overlaps at IoU >= 0: the best of each class wins
        let mut seen = HashSet::new();
        return order
            .into_iter()
            .filter(|&i| seen.insert(dets[i].class_id))
            .collect();
    }
    let mut rank = vec![0; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    // same-class pairs with touching bounding boxes, found by sweeping along x;
    // everything else has IoU 0 and cannot suppress
    let bounds: Vec<[f64; 4]> = dets.iter().map(|d| d.quad.aabb()).collect();
    let mut by_x: Vec<usize> = (0..n).collect();
    by_x.sort_by(|&i, &j| bounds[i][0].total_cmp(&bounds[j][0]).then(i.cmp(&j)));
    let mut pairs = Vec::new();
    for (a, &i) in by_x.iter().enumerate() {
        for &j in &by_x[a + 1..] {
            if bounds[j][0] > bounds[i][2] {
                break;
            }
            if dets[i].class_id == dets[j].class_id && !boxes_apart(&bounds[i], &bounds[j]) {
                pairs.push(if rank[i] < rank[j] { (i, j) } else { (j, i) });
            }
        }
    }
    let hits = par::map(exec, &pairs, |&(i, j)| {
        overlap(&dets[i].quad, &dets[j].quad) >= iou_threshold
    });
    // for each detection, the better-ranked ones that would suppress it
    let mut suppressors: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (&(i, j), hit) in pairs.iter().zip(hits) {
        if hit {
            suppressors[j].push(i);
        }
    }
    let mut kept = vec![false; n];
    let mut keep = Vec::new();
    for &i in &order {
        if suppressors[i].iter().all(|&s| !kept[s]) {
            kept[i] = true;
            keep.push(i);
        }
    }
    keep
}
