//! Oriented-box detection evaluation: greedy matching at an IoU threshold,
//! VOC-style average precision, and per-class AP / mAP.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::dataio::Annotation;
use crate::error::{Error, Result};
use crate::geometry::{overlap, Quad};
use crate::par::{self, Exec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApMetric {
    /// Mean of the max precision at recall >= {0, 0.1, ..., 1}.
    Voc07,
    /// Area under the monotone precision envelope.
    AllPoints,
}

impl FromStr for ApMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "voc07" => Ok(ApMetric::Voc07),
            "all" => Ok(ApMetric::AllPoints),
            _ => Err(Error::invalid(format!(
                "unknown AP metric '{s}' (voc07|all)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtBox {
    pub quad: Quad,
    pub difficult: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDet {
    pub image: String,
    pub score: f64,
    pub quad: Quad,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matches {
    /// `(score, is_tp)` in rank order; detections on difficult objects are absent.
    pub ranked: Vec<(f64, bool)>,
    pub n_positive: usize,
}

/// Matches one class's detections to its ground truth. Detections are ranked
/// by score (ties keep input order). Each takes the unmatched ground truth of
/// its image with the highest IoU; at or above `iou_threshold` that is a TP,
/// or ignored when the object is difficult. Everything else is a FP.
pub fn match_detections(
    dets: &[ScoredDet],
    gts: &BTreeMap<String, Vec<GtBox>>,
    iou_threshold: f64,
) -> Matches {
    let n_positive = gts.values().flatten().filter(|g| !g.difficult).count();
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut used: BTreeMap<&str, Vec<bool>> = gts
        .iter()
        .map(|(k, v)| (k.as_str(), vec![false; v.len()]))
        .collect();

    let mut ranked = Vec::with_capacity(dets.len());
    for i in order {
        let d = &dets[i];
        let (Some(boxes), Some(taken)) = (gts.get(&d.image), used.get_mut(d.image.as_str())) else {
            ranked.push((d.score, false));
            continue;
        };
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in boxes.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let iou = overlap(&d.quad, &g.quad);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        match best {
            Some((j, iou)) if iou >= iou_threshold => {
                if boxes[j].difficult {
                    continue;
                }
                taken[j] = true;
                ranked.push((d.score, true));
            }
            _ => ranked.push((d.score, false)),
        }
    }
    Matches { ranked, n_positive }
}

/// AP of a ranked TP/FP list. No positives gives 0.
pub fn average_precision(ranked: &[(f64, bool)], n_positive: usize, metric: ApMetric) -> f64 {
    if n_positive == 0 {
        return 0.0;
    }
    let mut rec = Vec::with_capacity(ranked.len());
    let mut prec = Vec::with_capacity(ranked.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &(_, hit) in ranked {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        rec.push(tp as f64 / n_positive as f64);
        prec.push(tp as f64 / (tp + fp) as f64);
    }
    match metric {
        ApMetric::Voc07 => {
            let mut ap = 0.0;
            for k in 0..=10 {
                let t = k as f64 / 10.0;
                let p = rec
                    .iter()
                    .zip(&prec)
                    .filter(|(r, _)| **r >= t)
                    .map(|(_, p)| *p)
                    .fold(0.0, f64::max);
                ap += p;
            }
            ap / 11.0
        }
        ApMetric::AllPoints => {
            let mut mrec = vec![0.0];
            mrec.extend_from_slice(&rec);
            mrec.push(1.0);
            let mut mpre = vec![0.0];
            mpre.extend_from_slice(&prec);
            mpre.push(0.0);
            for i in (1..mpre.len()).rev() {
                mpre[i - 1] = mpre[i - 1].max(mpre[i]);
            }
            (1..mrec.len())
                .filter(|&i| mrec[i] != mrec[i - 1])
                .map(|i| (mrec[i] - mrec[i - 1]) * mpre[i])
                .sum()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub metric: ApMetric,
    /// Leave classes without ground truth out of the mAP instead of scoring 0.
    pub skip_empty_classes: bool,
    pub exec: Exec,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            metric: ApMetric::Voc07,
            skip_empty_classes: false,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAp {
    pub class: String,
    pub ap: f64,
    pub n_positive: usize,
    pub n_detections: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_class: Vec<ClassAp>,
    pub map: f64,
    /// Detections whose class is not in the vocabulary (all false positives).
    pub unknown_class_detections: usize,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,ap,n_gt,n_det\n");
        for c in &self.per_class {
            let _ = writeln!(
                s,
                "{},{:.6},{},{}",
                c.class, c.ap, c.n_positive, c.n_detections
            );
        }
        let _ = writeln!(s, "mAP,{:.6},,", self.map);
        s
    }

    pub fn to_table(&self) -> String {
        let width = self
            .per_class
            .iter()
            .map(|c| c.class.len())
            .max()
            .unwrap_or(0)
            .max(5);
        let mut s = format!(
            "{:<width$}  {:>8}  {:>6}  {:>6}\n",
            "class", "AP", "n_gt", "n_det"
        );
        for c in &self.per_class {
            let _ = writeln!(
                s,
                "{:<width$}  {:>8.6}  {:>6}  {:>6}",
                c.class, c.ap, c.n_positive, c.n_detections
            );
        }
        let _ = writeln!(s, "{:<width$}  {:>8.6}", "mAP", self.map);
        s
    }
}

/// Per-class AP and their unweighted mean over `classes`.
///
/// `gt` maps image name to its annotations; `dets` maps class name to that
/// class's detections across images.
pub fn evaluate_obb_map(
    gt: &BTreeMap<String, Vec<Annotation>>,
    dets: &BTreeMap<String, Vec<ScoredDet>>,
    classes: &[String],
    cfg: &EvalConfig,
) -> EvalReport {
    let per_class = par::map(cfg.exec, classes, |class| {
        let gts: BTreeMap<String, Vec<GtBox>> = gt
            .iter()
            .map(|(img, anns)| {
                let boxes = anns
                    .iter()
                    .filter(|a| &a.category == class)
                    .map(|a| GtBox {
                        quad: a.quad,
                        difficult: a.difficult,
                    })
                    .collect();
                (img.clone(), boxes)
            })
            .collect();
        let empty = Vec::new();
        let cd = dets.get(class).unwrap_or(&empty);
        let m = match_detections(cd, &gts, cfg.iou_threshold);
        ClassAp {
            class: class.clone(),
            ap: average_precision(&m.ranked, m.n_positive, cfg.metric),
            n_positive: m.n_positive,
            n_detections: cd.len(),
        }
    });
    let counted: Vec<f64> = per_class
        .iter()
        .filter(|c| !(cfg.skip_empty_classes && c.n_positive == 0))
        .map(|c| c.ap)
        .collect();
    let map = if counted.is_empty() {
        0.0
    } else {
        counted.iter().sum::<f64>() / counted.len() as f64
    };
    let unknown_class_detections = dets
        .iter()
        .filter(|(c, _)| !classes.contains(c))
        .map(|(_, v)| v.len())
        .sum();
    EvalReport {
        per_class,
        map,
        unknown_class_detections,
    }
}
