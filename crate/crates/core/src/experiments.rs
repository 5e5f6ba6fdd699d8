//! Desk-scale optimization experiments on box parameterizations.
//!
//! Nothing here trains a network. Each experiment fits a representation's
//! parameter vector directly to a ground-truth box by plain gradient descent
//! on the L1 distance between parameter vectors, and measures how the decoded
//! box's IoU with the ground truth evolves.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{encode_variant, variant_vertices, RepresentationKind};
use crate::error::{Error, Result};
use crate::geometry::{
    iou_quad, overlap, rect_corners, rect_to_quad, rotate_quad, Point2, Quad, RotatedRect,
};
use crate::par::{self, Exec};

pub const CURVE_CSV_HEADER: &str = "ar,bias_deg,iou";
pub const COMPARISON_CSV_HEADER: &str = "kind,mean_final_iou,mean_converged_at,fail_rate";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub ar: f64,
    pub bias_deg: f64,
    pub iou: f64,
}

/// IoU between a unit-area rectangle of each aspect ratio and itself rotated
/// about its center, for biases `-bias_max..=bias_max` in `step` increments.
pub fn iou_angle_curve(aspect_ratios: &[f64], bias_max: f64, step: f64) -> Result<Vec<CurveRow>> {
    iou_angle_curve_with(aspect_ratios, bias_max, step, Exec::default())
}

pub fn iou_angle_curve_with(
    aspect_ratios: &[f64],
    bias_max: f64,
    step: f64,
    exec: Exec,
) -> Result<Vec<CurveRow>> {
    if let Some(ar) = aspect_ratios
        .iter()
        .find(|&&a| !(a >= 1.0 && a.is_finite()))
    {
        return Err(Error::invalid(format!("aspect ratio {ar} must be >= 1")));
    }
    if !(step > 0.0 && step <= bias_max && bias_max.is_finite()) {
        return Err(Error::invalid(format!(
            "need 0 < step ({step}) <= bias_max ({bias_max})"
        )));
    }
    let n = (bias_max / step + 1e-9).floor() as i64;
    let grid: Vec<(f64, f64)> = aspect_ratios
        .iter()
        .flat_map(|&ar| (-n..=n).map(move |k| (ar, k as f64 * step)))
        .collect();
    let rows = par::map(exec, &grid, |&(ar, bias)| {
        let base = Quad::new(rect_corners(0.0, 0.0, ar.sqrt(), 1.0 / ar.sqrt(), 0.0));
        let turned = rotate_quad(&base, Point2::default(), bias.to_radians());
        iou_quad(&base, &turned).map(|iou| CurveRow {
            ar,
            bias_deg: bias,
            iou,
        })
    });
    rows.into_iter().collect()
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut s = format!("{CURVE_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{:.6},{:.6},{:.6}", r.ar, r.bias_deg, r.iou);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub lr: f64,
    pub max_iter: usize,
    /// IoU that counts as converged.
    pub converge_iou: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lr: 0.01,
            max_iter: 2000,
            converge_iou: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitStep {
    pub iteration: usize,
    /// L1 distance between current and target parameters.
    pub loss: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    pub representation: RepresentationKind,
    /// Iterations `0..=max_iter`; iteration 0 is the initial state.
    pub steps: Vec<FitStep>,
    pub converged_at: Option<usize>,
    /// Parameters after the last step.
    pub final_params: Vec<f64>,
}

impl FitTrace {
    pub fn final_iou(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.iou)
    }
}

/// Lower bound kept on lengths and ratios during descent.
const PARAM_FLOOR: f64 = 1e-3;

/// Indices of parameters that must stay positive.
fn positive_range(kind: RepresentationKind) -> std::ops::Range<usize> {
    match kind {
        RepresentationKind::SingleAngle => 2..4,
        RepresentationKind::PolarDirect => 6..10,
        _ => 6..11,
    }
}

fn clamp_params(p: &mut [f64], kind: RepresentationKind) {
    for v in &mut p[positive_range(kind)] {
        *v = v.max(PARAM_FLOOR);
    }
    // shorter side over a diameter never exceeds sqrt(2) for a rectangle
    if kind == RepresentationKind::PolarShorterRatio {
        for v in &mut p[7..11] {
            *v = v.min(std::f64::consts::SQRT_2);
        }
    }
}

/// Decoded-box IoU with the ground truth; shapes that cannot be decoded or
/// are self-intersecting score 0.
fn decoded_iou(gt: &Quad, params: &[f64], kind: RepresentationKind) -> f64 {
    variant_vertices(params, kind)
        .map(|v| overlap(gt, &Quad::new(v)))
        .unwrap_or(0.0)
}

/// Plain gradient descent on `Σ|p - p_gt|` from `init`. Angles are left
/// unwrapped; lengths and ratios are floored after every step.
pub fn fit_representation(
    gt: &Quad,
    kind: RepresentationKind,
    init: &[f64],
    cfg: &FitConfig,
) -> Result<FitTrace> {
    let target = encode_variant(gt, kind)?;
    if init.len() != target.len() {
        return Err(Error::invalid(format!(
            "{kind} init has {} parameters, expected {}",
            init.len(),
            target.len()
        )));
    }
    let mut p = init.to_vec();
    clamp_params(&mut p, kind);
    variant_vertices(&p, kind)
        .map_err(|e| Error::invalid(format!("initial {kind} parameters not decodable: {e}")))?;

    let mut steps = Vec::with_capacity(cfg.max_iter + 1);
    let mut converged_at = None;
    for it in 0..=cfg.max_iter {
        let loss: f64 = p.iter().zip(&target).map(|(a, b)| (a - b).abs()).sum();
        let iou = decoded_iou(gt, &p, kind);
        if converged_at.is_none() && iou >= cfg.converge_iou {
            converged_at = Some(it);
        }
        steps.push(FitStep {
            iteration: it,
            loss,
            iou,
        });
        if it == cfg.max_iter {
            break;
        }
        for (v, t) in p.iter_mut().zip(&target) {
            // subgradient of |v - t|, zero at the tie
            let g = if *v > *t {
                1.0
            } else if *v < *t {
                -1.0
            } else {
                0.0
            };
            *v -= cfg.lr * g;
        }
        clamp_params(&mut p, kind);
    }
    Ok(FitTrace {
        representation: kind,
        steps,
        converged_at,
        final_params: p,
    })
}

/// Traces for the five-parameter boundary case: the ground truth lies at
/// -10° while the prediction starts at -80° with width and height swapped,
/// i.e. a box only 20° away whose five parameters are far off.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCase {
    pub gt: Quad,
    pub single_angle: FitTrace,
    pub polar: FitTrace,
}

pub fn boundary_case(
    center: Point2,
    long: f64,
    short: f64,
    cfg: &FitConfig,
) -> Result<BoundaryCase> {
    let gt = rect_to_quad(&RotatedRect::new(center.x, center.y, long, short, -10.0)?)?;
    let init_single = vec![center.x, center.y, short, long, (-80f64).to_radians()];
    let init_quad = Quad::new(variant_vertices(
        &init_single,
        RepresentationKind::SingleAngle,
    )?);
    let init_polar = encode_variant(&init_quad, RepresentationKind::PolarShorterRatio)?;
    Ok(BoundaryCase {
        single_angle: fit_representation(&gt, RepresentationKind::SingleAngle, &init_single, cfg)?,
        polar: fit_representation(&gt, RepresentationKind::PolarShorterRatio, &init_polar, cfg)?,
        gt,
    })
}

/// Random rectangles and perturbed starting boxes for the comparison sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub side_min: f64,
    pub side_max: f64,
    pub ar_min: f64,
    pub ar_max: f64,
    /// Center shift per axis, as a fraction of the shorter side.
    pub center_jitter: f64,
    /// Half-width of the uniform log-scale perturbation.
    pub log_scale_jitter: f64,
    /// Half-width of the uniform log-aspect perturbation.
    pub log_aspect_jitter: f64,
    /// Half-width of the uniform rotation perturbation, degrees.
    pub angle_jitter_deg: f64,
    pub fit: FitConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            side_min: 4.0,
            side_max: 300.0,
            ar_min: 1.0,
            ar_max: 10.0,
            center_jitter: 0.2,
            log_scale_jitter: 0.2,
            log_aspect_jitter: 0.1,
            angle_jitter_deg: 15.0,
            fit: FitConfig::default(),
        }
    }
}

/// Per-sample RNG, independent of evaluation order.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A rectangle with both sides in `[side_min, side_max]` and aspect ratio in
/// `[ar_min, ar_max]`, uniformly oriented.
pub fn random_rect<R: Rng>(rng: &mut R, cfg: &SweepConfig) -> RotatedRect {
    let ar = rng.gen_range(cfg.ar_min..=cfg.ar_max);
    let long_lo = (cfg.side_min * ar).min(cfg.side_max);
    let long = rng.gen_range(long_lo..=cfg.side_max);
    let short = long / ar;
    let (w, h) = if rng.gen_bool(0.5) {
        (long, short)
    } else {
        (short, long)
    };
    // (-90, 0]
    let angle = -rng.gen_range(0.0..90.0);
    RotatedRect {
        cx: rng.gen_range(0.0..1024.0),
        cy: rng.gen_range(0.0..1024.0),
        w,
        h,
        angle,
    }
}

/// Perturbs center, scale, aspect and angle of `r`.
pub fn perturb_rect<R: Rng>(rng: &mut R, r: &RotatedRect, cfg: &SweepConfig) -> Quad {
    let short = r.w.min(r.h);
    let dx = rng.gen_range(-1.0..=1.0) * cfg.center_jitter * short;
    let dy = rng.gen_range(-1.0..=1.0) * cfg.center_jitter * short;
    let scale = (rng.gen_range(-1.0..=1.0) * cfg.log_scale_jitter).exp();
    let aspect = (rng.gen_range(-1.0..=1.0) * cfg.log_aspect_jitter).exp();
    let dtheta = rng.gen_range(-1.0..=1.0) * cfg.angle_jitter_deg;
    Quad::new(rect_corners(
        r.cx + dx,
        r.cy + dy,
        r.w * scale * aspect,
        r.h * scale / aspect,
        (r.angle + dtheta).to_radians(),
    ))
}

/// One sample's outcome for one representation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOutcome {
    pub kind: RepresentationKind,
    pub final_iou: f64,
    pub converged_at: Option<usize>,
}

/// Runs every representation on sample `index` of the sweep.
pub fn run_sample(seed: u64, index: u64, cfg: &SweepConfig) -> Result<Vec<SampleOutcome>> {
    let mut rng = sample_rng(seed, index);
    let rect = random_rect(&mut rng, cfg);
    let gt = rect_to_quad(&rect)?;
    let init = perturb_rect(&mut rng, &rect, cfg);
    RepresentationKind::ALL
        .iter()
        .map(|&kind| {
            let p0 = encode_variant(&init, kind)?;
            let t = fit_representation(&gt, kind, &p0, &cfg.fit)?;
            Ok(SampleOutcome {
                kind,
                final_iou: t.final_iou(),
                converged_at: t.converged_at,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonRow {
    pub kind: RepresentationKind,
    pub mean_final_iou: f64,
    /// Mean over converged samples; NaN when none converged.
    pub mean_converged_at: f64,
    pub fail_rate: f64,
}

/// Fits all five representations on `n_samples` seeded sweep samples and
/// summarizes each. Samples reduce in index order.
pub fn compare_representations(
    n_samples: usize,
    cfg: &SweepConfig,
    seed: u64,
    exec: Exec,
) -> Result<Vec<ComparisonRow>> {
    if n_samples == 0 {
        return Ok(Vec::new());
    }
    let outcomes: Vec<Vec<SampleOutcome>> =
        par::map_range(exec, n_samples, |i| run_sample(seed, i as u64, cfg))
            .into_iter()
            .collect::<Result<_>>()?;
    Ok(RepresentationKind::ALL
        .iter()
        .enumerate()
        .map(|(k, &kind)| {
            let mut iou_sum = 0.0;
            let mut conv_sum = 0.0;
            let mut conv_n = 0usize;
            for o in &outcomes {
                iou_sum += o[k].final_iou;
                if let Some(c) = o[k].converged_at {
                    conv_sum += c as f64;
                    conv_n += 1;
                }
            }
            ComparisonRow {
                kind,
                mean_final_iou: iou_sum / n_samples as f64,
                mean_converged_at: if conv_n == 0 {
                    f64::NAN
                } else {
                    conv_sum / conv_n as f64
                },
                fail_rate: (n_samples - conv_n) as f64 / n_samples as f64,
            }
        })
        .collect())
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut s = format!("{COMPARISON_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6}",
            r.kind, r.mean_final_iou, r.mean_converged_at, r.fail_rate
        );
    }
    s
}

/// Per-iteration CSV of one or more traces.
pub fn trace_csv(traces: &[&FitTrace]) -> String {
    let mut s = String::from("kind,iteration,loss,iou\n");
    for t in traces {
        for st in &t.steps {
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6}",
                t.representation, st.iteration, st.loss, st.iou
            );
        }
    }
    s
}
