use super::{signed_area, Point2, Quad, EPS_AREA};
use crate::error::{Error, Result};

fn with_positive_orientation(pts: &[Point2]) -> Vec<Point2> {
    let mut v = pts.to_vec();
    if signed_area(&v) < 0.0 {
        v.reverse();
    }
    v
}

/// True when every non-degenerate turn of the closed polygon has one sign.
pub fn is_convex(pts: &[Point2]) -> bool {
    let n = pts.len();
    if n < 3 {
        return false;
    }
    let mut sign = 0.0;
    for i in 0..n {
        let e1 = pts[(i + 1) % n] - pts[i];
        let e2 = pts[(i + 2) % n] - pts[(i + 1) % n];
        let c = e1.cross(e2);
        if c.abs() <= 1e-12 * e1.norm() * e2.norm() {
            continue;
        }
        if sign == 0.0 {
            sign = c.signum();
        } else if c.signum() != sign {
            return false;
        }
    }
    sign != 0.0
}

/// Sutherland–Hodgman: clips `subject` against convex `clip`. Both inputs
/// must have positive orientation.
fn clip_positive(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    let mut out: Vec<Point2> = subject.to_vec();
    let m = clip.len();
    for i in 0..m {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let edge = clip[(i + 1) % m] - a;
        let input = std::mem::take(&mut out);
        let k = input.len();
        for j in 0..k {
            let p = input[j];
            let q = input[(j + 1) % k];
            let sp = edge.cross(p - a);
            let sq = edge.cross(q - a);
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push(p + (q - p) * t);
            }
        }
    }
    out.dedup_by(|a, b| a.dist(*b) < 1e-12);
    if out.len() > 1 && out[0].dist(out[out.len() - 1]) < 1e-12 {
        out.pop();
    }
    if out.len() < 3 || signed_area(&out).abs() <= EPS_AREA {
        out.clear();
    }
    out
}

/// Vertices of `a ∩ b` for convex quads; empty when they do not overlap.
pub fn convex_intersection(a: &Quad, b: &Quad) -> Result<Vec<Point2>> {
    if !is_convex(&a.v) || !is_convex(&b.v) {
        return Err(Error::NonConvexInput);
    }
    Ok(clip_positive(
        &with_positive_orientation(&a.v),
        &with_positive_orientation(&b.v),
    ))
}

/// Intersection over union of two convex quads.
pub fn iou_quad(a: &Quad, b: &Quad) -> Result<f64> {
    let (aa, ab) = (a.area(), b.area());
    if !(aa > EPS_AREA && ab > EPS_AREA) || !a.is_finite() || !b.is_finite() {
        return Err(Error::degenerate("IoU of a zero-area quad"));
    }
    let inter = signed_area(&convex_intersection(a, b)?).abs();
    Ok((inter / (aa + ab - inter)).clamp(0.0, 1.0))
}

fn segments_cross(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> bool {
    let d1 = (p2 - p1).cross(q1 - p1);
    let d2 = (p2 - p1).cross(q2 - p1);
    let d3 = (q2 - q1).cross(p1 - q1);
    let d4 = (q2 - q1).cross(p2 - q1);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Splits a simple quad into two positively oriented triangles.
fn triangulate(q: &Quad) -> Result<[[Point2; 3]; 2]> {
    let v = &q.v;
    if segments_cross(v[0], v[1], v[2], v[3]) || segments_cross(v[1], v[2], v[3], v[0]) {
        return Err(Error::degenerate("self-intersecting quad"));
    }
    let orient = signed_area(v).signum();
    // cut along the diagonal through the reflex vertex, if any
    let reflex = (0..4).find(|&i| {
        let prev = v[(i + 3) % 4];
        let next = v[(i + 1) % 4];
        (v[i] - prev).cross(next - v[i]) * orient < 0.0
    });
    let k = reflex.unwrap_or(0);
    let t = |a: usize, b: usize, c: usize| {
        let mut tri = [v[a % 4], v[b % 4], v[c % 4]];
        if signed_area(&tri) < 0.0 {
            tri.reverse();
        }
        tri
    };
    Ok([t(k, k + 1, k + 2), t(k + 2, k + 3, k)])
}

/// Area of `a ∩ b` for simple quads, convex or not.
pub fn intersection_area(a: &Quad, b: &Quad) -> Result<f64> {
    if is_convex(&a.v) && is_convex(&b.v) {
        return Ok(signed_area(&convex_intersection(a, b)?).abs());
    }
    let ta = triangulate(a)?;
    let tb = triangulate(b)?;
    let mut inter = 0.0;
    for x in &ta {
        for y in &tb {
            inter += signed_area(&clip_positive(x, y)).abs();
        }
    }
    Ok(inter)
}

/// IoU for any two simple quads, convex or not. Non-convex inputs are split
/// into triangles and the pairwise convex intersections summed.
pub fn iou_simple(a: &Quad, b: &Quad) -> Result<f64> {
    let (aa, ab) = (a.area(), b.area());
    if !(aa > EPS_AREA && ab > EPS_AREA) || !a.is_finite() || !b.is_finite() {
        return Err(Error::degenerate("IoU of a zero-area quad"));
    }
    let inter = intersection_area(a, b)?;
    Ok((inter / (aa + ab - inter)).clamp(0.0, 1.0))
}

/// Overlap used by NMS, matching and the fitting harness: [`iou_simple`], with
/// unusable shapes (degenerate or self-intersecting) counting as no overlap.
pub fn overlap(a: &Quad, b: &Quad) -> f64 {
    iou_simple(a, b).unwrap_or(0.0)
}
