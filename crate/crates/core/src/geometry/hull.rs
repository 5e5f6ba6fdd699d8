use super::{canonicalize_quad, rect_corners, signed_area, Point2, Quad, RotatedRect, EPS_AREA};
use crate::error::{Error, Result};

/// Andrew's monotone chain. Returns hull vertices with positive signed area,
/// collinear points dropped. Fewer than 3 points back means a degenerate set.
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then_with(|| a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let turn = |o: Point2, a: Point2, b: Point2| (a - o).cross(b - o);
    let mut hull: Vec<Point2> = Vec::with_capacity(pts.len() * 2);
    for &p in &pts {
        while hull.len() >= 2 && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

struct Candidate {
    rect: RotatedRect,
    area: f64,
}

/// Maps an edge-aligned box (side `a` along direction `dir_deg`, side `b`
/// across it) onto the (-90, 0] angle convention.
fn normalize(cx: f64, cy: f64, a: f64, b: f64, dir_deg: f64) -> RotatedRect {
    const SNAP: f64 = 1e-9;
    // reduce into (-90, 90]
    let mut phi = dir_deg.rem_euclid(180.0);
    if phi > 90.0 {
        phi -= 180.0;
    }
    if phi.abs() < SNAP {
        phi = 0.0;
    }
    if (phi - 90.0).abs() < SNAP || (phi + 90.0).abs() < SNAP {
        phi = 90.0;
    }
    if phi > 0.0 {
        let angle = if (phi - 90.0).abs() < SNAP {
            0.0
        } else {
            phi - 90.0
        };
        RotatedRect {
            cx,
            cy,
            w: b,
            h: a,
            angle,
        }
    } else {
        RotatedRect {
            cx,
            cy,
            w: a,
            h: b,
            angle: phi,
        }
    }
}

/// Minimum-area enclosing rectangle by rotating calipers over the convex hull.
///
/// Ties between equal-area candidates go to the angle closest to 0, then to
/// the larger `w`.
pub fn min_area_rect(points: &[Point2]) -> Result<RotatedRect> {
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::degenerate("non-finite point"));
    }
    let hull = convex_hull(points);
    if hull.len() < 3 || signed_area(&hull).abs() <= EPS_AREA {
        return Err(Error::degenerate("points are collinear or too few"));
    }
    let n = hull.len();
    let mut cands = Vec::with_capacity(n);
    for i in 0..n {
        let edge = hull[(i + 1) % n] - hull[i];
        let len = edge.norm();
        if len == 0.0 {
            continue;
        }
        let e = edge * (1.0 / len);
        let nrm = Point2::new(-e.y, e.x);
        let (mut umin, mut umax, mut vmin, mut vmax) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for p in &hull {
            let u = p.dot(e);
            let v = p.dot(nrm);
            umin = umin.min(u);
            umax = umax.max(u);
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
        let (a, b) = (umax - umin, vmax - vmin);
        let c = e * ((umin + umax) / 2.0) + nrm * ((vmin + vmax) / 2.0);
        let dir = e.y.atan2(e.x).to_degrees();
        cands.push(Candidate {
            rect: normalize(c.x, c.y, a, b, dir),
            area: a * b,
        });
    }
    let best = cands.iter().map(|c| c.area).fold(f64::INFINITY, f64::min);
    let tol = best * 1e-9;
    cands
        .into_iter()
        .filter(|c| c.area <= best + tol)
        .min_by(|x, y| {
            let ax = x.rect.angle.abs();
            let ay = y.rect.angle.abs();
            if (ax - ay).abs() > 1e-9 {
                ax.total_cmp(&ay)
            } else {
                y.rect.w.total_cmp(&x.rect.w)
            }
        })
        .map(|c| c.rect)
        .ok_or_else(|| Error::degenerate("no hull edge"))
}

/// The four corners of `r` in canonical order.
pub fn rect_to_quad(r: &RotatedRect) -> Result<Quad> {
    r.validate()?;
    let v = rect_corners(r.cx, r.cy, r.w, r.h, r.angle.to_radians());
    canonicalize_quad(&Quad::new(v))
}
