//! Planar primitives for quadrilateral boxes.
//!
//! Coordinates are image pixels: x grows rightward, y grows downward. The
//! canonical vertex cycle of a [`Quad`] starts at the vertex with the least y
//! (least x on ties) and runs in ascending polar-angle order about the box
//! center, which is the direction with a *negative* raw shoelace sum.

mod clip;
mod hull;

use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

pub use clip::{convex_intersection, intersection_area, iou_quad, iou_simple, is_convex, overlap};
pub use hull::{convex_hull, min_area_rect, rect_to_quad};

/// Areas at or below this value (pixels²) are treated as degenerate.
pub const EPS_AREA: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 2D cross product.
    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point2) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }
}

/// Four-vertex polygon in cyclic order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Quad {
    pub v: [Point2; 4],
}

impl Quad {
    pub const fn new(v: [Point2; 4]) -> Self {
        Quad { v }
    }

    /// Builds a quad from `x1 y1 x2 y2 x3 y3 x4 y4`.
    pub fn from_coords(c: [f64; 8]) -> Self {
        Quad {
            v: [
                Point2::new(c[0], c[1]),
                Point2::new(c[2], c[3]),
                Point2::new(c[4], c[5]),
                Point2::new(c[6], c[7]),
            ],
        }
    }

    pub fn coords(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        for (i, p) in self.v.iter().enumerate() {
            out[2 * i] = p.x;
            out[2 * i + 1] = p.y;
        }
        out
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.v).abs()
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Quad {
        Quad {
            v: self.v.map(|p| Point2::new(p.x + dx, p.y + dy)),
        }
    }

    /// Axis-aligned bounds as `[xmin, ymin, xmax, ymax]`.
    pub fn aabb(&self) -> [f64; 4] {
        let mut b = [
            f64::INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
        ];
        for p in &self.v {
            b[0] = b[0].min(p.x);
            b[1] = b[1].min(p.y);
            b[2] = b[2].max(p.x);
            b[3] = b[3].max(p.y);
        }
        b
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().all(|p| p.is_finite())
    }

    /// Largest vertex displacement against `other`, comparing index by index.
    pub fn max_vertex_dist(&self, other: &Quad) -> f64 {
        self.v
            .iter()
            .zip(other.v.iter())
            .map(|(a, b)| a.dist(*b))
            .fold(0.0, f64::max)
    }
}

/// Five-parameter oriented rectangle. `angle` is in degrees in (-90, 0]; the
/// `w` side runs along direction `(cos angle, sin angle)` in image axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatedRect {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub angle: f64,
}

impl RotatedRect {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, angle: f64) -> Result<Self> {
        let r = RotatedRect {
            cx,
            cy,
            w,
            h,
            angle,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::invalid("rectangle center must be finite"));
        }
        if !(self.w > 0.0 && self.h > 0.0 && self.w.is_finite() && self.h.is_finite()) {
            return Err(Error::invalid(format!(
                "rectangle sides must be positive, got w={} h={}",
                self.w, self.h
            )));
        }
        if !(self.angle > -90.0 && self.angle <= 0.0) {
            return Err(Error::invalid(format!(
                "rectangle angle {} outside (-90, 0]",
                self.angle
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.cx, self.cy)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Corners of a rectangle with the `w` side along `angle_rad`, in raw
/// construction order. No range checks on the angle.
pub fn rect_corners(cx: f64, cy: f64, w: f64, h: f64, angle_rad: f64) -> [Point2; 4] {
    let (s, c) = angle_rad.sin_cos();
    let u = Point2::new(c, s) * (w / 2.0);
    let n = Point2::new(-s, c) * (h / 2.0);
    let o = Point2::new(cx, cy);
    [o - u - n, o + u - n, o + u + n, o - u + n]
}

/// Raw shoelace sum / 2. Negative for the canonical cycle direction.
pub fn signed_area(pts: &[Point2]) -> f64 {
    let n = pts.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        acc += pts[i].cross(pts[(i + 1) % n]);
    }
    acc / 2.0
}

/// Absolute shoelace area.
pub fn polygon_area(pts: &[Point2]) -> Result<f64> {
    if pts.len() < 3 {
        return Err(Error::invalid(format!(
            "polygon needs at least 3 vertices, got {}",
            pts.len()
        )));
    }
    Ok(signed_area(pts).abs())
}

/// Reorders `q` into the canonical cycle: least-y start (least x on ties,
/// with y compared to within 1e-9 of the quad's extent), ascending polar
/// angle direction.
pub fn canonicalize_quad(q: &Quad) -> Result<Quad> {
    if !q.is_finite() {
        return Err(Error::degenerate("quad has non-finite vertices"));
    }
    let a = signed_area(&q.v);
    if a.abs() <= EPS_AREA {
        return Err(Error::degenerate(format!("quad area {a:e} too small")));
    }
    let mut v = q.v;
    if a > 0.0 {
        v.reverse();
    }
    // y values this close count as tied, so rounding noise cannot move the start
    let [x0, y0, x1, y1] = q.aabb();
    let tol = 1e-9 * (x1 - x0).max(y1 - y0).max(1.0);
    let min_y = v.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let start = (0..4)
        .filter(|&i| v[i].y <= min_y + tol)
        .min_by(|&i, &j| v[i].x.total_cmp(&v[j].x))
        .unwrap_or(0);
    v.rotate_left(start);
    Ok(Quad { v })
}

/// Rigid rotation of every vertex about `center` by `phi` radians.
pub fn rotate_quad(q: &Quad, center: Point2, phi: f64) -> Quad {
    let (s, c) = phi.sin_cos();
    Quad {
        v: q.v.map(|p| {
            let d = p - center;
            Point2::new(center.x + d.x * c - d.y * s, center.y + d.x * s + d.y * c)
        }),
    }
}
