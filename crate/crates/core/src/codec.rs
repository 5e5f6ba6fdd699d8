//! Box parameterizations: the polar code (four vertex angles about the
//! minimum-bounding-rectangle center, the shorter MBR side, four side/diameter
//! ratios), the classic five- and eight-parameter forms, and the ablation
//! variants used by the fitting experiments.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{
    canonicalize_quad, min_area_rect, rect_corners, rect_to_quad, Point2, Quad, RotatedRect,
    EPS_AREA,
};

/// Ratios at or below this are refused on decode.
pub const EPS_RATIO: f64 = 1e-6;

/// Vertex-to-center distances at or below this are degenerate.
const EPS_DIAMETER: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarCode {
    /// MBR center in pixels.
    pub center: Point2,
    /// Fractional position of the center inside its grid cell, `[0, 1)²`.
    pub offset: [f64; 2],
    /// Vertex polar angles, radians, strictly ascending in `[0, 2π)`.
    pub theta: [f64; 4],
    /// Shorter MBR side in pixels.
    pub s: f64,
    /// `s / |V_p - C|`, paired with `theta[p]`.
    pub r: [f64; 4],
}

impl PolarCode {
    /// Rebuilds the code for a grid cell `(col, row)` read off the output maps.
    pub fn from_cell(
        col: usize,
        row: usize,
        offset: [f64; 2],
        theta: [f64; 4],
        s: f64,
        r: [f64; 4],
        stride: u32,
    ) -> Self {
        PolarCode {
            center: grid_center(col, row, offset, stride),
            offset,
            theta,
            s,
            r,
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(Error::invalid(format!(
                "shorter side must be positive, got {}",
                self.s
            )));
        }
        for (i, t) in self.theta.iter().enumerate() {
            if !(0.0..TAU).contains(t) {
                return Err(Error::invalid(format!("theta[{i}]={t} outside [0, 2π)")));
            }
        }
        if self.theta.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("theta must be strictly ascending"));
        }
        for (index, &ratio) in self.r.iter().enumerate() {
            if !(ratio > 0.0 && ratio.is_finite()) {
                return Err(Error::NonFiniteDiameter { index, ratio });
            }
        }
        Ok(())
    }
}

/// Pixel center for a grid cell plus sub-cell offset.
pub fn grid_center(col: usize, row: usize, offset: [f64; 2], stride: u32) -> Point2 {
    let s = stride as f64;
    Point2::new((col as f64 + offset[0]) * s, (row as f64 + offset[1]) * s)
}

/// Splits a pixel coordinate into its grid cell and the fraction in `[0, 1)`.
pub fn split_cell(c: f64, stride: u32) -> (i64, f64) {
    let q = c / stride as f64;
    let mut cell = q.floor();
    let mut frac = q - cell;
    if frac >= 1.0 {
        cell += 1.0;
        frac = 0.0;
    }
    (cell as i64, frac)
}

/// Angle of `vertex` about `center`: 0 along +y, growing toward +x, in `[0, 2π)`.
pub fn polar_angle_of(center: Point2, vertex: Point2) -> Result<f64> {
    let d = vertex - center;
    if d.norm() <= EPS_DIAMETER {
        return Err(Error::degenerate("vertex coincides with center"));
    }
    Ok(wrap_angle(d.x.atan2(d.y)))
}

pub(crate) fn wrap_angle(t: f64) -> f64 {
    let w = t.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// MBR, per-vertex angles and diameters, sorted by ascending angle.
struct PolarFrame {
    rect: RotatedRect,
    theta: [f64; 4],
    dist: [f64; 4],
}

fn polar_frame(q: &Quad) -> Result<PolarFrame> {
    let q = canonicalize_quad(q)?;
    let rect = min_area_rect(&q.v)?;
    let c = rect.center();
    let mut pairs = [(0.0, 0.0); 4];
    for (slot, v) in pairs.iter_mut().zip(q.v.iter()) {
        let d = v.dist(c);
        if d <= EPS_DIAMETER {
            return Err(Error::degenerate("vertex coincides with MBR center"));
        }
        *slot = (polar_angle_of(c, *v)?, d);
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pairs.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::degenerate("two vertices share a polar angle"));
    }
    Ok(PolarFrame {
        rect,
        theta: pairs.map(|p| p.0),
        dist: pairs.map(|p| p.1),
    })
}

/// Encodes a quad. `stride` only affects the sub-cell offset.
pub fn encode_polar(q: &Quad, stride: u32) -> Result<PolarCode> {
    if stride == 0 {
        return Err(Error::invalid("stride must be >= 1"));
    }
    let f = polar_frame(q)?;
    let s = f.rect.w.min(f.rect.h);
    let center = f.rect.center();
    Ok(PolarCode {
        center,
        offset: [
            split_cell(center.x, stride).1,
            split_cell(center.y, stride).1,
        ],
        theta: f.theta,
        s,
        r: f.dist.map(|d| s / d),
    })
}

fn vertices_from_polar(center: Point2, theta: &[f64], dist: &[f64]) -> [Point2; 4] {
    let mut v = [Point2::default(); 4];
    for p in 0..4 {
        let (sn, cs) = theta[p].sin_cos();
        v[p] = Point2::new(center.x + dist[p] * sn, center.y + dist[p] * cs);
    }
    v
}

fn checked_ratio_dists(side: f64, r: &[f64]) -> Result<[f64; 4]> {
    let mut d = [0.0; 4];
    for (index, &ratio) in r.iter().enumerate().take(4) {
        if !(ratio > EPS_RATIO && ratio.is_finite()) {
            return Err(Error::NonFiniteDiameter { index, ratio });
        }
        d[index] = side / ratio;
    }
    Ok(d)
}

/// Decodes a polar code back into a canonical quad. Angles are used as given;
/// only the ratios are guarded.
pub fn decode_polar(code: &PolarCode) -> Result<Quad> {
    let d = checked_ratio_dists(code.s, &code.r)?;
    canonicalize_quad(&Quad::new(vertices_from_polar(
        code.center,
        &code.theta,
        &d,
    )))
}

/// Five-parameter form; lossy for anything that is not a rectangle.
pub fn quad_to_five(q: &Quad) -> Result<RotatedRect> {
    min_area_rect(&q.v)
}

pub fn five_to_quad(r: &RotatedRect) -> Result<Quad> {
    rect_to_quad(r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EightParam {
    pub center: Point2,
    pub dv: [Point2; 4],
}

pub fn quad_to_eight(q: &Quad) -> Result<EightParam> {
    let q = canonicalize_quad(q)?;
    let center = min_area_rect(&q.v)?.center();
    Ok(EightParam {
        center,
        dv: q.v.map(|p| p - center),
    })
}

pub fn eight_to_quad(e: &EightParam) -> Result<Quad> {
    let q = Quad::new(e.dv.map(|d| e.center + d));
    if !q.is_finite() || q.area() <= EPS_AREA {
        return Err(Error::degenerate("eight-parameter box has no area"));
    }
    Ok(q)
}

/// Representation variants compared by the fitting experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RepresentationKind {
    /// `(cx, cy, w, h, angle)`, angle in radians in (-π/2, 0].
    SingleAngle,
    /// `(cx, cy, θ1..θ4, d1..d4)` with raw diameters.
    PolarDirect,
    /// `(cx, cy, θ1..θ4, d̄, k1..k4)`, `d̄` the mean diameter and `k = d̄ / d`.
    PolarAverage,
    /// `(cx, cy, θ1..θ4, L, r1..r4)`, `L` the longer MBR side and `r = L / d`.
    PolarLongerRatio,
    /// `(cx, cy, θ1..θ4, s, r1..r4)`, identical to [`encode_polar`].
    PolarShorterRatio,
}

impl RepresentationKind {
    pub const ALL: [RepresentationKind; 5] = [
        RepresentationKind::SingleAngle,
        RepresentationKind::PolarDirect,
        RepresentationKind::PolarAverage,
        RepresentationKind::PolarLongerRatio,
        RepresentationKind::PolarShorterRatio,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RepresentationKind::SingleAngle => "single_angle",
            RepresentationKind::PolarDirect => "polar_direct",
            RepresentationKind::PolarAverage => "polar_average",
            RepresentationKind::PolarLongerRatio => "polar_longer_ratio",
            RepresentationKind::PolarShorterRatio => "polar_shorter_ratio",
        }
    }

    pub fn param_len(self) -> usize {
        match self {
            RepresentationKind::SingleAngle => 5,
            RepresentationKind::PolarDirect => 10,
            _ => 11,
        }
    }
}

impl fmt::Display for RepresentationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RepresentationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RepresentationKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown representation '{s}'")))
    }
}

/// Parameter vector of `q` under `kind`.
pub fn encode_variant(q: &Quad, kind: RepresentationKind) -> Result<Vec<f64>> {
    if kind == RepresentationKind::SingleAngle {
        let r = quad_to_five(q)?;
        return Ok(vec![r.cx, r.cy, r.w, r.h, r.angle.to_radians()]);
    }
    let f = polar_frame(q)?;
    let c = f.rect.center();
    let mut out = Vec::with_capacity(kind.param_len());
    out.extend_from_slice(&[c.x, c.y]);
    out.extend_from_slice(&f.theta);
    match kind {
        RepresentationKind::PolarDirect => out.extend_from_slice(&f.dist),
        RepresentationKind::PolarAverage => {
            let mean = f.dist.iter().sum::<f64>() / 4.0;
            out.push(mean);
            out.extend(f.dist.iter().map(|d| mean / d));
        }
        RepresentationKind::PolarLongerRatio | RepresentationKind::PolarShorterRatio => {
            let side = if kind == RepresentationKind::PolarLongerRatio {
                f.rect.w.max(f.rect.h)
            } else {
                f.rect.w.min(f.rect.h)
            };
            out.push(side);
            out.extend(f.dist.iter().map(|d| side / d));
        }
        RepresentationKind::SingleAngle => unreachable!(),
    }
    Ok(out)
}

/// Vertices described by `params` in their natural construction order, with
/// no canonicalization. Angles may be any real value.
pub fn variant_vertices(params: &[f64], kind: RepresentationKind) -> Result<[Point2; 4]> {
    if params.len() != kind.param_len() {
        return Err(Error::invalid(format!(
            "{kind} expects {} parameters, got {}",
            kind.param_len(),
            params.len()
        )));
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid("non-finite parameter"));
    }
    let center = Point2::new(params[0], params[1]);
    if kind == RepresentationKind::SingleAngle {
        let (w, h) = (params[2], params[3]);
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::invalid("rectangle sides must be positive"));
        }
        return Ok(rect_corners(params[0], params[1], w, h, params[4]));
    }
    let theta = &params[2..6];
    let dist = match kind {
        RepresentationKind::PolarDirect => {
            let mut d = [0.0; 4];
            d.copy_from_slice(&params[6..10]);
            if d.iter().any(|&x| x <= 0.0) {
                return Err(Error::invalid("polar diameters must be positive"));
            }
            d
        }
        _ => checked_ratio_dists(params[6], &params[7..11])?,
    };
    Ok(vertices_from_polar(center, theta, &dist))
}

/// Inverse of [`encode_variant`].
pub fn decode_variant(params: &[f64], kind: RepresentationKind) -> Result<Quad> {
    canonicalize_quad(&Quad::new(variant_vertices(params, kind)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, SQRT_2};

    fn square2_at(cx: f64, cy: f64) -> Quad {
        Quad::from_coords([
            cx - 1.0,
            cy - 1.0,
            cx + 1.0,
            cy - 1.0,
            cx + 1.0,
            cy + 1.0,
            cx - 1.0,
            cy + 1.0,
        ])
    }

    fn same_set(a: &Quad, b: &Quad, tol: f64) -> bool {
        a.v.iter().all(|p| b.v.iter().any(|o| o.dist(*p) < tol))
    }

    #[test]
    fn polar_angle_axes() {
        let o = Point2::new(0.0, 0.0);
        assert_eq!(polar_angle_of(o, Point2::new(0.0, 1.0)).unwrap(), 0.0);
        assert_abs_diff_eq!(polar_angle_of(o, Point2::new(1.0, 0.0)).unwrap(), FRAC_PI_2);
        assert_abs_diff_eq!(
            polar_angle_of(o, Point2::new(-1.0, 1.0)).unwrap(),
            7.0 * FRAC_PI_4
        );
        assert!(polar_angle_of(o, o).is_err());
    }

    #[test]
    fn encode_square() {
        let c = encode_polar(&square2_at(5.0, 5.0), 4).unwrap();
        assert_abs_diff_eq!(c.center.x, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.center.y, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.offset[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(c.offset[1], 0.25, epsilon = 1e-12);
        for (k, t) in c.theta.iter().enumerate() {
            assert_abs_diff_eq!(*t, (2 * k + 1) as f64 * FRAC_PI_4, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(c.s, 2.0, epsilon = 1e-12);
        for r in c.r {
            assert_abs_diff_eq!(r, SQRT_2, epsilon = 1e-12);
        }
        c.check().unwrap();
        let back = decode_polar(&c).unwrap();
        assert!(back.max_vertex_dist(&canonicalize_quad(&square2_at(5.0, 5.0)).unwrap()) < 1e-6);
    }

    #[test]
    fn encode_four_by_two() {
        let q = Quad::from_coords([-2.0, -1.0, 2.0, -1.0, 2.0, 1.0, -2.0, 1.0]);
        let c = encode_polar(&q, 4).unwrap();
        assert_abs_diff_eq!(c.s, 2.0, epsilon = 1e-12);
        for r in c.r {
            assert_abs_diff_eq!(r, 2.0 / 5f64.sqrt(), epsilon = 1e-12);
        }
        let longer = encode_variant(&q, RepresentationKind::PolarLongerRatio).unwrap();
        assert_abs_diff_eq!(longer[6], 4.0, epsilon = 1e-12);
        for r in &longer[7..] {
            assert_abs_diff_eq!(*r, 4.0 / 5f64.sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn vertex_at_center_is_degenerate() {
        // MBR of this dart is [0,4]x[0,4]; the reflex vertex sits on its center
        let q = Quad::from_coords([0.0, 0.0, 4.0, 2.0, 0.0, 4.0, 2.0, 2.0]);
        assert!(matches!(
            encode_polar(&q, 4),
            Err(Error::DegenerateGeometry(_))
        ));
        assert!(encode_polar(&square2_at(5.0, 5.0), 0).is_err());
    }

    #[test]
    fn decode_from_grid_cell() {
        let code = PolarCode::from_cell(
            10,
            20,
            [0.3, 0.7],
            [FRAC_PI_4, 3.0 * FRAC_PI_4, 5.0 * FRAC_PI_4, 7.0 * FRAC_PI_4],
            20.0,
            [SQRT_2; 4],
            4,
        );
        assert_abs_diff_eq!(code.center.x, 41.2, epsilon = 1e-12);
        assert_abs_diff_eq!(code.center.y, 82.8, epsilon = 1e-12);
        let q = decode_polar(&code).unwrap();
        let want = Quad::from_coords([51.2, 92.8, 51.2, 72.8, 31.2, 72.8, 31.2, 92.8]);
        assert!(same_set(&q, &want, 1e-9), "{q:?}");
    }

    #[test]
    fn zero_ratio_refused() {
        let mut code = encode_polar(&square2_at(5.0, 5.0), 4).unwrap();
        code.r[2] = 0.0;
        assert_eq!(
            decode_polar(&code),
            Err(Error::NonFiniteDiameter {
                index: 2,
                ratio: 0.0
            })
        );
    }

    #[test]
    fn five_parameter_forms() {
        let s = SQRT_2;
        let diamond = Quad::from_coords([0.0, 1.0, 1.0, 0.0, 2.0, 1.0, 1.0, 2.0]);
        let r = quad_to_five(&diamond).unwrap();
        assert_abs_diff_eq!(r.angle, -45.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.w, s, epsilon = 1e-12);
        let back = five_to_quad(&r).unwrap();
        assert!(same_set(&back, &diamond, 1e-9));

        // general quad: the rectangle covers it
        let q = Quad::from_coords([0.0, 0.0, 3.0, 0.5, 2.5, 2.0, 0.2, 1.5]);
        let cover = five_to_quad(&quad_to_five(&q).unwrap()).unwrap();
        assert!(cover.area() >= q.area());
        assert_abs_diff_eq!(
            crate::geometry::iou_quad(&q, &cover).unwrap() * cover.area(),
            q.area(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn eight_parameter_forms() {
        let e = quad_to_eight(&square2_at(0.0, 0.0)).unwrap();
        for d in e.dv {
            assert_abs_diff_eq!(d.x.abs(), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(d.y.abs(), 1.0, epsilon = 1e-12);
        }
        let q = eight_to_quad(&e).unwrap();
        assert!(q.max_vertex_dist(&canonicalize_quad(&square2_at(0.0, 0.0)).unwrap()) < 1e-12);
        let flat = Quad::from_coords([0.0, 0.0, 1.0, 0.0, 2.0, 0.0, 3.0, 0.0]);
        assert!(quad_to_eight(&flat).is_err());
    }

    #[test]
    fn variants_round_trip_rectangle() {
        let q = rect_to_quad(&RotatedRect::new(37.0, -12.5, 40.0, 9.0, -23.0).unwrap()).unwrap();
        for kind in RepresentationKind::ALL {
            let p = encode_variant(&q, kind).unwrap();
            assert_eq!(p.len(), kind.param_len());
            let back = decode_variant(&p, kind).unwrap();
            assert!(back.max_vertex_dist(&q) < 1e-6, "{kind}: {back:?}");
        }
        let direct =
            encode_variant(&square2_at(0.0, 0.0), RepresentationKind::PolarDirect).unwrap();
        for d in &direct[6..] {
            assert_abs_diff_eq!(*d, SQRT_2, epsilon = 1e-12);
        }
        assert!(decode_variant(&[1.0, 2.0], RepresentationKind::PolarDirect).is_err());
        assert!("bogus".parse::<RepresentationKind>().is_err());
        assert_eq!(
            "polar_average".parse::<RepresentationKind>().unwrap(),
            RepresentationKind::PolarAverage
        );
    }
}
