use polardet::geometry::{
    canonicalize_quad, convex_hull, iou_quad, min_area_rect, rect_corners, rect_to_quad,
    rotate_quad, Point2, Quad, RotatedRect,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arb_rect() -> impl Strategy<Value = RotatedRect> {
    (
        -500.0..500.0f64,
        -500.0..500.0f64,
        1.0..300.0f64,
        1.0..300.0f64,
        -89.999..0.0f64,
    )
        .prop_map(|(cx, cy, w, h, angle)| RotatedRect {
            cx,
            cy,
            w,
            h,
            angle,
        })
}

fn quad(r: &RotatedRect) -> Quad {
    Quad::new(rect_corners(r.cx, r.cy, r.w, r.h, r.angle.to_radians()))
}

/// Point-in-convex-polygon by consistent cross-product sign.
fn inside(q: &Quad, p: Point2) -> bool {
    let mut pos = false;
    let mut neg = false;
    for i in 0..4 {
        let a = q.v[i];
        let b = q.v[(i + 1) % 4];
        let c = (b - a).cross(p - a);
        pos |= c > 0.0;
        neg |= c < 0.0;
    }
    !(pos && neg)
}

/// IoU by uniform sampling of the union's bounding box.
fn monte_carlo_iou(a: &Quad, b: &Quad, n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let ba = a.aabb();
    let bb = b.aabb();
    let (x0, y0) = (ba[0].min(bb[0]), ba[1].min(bb[1]));
    let (x1, y1) = (ba[2].max(bb[2]), ba[3].max(bb[3]));
    let (mut inter, mut uni) = (0usize, 0usize);
    for _ in 0..n {
        let p = Point2::new(rng.gen_range(x0..x1), rng.gen_range(y0..y1));
        let (ia, ib) = (inside(a, p), inside(b, p));
        inter += usize::from(ia && ib);
        uni += usize::from(ia || ib);
    }
    if uni == 0 {
        0.0
    } else {
        inter as f64 / uni as f64
    }
}

#[test]
fn iou_matches_sampling_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let a = quad(&RotatedRect {
            cx: rng.gen_range(0.0..10.0),
            cy: rng.gen_range(0.0..10.0),
            w: rng.gen_range(2.0..10.0),
            h: rng.gen_range(2.0..10.0),
            angle: rng.gen_range(-90.0..0.0),
        });
        let b = quad(&RotatedRect {
            cx: rng.gen_range(0.0..10.0),
            cy: rng.gen_range(0.0..10.0),
            w: rng.gen_range(2.0..10.0),
            h: rng.gen_range(2.0..10.0),
            angle: rng.gen_range(-90.0..0.0),
        });
        let exact = iou_quad(&a, &b).unwrap();
        let mc = monte_carlo_iou(&a, &b, 200_000, &mut rng);
        assert!((exact - mc).abs() < 5e-3, "exact {exact} mc {mc}");
    }
}

#[test]
fn fixed_iou_cases() {
    let unit = Quad::from_coords([0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0]);
    assert!((iou_quad(&unit, &unit).unwrap() - 1.0).abs() < 1e-12);
    let half = unit.translate(0.5, 0.0);
    assert!((iou_quad(&unit, &half).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    let turned = rotate_quad(&unit, Point2::new(0.5, 0.5), std::f64::consts::FRAC_PI_4);
    // octagon intersection: 2(sqrt 2 - 1) over 2 - 2(sqrt 2 - 1)
    let inter = 2.0 * (2f64.sqrt() - 1.0);
    assert!((iou_quad(&unit, &turned).unwrap() - inter / (2.0 - inter)).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn iou_symmetric_and_bounded(a in arb_rect(), b in arb_rect()) {
        let (qa, qb) = (quad(&a), quad(&b));
        let ab = iou_quad(&qa, &qb).unwrap();
        let ba = iou_quad(&qb, &qa).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((iou_quad(&qa, &qa).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rect_round_trip(r in arb_rect()) {
        let q = rect_to_quad(&r).unwrap();
        let back = min_area_rect(&q.v).unwrap();
        let again = rect_to_quad(&back).unwrap();
        let scale = r.w.max(r.h);
        prop_assert!(q.max_vertex_dist(&again) <= 1e-9 * scale.max(1.0));
        prop_assert!((back.area() - r.area()).abs() <= 1e-9 * r.area());
    }

    #[test]
    fn mbr_encloses_and_is_no_larger_than_aabb(pts in prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 3..12)) {
        let pts: Vec<Point2> = pts.into_iter().map(|(x, y)| Point2::new(x, y)).collect();
        prop_assume!(convex_hull(&pts).len() >= 3);
        let hull_area = polardet::geometry::polygon_area(&convex_hull(&pts)).unwrap();
        prop_assume!(hull_area > 1e-3);
        let r = min_area_rect(&pts).unwrap();
        let xs = pts.iter().map(|p| p.x);
        let ys = pts.iter().map(|p| p.y);
        let aabb = (xs.clone().fold(f64::MIN, f64::max) - xs.fold(f64::MAX, f64::min))
            * (ys.clone().fold(f64::MIN, f64::max) - ys.fold(f64::MAX, f64::min));
        prop_assert!(r.area() <= aabb * (1.0 + 1e-9));
        prop_assert!(r.area() >= hull_area * (1.0 - 1e-9));
        let q = rect_to_quad(&r).unwrap();
        // every point inside the rectangle, up to rounding
        let tol = 1e-7 * (1.0 + r.w.max(r.h));
        for p in &pts {
            for i in 0..4 {
                let a = q.v[i];
                let b = q.v[(i + 1) % 4];
                let e = b - a;
                prop_assert!(e.cross(*p - a) / e.norm() <= tol);
            }
        }
    }

    #[test]
    fn rotation_preserves_area(r in arb_rect(), phi in -7.0..7.0f64) {
        let q = quad(&r);
        let t = rotate_quad(&q, Point2::new(3.0, -2.0), phi);
        prop_assert!((t.area() - q.area()).abs() <= 1e-9 * q.area());
    }

    #[test]
    fn canonical_form_is_idempotent(r in arb_rect(), shift in 0usize..4, flip: bool) {
        let q = quad(&r);
        let mut v = q.v;
        v.rotate_left(shift);
        if flip {
            v.reverse();
        }
        let c1 = canonicalize_quad(&Quad::new(v)).unwrap();
        let c2 = canonicalize_quad(&c1).unwrap();
        prop_assert_eq!(c1, c2);
        prop_assert_eq!(c1, canonicalize_quad(&q).unwrap());
    }
}
