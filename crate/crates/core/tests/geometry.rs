use lanetopo::geometry::{avg_l1, box_iou, chamfer, discrete_frechet, giou, resample_uniform, BoxPair};
use lanetopo::scene::{BBox, Point3, Polyline3D};
use proptest::prelude::*;

fn euclid(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Coupling recursion written straight from the definition, no memoisation.
fn frechet_oracle(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    fn c(a: &[[f64; 3]], b: &[[f64; 3]], i: usize, j: usize) -> f64 {
        let d = euclid(a[i], b[j]);
        match (i, j) {
            (0, 0) => d,
            (0, _) => c(a, b, 0, j - 1).max(d),
            (_, 0) => c(a, b, i - 1, 0).max(d),
            _ => c(a, b, i - 1, j).min(c(a, b, i - 1, j - 1)).min(c(a, b, i, j - 1)).max(d),
        }
    }
    c(a, b, a.len() - 1, b.len() - 1)
}

fn chamfer_oracle(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let mut ab = 0.0;
    for p in a {
        let mut best = f64::INFINITY;
        for q in b {
            best = best.min(euclid(*p, *q));
        }
        ab += best;
    }
    let mut ba = 0.0;
    for q in b {
        let mut best = f64::INFINITY;
        for p in a {
            best = best.min(euclid(*p, *q));
        }
        ba += best;
    }
    0.5 * (ab / a.len() as f64 + ba / b.len() as f64)
}

fn l1_oracle(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        for d in 0..3 {
            s += (a[k][d] - b[k][d]).abs();
        }
    }
    s / a.len() as f64
}

fn points(max_len: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-50.0..50.0f64), 2..=max_len)
}

fn poly(c: &[[f64; 3]]) -> Polyline3D {
    Polyline3D::from_xyz(c).unwrap()
}

fn pts(c: &[[f64; 3]]) -> Vec<Point3> {
    c.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect()
}

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0..100.0f64, 0.0..100.0f64, 0.5..50.0f64, 0.5..50.0f64).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
}

proptest! {
    #[test]
    fn frechet_matches_recursive_oracle(a in points(6), b in points(6)) {
        let fast = discrete_frechet(&poly(&a), &poly(&b));
        prop_assert!((fast - frechet_oracle(&a, &b)).abs() <= 1e-12);
    }

    #[test]
    fn frechet_is_symmetric(a in points(8), b in points(8)) {
        prop_assert_eq!(discrete_frechet(&poly(&a), &poly(&b)), discrete_frechet(&poly(&b), &poly(&a)));
    }

    #[test]
    fn frechet_reversing_both_is_invariant(a in points(8), b in points(8)) {
        let (pa, pb) = (poly(&a), poly(&b));
        let d = discrete_frechet(&pa, &pb);
        prop_assert!((d - discrete_frechet(&pa.reversed(), &pb.reversed())).abs() <= 1e-12);
    }

    #[test]
    fn frechet_triangle_inequality(a in points(6), b in points(6), c in points(6)) {
        let (pa, pb, pc) = (poly(&a), poly(&b), poly(&c));
        let lhs = discrete_frechet(&pa, &pc);
        prop_assert!(lhs <= discrete_frechet(&pa, &pb) + discrete_frechet(&pb, &pc) + 1e-9);
    }

    #[test]
    fn frechet_bounded_below_by_endpoints(a in points(8), b in points(8)) {
        let d = discrete_frechet(&poly(&a), &poly(&b));
        prop_assert!(d >= euclid(a[0], b[0]));
        prop_assert!(d >= euclid(*a.last().unwrap(), *b.last().unwrap()));
    }

    #[test]
    fn frechet_of_self_is_zero(a in points(8)) {
        prop_assert_eq!(discrete_frechet(&poly(&a), &poly(&a)), 0.0);
    }

    #[test]
    fn chamfer_matches_double_loop(a in points(8), b in points(8)) {
        let fast = chamfer(&pts(&a), &pts(&b)).unwrap();
        prop_assert!((fast - chamfer_oracle(&a, &b)).abs() <= 1e-12);
    }

    #[test]
    fn avg_l1_matches_double_loop(pair in (2usize..=8).prop_flat_map(|n| (
        prop::collection::vec(prop::array::uniform3(-50.0..50.0f64), n),
        prop::collection::vec(prop::array::uniform3(-50.0..50.0f64), n),
    ))) {
        let (a, b) = pair;
        let fast = avg_l1(&poly(&a), &poly(&b)).unwrap();
        prop_assert!((fast - l1_oracle(&a, &b)).abs() <= 1e-12);
    }

    #[test]
    fn resample_straight_line_is_uniform(
        start in prop::array::uniform3(-20.0..20.0f64),
        dir in prop::array::uniform3(-1.0..1.0f64),
        len in 1.0..100.0f64,
        cuts in prop::collection::vec(0.01..0.99f64, 0..6),
        n in 2usize..20,
    ) {
        let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        prop_assume!(norm > 0.1);
        let at = |t: f64| [start[0] + dir[0] / norm * len * t, start[1] + dir[1] / norm * len * t, start[2] + dir[2] / norm * len * t];
        let mut ts = cuts.clone();
        ts.sort_by(f64::total_cmp);
        ts.dedup_by(|x, y| (*x - *y).abs() < 1e-3);
        let mut coords = vec![at(0.0)];
        coords.extend(ts.iter().map(|&t| at(t)));
        coords.push(at(1.0));
        let out = resample_uniform(&poly(&coords), n).unwrap();
        prop_assert_eq!(out.len(), n);
        prop_assert_eq!(out.first(), poly(&coords).first());
        prop_assert_eq!(out.last(), poly(&coords).last());
        let step = len / (n - 1) as f64;
        for w in out.points().windows(2) {
            prop_assert!((w[0].distance(w[1]) - step).abs() <= 1e-9 * len.max(1.0));
        }
        prop_assert!((out.arc_length() - len).abs() <= 1e-9 * len);
    }

    #[test]
    fn iou_bounds_and_symmetry(a in bbox(), b in bbox()) {
        let ab = box_iou(BoxPair::new(a, b));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - box_iou(BoxPair::new(b, a))).abs() <= 1e-15);
        let g = giou(BoxPair::new(a, b));
        prop_assert!(g <= ab + 1e-12);
        prop_assert!((-1.0..=1.0).contains(&g));
    }
}

#[test]
fn iou_of_identical_boxes_is_one() {
    let b = BBox::new(1.0, 2.0, 4.0, 6.0);
    assert_eq!(box_iou(BoxPair::new(b, b)), 1.0);
    assert_eq!(giou(BoxPair::new(b, b)), 1.0);
}

#[test]
fn giou_of_far_apart_boxes_tends_to_minus_one() {
    let a = BBox::new(0.0, 0.0, 1.0, 1.0);
    let b = BBox::new(1000.0, 1000.0, 1001.0, 1001.0);
    let g = giou(BoxPair::new(a, b));
    assert!((-1.0..-0.99).contains(&g));
}

#[test]
fn frechet_hand_example() {
    let a = poly(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
    let b = poly(&[[0.0, 1.0, 0.0], [2.0, 1.0, 0.0]]);
    // the middle point of `a` must pair with one of b's endpoints: sqrt(1 + 1)
    assert!((discrete_frechet(&a, &b) - 2f64.sqrt()).abs() < 1e-15);
}
