use lanetopo::attention::QuerySet;
use lanetopo::scene::Polyline3D;
use lanetopo::tensor::Matrix;
use lanetopo::training::{
    assignment_cost, focal_loss, focal_loss_grad, grouped_lane_loss, grouped_total_loss, hungarian, match_group, total_loss,
    GroupConfig, GroupPrediction, LaneTerms, LossComponents, LossWeights, TaskLosses, TrafficTerms, FOCAL_ALPHA, FOCAL_GAMMA,
};
use proptest::prelude::*;

/// Minimum over all injective maps from the smaller side into the larger.
fn brute_force(cost: &Matrix) -> f64 {
    fn go(cost: &Matrix, transpose: bool, row: usize, used: &mut Vec<bool>) -> f64 {
        let (n, m) = if transpose { (cost.cols(), cost.rows()) } else { (cost.rows(), cost.cols()) };
        if row == n {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for col in 0..m {
            if used[col] {
                continue;
            }
            used[col] = true;
            let c = if transpose { cost.get(col, row) } else { cost.get(row, col) };
            best = best.min(c + go(cost, transpose, row + 1, used));
            used[col] = false;
        }
        best
    }
    let transpose = cost.rows() > cost.cols();
    let m = cost.rows().max(cost.cols());
    go(cost, transpose, 0, &mut vec![false; m])
}

fn integer_matrix() -> impl Strategy<Value = Matrix> {
    (1usize..=6, 1usize..=6).prop_flat_map(|(n, m)| {
        prop::collection::vec(-20i32..50, n * m)
            .prop_map(move |v| Matrix::from_vec(n, m, v.into_iter().map(f64::from).collect()).unwrap())
    })
}

proptest! {
    #[test]
    fn hungarian_matches_brute_force(cost in integer_matrix()) {
        let a = hungarian(&cost).unwrap();
        prop_assert_eq!(a.len(), cost.rows().min(cost.cols()));
        prop_assert_eq!(assignment_cost(&cost, &a), brute_force(&cost));
    }

    #[test]
    fn hungarian_is_one_to_one(cost in integer_matrix()) {
        let a = hungarian(&cost).unwrap();
        let mut rows: Vec<usize> = a.iter().map(|p| p.0).collect();
        let mut cols: Vec<usize> = a.iter().map(|p| p.1).collect();
        rows.sort_unstable();
        rows.dedup();
        cols.sort_unstable();
        cols.dedup();
        prop_assert_eq!(rows.len(), a.len());
        prop_assert_eq!(cols.len(), a.len());
    }

    #[test]
    fn hungarian_cost_is_shift_invariant(cost in integer_matrix(), shift in -10i32..10) {
        let shifted = cost.map(|v| v + f64::from(shift));
        let k = cost.rows().min(cost.cols()) as f64;
        let a = assignment_cost(&cost, &hungarian(&cost).unwrap());
        let b = assignment_cost(&shifted, &hungarian(&shifted).unwrap());
        prop_assert_eq!(b, a + k * f64::from(shift));
    }

    #[test]
    fn focal_positive_decreases_with_confidence(p in 0.001..0.998f64, dp in 0.0005..0.001f64) {
        prop_assert!(focal_loss(p + dp, true, FOCAL_ALPHA, FOCAL_GAMMA) < focal_loss(p, true, FOCAL_ALPHA, FOCAL_GAMMA));
        prop_assert!(focal_loss(p + dp, false, FOCAL_ALPHA, FOCAL_GAMMA) > focal_loss(p, false, FOCAL_ALPHA, FOCAL_GAMMA));
    }

    #[test]
    fn focal_grad_matches_central_difference(p in 0.01..0.99f64, target: bool) {
        let h = 1e-6;
        let numeric = (focal_loss(p + h, target, FOCAL_ALPHA, FOCAL_GAMMA) - focal_loss(p - h, target, FOCAL_ALPHA, FOCAL_GAMMA)) / (2.0 * h);
        let analytic = focal_loss_grad(p, target, FOCAL_ALPHA, FOCAL_GAMMA);
        prop_assert!((numeric - analytic).abs() <= 1e-6 * analytic.abs().max(1.0));
    }

    #[test]
    fn total_loss_is_linear_in_task_losses(
        a in prop::array::uniform4(0.0..10.0f64),
        b in prop::array::uniform4(0.0..10.0f64),
        s in 0.0..5.0f64,
    ) {
        let w = LossWeights::default();
        let t = |x: [f64; 4]| TaskLosses { lane: x[0], traffic: x[1], ll: x[2], lt: x[3] };
        let sum = [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2], a[3] + s * b[3]];
        let lhs = total_loss(&t(sum), &w);
        let rhs = total_loss(&t(a), &w) + s * total_loss(&t(b), &w);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
    }
}

#[test]
fn hungarian_on_ties_is_deterministic() {
    let cost = Matrix::from_vec(3, 3, vec![1.0; 9]).unwrap();
    let a = hungarian(&cost).unwrap();
    assert_eq!(a, hungarian(&cost).unwrap());
    assert_eq!(a, vec![(0, 0), (1, 1), (2, 2)]);
}

#[test]
fn hungarian_empty_sides() {
    assert!(hungarian(&Matrix::zeros(0, 4)).unwrap().is_empty());
    assert!(hungarian(&Matrix::zeros(3, 0)).unwrap().is_empty());
}

#[test]
fn focal_hand_values() {
    // 0.25 · 0.5² · ln 2
    let expected = 0.25 * 0.25 * std::f64::consts::LN_2;
    assert!((focal_loss(0.5, true, FOCAL_ALPHA, FOCAL_GAMMA) - expected).abs() < 1e-15);
    // negatives carry weight 1 − α = 0.75
    assert!((focal_loss(0.5, false, FOCAL_ALPHA, FOCAL_GAMMA) - 3.0 * expected).abs() < 1e-15);
}

#[test]
fn unit_components_give_known_totals() {
    let w = LossWeights::default();
    let tasks = TaskLosses { lane: 1.0, traffic: 1.0, ll: 1.0, lt: 1.0 };
    assert!((total_loss(&tasks, &w) - (w.lane + w.traffic + w.ll + w.lt)).abs() < 1e-12);
    let raw = LossComponents {
        lane: LaneTerms { cls: 1.0, reg: 1.0 },
        traffic: TrafficTerms { cls: 1.0, reg: 1.0, iou: 1.0 },
        ll: 1.0,
        lt: 1.0,
    };
    let expected = w.lane * (w.lane_cls + w.lane_reg) + w.traffic * (w.traffic_cls + w.traffic_reg + w.traffic_iou) + w.ll + w.lt;
    assert!((grouped_total_loss(&[raw; 3], &w) - 3.0 * expected).abs() < 1e-12);
}

#[test]
fn replication_without_noise_is_identity() {
    let base = QuerySet::new(Matrix::from_vec(2, 3, vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6]).unwrap()).unwrap();
    let groups = GroupConfig::new(6).unwrap().replicate(&base, 0.0, 9);
    assert_eq!(groups.len(), 6);
    assert!(groups.iter().all(|g| *g == base));
    let noisy = GroupConfig::new(3).unwrap().replicate(&base, 0.1, 9);
    assert_eq!(noisy[0], base);
    assert_ne!(noisy[1], base);
    assert_ne!(noisy[1], noisy[2]);
    assert!(GroupConfig::new(0).is_err());
}

fn line(y: f64) -> Polyline3D {
    Polyline3D::from_xyz(&[[0.0, y, 0.0], [10.0, y, 0.0]]).unwrap()
}

#[test]
fn each_group_matches_independently() {
    let gt = vec![line(0.0), line(5.0)];
    let w = LossWeights::default();
    let swapped = GroupPrediction { lanes: vec![line(5.0), line(0.0), line(20.0)], scores: vec![0.9, 0.9, 0.1] };
    let straight = GroupPrediction { lanes: vec![line(0.0), line(5.0), line(20.0)], scores: vec![0.9, 0.9, 0.1] };
    let (matches, total) = grouped_lane_loss(&[swapped.clone(), straight.clone()], &gt, &w).unwrap();
    let mut a0 = matches[0].assignment.clone();
    a0.sort_unstable();
    assert_eq!(a0, vec![(0, 1), (1, 0)]);
    let mut a1 = matches[1].assignment.clone();
    a1.sort_unstable();
    assert_eq!(a1, vec![(0, 0), (1, 1)]);
    assert_eq!(matches[0].reg_loss, 0.0);
    assert!((total - matches[0].loss - matches[1].loss).abs() < 1e-15);
    let single = match_group(&straight.lanes, &straight.scores, &gt, &w).unwrap();
    assert_eq!(single, matches[1]);
}
