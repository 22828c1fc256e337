//! Losses, one-to-one assignment and the grouped supervision strategy.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::QuerySet;
use crate::error::{Error, Result};
use crate::geometry::{giou, BoxPair};
use crate::nn::seeded_rng;
use crate::scene::{BBox, Polyline3D};
use crate::tensor::Matrix;

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;
const PROB_CLAMP: f64 = 1e-7;

/// Every loss weight of the composite objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lane: f64,
    pub traffic: f64,
    pub ll: f64,
    pub lt: f64,
    pub lane_cls: f64,
    pub lane_reg: f64,
    pub traffic_cls: f64,
    pub traffic_reg: f64,
    pub traffic_iou: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lane: 1.0,
            traffic: 1.0,
            ll: 5.0,
            lt: 5.0,
            lane_cls: 1.5,
            lane_reg: 0.025,
            traffic_cls: 1.2,
            traffic_reg: 3.0,
            traffic_iou: 1.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lane,
            self.traffic,
            self.ll,
            self.lt,
            self.lane_cls,
            self.lane_reg,
            self.traffic_cls,
            self.traffic_reg,
            self.traffic_iou,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParams("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Number of replicated query groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupConfig {
    pub k: usize,
}

impl Default for GroupConfig {
    fn default() -> Self {
        Self { k: 6 }
    }
}

impl GroupConfig {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParams("group count must be >= 1".into()));
        }
        Ok(Self { k })
    }

    /// K copies of `base`; group `g` gets isotropic Gaussian feature noise
    /// of scale `sigma` drawn from `seed + g`. Group 0 is noise-free.
    pub fn replicate(&self, base: &QuerySet, sigma: f64, seed: u64) -> Vec<QuerySet> {
        (0..self.k)
            .map(|g| {
                if g == 0 || sigma == 0.0 {
                    return base.clone();
                }
                let mut rng = seeded_rng(seed.wrapping_add(g as u64));
                let normal = Normal::new(0.0, sigma).unwrap();
                let mut m = base.as_matrix().clone();
                for v in m.data_mut() {
                    *v += normal.sample(&mut rng);
                }
                QuerySet::new(m).expect("finite noise")
            })
            .collect()
    }
}

/// Binary focal loss. `pred` is clamped to `[1e-7, 1 - 1e-7]`.
pub fn focal_loss(pred: f64, target: bool, alpha: f64, gamma: f64) -> f64 {
    let p = pred.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if target {
        -alpha * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
    }
}

/// `d focal / d pred`; zero where the clamp is active.
pub fn focal_loss_grad(pred: f64, target: bool, alpha: f64, gamma: f64) -> f64 {
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&pred) {
        return 0.0;
    }
    let p = pred;
    if target {
        let q = 1.0 - p;
        let lead = if gamma == 0.0 { 0.0 } else { alpha * gamma * q.powf(gamma - 1.0) * p.ln() };
        lead - alpha * q.powf(gamma) / p
    } else {
        let q = 1.0 - p;
        let lead = if gamma == 0.0 { 0.0 } else { -(1.0 - alpha) * gamma * p.powf(gamma - 1.0) * q.ln() };
        lead + (1.0 - alpha) * p.powf(gamma) / q
    }
}

/// Batch focal loss: mean over entries (0 for an empty batch).
pub fn focal_loss_mean(preds: &[f64], targets: &[bool], alpha: f64, gamma: f64) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    preds.iter().zip(targets).map(|(&p, &t)| focal_loss(p, t, alpha, gamma)).sum::<f64>() / preds.len() as f64
}

/// Mean absolute error over every coordinate.
pub fn l1_loss(pred: &Polyline3D, gt: &Polyline3D) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!("l1_loss: {} vs {} points", pred.len(), gt.len())));
    }
    let sum: f64 = pred.points().iter().zip(gt.points()).map(|(&a, &b)| (a - b).l1()).sum();
    Ok(sum / (3 * pred.len()) as f64)
}

/// Mean absolute error over the four box coordinates.
pub fn box_l1_loss(pred: &BBox, gt: &BBox) -> f64 {
    let a: [f64; 4] = (*pred).into();
    let b: [f64; 4] = (*gt).into();
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 4.0
}

/// `1 − GIoU`.
pub fn giou_loss(pred: &BBox, gt: &BBox) -> f64 {
    1.0 - giou(BoxPair::new(*pred, *gt))
}

/// Minimum-cost one-to-one assignment of `min(N, M)` pairs, returned sorted
/// by row. Among optimal assignments the lexicographically smallest
/// `(row, col)` sequence is chosen.
pub fn hungarian(cost: &Matrix) -> Result<Vec<(usize, usize)>> {
    let (n, m) = cost.shape();
    if !cost.is_finite() {
        return Err(Error::Contract("assignment costs must be finite".into()));
    }
    if n == 0 || m == 0 {
        return Ok(Vec::new());
    }
    let k = n.max(m);
    let max_abs = cost.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let pad = if max_abs > 0.0 { 10.0 * max_abs } else { 1.0 };
    let mut sq = Matrix::filled(k, k, pad);
    for i in 0..n {
        sq.row_mut(i)[..m].copy_from_slice(cost.row(i));
    }

    let (row_to_col, u, v) = solve_square(&sq);
    let tol = 1e-9 * (1.0 + pad);
    let tight = |i: usize, j: usize| sq.get(i, j) - u[i] - v[j] <= tol;
    let row_to_col = lexicographic_refine(k, row_to_col, tight);

    Ok((0..n).filter_map(|i| (row_to_col[i] < m).then_some((i, row_to_col[i]))).collect())
}

/// Shortest-augmenting-path Hungarian method with dual potentials.
/// Returns the row→column matching and the row/column potentials.
fn solve_square(c: &Matrix) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = c.rows();
    // 1-based internals; index 0 is the virtual source column/row.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = c.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[owner[j] - 1] = j - 1;
    }
    (row_to_col, u[1..].to_vec(), v[1..].to_vec())
}

/// Every perfect matching on tight edges is optimal; walk rows in order and
/// move each onto its smallest tight column reachable by an alternating
/// cycle that leaves earlier rows untouched.
fn lexicographic_refine(k: usize, mut row_to_col: Vec<usize>, tight: impl Fn(usize, usize) -> bool) -> Vec<usize> {
    let mut col_to_row = vec![0; k];
    for (r, &c) in row_to_col.iter().enumerate() {
        col_to_row[c] = r;
    }
    for r in 0..k {
        for c in 0..k {
            if c == row_to_col[r] {
                break;
            }
            if !tight(r, c) || col_to_row[c] < r {
                continue;
            }
            // rematch owner(c) along an alternating path ending at r's column
            let target = row_to_col[r];
            let mut visited = vec![false; k];
            let mut path = Vec::new();
            if alternating_path(col_to_row[c], target, r, c, &row_to_col, &col_to_row, &tight, &mut visited, &mut path) {
                // path holds (row, new_col) hops
                for &(row, col) in &path {
                    row_to_col[row] = col;
                    col_to_row[col] = row;
                }
                row_to_col[r] = c;
                col_to_row[c] = r;
                break;
            }
        }
    }
    row_to_col
}

#[allow(clippy::too_many_arguments)]
fn alternating_path(
    row: usize,
    target: usize,
    fixed_upto: usize,
    banned: usize,
    row_to_col: &[usize],
    col_to_row: &[usize],
    tight: &impl Fn(usize, usize) -> bool,
    visited: &mut [bool],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    visited[row] = true;
    for c2 in 0..row_to_col.len() {
        if c2 == banned || c2 == row_to_col[row] || !tight(row, c2) {
            continue;
        }
        if c2 == target {
            path.push((row, c2));
            return true;
        }
        let next = col_to_row[c2];
        if next <= fixed_upto || visited[next] {
            continue;
        }
        if alternating_path(next, target, fixed_upto, banned, row_to_col, col_to_row, tight, visited, path) {
            path.push((row, c2));
            return true;
        }
    }
    false
}

pub fn assignment_cost(cost: &Matrix, assignment: &[(usize, usize)]) -> f64 {
    assignment.iter().map(|&(r, c)| cost.get(r, c)).sum()
}

/// Outcome of matching one query group against the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMatch {
    pub assignment: Vec<(usize, usize)>,
    pub cls_loss: f64,
    pub reg_loss: f64,
    /// `λ_cls·cls_loss + λ_reg·reg_loss`
    pub loss: f64,
}

/// Hungarian matching of predicted lanes to ground truth with cost
/// `λ_cls·focal(score, 1) + λ_reg·l1(lane, gt)`. Matched queries are
/// positives; all others are negatives.
pub fn match_group(
    pred_lanes: &[Polyline3D],
    pred_scores: &[f64],
    gt_lanes: &[Polyline3D],
    weights: &LossWeights,
) -> Result<GroupMatch> {
    if pred_lanes.len() != pred_scores.len() {
        return Err(Error::ShapeMismatch("one score per predicted lane".into()));
    }
    let (np, ng) = (pred_lanes.len(), gt_lanes.len());
    let mut cost = Matrix::zeros(np, ng);
    let mut reg = Matrix::zeros(np, ng);
    for p in 0..np {
        let cls = focal_loss(pred_scores[p], true, FOCAL_ALPHA, FOCAL_GAMMA);
        for g in 0..ng {
            let r = l1_loss(&pred_lanes[p], &gt_lanes[g])?;
            reg.set(p, g, r);
            cost.set(p, g, weights.lane_cls * cls + weights.lane_reg * r);
        }
    }
    let assignment = hungarian(&cost)?;
    let mut positive = vec![false; np];
    for &(p, _) in &assignment {
        positive[p] = true;
    }
    let cls_loss = focal_loss_mean(pred_scores, &positive, FOCAL_ALPHA, FOCAL_GAMMA);
    let reg_loss = if assignment.is_empty() {
        0.0
    } else {
        assignment.iter().map(|&(p, g)| reg.get(p, g)).sum::<f64>() / assignment.len() as f64
    };
    Ok(GroupMatch {
        loss: weights.lane_cls * cls_loss + weights.lane_reg * reg_loss,
        assignment,
        cls_loss,
        reg_loss,
    })
}

/// Predictions of one replicated query group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPrediction {
    pub lanes: Vec<Polyline3D>,
    pub scores: Vec<f64>,
}

/// Independent matching per group; the group losses are summed.
pub fn grouped_lane_loss(groups: &[GroupPrediction], gt_lanes: &[Polyline3D], weights: &LossWeights) -> Result<(Vec<GroupMatch>, f64)> {
    let matches = groups
        .par_iter()
        .map(|g| match_group(&g.lanes, &g.scores, gt_lanes, weights))
        .collect::<Result<Vec<_>>>()?;
    let total = matches.iter().map(|m| m.loss).sum();
    Ok((matches, total))
}

/// Raw lane-detection terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LaneTerms {
    pub cls: f64,
    pub reg: f64,
}

/// Raw traffic-detection terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrafficTerms {
    pub cls: f64,
    pub reg: f64,
    pub iou: f64,
}

/// Raw loss terms of one group.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub lane: LaneTerms,
    pub traffic: TrafficTerms,
    pub ll: f64,
    pub lt: f64,
}

/// The four task losses after their inner weighting.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TaskLosses {
    pub lane: f64,
    pub traffic: f64,
    pub ll: f64,
    pub lt: f64,
}

impl LossComponents {
    pub fn compose(&self, w: &LossWeights) -> TaskLosses {
        TaskLosses {
            lane: w.lane_cls * self.lane.cls + w.lane_reg * self.lane.reg,
            traffic: w.traffic_cls * self.traffic.cls + w.traffic_reg * self.traffic.reg + w.traffic_iou * self.traffic.iou,
            ll: self.ll,
            lt: self.lt,
        }
    }
}

pub fn total_loss(tasks: &TaskLosses, w: &LossWeights) -> f64 {
    w.lane * tasks.lane + w.traffic * tasks.traffic + w.ll * tasks.ll + w.lt * tasks.lt
}

/// Sum of per-group totals.
pub fn grouped_total_loss(groups: &[LossComponents], w: &LossWeights) -> f64 {
    groups.iter().map(|g| total_loss(&g.compose(w), w)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Point3;

    fn line(y: f64) -> Polyline3D {
        Polyline3D::new((0..4).map(|k| Point3::new(k as f64, y, 0.0)).collect()).unwrap()
    }

    #[test]
    fn focal_examples() {
        assert!(focal_loss(1.0, true, 0.25, 2.0) < 1e-14);
        for p in [0.1f64, 0.4, 0.8] {
            let bce = -p.ln();
            assert!((focal_loss(p, true, 0.5, 0.0) - 0.5 * bce).abs() < 1e-15);
            let bce0 = -(1.0 - p).ln();
            assert!((focal_loss(p, false, 0.5, 0.0) - 0.5 * bce0).abs() < 1e-15);
        }
        let want = -0.25 * 0.7f64 * 0.7 * 0.3f64.ln();
        assert!((focal_loss(0.3, true, 0.25, 2.0) - want).abs() < 1e-15);
    }

    #[test]
    fn focal_grad_matches_differences() {
        for &(p, t) in &[(0.3, true), (0.7, false), (0.05, true), (0.9, false)] {
            for gamma in [0.0, 2.0] {
                let h = 1e-6;
                let num = (focal_loss(p + h, t, 0.25, gamma) - focal_loss(p - h, t, 0.25, gamma)) / (2.0 * h);
                assert!((num - focal_loss_grad(p, t, 0.25, gamma)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn l1_examples() {
        assert_eq!(l1_loss(&line(0.0), &line(0.0)).unwrap(), 0.0);
        let shifted = line(0.0).translated(Point3::new(1.0, 1.0, 1.0));
        assert!((l1_loss(&line(0.0), &shifted).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hungarian_small_cases() {
        let mut c = Matrix::filled(3, 3, 1.0);
        for i in 0..3 {
            c.set(i, i, 0.0);
        }
        assert_eq!(hungarian(&c).unwrap(), vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(hungarian(&Matrix::filled(1, 1, 3.0)).unwrap(), vec![(0, 0)]);
        assert!(hungarian(&Matrix::zeros(0, 3)).unwrap().is_empty());
    }

    #[test]
    fn hungarian_ties_are_lexicographic() {
        // every permutation costs the same
        assert_eq!(hungarian(&Matrix::filled(3, 3, 2.0)).unwrap(), vec![(0, 0), (1, 1), (2, 2)]);
        let c = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 1.0]]).unwrap();
        assert_eq!(hungarian(&c).unwrap(), vec![(0, 1), (1, 0)]);
        let wide = Matrix::from_rows(&[vec![5.0, 5.0, 5.0, 5.0]]).unwrap();
        assert_eq!(hungarian(&wide).unwrap(), vec![(0, 0)]);
    }

    #[test]
    fn hungarian_rectangular() {
        let c = Matrix::from_rows(&[vec![4.0, 1.0], vec![2.0, 8.0], vec![0.5, 0.6]]).unwrap();
        let a = hungarian(&c).unwrap();
        assert_eq!(a.len(), 2);
        assert!((assignment_cost(&c, &a) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn match_group_identity() {
        let gt = vec![line(0.0), line(5.0)];
        let m = match_group(&gt, &[1.0, 1.0], &gt, &LossWeights::default()).unwrap();
        assert_eq!(m.assignment, vec![(0, 0), (1, 1)]);
        assert!(m.loss < 1e-12);
    }

    #[test]
    fn match_group_no_gt_is_negative_only() {
        let preds = vec![line(0.0), line(5.0)];
        let w = LossWeights::default();
        let m = match_group(&preds, &[0.3, 0.6], &[], &w).unwrap();
        assert!(m.assignment.is_empty());
        let want = (focal_loss(0.3, false, 0.25, 2.0) + focal_loss(0.6, false, 0.25, 2.0)) / 2.0;
        assert!((m.loss - w.lane_cls * want).abs() < 1e-15);
    }

    #[test]
    fn total_loss_default_weights() {
        let w = LossWeights::default();
        let unit = TaskLosses { lane: 1.0, traffic: 1.0, ll: 1.0, lt: 1.0 };
        assert_eq!(total_loss(&unit, &w), 12.0);
        assert_eq!(total_loss(&TaskLosses::default(), &w), 0.0);
        let raw = LossComponents {
            lane: LaneTerms { cls: 1.0, reg: 1.0 },
            traffic: TrafficTerms { cls: 1.0, reg: 1.0, iou: 1.0 },
            ll: 1.0,
            lt: 1.0,
        };
        // 1.525 + 5.4 + 5 + 5
        assert!((total_loss(&raw.compose(&w), &w) - 16.925).abs() < 1e-12);
    }

    #[test]
    fn weights_validation_and_json() {
        assert!(LossWeights::default().validate().is_ok());
        let w = LossWeights { ll: -1.0, ..Default::default() };
        assert!(w.validate().is_err());
        let parsed: LossWeights = serde_json::from_str(r#"{"ll": 2.0}"#).unwrap();
        assert_eq!(parsed.ll, 2.0);
        assert_eq!(parsed.lane_cls, 1.5);
    }

    #[test]
    fn group_replication() {
        assert!(GroupConfig::new(0).is_err());
        assert_eq!(GroupConfig::default().k, 6);
        let base = QuerySet::new(Matrix::filled(2, 3, 0.5)).unwrap();
        let groups = GroupConfig::new(3).unwrap().replicate(&base, 0.1, 7);
        assert_eq!(groups.len(), 3);
        assert_eq!(groups[0], base);
        assert_ne!(groups[1], base);
        assert_eq!(groups, GroupConfig::new(3).unwrap().replicate(&base, 0.1, 7));
    }

    #[test]
    fn box_losses() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(giou_loss(&a, &a), 0.0);
        assert_eq!(box_l1_loss(&a, &BBox::new(1.0, 1.0, 3.0, 3.0)), 1.0);
    }
}
