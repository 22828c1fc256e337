//! Detection and topology evaluation: DET_l, DET_t, TOP_ll, TOP_lt, OLS and
//! the lane-segment block.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_iou, chamfer, discrete_frechet, BoxPair};
use crate::scene::{LaneSegment, Point3, Polyline3D, Scene, SegmentCategory, TopoMatrix, TopologyGraph, TrafficCategory, TrafficElement};

/// A scored detection and topology output for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub lanes: Vec<Polyline3D>,
    pub lane_scores: Vec<f64>,
    /// Scores live in each element; a missing score counts as 1.
    pub traffic: Vec<TrafficElement>,
    /// Score-valued adjacency.
    pub topo: TopologyGraph,
}

fn check_score(s: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Contract(format!("{what} score {s} outside [0, 1]")));
    }
    Ok(())
}

fn check_topo(m: &TopoMatrix, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.rows() != rows || m.cols() != cols {
        return Err(Error::ShapeMismatch(format!(
            "{what} is {}x{}, expected {rows}x{cols}",
            m.rows(),
            m.cols()
        )));
    }
    m.values().iter().try_for_each(|&v| check_score(v, what))
}

impl Prediction {
    pub fn empty() -> Self {
        Self { lanes: vec![], lane_scores: vec![], traffic: vec![], topo: TopologyGraph::empty(0, 0) }
    }

    /// Treats a ground-truth scene as a prediction with unit scores.
    pub fn from_scene(scene: &Scene) -> Self {
        Self {
            lanes: scene.lanes.clone(),
            lane_scores: vec![1.0; scene.lanes.len()],
            traffic: scene.traffic.iter().map(|t| TrafficElement { score: Some(1.0), ..*t }).collect(),
            topo: scene.topo.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.lanes.len(), self.traffic.len());
        if self.lane_scores.len() != n {
            return Err(Error::ShapeMismatch(format!("{} lane scores for {n} lanes", self.lane_scores.len())));
        }
        self.lane_scores.iter().try_for_each(|&s| check_score(s, "lane"))?;
        for t in &self.traffic {
            check_score(traffic_score(t), "traffic")?;
        }
        check_topo(&self.topo.ll, n, n, "ll")?;
        check_topo(&self.topo.lt, n, m, "lt")
    }
}

fn traffic_score(t: &TrafficElement) -> f64 {
    t.score.unwrap_or(1.0)
}

/// Lane segments with scores and segment-to-segment topology.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSet {
    pub segments: Vec<LaneSegment>,
    /// Empty for ground truth.
    pub scores: Vec<f64>,
    pub topo: TopoMatrix,
}

impl SegmentSet {
    pub fn validate(&self, scored: bool) -> Result<()> {
        let n = self.segments.len();
        if scored && self.scores.len() != n {
            return Err(Error::ShapeMismatch(format!("{} segment scores for {n} segments", self.scores.len())));
        }
        self.scores.iter().try_for_each(|&s| check_score(s, "segment"))?;
        check_topo(&self.topo, n, n, "segment topology")
    }

    fn score(&self, i: usize) -> f64 {
        self.scores.get(i).copied().unwrap_or(1.0)
    }
}

/// All matching thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricThresholds {
    /// Fréchet thresholds (m) for lane detection.
    pub lane_frechet: Vec<f64>,
    pub traffic_iou: f64,
    /// Lane matching threshold (m) used by the topology metrics.
    pub top_lane_frechet: f64,
    pub top_traffic_iou: f64,
    /// Segment distance thresholds (m).
    pub segment: Vec<f64>,
    pub top_segment: f64,
}

impl Default for MetricThresholds {
    fn default() -> Self {
        Self {
            lane_frechet: vec![1.0, 2.0, 3.0],
            traffic_iou: 0.75,
            top_lane_frechet: 1.5,
            top_traffic_iou: 0.75,
            segment: vec![1.0, 2.0, 3.0],
            top_segment: 1.5,
        }
    }
}

impl MetricThresholds {
    pub fn validate(&self) -> Result<()> {
        let dist_ok = |v: f64| v.is_finite() && v > 0.0;
        let iou_ok = |v: f64| v > 0.0 && v <= 1.0;
        if self.lane_frechet.is_empty() || self.segment.is_empty() {
            return Err(Error::InvalidParams("threshold lists must be non-empty".into()));
        }
        let ok = self.lane_frechet.iter().chain(&self.segment).all(|&v| dist_ok(v))
            && dist_ok(self.top_lane_frechet)
            && dist_ok(self.top_segment)
            && iou_ok(self.traffic_iou)
            && iou_ok(self.top_traffic_iou);
        if !ok {
            return Err(Error::InvalidParams("thresholds out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub map: f64,
    pub ap_ls: f64,
    pub ap_ped: f64,
    pub top_lsls: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub det_l: f64,
    pub det_t: f64,
    pub top_ll: f64,
    pub top_lt: f64,
    pub ols: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lane_segment: Option<SegmentReport>,
}

/// Precision-recall outcome of a ranked list.
fn average_precision(ranked_tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if ranked_tp.is_empty() { 1.0 } else { 0.0 };
    }
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(ranked_tp.len());
    for (k, &hit) in ranked_tp.iter().enumerate() {
        if hit {
            tp += 1;
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
    }
    // precision envelope from the right
    let mut best = 0.0f64;
    for p in points.iter_mut().rev() {
        best = best.max(p.1);
        p.1 = best;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in points {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    ap
}

/// Prediction indices sorted by descending score; ties keep input order.
fn rank(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Greedy one-to-one matching in descending score. Each prediction takes
/// the best still-free ground truth accepted by `accept`; `better` orders
/// candidate affinities (smaller distance or larger IoU).
fn greedy_match(
    scores: &[f64],
    n_gt: usize,
    affinity: &dyn Fn(usize, usize) -> f64,
    accept: &dyn Fn(f64) -> bool,
    better: &dyn Fn(f64, f64) -> bool,
) -> Vec<Option<usize>> {
    let mut taken = vec![false; n_gt];
    let mut out = vec![None; scores.len()];
    for p in rank(scores) {
        let mut best: Option<(usize, f64)> = None;
        for g in (0..n_gt).filter(|&g| !taken[g]) {
            let a = affinity(p, g);
            if accept(a) && best.is_none_or(|(_, b)| better(a, b)) {
                best = Some((g, a));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            out[p] = Some(g);
        }
    }
    out
}

fn ap_from_matches(scores: &[f64], matches: &[Option<usize>], n_gt: usize) -> f64 {
    let ranked: Vec<bool> = rank(scores).into_iter().map(|p| matches[p].is_some()).collect();
    average_precision(&ranked, n_gt)
}

fn distance_table(n_pred: usize, n_gt: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Vec<Vec<f64>> {
    (0..n_pred).map(|p| (0..n_gt).map(|g| f(p, g)).collect()).collect()
}

fn distance_ap(scores: &[f64], dist: &[Vec<f64>], n_gt: usize, thresholds: &[f64]) -> f64 {
    let total: f64 = thresholds
        .iter()
        .map(|&thr| {
            let m = greedy_match(scores, n_gt, &|p, g| dist[p][g], &|d| d < thr, &|a, b| a < b);
            ap_from_matches(scores, &m, n_gt)
        })
        .sum();
    total / thresholds.len() as f64
}

fn lane_distances(pred: &Prediction, gt: &Scene) -> Vec<Vec<f64>> {
    distance_table(pred.lanes.len(), gt.lanes.len(), |p, g| discrete_frechet(&pred.lanes[p], &gt.lanes[g]))
}

/// Lane detection AP averaged over the Fréchet thresholds.
pub fn det_l(pred: &Prediction, gt: &Scene, thresholds: &MetricThresholds) -> f64 {
    distance_ap(&pred.lane_scores, &lane_distances(pred, gt), gt.lanes.len(), &thresholds.lane_frechet)
}

fn traffic_matches(pred: &[TrafficElement], gt: &[TrafficElement], iou_thr: f64) -> Vec<Option<usize>> {
    let scores: Vec<f64> = pred.iter().map(traffic_score).collect();
    let affinity = |p: usize, g: usize| {
        if pred[p].category != gt[g].category {
            return f64::NEG_INFINITY;
        }
        box_iou(BoxPair::new(pred[p].bbox, gt[g].bbox))
    };
    greedy_match(&scores, gt.len(), &affinity, &|iou| iou >= iou_thr, &|a, b| a > b)
}

/// Traffic-element AP per category present in the ground truth, averaged.
pub fn det_t(pred: &Prediction, gt: &Scene, thresholds: &MetricThresholds) -> f64 {
    let present: Vec<TrafficCategory> =
        TrafficCategory::ALL.into_iter().filter(|c| gt.traffic.iter().any(|t| t.category == *c)).collect();
    if present.is_empty() {
        return if pred.traffic.is_empty() { 1.0 } else { 0.0 };
    }
    let total: f64 = present
        .iter()
        .map(|&c| {
            let p: Vec<TrafficElement> = pred.traffic.iter().filter(|t| t.category == c).copied().collect();
            let g: Vec<TrafficElement> = gt.traffic.iter().filter(|t| t.category == c).copied().collect();
            let m = traffic_matches(&p, &g, thresholds.traffic_iou);
            let scores: Vec<f64> = p.iter().map(traffic_score).collect();
            ap_from_matches(&scores, &m, g.len())
        })
        .sum();
    total / present.len() as f64
}

/// Which topology matrix [`top_score`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopoKind {
    LaneLane,
    LaneTraffic,
}

fn invert(matches: &[Option<usize>], n_gt: usize) -> Vec<Option<usize>> {
    let mut out = vec![None; n_gt];
    for (p, g) in matches.iter().enumerate() {
        if let Some(g) = *g {
            out[g] = Some(p);
        }
    }
    out
}

/// Vertex-averaged AP of ranked outgoing edges.
///
/// `src_pred_of_gt` maps ground-truth sources to predicted sources and
/// `dst_gt_of_pred` maps predicted endpoints back to ground truth. An edge
/// whose endpoint has no match is a false positive; zero-score edges are
/// not predicted at all.
fn graph_ap(
    gt_adj: &TopoMatrix,
    pred_adj: &TopoMatrix,
    src_pred_of_gt: &[Option<usize>],
    dst_gt_of_pred: &[Option<usize>],
    skip_self: bool,
) -> f64 {
    let mut total = 0.0;
    let mut vertices = 0usize;
    for v in 0..gt_adj.rows() {
        let targets: Vec<usize> = (0..gt_adj.cols()).filter(|&j| gt_adj.get(v, j) >= 0.5).collect();
        if targets.is_empty() {
            continue;
        }
        vertices += 1;
        let Some(u) = src_pred_of_gt[v] else { continue };
        let edges: Vec<usize> = (0..pred_adj.cols())
            .filter(|&w| !(skip_self && w == u) && pred_adj.get(u, w) > 0.0)
            .collect();
        let scores: Vec<f64> = edges.iter().map(|&w| pred_adj.get(u, w)).collect();
        let ranked: Vec<bool> = rank(&scores)
            .into_iter()
            .map(|k| dst_gt_of_pred[edges[k]].is_some_and(|g| targets.contains(&g)))
            .collect();
        total += average_precision(&ranked, targets.len());
    }
    if vertices == 0 {
        let any_edge = pred_adj.values().iter().any(|&s| s > 0.0);
        return if any_edge { 0.0 } else { 1.0 };
    }
    total / vertices as f64
}

/// TOP_ll or TOP_lt.
pub fn top_score(pred: &Prediction, gt: &Scene, kind: TopoKind, thresholds: &MetricThresholds) -> f64 {
    let lane_dist = lane_distances(pred, gt);
    let thr = thresholds.top_lane_frechet;
    let lane_m = greedy_match(&pred.lane_scores, gt.lanes.len(), &|p, g| lane_dist[p][g], &|d| d < thr, &|a, b| a < b);
    let lane_src = invert(&lane_m, gt.lanes.len());
    match kind {
        TopoKind::LaneLane => graph_ap(&gt.topo.ll, &pred.topo.ll, &lane_src, &lane_m, true),
        TopoKind::LaneTraffic => {
            let traffic_m = traffic_matches(&pred.traffic, &gt.traffic, thresholds.top_traffic_iou);
            graph_ap(&gt.topo.lt, &pred.topo.lt, &lane_src, &traffic_m, false)
        }
    }
}

/// `¼(√TOP_ll + √TOP_lt + DET_l + DET_t)`.
pub fn ols(det_l: f64, det_t: f64, top_ll: f64, top_lt: f64) -> f64 {
    (top_ll.sqrt() + top_lt.sqrt() + det_l + det_t) / 4.0
}

fn boundary_points(s: &LaneSegment) -> Vec<Point3> {
    s.left_boundary.points().iter().chain(s.right_boundary.points()).copied().collect()
}

/// `½(Chamfer(left ∪ right) + Fréchet(centerline))`.
pub fn lane_segment_distance(pred: &LaneSegment, gt: &LaneSegment) -> f64 {
    let c = chamfer(&boundary_points(pred), &boundary_points(gt)).expect("boundaries are non-empty");
    0.5 * (c + discrete_frechet(&pred.centerline, &gt.centerline))
}

fn segment_distances(pred: &SegmentSet, gt: &SegmentSet) -> Vec<Vec<f64>> {
    distance_table(pred.segments.len(), gt.segments.len(), |p, g| {
        if pred.segments[p].category != gt.segments[g].category {
            return f64::INFINITY;
        }
        lane_segment_distance(&pred.segments[p], &gt.segments[g])
    })
}

/// AP per segment category, mean over categories present in the ground
/// truth, and segment topology.
pub fn lane_segment_metrics(pred: &SegmentSet, gt: &SegmentSet, thresholds: &MetricThresholds) -> SegmentReport {
    let scores: Vec<f64> = (0..pred.segments.len()).map(|i| pred.score(i)).collect();
    let dist = segment_distances(pred, gt);
    let per_category = |cat: SegmentCategory| {
        let p: Vec<usize> = (0..pred.segments.len()).filter(|&i| pred.segments[i].category == cat).collect();
        let g: Vec<usize> = (0..gt.segments.len()).filter(|&i| gt.segments[i].category == cat).collect();
        let sub_scores: Vec<f64> = p.iter().map(|&i| scores[i]).collect();
        let sub_dist: Vec<Vec<f64>> = p.iter().map(|&i| g.iter().map(|&j| dist[i][j]).collect()).collect();
        (distance_ap(&sub_scores, &sub_dist, g.len(), &thresholds.segment), !g.is_empty())
    };
    let (ap_ls, has_ls) = per_category(SegmentCategory::Lane);
    let (ap_ped, has_ped) = per_category(SegmentCategory::PedestrianCrossing);
    let present: Vec<f64> = [(ap_ls, has_ls), (ap_ped, has_ped)].iter().filter(|x| x.1).map(|x| x.0).collect();
    let map = if present.is_empty() {
        if pred.segments.is_empty() { 1.0 } else { 0.0 }
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };

    let thr = thresholds.top_segment;
    let m = greedy_match(&scores, gt.segments.len(), &|p, g| dist[p][g], &|d| d < thr, &|a, b| a < b);
    let top_lsls = graph_ap(&gt.topo, &pred.topo, &invert(&m, gt.segments.len()), &m, true);
    SegmentReport { map, ap_ls, ap_ped, top_lsls }
}

fn check_against(pred: &Prediction, gt: &Scene) -> Result<()> {
    pred.validate()?;
    let (n, m) = (gt.lanes.len(), gt.traffic.len());
    if gt.topo.ll.rows() != n || gt.topo.ll.cols() != n || gt.topo.lt.rows() != n || gt.topo.lt.cols() != m {
        return Err(Error::ShapeMismatch("ground-truth topology does not match its lanes".into()));
    }
    Ok(())
}

/// Full report for one scene; the segment block is filled when both sides
/// carry segments.
pub fn evaluate(
    pred: &Prediction,
    gt: &Scene,
    segments: Option<(&SegmentSet, &SegmentSet)>,
    thresholds: &MetricThresholds,
) -> Result<MetricReport> {
    thresholds.validate()?;
    check_against(pred, gt)?;
    let det_l = det_l(pred, gt, thresholds);
    let det_t = det_t(pred, gt, thresholds);
    let top_ll = top_score(pred, gt, TopoKind::LaneLane, thresholds);
    let top_lt = top_score(pred, gt, TopoKind::LaneTraffic, thresholds);
    let lane_segment = match segments {
        Some((p, g)) => {
            p.validate(true)?;
            g.validate(false)?;
            Some(lane_segment_metrics(p, g, thresholds))
        }
        None => None,
    };
    Ok(MetricReport { det_l, det_t, top_ll, top_lt, ols: ols(det_l, det_t, top_ll, top_lt), lane_segment })
}

/// One evaluation unit for [`evaluate_many`].
pub struct EvalCase<'a> {
    pub pred: &'a Prediction,
    pub gt: &'a Scene,
    pub segments: Option<(&'a SegmentSet, &'a SegmentSet)>,
}

/// Evaluates scenes in parallel; results keep input order.
pub fn evaluate_many(cases: &[EvalCase<'_>], thresholds: &MetricThresholds) -> Result<Vec<MetricReport>> {
    cases.par_iter().map(|c| evaluate(c.pred, c.gt, c.segments, thresholds)).collect()
}

/// Per-field mean of per-scene values. OLS is recomputed from the averaged
/// components so that it stays consistent with them.
pub fn average_reports(reports: &[MetricReport]) -> Option<MetricReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let (det_l, det_t) = (mean(&|r| r.det_l), mean(&|r| r.det_t));
    let (top_ll, top_lt) = (mean(&|r| r.top_ll), mean(&|r| r.top_lt));
    let segs: Vec<SegmentReport> = reports.iter().filter_map(|r| r.lane_segment).collect();
    let lane_segment = (segs.len() == reports.len()).then(|| {
        let m = |f: &dyn Fn(&SegmentReport) -> f64| segs.iter().map(f).sum::<f64>() / n;
        SegmentReport { map: m(&|s| s.map), ap_ls: m(&|s| s.ap_ls), ap_ped: m(&|s| s.ap_ped), top_lsls: m(&|s| s.top_lsls) }
    });
    Some(MetricReport { det_l, det_t, top_ll, top_lt, ols: ols(det_l, det_t, top_ll, top_lt), lane_segment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::BBox;

    fn line(y: f64) -> Polyline3D {
        Polyline3D::from_xyz(&[[0.0, y, 0.0], [5.0, y, 0.0], [10.0, y, 0.0]]).unwrap()
    }

    fn scene(lanes: Vec<Polyline3D>, edges: &[(usize, usize)]) -> Scene {
        let n = lanes.len();
        let mut ll = TopoMatrix::zeros(n, n);
        for &(i, j) in edges {
            ll.set(i, j, 1.0);
        }
        Scene { lanes, traffic: vec![], topo: TopologyGraph { ll, lt: TopoMatrix::zeros(n, 0) }, n_points: 3 }
    }

    #[test]
    fn ap_hand_cases() {
        assert_eq!(average_precision(&[true], 1), 1.0);
        assert_eq!(average_precision(&[false, true], 1), 0.5);
        assert_eq!(average_precision(&[true, false], 2), 0.5);
        assert_eq!(average_precision(&[], 0), 1.0);
        assert_eq!(average_precision(&[false], 0), 0.0);
        // recall 1/2 at p=1, recall 1 at p=2/3
        assert!((average_precision(&[true, false, true], 2) - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn det_l_hand_cases() {
        let gt = scene(vec![line(0.0)], &[]);
        let t = MetricThresholds::default();
        assert_eq!(det_l(&Prediction::from_scene(&gt), &gt, &t), 1.0);
        assert_eq!(det_l(&Prediction::empty(), &gt, &t), 0.0);
        let pred = Prediction {
            lanes: vec![line(0.0), line(50.0)],
            lane_scores: vec![0.4, 0.9],
            traffic: vec![],
            topo: TopologyGraph::empty(2, 0),
        };
        assert_eq!(det_l(&pred, &gt, &t), 0.5);
    }

    #[test]
    fn det_t_hand_cases() {
        let mut gt = scene(vec![line(0.0)], &[]);
        let a = TrafficElement::new(BBox::new(0.0, 0.0, 1.0, 1.0), TrafficCategory::Red).unwrap();
        let b = TrafficElement::new(BBox::new(5.0, 0.0, 6.0, 1.0), TrafficCategory::Red).unwrap();
        gt.traffic = vec![a, b];
        gt.topo.lt = TopoMatrix::zeros(1, 2);
        let t = MetricThresholds::default();
        let mut pred = Prediction::from_scene(&gt);
        assert_eq!(det_t(&pred, &gt, &t), 1.0);
        pred.traffic.truncate(1);
        assert_eq!(det_t(&pred, &gt, &t), 0.5);
        pred.traffic = gt.traffic.iter().map(|x| TrafficElement { category: TrafficCategory::Green, ..*x }).collect();
        assert_eq!(det_t(&pred, &gt, &t), 0.0);
    }

    #[test]
    fn top_chain_wrong_edge_outscores() {
        let lanes = vec![line(0.0), line(10.0), line(20.0)];
        let gt = scene(lanes, &[(0, 1), (1, 2)]);
        let t = MetricThresholds::default();
        let mut pred = Prediction::from_scene(&gt);
        assert_eq!(top_score(&pred, &gt, TopoKind::LaneLane, &t), 1.0);
        // vertex 0: wrong 0->2 ranks above right 0->1, AP 0.5; vertex 1 stays 1
        pred.topo.ll.set(0, 2, 0.9);
        pred.topo.ll.set(0, 1, 0.6);
        assert_eq!(top_score(&pred, &gt, TopoKind::LaneLane, &t), 0.75);
        pred.topo.ll = TopoMatrix::zeros(3, 3);
        assert_eq!(top_score(&pred, &gt, TopoKind::LaneLane, &t), 0.0);
    }

    #[test]
    fn top_unmatched_endpoint_is_false_positive() {
        let gt = scene(vec![line(0.0), line(10.0)], &[(0, 1)]);
        let pred = Prediction {
            lanes: vec![line(0.0), line(10.0), line(60.0)],
            lane_scores: vec![1.0; 3],
            traffic: vec![],
            topo: TopologyGraph {
                ll: TopoMatrix::from_rows(&[vec![0.0, 0.5, 0.9], vec![0.0; 3], vec![0.0; 3]], 3).unwrap(),
                lt: TopoMatrix::zeros(3, 0),
            },
        };
        assert_eq!(top_score(&pred, &gt, TopoKind::LaneLane, &MetricThresholds::default()), 0.5);
    }

    #[test]
    fn ols_examples() {
        assert_eq!(ols(1.0, 1.0, 1.0, 1.0), 1.0);
        assert_eq!(ols(0.0, 0.0, 0.0, 0.0), 0.0);
        assert_eq!(ols(0.5, 0.7, 0.36, 0.49), 0.625);
    }

    #[test]
    fn segment_distance_offset() {
        let c = line(0.0);
        let seg = LaneSegment::new(c.clone(), line(-1.5), line(1.5), SegmentCategory::Lane).unwrap();
        assert_eq!(lane_segment_distance(&seg, &seg), 0.0);
        let d = 0.75;
        let shift = Point3::new(0.0, d, 0.0);
        let moved = LaneSegment::new(
            c.translated(shift),
            line(-1.5).translated(shift),
            line(1.5).translated(shift),
            SegmentCategory::Lane,
        )
        .unwrap();
        assert!((lane_segment_distance(&seg, &moved) - d).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_empty_reports() {
        let gt = scene(vec![line(0.0), line(10.0)], &[(0, 1)]);
        let t = MetricThresholds::default();
        let r = evaluate(&Prediction::from_scene(&gt), &gt, None, &t).unwrap();
        assert_eq!((r.det_l, r.det_t, r.top_ll, r.top_lt, r.ols), (1.0, 1.0, 1.0, 1.0, 1.0));
        let e = evaluate(&Prediction::empty(), &gt, None, &t).unwrap();
        assert_eq!((e.det_l, e.top_ll), (0.0, 0.0));
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let gt = scene(vec![line(0.0)], &[]);
        let mut pred = Prediction::from_scene(&gt);
        pred.lane_scores.push(0.5);
        assert!(evaluate(&pred, &gt, None, &MetricThresholds::default()).is_err());
    }

    #[test]
    fn averaging_recomputes_ols() {
        let a = MetricReport { det_l: 1.0, det_t: 1.0, top_ll: 1.0, top_lt: 1.0, ols: 1.0, lane_segment: None };
        let b = MetricReport { det_l: 0.0, det_t: 0.0, top_ll: 0.0, top_lt: 0.0, ols: 0.0, lane_segment: None };
        let m = average_reports(&[a, b]).unwrap();
        assert_eq!(m.det_l, 0.5);
        assert_eq!(m.ols, ols(0.5, 0.5, 0.5, 0.5));
        assert!(average_reports(&[]).is_none());
    }
}
