//! Seeded synthetic lane graphs and a detector-noise model.
//!
//! Corridors run along +x, `5·lane_spacing` apart. Each corridor is a chain
//! of straight segments; at every interior junction a split branch may leave
//! towards +y and a merge branch may arrive from −y. Branches are straight,
//! as long as a segment, and reach a lateral offset of `1.2·lane_spacing`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::metrics::{Prediction, SegmentSet};
use crate::nn::seeded_rng;
use crate::scene::{
    junction_point, BBox, LaneSegment, Point3, Polyline3D, Scene, SegmentCategory, TopoMatrix, TopologyGraph,
    TrafficCategory, TrafficElement,
};

/// Seeds used by the shipped scene corpus and the degradation checks.
pub const SHIPPED_SEEDS: [u64; 10] = [3, 11, 19, 27, 42, 58, 77, 101, 256, 1024];

const BRANCH_OFFSET: f64 = 1.2;
const CORRIDOR_PITCH: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub n_corridors: usize,
    /// Chained segments per corridor.
    pub n_segments: usize,
    pub segment_length: f64,
    pub lane_spacing: f64,
    pub split_prob: f64,
    pub merge_prob: f64,
    pub n_points: usize,
    pub n_traffic: usize,
    /// dz/dx of every lane.
    pub grade: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_corridors: 2,
            n_segments: 3,
            segment_length: 20.0,
            lane_spacing: 3.5,
            split_prob: 0.5,
            merge_prob: 0.3,
            n_points: crate::scene::DEFAULT_N_POINTS,
            n_traffic: 3,
            grade: 0.0,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.into()));
        if self.n_corridors == 0 || self.n_segments == 0 {
            return bad("need at least one corridor and one segment");
        }
        if !(self.lane_spacing.is_finite() && self.lane_spacing >= 3.0) {
            return bad("lane_spacing must be >= 3 m");
        }
        if !(self.segment_length.is_finite() && self.segment_length >= 2.0 * self.lane_spacing) {
            return bad("segment_length must be >= 2 * lane_spacing");
        }
        if !(0.0..=1.0).contains(&self.split_prob) || !(0.0..=1.0).contains(&self.merge_prob) {
            return bad("probabilities must lie in [0, 1]");
        }
        if self.n_points < 2 {
            return bad("n_points must be >= 2");
        }
        if !self.grade.is_finite() {
            return bad("grade must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseParams {
    pub point_sigma: f64,
    pub drop_rate: f64,
    pub spurious_rate: f64,
    pub score_noise: f64,
    pub topo_flip_rate: f64,
    pub seed: u64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self { point_sigma: 0.0, drop_rate: 0.0, spurious_rate: 0.0, score_noise: 0.0, topo_flip_rate: 0.0, seed: 0 }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let ok = self.point_sigma.is_finite()
            && self.point_sigma >= 0.0
            && unit(self.drop_rate)
            && self.spurious_rate.is_finite()
            && self.spurious_rate >= 0.0
            && unit(self.score_noise)
            && unit(self.topo_flip_rate);
        if !ok {
            return Err(Error::InvalidParams("noise parameters out of range".into()));
        }
        Ok(())
    }
}

fn straight(a: Point3, b: Point3, n: usize) -> Polyline3D {
    let pts = (0..n).map(|k| if k == n - 1 { b } else { a.lerp(b, k as f64 / (n - 1) as f64) }).collect();
    Polyline3D::new(pts).expect("distinct endpoints")
}

/// `ll[i][j] = 1` whenever lane `i` ends where lane `j` starts.
pub fn derive_ll(lanes: &[Polyline3D]) -> TopoMatrix {
    let n = lanes.len();
    let mut ll = TopoMatrix::zeros(n, n);
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            if junction_point(&lanes[i], &lanes[j]).is_some() {
                ll.set(i, j, 1.0);
            }
        }
    }
    ll
}

/// Non-overlapping boxes on a 15-column grid of 120×120 px slots, random
/// categories, and one random lane association per element.
fn traffic(n_traffic: usize, n_lanes: usize, rng: &mut impl Rng) -> (Vec<TrafficElement>, TopoMatrix) {
    let mut elems = Vec::with_capacity(n_traffic);
    let mut lt = TopoMatrix::zeros(n_lanes, n_traffic);
    for k in 0..n_traffic {
        let (col, row) = ((k % 15) as f64, (k / 15) as f64);
        let (w, h) = (rng.random_range(30.0..80.0), rng.random_range(30.0..80.0));
        let x0 = 20.0 + 120.0 * col + rng.random_range(0.0..(100.0 - w));
        let y0 = 20.0 + 120.0 * row + rng.random_range(0.0..(100.0 - h));
        let cat = TrafficCategory::ALL[rng.random_range(0..TrafficCategory::ALL.len())];
        elems.push(TrafficElement::new(BBox::new(x0, y0, x0 + w, y0 + h), cat).expect("well-formed box"));
        if n_lanes > 0 {
            lt.set(rng.random_range(0..n_lanes), k, 1.0);
        }
    }
    (elems, lt)
}

pub fn generate_scene(p: &SynthParams) -> Result<Scene> {
    p.validate()?;
    let mut rng = seeded_rng(p.seed);
    let (l, s) = (p.segment_length, p.lane_spacing);
    let rise = BRANCH_OFFSET * s;
    let run = (l * l - rise * rise).sqrt();
    let at = |x: f64, y: f64| Point3::new(x, y, p.grade * x);

    let mut lanes = Vec::new();
    for c in 0..p.n_corridors {
        let y = c as f64 * CORRIDOR_PITCH * s;
        for k in 0..p.n_segments {
            lanes.push(straight(at(k as f64 * l, y), at((k + 1) as f64 * l, y), p.n_points));
        }
        for k in 1..p.n_segments {
            let x = k as f64 * l;
            let (split, merge) = (rng.random::<f64>(), rng.random::<f64>());
            if split < p.split_prob {
                lanes.push(straight(at(x, y), at(x + run, y + rise), p.n_points));
            }
            if merge < p.merge_prob {
                lanes.push(straight(at(x - run, y - rise), at(x, y), p.n_points));
            }
        }
    }
    let ll = derive_ll(&lanes);
    let (traffic, lt) = traffic(p.n_traffic, lanes.len(), &mut rng);
    Ok(Scene { lanes, traffic, topo: TopologyGraph { ll, lt }, n_points: p.n_points })
}

/// One corridor of two chained segments: the smallest scene with a
/// connection, used by the fit demo.
pub fn two_lane_chain(n_points: usize) -> Result<Scene> {
    generate_scene(&SynthParams {
        n_corridors: 1,
        n_segments: 2,
        split_prob: 0.0,
        merge_prob: 0.0,
        n_traffic: 0,
        n_points,
        ..Default::default()
    })
}

/// Ring arcs between consecutive arm junctions plus one entry and one exit
/// per arm. Entry, exit, incoming arc and outgoing arc all meet at the arm's
/// junction point, so each arm contributes four edges.
pub fn generate_roundabout(radius: f64, n_arms: usize, n_points: usize, seed: u64) -> Result<Scene> {
    if !(radius.is_finite() && radius > 0.0) || n_arms < 2 || n_points < 2 {
        return Err(Error::InvalidParams("roundabout needs radius > 0, >= 2 arms, >= 2 points".into()));
    }
    let mut rng = seeded_rng(seed);
    let sector = std::f64::consts::TAU / n_arms as f64;
    let angles: Vec<f64> =
        (0..n_arms).map(|a| a as f64 * sector + rng.random_range(-0.1..0.1) * sector).collect();
    let on_circle = |r: f64, phi: f64| Point3::new(r * phi.cos(), r * phi.sin(), 0.0);
    let arm_spread = 0.15;

    let mut lanes = Vec::new();
    for a in 0..n_arms {
        let (from, to) = (angles[a], angles[(a + 1) % n_arms] + if a + 1 == n_arms { std::f64::consts::TAU } else { 0.0 });
        let pts = (0..n_points)
            .map(|k| {
                if k == n_points - 1 {
                    on_circle(radius, angles[(a + 1) % n_arms])
                } else {
                    on_circle(radius, from + (to - from) * k as f64 / (n_points - 1) as f64)
                }
            })
            .collect();
        lanes.push(Polyline3D::new(pts)?);
    }
    for &phi in &angles {
        let j = on_circle(radius, phi);
        lanes.push(straight(on_circle(2.0 * radius, phi + arm_spread), j, n_points));
        lanes.push(straight(j, on_circle(2.0 * radius, phi - arm_spread), n_points));
    }
    let ll = derive_ll(&lanes);
    let n = lanes.len();
    Ok(Scene { lanes, traffic: vec![], topo: TopologyGraph { ll, lt: TopoMatrix::zeros(n, 0) }, n_points })
}

fn normal3(rng: &mut impl Rng) -> Point3 {
    let mut z = || Distribution::<f64>::sample(&StandardNormal, rng);
    Point3::new(z(), z(), z())
}

/// Isotropic Gaussian point noise. Draws happen regardless of `sigma`, so
/// different noise levels share one random stream.
pub fn jitter_polyline(poly: &Polyline3D, sigma: f64, rng: &mut impl Rng) -> Polyline3D {
    let pts: Vec<Point3> = poly.points().iter().map(|&p| p + normal3(rng) * sigma).collect();
    Polyline3D::new(pts).unwrap_or_else(|_| poly.clone())
}

fn blend(base: f64, n: &NoiseParams, rng: &mut impl Rng) -> f64 {
    let (flip, u) = (rng.random::<f64>(), rng.random::<f64>());
    let b = if flip < n.topo_flip_rate { 1.0 - base } else { base };
    b + n.score_noise * u * (0.5 - b)
}

/// Pseudo-detector output for a ground-truth scene.
pub fn perturb(scene: &Scene, n: &NoiseParams) -> Result<Prediction> {
    n.validate()?;
    let mut rng = seeded_rng(n.seed);
    // (origin lane, polyline, score)
    let mut out: Vec<(Option<usize>, Polyline3D, f64)> = Vec::new();
    for (i, lane) in scene.lanes.iter().enumerate() {
        let (drop, u) = (rng.random::<f64>(), rng.random::<f64>());
        let noisy = jitter_polyline(lane, n.point_sigma, &mut rng);
        if drop >= n.drop_rate {
            out.push((Some(i), noisy, 1.0 - 0.5 * n.score_noise * u));
        }
    }
    for lane in &scene.lanes {
        let whole = n.spurious_rate.floor() as usize;
        let extra = usize::from(rng.random::<f64>() < n.spurious_rate.fract());
        for _ in 0..whole + extra {
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let offset = Point3::new(0.0, side * rng.random_range(4.0..8.0), 0.0);
            let copy = jitter_polyline(&lane.translated(offset), n.point_sigma, &mut rng);
            out.push((None, copy, 0.5 * rng.random::<f64>()));
        }
    }

    let m = out.len();
    let mut ll = TopoMatrix::zeros(m, m);
    let mut lt = TopoMatrix::zeros(m, scene.traffic.len());
    for a in 0..m {
        for b in (0..m).filter(|&b| b != a) {
            let base = match (out[a].0, out[b].0) {
                (Some(i), Some(j)) => scene.topo.ll.get(i, j),
                _ => 0.0,
            };
            ll.set(a, b, blend(base, n, &mut rng));
        }
        for t in 0..scene.traffic.len() {
            let base = out[a].0.map_or(0.0, |i| scene.topo.lt.get(i, t));
            lt.set(a, t, blend(base, n, &mut rng));
        }
    }
    let (lanes, lane_scores) = out.into_iter().map(|(_, l, s)| (l, s)).unzip();
    Ok(Prediction {
        lanes,
        lane_scores,
        traffic: scene.traffic.iter().map(|t| TrafficElement { score: Some(1.0), ..*t }).collect(),
        topo: TopologyGraph { ll, lt },
    })
}

fn offset_xy(poly: &Polyline3D, d: f64) -> Polyline3D {
    let p = poly.points();
    let n = p.len();
    let pts = (0..n)
        .map(|k| {
            let t = p[(k + 1).min(n - 1)] - p[k.saturating_sub(1)];
            let h = t.x.hypot(t.y).max(1e-12);
            p[k] + Point3::new(-t.y / h, t.x / h, 0.0) * d
        })
        .collect();
    Polyline3D::new(pts).expect("offset of a valid polyline")
}

/// Lane segments for every lane (boundaries `half_width` to each side) and
/// a pedestrian crossing at the start of every lane without predecessors.
pub fn derive_segments(scene: &Scene, half_width: f64) -> Result<SegmentSet> {
    if !(half_width.is_finite() && half_width > 0.0) {
        return Err(Error::InvalidParams("half_width must be positive".into()));
    }
    let n = scene.lanes.len();
    let mut segments: Vec<LaneSegment> = scene
        .lanes
        .iter()
        .map(|l| LaneSegment::new(l.clone(), offset_xy(l, half_width), offset_xy(l, -half_width), SegmentCategory::Lane))
        .collect::<Result<_>>()?;
    for (i, lane) in scene.lanes.iter().enumerate() {
        if (0..n).any(|j| scene.topo.ll.get(j, i) != 0.0) {
            continue;
        }
        let p = lane.points();
        let t = p[1] - p[0];
        let h = t.x.hypot(t.y).max(1e-12);
        let (along, across) = (Point3::new(t.x / h, t.y / h, 0.0), Point3::new(-t.y / h, t.x / h, 0.0));
        let center = straight(p[0] - across * half_width, p[0] + across * half_width, scene.n_points);
        segments.push(LaneSegment::new(
            center.translated(along * -1.5),
            center.translated(along * -3.0),
            center.clone(),
            SegmentCategory::PedestrianCrossing,
        )?);
    }
    let total = segments.len();
    let mut topo = TopoMatrix::zeros(total, total);
    for i in 0..n {
        for j in 0..n {
            topo.set(i, j, scene.topo.ll.get(i, j));
        }
    }
    Ok(SegmentSet { segments, scores: vec![], topo })
}

/// Point noise and drops for a segment set; survivors get unit-ish scores
/// and topology scores blended as in [`perturb`].
pub fn perturb_segments(gt: &SegmentSet, n: &NoiseParams) -> Result<SegmentSet> {
    n.validate()?;
    let mut rng = seeded_rng(n.seed ^ 0x5e6);
    let mut kept = Vec::new();
    let mut segments = Vec::new();
    let mut scores = Vec::new();
    for (i, s) in gt.segments.iter().enumerate() {
        let (drop, u) = (rng.random::<f64>(), rng.random::<f64>());
        let c = jitter_polyline(&s.centerline, n.point_sigma, &mut rng);
        let l = jitter_polyline(&s.left_boundary, n.point_sigma, &mut rng);
        let r = jitter_polyline(&s.right_boundary, n.point_sigma, &mut rng);
        if drop >= n.drop_rate {
            kept.push(i);
            segments.push(LaneSegment::new(c, l, r, s.category)?);
            scores.push(1.0 - 0.5 * n.score_noise * u);
        }
    }
    let m = kept.len();
    let mut topo = TopoMatrix::zeros(m, m);
    for a in 0..m {
        for b in (0..m).filter(|&b| b != a) {
            topo.set(a, b, blend(gt.topo.get(kept[a], kept[b]), n, &mut rng));
        }
    }
    Ok(SegmentSet { segments, scores, topo })
}
