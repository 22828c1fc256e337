//! Ground-truth and prediction data model: lanes, traffic elements and the
//! two topology matrices that relate them.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum gap, in meters, between a predecessor's terminal point and a
/// successor's initial point for the two to count as one junction.
pub const JUNCTION_TOLERANCE: f64 = 0.01;

/// Default number of sampled points per centerline.
pub const DEFAULT_N_POINTS: usize = 11;

/// A point in the ego/BEV frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn l1(self) -> f64 {
        self.x.abs() + self.y.abs() + self.z.abs()
    }

    pub fn distance(self, other: Point3) -> f64 {
        (self - other).norm()
    }

    pub fn lerp(self, other: Point3, t: f64) -> Point3 {
        self + (other - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        [p.x, p.y, p.z]
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Ordered 3D point sequence with at least two finite, pairwise-distinct
/// consecutive points.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Polyline3D {
    points: Vec<Point3>,
}

impl Polyline3D {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidPolyline(format!(
                "need at least 2 points, got {}",
                points.len()
            )));
        }
        if let Some(k) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidPolyline(format!("non-finite point at index {k}")));
        }
        if let Some(k) = points.windows(2).position(|w| w[0] == w[1]) {
            return Err(Error::InvalidPolyline(format!(
                "consecutive duplicate points at index {k}"
            )));
        }
        Ok(Self { points })
    }

    pub fn from_xyz(coords: &[[f64; 3]]) -> Result<Self> {
        Self::new(coords.iter().copied().map(Point3::from).collect())
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> Point3 {
        self.points[0]
    }

    pub fn last(&self) -> Point3 {
        self.points[self.points.len() - 1]
    }

    pub fn reversed(&self) -> Polyline3D {
        let mut points = self.points.clone();
        points.reverse();
        Self { points }
    }

    pub fn arc_length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].distance(w[1])).sum()
    }

    pub fn translated(&self, offset: Point3) -> Polyline3D {
        Self {
            points: self.points.iter().map(|&p| p + offset).collect(),
        }
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }
}

impl<'de> Deserialize<'de> for Polyline3D {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let points = Vec::<Point3>::deserialize(d)?;
        Polyline3D::new(points).map_err(serde::de::Error::custom)
    }
}

/// Traffic-element categories of the front-view detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficCategory {
    Unknown,
    Red,
    Green,
    Yellow,
    GoStraight,
    TurnLeft,
    TurnRight,
    NoLeftTurn,
    NoRightTurn,
    UTurn,
    NoUTurn,
    SlightLeft,
    SlightRight,
}

impl TrafficCategory {
    pub const ALL: [TrafficCategory; 13] = [
        TrafficCategory::Unknown,
        TrafficCategory::Red,
        TrafficCategory::Green,
        TrafficCategory::Yellow,
        TrafficCategory::GoStraight,
        TrafficCategory::TurnLeft,
        TrafficCategory::TurnRight,
        TrafficCategory::NoLeftTurn,
        TrafficCategory::NoRightTurn,
        TrafficCategory::UTurn,
        TrafficCategory::NoUTurn,
        TrafficCategory::SlightLeft,
        TrafficCategory::SlightRight,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Axis-aligned front-view box `(x_min, y_min, x_max, y_max)` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn is_well_formed(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficElement {
    pub bbox: BBox,
    pub category: TrafficCategory,
    /// Present on predictions only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl TrafficElement {
    pub fn new(bbox: BBox, category: TrafficCategory) -> Result<Self> {
        let te = Self { bbox, category, score: None };
        te.check()?;
        Ok(te)
    }

    pub fn with_score(mut self, score: f64) -> Result<Self> {
        self.score = Some(score);
        self.check()?;
        Ok(self)
    }

    fn check(&self) -> Result<()> {
        if !self.bbox.is_well_formed() {
            return Err(Error::InvalidTrafficElement(format!("malformed box {:?}", self.bbox)));
        }
        if let Some(s) = self.score {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::InvalidTrafficElement(format!("score {s} outside [0,1]")));
            }
        }
        Ok(())
    }
}

/// Dense row-major matrix of topology entries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TopoMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TopoMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "topology row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// Non-zero entries as `(row, col)` pairs in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.rows {
            for j in 0..self.cols {
                if self.get(i, j) != 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1.0).count()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> TopoMatrix {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Lane-lane (`ll`) and lane-traffic (`lt`) relations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TopologyGraph {
    pub ll: TopoMatrix,
    pub lt: TopoMatrix,
}

impl TopologyGraph {
    pub fn empty(n_lanes: usize, n_traffic: usize) -> Self {
        Self {
            ll: TopoMatrix::zeros(n_lanes, n_lanes),
            lt: TopoMatrix::zeros(n_lanes, n_traffic),
        }
    }

    /// Successor lists derived from the dense `ll` matrix.
    pub fn successors(&self) -> Vec<Vec<usize>> {
        (0..self.ll.rows())
            .map(|i| (0..self.ll.cols()).filter(|&j| self.ll.get(i, j) != 0.0).collect())
            .collect()
    }
}

/// Ground-truth scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub lanes: Vec<Polyline3D>,
    pub traffic: Vec<TrafficElement>,
    pub topo: TopologyGraph,
    pub n_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentCategory {
    Lane,
    PedestrianCrossing,
}

/// A centerline with its left and right boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneSegment {
    pub centerline: Polyline3D,
    pub left_boundary: Polyline3D,
    pub right_boundary: Polyline3D,
    pub category: SegmentCategory,
}

impl LaneSegment {
    pub fn new(
        centerline: Polyline3D,
        left_boundary: Polyline3D,
        right_boundary: Polyline3D,
        category: SegmentCategory,
    ) -> Result<Self> {
        if left_boundary.len() != centerline.len() || right_boundary.len() != centerline.len() {
            return Err(Error::ShapeMismatch(format!(
                "lane segment point counts differ: center {}, left {}, right {}",
                centerline.len(),
                left_boundary.len(),
                right_boundary.len()
            )));
        }
        Ok(Self { centerline, left_boundary, right_boundary, category })
    }
}

/// One broken scene rule.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    PointCountMismatch { lane: usize, expected: usize, found: usize },
    SelfConnection { lane: usize },
    NonBinaryEntry { matrix: &'static str, row: usize, col: usize, value: f64 },
    DimensionMismatch { matrix: &'static str, expected: (usize, usize), found: (usize, usize) },
    JunctionGap { from: usize, to: usize, gap: f64 },
    InvalidTraffic { index: usize, reason: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::PointCountMismatch { lane, expected, found } => write!(
                f,
                "point-count mismatch at lane {lane}: expected {expected}, found {found}"
            ),
            Violation::SelfConnection { lane } => write!(f, "self-connection at lane {lane}"),
            Violation::NonBinaryEntry { matrix, row, col, value } => {
                write!(f, "non-binary {matrix} entry at ({row}, {col}): {value}")
            }
            Violation::DimensionMismatch { matrix, expected, found } => write!(
                f,
                "{matrix} dimension mismatch: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Violation::JunctionGap { from, to, gap } => {
                write!(f, "junction gap between lane {from} and lane {to}: {gap:.6} m")
            }
            Violation::InvalidTraffic { index, reason } => {
                write!(f, "invalid traffic element {index}: {reason}")
            }
        }
    }
}

/// Checks every scene invariant; an empty result means the scene is valid.
pub fn validate_scene(scene: &Scene) -> Vec<Violation> {
    let mut out = Vec::new();
    let n_lanes = scene.lanes.len();
    let n_traffic = scene.traffic.len();

    for (lane, poly) in scene.lanes.iter().enumerate() {
        if poly.len() != scene.n_points {
            out.push(Violation::PointCountMismatch {
                lane,
                expected: scene.n_points,
                found: poly.len(),
            });
        }
    }
    for (index, te) in scene.traffic.iter().enumerate() {
        if let Err(e) = te.check() {
            out.push(Violation::InvalidTraffic { index, reason: e.to_string() });
        }
    }

    let ll = &scene.topo.ll;
    let lt = &scene.topo.lt;
    let ll_ok = (ll.rows(), ll.cols()) == (n_lanes, n_lanes);
    if !ll_ok {
        out.push(Violation::DimensionMismatch {
            matrix: "ll",
            expected: (n_lanes, n_lanes),
            found: (ll.rows(), ll.cols()),
        });
    }
    if (lt.rows(), lt.cols()) != (n_lanes, n_traffic) {
        out.push(Violation::DimensionMismatch {
            matrix: "lt",
            expected: (n_lanes, n_traffic),
            found: (lt.rows(), lt.cols()),
        });
    }
    for (name, m) in [("ll", ll), ("lt", lt)] {
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                let v = m.get(i, j);
                if v != 0.0 && v != 1.0 {
                    out.push(Violation::NonBinaryEntry { matrix: name, row: i, col: j, value: v });
                }
            }
        }
    }
    if ll_ok {
        for i in 0..n_lanes {
            if ll.get(i, i) != 0.0 {
                out.push(Violation::SelfConnection { lane: i });
            }
            for j in 0..n_lanes {
                if i != j && ll.get(i, j) == 1.0 {
                    let gap = scene.lanes[i].last().distance(scene.lanes[j].first());
                    if gap > JUNCTION_TOLERANCE {
                        out.push(Violation::JunctionGap { from: i, to: j, gap });
                    }
                }
            }
        }
    }
    out
}

/// Terminal point of `lane_a` when it coincides with the initial point of
/// `lane_b` within [`JUNCTION_TOLERANCE`].
pub fn junction_point(lane_a: &Polyline3D, lane_b: &Polyline3D) -> Option<Point3> {
    junction_point_with_tolerance(lane_a, lane_b, JUNCTION_TOLERANCE)
}

pub fn junction_point_with_tolerance(
    lane_a: &Polyline3D,
    lane_b: &Polyline3D,
    tolerance: f64,
) -> Option<Point3> {
    let end = lane_a.last();
    (end.distance(lane_b.first()) <= tolerance).then_some(end)
}
