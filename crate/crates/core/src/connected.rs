//! Connected lanes: predecessor/successor pairs merged at their junction,
//! and the lane-to-connection correlation distances that feed the
//! topology-aware attention mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{avg_l1, resample_uniform};
use crate::scene::{junction_point, Polyline3D, Scene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectedLane {
    pub curve: Polyline3D,
    /// Ground-truth `(predecessor, successor)` lane indices; absent on
    /// predicted connected lanes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<(usize, usize)>,
}

impl ConnectedLane {
    pub fn predicted(curve: Polyline3D) -> Self {
        Self { curve, source: None }
    }
}

/// Lane-by-connection matrix of correlation distances in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} correlation matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Contract("correlation distances must be finite and >= 0".into()));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, lane: usize, connected: usize) -> f64 {
        self.values[lane * self.cols + connected]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Joins `pred` and `succ` at their junction (counted once, giving
/// `len(pred) + len(succ) - 1` points) and resamples to `n_points`.
pub fn merge_at_junction(pred: &Polyline3D, succ: &Polyline3D, n_points: usize) -> Result<Polyline3D> {
    let mut pts = pred.points().to_vec();
    pts.extend_from_slice(&succ.points()[1..]);
    let merged = Polyline3D::new(pts)?;
    resample_uniform(&merged, n_points)
}

/// One connected lane per ground-truth edge, in row-major `(i, j)` order.
pub fn build_connected_gt(scene: &Scene) -> Result<Vec<ConnectedLane>> {
    let ll = &scene.topo.ll;
    let mut out = Vec::new();
    for i in 0..ll.rows() {
        for j in 0..ll.cols() {
            if ll.get(i, j) != 1.0 {
                continue;
            }
            let (a, b) = (&scene.lanes[i], &scene.lanes[j]);
            if junction_point(a, b).is_none() {
                return Err(Error::JunctionMismatch {
                    from: i,
                    to: j,
                    gap: a.last().distance(b.first()),
                });
            }
            out.push(ConnectedLane {
                curve: merge_at_junction(a, b, scene.n_points)?,
                source: Some((i, j)),
            });
        }
    }
    Ok(out)
}

/// Splits at index `floor(N/2)` (the midpoint belongs to both halves) and
/// resamples each half to `n_points`. Two-point curves are first densified
/// to three points so both halves are proper segments.
pub fn split_halves(conn: &ConnectedLane, n_points: usize) -> Result<(Polyline3D, Polyline3D)> {
    let curve = if conn.curve.len() < 3 {
        resample_uniform(&conn.curve, 3)?
    } else {
        conn.curve.clone()
    };
    let pts = curve.points();
    let mid = pts.len() / 2;
    let first = Polyline3D::new(pts[..=mid].to_vec())?;
    let second = Polyline3D::new(pts[mid..].to_vec())?;
    Ok((resample_uniform(&first, n_points)?, resample_uniform(&second, n_points)?))
}

/// `D[i][c] = min(f_g(lane_i, half1_c), f_g(lane_i, half2_c))` where `f_g`
/// is [`avg_l1`].
pub fn correlation_distances(lanes: &[Polyline3D], connected: &[ConnectedLane]) -> Result<CorrelationMatrix> {
    let Some(first) = lanes.first() else {
        return CorrelationMatrix::new(0, connected.len(), Vec::new());
    };
    let n_points = first.len();
    if let Some(k) = lanes.iter().position(|l| l.len() != n_points) {
        return Err(Error::ShapeMismatch(format!(
            "lane {k} has {} points, expected {n_points}",
            lanes[k].len()
        )));
    }
    let halves = connected
        .iter()
        .map(|c| split_halves(c, n_points))
        .collect::<Result<Vec<_>>>()?;
    let mut values = Vec::with_capacity(lanes.len() * connected.len());
    for lane in lanes {
        for (h1, h2) in &halves {
            values.push(avg_l1(lane, h1)?.min(avg_l1(lane, h2)?));
        }
    }
    CorrelationMatrix::new(lanes.len(), connected.len(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Point3, TopoMatrix, TopologyGraph};

    fn line_x(x0: f64, x1: f64, n: usize) -> Polyline3D {
        let pts = (0..n)
            .map(|k| Point3::new(x0 + (x1 - x0) * k as f64 / (n - 1) as f64, 0.0, 0.0))
            .collect();
        Polyline3D::new(pts).unwrap()
    }

    fn scene(lanes: Vec<Polyline3D>, edges: &[(usize, usize)]) -> Scene {
        let n = lanes.len();
        let mut ll = TopoMatrix::zeros(n, n);
        for &(i, j) in edges {
            ll.set(i, j, 1.0);
        }
        let n_points = lanes[0].len();
        Scene { lanes, traffic: vec![], topo: TopologyGraph { ll, lt: TopoMatrix::zeros(n, 0) }, n_points }
    }

    #[test]
    fn colinear_chain_merge() {
        let s = scene(vec![line_x(0.0, 10.0, 3), line_x(10.0, 20.0, 3)], &[(0, 1)]);
        let c = build_connected_gt(&s).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].source, Some((0, 1)));
        assert_eq!(c[0].curve, line_x(0.0, 20.0, 3));
    }

    #[test]
    fn empty_topology_gives_no_connected_lanes() {
        let s = scene(vec![line_x(0.0, 10.0, 3), line_x(10.0, 20.0, 3)], &[]);
        assert!(build_connected_gt(&s).unwrap().is_empty());
    }

    #[test]
    fn junction_mismatch_names_pair() {
        let s = scene(vec![line_x(0.0, 10.0, 3), line_x(11.0, 20.0, 3)], &[(0, 1)]);
        match build_connected_gt(&s) {
            Err(Error::JunctionMismatch { from: 0, to: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn split_index_arithmetic() {
        let conn = ConnectedLane::predicted(line_x(0.0, 10.0, 11));
        let (h1, h2) = split_halves(&conn, 11).unwrap();
        assert_eq!(h1, line_x(0.0, 5.0, 11));
        assert_eq!(h2, line_x(5.0, 10.0, 11));
    }

    #[test]
    fn halves_of_colinear_connected_lane() {
        let s = scene(vec![line_x(0.0, 10.0, 3), line_x(10.0, 20.0, 3)], &[(0, 1)]);
        let c = build_connected_gt(&s).unwrap();
        let (h1, h2) = split_halves(&c[0], 3).unwrap();
        assert_eq!(h1.first(), Point3::new(0.0, 0.0, 0.0));
        assert_eq!(h1.last(), Point3::new(10.0, 0.0, 0.0));
        assert_eq!(h2.last(), Point3::new(20.0, 0.0, 0.0));
    }

    #[test]
    fn two_point_curve_splits() {
        let conn = ConnectedLane::predicted(line_x(0.0, 10.0, 2));
        let (h1, h2) = split_halves(&conn, 2).unwrap();
        assert_eq!(h1, line_x(0.0, 5.0, 2));
        assert_eq!(h2, line_x(5.0, 10.0, 2));
    }

    #[test]
    fn correlation_identity_and_empty() {
        let lanes = vec![line_x(0.0, 10.0, 3), line_x(10.0, 20.0, 3)];
        let conn = vec![ConnectedLane::predicted(line_x(0.0, 20.0, 3))];
        let d = correlation_distances(&lanes, &conn).unwrap();
        assert_eq!(d.get(0, 0), 0.0);
        assert_eq!(d.get(1, 0), 0.0);
        let d = correlation_distances(&lanes, &[]).unwrap();
        assert_eq!((d.rows(), d.cols()), (2, 0));
    }

    #[test]
    fn correlation_rejects_mixed_counts() {
        let lanes = vec![line_x(0.0, 10.0, 3), line_x(10.0, 20.0, 4)];
        assert!(correlation_distances(&lanes, &[]).is_err());
    }
}
