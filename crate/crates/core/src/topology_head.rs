//! Lane-lane and lane-traffic topology heads.
//!
//! Each predicted connected lane is attached to the two piecewise lanes
//! closest (average L1) to its first and second half. Lane pairs that no
//! connected lane claims fall back to a feature-only branch.

use crate::connected::{split_halves, ConnectedLane};
use crate::error::{Error, Result};
use crate::geometry::avg_l1;
use crate::nn::{prefixed, prefixed_mut, seeded_rng, sigmoid, MlpCache, MlpParams, ParamTensors};
use crate::scene::{Polyline3D, TopoMatrix};
use crate::tensor::Matrix;
use rand::Rng;

/// Lanes picked for one connected lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchPair {
    pub connected_index: usize,
    pub i_star: usize,
    pub j_star: usize,
}

/// Concatenation of two transformed features, width `2·C`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeature(pub Vec<f64>);

fn argmin_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, v) in values.enumerate() {
        if v < best.1 {
            best = (k, v);
        }
    }
    best.0
}

/// For each connected lane: `i* = argmin_i f_g(lane_i, half1)`,
/// `j* = argmin_j f_g(lane_j, half2)`, lowest index on ties.
pub fn match_connected(lanes: &[Polyline3D], connected: &[ConnectedLane]) -> Result<Vec<MatchPair>> {
    let Some(first) = lanes.first() else {
        return Err(Error::EmptyLanes);
    };
    let n_points = first.len();
    if lanes.iter().any(|l| l.len() != n_points) {
        return Err(Error::ShapeMismatch("all lanes must share a point count".into()));
    }
    connected
        .iter()
        .enumerate()
        .map(|(c, conn)| {
            let (h1, h2) = split_halves(conn, n_points)?;
            let d1 = lanes.iter().map(|l| avg_l1(l, &h1)).collect::<Result<Vec<_>>>()?;
            let d2 = lanes.iter().map(|l| avg_l1(l, &h2)).collect::<Result<Vec<_>>>()?;
            Ok(MatchPair {
                connected_index: c,
                i_star: argmin_first(d1.into_iter()),
                j_star: argmin_first(d2.into_iter()),
            })
        })
        .collect()
}

/// Parameters of the lane-lane head. Matched and unmatched branches and the
/// shared scoring head are independent parameter sets.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneLaneHead {
    pub matched: MlpParams,
    pub unmatched: MlpParams,
    pub head: MlpParams,
}

/// Where each score came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScoreSource {
    Unmatched(usize),
    Matched(usize),
}

#[derive(Debug, Clone)]
pub struct LaneLaneCache {
    n: usize,
    pairs: Vec<MatchPair>,
    unmatched: MlpCache,
    unmatched_out: Matrix,
    matched: Option<(MlpCache, Matrix)>,
    head: MlpCache,
    probs: Matrix,
    source: Vec<ScoreSource>,
}

impl LaneLaneHead {
    pub fn seeded(c: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut next = || rng.random::<u64>();
        Self {
            matched: MlpParams::seeded(&[c, c, c], next()).unwrap(),
            unmatched: MlpParams::seeded(&[c, c, c], next()).unwrap(),
            head: MlpParams::seeded(&[2 * c, c, 1], next()).unwrap(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            matched: self.matched.zeros_like(),
            unmatched: self.unmatched.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    /// Pair feature of a matched pair.
    pub fn matched_feature(&self, q_hat: &Matrix, qc_hat: &Matrix, pair: MatchPair) -> Result<PairFeature> {
        let c = q_hat.cols();
        let conn = qc_hat.select_rows(&[pair.connected_index]);
        let a = self.matched.forward(&conn.add(&q_hat.select_rows(&[pair.i_star])))?;
        let b = self.matched.forward(&conn.add(&q_hat.select_rows(&[pair.j_star])))?;
        debug_assert_eq!(a.cols(), c);
        Ok(PairFeature(a.hconcat(&b).row(0).to_vec()))
    }

    /// Pair feature of an unmatched pair.
    pub fn unmatched_feature(&self, q_hat: &Matrix, i: usize, j: usize) -> Result<PairFeature> {
        let a = self.unmatched.forward(&q_hat.select_rows(&[i]))?;
        let b = self.unmatched.forward(&q_hat.select_rows(&[j]))?;
        Ok(PairFeature(a.hconcat(&b).row(0).to_vec()))
    }

    pub fn score(&self, feature: &PairFeature) -> Result<f64> {
        let x = Matrix::from_vec(1, feature.0.len(), feature.0.clone())?;
        Ok(sigmoid(self.head.forward(&x)?.get(0, 0)))
    }

    /// Raw `N × N` scores, diagonal included; see [`assemble_ll`].
    pub fn predict(&self, q_hat: &Matrix, qc_hat: &Matrix, pairs: &[MatchPair]) -> Result<Matrix> {
        Ok(self.forward_cached(q_hat, qc_hat, pairs)?.0)
    }

    pub fn forward_cached(&self, q_hat: &Matrix, qc_hat: &Matrix, pairs: &[MatchPair]) -> Result<(Matrix, LaneLaneCache)> {
        let n = q_hat.rows();
        for p in pairs {
            if p.i_star >= n || p.j_star >= n || p.connected_index >= qc_hat.rows() {
                return Err(Error::Contract(format!("match pair {p:?} out of range")));
            }
        }
        let (unmatched_out, unmatched) = self.unmatched.forward_cached(q_hat)?;
        let c = unmatched_out.cols();
        let n_pairs = pairs.len();
        let mut head_in = Matrix::zeros(n * n + n_pairs, 2 * c);
        for i in 0..n {
            for j in 0..n {
                let row = head_in.row_mut(i * n + j);
                row[..c].copy_from_slice(unmatched_out.row(i));
                row[c..].copy_from_slice(unmatched_out.row(j));
            }
        }
        let matched = if n_pairs > 0 {
            let mut rows = Matrix::zeros(2 * n_pairs, qc_hat.cols());
            for (k, p) in pairs.iter().enumerate() {
                for (side, lane) in [(0, p.i_star), (1, p.j_star)] {
                    let r = rows.row_mut(side * n_pairs + k);
                    for (t, v) in r.iter_mut().enumerate() {
                        *v = qc_hat.get(p.connected_index, t) + q_hat.get(lane, t);
                    }
                }
            }
            let (out, cache) = self.matched.forward_cached(&rows)?;
            for k in 0..n_pairs {
                let row = head_in.row_mut(n * n + k);
                row[..c].copy_from_slice(out.row(k));
                row[c..].copy_from_slice(out.row(n_pairs + k));
            }
            Some((cache, rows))
        } else {
            None
        };
        let (logits, head) = self.head.forward_cached(&head_in)?;
        let probs = logits.map(sigmoid);

        let mut source: Vec<ScoreSource> = (0..n * n).map(ScoreSource::Unmatched).collect();
        let mut best = vec![f64::NEG_INFINITY; n * n];
        for (k, p) in pairs.iter().enumerate() {
            let cell = p.i_star * n + p.j_star;
            let s = probs.get(n * n + k, 0);
            if s > best[cell] {
                best[cell] = s;
                source[cell] = ScoreSource::Matched(k);
            }
        }
        let mut scores = Matrix::zeros(n, n);
        for (cell, src) in source.iter().enumerate() {
            let row = match *src {
                ScoreSource::Unmatched(r) => r,
                ScoreSource::Matched(k) => n * n + k,
            };
            scores.data_mut()[cell] = probs.get(row, 0);
        }
        Ok((
            scores,
            LaneLaneCache { n, pairs: pairs.to_vec(), unmatched, unmatched_out, matched, head, probs, source },
        ))
    }

    /// Returns parameter gradients and `(dL/dq_hat, dL/dqc_hat)`.
    pub fn backward(&self, cache: &LaneLaneCache, dscores: &Matrix, qc_rows: usize) -> (LaneLaneHead, Matrix, Matrix) {
        let n = cache.n;
        let n_pairs = cache.pairs.len();
        let c = cache.unmatched_out.cols();
        let mut g = self.zeros_like();
        let mut dlogits = Matrix::zeros(n * n + n_pairs, 1);
        for (cell, src) in cache.source.iter().enumerate() {
            let row = match *src {
                ScoreSource::Unmatched(r) => r,
                ScoreSource::Matched(k) => n * n + k,
            };
            let p = cache.probs.get(row, 0);
            dlogits.set(row, 0, dscores.data()[cell] * p * (1.0 - p));
        }
        let dhead_in = self.head.backward(&cache.head, &dlogits, &mut g.head);

        let mut dunmatched = Matrix::zeros(n, c);
        for i in 0..n {
            for j in 0..n {
                let r = dhead_in.row(i * n + j);
                for t in 0..c {
                    dunmatched.set(i, t, dunmatched.get(i, t) + r[t]);
                    dunmatched.set(j, t, dunmatched.get(j, t) + r[c + t]);
                }
            }
        }
        let mut dq = self.unmatched.backward(&cache.unmatched, &dunmatched, &mut g.unmatched);
        let mut dqc = Matrix::zeros(qc_rows, dq.cols());
        if let Some((mcache, _)) = &cache.matched {
            let mut dmatched = Matrix::zeros(2 * n_pairs, c);
            for k in 0..n_pairs {
                let r = dhead_in.row(n * n + k);
                dmatched.row_mut(k).copy_from_slice(&r[..c]);
                dmatched.row_mut(n_pairs + k).copy_from_slice(&r[c..]);
            }
            let drows = self.matched.backward(mcache, &dmatched, &mut g.matched);
            for (k, p) in cache.pairs.iter().enumerate() {
                for (side, lane) in [(0, p.i_star), (1, p.j_star)] {
                    let r = drows.row(side * n_pairs + k);
                    for (t, &v) in r.iter().enumerate() {
                        dq.set(lane, t, dq.get(lane, t) + v);
                        dqc.set(p.connected_index, t, dqc.get(p.connected_index, t) + v);
                    }
                }
            }
        }
        (g, dq, dqc)
    }
}

impl ParamTensors for LaneLaneHead {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut v = prefixed("matched", self.matched.tensors());
        v.extend(prefixed("unmatched", self.unmatched.tensors()));
        v.extend(prefixed("head", self.head.tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut v = prefixed_mut("matched", self.matched.tensors_mut());
        v.extend(prefixed_mut("unmatched", self.unmatched.tensors_mut()));
        v.extend(prefixed_mut("head", self.head.tensors_mut()));
        v
    }
}

/// Zeroes the diagonal of raw lane-lane scores.
pub fn assemble_ll(raw: &Matrix) -> TopoMatrix {
    let mut m = TopoMatrix::zeros(raw.rows(), raw.cols());
    for i in 0..raw.rows() {
        for j in 0..raw.cols() {
            if i != j {
                m.set(i, j, raw.get(i, j));
            }
        }
    }
    m
}

/// `predict_ll` with diagonal zeroing.
pub fn predict_ll(q_hat: &Matrix, qc_hat: &Matrix, pairs: &[MatchPair], params: &LaneLaneHead) -> Result<TopoMatrix> {
    Ok(assemble_ll(&params.predict(q_hat, qc_hat, pairs)?))
}

/// Parameters of the lane-traffic head.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneTrafficHead {
    pub lane: MlpParams,
    pub traffic: MlpParams,
    pub head: MlpParams,
}

impl LaneTrafficHead {
    pub fn seeded(c: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut next = || rng.random::<u64>();
        Self {
            lane: MlpParams::seeded(&[c, c, c], next()).unwrap(),
            traffic: MlpParams::seeded(&[c, c, c], next()).unwrap(),
            head: MlpParams::seeded(&[2 * c, c, 1], next()).unwrap(),
        }
    }
}

impl ParamTensors for LaneTrafficHead {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut v = prefixed("lane", self.lane.tensors());
        v.extend(prefixed("traffic", self.traffic.tensors()));
        v.extend(prefixed("head", self.head.tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut v = prefixed_mut("lane", self.lane.tensors_mut());
        v.extend(prefixed_mut("traffic", self.traffic.tensors_mut()));
        v.extend(prefixed_mut("head", self.head.tensors_mut()));
        v
    }
}

/// `score[i][j] = sigmoid(MLP(concat(MLP(q̂_i), MLP(q^t_j))))`.
pub fn predict_lt(q_hat: &Matrix, q_t: &Matrix, params: &LaneTrafficHead) -> Result<TopoMatrix> {
    let (n, m) = (q_hat.rows(), q_t.rows());
    if m == 0 || n == 0 {
        return Ok(TopoMatrix::zeros(n, m));
    }
    let l = params.lane.forward(q_hat)?;
    let t = params.traffic.forward(q_t)?;
    let c = l.cols();
    let mut rows = Matrix::zeros(n * m, c + t.cols());
    for i in 0..n {
        for j in 0..m {
            let r = rows.row_mut(i * m + j);
            r[..c].copy_from_slice(l.row(i));
            r[c..].copy_from_slice(t.row(j));
        }
    }
    let logits = params.head.forward(&rows)?;
    let mut out = TopoMatrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            out.set(i, j, sigmoid(logits.get(i * m + j, 0)));
        }
    }
    Ok(out)
}
