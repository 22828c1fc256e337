//! JSON file formats for scenes, predictions, connected lanes and reports.
//!
//! Every number is rounded to 9 significant digits before it is written so
//! that files are portable byte for byte.

use serde::{Deserialize, Serialize};

use crate::connected::ConnectedLane;
use crate::error::{Error, Result};
use crate::metrics::{MetricReport, Prediction, SegmentReport, SegmentSet};
use crate::scene::{
    BBox, LaneSegment, Point3, Polyline3D, Scene, SegmentCategory, TopoMatrix, TopologyGraph, TrafficCategory,
    TrafficElement,
};

pub const FORMAT_VERSION: u32 = 1;

/// Rounds to 9 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

type Coords = Vec<[f64; 3]>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrafficDto {
    bbox: [f64; 4],
    category: TrafficCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TopoDto {
    ll: Vec<Vec<f64>>,
    lt: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SegmentDto {
    centerline: Coords,
    left_boundary: Coords,
    right_boundary: Coords,
    category: SegmentCategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SegmentsDto {
    segments: Vec<SegmentDto>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    scores: Vec<f64>,
    topo: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SceneDto {
    version: u32,
    n_points: usize,
    lanes: Vec<Coords>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lane_scores: Option<Vec<f64>>,
    traffic: Vec<TrafficDto>,
    topo: TopoDto,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lane_segments: Option<SegmentsDto>,
}

fn coords(p: &Polyline3D) -> Coords {
    p.points().iter().map(|q| [round_sig(q.x), round_sig(q.y), round_sig(q.z)]).collect()
}

fn rows(m: &TopoMatrix) -> Vec<Vec<f64>> {
    m.to_rows().into_iter().map(|r| r.into_iter().map(round_sig).collect()).collect()
}

fn traffic_dto(t: &TrafficElement) -> TrafficDto {
    let b: [f64; 4] = t.bbox.into();
    TrafficDto { bbox: b.map(round_sig), category: t.category, score: t.score.map(round_sig) }
}

fn segments_dto(s: &SegmentSet) -> SegmentsDto {
    SegmentsDto {
        segments: s
            .segments
            .iter()
            .map(|g| SegmentDto {
                centerline: coords(&g.centerline),
                left_boundary: coords(&g.left_boundary),
                right_boundary: coords(&g.right_boundary),
                category: g.category,
            })
            .collect(),
        scores: s.scores.iter().copied().map(round_sig).collect(),
        topo: rows(&s.topo),
    }
}

fn polyline(c: &Coords, what: &str) -> Result<Polyline3D> {
    Polyline3D::new(c.iter().map(|&p| Point3::from(p)).collect())
        .map_err(|e| Error::Parse(format!("{what}: {e}")))
}

/// Width of an empty row list is taken from `cols_hint`.
fn matrix(r: &[Vec<f64>], cols_hint: usize, what: &str) -> Result<TopoMatrix> {
    let cols = r.first().map_or(cols_hint, Vec::len);
    TopoMatrix::from_rows(r, cols).map_err(|e| Error::Parse(format!("{what}: {e}")))
}

fn decode_traffic(t: &[TrafficDto]) -> Result<Vec<TrafficElement>> {
    t.iter()
        .enumerate()
        .map(|(i, d)| {
            let e = TrafficElement::new(BBox::from(d.bbox), d.category)
                .map_err(|e| Error::Parse(format!("traffic {i}: {e}")))?;
            match d.score {
                Some(s) => e.with_score(s).map_err(|e| Error::Parse(format!("traffic {i}: {e}"))),
                None => Ok(e),
            }
        })
        .collect()
}

fn decode_segments(d: &SegmentsDto) -> Result<SegmentSet> {
    let segments = d
        .segments
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let what = format!("segment {i}");
            LaneSegment::new(
                polyline(&s.centerline, &what)?,
                polyline(&s.left_boundary, &what)?,
                polyline(&s.right_boundary, &what)?,
                s.category,
            )
            .map_err(|e| Error::Parse(format!("{what}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let topo = matrix(&d.topo, segments.len(), "segment topology")?;
    Ok(SegmentSet { segments, scores: d.scores.clone(), topo })
}

fn parse_dto(json: &str) -> Result<SceneDto> {
    let dto: SceneDto = serde_json::from_str(json).map_err(|e| Error::Parse(e.to_string()))?;
    if dto.version != FORMAT_VERSION {
        return Err(Error::Parse(format!("unsupported version {}", dto.version)));
    }
    Ok(dto)
}

struct Decoded {
    lanes: Vec<Polyline3D>,
    traffic: Vec<TrafficElement>,
    topo: TopologyGraph,
    segments: Option<SegmentSet>,
}

fn decode(dto: &SceneDto) -> Result<Decoded> {
    let lanes = dto
        .lanes
        .iter()
        .enumerate()
        .map(|(i, c)| polyline(c, &format!("lane {i}")))
        .collect::<Result<Vec<_>>>()?;
    let traffic = decode_traffic(&dto.traffic)?;
    let ll = matrix(&dto.topo.ll, lanes.len(), "ll")?;
    let lt = matrix(&dto.topo.lt, traffic.len(), "lt")?;
    let segments = dto.lane_segments.as_ref().map(decode_segments).transpose()?;
    Ok(Decoded { lanes, traffic, topo: TopologyGraph { ll, lt }, segments })
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn scene_to_json(scene: &Scene, segments: Option<&SegmentSet>) -> String {
    to_json(&SceneDto {
        version: FORMAT_VERSION,
        n_points: scene.n_points,
        lanes: scene.lanes.iter().map(coords).collect(),
        lane_scores: None,
        traffic: scene.traffic.iter().map(traffic_dto).collect(),
        topo: TopoDto { ll: rows(&scene.topo.ll), lt: rows(&scene.topo.lt) },
        lane_segments: segments.map(segments_dto),
    })
}

/// Parses a scene file. Structural problems (bad polylines, ragged
/// matrices) are errors; scene rules are left to
/// [`crate::scene::validate_scene`].
pub fn scene_from_json(json: &str) -> Result<(Scene, Option<SegmentSet>)> {
    let dto = parse_dto(json)?;
    let d = decode(&dto)?;
    Ok((Scene { lanes: d.lanes, traffic: d.traffic, topo: d.topo, n_points: dto.n_points }, d.segments))
}

pub fn prediction_to_json(pred: &Prediction, n_points: usize, segments: Option<&SegmentSet>) -> String {
    to_json(&SceneDto {
        version: FORMAT_VERSION,
        n_points,
        lanes: pred.lanes.iter().map(coords).collect(),
        lane_scores: Some(pred.lane_scores.iter().copied().map(round_sig).collect()),
        traffic: pred.traffic.iter().map(traffic_dto).collect(),
        topo: TopoDto { ll: rows(&pred.topo.ll), lt: rows(&pred.topo.lt) },
        lane_segments: segments.map(segments_dto),
    })
}

pub fn prediction_from_json(json: &str) -> Result<(Prediction, Option<SegmentSet>)> {
    let dto = parse_dto(json)?;
    let d = decode(&dto)?;
    let lane_scores = dto.lane_scores.ok_or_else(|| Error::Parse("prediction needs lane_scores".into()))?;
    let pred = Prediction { lanes: d.lanes, lane_scores, traffic: d.traffic, topo: d.topo };
    pred.validate()?;
    Ok((pred, d.segments))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ConnectedDto {
    source: Option<[usize; 2]>,
    curve: Coords,
}

pub fn connected_to_json(connected: &[ConnectedLane]) -> String {
    let v: Vec<ConnectedDto> = connected
        .iter()
        .map(|c| ConnectedDto { source: c.source.map(|(i, j)| [i, j]), curve: coords(&c.curve) })
        .collect();
    to_json(&v)
}

pub fn connected_from_json(json: &str) -> Result<Vec<ConnectedLane>> {
    let v: Vec<ConnectedDto> = serde_json::from_str(json).map_err(|e| Error::Parse(e.to_string()))?;
    v.iter()
        .enumerate()
        .map(|(k, d)| {
            Ok(ConnectedLane { curve: polyline(&d.curve, &format!("connected lane {k}"))?, source: d.source.map(|[i, j]| (i, j)) })
        })
        .collect()
}

/// A report with every value rounded like the other file formats.
pub fn rounded_report(r: &MetricReport) -> MetricReport {
    MetricReport {
        det_l: round_sig(r.det_l),
        det_t: round_sig(r.det_t),
        top_ll: round_sig(r.top_ll),
        top_lt: round_sig(r.top_lt),
        ols: round_sig(r.ols),
        lane_segment: r.lane_segment.map(|s| SegmentReport {
            map: round_sig(s.map),
            ap_ls: round_sig(s.ap_ls),
            ap_ped: round_sig(s.ap_ped),
            top_lsls: round_sig(s.top_lsls),
        }),
    }
}

pub fn report_to_json(r: &MetricReport) -> String {
    to_json(&rounded_report(r))
}

pub fn report_from_json(json: &str) -> Result<MetricReport> {
    serde_json::from_str(json).map_err(|e| Error::Parse(e.to_string()))
}
