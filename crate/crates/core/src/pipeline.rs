//! One decoder pass from scene geometry to a scored [`Prediction`].
//!
//! Image features and multi-view fusion are not modelled: query features
//! are deterministic encodings of the input geometry (see
//! [`crate::features`]).

use rand::Rng;

use crate::attention::{sigmoid_mask, MaskedCrossAttention, ModelDims, SelfAttention};
use crate::connected::{build_connected_gt, correlation_distances, ConnectedLane};
use crate::error::{Error, Result};
use crate::features::{endpoint_embedding, polyline_features, traffic_features};
use crate::metrics::Prediction;
use crate::nn::{prefixed, prefixed_mut, seeded_rng, MlpParams, ParamTensors};
use crate::scene::{Polyline3D, Scene, TopoMatrix, TopologyGraph, TrafficElement};
use crate::synth::{jitter_polyline, perturb, NoiseParams};
use crate::tensor::Matrix;
use crate::topology_head::{match_connected, predict_lt, LaneLaneHead, LaneTrafficHead};

/// Emitted topology scores are kept strictly inside (0, 1).
const SCORE_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum GeometrySource {
    GroundTruth,
    Perturbed(NoiseParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub dims: ModelDims,
    pub n_lane_queries: usize,
    pub n_traffic_queries: usize,
    pub param_seed: u64,
    pub feature_seed: u64,
    pub geometry: GeometrySource,
    /// `false` replaces the masked cross-attention by the identity.
    pub tam: bool,
    /// Binarise topology scores at this value.
    pub topology_threshold: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dims: ModelDims { c: 32, n_heads: 4 },
            n_lane_queries: 64,
            n_traffic_queries: 32,
            param_seed: 0,
            feature_seed: 0,
            geometry: GeometrySource::GroundTruth,
            tam: true,
            topology_threshold: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        ModelDims::new(self.dims.c, self.dims.n_heads)?;
        if self.n_lane_queries == 0 || self.n_traffic_queries == 0 {
            return Err(Error::InvalidParams("query counts must be >= 1".into()));
        }
        if let Some(t) = self.topology_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidParams("topology threshold must lie in [0, 1]".into()));
            }
        }
        if let GeometrySource::Perturbed(n) = &self.geometry {
            n.validate()?;
        }
        Ok(())
    }
}

/// All parameters of the decoder pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyModel {
    pub self_attention: SelfAttention,
    pub mask: MlpParams,
    pub cross_attention: MaskedCrossAttention,
    pub ll_head: LaneLaneHead,
    pub lt_head: LaneTrafficHead,
}

impl TopologyModel {
    pub fn seeded(dims: ModelDims, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let c = dims.c;
        Self {
            self_attention: SelfAttention::seeded(dims, rng.random()),
            mask: MlpParams::seeded(&[1, 16, 1], rng.random()).expect("fixed widths"),
            cross_attention: MaskedCrossAttention::seeded(c, rng.random()),
            ll_head: LaneLaneHead::seeded(c, rng.random()),
            lt_head: LaneTrafficHead::seeded(c, rng.random()),
        }
    }
}

impl ParamTensors for TopologyModel {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut v = prefixed("self_attention", self.self_attention.tensors());
        v.extend(prefixed("mask", self.mask.tensors()));
        v.extend(prefixed("cross_attention", self.cross_attention.tensors()));
        v.extend(prefixed("ll_head", self.ll_head.tensors()));
        v.extend(prefixed("lt_head", self.lt_head.tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut v = prefixed_mut("self_attention", self.self_attention.tensors_mut());
        v.extend(prefixed_mut("mask", self.mask.tensors_mut()));
        v.extend(prefixed_mut("cross_attention", self.cross_attention.tensors_mut()));
        v.extend(prefixed_mut("ll_head", self.ll_head.tensors_mut()));
        v.extend(prefixed_mut("lt_head", self.lt_head.tensors_mut()));
        v
    }
}

fn encode(lines: &[&Polyline3D], c: usize, seed: u64) -> Result<(Matrix, Matrix)> {
    Ok((polyline_features(lines, c, seed)?, endpoint_embedding(lines, c, seed.wrapping_add(1))?))
}

fn finish(scores: TopoMatrix, threshold: Option<f64>, keep_diagonal_zero: bool) -> TopoMatrix {
    let mut out = scores.map(|s| match threshold {
        Some(t) => f64::from(s >= t),
        None => s.clamp(SCORE_MARGIN, 1.0 - SCORE_MARGIN),
    });
    if keep_diagonal_zero {
        for i in 0..out.rows().min(out.cols()) {
            out.set(i, i, 0.0);
        }
    }
    out
}

/// Runs the decoder pass with freshly seeded parameters.
pub fn run_pipeline(scene: &Scene, cfg: &PipelineConfig) -> Result<Prediction> {
    run_pipeline_with(scene, cfg, &TopologyModel::seeded(cfg.dims, cfg.param_seed))
}

pub fn run_pipeline_with(scene: &Scene, cfg: &PipelineConfig, model: &TopologyModel) -> Result<Prediction> {
    cfg.validate()?;
    let c = cfg.dims.c;

    let gt_connected = build_connected_gt(scene)?;
    let (mut lanes, mut lane_scores, connected): (Vec<Polyline3D>, Vec<f64>, Vec<ConnectedLane>) = match &cfg.geometry {
        GeometrySource::GroundTruth => (scene.lanes.clone(), vec![1.0; scene.lanes.len()], gt_connected),
        GeometrySource::Perturbed(noise) => {
            let p = perturb(scene, noise)?;
            let mut rng = seeded_rng(noise.seed ^ 0xc0ec);
            let conn = gt_connected
                .iter()
                .map(|cl| ConnectedLane::predicted(jitter_polyline(&cl.curve, noise.point_sigma, &mut rng)))
                .collect();
            (p.lanes, p.lane_scores, conn)
        }
    };
    lanes.truncate(cfg.n_lane_queries);
    lane_scores.truncate(cfg.n_lane_queries);
    let traffic: Vec<TrafficElement> = scene
        .traffic
        .iter()
        .take(cfg.n_traffic_queries)
        .map(|t| TrafficElement { score: Some(1.0), ..*t })
        .collect();
    let (n, m) = (lanes.len(), traffic.len());
    if n == 0 {
        return Ok(Prediction { lanes, lane_scores, traffic, topo: TopologyGraph::empty(0, m) });
    }

    let lane_refs: Vec<&Polyline3D> = lanes.iter().collect();
    let (q, p) = encode(&lane_refs, c, cfg.feature_seed)?;
    let q = model.self_attention.forward_cached(&q, &p)?.0;

    let (qc, pairs, q_hat) = if connected.is_empty() {
        (Matrix::zeros(0, c), Vec::new(), q)
    } else {
        let conn_refs: Vec<&Polyline3D> = connected.iter().map(|cl| &cl.curve).collect();
        let (qc, pc) = encode(&conn_refs, c, cfg.feature_seed)?;
        let qc = model.self_attention.forward_cached(&qc, &pc)?.0;
        let q_hat = if cfg.tam {
            let d = correlation_distances(&lanes, &connected)?;
            let s = sigmoid_mask(&d, &model.mask)?;
            model.cross_attention.forward_cached(&q, &qc, s.as_matrix())?.0
        } else {
            q
        };
        (qc, match_connected(&lanes, &connected)?, q_hat)
    };

    let ll = crate::topology_head::predict_ll(&q_hat, &qc, &pairs, &model.ll_head)?;
    let lt = if m == 0 {
        TopoMatrix::zeros(n, 0)
    } else {
        let qt = traffic_features(&traffic, c, cfg.feature_seed.wrapping_add(2))?;
        predict_lt(&q_hat, &qt, &model.lt_head)?
    };
    Ok(Prediction {
        lanes,
        lane_scores,
        traffic,
        topo: TopologyGraph {
            ll: finish(ll, cfg.topology_threshold, true),
            lt: finish(lt, cfg.topology_threshold, false),
        },
    })
}
