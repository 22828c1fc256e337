//! Small gradient-descent fit of the mask MLP, masked cross-attention and
//! lane-lane head against a scene's ground-truth lane graph.

use crate::attention::{sigmoid_mask_backward, sigmoid_mask_cached, MaskedCrossAttention, QuerySet};
use crate::connected::{build_connected_gt, correlation_distances};
use crate::error::{Error, Result};
use crate::features::polyline_features;
use crate::nn::{seeded_rng, sgd_step, MlpParams, ParamTensors};
use crate::scene::{Polyline3D, Scene};
use crate::tensor::Matrix;
use crate::topology_head::{match_connected, LaneLaneHead};
use crate::training::{focal_loss, focal_loss_grad, GroupConfig, LossWeights, FOCAL_ALPHA, FOCAL_GAMMA};
use rand::Rng;

pub const MAX_FIT_LANES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Feature width.
    pub c: usize,
    pub mask_hidden: usize,
    pub groups: usize,
    /// Std-dev of the per-group feature noise.
    pub feature_noise: f64,
    pub weights: LossWeights,
    /// Fault-injection hook: poisons the loss at this step.
    pub inject_nan_at: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 0.05,
            seed: 0,
            c: 16,
            mask_hidden: 8,
            groups: GroupConfig::default().k,
            feature_noise: 0.05,
            weights: LossWeights::default(),
            inject_nan_at: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitStep {
    pub step: usize,
    /// Mean focal loss over off-diagonal lane pairs, averaged over groups.
    pub focal: f64,
    /// `λ_ll · focal`, the minimised objective.
    pub weighted: f64,
}

/// `steps + 1` entries; entry `k` is evaluated after `k` updates.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTrajectory {
    pub steps: Vec<FitStep>,
}

impl FitTrajectory {
    pub fn final_focal(&self) -> f64 {
        self.steps.last().map_or(f64::NAN, |s| s.focal)
    }

    /// Trailing moving average of the focal loss.
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        let v: Vec<f64> = self.steps.iter().map(|s| s.focal).collect();
        if v.len() < w {
            return Vec::new();
        }
        v.windows(w).map(|x| x.iter().sum::<f64>() / w as f64).collect()
    }

    pub fn is_smoothed_monotone(&self, window: usize) -> bool {
        self.smoothed(window).windows(2).all(|p| p[1] <= p[0])
    }
}

struct Model {
    mask: MlpParams,
    xattn: MaskedCrossAttention,
    head: LaneLaneHead,
}

struct Grads {
    mask: MlpParams,
    xattn: MaskedCrossAttention,
    head: LaneLaneHead,
}

fn accumulate<P: ParamTensors>(acc: &mut P, g: &P) {
    for ((_, a), (_, b)) in acc.tensors_mut().into_iter().zip(g.tensors()) {
        a.add_assign(b);
    }
}

struct Problem {
    groups: Vec<Matrix>,
    qc: Matrix,
    d: Matrix,
    pairs: Vec<crate::topology_head::MatchPair>,
    targets: Matrix,
}

impl Problem {
    fn build(scene: &Scene, cfg: &FitConfig) -> Result<Self> {
        let n = scene.lanes.len();
        let lanes: Vec<&Polyline3D> = scene.lanes.iter().collect();
        let q = polyline_features(&lanes, cfg.c, cfg.seed)?;
        let connected = build_connected_gt(scene)?;
        let curves: Vec<&Polyline3D> = connected.iter().map(|c| &c.curve).collect();
        let qc = if curves.is_empty() {
            Matrix::zeros(0, cfg.c)
        } else {
            polyline_features(&curves, cfg.c, cfg.seed)?
        };
        let d = correlation_distances(&scene.lanes, &connected)?;
        let d = Matrix::from_vec(d.rows(), d.cols(), d.values().to_vec())?;
        let pairs = match_connected(&scene.lanes, &connected)?;
        let groups = GroupConfig::new(cfg.groups)?
            .replicate(&QuerySet::new(q)?, cfg.feature_noise, cfg.seed ^ 0x5eed)
            .into_iter()
            .map(QuerySet::into_matrix)
            .collect();
        let mut targets = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                targets.set(i, j, scene.topo.ll.get(i, j));
            }
        }
        Ok(Self { groups, qc, d, pairs, targets })
    }
}

/// Loss of one group and, when `grads` is given, its gradient scaled by
/// `scale`.
fn group_pass(model: &Model, p: &Problem, q: &Matrix, scale: f64, grads: Option<&mut Grads>) -> Result<f64> {
    let n = q.rows();
    let tam = if p.qc.rows() > 0 {
        let (s, mcache) = sigmoid_mask_cached(&p.d, &model.mask)?;
        let (q_hat, ccache) = model.xattn.forward_cached(q, &p.qc, &s)?;
        Some((q_hat, mcache, ccache))
    } else {
        None
    };
    let q_hat = tam.as_ref().map_or(q, |t| &t.0);
    let (scores, hcache) = model.head.forward_cached(q_hat, &p.qc, &p.pairs)?;

    let count = (n * (n - 1)) as f64;
    let mut loss = 0.0;
    let mut dscores = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let t = p.targets.get(i, j) >= 0.5;
            let s = scores.get(i, j);
            loss += focal_loss(s, t, FOCAL_ALPHA, FOCAL_GAMMA) / count;
            dscores.set(i, j, scale * focal_loss_grad(s, t, FOCAL_ALPHA, FOCAL_GAMMA) / count);
        }
    }

    if let Some(g) = grads {
        let (hg, dq_hat, _) = model.head.backward(&hcache, &dscores, p.qc.rows());
        accumulate(&mut g.head, &hg);
        if let Some((_, mcache, ccache)) = &tam {
            let xg = model.xattn.backward(ccache, &dq_hat);
            accumulate(&mut g.xattn, &xg.params);
            sigmoid_mask_backward(&model.mask, mcache, &xg.ds, &mut g.mask);
        }
    }
    Ok(loss)
}

/// Runs `cfg.steps` plain gradient-descent updates on `λ_ll · L_ll`, where
/// `L_ll` is the focal loss over off-diagonal lane pairs averaged over the
/// replicated query groups.
pub fn toy_fit(scene: &Scene, cfg: &FitConfig) -> Result<FitTrajectory> {
    let n = scene.lanes.len();
    if !(2..=MAX_FIT_LANES).contains(&n) {
        return Err(Error::InvalidParams(format!("toy fit needs 2..={MAX_FIT_LANES} lanes, got {n}")));
    }
    if !cfg.lr.is_finite() || cfg.lr < 0.0 {
        return Err(Error::InvalidParams("learning rate must be finite and non-negative".into()));
    }
    cfg.weights.validate()?;
    let problem = Problem::build(scene, cfg)?;

    let mut rng = seeded_rng(cfg.seed);
    let mut model = Model {
        mask: MlpParams::seeded(&[1, cfg.mask_hidden, 1], rng.random())?,
        xattn: MaskedCrossAttention::seeded(cfg.c, rng.random()),
        head: LaneLaneHead::seeded(cfg.c, rng.random()),
    };
    let k = problem.groups.len() as f64;
    let scale = cfg.weights.ll / k;

    let mut trajectory = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        let mut grads = Grads {
            mask: model.mask.zeros_like(),
            xattn: model.xattn.zeros_like(),
            head: model.head.zeros_like(),
        };
        let last = step == cfg.steps;
        let mut focal = 0.0;
        for q in &problem.groups {
            focal += group_pass(&model, &problem, q, scale, (!last).then_some(&mut grads))? / k;
        }
        if cfg.inject_nan_at == Some(step) {
            focal = f64::NAN;
        }
        if !focal.is_finite() {
            return Err(Error::Diverged { step });
        }
        trajectory.push(FitStep { step, focal, weighted: cfg.weights.ll * focal });
        if !last {
            sgd_step(&mut model.mask, &grads.mask, cfg.lr);
            sgd_step(&mut model.xattn, &grads.xattn, cfg.lr);
            sgd_step(&mut model.head, &grads.head, cfg.lr);
            let finite = |t: Vec<(String, &Matrix)>| t.iter().all(|(_, m)| m.is_finite());
            if !(finite(model.mask.tensors()) && finite(model.xattn.tensors()) && finite(model.head.tensors())) {
                return Err(Error::Diverged { step: step + 1 });
            }
        }
    }
    Ok(FitTrajectory { steps: trajectory })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{TopoMatrix, TopologyGraph};

    fn chain() -> Scene {
        let a = Polyline3D::from_xyz(&[[0.0, 0.0, 0.0], [5.0, 0.0, 0.0], [10.0, 0.0, 0.0]]).unwrap();
        let b = Polyline3D::from_xyz(&[[10.0, 0.0, 0.0], [15.0, 0.0, 0.0], [20.0, 0.0, 0.0]]).unwrap();
        let mut ll = TopoMatrix::zeros(2, 2);
        ll.set(0, 1, 1.0);
        Scene { lanes: vec![a, b], traffic: vec![], topo: TopologyGraph { ll, lt: TopoMatrix::zeros(2, 0) }, n_points: 3 }
    }

    #[test]
    fn zero_lr_is_constant() {
        let cfg = FitConfig { steps: 5, lr: 0.0, ..Default::default() };
        let t = toy_fit(&chain(), &cfg).unwrap();
        assert_eq!(t.steps.len(), 6);
        assert!(t.steps.iter().all(|s| s.focal == t.steps[0].focal));
    }

    #[test]
    fn loss_decreases() {
        let cfg = FitConfig { steps: 50, ..Default::default() };
        let t = toy_fit(&chain(), &cfg).unwrap();
        assert!(t.final_focal() < t.steps[0].focal);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut s = chain();
        s.lanes.truncate(1);
        assert!(toy_fit(&s, &FitConfig::default()).is_err());
        let cfg = FitConfig { lr: f64::NAN, ..Default::default() };
        assert!(toy_fit(&chain(), &cfg).is_err());
    }

    #[test]
    fn nan_loss_is_divergence() {
        let cfg = FitConfig { steps: 10, inject_nan_at: Some(3), ..Default::default() };
        assert!(matches!(toy_fit(&chain(), &cfg), Err(Error::Diverged { step: 3 })));
    }

    #[test]
    fn saturating_lr_stays_finite() {
        let cfg = FitConfig { steps: 10, lr: 1e300, groups: 1, ..Default::default() };
        assert!(toy_fit(&chain(), &cfg).unwrap().final_focal().is_finite());
    }
}
