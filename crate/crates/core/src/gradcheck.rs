//! Central-difference verification of the analytic backward passes.
//!
//! Every checked operation uses the scalar loss `Σ out²` so the upstream
//! gradient is `2·out`.

use rand::Rng;

use crate::attention::{sigmoid_mask_backward, sigmoid_mask_cached, MaskedCrossAttention, ModelDims, SelfAttention};
use crate::nn::{seeded_rng, MlpParams, ParamTensors};
use crate::tensor::Matrix;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Gradients smaller than this (times `max(1, |loss|)`) are compared in
/// absolute rather than relative terms. Central differences carry a
/// rounding error of roughly `eps·|loss|/h`, so the floor follows the loss
/// scale.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// An operation instance with inputs and parameters that can be perturbed
/// one scalar at a time.
pub trait GradCheckable {
    fn op_name(&self) -> &'static str;
    fn loss(&self) -> f64;
    /// Analytic gradient per slot, aligned with [`GradCheckable::slots_mut`].
    fn analytic(&self) -> Vec<Matrix>;
    fn slots_mut(&mut self) -> Vec<(String, &mut Matrix)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Passed,
    Failed,
    /// Nothing to differentiate (zero parameters and zero inputs).
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub op: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub worst_slot: Option<String>,
    pub status: CheckStatus,
}

pub fn relative_error(analytic: f64, numeric: f64, loss_scale: f64) -> f64 {
    let floor = RELATIVE_FLOOR * loss_scale.abs().max(1.0);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares analytic gradients with central differences of step `h` over
/// every parameter and input entry.
pub fn grad_check(op: &mut dyn GradCheckable, h: f64, tolerance: f64) -> GradCheckReport {
    let analytic = op.analytic();
    let loss_scale = op.loss();
    let name = op.op_name().to_string();
    let mut max_err: f64 = 0.0;
    let mut worst = None;
    let mut entries = 0;
    let n_slots = op.slots_mut().len();
    for s in 0..n_slots {
        let len = op.slots_mut()[s].1.len();
        for k in 0..len {
            let orig = op.slots_mut()[s].1.data()[k];
            op.slots_mut()[s].1.data_mut()[k] = orig + h;
            let plus = op.loss();
            op.slots_mut()[s].1.data_mut()[k] = orig - h;
            let minus = op.loss();
            op.slots_mut()[s].1.data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic[s].data()[k], numeric, loss_scale);
            if err > max_err || err.is_nan() {
                max_err = if err.is_nan() { f64::INFINITY } else { err };
                worst = Some(format!("{}[{k}]", op.slots_mut()[s].0));
            }
            entries += 1;
        }
    }
    let status = if entries == 0 {
        CheckStatus::Skipped
    } else if max_err < tolerance {
        CheckStatus::Passed
    } else {
        CheckStatus::Failed
    };
    GradCheckReport { op: name, entries, max_rel_error: max_err, worst_slot: worst, status }
}

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Hidden pre-activations closer than this to the ReLU kink are redrawn;
/// the derivative does not exist there.
const KINK_MARGIN: f64 = 1e-3;

fn clear_of_kinks(mlp: &MlpParams, x: &Matrix) -> bool {
    let mut h = x.clone();
    for layer in &mlp.layers[..mlp.layers.len().saturating_sub(1)] {
        let pre = layer.forward(&h);
        if pre.data().iter().any(|v| v.abs() < KINK_MARGIN) {
            return false;
        }
        h = pre.map(|v| v.max(0.0));
    }
    true
}

fn grads_in_order<P: ParamTensors>(g: &P) -> Vec<Matrix> {
    g.tensors().into_iter().map(|(_, m)| m.clone()).collect()
}

/// `mlp_forward` on an input batch.
pub struct MlpInstance {
    pub mlp: MlpParams,
    pub x: Matrix,
}

impl MlpInstance {
    pub fn seeded(seed: u64) -> Self {
        let mut rng = seeded_rng(seed ^ 0x6d6c70);
        let (n, c_in, hidden, c_out) = (rng.random_range(1..5), rng.random_range(1..6), rng.random_range(2..7), rng.random_range(1..5));
        let mlp = MlpParams::seeded(&[c_in, hidden, c_out], seed).unwrap();
        let mut x = random_matrix(&mut rng, n, c_in, -2.0, 2.0);
        while !clear_of_kinks(&mlp, &x) {
            x = random_matrix(&mut rng, n, c_in, -2.0, 2.0);
        }
        Self { mlp, x }
    }
}

impl GradCheckable for MlpInstance {
    fn op_name(&self) -> &'static str {
        "mlp_forward"
    }

    fn loss(&self) -> f64 {
        self.mlp.forward(&self.x).map_or(f64::NAN, |y| y.sum_squares())
    }

    fn analytic(&self) -> Vec<Matrix> {
        let (y, cache) = self.mlp.forward_cached(&self.x).unwrap();
        let mut g = self.mlp.zeros_like();
        let dx = self.mlp.backward(&cache, &y.scale(2.0), &mut g);
        let mut out = grads_in_order(&g);
        out.push(dx);
        out
    }

    fn slots_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut v = self.mlp.tensors_mut();
        v.push(("x".into(), &mut self.x));
        v
    }
}

/// `sigmoid_mask` over a correlation-distance matrix.
pub struct SigmoidMaskInstance {
    pub mlp: MlpParams,
    pub d: Matrix,
}

impl SigmoidMaskInstance {
    pub fn seeded(seed: u64) -> Self {
        let mut rng = seeded_rng(seed ^ 0x6d61736b);
        let (rows, cols, hidden) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(2..6));
        let mlp = MlpParams::seeded(&[1, hidden, 1], seed).unwrap();
        let mut d = random_matrix(&mut rng, rows, cols, 0.0, 4.0);
        while !clear_of_kinks(&mlp, &Matrix::from_vec(rows * cols, 1, d.data().to_vec()).unwrap()) {
            d = random_matrix(&mut rng, rows, cols, 0.0, 4.0);
        }
        Self { mlp, d }
    }
}

impl GradCheckable for SigmoidMaskInstance {
    fn op_name(&self) -> &'static str {
        "sigmoid_mask"
    }

    fn loss(&self) -> f64 {
        sigmoid_mask_cached(&self.d, &self.mlp).map_or(f64::NAN, |(s, _)| s.sum_squares())
    }

    fn analytic(&self) -> Vec<Matrix> {
        let (s, cache) = sigmoid_mask_cached(&self.d, &self.mlp).unwrap();
        let mut g = self.mlp.zeros_like();
        let dd = sigmoid_mask_backward(&self.mlp, &cache, &s.scale(2.0), &mut g);
        let mut out = grads_in_order(&g);
        out.push(dd);
        out
    }

    fn slots_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut v = self.mlp.tensors_mut();
        v.push(("d".into(), &mut self.d));
        v
    }
}

/// Intra-group self-attention with positional embedding.
pub struct SelfAttentionInstance {
    pub layer: SelfAttention,
    pub q: Matrix,
    pub p: Matrix,
}

impl SelfAttentionInstance {
    pub fn seeded(seed: u64) -> Self {
        let mut rng = seeded_rng(seed ^ 0x73656c66);
        let n_heads = rng.random_range(1..3);
        // a two-channel LayerNorm is constant up to sign, so keep c >= 3
        let c = n_heads * rng.random_range(3..5);
        let n = rng.random_range(1..5);
        let mut layer = SelfAttention::seeded(ModelDims::new(c, n_heads).unwrap(), seed);
        // move the affine LayerNorm off its identity init so its gradients are exercised
        layer.ln.gain = random_matrix(&mut rng, 1, c, 0.5, 1.5);
        layer.ln.bias = random_matrix(&mut rng, 1, c, -0.5, 0.5);
        let q = random_matrix(&mut rng, n, c, -1.0, 1.0);
        let p = random_matrix(&mut rng, n, c, -1.0, 1.0);
        Self { layer, q, p }
    }
}

impl GradCheckable for SelfAttentionInstance {
    fn op_name(&self) -> &'static str {
        "self_attention"
    }

    fn loss(&self) -> f64 {
        self.layer.forward_cached(&self.q, &self.p).map_or(f64::NAN, |(y, _)| y.sum_squares())
    }

    fn analytic(&self) -> Vec<Matrix> {
        let (y, cache) = self.layer.forward_cached(&self.q, &self.p).unwrap();
        let g = self.layer.backward(&cache, &y.scale(2.0));
        let mut out = grads_in_order(&g.params);
        out.push(g.dq);
        out.push(g.dp);
        out
    }

    fn slots_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut v = self.layer.tensors_mut();
        v.push(("q".into(), &mut self.q));
        v.push(("p".into(), &mut self.p));
        v
    }
}

/// Topology-aware masked cross-attention.
pub struct CrossAttentionInstance {
    pub layer: MaskedCrossAttention,
    pub q: Matrix,
    pub qc: Matrix,
    pub s: Matrix,
}

impl CrossAttentionInstance {
    pub fn seeded(seed: u64) -> Self {
        let mut rng = seeded_rng(seed ^ 0x63726f73);
        let c = rng.random_range(3..7);
        let (n, m) = (rng.random_range(1..5), rng.random_range(1..5));
        Self::with_shape(seed, n, m, c, &mut rng)
    }

    /// Fixed-shape instance (e.g. 3 lanes × 2 connections).
    pub fn seeded_shape(seed: u64, n: usize, m: usize, c: usize) -> Self {
        let mut rng = seeded_rng(seed ^ 0x63726f73);
        Self::with_shape(seed, n, m, c, &mut rng)
    }

    fn with_shape(seed: u64, n: usize, m: usize, c: usize, rng: &mut impl Rng) -> Self {
        let mut layer = MaskedCrossAttention::seeded(c, seed);
        layer.ln.gain = random_matrix(rng, 1, c, 0.5, 1.5);
        layer.ln.bias = random_matrix(rng, 1, c, -0.5, 0.5);
        let q = random_matrix(rng, n, c, -1.0, 1.0);
        let qc = random_matrix(rng, m, c, -1.0, 1.0);
        let s = random_matrix(rng, n, m, 0.05, 1.0);
        Self { layer, q, qc, s }
    }
}

impl GradCheckable for CrossAttentionInstance {
    fn op_name(&self) -> &'static str {
        "masked_cross_attention"
    }

    fn loss(&self) -> f64 {
        self.layer.forward_cached(&self.q, &self.qc, &self.s).map_or(f64::NAN, |(y, _)| y.sum_squares())
    }

    fn analytic(&self) -> Vec<Matrix> {
        let (y, cache) = self.layer.forward_cached(&self.q, &self.qc, &self.s).unwrap();
        let g = self.layer.backward(&cache, &y.scale(2.0));
        let mut out = grads_in_order(&g.params);
        out.extend([g.dq, g.dqc, g.ds]);
        out
    }

    fn slots_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut v = self.layer.tensors_mut();
        v.push(("q".into(), &mut self.q));
        v.push(("qc".into(), &mut self.qc));
        v.push(("s".into(), &mut self.s));
        v
    }
}

/// Parameter-free identity map on an empty batch; nothing to check.
pub struct DegenerateInstance {
    x: Matrix,
}

impl Default for DegenerateInstance {
    fn default() -> Self {
        Self { x: Matrix::zeros(0, 0) }
    }
}

impl GradCheckable for DegenerateInstance {
    fn op_name(&self) -> &'static str {
        "identity[empty]"
    }

    fn loss(&self) -> f64 {
        self.x.sum_squares()
    }

    fn analytic(&self) -> Vec<Matrix> {
        vec![self.x.scale(2.0)]
    }

    fn slots_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        vec![("x".into(), &mut self.x)]
    }
}

/// Wraps an instance and perturbs its analytic gradient; used to confirm
/// that the checker actually rejects wrong gradients.
pub struct FaultInjected<G>(pub G);

impl<G: GradCheckable> GradCheckable for FaultInjected<G> {
    fn op_name(&self) -> &'static str {
        self.0.op_name()
    }

    fn loss(&self) -> f64 {
        self.0.loss()
    }

    fn analytic(&self) -> Vec<Matrix> {
        let mut g = self.0.analytic();
        if let Some(m) = g.iter_mut().find(|m| !m.is_empty()) {
            let v = m.data()[0];
            m.data_mut()[0] = v + 0.1 * v.abs().max(1.0);
        }
        g
    }

    fn slots_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        self.0.slots_mut()
    }
}

/// The four differentiable operations checked by the gradient suite.
pub const CHECKED_OPS: [&str; 4] = ["mlp_forward", "sigmoid_mask", "self_attention", "masked_cross_attention"];

pub fn seeded_instance(op: &str, seed: u64) -> Option<Box<dyn GradCheckable>> {
    Some(match op {
        "mlp_forward" => Box::new(MlpInstance::seeded(seed)),
        "sigmoid_mask" => Box::new(SigmoidMaskInstance::seeded(seed)),
        "self_attention" => Box::new(SelfAttentionInstance::seeded(seed)),
        "masked_cross_attention" => Box::new(CrossAttentionInstance::seeded(seed)),
        _ => return None,
    })
}

/// Aggregate over many instances of one op.
#[derive(Debug, Clone, PartialEq)]
pub struct OpSummary {
    pub op: String,
    pub instances: usize,
    pub entries: usize,
    pub max_rel_error: f64,
    pub status: CheckStatus,
}

/// Runs `instances` seeded checks per op, seeds `base_seed..base_seed+instances`.
pub fn run_suite(base_seed: u64, instances: usize, h: f64, tolerance: f64, inject_fault: bool) -> Vec<OpSummary> {
    let mut out = Vec::new();
    for op in CHECKED_OPS {
        let mut summary = OpSummary {
            op: op.to_string(),
            instances,
            entries: 0,
            max_rel_error: 0.0,
            status: CheckStatus::Passed,
        };
        for k in 0..instances as u64 {
            let inst = seeded_instance(op, base_seed + k).unwrap();
            let report = if inject_fault {
                grad_check(&mut FaultInjected(inst), h, tolerance)
            } else {
                let mut inst = inst;
                grad_check(inst.as_mut(), h, tolerance)
            };
            summary.entries += report.entries;
            summary.max_rel_error = summary.max_rel_error.max(report.max_rel_error);
            if report.status == CheckStatus::Failed {
                summary.status = CheckStatus::Failed;
            }
        }
        if summary.entries == 0 {
            summary.status = CheckStatus::Skipped;
        }
        out.push(summary);
    }
    let degenerate = grad_check(&mut DegenerateInstance::default(), h, tolerance);
    out.push(OpSummary {
        op: degenerate.op,
        instances: 1,
        entries: 0,
        max_rel_error: 0.0,
        status: degenerate.status,
    });
    out
}

impl<G: GradCheckable + ?Sized> GradCheckable for Box<G> {
    fn op_name(&self) -> &'static str {
        (**self).op_name()
    }

    fn loss(&self) -> f64 {
        (**self).loss()
    }

    fn analytic(&self) -> Vec<Matrix> {
        (**self).analytic()
    }

    fn slots_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        (**self).slots_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;

    #[test]
    fn each_op_passes_on_one_seed() {
        for op in CHECKED_OPS {
            let mut inst = seeded_instance(op, 1).unwrap();
            let r = grad_check(inst.as_mut(), DEFAULT_STEP, DEFAULT_TOLERANCE);
            assert_eq!(r.status, CheckStatus::Passed, "{r:?}");
        }
    }

    #[test]
    fn cross_attention_three_by_two() {
        let mut inst = CrossAttentionInstance::seeded_shape(3, 3, 2, 4);
        let r = grad_check(&mut inst, DEFAULT_STEP, DEFAULT_TOLERANCE);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn zero_weight_mlp_bias_gradients() {
        let mut inst = MlpInstance {
            mlp: MlpParams::from_layers(vec![Linear::zeros(2, 3)]).unwrap(),
            x: Matrix::filled(4, 2, 1.0),
        };
        inst.mlp.layers[0].bias = Matrix::from_vec(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        // upstream is 2*y = 2*bias per row; 4 rows
        let g = inst.analytic();
        assert_eq!(g[1].row(0), &[4.0, -8.0, 16.0]);
        assert_eq!(grad_check(&mut inst, DEFAULT_STEP, DEFAULT_TOLERANCE).status, CheckStatus::Passed);
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let mut inst = SigmoidMaskInstance { mlp: MlpParams::identity(1), d: Matrix::zeros(1, 1) };
        // loss = s², ds/dd = s(1-s) = 0.25 at 0, so dL/dd = 2 * 0.5 * 0.25
        let g = inst.analytic();
        assert_eq!(g.last().unwrap().get(0, 0), 0.25);
        assert_eq!(grad_check(&mut inst, DEFAULT_STEP, DEFAULT_TOLERANCE).status, CheckStatus::Passed);
    }

    #[test]
    fn degenerate_is_skipped() {
        let r = grad_check(&mut DegenerateInstance::default(), DEFAULT_STEP, DEFAULT_TOLERANCE);
        assert_eq!(r.status, CheckStatus::Skipped);
        assert_eq!(r.entries, 0);
    }

    #[test]
    fn fault_injection_fails() {
        let mut inst = FaultInjected(MlpInstance::seeded(2));
        assert_eq!(grad_check(&mut inst, DEFAULT_STEP, DEFAULT_TOLERANCE).status, CheckStatus::Failed);
    }
}
