//! Intra-group self-attention and the topology-aware masked cross-attention,
//! with forward caches and analytic backward passes.

use crate::connected::CorrelationMatrix;
use crate::error::{Error, Result};
use crate::nn::{prefixed, prefixed_mut, sigmoid, LayerNorm, LayerNormCache, Linear, MlpCache, MlpParams, ParamTensors};
use crate::tensor::Matrix;

/// Lower clamp applied to mask entries before taking their logarithm.
pub const MASK_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub c: usize,
    pub n_heads: usize,
}

impl ModelDims {
    pub fn new(c: usize, n_heads: usize) -> Result<Self> {
        if c == 0 || n_heads == 0 || !c.is_multiple_of(n_heads) {
            return Err(Error::InvalidParams(format!(
                "feature width {c} must be positive and divisible by head count {n_heads}"
            )));
        }
        Ok(Self { c, n_heads })
    }

    pub fn head_dim(&self) -> usize {
        self.c / self.n_heads
    }
}

/// `N × C` feature rows for one group of queries.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet(Matrix);

impl QuerySet {
    pub fn new(rows: Matrix) -> Result<Self> {
        if !rows.is_finite() {
            return Err(Error::Contract("query features must be finite".into()));
        }
        Ok(Self(rows))
    }

    pub fn empty(c: usize) -> Self {
        Self(Matrix::zeros(0, c))
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn width(&self) -> usize {
        self.0.cols()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// Lane-by-connection mask `S` with entries in `[MASK_EPS, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskMatrix(Matrix);

impl MaskMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.data().iter().any(|v| !(MASK_EPS..=1.0).contains(v)) {
            return Err(Error::Contract(format!("mask entries must lie in [{MASK_EPS}, 1]")));
        }
        Ok(Self(values))
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self(Matrix::filled(rows, cols, 1.0))
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }
}

/// Row-stochastic attention matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights(Matrix);

impl AttentionWeights {
    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }
}

/// Numerically stable row softmax.
pub fn softmax_rows(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Backward of row softmax: `dZ = A ⊙ (dA − rowsum(dA ⊙ A))`.
fn softmax_rows_backward(a: &Matrix, da: &Matrix) -> Matrix {
    let mut dz = Matrix::zeros(a.rows(), a.cols());
    for i in 0..a.rows() {
        let s: f64 = a.row(i).iter().zip(da.row(i)).map(|(p, g)| p * g).sum();
        for (j, o) in dz.row_mut(i).iter_mut().enumerate() {
            *o = a.get(i, j) * (da.get(i, j) - s);
        }
    }
    dz
}

/// Intermediates of [`sigmoid_mask_cached`].
#[derive(Debug, Clone)]
pub struct MaskCache {
    mlp: MlpCache,
    raw: Matrix,
    shape: (usize, usize),
}

/// `S = clamp(sigmoid(MLP(D)), ε, 1)` with a scalar→scalar MLP applied to
/// every entry of `D`.
pub fn sigmoid_mask(d: &CorrelationMatrix, params: &MlpParams) -> Result<MaskMatrix> {
    let dm = Matrix::from_vec(d.rows(), d.cols(), d.values().to_vec())?;
    Ok(MaskMatrix(sigmoid_mask_cached(&dm, params)?.0))
}

pub fn sigmoid_mask_cached(d: &Matrix, params: &MlpParams) -> Result<(Matrix, MaskCache)> {
    if params.in_width() != Some(1) || params.out_width() != Some(1) {
        return Err(Error::ShapeMismatch("mask MLP must map scalars to scalars".into()));
    }
    let column = Matrix::from_vec(d.len(), 1, d.data().to_vec())?;
    let (z, mlp) = params.forward_cached(&column)?;
    let raw = z.map(sigmoid);
    let s = Matrix::from_vec(d.rows(), d.cols(), raw.data().iter().map(|&v| v.clamp(MASK_EPS, 1.0)).collect())?;
    Ok((s, MaskCache { mlp, raw, shape: d.shape() }))
}

/// Returns `dL/dD`; accumulates MLP gradients.
pub fn sigmoid_mask_backward(params: &MlpParams, cache: &MaskCache, ds: &Matrix, grads: &mut MlpParams) -> Matrix {
    let dz = Matrix::from_vec(
        ds.len(),
        1,
        ds.data()
            .iter()
            .zip(cache.raw.data())
            .map(|(&g, &s)| if s < MASK_EPS { 0.0 } else { g * s * (1.0 - s) })
            .collect(),
    )
    .unwrap();
    let dd = params.backward(&cache.mlp, &dz, grads);
    Matrix::from_vec(cache.shape.0, cache.shape.1, dd.data().to_vec()).unwrap()
}

/// `LN(MultiHeadAttn(Q+P, Q+P, Q) + Q)` with an output projection after the
/// concatenated heads.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention {
    pub dims: ModelDims,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct SelfAttentionCache {
    x: Matrix,
    q_in: Matrix,
    qp: Matrix,
    kp: Matrix,
    vp: Matrix,
    heads: Vec<Matrix>,
    concat: Matrix,
    ln: LayerNormCache,
}

/// Gradients of one self-attention call.
#[derive(Debug, Clone)]
pub struct SelfAttentionGrads {
    pub params: SelfAttention,
    pub dq: Matrix,
    pub dp: Matrix,
}

impl SelfAttention {
    pub fn seeded(dims: ModelDims, seed: u64) -> Self {
        let mut rng = crate::nn::seeded_rng(seed);
        let c = dims.c;
        Self {
            dims,
            wq: Linear::init(c, c, &mut rng),
            wk: Linear::init(c, c, &mut rng),
            wv: Linear::init(c, c, &mut rng),
            wo: Linear::init(c, c, &mut rng),
            ln: LayerNorm::new(c),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            dims: self.dims,
            wq: self.wq.zeros_like(),
            wk: self.wk.zeros_like(),
            wv: self.wv.zeros_like(),
            wo: self.wo.zeros_like(),
            ln: self.ln.zeros_like(),
        }
    }

    pub fn forward(&self, q: &QuerySet, p: &QuerySet) -> Result<QuerySet> {
        QuerySet::new(self.forward_cached(q.as_matrix(), p.as_matrix())?.0)
    }

    pub fn forward_cached(&self, q: &Matrix, p: &Matrix) -> Result<(Matrix, SelfAttentionCache)> {
        if q.shape() != p.shape() {
            return Err(Error::ShapeMismatch(format!(
                "queries {:?} and positional embedding {:?} differ",
                q.shape(),
                p.shape()
            )));
        }
        if q.cols() != self.dims.c {
            return Err(Error::ShapeMismatch(format!("expected width {}, got {}", self.dims.c, q.cols())));
        }
        let x = q.add(p);
        let qp = self.wq.forward(&x);
        let kp = self.wk.forward(&x);
        let vp = self.wv.forward(q);
        let dh = self.dims.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.dims.n_heads);
        let mut concat = Matrix::zeros(q.rows(), self.dims.c);
        for h in 0..self.dims.n_heads {
            let (qh, kh, vh) = (qp.col_slice(h * dh, dh), kp.col_slice(h * dh, dh), vp.col_slice(h * dh, dh));
            let a = softmax_rows(&qh.matmul_t(&kh).scale(scale));
            concat.set_col_slice(h * dh, &a.matmul(&vh));
            heads.push(a);
        }
        let r = self.wo.forward(&concat).add(q);
        let (out, ln) = self.ln.forward_cached(&r);
        Ok((out, SelfAttentionCache { x, q_in: q.clone(), qp, kp, vp, heads, concat, ln }))
    }

    /// Per-head attention weights of the last forward pass.
    pub fn head_weights(cache: &SelfAttentionCache) -> Vec<AttentionWeights> {
        cache.heads.iter().cloned().map(AttentionWeights).collect()
    }

    pub fn backward(&self, cache: &SelfAttentionCache, dout: &Matrix) -> SelfAttentionGrads {
        let mut g = self.zeros_like();
        let dr = self.ln.backward(&cache.ln, dout, &mut g.ln);
        let mut dq = dr.clone();
        let dconcat = self.wo.backward(&cache.concat, &dr, &mut g.wo);

        let dh = self.dims.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let n = cache.x.rows();
        let mut dqp = Matrix::zeros(n, self.dims.c);
        let mut dkp = Matrix::zeros(n, self.dims.c);
        let mut dvp = Matrix::zeros(n, self.dims.c);
        for (h, a) in cache.heads.iter().enumerate() {
            let (qh, kh, vh) = (
                cache.qp.col_slice(h * dh, dh),
                cache.kp.col_slice(h * dh, dh),
                cache.vp.col_slice(h * dh, dh),
            );
            let doh = dconcat.col_slice(h * dh, dh);
            let da = doh.matmul_t(&vh);
            dvp.set_col_slice(h * dh, &a.t_matmul(&doh));
            let dz = softmax_rows_backward(a, &da).scale(scale);
            dqp.set_col_slice(h * dh, &dz.matmul(&kh));
            dkp.set_col_slice(h * dh, &dz.t_matmul(&qh));
        }
        let mut dx = self.wq.backward(&cache.x, &dqp, &mut g.wq);
        dx.add_assign(&self.wk.backward(&cache.x, &dkp, &mut g.wk));
        dq.add_assign(&self.wv.backward(&cache.q_in, &dvp, &mut g.wv));
        dq.add_assign(&dx);
        SelfAttentionGrads { params: g, dq, dp: dx }
    }
}

impl ParamTensors for SelfAttention {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut v = prefixed("wq", self.wq.tensors());
        v.extend(prefixed("wk", self.wk.tensors()));
        v.extend(prefixed("wv", self.wv.tensors()));
        v.extend(prefixed("wo", self.wo.tensors()));
        v.extend(prefixed("ln", self.ln.tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut v = prefixed_mut("wq", self.wq.tensors_mut());
        v.extend(prefixed_mut("wk", self.wk.tensors_mut()));
        v.extend(prefixed_mut("wv", self.wv.tensors_mut()));
        v.extend(prefixed_mut("wo", self.wo.tensors_mut()));
        v.extend(prefixed_mut("ln", self.ln.tensors_mut()));
        v
    }
}

/// Single-head cross-attention from lane queries to connection queries,
/// biased by `log S`: `LN(softmax(f_q(Q)·f_k(Qc)ᵀ/√C + log S)·f_v(Qc) + Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedCrossAttention {
    pub fq: Linear,
    pub fk: Linear,
    pub fv: Linear,
    pub ln: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct CrossAttentionCache {
    q: Matrix,
    qc: Matrix,
    s: Matrix,
    qp: Matrix,
    kp: Matrix,
    vp: Matrix,
    weights: Matrix,
    ln: LayerNormCache,
}

#[derive(Debug, Clone)]
pub struct CrossAttentionGrads {
    pub params: MaskedCrossAttention,
    pub dq: Matrix,
    pub dqc: Matrix,
    pub ds: Matrix,
}

impl MaskedCrossAttention {
    pub fn seeded(c: usize, seed: u64) -> Self {
        let mut rng = crate::nn::seeded_rng(seed);
        Self {
            fq: Linear::init(c, c, &mut rng),
            fk: Linear::init(c, c, &mut rng),
            fv: Linear::init(c, c, &mut rng),
            ln: LayerNorm::new(c),
        }
    }

    pub fn width(&self) -> usize {
        self.fq.fan_in()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            fq: self.fq.zeros_like(),
            fk: self.fk.zeros_like(),
            fv: self.fv.zeros_like(),
            ln: self.ln.zeros_like(),
        }
    }

    pub fn forward(&self, q: &QuerySet, qc: &QuerySet, s: &MaskMatrix) -> Result<(QuerySet, AttentionWeights)> {
        let (out, cache) = self.forward_cached(q.as_matrix(), qc.as_matrix(), s.as_matrix())?;
        Ok((QuerySet::new(out)?, AttentionWeights(cache.weights)))
    }

    /// Biased logits `f_q(Q)·f_k(Qc)ᵀ/√C + log S`.
    pub fn logits(&self, q: &Matrix, qc: &Matrix, s: &Matrix) -> Matrix {
        let scale = 1.0 / (self.width() as f64).sqrt();
        let qp = self.fq.forward(q);
        let kp = self.fk.forward(qc);
        qp.matmul_t(&kp).scale(scale).add(&s.map(f64::ln))
    }

    /// `s` is taken as given (no clamping) so finite differences can probe it.
    pub fn forward_cached(&self, q: &Matrix, qc: &Matrix, s: &Matrix) -> Result<(Matrix, CrossAttentionCache)> {
        if qc.rows() == 0 {
            return Err(Error::NoConnectionQueries);
        }
        let c = self.width();
        if q.cols() != c || qc.cols() != c {
            return Err(Error::ShapeMismatch(format!(
                "expected width {c}, got lanes {} and connections {}",
                q.cols(),
                qc.cols()
            )));
        }
        if s.shape() != (q.rows(), qc.rows()) {
            return Err(Error::ShapeMismatch(format!(
                "mask is {:?}, expected ({}, {})",
                s.shape(),
                q.rows(),
                qc.rows()
            )));
        }
        let scale = 1.0 / (c as f64).sqrt();
        let qp = self.fq.forward(q);
        let kp = self.fk.forward(qc);
        let vp = self.fv.forward(qc);
        let z = qp.matmul_t(&kp).scale(scale).add(&s.map(f64::ln));
        let weights = softmax_rows(&z);
        let r = weights.matmul(&vp).add(q);
        let (out, ln) = self.ln.forward_cached(&r);
        Ok((out, CrossAttentionCache { q: q.clone(), qc: qc.clone(), s: s.clone(), qp, kp, vp, weights, ln }))
    }

    pub fn backward(&self, cache: &CrossAttentionCache, dout: &Matrix) -> CrossAttentionGrads {
        let mut g = self.zeros_like();
        let scale = 1.0 / (self.width() as f64).sqrt();
        let dr = self.ln.backward(&cache.ln, dout, &mut g.ln);
        let mut dq = dr.clone();
        let da = dr.matmul_t(&cache.vp);
        let dvp = cache.weights.t_matmul(&dr);
        let dz = softmax_rows_backward(&cache.weights, &da);
        let ds = dz.zip_map(&cache.s, |g, s| g / s);
        let dlogit = dz.scale(scale);
        let dqp = dlogit.matmul(&cache.kp);
        let dkp = dlogit.t_matmul(&cache.qp);
        dq.add_assign(&self.fq.backward(&cache.q, &dqp, &mut g.fq));
        let mut dqc = self.fk.backward(&cache.qc, &dkp, &mut g.fk);
        dqc.add_assign(&self.fv.backward(&cache.qc, &dvp, &mut g.fv));
        CrossAttentionGrads { params: g, dq, dqc, ds }
    }
}

impl ParamTensors for MaskedCrossAttention {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut v = prefixed("fq", self.fq.tensors());
        v.extend(prefixed("fk", self.fk.tensors()));
        v.extend(prefixed("fv", self.fv.tensors()));
        v.extend(prefixed("ln", self.ln.tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut v = prefixed_mut("fq", self.fq.tensors_mut());
        v.extend(prefixed_mut("fk", self.fk.tensors_mut()));
        v.extend(prefixed_mut("fv", self.fv.tensors_mut()));
        v.extend(prefixed_mut("ln", self.ln.tensors_mut()));
        v
    }
}
