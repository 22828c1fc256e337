//! Affine layers, MLPs and layer normalization with hand-written backward
//! passes. Gradient containers reuse the parameter types so that parameter
//! and gradient tensors can be walked in lockstep.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Named access to every trainable tensor, in a fixed order.
pub trait ParamTensors {
    fn tensors(&self) -> Vec<(String, &Matrix)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }
}

pub(crate) fn prefixed<'a>(prefix: &str, items: Vec<(String, &'a Matrix)>) -> Vec<(String, &'a Matrix)> {
    items.into_iter().map(|(n, m)| (format!("{prefix}.{n}"), m)).collect()
}

pub(crate) fn prefixed_mut<'a>(
    prefix: &str,
    items: Vec<(String, &'a mut Matrix)>,
) -> Vec<(String, &'a mut Matrix)> {
    items.into_iter().map(|(n, m)| (format!("{prefix}.{n}"), m)).collect()
}

/// Plain gradient-descent update `p -= lr * g`.
pub fn sgd_step<P: ParamTensors>(params: &mut P, grads: &P, lr: f64) {
    for ((_, p), (_, g)) in params.tensors_mut().into_iter().zip(grads.tensors()) {
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * gv;
        }
    }
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `y = x · W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-bound..=bound)).collect::<Vec<_>>();
        let weight = Matrix::from_vec(fan_in, fan_out, draw(fan_in * fan_out)).unwrap();
        let bias = Matrix::from_vec(1, fan_out, draw(fan_out)).unwrap();
        Self { weight, bias }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weight: Matrix::zeros(fan_in, fan_out), bias: Matrix::zeros(1, fan_out) }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.fan_in(), self.fan_out())
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        x.matmul(&self.weight).add_row(&self.bias)
    }

    /// Accumulates parameter gradients into `grads`; returns `dL/dx`.
    pub fn backward(&self, x: &Matrix, dy: &Matrix, grads: &mut Linear) -> Matrix {
        grads.weight.add_assign(&x.t_matmul(dy));
        grads.bias.add_assign(&dy.col_sums());
        dy.matmul_t(&self.weight)
    }
}

impl ParamTensors for Linear {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        vec![("weight".into(), &mut self.weight), ("bias".into(), &mut self.bias)]
    }
}

/// Stack of affine layers with ReLU between hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Linear>,
    pub seed: u64,
}

/// Intermediates recorded by [`MlpParams::forward_cached`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Matrix>,
    /// Pre-activation output of each layer.
    pre: Vec<Matrix>,
}

impl MlpParams {
    /// Seeded MLP with the given layer widths, e.g. `[c, c, c]` for one
    /// hidden layer of width `c`.
    pub fn seeded(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidParams("an MLP needs at least input and output widths".into()));
        }
        let mut rng = seeded_rng(seed);
        let layers = widths.windows(2).map(|w| Linear::init(w[0], w[1], &mut rng)).collect();
        Ok(Self { layers, seed })
    }

    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        for (k, w) in layers.windows(2).enumerate() {
            if w[0].fan_out() != w[1].fan_in() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {k} outputs {} but layer {} expects {}",
                    w[0].fan_out(),
                    k + 1,
                    w[1].fan_in()
                )));
            }
        }
        Ok(Self { layers, seed: 0 })
    }

    /// Width-preserving single affine layer `x ↦ x`.
    pub fn identity(width: usize) -> Self {
        Self { layers: vec![Linear { weight: Matrix::identity(width), bias: Matrix::zeros(1, width) }], seed: 0 }
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(Linear::zeros_like).collect(), seed: self.seed }
    }

    pub fn in_width(&self) -> Option<usize> {
        self.layers.first().map(Linear::fan_in)
    }

    pub fn out_width(&self) -> Option<usize> {
        self.layers.last().map(Linear::fan_out)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        if let Some(w) = self.in_width() {
            if w != x.cols() {
                return Err(Error::ShapeMismatch(format!("MLP expects width {w}, got {}", x.cols())));
            }
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len().saturating_sub(1);
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            inputs.push(h);
            h = if k < last { z.map(|v| v.max(0.0)) } else { z.clone() };
            pre.push(z);
        }
        Ok((h, MlpCache { inputs, pre }))
    }

    /// Accumulates into `grads`; returns `dL/dx`.
    pub fn backward(&self, cache: &MlpCache, dout: &Matrix, grads: &mut MlpParams) -> Matrix {
        let mut d = dout.clone();
        let last = self.layers.len().saturating_sub(1);
        for k in (0..self.layers.len()).rev() {
            if k < last {
                d = d.zip_map(&cache.pre[k], |g, z| if z > 0.0 { g } else { 0.0 });
            }
            d = self.layers[k].backward(&cache.inputs[k], &d, &mut grads.layers[k]);
        }
        d
    }
}

impl ParamTensors for MlpParams {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(k, l)| prefixed(&format!("layer{k}"), l.tensors()))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(k, l)| prefixed_mut(&format!("layer{k}"), l.tensors_mut()))
            .collect()
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-wise layer normalization with learnable gain and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Matrix,
    pub bias: Matrix,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(width: usize) -> Self {
        Self { gain: Matrix::filled(1, width, 1.0), bias: Matrix::zeros(1, width), eps: LAYER_NORM_EPS }
    }

    pub fn zeros_like(&self) -> Self {
        Self { gain: Matrix::zeros(1, self.gain.cols()), bias: Matrix::zeros(1, self.gain.cols()), eps: self.eps }
    }

    /// Output before the affine step: per-row zero mean, variance
    /// `var / (var + eps)`.
    pub fn normalize(&self, x: &Matrix) -> (Matrix, Vec<f64>) {
        let c = x.cols() as f64;
        let mut out = Matrix::zeros(x.rows(), x.cols());
        let mut inv_std = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / c;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
            let is = 1.0 / (var + self.eps).sqrt();
            for (o, v) in out.row_mut(i).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        (out, inv_std)
    }

    pub fn forward_cached(&self, x: &Matrix) -> (Matrix, LayerNormCache) {
        let (normalized, inv_std) = self.normalize(x);
        let mut y = normalized.clone();
        for i in 0..y.rows() {
            for (j, v) in y.row_mut(i).iter_mut().enumerate() {
                *v = *v * self.gain.get(0, j) + self.bias.get(0, j);
            }
        }
        (y, LayerNormCache { normalized, inv_std })
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        self.forward_cached(x).0
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Matrix, grads: &mut LayerNorm) -> Matrix {
        let c = dy.cols() as f64;
        grads.bias.add_assign(&dy.col_sums());
        grads.gain.add_assign(&dy.zip_map(&cache.normalized, |g, n| g * n).col_sums());
        let mut dx = Matrix::zeros(dy.rows(), dy.cols());
        for i in 0..dy.rows() {
            let xhat = cache.normalized.row(i);
            let dxhat: Vec<f64> = dy.row(i).iter().zip(self.gain.row(0)).map(|(g, w)| g * w).collect();
            let mean_d = dxhat.iter().sum::<f64>() / c;
            let mean_dx = dxhat.iter().zip(xhat).map(|(d, x)| d * x).sum::<f64>() / c;
            let is = cache.inv_std[i];
            for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                *o = is * (dxhat[j] - mean_d - xhat[j] * mean_dx);
            }
        }
        dx
    }
}

impl ParamTensors for LayerNorm {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        vec![("gain".into(), &self.gain), ("bias".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        vec![("gain".into(), &mut self.gain), ("bias".into(), &mut self.bias)]
    }
}
