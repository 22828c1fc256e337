//! Deterministic stand-in query features derived from geometry.
//!
//! Every coordinate is expanded into sin/cos pairs at a few fixed
//! frequencies; the concatenation is projected to width `C` by a seeded
//! Gaussian matrix scaled by `1/√fan_in`.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::seeded_rng;
use crate::scene::{Point3, Polyline3D, TrafficElement};
use crate::tensor::Matrix;

/// Angular frequencies in rad/m.
const FREQUENCIES: [f64; 4] = [0.05, 0.2, 0.8, 3.2];

fn encode_scalar(v: f64, out: &mut Vec<f64>) {
    for w in FREQUENCIES {
        out.push((w * v).sin());
        out.push((w * v).cos());
    }
}

fn encode_point(p: Point3, out: &mut Vec<f64>) {
    encode_scalar(p.x, out);
    encode_scalar(p.y, out);
    encode_scalar(p.z, out);
}

fn projection(fan_in: usize, c: usize, seed: u64) -> Matrix {
    let mut rng = seeded_rng(seed);
    let scale = 1.0 / (fan_in as f64).sqrt();
    let data = (0..fan_in * c)
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect::<Vec<f64>>();
    Matrix::from_vec(fan_in, c, data).unwrap()
}

fn project(raw: Vec<Vec<f64>>, c: usize, seed: u64) -> Result<Matrix> {
    if c == 0 {
        return Err(Error::InvalidParams("feature width must be >= 1".into()));
    }
    let Some(fan_in) = raw.first().map(Vec::len) else {
        return Ok(Matrix::zeros(0, c));
    };
    if raw.iter().any(|r| r.len() != fan_in) {
        return Err(Error::ShapeMismatch("feature rows need equal point counts".into()));
    }
    Ok(Matrix::from_rows(&raw)?.matmul(&projection(fan_in, c, seed)))
}

/// One row per polyline, encoding every sampled point.
pub fn polyline_features(lines: &[&Polyline3D], c: usize, seed: u64) -> Result<Matrix> {
    let raw = lines
        .iter()
        .map(|l| {
            let mut v = Vec::with_capacity(l.len() * 3 * 2 * FREQUENCIES.len());
            for &p in l.points() {
                encode_point(p, &mut v);
            }
            v
        })
        .collect();
    project(raw, c, seed)
}

/// Positional embedding from the two endpoints only.
pub fn endpoint_embedding(lines: &[&Polyline3D], c: usize, seed: u64) -> Result<Matrix> {
    let raw = lines
        .iter()
        .map(|l| {
            let mut v = Vec::new();
            encode_point(l.first(), &mut v);
            encode_point(l.last(), &mut v);
            v
        })
        .collect();
    project(raw, c, seed)
}

/// Box centre, size and a one-hot category.
pub fn traffic_features(elements: &[TrafficElement], c: usize, seed: u64) -> Result<Matrix> {
    let raw = elements
        .iter()
        .map(|t| {
            let b = t.bbox;
            let mut v = Vec::new();
            encode_scalar(0.5 * (b.x_min + b.x_max), &mut v);
            encode_scalar(0.5 * (b.y_min + b.y_max), &mut v);
            encode_scalar(b.x_max - b.x_min, &mut v);
            encode_scalar(b.y_max - b.y_min, &mut v);
            let mut one_hot = [0.0; crate::scene::TrafficCategory::ALL.len()];
            one_hot[t.category.index()] = 1.0;
            v.extend(one_hot);
            v
        })
        .collect();
    project(raw, c, seed)
}
