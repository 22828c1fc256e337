//! Geometric kernels over polylines and boxes. All arithmetic is `f64`.

use crate::error::{Error, Result};
use crate::scene::{BBox, Point3, Polyline3D};

/// Two axis-aligned boxes compared by [`box_iou`] and [`giou`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxPair {
    pub a: BBox,
    pub b: BBox,
}

impl BoxPair {
    pub fn new(a: BBox, b: BBox) -> Self {
        Self { a, b }
    }

    fn intersection(&self) -> f64 {
        let w = (self.a.x_max.min(self.b.x_max) - self.a.x_min.max(self.b.x_min)).max(0.0);
        let h = (self.a.y_max.min(self.b.y_max) - self.a.y_min.max(self.b.y_min)).max(0.0);
        w * h
    }

    fn hull_area(&self) -> f64 {
        let w = self.a.x_max.max(self.b.x_max) - self.a.x_min.min(self.b.x_min);
        let h = self.a.y_max.max(self.b.y_max) - self.a.y_min.min(self.b.y_min);
        w * h
    }
}

/// Resamples `poly` to `n` points spaced uniformly in arc length along the
/// piecewise-linear curve. Endpoints are copied exactly.
pub fn resample_uniform(poly: &Polyline3D, n: usize) -> Result<Polyline3D> {
    if n < 2 {
        return Err(Error::Contract(format!("resample count must be >= 2, got {n}")));
    }
    let pts = poly.points();
    let mut cumulative = Vec::with_capacity(pts.len());
    cumulative.push(0.0);
    for w in pts.windows(2) {
        let prev = *cumulative.last().unwrap();
        cumulative.push(prev + w[0].distance(w[1]));
    }
    let total = *cumulative.last().unwrap();

    let mut out = Vec::with_capacity(n);
    out.push(poly.first());
    let mut seg = 0;
    for k in 1..n - 1 {
        let target = total * k as f64 / (n - 1) as f64;
        while seg + 2 < cumulative.len() && cumulative[seg + 1] < target {
            seg += 1;
        }
        let seg_len = cumulative[seg + 1] - cumulative[seg];
        let t = ((target - cumulative[seg]) / seg_len).clamp(0.0, 1.0);
        out.push(pts[seg].lerp(pts[seg + 1], t));
    }
    out.push(poly.last());
    Polyline3D::new(out)
}

/// Average per-point L1 distance between index-aligned polylines.
pub fn avg_l1(a: &Polyline3D, b: &Polyline3D) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "avg_l1 needs equal point counts, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let sum: f64 = a
        .points()
        .iter()
        .zip(b.points())
        .map(|(&p, &q)| (p - q).l1())
        .sum();
    Ok(sum / a.len() as f64)
}

/// Discrete Fréchet distance with the Euclidean point metric.
///
/// Eiter–Mannila coupling recurrence evaluated row by row, O(n·m) time and
/// O(m) memory.
pub fn discrete_frechet(a: &Polyline3D, b: &Polyline3D) -> f64 {
    discrete_frechet_points(a.points(), b.points())
}

pub(crate) fn discrete_frechet_points(a: &[Point3], b: &[Point3]) -> f64 {
    let m = b.len();
    let mut prev = vec![0.0f64; m];
    let mut cur = vec![0.0f64; m];
    for (i, &p) in a.iter().enumerate() {
        for (j, &q) in b.iter().enumerate() {
            let d = p.distance(q);
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => cur[j - 1].max(d),
                (_, 0) => prev[0].max(d),
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]).max(d),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m - 1]
}

/// Symmetric Chamfer distance: mean of the two directed nearest-neighbour
/// averages.
pub fn chamfer(a: &[Point3], b: &[Point3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Contract("chamfer needs non-empty point sets".into()));
    }
    let directed = |from: &[Point3], to: &[Point3]| {
        from.iter()
            .map(|&p| to.iter().map(|&q| p.distance(q)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / from.len() as f64
    };
    Ok(0.5 * (directed(a, b) + directed(b, a)))
}

pub fn box_iou(p: BoxPair) -> f64 {
    let inter = p.intersection();
    let union = p.a.area() + p.b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// Generalized IoU: IoU minus the fraction of the enclosing hull not covered
/// by the union.
pub fn giou(p: BoxPair) -> f64 {
    let inter = p.intersection();
    let union = p.a.area() + p.b.area() - inter;
    let hull = p.hull_area();
    inter / union - (hull - union) / hull
}
