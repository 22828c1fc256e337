use lanetopo::attention::{sigmoid_mask, softmax_rows, MaskMatrix, MaskedCrossAttention, ModelDims, QuerySet, SelfAttention, MASK_EPS};
use lanetopo::connected::CorrelationMatrix;
use lanetopo::nn::MlpParams;
use lanetopo::tensor::Matrix;
use proptest::prelude::*;

proptest! {
    #[test]
    fn log_bias_softmax_reweights_by_mask(
        row in (1usize..8).prop_flat_map(|m| (
            prop::collection::vec(-10.0..10.0f64, m),
            prop::collection::vec(MASK_EPS..=1.0f64, m),
        ))
    ) {
        let (z, s) = row;
        let m = z.len();
        let biased = Matrix::from_vec(1, m, z.iter().zip(&s).map(|(a, b)| a + b.ln()).collect()).unwrap();
        let got = softmax_rows(&biased);
        let denom: f64 = z.iter().zip(&s).map(|(a, b)| b * a.exp()).sum();
        for j in 0..m {
            let want = s[j] * z[j].exp() / denom;
            prop_assert!((got.get(0, j) - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_rows_are_stochastic(vals in prop::collection::vec(-50.0..50.0f64, 1..24), cols in 1usize..6) {
        let rows = vals.len() / cols;
        prop_assume!(rows > 0);
        let z = Matrix::from_vec(rows, cols, vals[..rows * cols].to_vec()).unwrap();
        let a = softmax_rows(&z);
        for i in 0..rows {
            let s: f64 = a.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!(a.row(i).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn mask_entries_stay_in_range(d in prop::collection::vec(0.0..200.0f64, 1..20), seed in 0u64..1000) {
        let mlp = MlpParams::seeded(&[1, 8, 1], seed).unwrap();
        let n = d.len();
        let s = sigmoid_mask(&CorrelationMatrix::new(1, n, d).unwrap(), &mlp).unwrap();
        prop_assert!(s.as_matrix().data().iter().all(|v| (MASK_EPS..=1.0).contains(v)));
    }
}

#[test]
fn all_ones_mask_reproduces_unmasked_attention_bitwise() {
    for seed in 0..20u64 {
        let ca = MaskedCrossAttention::seeded(8, seed);
        let q = Matrix::from_vec(3, 8, (0..24).map(|k| ((k as f64 + seed as f64) * 0.37).sin()).collect()).unwrap();
        let qc = Matrix::from_vec(4, 8, (0..32).map(|k| ((k as f64 - seed as f64) * 0.21).cos()).collect()).unwrap();
        let (out, w) = ca
            .forward(&QuerySet::new(q.clone()).unwrap(), &QuerySet::new(qc.clone()).unwrap(), &MaskMatrix::ones(3, 4))
            .unwrap();
        let scale = 1.0 / 8f64.sqrt();
        let a = softmax_rows(&ca.fq.forward(&q).matmul_t(&ca.fk.forward(&qc)).scale(scale));
        let plain = ca.ln.forward(&a.matmul(&ca.fv.forward(&qc)).add(&q));
        assert_eq!(w.as_matrix(), &a);
        assert_eq!(out.as_matrix(), &plain);
    }
}

#[test]
fn self_attention_preserves_shape_and_is_deterministic() {
    let layer = SelfAttention::seeded(ModelDims::new(12, 3).unwrap(), 4);
    let q = QuerySet::new(Matrix::from_vec(5, 12, (0..60).map(|k| (k as f64 * 0.13).sin()).collect()).unwrap()).unwrap();
    let p = QuerySet::new(Matrix::from_vec(5, 12, (0..60).map(|k| (k as f64 * 0.07).cos()).collect()).unwrap()).unwrap();
    let a = layer.forward(&q, &p).unwrap();
    assert_eq!((a.len(), a.width()), (5, 12));
    assert_eq!(a, layer.forward(&q, &p).unwrap());
}

#[test]
fn head_count_must_divide_width() {
    assert!(ModelDims::new(10, 3).is_err());
    assert!(ModelDims::new(0, 1).is_err());
    assert_eq!(ModelDims::new(32, 4).unwrap().head_dim(), 8);
}
