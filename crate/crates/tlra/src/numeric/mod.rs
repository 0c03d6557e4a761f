//! Dense double-precision arrays, a reverse-mode tape, and a
//! finite-difference gradient oracle.
//!
//! Everything downstream (encoders, completion, prototypes, losses) is
//! expressed over [`Tape`] operations so a single backward pass yields
//! gradients for every trainable parameter.

mod gradcheck;
mod params;
mod tape;

pub use gradcheck::{grad_check, DEFAULT_STEP};
pub use params::{BoundParams, ParamId, ParamSet, Parameter};
pub use tape::{Tape, Var};

use crate::error::{Result, TlraError};

/// Denominator guard used by cosine similarity and normalization.
pub const EPS: f64 = 1e-12;

/// A dense row-major array of f64 values.
///
/// Shape `[]` is a scalar, `[n]` a vector, `[r, c]` a matrix. Gradients are
/// not stored here; they live on the tape node that wraps the tensor during
/// a recorded forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != values.len() {
            return Err(TlraError::Dimension(format!(
                "shape {:?} expects {} values, got {}",
                shape,
                expect,
                values.len()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![], values: vec![v] }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Self { shape: vec![values.len()], values }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self { shape: shape.to_vec(), values: vec![0.0; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn as_scalar(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.values[0]
    }

    /// Row count of a matrix tensor.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    /// Column count of a matrix tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Cosine similarity `a·b / (‖a‖‖b‖ + ε)`.
///
/// The ε guard means a pair of zero vectors yields 0 rather than an error.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(TlraError::Dimension("cosine_sim on zero-length vector".into()));
    }
    if a.len() != b.len() {
        return Err(TlraError::Dimension(format!(
            "cosine_sim length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(dot(a, b) / (l2_norm(a) * l2_norm(b) + EPS))
}

/// Numerically stable softmax (max-subtraction).
pub fn softmax(s: &[f64]) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Err(TlraError::Dimension("softmax on empty vector".into()));
    }
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = exp.iter().sum();
    Ok(exp.iter().map(|e| e / z).collect())
}

/// Column-wise mean over the rows of a `T×d` matrix.
pub fn mean_pool(m: &Tensor) -> Result<Tensor> {
    if m.shape().len() != 2 {
        return Err(TlraError::Dimension(format!(
            "mean_pool expects a matrix, got shape {:?}",
            m.shape()
        )));
    }
    let (t, d) = (m.rows(), m.cols());
    if t == 0 {
        return Err(TlraError::Degenerate("mean_pool on empty sequence".into()));
    }
    let mut out = vec![0.0; d];
    for row in m.values().chunks_exact(d) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= t as f64;
    }
    Ok(Tensor::vector(out))
}

/// Scales a vector to unit norm. Zero vectors are rejected.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = l2_norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(TlraError::Degenerate("l2_normalize on zero vector".into()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cosine_self_similarity_is_one() {
        let v = vec![0.3, -1.2, 4.5, 0.01];
        assert!((cosine_sim(&v, &v).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cosine_orthogonal_is_zero() {
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn cosine_hand_computed() {
        // 32 / (sqrt(14) * sqrt(77))
        let expect = 32.0 / (14f64.sqrt() * 77f64.sqrt());
        let got = cosine_sim(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((got - expect).abs() < 1e-12, "got {got}, expect {expect}");
    }

    #[test]
    fn cosine_zero_length_rejected() {
        assert!(cosine_sim(&[], &[]).is_err());
    }

    #[test]
    fn cosine_both_zero_is_zero() {
        assert_eq!(cosine_sim(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn softmax_symmetry_and_singleton() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(softmax(&[123.4]).unwrap(), vec![1.0]);
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn softmax_direct_evaluation() {
        let got = softmax(&[1.0, 2.0, 3.0]).unwrap();
        // independent evaluation
        let z = 1f64.exp() + 2f64.exp() + 3f64.exp();
        let expect = [1f64.exp() / z, 2f64.exp() / z, 3f64.exp() / z];
        for (g, e) in got.iter().zip(expect) {
            assert!((g - e).abs() < 1e-12);
        }
        assert!((got[0] - 0.09003057).abs() < 1e-8);
        assert!((got[1] - 0.24472847).abs() < 1e-8);
        assert!((got[2] - 0.66524096).abs() < 1e-8);
    }

    #[test]
    fn mean_pool_single_row_and_symmetry() {
        let m = Tensor::matrix(1, 3, vec![7.0, -1.0, 2.0]).unwrap();
        assert_eq!(mean_pool(&m).unwrap().values(), &[7.0, -1.0, 2.0]);
        let m = Tensor::matrix(2, 2, vec![1.0, 1.0, 3.0, 3.0]).unwrap();
        assert_eq!(mean_pool(&m).unwrap().values(), &[2.0, 2.0]);
    }

    #[test]
    fn mean_pool_matches_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let vals: Vec<f64> = (0..20).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let m = Tensor::matrix(5, 4, vals.clone()).unwrap();
        let pooled = mean_pool(&m).unwrap();
        // oracle: explicit column sums divided by T
        for j in 0..4 {
            let mut s = 0.0;
            for t in 0..5 {
                s += vals[t * 4 + j];
            }
            assert!((pooled.values()[j] - s / 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_pool_empty_sequence_rejected() {
        let m = Tensor::matrix(0, 4, vec![]).unwrap();
        assert!(mean_pool(&m).is_err());
    }

    #[test]
    fn l2_normalize_cases() {
        assert_eq!(l2_normalize(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
        assert_eq!(l2_normalize(&[2.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        let u = l2_normalize(&[0.6, 0.8]).unwrap();
        assert!((u[0] - 0.6).abs() < 1e-12 && (u[1] - 0.8).abs() < 1e-12);
        assert!(l2_normalize(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn tensor_shape_is_validated() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(v in proptest::collection::vec(-1e3..1e3f64, 1..24)) {
            let p = softmax(&v).unwrap();
            prop_assert!(p.iter().all(|x| *x >= 0.0));
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in proptest::collection::vec(-10.0..10.0f64, 4),
            b in proptest::collection::vec(-10.0..10.0f64, 4),
            lambda in 0.1..50.0f64,
        ) {
            let ab = cosine_sim(&a, &b).unwrap();
            let ba = cosine_sim(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-9);
            let scaled: Vec<f64> = a.iter().map(|x| x * lambda).collect();
            let sab = cosine_sim(&scaled, &b).unwrap();
            prop_assert!((ab - sab).abs() < 1e-9);
        }
    }
}
