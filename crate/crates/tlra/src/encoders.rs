//! Dual-path encoding into the shared sentiment space.
//!
//! The modal path defines the reference space: input projection, a
//! two-layer feed-forward (hidden width 2d, tanh), then mean pooling to a
//! d-dim vector. The query path prepends a kernel-3 same-length 1-D
//! convolution and keeps the transformed sequence alongside its pooled
//! query vector.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::Modality;
use crate::error::Result;
use crate::numeric::{BoundParams, ParamId, ParamSet, Tape, Tensor, Var};

pub(crate) fn init_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let scale = 1.0 / (fan_in as f64).sqrt();
    let vals: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
    Tensor::matrix(rows, cols, vals).expect("init shape")
}

/// A dense layer with weight layout `[din×dout]` (row-vector convention).
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(set: &mut ParamSet, name: &str, din: usize, dout: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let w = set.add(&format!("{name}.w"), init_matrix(rng, din, dout, din))?;
        let b = set.add(&format!("{name}.b"), Tensor::vector(vec![0.0; dout]))?;
        Ok(Self { w, b })
    }

    pub fn forward_seq(&self, tape: &Tape, bound: &BoundParams, x: Var) -> Var {
        tape.add_row(tape.matmul(x, bound.var(self.w)), bound.var(self.b))
    }

    pub fn forward_vec(&self, tape: &Tape, bound: &BoundParams, x: Var) -> Var {
        tape.add(tape.vecmat(x, bound.var(self.w)), bound.var(self.b))
    }
}

/// Kernel-3, stride-1, zero-padded 1-D convolution over time.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
}

impl Conv1d {
    pub fn new(set: &mut ParamSet, name: &str, din: usize, dout: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let w = set.add(&format!("{name}.w"), init_matrix(rng, 3 * din, dout, 3 * din))?;
        let b = set.add(&format!("{name}.b"), Tensor::vector(vec![0.0; dout]))?;
        Ok(Self { w, b })
    }

    pub fn forward(&self, tape: &Tape, bound: &BoundParams, x: Var) -> Var {
        tape.add_row(tape.conv1d_k3(x, bound.var(self.w)), bound.var(self.b))
    }
}

/// `Linear(d→2d) → tanh → Linear(2d→d)`, applied row-wise to a sequence.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub ff1: Linear,
    pub ff2: Linear,
}

impl FeedForward {
    pub fn new(set: &mut ParamSet, name: &str, d: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            ff1: Linear::new(set, &format!("{name}.ff1"), d, 2 * d, rng)?,
            ff2: Linear::new(set, &format!("{name}.ff2"), 2 * d, d, rng)?,
        })
    }

    pub fn forward_seq(&self, tape: &Tape, bound: &BoundParams, x: Var) -> Var {
        let h = tape.tanh(self.ff1.forward_seq(tape, bound, x));
        self.ff2.forward_seq(tape, bound, h)
    }
}

/// Modal-path encoder: defines F_m in the shared sentiment space.
#[derive(Debug, Clone)]
pub struct ModalEncoder {
    pub proj: Linear,
    pub ffn: FeedForward,
}

impl ModalEncoder {
    pub fn new(set: &mut ParamSet, m: Modality, din: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let name = format!("modal.{}", m.letter());
        Ok(Self {
            proj: Linear::new(set, &format!("{name}.proj"), din, d, rng)?,
            ffn: FeedForward::new(set, &name, d, rng)?,
        })
    }

    /// `F_m = mean-pool(FFN(proj(H_m)))`
    pub fn encode(&self, tape: &Tape, bound: &BoundParams, h: Var) -> Var {
        let x = self.proj.forward_seq(tape, bound, h);
        let x = self.ffn.forward_seq(tape, bound, x);
        tape.mean_rows(x)
    }
}

/// Query-path encoder: produces the transformed sequence and its pooled
/// query vector.
#[derive(Debug, Clone)]
pub struct QueryEncoder {
    pub conv: Conv1d,
    pub ffn: FeedForward,
}

impl QueryEncoder {
    /// When `share_ffn` carries the modal path's feed-forward stage, both
    /// paths reuse those weights; the convolution front end always stays
    /// separate (its shape differs from the modal projection).
    pub fn new(
        set: &mut ParamSet,
        m: Modality,
        din: usize,
        d: usize,
        share_ffn: Option<&FeedForward>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let name = format!("query.{}", m.letter());
        let conv = Conv1d::new(set, &format!("{name}.conv"), din, d, rng)?;
        let ffn = match share_ffn {
            Some(ffn) => ffn.clone(),
            None => FeedForward::new(set, &name, d, rng)?,
        };
        Ok(Self { conv, ffn })
    }

    /// Returns `(F̃_m, q_m)` with `q_m = mean-pool(F̃_m)` by construction.
    pub fn encode(&self, tape: &Tape, bound: &BoundParams, h: Var) -> (Var, Var) {
        let x = self.conv.forward(tape, bound, h);
        let seq = self.ffn.forward_seq(tape, bound, x);
        (seq, tape.mean_rows(seq))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{grad_check, mean_pool};
    use rand::SeedableRng;

    fn setup(din: usize, d: usize) -> (ParamSet, ModalEncoder, QueryEncoder) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut set = ParamSet::new();
        let me = ModalEncoder::new(&mut set, Modality::L, din, d, &mut rng).unwrap();
        let qe = QueryEncoder::new(&mut set, Modality::L, din, d, None, &mut rng).unwrap();
        (set, me, qe)
    }

    fn rand_seq(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Tensor {
        Tensor::matrix(t, d, (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn output_dimensions_match_config() {
        let (set, me, qe) = setup(7, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = rand_seq(&mut rng, 5, 7);
        let tape = Tape::new();
        let bound = set.bind(&tape);
        let f = me.encode(&tape, &bound, tape.leaf(h.clone()));
        assert_eq!(tape.shape_of(f), vec![12]);
        let (seq, q) = qe.encode(&tape, &bound, tape.leaf(h));
        assert_eq!(tape.shape_of(seq), vec![5, 12]);
        assert_eq!(tape.shape_of(q), vec![12]);
    }

    #[test]
    fn encoding_is_pure() {
        let (set, me, _) = setup(4, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = rand_seq(&mut rng, 3, 4);
        let tape = Tape::new();
        let bound = set.bind(&tape);
        let f1 = me.encode(&tape, &bound, tape.leaf(h.clone()));
        let f2 = me.encode(&tape, &bound, tape.leaf(h));
        assert_eq!(tape.value(f1).values(), tape.value(f2).values());
    }

    #[test]
    fn single_row_pooling_is_identity() {
        let (set, me, _) = setup(4, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = rand_seq(&mut rng, 1, 4);
        let tape = Tape::new();
        let bound = set.bind(&tape);
        let hv = tape.leaf(h);
        // pooled output equals the single transformed row
        let x = me.proj.forward_seq(&tape, &bound, hv);
        let x = me.ffn.forward_seq(&tape, &bound, x);
        let pooled = me.encode(&tape, &bound, hv);
        assert_eq!(tape.value(x).values(), tape.value(pooled).values());
    }

    #[test]
    fn query_vector_equals_column_means_of_sequence() {
        let (set, _, qe) = setup(6, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = rand_seq(&mut rng, 7, 6);
        let tape = Tape::new();
        let bound = set.bind(&tape);
        let (seq, q) = qe.encode(&tape, &bound, tape.leaf(h));
        let pooled = mean_pool(&tape.value(seq)).unwrap();
        for (a, b) in tape.value(q).values().iter().zip(pooled.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_input_stays_finite_and_deterministic() {
        let (set, me, qe) = setup(4, 8);
        let tape = Tape::new();
        let bound = set.bind(&tape);
        let h = tape.leaf(Tensor::zeros(&[3, 4]));
        let f = me.encode(&tape, &bound, h);
        let (_, q) = qe.encode(&tape, &bound, h);
        assert!(tape.value(f).all_finite());
        assert!(tape.value(q).all_finite());
    }

    #[test]
    fn shared_ffn_reuses_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut set = ParamSet::new();
        let me = ModalEncoder::new(&mut set, Modality::A, 5, 8, &mut rng).unwrap();
        let before = set.len();
        let qe = QueryEncoder::new(&mut set, Modality::A, 5, 8, Some(&me.ffn), &mut rng).unwrap();
        // only the conv front end added parameters
        assert_eq!(set.len(), before + 2);
        assert_eq!(qe.ffn.ff1.w, me.ffn.ff1.w);
    }

    #[test]
    fn both_paths_pass_grad_check() {
        let (set, me, qe) = setup(4, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = rand_seq(&mut rng, 3, 4);
        let tensors: Vec<Tensor> = set.iter().map(|p| p.value.clone()).collect();
        let err = grad_check(&tensors, |tape, vars| {
            let bound = BoundParams::from_vars(vars.to_vec());
            let hv = tape.leaf(h.clone());
            let f = me.encode(tape, &bound, hv);
            let (_, q) = qe.encode(tape, &bound, hv);
            let c = tape.cosine(f, q);
            tape.add(tape.dot(f, f), tape.add(tape.dot(q, q), c))
        }, 1e-5)
        .unwrap();
        assert!(err < 1e-4, "encoder grad err {err}");
    }
}
