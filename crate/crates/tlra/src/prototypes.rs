//! Class-prototype memory and decision-level alignment.
//!
//! Each modality keeps one positive and one negative unit-norm anchor.
//! The bank is a momentum statistic updated outside the gradient graph;
//! forward passes treat its anchors as constants. Stage 1 applies soft
//! guidance (Eq.-style convex blending toward the nearer anchor); stage 2
//! additionally votes across modalities and replaces disagreeing ones with
//! the majority-class anchor.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Modality;
use crate::error::{Result, TlraError};
use crate::numeric::{cosine_sim, l2_normalize, Tape, Tensor, Var};

/// Sentiment class: non-negative labels are positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    #[serde(rename = "P")]
    Pos,
    #[serde(rename = "N")]
    Neg,
}

impl Polarity {
    pub const BOTH: [Polarity; 2] = [Polarity::Pos, Polarity::Neg];

    pub fn from_label(y: f64) -> Self {
        if y >= 0.0 {
            Polarity::Pos
        } else {
            Polarity::Neg
        }
    }

    pub fn index(self) -> usize {
        match self {
            Polarity::Pos => 0,
            Polarity::Neg => 1,
        }
    }
}

/// Per-modality positive/negative anchors with momentum mixing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrototypeBank {
    /// `anchors[modality][class]`, always unit-norm.
    anchors: Vec<Vec<Vec<f64>>>,
    pub momentum: f64,
    pub dim: usize,
}

impl PrototypeBank {
    /// Random unit-norm initialization, independent per (modality, class).
    pub fn new(dim: usize, momentum: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut anchors = Vec::with_capacity(3);
        for _ in 0..3 {
            let mut per_class = Vec::with_capacity(2);
            for _ in 0..2 {
                let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                per_class.push(l2_normalize(&v).expect("nonzero init"));
            }
            anchors.push(per_class);
        }
        Self { anchors, momentum, dim }
    }

    /// Builds a bank from explicit anchors (checkpoint loading, tests).
    /// Anchors are expected unit-norm.
    pub fn from_anchors(anchors: [[Vec<f64>; 2]; 3], momentum: f64) -> Self {
        let dim = anchors[0][0].len();
        Self {
            anchors: anchors.into_iter().map(|pc| pc.into_iter().collect()).collect(),
            momentum,
            dim,
        }
    }

    pub fn anchor(&self, m: Modality, c: Polarity) -> &[f64] {
        &self.anchors[m.index()][c.index()]
    }

    /// Eq.-9 mix: `B' = α F + (1−α) B` with `α = clamp(cos(F, B), 0, 1)`.
    pub fn mix_prototype(&self, f: &[f64], m: Modality, c: Polarity) -> Result<Vec<f64>> {
        if f.iter().all(|v| *v == 0.0) {
            return Err(TlraError::Degenerate("mix_prototype with zero feature".into()));
        }
        let anchor = self.anchor(m, c);
        let alpha = cosine_sim(f, anchor)?.clamp(0.0, 1.0);
        Ok(f.iter().zip(anchor).map(|(fv, bv)| alpha * fv + (1.0 - alpha) * bv).collect())
    }

    /// Momentum update with normalization:
    /// `B ← normalize((1−η) B + η normalize(B'))`.
    ///
    /// Runs outside the gradient graph; a degenerate zero mix skips the
    /// update with a warning instead of corrupting the anchor.
    pub fn update(&mut self, f: &[f64], m: Modality, c: Polarity) {
        if self.momentum == 0.0 {
            return;
        }
        let mixed = match self.mix_prototype(f, m, c) {
            Ok(v) => v,
            Err(_) => {
                log::warn!("skipping bank update for {}/{:?}: degenerate feature", m.letter(), c);
                return;
            }
        };
        let mixed_unit = match l2_normalize(&mixed) {
            Ok(v) => v,
            Err(_) => {
                log::warn!("skipping bank update for {}/{:?}: zero mixed prototype", m.letter(), c);
                return;
            }
        };
        let eta = self.momentum;
        let anchor = &mut self.anchors[m.index()][c.index()];
        let blended: Vec<f64> =
            anchor.iter().zip(&mixed_unit).map(|(b, u)| (1.0 - eta) * b + eta * u).collect();
        match l2_normalize(&blended) {
            Ok(v) => *anchor = v,
            Err(_) => log::warn!("skipping bank update for {}/{:?}: cancellation to zero", m.letter(), c),
        }
    }

    /// Largest deviation of any anchor norm from 1.
    pub fn max_norm_deviation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for per_class in &self.anchors {
            for a in per_class {
                let n: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                worst = worst.max((n - 1.0).abs());
            }
        }
        worst
    }
}

/// Stage-1 soft guidance output for one modality.
pub struct Guidance {
    pub modality: Modality,
    pub s_pos: Var,
    pub s_neg: Var,
    /// Consistency score `max(s_pos, s_neg)` clamped to [0, 1].
    pub beta: Var,
    /// The nearer anchor; similarity ties go to the positive class.
    pub selected: Polarity,
    /// `F' = β F + (1−β) B*`
    pub guided: Var,
    /// Prototype-space class decision, same tie rule.
    pub vote: Polarity,
}

/// Blends a modality feature toward its nearer class anchor. The bank enters
/// the graph as constants.
pub fn soft_guidance(tape: &Tape, bank: &PrototypeBank, m: Modality, f: Var) -> Guidance {
    let b_pos = tape.leaf(Tensor::vector(bank.anchor(m, Polarity::Pos).to_vec()));
    let b_neg = tape.leaf(Tensor::vector(bank.anchor(m, Polarity::Neg).to_vec()));
    let s_pos = tape.cosine(f, b_pos);
    let s_neg = tape.cosine(f, b_neg);
    let selected = if tape.scalar_value(s_pos) >= tape.scalar_value(s_neg) {
        Polarity::Pos
    } else {
        Polarity::Neg
    };
    let beta = tape.clamp01(tape.max2(s_pos, s_neg));
    let anchor = match selected {
        Polarity::Pos => b_pos,
        Polarity::Neg => b_neg,
    };
    let keep = tape.smul(beta, f);
    let fill = tape.smul(tape.affine(beta, -1.0, 1.0), anchor);
    let guided = tape.add(keep, fill);
    Guidance { modality: m, s_pos, s_neg, beta, selected, guided, vote: selected }
}

/// Stage-2 result for one modality.
pub struct VotedFeature {
    pub modality: Modality,
    pub feature: Var,
    pub suppressed: bool,
}

/// Majority vote across the available modalities; disagreeing ones are
/// replaced by the majority-class anchor (the stored vector, bit-equal).
///
/// A 1–1 tie between two modalities disables suppression, and a single
/// modality passes through unchanged.
pub fn vote_and_suppress(tape: &Tape, bank: &PrototypeBank, items: &[Guidance]) -> Result<Vec<VotedFeature>> {
    if items.is_empty() {
        return Err(TlraError::Protocol("vote_and_suppress on empty modality set".into()));
    }
    let pos = items.iter().filter(|g| g.vote == Polarity::Pos).count();
    let neg = items.len() - pos;
    let majority = if pos > neg {
        Some(Polarity::Pos)
    } else if neg > pos {
        Some(Polarity::Neg)
    } else {
        None // tie: fall back to stage-1 outputs
    };
    Ok(items
        .iter()
        .map(|g| {
            let suppress = majority.map(|maj| g.vote != maj).unwrap_or(false);
            let feature = if suppress {
                let maj = majority.expect("suppression implies majority");
                tape.leaf(Tensor::vector(bank.anchor(g.modality, maj).to_vec()))
            } else {
                g.guided
            };
            VotedFeature { modality: g.modality, feature, suppressed: suppress }
        })
        .collect())
}
