//! Training objectives: representation alignment, prototype structure
//! losses, task supervision, and their weighted total.

use serde::{Deserialize, Serialize};

use crate::data::Modality;
use crate::error::{Result, TlraError};
use crate::numeric::{cosine_sim, Tape, Var};
use crate::prototypes::{Polarity, PrototypeBank};

/// Loss coefficients and the intra-loss margin.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    /// Observed-modality alignment term inside the alignment loss.
    pub lambda1: f64,
    /// Completed-modality alignment term inside the alignment loss.
    pub lambda2: f64,
    /// Intra-modality separation loss.
    pub lambda3: f64,
    /// Cross-modal prototype alignment loss.
    pub lambda4: f64,
    /// Task supervision loss.
    pub lambda5: f64,
    /// Intra-loss margin.
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 1.0, lambda2: 1.0, lambda3: 0.7, lambda4: 0.7, lambda5: 0.2, delta: 0.2 }
    }
}

/// Hinge direction for the intra-modality separation loss.
///
/// `Literal` follows the printed form `max(0, δ − cos(B^P, B^N))`, which
/// rewards similar class anchors; `Separation` flips it to
/// `max(0, cos(B^P, B^N) − δ)` so anchors are pushed apart, matching the
/// stated intent of clear class boundaries. Default: `Separation`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntraVariant {
    Literal,
    Separation,
}

/// Which per-sample task loss to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskLossKind {
    MeanAbsolute,
    SquaredError,
}

/// Per-batch loss components. `total` combines them exactly as
/// `λ3·intra + λ4·inter + λ5·task + align` (the alignment term carries its
/// λ1/λ2 internally).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossReport {
    pub align: f64,
    pub intra: f64,
    pub inter: f64,
    pub task: f64,
    pub total: f64,
}

/// Per-sample representation alignment (Eq.-8 style):
/// `λ1 Σ_{m∈M} ‖q_m − F_m‖² + λ2 Σ_{m∈M_miss} ‖F̂_m − F_m‖²`.
///
/// `refs` must be detached by the caller so gradients flow only into the
/// query and completed features; a missing reference is a protocol error.
pub fn align_loss(
    tape: &Tape,
    q_observed: &[(Modality, Var)],
    completed: &[(Modality, Var)],
    refs: &[Option<Var>; 3],
    weights: &LossWeights,
) -> Result<Var> {
    let mut total = tape.scalar(0.0);
    for (m, q) in q_observed {
        let r = refs[m.index()]
            .ok_or_else(|| TlraError::Protocol(format!("missing alignment reference for {}", m.letter())))?;
        total = tape.add(total, tape.scale(tape.sq_dist(*q, r), weights.lambda1));
    }
    for (m, fhat) in completed {
        let r = refs[m.index()]
            .ok_or_else(|| TlraError::Protocol(format!("missing alignment reference for {}", m.letter())))?;
        total = tape.add(total, tape.scale(tape.sq_dist(*fhat, r), weights.lambda2));
    }
    Ok(total)
}

fn intra_term(cos: f64, delta: f64, variant: IntraVariant) -> f64 {
    match variant {
        IntraVariant::Literal => (delta - cos).max(0.0),
        IntraVariant::Separation => (cos - delta).max(0.0),
    }
}

/// Intra-modality separation over the bank anchors (constants by default;
/// the bank is momentum memory, not a gradient parameter).
pub fn intra_loss(bank: &PrototypeBank, delta: f64, variant: IntraVariant) -> f64 {
    Modality::ALL
        .iter()
        .map(|m| {
            let cos = cosine_sim(bank.anchor(*m, Polarity::Pos), bank.anchor(*m, Polarity::Neg))
                .expect("bank anchors are nonempty");
            intra_term(cos, delta, variant)
        })
        .sum()
}

/// Graph-side intra loss over in-graph anchors (used when prototype
/// gradients are enabled).
pub fn intra_loss_graph(tape: &Tape, anchors: &[[Var; 2]; 3], delta: f64, variant: IntraVariant) -> Var {
    let zero = tape.scalar(0.0);
    let mut total = tape.scalar(0.0);
    for per_mod in anchors {
        let cos = tape.cosine(per_mod[0], per_mod[1]);
        let term = match variant {
            IntraVariant::Literal => tape.max2(zero, tape.affine(cos, -1.0, delta)),
            IntraVariant::Separation => tape.max2(zero, tape.affine(cos, 1.0, -delta)),
        };
        total = tape.add(total, term);
    }
    total
}

/// Cross-modal prototype alignment over ordered pairs `m ≠ n`:
/// `Σ (1 − cos(B_m^P, B_n^P)) + (1 − cos(B_m^N, B_n^N))`.
pub fn inter_loss(bank: &PrototypeBank) -> f64 {
    let mut total = 0.0;
    for m in Modality::ALL {
        for n in Modality::ALL {
            if m == n {
                continue;
            }
            for c in Polarity::BOTH {
                let cos = cosine_sim(bank.anchor(m, c), bank.anchor(n, c)).expect("bank anchors are nonempty");
                total += 1.0 - cos;
            }
        }
    }
    total
}

/// Graph-side inter loss over in-graph anchors.
pub fn inter_loss_graph(tape: &Tape, anchors: &[[Var; 2]; 3]) -> Var {
    let mut total = tape.scalar(0.0);
    for (mi, m) in anchors.iter().enumerate() {
        for (ni, n) in anchors.iter().enumerate() {
            if mi == ni {
                continue;
            }
            for ci in 0..2 {
                let cos = tape.cosine(m[ci], n[ci]);
                total = tape.add(total, tape.affine(cos, -1.0, 1.0));
            }
        }
    }
    total
}

/// Per-sample task supervision on the scalar prediction.
pub fn task_loss(tape: &Tape, y_hat: Var, y: f64, kind: TaskLossKind) -> Var {
    let target = tape.scalar(y);
    let diff = tape.sub(y_hat, target);
    match kind {
        TaskLossKind::MeanAbsolute => tape.abs(diff),
        TaskLossKind::SquaredError => tape.mul(diff, diff),
    }
}

/// Weighted total `λ3·intra + λ4·inter + λ5·task + align`.
pub fn total_loss(tape: &Tape, align: Var, intra: Var, inter: Var, task: Var, weights: &LossWeights) -> Var {
    let mut total = tape.scale(intra, weights.lambda3);
    total = tape.add(total, tape.scale(inter, weights.lambda4));
    total = tape.add(total, tape.scale(task, weights.lambda5));
    tape.add(total, align)
}

/// Scalar-side total for reporting.
pub fn total_of(align: f64, intra: f64, inter: f64, task: f64, weights: &LossWeights) -> f64 {
    weights.lambda3 * intra + weights.lambda4 * inter + weights.lambda5 * task + align
}
