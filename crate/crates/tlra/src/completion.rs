//! Template-guided completion: retrieve a context vector from the learnable
//! template library for a query, then blend query and context by their
//! cosine consistency.
//!
//! Completion is structural compensation in the shared sentiment space, not
//! reconstruction of raw modality signals.

use rand_chacha::ChaCha8Rng;

use crate::data::{MaskedSample, MissingPattern, Modality};
use crate::encoders::{init_matrix, QueryEncoder};
use crate::error::{Result, TlraError};
use crate::numeric::{BoundParams, ParamId, ParamSet, Tape, Var};

/// K learnable d-dim templates stored as a single `[K×d]` parameter.
///
/// One library is shared across modalities; all templates live in the same
/// shared sentiment space and are updated by gradient descent.
#[derive(Debug, Clone)]
pub struct TemplateLibrary {
    pub param: ParamId,
    pub count: usize,
    pub dim: usize,
}

impl TemplateLibrary {
    pub fn new(set: &mut ParamSet, count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if count == 0 {
            return Err(TlraError::Config("template library needs K >= 1".into()));
        }
        // unit-variance Gaussian scaled by 1/sqrt(d)
        let init = init_matrix(rng, count, dim, dim);
        let param = set.add("templates", init)?;
        Ok(Self { param, count, dim })
    }
}

/// Retrieval output: softmax weights over templates and the aggregated
/// context vector.
pub struct TemplateContext {
    pub weights: Var,
    pub context: Var,
}

/// Scores `s_k = q·t_k`, softmax-normalizes them (temperature 1), and
/// aggregates the context `T = Σ α_k t_k`.
pub fn template_context(tape: &Tape, bound: &BoundParams, lib: &TemplateLibrary, q: Var) -> TemplateContext {
    let templates = bound.var(lib.param);
    let scores = tape.matvec(templates, q);
    let weights = tape.softmax(scores);
    let context = tape.vecmat(weights, templates);
    TemplateContext { weights, context }
}

/// Blend of a query with its template context.
pub struct Completion {
    /// Consistency weight, cosine clamped to [0, 1].
    pub alpha: Var,
    /// `F̂ = α q + (1 − α) T`
    pub completed: Var,
}

/// Fuses query and context: `α = clamp(cos(q, T), 0, 1)` and
/// `F̂ = α q + (1−α) T`, so `F̂` stays on the segment between them.
pub fn complete(tape: &Tape, q: Var, context: Var) -> Completion {
    let alpha = tape.clamp01(tape.cosine(q, context));
    let keep = tape.smul(alpha, q);
    let fill = tape.smul(tape.affine(alpha, -1.0, 1.0), context);
    Completion { alpha, completed: tape.add(keep, fill) }
}

/// Full completion record for one missing modality.
pub struct CompletionResult {
    pub modality: Modality,
    pub weights: Var,
    pub context: Var,
    pub alpha: Var,
    pub completed: Var,
}

/// Completes the given missing modalities from already-encoded observed
/// query vectors: the shared query is their mean, so it stays in the
/// sentiment space without an extra network.
pub fn complete_from_queries(
    tape: &Tape,
    bound: &BoundParams,
    lib: &TemplateLibrary,
    observed_qs: &[Var],
    missing: impl Iterator<Item = Modality>,
) -> Result<Vec<CompletionResult>> {
    if observed_qs.is_empty() {
        return Err(TlraError::Config("completion needs at least one observed modality".into()));
    }
    let query = tape.mean_of(observed_qs);
    let mut out = Vec::new();
    for m in missing {
        let ctx = template_context(tape, bound, lib, query);
        let blend = complete(tape, query, ctx.context);
        out.push(CompletionResult {
            modality: m,
            weights: ctx.weights,
            context: ctx.context,
            alpha: blend.alpha,
            completed: blend.completed,
        });
    }
    Ok(out)
}

/// Completes every missing modality of a masked sample, encoding the
/// observed modalities' queries first.
pub fn complete_missing(
    tape: &Tape,
    bound: &BoundParams,
    query_encoders: &[QueryEncoder; 3],
    lib: &TemplateLibrary,
    sample: &MaskedSample,
    pattern: MissingPattern,
) -> Result<Vec<CompletionResult>> {
    let mut observed_qs = Vec::new();
    for m in pattern.observed() {
        let h = sample
            .features(m)
            .ok_or_else(|| TlraError::Protocol(format!("pattern observes {} but the view hides it", m.letter())))?;
        let (_, q) = query_encoders[m.index()].encode(tape, bound, tape.leaf(h.clone()));
        observed_qs.push(q);
    }
    complete_from_queries(tape, bound, lib, &observed_qs, pattern.missing())
}
