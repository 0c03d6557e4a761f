//! Model assembly and the end-to-end forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::completion::{complete_from_queries, CompletionResult, TemplateLibrary};
use crate::data::{apply_mask, MaskedSample, MissingPattern, Modality, SampleRecord};
use crate::encoders::{Linear, ModalEncoder, QueryEncoder};
use crate::error::{Result, TlraError};
use crate::losses::{
    align_loss, inter_loss, inter_loss_graph, intra_loss, intra_loss_graph, task_loss, total_loss, total_of,
    LossReport,
};
use crate::numeric::{BoundParams, ParamSet, Tape, Tensor, Var};
use crate::prototypes::{soft_guidance, vote_and_suppress, Guidance, Polarity, PrototypeBank};

use super::{Stage, TrainerConfig};

/// All trainable parameters plus the non-gradient prototype bank.
pub struct Model {
    pub params: ParamSet,
    pub modal: [ModalEncoder; 3],
    pub query: [QueryEncoder; 3],
    pub templates: TemplateLibrary,
    pub fusion: FusionHead,
    pub bank: PrototypeBank,
    pub dims: [usize; 3],
    pub d: usize,
}

/// Two-layer head over the concatenated per-modality features:
/// `tanh(x·W1 + b1)` then a dot with `w2` plus scalar bias.
pub struct FusionHead {
    pub l1: Linear,
    pub w2: crate::numeric::ParamId,
    pub b2: crate::numeric::ParamId,
}

impl FusionHead {
    fn new(set: &mut ParamSet, d: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let l1 = Linear::new(set, "fusion.l1", 3 * d, d, rng)?;
        let w2_init = crate::encoders::init_matrix(rng, 1, d, d);
        let w2 = set.add("fusion.w2", Tensor::vector(w2_init.values().to_vec()))?;
        let b2 = set.add("fusion.b2", Tensor::scalar(0.0))?;
        Ok(Self { l1, w2, b2 })
    }

    pub fn predict(&self, tape: &Tape, bound: &BoundParams, x: Var) -> Var {
        let h = tape.tanh(self.l1.forward_vec(tape, bound, x));
        tape.add(tape.dot(bound.var(self.w2), h), bound.var(self.b2))
    }
}

impl Model {
    /// Builds encoders, templates, fusion head, and the prototype bank from
    /// one seeded stream, so construction is bit-reproducible.
    pub fn new(cfg: &TrainerConfig, dims: [usize; 3]) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamSet::new();
        let d = cfg.d;

        let mk_modal = |set: &mut ParamSet, m: Modality, rng: &mut ChaCha8Rng| {
            ModalEncoder::new(set, m, dims[m.index()], d, rng)
        };
        let modal = [
            mk_modal(&mut params, Modality::L, &mut rng)?,
            mk_modal(&mut params, Modality::A, &mut rng)?,
            mk_modal(&mut params, Modality::V, &mut rng)?,
        ];
        let mk_query = |set: &mut ParamSet, m: Modality, rng: &mut ChaCha8Rng, modal: &ModalEncoder| {
            let shared = cfg.share_paths.then_some(&modal.ffn);
            QueryEncoder::new(set, m, dims[m.index()], d, shared, rng)
        };
        let query = [
            mk_query(&mut params, Modality::L, &mut rng, &modal[0])?,
            mk_query(&mut params, Modality::A, &mut rng, &modal[1])?,
            mk_query(&mut params, Modality::V, &mut rng, &modal[2])?,
        ];
        let templates = TemplateLibrary::new(&mut params, cfg.k_templates, d, &mut rng)?;
        let fusion = FusionHead::new(&mut params, d, &mut rng)?;
        let bank = PrototypeBank::new(d, cfg.eta, &mut rng);
        Ok(Self { params, modal, query, templates, fusion, bank, dims, d })
    }
}

/// Everything produced by one forward pass that losses or reports consume.
pub struct Forward {
    pub y_hat: Var,
    /// Query vectors for observed modalities (empty when the query path is
    /// skipped).
    pub q_observed: Vec<(Modality, Var)>,
    /// Modal-path features for observed modalities.
    pub f_observed: Vec<(Modality, Var)>,
    /// Completion outputs for missing modalities.
    pub completed: Vec<CompletionResult>,
    /// Pre-guidance feature per modality slot (observed, completed, or zero).
    pub features: [Var; 3],
    pub votes: Vec<(Modality, Polarity)>,
    pub suppressed: [bool; 3],
}

impl Forward {
    pub fn any_suppression(&self) -> bool {
        self.suppressed.iter().any(|s| *s)
    }
}

/// Whether the query path must run for observed modalities even without
/// missing ones (training needs it for the alignment loss).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Train,
    Eval,
}

/// Runs the pipeline on one masked sample:
/// encode observed → complete missing → guidance → (stage 2) vote and
/// suppress → fuse in fixed L, A, V order.
pub fn forward(
    tape: &Tape,
    bound: &BoundParams,
    model: &Model,
    sample: &MaskedSample,
    stage: Stage,
    cfg: &TrainerConfig,
    mode: ForwardMode,
) -> Result<Forward> {
    let pattern = sample.pattern();
    let has_missing = pattern.observed_count() < 3;

    let mut f_observed = Vec::new();
    for m in pattern.observed() {
        let h = sample
            .features(m)
            .ok_or_else(|| TlraError::Protocol(format!("observed modality {} unavailable", m.letter())))?;
        let f = model.modal[m.index()].encode(tape, bound, tape.leaf(h.clone()));
        f_observed.push((m, f));
    }

    let need_queries = cfg.rla_enabled && (mode == ForwardMode::Train || has_missing);
    let mut q_observed = Vec::new();
    if need_queries {
        for m in pattern.observed() {
            let h = sample.features(m).expect("observed feature present");
            let (_, q) = model.query[m.index()].encode(tape, bound, tape.leaf(h.clone()));
            q_observed.push((m, q));
        }
    }

    let completed = if cfg.rla_enabled && has_missing {
        let qs: Vec<Var> = q_observed.iter().map(|(_, q)| *q).collect();
        complete_from_queries(tape, bound, &model.templates, &qs, pattern.missing())?
    } else {
        Vec::new()
    };

    let zero = tape.leaf(Tensor::zeros(&[model.d]));
    let mut features = [zero; 3];
    for (m, f) in &f_observed {
        features[m.index()] = *f;
    }
    for c in &completed {
        features[c.modality.index()] = c.completed;
    }

    let mut votes = Vec::new();
    let mut suppressed = [false; 3];
    let fused_inputs: [Var; 3] = if cfg.dla_enabled {
        let guided: Vec<Guidance> = Modality::ALL
            .iter()
            .map(|m| soft_guidance(tape, &model.bank, *m, features[m.index()]))
            .collect();
        votes = guided.iter().map(|g| (g.modality, g.vote)).collect();
        match stage {
            Stage::One => {
                let mut out = [zero; 3];
                for g in &guided {
                    out[g.modality.index()] = g.guided;
                }
                out
            }
            Stage::Two => {
                let voted = vote_and_suppress(tape, &model.bank, &guided)?;
                let mut out = [zero; 3];
                for v in &voted {
                    out[v.modality.index()] = v.feature;
                    suppressed[v.modality.index()] = v.suppressed;
                }
                out
            }
        }
    } else {
        features
    };

    let cat = tape.concat(&fused_inputs);
    let y_hat = model.fusion.predict(tape, bound, cat);
    Ok(Forward { y_hat, q_observed, f_observed, completed, features, votes, suppressed })
}

/// Batch objective parts: the differentiable total plus the scalar report.
pub struct BatchLoss {
    pub total: Var,
    pub report: LossReport,
    /// Pre-guidance observed features per sample, extracted for the bank
    /// update after the optimizer step: `(modality, class, values)`.
    pub bank_feed: Vec<(Modality, Polarity, Vec<f64>)>,
}

/// Alignment references for the whole batch, one full-modality set per
/// sample. These are the modal-encoder outputs on unmasked inputs, captured
/// as plain values.
pub type FrozenRefs = Vec<[Tensor; 3]>;

/// Evaluates the alignment references at the model's current parameters.
pub fn compute_references(model: &Model, batch: &[&SampleRecord]) -> FrozenRefs {
    batch
        .iter()
        .map(|rec| {
            let tape = Tape::new();
            let bound = model.params.bind(&tape);
            std::array::from_fn(|mi| {
                let h = rec.features_of(Modality::ALL[mi]);
                let f = model.modal[mi].encode(&tape, &bound, tape.leaf(h.clone()));
                tape.value(f)
            })
        })
        .collect()
}

/// Assembles the full objective over a batch of masked samples.
///
/// References for the alignment loss are recomputed from the current modal
/// encoders on the unmasked inputs and detached, so alignment pulls queries
/// and completions toward the reference space without collapsing it. A
/// finite-difference check of this objective must hold the references fixed
/// (they are constants by contract); pass them via `frozen_refs`.
pub fn batch_loss(
    tape: &Tape,
    bound: &BoundParams,
    model: &Model,
    batch: &[&SampleRecord],
    patterns: &[MissingPattern],
    stage: Stage,
    cfg: &TrainerConfig,
    frozen_refs: Option<&FrozenRefs>,
) -> Result<BatchLoss> {
    if batch.is_empty() || batch.len() != patterns.len() {
        return Err(TlraError::Protocol("batch and patterns must be nonempty and aligned".into()));
    }
    if let Some(refs) = frozen_refs {
        if refs.len() != batch.len() {
            return Err(TlraError::Protocol("frozen references must align with the batch".into()));
        }
    }
    let w = &cfg.loss_weights;
    let mut align_terms = Vec::with_capacity(batch.len());
    let mut task_terms = Vec::with_capacity(batch.len());
    let mut bank_feed = Vec::new();
    // in-graph Eq.-9 mixes per (modality, class) when prototype gradients
    // are enabled
    let mut proto_mixes: [[Vec<Var>; 2]; 3] = Default::default();

    for (i, (rec, pattern)) in batch.iter().zip(patterns).enumerate() {
        let view = apply_mask(rec, *pattern);
        let fwd = forward(tape, bound, model, &view, stage, cfg, ForwardMode::Train)?;

        if cfg.rla_enabled {
            let mut refs: [Option<Var>; 3] = [None; 3];
            match frozen_refs {
                Some(all) => {
                    for m in Modality::ALL {
                        refs[m.index()] = Some(tape.leaf(all[i][m.index()].clone()));
                    }
                }
                None => {
                    for (m, f) in &fwd.f_observed {
                        refs[m.index()] = Some(tape.detach(*f));
                    }
                    for m in pattern.missing() {
                        let h = rec.features_of(m);
                        let f = model.modal[m.index()].encode(tape, bound, tape.leaf(h.clone()));
                        refs[m.index()] = Some(tape.detach(f));
                    }
                }
            }
            let completed_pairs: Vec<(Modality, Var)> =
                fwd.completed.iter().map(|c| (c.modality, c.completed)).collect();
            align_terms.push(align_loss(tape, &fwd.q_observed, &completed_pairs, &refs, w)?);
        }
        task_terms.push(task_loss(tape, fwd.y_hat, rec.label, cfg.task_loss));

        let class = Polarity::from_label(rec.label);
        for (m, f) in &fwd.f_observed {
            bank_feed.push((*m, class, tape.value(*f).values().to_vec()));
            if cfg.prototype_grads {
                let anchor = tape.leaf(Tensor::vector(model.bank.anchor(*m, class).to_vec()));
                let alpha = tape.clamp01(tape.cosine(*f, anchor));
                let keep = tape.smul(alpha, *f);
                let fill = tape.smul(tape.affine(alpha, -1.0, 1.0), anchor);
                proto_mixes[m.index()][class.index()].push(tape.add(keep, fill));
            }
        }
    }

    let align = if align_terms.is_empty() { tape.scalar(0.0) } else { tape.mean_of(&align_terms) };
    let task = tape.mean_of(&task_terms);

    let (intra, inter) = if cfg.dla_enabled {
        if cfg.prototype_grads {
            // effective anchors: batch-mean mixed prototype where the class
            // appeared, the stored constant otherwise
            let anchors: [[Var; 2]; 3] = std::array::from_fn(|mi| {
                std::array::from_fn(|ci| {
                    let mixes = &proto_mixes[mi][ci];
                    if mixes.is_empty() {
                        let m = Modality::ALL[mi];
                        let c = Polarity::BOTH[ci];
                        tape.leaf(Tensor::vector(model.bank.anchor(m, c).to_vec()))
                    } else if mixes.len() == 1 {
                        mixes[0]
                    } else {
                        let mut acc = mixes[0];
                        for v in &mixes[1..] {
                            acc = tape.add(acc, *v);
                        }
                        tape.scale(acc, 1.0 / mixes.len() as f64)
                    }
                })
            });
            (
                intra_loss_graph(tape, &anchors, w.delta, cfg.intra_variant),
                inter_loss_graph(tape, &anchors),
            )
        } else {
            // the bank is momentum memory: these terms enter as constants
            (
                tape.scalar(intra_loss(&model.bank, w.delta, cfg.intra_variant)),
                tape.scalar(inter_loss(&model.bank)),
            )
        }
    } else {
        (tape.scalar(0.0), tape.scalar(0.0))
    };

    let total = total_loss(tape, align, intra, inter, task, w);
    let report = LossReport {
        align: tape.scalar_value(align),
        intra: tape.scalar_value(intra),
        inter: tape.scalar_value(inter),
        task: tape.scalar_value(task),
        total: tape.scalar_value(total),
    };
    if !report.total.is_finite() {
        return Err(TlraError::NonFinite(format!(
            "batch loss diverged: align={} intra={} inter={} task={}",
            report.align, report.intra, report.inter, report.task
        )));
    }
    debug_assert!(
        (report.total - total_of(report.align, report.intra, report.inter, report.task, w)).abs() < 1e-9
    );
    Ok(BatchLoss { total, report, bank_feed })
}

/// Central-difference check of the full batch objective over every
/// parameter entry. Masks are fixed (one full sample, one language-only),
/// stage 2, so completion, guidance, and voting all participate.
///
/// The alignment references are evaluated once at the unperturbed
/// parameters and injected as constants on both sides, matching their
/// detachment contract (training differentiates the loss with references
/// held fixed).
pub fn grad_check_full_loss(cfg: &TrainerConfig, batch: &[&SampleRecord], h: f64) -> Result<f64> {
    if batch.len() < 2 {
        return Err(TlraError::Protocol("grad check expects at least two samples".into()));
    }
    let dims = [
        batch[0].features_of(Modality::L).cols(),
        batch[0].features_of(Modality::A).cols(),
        batch[0].features_of(Modality::V).cols(),
    ];
    let model = Model::new(cfg, dims)?;
    let mut patterns = vec![MissingPattern::full(); batch.len()];
    patterns[1] = MissingPattern::single(Modality::L);
    let refs = compute_references(&model, batch);

    let tensors: Vec<Tensor> = model.params.iter().map(|p| p.value.clone()).collect();
    crate::numeric::grad_check(&tensors, |tape, vars| {
        let bound = BoundParams::from_vars(vars.to_vec());
        let out = batch_loss(tape, &bound, &model, batch, &patterns, Stage::Two, cfg, Some(&refs))
            .expect("grad-check objective must evaluate");
        out.total
    }, h)
}
