//! Two-stage training loop: masking, forward through both alignment
//! levels, loss assembly, optimization, prototype updates, checkpointing.

mod checkpoint;
mod model;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use model::{
    batch_loss, compute_references, forward, grad_check_full_loss, Forward, ForwardMode, FrozenRefs, FusionHead,
    Model,
};
pub use optim::{cosine_lr, AdamW};

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{random_mask_policy, FeatureBundle, MissingPattern, SampleRecord, Split};
use crate::error::{Result, TlraError};
use crate::losses::{IntraVariant, LossReport, LossWeights, TaskLossKind};
use crate::numeric::Tensor;

/// Decision-level alignment phase. Voting activates only in the second
/// stage; the first stabilizes the prototype space with soft guidance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

fn default_epochs() -> usize {
    100
}
fn default_batch_size() -> usize {
    16
}
fn default_learning_rate() -> f64 {
    1e-4
}
fn default_weight_decay() -> f64 {
    1e-4
}
fn default_eta() -> f64 {
    0.1
}
fn default_k() -> usize {
    16
}
fn default_d() -> usize {
    32
}
fn default_drop_prob() -> [f64; 3] {
    [0.3; 3]
}
fn default_intra_variant() -> IntraVariant {
    IntraVariant::Separation
}
fn default_task_loss() -> TaskLossKind {
    TaskLossKind::MeanAbsolute
}
fn default_true() -> bool {
    true
}

/// Full training configuration. JSON config files mirror these field names.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// First epoch of stage 2; defaults to `epochs / 2`.
    #[serde(default)]
    pub stage_switch_epoch: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub loss_weights: LossWeights,
    /// Prototype momentum.
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Template count K.
    #[serde(default = "default_k")]
    pub k_templates: usize,
    /// Shared sentiment space dimension.
    #[serde(default = "default_d")]
    pub d: usize,
    /// Training-time per-modality drop probabilities.
    #[serde(default = "default_drop_prob")]
    pub drop_prob: [f64; 3],
    #[serde(default = "default_intra_variant")]
    pub intra_variant: IntraVariant,
    #[serde(default = "default_task_loss")]
    pub task_loss: TaskLossKind,
    /// Share the feed-forward stage between the modal and query paths.
    #[serde(default)]
    pub share_paths: bool,
    /// Route intra/inter losses through in-graph mixed prototypes.
    #[serde(default)]
    pub prototype_grads: bool,
    /// Representation-level alignment (completion + alignment loss).
    #[serde(default = "default_true")]
    pub rla_enabled: bool,
    /// Decision-level alignment (guidance, voting, prototype losses).
    #[serde(default = "default_true")]
    pub dla_enabled: bool,
    /// Extra checkpoints written after these 1-based epochs.
    #[serde(default)]
    pub snapshot_epochs: Vec<usize>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(TlraError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TlraError::Config("batch_size must be >= 1".into()));
        }
        let switch = self.stage_switch();
        if switch == 0 || switch > self.epochs {
            return Err(TlraError::Config(format!(
                "stage_switch_epoch {switch} outside (0, epochs={}]",
                self.epochs
            )));
        }
        if self.d == 0 || self.k_templates == 0 {
            return Err(TlraError::Config("d and k_templates must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(TlraError::Config(format!("eta {} outside [0, 1]", self.eta)));
        }
        for p in self.drop_prob {
            if !(0.0..1.0).contains(&p) {
                return Err(TlraError::Config(format!("drop probability {p} outside [0, 1)")));
            }
        }
        let w = &self.loss_weights;
        for (name, v) in [
            ("lambda1", w.lambda1),
            ("lambda2", w.lambda2),
            ("lambda3", w.lambda3),
            ("lambda4", w.lambda4),
            ("lambda5", w.lambda5),
        ] {
            if v < 0.0 {
                return Err(TlraError::Config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    /// Effective first epoch of stage 2.
    pub fn stage_switch(&self) -> usize {
        self.stage_switch_epoch.unwrap_or((self.epochs / 2).max(1))
    }

    /// The no-alignment late-fusion baseline: alignment weights zeroed,
    /// completion bypassed to zero vectors, guidance and voting disabled.
    pub fn ablation_baseline(mut self) -> Self {
        self.loss_weights.lambda1 = 0.0;
        self.loss_weights.lambda2 = 0.0;
        self.loss_weights.lambda3 = 0.0;
        self.loss_weights.lambda4 = 0.0;
        self.rla_enabled = false;
        self.dla_enabled = false;
        self
    }

    /// Representation-level alignment only (no decision-level alignment).
    pub fn rla_only(mut self) -> Self {
        self.loss_weights.lambda3 = 0.0;
        self.loss_weights.lambda4 = 0.0;
        self.rla_enabled = true;
        self.dla_enabled = false;
        self
    }
}

/// Stage 1 iff `epoch < stage_switch_epoch`.
pub fn stage_of_epoch(epoch: usize, cfg: &TrainerConfig) -> Result<Stage> {
    if epoch >= cfg.epochs {
        return Err(TlraError::Config(format!("epoch {epoch} outside 0..{}", cfg.epochs)));
    }
    Ok(if epoch < cfg.stage_switch() { Stage::One } else { Stage::Two })
}

/// One optimization step: mask, forward, loss, adaptive update, then the
/// momentum bank update for every truly observed modality.
pub fn train_step(
    model: &mut Model,
    opt: &mut AdamW,
    batch: &[&SampleRecord],
    patterns: &[MissingPattern],
    stage: Stage,
    lr: f64,
    cfg: &TrainerConfig,
) -> Result<LossReport> {
    let tape = crate::numeric::Tape::new();
    let bound = model.params.bind(&tape);
    let out = batch_loss(&tape, &bound, model, batch, patterns, stage, cfg, None)?;
    tape.backward(out.total);
    let grads: Vec<Tensor> = bound.vars().iter().map(|v| tape.grad(*v)).collect();
    drop(tape);
    opt.step(&mut model.params, &grads, lr);
    for (m, class, values) in &out.bank_feed {
        model.bank.update(values, *m, *class);
    }
    Ok(out.report)
}

/// Per-epoch summary written to the training log.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub losses: LossReport,
    pub valid_acc: f64,
}

/// Artifacts produced by [`run_training`].
pub struct RunArtifacts {
    pub best_checkpoint: PathBuf,
    pub final_checkpoint: PathBuf,
    pub log_path: PathBuf,
    /// `(epoch, path)` for each requested snapshot epoch.
    pub snapshots: Vec<(usize, PathBuf)>,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_valid_acc: f64,
}

/// Trains for `cfg.epochs` with the cosine-annealed learning rate, logs
/// per-epoch loss components to CSV, and saves the best-validation-ACC and
/// final checkpoints under `out_dir`.
pub fn run_training(bundle: &FeatureBundle, cfg: &TrainerConfig, out_dir: &Path) -> Result<RunArtifacts> {
    cfg.validate()?;
    let train: Vec<&SampleRecord> = bundle.split(Split::Train);
    let valid: Vec<&SampleRecord> = bundle.split(Split::Valid);
    if train.is_empty() || valid.is_empty() {
        return Err(TlraError::Config("training needs nonempty train and valid splits".into()));
    }
    std::fs::create_dir_all(out_dir)?;

    let mut model = Model::new(cfg, bundle.dims)?;
    let mut opt = AdamW::new(&model.params, cfg.weight_decay);
    // one stream drives init (already consumed inside Model::new via its own
    // seed) and the training-time shuffling/masking
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));

    let log_path = out_dir.join("training_log.csv");
    let mut log = File::create(&log_path)?;
    writeln!(log, "epoch,align,intra,inter,task,total")?;

    let best_path = out_dir.join("checkpoint_best.json");
    let final_path = out_dir.join("checkpoint_final.json");
    let mut snapshots = Vec::new();
    let mut history = Vec::new();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0;

    let mut indices: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let stage = stage_of_epoch(epoch, cfg)?;
        let lr = cosine_lr(cfg.learning_rate, epoch, cfg.epochs);
        indices.shuffle(&mut rng);

        let mut sums = LossReport { align: 0.0, intra: 0.0, inter: 0.0, task: 0.0, total: 0.0 };
        let mut seen = 0usize;
        for chunk in indices.chunks(cfg.batch_size) {
            let batch: Vec<&SampleRecord> = chunk.iter().map(|i| train[*i]).collect();
            let patterns = random_mask_policy(batch.len(), cfg.drop_prob, &mut rng)?;
            let report = train_step(&mut model, &mut opt, &batch, &patterns, stage, lr, cfg)?;
            let n = batch.len() as f64;
            sums.align += report.align * n;
            sums.intra += report.intra * n;
            sums.inter += report.inter * n;
            sums.task += report.task * n;
            sums.total += report.total * n;
            seen += batch.len();
        }
        let n = seen as f64;
        let losses = LossReport {
            align: sums.align / n,
            intra: sums.intra / n,
            inter: sums.inter / n,
            task: sums.task / n,
            total: sums.total / n,
        };

        let valid_acc = validation_accuracy(&model, &valid, stage, cfg)?;
        writeln!(
            log,
            "{},{},{},{},{},{}",
            epoch, losses.align, losses.intra, losses.inter, losses.task, losses.total
        )?;
        history.push(EpochStats { epoch, losses, valid_acc });

        if valid_acc > best_acc {
            best_acc = valid_acc;
            best_epoch = epoch;
            save_checkpoint(&best_path, &model, cfg, epoch)?;
        }
        let completed = epoch + 1;
        if cfg.snapshot_epochs.contains(&completed) {
            let path = out_dir.join(format!("checkpoint_epoch{completed}.json"));
            save_checkpoint(&path, &model, cfg, epoch)?;
            snapshots.push((completed, path));
        }
    }
    save_checkpoint(&final_path, &model, cfg, cfg.epochs - 1)?;
    Ok(RunArtifacts {
        best_checkpoint: best_path,
        final_checkpoint: final_path,
        log_path,
        snapshots,
        history,
        best_epoch,
        best_valid_acc: best_acc,
    })
}

/// Full-pattern binary accuracy on a split, at the given stage.
fn validation_accuracy(model: &Model, records: &[&SampleRecord], stage: Stage, cfg: &TrainerConfig) -> Result<f64> {
    let preds: Vec<(f64, f64)> = records
        .iter()
        .map(|rec| {
            let view = crate::data::apply_mask(rec, MissingPattern::full());
            let tape = crate::numeric::Tape::new();
            let bound = model.params.bind(&tape);
            let fwd = forward(&tape, &bound, model, &view, stage, cfg, ForwardMode::Eval)?;
            Ok((tape.scalar_value(fwd.y_hat), rec.label))
        })
        .collect::<Result<_>>()?;
    let (acc, _) = crate::harness::binary_metrics(&preds)?;
    Ok(acc)
}

#[cfg(test)]
mod tests;
