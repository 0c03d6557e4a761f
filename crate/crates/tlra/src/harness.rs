//! Evaluation harness: binary metrics, per-pattern missing-modality
//! sweeps, and the prototype-similarity export.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{apply_mask, FeatureBundle, MissingPattern, Modality, SampleRecord, Split};
use crate::error::{Result, TlraError};
use crate::numeric::{cosine_sim, Tape};
use crate::prototypes::Polarity;
use crate::trainer::{forward, ForwardMode, Model, Stage, TrainerConfig};

/// Binary ACC and F1 with class = non-negative iff score >= 0.
///
/// F1 treats the non-negative class as positive; if precision and recall
/// are both zero it is defined as 0.
pub fn binary_metrics(predictions: &[(f64, f64)]) -> Result<(f64, f64)> {
    if predictions.is_empty() {
        return Err(TlraError::Degenerate("binary_metrics on empty prediction list".into()));
    }
    let (mut tp, mut fp, mut tn, mut fnn) = (0usize, 0usize, 0usize, 0usize);
    for (y_hat, y) in predictions {
        let pred_pos = *y_hat >= 0.0;
        let true_pos = *y >= 0.0;
        match (pred_pos, true_pos) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fnn += 1,
        }
    }
    let n = predictions.len() as f64;
    let acc = (tp + tn) as f64 / n;
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fnn > 0 { tp as f64 / (tp + fnn) as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok((acc, f1))
}

/// Metrics for one evaluation pattern.
#[derive(Debug, Clone, Copy)]
pub struct PatternMetrics {
    pub pattern: MissingPattern,
    pub acc: f64,
    pub f1: f64,
    pub n: usize,
}

/// Per-pattern evaluation table, one row per requested pattern.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub rows: Vec<PatternMetrics>,
}

impl MetricReport {
    pub fn mean_acc(&self) -> f64 {
        self.rows.iter().map(|r| r.acc).sum::<f64>() / self.rows.len() as f64
    }

    pub fn acc_of(&self, pattern: MissingPattern) -> Option<f64> {
        self.rows.iter().find(|r| r.pattern == pattern).map(|r| r.acc)
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>8} {:>8} {:>8}", "pattern", "ACC", "F1", "n")?;
        for row in &self.rows {
            writeln!(f, "{:<10} {:>8.4} {:>8.4} {:>8}", row.pattern.to_string(), row.acc, row.f1, row.n)?;
        }
        Ok(())
    }
}

/// Scalar prediction for one record under a deterministic mask, stage 2.
pub fn predict(model: &Model, cfg: &TrainerConfig, record: &SampleRecord, pattern: MissingPattern) -> Result<f64> {
    let view = apply_mask(record, pattern);
    let tape = Tape::new();
    let bound = model.params.bind(&tape);
    let fwd = forward(&tape, &bound, model, &view, Stage::Two, cfg, ForwardMode::Eval)?;
    Ok(tape.scalar_value(fwd.y_hat))
}

/// Runs the stage-2 forward on every test sample under each pattern.
pub fn evaluate_patterns(
    model: &Model,
    cfg: &TrainerConfig,
    bundle: &FeatureBundle,
    patterns: &[MissingPattern],
) -> Result<MetricReport> {
    let test: Vec<&SampleRecord> = bundle.split(Split::Test);
    if test.is_empty() {
        return Err(TlraError::Degenerate("test split is empty".into()));
    }
    for m in Modality::ALL {
        if bundle.dim_of(m) != model.dims[m.index()] {
            return Err(TlraError::Schema {
                id: format!("bundle d_{}", m.letter().to_ascii_lowercase()),
                msg: format!("dimension {} does not match checkpoint {}", bundle.dim_of(m), model.dims[m.index()]),
            });
        }
    }
    let mut rows = Vec::with_capacity(patterns.len());
    for pattern in patterns {
        let preds: Vec<(f64, f64)> = test
            .iter()
            .map(|rec| Ok((predict(model, cfg, rec, *pattern)?, rec.label)))
            .collect::<Result<_>>()?;
        let (acc, f1) = binary_metrics(&preds)?;
        rows.push(PatternMetrics { pattern: *pattern, acc, f1, n: preds.len() });
    }
    Ok(MetricReport { rows })
}

/// Parses a comma-separated pattern list such as `"L,AV,AVL"`.
pub fn parse_patterns(s: &str) -> Result<Vec<MissingPattern>> {
    s.split(',').map(|part| part.trim().parse()).collect()
}

/// Similarities between sampled test items and the six per-modality class
/// anchors.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    pub epoch: usize,
    pub ids: Vec<String>,
    pub labels: Vec<f64>,
    /// One row per sample: `[L_P, L_N, A_P, A_N, V_P, V_N]`, entries in [-1, 1].
    pub rows: Vec<[f64; 6]>,
}

impl SimilarityMatrix {
    /// Mean |cosine| between each sample's modal features and its own-class
    /// anchors.
    pub fn mean_own_class_similarity(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for (row, label) in self.rows.iter().zip(&self.labels) {
            let class = Polarity::from_label(*label);
            for m in 0..3 {
                total += row[2 * m + class.index()].abs();
                count += 1;
            }
        }
        total / count as f64
    }
}

/// Deterministically selects ten positive and ten negative test samples and
/// computes their full-pattern modal features' cosines against every
/// prototype anchor. Rows 0-9 are the positive samples, rows 10-19 the
/// negative ones.
pub fn similarity_matrix(model: &Model, bundle: &FeatureBundle, seed: u64, epoch: usize) -> Result<SimilarityMatrix> {
    let test: Vec<&SampleRecord> = bundle.split(Split::Test);
    let mut order: Vec<usize> = (0..test.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for idx in order {
        let rec = test[idx];
        if rec.label >= 0.0 && pos.len() < 10 {
            pos.push(rec);
        } else if rec.label < 0.0 && neg.len() < 10 {
            neg.push(rec);
        }
        if pos.len() == 10 && neg.len() == 10 {
            break;
        }
    }
    if pos.len() < 10 || neg.len() < 10 {
        return Err(TlraError::Degenerate(format!(
            "similarity export needs 10 samples per class, found {} positive / {} negative",
            pos.len(),
            neg.len()
        )));
    }

    let mut ids = Vec::with_capacity(20);
    let mut labels = Vec::with_capacity(20);
    let mut rows = Vec::with_capacity(20);
    for rec in pos.into_iter().chain(neg) {
        let tape = Tape::new();
        let bound = model.params.bind(&tape);
        let mut row = [0.0; 6];
        for m in Modality::ALL {
            let h = tape.leaf(rec.features_of(m).clone());
            let f = model.modal[m.index()].encode(&tape, &bound, h);
            let fv = tape.value(f);
            for c in Polarity::BOTH {
                row[2 * m.index() + c.index()] = cosine_sim(fv.values(), model.bank.anchor(m, c))?;
            }
        }
        ids.push(rec.id.clone());
        labels.push(rec.label);
        rows.push(row);
    }
    Ok(SimilarityMatrix { epoch, ids, labels, rows })
}

/// Writes the similarity matrix as CSV: a header naming the six prototype
/// columns, then twenty rows.
pub fn export_similarity(
    model: &Model,
    bundle: &FeatureBundle,
    seed: u64,
    epoch: usize,
    path: &Path,
) -> Result<SimilarityMatrix> {
    let matrix = similarity_matrix(model, bundle, seed, epoch)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "L_P,L_N,A_P,A_N,V_P,V_N")?;
    for row in &matrix.rows {
        writeln!(out, "{},{},{},{},{},{}", row[0], row[1], row[2], row[3], row[4], row[5])?;
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions() {
        let preds = vec![(1.0, 2.0), (-0.5, -1.0), (0.0, 0.0)];
        let (acc, f1) = binary_metrics(&preds).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!(f1, 1.0);
    }

    #[test]
    fn all_positive_on_balanced_set() {
        // predictions all non-negative on a 50/50 set
        let preds = vec![(1.0, 1.0), (1.0, 1.0), (1.0, -1.0), (1.0, -1.0)];
        let (acc, f1) = binary_metrics(&preds).unwrap();
        assert_eq!(acc, 0.5);
        // precision 0.5, recall 1.0 -> F1 = 2/3
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn hand_enumerated_confusion_matrix() {
        // {(1,1),(−1,1),(1,−1),(−1,−1)}: tp=1 fn=1 fp=1 tn=1
        let preds = vec![(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)];
        let (acc, f1) = binary_metrics(&preds).unwrap();
        assert_eq!(acc, 0.5);
        assert_eq!(f1, 0.5);
    }

    #[test]
    fn empty_positive_set_defines_f1_zero() {
        let preds = vec![(-1.0, -1.0), (-2.0, -0.5)];
        let (acc, f1) = binary_metrics(&preds).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!(f1, 0.0);
        assert!(binary_metrics(&[]).is_err());
    }

    #[test]
    fn pattern_list_parsing() {
        let ps = parse_patterns("L,AV,AVL").unwrap();
        assert_eq!(ps.len(), 3);
        assert_eq!(ps[0], MissingPattern::single(Modality::L));
        assert_eq!(ps[1].to_string(), "AV");
        assert_eq!(ps[2], MissingPattern::full());
        assert!(parse_patterns("L,,V").is_err());
        assert!(parse_patterns("LX").is_err());
    }

    proptest! {
        #[test]
        fn f1_matches_confusion_oracle(
            preds in proptest::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 1..200)
        ) {
            let (acc, f1) = binary_metrics(&preds).unwrap();
            // independent oracle over the four cells
            let tp = preds.iter().filter(|(p, y)| *p >= 0.0 && *y >= 0.0).count() as f64;
            let fp = preds.iter().filter(|(p, y)| *p >= 0.0 && *y < 0.0).count() as f64;
            let tn = preds.iter().filter(|(p, y)| *p < 0.0 && *y < 0.0).count() as f64;
            let fnn = preds.iter().filter(|(p, y)| *p < 0.0 && *y >= 0.0).count() as f64;
            let acc2 = (tp + tn) / preds.len() as f64;
            let f12 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fnn) };
            prop_assert!((acc - acc2).abs() < 1e-12);
            prop_assert!((f1 - f12).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&acc) && (0.0..=1.0).contains(&f1));
        }
    }
}
