//! Feature bundles: file loading, synthetic generation, and
//! missing-modality masking.
//!
//! Records always store all three modalities; masking happens through
//! [`MaskedSample`] views so the true features stay available as alignment
//! targets during training.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TlraError};
use crate::numeric::Tensor;

/// The three input channels, ordered `L < A < V` for deterministic iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    /// Language
    L,
    /// Audio
    A,
    /// Visual
    V,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::L, Modality::A, Modality::V];

    pub fn index(self) -> usize {
        match self {
            Modality::L => 0,
            Modality::A => 1,
            Modality::V => 2,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Modality::L => 'L',
            Modality::A => 'A',
            Modality::V => 'V',
        }
    }
}

/// Per-modality storage with `Index`-style access by [`Modality`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityMap<T>(pub [T; 3]);

impl<T> ModalityMap<T> {
    pub fn get(&self, m: Modality) -> &T {
        &self.0[m.index()]
    }

    pub fn get_mut(&mut self, m: Modality) -> &mut T {
        &mut self.0[m.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Modality, &T)> {
        Modality::ALL.iter().map(move |m| (*m, &self.0[m.index()]))
    }
}

/// Which modalities are observed for a sample or an evaluation condition.
///
/// Always nonempty: the all-missing pattern is not constructible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MissingPattern {
    observed: [bool; 3],
}

impl MissingPattern {
    pub fn new(observed: [bool; 3]) -> Result<Self> {
        if !observed.iter().any(|o| *o) {
            return Err(TlraError::Config("missing pattern must observe at least one modality".into()));
        }
        Ok(Self { observed })
    }

    pub fn full() -> Self {
        Self { observed: [true; 3] }
    }

    pub fn single(m: Modality) -> Self {
        let mut observed = [false; 3];
        observed[m.index()] = true;
        Self { observed }
    }

    pub fn from_set(mods: &[Modality]) -> Result<Self> {
        let mut observed = [false; 3];
        for m in mods {
            observed[m.index()] = true;
        }
        Self::new(observed)
    }

    pub fn is_observed(&self, m: Modality) -> bool {
        self.observed[m.index()]
    }

    pub fn observed(&self) -> impl Iterator<Item = Modality> + '_ {
        Modality::ALL.into_iter().filter(move |m| self.observed[m.index()])
    }

    pub fn missing(&self) -> impl Iterator<Item = Modality> + '_ {
        Modality::ALL.into_iter().filter(move |m| !self.observed[m.index()])
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|o| **o).count()
    }

    pub fn is_full(&self) -> bool {
        self.observed_count() == 3
    }

    /// The seven evaluation conditions, in the row order used by reports:
    /// L, A, V, LA, LV, AV, LAV.
    pub fn all_seven() -> Vec<MissingPattern> {
        let l = Modality::L;
        let a = Modality::A;
        let v = Modality::V;
        vec![
            Self::single(l),
            Self::single(a),
            Self::single(v),
            Self::from_set(&[l, a]).unwrap(),
            Self::from_set(&[l, v]).unwrap(),
            Self::from_set(&[a, v]).unwrap(),
            Self::full(),
        ]
    }
}

impl fmt::Display for MissingPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in self.observed() {
            write!(f, "{}", m.letter())?;
        }
        Ok(())
    }
}

impl FromStr for MissingPattern {
    type Err = TlraError;

    /// Parses pattern letters in any order and case, e.g. `"AVL"`, `"la"`.
    fn from_str(s: &str) -> Result<Self> {
        let mut observed = [false; 3];
        for ch in s.chars() {
            let m = match ch.to_ascii_uppercase() {
                'L' => Modality::L,
                'A' => Modality::A,
                'V' => Modality::V,
                other => {
                    return Err(TlraError::Config(format!("invalid modality letter '{other}' in pattern \"{s}\"")))
                }
            };
            observed[m.index()] = true;
        }
        Self::new(observed)
    }
}

/// Dataset split assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// One sample: an id, a continuous sentiment label in [-3, 3], and a
/// feature sequence per modality.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub id: String,
    pub label: f64,
    pub split: Split,
    pub features: ModalityMap<Tensor>,
}

impl SampleRecord {
    pub fn features_of(&self, m: Modality) -> &Tensor {
        self.features.get(m)
    }
}

/// A dataset of records with consistent per-modality feature dimensions.
#[derive(Debug, Clone)]
pub struct FeatureBundle {
    /// `d_l, d_a, d_v`
    pub dims: [usize; 3],
    pub records: Vec<SampleRecord>,
}

impl FeatureBundle {
    pub fn dim_of(&self, m: Modality) -> usize {
        self.dims[m.index()]
    }

    pub fn split(&self, split: Split) -> Vec<&SampleRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }
}

/// View of a record restricted to a missing pattern. The record itself is
/// untouched; masked features are simply inaccessible through the view.
#[derive(Debug, Clone, Copy)]
pub struct MaskedSample<'a> {
    record: &'a SampleRecord,
    pattern: MissingPattern,
}

impl<'a> MaskedSample<'a> {
    pub fn features(&self, m: Modality) -> Option<&'a Tensor> {
        if self.pattern.is_observed(m) {
            Some(self.record.features.get(m))
        } else {
            None
        }
    }

    pub fn pattern(&self) -> MissingPattern {
        self.pattern
    }

    pub fn label(&self) -> f64 {
        self.record.label
    }

    pub fn id(&self) -> &str {
        &self.record.id
    }

    /// The unmasked record, used only to compute alignment references.
    pub fn full_record(&self) -> &'a SampleRecord {
        self.record
    }
}

/// Restricts a record to the observed modalities of `pattern`.
pub fn apply_mask<'a>(record: &'a SampleRecord, pattern: MissingPattern) -> MaskedSample<'a> {
    MaskedSample { record, pattern }
}

/// Per-sample training masks: each modality drops independently with its
/// probability; if all three would drop, one survivor is drawn uniformly.
pub fn random_mask_policy(n: usize, drop_prob: [f64; 3], rng: &mut ChaCha8Rng) -> Result<Vec<MissingPattern>> {
    for p in drop_prob {
        if !(0.0..1.0).contains(&p) {
            return Err(TlraError::Config(format!("drop probability {p} outside [0, 1)")));
        }
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut observed = [false; 3];
        for (o, p) in observed.iter_mut().zip(drop_prob) {
            *o = rng.gen_range(0.0..1.0) >= p;
        }
        if !observed.iter().any(|o| *o) {
            observed[rng.gen_range(0..3usize)] = true;
        }
        out.push(MissingPattern::new(observed).expect("nonempty by construction"));
    }
    Ok(out)
}

// ---- JSONL bundle format ----

#[derive(Serialize, Deserialize)]
struct BundleHeader {
    format: String,
    d_l: usize,
    d_a: usize,
    d_v: usize,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: String,
    label: f64,
    split: Split,
    #[serde(rename = "L")]
    l: Vec<Vec<f64>>,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    v: Vec<Vec<f64>>,
}

const BUNDLE_FORMAT: &str = "tlra-bundle-v1";

fn rows_to_tensor(id: &str, m: Modality, rows: &[Vec<f64>], want_dim: usize) -> Result<Tensor> {
    if rows.is_empty() {
        return Err(TlraError::Schema {
            id: id.to_string(),
            msg: format!("modality {} has an empty sequence", m.letter()),
        });
    }
    let mut vals = Vec::with_capacity(rows.len() * want_dim);
    for row in rows {
        if row.len() != want_dim {
            return Err(TlraError::Schema {
                id: id.to_string(),
                msg: format!("modality {} row length {} does not match header dim {}", m.letter(), row.len(), want_dim),
            });
        }
        vals.extend_from_slice(row);
    }
    Tensor::matrix(rows.len(), want_dim, vals)
}

/// Loads a JSONL feature bundle, validating every record against the header.
pub fn load_bundle(path: &Path) -> Result<FeatureBundle> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let (_, header_line) = lines
        .next()
        .ok_or_else(|| TlraError::Parse { line: 1, msg: "empty file, expected header".into() })?;
    let header_line = header_line?;
    let header: BundleHeader = serde_json::from_str(&header_line)
        .map_err(|e| TlraError::Parse { line: 1, msg: format!("bad header: {e}") })?;
    if header.format != BUNDLE_FORMAT {
        return Err(TlraError::Parse { line: 1, msg: format!("unknown format \"{}\"", header.format) });
    }

    let dims = [header.d_l, header.d_a, header.d_v];
    let mut records = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine =
            serde_json::from_str(&line).map_err(|e| TlraError::Parse { line: lineno, msg: e.to_string() })?;
        let features = ModalityMap([
            rows_to_tensor(&rec.id, Modality::L, &rec.l, dims[0])?,
            rows_to_tensor(&rec.id, Modality::A, &rec.a, dims[1])?,
            rows_to_tensor(&rec.id, Modality::V, &rec.v, dims[2])?,
        ]);
        records.push(SampleRecord { id: rec.id, label: rec.label, split: rec.split, features });
    }
    Ok(FeatureBundle { dims, records })
}

/// Writes a bundle in the JSONL format accepted by [`load_bundle`].
pub fn save_bundle(bundle: &FeatureBundle, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = BundleHeader {
        format: BUNDLE_FORMAT.to_string(),
        d_l: bundle.dims[0],
        d_a: bundle.dims[1],
        d_v: bundle.dims[2],
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for rec in &bundle.records {
        let to_rows = |t: &Tensor| -> Vec<Vec<f64>> {
            t.values().chunks_exact(t.cols()).map(|c| c.to_vec()).collect()
        };
        let line = RecordLine {
            id: rec.id.clone(),
            label: rec.label,
            split: rec.split,
            l: to_rows(rec.features.get(Modality::L)),
            a: to_rows(rec.features.get(Modality::A)),
            v: to_rows(rec.features.get(Modality::V)),
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    Ok(())
}

// ---- synthetic generation ----

/// Configuration for the synthetic multimodal generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    /// `d_l, d_a, d_v`
    pub dims: [usize; 3],
    /// `T_l, T_a, T_v`
    pub seq_lens: [usize; 3],
    /// Additive Gaussian noise scale per modality.
    pub noise: [f64; 3],
    /// Strength of the shared sentiment factor per modality. Language is
    /// dominant by default, mirroring MOSI-style data.
    pub signal: [f64; 3],
    /// Per-modality probability that a sample's channel is unreliable: the
    /// shared factor is replaced by an independent draw, so the modality
    /// confidently encodes the wrong sentiment. Only cross-modal
    /// disagreement can reveal it.
    pub corrupt_prob: [f64; 3],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_train: 700,
            n_valid: 150,
            n_test: 150,
            dims: [12, 8, 16],
            seq_lens: [6, 4, 8],
            noise: [0.5; 3],
            signal: [1.0, 0.5, 0.5],
            corrupt_prob: [0.0, 0.25, 0.25],
            seed: 0,
        }
    }
}

/// Number of nuisance latent factors per modality (besides the shared z).
const NUISANCE_DIM: usize = 4;

/// Generates a bundle where every modality observes the shared latent
/// sentiment `z ~ U[-3, 3]` through a fixed random linear map applied to
/// `[z, nuisance]`, plus additive Gaussian noise.
///
/// The nuisance factors are drawn per sample and per modality and stay
/// constant across the sequence rows, so they do not average away under
/// temporal pooling; the additive noise is drawn per entry. A corrupted
/// channel runs the same map on an independent sentiment draw.
pub fn synth_generate(cfg: &SynthConfig) -> Result<FeatureBundle> {
    let n = cfg.n_train + cfg.n_valid + cfg.n_test;
    if n == 0 {
        return Err(TlraError::Config("synth_generate needs at least one sample".into()));
    }
    for (d, t) in cfg.dims.iter().zip(cfg.seq_lens) {
        if *d == 0 || t == 0 {
            return Err(TlraError::Config("dims and seq_lens must be >= 1".into()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let latent = 1 + NUISANCE_DIM;
    let scale = 1.0 / (latent as f64).sqrt();
    // fixed per-dataset mixing maps, one per modality: d_m × (1 + nuisance),
    // with the shared-factor column scaled by the modality's signal strength
    let maps: Vec<Vec<f64>> = cfg
        .dims
        .iter()
        .zip(cfg.signal)
        .map(|(d, sig)| {
            (0..d * latent)
                .map(|idx| {
                    let col_scale = if idx % latent == 0 { sig } else { 1.0 };
                    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng) * scale * col_scale
                })
                .collect()
        })
        .collect();

    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let z = rng.gen_range(-3.0..=3.0);
        let split = if i < cfg.n_train {
            Split::Train
        } else if i < cfg.n_train + cfg.n_valid {
            Split::Valid
        } else {
            Split::Test
        };
        let mut feats = Vec::with_capacity(3);
        for mi in 0..3 {
            let d = cfg.dims[mi];
            let t = cfg.seq_lens[mi];
            let mut u = vec![z];
            for _ in 0..NUISANCE_DIM {
                u.push(<StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng));
            }
            let map = &maps[mi];
            let mut vals = Vec::with_capacity(t * d);
            for _row in 0..t {
                for j in 0..d {
                    let mut s = 0.0;
                    for (k, uk) in u.iter().enumerate() {
                        s += map[j * latent + k] * uk;
                    }
                    s += cfg.noise[mi] * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
                    vals.push(s);
                }
            }
            feats.push(Tensor::matrix(t, d, vals)?);
        }
        let features = ModalityMap([feats.remove(0), feats.remove(0), feats.remove(0)]);
        records.push(SampleRecord { id: format!("synth-{i:05}"), label: z, split, features });
    }
    Ok(FeatureBundle { dims: cfg.dims, records })
}
