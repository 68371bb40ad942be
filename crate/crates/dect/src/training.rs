//! The classifier head, the two-term loss, the warmup/decay schedule, and the
//! joint optimization loop over fused representations and synthetic samples.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::augmentation::SyntheticTranscript;
use crate::corpus::{Corpus, Label, Transcript};
use crate::encoding::{gelu, gelu_deriv, EmbeddingEncoder, EncodingError, FusionParams, Pooling};
use crate::extraction::{ArtifactStore, ExtractionError};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("logits contain non-finite values")]
    NonFiniteLogits,
    #[error("schedule step {step} outside [0, {total_steps}]")]
    StepOutOfRange { step: usize, total_steps: usize },
    #[error("non-finite gradient; step aborted")]
    NonFiniteGradient,
    #[error("synthetic sample `{id}` is sourced outside the training split")]
    ProvenanceLeak { id: String },
    #[error("no extraction artifact for training transcript `{id}`")]
    MissingArtifact { id: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Softmax cross-entropy of a logit vector against a class index, computed
/// with the usual max-shift for stability.
pub fn cross_entropy_logits(logits: &[f64], class: usize) -> Result<f64, TrainingError> {
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(TrainingError::NonFiniteLogits);
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[class])
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// The two loss terms and their sum; `total` is exactly `l_cls + l_syn`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_syn: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l_cls: f64, l_syn: f64) -> Self {
        LossBreakdown {
            l_cls,
            l_syn,
            total: l_cls + l_syn,
        }
    }
}

/// Joint loss of one sample: cross-entropy of the fused-representation logits
/// plus cross-entropy of the synthetic-sample logits.
pub fn compute_loss(
    logits_amr: &[f64],
    label: Label,
    logits_syn: &[f64],
    syn_label: Label,
) -> Result<LossBreakdown, TrainingError> {
    let l_cls = cross_entropy_logits(logits_amr, label.class_index())?;
    let l_syn = cross_entropy_logits(logits_syn, syn_label.class_index())?;
    Ok(LossBreakdown::new(l_cls, l_syn))
}

/// Training hyperparameters. Defaults: 50 epochs, batch 8, lr 1.5e-5, weight
/// decay 0.05, warmup ratio 0.01, five seeds, gradient clip 1.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub seeds: Vec<u64>,
    pub grad_clip: f64,
    pub w_cls: f64,
    pub w_syn: f64,
    pub head_hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 8,
            base_lr: 1.5e-5,
            weight_decay: 0.05,
            warmup_ratio: 0.01,
            seeds: vec![1, 2, 3, 4, 5],
            grad_clip: 1.0,
            w_cls: 1.0,
            w_syn: 1.0,
            head_hidden: vec![64],
        }
    }
}

/// Piecewise-linear schedule: 0 → base_lr over `ceil(warmup_ratio·total)`
/// steps, then base_lr → 0 at `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, cfg: &TrainConfig) -> Result<f64, TrainingError> {
    if step > total_steps {
        return Err(TrainingError::StepOutOfRange { step, total_steps });
    }
    let warmup = (cfg.warmup_ratio * total_steps as f64).ceil() as usize;
    if warmup > 0 && step <= warmup {
        return Ok(cfg.base_lr * step as f64 / warmup as f64);
    }
    if total_steps == warmup {
        return Ok(cfg.base_lr);
    }
    Ok(cfg.base_lr * (total_steps - step) as f64 / (total_steps - warmup) as f64)
}

/// MLP over a fixed-size representation; GeLU between hidden layers, two
/// output logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub sizes: Vec<usize>,
    /// Per layer, sizes[l] × sizes[l+1] row-major.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl ClassifierHead {
    /// Hidden layers get fan-based uniform init; the output layer starts at
    /// zero so logits are shaped entirely by training, which keeps the head
    /// trainable even at very small learning rates.
    pub fn init(input_dim: usize, hidden: &[usize], seed: u64) -> Self {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let layers = sizes.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            if l + 1 == layers {
                weights.push(vec![0.0; fan_in * fan_out]);
            } else {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                weights.push(
                    (0..fan_in * fan_out)
                        .map(|_| rng.gen_range(-bound..bound))
                        .collect(),
                );
            }
            biases.push(vec![0.0; fan_out]);
        }
        ClassifierHead {
            sizes,
            weights,
            biases,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    fn layer_forward(&self, l: usize, x: &[f64]) -> Vec<f64> {
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        let mut z = self.biases[l].clone();
        let w = &self.weights[l];
        for (i, xi) in x.iter().enumerate().take(fan_in) {
            if *xi == 0.0 {
                continue;
            }
            let row = &w[i * fan_out..(i + 1) * fan_out];
            for (zj, wij) in z.iter_mut().zip(row) {
                *zj += xi * wij;
            }
        }
        z
    }

    /// Logits for one representation.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut act = x.to_vec();
        let layers = self.sizes.len() - 1;
        for l in 0..layers {
            let z = self.layer_forward(l, &act);
            act = if l + 1 < layers {
                z.into_iter().map(gelu).collect()
            } else {
                z
            };
        }
        act
    }

    /// Forward pass retaining every pre-activation and activation.
    fn forward_cached(&self, x: &[f64]) -> HeadCache {
        let layers = self.sizes.len() - 1;
        let mut acts = vec![x.to_vec()];
        let mut pres = Vec::new();
        for l in 0..layers {
            let z = self.layer_forward(l, acts.last().unwrap());
            pres.push(z.clone());
            let a = if l + 1 < layers {
                z.into_iter().map(gelu).collect()
            } else {
                z
            };
            acts.push(a);
        }
        HeadCache { acts, pres }
    }

    /// Backpropagates `dlogits`, accumulating into `grads` and returning the
    /// gradient w.r.t. the input representation.
    fn backward(&self, cache: &HeadCache, dlogits: &[f64], grads: &mut HeadGrads) -> Vec<f64> {
        let layers = self.sizes.len() - 1;
        let mut delta = dlogits.to_vec();
        for l in (0..layers).rev() {
            let fan_in = self.sizes[l];
            let fan_out = self.sizes[l + 1];
            if l + 1 < layers {
                // delta currently w.r.t. activation; convert to pre-activation.
                for (dj, zj) in delta.iter_mut().zip(&cache.pres[l]) {
                    *dj *= gelu_deriv(*zj);
                }
            }
            let input = &cache.acts[l];
            for (i, xi) in input.iter().enumerate().take(fan_in) {
                if *xi != 0.0 {
                    let grow = &mut grads.weights[l][i * fan_out..(i + 1) * fan_out];
                    for (g, dj) in grow.iter_mut().zip(&delta) {
                        *g += xi * dj;
                    }
                }
            }
            for (g, dj) in grads.biases[l].iter_mut().zip(&delta) {
                *g += dj;
            }
            let mut dinput = vec![0.0; fan_in];
            let w = &self.weights[l];
            for (i, di) in dinput.iter_mut().enumerate() {
                let row = &w[i * fan_out..(i + 1) * fan_out];
                *di = row.iter().zip(&delta).map(|(wij, dj)| wij * dj).sum();
            }
            delta = dinput;
        }
        delta
    }
}

struct HeadCache {
    acts: Vec<Vec<f64>>,
    pres: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl HeadGrads {
    fn zeros_like(head: &ClassifierHead) -> Self {
        HeadGrads {
            weights: head.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: head.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

/// Which pipeline components are active; disabled legs fall back to the raw
/// transcript embedding (atom) or a zero vector (marker), and `lslp = false`
/// drops the synthetic loss term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentFlags {
    pub atom: bool,
    pub marker: bool,
    pub lslp: bool,
}

impl Default for ComponentFlags {
    fn default() -> Self {
        ComponentFlags {
            atom: true,
            marker: true,
            lslp: true,
        }
    }
}

/// What representation feeds the head: the fused AMR or the pooled raw
/// transcript embedding (fusion bypassed).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    Amr,
    Transcript,
}

/// All trainable state: encoder table, fusion layer, classifier head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DectModel {
    pub encoder: EmbeddingEncoder,
    pub fusion: FusionParams,
    pub head: ClassifierHead,
    pub input_mode: InputMode,
    pub flags: ComponentFlags,
    pub pooling: Pooling,
}

impl DectModel {
    /// Logits via the inference path (the synthetic leg is never consulted).
    pub fn logits(&self, feats: &SampleFeatures) -> Vec<f64> {
        match self.input_mode {
            InputMode::Transcript => {
                let x = self.encoder.mean_rows(&feats.raw_rows);
                self.head.forward(&x)
            }
            InputMode::Amr => {
                let e_atom = self.encoder.mean_rows(&feats.atom_rows);
                let e_marker = match &feats.marker_rows {
                    Some(rows) => self.encoder.mean_rows(rows),
                    None => vec![0.0; self.encoder.dim()],
                };
                let mut concat = e_atom;
                concat.extend_from_slice(&e_marker);
                let z = self.fusion.preactivation(&concat);
                let amr: Vec<f64> = z.into_iter().map(gelu).collect();
                self.head.forward(&amr)
            }
        }
    }

    pub fn predict(&self, feats: &SampleFeatures) -> Label {
        let logits = self.logits(feats);
        Label::from_class_index(if logits[1] > logits[0] { 1 } else { 0 })
    }

    /// Hex digest over all parameter bits in a fixed order.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.encoder.table() {
            h.update(v.to_bits().to_le_bytes());
        }
        for v in self.fusion.weights.iter().chain(self.fusion.bias.iter()) {
            h.update(v.to_bits().to_le_bytes());
        }
        for layer in self.head.weights.iter().chain(self.head.biases.iter()) {
            for v in layer {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Token-row views of the documents one sample contributes.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFeatures {
    /// Atom-leg rows (raw transcript rows when the atom component is off).
    pub atom_rows: Vec<usize>,
    /// Marker-leg rows; `None` zeroes the leg.
    pub marker_rows: Option<Vec<usize>>,
    /// Raw transcript rows (always present; the Transcript input mode and
    /// atom-off fallback read these).
    pub raw_rows: Vec<usize>,
}

/// One training sample: features, gold class, and synthetic partners.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub id: String,
    pub class: usize,
    pub features: SampleFeatures,
    /// Synthetic partners derived from this sample: (token rows, class).
    pub syn: Vec<(Vec<usize>, usize)>,
}

/// Builds the token-row features for one transcript under the given flags.
pub fn build_features(
    transcript: &Transcript,
    artifact_text: Option<(&str, &str)>,
    encoder: &EmbeddingEncoder,
    flags: ComponentFlags,
    input_mode: InputMode,
) -> Result<SampleFeatures, TrainingError> {
    let (raw_rows, _) = encoder.token_rows(&transcript.dialogue_text());
    if input_mode == InputMode::Transcript {
        return Ok(SampleFeatures {
            atom_rows: raw_rows.clone(),
            marker_rows: None,
            raw_rows,
        });
    }
    let atom_rows = if flags.atom {
        let (atom_text, _) = artifact_text.ok_or_else(|| TrainingError::MissingArtifact {
            id: transcript.id.clone(),
        })?;
        if atom_text.trim().is_empty() {
            return Err(TrainingError::MissingArtifact {
                id: transcript.id.clone(),
            });
        }
        encoder.token_rows(atom_text).0
    } else {
        raw_rows.clone()
    };
    let marker_rows = if flags.marker {
        let (_, marker_text) = artifact_text.ok_or_else(|| TrainingError::MissingArtifact {
            id: transcript.id.clone(),
        })?;
        if marker_text.trim().is_empty() {
            None
        } else {
            Some(encoder.token_rows(marker_text).0)
        }
    } else {
        None
    };
    Ok(SampleFeatures {
        atom_rows,
        marker_rows,
        raw_rows,
    })
}

fn needs_artifact(flags: ComponentFlags, input_mode: InputMode) -> bool {
    input_mode == InputMode::Amr && (flags.atom || flags.marker)
}

/// Assembles training items, enforcing synthetic-sample provenance.
pub fn build_train_items(
    train: &Corpus,
    artifacts: &ArtifactStore,
    synthetic: &[SyntheticTranscript],
    encoder: &EmbeddingEncoder,
    flags: ComponentFlags,
    input_mode: InputMode,
) -> Result<Vec<TrainItem>, TrainingError> {
    let train_ids = train.ids();
    let mut syn_by_source: HashMap<&str, Vec<&SyntheticTranscript>> = HashMap::new();
    if flags.lslp {
        for s in synthetic {
            if !train_ids.contains(s.source_id()) {
                return Err(TrainingError::ProvenanceLeak { id: s.id.clone() });
            }
            syn_by_source.entry(s.source_id()).or_default().push(s);
        }
    }

    let mut items = Vec::with_capacity(train.len());
    for t in train.transcripts() {
        let artifact = if needs_artifact(flags, input_mode) {
            Some(
                artifacts
                    .read(&t.id)?
                    .ok_or_else(|| TrainingError::MissingArtifact { id: t.id.clone() })?,
            )
        } else {
            None
        };
        let texts = artifact
            .as_ref()
            .map(|a| (a.atom_text(), a.marker_text()));
        let features = build_features(
            t,
            texts.as_ref().map(|(a, m)| (a.as_str(), m.as_str())),
            encoder,
            flags,
            input_mode,
        )?;
        let syn = syn_by_source
            .get(t.id.as_str())
            .map(|list| {
                list.iter()
                    .map(|s| (encoder.token_rows(&s.text).0, s.label.class_index()))
                    .collect()
            })
            .unwrap_or_default();
        items.push(TrainItem {
            id: t.id.clone(),
            class: t.label.class_index(),
            features,
            syn,
        });
    }
    Ok(items)
}

/// Gradients mirroring every parameter block of `DectModel`.
#[derive(Debug, Clone)]
pub struct Grads {
    pub table: Vec<f64>,
    pub fusion_w: Vec<f64>,
    pub fusion_b: Vec<f64>,
    pub head: HeadGrads,
}

impl Grads {
    pub fn zeros_like(model: &DectModel) -> Self {
        Grads {
            table: vec![0.0; model.encoder.table().len()],
            fusion_w: vec![0.0; model.fusion.weights.len()],
            fusion_b: vec![0.0; model.fusion.bias.len()],
            head: HeadGrads::zeros_like(&model.head),
        }
    }

    fn reset(&mut self) {
        self.table.iter_mut().for_each(|g| *g = 0.0);
        self.fusion_w.iter_mut().for_each(|g| *g = 0.0);
        self.fusion_b.iter_mut().for_each(|g| *g = 0.0);
        for layer in self.head.weights.iter_mut().chain(self.head.biases.iter_mut()) {
            layer.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    fn for_each(&self, mut f: impl FnMut(f64)) {
        self.table.iter().for_each(|g| f(*g));
        self.fusion_w.iter().for_each(|g| f(*g));
        self.fusion_b.iter().for_each(|g| f(*g));
        for layer in self.head.weights.iter().chain(self.head.biases.iter()) {
            layer.iter().for_each(|g| f(*g));
        }
    }

    fn scale(&mut self, s: f64) {
        self.table.iter_mut().for_each(|g| *g *= s);
        self.fusion_w.iter_mut().for_each(|g| *g *= s);
        self.fusion_b.iter_mut().for_each(|g| *g *= s);
        for layer in self.head.weights.iter_mut().chain(self.head.biases.iter_mut()) {
            layer.iter_mut().for_each(|g| *g *= s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        let mut sum = 0.0;
        self.for_each(|g| sum += g * g);
        sum.sqrt()
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(|g| ok &= g.is_finite());
        ok
    }
}

/// One item of a training batch: the sample plus the synthetic partner chosen
/// for this epoch (if any).
#[derive(Debug, Clone, Copy)]
pub struct BatchEntry<'a> {
    pub item: &'a TrainItem,
    pub syn: Option<&'a (Vec<usize>, usize)>,
}

fn scatter_rows(table_grad: &mut [f64], dim: usize, rows: &[usize], dvec: &[f64]) {
    let inv = 1.0 / rows.len() as f64;
    for &r in rows {
        let slot = &mut table_grad[r * dim..(r + 1) * dim];
        for (g, d) in slot.iter_mut().zip(dvec) {
            *g += d * inv;
        }
    }
}

/// Computes the averaged two-term loss and its gradients for a batch. This is
/// the analytic-gradient path that the finite-difference oracles check.
pub fn compute_batch_grads(
    model: &DectModel,
    batch: &[BatchEntry<'_>],
    w_cls: f64,
    w_syn: f64,
    grads: &mut Grads,
) -> Result<LossBreakdown, TrainingError> {
    grads.reset();
    let n = batch.len() as f64;
    let dim = model.encoder.dim();
    let mut sum_cls = 0.0;
    let mut sum_syn = 0.0;

    for entry in batch {
        let feats = &entry.item.features;
        let class = entry.item.class;

        match model.input_mode {
            InputMode::Transcript => {
                let x = model.encoder.mean_rows(&feats.raw_rows);
                let cache = model.head.forward_cached(&x);
                let logits = cache.acts.last().unwrap().clone();
                let ce = cross_entropy_logits(&logits, class)?;
                sum_cls += w_cls * ce;
                let probs = softmax(&logits);
                let mut dlogits = probs;
                dlogits[class] -= 1.0;
                dlogits.iter_mut().for_each(|d| *d *= w_cls / n);
                let dx = model.head.backward(&cache, &dlogits, &mut grads.head);
                scatter_rows(&mut grads.table, dim, &feats.raw_rows, &dx);
            }
            InputMode::Amr => {
                let e_atom = model.encoder.mean_rows(&feats.atom_rows);
                let e_marker = match &feats.marker_rows {
                    Some(rows) => model.encoder.mean_rows(rows),
                    None => vec![0.0; dim],
                };
                let mut concat = e_atom;
                concat.extend_from_slice(&e_marker);
                let z = model.fusion.preactivation(&concat);
                let amr: Vec<f64> = z.iter().map(|v| gelu(*v)).collect();
                let cache = model.head.forward_cached(&amr);
                let logits = cache.acts.last().unwrap().clone();
                let ce = cross_entropy_logits(&logits, class)?;
                sum_cls += w_cls * ce;
                let probs = softmax(&logits);
                let mut dlogits = probs;
                dlogits[class] -= 1.0;
                dlogits.iter_mut().for_each(|d| *d *= w_cls / n);
                let damr = model.head.backward(&cache, &dlogits, &mut grads.head);

                let d_f = model.fusion.d_f;
                let dz: Vec<f64> = damr
                    .iter()
                    .zip(&z)
                    .map(|(da, zj)| da * gelu_deriv(*zj))
                    .collect();
                for (i, xi) in concat.iter().enumerate() {
                    if *xi != 0.0 {
                        let grow = &mut grads.fusion_w[i * d_f..(i + 1) * d_f];
                        for (g, dzj) in grow.iter_mut().zip(&dz) {
                            *g += xi * dzj;
                        }
                    }
                }
                for (g, dzj) in grads.fusion_b.iter_mut().zip(&dz) {
                    *g += dzj;
                }
                let mut dconcat = vec![0.0; model.fusion.d_in];
                for (i, di) in dconcat.iter_mut().enumerate() {
                    let row = &model.fusion.weights[i * d_f..(i + 1) * d_f];
                    *di = row.iter().zip(&dz).map(|(w, dzj)| w * dzj).sum();
                }
                scatter_rows(&mut grads.table, dim, &feats.atom_rows, &dconcat[..dim]);
                if let Some(rows) = &feats.marker_rows {
                    scatter_rows(&mut grads.table, dim, rows, &dconcat[dim..]);
                }
            }
        }

        if let Some((rows, syn_class)) = entry.syn {
            let e_syn = model.encoder.mean_rows(rows);
            let cache = model.head.forward_cached(&e_syn);
            let logits = cache.acts.last().unwrap().clone();
            let ce = cross_entropy_logits(&logits, *syn_class)?;
            sum_syn += w_syn * ce;
            let probs = softmax(&logits);
            let mut dlogits = probs;
            dlogits[*syn_class] -= 1.0;
            dlogits.iter_mut().for_each(|d| *d *= w_syn / n);
            let dsyn = model.head.backward(&cache, &dlogits, &mut grads.head);
            scatter_rows(&mut grads.table, dim, rows, &dsyn);
        }
    }

    Ok(LossBreakdown::new(sum_cls / n, sum_syn / n))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamSlot {
    fn zeros(n: usize) -> Self {
        AdamSlot {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Decoupled-weight-decay adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    table: AdamSlot,
    fusion_w: AdamSlot,
    fusion_b: AdamSlot,
    head_w: Vec<AdamSlot>,
    head_b: Vec<AdamSlot>,
}

impl Optimizer {
    pub fn new(model: &DectModel) -> Self {
        Optimizer {
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            table: AdamSlot::zeros(model.encoder.table().len()),
            fusion_w: AdamSlot::zeros(model.fusion.weights.len()),
            fusion_b: AdamSlot::zeros(model.fusion.bias.len()),
            head_w: model
                .head
                .weights
                .iter()
                .map(|w| AdamSlot::zeros(w.len()))
                .collect(),
            head_b: model
                .head
                .biases
                .iter()
                .map(|b| AdamSlot::zeros(b.len()))
                .collect(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn update_block(
        params: &mut [f64],
        grads: &[f64],
        slot: &mut AdamSlot,
        lr: f64,
        wd: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        bc1: f64,
        bc2: f64,
    ) {
        for i in 0..params.len() {
            let g = grads[i];
            slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g;
            slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g * g;
            let m_hat = slot.m[i] / bc1;
            let v_hat = slot.v[i] / bc2;
            params[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * params[i]);
        }
    }

    /// Applies one optimizer step. Weight decay touches weight matrices and
    /// the embedding table, not biases.
    pub fn step(&mut self, model: &mut DectModel, grads: &Grads, lr: f64, weight_decay: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        Self::update_block(
            model.encoder.table_mut(),
            &grads.table,
            &mut self.table,
            lr,
            weight_decay,
            b1,
            b2,
            eps,
            bc1,
            bc2,
        );
        Self::update_block(
            &mut model.fusion.weights,
            &grads.fusion_w,
            &mut self.fusion_w,
            lr,
            weight_decay,
            b1,
            b2,
            eps,
            bc1,
            bc2,
        );
        Self::update_block(
            &mut model.fusion.bias,
            &grads.fusion_b,
            &mut self.fusion_b,
            lr,
            0.0,
            b1,
            b2,
            eps,
            bc1,
            bc2,
        );
        for l in 0..model.head.weights.len() {
            Self::update_block(
                &mut model.head.weights[l],
                &grads.head.weights[l],
                &mut self.head_w[l],
                lr,
                weight_decay,
                b1,
                b2,
                eps,
                bc1,
                bc2,
            );
            Self::update_block(
                &mut model.head.biases[l],
                &grads.head.biases[l],
                &mut self.head_b[l],
                lr,
                0.0,
                b1,
                b2,
                eps,
                bc1,
                bc2,
            );
        }
    }
}

/// Mutable training state threaded through `train_step`.
pub struct TrainState {
    pub model: DectModel,
    pub cfg: TrainConfig,
    pub step: usize,
    pub total_steps: usize,
    optimizer: Optimizer,
    grads: Grads,
}

impl TrainState {
    pub fn new(model: DectModel, cfg: TrainConfig, total_steps: usize) -> Self {
        let optimizer = Optimizer::new(&model);
        let grads = Grads::zeros_like(&model);
        TrainState {
            model,
            cfg,
            step: 0,
            total_steps,
            optimizer,
            grads,
        }
    }
}

/// One optimization step over a batch; returns the batch loss. Only model
/// parameters change; providers are never consulted here.
pub fn train_step(
    state: &mut TrainState,
    batch: &[BatchEntry<'_>],
) -> Result<LossBreakdown, TrainingError> {
    let TrainState {
        model,
        cfg,
        step,
        total_steps,
        optimizer,
        grads,
    } = state;
    let loss = compute_batch_grads(model, batch, cfg.w_cls, cfg.w_syn, grads)?;
    if !grads.all_finite() {
        return Err(TrainingError::NonFiniteGradient);
    }
    if cfg.grad_clip > 0.0 {
        let norm = grads.global_norm();
        if norm > cfg.grad_clip {
            grads.scale(cfg.grad_clip / norm);
        }
    }
    let lr = lr_schedule((*step + 1).min(*total_steps), *total_steps, cfg)?;
    optimizer.step(model, grads, lr, cfg.weight_decay);
    *step += 1;
    Ok(loss)
}

/// Inputs to a full training run.
pub struct FitInputs<'a> {
    pub train: &'a Corpus,
    pub val: Option<&'a Corpus>,
    pub artifacts: &'a ArtifactStore,
    pub synthetic: &'a [SyntheticTranscript],
    /// Seed-initialized encoder carrying the starting parameter table.
    pub encoder: EmbeddingEncoder,
    pub d_f: usize,
    /// Extra entropy for the fusion-layer init, mixed with the run seed.
    pub fusion_seed: u64,
    pub input_mode: InputMode,
    pub flags: ComponentFlags,
    pub pooling: Pooling,
}

/// A finished run: final parameters, per-epoch loss curve, config snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model: DectModel,
    pub curve: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub val_curve: Vec<f64>,
    pub config: TrainConfig,
    pub seed: u64,
}

impl TrainedModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainingError> {
        let json = serde_json::to_string(self).expect("model serializes");
        std::fs::write(path.as_ref(), json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainingError> {
        let raw = std::fs::read_to_string(path.as_ref())?;
        let model = serde_json::from_str(&raw)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(model)
    }
}

fn mix_seed(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined value.
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Runs the full joint-optimization loop for one seed.
///
/// Each sample's atoms and markers are encoded and fused; the sample is
/// paired with a synthetic sample generated from it (rotating through
/// partners across epochs) and both cross-entropy terms drive one shared
/// head. The provider is never invoked.
pub fn fit(
    cfg: &TrainConfig,
    inputs: FitInputs<'_>,
    seed: u64,
) -> Result<TrainedModel, TrainingError> {
    let dim = inputs.encoder.dim();
    let d_f = if inputs.d_f == 0 { dim } else { inputs.d_f };
    let use_syn = inputs.flags.lslp && !inputs.synthetic.is_empty();
    if use_syn && inputs.input_mode == InputMode::Amr && d_f != dim {
        return Err(TrainingError::DimensionMismatch(format!(
            "shared head needs fusion.d_f == encoder.dim to score synthetic samples (d_f {d_f}, dim {dim})"
        )));
    }

    let head_input = match inputs.input_mode {
        InputMode::Amr => d_f,
        InputMode::Transcript => dim,
    };
    let model = DectModel {
        fusion: FusionParams::init(dim, d_f, mix_seed(seed, inputs.fusion_seed.wrapping_add(2))),
        head: ClassifierHead::init(head_input, &cfg.head_hidden, mix_seed(seed, 3)),
        encoder: inputs.encoder,
        input_mode: inputs.input_mode,
        flags: inputs.flags,
        pooling: inputs.pooling,
    };

    let items = build_train_items(
        inputs.train,
        inputs.artifacts,
        inputs.synthetic,
        &model.encoder,
        inputs.flags,
        inputs.input_mode,
    )?;
    let val_items: Vec<TrainItem> = match inputs.val {
        Some(val) if !val.is_empty() => build_train_items(
            val,
            inputs.artifacts,
            &[],
            &model.encoder,
            inputs.flags,
            inputs.input_mode,
        )?,
        _ => Vec::new(),
    };

    let n = items.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut state = TrainState::new(model, cfg.clone(), total_steps);

    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut val_curve = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        crate::corpus::seeded_shuffle(&mut order, mix_seed(seed, 1000 + epoch as u64));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<BatchEntry<'_>> = chunk
                .iter()
                .map(|&i| {
                    let item = &items[i];
                    let syn = if inputs.flags.lslp && !item.syn.is_empty() {
                        Some(&item.syn[epoch % item.syn.len()])
                    } else {
                        None
                    };
                    BatchEntry { item, syn }
                })
                .collect();
            let loss = train_step(&mut state, &batch)?;
            epoch_loss += loss.total * batch.len() as f64;
        }
        curve.push(epoch_loss / n as f64);
        if !val_items.is_empty() {
            let mut val_loss = 0.0;
            for item in &val_items {
                let logits = state.model.logits(&item.features);
                val_loss += cross_entropy_logits(&logits, item.class)?;
            }
            val_curve.push(val_loss / val_items.len() as f64);
        }
    }

    Ok(TrainedModel {
        model: state.model,
        curve,
        val_curve,
        config: cfg.clone(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::{ExtractionArtifact, MarkerRecord};

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn uniform_logits_give_ln2_terms() {
        let loss = compute_loss(&[0.0, 0.0], Label::AD, &[0.0, 0.0], Label::NC).unwrap();
        assert!((loss.l_cls - LN2).abs() < 1e-12);
        assert!((loss.l_syn - LN2).abs() < 1e-12);
        assert!((loss.total - 2.0 * LN2).abs() < 1e-12);
        assert_eq!(loss.total.to_bits(), (loss.l_cls + loss.l_syn).to_bits());
    }

    #[test]
    fn saturated_correct_prediction_has_negligible_loss() {
        // Class 0 = NC; logits strongly favor class 0.
        let loss = compute_loss(&[30.0, -30.0], Label::NC, &[30.0, -30.0], Label::NC).unwrap();
        assert!(loss.total < 1e-9, "total {}", loss.total);
    }

    #[test]
    fn cross_entropy_matches_direct_recompute() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let logits = [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)];
            let class = rng.gen_range(0..2);
            let got = cross_entropy_logits(&logits, class).unwrap();
            // Direct definition, no max shift (logits are bounded).
            let denom: f64 = logits.iter().map(|l| l.exp()).sum();
            let expected = -(logits[class].exp() / denom).ln();
            assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
        }
    }

    #[test]
    fn non_finite_logits_are_rejected() {
        assert!(matches!(
            cross_entropy_logits(&[f64::NAN, 0.0], 0),
            Err(TrainingError::NonFiniteLogits)
        ));
    }

    #[test]
    fn schedule_hits_base_lr_at_warmup_end_and_zero_at_total() {
        let cfg = TrainConfig::default();
        let total = 850;
        let warmup = (cfg.warmup_ratio * total as f64).ceil() as usize;
        assert_eq!(warmup, 9);
        assert_eq!(lr_schedule(warmup, total, &cfg).unwrap(), cfg.base_lr);
        assert_eq!(lr_schedule(total, total, &cfg).unwrap(), 0.0);
        assert_eq!(lr_schedule(0, total, &cfg).unwrap(), 0.0);
        // Midpoint of the decay segment.
        let mid = warmup + (total - warmup) / 2;
        let expected = cfg.base_lr * (total - mid) as f64 / (total - warmup) as f64;
        assert!((lr_schedule(mid, total, &cfg).unwrap() - expected).abs() < 1e-18);
        assert!((expected - 7.5e-6).abs() < cfg.base_lr / (total - warmup) as f64);
        // Peak over the whole run is exactly base_lr.
        let max = (0..=total)
            .map(|s| lr_schedule(s, total, &cfg).unwrap())
            .fold(0.0f64, f64::max);
        assert_eq!(max, cfg.base_lr);
    }

    #[test]
    fn schedule_rejects_out_of_range_steps() {
        let cfg = TrainConfig::default();
        assert!(matches!(
            lr_schedule(101, 100, &cfg),
            Err(TrainingError::StepOutOfRange { .. })
        ));
    }

    fn tiny_model(seed: u64) -> DectModel {
        DectModel {
            encoder: EmbeddingEncoder::tiny(8, 64, 32, mix_seed(seed, 1)),
            fusion: FusionParams::init(8, 8, mix_seed(seed, 2)),
            head: ClassifierHead::init(8, &[6], mix_seed(seed, 3)),
            input_mode: InputMode::Amr,
            flags: ComponentFlags::default(),
            pooling: Pooling::Mean,
        }
    }

    fn item_from_texts(model: &DectModel, atom: &str, marker: &str, raw: &str, class: usize) -> TrainItem {
        let syn_text = if class == 1 {
            "uh synthetic thing text"
        } else {
            "meanwhile synthetic detailed text"
        };
        TrainItem {
            id: "i".into(),
            class,
            features: SampleFeatures {
                atom_rows: model.encoder.token_rows(atom).0,
                marker_rows: Some(model.encoder.token_rows(marker).0),
                raw_rows: model.encoder.token_rows(raw).0,
            },
            syn: vec![(model.encoder.token_rows(syn_text).0, class)],
        }
    }

    #[test]
    fn overfitting_one_batch_halves_the_loss() {
        let model = tiny_model(11);
        let items = [
            item_from_texts(&model, "uh the thing", "hesitation", "uh the thing", 1),
            item_from_texts(&model, "the detailed scene", "fluent speech", "detailed", 0),
        ];
        let cfg = TrainConfig {
            base_lr: 1e-2,
            warmup_ratio: 0.0,
            epochs: 1,
            ..TrainConfig::default()
        };
        // Constant lr: schedule decay would shrink steps, so give it headroom.
        let mut state = TrainState::new(model, cfg, 100_000);
        let batch: Vec<BatchEntry<'_>> = items
            .iter()
            .map(|item| BatchEntry {
                item,
                syn: Some(&item.syn[0]),
            })
            .collect();
        let first = train_step(&mut state, &batch).unwrap();
        let mut last = first;
        for _ in 0..199 {
            last = train_step(&mut state, &batch).unwrap();
        }
        assert!(
            last.total <= 0.5 * first.total,
            "first {} last {}",
            first.total,
            last.total
        );
    }

    // Central finite differences over every parameter block.
    fn finite_difference_check(mode: InputMode) {
        let mut base = tiny_model(21);
        base.input_mode = mode;
        // d = d_f = 4 keeps the FD loop small.
        base.encoder = EmbeddingEncoder::tiny(4, 16, 16, 5);
        base.fusion = FusionParams::init(4, 4, 6);
        base.head = ClassifierHead::init(4, &[3], 7);
        let item = item_from_texts(&base, "uh thing stool", "hesitation vague", "uh thing", 1);
        let batch = [BatchEntry {
            item: &item,
            syn: Some(&item.syn[0]),
        }];

        let mut grads = Grads::zeros_like(&base);
        compute_batch_grads(&base, &batch, 1.0, 1.0, &mut grads).unwrap();

        let loss_of = |m: &DectModel| {
            let mut g = Grads::zeros_like(m);
            compute_batch_grads(m, &batch, 1.0, 1.0, &mut g).unwrap().total
        };
        let h = 1e-5;
        let check = |analytic: &[f64], read: &dyn Fn(&DectModel) -> Vec<f64>, write: &dyn Fn(&mut DectModel, usize, f64)| {
            let mut numeric = vec![0.0; analytic.len()];
            let current = read(&base);
            for i in 0..analytic.len() {
                let mut plus = base.clone();
                write(&mut plus, i, current[i] + h);
                let mut minus = base.clone();
                write(&mut minus, i, current[i] - h);
                numeric[i] = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            }
            let nn: f64 = numeric.iter().map(|g| g * g).sum::<f64>().sqrt();
            let dn: f64 = analytic
                .iter()
                .zip(&numeric)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(dn / nn.max(1e-12) < 1e-4, "rel err {}", dn / nn.max(1e-12));
        };

        check(
            &grads.head.weights[0],
            &|m| m.head.weights[0].clone(),
            &|m, i, v| m.head.weights[0][i] = v,
        );
        check(
            &grads.head.biases[1],
            &|m| m.head.biases[1].clone(),
            &|m, i, v| m.head.biases[1][i] = v,
        );
        if mode == InputMode::Amr {
            check(
                &grads.fusion_w,
                &|m| m.fusion.weights.clone(),
                &|m, i, v| m.fusion.weights[i] = v,
            );
            check(
                &grads.fusion_b,
                &|m| m.fusion.bias.clone(),
                &|m, i, v| m.fusion.bias[i] = v,
            );
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        finite_difference_check(InputMode::Amr);
        finite_difference_check(InputMode::Transcript);
    }

    fn fit_fixture(seed: u64) -> TrainedModel {
        let corpus = crate::planted::planted_corpus(12, 3);
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(dir.path()).unwrap();
        for t in corpus.transcripts() {
            store
                .write(&ExtractionArtifact {
                    transcript_id: t.id.clone(),
                    atoms: vec![t.participant_text()],
                    markers: vec![MarkerRecord {
                        name: "repetition".into(),
                        category: crate::extraction::MarkerCategory::LexicalRecall,
                    }],
                    raw_responses: Default::default(),
                })
                .unwrap();
        }
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        fit(
            &cfg,
            FitInputs {
                train: &corpus,
                val: None,
                artifacts: &store,
                synthetic: &[],
                encoder: EmbeddingEncoder::tiny(16, 128, 64, mix_seed(seed, 1)),
                d_f: 0,
                fusion_seed: 0,
                input_mode: InputMode::Amr,
                flags: ComponentFlags {
                    lslp: false,
                    ..ComponentFlags::default()
                },
                pooling: Pooling::Mean,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn fit_is_deterministic_and_curve_spans_epochs() {
        let a = fit_fixture(1);
        let b = fit_fixture(1);
        assert_eq!(a.model.checksum(), b.model.checksum());
        assert_eq!(a.curve.len(), 3);
        assert_eq!(a.curve, b.curve);
        let c = fit_fixture(2);
        assert_ne!(a.model.checksum(), c.model.checksum());
    }

    #[test]
    fn provenance_leak_is_rejected_before_training() {
        let corpus = crate::planted::planted_corpus(4, 3);
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(dir.path()).unwrap();
        let rogue = SyntheticTranscript {
            id: "intruder-lslp-1-0".into(),
            text: "synthetic".into(),
            label: Label::AD,
            strategy: crate::augmentation::Strategy::Lslp,
            provenance: crate::augmentation::Provenance::Mimic {
                source_id: "test-split-id".into(),
                seed: 1,
            },
            raw_prompt: String::new(),
        };
        let err = fit(
            &TrainConfig::default(),
            FitInputs {
                train: &corpus,
                val: None,
                artifacts: &store,
                synthetic: std::slice::from_ref(&rogue),
                encoder: EmbeddingEncoder::tiny(8, 64, 32, 1),
                d_f: 0,
                fusion_seed: 0,
                input_mode: InputMode::Amr,
                flags: ComponentFlags::default(),
                pooling: Pooling::Mean,
            },
            1,
        )
        .unwrap_err();
        assert!(matches!(err, TrainingError::ProvenanceLeak { .. }));
    }

    #[test]
    fn items_without_partner_contribute_zero_syn_loss() {
        let model = tiny_model(33);
        let item = TrainItem {
            id: "solo".into(),
            class: 0,
            features: SampleFeatures {
                atom_rows: model.encoder.token_rows("the boy climbs").0,
                marker_rows: None,
                raw_rows: model.encoder.token_rows("the boy climbs").0,
            },
            syn: vec![],
        };
        let mut grads = Grads::zeros_like(&model);
        let loss = compute_batch_grads(
            &model,
            &[BatchEntry {
                item: &item,
                syn: None,
            }],
            1.0,
            1.0,
            &mut grads,
        )
        .unwrap();
        assert_eq!(loss.l_syn, 0.0);
        assert!(loss.l_cls > 0.0);
        assert_eq!(loss.total, loss.l_cls);
    }

    #[test]
    fn missing_artifact_is_reported_with_id() {
        let corpus = crate::planted::planted_corpus(2, 3);
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(dir.path()).unwrap();
        let err = fit(
            &TrainConfig::default(),
            FitInputs {
                train: &corpus,
                val: None,
                artifacts: &store,
                synthetic: &[],
                encoder: EmbeddingEncoder::tiny(8, 64, 32, 1),
                d_f: 0,
                fusion_seed: 0,
                input_mode: InputMode::Amr,
                flags: ComponentFlags::default(),
                pooling: Pooling::Mean,
            },
            1,
        )
        .unwrap_err();
        match err {
            TrainingError::MissingArtifact { id } => assert!(id.starts_with("planted-")),
            other => panic!("expected MissingArtifact, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trips() {
        let trained = fit_fixture(5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        trained.save(&path).unwrap();
        let loaded = TrainedModel::load(&path).unwrap();
        assert_eq!(loaded.model.checksum(), trained.model.checksum());
        assert_eq!(loaded.curve, trained.curve);
        assert_eq!(loaded.seed, trained.seed);
    }

}
