//! Synthetic transcript generation: the two-stage label-switched /
//! label-preserved (LSLP) strategy and the label-preserving Mimic baseline.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Corpus, Label, Transcript};
use crate::extraction::{ArtifactStore, AtomSet};
use crate::gateway::{Gateway, GatewayError, RequestSettings, TemplateId};

#[derive(Debug, Error)]
pub enum AugmentationError {
    #[error("k range [{min}, {max}] invalid for feature pool of size {pool}")]
    KRangeInvalid { min: usize, max: usize, pool: usize },
    #[error("provider returned empty text for source `{source_id}`")]
    EmptyGeneration { source_id: String },
    #[error("no extraction artifact for transcript `{0}`")]
    MissingExtractionArtifact(String),
    #[error("unknown augmentation strategy `{0}`")]
    UnknownStrategy(String),
    #[error("invalid augmentation plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Extraction(#[from] crate::extraction::ExtractionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Linguistic feature vocabulary, split by the label whose speech style each
/// feature evokes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeaturePool {
    pub ad_features: Vec<String>,
    pub nc_features: Vec<String>,
}

impl Default for FeaturePool {
    fn default() -> Self {
        FeaturePool {
            ad_features: [
                "word-finding difficulties",
                "semantic paraphasia",
                "circumlocutions",
                "reduced syntactic complexity",
                "topic maintenance issues",
            ]
            .map(String::from)
            .to_vec(),
            nc_features: [
                "detailed descriptions",
                "complex sentence structures",
                "rich vocabulary",
                "coherent narrative",
            ]
            .map(String::from)
            .to_vec(),
        }
    }
}

impl FeaturePool {
    pub fn pool(&self, label: Label) -> &[String] {
        match label {
            Label::AD => &self.ad_features,
            Label::NC => &self.nc_features,
        }
    }
}

/// Generation strategy for synthetic transcripts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Lslp,
    Mimic,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Lslp => "lslp",
            Strategy::Mimic => "mimic",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = AugmentationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lslp" => Ok(Strategy::Lslp),
            "mimic" => Ok(Strategy::Mimic),
            other => Err(AugmentationError::UnknownStrategy(other.to_string())),
        }
    }
}

/// The two-stage LSLP decision record: whether the label was switched and
/// which target-pool features get injected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub source_id: String,
    pub source_label: Label,
    pub switch: bool,
    pub target_label: Label,
    pub selected_features: Vec<String>,
    pub rng_seed: u64,
}

impl AugmentationPlan {
    pub fn validate(&self, pool: &FeaturePool) -> Result<(), AugmentationError> {
        let expected = if self.switch {
            self.source_label.flipped()
        } else {
            self.source_label
        };
        if self.target_label != expected {
            return Err(AugmentationError::InvalidPlan(format!(
                "switch={} but target {} given source {}",
                self.switch, self.target_label, self.source_label
            )));
        }
        let target_pool = pool.pool(self.target_label);
        for f in &self.selected_features {
            if !target_pool.contains(f) {
                return Err(AugmentationError::InvalidPlan(format!(
                    "feature `{f}` is not in the {} pool",
                    self.target_label
                )));
            }
        }
        Ok(())
    }
}

/// Provenance carried by a synthetic sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Lslp(AugmentationPlan),
    Mimic { source_id: String, seed: u64 },
}

/// One generated transcript with full provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTranscript {
    pub id: String,
    pub text: String,
    pub label: Label,
    pub strategy: Strategy,
    pub provenance: Provenance,
    pub raw_prompt: String,
}

impl SyntheticTranscript {
    pub fn source_id(&self) -> &str {
        match &self.provenance {
            Provenance::Lslp(plan) => &plan.source_id,
            Provenance::Mimic { source_id, .. } => source_id,
        }
    }

    pub fn switch(&self) -> Option<bool> {
        match &self.provenance {
            Provenance::Lslp(plan) => Some(plan.switch),
            Provenance::Mimic { .. } => None,
        }
    }

    pub fn features(&self) -> &[String] {
        match &self.provenance {
            Provenance::Lslp(plan) => &plan.selected_features,
            Provenance::Mimic { .. } => &[],
        }
    }

    pub fn seed(&self) -> u64 {
        match &self.provenance {
            Provenance::Lslp(plan) => plan.rng_seed,
            Provenance::Mimic { seed, .. } => *seed,
        }
    }
}

/// Flat on-disk record, one JSON object per line in a synthetic corpus file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SyntheticRecord {
    id: String,
    text: String,
    label: Label,
    strategy: Strategy,
    source_id: String,
    switch: Option<bool>,
    features: Vec<String>,
    seed: u64,
}

impl From<&SyntheticTranscript> for SyntheticRecord {
    fn from(s: &SyntheticTranscript) -> Self {
        SyntheticRecord {
            id: s.id.clone(),
            text: s.text.clone(),
            label: s.label,
            strategy: s.strategy,
            source_id: s.source_id().to_string(),
            switch: s.switch(),
            features: s.features().to_vec(),
            seed: s.seed(),
        }
    }
}

impl SyntheticRecord {
    fn into_transcript(self) -> SyntheticTranscript {
        let provenance = match (self.strategy, self.switch) {
            (Strategy::Lslp, switch) => {
                let switch = switch.unwrap_or(false);
                let source_label = if switch {
                    self.label.flipped()
                } else {
                    self.label
                };
                Provenance::Lslp(AugmentationPlan {
                    source_id: self.source_id,
                    source_label,
                    switch,
                    target_label: self.label,
                    selected_features: self.features,
                    rng_seed: self.seed,
                })
            }
            (Strategy::Mimic, _) => Provenance::Mimic {
                source_id: self.source_id,
                seed: self.seed,
            },
        };
        SyntheticTranscript {
            id: self.id,
            text: self.text,
            label: self.label,
            strategy: self.strategy,
            provenance,
            raw_prompt: String::new(),
        }
    }
}

pub fn write_synthetic_corpus(
    samples: &[SyntheticTranscript],
    path: impl AsRef<Path>,
) -> Result<(), AugmentationError> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    for s in samples {
        let record = SyntheticRecord::from(s);
        writeln!(w, "{}", serde_json::to_string(&record).expect("record serializes"))?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_synthetic_corpus(
    path: impl AsRef<Path>,
) -> Result<Vec<SyntheticTranscript>, AugmentationError> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SyntheticRecord = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        out.push(record.into_transcript());
    }
    Ok(out)
}

/// Stage one of LSLP: draw the switch decision and the injected feature set.
///
/// `switch ~ Bernoulli(p_switch)`; `k` is uniform over the k-range clamped to
/// the target pool; features are drawn uniformly without replacement.
pub fn plan_augmentation(
    source: &Transcript,
    p_switch: f64,
    pool: &FeaturePool,
    k_range: (usize, usize),
    seed: u64,
) -> Result<AugmentationPlan, AugmentationError> {
    let (k_min, k_max) = k_range;
    let smallest = pool.ad_features.len().min(pool.nc_features.len());
    if k_min < 1 || k_min > k_max || smallest == 0 {
        return Err(AugmentationError::KRangeInvalid {
            min: k_min,
            max: k_max,
            pool: smallest,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let switch = rng.gen_bool(p_switch.clamp(0.0, 1.0));
    let target_label = if switch {
        source.label.flipped()
    } else {
        source.label
    };
    let target_pool = pool.pool(target_label);
    let k_cap = k_max.min(target_pool.len());
    if k_min > k_cap {
        return Err(AugmentationError::KRangeInvalid {
            min: k_min,
            max: k_max,
            pool: target_pool.len(),
        });
    }
    let k = rng.gen_range(k_min..=k_cap);
    let selected_features = rand::seq::index::sample(&mut rng, target_pool.len(), k)
        .into_iter()
        .map(|i| target_pool[i].clone())
        .collect();
    Ok(AugmentationPlan {
        source_id: source.id.clone(),
        source_label: source.label,
        switch,
        target_label,
        selected_features,
        rng_seed: seed,
    })
}

/// Stage two of LSLP: prompt the provider with the atoms and the planned
/// features, labeling the output with the plan's target label.
pub fn generate_lslp(
    atoms: &AtomSet,
    plan: &AugmentationPlan,
    pool: &FeaturePool,
    settings: &RequestSettings,
    gateway: &Gateway,
) -> Result<SyntheticTranscript, AugmentationError> {
    plan.validate(pool)?;
    if atoms.atoms.is_empty() {
        return Err(AugmentationError::InvalidPlan(format!(
            "no atoms available for source `{}`",
            plan.source_id
        )));
    }
    let atom_block = atoms
        .atoms
        .iter()
        .map(|a| format!("- {a}"))
        .collect::<Vec<_>>()
        .join("\n");
    let mut vars = std::collections::BTreeMap::new();
    vars.insert("atoms".to_string(), format!("\n{atom_block}"));
    vars.insert("features".to_string(), plan.selected_features.join(", "));

    let settings = RequestSettings {
        seed: plan.rng_seed,
        ..settings.clone()
    };
    let rendered = crate::gateway::render_prompt(TemplateId::LslpGenerate, &vars)?;
    let response = gateway.request(TemplateId::LslpGenerate, &vars, &settings)?;
    if response.text.trim().is_empty() {
        return Err(AugmentationError::EmptyGeneration {
            source_id: plan.source_id.clone(),
        });
    }
    Ok(SyntheticTranscript {
        id: format!("{}-lslp-{}-0", plan.source_id, plan.rng_seed),
        text: response.text,
        label: plan.target_label,
        strategy: Strategy::Lslp,
        provenance: Provenance::Lslp(plan.clone()),
        raw_prompt: rendered,
    })
}

/// Mimic baseline: replicate the source's style; the label never changes and
/// no feature list enters the prompt.
pub fn generate_mimic(
    source: &Transcript,
    settings: &RequestSettings,
    gateway: &Gateway,
) -> Result<SyntheticTranscript, AugmentationError> {
    let mut vars = std::collections::BTreeMap::new();
    vars.insert("transcript".to_string(), source.dialogue_text());
    let rendered = crate::gateway::render_prompt(TemplateId::MimicGenerate, &vars)?;
    let response = gateway.request(TemplateId::MimicGenerate, &vars, settings)?;
    if response.text.trim().is_empty() {
        return Err(AugmentationError::EmptyGeneration {
            source_id: source.id.clone(),
        });
    }
    Ok(SyntheticTranscript {
        id: format!("{}-mimic-{}-0", source.id, settings.seed),
        text: response.text,
        label: source.label,
        strategy: Strategy::Mimic,
        provenance: Provenance::Mimic {
            source_id: source.id.clone(),
            seed: settings.seed,
        },
        raw_prompt: rendered,
    })
}

/// Knobs for a whole-corpus augmentation pass.
#[derive(Debug, Clone)]
pub struct AugmentConfig {
    pub strategy: Strategy,
    pub p_switch: f64,
    pub k_range: (usize, usize),
    pub multiplicity: usize,
    pub master_seed: u64,
    pub settings: RequestSettings,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            strategy: Strategy::Lslp,
            p_switch: 0.5,
            k_range: (2, 4),
            multiplicity: 1,
            master_seed: 42,
            settings: RequestSettings::default(),
        }
    }
}

/// Stable per-sample seed derived from the master seed, source id, and copy
/// counter, so reruns are byte-identical.
pub fn derive_sample_seed(master_seed: u64, source_id: &str, counter: usize) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(source_id.as_bytes());
    hasher.update((counter as u64).to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Generates `multiplicity` synthetic samples per source transcript.
///
/// The LSLP path requires an extraction artifact for every source; outputs
/// are ordered by source then counter and fully determined by the config.
pub fn augment_corpus(
    corpus: &Corpus,
    config: &AugmentConfig,
    store: &ArtifactStore,
    pool: &FeaturePool,
    gateway: &Gateway,
) -> Result<Vec<SyntheticTranscript>, AugmentationError> {
    let tasks: Vec<(&Transcript, usize)> = corpus
        .transcripts()
        .iter()
        .flat_map(|t| (0..config.multiplicity.max(1)).map(move |c| (t, c)))
        .collect();

    let results: Result<Vec<SyntheticTranscript>, AugmentationError> = tasks
        .par_iter()
        .map(|(t, counter)| {
            let sample_seed = derive_sample_seed(config.master_seed, &t.id, *counter);
            let mut synth = match config.strategy {
                Strategy::Lslp => {
                    let artifact = store
                        .read(&t.id)?
                        .ok_or_else(|| AugmentationError::MissingExtractionArtifact(t.id.clone()))?;
                    if artifact.atoms.is_empty() {
                        return Err(AugmentationError::MissingExtractionArtifact(t.id.clone()));
                    }
                    let atoms = AtomSet {
                        transcript_id: artifact.transcript_id.clone(),
                        atoms: artifact.atoms.clone(),
                        raw_response: String::new(),
                    };
                    let plan =
                        plan_augmentation(t, config.p_switch, pool, config.k_range, sample_seed)?;
                    generate_lslp(&atoms, &plan, pool, &config.settings, gateway)?
                }
                Strategy::Mimic => {
                    let settings = RequestSettings {
                        seed: sample_seed,
                        ..config.settings.clone()
                    };
                    generate_mimic(t, &settings, gateway)?
                }
            };
            synth.id = format!(
                "{}-{}-{}-{}",
                t.id, config.strategy, config.master_seed, counter
            );
            Ok(synth)
        })
        .collect();
    results
}
