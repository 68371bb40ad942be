//! Labeled patient–interviewer dialogue corpora: data model, JSONL ingestion,
//! raw-text parsing, and deterministic stratified splitting.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Binary diagnostic label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    AD,
    NC,
}

impl Label {
    /// Class index used by the classifier head (AD is the positive class).
    pub fn class_index(self) -> usize {
        match self {
            Label::NC => 0,
            Label::AD => 1,
        }
    }

    pub fn from_class_index(idx: usize) -> Label {
        if idx == 1 {
            Label::AD
        } else {
            Label::NC
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::AD => Label::NC,
            Label::NC => Label::AD,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::AD => "AD",
            Label::NC => "NC",
        })
    }
}

/// Speaker role in a dialogue. Wire codes are "INV" and "PAR".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Speaker {
    #[serde(rename = "INV")]
    Interviewer,
    #[serde(rename = "PAR")]
    Participant,
}

impl Speaker {
    pub fn code(self) -> &'static str {
        match self {
            Speaker::Interviewer => "INV",
            Speaker::Participant => "PAR",
        }
    }
}

/// One speaker turn, verbatim (fillers preserved).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    /// 0-based position within the dialogue; assigned at load, not serialized.
    #[serde(skip)]
    pub index: usize,
}

/// A labeled dialogue, the unit sample of every pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub id: String,
    pub label: Label,
    pub utterances: Vec<Utterance>,
    pub source: String,
}

impl Transcript {
    /// The dialogue rendered one turn per line as `CODE: text`.
    pub fn dialogue_text(&self) -> String {
        let mut out = String::new();
        for u in &self.utterances {
            out.push_str(u.speaker.code());
            out.push_str(": ");
            out.push_str(&u.text);
            out.push('\n');
        }
        out
    }

    /// Participant turns only, joined with spaces.
    pub fn participant_text(&self) -> String {
        self.utterances
            .iter()
            .filter(|u| u.speaker == Speaker::Participant)
            .map(|u| u.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn has_participant_speech(&self) -> bool {
        self.utterances
            .iter()
            .any(|u| u.speaker == Speaker::Participant)
    }
}

/// Immutable collection of transcripts with cached per-class counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    transcripts: Vec<Transcript>,
    class_counts: BTreeMap<Label, usize>,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate ids. Empty input is allowed here
    /// (splits can be empty); `load_corpus` enforces non-emptiness.
    pub fn new(transcripts: Vec<Transcript>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for t in &transcripts {
            if !seen.insert(t.id.clone()) {
                return Err(CorpusError::DuplicateId(t.id.clone()));
            }
        }
        let mut class_counts = BTreeMap::new();
        class_counts.insert(Label::AD, 0);
        class_counts.insert(Label::NC, 0);
        for t in &transcripts {
            *class_counts.entry(t.label).or_insert(0) += 1;
        }
        Ok(Corpus {
            transcripts,
            class_counts,
        })
    }

    pub fn transcripts(&self) -> &[Transcript] {
        &self.transcripts
    }

    pub fn len(&self) -> usize {
        self.transcripts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transcripts.is_empty()
    }

    pub fn class_counts(&self) -> &BTreeMap<Label, usize> {
        &self.class_counts
    }

    pub fn count(&self, label: Label) -> usize {
        self.class_counts.get(&label).copied().unwrap_or(0)
    }

    pub fn ids(&self) -> HashSet<String> {
        self.transcripts.iter().map(|t| t.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Transcript> {
        self.transcripts.iter().find(|t| t.id == id)
    }
}

/// Supported on-disk corpus encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
}

/// How a corpus is partitioned into train/val/test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fractions = [self.train_fraction, self.val_fraction, self.test_fraction];
        let sum: f64 = fractions.iter().sum();
        if fractions.iter().any(|f| *f < 0.0 || *f > 1.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::FractionSumInvalid { sum });
        }
        Ok(())
    }

    fn active_splits(&self) -> usize {
        [self.train_fraction, self.val_fraction, self.test_fraction]
            .iter()
            .filter(|f| **f > 0.0)
            .count()
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("schema violation at line {line}: field `{field}`: {detail}")]
    SchemaViolation {
        line: usize,
        field: String,
        detail: String,
    },
    #[error("duplicate transcript id `{0}`")]
    DuplicateId(String),
    #[error("transcript contains no participant speech")]
    NoParticipantSpeech,
    #[error("unknown speaker marker at line {line}")]
    UnknownSpeakerMarker { line: usize },
    #[error("split fractions sum to {sum}, expected 1.0")]
    FractionSumInvalid { sum: f64 },
    #[error("class {label} has {have} samples, fewer than the {need} splits requiring data")]
    TooFewSamples {
        label: Label,
        have: usize,
        need: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn schema_err(line: usize, field: &str, detail: impl Into<String>) -> CorpusError {
    CorpusError::SchemaViolation {
        line,
        field: field.to_string(),
        detail: detail.into(),
    }
}

/// Loads and validates a corpus file (one JSON transcript record per line).
pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    match format {
        CorpusFormat::Jsonl => {}
    }
    let file = File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut transcripts = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = validate_record(&line, i + 1)?;
        if !seen.insert(record.id.clone()) {
            return Err(CorpusError::DuplicateId(record.id));
        }
        transcripts.push(record);
    }
    if transcripts.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Corpus::new(transcripts)
}

/// Writes a corpus as JSONL with the exact record schema used by `load_corpus`.
pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    for t in corpus.transcripts() {
        let json = serde_json::to_string(t).expect("transcript serializes");
        writeln!(w, "{json}")?;
    }
    w.flush()?;
    Ok(())
}

fn validate_record(line: &str, lineno: usize) -> Result<Transcript, CorpusError> {
    let value: serde_json::Value = serde_json::from_str(line)
        .map_err(|e| schema_err(lineno, "record", format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| schema_err(lineno, "record", "expected a JSON object"))?;

    for key in obj.keys() {
        if !matches!(key.as_str(), "id" | "label" | "utterances" | "source") {
            return Err(schema_err(lineno, key, "unknown field"));
        }
    }

    let id = obj
        .get("id")
        .and_then(|v| v.as_str())
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| schema_err(lineno, "id", "missing or empty"))?
        .to_string();
    let label = match obj.get("label").and_then(|v| v.as_str()) {
        Some("AD") => Label::AD,
        Some("NC") => Label::NC,
        Some(other) => return Err(schema_err(lineno, "label", format!("unknown label `{other}`"))),
        None => return Err(schema_err(lineno, "label", "missing")),
    };
    let source = obj
        .get("source")
        .and_then(|v| v.as_str())
        .ok_or_else(|| schema_err(lineno, "source", "missing"))?
        .to_string();

    let raw_utts = obj
        .get("utterances")
        .and_then(|v| v.as_array())
        .ok_or_else(|| schema_err(lineno, "utterances", "missing or not an array"))?;
    if raw_utts.is_empty() {
        return Err(schema_err(lineno, "utterances", "empty"));
    }
    let mut utterances = Vec::with_capacity(raw_utts.len());
    for (idx, u) in raw_utts.iter().enumerate() {
        let uo = u
            .as_object()
            .ok_or_else(|| schema_err(lineno, "utterances", format!("entry {idx} not an object")))?;
        let speaker = match uo.get("speaker").and_then(|v| v.as_str()) {
            Some("INV") => Speaker::Interviewer,
            Some("PAR") => Speaker::Participant,
            Some(other) => {
                return Err(schema_err(
                    lineno,
                    "speaker",
                    format!("entry {idx}: unknown code `{other}`"),
                ))
            }
            None => return Err(schema_err(lineno, "speaker", format!("entry {idx}: missing"))),
        };
        let text = uo
            .get("text")
            .and_then(|v| v.as_str())
            .ok_or_else(|| schema_err(lineno, "text", format!("entry {idx}: missing")))?;
        if text.trim().is_empty() {
            return Err(schema_err(lineno, "text", format!("entry {idx}: empty")));
        }
        utterances.push(Utterance {
            speaker,
            text: text.to_string(),
            index: idx,
        });
    }
    if !utterances.iter().any(|u| u.speaker == Speaker::Participant) {
        return Err(schema_err(lineno, "utterances", "no participant utterance"));
    }

    Ok(Transcript {
        id,
        label,
        utterances,
        source,
    })
}

/// Parses raw `CODE: text` dialogue lines into utterances.
///
/// Text is preserved verbatim apart from the marker prefix and the single
/// separating space; blank lines are skipped.
pub fn parse_transcript(
    raw: &str,
    speaker_markers: &BTreeMap<String, Speaker>,
) -> Result<Vec<Utterance>, CorpusError> {
    let mut utterances = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let trimmed = line.trim_start();
        if trimmed.trim().is_empty() {
            continue;
        }
        let mut matched = None;
        for (code, speaker) in speaker_markers {
            if let Some(rest) = trimmed.strip_prefix(code.as_str()) {
                if let Some(text) = rest.strip_prefix(':') {
                    matched = Some((*speaker, text.strip_prefix(' ').unwrap_or(text)));
                    break;
                }
            }
        }
        match matched {
            Some((speaker, text)) => {
                if text.trim().is_empty() {
                    continue;
                }
                utterances.push(Utterance {
                    speaker,
                    text: text.to_string(),
                    index: utterances.len(),
                });
            }
            None => return Err(CorpusError::UnknownSpeakerMarker { line: i + 1 }),
        }
    }
    if !utterances.iter().any(|u| u.speaker == Speaker::Participant) {
        return Err(CorpusError::NoParticipantSpeech);
    }
    Ok(utterances)
}

/// The default marker table: `INV` → interviewer, `PAR` → participant.
pub fn default_speaker_markers() -> BTreeMap<String, Speaker> {
    let mut m = BTreeMap::new();
    m.insert("INV".to_string(), Speaker::Interviewer);
    m.insert("PAR".to_string(), Speaker::Participant);
    m
}

/// In-place Fisher–Yates driven by a ChaCha8 stream; the reference permutation
/// for reproducible splits.
pub fn seeded_shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Splits a corpus into (train, val, test).
///
/// Stratified mode shuffles each class independently with seed `spec.seed + k`
/// (k = 0 for AD, 1 for NC) and slices at rounded proportional boundaries, so
/// class ratios are preserved within one sample per split.
pub fn split_corpus(
    corpus: &Corpus,
    spec: &SplitSpec,
) -> Result<(Corpus, Corpus, Corpus), CorpusError> {
    spec.validate()?;
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let need = spec.active_splits();

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();

    let mut assign = |indices: &mut Vec<usize>, seed: u64| {
        seeded_shuffle(indices, seed);
        let n = indices.len();
        let b1 = ((spec.train_fraction * n as f64).round() as usize).min(n);
        let b2 = (((spec.train_fraction + spec.val_fraction) * n as f64).round() as usize)
            .clamp(b1, n);
        for (pos, &idx) in indices.iter().enumerate() {
            let t = corpus.transcripts()[idx].clone();
            if pos < b1 {
                train.push(t);
            } else if pos < b2 {
                val.push(t);
            } else {
                test.push(t);
            }
        }
    };

    if spec.stratified {
        for (k, label) in [Label::AD, Label::NC].into_iter().enumerate() {
            let mut indices: Vec<usize> = corpus
                .transcripts()
                .iter()
                .enumerate()
                .filter(|(_, t)| t.label == label)
                .map(|(i, _)| i)
                .collect();
            if indices.is_empty() {
                continue;
            }
            if indices.len() < need {
                return Err(CorpusError::TooFewSamples {
                    label,
                    have: indices.len(),
                    need,
                });
            }
            assign(&mut indices, spec.seed.wrapping_add(k as u64));
        }
    } else {
        let mut indices: Vec<usize> = (0..corpus.len()).collect();
        if indices.len() < need {
            return Err(CorpusError::TooFewSamples {
                label: Label::AD,
                have: indices.len(),
                need,
            });
        }
        assign(&mut indices, spec.seed);
    }

    Ok((Corpus::new(train)?, Corpus::new(val)?, Corpus::new(test)?))
}
