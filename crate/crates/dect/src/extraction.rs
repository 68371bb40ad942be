//! Distills cognitive-linguistic atoms and linguistic markers from transcripts
//! through the gateway, categorizes markers against the curated taxonomy, and
//! persists per-transcript artifacts so training never re-invokes a provider.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Corpus, Label, Speaker, Transcript};
use crate::gateway::{Gateway, GatewayError, RequestSettings, TemplateId};

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("transcript `{0}` contains no participant speech")]
    NoParticipantSpeech(String),
    #[error("distillation of `{0}` produced zero atoms")]
    EmptyDistillation(String),
    #[error("marker extraction of `{0}` produced zero markers")]
    EmptyExtraction(String),
    #[error("few-shot example `{id}` is not drawn from the training split")]
    FewshotLeak { id: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Marker categories: four observed in impaired speech, four in controls,
/// plus a catch-all for unmatched marker names.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MarkerCategory {
    LexicalRecall,
    ThoughtOrganization,
    SelfCorrection,
    Grammar,
    FluentSpeech,
    CoherentOrganization,
    SelfCorrectAbility,
    NormalGrammar,
    Other,
}

impl fmt::Display for MarkerCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_string(self).expect("category serializes");
        f.write_str(s.trim_matches('"'))
    }
}

/// The fixed category split used by the categorizer.
#[derive(Debug, Clone)]
pub struct MarkerTaxonomy {
    pub ad_categories: Vec<MarkerCategory>,
    pub nc_categories: Vec<MarkerCategory>,
}

impl Default for MarkerTaxonomy {
    fn default() -> Self {
        MarkerTaxonomy {
            ad_categories: vec![
                MarkerCategory::LexicalRecall,
                MarkerCategory::ThoughtOrganization,
                MarkerCategory::SelfCorrection,
                MarkerCategory::Grammar,
            ],
            nc_categories: vec![
                MarkerCategory::FluentSpeech,
                MarkerCategory::CoherentOrganization,
                MarkerCategory::SelfCorrectAbility,
                MarkerCategory::NormalGrammar,
            ],
        }
    }
}

/// One named linguistic marker with an optional supporting quote.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Marker {
    pub name: String,
    pub evidence: Option<String>,
    pub category: MarkerCategory,
}

/// Cognitive-linguistic atoms distilled from one transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomSet {
    pub transcript_id: String,
    pub atoms: Vec<String>,
    pub raw_response: String,
}

/// Linguistic markers extracted from one transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerSet {
    pub transcript_id: String,
    pub markers: Vec<Marker>,
    pub raw_response: String,
}

// Ordered keyword table seeded from the curated marker categories; control
// phrasings come first because they are the more specific matches
// ("grammatically correct" must not fall through to the grammar-deficit row).
const CATEGORY_RULES: &[(&str, MarkerCategory)] = &[
    ("ability to self-correct", MarkerCategory::SelfCorrectAbility),
    ("self-corrects", MarkerCategory::SelfCorrectAbility),
    ("successful self-correction", MarkerCategory::SelfCorrectAbility),
    ("normal grammar", MarkerCategory::NormalGrammar),
    ("normal grammatical", MarkerCategory::NormalGrammar),
    ("grammatically correct", MarkerCategory::NormalGrammar),
    ("complete grammatical", MarkerCategory::NormalGrammar),
    ("coherent", MarkerCategory::CoherentOrganization),
    ("consistent flow of thought", MarkerCategory::CoherentOrganization),
    ("well organized", MarkerCategory::CoherentOrganization),
    ("organized narrative", MarkerCategory::CoherentOrganization),
    ("logical organization", MarkerCategory::CoherentOrganization),
    ("fluent", MarkerCategory::FluentSpeech),
    ("rich vocabulary", MarkerCategory::FluentSpeech),
    ("detailed description", MarkerCategory::FluentSpeech),
    ("complex sentence", MarkerCategory::FluentSpeech),
    ("hesitation", MarkerCategory::LexicalRecall),
    ("repetition", MarkerCategory::LexicalRecall),
    ("filler", MarkerCategory::LexicalRecall),
    ("vague", MarkerCategory::LexicalRecall),
    ("word-finding", MarkerCategory::LexicalRecall),
    ("word finding", MarkerCategory::LexicalRecall),
    ("erroneous word", MarkerCategory::LexicalRecall),
    ("difficulty finding", MarkerCategory::LexicalRecall),
    ("circumlocution", MarkerCategory::LexicalRecall),
    ("paraphasia", MarkerCategory::LexicalRecall),
    ("topic switch", MarkerCategory::ThoughtOrganization),
    ("topic maintenance", MarkerCategory::ThoughtOrganization),
    ("irrelevant", MarkerCategory::ThoughtOrganization),
    ("tangent", MarkerCategory::ThoughtOrganization),
    ("mismatch", MarkerCategory::ThoughtOrganization),
    ("incoherent", MarkerCategory::ThoughtOrganization),
    ("disorganized", MarkerCategory::ThoughtOrganization),
    ("self-correct", MarkerCategory::SelfCorrection),
    ("self correct", MarkerCategory::SelfCorrection),
    ("incorrect statement", MarkerCategory::SelfCorrection),
    ("persists with", MarkerCategory::SelfCorrection),
    ("struggle to correct", MarkerCategory::SelfCorrection),
    ("grammar", MarkerCategory::Grammar),
    ("grammatical", MarkerCategory::Grammar),
    ("syntactic", MarkerCategory::Grammar),
    ("syntax", MarkerCategory::Grammar),
    ("linguistic structure", MarkerCategory::Grammar),
    ("fragment", MarkerCategory::Grammar),
];

/// Maps a marker name to its taxonomy category; unmatched names go to OTHER.
pub fn categorize_marker(name: &str) -> MarkerCategory {
    let lower = name.to_lowercase();
    for (pattern, category) in CATEGORY_RULES {
        if lower.contains(pattern) {
            return *category;
        }
    }
    MarkerCategory::Other
}

/// Counts markers per category. Every taxonomy category (and OTHER) is
/// present in the result, zero-valued when unused; counts sum to `|markers|`.
pub fn categorize_markers(
    markers: &MarkerSet,
    taxonomy: &MarkerTaxonomy,
) -> BTreeMap<MarkerCategory, usize> {
    let mut counts = BTreeMap::new();
    for c in taxonomy
        .ad_categories
        .iter()
        .chain(taxonomy.nc_categories.iter())
    {
        counts.insert(*c, 0);
    }
    counts.insert(MarkerCategory::Other, 0);
    for m in &markers.markers {
        *counts.entry(m.category).or_insert(0) += 1;
    }
    counts
}

fn normalize_atom(text: &str) -> String {
    text.trim()
        .trim_end_matches(['.', '?', '!'])
        .to_lowercase()
}

/// Splits a response into discrete atoms: bullet/numbered lines when present,
/// otherwise a sentence split of the whole text.
fn parse_atoms(response: &str) -> Vec<String> {
    let mut atoms = Vec::new();
    for line in response.lines() {
        let t = line.trim();
        let stripped = t
            .strip_prefix("- ")
            .or_else(|| t.strip_prefix("• "))
            .or_else(|| t.strip_prefix("* "))
            .or_else(|| strip_numbered(t));
        if let Some(body) = stripped {
            let body = body.trim();
            if !body.is_empty() {
                atoms.push(body.to_string());
            }
        }
    }
    if atoms.is_empty() {
        atoms = response
            .split(['.', '?', '!'])
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| s.to_string())
            .collect();
    }
    atoms
}

fn strip_numbered(line: &str) -> Option<&str> {
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits == 0 {
        return None;
    }
    let rest = &line[digits..];
    rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") "))
}

/// Distills a transcript into standalone atoms, dropping anything that merely
/// echoes an interviewer turn.
pub fn distill_atoms(
    transcript: &Transcript,
    settings: &RequestSettings,
    gateway: &Gateway,
) -> Result<AtomSet, ExtractionError> {
    if !transcript.has_participant_speech() {
        return Err(ExtractionError::NoParticipantSpeech(transcript.id.clone()));
    }
    let mut vars = BTreeMap::new();
    vars.insert("transcript".to_string(), transcript.dialogue_text());
    let response = gateway.request(TemplateId::AtomDistill, &vars, settings)?;

    let interviewer_lines: HashSet<String> = transcript
        .utterances
        .iter()
        .filter(|u| u.speaker == Speaker::Interviewer)
        .map(|u| normalize_atom(&u.text))
        .collect();

    let atoms: Vec<String> = parse_atoms(&response.text)
        .into_iter()
        .filter(|a| !interviewer_lines.contains(&normalize_atom(a)))
        .collect();
    if atoms.is_empty() {
        return Err(ExtractionError::EmptyDistillation(transcript.id.clone()));
    }
    Ok(AtomSet {
        transcript_id: transcript.id.clone(),
        atoms,
        raw_response: response.text,
    })
}

/// A labeled training-split example shown to the marker-extraction prompt.
#[derive(Debug, Clone)]
pub struct FewshotExample {
    pub transcript_id: String,
    pub text: String,
    pub label: Label,
}

impl FewshotExample {
    pub fn from_transcript(t: &Transcript) -> Self {
        FewshotExample {
            transcript_id: t.id.clone(),
            text: t.dialogue_text(),
            label: t.label,
        }
    }
}

/// Extracts named markers for a transcript. When `train_ids` is given, every
/// few-shot example must come from it (test-leakage guard).
pub fn extract_markers(
    transcript: &Transcript,
    fewshot: &[FewshotExample],
    train_ids: Option<&HashSet<String>>,
    settings: &RequestSettings,
    gateway: &Gateway,
) -> Result<MarkerSet, ExtractionError> {
    if let Some(allowed) = train_ids {
        for ex in fewshot {
            if !allowed.contains(&ex.transcript_id) {
                return Err(ExtractionError::FewshotLeak {
                    id: ex.transcript_id.clone(),
                });
            }
        }
    }
    let examples = if fewshot.is_empty() {
        "(none)".to_string()
    } else {
        fewshot
            .iter()
            .map(|ex| format!("Transcript: {}Label: {}", ex.text, ex.label))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let mut vars = BTreeMap::new();
    vars.insert("examples".to_string(), examples);
    vars.insert("transcript".to_string(), transcript.dialogue_text());
    let response = gateway.request(TemplateId::MarkerExtract, &vars, settings)?;

    let markers = parse_markers(&response.text);
    if markers.is_empty() {
        return Err(ExtractionError::EmptyExtraction(transcript.id.clone()));
    }
    Ok(MarkerSet {
        transcript_id: transcript.id.clone(),
        markers,
        raw_response: response.text,
    })
}

fn parse_markers(response: &str) -> Vec<Marker> {
    let mut markers = Vec::new();
    for piece in response.split([';', '\n']) {
        let piece = piece.trim().trim_start_matches(['-', '•', '*']).trim();
        if piece.is_empty() {
            continue;
        }
        let (name, evidence) = match piece.split_once(": ") {
            Some((n, e)) => (n.trim().to_string(), Some(e.trim().to_string())),
            None => (piece.to_string(), None),
        };
        let category = categorize_marker(&name);
        markers.push(Marker {
            name,
            evidence,
            category,
        });
    }
    markers
}

/// Marker entry as persisted in artifact files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerRecord {
    pub name: String,
    pub category: MarkerCategory,
}

/// Per-transcript extraction output, persisted beside the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionArtifact {
    pub transcript_id: String,
    pub atoms: Vec<String>,
    pub markers: Vec<MarkerRecord>,
    pub raw_responses: BTreeMap<String, String>,
}

impl ExtractionArtifact {
    pub fn from_parts(atoms: AtomSet, markers: MarkerSet) -> Self {
        let mut raw_responses = BTreeMap::new();
        raw_responses.insert(
            TemplateId::AtomDistill.as_str().to_string(),
            atoms.raw_response,
        );
        raw_responses.insert(
            TemplateId::MarkerExtract.as_str().to_string(),
            markers.raw_response,
        );
        ExtractionArtifact {
            transcript_id: atoms.transcript_id,
            atoms: atoms.atoms,
            markers: markers
                .markers
                .into_iter()
                .map(|m| MarkerRecord {
                    name: m.name,
                    category: m.category,
                })
                .collect(),
            raw_responses,
        }
    }

    /// Marker names joined one per line, the encodable marker document.
    pub fn marker_text(&self) -> String {
        self.markers
            .iter()
            .map(|m| m.name.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Atoms joined one per line, the encodable atom document.
    pub fn atom_text(&self) -> String {
        self.atoms.join("\n")
    }
}

/// Directory of one artifact file per transcript id; writes are atomic
/// (temp file + rename).
#[derive(Debug, Clone)]
pub struct ArtifactStore {
    dir: PathBuf,
}

impl ArtifactStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, ExtractionError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        Ok(ArtifactStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn file_name(id: &str) -> String {
        let safe: String = id
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        if safe == id {
            format!("{safe}.json")
        } else {
            let digest = hex::encode(&Sha256::digest(id.as_bytes())[..4]);
            format!("{safe}-{digest}.json")
        }
    }

    pub fn write(&self, artifact: &ExtractionArtifact) -> Result<(), ExtractionError> {
        let name = Self::file_name(&artifact.transcript_id);
        let json = serde_json::to_string(artifact).expect("artifact serializes");
        let tmp = self.dir.join(format!(".{}.{}.tmp", name, std::process::id()));
        fs::write(&tmp, json)?;
        fs::rename(&tmp, self.dir.join(name))?;
        Ok(())
    }

    pub fn read(&self, id: &str) -> Result<Option<ExtractionArtifact>, ExtractionError> {
        let path = self.dir.join(Self::file_name(id));
        let raw = match fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let artifact = serde_json::from_str(&raw)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Some(artifact))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.dir.join(Self::file_name(id)).exists()
    }
}

/// Summary of one extraction pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractStats {
    pub transcripts: usize,
    pub requests: u64,
    pub provider_calls: u64,
    pub cache_hits: u64,
}

/// Class-balanced few-shot examples taken from the head of the training split.
pub fn select_fewshot(train: &Corpus, count: usize) -> Vec<FewshotExample> {
    let mut out = Vec::new();
    let ad: Vec<&Transcript> = train
        .transcripts()
        .iter()
        .filter(|t| t.label == Label::AD)
        .collect();
    let nc: Vec<&Transcript> = train
        .transcripts()
        .iter()
        .filter(|t| t.label == Label::NC)
        .collect();
    let mut ai = 0;
    let mut ni = 0;
    while out.len() < count && (ai < ad.len() || ni < nc.len()) {
        if out.len() % 2 == 0 && ai < ad.len() {
            out.push(FewshotExample::from_transcript(ad[ai]));
            ai += 1;
        } else if ni < nc.len() {
            out.push(FewshotExample::from_transcript(nc[ni]));
            ni += 1;
        } else if ai < ad.len() {
            out.push(FewshotExample::from_transcript(ad[ai]));
            ai += 1;
        }
    }
    out
}

/// Runs atom distillation and marker extraction over a whole corpus and
/// persists one artifact per transcript. Few-shot examples come from `train`.
pub fn extract_corpus(
    corpus: &Corpus,
    train: &Corpus,
    fewshot_count: usize,
    store: &ArtifactStore,
    settings: &RequestSettings,
    gateway: &Gateway,
) -> Result<ExtractStats, ExtractionError> {
    let fewshot = select_fewshot(train, fewshot_count);
    let train_ids = train.ids();
    let calls_before = gateway.provider_calls();

    corpus
        .transcripts()
        .par_iter()
        .try_for_each(|t| -> Result<(), ExtractionError> {
            let atoms = distill_atoms(t, settings, gateway)?;
            let markers = extract_markers(t, &fewshot, Some(&train_ids), settings, gateway)?;
            store.write(&ExtractionArtifact::from_parts(atoms, markers))
        })?;

    let requests = 2 * corpus.len() as u64;
    let provider_calls = gateway.provider_calls() - calls_before;
    Ok(ExtractStats {
        transcripts: corpus.len(),
        requests,
        provider_calls,
        cache_hits: requests.saturating_sub(provider_calls),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Utterance;
    use crate::gateway::providers::{CannedProvider, MockProvider};
    use proptest::prelude::*;

    fn transcript(id: &str, lines: &[(Speaker, &str)]) -> Transcript {
        Transcript {
            id: id.into(),
            label: Label::AD,
            utterances: lines
                .iter()
                .enumerate()
                .map(|(i, (s, t))| Utterance {
                    speaker: *s,
                    text: t.to_string(),
                    index: i,
                })
                .collect(),
            source: "test".into(),
        }
    }

    fn mock_gateway(dir: &Path) -> Gateway {
        Gateway::new(Box::new(MockProvider), dir).unwrap()
    }

    fn canned_gateway(dir: &Path, text: &str) -> Gateway {
        Gateway::new(Box::new(CannedProvider::always(text)), dir).unwrap()
    }

    #[test]
    fn distill_parses_bullets_from_mock() {
        let dir = tempfile::tempdir().unwrap();
        let gw = mock_gateway(dir.path());
        let t = transcript(
            "t1",
            &[
                (Speaker::Interviewer, "what do you see?"),
                (
                    Speaker::Participant,
                    "the boy is taking cookies. the stool is tipping over",
                ),
            ],
        );
        let atoms = distill_atoms(&t, &RequestSettings::default(), &gw).unwrap();
        assert_eq!(
            atoms.atoms,
            vec!["the boy is taking cookies", "the stool is tipping over"]
        );
    }

    #[test]
    fn distill_rejects_interviewer_only_transcripts() {
        let dir = tempfile::tempdir().unwrap();
        let gw = mock_gateway(dir.path());
        let t = transcript("t2", &[(Speaker::Interviewer, "hello?")]);
        assert!(matches!(
            distill_atoms(&t, &RequestSettings::default(), &gw),
            Err(ExtractionError::NoParticipantSpeech(_))
        ));
    }

    #[test]
    fn distill_empty_response_is_empty_distillation() {
        let dir = tempfile::tempdir().unwrap();
        let gw = canned_gateway(dir.path(), "");
        let t = transcript("t3", &[(Speaker::Participant, "uh the boy")]);
        assert!(matches!(
            distill_atoms(&t, &RequestSettings::default(), &gw),
            Err(ExtractionError::EmptyDistillation(_))
        ));
    }

    #[test]
    fn distill_filters_atoms_echoing_interviewer_turns() {
        let dir = tempfile::tempdir().unwrap();
        let gw = canned_gateway(
            dir.path(),
            "- what else is happening?\n- the boy reaches for the jar",
        );
        let t = transcript(
            "t4",
            &[
                (Speaker::Interviewer, "what else is happening?"),
                (Speaker::Participant, "the boy reaches for the jar"),
            ],
        );
        let atoms = distill_atoms(&t, &RequestSettings::default(), &gw).unwrap();
        assert_eq!(atoms.atoms, vec!["the boy reaches for the jar"]);
    }

    #[test]
    fn parse_atoms_handles_bullets_numbers_and_fallback() {
        assert_eq!(
            parse_atoms("- one\n• two\n* three\n1. four\n2) five"),
            vec!["one", "two", "three", "four", "five"]
        );
        assert_eq!(
            parse_atoms("The boy climbs. The water spills."),
            vec!["The boy climbs", "The water spills"]
        );
    }

    #[test]
    fn markers_from_canned_response_follow_category_table() {
        let dir = tempfile::tempdir().unwrap();
        let gw = canned_gateway(dir.path(), "repetition; sudden topic switching");
        let t = transcript("t5", &[(Speaker::Participant, "uh the the boy")]);
        let set = extract_markers(&t, &[], None, &RequestSettings::default(), &gw).unwrap();
        assert_eq!(set.markers.len(), 2);
        assert_eq!(set.markers[0].category, MarkerCategory::LexicalRecall);
        assert_eq!(set.markers[1].category, MarkerCategory::ThoughtOrganization);
    }

    #[test]
    fn unmatched_marker_goes_to_other() {
        assert_eq!(
            categorize_marker("uses color adjectives"),
            MarkerCategory::Other
        );
    }

    #[test]
    fn control_phrasings_win_over_deficit_keywords() {
        assert_eq!(
            categorize_marker("grammatically correct sentences"),
            MarkerCategory::NormalGrammar
        );
        assert_eq!(
            categorize_marker("inappropriate linguistic structures"),
            MarkerCategory::Grammar
        );
        assert_eq!(
            categorize_marker("ability to self-correct"),
            MarkerCategory::SelfCorrectAbility
        );
        assert_eq!(
            categorize_marker("struggle to correct errors"),
            MarkerCategory::SelfCorrection
        );
    }

    #[test]
    fn fewshot_leak_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let gw = mock_gateway(dir.path());
        let t = transcript("t6", &[(Speaker::Participant, "the boy climbs")]);
        let fewshot = vec![FewshotExample {
            transcript_id: "test-split-id".into(),
            text: "PAR: hi\n".into(),
            label: Label::NC,
        }];
        let allowed: HashSet<String> = ["train-1".to_string()].into_iter().collect();
        assert!(matches!(
            extract_markers(&t, &fewshot, Some(&allowed), &RequestSettings::default(), &gw),
            Err(ExtractionError::FewshotLeak { .. })
        ));
    }

    #[test]
    fn categorize_counts_conserve_and_cover_spec_example() {
        let set = MarkerSet {
            transcript_id: "t".into(),
            markers: ["hesitation", "repetition", "vague descriptions"]
                .iter()
                .map(|n| Marker {
                    name: n.to_string(),
                    evidence: None,
                    category: categorize_marker(n),
                })
                .collect(),
            raw_response: String::new(),
        };
        let counts = categorize_markers(&set, &MarkerTaxonomy::default());
        assert_eq!(counts[&MarkerCategory::LexicalRecall], 3);
        let total: usize = counts.values().sum();
        assert_eq!(total, 3);

        let empty = MarkerSet {
            transcript_id: "t".into(),
            markers: vec![],
            raw_response: String::new(),
        };
        let counts = categorize_markers(&empty, &MarkerTaxonomy::default());
        assert!(counts.values().all(|c| *c == 0));
        assert_eq!(counts.len(), 9);
    }

    #[test]
    fn taxonomy_categories_are_disjoint() {
        let tax = MarkerTaxonomy::default();
        let ad: HashSet<_> = tax.ad_categories.iter().collect();
        let nc: HashSet<_> = tax.nc_categories.iter().collect();
        assert!(ad.is_disjoint(&nc));
        assert_eq!(ad.len(), 4);
        assert_eq!(nc.len(), 4);
    }

    #[test]
    fn extraction_is_reproducible_under_mock() {
        let t = transcript(
            "t7",
            &[
                (Speaker::Interviewer, "tell me more"),
                (Speaker::Participant, "uh the the boy is um on the thing"),
            ],
        );
        let run = || {
            let dir = tempfile::tempdir().unwrap();
            let gw = mock_gateway(dir.path());
            let atoms = distill_atoms(&t, &RequestSettings::default(), &gw).unwrap();
            let markers =
                extract_markers(&t, &[], None, &RequestSettings::default(), &gw).unwrap();
            (atoms, markers)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn artifact_store_round_trips_with_exact_schema() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(dir.path()).unwrap();
        let artifact = ExtractionArtifact {
            transcript_id: "t8".into(),
            atoms: vec!["the boy climbs".into()],
            markers: vec![MarkerRecord {
                name: "repetition".into(),
                category: MarkerCategory::LexicalRecall,
            }],
            raw_responses: BTreeMap::from([("ATOM_DISTILL".to_string(), "- x".to_string())]),
        };
        store.write(&artifact).unwrap();
        assert_eq!(store.read("t8").unwrap().unwrap(), artifact);
        assert!(store.read("absent").unwrap().is_none());

        // Field order in the file follows the documented schema.
        let raw = std::fs::read_to_string(dir.path().join("t8.json")).unwrap();
        let order: Vec<usize> = ["\"transcript_id\"", "\"atoms\"", "\"markers\"", "\"raw_responses\""]
            .iter()
            .map(|k| raw.find(k).unwrap_or_else(|| panic!("missing key {k}")))
            .collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]), "key order: {raw}");
        assert!(raw.find("\"name\"").unwrap() < raw.find("\"category\"").unwrap());
    }

    #[test]
    fn extract_corpus_writes_one_artifact_per_transcript() {
        let dir = tempfile::tempdir().unwrap();
        let cache = tempfile::tempdir().unwrap();
        let gw = mock_gateway(cache.path());
        let corpus = crate::planted::planted_corpus(8, 3);
        let store = ArtifactStore::open(dir.path()).unwrap();
        let stats =
            extract_corpus(&corpus, &corpus, 2, &store, &RequestSettings::default(), &gw).unwrap();
        assert_eq!(stats.transcripts, 8);
        assert_eq!(stats.requests, 16);
        assert_eq!(stats.cache_hits, 0);
        for t in corpus.transcripts() {
            let a = store.read(&t.id).unwrap().unwrap();
            assert!(!a.atoms.is_empty());
            assert!(!a.markers.is_empty());
        }
    }

    proptest! {
        // Interviewer-only content never survives as an atom, even when the
        // provider echoes the questions back.
        #[test]
        fn interviewer_text_never_becomes_an_atom(
            inv_words in proptest::collection::vec("[a-z]{2,8}", 2..5),
            par_words in proptest::collection::vec("[a-z]{2,8}", 2..5),
        ) {
            let inv = inv_words.join(" ");
            let par = format!("{} zzz", par_words.join(" "));
            prop_assume!(normalize_atom(&inv) != normalize_atom(&par));
            let dir = tempfile::tempdir().unwrap();
            let echo = format!("- {inv}\n- {par}");
            let gw = canned_gateway(dir.path(), &echo);
            let t = transcript(
                "p",
                &[(Speaker::Interviewer, inv.as_str()), (Speaker::Participant, par.as_str())],
            );
            let atoms = distill_atoms(&t, &RequestSettings::default(), &gw).unwrap();
            prop_assert!(atoms.atoms.iter().all(|a| normalize_atom(a) != normalize_atom(&inv)));
        }
    }
}
