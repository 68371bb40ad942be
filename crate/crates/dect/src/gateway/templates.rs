//! Prompt templates with named `{placeholder}` variables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::GatewayError;

/// The five fixed prompt shapes the pipeline issues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TemplateId {
    MarkerExtract,
    AtomDistill,
    LslpGenerate,
    MimicGenerate,
    ZeroShotClassify,
}

impl TemplateId {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::MarkerExtract => "MARKER_EXTRACT",
            TemplateId::AtomDistill => "ATOM_DISTILL",
            TemplateId::LslpGenerate => "LSLP_GENERATE",
            TemplateId::MimicGenerate => "MIMIC_GENERATE",
            TemplateId::ZeroShotClassify => "ZERO_SHOT_CLASSIFY",
        }
    }

    pub fn all() -> [TemplateId; 5] {
        [
            TemplateId::MarkerExtract,
            TemplateId::AtomDistill,
            TemplateId::LslpGenerate,
            TemplateId::MimicGenerate,
            TemplateId::ZeroShotClassify,
        ]
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::all()
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| GatewayError::UnknownTemplate(s.to_string()))
    }
}

const ATOM_DISTILL_BODY: &str = "Given the following transcript of a dialog between a patient and a doctor, \
extract the patient's speech into individual observations that capture the key information provided by the patient. \
Each fact should be a concise statement that preserves the relevant context from the conversation.\n\
Transcript: {transcript}\n\
The Patient's observations:";

const MARKER_EXTRACT_BODY: &str = "Identify linguistic patterns, keywords, or phrases that could potentially \
indicate cognitive impairment or Alzheimer's disease.\n\
Examples:\n{examples}\n\
Transcript: {transcript}\n\
Linguistic markers:";

const LSLP_GENERATE_BODY: &str = "Given a list of fact observations extracted from patients' speech transcript: \
{atoms}\n\
Based on the fact observations, generate a new speech transcript with the following linguistic features: {features}";

const MIMIC_GENERATE_BODY: &str = "Given the following speech transcript, replicate the style of the original \
transcript without altering attributes or labels.\n\
Transcript: {transcript}\n\
New transcript:";

const ZERO_SHOT_CLASSIFY_BODY: &str = "Given the following transcript of a dialog between a patient and an \
interviewer, decide whether the patient shows signs of Alzheimer's disease or is a normal control. \
Answer with exactly one label: AD or NC.\n\
Transcript: {transcript}\n\
Answer:";

/// A prompt body plus the variable names it requires.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub template_id: TemplateId,
    pub body: String,
    pub required_variables: BTreeSet<String>,
}

impl PromptTemplate {
    /// Builds a template, deriving `required_variables` from the body so the
    /// two can never disagree.
    pub fn new(template_id: TemplateId, body: impl Into<String>) -> Self {
        let body = body.into();
        let required_variables = scan_placeholders(&body);
        PromptTemplate {
            template_id,
            body,
            required_variables,
        }
    }

    pub fn builtin(template_id: TemplateId) -> Self {
        let body = match template_id {
            TemplateId::AtomDistill => ATOM_DISTILL_BODY,
            TemplateId::MarkerExtract => MARKER_EXTRACT_BODY,
            TemplateId::LslpGenerate => LSLP_GENERATE_BODY,
            TemplateId::MimicGenerate => MIMIC_GENERATE_BODY,
            TemplateId::ZeroShotClassify => ZERO_SHOT_CLASSIFY_BODY,
        };
        PromptTemplate::new(template_id, body)
    }

    pub fn render(&self, variables: &BTreeMap<String, String>) -> Result<String, GatewayError> {
        let mut out = self.body.clone();
        for name in &self.required_variables {
            let value = variables
                .get(name)
                .filter(|v| !v.trim().is_empty())
                .ok_or_else(|| GatewayError::MissingVariable(name.clone()))?;
            out = out.replace(&format!("{{{name}}}"), value);
        }
        Ok(out)
    }
}

fn scan_placeholders(body: &str) -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let tail = &rest[open + 1..];
        match tail.find('}') {
            Some(close) => {
                let name = &tail[..close];
                if !name.is_empty() && name.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
                    names.insert(name.to_string());
                }
                rest = &tail[close + 1..];
            }
            None => break,
        }
    }
    names
}

/// Renders one of the built-in templates.
pub fn render_prompt(
    template_id: TemplateId,
    variables: &BTreeMap<String, String>,
) -> Result<String, GatewayError> {
    PromptTemplate::builtin(template_id).render(variables)
}
