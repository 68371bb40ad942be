//! Deterministic synthetic dialogue builder for desk-scale testing.
//!
//! Class labels are carried by lexical style features of the participant's
//! speech: one class speaks with fillers, repetitions, vague nouns, topic
//! drift, and fragmented grammar; the other with fluent, connective-rich,
//! detailed sentences. Every dialogue describes the same scene facts in the
//! same order, so the class signal is style, not content. No clinical data
//! is involved.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Label, Speaker, Transcript, Utterance};

const SCENE_SUBJECTS: &[(&str, &str)] = &[
    ("boy", "climbing on a stool to reach the cookie jar"),
    ("stool", "tipping over under him"),
    ("mother", "drying a plate beside the sink"),
    ("sink", "overflowing onto the kitchen floor"),
    ("girl", "reaching up for a cookie"),
    ("window", "standing open above the counter"),
    ("curtains", "hanging beside the open window"),
    ("water", "running over the edge of the basin"),
];

const INV_OPENERS: &[&str] = &[
    "can you tell me everything you see going on in this picture?",
    "please describe what is happening in the picture.",
];

const INV_FOLLOWUPS: &[&str] = &[
    "can you tell me more?",
    "what else is happening?",
    "is there anything else going on?",
    "what about over here?",
];

// Connective-rich templates for the fluent class.
const FLUENT_TEMPLATES: &[&str] = &[
    "the {s} is {d}, while the water keeps streaming across the tiles",
    "meanwhile the {s} is {d}, although nobody seems to notice the danger",
    "I can see that the {s} is {d}, because the faucet was left running",
    "the {s} appears to be {d}, which strikes me as rather precarious",
    "evidently the {s} is {d}, and the whole scene looks remarkably chaotic",
    "the {s} is {d}, so the consequences seem entirely predictable",
];

const FLUENT_CLOSERS: &[&str] = &[
    "altogether it is a wonderfully detailed domestic scene",
    "the composition captures an impressively ordinary afternoon",
    "everything suggests a meticulously observed household moment",
];

// Filler-heavy, fragmented templates for the impaired class.
const IMPAIRED_TEMPLATES: &[&str] = &[
    "uh the {s} is um doing the the thing",
    "the {s} is uh... the {s} is on the thing",
    "there is um a {s}. a {s} there",
    "um the {s} he he is taking the the stuff",
    "the {s} is uh something with the thing there",
    "uh {s}. um yes. the {s}",
];

const IMPAIRED_CLOSERS: &[&str] = &[
    "anyway I forget what it is called",
    "anyway back when I was young we had one of those",
    "uh I I do not know the the word for it",
];

fn fill(template: &str, subject: &str, detail: &str) -> String {
    template.replace("{s}", subject).replace("{d}", detail)
}

/// Builds `n` balanced labeled dialogues, fully determined by `(n, seed)`.
pub fn planted_corpus(n: usize, seed: u64) -> Corpus {
    let mut transcripts = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 2 == 0 { Label::AD } else { Label::NC };
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        transcripts.push(build_transcript(i, label, &mut rng));
    }
    Corpus::new(transcripts).expect("planted ids are unique")
}

fn build_transcript(idx: usize, label: Label, rng: &mut ChaCha8Rng) -> Transcript {
    let mut utterances = Vec::new();
    let push = |speaker: Speaker, text: String, utterances: &mut Vec<Utterance>| {
        let index = utterances.len();
        utterances.push(Utterance {
            speaker,
            text,
            index,
        });
    };

    push(
        Speaker::Interviewer,
        INV_OPENERS[rng.gen_range(0..INV_OPENERS.len())].to_string(),
        &mut utterances,
    );

    // Every dialogue walks the full scene in the same order: two facts per
    // participant turn, style drawn fresh for each sentence.
    for (turn, pair) in SCENE_SUBJECTS.chunks(2).enumerate() {
        let mut sentences = Vec::new();
        for (subject, detail) in pair {
            let sentence = match label {
                Label::NC => {
                    let tpl = FLUENT_TEMPLATES[rng.gen_range(0..FLUENT_TEMPLATES.len())];
                    fill(tpl, subject, detail)
                }
                Label::AD => {
                    let tpl = IMPAIRED_TEMPLATES[rng.gen_range(0..IMPAIRED_TEMPLATES.len())];
                    fill(tpl, subject, detail)
                }
            };
            sentences.push(sentence);
        }
        push(Speaker::Participant, sentences.join(". "), &mut utterances);
        if turn + 1 < SCENE_SUBJECTS.len() / 2 && rng.gen_bool(0.5) {
            push(
                Speaker::Interviewer,
                INV_FOLLOWUPS[rng.gen_range(0..INV_FOLLOWUPS.len())].to_string(),
                &mut utterances,
            );
        }
    }

    let closer = match label {
        Label::NC => FLUENT_CLOSERS[rng.gen_range(0..FLUENT_CLOSERS.len())],
        Label::AD => IMPAIRED_CLOSERS[rng.gen_range(0..IMPAIRED_CLOSERS.len())],
    };
    push(Speaker::Participant, closer.to_string(), &mut utterances);

    Transcript {
        id: format!("planted-{idx:04}"),
        label,
        utterances,
        source: "planted".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_is_balanced_and_deterministic() {
        let a = planted_corpus(200, 42);
        let b = planted_corpus(200, 42);
        assert_eq!(a.len(), 200);
        assert_eq!(a.count(Label::AD), 100);
        assert_eq!(a.count(Label::NC), 100);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn different_seeds_differ() {
        let a = planted_corpus(10, 1);
        let b = planted_corpus(10, 2);
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn class_signal_is_lexical_style_not_content() {
        let corpus = planted_corpus(50, 7);
        for t in corpus.transcripts() {
            assert!(t.has_participant_speech());
            let text = t.participant_text();
            // Same scene subjects for both classes.
            assert!(text.contains("stool"));
            assert!(text.contains("boy"));
            assert!(text.contains("mother"));
            match t.label {
                Label::AD => assert!(text.contains("uh") || text.contains("um"), "{text}"),
                Label::NC => assert!(!text.contains(" uh ") && !text.contains(" um "), "{text}"),
            }
        }
    }
}
