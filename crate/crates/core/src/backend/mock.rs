//! Deterministic stand-ins for a model provider.
//!
//! [`ScriptedBackend`] replays a FIFO queue of canned completions and records
//! every call. [`RuleBackend`] inspects the rendered prompt and answers with
//! keyword-driven outputs in the same shapes a real model is asked for, which
//! is enough to drive long simulated sessions end to end.

use std::collections::VecDeque;
use std::sync::Mutex;

use super::{
    check_messages, BackendError, CallKind, ChatBackend, ChatMessage, EmbeddingVector,
    GenerationParams, ParamTable, Role,
};
use crate::ima::IMType;
use crate::prompts::{
    MARKER_CLIENT_UTTERANCE, MARKER_CURRENT_STAGE, MARKER_DIMENSION, MARKER_OUTPUT,
    MARKER_PREVIOUS_STAGE,
};
use crate::taxonomy::{levels_for_stage, Stage};

pub const DEFAULT_EMBEDDING_DIM: usize = 256;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the seed's little-endian bytes then `bytes`, finalized with
/// splitmix64. Stable across platforms and releases.
pub(crate) fn stable_hash(seed: u64, bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(h)
}

/// Signed hashed bag-of-words embedding, L2-normalized.
///
/// Tokens are lowercase alphanumeric runs; each adds ±1 to the bucket picked
/// by its hash (sign from the top bit). Text with no tokens, or whose counts
/// cancel out, falls back to a one-hot vector keyed by the trimmed text.
pub fn hash_embedding(seed: u64, text: &str, dim: usize) -> EmbeddingVector {
    let dim = dim.max(1);
    let mut values = vec![0.0f64; dim];
    let tokens: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect();
    for token in &tokens {
        let h = stable_hash(seed, token.as_bytes());
        values[(h % dim as u64) as usize] += if h >> 63 == 1 { -1.0 } else { 1.0 };
    }
    let mut norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        let key = if tokens.is_empty() {
            text.trim().to_string()
        } else {
            tokens.join(" ")
        };
        let h = stable_hash(seed, key.as_bytes());
        values[(h % dim as u64) as usize] = 1.0;
        norm = 1.0;
    }
    values.iter_mut().for_each(|v| *v /= norm);
    EmbeddingVector::new(values).expect("finite by construction")
}

fn embed_checked(seed: u64, text: &str, dim: usize) -> Result<EmbeddingVector, BackendError> {
    if text.trim().is_empty() {
        return Err(BackendError::InvalidRequest(
            "cannot embed empty text".into(),
        ));
    }
    Ok(hash_embedding(seed, text, dim))
}

/// One call as seen by [`ScriptedBackend`].
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedCall {
    pub kind: CallKind,
    pub params: GenerationParams,
    pub messages: Vec<ChatMessage>,
}

/// Replays canned completions in order, regardless of call kind.
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<String>>,
    calls: Mutex<Vec<RecordedCall>>,
    params: ParamTable,
    seed: u64,
    dim: usize,
}

impl ScriptedBackend {
    pub fn new<I, S>(script: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            queue: Mutex::new(script.into_iter().map(Into::into).collect()),
            calls: Mutex::new(Vec::new()),
            params: ParamTable::default(),
            seed: 0,
            dim: DEFAULT_EMBEDDING_DIM,
        }
    }

    pub fn with_params(mut self, params: ParamTable) -> Self {
        self.params = params;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn push(&self, completion: impl Into<String>) {
        self.queue
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push_back(completion.into());
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, messages: &[ChatMessage], kind: CallKind) -> Result<String, BackendError> {
        check_messages(messages)?;
        self.calls
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(RecordedCall {
                kind,
                params: self.params.get(kind),
                messages: messages.to_vec(),
            });
        self.queue
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .pop_front()
            .ok_or_else(|| BackendError::BackendUnavailable("script exhausted".into()))
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        embed_checked(self.seed, text, self.dim)
    }
}

/// Keyword-driven mock that answers every call kind in its contract shape.
#[derive(Debug, Clone)]
pub struct RuleBackend {
    seed: u64,
    dim: usize,
}

impl RuleBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            dim: DEFAULT_EMBEDDING_DIM,
        }
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim.max(1);
        self
    }

    fn pick<'a>(&self, salt: &str, key: &str, options: &[&'a str]) -> &'a str {
        let h = stable_hash(self.seed, format!("{salt}\u{1f}{key}").as_bytes());
        options[(h % options.len() as u64) as usize]
    }

    fn hash(&self, salt: &str, key: &str) -> u64 {
        stable_hash(self.seed, format!("{salt}\u{1f}{key}").as_bytes())
    }
}

fn last_user(messages: &[ChatMessage]) -> &str {
    messages
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .map_or("", |m| m.content.as_str())
}

fn system(messages: &[ChatMessage]) -> &str {
    messages.first().map_or("", |m| m.content.as_str())
}

fn marked_line<'a>(text: &'a str, marker: &str) -> Option<&'a str> {
    text.lines()
        .find_map(|l| l.trim().strip_prefix(marker))
        .map(str::trim)
}

fn contains_any(haystack: &str, needles: &[&str]) -> bool {
    needles.iter().any(|n| haystack.contains(n))
}

fn keyword_stage(utterance: &str) -> Option<Stage> {
    let u = utterance.to_lowercase();
    if contains_any(
        &u,
        &[
            "grandmother",
            "mother",
            "father",
            "sister",
            "brother",
            "friend",
            "family",
            "teacher",
        ],
    ) {
        Some(Stage::ReMembering)
    } else if contains_any(
        &u,
        &[
            "managed",
            "tried",
            "stronger",
            "differently",
            "will keep",
            "not the same",
            "proud",
        ],
    ) {
        Some(Stage::ReAuthoring)
    } else if contains_any(&u, &["anxiety", "pressure", "fear", "worry", "shadow"]) {
        Some(Stage::ProblemExternalization)
    } else {
        None
    }
}

/// IM type suggested by a single sentence, first rule wins.
fn keyword_im(sentence: &str) -> Option<IMType> {
    let s = sentence.to_lowercase();
    let rules: [(IMType, &[&str]); 6] = [
        (
            IMType::ProtestII,
            &[
                "i have the right",
                "i deserve",
                "my feelings are important",
                "my needs matter",
            ],
        ),
        (
            IMType::ReflectionII,
            &[
                "not the same person",
                "differently now",
                "used to",
                "anymore",
                "not like before",
            ],
        ),
        (
            IMType::ActionII,
            &[
                "i will",
                "i'll",
                "from now on",
                "every sunday",
                "every morning",
            ],
        ),
        (
            IMType::ProtestI,
            &["had enough", "won't let", "not fair", "refuse"],
        ),
        (
            IMType::ReflectionI,
            &["i realize", "i realized", "i understand", "i notice"],
        ),
        (
            IMType::ActionI,
            &["i managed", "i tried", "i went", "i called", "i started"],
        ),
    ];
    rules
        .iter()
        .find(|(_, keys)| contains_any(&s, keys))
        .map(|(t, _)| *t)
}

/// Sentence slices of `text`, each trimmed, terminators kept.
fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if matches!(c, '.' | '!' | '?') {
            let end = i + c.len_utf8();
            let next_is_space = text[end..].chars().next().is_none_or(char::is_whitespace);
            if next_is_space {
                out.push(text[start..end].trim());
                start = end;
            }
        }
    }
    out.push(text[start..].trim());
    out.retain(|s| !s.is_empty());
    out
}

const CLIENT_OPENING: &[&str] = &[
    "I have been feeling really low lately and I can't sleep.",
    "Work has been overwhelming and I keep thinking I am not good enough.",
    "My boss criticized me in front of everyone last week.",
    "I don't really know where to start, everything feels heavy.",
    "Most days I just stay in bed and avoid my messages.",
];

const CLIENT_PROBLEM: &[&str] = &[
    "The anxiety follows me everywhere, like a shadow.",
    "This pressure tells me I will fail no matter what.",
    "The fear keeps me from answering when people reach out.",
    "When the worry shows up, I can't focus on anything.",
    "I realize the anxiety has been running my evenings.",
    "I've had enough of letting this fear decide for me.",
];

const CLIENT_OUTCOMES: &[&str] = &[
    "Yesterday I managed to go for a walk even though the anxiety was loud.",
    "I realized I am stronger than the worry says.",
    "I'm not the same person I was a month ago, I handle things differently now.",
    "I will keep taking small walks every morning.",
    "I tried speaking up in the meeting and it went fine.",
    "I refuse to let the pressure write my whole story.",
];

const CLIENT_RELATIONS: &[&str] = &[
    "My grandmother always believed in me when I doubted myself.",
    "My friend Sam reminds me that I matter.",
    "I think my sister learned from me that it's okay to ask for help.",
    "I have the right to rest and take care of myself.",
    "From now on I'll call my mother every Sunday.",
    "My old teacher used to say I notice things others miss.",
];

const CLIENT_RAMBLE: &str = "Honestly there is so much going on that I keep going back and forth in my head about every single conversation I had this week and it just never seems to stop no matter what I do.";

const DRAFTS: [&[&str]; 4] = [
    &[
        "That sounds like a lot to carry. What has been weighing on you most?",
        "Thank you for telling me this. When did you first notice it?",
        "I hear how tired you are. What does a hard day look like for you?",
    ],
    &[
        "If this feeling had a name, what would you call it?",
        "How does this worry show up in your day?",
        "What does the pressure ask you to do that you'd rather not?",
    ],
    &[
        "You stepped out despite the fear. What made that possible?",
        "What does that moment say about what matters to you?",
        "What might the next small step look like?",
    ],
    &[
        "Who in your life would not be surprised by this strength?",
        "How do you think they see you?",
        "What difference have you made for them?",
    ],
];

const RESPONSES: &[&str] = &[
    "That sounds really heavy 🌧️ I'm glad you shared it with me 🤝 What felt hardest about it? 🤔",
    "You noticed something important there 🌱 What helped you see it that way? ✨",
    "It makes sense that you feel this way 💛 When does it show up the most? 🕰️",
    "That took real courage 💪 What does that step tell you about yourself? 🌟",
    "It sounds like they matter a lot to you 🫶 How would they describe you? 🙂",
    "I can hear how much you care 💬 What would you like more of in your days? 🌤️",
];

const ROLE_PLAY: &[&str] = &[
    "That sounds tough, and I'm glad you told me. What's been on your mind most today?",
    "I hear you. How have you been looking after yourself lately?",
    "Thanks for sharing that. What would make this week a little lighter?",
    "It makes sense you'd feel that way. What usually helps when it gets like this?",
];

impl RuleBackend {
    fn stage_planning(&self, messages: &[ChatMessage]) -> String {
        let utterance = last_user(messages);
        let previous = marked_line(system(messages), MARKER_PREVIOUS_STAGE)
            .and_then(|s| Stage::parse_label(s).ok());
        let stage = keyword_stage(utterance)
            .or(previous)
            .unwrap_or(Stage::TrustBuilding);
        let draft = self.pick(
            "draft-stage",
            utterance,
            DRAFTS[usize::from(stage.ordinal() - 1)],
        );
        format!(
            "```YAML\nStage: {}\nResponse: {draft}\n```",
            stage.label().to_lowercase()
        )
    }

    fn reflection_planning(&self, messages: &[ChatMessage]) -> String {
        let utterance = last_user(messages);
        let stage = marked_line(system(messages), MARKER_CURRENT_STAGE)
            .and_then(|s| Stage::parse_label(s).ok())
            .unwrap_or(Stage::TrustBuilding);
        let levels = levels_for_stage(stage);
        let level = levels[(self.hash("level", utterance) % levels.len() as u64) as usize];
        // a few prompt-example spellings, so alias handling stays exercised
        let label = match (stage, level.index) {
            (Stage::TrustBuilding, 1) => "Exploring the Problem Event",
            (Stage::TrustBuilding, 2) => "Empathic Comforting",
            (Stage::ProblemExternalization, 3) => "Evaluating the Problem's Effects",
            _ => level.name,
        };
        let draft = self.pick(
            "draft-level",
            utterance,
            DRAFTS[usize::from(stage.ordinal() - 1)],
        );
        format!("```YAML\nReflection_level: {label}\nResponse: {draft}\n```")
    }

    fn client_simulation(&self, messages: &[ChatMessage]) -> String {
        // the simulated client speaks as the assistant
        let turn = messages
            .iter()
            .filter(|m| m.role == Role::Assistant)
            .count()
            + 1;
        let bank = match turn {
            0..=5 => CLIENT_OPENING,
            6..=14 => CLIENT_PROBLEM,
            15..=24 => CLIENT_OUTCOMES,
            _ => CLIENT_RELATIONS,
        };
        let key = format!("{turn}\u{1f}{}", last_user(messages));
        let h = self.hash("client", &key);
        let count = 1 + (h % 2) as usize;
        let mut parts: Vec<&str> = (0..count)
            .map(|i| bank[((h >> (8 * (i + 1))) % bank.len() as u64) as usize])
            .collect();
        parts.dedup();
        if h.is_multiple_of(5) {
            parts.push(CLIENT_RAMBLE);
        }
        format!("```YAML\nuser: {}\n```", parts.join(" "))
    }

    fn im_annotation(&self, messages: &[ChatMessage]) -> String {
        let prompt = last_user(messages);
        let utterance = prompt
            .rfind(MARKER_CLIENT_UTTERANCE)
            .map(|i| &prompt[i + MARKER_CLIENT_UTTERANCE.len()..])
            .map(|rest| rest.find(MARKER_OUTPUT).map_or(rest, |j| &rest[..j]))
            .unwrap_or(prompt)
            .trim()
            .trim_matches('"');
        let tagged: Vec<String> = sentences(utterance)
            .into_iter()
            .filter_map(|s| keyword_im(s).map(|t| format!("<{0}>{s}</{0}>", t.label())))
            .collect();
        if tagged.is_empty() {
            return "```YAML\nannotation: None\nresource: None\nconfidence: 0.85\nlatent_narrative_dynamics_analysis: Client describes the current situation\nwithout contesting the problem story.\n```".into();
        }
        let h = self.hash("resource", utterance);
        let resource = [
            "client-generated",
            "therapist-prompted, client-elaborated",
            "therapist-initiated, client-accepted",
        ][(h % 3) as usize];
        let confidence = 0.6 + ((h >> 8) % 40) as f64 / 100.0;
        format!(
            "```YAML\nannotation: {}\nresource: {resource}\nconfidence: {confidence:.2}\nlatent_narrative_dynamics_analysis: Client distances from the dominant story\nand signals a preferred direction.\n```",
            tagged.join(" ")
        )
    }

    fn dimension_evaluation(&self, messages: &[ChatMessage]) -> String {
        let prompt = last_user(messages);
        let dimension = marked_line(prompt, MARKER_DIMENSION)
            .unwrap_or("score")
            .to_string();
        let h = self.hash("dimension", prompt);
        let score = 2.0 + 0.5 * (h % 6) as f64;
        format!("```YAML\n{dimension}: {score:.1}\nexplanation: Consistent with the rubric in most turns.\n```")
    }
}

impl ChatBackend for RuleBackend {
    fn complete(&self, messages: &[ChatMessage], kind: CallKind) -> Result<String, BackendError> {
        check_messages(messages)?;
        Ok(match kind {
            CallKind::StagePlanning => self.stage_planning(messages),
            CallKind::ReflectionPlanning => self.reflection_planning(messages),
            CallKind::ResponseGeneration => self
                .pick("response", last_user(messages), RESPONSES)
                .to_string(),
            CallKind::TherapistRolePlay => self
                .pick("role-play", last_user(messages), ROLE_PLAY)
                .to_string(),
            CallKind::ClientSimulation => self.client_simulation(messages),
            CallKind::ImAnnotation => self.im_annotation(messages),
            CallKind::DimensionEvaluation => self.dimension_evaluation(messages),
        })
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        embed_checked(self.seed, text, self.dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys_user(user: &str) -> Vec<ChatMessage> {
        vec![ChatMessage::system("sys"), ChatMessage::user(user)]
    }

    #[test]
    fn scripted_passthrough_and_exhaustion() {
        let b = ScriptedBackend::new(["A"]);
        assert_eq!(
            b.complete(&sys_user("hi"), CallKind::StagePlanning)
                .unwrap(),
            "A"
        );
        assert!(matches!(
            b.complete(&sys_user("hi"), CallKind::StagePlanning),
            Err(BackendError::BackendUnavailable(_))
        ));
        let calls = b.calls();
        assert_eq!(calls.len(), 2);
        assert_eq!(calls[0].params.max_tokens, 200);
    }

    #[test]
    fn scripted_records_im_annotation_params() {
        let b = ScriptedBackend::new(["x"]);
        b.complete(&sys_user("u"), CallKind::ImAnnotation).unwrap();
        let p = b.calls()[0].params;
        assert_eq!(
            (p.temperature, p.frequency_penalty, p.max_tokens),
            (0.1, 0.2, 512)
        );
    }

    #[test]
    fn embedding_is_deterministic_and_unit() {
        let b = RuleBackend::new(7);
        assert_eq!(b.embed("x").unwrap(), b.embed("x").unwrap());
        assert!((b.embed("hello world").unwrap().norm() - 1.0).abs() < 1e-9);
        assert!((b.embed("!!!").unwrap().norm() - 1.0).abs() < 1e-9);
        assert!(b.embed("  ").is_err());
        assert_eq!(
            RuleBackend::new(7).embed("a b").unwrap(),
            ScriptedBackend::new(Vec::<String>::new())
                .with_seed(7)
                .embed("a b")
                .unwrap()
        );
        assert_ne!(
            RuleBackend::new(7).embed("a b").unwrap(),
            RuleBackend::new(8).embed("a b").unwrap()
        );
    }

    #[test]
    fn sentence_splitting() {
        assert_eq!(sentences("One. Two! Three"), vec!["One.", "Two!", "Three"]);
        assert_eq!(sentences("v1.2 is out."), vec!["v1.2 is out."]);
        assert!(sentences("   ").is_empty());
    }

    #[test]
    fn keyword_rules() {
        assert_eq!(
            keyword_stage("my grandmother and the anxiety"),
            Some(Stage::ReMembering)
        );
        assert_eq!(
            keyword_stage("I managed despite the anxiety"),
            Some(Stage::ReAuthoring)
        );
        assert_eq!(
            keyword_stage("the anxiety"),
            Some(Stage::ProblemExternalization)
        );
        assert_eq!(keyword_stage("hello"), None);
        assert_eq!(
            keyword_im("I will keep walking every morning."),
            Some(IMType::ActionII)
        );
        assert_eq!(keyword_im("I realized it lies."), Some(IMType::ReflectionI));
        assert_eq!(keyword_im("Nice weather."), None);
    }
}
