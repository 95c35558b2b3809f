//! Shared data model: the record types that flow between pipeline stages,
//! plus structural validation for each of them.
//!
//! Every record type serializes to a single NDJSON line and carries a
//! schema-version field `v` so downstream consumers can detect format drift.
//! Validation is total: `validate_record` never panics, it only reports
//! violations.

use serde::{Deserialize, Serialize};

use crate::tokenizer::TokenizerAdapter;

/// Current NDJSON schema version, stamped on every record line.
pub const SCHEMA_VERSION: u32 = 1;

pub(crate) fn schema_version() -> u32 {
    SCHEMA_VERSION
}

/// Collapses every whitespace run to a single space and trims the ends.
///
/// This is the normalization used for "is this text actually empty",
/// chosen/rejected equality, and substring validation of judge quotes —
/// anywhere formatting differences should not count as content differences.
pub fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Where a document came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Web,
    Book,
    SupervisedCorpus,
    Synthetic,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Web => "web",
            Source::Book => "book",
            Source::SupervisedCorpus => "supervised-corpus",
            Source::Synthetic => "synthetic",
        }
    }
}

/// Whether a record belongs to the adaptation domain or the general pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    InDomain,
    General,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::InDomain => "in-domain",
            Domain::General => "general",
        }
    }
}

/// Capability a task record (or eval task) exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Concept,
    Task,
    IfChat,
    Reasoning,
}

impl Capability {
    pub fn as_str(self) -> &'static str {
        match self {
            Capability::Concept => "concept",
            Capability::Task => "task",
            Capability::IfChat => "if_chat",
            Capability::Reasoning => "reasoning",
        }
    }
}

/// Raw text document used for continued pretraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    #[serde(default = "schema_version")]
    pub v: u32,
    pub id: String,
    pub text: String,
    pub source: Source,
    pub domain: Domain,
    /// Optional topic label (e.g. one of the configured domain topics).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
    /// Token count under the pipeline tokenizer; must stay recomputable.
    pub token_count: u64,
}

impl Document {
    /// Builds a document, computing `token_count` with `tokenizer`.
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        source: Source,
        domain: Domain,
        tokenizer: &dyn TokenizerAdapter,
    ) -> Self {
        let text = text.into();
        let token_count = tokenizer.count(&text) as u64;
        Document {
            v: SCHEMA_VERSION,
            id: id.into(),
            text,
            source,
            domain,
            topic: None,
            token_count,
        }
    }
}

/// Speaker role in a chat turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

/// One chat turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
}

impl Turn {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Turn {
            role,
            content: content.into(),
        }
    }
}

/// Instruction-tuning record: a chat transcript plus provenance tags.
///
/// A record may be prompt-only (no assistant turn) when it carries a
/// `gold_answer`; those records feed preference-pair synthesis rather than
/// supervised tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    #[serde(default = "schema_version")]
    pub v: u32,
    pub id: String,
    pub turns: Vec<Turn>,
    pub domain: Domain,
    pub capability: Capability,
    /// Name of the dataset the record was drawn or derived from.
    pub source_dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
}

impl TaskRecord {
    /// Total tokens across all turn contents (markers excluded; rendering
    /// adds those).
    pub fn content_tokens(&self, tokenizer: &dyn TokenizerAdapter) -> u64 {
        self.turns
            .iter()
            .map(|t| tokenizer.count(&t.content) as u64)
            .sum()
    }

    /// Content of the last user turn, used as the prompt text in synthesis.
    pub fn last_user_content(&self) -> Option<&str> {
        self.turns
            .iter()
            .rev()
            .find(|t| t.role == Role::User)
            .map(|t| t.content.as_str())
    }
}

/// What a packed segment holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Cpt,
    It,
    Pad,
}

/// Half-open token range `[start, end)` inside a packed record, mapping back
/// to the source record it was cut from. Pad segments use record_id `-`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub record_id: String,
    pub kind: SegmentKind,
}

/// Fixed-context training sequence with a per-token loss mask and the
/// segment map needed to reverse the packing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedTrainingRecord {
    #[serde(default = "schema_version")]
    pub v: u32,
    pub tokens: Vec<u32>,
    /// 1 = position contributes to the loss, 0 = masked out.
    pub loss_mask: Vec<u8>,
    pub segments: Vec<Segment>,
    /// Curriculum group this sequence belongs to.
    pub recipe_group: u32,
}

/// Preference pair family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PairKind {
    /// Final-answer pair: whole correct trajectory vs whole incorrect one.
    Fap,
    /// Step-correction pair: corrected step vs first incorrect step.
    Scp,
}

impl PairKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PairKind::Fap => "FAP",
            PairKind::Scp => "SCP",
        }
    }
}

/// The literal question appended to every step-correction prompt.
pub const NEXT_STEP_QUESTION: &str = "What is the next step?";

/// Chosen/rejected completion pair for preference optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    #[serde(default = "schema_version")]
    pub v: u32,
    pub id: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub kind: PairKind,
    /// Id of the task record the pair was synthesized from.
    pub source_prompt_id: String,
    /// Raw reward-model replies that justified this pair, for audit.
    pub judgments: Vec<String>,
}

/// Mixed training stream element: a CPT document or an IT task record,
/// tagged so the packer knows which splitting rule applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainingUnit {
    Cpt {
        #[serde(default = "schema_version")]
        v: u32,
        doc: Document,
    },
    It {
        #[serde(default = "schema_version")]
        v: u32,
        task: TaskRecord,
    },
}

impl TrainingUnit {
    pub fn cpt(doc: Document) -> Self {
        TrainingUnit::Cpt {
            v: SCHEMA_VERSION,
            doc,
        }
    }

    pub fn it(task: TaskRecord) -> Self {
        TrainingUnit::It {
            v: SCHEMA_VERSION,
            task,
        }
    }

    pub fn id(&self) -> &str {
        match self {
            TrainingUnit::Cpt { doc, .. } => &doc.id,
            TrainingUnit::It { task, .. } => &task.id,
        }
    }

    pub fn is_it(&self) -> bool {
        matches!(self, TrainingUnit::It { .. })
    }

    /// Token weight of the unit (document token count, or summed turn
    /// contents for a task record).
    pub fn tokens(&self, tokenizer: &dyn TokenizerAdapter) -> u64 {
        match self {
            TrainingUnit::Cpt { doc, .. } => doc.token_count,
            TrainingUnit::It { task, .. } => task.content_tokens(tokenizer),
        }
    }
}

/// Any record the validator understands.
#[derive(Debug, Clone)]
pub enum AnyRecord {
    Document(Document),
    Task(TaskRecord),
    Packed(PackedTrainingRecord),
    Pair(PreferencePair),
}

/// Validates a record, returning an empty list when it is well formed.
/// Never panics, whatever the input.
pub fn validate_record(record: &AnyRecord, tokenizer: &dyn TokenizerAdapter) -> Vec<String> {
    match record {
        AnyRecord::Document(d) => document_violations(d, tokenizer),
        AnyRecord::Task(t) => task_violations(t),
        AnyRecord::Packed(p) => packed_violations(p),
        AnyRecord::Pair(p) => pair_violations(p),
    }
}

/// Structural checks for a [`Document`].
pub fn document_violations(doc: &Document, tokenizer: &dyn TokenizerAdapter) -> Vec<String> {
    let mut out = Vec::new();
    if doc.id.is_empty() {
        out.push("id is empty".to_string());
    }
    if normalize_ws(&doc.text).is_empty() {
        out.push("text is empty after whitespace normalization".to_string());
    }
    let recount = tokenizer.count(&doc.text) as u64;
    if doc.token_count != recount {
        out.push(format!(
            "token_count {} does not match tokenizer count {}",
            doc.token_count, recount
        ));
    }
    out
}

/// Structural checks for a [`TaskRecord`].
pub fn task_violations(task: &TaskRecord) -> Vec<String> {
    let mut out = Vec::new();
    if task.id.is_empty() {
        out.push("id is empty".to_string());
    }
    if task.turns.is_empty() {
        out.push("record has no turns".to_string());
        return out;
    }
    for (i, turn) in task.turns.iter().enumerate() {
        if normalize_ws(&turn.content).is_empty() {
            out.push(format!("turn {i} content is empty"));
        }
    }
    // An optional leading system turn, then user/assistant strictly
    // alternating starting with user.
    let mut body = task.turns.as_slice();
    if body.first().map(|t| t.role) == Some(Role::System) {
        body = &body[1..];
    }
    if body.is_empty() {
        out.push("record has only a system turn".to_string());
    }
    let mut alternates = true;
    for (i, turn) in body.iter().enumerate() {
        let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
        if turn.role != expected {
            alternates = false;
            break;
        }
    }
    if !alternates {
        out.push(
            "turn roles must alternate user/assistant after an optional leading system turn"
                .to_string(),
        );
    }
    let has_user = task.turns.iter().any(|t| t.role == Role::User);
    let has_assistant = task.turns.iter().any(|t| t.role == Role::Assistant);
    if !(has_user && has_assistant) && !(has_user && task.gold_answer.is_some()) {
        out.push(
            "record needs a user and an assistant turn, or a user turn plus gold_answer"
                .to_string(),
        );
    }
    out
}

/// Structural checks for a [`PackedTrainingRecord`].
pub fn packed_violations(rec: &PackedTrainingRecord) -> Vec<String> {
    let mut out = Vec::new();
    if rec.tokens.len() != rec.loss_mask.len() {
        out.push(format!(
            "tokens and loss_mask lengths differ ({} vs {})",
            rec.tokens.len(),
            rec.loss_mask.len()
        ));
    }
    if rec.loss_mask.iter().any(|&m| m > 1) {
        out.push("loss_mask contains values outside {0, 1}".to_string());
    }
    // Segments must tile [0, len) exactly, in order, with no gaps or overlap.
    let len = rec.tokens.len();
    let mut cursor = 0usize;
    let mut tiled = true;
    for seg in &rec.segments {
        if seg.start != cursor || seg.end <= seg.start {
            tiled = false;
            break;
        }
        cursor = seg.end;
    }
    if tiled && cursor != len {
        tiled = false;
    }
    if !tiled {
        out.push(format!(
            "segments do not tile [0, {len}) exactly (gap, overlap, or empty segment)"
        ));
    }
    for seg in &rec.segments {
        if seg.kind == SegmentKind::Pad {
            let lo = seg.start.min(rec.loss_mask.len());
            let hi = seg.end.min(rec.loss_mask.len()).max(lo);
            let masked = rec.loss_mask[lo..hi].iter().all(|&m| m == 0);
            if !masked {
                out.push(format!(
                    "pad segment [{}, {}) has positions with mask 1",
                    seg.start, seg.end
                ));
            }
        }
    }
    out
}

/// Structural checks for a [`PreferencePair`].
pub fn pair_violations(pair: &PreferencePair) -> Vec<String> {
    let mut out = Vec::new();
    if pair.id.is_empty() {
        out.push("id is empty".to_string());
    }
    if normalize_ws(&pair.prompt).is_empty() {
        out.push("prompt is empty".to_string());
    }
    if normalize_ws(&pair.chosen) == normalize_ws(&pair.rejected) {
        out.push("chosen and rejected are identical after whitespace normalization".to_string());
    }
    if pair.kind == PairKind::Scp && !pair.prompt.trim_end().ends_with(NEXT_STEP_QUESTION) {
        out.push(format!(
            "SCP prompt must end with \"{NEXT_STEP_QUESTION}\""
        ));
    }
    out
}

/// Returns the ids that appear more than once, in first-seen order.
pub fn duplicate_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut dups = Vec::new();
    for id in ids {
        if !seen.insert(id) && !dups.iter().any(|d| d == id) {
            dups.push(id.to_string());
        }
    }
    dups
}
