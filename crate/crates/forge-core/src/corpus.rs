//! Corpus curation: LLM quality scoring and filtering of raw text,
//! exercise extraction from book chunks, and answer backfill for exercises
//! the material left unanswered.
//!
//! Scoring and extraction fan out through the gateway per document; all
//! selection logic here is pure so reruns against a recorded audit log
//! reproduce identical outputs.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gateway::parse::{field_i64, field_str, field_str_list};
use crate::gateway::{ChatMessage, ChatRequest, Gateway};
use crate::prompts;
use crate::records::{
    schema_version, Capability, Document, Role, Source, TaskRecord, Turn, SCHEMA_VERSION,
};
use crate::tokenizer::TokenizerAdapter;

/// Literal marker for an absent exercise part, as the extraction prompt
/// instructs the model to emit.
pub const NOT_AVAILABLE: &str = "N/A";

/// Judgment score recorded when the judge's reply could not be parsed; such
/// documents are quarantined rather than kept or threshold-dropped.
pub const QUARANTINE_SCORE: i64 = -1;

/// Keep threshold on the 0–5 additive quality scale (score ≥ threshold is
/// kept).
pub const DEFAULT_QUALITY_THRESHOLD: i64 = 4;

/// Scoring/extraction chunk limit in whitespace tokens.
pub const CHUNK_TOKENS: usize = 2000;

const JUDGE_MAX_TOKENS: u32 = 512;
const EXTRACT_MAX_TOKENS: u32 = 4096;
const BACKFILL_MAX_TOKENS: u32 = 1024;

/// Quality verdict for one document under the additive 0–5 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityJudgment {
    #[serde(default = "schema_version")]
    pub v: u32,
    pub doc_id: String,
    /// 0–5, or [`QUARANTINE_SCORE`] when the judge reply was unparseable.
    pub score: i64,
    pub justification: String,
}

/// Where an exercise's answer came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSource {
    Material,
    Backfilled,
}

/// One exercise lifted from book material. Absent parts hold
/// [`NOT_AVAILABLE`]; `answer_source` stays unset while the answer is
/// pending backfill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exercise {
    #[serde(default = "schema_version")]
    pub v: u32,
    pub question: String,
    pub scenario: String,
    pub exhibit: String,
    pub answer_choices: String,
    pub answer: String,
    pub source_doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_source: Option<AnswerSource>,
}

/// Record written to the quarantine file when a model reply defeats
/// structured parsing even after the corrective retry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarantineEntry {
    #[serde(default = "schema_version")]
    pub v: u32,
    pub doc_id: String,
    /// Pipeline stage that quarantined the document.
    pub stage: String,
    pub reason: String,
    /// The unparseable reply, kept for manual triage.
    pub raw: String,
}

/// Invariant violations for an [`Exercise`]; empty means valid.
pub fn exercise_violations(ex: &Exercise) -> Vec<String> {
    let mut violations = Vec::new();
    if ex.question.trim().is_empty() {
        violations.push("question is empty".to_string());
    }
    if ex.answer_source == Some(AnswerSource::Material) && ex.answer == NOT_AVAILABLE {
        violations.push("material-sourced answer is N/A".to_string());
    }
    if ex.answer_source == Some(AnswerSource::Backfilled) && ex.answer == NOT_AVAILABLE {
        violations.push("backfilled answer is N/A".to_string());
    }
    violations
}

/// Canonicalizes a model-emitted part: trims, and maps the "N/A" spellings
/// the extraction prompt provokes ("N/A", "n/a", "N/A.") onto
/// [`NOT_AVAILABLE`].
fn canonical_part(raw: &str) -> String {
    let trimmed = raw.trim();
    let bare = trimmed.trim_end_matches('.');
    if bare.eq_ignore_ascii_case("n/a") || bare.is_empty() {
        NOT_AVAILABLE.to_string()
    } else {
        trimmed.to_string()
    }
}

/// Scores one document with the quality-filter prompt. A reply that cannot
/// be parsed even after the corrective retry yields the
/// [`QUARANTINE_SCORE`] sentinel plus a quarantine entry; transport wiring
/// errors propagate. Out-of-range scores clamp into [0, 5] with a warning.
pub fn score_document(
    gateway: &Gateway,
    judge: &str,
    doc: &Document,
) -> Result<(QualityJudgment, Option<QuarantineEntry>)> {
    let request = ChatRequest {
        endpoint: judge.to_string(),
        messages: vec![ChatMessage::user(prompts::fill_quality_filter(&doc.text))],
        temperature: 0.0,
        max_tokens: JUDGE_MAX_TOKENS,
        seed: None,
    };
    match gateway.complete_structured(&request, prompts::QUALITY_FILTER_FIELDS) {
        Ok(structured) => {
            let justification = field_str(&structured.fields, "Justification").unwrap_or_default();
            let raw_score = field_i64(&structured.fields, "Score");
            let score = match raw_score {
                Some(s) if (0..=5).contains(&s) => s,
                Some(s) => {
                    log::warn!("doc {}: score {s} outside [0,5], clamping", doc.id);
                    s.clamp(0, 5)
                }
                None => {
                    // "Score" was present (required) but not numeric.
                    return Ok((
                        QualityJudgment {
                            v: SCHEMA_VERSION,
                            doc_id: doc.id.clone(),
                            score: QUARANTINE_SCORE,
                            justification,
                        },
                        Some(QuarantineEntry {
                            v: SCHEMA_VERSION,
                            doc_id: doc.id.clone(),
                            stage: "quality-filter".to_string(),
                            reason: "Score field not numeric".to_string(),
                            raw: structured.raw,
                        }),
                    ));
                }
            };
            Ok((
                QualityJudgment {
                    v: SCHEMA_VERSION,
                    doc_id: doc.id.clone(),
                    score,
                    justification,
                },
                None,
            ))
        }
        Err(Error::StructuredParse { message, raw }) => Ok((
            QualityJudgment {
                v: SCHEMA_VERSION,
                doc_id: doc.id.clone(),
                score: QUARANTINE_SCORE,
                justification: String::new(),
            },
            Some(QuarantineEntry {
                v: SCHEMA_VERSION,
                doc_id: doc.id.clone(),
                stage: "quality-filter".to_string(),
                reason: message,
                raw,
            }),
        )),
        Err(other) => Err(other),
    }
}

/// Scores a whole corpus, fanning out through the gateway. Judgments come
/// back in input order regardless of completion order.
pub fn score_corpus(
    gateway: &Gateway,
    judge: &str,
    docs: &[Document],
) -> Result<(Vec<QualityJudgment>, Vec<QuarantineEntry>)> {
    #[cfg(feature = "parallel")]
    let scored: Result<Vec<_>> = docs
        .par_iter()
        .map(|doc| score_document(gateway, judge, doc))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let scored: Result<Vec<_>> = docs
        .iter()
        .map(|doc| score_document(gateway, judge, doc))
        .collect();
    let scored = scored?;
    let mut judgments = Vec::with_capacity(scored.len());
    let mut quarantine = Vec::new();
    for (judgment, entry) in scored {
        judgments.push(judgment);
        quarantine.extend(entry);
    }
    Ok((judgments, quarantine))
}

/// Outcome of threshold filtering; `kept + dropped + quarantined` always
/// equals the input count.
#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub kept: Vec<Document>,
    pub dropped: usize,
    pub quarantined: usize,
}

/// Keeps documents whose quality score is at least `threshold`, preserving
/// input order. Quarantine-sentinel scores count separately from
/// threshold drops. A document without a judgment is a pipeline wiring bug
/// and aborts.
pub fn filter_corpus(
    docs: &[Document],
    judgments: &[QualityJudgment],
    threshold: i64,
) -> Result<FilterOutcome> {
    let scores: std::collections::HashMap<&str, i64> = judgments
        .iter()
        .map(|j| (j.doc_id.as_str(), j.score))
        .collect();
    let mut kept = Vec::new();
    let mut dropped = 0usize;
    let mut quarantined = 0usize;
    for doc in docs {
        let score = scores
            .get(doc.id.as_str())
            .copied()
            .ok_or_else(|| Error::MissingJudgment(doc.id.clone()))?;
        if score == QUARANTINE_SCORE {
            quarantined += 1;
        } else if score >= threshold {
            kept.push(doc.clone());
        } else {
            dropped += 1;
        }
    }
    log::info!(
        "quality filter: kept {} dropped {dropped} quarantined {quarantined} of {}",
        kept.len(),
        docs.len()
    );
    Ok(FilterOutcome {
        kept,
        dropped,
        quarantined,
    })
}

/// Extracts exercises from one book chunk. The model returns five parallel
/// lists (questions, scenarios, exhibits, answer choices, answers); a length
/// mismatch truncates to the shortest with a warning. Unparseable replies
/// yield an empty list plus a quarantine entry.
pub fn extract_exercises(
    gateway: &Gateway,
    extractor: &str,
    chunk: &Document,
) -> Result<(Vec<Exercise>, Option<QuarantineEntry>)> {
    let request = ChatRequest {
        endpoint: extractor.to_string(),
        messages: vec![ChatMessage::user(prompts::fill_exercise_extraction(
            &chunk.text,
        ))],
        temperature: 0.0,
        max_tokens: EXTRACT_MAX_TOKENS,
        seed: None,
    };
    let structured = match gateway.complete_structured(&request, prompts::EXERCISE_EXTRACTION_FIELDS)
    {
        Ok(structured) => structured,
        Err(Error::StructuredParse { message, raw }) => {
            return Ok((
                Vec::new(),
                Some(QuarantineEntry {
                    v: SCHEMA_VERSION,
                    doc_id: chunk.id.clone(),
                    stage: "exercise-extraction".to_string(),
                    reason: message,
                    raw,
                }),
            ));
        }
        Err(other) => return Err(other),
    };
    let lists: Vec<Vec<String>> = ["Questions", "Scenario", "Exhibit", "Answer Choices", "Answer"]
        .iter()
        .map(|name| field_str_list(&structured.fields, name).unwrap_or_default())
        .collect();
    let shortest = lists.iter().map(Vec::len).min().unwrap_or(0);
    if lists.iter().any(|l| l.len() != shortest) {
        let lengths: Vec<usize> = lists.iter().map(Vec::len).collect();
        log::warn!(
            "doc {}: parallel list lengths {lengths:?} disagree; truncating to {shortest}",
            chunk.id
        );
    }
    let mut exercises = Vec::with_capacity(shortest);
    for i in 0..shortest {
        let question = lists[0][i].trim().to_string();
        if question.is_empty() {
            log::warn!("doc {}: skipping exercise {i} with empty question", chunk.id);
            continue;
        }
        let answer = canonical_part(&lists[4][i]);
        let answer_source = (answer != NOT_AVAILABLE).then_some(AnswerSource::Material);
        exercises.push(Exercise {
            v: SCHEMA_VERSION,
            question,
            scenario: canonical_part(&lists[1][i]),
            exhibit: canonical_part(&lists[2][i]),
            answer_choices: canonical_part(&lists[3][i]),
            answer,
            source_doc_id: chunk.id.clone(),
            answer_source,
        });
    }
    Ok((exercises, None))
}

/// Extracts exercises from every chunk, fanning out through the gateway.
pub fn extract_all(
    gateway: &Gateway,
    extractor: &str,
    chunks: &[Document],
) -> Result<(Vec<Exercise>, Vec<QuarantineEntry>)> {
    #[cfg(feature = "parallel")]
    let extracted: Result<Vec<_>> = chunks
        .par_iter()
        .map(|chunk| extract_exercises(gateway, extractor, chunk))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let extracted: Result<Vec<_>> = chunks
        .iter()
        .map(|chunk| extract_exercises(gateway, extractor, chunk))
        .collect();
    let extracted = extracted?;
    let mut exercises = Vec::new();
    let mut quarantine = Vec::new();
    for (batch, entry) in extracted {
        exercises.extend(batch);
        quarantine.extend(entry);
    }
    Ok((exercises, quarantine))
}

/// The question as posed to a model or a trainee: scenario and exhibit
/// context first, then the question, then any answer choices.
pub fn compose_question(ex: &Exercise) -> String {
    let mut parts = Vec::new();
    if ex.scenario != NOT_AVAILABLE {
        parts.push(format!("Scenario:\n{}", ex.scenario));
    }
    if ex.exhibit != NOT_AVAILABLE {
        parts.push(format!("Exhibit:\n{}", ex.exhibit));
    }
    parts.push(format!("Question: {}", ex.question));
    if ex.answer_choices != NOT_AVAILABLE {
        parts.push(format!("Answer Choices:\n{}", ex.answer_choices));
    }
    parts.join("\n\n")
}

/// Result of one backfill attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum BackfillOutcome {
    /// Answer was generated and attached.
    Filled(Exercise),
    /// Exercise already had a material answer; returned untouched.
    Unchanged(Exercise),
    /// Generation failed or came back empty; the exercise leaves the
    /// pipeline.
    Dropped { question: String, reason: String },
}

/// Generates an answer for an exercise whose material provided none. An
/// exercise that already has an answer is returned unchanged with a warning
/// (precondition violation is a no-op).
pub fn backfill_answer(
    gateway: &Gateway,
    generator: &str,
    ex: Exercise,
) -> Result<BackfillOutcome> {
    if ex.answer != NOT_AVAILABLE {
        log::warn!(
            "backfill called on exercise with a material answer (doc {}); leaving unchanged",
            ex.source_doc_id
        );
        return Ok(BackfillOutcome::Unchanged(ex));
    }
    let prompt = format!(
        "{}\n\nAnswer the question. Give the complete answer, including the reasoning.",
        compose_question(&ex)
    );
    let request = ChatRequest {
        endpoint: generator.to_string(),
        messages: vec![ChatMessage::user(prompt)],
        temperature: 0.0,
        max_tokens: BACKFILL_MAX_TOKENS,
        seed: None,
    };
    let response = gateway.complete_text(&request)?;
    let answer = response.text.trim().to_string();
    if response.is_error() || answer.is_empty() {
        log::warn!(
            "backfill generation failed for an exercise from doc {}; dropping",
            ex.source_doc_id
        );
        return Ok(BackfillOutcome::Dropped {
            question: ex.question,
            reason: if response.is_error() {
                "generation error".to_string()
            } else {
                "empty generation".to_string()
            },
        });
    }
    Ok(BackfillOutcome::Filled(Exercise {
        answer,
        answer_source: Some(AnswerSource::Backfilled),
        ..ex
    }))
}

/// Backfills every unanswered exercise, preserving order; returns the
/// surviving exercises and the drop count. Exercises that already carry a
/// material answer pass through untouched.
pub fn backfill_all(
    gateway: &Gateway,
    generator: &str,
    exercises: Vec<Exercise>,
) -> Result<(Vec<Exercise>, usize)> {
    let fill = |ex: Exercise| {
        if ex.answer != NOT_AVAILABLE {
            Ok(BackfillOutcome::Unchanged(ex))
        } else {
            backfill_answer(gateway, generator, ex)
        }
    };
    #[cfg(feature = "parallel")]
    let outcomes: Result<Vec<_>> = exercises.into_par_iter().map(fill).collect();
    #[cfg(not(feature = "parallel"))]
    let outcomes: Result<Vec<_>> = exercises.into_iter().map(fill).collect();
    let mut kept = Vec::new();
    let mut dropped = 0usize;
    for outcome in outcomes? {
        match outcome {
            BackfillOutcome::Filled(ex) | BackfillOutcome::Unchanged(ex) => kept.push(ex),
            BackfillOutcome::Dropped { .. } => dropped += 1,
        }
    }
    Ok((kept, dropped))
}

/// Converts an answered exercise into an instruction-tuning record (user
/// question, assistant answer, gold answer kept for preference synthesis).
/// Exercises still lacking an answer are not convertible.
pub fn exercise_to_task(ex: &Exercise, index: usize) -> Option<TaskRecord> {
    if ex.answer == NOT_AVAILABLE {
        log::warn!(
            "exercise from doc {} still has no answer; not converting",
            ex.source_doc_id
        );
        return None;
    }
    Some(TaskRecord {
        v: SCHEMA_VERSION,
        id: format!("{}-ex{index}", ex.source_doc_id),
        turns: vec![
            Turn::new(Role::User, compose_question(ex)),
            Turn::new(Role::Assistant, ex.answer.clone()),
        ],
        domain: crate::records::Domain::InDomain,
        capability: Capability::Reasoning,
        source_dataset: "book-exercises".to_string(),
        gold_answer: Some(ex.answer.clone()),
    })
}

/// Splits text into chunks of at most `max_tokens` whitespace tokens,
/// cutting only at paragraph boundaries (runs of two or more newlines). A
/// single paragraph over the limit becomes its own oversized chunk. The
/// chunks concatenate back to the input byte-for-byte.
pub fn chunk_text(text: &str, tokenizer: &dyn TokenizerAdapter, max_tokens: usize) -> Vec<String> {
    if text.is_empty() {
        return Vec::new();
    }
    // Paragraph units, each carrying its trailing separator so that
    // concatenation is lossless.
    let bytes = text.as_bytes();
    let mut units: Vec<&str> = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < bytes.len() {
        if bytes[i] == b'\n' && i + 1 < bytes.len() && bytes[i + 1] == b'\n' {
            let mut end = i + 2;
            while end < bytes.len() && bytes[end] == b'\n' {
                end += 1;
            }
            units.push(&text[start..end]);
            start = end;
            i = end;
        } else {
            i += 1;
        }
    }
    if start < bytes.len() {
        units.push(&text[start..]);
    }

    let mut chunks = Vec::new();
    let mut current = String::new();
    let mut current_tokens = 0usize;
    for unit in units {
        let unit_tokens = tokenizer.count(unit);
        if !current.is_empty() && current_tokens + unit_tokens > max_tokens {
            chunks.push(std::mem::take(&mut current));
            current_tokens = 0;
        }
        if unit_tokens > max_tokens && current.is_empty() {
            log::warn!("paragraph of {unit_tokens} tokens exceeds the {max_tokens}-token chunk limit");
        }
        current.push_str(unit);
        current_tokens += unit_tokens;
    }
    if !current.is_empty() {
        chunks.push(current);
    }
    chunks
}

/// Splits an oversized document into chunk documents (`id#k`); documents
/// already within the limit pass through unchanged.
pub fn chunk_document(
    doc: &Document,
    tokenizer: &dyn TokenizerAdapter,
    max_tokens: usize,
) -> Vec<Document> {
    let chunks = chunk_text(&doc.text, tokenizer, max_tokens);
    if chunks.len() <= 1 {
        return vec![doc.clone()];
    }
    chunks
        .into_iter()
        .enumerate()
        .map(|(k, text)| {
            let mut chunk = Document::new(
                format!("{}#{k}", doc.id),
                text,
                doc.source,
                doc.domain,
                tokenizer,
            );
            chunk.topic = doc.topic.clone();
            chunk
        })
        .collect()
}

/// URL allowlist applied at web ingestion: a document from a web source is
/// kept only when its id (the URL) contains one of the patterns
/// (case-insensitive). Non-web documents always pass.
#[derive(Debug, Clone, Default)]
pub struct UrlAllowlist {
    patterns: Vec<String>,
}

impl UrlAllowlist {
    pub fn new(patterns: impl IntoIterator<Item = impl Into<String>>) -> Self {
        UrlAllowlist {
            patterns: patterns
                .into_iter()
                .map(|p| p.into().to_lowercase())
                .collect(),
        }
    }

    /// One pattern per line; blank lines and `#` comments are skipped.
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(UrlAllowlist::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string),
        ))
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn matches(&self, url: &str) -> bool {
        let url = url.to_lowercase();
        self.patterns.iter().any(|p| url.contains(p))
    }
}

/// Applies the allowlist to a web-sourced corpus; returns the kept
/// documents (order preserved) and the number dropped.
pub fn apply_allowlist(docs: Vec<Document>, allowlist: &UrlAllowlist) -> (Vec<Document>, usize) {
    let before = docs.len();
    let kept: Vec<Document> = docs
        .into_iter()
        .filter(|doc| doc.source != Source::Web || allowlist.matches(&doc.id))
        .collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::gateway::mock::{FnTransport, ScriptStep, ScriptedTransport};
    use crate::records::Domain;
    use crate::tokenizer::WhitespaceTokenizer;

    fn doc(id: &str, text: &str) -> Document {
        Document::new(id, text, Source::Book, Domain::InDomain, &WhitespaceTokenizer)
    }

    fn gateway_with(endpoint: &str, transport: Arc<dyn crate::gateway::Transport>) -> Gateway {
        let mut gateway = Gateway::builder().build().unwrap();
        gateway.register(endpoint, Default::default(), transport);
        gateway
    }

    #[test]
    fn scoring_passes_through_and_clamps() {
        let gateway = gateway_with(
            "judge",
            Arc::new(ScriptedTransport::new(vec![
                ScriptStep::Reply(r#"{"Justification": "solid", "Score": 5}"#.to_string()),
                ScriptStep::Reply(r#"{"Justification": "wild", "Score": 7}"#.to_string()),
                ScriptStep::Reply(r#"{"Justification": "text", "Score": "4"}"#.to_string()),
            ])),
        );
        let d = doc("d1", "bond duration measures rate sensitivity");
        let (j, q) = score_document(&gateway, "judge", &d).unwrap();
        assert_eq!((j.score, j.doc_id.as_str()), (5, "d1"));
        assert!(q.is_none());
        let (j, _) = score_document(&gateway, "judge", &d).unwrap();
        assert_eq!(j.score, 5, "out-of-range score clamps to 5");
        let (j, _) = score_document(&gateway, "judge", &d).unwrap();
        assert_eq!(j.score, 4, "string-typed score coerces");
    }

    #[test]
    fn unparseable_judge_reply_quarantines_with_sentinel() {
        // Two garbage replies: the initial one and the corrective retry.
        let gateway = gateway_with(
            "judge",
            Arc::new(ScriptedTransport::new(vec![
                ScriptStep::Reply("I refuse to emit JSON".to_string()),
                ScriptStep::Reply("still not JSON".to_string()),
            ])),
        );
        let d = doc("d1", "text");
        let (j, q) = score_document(&gateway, "judge", &d).unwrap();
        assert_eq!(j.score, QUARANTINE_SCORE);
        let q = q.expect("quarantine entry");
        assert_eq!(q.stage, "quality-filter");
        assert_eq!(q.doc_id, "d1");
        assert_eq!(q.raw, "still not JSON");
    }

    #[test]
    fn filtering_keeps_at_or_above_threshold_in_order() {
        let docs = vec![doc("a", "one"), doc("b", "two"), doc("c", "three")];
        let judgments: Vec<QualityJudgment> = [("a", 4), ("b", 3), ("c", 5)]
            .iter()
            .map(|(id, score)| QualityJudgment {
                v: SCHEMA_VERSION,
                doc_id: id.to_string(),
                score: *score,
                justification: String::new(),
            })
            .collect();
        let outcome = filter_corpus(&docs, &judgments, 4).unwrap();
        let kept: Vec<&str> = outcome.kept.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(kept, vec!["a", "c"]);
        assert_eq!((outcome.dropped, outcome.quarantined), (1, 0));

        let all = filter_corpus(&docs, &judgments, 0).unwrap();
        assert_eq!(all.kept.len(), 3);
        let none = filter_corpus(&docs, &judgments, 6).unwrap();
        assert!(none.kept.is_empty());
        assert_eq!(none.dropped, 3);
    }

    #[test]
    fn missing_judgment_aborts() {
        let docs = vec![doc("a", "one"), doc("mystery", "two")];
        let judgments = vec![QualityJudgment {
            v: SCHEMA_VERSION,
            doc_id: "a".to_string(),
            score: 5,
            justification: String::new(),
        }];
        let err = filter_corpus(&docs, &judgments, 4).unwrap_err();
        assert!(matches!(err, Error::MissingJudgment(id) if id == "mystery"));
    }

    #[test]
    fn quarantined_documents_are_neither_kept_nor_dropped() {
        let docs = vec![doc("a", "one"), doc("b", "two")];
        let judgments = vec![
            QualityJudgment {
                v: SCHEMA_VERSION,
                doc_id: "a".to_string(),
                score: QUARANTINE_SCORE,
                justification: String::new(),
            },
            QualityJudgment {
                v: SCHEMA_VERSION,
                doc_id: "b".to_string(),
                score: 5,
                justification: String::new(),
            },
        ];
        let outcome = filter_corpus(&docs, &judgments, 4).unwrap();
        assert_eq!(outcome.kept.len(), 1);
        assert_eq!((outcome.dropped, outcome.quarantined), (0, 1));
        assert_eq!(
            outcome.kept.len() + outcome.dropped + outcome.quarantined,
            docs.len()
        );
    }

    #[test]
    fn extraction_zips_parallel_lists() {
        let reply = r#"{
            "Justification": "two quizzes found",
            "Questions": ["What is duration?", "What is convexity?"],
            "Scenario": ["N/A", "A bond portfolio"],
            "Exhibit": ["N/A", "N/A"],
            "Answer Choices": ["A) risk B) time", "N/A"],
            "Answer": ["A", "N/A"]
        }"#;
        let gateway = gateway_with(
            "extractor",
            Arc::new(ScriptedTransport::new(vec![ScriptStep::Reply(
                reply.to_string(),
            )])),
        );
        let chunk = doc("bk1#0", "…material…");
        let (exercises, q) = extract_exercises(&gateway, "extractor", &chunk).unwrap();
        assert!(q.is_none());
        assert_eq!(exercises.len(), 2);
        assert_eq!(exercises[0].question, "What is duration?");
        assert_eq!(exercises[0].answer, "A");
        assert_eq!(exercises[0].answer_source, Some(AnswerSource::Material));
        assert_eq!(exercises[0].scenario, NOT_AVAILABLE);
        assert_eq!(exercises[1].scenario, "A bond portfolio");
        assert_eq!(exercises[1].answer, NOT_AVAILABLE);
        assert_eq!(exercises[1].answer_source, None, "unset pending backfill");
        assert!(exercises.iter().all(|e| e.source_doc_id == "bk1#0"));
        assert!(exercises.iter().all(|e| exercise_violations(e).is_empty()));
    }

    #[test]
    fn extraction_truncates_mismatched_lists() {
        let reply = r#"{
            "Justification": "lists disagree",
            "Questions": ["q1", "q2", "q3"],
            "Scenario": ["N/A", "N/A", "N/A"],
            "Exhibit": ["N/A", "N/A", "N/A"],
            "Answer Choices": ["N/A", "N/A", "N/A"],
            "Answer": ["a1", "a2"]
        }"#;
        let gateway = gateway_with(
            "extractor",
            Arc::new(ScriptedTransport::new(vec![ScriptStep::Reply(
                reply.to_string(),
            )])),
        );
        let (exercises, _) = extract_exercises(&gateway, "extractor", &doc("d", "m")).unwrap();
        assert_eq!(exercises.len(), 2, "truncated to the shortest list");
        assert_eq!(exercises[1].answer, "a2");
    }

    #[test]
    fn extraction_parse_failure_quarantines() {
        let gateway = gateway_with(
            "extractor",
            Arc::new(ScriptedTransport::new(vec![
                ScriptStep::Reply("no json".to_string()),
                ScriptStep::Reply("still no json".to_string()),
            ])),
        );
        let (exercises, q) = extract_exercises(&gateway, "extractor", &doc("d", "m")).unwrap();
        assert!(exercises.is_empty());
        assert_eq!(q.unwrap().stage, "exercise-extraction");
    }

    #[test]
    fn singleton_string_lists_coerce() {
        let reply = r#"{
            "Justification": "one quiz",
            "Questions": "What is NPV?",
            "Scenario": "N/A",
            "Exhibit": "N/A",
            "Answer Choices": "N/A",
            "Answer": "n/a."
        }"#;
        let gateway = gateway_with(
            "extractor",
            Arc::new(ScriptedTransport::new(vec![ScriptStep::Reply(
                reply.to_string(),
            )])),
        );
        let (exercises, _) = extract_exercises(&gateway, "extractor", &doc("d", "m")).unwrap();
        assert_eq!(exercises.len(), 1);
        assert_eq!(exercises[0].answer, NOT_AVAILABLE, "n/a spellings canonicalize");
    }

    fn unanswered() -> Exercise {
        Exercise {
            v: SCHEMA_VERSION,
            question: "What is NPV?".to_string(),
            scenario: NOT_AVAILABLE.to_string(),
            exhibit: NOT_AVAILABLE.to_string(),
            answer_choices: "A) net present value B) net par value".to_string(),
            answer: NOT_AVAILABLE.to_string(),
            source_doc_id: "bk1#0".to_string(),
            answer_source: None,
        }
    }

    #[test]
    fn backfill_fills_unanswered_and_leaves_answered_alone() {
        let gateway = gateway_with(
            "gen",
            Arc::new(FnTransport::new(|_req| {
                Ok(crate::gateway::ChatResponse::ok("A) net present value"))
            })),
        );
        let outcome = backfill_answer(&gateway, "gen", unanswered()).unwrap();
        let BackfillOutcome::Filled(filled) = outcome else {
            panic!("expected filled");
        };
        assert_eq!(filled.answer, "A) net present value");
        assert_eq!(filled.answer_source, Some(AnswerSource::Backfilled));
        assert!(exercise_violations(&filled).is_empty());

        let mut answered = unanswered();
        answered.answer = "A".to_string();
        answered.answer_source = Some(AnswerSource::Material);
        let outcome = backfill_answer(&gateway, "gen", answered.clone()).unwrap();
        assert_eq!(outcome, BackfillOutcome::Unchanged(answered));
    }

    #[test]
    fn backfill_all_preserves_order_across_mixed_lists() {
        let gateway = gateway_with(
            "gen",
            Arc::new(FnTransport::new(|_req| {
                Ok(crate::gateway::ChatResponse::ok("generated answer"))
            })),
        );
        let mut answered = unanswered();
        answered.answer = "A) net present value".to_string();
        answered.answer_source = Some(AnswerSource::Material);
        let (kept, dropped) = backfill_all(
            &gateway,
            "gen",
            vec![unanswered(), answered.clone(), unanswered()],
        )
        .unwrap();
        assert_eq!(dropped, 0);
        assert_eq!(kept.len(), 3);
        assert_eq!(kept[0].answer, "generated answer");
        assert_eq!(kept[1], answered, "material answer passes through untouched");
        assert_eq!(kept[2].answer_source, Some(AnswerSource::Backfilled));
    }

    #[test]
    fn backfill_drops_on_empty_generation() {
        let gateway = gateway_with(
            "gen",
            Arc::new(FnTransport::new(|_req| {
                Ok(crate::gateway::ChatResponse::ok("   "))
            })),
        );
        let outcome = backfill_answer(&gateway, "gen", unanswered()).unwrap();
        assert!(matches!(outcome, BackfillOutcome::Dropped { .. }));

        let (kept, dropped) =
            backfill_all(&gateway, "gen", vec![unanswered(), unanswered()]).unwrap();
        assert!(kept.is_empty());
        assert_eq!(dropped, 2);
    }

    #[test]
    fn backfill_drops_on_exhausted_transport() {
        let mut gateway = Gateway::builder()
            .backoff_base(std::time::Duration::from_millis(1))
            .build()
            .unwrap();
        gateway.register(
            "gen",
            crate::gateway::EndpointConfig {
                requests_per_minute: 0,
                retries: 0,
            },
            Arc::new(ScriptedTransport::always_fail("overloaded")),
        );
        let outcome = backfill_answer(&gateway, "gen", unanswered()).unwrap();
        assert!(
            matches!(outcome, BackfillOutcome::Dropped { ref reason, .. } if reason == "generation error")
        );
    }

    #[test]
    fn question_composition_includes_only_present_parts() {
        let mut ex = unanswered();
        ex.scenario = "A firm weighs two projects.".to_string();
        let composed = compose_question(&ex);
        assert_eq!(
            composed,
            "Scenario:\nA firm weighs two projects.\n\nQuestion: What is NPV?\n\nAnswer Choices:\nA) net present value B) net par value"
        );
        assert!(!composed.contains("Exhibit:"));
    }

    #[test]
    fn answered_exercise_converts_to_task_record() {
        let mut ex = unanswered();
        ex.answer = "A) net present value".to_string();
        ex.answer_source = Some(AnswerSource::Backfilled);
        let task = exercise_to_task(&ex, 3).unwrap();
        assert_eq!(task.id, "bk1#0-ex3");
        assert_eq!(task.turns.len(), 2);
        assert_eq!(task.turns[0].role, Role::User);
        assert!(task.turns[0].content.contains("Question: What is NPV?"));
        assert_eq!(task.turns[1].content, "A) net present value");
        assert_eq!(task.gold_answer.as_deref(), Some("A) net present value"));
        assert_eq!(task.capability, Capability::Reasoning);
        assert!(crate::records::task_violations(&task).is_empty());

        assert!(exercise_to_task(&unanswered(), 0).is_none());
    }

    #[test]
    fn chunks_cut_at_paragraph_boundaries_and_rejoin() {
        let tok = WhitespaceTokenizer;
        let para = |n: usize, word: &str| {
            std::iter::repeat(word).take(n).collect::<Vec<_>>().join(" ")
        };
        let text = format!(
            "{}\n\n{}\n\n{}",
            para(3, "alpha"),
            para(3, "beta"),
            para(3, "gamma")
        );
        // Limit 6: first chunk holds two 3-token paragraphs, second the rest.
        let chunks = chunk_text(&text, &tok, 6);
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks.concat(), text, "chunking is lossless");
        assert!(chunks[0].ends_with("beta\n\n"));
        assert!(chunks[1].starts_with("gamma"));

        // A paragraph over the limit stands alone rather than splitting.
        let text = format!("{}\n\n{}", para(10, "long"), para(2, "tail"));
        let chunks = chunk_text(&text, &tok, 6);
        assert_eq!(chunks.len(), 2);
        assert_eq!(tok.count(&chunks[0]), 10);
        assert_eq!(chunks.concat(), text);
    }

    #[test]
    fn chunk_document_renames_and_recounts() {
        let tok = WhitespaceTokenizer;
        let text = "a b c\n\nd e f\n\ng h i";
        let d = Document::new("bk9", text, Source::Book, Domain::InDomain, &tok);
        let chunks = chunk_document(&d, &tok, 6);
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].id, "bk9#0");
        assert_eq!(chunks[1].id, "bk9#1");
        assert_eq!(chunks[0].token_count, 6);
        // A document within the limit passes through with its id intact.
        let small = chunk_document(&d, &tok, 100);
        assert_eq!(small.len(), 1);
        assert_eq!(small[0].id, "bk9");
    }

    #[test]
    fn allowlist_filters_web_documents_by_url() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("urls.txt");
        std::fs::write(&path, "# finance sites\ninvestopedia.com\n\nsec.gov\n").unwrap();
        let list = UrlAllowlist::from_file(&path).unwrap();
        assert!(!list.is_empty());
        assert!(list.matches("https://www.Investopedia.com/bonds"));
        assert!(!list.matches("https://example.org"));

        let tok = WhitespaceTokenizer;
        let web = |id: &str| Document::new(id, "text", Source::Web, Domain::InDomain, &tok);
        let book = Document::new("bk", "text", Source::Book, Domain::InDomain, &tok);
        let docs = vec![
            web("https://investopedia.com/npv"),
            web("https://other.net/cats"),
            book,
        ];
        let (kept, dropped) = apply_allowlist(docs, &list);
        assert_eq!(dropped, 1);
        let ids: Vec<&str> = kept.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, vec!["https://investopedia.com/npv", "bk"]);
    }

    proptest! {
        #[test]
        fn filter_partition_is_total(
            scores in proptest::collection::vec(-1i64..=5, 0..40),
            threshold in 0i64..=6,
        ) {
            let tok = WhitespaceTokenizer;
            let docs: Vec<Document> = scores
                .iter()
                .enumerate()
                .map(|(i, _)| Document::new(format!("d{i}"), "text", Source::Web, Domain::General, &tok))
                .collect();
            let judgments: Vec<QualityJudgment> = scores
                .iter()
                .enumerate()
                .map(|(i, s)| QualityJudgment {
                    v: SCHEMA_VERSION,
                    doc_id: format!("d{i}"),
                    score: *s,
                    justification: String::new(),
                })
                .collect();
            let outcome = filter_corpus(&docs, &judgments, threshold).unwrap();
            prop_assert_eq!(
                outcome.kept.len() + outcome.dropped + outcome.quarantined,
                docs.len()
            );
            // Kept ids form a subsequence of input ids with passing scores.
            let mut cursor = 0usize;
            for kept in &outcome.kept {
                let pos = docs[cursor..]
                    .iter()
                    .position(|d| d.id == kept.id)
                    .expect("kept doc must appear after the previous one");
                cursor += pos + 1;
                let idx: usize = kept.id[1..].parse().unwrap();
                prop_assert!(scores[idx] >= threshold);
            }
        }

        #[test]
        fn chunking_is_lossless_and_respects_boundaries(
            paragraphs in proptest::collection::vec(" ?[a-z]{1,4}( [a-z]{1,4}){0,11}", 1..8),
            max_tokens in 1usize..20,
        ) {
            let text = paragraphs.join("\n\n");
            let tok = WhitespaceTokenizer;
            let chunks = chunk_text(&text, &tok, max_tokens);
            prop_assert_eq!(chunks.concat(), text);
            // Every chunk within the limit unless it is a single paragraph.
            for chunk in &chunks {
                let over = tok.count(chunk) > max_tokens;
                if over {
                    prop_assert!(!chunk.trim_end_matches('\n').contains("\n\n"),
                        "oversized chunk must be a single paragraph: {chunk:?}");
                }
            }
        }
    }
}
