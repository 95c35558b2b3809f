//! Capability-tagged evaluation harness.
//!
//! Tasks live in a TOML registry, each tagged with the capability it
//! exercises, its domain, and whether its *type* was seen during training
//! (`similar`) or not (`novel`). The harness renders zero-shot prompts
//! (direct answer or chain-of-thought), extracts answers per schema, scores
//! them with the pure functions in [`crate::metrics`] (or an LLM judge), and
//! writes a report grouped similar/novel → capability → domain. Every
//! reported cell is recomputable from the persisted per-item files.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::parse::{field_i64, field_str};
use crate::gateway::{ChatMessage, ChatRequest, Gateway};
use crate::metrics;
use crate::prompts;
use crate::io;
use crate::records::{schema_version, Capability, SCHEMA_VERSION};

/// Sentinel recorded when no answer could be extracted; always scores as
/// incorrect (it can never equal a normalized gold label).
pub const NO_ANSWER: &str = "NO_ANSWER";

/// Zero-shot chain-of-thought elicitation appended after the question.
pub const COT_SUFFIX: &str = "Think step by step, then give your final answer on a new line as 'Final answer: <answer>'.";

/// Generic quality rubric used when a judged task opts into 1–10 scoring
/// instead of binary correctness. Credit is the rating divided by 10.
pub const JUDGE_RUBRIC_PROMPT: &str = "\
You are grading the quality of an assistant's response to a user question, using a reference answer as the gold standard. Consider helpfulness, factual accuracy against the reference, and clarity. Rate the response on a scale of 1 to 10, where 1 is unusable and 10 is excellent.

Question: <QUESTION>
Reference Answer: <REFERENCE>
Response: <PROPOSAL>

You will output a json object containing the following fields:
{
  \"Justification\": \"string\", // A brief justification for your rating, up to 100 words.

  \"Rating\": number // An integer from 1 to 10.
}";

/// Fields the rubric judge must return.
pub const JUDGE_RUBRIC_FIELDS: &[&str] = &["Justification", "Rating"];

/// Decoding budget for evaluated model outputs.
const EVAL_MAX_TOKENS: u32 = 1024;
/// Decoding budget for judge verdicts.
const JUDGE_MAX_TOKENS: u32 = 512;

/// Domain of an evaluation task.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum EvalDomain {
    General,
    Finance,
    Math,
    Code,
}

impl EvalDomain {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalDomain::General => "general",
            EvalDomain::Finance => "finance",
            EvalDomain::Math => "math",
            EvalDomain::Code => "code",
        }
    }
}

/// Whether the task's *type* was seen during training.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    Similar,
    Novel,
}

impl Similarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Similarity::Similar => "similar",
            Similarity::Novel => "novel",
        }
    }
}

/// Prompting method: direct answer, or zero-shot chain-of-thought.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Direct,
    Cot,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Cot => "cot",
        }
    }
}

/// Scoring metric for a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Rouge1,
    Mcc,
    EntityF1,
    LlmJudge,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Rouge1 => "rouge1",
            Metric::Mcc => "mcc",
            Metric::EntityF1 => "entity_f1",
            Metric::LlmJudge => "llm_judge",
        }
    }
}

/// Shape of the answer a task expects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSchema {
    Choice,
    LabelSet,
    SpanList,
    FreeText,
}

impl AnswerSchema {
    pub fn as_str(self) -> &'static str {
        match self {
            AnswerSchema::Choice => "choice",
            AnswerSchema::LabelSet => "label_set",
            AnswerSchema::SpanList => "span_list",
            AnswerSchema::FreeText => "free_text",
        }
    }
}

/// One benchmark task: tags, prompting method, metric, and data location.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalTask {
    pub name: String,
    pub capability: Capability,
    pub domain: EvalDomain,
    pub similarity: Similarity,
    pub method: Method,
    pub metric: Metric,
    pub answer_schema: AnswerSchema,
    pub data_path: PathBuf,
    /// Legal labels for `label_set` tasks (required there, unused elsewhere).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
    /// Entity types enumerated in the prompt for `span_list` tasks.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entity_types: Vec<String>,
    /// Scores judged tasks on a 1–10 quality rubric (credit = rating/10)
    /// instead of binary correctness.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub judge_rubric: bool,
}

/// An entity mention with its type; the unit of `span_list` golds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub entity: String,
    #[serde(rename = "type")]
    pub kind: String,
}

/// Gold reference: a string for text-shaped schemas, a span list otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gold {
    Text(String),
    Spans(Vec<EntitySpan>),
}

/// One line of a task's data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    #[serde(default = "schema_version")]
    pub v: u32,
    pub id: String,
    pub input: String,
    pub gold: Gold,
}

/// Persisted scoring row; the metric value is recomputable from these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerItem {
    #[serde(default = "schema_version")]
    pub v: u32,
    pub item_id: String,
    pub raw_output: String,
    pub extracted: String,
    pub gold: String,
    pub credit: f64,
}

/// Result of evaluating one task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub task: String,
    pub n: usize,
    pub metric_value: f64,
    pub per_item: Vec<PerItem>,
    /// Judge calls whose verdict could not be parsed even after the
    /// corrective retry; each scored 0 and counted here.
    #[serde(default)]
    pub judge_failures: usize,
}

/// Row status in the final report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RowStatus {
    Scored { n: usize, value: f64 },
    Skipped { reason: String },
}

/// One report row: the task's tags plus its scored (or skipped) status.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskRow {
    pub task: String,
    pub similarity: Similarity,
    pub capability: Capability,
    pub domain: EvalDomain,
    pub method: Method,
    pub metric: Metric,
    #[serde(flatten)]
    pub status: RowStatus,
}

/// Machine-readable evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default = "schema_version")]
    pub v: u32,
    pub model: String,
    pub rows: Vec<TaskRow>,
}

/// Whether `metric` can score answers of shape `schema`.
pub fn metric_compatible(metric: Metric, schema: AnswerSchema) -> bool {
    match metric {
        Metric::Accuracy => matches!(
            schema,
            AnswerSchema::Choice | AnswerSchema::LabelSet | AnswerSchema::FreeText
        ),
        Metric::Rouge1 => schema == AnswerSchema::FreeText,
        Metric::Mcc => matches!(schema, AnswerSchema::Choice | AnswerSchema::LabelSet),
        Metric::EntityF1 => schema == AnswerSchema::SpanList,
        Metric::LlmJudge => matches!(schema, AnswerSchema::FreeText | AnswerSchema::Choice),
    }
}

/// Validates one task's internal consistency.
pub fn validate_task(task: &EvalTask) -> Result<()> {
    if !metric_compatible(task.metric, task.answer_schema) {
        return Err(Error::MetricSchemaMismatch {
            metric: task.metric.as_str().to_string(),
            schema: task.answer_schema.as_str().to_string(),
        });
    }
    if task.answer_schema == AnswerSchema::LabelSet && task.labels.is_empty() {
        return Err(Error::Config(format!(
            "task {}: label_set schema requires a labels list",
            task.name
        )));
    }
    if task.answer_schema == AnswerSchema::SpanList && task.entity_types.is_empty() {
        return Err(Error::Config(format!(
            "task {}: span_list schema requires an entity_types list",
            task.name
        )));
    }
    if task.judge_rubric && task.metric != Metric::LlmJudge {
        return Err(Error::Config(format!(
            "task {}: judge_rubric only applies to the llm_judge metric",
            task.name
        )));
    }
    Ok(())
}

#[derive(Deserialize)]
struct RegistryFile {
    #[serde(default)]
    task: Vec<EvalTask>,
}

/// Loads and validates a task registry. Relative `data_path`s resolve
/// against the registry file's directory.
pub fn load_registry(path: &Path) -> Result<Vec<EvalTask>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed: RegistryFile = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("eval registry {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tasks = parsed.task;
    let mut seen = std::collections::HashSet::new();
    for task in &mut tasks {
        validate_task(task)?;
        if !seen.insert(task.name.clone()) {
            return Err(Error::Config(format!("duplicate task name {}", task.name)));
        }
        if task.data_path.is_relative() {
            task.data_path = base.join(&task.data_path);
        }
    }
    Ok(tasks)
}

/// Renders the zero-shot prompt for one item. Direct tasks get the question
/// plus an answer-format instruction; CoT tasks additionally get the
/// step-by-step elicitation before the format instruction. No exemplars in
/// either mode.
pub fn render_prompt(input: &str, task: &EvalTask) -> Vec<ChatMessage> {
    let instruction = schema_instruction(task);
    let content = match task.method {
        Method::Direct => format!("{input}\n\n{instruction}"),
        Method::Cot => format!("{input}\n\n{COT_SUFFIX}\n{instruction}"),
    };
    vec![ChatMessage::user(content)]
}

fn schema_instruction(task: &EvalTask) -> String {
    match task.answer_schema {
        AnswerSchema::Choice => "Answer with the letter only.".to_string(),
        AnswerSchema::LabelSet => format!(
            "Answer with one of: {}. Answer with the label only.",
            task.labels.join(", ")
        ),
        AnswerSchema::SpanList => format!(
            "List each entity on its own line as '<entity> | <type>'. Entity types to extract: {}.",
            task.entity_types.join(", ")
        ),
        AnswerSchema::FreeText => "Answer in plain text.".to_string(),
    }
}

fn final_answer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)final\s+answer\s*:\s*\(?([A-Ea-e])\b").unwrap())
}

fn standalone_letter_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // Uppercase only: a lowercase standalone "a" is almost always the
    // English article, not an option letter.
    RE.get_or_init(|| Regex::new(r"\b([A-E])\b").unwrap())
}

/// Extracts the normalized answer from raw model output. `labels` is only
/// consulted for the `label_set` schema. Returns [`NO_ANSWER`] when nothing
/// extractable is found (choice/label schemas only; free text is taken
/// whole and a span list may legitimately be empty).
pub fn extract_answer(raw: &str, schema: AnswerSchema, labels: &[String]) -> String {
    match schema {
        AnswerSchema::Choice => {
            if let Some(caps) = final_answer_re().captures_iter(raw).last() {
                return caps[1].to_lowercase();
            }
            if let Some(caps) = standalone_letter_re().captures_iter(raw).last() {
                return caps[1].to_lowercase();
            }
            NO_ANSWER.to_string()
        }
        AnswerSchema::LabelSet => {
            let haystack = raw.to_lowercase();
            let mut best: Option<(usize, usize, String)> = None; // (end, len, label)
            for label in labels {
                let needle = label.to_lowercase();
                if let Some(pos) = haystack.rfind(&needle) {
                    let key = (pos + needle.len(), needle.len());
                    if best.as_ref().map_or(true, |(e, l, _)| key > (*e, *l)) {
                        best = Some((key.0, key.1, needle));
                    }
                }
            }
            best.map_or_else(|| NO_ANSWER.to_string(), |(_, _, label)| label)
        }
        AnswerSchema::SpanList => {
            let mut spans = Vec::new();
            for line in raw.lines() {
                let line = strip_bullet(line.trim());
                if let Some((entity, kind)) = line.split_once('|') {
                    let entity = entity.trim().to_lowercase();
                    let kind = kind.trim().to_lowercase();
                    if !entity.is_empty() && !kind.is_empty() {
                        spans.push((entity, kind));
                    }
                }
            }
            canonical_spans(&spans)
        }
        AnswerSchema::FreeText => raw.trim().to_lowercase(),
    }
}

fn strip_bullet(line: &str) -> &str {
    let trimmed = line.trim_start_matches(['-', '*', '•']).trim_start();
    // Numbered lists: "3. entity | type" or "3) entity | type". The marker
    // must be followed by whitespace so a decimal like "7.5%" survives.
    let digits = trimmed.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &trimmed[digits..];
        if let Some(rest) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            if rest.starts_with(char::is_whitespace) {
                return rest.trim_start();
            }
        }
    }
    trimmed
}

/// Canonical string form of a span set: lowercased `entity | type` pairs,
/// sorted, deduplicated, joined with `; `. Empty set → empty string.
pub fn canonical_spans(spans: &[(String, String)]) -> String {
    let mut parts: Vec<String> = spans
        .iter()
        .map(|(e, t)| format!("{} | {}", e.trim().to_lowercase(), t.trim().to_lowercase()))
        .collect();
    parts.sort();
    parts.dedup();
    parts.join("; ")
}

/// Inverse of [`canonical_spans`] (on its canonical output).
pub fn parse_spans(text: &str) -> Vec<(String, String)> {
    text.split("; ")
        .filter_map(|part| {
            part.split_once(" | ")
                .map(|(e, t)| (e.to_string(), t.to_string()))
        })
        .collect()
}

impl Gold {
    /// Canonical string form for persistence and scoring, matching the
    /// normalization [`extract_answer`] applies to model output.
    pub fn canonical(&self, schema: AnswerSchema) -> Result<String> {
        match (self, schema) {
            (Gold::Text(s), AnswerSchema::Choice | AnswerSchema::LabelSet) => {
                Ok(s.trim().to_lowercase())
            }
            (Gold::Text(s), AnswerSchema::FreeText) => Ok(s.trim().to_lowercase()),
            (Gold::Spans(spans), AnswerSchema::SpanList) => {
                let pairs: Vec<(String, String)> = spans
                    .iter()
                    .map(|s| (s.entity.clone(), s.kind.clone()))
                    .collect();
                Ok(canonical_spans(&pairs))
            }
            (Gold::Spans(_), _) => Err(Error::Config(format!(
                "span-list gold on a {} task",
                schema.as_str()
            ))),
            (Gold::Text(_), AnswerSchema::SpanList) => Err(Error::Config(
                "text gold on a span_list task".to_string(),
            )),
        }
    }
}

fn item_credit(metric: Metric, extracted: &str, gold: &str) -> f64 {
    match metric {
        Metric::Accuracy => {
            if extracted == gold {
                1.0
            } else {
                0.0
            }
        }
        Metric::Rouge1 => metrics::rouge1_f(extracted, gold),
        Metric::Mcc => {
            // Informative per-item indicator; the task metric is the
            // correlation over all items, recomputed from the columns.
            if extracted == gold {
                1.0
            } else {
                0.0
            }
        }
        Metric::EntityF1 => {
            metrics::entity_f1(&[(parse_spans(extracted), parse_spans(gold))])
        }
        // Judged credit comes from the judge, not from string comparison.
        Metric::LlmJudge => 0.0,
    }
}

/// Recomputes a task's metric value from its persisted per-item rows. The
/// harness reports exactly this function's output, so any cell can be
/// verified offline bit-for-bit.
pub fn recompute_metric(per_item: &[PerItem], metric: Metric) -> f64 {
    match metric {
        Metric::Accuracy | Metric::LlmJudge => {
            let credits: Vec<f64> = per_item.iter().map(|r| r.credit).collect();
            metrics::accuracy(&credits)
        }
        Metric::Rouge1 => {
            if per_item.is_empty() {
                return 0.0;
            }
            let total: f64 = per_item
                .iter()
                .map(|r| metrics::rouge1_f(&r.extracted, &r.gold))
                .sum();
            total / per_item.len() as f64
        }
        Metric::Mcc => {
            let preds: Vec<String> = per_item.iter().map(|r| r.extracted.clone()).collect();
            let golds: Vec<String> = per_item.iter().map(|r| r.gold.clone()).collect();
            metrics::mcc(&preds, &golds)
        }
        Metric::EntityF1 => {
            let items: Vec<(Vec<(String, String)>, Vec<(String, String)>)> = per_item
                .iter()
                .map(|r| (parse_spans(&r.extracted), parse_spans(&r.gold)))
                .collect();
            metrics::entity_f1(&items)
        }
    }
}

/// Asks the judge endpoint whether `prediction` answers `question` the same
/// way the reference does. Returns (credit, parse_failed). A verdict that
/// cannot be parsed even after the gateway's corrective retry scores 0 with
/// the flag set; transport-level wiring errors propagate.
pub fn judge_correctness(
    gateway: &Gateway,
    judge_endpoint: &str,
    question: &str,
    reference: &str,
    prediction: &str,
) -> Result<(f64, bool)> {
    let request = ChatRequest {
        endpoint: judge_endpoint.to_string(),
        messages: vec![ChatMessage::user(prompts::fill_final_answer_judge(
            question, reference, prediction,
        ))],
        temperature: 0.0,
        max_tokens: JUDGE_MAX_TOKENS,
        seed: None,
    };
    match gateway.complete_structured(&request, prompts::FINAL_ANSWER_JUDGE_FIELDS) {
        Ok(structured) => {
            let verdict = field_str(&structured.fields, "Correctness").unwrap_or_default();
            let credit = if verdict.trim().eq_ignore_ascii_case("correct") {
                1.0
            } else {
                0.0
            };
            Ok((credit, false))
        }
        Err(Error::StructuredParse { message, .. }) => {
            log::warn!("judge verdict unparseable ({message}); scoring 0");
            Ok((0.0, true))
        }
        Err(other) => Err(other),
    }
}

/// Rubric variant: asks for a 1–10 quality rating; credit = rating / 10.
pub fn judge_quality(
    gateway: &Gateway,
    judge_endpoint: &str,
    question: &str,
    reference: &str,
    prediction: &str,
) -> Result<(f64, bool)> {
    let prompt = JUDGE_RUBRIC_PROMPT
        .replace("<QUESTION>", question)
        .replace("<REFERENCE>", reference)
        .replace("<PROPOSAL>", prediction);
    let request = ChatRequest {
        endpoint: judge_endpoint.to_string(),
        messages: vec![ChatMessage::user(prompt)],
        temperature: 0.0,
        max_tokens: JUDGE_MAX_TOKENS,
        seed: None,
    };
    match gateway.complete_structured(&request, JUDGE_RUBRIC_FIELDS) {
        Ok(structured) => {
            let rating = field_i64(&structured.fields, "Rating").unwrap_or(0);
            let credit = (rating.clamp(0, 10) as f64) / 10.0;
            Ok((credit, false))
        }
        Err(Error::StructuredParse { message, .. }) => {
            log::warn!("judge rating unparseable ({message}); scoring 0");
            Ok((0.0, true))
        }
        Err(other) => Err(other),
    }
}

/// Evaluates one task end to end: prompt rendering, batched generation,
/// answer extraction, scoring. `judge` is required for judged tasks.
pub fn run_task(
    gateway: &Gateway,
    model: &str,
    judge: Option<&str>,
    task: &EvalTask,
    items: &[EvalItem],
) -> Result<EvalOutcome> {
    validate_task(task)?;
    let judge_endpoint = match (task.metric, judge) {
        (Metric::LlmJudge, None) => {
            return Err(Error::Config(format!(
                "task {} uses llm_judge but no judge endpoint was given",
                task.name
            )));
        }
        (Metric::LlmJudge, Some(j)) => Some(j),
        _ => None,
    };
    let requests: Vec<ChatRequest> = items
        .iter()
        .map(|item| ChatRequest {
            endpoint: model.to_string(),
            messages: render_prompt(&item.input, task),
            temperature: 0.0,
            max_tokens: EVAL_MAX_TOKENS,
            seed: None,
        })
        .collect();
    let responses = gateway.complete_batch(&requests);

    let mut per_item = Vec::with_capacity(items.len());
    let mut judge_failures = 0usize;
    for (item, response) in items.iter().zip(responses) {
        let response = response?;
        let raw = response.text;
        let extracted = extract_answer(&raw, task.answer_schema, &task.labels);
        let gold = item
            .gold
            .canonical(task.answer_schema)
            .map_err(|e| Error::Config(format!("item {}: {e}", item.id)))?;
        let credit = match judge_endpoint {
            Some(judge) => {
                let (credit, flagged) = if task.judge_rubric {
                    judge_quality(gateway, judge, &item.input, &gold, &raw)?
                } else {
                    judge_correctness(gateway, judge, &item.input, &gold, &raw)?
                };
                if flagged {
                    judge_failures += 1;
                }
                credit
            }
            None => item_credit(task.metric, &extracted, &gold),
        };
        per_item.push(PerItem {
            v: SCHEMA_VERSION,
            item_id: item.id.clone(),
            raw_output: raw,
            extracted,
            gold,
            credit,
        });
    }
    let metric_value = recompute_metric(&per_item, task.metric);
    Ok(EvalOutcome {
        task: task.name.clone(),
        n: per_item.len(),
        metric_value,
        per_item,
        judge_failures,
    })
}

/// Evaluates every registry task in order, persisting per-item rows under
/// `out_dir/per_item/<task>.ndl` plus `report.txt` and `report.json`. A task
/// whose data file cannot be read is marked skipped, not fatal.
pub fn run_and_report(
    gateway: &Gateway,
    model: &str,
    judge: Option<&str>,
    tasks: &[EvalTask],
    out_dir: &Path,
) -> Result<EvalReport> {
    let per_item_dir = out_dir.join("per_item");
    let mut rows = Vec::with_capacity(tasks.len());
    for task in tasks {
        let status = match io::read_ndjson::<EvalItem>(&task.data_path) {
            Err(err) => {
                log::warn!("skipping task {}: {err}", task.name);
                RowStatus::Skipped {
                    reason: err.to_string(),
                }
            }
            Ok(items) => {
                let outcome = run_task(gateway, model, judge, task, &items)?;
                io::write_ndjson(
                    &per_item_dir.join(format!("{}.ndl", task.name)),
                    &outcome.per_item,
                )?;
                RowStatus::Scored {
                    n: outcome.n,
                    value: outcome.metric_value,
                }
            }
        };
        rows.push(TaskRow {
            task: task.name.clone(),
            similarity: task.similarity,
            capability: task.capability,
            domain: task.domain,
            method: task.method,
            metric: task.metric,
            status,
        });
    }
    let report = EvalReport {
        v: SCHEMA_VERSION,
        model: model.to_string(),
        rows,
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let text_path = out_dir.join("report.txt");
    fs::write(&text_path, render_text_report(&report)).map_err(|e| Error::io(&text_path, e))?;
    let json_path = out_dir.join("report.json");
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Config(format!("report serialization: {e}")))?;
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    Ok(report)
}

/// Plain-text report: one section per similarity tier, rows grouped by
/// capability then domain (registry order within a group).
pub fn render_text_report(report: &EvalReport) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(out, "model: {}", report.model);
    for similarity in [Similarity::Similar, Similarity::Novel] {
        let _ = writeln!(out);
        let _ = writeln!(out, "== results on {} tasks ==", similarity.as_str());
        for capability in [
            Capability::Concept,
            Capability::Task,
            Capability::IfChat,
            Capability::Reasoning,
        ] {
            let group: Vec<&TaskRow> = report
                .rows
                .iter()
                .filter(|r| r.similarity == similarity && r.capability == capability)
                .collect();
            if group.is_empty() {
                continue;
            }
            let _ = writeln!(out, "  [{}]", capability.as_str());
            for domain in [
                EvalDomain::General,
                EvalDomain::Finance,
                EvalDomain::Math,
                EvalDomain::Code,
            ] {
                for row in group.iter().filter(|r| r.domain == domain) {
                    let cell = match &row.status {
                        RowStatus::Scored { n, value } => {
                            format!("{value:.4} (n={n})")
                        }
                        RowStatus::Skipped { reason } => format!("SKIPPED ({reason})"),
                    };
                    let _ = writeln!(
                        out,
                        "    {:<8} {:<28} {:<9} {:<7} {cell}",
                        domain.as_str(),
                        row.task,
                        row.metric.as_str(),
                        row.method.as_str(),
                    );
                }
            }
        }
    }
    out
}

/// Evaluation samples in the shape decontamination expects: the text each
/// item would contribute to the training-overlap check (input plus gold).
pub fn decontam_texts(items: &[EvalItem], schema: AnswerSchema) -> Vec<(String, String)> {
    items
        .iter()
        .map(|item| {
            let gold = match &item.gold {
                Gold::Text(s) => s.clone(),
                Gold::Spans(spans) => spans
                    .iter()
                    .map(|s| s.entity.clone())
                    .collect::<Vec<_>>()
                    .join(" "),
            };
            let _ = schema;
            (item.id.clone(), format!("{} {}", item.input, gold))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::gateway::mock::{FnTransport, ScriptedTransport};
    use crate::gateway::FinishReason;

    fn toy_task(metric: Metric, schema: AnswerSchema, method: Method) -> EvalTask {
        EvalTask {
            name: "toy".to_string(),
            capability: Capability::Task,
            domain: EvalDomain::Finance,
            similarity: Similarity::Similar,
            method,
            metric,
            answer_schema: schema,
            data_path: PathBuf::from("unused.ndl"),
            labels: vec!["positive".into(), "negative".into(), "neutral".into()],
            entity_types: vec!["org".into(), "instrument".into()],
            judge_rubric: false,
        }
    }

    fn item(id: &str, input: &str, gold: &str) -> EvalItem {
        EvalItem {
            v: SCHEMA_VERSION,
            id: id.to_string(),
            input: input.to_string(),
            gold: Gold::Text(gold.to_string()),
        }
    }

    #[test]
    fn registry_roundtrip_and_path_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let registry = dir.path().join("tasks.toml");
        std::fs::write(
            &registry,
            r#"
[[task]]
name = "cra"
capability = "task"
domain = "finance"
similarity = "similar"
method = "direct"
metric = "mcc"
answer_schema = "label_set"
data_path = "data/cra.ndl"
labels = ["yes", "no"]

[[task]]
name = "fin-reason"
capability = "reasoning"
domain = "finance"
similarity = "novel"
method = "cot"
metric = "accuracy"
answer_schema = "choice"
data_path = "/abs/reason.ndl"
"#,
        )
        .unwrap();
        let tasks = load_registry(&registry).unwrap();
        assert_eq!(tasks.len(), 2);
        assert_eq!(tasks[0].name, "cra");
        assert_eq!(tasks[0].metric, Metric::Mcc);
        assert_eq!(tasks[0].data_path, dir.path().join("data/cra.ndl"));
        assert_eq!(tasks[1].data_path, PathBuf::from("/abs/reason.ndl"));
        assert_eq!(tasks[1].method, Method::Cot);
    }

    #[test]
    fn registry_rejects_metric_schema_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let registry = dir.path().join("tasks.toml");
        std::fs::write(
            &registry,
            r#"
[[task]]
name = "bad"
capability = "task"
domain = "finance"
similarity = "similar"
method = "direct"
metric = "entity_f1"
answer_schema = "free_text"
data_path = "x.ndl"
"#,
        )
        .unwrap();
        let err = load_registry(&registry).unwrap_err();
        assert!(matches!(err, Error::MetricSchemaMismatch { .. }), "{err}");
    }

    #[test]
    fn registry_rejects_duplicate_names() {
        let dir = tempfile::tempdir().unwrap();
        let registry = dir.path().join("tasks.toml");
        let stanza = r#"
[[task]]
name = "dup"
capability = "task"
domain = "finance"
similarity = "similar"
method = "direct"
metric = "accuracy"
answer_schema = "choice"
data_path = "x.ndl"
"#;
        std::fs::write(&registry, format!("{stanza}{stanza}")).unwrap();
        let err = load_registry(&registry).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn prompts_follow_the_fixed_templates() {
        let direct = toy_task(Metric::Accuracy, AnswerSchema::Choice, Method::Direct);
        let rendered = render_prompt("Which bond? A) X B) Y", &direct);
        assert_eq!(rendered.len(), 1);
        assert!(rendered[0].content.contains("Answer with the letter only."));
        assert!(!rendered[0].content.contains("step by step"));

        let cot = toy_task(Metric::Accuracy, AnswerSchema::Choice, Method::Cot);
        let rendered = render_prompt("Which bond? A) X B) Y", &cot);
        assert!(rendered[0].content.contains("step by step"));
        assert!(rendered[0].content.contains("Final answer:"));
        assert!(rendered[0].content.contains("Answer with the letter only."));

        let spans = toy_task(Metric::EntityF1, AnswerSchema::SpanList, Method::Direct);
        let rendered = render_prompt("Acme issued bonds.", &spans);
        assert!(rendered[0].content.contains("org, instrument"));

        let labels = toy_task(Metric::Mcc, AnswerSchema::LabelSet, Method::Direct);
        let rendered = render_prompt("Sentiment?", &labels);
        assert!(rendered[0]
            .content
            .contains("positive, negative, neutral"));
    }

    #[test]
    fn choice_extraction_follows_the_marker_then_fallback_rules() {
        let labels: &[String] = &[];
        assert_eq!(
            extract_answer("…reasoning… Final answer: B", AnswerSchema::Choice, labels),
            "b"
        );
        // Last marker wins.
        assert_eq!(
            extract_answer(
                "I think the answer is C. No wait — final answer: A",
                AnswerSchema::Choice,
                labels
            ),
            "a"
        );
        // No marker: last standalone uppercase option letter.
        assert_eq!(
            extract_answer("Options A and C are close; choose C", AnswerSchema::Choice, labels),
            "c"
        );
        // Parenthesized and lowercase after the marker are accepted.
        assert_eq!(
            extract_answer("Final answer: (d)", AnswerSchema::Choice, labels),
            "d"
        );
        assert_eq!(
            extract_answer("cannot determine", AnswerSchema::Choice, labels),
            NO_ANSWER
        );
        // A lowercase article "a" is not an answer.
        assert_eq!(
            extract_answer("this is a tough one", AnswerSchema::Choice, labels),
            NO_ANSWER
        );
    }

    #[test]
    fn label_extraction_takes_the_last_occurring_label() {
        let labels: Vec<String> = vec!["positive".into(), "negative".into(), "neutral".into()];
        assert_eq!(
            extract_answer(
                "It could read negative, but overall it is Positive.",
                AnswerSchema::LabelSet,
                &labels
            ),
            "positive"
        );
        assert_eq!(
            extract_answer("no clear sentiment here", AnswerSchema::LabelSet, &labels),
            NO_ANSWER
        );
        // Overlapping labels: the longer match ending at the same point wins.
        let overlapping: Vec<String> = vec!["corp".into(), "acme corp".into()];
        assert_eq!(
            extract_answer("It is Acme Corp", AnswerSchema::LabelSet, &overlapping),
            "acme corp"
        );
    }

    #[test]
    fn span_extraction_parses_lines_and_canonicalizes() {
        let got = extract_answer(
            "Acme Corp | org\n- 7.5% bond | instrument\n2. Beta LLC | org\nnot a span line",
            AnswerSchema::SpanList,
            &[],
        );
        assert_eq!(got, "7.5% bond | instrument; acme corp | org; beta llc | org");
        assert_eq!(
            parse_spans(&got),
            vec![
                ("7.5% bond".to_string(), "instrument".to_string()),
                ("acme corp".to_string(), "org".to_string()),
                ("beta llc".to_string(), "org".to_string()),
            ]
        );
        // No parseable lines → empty set, not NO_ANSWER.
        assert_eq!(extract_answer("nothing here", AnswerSchema::SpanList, &[]), "");
        assert_eq!(parse_spans(""), Vec::<(String, String)>::new());
    }

    #[test]
    fn free_text_extraction_is_the_whole_output() {
        assert_eq!(
            extract_answer("  The Coupon increased.  ", AnswerSchema::FreeText, &[]),
            "the coupon increased."
        );
    }

    #[test]
    fn scored_task_end_to_end_with_mock_model() {
        let mut gateway = Gateway::builder().build().unwrap();
        gateway
            .register(
                "model",
                Default::default(),
                Arc::new(FnTransport::new(|req: &ChatRequest| {
                    let prompt = &req.messages[0].content;
                    let text = if prompt.contains("q-one") {
                        "Final answer: B"
                    } else if prompt.contains("q-two") {
                        "The answer is A."
                    } else {
                        "no idea"
                    };
                    Ok(crate::gateway::ChatResponse::ok(text))
                })),
            );
        let task = toy_task(Metric::Accuracy, AnswerSchema::Choice, Method::Direct);
        let items = vec![
            item("1", "q-one: pick", "B"),
            item("2", "q-two: pick", "A"),
            item("3", "q-three: pick", "C"),
        ];
        let outcome = run_task(&gateway, "model", None, &task, &items).unwrap();
        assert_eq!(outcome.n, 3);
        let credits: Vec<f64> = outcome.per_item.iter().map(|r| r.credit).collect();
        assert_eq!(credits, vec![1.0, 1.0, 0.0]);
        assert!((outcome.metric_value - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(outcome.per_item[2].extracted, NO_ANSWER);
        // Reported value is exactly the recomputation from per-item rows.
        assert_eq!(
            outcome.metric_value,
            recompute_metric(&outcome.per_item, Metric::Accuracy)
        );
    }

    #[test]
    fn judged_task_scores_verdicts_and_flags_parse_failures() {
        let mut gateway = Gateway::builder().build().unwrap();
        gateway
            .register(
                "model",
                Default::default(),
                Arc::new(FnTransport::new(|_req: &ChatRequest| {
                    Ok(crate::gateway::ChatResponse::ok("The coupon rate is 5%."))
                })),
            );
        // Judge: first item correct, second wrong, third unparseable twice
        // (initial + corrective retry) → flagged, credit 0.
        let judge = ScriptedTransport::new(vec![
            crate::gateway::mock::ScriptStep::Reply(
                r#"{"Justification": "matches", "Correctness": "correct"}"#.to_string(),
            ),
            crate::gateway::mock::ScriptStep::Reply(
                r#"{"Justification": "differs", "Correctness": "wrong"}"#.to_string(),
            ),
            crate::gateway::mock::ScriptStep::Reply("garbage".to_string()),
            crate::gateway::mock::ScriptStep::Reply("still garbage".to_string()),
        ]);
        gateway.register("judge", Default::default(), Arc::new(judge));
        let mut task = toy_task(Metric::LlmJudge, AnswerSchema::FreeText, Method::Direct);
        task.name = "judged".to_string();
        let items = vec![
            item("1", "What is the coupon?", "5%"),
            item("2", "What is the coupon?", "6%"),
            item("3", "What is the coupon?", "5%"),
        ];
        let outcome = run_task(&gateway, "model", Some("judge"), &task, &items).unwrap();
        let credits: Vec<f64> = outcome.per_item.iter().map(|r| r.credit).collect();
        assert_eq!(credits, vec![1.0, 0.0, 0.0]);
        assert_eq!(outcome.judge_failures, 1);
        assert!((outcome.metric_value - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn judged_task_without_judge_endpoint_is_a_config_error() {
        let gateway = Gateway::builder().build().unwrap();
        let task = toy_task(Metric::LlmJudge, AnswerSchema::FreeText, Method::Direct);
        let err = run_task(&gateway, "model", None, &task, &[]).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn rubric_judge_scores_rating_over_ten() {
        let mut gateway = Gateway::builder().build().unwrap();
        gateway
            .register(
                "model",
                Default::default(),
                Arc::new(FnTransport::new(|_req: &ChatRequest| {
                    Ok(crate::gateway::ChatResponse::ok("a thorough answer"))
                })),
            );
        gateway
            .register(
                "judge",
                Default::default(),
                Arc::new(FnTransport::new(|_req: &ChatRequest| {
                    Ok(crate::gateway::ChatResponse::ok(
                        r#"{"Justification": "solid", "Rating": 7}"#,
                    ))
                })),
            );
        let mut task = toy_task(Metric::LlmJudge, AnswerSchema::FreeText, Method::Direct);
        task.judge_rubric = true;
        let items = vec![item("1", "Explain duration.", "duration measures rate risk")];
        let outcome = run_task(&gateway, "model", Some("judge"), &task, &items).unwrap();
        assert_eq!(outcome.per_item[0].credit, 0.7);
        assert_eq!(outcome.metric_value, 0.7);
    }

    #[test]
    fn unregistered_model_endpoint_propagates_as_an_error() {
        let gateway = Gateway::builder().build().unwrap();
        let task = toy_task(Metric::Accuracy, AnswerSchema::Choice, Method::Direct);
        let items = vec![item("1", "q", "a")];
        let err = run_task(&gateway, "missing", None, &task, &items).unwrap_err();
        assert!(matches!(err, Error::UnregisteredEndpoint(_)), "{err}");
    }

    #[test]
    fn error_finish_reasons_score_as_no_answer() {
        let mut gateway = Gateway::builder().build().unwrap();
        gateway
            .register(
                "model",
                Default::default(),
                Arc::new(FnTransport::new(|_req: &ChatRequest| {
                    Ok(crate::gateway::ChatResponse {
                        text: String::new(),
                        finish_reason: FinishReason::Error,
                        usage: Default::default(),
                    })
                })),
            );
        let task = toy_task(Metric::Accuracy, AnswerSchema::Choice, Method::Direct);
        let items = vec![item("1", "q", "a")];
        let outcome = run_task(&gateway, "model", None, &task, &items).unwrap();
        assert_eq!(outcome.per_item[0].extracted, NO_ANSWER);
        assert_eq!(outcome.metric_value, 0.0);
    }

    #[test]
    fn mcc_task_reports_the_correlation_not_mean_credit() {
        let mut gateway = Gateway::builder().build().unwrap();
        gateway
            .register(
                "model",
                Default::default(),
                Arc::new(FnTransport::new(|req: &ChatRequest| {
                    // Answer "yes" to items 1–3 and 10, "no" otherwise —
                    // reproducing the frozen binary confusion TP=3 TN=4
                    // FP=1 FN=2 against golds yes×5, no×5.
                    let prompt = &req.messages[0].content;
                    let yes = ["item-01", "item-02", "item-03", "item-10"]
                        .iter()
                        .any(|m| prompt.contains(m));
                    Ok(crate::gateway::ChatResponse::ok(if yes { "yes" } else { "no" }))
                })),
            );
        let mut task = toy_task(Metric::Mcc, AnswerSchema::LabelSet, Method::Direct);
        task.labels = vec!["yes".into(), "no".into()];
        let items: Vec<EvalItem> = (1..=10)
            .map(|i| {
                item(
                    &format!("{i}"),
                    &format!("item-{i:02}: approve?"),
                    if i <= 5 { "yes" } else { "no" },
                )
            })
            .collect();
        let outcome = run_task(&gateway, "model", None, &task, &items).unwrap();
        assert!((outcome.metric_value - 0.408248290463863).abs() < 1e-12);
    }

    #[test]
    fn report_groups_sections_and_marks_unreadable_tasks_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let data = |name: &str, rows: &[EvalItem]| {
            let path = dir.path().join(name);
            io::write_ndjson(&path, rows).unwrap();
            path
        };
        let items_b = vec![item("1", "pick one b", "B"), item("2", "pick two b", "B")];
        let mut tasks = vec![
            toy_task(Metric::Accuracy, AnswerSchema::Choice, Method::Direct),
            toy_task(Metric::Accuracy, AnswerSchema::Choice, Method::Direct),
            toy_task(Metric::Accuracy, AnswerSchema::Choice, Method::Cot),
            toy_task(Metric::Accuracy, AnswerSchema::Choice, Method::Direct),
        ];
        tasks[0].name = "sim-one".into();
        tasks[0].data_path = data("sim-one.ndl", &items_b);
        tasks[1].name = "sim-two".into();
        tasks[1].capability = Capability::Concept;
        tasks[1].data_path = data("sim-two.ndl", &items_b);
        tasks[2].name = "nov-one".into();
        tasks[2].similarity = Similarity::Novel;
        tasks[2].data_path = data("nov-one.ndl", &items_b);
        tasks[3].name = "nov-two".into();
        tasks[3].similarity = Similarity::Novel;
        tasks[3].data_path = dir.path().join("missing.ndl");

        let mut gateway = Gateway::builder().build().unwrap();
        gateway
            .register(
                "model",
                Default::default(),
                Arc::new(FnTransport::new(|_req: &ChatRequest| {
                    Ok(crate::gateway::ChatResponse::ok("Final answer: B"))
                })),
            );
        let out = dir.path().join("report");
        let report = run_and_report(&gateway, "model", None, &tasks, &out).unwrap();
        assert_eq!(report.rows.len(), 4);
        let scored = report
            .rows
            .iter()
            .filter(|r| matches!(r.status, RowStatus::Scored { .. }))
            .count();
        assert_eq!(scored, 3);
        for row in &report.rows[..3] {
            match &row.status {
                RowStatus::Scored { n, value } => {
                    assert_eq!(*n, 2);
                    assert_eq!(*value, 1.0);
                }
                other => panic!("expected scored, got {other:?}"),
            }
        }
        assert!(matches!(report.rows[3].status, RowStatus::Skipped { .. }));

        let text = std::fs::read_to_string(out.join("report.txt")).unwrap();
        assert!(text.contains("== results on similar tasks =="));
        assert!(text.contains("== results on novel tasks =="));
        assert!(text.contains("SKIPPED"));
        // Section order: similar before novel; concept before task inside.
        let sim_pos = text.find("similar tasks").unwrap();
        let nov_pos = text.find("novel tasks").unwrap();
        assert!(sim_pos < nov_pos);
        assert!(text.find("sim-two").unwrap() < text.find("sim-one").unwrap());

        // Machine-readable report parses back and per-item rows reproduce
        // every scored cell bit-exactly.
        let parsed: EvalReport =
            serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap())
                .unwrap();
        assert_eq!(parsed.rows.len(), 4);
        for row in parsed.rows.iter().take(3) {
            let per_item: Vec<PerItem> =
                io::read_ndjson(&out.join("per_item").join(format!("{}.ndl", row.task)))
                    .unwrap();
            let RowStatus::Scored { n, value } = &row.status else {
                panic!("expected scored row");
            };
            assert_eq!(per_item.len(), *n);
            assert_eq!(recompute_metric(&per_item, row.metric), *value);
        }
    }

    #[test]
    fn entity_task_scores_micro_f1_from_span_golds() {
        let mut gateway = Gateway::builder().build().unwrap();
        gateway
            .register(
                "model",
                Default::default(),
                Arc::new(FnTransport::new(|_req: &ChatRequest| {
                    Ok(crate::gateway::ChatResponse::ok(
                        "acme corp | org\nbond 7% | instrument\nextra thing | org",
                    ))
                })),
            );
        let task = toy_task(Metric::EntityF1, AnswerSchema::SpanList, Method::Direct);
        let items = vec![EvalItem {
            v: SCHEMA_VERSION,
            id: "1".into(),
            input: "Acme Corp issued a bond 7%.".into(),
            gold: Gold::Spans(vec![
                EntitySpan {
                    entity: "Acme Corp".into(),
                    kind: "org".into(),
                },
                EntitySpan {
                    entity: "bond 7%".into(),
                    kind: "instrument".into(),
                },
            ]),
        }];
        let outcome = run_task(&gateway, "model", None, &task, &items).unwrap();
        // TP=2 FP=1 FN=0 → F1 = 4/5.
        assert!((outcome.metric_value - 0.8).abs() < 1e-15);
        assert_eq!(
            outcome.per_item[0].gold,
            "acme corp | org; bond 7% | instrument"
        );
    }

    #[test]
    fn token_counts_stay_consistent_with_the_pipeline_tokenizer() {
        // decontam_texts pairs ids with input+gold text for the overlap check.
        let items = vec![item("e1", "what is a bond", "a debt instrument")];
        let texts = decontam_texts(&items, AnswerSchema::FreeText);
        assert_eq!(texts[0].0, "e1");
        assert_eq!(texts[0].1, "what is a bond a debt instrument");
        let tok = crate::tokenizer::WhitespaceTokenizer;
        use crate::tokenizer::TokenizerAdapter as _;
        assert_eq!(tok.count(&texts[0].1), 7);
    }
}
