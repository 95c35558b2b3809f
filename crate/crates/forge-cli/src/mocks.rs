//! Deterministic scripted endpoints for dry runs and offline testing.
//!
//! Each behavior computes its reply purely from the request text (and the
//! request seed, for the sampling policy), so a pipeline wired to mock
//! endpoints produces byte-identical artifacts on every run with the same
//! seed. The behaviors understand the pipeline's own prompt templates just
//! enough to play their role: the quality judge counts topic keywords, the
//! extractor pulls `Q:`/`A:` lines out of the embedded material, the reward
//! model compares final-answer letters against the embedded reference, and
//! the evaluation model follows the answer-format instruction it is given.

use std::sync::Arc;

use forge_core::gateway::{ChatRequest, ChatResponse, Transport, TransportError};

type MockResult = std::result::Result<ChatResponse, TransportError>;

/// Behaviors accepted in `kind = "mock"` endpoint definitions.
pub const KNOWN_BEHAVIORS: &[&str] = &[
    "quality-judge",
    "exercise-extractor",
    "answer-generator",
    "policy",
    "genrm",
    "eval-model",
];

pub fn is_known_behavior(name: &str) -> bool {
    KNOWN_BEHAVIORS.contains(&name)
}

/// Builds the transport for a named behavior.
pub fn transport(behavior: &str) -> Option<Arc<dyn Transport>> {
    let f: fn(&ChatRequest) -> MockResult = match behavior {
        "quality-judge" => quality_judge,
        "exercise-extractor" => exercise_extractor,
        "answer-generator" => answer_generator,
        "policy" => policy,
        "genrm" => genrm,
        "eval-model" => eval_model,
        _ => return None,
    };
    Some(Arc::new(FnBehavior(f)))
}

struct FnBehavior(fn(&ChatRequest) -> MockResult);

impl Transport for FnBehavior {
    fn send(&self, request: &ChatRequest) -> MockResult {
        (self.0)(request)
    }
}

fn prompt_text(request: &ChatRequest) -> &str {
    request
        .messages
        .first()
        .map(|m| m.content.as_str())
        .unwrap_or_default()
}

/// Slice of `text` between `start` and `end` markers (to the end if `end`
/// is absent).
fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let rest = text.split(start).nth(1)?;
    Some(rest.split(end).next().unwrap_or(rest))
}

fn json_reply(value: serde_json::Value) -> MockResult {
    Ok(ChatResponse::ok(value.to_string()))
}

/// Keywords the scripted judge treats as evidence of teaching value.
const TOPIC_KEYWORDS: &[&str] = &[
    "coupon",
    "duration",
    "portfolio",
    "arbitrage",
    "liquidity",
    "derivative",
    "amortization",
    "covenant",
];

/// Scores an extract by the number of distinct topic keywords it contains
/// (capped at 5), mirroring an additive rubric deterministically.
fn quality_judge(request: &ChatRequest) -> MockResult {
    let material =
        between(prompt_text(request), "The extract: ", ".\n\nAfter examining").unwrap_or_default();
    let lower = material.to_lowercase();
    let score = TOPIC_KEYWORDS
        .iter()
        .filter(|k| lower.contains(**k))
        .count()
        .min(5);
    json_reply(serde_json::json!({
        "Justification": format!("counted {score} distinct topic keywords"),
        "Score": score,
    }))
}

/// Extracts `Q:`/`A:` lines from the embedded material as parallel lists;
/// scenario, exhibit, and choices come back "N/A".
fn exercise_extractor(request: &ChatRequest) -> MockResult {
    let material = between(
        prompt_text(request),
        "The material: ",
        ".\n\nAfter performing",
    )
    .unwrap_or_default();
    let mut questions = Vec::new();
    let mut answers = Vec::new();
    for line in material.lines() {
        let line = line.trim();
        if let Some(q) = line.strip_prefix("Q: ") {
            questions.push(q.to_string());
            answers.push("N/A".to_string());
        } else if let Some(a) = line.strip_prefix("A: ") {
            if let Some(last) = answers.last_mut() {
                *last = a.to_string();
            }
        }
    }
    let n = questions.len();
    json_reply(serde_json::json!({
        "Justification": format!("found {n} question markers"),
        "Questions": questions,
        "Scenario": vec!["N/A"; n],
        "Exhibit": vec!["N/A"; n],
        "Answer Choices": vec!["N/A"; n],
        "Answer": answers,
    }))
}

/// Backfills a missing answer with a fixed, well-formed solution.
fn answer_generator(_request: &ChatRequest) -> MockResult {
    Ok(ChatResponse::ok(
        "Recall the definition and compare each choice against it.\n\nFinal answer: B",
    ))
}

/// Samples a trajectory: the derived request seed decides whether the
/// solution concludes with the right letter (B) or a wrong one (C).
fn policy(request: &ChatRequest) -> MockResult {
    let seed = request.seed.unwrap_or(0);
    let text = if seed % 3 == 1 {
        "Recall the payoff formula and apply it to the given terms.\n\nFinal answer: B"
    } else {
        "Misread the compounding convention and proceed anyway.\n\nCarry the error through.\n\nFinal answer: C"
    };
    Ok(ChatResponse::ok(text))
}

/// Last standalone capital letter A–E in `text`.
fn final_letter(text: &str) -> Option<char> {
    let mut found = None;
    let bytes = text.as_bytes();
    for (i, c) in text.char_indices() {
        if !('A'..='E').contains(&c) {
            continue;
        }
        let left_ok = i == 0 || !bytes[i - 1].is_ascii_alphanumeric();
        let right_ok = i + 1 >= bytes.len() || !bytes[i + 1].is_ascii_alphanumeric();
        if left_ok && right_ok {
            found = Some(c);
        }
    }
    found
}

/// Plays the generative reward model for both judgment prompts: final-answer
/// correctness (compare letters) and first-incorrect-step localization
/// (quote the last non-empty line, correct it to the reference letter).
fn genrm(request: &ChatRequest) -> MockResult {
    let content = prompt_text(request);
    if content.contains("determine the correctness") {
        let reference = between(content, "Reference Answer: ", "\nProposed Answer:")
            .unwrap_or_default();
        let proposal = between(content, "Proposed Answer: ", "\n\nAfter performing")
            .unwrap_or_default();
        let verdict = match (final_letter(reference), final_letter(proposal)) {
            (Some(r), Some(p)) if r == p => "correct",
            _ => "wrong",
        };
        json_reply(serde_json::json!({
            "Justification": "compared the two final answers letter for letter",
            "Correctness": verdict,
        }))
    } else {
        let incorrect = between(content, "Incorrect Answer: ", "\n\nAfter performing")
            .unwrap_or_default();
        let reference = between(content, "Reference Answer: ", "\nIncorrect Answer:")
            .unwrap_or_default();
        let quote = incorrect
            .lines()
            .rev()
            .find(|l| !l.trim().is_empty())
            .unwrap_or_default();
        let letter = final_letter(reference).unwrap_or('B');
        json_reply(serde_json::json!({
            "Justification": "the reasoning is sound until the conclusion, which picks the wrong option",
            "First incorrect step": quote,
            "Reasoning up to incorrect": "",
            "Step correction": format!("Final answer: {letter}"),
        }))
    }
}

/// Answers evaluation prompts by following the schema instruction embedded
/// in the prompt; choice answers are always "B", label answers the first
/// listed label, span answers a fixed entity line.
fn eval_model(request: &ChatRequest) -> MockResult {
    let content = prompt_text(request);
    let text = if content.contains("Answer with the letter only") {
        "Final answer: B".to_string()
    } else if content.contains("Answer with one of: ") {
        let first = between(content, "Answer with one of: ", ".")
            .unwrap_or_default()
            .split(", ")
            .next()
            .unwrap_or("unknown")
            .to_string();
        format!("Final answer: {first}")
    } else if content.contains("List each entity") {
        "Ardent Capital | ORG\nEast Bank | ORG".to_string()
    } else {
        "The passage reports a quarterly revenue increase driven by fee income.".to_string()
    };
    Ok(ChatResponse::ok(text))
}
