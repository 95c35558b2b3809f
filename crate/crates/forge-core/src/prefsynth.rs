//! On-policy preference-pair synthesis.
//!
//! For each exercise prompt, the policy endpoint samples `k` candidate
//! trajectories at high temperature. A generative reward model judges each
//! trajectory's final answer against the gold reference; correct and
//! incorrect trajectories then pair up two ways:
//!
//! * **FAP** (final-answer preference): first-correct vs. first-incorrect
//!   whole solutions, in sampling order.
//! * **SCP** (step-correction preference): the reward model quotes the first
//!   incorrect step of a wrong trajectory and writes its correction; the
//!   pair's prompt replays the reasoning up to that step and asks
//!   "What is the next step?".
//!
//! Every reward-model quote is validated against the source trajectory
//! (whitespace-normalized substring); quotes that do not appear are
//! discarded as hallucinations. All model traffic flows through the
//! [`Gateway`], so a replay transport reproduces pair files byte-for-byte.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gateway::parse::field_str;
use crate::gateway::{ChatMessage, ChatRequest, FinishReason, Gateway};
use crate::prompts;
use crate::records::{
    normalize_ws, PairKind, PreferencePair, Role, TaskRecord, NEXT_STEP_QUESTION,
};
use crate::tokenizer::fnv1a64;

/// Candidate solutions sampled per prompt.
pub const DEFAULT_K: usize = 8;
/// Sampling temperature for candidate trajectories.
pub const SAMPLE_TEMPERATURE: f64 = 0.8;
/// FAP pairs kept per prompt.
pub const DEFAULT_FAP_CAP: usize = 1;
/// SCP pairs kept per prompt (from distinct wrong trajectories).
pub const DEFAULT_SCP_CAP: usize = 2;
/// Blocks longer than this many characters are re-split at sentence
/// boundaries during step segmentation.
pub const MAX_STEP_CHARS: usize = 400;

const SAMPLE_MAX_TOKENS: u32 = 2048;
const GENRM_MAX_TOKENS: u32 = 1024;

/// Whether a judged trajectory reached the reference answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Correct,
    Wrong,
}

/// One sampled solution, segmented into reasoning steps.
///
/// Steps carry their trailing delimiters, so `steps.concat()` reproduces
/// `full_text` byte-for-byte and any step prefix is a string prefix of the
/// trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub prompt_id: String,
    pub full_text: String,
    pub steps: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
}

/// Structural checks for a [`Trajectory`].
pub fn trajectory_violations(traj: &Trajectory) -> Vec<String> {
    let mut out = Vec::new();
    if traj.prompt_id.is_empty() {
        out.push("prompt_id is empty".to_string());
    }
    if traj.steps.concat() != traj.full_text {
        out.push("steps do not concatenate back to full_text".to_string());
    }
    out
}

/// Splits a solution into reasoning steps: blank-line-separated blocks,
/// with any block longer than [`MAX_STEP_CHARS`] characters further split
/// at sentence boundaries (sentences regrouped greedily up to the limit).
///
/// Lossless: each step keeps its trailing delimiter, so the concatenation
/// of all steps equals the input exactly.
pub fn segment_steps(solution: &str) -> Vec<String> {
    let mut steps = Vec::new();
    for block in split_blank_line_blocks(solution) {
        if block.chars().count() <= MAX_STEP_CHARS {
            steps.push(block);
            continue;
        }
        let mut current = String::new();
        for sentence in split_sentences(&block) {
            if !current.is_empty()
                && current.chars().count() + sentence.chars().count() > MAX_STEP_CHARS
            {
                steps.push(std::mem::take(&mut current));
            }
            current.push_str(&sentence);
        }
        if !current.is_empty() {
            steps.push(current);
        }
    }
    steps
}

/// Splits text into blocks at blank lines; each blank-line run attaches to
/// the preceding block as its delimiter, keeping the split lossless.
fn split_blank_line_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current = String::new();
    let mut has_content = false;
    let mut in_delimiter = false;
    for line in text.split_inclusive('\n') {
        if line.trim().is_empty() {
            if has_content {
                in_delimiter = true;
            }
            current.push_str(line);
        } else {
            if in_delimiter {
                blocks.push(std::mem::take(&mut current));
                in_delimiter = false;
            }
            current.push_str(line);
            has_content = true;
        }
    }
    if !current.is_empty() {
        blocks.push(current);
    }
    blocks
}

/// Splits a block into sentences at `.`, `?` or `!` followed by whitespace;
/// the whitespace run stays with the preceding sentence. Decimal points and
/// abbreviations without a following space never split.
fn split_sentences(block: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut seen_terminal = false;
    let mut seen_ws_after = false;
    for (i, c) in block.char_indices() {
        if c.is_whitespace() {
            if seen_terminal {
                seen_ws_after = true;
            }
        } else {
            if seen_terminal && seen_ws_after {
                out.push(block[start..i].to_string());
                start = i;
            }
            seen_terminal = matches!(c, '.' | '?' | '!');
            seen_ws_after = false;
        }
    }
    if start < block.len() {
        out.push(block[start..].to_string());
    }
    out
}

/// The question text shown to the policy and used as the pair prompt: the
/// content of the prompt's first user turn.
pub fn question_text(prompt: &TaskRecord) -> Result<String> {
    prompt
        .turns
        .iter()
        .find(|t| t.role == Role::User)
        .map(|t| t.content.clone())
        .ok_or_else(|| Error::Config(format!("prompt {} has no user turn", prompt.id)))
}

/// Deterministic per-sample request seed. Public so scripted transports
/// (tests, dry runs) can recognize which sample a request asks for.
pub fn sample_seed(seed: u64, prompt_id: &str, index: usize) -> u64 {
    seed ^ fnv1a64(format!("pa.sample.{prompt_id}.{index}").as_bytes())
}

/// Samples `k` candidate trajectories from the policy endpoint.
///
/// Requests go out in index order with distinct derived seeds; failed or
/// empty generations are skipped (the shortfall is logged), so fewer than
/// `k` trajectories may come back.
pub fn sample_trajectories(
    gateway: &Gateway,
    policy: &str,
    prompt: &TaskRecord,
    k: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if prompt.gold_answer.is_none() {
        return Err(Error::Config(format!(
            "prompt {} has no gold answer to judge against",
            prompt.id
        )));
    }
    let question = question_text(prompt)?;
    let requests: Vec<ChatRequest> = (0..k)
        .map(|i| ChatRequest {
            endpoint: policy.to_string(),
            messages: vec![ChatMessage::user(question.clone())],
            temperature,
            max_tokens: SAMPLE_MAX_TOKENS,
            seed: Some(sample_seed(seed, &prompt.id, i)),
        })
        .collect();
    let mut trajectories = Vec::with_capacity(k);
    for (i, outcome) in gateway.complete_batch(&requests).into_iter().enumerate() {
        let response = outcome?;
        if response.finish_reason == FinishReason::Error || response.text.trim().is_empty() {
            log::warn!("prompt {}: sample {i} failed or came back empty", prompt.id);
            continue;
        }
        trajectories.push(Trajectory {
            prompt_id: prompt.id.clone(),
            full_text: response.text.clone(),
            steps: segment_steps(&response.text),
            final_answer: None,
            verdict: None,
        });
    }
    if trajectories.len() < k {
        log::warn!(
            "prompt {}: {} of {k} samples usable",
            prompt.id,
            trajectories.len()
        );
    }
    Ok(trajectories)
}

/// A trajectory with its verdict and the raw reward-model reply that
/// produced it (kept for the pair audit trail).
#[derive(Debug, Clone, PartialEq)]
pub struct Judged {
    pub trajectory: Trajectory,
    pub judgment: String,
}

impl Judged {
    pub fn verdict(&self) -> Verdict {
        self.trajectory
            .verdict
            .expect("judged trajectory always carries a verdict")
    }
}

/// Normalizes a Correctness value: lowercase, punctuation stripped.
fn normalize_verdict(raw: &str) -> String {
    raw.trim()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .to_lowercase()
}

/// Judges one trajectory's final answer against the reference.
///
/// Fills the correctness-judgment prompt and parses its
/// `{Justification, Correctness}` reply; `correct` (after normalization)
/// maps to [`Verdict::Correct`], anything else — including multi-answer and
/// no-answer cases — to [`Verdict::Wrong`]. A reply that stays unparseable
/// after the gateway's corrective retry excludes the trajectory
/// (`Ok(None)`).
pub fn judge_final_answer(
    gateway: &Gateway,
    genrm: &str,
    question: &str,
    reference: &str,
    trajectory: Trajectory,
) -> Result<Option<Judged>> {
    let request = ChatRequest {
        endpoint: genrm.to_string(),
        messages: vec![ChatMessage::user(prompts::fill_final_answer_judge(
            question,
            reference,
            &trajectory.full_text,
        ))],
        temperature: 0.0,
        max_tokens: GENRM_MAX_TOKENS,
        seed: None,
    };
    let structured = match gateway.complete_structured(&request, prompts::FINAL_ANSWER_JUDGE_FIELDS)
    {
        Ok(structured) => structured,
        Err(Error::StructuredParse { message, .. }) => {
            log::warn!(
                "prompt {}: unparseable correctness judgment ({message}); trajectory excluded",
                trajectory.prompt_id
            );
            return Ok(None);
        }
        Err(other) => return Err(other),
    };
    let correctness = field_str(&structured.fields, "Correctness").unwrap_or_default();
    let verdict = if normalize_verdict(&correctness) == "correct" {
        Verdict::Correct
    } else {
        Verdict::Wrong
    };
    let mut trajectory = trajectory;
    trajectory.verdict = Some(verdict);
    Ok(Some(Judged {
        trajectory,
        judgment: structured.raw,
    }))
}

/// Builds final-answer preference pairs: the i-th correct trajectory is
/// chosen against the i-th incorrect one (sampling order), up to `cap`
/// pairs. All-correct or all-wrong prompts yield nothing.
pub fn build_fap_pairs(
    prompt_id: &str,
    question: &str,
    judged: &[Judged],
    cap: usize,
) -> Vec<PreferencePair> {
    let corrects = judged.iter().filter(|j| j.verdict() == Verdict::Correct);
    let wrongs = judged.iter().filter(|j| j.verdict() == Verdict::Wrong);
    let mut pairs = Vec::new();
    for (chosen, rejected) in corrects.zip(wrongs).take(cap) {
        if normalize_ws(&chosen.trajectory.full_text) == normalize_ws(&rejected.trajectory.full_text)
        {
            log::warn!(
                "prompt {prompt_id}: correct and incorrect trajectories identical; pair skipped"
            );
            continue;
        }
        pairs.push(PreferencePair {
            v: crate::records::SCHEMA_VERSION,
            id: format!("{prompt_id}-fap{}", pairs.len()),
            prompt: question.to_string(),
            chosen: chosen.trajectory.full_text.clone(),
            rejected: rejected.trajectory.full_text.clone(),
            kind: PairKind::Fap,
            source_prompt_id: prompt_id.to_string(),
            judgments: vec![chosen.judgment.clone(), rejected.judgment.clone()],
        });
    }
    pairs
}

/// A parsed and validated first-error finding for one wrong trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScpFinding {
    /// Text quoted verbatim from the trajectory where the error begins.
    pub first_incorrect_step: String,
    /// The trajectory's own steps up to (not including) the erroneous one;
    /// a byte-level prefix of `full_text`.
    pub reasoning_prefix: String,
    /// The reward model's replacement for the erroneous step.
    pub step_correction: String,
    pub justification: String,
}

/// What came of one step-correction attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum ScpOutcome {
    Pair(Box<PreferencePair>),
    /// The reward model quoted text that does not occur in the trajectory.
    Hallucinated,
    /// Parse failure or degenerate fields; nothing usable.
    NoPair,
}

/// Locates `quote` in the trajectory and returns the index of the step
/// containing its first occurrence, matching on whitespace-normalized text.
fn locate_step(steps: &[String], full_text: &str, quote: &str) -> Option<usize> {
    let normalized_full = normalize_ws(full_text);
    let normalized_quote = normalize_ws(quote);
    if normalized_quote.is_empty() {
        return None;
    }
    let position = normalized_full.find(&normalized_quote)?;
    // Words in the normalized text are single-space separated, so the word
    // index at `position` is the number of spaces before it.
    let word_index = normalized_full[..position].matches(' ').count();
    let mut words_seen = 0usize;
    for (i, step) in steps.iter().enumerate() {
        words_seen += step.split_whitespace().count();
        if word_index < words_seen {
            return Some(i);
        }
    }
    // The quote starts in the final step's trailing region.
    steps.len().checked_sub(1)
}

/// Asks the reward model for the first incorrect step of a wrong trajectory
/// and builds a step-correction pair from the finding.
///
/// The quoted step must occur in the trajectory (whitespace-normalized
/// substring) or the finding is discarded as hallucinated. The pair's
/// reasoning prefix is the trajectory's own step sequence up to the
/// erroneous step, so it is always a byte-level prefix of the trajectory;
/// the prompt appends "What is the next step?" after it.
pub fn build_scp_pair(
    gateway: &Gateway,
    genrm: &str,
    question: &str,
    reference: &str,
    wrong: &Judged,
    pair_id: &str,
) -> Result<ScpOutcome> {
    debug_assert_eq!(wrong.verdict(), Verdict::Wrong);
    let traj = &wrong.trajectory;
    let request = ChatRequest {
        endpoint: genrm.to_string(),
        messages: vec![ChatMessage::user(prompts::fill_step_correction_judge(
            question,
            reference,
            &traj.full_text,
        ))],
        temperature: 0.0,
        max_tokens: GENRM_MAX_TOKENS,
        seed: None,
    };
    let structured =
        match gateway.complete_structured(&request, prompts::STEP_CORRECTION_JUDGE_FIELDS) {
            Ok(structured) => structured,
            Err(Error::StructuredParse { message, .. }) => {
                log::warn!(
                    "prompt {}: unparseable step-correction reply ({message})",
                    traj.prompt_id
                );
                return Ok(ScpOutcome::NoPair);
            }
            Err(other) => return Err(other),
        };
    let first_incorrect = field_str(&structured.fields, "First incorrect step").unwrap_or_default();
    let correction = field_str(&structured.fields, "Step correction").unwrap_or_default();
    let justification = field_str(&structured.fields, "Justification").unwrap_or_default();
    if normalize_ws(&correction).is_empty() {
        log::warn!("prompt {}: empty step correction; no pair", traj.prompt_id);
        return Ok(ScpOutcome::NoPair);
    }
    let Some(step_index) = locate_step(&traj.steps, &traj.full_text, &first_incorrect) else {
        log::warn!(
            "prompt {}: quoted step not found in trajectory; finding discarded",
            traj.prompt_id
        );
        return Ok(ScpOutcome::Hallucinated);
    };
    let finding = ScpFinding {
        first_incorrect_step: first_incorrect,
        reasoning_prefix: traj.steps[..step_index].concat(),
        step_correction: correction,
        justification,
    };
    if normalize_ws(&finding.step_correction) == normalize_ws(&finding.first_incorrect_step) {
        log::warn!(
            "prompt {}: correction equals the quoted step; no pair",
            traj.prompt_id
        );
        return Ok(ScpOutcome::NoPair);
    }
    let pair = PreferencePair {
        v: crate::records::SCHEMA_VERSION,
        id: pair_id.to_string(),
        prompt: format!(
            "{question}\n{}\n{NEXT_STEP_QUESTION}",
            finding.reasoning_prefix
        ),
        chosen: finding.step_correction.clone(),
        rejected: finding.first_incorrect_step.clone(),
        kind: PairKind::Scp,
        source_prompt_id: traj.prompt_id.clone(),
        judgments: vec![wrong.judgment.clone(), structured.raw],
    };
    Ok(ScpOutcome::Pair(Box::new(pair)))
}

/// Knobs for a synthesis run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub policy: String,
    pub genrm: String,
    pub k: usize,
    pub temperature: f64,
    pub fap_cap: usize,
    pub scp_cap: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(policy: impl Into<String>, genrm: impl Into<String>, seed: u64) -> Self {
        SynthConfig {
            policy: policy.into(),
            genrm: genrm.into(),
            k: DEFAULT_K,
            temperature: SAMPLE_TEMPERATURE,
            fap_cap: DEFAULT_FAP_CAP,
            scp_cap: DEFAULT_SCP_CAP,
            seed,
        }
    }
}

/// Tallies from a synthesis run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthStats {
    pub prompts: usize,
    pub prompts_skipped: usize,
    pub trajectories_sampled: usize,
    pub sample_shortfall: usize,
    pub judge_exclusions: usize,
    pub hallucinations: usize,
    pub fap_pairs: usize,
    pub scp_pairs: usize,
}

impl SynthStats {
    fn absorb(&mut self, other: SynthStats) {
        self.prompts += other.prompts;
        self.prompts_skipped += other.prompts_skipped;
        self.trajectories_sampled += other.trajectories_sampled;
        self.sample_shortfall += other.sample_shortfall;
        self.judge_exclusions += other.judge_exclusions;
        self.hallucinations += other.hallucinations;
        self.fap_pairs += other.fap_pairs;
        self.scp_pairs += other.scp_pairs;
    }
}

/// Runs sample → judge → pair for one prompt.
fn synth_one(
    gateway: &Gateway,
    prompt: &TaskRecord,
    config: &SynthConfig,
) -> Result<(Vec<PreferencePair>, SynthStats)> {
    let mut stats = SynthStats {
        prompts: 1,
        ..SynthStats::default()
    };
    let Some(reference) = prompt.gold_answer.clone() else {
        log::warn!("prompt {}: no gold answer; skipped", prompt.id);
        stats.prompts_skipped = 1;
        return Ok((Vec::new(), stats));
    };
    let question = match question_text(prompt) {
        Ok(q) => q,
        Err(_) => {
            log::warn!("prompt {}: no user turn; skipped", prompt.id);
            stats.prompts_skipped = 1;
            return Ok((Vec::new(), stats));
        }
    };
    let trajectories = sample_trajectories(
        gateway,
        &config.policy,
        prompt,
        config.k,
        config.temperature,
        config.seed,
    )?;
    stats.trajectories_sampled = trajectories.len();
    stats.sample_shortfall = config.k - trajectories.len();

    let mut judged = Vec::with_capacity(trajectories.len());
    for trajectory in trajectories {
        match judge_final_answer(gateway, &config.genrm, &question, &reference, trajectory)? {
            Some(j) => judged.push(j),
            None => stats.judge_exclusions += 1,
        }
    }

    let mut pairs = build_fap_pairs(&prompt.id, &question, &judged, config.fap_cap);
    stats.fap_pairs = pairs.len();

    let wrongs = judged.iter().filter(|j| j.verdict() == Verdict::Wrong);
    for wrong in wrongs {
        if stats.scp_pairs == config.scp_cap {
            break;
        }
        let pair_id = format!("{}-scp{}", prompt.id, stats.scp_pairs);
        match build_scp_pair(gateway, &config.genrm, &question, &reference, wrong, &pair_id)? {
            ScpOutcome::Pair(pair) => {
                pairs.push(*pair);
                stats.scp_pairs += 1;
            }
            ScpOutcome::Hallucinated => stats.hallucinations += 1,
            ScpOutcome::NoPair => {}
        }
    }
    Ok((pairs, stats))
}

/// Synthesizes preference pairs for every prompt.
///
/// Prompts fan out in parallel but each prompt's sample → judge → pair
/// chain runs sequentially; the output is ordered by prompt id, FAP pairs
/// before SCP pairs within a prompt.
pub fn synth_pa(
    gateway: &Gateway,
    prompts: &[TaskRecord],
    config: &SynthConfig,
) -> Result<(Vec<PreferencePair>, SynthStats)> {
    let mut ordered: Vec<&TaskRecord> = prompts.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));

    #[cfg(feature = "parallel")]
    let outcomes: Vec<Result<(Vec<PreferencePair>, SynthStats)>> = ordered
        .par_iter()
        .map(|prompt| synth_one(gateway, prompt, config))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<Result<(Vec<PreferencePair>, SynthStats)>> = ordered
        .iter()
        .map(|prompt| synth_one(gateway, prompt, config))
        .collect();

    let mut pairs = Vec::new();
    let mut stats = SynthStats::default();
    for outcome in outcomes {
        let (mut prompt_pairs, prompt_stats) = outcome?;
        pairs.append(&mut prompt_pairs);
        stats.absorb(prompt_stats);
    }
    Ok((pairs, stats))
}
