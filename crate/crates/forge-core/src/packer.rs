//! Rendering, loss masking, fixed-context packing, and recipe emission.
//!
//! Documents render to plain token streams trained with full loss; chat
//! records render through a fixed template whose system/user turns (markers
//! included) become instruction spans that the loss mask zeroes out.
//! Rendered records are then packed greedily into fixed-length
//! [`PackedTrainingRecord`]s: CPT records may split at arbitrary token
//! positions, IT records are atomic, and every tail is padded. Segment
//! boundaries are preserved so a trainer can build cross-document attention
//! masks and so packing can be reversed exactly ([`unpack`]).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{
    document_violations, schema_version, task_violations, Document, PackedTrainingRecord, Role,
    Segment, SegmentKind, TaskRecord, TrainingUnit,
};
use crate::tokenizer::TokenizerAdapter;

/// Role marker opening a system turn in the chat template.
pub const SYSTEM_MARKER: &str = "<|system|>";
/// Role marker opening a user turn in the chat template.
pub const USER_MARKER: &str = "<|user|>";
/// Role marker opening an assistant turn in the chat template.
pub const ASSISTANT_MARKER: &str = "<|assistant|>";
/// Marker closing every turn in the chat template.
pub const END_MARKER: &str = "<|end|>";

/// Token id used to fill the padded tail of a packed record.
pub const PAD_TOKEN_ID: u32 = 0;
/// `record_id` carried by pad segments, which have no source record.
pub const PAD_RECORD_ID: &str = "-";

/// Returns the template marker that opens a turn of the given role.
pub fn role_marker(role: Role) -> &'static str {
    match role {
        Role::System => SYSTEM_MARKER,
        Role::User => USER_MARKER,
        Role::Assistant => ASSISTANT_MARKER,
    }
}

/// A tokenized record ready for packing.
///
/// `instruction_spans` are half-open `(start, end)` token ranges whose loss
/// is masked out; they are empty for CPT records and cover every system and
/// user turn — role markers included — for IT records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedRecord {
    pub record_id: String,
    pub kind: SegmentKind,
    pub tokens: Vec<u32>,
    pub instruction_spans: Vec<(usize, usize)>,
}

/// Structural checks for a [`RenderedRecord`]: spans must be sorted,
/// disjoint, non-empty, and within bounds; CPT records carry no spans; the
/// kind is never `pad` (padding exists only inside packed records).
pub fn rendered_violations(rec: &RenderedRecord) -> Vec<String> {
    let mut out = Vec::new();
    if rec.record_id.is_empty() {
        out.push("record_id is empty".to_string());
    }
    match rec.kind {
        SegmentKind::Pad => out.push("kind must be cpt or it, not pad".to_string()),
        SegmentKind::Cpt if !rec.instruction_spans.is_empty() => {
            out.push("cpt records must not carry instruction spans".to_string());
        }
        _ => {}
    }
    let mut cursor = 0usize;
    for &(start, end) in &rec.instruction_spans {
        if start >= end {
            out.push(format!("instruction span ({start}, {end}) is empty or inverted"));
        }
        if start < cursor {
            out.push(format!(
                "instruction span ({start}, {end}) overlaps or precedes an earlier span"
            ));
        }
        if end > rec.tokens.len() {
            out.push(format!(
                "instruction span ({start}, {end}) exceeds the {}-token record",
                rec.tokens.len()
            ));
        }
        cursor = cursor.max(end);
    }
    out
}

/// Renders a document for CPT: its raw text tokens, full loss, no spans.
pub fn render_document(doc: &Document, tokenizer: &dyn TokenizerAdapter) -> RenderedRecord {
    RenderedRecord {
        record_id: doc.id.clone(),
        kind: SegmentKind::Cpt,
        tokens: tokenizer.encode(&doc.text),
        instruction_spans: Vec::new(),
    }
}

/// Renders a chat record for IT through the fixed template.
///
/// Each turn renders as `<marker> <content> <|end|>`. Every token of a
/// system or user turn — markers included — falls inside an instruction
/// span; assistant turns (markers included) stay outside all spans so their
/// loss is kept. Adjacent instruction turns merge into one span.
pub fn render_task(task: &TaskRecord, tokenizer: &dyn TokenizerAdapter) -> RenderedRecord {
    let mut tokens = Vec::new();
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for turn in &task.turns {
        let start = tokens.len();
        tokens.extend(tokenizer.encode(role_marker(turn.role)));
        tokens.extend(tokenizer.encode(&turn.content));
        tokens.extend(tokenizer.encode(END_MARKER));
        if turn.role != Role::Assistant {
            match spans.last_mut() {
                Some(last) if last.1 == start => last.1 = tokens.len(),
                _ => spans.push((start, tokens.len())),
            }
        }
    }
    RenderedRecord {
        record_id: task.id.clone(),
        kind: SegmentKind::It,
        tokens,
        instruction_spans: spans,
    }
}

/// The flat text form of the chat template; encoding it yields the same
/// token stream as [`render_task`] under whitespace tokenization.
pub fn render_chat_text(task: &TaskRecord) -> String {
    task.turns
        .iter()
        .map(|t| format!("{} {} {}", role_marker(t.role), t.content, END_MARKER))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Renders one training unit of either kind.
pub fn render_record(unit: &TrainingUnit, tokenizer: &dyn TokenizerAdapter) -> RenderedRecord {
    match unit {
        TrainingUnit::Cpt { doc, .. } => render_document(doc, tokenizer),
        TrainingUnit::It { task, .. } => render_task(task, tokenizer),
    }
}

/// Renders a stream of units, skipping (and logging) invalid records.
/// Rendering is per-record parallel; output order matches input order.
pub fn render_all(units: &[TrainingUnit], tokenizer: &dyn TokenizerAdapter) -> Vec<RenderedRecord> {
    let render_one = |unit: &TrainingUnit| -> Option<RenderedRecord> {
        let violations = match unit {
            TrainingUnit::Cpt { doc, .. } => document_violations(doc, tokenizer),
            TrainingUnit::It { task, .. } => task_violations(task),
        };
        if violations.is_empty() {
            Some(render_record(unit, tokenizer))
        } else {
            eprintln!(
                "warning: skipping invalid record `{}`: {}",
                unit.id(),
                violations.join("; ")
            );
            None
        }
    };
    #[cfg(feature = "parallel")]
    {
        units.par_iter().filter_map(render_one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        units.iter().filter_map(render_one).collect()
    }
}

/// Result of packing a rendered stream.
#[derive(Debug, Clone, PartialEq)]
pub struct PackOutcome {
    pub records: Vec<PackedTrainingRecord>,
    /// Ids of IT records longer than the context length, dropped whole.
    pub dropped_oversize: Vec<String>,
}

/// One packed record under construction.
struct OpenBin {
    tokens: Vec<u32>,
    mask: Vec<u8>,
    segments: Vec<Segment>,
}

impl OpenBin {
    fn new() -> Self {
        OpenBin {
            tokens: Vec::new(),
            mask: Vec::new(),
            segments: Vec::new(),
        }
    }

    fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Appends `rec.tokens[from..to]`, masking positions inside instruction
    /// spans, and records the segment boundary.
    fn push_slice(&mut self, rec: &RenderedRecord, from: usize, to: usize) {
        let start = self.tokens.len();
        self.tokens.extend_from_slice(&rec.tokens[from..to]);
        for offset in from..to {
            let instructed = rec
                .instruction_spans
                .iter()
                .any(|&(s, e)| offset >= s && offset < e);
            self.mask.push(if instructed { 0 } else { 1 });
        }
        self.segments.push(Segment {
            start,
            end: self.tokens.len(),
            record_id: rec.record_id.clone(),
            kind: rec.kind,
        });
    }

    /// Pads the tail to `context_length` and closes the record.
    fn seal(mut self, context_length: usize, recipe_group: u32) -> PackedTrainingRecord {
        let filled = self.tokens.len();
        if filled < context_length {
            self.tokens.resize(context_length, PAD_TOKEN_ID);
            self.mask.resize(context_length, 0);
            self.segments.push(Segment {
                start: filled,
                end: context_length,
                record_id: PAD_RECORD_ID.to_string(),
                kind: SegmentKind::Pad,
            });
        }
        PackedTrainingRecord {
            v: schema_version(),
            tokens: self.tokens,
            loss_mask: self.mask,
            segments: self.segments,
            recipe_group,
        }
    }
}

/// Packs rendered records into fixed-length training records.
///
/// Greedy in input order with a single open record: CPT records split at
/// arbitrary token positions to fill each record to capacity; IT records are
/// atomic — if one does not fit the remaining space, the open record is
/// sealed (padded) and the IT record starts the next one. IT records longer
/// than the context are dropped whole and reported. Loss mask is 1
/// everywhere except instruction spans and padding.
pub fn pack_sequences(
    rendered: &[RenderedRecord],
    context_length: usize,
    recipe_group: u32,
) -> PackOutcome {
    assert!(context_length > 0, "context_length must be positive");
    let mut records = Vec::new();
    let mut dropped_oversize = Vec::new();
    let mut bin = OpenBin::new();
    let seal = |bin: &mut OpenBin, records: &mut Vec<PackedTrainingRecord>| {
        let full = std::mem::replace(bin, OpenBin::new());
        records.push(full.seal(context_length, recipe_group));
    };
    for rec in rendered {
        if rec.tokens.is_empty() {
            eprintln!("warning: record `{}` rendered to zero tokens; skipped", rec.record_id);
            continue;
        }
        match rec.kind {
            SegmentKind::It => {
                if rec.tokens.len() > context_length {
                    eprintln!(
                        "warning: it record `{}` has {} tokens, over the {}-token context; dropped",
                        rec.record_id,
                        rec.tokens.len(),
                        context_length
                    );
                    dropped_oversize.push(rec.record_id.clone());
                    continue;
                }
                if rec.tokens.len() > context_length - bin.len() {
                    seal(&mut bin, &mut records);
                }
                bin.push_slice(rec, 0, rec.tokens.len());
            }
            SegmentKind::Cpt => {
                let mut cursor = 0;
                while cursor < rec.tokens.len() {
                    let room = context_length - bin.len();
                    if room == 0 {
                        seal(&mut bin, &mut records);
                        continue;
                    }
                    let take = room.min(rec.tokens.len() - cursor);
                    bin.push_slice(rec, cursor, cursor + take);
                    cursor += take;
                }
            }
            SegmentKind::Pad => {
                eprintln!(
                    "warning: rendered record `{}` has kind pad; skipped",
                    rec.record_id
                );
                continue;
            }
        }
        if bin.len() == context_length {
            seal(&mut bin, &mut records);
        }
    }
    if bin.len() > 0 {
        seal(&mut bin, &mut records);
    }
    PackOutcome {
        records,
        dropped_oversize,
    }
}

/// Reverses packing: concatenates every non-pad segment's tokens per source
/// `record_id`, in packed order. Unsplit records come back byte-identical;
/// split CPT records reassemble in order.
pub fn unpack(records: &[PackedTrainingRecord]) -> BTreeMap<String, Vec<u32>> {
    let mut out: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for rec in records {
        for seg in &rec.segments {
            if seg.kind == SegmentKind::Pad {
                continue;
            }
            out.entry(seg.record_id.clone())
                .or_default()
                .extend_from_slice(&rec.tokens[seg.start..seg.end]);
        }
    }
    out
}

/// Training stage a recipe config describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Joint continual pre-training + instruction tuning.
    CptIt,
    /// Preference alignment on FAP/SCP pairs.
    Pa,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::CptIt => "cpt_it",
            Stage::Pa => "pa",
        }
    }

    pub fn parse(s: &str) -> Result<Stage> {
        match s {
            "cpt_it" => Ok(Stage::CptIt),
            "pa" => Ok(Stage::Pa),
            other => Err(Error::Config(format!(
                "unknown stage `{other}` (expected cpt_it or pa)"
            ))),
        }
    }
}

/// Hyper-parameters for one training stage, emitted as a flat key=value
/// file for the trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeConfig {
    pub stage: Stage,
    /// Curriculum group (1 or 2) for cpt_it; always 1 for pa.
    pub group: u32,
    pub context_length: u32,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub batch_tokens: u64,
    pub optimizer: String,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub loss: String,
    pub attention: String,
    pub stop_criterion: String,
    /// Hyper-parameter keys the recipe needs but whose values are not
    /// published; emitted as `<key>=unspecified`.
    pub unspecified_keys: Vec<String>,
}

/// Stop criterion shared by both stages.
pub const STOP_CRITERION: &str = "Loss of development set stops decreasing";

/// Builds the recipe for a stage. `cpt_it` has curriculum groups 1 and 2
/// (differing only in warmup fraction); `pa` has a single group.
pub fn recipe_config(stage: Stage, group: u32) -> Result<RecipeConfig> {
    match stage {
        Stage::CptIt => {
            let warmup_fraction = match group {
                1 => 0.10,
                2 => 0.50,
                other => {
                    return Err(Error::Config(format!(
                        "cpt_it has curriculum groups 1 and 2, not {other}"
                    )))
                }
            };
            Ok(RecipeConfig {
                stage,
                group,
                context_length: 8000,
                learning_rate: 5e-6,
                warmup_fraction,
                batch_tokens: 131_072,
                optimizer: "AdamW".to_string(),
                weight_decay: 0.1,
                beta1: 0.9,
                beta2: 0.95,
                loss: "Next-token prediction; instruction tokens masked out for IT records"
                    .to_string(),
                attention: "Full attention with cross-document attention masking; \
                            instruction mask-out for IT records"
                    .to_string(),
                stop_criterion: STOP_CRITERION.to_string(),
                unspecified_keys: Vec::new(),
            })
        }
        Stage::Pa => {
            if group != 1 {
                return Err(Error::Config(format!(
                    "pa has a single group (1), not {group}"
                )));
            }
            Ok(RecipeConfig {
                stage,
                group,
                context_length: 8000,
                learning_rate: 5e-7,
                warmup_fraction: 0.10,
                batch_tokens: 32_768,
                optimizer: "AdamW".to_string(),
                weight_decay: 0.1,
                beta1: 0.9,
                beta2: 0.95,
                loss: "DPO with an additional negative log-likelihood term".to_string(),
                attention: "Attention with instruction mask-out and cross-document \
                            attention masking"
                    .to_string(),
                stop_criterion: STOP_CRITERION.to_string(),
                unspecified_keys: vec!["dpo_beta".to_string(), "nll_weight".to_string()],
            })
        }
    }
}

/// Renders a recipe as flat `key=value` lines, one per field, with
/// unspecified keys last.
pub fn recipe_lines(config: &RecipeConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "stage={}", config.stage.as_str());
    let _ = writeln!(out, "group={}", config.group);
    let _ = writeln!(out, "context_length={}", config.context_length);
    let _ = writeln!(out, "learning_rate={:e}", config.learning_rate);
    let _ = writeln!(out, "warmup_fraction={}", config.warmup_fraction);
    let _ = writeln!(out, "batch_tokens={}", config.batch_tokens);
    let _ = writeln!(out, "optimizer={}", config.optimizer);
    let _ = writeln!(out, "weight_decay={}", config.weight_decay);
    let _ = writeln!(out, "beta1={}", config.beta1);
    let _ = writeln!(out, "beta2={}", config.beta2);
    let _ = writeln!(out, "loss={}", config.loss);
    let _ = writeln!(out, "attention={}", config.attention);
    let _ = writeln!(out, "stop_criterion={}", config.stop_criterion);
    for key in &config.unspecified_keys {
        let _ = writeln!(out, "{key}=unspecified");
    }
    out
}

/// Writes the recipe to `path` as a flat key=value file.
pub fn write_recipe(config: &RecipeConfig, path: &Path) -> Result<()> {
    std::fs::write(path, recipe_lines(config)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::{packed_violations, Capability, Domain, Source, Turn};
    use crate::tokenizer::WhitespaceTokenizer;
    use proptest::prelude::*;

    fn tok() -> WhitespaceTokenizer {
        WhitespaceTokenizer
    }

    fn doc(id: &str, text: &str) -> Document {
        Document::new(id, text, Source::Web, Domain::InDomain, &tok())
    }

    fn task(id: &str, turns: Vec<Turn>) -> TaskRecord {
        TaskRecord {
            v: 1,
            id: id.to_string(),
            turns,
            domain: Domain::InDomain,
            capability: Capability::Concept,
            source_dataset: "test".to_string(),
            gold_answer: None,
        }
    }

    /// A synthetic cpt record with `n` distinct tokens starting at `base`.
    fn cpt_rec(id: &str, base: u32, n: usize) -> RenderedRecord {
        RenderedRecord {
            record_id: id.to_string(),
            kind: SegmentKind::Cpt,
            tokens: (base..base + n as u32).collect(),
            instruction_spans: Vec::new(),
        }
    }

    fn it_rec(id: &str, base: u32, n: usize, spans: Vec<(usize, usize)>) -> RenderedRecord {
        RenderedRecord {
            record_id: id.to_string(),
            kind: SegmentKind::It,
            tokens: (base..base + n as u32).collect(),
            instruction_spans: spans,
        }
    }

    #[test]
    fn document_renders_to_cpt_with_no_spans() {
        let d = doc("d1", "one two three four five six seven eight nine ten eleven twelve");
        let rendered = render_document(&d, &tok());
        assert_eq!(rendered.kind, SegmentKind::Cpt);
        assert_eq!(rendered.tokens.len(), 12);
        assert!(rendered.instruction_spans.is_empty());
        assert!(rendered_violations(&rendered).is_empty());
        assert_eq!(rendered.tokens, tok().encode(&d.text));
    }

    #[test]
    fn single_turn_task_masks_user_turn_with_markers() {
        // User turn renders as `<|user|> price a bond <|end|>` = 5 tokens,
        // assistant as `<|assistant|> use discounting <|end|>` = 4 tokens.
        let t = task(
            "t1",
            vec![
                Turn::new(Role::User, "price a bond"),
                Turn::new(Role::Assistant, "use discounting"),
            ],
        );
        let rendered = render_task(&t, &tok());
        assert_eq!(rendered.kind, SegmentKind::It);
        assert_eq!(rendered.tokens.len(), 9);
        assert_eq!(rendered.instruction_spans, vec![(0, 5)]);
        // Positions 5..9 (the whole assistant turn, markers included) are
        // outside every span.
        for pos in 5..9 {
            assert!(!rendered
                .instruction_spans
                .iter()
                .any(|&(s, e)| pos >= s && pos < e));
        }
        assert!(rendered_violations(&rendered).is_empty());
    }

    #[test]
    fn two_turn_chat_yields_exactly_two_spans() {
        // u1: <|user|> hi there <|end|>            -> 4 tokens, span (0,4)
        // a1: <|assistant|> hello <|end|>          -> 3 tokens, unmasked
        // u2: <|user|> rate this bond <|end|>      -> 5 tokens, span (7,12)
        // a2: <|assistant|> it is junk <|end|>     -> 5 tokens, unmasked
        let t = task(
            "t2",
            vec![
                Turn::new(Role::User, "hi there"),
                Turn::new(Role::Assistant, "hello"),
                Turn::new(Role::User, "rate this bond"),
                Turn::new(Role::Assistant, "it is junk"),
            ],
        );
        let rendered = render_task(&t, &tok());
        assert_eq!(rendered.tokens.len(), 17);
        assert_eq!(rendered.instruction_spans, vec![(0, 4), (7, 12)]);
        assert!(rendered_violations(&rendered).is_empty());
    }

    #[test]
    fn adjacent_system_and_user_turns_merge_into_one_span() {
        // system: <|system|> be terse <|end|>          -> 4 tokens
        // user:   <|user|> define duration <|end|>     -> 4 tokens
        // assistant: <|assistant|> sensitivity measure <|end|> -> 4 tokens
        let t = task(
            "t3",
            vec![
                Turn::new(Role::System, "be terse"),
                Turn::new(Role::User, "define duration"),
                Turn::new(Role::Assistant, "sensitivity measure"),
            ],
        );
        let rendered = render_task(&t, &tok());
        assert_eq!(rendered.tokens.len(), 12);
        assert_eq!(rendered.instruction_spans, vec![(0, 8)]);
    }

    #[test]
    fn rendered_tokens_match_flat_template_encoding() {
        let t = task(
            "t4",
            vec![
                Turn::new(Role::System, "answer briefly"),
                Turn::new(Role::User, "what is carry"),
                Turn::new(Role::Assistant, "funding versus yield"),
                Turn::new(Role::User, "and roll down"),
                Turn::new(Role::Assistant, "price change along the curve"),
            ],
        );
        let rendered = render_task(&t, &tok());
        assert_eq!(rendered.tokens, tok().encode(&render_chat_text(&t)));
    }

    #[test]
    fn rendered_violations_flag_bad_spans_and_kinds() {
        let ok = it_rec("a", 0, 10, vec![(0, 3), (5, 7)]);
        assert!(rendered_violations(&ok).is_empty());

        let pad_kind = RenderedRecord {
            kind: SegmentKind::Pad,
            ..ok.clone()
        };
        assert!(rendered_violations(&pad_kind)
            .iter()
            .any(|v| v.contains("pad")));

        let cpt_with_spans = RenderedRecord {
            kind: SegmentKind::Cpt,
            ..ok.clone()
        };
        assert!(rendered_violations(&cpt_with_spans)
            .iter()
            .any(|v| v.contains("instruction spans")));

        let inverted = it_rec("a", 0, 10, vec![(4, 4)]);
        assert!(rendered_violations(&inverted)
            .iter()
            .any(|v| v.contains("empty or inverted")));

        let overlapping = it_rec("a", 0, 10, vec![(0, 5), (3, 7)]);
        assert!(rendered_violations(&overlapping)
            .iter()
            .any(|v| v.contains("overlaps")));

        let out_of_range = it_rec("a", 0, 10, vec![(8, 12)]);
        assert!(rendered_violations(&out_of_range)
            .iter()
            .any(|v| v.contains("exceeds")));
    }

    #[test]
    fn short_cpt_doc_is_padded_to_context() {
        let outcome = pack_sequences(&[cpt_rec("doc", 100, 10)], 16, 1);
        assert!(outcome.dropped_oversize.is_empty());
        assert_eq!(outcome.records.len(), 1);
        let rec = &outcome.records[0];
        assert_eq!(rec.tokens.len(), 16);
        assert_eq!(rec.segments.len(), 2);
        assert_eq!(
            (rec.segments[0].start, rec.segments[0].end, rec.segments[0].kind),
            (0, 10, SegmentKind::Cpt)
        );
        assert_eq!(rec.segments[0].record_id, "doc");
        assert_eq!(
            (rec.segments[1].start, rec.segments[1].end, rec.segments[1].kind),
            (10, 16, SegmentKind::Pad)
        );
        assert_eq!(rec.segments[1].record_id, PAD_RECORD_ID);
        let expected_mask: Vec<u8> = [vec![1u8; 10], vec![0u8; 6]].concat();
        assert_eq!(rec.loss_mask, expected_mask);
        assert_eq!(&rec.tokens[10..], &[PAD_TOKEN_ID; 6]);
        assert!(packed_violations(rec).is_empty());
    }

    #[test]
    fn long_cpt_doc_splits_across_records() {
        let source = cpt_rec("doc", 100, 20);
        let outcome = pack_sequences(&[source.clone()], 16, 1);
        assert_eq!(outcome.records.len(), 2);

        let first = &outcome.records[0];
        assert_eq!(first.segments.len(), 1);
        assert_eq!((first.segments[0].start, first.segments[0].end), (0, 16));
        assert_eq!(first.tokens, (100..116).collect::<Vec<u32>>());
        assert_eq!(first.loss_mask, vec![1u8; 16]);

        let second = &outcome.records[1];
        assert_eq!(second.segments.len(), 2);
        assert_eq!((second.segments[0].start, second.segments[0].end), (0, 4));
        assert_eq!(second.segments[1].kind, SegmentKind::Pad);
        assert_eq!(&second.tokens[..4], &(116..120).collect::<Vec<u32>>()[..]);

        let reassembled = unpack(&outcome.records);
        assert_eq!(reassembled["doc"], source.tokens);
        for rec in &outcome.records {
            assert!(packed_violations(rec).is_empty());
        }
    }

    #[test]
    fn instruction_spans_shift_by_placement_offset() {
        // A 5-token cpt doc then a 7-token IT record with span (0,3) at
        // context 16: the span lands on positions 5..8, so mask positions
        // 5, 6, 7 are 0 and positions 8..=11 are 1.
        let stream = [cpt_rec("doc", 100, 5), it_rec("task", 200, 7, vec![(0, 3)])];
        let outcome = pack_sequences(&stream, 16, 1);
        assert_eq!(outcome.records.len(), 1);
        let rec = &outcome.records[0];
        let expected_mask: Vec<u8> =
            [vec![1u8; 5], vec![0u8; 3], vec![1u8; 4], vec![0u8; 4]].concat();
        assert_eq!(rec.loss_mask, expected_mask);
        assert_eq!(rec.segments.len(), 3);
        assert_eq!(rec.segments[1].record_id, "task");
        assert_eq!((rec.segments[1].start, rec.segments[1].end), (5, 12));
        assert_eq!(rec.segments[1].kind, SegmentKind::It);
        assert_eq!(rec.segments[2].kind, SegmentKind::Pad);
        assert!(packed_violations(rec).is_empty());
    }

    #[test]
    fn it_record_that_does_not_fit_starts_a_new_record() {
        // Context 8: after a 5-token cpt doc only 3 positions remain, so a
        // 6-token IT record seals the first record and opens the second.
        let stream = [cpt_rec("doc", 100, 5), it_rec("task", 200, 6, vec![(0, 2)])];
        let outcome = pack_sequences(&stream, 8, 1);
        assert_eq!(outcome.records.len(), 2);

        let first = &outcome.records[0];
        assert_eq!(first.segments.len(), 2);
        assert_eq!(first.segments[0].record_id, "doc");
        assert_eq!(first.segments[1].kind, SegmentKind::Pad);
        assert_eq!((first.segments[1].start, first.segments[1].end), (5, 8));

        let second = &outcome.records[1];
        let task_segments: Vec<&Segment> = second
            .segments
            .iter()
            .filter(|s| s.record_id == "task")
            .collect();
        assert_eq!(task_segments.len(), 1, "IT records must never split");
        assert_eq!((task_segments[0].start, task_segments[0].end), (0, 6));
        assert_eq!(second.loss_mask, vec![0, 0, 1, 1, 1, 1, 0, 0]);
    }

    #[test]
    fn oversized_it_record_is_dropped_and_reported() {
        let stream = [
            it_rec("fits", 100, 4, vec![(0, 2)]),
            it_rec("huge", 200, 20, vec![(0, 5)]),
            cpt_rec("doc", 300, 3),
        ];
        let outcome = pack_sequences(&stream, 16, 1);
        assert_eq!(outcome.dropped_oversize, vec!["huge".to_string()]);
        for rec in &outcome.records {
            assert!(rec.segments.iter().all(|s| s.record_id != "huge"));
        }
        let reassembled = unpack(&outcome.records);
        assert_eq!(reassembled["fits"], (100..104).collect::<Vec<u32>>());
        assert_eq!(reassembled["doc"], (300..303).collect::<Vec<u32>>());
    }

    #[test]
    fn exactly_full_record_gets_no_pad_segment() {
        let outcome = pack_sequences(&[cpt_rec("doc", 0, 16)], 16, 2);
        assert_eq!(outcome.records.len(), 1);
        let rec = &outcome.records[0];
        assert_eq!(rec.segments.len(), 1);
        assert_eq!(rec.recipe_group, 2);
        assert!(packed_violations(rec).is_empty());
    }

    #[test]
    fn packing_is_order_deterministic() {
        let stream = [
            cpt_rec("a", 0, 23),
            it_rec("b", 100, 9, vec![(0, 4)]),
            cpt_rec("c", 200, 5),
            it_rec("d", 300, 12, vec![(0, 3), (7, 9)]),
        ];
        let one = pack_sequences(&stream, 16, 1);
        let two = pack_sequences(&stream, 16, 1);
        assert_eq!(one, two);
    }

    #[test]
    fn recipe_cpt_it_group_one_matches_published_numbers() {
        let config = recipe_config(Stage::CptIt, 1).unwrap();
        assert_eq!(config.learning_rate, 5e-6);
        assert_eq!(config.warmup_fraction, 0.10);
        assert_eq!(config.batch_tokens, 131_072);
        assert_eq!(config.context_length, 8000);
        assert_eq!(config.weight_decay, 0.1);
        assert_eq!(config.beta1, 0.9);
        assert_eq!(config.beta2, 0.95);
        assert_eq!(config.optimizer, "AdamW");
        assert_eq!(config.stop_criterion, "Loss of development set stops decreasing");
        assert!(config.unspecified_keys.is_empty());
    }

    #[test]
    fn recipe_cpt_it_group_two_differs_only_in_warmup() {
        let g1 = recipe_config(Stage::CptIt, 1).unwrap();
        let g2 = recipe_config(Stage::CptIt, 2).unwrap();
        assert_eq!(g2.warmup_fraction, 0.50);
        assert_eq!(g2.learning_rate, g1.learning_rate);
        assert_eq!(g2.batch_tokens, g1.batch_tokens);
        assert_eq!(g2.context_length, g1.context_length);
        assert!(recipe_config(Stage::CptIt, 3).is_err());
        assert!(recipe_config(Stage::CptIt, 0).is_err());
    }

    #[test]
    fn recipe_pa_matches_published_numbers() {
        let config = recipe_config(Stage::Pa, 1).unwrap();
        assert_eq!(config.learning_rate, 5e-7);
        assert_eq!(config.warmup_fraction, 0.10);
        assert_eq!(config.batch_tokens, 32_768);
        assert!(config.loss.contains("negative log-likelihood"));
        assert!(config.loss.starts_with("DPO"));
        assert_eq!(
            config.unspecified_keys,
            vec!["dpo_beta".to_string(), "nll_weight".to_string()]
        );
        assert!(recipe_config(Stage::Pa, 2).is_err());
    }

    #[test]
    fn recipe_file_is_flat_key_value() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pa.recipe");
        write_recipe(&recipe_config(Stage::Pa, 1).unwrap(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines.iter().all(|l| l.contains('=')));
        assert!(lines.contains(&"stage=pa"));
        assert!(lines.contains(&"learning_rate=5e-7"));
        assert!(lines.contains(&"batch_tokens=32768"));
        assert!(lines.contains(&"dpo_beta=unspecified"));
        assert!(lines.contains(&"nll_weight=unspecified"));
        let lr_line = lines.iter().find(|l| l.starts_with("learning_rate=")).unwrap();
        let parsed: f64 = lr_line.split('=').nth(1).unwrap().parse().unwrap();
        assert_eq!(parsed, 5e-7);

        let cpt_text = recipe_lines(&recipe_config(Stage::CptIt, 1).unwrap());
        assert!(cpt_text.contains("learning_rate=5e-6\n"));
        assert!(cpt_text.contains("batch_tokens=131072\n"));
        assert!(cpt_text.contains("warmup_fraction=0.1\n"));
        assert!(cpt_text.contains("weight_decay=0.1\n"));
        assert!(cpt_text.contains("beta1=0.9\n"));
        assert!(cpt_text.contains("beta2=0.95\n"));
        assert!(!cpt_text.contains("unspecified"));
    }

    #[test]
    fn render_all_skips_invalid_records() {
        let good = TrainingUnit::cpt(doc("d1", "alpha beta gamma"));
        let bad = TrainingUnit::it(task("t-empty", vec![]));
        let rendered = render_all(&[good, bad], &tok());
        assert_eq!(rendered.len(), 1);
        assert_eq!(rendered[0].record_id, "d1");
    }

    /// Strategy producing a stream of rendered records with unique ids:
    /// CPT records of 1..40 tokens, IT records of 1..=16 tokens with a
    /// valid span inside.
    fn rendered_stream() -> impl Strategy<Value = Vec<RenderedRecord>> {
        let one = (any::<bool>(), 1usize..40, 0u32..1000).prop_map(|(is_it, len, base)| {
            if is_it {
                let len = len.min(16);
                let span_end = (len / 2).max(1);
                (true, len, base, vec![(0usize, span_end)])
            } else {
                (false, len, base, Vec::new())
            }
        });
        proptest::collection::vec(one, 0..12).prop_map(|parts| {
            parts
                .into_iter()
                .enumerate()
                .map(|(i, (is_it, len, base, spans))| {
                    if is_it {
                        it_rec(&format!("it{i}"), base, len, spans)
                    } else {
                        cpt_rec(&format!("cpt{i}"), base, len)
                    }
                })
                .collect()
        })
    }

    proptest! {
        /// Totals across all packed records obey
        /// |mask==1| == placed tokens − instruction tokens (dropped records
        /// excluded), and every packed record validates structurally.
        #[test]
        fn mask_count_matches_span_and_pad_arithmetic(stream in rendered_stream()) {
            let context = 16usize;
            let outcome = pack_sequences(&stream, context, 1);
            let placed: Vec<&RenderedRecord> = stream
                .iter()
                .filter(|r| !outcome.dropped_oversize.contains(&r.record_id))
                .collect();
            let total_tokens: usize = placed.iter().map(|r| r.tokens.len()).sum();
            let span_tokens: usize = placed
                .iter()
                .flat_map(|r| r.instruction_spans.iter())
                .map(|&(s, e)| e - s)
                .sum();
            let ones: usize = outcome
                .records
                .iter()
                .map(|r| r.loss_mask.iter().filter(|&&m| m == 1).count())
                .sum();
            prop_assert_eq!(ones, total_tokens - span_tokens);

            let capacity = outcome.records.len() * context;
            let pad_tokens: usize = outcome
                .records
                .iter()
                .flat_map(|r| r.segments.iter())
                .filter(|s| s.kind == SegmentKind::Pad)
                .map(|s| s.end - s.start)
                .sum();
            prop_assert_eq!(capacity, total_tokens + pad_tokens);

            for rec in &outcome.records {
                prop_assert!(packed_violations(rec).is_empty());
                prop_assert_eq!(rec.tokens.len(), context);
            }
        }

        /// Unpacking reproduces every placed record's token sequence exactly.
        #[test]
        fn unpack_round_trips_every_placed_record(
            stream in rendered_stream(),
            context in 16usize..48,
        ) {
            let outcome = pack_sequences(&stream, context, 1);
            let reassembled = unpack(&outcome.records);
            for rec in &stream {
                if outcome.dropped_oversize.contains(&rec.record_id) {
                    prop_assert!(!reassembled.contains_key(&rec.record_id));
                } else {
                    prop_assert_eq!(&reassembled[&rec.record_id], &rec.tokens);
                }
            }
            prop_assert_eq!(
                reassembled.len(),
                stream.len() - outcome.dropped_oversize.len()
            );
        }
    }
}
