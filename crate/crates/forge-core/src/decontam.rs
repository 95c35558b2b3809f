//! Training-data decontamination against evaluation sets.
//!
//! Two-step procedure: a word n-gram index over the evaluation samples
//! pre-identifies candidate (train, eval) pairs cheaply, then a
//! character-level overlap ratio confirms or rejects each candidate.
//! A train sample is flagged **strict** when its normalized text exactly
//! equals some eval sample, and **fuzzy** when it shares at least one
//! n-gram with an eval sample *and* their overlap ratio exceeds the
//! threshold. Strict is a subset of fuzzy by construction (an exact match
//! has ratio 1.0 and trivially shares grams).
//!
//! The overlap ratio is the Ratcliff/Obershelp similarity — recursively
//! find the longest common block, then recurse on both sides — computed
//! over characters with *no* junk heuristic, so long texts with frequent
//! characters (spaces!) are compared exactly like short ones. Ties between
//! equally long blocks resolve to the earliest one, which pins down the
//! exact value on repetitive inputs but also makes the measure
//! order-dependent there; the scan always passes the *train* sample as the
//! first operand.
//!
//! Eval samples shorter than `n` tokens are indexed by their full token
//! sequence instead of being silently unprotectable.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::fnv1a64;

/// How the confirming ratio is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapMode {
    /// 2·M / (|train| + |eval|): both lengths in the denominator.
    Symmetric,
    /// M / |train|: how much of the *train* sample is covered, which
    /// catches small train fragments embedded in long eval material.
    TrainCoverage,
}

impl OverlapMode {
    pub fn as_str(self) -> &'static str {
        match self {
            OverlapMode::Symmetric => "symmetric",
            OverlapMode::TrainCoverage => "train-coverage",
        }
    }
}

/// Lowercases, strips punctuation (anything neither alphanumeric nor
/// whitespace, dropped in place without inserting a space), and collapses
/// whitespace runs to single spaces. `"The U.S. Fed!"` → `"the us fed"`.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
            continue;
        }
        for lc in c.to_lowercase() {
            if lc.is_alphanumeric() {
                if pending_space {
                    out.push(' ');
                    pending_space = false;
                }
                out.push(lc);
            }
        }
    }
    out
}

/// Ratcliff/Obershelp similarity over characters, in [0, 1].
/// Two empty strings rate 1.0.
pub fn char_overlap_ratio(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let total = a.len() + b.len();
    if total == 0 {
        return 1.0;
    }
    2.0 * matched_chars(&a, &b) as f64 / total as f64
}

/// Cheap upper bound on [`char_overlap_ratio`]: matching characters can
/// never exceed the size of the character-multiset intersection. Used to
/// skip the quadratic computation for pairs that cannot clear a threshold.
pub fn char_overlap_upper_bound(a: &str, b: &str) -> f64 {
    let mut counts: HashMap<char, isize> = HashMap::new();
    let mut la = 0usize;
    for c in a.chars() {
        *counts.entry(c).or_insert(0) += 1;
        la += 1;
    }
    let mut lb = 0usize;
    let mut common = 0usize;
    for c in b.chars() {
        lb += 1;
        if let Some(avail) = counts.get_mut(&c) {
            if *avail > 0 {
                *avail -= 1;
                common += 1;
            }
        }
    }
    if la + lb == 0 {
        return 1.0;
    }
    2.0 * common as f64 / (la + lb) as f64
}

/// Total characters covered by the recursive longest-common-block matching.
fn matched_chars(a: &[char], b: &[char]) -> usize {
    // Positions of each character in b, ascending; scan-time filtering
    // restricts them to the active window.
    let mut b2j: HashMap<char, Vec<usize>> = HashMap::new();
    for (j, &c) in b.iter().enumerate() {
        b2j.entry(c).or_default().push(j);
    }
    let mut total = 0usize;
    let mut regions = vec![(0usize, a.len(), 0usize, b.len())];
    // chain_len[j + 1] = length of the common suffix ending at (i, j); the
    // +1 shift makes the j = 0 predecessor lookup branch-free.
    let mut chain_len = vec![0usize; b.len() + 1];
    let mut next_chain = vec![0usize; b.len() + 1];
    while let Some((alo, ahi, blo, bhi)) = regions.pop() {
        if alo >= ahi || blo >= bhi {
            continue;
        }
        let (besti, bestj, size) =
            longest_match(a, &b2j, alo, ahi, blo, bhi, &mut chain_len, &mut next_chain);
        if size > 0 {
            total += size;
            regions.push((alo, besti, blo, bestj));
            regions.push((besti + size, ahi, bestj + size, bhi));
        }
    }
    total
}

/// Longest matching block within `a[alo..ahi]` × `b[blo..bhi]`; among equal
/// lengths the earliest block (smallest i, then smallest j) wins.
#[allow(clippy::too_many_arguments)]
fn longest_match(
    a: &[char],
    b2j: &HashMap<char, Vec<usize>>,
    alo: usize,
    ahi: usize,
    blo: usize,
    bhi: usize,
    chain_len: &mut [usize],
    next_chain: &mut [usize],
) -> (usize, usize, usize) {
    let mut besti = alo;
    let mut bestj = blo;
    let mut best = 0usize;
    chain_len[blo..=bhi].fill(0);
    let mut touched: Vec<usize> = Vec::new();
    for (idx, &ca) in a.iter().enumerate().take(ahi).skip(alo) {
        // Chains that end at positions set in the previous row extend by one.
        let mut new_touched: Vec<usize> = Vec::new();
        if let Some(positions) = b2j.get(&ca) {
            // Binary search to the window start; positions are ascending.
            let from = positions.partition_point(|&j| j < blo);
            for &j in &positions[from..] {
                if j >= bhi {
                    break;
                }
                let k = chain_len[j] + 1; // predecessor at j-1 lives at index j
                next_chain[j + 1] = k;
                new_touched.push(j + 1);
                if k > best {
                    best = k;
                    besti = idx + 1 - k;
                    bestj = j + 1 - k;
                }
            }
        }
        // Reset the previous row's entries, then swap rows.
        for &t in &touched {
            chain_len[t] = 0;
        }
        for &t in &new_touched {
            chain_len[t] = next_chain[t];
            next_chain[t] = 0;
        }
        touched = new_touched;
    }
    for &t in &touched {
        chain_len[t] = 0;
    }
    (besti, bestj, best)
}

/// One normalized sample ready for scanning.
#[derive(Debug, Clone)]
struct Prepared {
    id: String,
    norm: String,
    tokens: Vec<String>,
}

fn prepare(id: &str, text: &str) -> Prepared {
    let norm = normalize(text);
    let tokens = norm.split_whitespace().map(str::to_string).collect();
    Prepared { id: id.to_string(), norm, tokens }
}

fn gram_hash(tokens: &[String]) -> u64 {
    // 0x1f separator keeps ("ab", "c") distinct from ("a", "bc").
    let mut bytes = Vec::with_capacity(tokens.iter().map(|t| t.len() + 1).sum());
    for t in tokens {
        bytes.extend_from_slice(t.as_bytes());
        bytes.push(0x1f);
    }
    fnv1a64(&bytes)
}

/// Word n-gram index over the evaluation samples.
pub struct NgramIndex {
    n: usize,
    samples: Vec<Prepared>,
    grams: HashMap<u64, Vec<u32>>,
    /// Exact normalized text → eval sample indices (strict tier).
    by_norm: HashMap<String, Vec<u32>>,
    /// Full-sequence lengths indexed for samples shorter than `n`.
    short_lengths: BTreeSet<usize>,
    /// Eval samples whose normalized text is empty.
    empties: Vec<u32>,
}

/// Builds the index; errors on an empty evaluation set because scanning
/// against nothing would silently report zero contamination.
pub fn build_ngram_index(eval: &[(String, String)], n: usize) -> Result<NgramIndex> {
    if eval.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    if n == 0 {
        return Err(Error::Config("n-gram size must be positive".into()));
    }
    let mut index = NgramIndex {
        n,
        samples: Vec::with_capacity(eval.len()),
        grams: HashMap::new(),
        by_norm: HashMap::new(),
        short_lengths: BTreeSet::new(),
        empties: Vec::new(),
    };
    for (pos, (id, text)) in eval.iter().enumerate() {
        let idx = pos as u32;
        let prepared = prepare(id, text);
        index.by_norm.entry(prepared.norm.clone()).or_default().push(idx);
        if prepared.tokens.is_empty() {
            index.empties.push(idx);
        } else if prepared.tokens.len() < n {
            // Short-sample rule: index the whole token sequence.
            index.short_lengths.insert(prepared.tokens.len());
            index.grams.entry(gram_hash(&prepared.tokens)).or_default().push(idx);
        } else {
            for window in prepared.tokens.windows(n) {
                let entry = index.grams.entry(gram_hash(window)).or_default();
                // Each sample at most once per gram.
                if entry.last() != Some(&idx) {
                    entry.push(idx);
                }
            }
        }
        index.samples.push(prepared);
    }
    Ok(index)
}

impl NgramIndex {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Eval sample indices sharing at least one indexed gram (or the
    /// full-sequence / empty rule) with the given train tokens.
    fn candidates(&self, tokens: &[String]) -> Vec<u32> {
        if tokens.is_empty() {
            return self.empties.clone();
        }
        let mut out: BTreeSet<u32> = BTreeSet::new();
        let mut probe = |length: usize| {
            if length == 0 || tokens.len() < length {
                return;
            }
            for window in tokens.windows(length) {
                if let Some(hits) = self.grams.get(&gram_hash(window)) {
                    out.extend(hits.iter().copied());
                }
            }
        };
        probe(self.n);
        for &len in &self.short_lengths {
            probe(len);
        }
        out.into_iter().collect()
    }
}

/// A confirmed contamination hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationMatch {
    pub train_id: String,
    pub eval_id: String,
    pub ratio: f64,
}

/// Scan outcome over one training corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContaminationReport {
    pub total_train: usize,
    pub total_eval: usize,
    pub ngram_size: usize,
    pub threshold: f64,
    pub mode: OverlapMode,
    /// Train ids whose normalized text exactly equals an eval sample.
    pub strict_flagged: Vec<String>,
    /// Train ids flagged by the two-step rule; superset of `strict_flagged`.
    pub fuzzy_flagged: Vec<String>,
    /// All confirmed (train, eval) pairs, sorted by (train_id, eval_id).
    pub matches: Vec<ContaminationMatch>,
}

impl ContaminationReport {
    pub fn strict_ratio(&self) -> f64 {
        ratio_of(self.strict_flagged.len(), self.total_train)
    }

    pub fn fuzzy_ratio(&self) -> f64 {
        ratio_of(self.fuzzy_flagged.len(), self.total_train)
    }

    /// Human-readable report: both ratios to four significant digits plus
    /// the match table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("decontamination report\n");
        out.push_str("======================\n");
        out.push_str(&format!("train samples : {}\n", self.total_train));
        out.push_str(&format!("eval samples  : {}\n", self.total_eval));
        out.push_str(&format!("n-gram size   : {}\n", self.ngram_size));
        out.push_str(&format!("threshold     : {}\n", self.threshold));
        out.push_str(&format!("mode          : {}\n", self.mode.as_str()));
        out.push_str(&format!(
            "strict flagged: {} ({}%)\n",
            self.strict_flagged.len(),
            format_pct_sig4(self.strict_ratio())
        ));
        out.push_str(&format!(
            "fuzzy flagged : {} ({}%)\n",
            self.fuzzy_flagged.len(),
            format_pct_sig4(self.fuzzy_ratio())
        ));
        out.push_str("\nmatches (train_id, eval_id, ratio):\n");
        for m in &self.matches {
            out.push_str(&format!("{}\t{}\t{:.6}\n", m.train_id, m.eval_id, m.ratio));
        }
        out
    }
}

fn ratio_of(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Formats a fraction as a percentage with four significant digits
/// (0.01 → "1.000", 0.00003 → "0.003000").
pub fn format_pct_sig4(fraction: f64) -> String {
    let pct = fraction * 100.0;
    if pct == 0.0 {
        return "0.000".to_string();
    }
    let magnitude = pct.abs().log10().floor() as i32;
    let decimals = (3 - magnitude).max(0) as usize;
    format!("{pct:.decimals$}")
}

#[derive(Debug, Clone, Default)]
struct Verdict {
    strict: bool,
    hits: Vec<(u32, f64)>,
}

fn check_sample(index: &NgramIndex, sample: &Prepared, threshold: f64, mode: OverlapMode) -> Verdict {
    let strict = index.by_norm.contains_key(&sample.norm);
    let mut hits = Vec::new();
    for cand in index.candidates(&sample.tokens) {
        let eval = &index.samples[cand as usize];
        if upper_bound(mode, &sample.norm, &eval.norm) <= threshold {
            continue;
        }
        let ratio = overlap(mode, &sample.norm, &eval.norm);
        if ratio > threshold {
            hits.push((cand, ratio));
        }
    }
    Verdict { strict, hits }
}

fn overlap(mode: OverlapMode, train: &str, eval: &str) -> f64 {
    match mode {
        OverlapMode::Symmetric => char_overlap_ratio(train, eval),
        OverlapMode::TrainCoverage => {
            let a: Vec<char> = train.chars().collect();
            if a.is_empty() {
                return 1.0;
            }
            let b: Vec<char> = eval.chars().collect();
            matched_chars(&a, &b) as f64 / a.len() as f64
        }
    }
}

fn upper_bound(mode: OverlapMode, train: &str, eval: &str) -> f64 {
    match mode {
        OverlapMode::Symmetric => char_overlap_upper_bound(train, eval),
        OverlapMode::TrainCoverage => {
            let la = train.chars().count();
            if la == 0 {
                return 1.0;
            }
            let sym = char_overlap_upper_bound(train, eval);
            let lb = eval.chars().count();
            // sym = 2·common/(la+lb) ⇒ common = sym·(la+lb)/2.
            sym * (la + lb) as f64 / 2.0 / la as f64
        }
    }
}

/// Scans `train` against `eval` and assembles the report. With the
/// `parallel` feature the per-sample checks fan out across the rayon pool;
/// results are identical either way because assembly sorts by train id.
pub fn contamination_scan(
    train: &[(String, String)],
    eval: &[(String, String)],
    n: usize,
    threshold: f64,
    mode: OverlapMode,
) -> Result<ContaminationReport> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let index = build_ngram_index(eval, n)?;
        let prepared: Vec<Prepared> =
            train.par_iter().map(|(id, text)| prepare(id, text)).collect();
        let verdicts: Vec<Verdict> = prepared
            .par_iter()
            .map(|s| check_sample(&index, s, threshold, mode))
            .collect();
        Ok(assemble(&index, &prepared, verdicts, train.len(), eval.len(), n, threshold, mode))
    }
    #[cfg(not(feature = "parallel"))]
    {
        contamination_scan_serial(train, eval, n, threshold, mode)
    }
}

/// Sequential fallback with identical semantics; the benchmark suite
/// compares this against the parallel path.
pub fn contamination_scan_serial(
    train: &[(String, String)],
    eval: &[(String, String)],
    n: usize,
    threshold: f64,
    mode: OverlapMode,
) -> Result<ContaminationReport> {
    let index = build_ngram_index(eval, n)?;
    let prepared: Vec<Prepared> = train.iter().map(|(id, text)| prepare(id, text)).collect();
    let verdicts: Vec<Verdict> = prepared
        .iter()
        .map(|s| check_sample(&index, s, threshold, mode))
        .collect();
    Ok(assemble(&index, &prepared, verdicts, train.len(), eval.len(), n, threshold, mode))
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    index: &NgramIndex,
    prepared: &[Prepared],
    verdicts: Vec<Verdict>,
    total_train: usize,
    total_eval: usize,
    n: usize,
    threshold: f64,
    mode: OverlapMode,
) -> ContaminationReport {
    let mut strict_flagged = Vec::new();
    let mut fuzzy_flagged = Vec::new();
    let mut matches = Vec::new();
    for (sample, verdict) in prepared.iter().zip(&verdicts) {
        if verdict.strict {
            strict_flagged.push(sample.id.clone());
        }
        // The confirming tier subsumes exact matches (ratio 1.0, grams
        // shared), so a strict flag always implies a fuzzy flag.
        if verdict.strict || !verdict.hits.is_empty() {
            fuzzy_flagged.push(sample.id.clone());
        }
        for &(eval_idx, ratio) in &verdict.hits {
            matches.push(ContaminationMatch {
                train_id: sample.id.clone(),
                eval_id: index.samples[eval_idx as usize].id.clone(),
                ratio,
            });
        }
    }
    strict_flagged.sort();
    fuzzy_flagged.sort();
    matches.sort_by(|x, y| {
        (x.train_id.as_str(), x.eval_id.as_str()).cmp(&(y.train_id.as_str(), y.eval_id.as_str()))
    });
    ContaminationReport {
        total_train,
        total_eval,
        ngram_size: n,
        threshold,
        mode,
        strict_flagged,
        fuzzy_flagged,
        matches,
    }
}
