//! End-to-end pipeline rehearsal on generated toy data.
//!
//! `forge dryrun --out DIR` writes a small finance corpus, mixture and
//! curriculum specs, and an eval registry under DIR, then drives every
//! stage against scripted mock endpoints: filter → extract-exercises →
//! mix → pack → decontam → synth-pa → eval. One training document is
//! planted verbatim inside an eval item (strict contamination) and another
//! as a near-duplicate (fuzzy), so the contamination report flags both
//! tiers.
//!
//! Everything is derived from the seed, so two runs with the same seed
//! produce byte-identical artifacts; the run ends by printing a SHA-256
//! digest over every output file (audit logs excluded — they carry
//! wall-clock latencies) that replays can compare.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::Args;
use forge_core::harness::{EntitySpan, EvalItem, Gold};
use forge_core::io::{read_ndjson, write_ndjson};
use forge_core::mixer::stage_rng;
use forge_core::records::{
    Capability, Document, Domain, Role, Source, TaskRecord, TrainingUnit, Turn, SCHEMA_VERSION,
};
use forge_core::tokenizer::WhitespaceTokenizer;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::{resolve, PipelineConfig};
use crate::stages;

const DEFAULT_SEED: u64 = 17;

#[derive(Args, Debug)]
pub struct DryrunArgs {
    /// Directory for every generated input and pipeline artifact.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(workspace: &Path, seed_override: Option<u64>, args: &DryrunArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let seed = seed_override.unwrap_or(DEFAULT_SEED);
    let out = resolve(workspace, &args.out);
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    println!("dryrun: seed {seed}, writing under {}", out.display());

    let config = generate_inputs(&out, seed)?;

    println!("[1/8] filter");
    stages::run_filter(
        &config,
        &out,
        &stages::FilterArgs {
            input: "corpus/web.ndl".into(),
            out: "artifacts/docs_kept.ndl".into(),
            judge: None,
            threshold: None,
            quarantine: Some("artifacts/filter_quarantine.ndl".into()),
            judgments: Some("artifacts/quality_judgments.ndl".into()),
            audit: Some("audit/filter.ndl".into()),
        },
    )?;

    println!("[2/8] extract-exercises");
    stages::run_extract(
        &config,
        &out,
        &stages::ExtractArgs {
            input: "corpus/books.ndl".into(),
            out: "artifacts/exercises.ndl".into(),
            extractor: None,
            generator: None,
            quarantine: Some("artifacts/extract_quarantine.ndl".into()),
            tasks: Some("artifacts/exercise_tasks.ndl".into()),
            audit: Some("audit/extract.ndl".into()),
        },
    )?;

    println!("[3/8] unit pools");
    build_pools(&out)?;

    println!("[4/8] mix");
    stages::run_mix(
        &config,
        &out,
        &stages::MixArgs {
            spec: "specs/curriculum.toml".into(),
            pools: vec![
                "web=units/web.ndl".into(),
                "books=units/books.ndl".into(),
                "it=units/it.ndl".into(),
            ],
            out: None,
            out_dir: Some("artifacts/curriculum".into()),
            total: None,
            no_downsample: false,
        },
    )?;

    println!("[5/8] pack");
    stages::run_pack(
        &config,
        &out,
        &stages::PackArgs {
            units: "artifacts/curriculum/group1.ndl".into(),
            out: "artifacts/packed_group1.ndl".into(),
            context: None,
            group: 1,
            recipes: Some("artifacts/recipes".into()),
        },
    )?;
    stages::run_pack(
        &config,
        &out,
        &stages::PackArgs {
            units: "artifacts/curriculum/group2.ndl".into(),
            out: "artifacts/packed_group2.ndl".into(),
            context: None,
            group: 2,
            recipes: None,
        },
    )?;

    println!("[6/8] decontam");
    stages::run_decontam(
        &config,
        &out,
        &stages::DecontamArgs {
            train: "artifacts/docs_kept.ndl".into(),
            eval: "eval/data/summaries.ndl".into(),
            n: None,
            threshold: None,
            mode: None,
            report: "artifacts/decontam_report.txt".into(),
            json: Some("artifacts/decontam_report.json".into()),
        },
    )?;

    println!("[7/8] synth-pa");
    stages::run_synth(
        &config,
        &out,
        &stages::SynthArgs {
            prompts: "corpus/pa_prompts.ndl".into(),
            out: "artifacts/pref_pairs.ndl".into(),
            policy: None,
            genrm: None,
            k: None,
            temperature: None,
            fap_cap: None,
            scp_cap: None,
            audit: "audit/synth.ndl".into(),
        },
    )?;

    println!("[8/8] eval");
    stages::run_eval(
        &config,
        &out,
        &stages::EvalArgs {
            registry: Some("eval/registry.toml".into()),
            model: None,
            judge: None,
            out: "artifacts/eval".into(),
            audit: Some("audit/eval.ndl".into()),
        },
    )?;

    let digest = digest_tree(&out)?;
    fs::write(out.join("digest.txt"), format!("{digest}\n"))
        .with_context(|| format!("cannot write {}", out.join("digest.txt").display()))?;
    println!("dryrun: complete in {:.2}s", started.elapsed().as_secs_f64());
    println!("digest: {digest}");
    Ok(())
}

/// Filler vocabulary for generated prose. None of these words contain a
/// topic keyword the scripted quality judge counts, so a document scores
/// well only when the keyword sentence is planted deliberately.
const FILLER: &[&str] = &[
    "rates", "report", "quarter", "earnings", "guidance", "margin", "revenue", "growth",
    "outlook", "analysts", "shares", "index", "trading", "volume", "sector", "banks", "funds",
    "yield", "spread", "issuer", "maturity", "ratings", "forecast", "cycle", "policy",
    "inflation", "currency", "exports", "demand", "supply",
];

/// Mentions five distinct topic keywords, enough for a keeping score.
const KEYWORD_SENTENCE: &str = "The desk reviews coupon schedules, duration targets, portfolio \
weights, arbitrage limits, and liquidity buffers each quarter.";

/// Book-exercise material: questions with `None` answers exercise the
/// backfill path.
const BOOK_QA: &[(&str, Option<&str>)] = &[
    (
        "What does the coupon rate measure for a newly issued bond?",
        Some("The annual coupon payment divided by the face value."),
    ),
    (
        "Why does duration fall when the coupon rises?",
        Some("Higher coupons return cash earlier, which shortens the weighted timing of payments."),
    ),
    ("Which covenant usually restricts additional borrowing?", None),
    (
        "How is straight-line amortization applied to a premium bond?",
        Some("The premium is written down by an equal amount each period until maturity."),
    ),
    (
        "What distinguishes a forward from a futures contract?",
        Some("Forwards trade over the counter while futures are exchange-traded and marked to market."),
    ),
    ("When does an arbitrage argument pin down a forward price?", None),
    (
        "What does portfolio duration approximate?",
        Some("The percentage price change of the portfolio for a small parallel shift in yields."),
    ),
    ("Which ratio best captures funding liquidity risk?", None),
];

/// General chat records for the instruction-tuning pool.
const CHAT_TASKS: &[(&str, &str)] = &[
    (
        "List three questions to ask before opening a brokerage account.",
        "Ask about fees, account minimums, and how deposits are insured.",
    ),
    (
        "Rewrite in plain language: the instrument exhibits elevated convexity.",
        "The bond's price is unusually sensitive to large moves in interest rates.",
    ),
    (
        "Summarize in one sentence why diversification lowers risk.",
        "Spreading money across unrelated assets keeps any single loss small.",
    ),
    (
        "Draft a two-line email declining a meeting politely.",
        "Thanks for the invitation. I cannot make it this week, but I am glad to meet next week.",
    ),
    (
        "Explain the difference between saving and investing in one sentence each.",
        "Saving sets money aside with little risk. Investing puts money at risk to seek growth.",
    ),
    (
        "Give two tips for reading a quarterly earnings release.",
        "Start with the cash flow statement, and compare results against the same quarter last year.",
    ),
];

/// Exam-style prompts for preference-pair synthesis. The scripted policy
/// answers "B" on its correct trajectories, so B is the gold letter.
const EXAM_PROMPTS: &[&str] = &[
    "A bond pays a 5 percent annual coupon on 100 face value and trades at par. What is its \
     current yield?\nA. 4 percent\nB. 5 percent\nC. 6 percent\nD. 8 percent",
    "Which measure weights the timing of a bond's cash flows?\nA. Convexity\nB. Duration\n\
     C. Current yield\nD. Spread",
    "Writing a covered call against held shares leaves what position?\nA. Naked short call\n\
     B. Long stock plus short call\nC. Long straddle\nD. Short put alone",
    "What happens to bond prices when market yields rise?\nA. They rise\nB. They fall\n\
     C. They are unchanged\nD. They double",
    "Compound interest is earned on which base?\nA. Principal only\nB. Principal plus \
     accumulated interest\nC. Fees only\nD. Neither",
    "A firm's quick ratio excludes which current asset?\nA. Cash\nB. Inventory\n\
     C. Receivables\nD. Marketable securities",
];

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(6..=12);
    let words: Vec<&str> = (0..n).map(|_| FILLER[rng.random_range(0..FILLER.len())]).collect();
    let mut s = words.join(" ");
    if let Some(head) = s.get_mut(0..1) {
        head.make_ascii_uppercase();
    }
    s.push('.');
    s
}

fn paragraph(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..=4);
    (0..n).map(|_| sentence(rng)).collect::<Vec<_>>().join(" ")
}

fn doc_text(rng: &mut ChaCha8Rng, with_keywords: bool) -> String {
    let n = rng.random_range(2..=3);
    let mut paragraphs: Vec<String> = (0..n).map(|_| paragraph(rng)).collect();
    if with_keywords {
        paragraphs.push(KEYWORD_SENTENCE.to_string());
    }
    paragraphs.join("\n\n")
}

fn book_text(rng: &mut ChaCha8Rng, qa: &[(&str, Option<&str>)]) -> String {
    let mut text = paragraph(rng);
    text.push('\n');
    for (question, answer) in qa {
        text.push_str("Q: ");
        text.push_str(question);
        text.push('\n');
        if let Some(answer) = answer {
            text.push_str("A: ");
            text.push_str(answer);
            text.push('\n');
        }
    }
    text.push('\n');
    text.push_str(&paragraph(rng));
    text
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Writes the config, corpus, specs, and eval registry under `out` and
/// returns the loaded config.
fn generate_inputs(out: &Path, seed: u64) -> anyhow::Result<PipelineConfig> {
    let tokenizer = WhitespaceTokenizer;

    let config_text = format!(
        r#"seed = {seed}

[endpoints.quality-judge]
kind = "mock"
behavior = "quality-judge"
retries = 0

[endpoints.exercise-extractor]
kind = "mock"
behavior = "exercise-extractor"
retries = 0

[endpoints.answer-generator]
kind = "mock"
behavior = "answer-generator"
retries = 0

[endpoints.policy]
kind = "mock"
behavior = "policy"
retries = 0

[endpoints.genrm]
kind = "mock"
behavior = "genrm"
retries = 0

[endpoints.eval-model]
kind = "mock"
behavior = "eval-model"
retries = 0

[filter]
judge = "quality-judge"
threshold = 4

[extract]
extractor = "exercise-extractor"
generator = "answer-generator"

[pack]
context_length = 256

[decontam]
n = 10
threshold = 0.8
mode = "symmetric"

[synth]
policy = "policy"
genrm = "genrm"
k = 6

[eval]
model = "eval-model"
"#
    );
    write_file(&out.join("forge.toml"), &config_text)?;

    // Web corpus: even-indexed documents carry the keyword sentence and
    // pass the scripted judge; odd ones are plain filler and get dropped.
    let mut rng = stage_rng(seed, "dryrun.web");
    let mut web = Vec::new();
    let mut strict_probe = String::new();
    let mut fuzzy_probe = String::new();
    for i in 0..12 {
        let good = i % 2 == 0;
        let text = doc_text(&mut rng, good);
        if i == 0 {
            strict_probe = text.clone();
        } else if i == 2 {
            fuzzy_probe = text.clone();
        }
        web.push(Document::new(
            format!("web-{i:02}"),
            text,
            Source::Web,
            Domain::InDomain,
            &tokenizer,
        ));
    }
    write_ndjson(&out.join("corpus/web.ndl"), web.iter())?;

    let mut rng = stage_rng(seed, "dryrun.books");
    let books: Vec<Document> = BOOK_QA
        .chunks(2)
        .enumerate()
        .map(|(i, qa)| {
            Document::new(
                format!("book-{i}"),
                book_text(&mut rng, qa),
                Source::Book,
                Domain::InDomain,
                &tokenizer,
            )
        })
        .collect();
    write_ndjson(&out.join("corpus/books.ndl"), books.iter())?;

    let chat: Vec<TaskRecord> = CHAT_TASKS
        .iter()
        .enumerate()
        .map(|(i, (question, answer))| TaskRecord {
            v: SCHEMA_VERSION,
            id: format!("chat-{i:02}"),
            turns: vec![Turn::new(Role::User, *question), Turn::new(Role::Assistant, *answer)],
            domain: Domain::General,
            capability: Capability::IfChat,
            source_dataset: "toy-chat".to_string(),
            gold_answer: None,
        })
        .collect();
    write_ndjson(&out.join("corpus/chat.ndl"), chat.iter())?;

    let mut prompts: Vec<TaskRecord> = EXAM_PROMPTS
        .iter()
        .enumerate()
        .map(|(i, question)| TaskRecord {
            v: SCHEMA_VERSION,
            id: format!("exam-{i:02}"),
            turns: vec![Turn::new(Role::User, *question)],
            domain: Domain::InDomain,
            capability: Capability::Reasoning,
            source_dataset: "toy-exams".to_string(),
            gold_answer: Some("B".to_string()),
        })
        .collect();
    // One prompt without a gold answer, so the skip counter moves.
    prompts.push(TaskRecord {
        v: SCHEMA_VERSION,
        id: "exam-nogold".to_string(),
        turns: vec![Turn::new(Role::User, "State one risk of using leverage.")],
        domain: Domain::InDomain,
        capability: Capability::Reasoning,
        source_dataset: "toy-exams".to_string(),
        gold_answer: None,
    });
    write_ndjson(&out.join("corpus/pa_prompts.ndl"), prompts.iter())?;

    write_specs(out)?;
    write_eval_registry(out, &strict_probe, &fuzzy_probe)?;

    let config = PipelineConfig::load(&out.join("forge.toml"))?;
    let violations = config.violations();
    anyhow::ensure!(violations.is_empty(), "generated config is invalid: {violations:?}");
    Ok(config)
}

fn write_specs(out: &Path) -> anyhow::Result<()> {
    write_file(
        &out.join("specs/curriculum.toml"),
        r#"[[group]]
index = 1
token_budget = 700
cpt_spec = "g1_cpt.toml"
it_spec = "g1_it.toml"

[[group]]
index = 2
token_budget = 1400
cpt_spec = "g2_cpt.toml"
it_spec = "g2_it.toml"
"#,
    )?;
    write_file(
        &out.join("specs/g1_cpt.toml"),
        r#"name = "group1-cpt"
unit = "tokens"

[[part]]
selector = "pool:web"
weight = 0.7

[[part]]
selector = "pool:books"
weight = 0.3
"#,
    )?;
    write_file(
        &out.join("specs/g1_it.toml"),
        r#"name = "group1-it"
unit = "records"

[[part]]
selector = "pool:it & domain:general"
weight = 0.6

[[part]]
selector = "pool:it & domain:in-domain"
weight = 0.4
"#,
    )?;
    write_file(
        &out.join("specs/g2_cpt.toml"),
        r#"name = "group2-cpt"
unit = "tokens"

[[part]]
selector = "pool:web"
weight = 0.4

[[part]]
selector = "pool:books"
weight = 0.6
"#,
    )?;
    write_file(
        &out.join("specs/g2_it.toml"),
        r#"name = "group2-it"
unit = "records"

[[part]]
selector = "pool:it & domain:general"
weight = 0.3

[[part]]
selector = "pool:it & domain:in-domain"
weight = 0.7
"#,
    )
}

/// Five tasks covering every answer schema, split across both similarity
/// tiers so the text report fills both sections. `strict_probe` is split
/// into input + gold so the joined eval text equals a training document
/// verbatim (strict decontamination hit); `fuzzy_probe` is planted with an
/// extra gold sentence appended, leaving a near-duplicate (fuzzy-only hit).
fn write_eval_registry(out: &Path, strict_probe: &str, fuzzy_probe: &str) -> anyhow::Result<()> {
    write_file(
        &out.join("eval/registry.toml"),
        r#"[[task]]
name = "fin-concept-mcq"
capability = "concept"
domain = "finance"
similarity = "similar"
method = "direct"
metric = "accuracy"
answer_schema = "choice"
data_path = "data/mcq.ndl"

[[task]]
name = "fin-reasoning-cot"
capability = "reasoning"
domain = "finance"
similarity = "similar"
method = "cot"
metric = "accuracy"
answer_schema = "choice"
data_path = "data/reasoning.ndl"

[[task]]
name = "filing-summary"
capability = "if_chat"
domain = "finance"
similarity = "similar"
method = "direct"
metric = "rouge1"
answer_schema = "free_text"
data_path = "data/summaries.ndl"

[[task]]
name = "news-sentiment"
capability = "task"
domain = "finance"
similarity = "novel"
method = "direct"
metric = "accuracy"
answer_schema = "label_set"
labels = ["positive", "negative", "neutral"]
data_path = "data/sentiment.ndl"

[[task]]
name = "entity-tagging"
capability = "task"
domain = "finance"
similarity = "novel"
method = "direct"
metric = "entity_f1"
answer_schema = "span_list"
entity_types = ["ORG"]
data_path = "data/entities.ndl"
"#,
    )?;

    let text_item = |id: &str, input: &str, gold: &str| EvalItem {
        v: SCHEMA_VERSION,
        id: id.to_string(),
        input: input.to_string(),
        gold: Gold::Text(gold.to_string()),
    };

    let mcq = vec![
        text_item(
            "mcq-0",
            "Which statement describes a zero-coupon bond?\nA. Pays coupons monthly\nB. Sells at \
             a discount and pays face value at maturity\nC. Floats with short rates\nD. Never matures",
            "B",
        ),
        text_item(
            "mcq-1",
            "A call option is in the money when:\nA. Spot is below strike\nB. Spot is above \
             strike\nC. Volatility is zero\nD. It has expired",
            "B",
        ),
        text_item(
            "mcq-2",
            "Net income divided by shareholder equity is:\nA. Current ratio\nB. Return on \
             equity\nC. Quick ratio\nD. Asset turnover",
            "B",
        ),
        text_item(
            "mcq-3",
            "Which curve plots yields against maturities?\nA. Supply curve\nB. Yield curve\n\
             C. Phillips curve\nD. Indifference curve",
            "B",
        ),
    ];
    write_ndjson(&out.join("eval/data/mcq.ndl"), mcq.iter())?;

    let reasoning = vec![
        text_item(
            "rsn-0",
            "An investor deposits 100 at 10 percent simple interest. After two years the balance \
             is:\nA. 110\nB. 120\nC. 121\nD. 100",
            "B",
        ),
        text_item(
            "rsn-1",
            "A stock falls 50 percent, then rises 50 percent. The net change is:\nA. Zero\n\
             B. Down 25 percent\nC. Up 25 percent\nD. Down 50 percent",
            "B",
        ),
        text_item(
            "rsn-2",
            "If the yield curve inverts, short yields are:\nA. Below long yields\nB. Above long \
             yields\nC. Equal to long yields\nD. Undefined",
            "B",
        ),
    ];
    write_ndjson(&out.join("eval/data/reasoning.ndl"), reasoning.iter())?;

    let summaries = vec![
        text_item(
            "sum-0",
            "The filing shows revenue rose 8 percent in the quarter on higher fee income, while \
             operating costs were flat.",
            "Quarterly revenue increased, driven by fee income.",
        ),
        text_item(
            "sum-1",
            "Funding costs climbed faster than asset yields, compressing the bank's margin for a \
             third straight quarter.",
            "Margins narrowed as funding costs rose.",
        ),
        // Strict probe: input + gold reassemble a training document exactly,
        // so the normalized eval text equals the normalized train text.
        {
            let (head, tail) = strict_probe
                .rsplit_once("\n\n")
                .expect("generated documents have at least two paragraphs");
            text_item("sum-2", head, tail)
        },
        // Fuzzy probe: a training document plus an unrelated gold sentence;
        // near-duplicate by character overlap but not an exact copy.
        text_item("sum-3", fuzzy_probe, "The report notes a revenue increase for the quarter."),
    ];
    write_ndjson(&out.join("eval/data/summaries.ndl"), summaries.iter())?;

    let sentiment = vec![
        text_item("sent-0", "Shares climbed after the company raised full-year guidance.", "positive"),
        text_item("sent-1", "The fund reported record inflows and a widening client base.", "positive"),
        text_item("sent-2", "Regulators fined the broker and suspended two trading desks.", "negative"),
        text_item("sent-3", "The issuer refinanced early at a lower rate than expected.", "positive"),
    ];
    write_ndjson(&out.join("eval/data/sentiment.ndl"), sentiment.iter())?;

    let span = |entity: &str| EntitySpan { entity: entity.to_string(), kind: "ORG".to_string() };
    let entities = vec![
        EvalItem {
            v: SCHEMA_VERSION,
            id: "ent-0".to_string(),
            input: "Ardent Capital agreed to buy a minority stake in East Bank.".to_string(),
            gold: Gold::Spans(vec![span("Ardent Capital"), span("East Bank")]),
        },
        EvalItem {
            v: SCHEMA_VERSION,
            id: "ent-1".to_string(),
            input: "Ardent Capital hired advisers while Crest Insurance weighed a rival bid."
                .to_string(),
            gold: Gold::Spans(vec![span("Ardent Capital"), span("Crest Insurance")]),
        },
    ];
    write_ndjson(&out.join("eval/data/entities.ndl"), entities.iter())?;
    Ok(())
}

/// Wraps filtered documents and task records into the three named unit
/// pools the mixture specs select from.
fn build_pools(out: &Path) -> anyhow::Result<()> {
    let kept: Vec<Document> = read_ndjson(&out.join("artifacts/docs_kept.ndl"))?;
    let web_units: Vec<TrainingUnit> = kept.into_iter().map(TrainingUnit::cpt).collect();
    write_ndjson(&out.join("units/web.ndl"), web_units.iter())?;

    let books: Vec<Document> = read_ndjson(&out.join("corpus/books.ndl"))?;
    let book_units: Vec<TrainingUnit> = books.into_iter().map(TrainingUnit::cpt).collect();
    write_ndjson(&out.join("units/books.ndl"), book_units.iter())?;

    let mut tasks: Vec<TaskRecord> = read_ndjson(&out.join("corpus/chat.ndl"))?;
    tasks.extend(read_ndjson::<TaskRecord>(&out.join("artifacts/exercise_tasks.ndl"))?);
    let it_units: Vec<TrainingUnit> = tasks.into_iter().map(TrainingUnit::it).collect();
    write_ndjson(&out.join("units/it.ndl"), it_units.iter())?;
    println!(
        "pools: {} web, {} books, {} it -> {}",
        web_units.len(),
        book_units.len(),
        it_units.len(),
        out.join("units").display()
    );
    Ok(())
}

/// SHA-256 over every artifact: sorted relative paths and file bytes,
/// NUL-separated. The audit directory is excluded (request logs carry
/// wall-clock latencies), as is the digest file itself.
fn digest_tree(root: &Path) -> anyhow::Result<String> {
    let mut files = Vec::new();
    collect_files(root, root, &mut files)?;
    files.sort();
    let mut hasher = Sha256::new();
    for rel in &files {
        hasher.update(rel.as_bytes());
        hasher.update([0u8]);
        let bytes = fs::read(root.join(rel))
            .with_context(|| format!("cannot read {}", root.join(rel).display()))?;
        hasher.update(&bytes);
        hasher.update([0u8]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn collect_files(root: &Path, dir: &Path, files: &mut Vec<String>) -> anyhow::Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("cannot list {}", dir.display()))? {
        let path = entry.with_context(|| format!("cannot list {}", dir.display()))?.path();
        let rel = path
            .strip_prefix(root)
            .expect("walked path stays under root")
            .to_string_lossy()
            .into_owned();
        if path.is_dir() {
            if rel != "audit" {
                collect_files(root, &path, files)?;
            }
        } else if rel != "digest.txt" {
            files.push(rel);
        }
    }
    Ok(())
}
