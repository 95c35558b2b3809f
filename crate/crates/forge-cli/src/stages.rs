//! One runner per pipeline subcommand.
//!
//! Runners read their inputs, call into the library stage, write artifacts,
//! and print a one-line summary. Usage problems (missing endpoints, absent
//! config blocks) surface as [`UsageError`] so the driver can exit with
//! status 2 instead of 1.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::Args;
use forge_core::corpus::{self, DEFAULT_QUALITY_THRESHOLD};
use forge_core::decontam::{contamination_scan, OverlapMode};
use forge_core::harness::{self, AnswerSchema, EvalItem};
use forge_core::io::{read_ndjson, write_ndjson};
use forge_core::mixer::{self, CurriculumGroup, MixtureSpec, Pools};
use forge_core::packer::{self, Stage};
use forge_core::prefsynth::{self, SynthConfig};
use forge_core::records::{packed_violations, Document, TaskRecord, TrainingUnit};
use forge_core::tokenizer::WhitespaceTokenizer;
use serde::Deserialize;

use crate::config::{resolve, PipelineConfig};

/// A command-line or configuration mistake; exits with status 2 rather
/// than 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(message.into()))
}

fn require_endpoint(config: &PipelineConfig, name: &str, role: &str) -> anyhow::Result<String> {
    if config.endpoints.contains_key(name) {
        Ok(name.to_string())
    } else {
        Err(usage(format!("{role}: endpoint `{name}` is not defined in the config")))
    }
}

fn pick(flag: Option<&String>, block: Option<&String>, role: &str) -> anyhow::Result<String> {
    flag.or(block)
        .cloned()
        .ok_or_else(|| usage(format!("{role} endpoint is required (flag or config)")))
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    /// Input documents (NDJSON).
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Kept documents (NDJSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Judging endpoint; overrides `filter.judge`.
    #[arg(long)]
    pub judge: Option<String>,
    /// Minimum score to keep; overrides `filter.threshold`.
    #[arg(long)]
    pub threshold: Option<i64>,
    /// Quarantined judgments (NDJSON); defaults next to `--out`.
    #[arg(long)]
    pub quarantine: Option<PathBuf>,
    /// Raw quality judgments (NDJSON), for audit.
    #[arg(long)]
    pub judgments: Option<PathBuf>,
    /// Gateway request log (NDJSON).
    #[arg(long)]
    pub audit: Option<PathBuf>,
}

pub fn run_filter(
    config: &PipelineConfig,
    workspace: &Path,
    args: &FilterArgs,
) -> anyhow::Result<()> {
    let judge = pick(args.judge.as_ref(), config.filter.judge.as_ref(), "filter judge")?;
    require_endpoint(config, &judge, "filter")?;
    let threshold = args
        .threshold
        .or(config.filter.threshold)
        .unwrap_or(DEFAULT_QUALITY_THRESHOLD);

    let input = resolve(workspace, &args.input);
    let out = resolve(workspace, &args.out);
    let docs: Vec<Document> = read_ndjson(&input)?;
    let audit = args.audit.as_ref().map(|p| resolve(workspace, p));
    let gateway = config.build_gateway(audit.as_deref())?;

    let (judgments, quarantine) = corpus::score_corpus(&gateway, &judge, &docs)?;
    let outcome = corpus::filter_corpus(&docs, &judgments, threshold)?;

    write_ndjson(&out, outcome.kept.iter())?;
    let quarantine_path = args
        .quarantine
        .clone()
        .map(|p| resolve(workspace, &p))
        .unwrap_or_else(|| sibling(&out, "quarantine.ndl"));
    write_ndjson(&quarantine_path, quarantine.iter())?;
    if let Some(path) = &args.judgments {
        write_ndjson(&resolve(workspace, path), judgments.iter())?;
    }
    println!(
        "filter: {} kept, {} dropped, {} quarantined -> {}",
        outcome.kept.len(),
        outcome.dropped,
        outcome.quarantined,
        out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Book-like documents to mine (NDJSON).
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Extracted exercises (NDJSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Extraction endpoint; overrides `extract.extractor`.
    #[arg(long)]
    pub extractor: Option<String>,
    /// Answer-backfill endpoint; overrides `extract.generator`. Omit (in
    /// both places) to keep unanswered exercises out of the output.
    #[arg(long)]
    pub generator: Option<String>,
    /// Quarantined chunks (NDJSON); defaults next to `--out`.
    #[arg(long)]
    pub quarantine: Option<PathBuf>,
    /// Also emit answered exercises as chat task records (NDJSON).
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    /// Gateway request log (NDJSON).
    #[arg(long)]
    pub audit: Option<PathBuf>,
}

pub fn run_extract(
    config: &PipelineConfig,
    workspace: &Path,
    args: &ExtractArgs,
) -> anyhow::Result<()> {
    let extractor = pick(
        args.extractor.as_ref(),
        config.extract.extractor.as_ref(),
        "extractor",
    )?;
    require_endpoint(config, &extractor, "extract")?;
    let generator = args
        .generator
        .clone()
        .or_else(|| config.extract.generator.clone());
    if let Some(name) = &generator {
        require_endpoint(config, name, "extract generator")?;
    }

    let input = resolve(workspace, &args.input);
    let out = resolve(workspace, &args.out);
    let docs: Vec<Document> = read_ndjson(&input)?;
    let tokenizer = WhitespaceTokenizer;
    let chunks: Vec<Document> = docs
        .iter()
        .flat_map(|d| corpus::chunk_document(d, &tokenizer, corpus::CHUNK_TOKENS))
        .collect();

    let audit = args.audit.as_ref().map(|p| resolve(workspace, p));
    let gateway = config.build_gateway(audit.as_deref())?;
    let (mut exercises, quarantine) = corpus::extract_all(&gateway, &extractor, &chunks)?;
    let mut backfill_dropped = 0usize;
    if let Some(generator) = &generator {
        let (kept, dropped) = corpus::backfill_all(&gateway, generator, exercises)?;
        exercises = kept;
        backfill_dropped = dropped;
    }

    write_ndjson(&out, exercises.iter())?;
    let quarantine_path = args
        .quarantine
        .clone()
        .map(|p| resolve(workspace, &p))
        .unwrap_or_else(|| sibling(&out, "quarantine.ndl"));
    write_ndjson(&quarantine_path, quarantine.iter())?;
    if let Some(path) = &args.tasks {
        let tasks: Vec<TaskRecord> = exercises
            .iter()
            .enumerate()
            .filter_map(|(i, ex)| corpus::exercise_to_task(ex, i))
            .collect();
        write_ndjson(&resolve(workspace, path), tasks.iter())?;
    }
    println!(
        "extract: {} exercises from {} chunks ({} quarantined, {} dropped in backfill) -> {}",
        exercises.len(),
        chunks.len(),
        quarantine.len(),
        backfill_dropped,
        out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct MixArgs {
    /// Mixture spec (single mixture) or curriculum spec (with `[[group]]`
    /// stanzas referencing per-group mixture specs).
    #[arg(long)]
    pub spec: PathBuf,
    /// Named unit pools as `name=path.ndl`; repeatable.
    #[arg(long = "pool", value_name = "NAME=FILE")]
    pub pools: Vec<String>,
    /// Output stream (single mixture mode).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output directory (curriculum mode; one file per group).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Total size for token-weighted mixtures.
    #[arg(long)]
    pub total: Option<u64>,
    /// Keep CPT pools at full size instead of matching the IT pool count.
    #[arg(long)]
    pub no_downsample: bool,
}

/// Curriculum file shape: groups referencing nested mixture spec files.
#[derive(Debug, Deserialize)]
struct CurriculumFile {
    #[serde(rename = "group")]
    groups: Vec<CurriculumGroupFile>,
}

#[derive(Debug, Deserialize)]
struct CurriculumGroupFile {
    index: u32,
    token_budget: u64,
    cpt_spec: PathBuf,
    it_spec: PathBuf,
}

fn load_pools(workspace: &Path, specs: &[String]) -> anyhow::Result<Pools> {
    let mut pools = Pools::new();
    for spec in specs {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| usage(format!("--pool `{spec}` is not NAME=FILE")))?;
        let units: Vec<TrainingUnit> = read_ndjson(&resolve(workspace, Path::new(path)))?;
        if pools.insert(name.to_string(), units).is_some() {
            return Err(usage(format!("pool `{name}` given twice")));
        }
    }
    if pools.is_empty() {
        return Err(usage("at least one --pool NAME=FILE is required"));
    }
    Ok(pools)
}

pub fn run_mix(config: &PipelineConfig, workspace: &Path, args: &MixArgs) -> anyhow::Result<()> {
    let seed = config
        .seed
        .ok_or_else(|| usage("seed is required (config `seed` or --seed)"))?;
    let pools = load_pools(workspace, &args.pools)?;
    let tokenizer = WhitespaceTokenizer;
    let spec_path = resolve(workspace, &args.spec);
    let text = std::fs::read_to_string(&spec_path)
        .with_context(|| format!("cannot read spec {}", spec_path.display()))?;
    let table: toml::Table = toml::from_str(&text)
        .with_context(|| format!("malformed spec {}", spec_path.display()))?;

    if table.contains_key("group") {
        // Curriculum mode: per-group CPT/IT mixtures under a token budget.
        let out_dir = args
            .out_dir
            .clone()
            .map(|p| resolve(workspace, &p))
            .ok_or_else(|| usage("curriculum specs need --out-dir"))?;
        let file: CurriculumFile = toml::from_str(&text)
            .with_context(|| format!("malformed curriculum spec {}", spec_path.display()))?;
        let base = spec_path.parent().unwrap_or(Path::new("."));
        let mut groups = Vec::new();
        for g in &file.groups {
            groups.push(CurriculumGroup {
                index: g.index,
                cpt_spec: mixer::load_mixture_spec(&resolve(base, &g.cpt_spec))?,
                it_spec: mixer::load_mixture_spec(&resolve(base, &g.it_spec))?,
                token_budget: g.token_budget,
            });
        }
        let streams =
            mixer::build_curriculum(&groups, &pools, &tokenizer, seed, args.no_downsample)?;
        std::fs::create_dir_all(&out_dir)
            .with_context(|| format!("cannot create {}", out_dir.display()))?;
        for stream in &streams {
            let path = out_dir.join(format!("group{}.ndl", stream.index));
            write_ndjson(&path, stream.units.iter())?;
            println!(
                "mix: group {} -> {} units, {} tokens{} -> {}",
                stream.index,
                stream.units.len(),
                stream.tokens,
                if stream.truncated { " (budget-truncated)" } else { "" },
                path.display()
            );
        }
    } else {
        let out = args
            .out
            .clone()
            .map(|p| resolve(workspace, &p))
            .ok_or_else(|| usage("single mixture specs need --out"))?;
        let spec: MixtureSpec = mixer::load_mixture_spec(&spec_path)?;
        let units = mixer::build_mixture(&pools, &spec, args.total, &tokenizer, seed)?;
        write_ndjson(&out, units.iter())?;
        println!("mix: {} -> {} units -> {}", spec.name, units.len(), out.display());
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct PackArgs {
    /// Mixed training units (NDJSON).
    #[arg(long)]
    pub units: PathBuf,
    /// Packed records (NDJSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Fixed context length; overrides `pack.context_length`.
    #[arg(long)]
    pub context: Option<usize>,
    /// Curriculum group stamped on the packed records.
    #[arg(long, default_value_t = 1)]
    pub group: u32,
    /// Directory for the full recipe set (cpt_it groups 1–2 and pa).
    #[arg(long)]
    pub recipes: Option<PathBuf>,
}

pub fn run_pack(config: &PipelineConfig, workspace: &Path, args: &PackArgs) -> anyhow::Result<()> {
    let context = args
        .context
        .or(config.pack.context_length)
        .ok_or_else(|| usage("context length is required (--context or pack.context_length)"))?;
    if context == 0 {
        return Err(usage("context length must be positive"));
    }
    let units: Vec<TrainingUnit> = read_ndjson(&resolve(workspace, &args.units))?;
    let tokenizer = WhitespaceTokenizer;
    let rendered = packer::render_all(&units, &tokenizer);
    let outcome = packer::pack_sequences(&rendered, context, args.group);
    for record in &outcome.records {
        let violations = packed_violations(record);
        if !violations.is_empty() {
            bail!("packed record failed validation: {}", violations.join("; "));
        }
    }
    let out = resolve(workspace, &args.out);
    write_ndjson(&out, outcome.records.iter())?;
    if let Some(dir) = &args.recipes {
        let dir = resolve(workspace, dir);
        std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
        for (stage, group, file) in [
            (Stage::CptIt, 1, "cpt_it_group1.recipe"),
            (Stage::CptIt, 2, "cpt_it_group2.recipe"),
            (Stage::Pa, 1, "pa.recipe"),
        ] {
            packer::write_recipe(&packer::recipe_config(stage, group)?, &dir.join(file))?;
        }
    }
    println!(
        "pack: {} units -> {} records at context {} ({} oversize dropped) -> {}",
        units.len(),
        outcome.records.len(),
        context,
        outcome.dropped_oversize.len(),
        out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct DecontamArgs {
    /// Training samples: NDJSON with `id` and `text` fields (documents
    /// work as-is).
    #[arg(long)]
    pub train: PathBuf,
    /// Evaluation samples: NDJSON eval items (`id`, `input`, `gold`) or
    /// generic `id`/`text` records.
    #[arg(long)]
    pub eval: PathBuf,
    /// N-gram size for pre-identification.
    #[arg(long)]
    pub n: Option<usize>,
    /// Character-overlap confirmation threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// `symmetric` or `train-coverage`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Text report path.
    #[arg(long)]
    pub report: PathBuf,
    /// Optional machine-readable copy of the full report (JSON).
    #[arg(long)]
    pub json: Option<PathBuf>,
}

/// Reads (id, text) pairs from NDJSON, accepting documents, eval items, or
/// bare `{id, text}` records.
fn read_id_text(path: &Path) -> anyhow::Result<Vec<(String, String)>> {
    if let Ok(items) = read_ndjson::<EvalItem>(path) {
        return Ok(harness::decontam_texts(&items, AnswerSchema::FreeText));
    }
    let values: Vec<serde_json::Value> = read_ndjson(path)?;
    let mut out = Vec::with_capacity(values.len());
    for (i, v) in values.iter().enumerate() {
        let id = v
            .get("id")
            .and_then(|x| x.as_str())
            .ok_or_else(|| anyhow!("{}:{}: record has no `id`", path.display(), i + 1))?;
        let text = v
            .get("text")
            .or_else(|| v.get("input"))
            .and_then(|x| x.as_str())
            .ok_or_else(|| anyhow!("{}:{}: record has no `text`", path.display(), i + 1))?;
        out.push((id.to_string(), text.to_string()));
    }
    Ok(out)
}

pub fn run_decontam(
    config: &PipelineConfig,
    workspace: &Path,
    args: &DecontamArgs,
) -> anyhow::Result<()> {
    let n = args.n.or(config.decontam.n).unwrap_or(10);
    let threshold = args.threshold.or(config.decontam.threshold).unwrap_or(0.5);
    let mode = match args
        .mode
        .as_deref()
        .or(config.decontam.mode.as_deref())
        .unwrap_or("symmetric")
    {
        "symmetric" => OverlapMode::Symmetric,
        "train-coverage" => OverlapMode::TrainCoverage,
        other => return Err(usage(format!("unknown overlap mode `{other}`"))),
    };
    let train = read_id_text(&resolve(workspace, &args.train))?;
    let eval = read_id_text(&resolve(workspace, &args.eval))?;
    let report = contamination_scan(&train, &eval, n, threshold, mode)?;

    let report_path = resolve(workspace, &args.report);
    std::fs::write(&report_path, report.to_text())
        .with_context(|| format!("cannot write {}", report_path.display()))?;
    if let Some(path) = &args.json {
        let path = resolve(workspace, path);
        std::fs::write(&path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    println!(
        "decontam: {} strict / {} fuzzy of {} train samples -> {}",
        report.strict_flagged.len(),
        report.fuzzy_flagged.len(),
        report.total_train,
        report_path.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Prompts with gold answers (NDJSON task records).
    #[arg(long)]
    pub prompts: PathBuf,
    /// Preference pairs out (NDJSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Policy endpoint; overrides `synth.policy`.
    #[arg(long)]
    pub policy: Option<String>,
    /// Reward-model endpoint; overrides `synth.genrm`.
    #[arg(long)]
    pub genrm: Option<String>,
    /// Samples per prompt.
    #[arg(long)]
    pub k: Option<usize>,
    /// Sampling temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub fap_cap: Option<usize>,
    #[arg(long)]
    pub scp_cap: Option<usize>,
    /// Audit log (NDJSON); mandatory so synthesis is replayable.
    #[arg(long)]
    pub audit: PathBuf,
}

pub fn run_synth(
    config: &PipelineConfig,
    workspace: &Path,
    args: &SynthArgs,
) -> anyhow::Result<()> {
    let seed = config
        .seed
        .ok_or_else(|| usage("seed is required (config `seed` or --seed)"))?;
    let policy = pick(args.policy.as_ref(), config.synth.policy.as_ref(), "policy")?;
    let genrm = pick(args.genrm.as_ref(), config.synth.genrm.as_ref(), "genrm")?;
    require_endpoint(config, &policy, "synth-pa")?;
    require_endpoint(config, &genrm, "synth-pa")?;

    let synth_config = SynthConfig {
        k: args.k.or(config.synth.k).unwrap_or(prefsynth::DEFAULT_K),
        temperature: args
            .temperature
            .or(config.synth.temperature)
            .unwrap_or(prefsynth::SAMPLE_TEMPERATURE),
        fap_cap: args
            .fap_cap
            .or(config.synth.fap_cap)
            .unwrap_or(prefsynth::DEFAULT_FAP_CAP),
        scp_cap: args
            .scp_cap
            .or(config.synth.scp_cap)
            .unwrap_or(prefsynth::DEFAULT_SCP_CAP),
        ..SynthConfig::new(policy, genrm, seed)
    };

    let prompts: Vec<TaskRecord> = read_ndjson(&resolve(workspace, &args.prompts))?;
    let audit = resolve(workspace, &args.audit);
    let gateway = config.build_gateway(Some(&audit))?;
    let (pairs, stats) = prefsynth::synth_pa(&gateway, &prompts, &synth_config)?;
    let out = resolve(workspace, &args.out);
    write_ndjson(&out, pairs.iter())?;
    println!(
        "synth-pa: {} prompts -> {} FAP + {} SCP pairs ({} hallucinations discarded, {} judge exclusions) -> {}",
        stats.prompts,
        stats.fap_pairs,
        stats.scp_pairs,
        stats.hallucinations,
        stats.judge_exclusions,
        out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Task registry (TOML); overrides `eval.registry`.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Endpoint under evaluation; overrides `eval.model`.
    #[arg(long)]
    pub model: Option<String>,
    /// Judge endpoint for llm_judge tasks; overrides `eval.judge`.
    #[arg(long)]
    pub judge: Option<String>,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Gateway request log (NDJSON).
    #[arg(long)]
    pub audit: Option<PathBuf>,
}

pub fn run_eval(
    config: &PipelineConfig,
    workspace: &Path,
    args: &EvalArgs,
) -> anyhow::Result<()> {
    let model = pick(args.model.as_ref(), config.eval.model.as_ref(), "eval model")?;
    require_endpoint(config, &model, "eval")?;
    let judge = args.judge.clone().or_else(|| config.eval.judge.clone());
    if let Some(name) = &judge {
        require_endpoint(config, name, "eval judge")?;
    }
    let registry = args
        .registry
        .clone()
        .or_else(|| config.eval.registry.clone())
        .ok_or_else(|| usage("eval registry is required (--registry or eval.registry)"))?;
    let registry = resolve(workspace, &registry);
    let tasks = harness::load_registry(&registry)?;
    let out = resolve(workspace, &args.out);
    let audit = args.audit.as_ref().map(|p| resolve(workspace, p));
    let gateway = config.build_gateway(audit.as_deref())?;
    let report = harness::run_and_report(&gateway, &model, judge.as_deref(), &tasks, &out)?;
    print!("{}", harness::render_text_report(&report));
    println!("eval: {} tasks -> {}", report.rows.len(), out.display());
    Ok(())
}

/// Replaces the file name of `path` with `name`.
fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}
