//! Pipeline configuration: endpoint registry, per-stage parameter blocks,
//! and the mandatory global seed.
//!
//! The file is TOML. Every stage block is optional — a subcommand that
//! needs one reports its absence as a validation violation — but the seed
//! and the definitions of all referenced endpoints are checked up front so
//! a bad config fails before any work starts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use forge_core::gateway::http::HttpTransport;
use forge_core::gateway::{EndpointConfig, Gateway, Transport};
use serde::Deserialize;

use crate::mocks;

/// One endpoint definition: a scripted mock (for dry runs and tests) or an
/// HTTP backend.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointSpec {
    pub kind: EndpointKind,
    /// Mock behavior name; required when `kind = "mock"`.
    #[serde(default)]
    pub behavior: Option<String>,
    /// Chat-completions URL; required when `kind = "http"`.
    #[serde(default)]
    pub url: Option<String>,
    /// Model name forwarded to the backend.
    #[serde(default)]
    pub model: Option<String>,
    /// Environment variable holding the API key (credentials never live in
    /// the config file itself).
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub requests_per_minute: u32,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_retries() -> u32 {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterBlock {
    pub judge: Option<String>,
    pub threshold: Option<i64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractBlock {
    pub extractor: Option<String>,
    /// Endpoint that backfills answers missing from the material; omit to
    /// skip backfilling.
    pub generator: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackBlock {
    pub context_length: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecontamBlock {
    pub n: Option<usize>,
    pub threshold: Option<f64>,
    /// "symmetric" or "train-coverage".
    pub mode: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthBlock {
    pub policy: Option<String>,
    pub genrm: Option<String>,
    pub k: Option<usize>,
    pub temperature: Option<f64>,
    pub fap_cap: Option<usize>,
    pub scp_cap: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalBlock {
    pub registry: Option<PathBuf>,
    pub model: Option<String>,
    pub judge: Option<String>,
}

/// The parsed pipeline configuration.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Global RNG seed; mandatory so every sampling stage is replayable.
    pub seed: Option<u64>,
    #[serde(default)]
    pub endpoints: BTreeMap<String, EndpointSpec>,
    #[serde(default)]
    pub filter: FilterBlock,
    #[serde(default)]
    pub extract: ExtractBlock,
    #[serde(default)]
    pub pack: PackBlock,
    #[serde(default)]
    pub decontam: DecontamBlock,
    #[serde(default)]
    pub synth: SynthBlock,
    #[serde(default)]
    pub eval: EvalBlock,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: None,
            endpoints: BTreeMap::new(),
            filter: FilterBlock::default(),
            extract: ExtractBlock::default(),
            pack: PackBlock::default(),
            decontam: DecontamBlock::default(),
            synth: SynthBlock::default(),
            eval: EvalBlock::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: PipelineConfig = toml::from_str(&text)
            .with_context(|| format!("malformed config {}", path.display()))?;
        Ok(config)
    }

    /// Validates global invariants; returns every violation, not just the
    /// first.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.seed.is_none() {
            out.push("seed is required (sampling stages must be replayable)".to_string());
        }
        for (name, spec) in &self.endpoints {
            match spec.kind {
                EndpointKind::Mock => {
                    match &spec.behavior {
                        None => out.push(format!(
                            "endpoint `{name}`: mock endpoints need a `behavior`"
                        )),
                        Some(b) if !mocks::is_known_behavior(b) => out.push(format!(
                            "endpoint `{name}`: unknown mock behavior `{b}` (known: {})",
                            mocks::KNOWN_BEHAVIORS.join(", ")
                        )),
                        Some(_) => {}
                    }
                }
                EndpointKind::Http => {
                    if spec.url.is_none() {
                        out.push(format!("endpoint `{name}`: http endpoints need a `url`"));
                    }
                    if spec.model.is_none() {
                        out.push(format!("endpoint `{name}`: http endpoints need a `model`"));
                    }
                }
            }
        }
        // Every endpoint a stage block references must be defined.
        let refs: [(&str, &Option<String>); 6] = [
            ("filter.judge", &self.filter.judge),
            ("extract.extractor", &self.extract.extractor),
            ("extract.generator", &self.extract.generator),
            ("synth.policy", &self.synth.policy),
            ("synth.genrm", &self.synth.genrm),
            ("eval.judge", &self.eval.judge),
        ];
        for (key, value) in refs {
            if let Some(name) = value {
                if !self.endpoints.contains_key(name) {
                    out.push(format!("{key}: endpoint `{name}` is not defined"));
                }
            }
        }
        if let Some(name) = &self.eval.model {
            if !self.endpoints.contains_key(name) {
                out.push(format!("eval.model: endpoint `{name}` is not defined"));
            }
        }
        out
    }

    /// Builds the gateway with every configured endpoint registered.
    /// `audit` streams the request log to an NDJSON file.
    pub fn build_gateway(&self, audit: Option<&Path>) -> anyhow::Result<Gateway> {
        let mut builder = Gateway::builder();
        if let Some(path) = audit {
            builder = builder.audit_path(path);
        }
        let mut gateway = builder.build()?;
        for (name, spec) in &self.endpoints {
            let transport: Arc<dyn Transport> = match spec.kind {
                EndpointKind::Mock => {
                    let behavior = spec
                        .behavior
                        .as_deref()
                        .ok_or_else(|| anyhow!("endpoint `{name}` has no mock behavior"))?;
                    mocks::transport(behavior)
                        .ok_or_else(|| anyhow!("unknown mock behavior `{behavior}`"))?
                }
                EndpointKind::Http => {
                    let url = spec
                        .url
                        .as_deref()
                        .ok_or_else(|| anyhow!("endpoint `{name}` has no url"))?;
                    let model = spec
                        .model
                        .as_deref()
                        .ok_or_else(|| anyhow!("endpoint `{name}` has no model"))?;
                    Arc::new(HttpTransport::new(url, model, spec.api_key_env.as_deref()))
                }
            };
            gateway.register(
                name,
                EndpointConfig {
                    requests_per_minute: spec.requests_per_minute,
                    retries: spec.retries,
                },
                transport,
            );
        }
        Ok(gateway)
    }
}

/// Resolves `path` against the workspace directory unless it is absolute.
pub fn resolve(workspace: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        workspace.join(path)
    }
}
