//! Mixture construction, CPT↔IT size matching, and the two-group training
//! curriculum.
//!
//! Mixtures draw from named pools by selector, hit their weight targets
//! within one record (or one record's tokens), and are reproducible from a
//! seed. The curriculum interleaves CPT and IT units per group, with CPT
//! downsampled to the group's IT record count and the stream truncated at
//! the group's token budget.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{Domain, TrainingUnit};
use crate::tokenizer::{fnv1a64, TokenizerAdapter};

/// Named record pools a mixture draws from, ordered for determinism.
pub type Pools = BTreeMap<String, Vec<TrainingUnit>>;

/// Deterministic per-stage generator: the label keeps independent stages
/// from sharing a stream even under the same pipeline seed.
pub fn stage_rng(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(label.as_bytes()))
}

/// What a mixture's weights are measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixUnit {
    Records,
    Tokens,
}

impl MixUnit {
    pub fn as_str(self) -> &'static str {
        match self {
            MixUnit::Records => "records",
            MixUnit::Tokens => "tokens",
        }
    }
}

/// One slice of a mixture: which records, and what share of the total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePart {
    /// `pool:`/`domain:`/`source:` terms joined with `&` (all must hold).
    pub selector: String,
    /// Fraction of the mixture in (0, 1].
    pub weight: f64,
}

/// A named mixture: weighted parts plus the unit the weights measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub name: String,
    pub unit: MixUnit,
    #[serde(rename = "part")]
    pub parts: Vec<MixturePart>,
}

/// Weight-sum tolerance.
const WEIGHT_EPS: f64 = 1e-9;

impl MixtureSpec {
    /// Checks weights (each in (0,1], summing to 1) and selector syntax.
    pub fn validate(&self) -> Result<()> {
        if self.parts.is_empty() {
            return Err(Error::Config(format!("mixture {}: no parts", self.name)));
        }
        let mut sum = 0.0;
        for part in &self.parts {
            if !(part.weight > 0.0 && part.weight <= 1.0) {
                return Err(Error::Config(format!(
                    "mixture {}: weight {} outside (0, 1]",
                    self.name, part.weight
                )));
            }
            sum += part.weight;
            Selector::parse(&part.selector)?;
        }
        if (sum - 1.0).abs() > WEIGHT_EPS {
            return Err(Error::Config(format!(
                "mixture {}: weights sum to {sum}, expected 1",
                self.name
            )));
        }
        Ok(())
    }
}

/// Loads a mixture spec from a TOML file and validates it.
pub fn load_mixture_spec(path: &std::path::Path) -> Result<MixtureSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: MixtureSpec = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("mixture spec {}: {e}", path.display())))?;
    spec.validate()?;
    Ok(spec)
}

/// Parsed selector: conjunction of optional pool/domain/source constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct Selector {
    pub pool: Option<String>,
    pub domain: Option<Domain>,
    pub source: Option<String>,
}

impl Selector {
    /// Parses `pool:<name>`, `domain:<in-domain|general>`, and
    /// `source:<name>` terms joined with `&`.
    pub fn parse(text: &str) -> Result<Selector> {
        let mut selector = Selector {
            pool: None,
            domain: None,
            source: None,
        };
        for term in text.split('&') {
            let term = term.trim();
            let (key, value) = term.split_once(':').ok_or_else(|| {
                Error::Config(format!("selector term {term:?} is not key:value"))
            })?;
            match key.trim() {
                "pool" => selector.pool = Some(value.trim().to_string()),
                "domain" => {
                    selector.domain = Some(match value.trim() {
                        "in-domain" => Domain::InDomain,
                        "general" => Domain::General,
                        other => {
                            return Err(Error::Config(format!("unknown domain {other:?}")));
                        }
                    });
                }
                "source" => selector.source = Some(value.trim().to_string()),
                other => {
                    return Err(Error::Config(format!("unknown selector key {other:?}")));
                }
            }
        }
        Ok(selector)
    }

    /// Whether a unit drawn from pool `pool_name` satisfies the selector.
    /// `source:` matches a document's source tag, or an IT record's source
    /// dataset.
    pub fn matches(&self, pool_name: &str, unit: &TrainingUnit) -> bool {
        if let Some(pool) = &self.pool {
            if pool != pool_name {
                return false;
            }
        }
        if let Some(domain) = self.domain {
            let unit_domain = match unit {
                TrainingUnit::Cpt { doc, .. } => doc.domain,
                TrainingUnit::It { task, .. } => task.domain,
            };
            if unit_domain != domain {
                return false;
            }
        }
        if let Some(source) = &self.source {
            let matches = match unit {
                TrainingUnit::Cpt { doc, .. } => doc.source.as_str() == source,
                TrainingUnit::It { task, .. } => &task.source_dataset == source,
            };
            if !matches {
                return false;
            }
        }
        true
    }

    /// All matching units across pools, in pool-name order then pool order.
    pub fn select<'a>(&self, pools: &'a Pools) -> Vec<&'a TrainingUnit> {
        let mut out = Vec::new();
        for (name, units) in pools {
            if let Some(pool) = &self.pool {
                if pool != name {
                    continue;
                }
            }
            out.extend(units.iter().filter(|u| self.matches(name, u)));
        }
        out
    }
}

/// Largest-remainder apportionment of `total` into integer targets
/// proportional to `weights` (assumed to sum to 1). Targets sum to `total`
/// and each differs from its exact share by less than one.
pub fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let mut targets: Vec<usize> = weights.iter().map(|w| (w * total as f64) as usize).collect();
    let assigned: usize = targets.iter().sum();
    // Distribute the remainder by descending fractional part; ties go to
    // the larger weight, then to the earlier part.
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let frac = |i: usize| weights[i] * total as f64 - targets[i] as f64;
        frac(b)
            .partial_cmp(&frac(a))
            .unwrap()
            .then(weights[b].partial_cmp(&weights[a]).unwrap())
            .then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        targets[i] += 1;
    }
    targets
}

/// Builds a mixture from the pools. `total` is the requested size in
/// `spec.unit`; `None` takes the largest total every part can satisfy.
/// Record counts hit their targets exactly (largest-remainder); token
/// targets stop at the first record that reaches the part's share, so the
/// realized proportion deviates by at most one record's tokens. The output
/// is shuffled with the seeded generator; everything is deterministic under
/// (pools, spec, total, seed).
pub fn build_mixture(
    pools: &Pools,
    spec: &MixtureSpec,
    total: Option<u64>,
    tokenizer: &dyn TokenizerAdapter,
    seed: u64,
) -> Result<Vec<TrainingUnit>> {
    spec.validate()?;
    let mut matched: Vec<Vec<&TrainingUnit>> = Vec::with_capacity(spec.parts.len());
    for part in &spec.parts {
        let selector = Selector::parse(&part.selector)?;
        let units = selector.select(pools);
        if units.is_empty() {
            return Err(Error::PoolShortfall {
                selector: part.selector.clone(),
                needed: 1,
                available: 0,
                unit: "records",
            });
        }
        matched.push(units);
    }

    let mut output = Vec::new();
    match spec.unit {
        MixUnit::Records => {
            let total = match total {
                Some(t) => t as usize,
                // Largest total every part can satisfy: min over parts of
                // available/weight.
                None => spec
                    .parts
                    .iter()
                    .zip(&matched)
                    .map(|(part, units)| (units.len() as f64 / part.weight) as usize)
                    .min()
                    .unwrap_or(0),
            };
            let weights: Vec<f64> = spec.parts.iter().map(|p| p.weight).collect();
            let targets = apportion(&weights, total);
            for ((part, units), target) in spec.parts.iter().zip(&matched).zip(&targets) {
                if *target > units.len() {
                    return Err(Error::PoolShortfall {
                        selector: part.selector.clone(),
                        needed: *target as u64,
                        available: units.len() as u64,
                        unit: "records",
                    });
                }
                let mut indices: Vec<usize> = (0..units.len()).collect();
                indices.shuffle(&mut stage_rng(
                    seed,
                    &format!("mix.{}.{}", spec.name, part.selector),
                ));
                indices.truncate(*target);
                indices.sort_unstable();
                output.extend(indices.into_iter().map(|i| units[i].clone()));
            }
        }
        MixUnit::Tokens => {
            let part_tokens: Vec<u64> = matched
                .iter()
                .map(|units| units.iter().map(|u| u.tokens(tokenizer)).sum())
                .collect();
            let total = match total {
                Some(t) => t,
                None => spec
                    .parts
                    .iter()
                    .zip(&part_tokens)
                    .map(|(part, avail)| (*avail as f64 / part.weight) as u64)
                    .min()
                    .unwrap_or(0),
            };
            for ((part, units), available) in spec.parts.iter().zip(&matched).zip(&part_tokens) {
                let target = part.weight * total as f64;
                if (*available as f64) < target {
                    return Err(Error::PoolShortfall {
                        selector: part.selector.clone(),
                        needed: target.ceil() as u64,
                        available: *available,
                        unit: "tokens",
                    });
                }
                let mut indices: Vec<usize> = (0..units.len()).collect();
                indices.shuffle(&mut stage_rng(
                    seed,
                    &format!("mix.{}.{}", spec.name, part.selector),
                ));
                let mut cumulative = 0f64;
                let mut taken = Vec::new();
                for i in indices {
                    if cumulative >= target {
                        break;
                    }
                    cumulative += units[i].tokens(tokenizer) as f64;
                    taken.push(i);
                }
                taken.sort_unstable();
                output.extend(taken.into_iter().map(|i| units[i].clone()));
            }
        }
    }
    output.shuffle(&mut stage_rng(seed, &format!("mix.{}.final", spec.name)));
    Ok(output)
}

/// Uniform sample of `target` items without replacement, deterministic
/// under the seed; input order is preserved among the survivors. Identity
/// when the input is already small enough.
pub fn downsample<T: Clone>(items: &[T], target: usize, seed: u64) -> Vec<T> {
    if items.len() <= target {
        return items.to_vec();
    }
    let mut indices: Vec<usize> = (0..items.len()).collect();
    indices.shuffle(&mut stage_rng(seed, "downsample"));
    indices.truncate(target);
    indices.sort_unstable();
    indices.into_iter().map(|i| items[i].clone()).collect()
}

/// Shrinks the CPT stream to the IT stream's record count (no upsampling:
/// a CPT stream already at or under the IT size passes through).
pub fn downsample_to_match<A: Clone, B>(cpt: &[A], it: &[B], seed: u64) -> Vec<A> {
    downsample(cpt, it.len().min(cpt.len()), seed)
}

/// One curriculum group: where its CPT and IT records come from and how
/// many tokens it may emit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumGroup {
    /// 1-based position in the training order.
    pub index: u32,
    pub cpt_spec: MixtureSpec,
    pub it_spec: MixtureSpec,
    pub token_budget: u64,
}

/// Validates budgets and that group indices run 1, 2, … contiguously.
pub fn validate_groups(groups: &[CurriculumGroup]) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::Config("curriculum has no groups".to_string()));
    }
    for (i, group) in groups.iter().enumerate() {
        if group.index as usize != i + 1 {
            return Err(Error::Config(format!(
                "group indices must be contiguous from 1; position {} has index {}",
                i + 1,
                group.index
            )));
        }
        if group.token_budget == 0 {
            return Err(Error::Config(format!(
                "group {}: token budget must be positive",
                group.index
            )));
        }
        group.cpt_spec.validate()?;
        group.it_spec.validate()?;
    }
    Ok(())
}

/// The emitted stream for one curriculum group.
#[derive(Debug, Clone)]
pub struct GroupStream {
    pub index: u32,
    pub units: Vec<TrainingUnit>,
    /// Tokens actually emitted (≤ the group's budget).
    pub tokens: u64,
    /// Whether the budget cut the stream short.
    pub truncated: bool,
}

/// Assembles the per-group curriculum streams: CPT mixture, IT mixture,
/// CPT downsampled to the IT record count (unless `no_downsample`), the two
/// interleaved by seeded shuffle, then truncated at the token budget.
pub fn build_curriculum(
    groups: &[CurriculumGroup],
    pools: &Pools,
    tokenizer: &dyn TokenizerAdapter,
    seed: u64,
    no_downsample: bool,
) -> Result<Vec<GroupStream>> {
    validate_groups(groups)?;
    let mut streams = Vec::with_capacity(groups.len());
    for group in groups {
        let group_seed = seed ^ fnv1a64(format!("curriculum.group{}", group.index).as_bytes());
        let cpt = build_mixture(pools, &group.cpt_spec, None, tokenizer, group_seed).map_err(
            |err| match err {
                Error::PoolShortfall { available: 0, .. } => {
                    Error::EmptyGroupPool(format!("group {} cpt", group.index))
                }
                other => other,
            },
        )?;
        let it = build_mixture(pools, &group.it_spec, None, tokenizer, group_seed).map_err(
            |err| match err {
                Error::PoolShortfall { available: 0, .. } => {
                    Error::EmptyGroupPool(format!("group {} it", group.index))
                }
                other => other,
            },
        )?;
        let cpt = if no_downsample {
            cpt
        } else {
            downsample_to_match(&cpt, &it, group_seed)
        };

        let mut combined: Vec<TrainingUnit> = cpt;
        combined.extend(it);
        combined.shuffle(&mut stage_rng(group_seed, "curriculum.interleave"));

        let mut units = Vec::with_capacity(combined.len());
        let mut tokens = 0u64;
        let mut truncated = false;
        for unit in combined {
            let unit_tokens = unit.tokens(tokenizer);
            if tokens + unit_tokens > group.token_budget {
                truncated = true;
                break;
            }
            tokens += unit_tokens;
            units.push(unit);
        }
        if truncated {
            log::info!(
                "group {}: truncated at {} of {} budget tokens",
                group.index,
                tokens,
                group.token_budget
            );
        }
        streams.push(GroupStream {
            index: group.index,
            units,
            tokens,
            truncated,
        });
    }
    Ok(streams)
}
