//! Run configuration: a flat `section.key = value` file, overridable by
//! `COF_SECTION_KEY` environment variables.
//!
//! Lines starting with `#` and blank lines are ignored. Unknown keys are
//! errors. Keep values containing a `.` are fractions, plain integers are
//! absolute counts.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::encoder::EncoderConfig;
use crate::error::{CofError, Result};
use crate::evaluation::DEFAULT_JACCARD_THRESHOLDS;
use crate::matching::{AuthorRank, ChainConfig, Keep, ProfileFilter, Variant};
use crate::pretraining::{SyntheticCorpusSpec, TrainConfig, TOPIC_POSITIVES_PER_PAPER};

#[derive(Clone, Debug, PartialEq)]
pub struct Paths {
    pub corpus: PathBuf,
    pub submissions: PathBuf,
    pub reviewers: PathBuf,
    pub judgments: PathBuf,
    pub search_log: PathBuf,
    pub checkpoint: PathBuf,
    pub vocab: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: "data/papers.jsonl".into(),
            submissions: "data/submissions.jsonl".into(),
            reviewers: "data/reviewers.jsonl".into(),
            judgments: "data/judgments.jsonl".into(),
            search_log: "data/search_log.jsonl".into(),
            checkpoint: "model/weights.bin".into(),
            vocab: "model/vocab.txt".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub topic_positives_per_paper: usize,
    pub vocab_min_freq: usize,
    pub vocab_max_size: usize,
    pub chain: ChainConfig,
    pub filter: ProfileFilter,
    pub reference_year: u32,
    pub jaccard_thresholds: [f64; 3],
    pub corpus: SyntheticCorpusSpec,
    pub paths: Paths,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            topic_positives_per_paper: TOPIC_POSITIVES_PER_PAPER,
            vocab_min_freq: 1,
            vocab_max_size: 30_000,
            chain: ChainConfig::default(),
            filter: ProfileFilter::default(),
            reference_year: 2020,
            jaccard_thresholds: DEFAULT_JACCARD_THRESHOLDS,
            corpus: SyntheticCorpusSpec::default(),
            paths: Paths::default(),
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CofError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(CofError::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

fn parse_keep(key: &str, value: &str, min: usize) -> Result<Keep> {
    let keep = if value.contains('.') {
        Keep::Fraction {
            fraction: parse(key, value)?,
            min,
        }
    } else {
        Keep::Count(parse(key, value)?)
    };
    keep.validate()
        .map_err(|e| CofError::Config(format!("{key}: {e}")))?;
    Ok(keep)
}

fn keep_text(k: Keep) -> String {
    match k {
        Keep::Fraction { fraction, .. } => {
            let s = fraction.to_string();
            if s.contains('.') {
                s
            } else {
                format!("{s}.0")
            }
        }
        Keep::Count(c) => c.to_string(),
    }
}

fn keep_min(k: Keep) -> usize {
    match k {
        Keep::Fraction { min, .. } => min,
        Keep::Count(_) => 0,
    }
}

fn with_min(k: Keep, new_min: usize) -> Keep {
    match k {
        Keep::Fraction { fraction, .. } => Keep::Fraction {
            fraction,
            min: new_min,
        },
        c => c,
    }
}

fn optional<T: FromStr + PartialEq + Default>(key: &str, value: &str) -> Result<Option<T>> {
    let v: T = parse(key, value)?;
    Ok((v != T::default()).then_some(v))
}

impl RunConfig {
    /// Every accepted key, in documentation order.
    pub const KEYS: &'static [&'static str] = &[
        "run.seed",
        "encoder.num_layers",
        "encoder.hidden_dim",
        "encoder.num_heads",
        "encoder.ffn_dim",
        "encoder.max_instruction_len",
        "encoder.max_paper_len",
        "encoder.layer_norm_eps",
        "encoder.normalize_embeddings",
        "train.epochs",
        "train.batch_size",
        "train.peak_lr",
        "train.weight_decay",
        "train.beta1",
        "train.beta2",
        "train.adam_eps",
        "train.hard_negatives",
        "train.warmup_fraction",
        "train.max_grad_norm",
        "train.in_batch_negatives",
        "train.use_instructions",
        "train.max_samples_per_factor",
        "train.topic_positives_per_paper",
        "train.vocab_min_freq",
        "train.vocab_max_size",
        "chain.stage1_keep",
        "chain.stage1_min",
        "chain.stage2_keep",
        "chain.stage2_min",
        "chain.variant",
        "chain.normalize_scores",
        "filter.years_back",
        "filter.venues",
        "filter.author_rank",
        "filter.reference_year",
        "eval.jaccard_thresholds",
        "corpus.top_fields",
        "corpus.branching",
        "corpus.depth",
        "corpus.num_papers",
        "corpus.num_submissions",
        "corpus.num_authors",
        "corpus.num_reviewers",
        "corpus.num_queries",
        "corpus.num_methods",
        "corpus.citation_density",
        "corpus.words_per_field",
        "corpus.filler_words",
        "corpus.num_terms",
        "corpus.abstract_len",
        "paths.corpus",
        "paths.submissions",
        "paths.reviewers",
        "paths.judgments",
        "paths.search_log",
        "paths.checkpoint",
        "paths.vocab",
    ];

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let e = &mut self.encoder;
        let t = &mut self.train;
        let c = &mut self.corpus;
        match key {
            "run.seed" => {
                self.seed = parse(key, v)?;
                t.seed = self.seed;
                c.seed = self.seed;
            }
            "encoder.num_layers" => e.num_layers = parse(key, v)?,
            "encoder.hidden_dim" => e.hidden_dim = parse(key, v)?,
            "encoder.num_heads" => e.num_heads = parse(key, v)?,
            "encoder.ffn_dim" => e.ffn_dim = parse(key, v)?,
            "encoder.max_instruction_len" => e.max_instruction_len = parse(key, v)?,
            "encoder.max_paper_len" => e.max_paper_len = parse(key, v)?,
            "encoder.layer_norm_eps" => e.layer_norm_eps = parse(key, v)?,
            "encoder.normalize_embeddings" => e.normalize_embeddings = parse_bool(key, v)?,
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.batch_size" => t.batch_size = parse(key, v)?,
            "train.peak_lr" => t.peak_lr = parse(key, v)?,
            "train.weight_decay" => t.weight_decay = parse(key, v)?,
            "train.beta1" => t.adam_betas.0 = parse(key, v)?,
            "train.beta2" => t.adam_betas.1 = parse(key, v)?,
            "train.adam_eps" => t.adam_eps = parse(key, v)?,
            "train.hard_negatives" => t.hard_negatives = parse(key, v)?,
            "train.warmup_fraction" => t.warmup_fraction = parse(key, v)?,
            "train.max_grad_norm" => t.max_grad_norm = optional::<f64>(key, v)?,
            "train.in_batch_negatives" => t.in_batch_negatives = parse_bool(key, v)?,
            "train.use_instructions" => t.use_instructions = parse_bool(key, v)?,
            "train.max_samples_per_factor" => t.max_samples_per_factor = optional(key, v)?,
            "train.topic_positives_per_paper" => self.topic_positives_per_paper = parse(key, v)?,
            "train.vocab_min_freq" => self.vocab_min_freq = parse(key, v)?,
            "train.vocab_max_size" => self.vocab_max_size = parse(key, v)?,
            "chain.stage1_keep" => {
                self.chain.stage1_keep = parse_keep(key, v, keep_min(self.chain.stage1_keep))?
            }
            "chain.stage1_min" => {
                self.chain.stage1_keep = with_min(self.chain.stage1_keep, parse(key, v)?)
            }
            "chain.stage2_keep" => {
                self.chain.stage2_keep = parse_keep(key, v, keep_min(self.chain.stage2_keep))?
            }
            "chain.stage2_min" => {
                self.chain.stage2_keep = with_min(self.chain.stage2_keep, parse(key, v)?)
            }
            "chain.variant" => {
                self.chain.variant = v
                    .parse::<Variant>()
                    .map_err(|e| CofError::Config(format!("{key}: {e}")))?
            }
            "chain.normalize_scores" => self.chain.normalize_scores = parse_bool(key, v)?,
            "filter.years_back" => self.filter.years_back = optional(key, v)?,
            "filter.venues" => {
                let set: BTreeSet<String> = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect();
                self.filter.venues = (!set.is_empty()).then_some(set);
            }
            "filter.author_rank" => {
                self.filter.author_rank = v
                    .parse::<AuthorRank>()
                    .map_err(|e| CofError::Config(format!("{key}: {e}")))?
            }
            "filter.reference_year" => self.reference_year = parse(key, v)?,
            "eval.jaccard_thresholds" => {
                let parts: Vec<f64> = v
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_>>()?;
                self.jaccard_thresholds = parts.try_into().map_err(|_| {
                    CofError::Config(format!("{key}: expected three comma-separated values"))
                })?;
            }
            "corpus.top_fields" => c.top_fields = parse(key, v)?,
            "corpus.branching" => c.branching = parse(key, v)?,
            "corpus.depth" => c.depth = parse(key, v)?,
            "corpus.num_papers" => c.num_papers = parse(key, v)?,
            "corpus.num_submissions" => c.num_submissions = parse(key, v)?,
            "corpus.num_authors" => c.num_authors = parse(key, v)?,
            "corpus.num_reviewers" => c.num_reviewers = parse(key, v)?,
            "corpus.num_queries" => c.num_queries = parse(key, v)?,
            "corpus.num_methods" => c.num_methods = parse(key, v)?,
            "corpus.citation_density" => c.citation_density = parse(key, v)?,
            "corpus.words_per_field" => c.words_per_field = parse(key, v)?,
            "corpus.filler_words" => c.filler_words = parse(key, v)?,
            "corpus.num_terms" => c.num_terms = parse(key, v)?,
            "corpus.abstract_len" => c.abstract_len = parse(key, v)?,
            "paths.corpus" => self.paths.corpus = v.into(),
            "paths.submissions" => self.paths.submissions = v.into(),
            "paths.reviewers" => self.paths.reviewers = v.into(),
            "paths.judgments" => self.paths.judgments = v.into(),
            "paths.search_log" => self.paths.search_log = v.into(),
            "paths.checkpoint" => self.paths.checkpoint = v.into(),
            "paths.vocab" => self.paths.vocab = v.into(),
            other => return Err(CofError::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies the lines of a config file on top of `self`.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| CofError::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            self.set(key.trim(), value).map_err(|e| err(e.to_string()))?;
        }
        Ok(())
    }

    /// Applies `COF_SECTION_KEY` variables. Unknown `COF_` names are errors.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (name, value) in vars {
            let name = name.as_ref();
            let Some(rest) = name.strip_prefix("COF_") else {
                continue;
            };
            let key = Self::KEYS
                .iter()
                .find(|k| k.replace('.', "_").eq_ignore_ascii_case(rest))
                .ok_or_else(|| {
                    CofError::Config(format!("environment variable {name} names no config key"))
                })?;
            self.set(key, value.as_ref())
                .map_err(|e| CofError::Config(format!("{name}: {e}")))?;
        }
        Ok(())
    }

    /// Defaults, then the optional file, then the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| CofError::io(p, e))?;
            cfg.apply_text(&text, p)?;
        }
        cfg.apply_env(std::env::vars())?;
        Ok(cfg)
    }

    /// Current value of every key, as accepted by [`RunConfig::set`].
    pub fn get(&self, key: &str) -> Option<String> {
        let e = &self.encoder;
        let t = &self.train;
        let c = &self.corpus;
        let p = |x: &PathBuf| x.display().to_string();
        Some(match key {
            "run.seed" => self.seed.to_string(),
            "encoder.num_layers" => e.num_layers.to_string(),
            "encoder.hidden_dim" => e.hidden_dim.to_string(),
            "encoder.num_heads" => e.num_heads.to_string(),
            "encoder.ffn_dim" => e.ffn_dim.to_string(),
            "encoder.max_instruction_len" => e.max_instruction_len.to_string(),
            "encoder.max_paper_len" => e.max_paper_len.to_string(),
            "encoder.layer_norm_eps" => e.layer_norm_eps.to_string(),
            "encoder.normalize_embeddings" => e.normalize_embeddings.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.peak_lr" => t.peak_lr.to_string(),
            "train.weight_decay" => t.weight_decay.to_string(),
            "train.beta1" => t.adam_betas.0.to_string(),
            "train.beta2" => t.adam_betas.1.to_string(),
            "train.adam_eps" => t.adam_eps.to_string(),
            "train.hard_negatives" => t.hard_negatives.to_string(),
            "train.warmup_fraction" => t.warmup_fraction.to_string(),
            "train.max_grad_norm" => t.max_grad_norm.unwrap_or(0.0).to_string(),
            "train.in_batch_negatives" => t.in_batch_negatives.to_string(),
            "train.use_instructions" => t.use_instructions.to_string(),
            "train.max_samples_per_factor" => t.max_samples_per_factor.unwrap_or(0).to_string(),
            "train.topic_positives_per_paper" => self.topic_positives_per_paper.to_string(),
            "train.vocab_min_freq" => self.vocab_min_freq.to_string(),
            "train.vocab_max_size" => self.vocab_max_size.to_string(),
            "chain.stage1_keep" => keep_text(self.chain.stage1_keep),
            "chain.stage1_min" => keep_min(self.chain.stage1_keep).to_string(),
            "chain.stage2_keep" => keep_text(self.chain.stage2_keep),
            "chain.stage2_min" => keep_min(self.chain.stage2_keep).to_string(),
            "chain.variant" => self.chain.variant.to_string(),
            "chain.normalize_scores" => self.chain.normalize_scores.to_string(),
            "filter.years_back" => self.filter.years_back.unwrap_or(0).to_string(),
            "filter.venues" => self
                .filter
                .venues
                .as_ref()
                .map(|v| v.iter().cloned().collect::<Vec<_>>().join(","))
                .unwrap_or_default(),
            "filter.author_rank" => match self.filter.author_rank {
                AuthorRank::Any => "any",
                AuthorRank::First => "first",
                AuthorRank::Last => "last",
                AuthorRank::FirstOrLast => "first_or_last",
            }
            .to_string(),
            "filter.reference_year" => self.reference_year.to_string(),
            "eval.jaccard_thresholds" => self
                .jaccard_thresholds
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(","),
            "corpus.top_fields" => c.top_fields.to_string(),
            "corpus.branching" => c.branching.to_string(),
            "corpus.depth" => c.depth.to_string(),
            "corpus.num_papers" => c.num_papers.to_string(),
            "corpus.num_submissions" => c.num_submissions.to_string(),
            "corpus.num_authors" => c.num_authors.to_string(),
            "corpus.num_reviewers" => c.num_reviewers.to_string(),
            "corpus.num_queries" => c.num_queries.to_string(),
            "corpus.num_methods" => c.num_methods.to_string(),
            "corpus.citation_density" => c.citation_density.to_string(),
            "corpus.words_per_field" => c.words_per_field.to_string(),
            "corpus.filler_words" => c.filler_words.to_string(),
            "corpus.num_terms" => c.num_terms.to_string(),
            "corpus.abstract_len" => c.abstract_len.to_string(),
            "paths.corpus" => p(&self.paths.corpus),
            "paths.submissions" => p(&self.paths.submissions),
            "paths.reviewers" => p(&self.paths.reviewers),
            "paths.judgments" => p(&self.paths.judgments),
            "paths.search_log" => p(&self.paths.search_log),
            "paths.checkpoint" => p(&self.paths.checkpoint),
            "paths.vocab" => p(&self.paths.vocab),
            _ => return None,
        })
    }

    /// The whole configuration as config-file text.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).unwrap_or_default());
        }
        out
    }
}
