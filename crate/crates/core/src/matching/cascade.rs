use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::encoder::{Embedder, Factor};
use crate::error::{CofError, Result};
use crate::scalar::Scalar;

use super::profile::ReviewerProfile;

/// How many candidates a stage keeps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Keep {
    /// `ceil(fraction · n)`, at least `min`.
    Fraction { fraction: f64, min: usize },
    Count(usize),
}

impl Keep {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Keep::Fraction { fraction, .. } if !(fraction > 0.0 && fraction <= 1.0) => Err(
                CofError::Config(format!("keep fraction {fraction} outside (0, 1]")),
            ),
            Keep::Count(0) => Err(CofError::Config("keep count must be at least 1".into())),
            _ => Ok(()),
        }
    }

    /// Survivors out of `n` candidates: never more than `n`, never fewer
    /// than one when `n > 0`.
    pub fn count(&self, n: usize) -> usize {
        if n == 0 {
            return 0;
        }
        let k = match *self {
            Keep::Fraction { fraction, min } => {
                ((fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).max(min)
            }
            Keep::Count(c) => c,
        };
        k.clamp(1, n)
    }
}

impl fmt::Display for Keep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Keep::Fraction { fraction, min } => write!(f, "{fraction} (min {min})"),
            Keep::Count(c) => write!(f, "{c}"),
        }
    }
}

/// Ranking variants: the chain, its ablations and two flat baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Variant {
    /// S → T → (S+T+C).
    Cof,
    /// The chain over one factor-agnostic embedding.
    NoInstruction,
    S,
    T,
    C,
    /// All three factors summed over the whole profile.
    SPlusTPlusC,
    /// The chain scoring only the citation factor at the end.
    SThenTThenC,
    Tpms,
    /// Mean of the three best semantic paper scores.
    Top3,
}

impl Variant {
    pub const ABLATIONS: [Variant; 7] = [
        Variant::Cof,
        Variant::NoInstruction,
        Variant::S,
        Variant::T,
        Variant::C,
        Variant::SPlusTPlusC,
        Variant::SThenTThenC,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Cof => "cof",
            Variant::NoInstruction => "no_instruction",
            Variant::S => "s",
            Variant::T => "t",
            Variant::C => "c",
            Variant::SPlusTPlusC => "s+t+c",
            Variant::SThenTThenC => "s->t->c",
            Variant::Tpms => "tpms",
            Variant::Top3 => "top3",
        }
    }

    fn is_cascade(self) -> bool {
        matches!(self, Variant::Cof | Variant::NoInstruction | Variant::SThenTThenC)
    }

    /// Factors a flat variant sums over the whole profile.
    fn flat_factors(self) -> &'static [Factor] {
        match self {
            Variant::S | Variant::Top3 => &[Factor::Semantic],
            Variant::T => &[Factor::Topic],
            Variant::C => &[Factor::Citation],
            Variant::SPlusTPlusC => &Factor::MATCHING,
            _ => &[],
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = CofError;

    fn from_str(s: &str) -> Result<Self> {
        let all = Variant::ABLATIONS
            .into_iter()
            .chain([Variant::Tpms, Variant::Top3]);
        let alias = match s {
            "noinstruction" | "no-instruction" => "no_instruction",
            "s_t_c" | "stc" => "s+t+c",
            "s_then_t_then_c" | "s-t-c" => "s->t->c",
            other => other,
        };
        all.into_iter().find(|v| v.as_str() == alias).ok_or_else(|| {
            CofError::Usage(format!(
                "unknown variant {s:?} (cof, no_instruction, s, t, c, s+t+c, s->t->c, tpms, top3)"
            ))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainConfig {
    pub stage1_keep: Keep,
    pub stage2_keep: Keep,
    pub variant: Variant,
    /// Standardize each factor's scores over the papers scored at a stage
    /// before they are summed.
    pub normalize_scores: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            stage1_keep: Keep::Fraction {
                fraction: 0.01,
                min: 10,
            },
            stage2_keep: Keep::Fraction {
                fraction: 0.5,
                min: 5,
            },
            variant: Variant::Cof,
            normalize_scores: false,
        }
    }
}

/// Per-factor relevance of one candidate paper; `None` until scored.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FactorScores {
    pub semantic: Option<f64>,
    pub topic: Option<f64>,
    pub citation: Option<f64>,
}

impl FactorScores {
    pub fn get(&self, f: Factor) -> Option<f64> {
        match f {
            Factor::Semantic => self.semantic,
            Factor::Topic => self.topic,
            Factor::Citation => self.citation,
            Factor::TopicClassification => None,
        }
    }

    fn set(&mut self, f: Factor, v: f64) {
        match f {
            Factor::Semantic => self.semantic = Some(v),
            Factor::Topic => self.topic = Some(v),
            Factor::Citation => self.citation = Some(v),
            Factor::TopicClassification => {}
        }
    }
}

/// Candidates surviving a stage with every score gathered so far.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageResult {
    /// Survivor ids in stage order (score descending, id ascending).
    pub survivors: Vec<String>,
    pub scores: BTreeMap<String, FactorScores>,
}

/// Factor-specific embeddings of papers, looked up by id.
pub trait PaperEmbeddings {
    fn embedding(&self, id: &str, factor: Factor) -> Option<&[f64]>;
}

/// In-memory per-factor embedding tables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FactorEmbeddings {
    tables: BTreeMap<Factor, HashMap<String, Vec<f64>>>,
}

impl FactorEmbeddings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, factor: Factor, id: impl Into<String>, vector: Vec<f64>) {
        self.tables.entry(factor).or_default().insert(id.into(), vector);
    }

    /// Embeds `(id, text)` pairs under every matching factor. With an
    /// uninstructed embedder each text is encoded once and shared by all
    /// factors.
    pub fn compute<'a, T: Scalar>(
        embedder: &mut Embedder<'_, T>,
        texts: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self> {
        let mut out = Self::new();
        for (id, text) in texts {
            if embedder.is_instructed() {
                for f in Factor::MATCHING {
                    let v = embedder.embed(text, f)?;
                    out.insert(f, id, v.iter().map(|x| x.as_f64()).collect());
                }
            } else {
                let v: Vec<f64> = embedder
                    .embed(text, Factor::Semantic)?
                    .iter()
                    .map(|x| x.as_f64())
                    .collect();
                for f in Factor::MATCHING {
                    out.insert(f, id, v.clone());
                }
            }
        }
        Ok(out)
    }

    pub fn len(&self, factor: Factor) -> usize {
        self.tables.get(&factor).map_or(0, HashMap::len)
    }
}

impl PaperEmbeddings for FactorEmbeddings {
    fn embedding(&self, id: &str, factor: Factor) -> Option<&[f64]> {
        self.tables.get(&factor)?.get(id).map(Vec::as_slice)
    }
}

fn lookup<'e, E: PaperEmbeddings + ?Sized>(emb: &'e E, id: &str, f: Factor) -> Result<&'e [f64]> {
    emb.embedding(id, f)
        .ok_or_else(|| CofError::Input(format!("no {f} embedding for paper {id:?}")))
}

/// `g(p|φ)ᵀ g(q|φ)`.
pub fn factor_score<E: PaperEmbeddings + ?Sized>(emb: &E, p: &str, q: &str, f: Factor) -> Result<f64> {
    let a = lookup(emb, p, f)?;
    let b = lookup(emb, q, f)?;
    if a.len() != b.len() {
        return Err(CofError::Shape {
            op: "factor_score",
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

fn standardize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    for v in values.iter_mut() {
        *v = if sd > 0.0 { (*v - mean) / sd } else { *v - mean };
    }
}

/// Descending score order in which `0.0` and `-0.0` tie.
fn descending(a: f64, b: f64) -> Ordering {
    if a == b {
        Ordering::Equal
    } else {
        b.total_cmp(&a)
    }
}

/// Scores `candidates` under `factor`, records the scores in `scores`, and
/// returns the top `keep` ids (score descending, id ascending).
fn score_and_prune<E: PaperEmbeddings + ?Sized>(
    p: &str,
    candidates: &[String],
    emb: &E,
    factor: Factor,
    keep: Option<Keep>,
    normalize: bool,
    scores: &mut BTreeMap<String, FactorScores>,
) -> Result<Vec<String>> {
    let mut values = candidates
        .iter()
        .map(|q| factor_score(emb, p, q, factor))
        .collect::<Result<Vec<f64>>>()?;
    if normalize {
        standardize(&mut values);
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        descending(values[a], values[b]).then_with(|| candidates[a].cmp(&candidates[b]))
    });
    let k = keep.map_or(candidates.len(), |k| k.count(candidates.len()));
    order.truncate(k);
    for (q, &v) in candidates.iter().zip(&values) {
        scores.entry(q.clone()).or_default().set(factor, v);
    }
    let survivors: Vec<String> = order.iter().map(|&i| candidates[i].clone()).collect();
    let alive: BTreeSet<&str> = survivors.iter().map(String::as_str).collect();
    scores.retain(|q, _| alive.contains(q.as_str()));
    Ok(survivors)
}

/// Union of all profile papers, sorted and deduplicated.
pub fn profile_union(profiles: &[ReviewerProfile]) -> Vec<String> {
    let set: BTreeSet<&str> = profiles.iter().flat_map(|r| r.paper_ids()).collect();
    set.into_iter().map(str::to_string).collect()
}

/// First stage: semantic scores over every profile paper, pruned to the top
/// `keep`.
pub fn stage_semantic<E: PaperEmbeddings + ?Sized>(
    p: &str,
    profiles: &[ReviewerProfile],
    emb: &E,
    keep: Keep,
    normalize: bool,
) -> Result<StageResult> {
    let candidates = profile_union(profiles);
    if candidates.is_empty() {
        log::warn!("no profile papers to score for {p:?}");
        return Ok(StageResult::default());
    }
    let mut scores = BTreeMap::new();
    let survivors = score_and_prune(p, &candidates, emb, Factor::Semantic, Some(keep), normalize, &mut scores)?;
    Ok(StageResult { survivors, scores })
}

/// Second stage: topic scores over the semantic survivors, pruned again.
pub fn stage_topic<E: PaperEmbeddings + ?Sized>(
    p: &str,
    prior: &StageResult,
    emb: &E,
    keep: Keep,
    normalize: bool,
) -> Result<StageResult> {
    let mut candidates = prior.survivors.clone();
    candidates.sort();
    let mut scores = prior.scores.clone();
    let survivors = score_and_prune(p, &candidates, emb, Factor::Topic, Some(keep), normalize, &mut scores)?;
    Ok(StageResult { survivors, scores })
}

/// Third stage: adds citation scores to the topic survivors without pruning.
pub fn stage_citation<E: PaperEmbeddings + ?Sized>(
    p: &str,
    prior: &StageResult,
    emb: &E,
    normalize: bool,
) -> Result<StageResult> {
    let mut candidates = prior.survivors.clone();
    candidates.sort();
    let mut scores = prior.scores.clone();
    score_and_prune(p, &candidates, emb, Factor::Citation, None, normalize, &mut scores)?;
    Ok(StageResult {
        survivors: prior.survivors.clone(),
        scores,
    })
}

/// A reviewer's aggregated score with its per-factor parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReviewerScore {
    pub total: f64,
    pub semantic: f64,
    pub topic: f64,
    pub citation: f64,
}

impl ReviewerScore {
    pub const EMPTY: ReviewerScore = ReviewerScore {
        total: f64::NEG_INFINITY,
        semantic: 0.0,
        topic: 0.0,
        citation: 0.0,
    };
}

/// Sums the selected factors over the reviewer's papers that appear in
/// `scores`; `-inf` when none does.
fn sum_over_profile(
    profile: &ReviewerProfile,
    scores: &BTreeMap<String, FactorScores>,
    total_factors: &[Factor],
) -> ReviewerScore {
    let mut out = ReviewerScore {
        total: 0.0,
        semantic: 0.0,
        topic: 0.0,
        citation: 0.0,
    };
    let mut any = false;
    for q in profile.paper_ids() {
        let Some(s) = scores.get(q) else { continue };
        any = true;
        let mut paper_total = 0.0;
        for &f in total_factors {
            paper_total += s.get(f).unwrap_or(0.0);
        }
        out.total += paper_total;
        out.semantic += s.semantic.unwrap_or(0.0);
        out.topic += s.topic.unwrap_or(0.0);
        out.citation += s.citation.unwrap_or(0.0);
    }
    if any {
        out
    } else {
        ReviewerScore::EMPTY
    }
}

/// Reviewer scores from the final stage. Chain variants sum over each
/// reviewer's surviving papers; flat variants expect `stage` to hold scores
/// for every profile paper.
pub fn aggregate_reviewer_scores(
    stage: &StageResult,
    profiles: &[ReviewerProfile],
    variant: Variant,
) -> BTreeMap<String, ReviewerScore> {
    let factors: &[Factor] = match variant {
        Variant::Cof | Variant::NoInstruction => &Factor::MATCHING,
        Variant::SThenTThenC => &[Factor::Citation],
        other => other.flat_factors(),
    };
    profiles
        .iter()
        .map(|r| (r.reviewer_id.clone(), sum_over_profile(r, &stage.scores, factors)))
        .collect()
}

/// Scores every profile paper under `factors` without pruning.
pub fn flat_stage<E: PaperEmbeddings + ?Sized>(
    p: &str,
    profiles: &[ReviewerProfile],
    emb: &E,
    factors: &[Factor],
    normalize: bool,
) -> Result<StageResult> {
    let candidates = profile_union(profiles);
    let mut scores = BTreeMap::new();
    for &f in factors {
        score_and_prune(p, &candidates, emb, f, None, normalize, &mut scores)?;
    }
    Ok(StageResult {
        survivors: candidates,
        scores,
    })
}

/// Runs the stages a variant needs and returns the final stage.
pub fn run_stages<E: PaperEmbeddings + ?Sized>(
    p: &str,
    profiles: &[ReviewerProfile],
    emb: &E,
    config: &ChainConfig,
) -> Result<StageResult> {
    let v = config.variant;
    let norm = config.normalize_scores;
    if v.is_cascade() {
        let s1 = stage_semantic(p, profiles, emb, config.stage1_keep, norm)?;
        if s1.survivors.is_empty() {
            return Ok(s1);
        }
        let s2 = stage_topic(p, &s1, emb, config.stage2_keep, norm)?;
        stage_citation(p, &s2, emb, norm)
    } else {
        flat_stage(p, profiles, emb, v.flat_factors(), norm)
    }
}

/// One row of a reviewer ranking.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedReviewer {
    pub reviewer_id: String,
    /// 1-based.
    pub rank: usize,
    pub f_total: f64,
    pub f_semantic: f64,
    pub f_topic: f64,
    pub f_citation: f64,
}

/// Orders reviewers by total descending, ties and `-inf` scores by id.
pub fn order_reviewers(scores: BTreeMap<String, ReviewerScore>) -> Vec<RankedReviewer> {
    let mut rows: Vec<(String, ReviewerScore)> = scores.into_iter().collect();
    rows.sort_by(|a, b| descending(a.1.total, b.1.total).then_with(|| a.0.cmp(&b.0)));
    rows.into_iter()
        .enumerate()
        .map(|(i, (id, s))| RankedReviewer {
            reviewer_id: id,
            rank: i + 1,
            f_total: s.total,
            f_semantic: s.semantic,
            f_topic: s.topic,
            f_citation: s.citation,
        })
        .collect()
}

/// Embeddings available to the ranking: factor-specific tables and,
/// optionally, factor-agnostic ones for the no-instruction variant.
#[derive(Clone, Copy)]
pub struct MatchEmbeddings<'a> {
    pub instructed: &'a dyn PaperEmbeddings,
    pub agnostic: Option<&'a dyn PaperEmbeddings>,
}

/// Ranks reviewers for submission `p` under `config.variant`. The TPMS
/// variant is handled by [`super::rank_reviewers_tpms`].
pub fn rank_reviewers(
    p: &str,
    profiles: &[ReviewerProfile],
    emb: MatchEmbeddings<'_>,
    config: &ChainConfig,
) -> Result<Vec<RankedReviewer>> {
    config.stage1_keep.validate()?;
    config.stage2_keep.validate()?;
    let table: &dyn PaperEmbeddings = match config.variant {
        Variant::NoInstruction => emb.agnostic.ok_or_else(|| {
            CofError::Usage("no_instruction variant needs factor-agnostic embeddings".into())
        })?,
        Variant::Tpms => {
            return Err(CofError::Usage(
                "tpms ranks from text, not embeddings".into(),
            ))
        }
        _ => emb.instructed,
    };
    if config.variant == Variant::Top3 {
        let stage = flat_stage(p, profiles, table, &[Factor::Semantic], false)?;
        let scores = profiles
            .iter()
            .map(|r| {
                let vals: Vec<f64> = r
                    .paper_ids()
                    .filter_map(|q| stage.scores.get(q).and_then(|s| s.semantic))
                    .collect();
                let total = super::aggregate_topk_mean(&vals, 3);
                let s = ReviewerScore {
                    total,
                    semantic: total,
                    topic: 0.0,
                    citation: 0.0,
                };
                (r.reviewer_id.clone(), if total.is_finite() { s } else { ReviewerScore::EMPTY })
            })
            .collect();
        return Ok(order_reviewers(scores));
    }
    let stage = run_stages(p, profiles, table, config)?;
    Ok(order_reviewers(aggregate_reviewer_scores(&stage, profiles, config.variant)))
}
