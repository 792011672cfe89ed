//! Mean-rank probes: one query, 100 candidates, one of them relevant.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::Serialize;

use crate::encoder::{Embedder, Factor};
use crate::error::{CofError, Result};
use crate::io::CorpusRecord;
use crate::scalar::Scalar;

pub const PROBE_CANDIDATES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Semantic,
    Topic,
    Citation,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 3] = [ProbeKind::Semantic, ProbeKind::Topic, ProbeKind::Citation];

    /// Instruction used to score this probe; topic probes use the
    /// classification instruction.
    pub fn factor(self) -> Factor {
        match self {
            ProbeKind::Semantic => Factor::Semantic,
            ProbeKind::Topic => Factor::TopicClassification,
            ProbeKind::Citation => Factor::Citation,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProbeKind::Semantic => "semantic",
            ProbeKind::Topic => "topic",
            ProbeKind::Citation => "citation",
        }
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProbeKind {
    type Err = CofError;

    fn from_str(s: &str) -> Result<Self> {
        ProbeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| CofError::Usage(format!("unknown probe kind {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeTask {
    pub kind: ProbeKind,
    pub query: String,
    pub candidates: Vec<String>,
    pub relevant: usize,
}

impl ProbeTask {
    pub fn new(kind: ProbeKind, query: String, candidates: Vec<String>, relevant: usize) -> Result<Self> {
        if candidates.len() != PROBE_CANDIDATES {
            return Err(CofError::Input(format!(
                "probe task needs {PROBE_CANDIDATES} candidates, got {}",
                candidates.len()
            )));
        }
        if relevant >= candidates.len() {
            return Err(CofError::Input(format!(
                "relevant index {relevant} out of range"
            )));
        }
        Ok(Self {
            kind,
            query,
            candidates,
            relevant,
        })
    }

    /// Places `relevant` among `irrelevant` at a random position.
    fn assemble<R: Rng>(
        kind: ProbeKind,
        query: String,
        relevant: String,
        mut irrelevant: Vec<String>,
        rng: &mut R,
    ) -> Result<Self> {
        let pos = rng.random_range(0..=irrelevant.len());
        irrelevant.insert(pos, relevant);
        Self::new(kind, query, irrelevant, pos)
    }
}

/// 1-based rank of `relevant` when sorting scores descending. Ties place
/// the lower candidate index first.
pub fn rank_of(scores: &[f64], relevant: usize) -> usize {
    let s = scores[relevant];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < relevant))
        .count()
}

/// Scores every candidate of a probe task.
pub trait ProbeScorer {
    fn score(&mut self, task: &ProbeTask) -> Result<Vec<f64>>;
}

impl<F: FnMut(&ProbeTask) -> Result<Vec<f64>>> ProbeScorer for F {
    fn score(&mut self, task: &ProbeTask) -> Result<Vec<f64>> {
        self(task)
    }
}

/// Scores candidates by the dot product of query and candidate embeddings
/// under the probe's instruction, caching embeddings by text.
pub struct EmbeddingProbeScorer<'m, T> {
    embedder: Embedder<'m, T>,
    cache: HashMap<(Factor, String), Vec<T>>,
}

impl<'m, T: Scalar> EmbeddingProbeScorer<'m, T> {
    pub fn new(embedder: Embedder<'m, T>) -> Self {
        Self {
            embedder,
            cache: HashMap::new(),
        }
    }

    fn embed(&mut self, text: &str, factor: Factor) -> Result<Vec<T>> {
        let key = (factor, text.to_string());
        if let Some(v) = self.cache.get(&key) {
            return Ok(v.clone());
        }
        let v = self.embedder.embed(text, factor)?;
        self.cache.insert(key, v.clone());
        Ok(v)
    }
}

impl<T: Scalar> ProbeScorer for EmbeddingProbeScorer<'_, T> {
    fn score(&mut self, task: &ProbeTask) -> Result<Vec<f64>> {
        let factor = task.kind.factor();
        let q = self.embed(&task.query, factor)?;
        task.candidates
            .iter()
            .map(|c| {
                let e = self.embed(c, factor)?;
                Ok(q.iter().zip(&e).map(|(&a, &b)| a.as_f64() * b.as_f64()).sum())
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeResult {
    pub probe_kind: ProbeKind,
    pub mean_rank: f64,
    pub n_tasks: usize,
}

/// Mean rank of the relevant candidate per probe kind.
pub fn mean_rank_probe<S: ProbeScorer>(scorer: &mut S, tasks: &[ProbeTask]) -> Result<Vec<ProbeResult>> {
    let mut acc: BTreeMap<ProbeKind, (usize, usize)> = BTreeMap::new();
    for t in tasks {
        let scores = scorer.score(t)?;
        if scores.len() != t.candidates.len() {
            return Err(CofError::Input(format!(
                "scorer returned {} scores for {} candidates",
                scores.len(),
                t.candidates.len()
            )));
        }
        let e = acc.entry(t.kind).or_insert((0, 0));
        e.0 += rank_of(&scores, t.relevant);
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(probe_kind, (sum, n))| ProbeResult {
            probe_kind,
            mean_rank: sum as f64 / n as f64,
            n_tasks: n,
        })
        .collect())
}

/// Title-to-abstract retrieval: the query is a paper's title, the relevant
/// candidate its abstract, the others abstracts of pool papers.
pub fn semantic_probe_tasks<R: Rng>(
    queries: &[CorpusRecord],
    pool: &[CorpusRecord],
    rng: &mut R,
) -> Result<Vec<ProbeTask>> {
    let mut out = Vec::new();
    for p in queries {
        if p.title.is_empty() || p.abstract_text.is_empty() {
            continue;
        }
        let others: Vec<&CorpusRecord> = pool
            .iter()
            .filter(|q| q.id != p.id && !q.abstract_text.is_empty() && q.abstract_text != p.abstract_text)
            .collect();
        if others.len() < PROBE_CANDIDATES - 1 {
            log::warn!("semantic probe for {:?} skipped: too few other abstracts", p.id);
            continue;
        }
        let negatives = others
            .choose_multiple(rng, PROBE_CANDIDATES - 1)
            .map(|q| q.abstract_text.clone())
            .collect();
        out.push(ProbeTask::assemble(
            ProbeKind::Semantic,
            p.title.clone(),
            p.abstract_text.clone(),
            negatives,
            rng,
        )?);
    }
    Ok(out)
}

/// Topic classification: the query is the paper's text, the relevant
/// candidate the name of one of its fields, the others names of fields it
/// does not carry.
pub fn topic_probe_tasks<R: Rng>(
    queries: &[CorpusRecord],
    field_names: &[String],
    rng: &mut R,
) -> Result<Vec<ProbeTask>> {
    let mut out = Vec::new();
    for p in queries {
        let own: BTreeSet<&str> = p.fields.iter().map(|f| f.name.as_str()).collect();
        let Some(target) = p.fields.choose(rng) else {
            continue;
        };
        let others: Vec<&String> = field_names
            .iter()
            .filter(|n| !own.contains(n.as_str()))
            .collect();
        if others.len() < PROBE_CANDIDATES - 1 {
            log::warn!("topic probe for {:?} skipped: too few other fields", p.id);
            continue;
        }
        let negatives = others
            .choose_multiple(rng, PROBE_CANDIDATES - 1)
            .map(|n| (*n).clone())
            .collect();
        out.push(ProbeTask::assemble(
            ProbeKind::Topic,
            p.text(),
            target.name.clone(),
            negatives,
            rng,
        )?);
    }
    Ok(out)
}

/// Citation prediction: the relevant candidate is a paper the query cites;
/// the others come from `pool` (typically reviewers' papers) and are not
/// cited by the query. `corpus` resolves reference ids.
pub fn citation_probe_tasks<R: Rng>(
    queries: &[CorpusRecord],
    corpus: &HashMap<&str, &CorpusRecord>,
    pool: &[&CorpusRecord],
    rng: &mut R,
) -> Result<Vec<ProbeTask>> {
    let mut out = Vec::new();
    for p in queries {
        let cited: BTreeSet<&str> = p.references.iter().map(String::as_str).collect();
        let known: Vec<&CorpusRecord> = p
            .references
            .iter()
            .filter_map(|r| corpus.get(r.as_str()).copied())
            .collect();
        let Some(target) = known.choose(rng) else {
            continue;
        };
        let mut seen = BTreeSet::new();
        let others: Vec<&CorpusRecord> = pool
            .iter()
            .copied()
            .filter(|q| q.id != p.id && !cited.contains(q.id.as_str()) && seen.insert(q.id.as_str()))
            .collect();
        if others.len() < PROBE_CANDIDATES - 1 {
            log::warn!("citation probe for {:?} skipped: too few uncited candidates", p.id);
            continue;
        }
        let negatives = others
            .choose_multiple(rng, PROBE_CANDIDATES - 1)
            .map(|q| q.text())
            .collect();
        out.push(ProbeTask::assemble(
            ProbeKind::Citation,
            p.text(),
            target.text(),
            negatives,
            rng,
        )?);
    }
    Ok(out)
}
