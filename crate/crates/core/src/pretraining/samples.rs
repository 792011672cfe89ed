//! Factor-tagged training samples built from search logs, field annotations
//! and the citation graph.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::encoder::Factor;
use crate::io::{CorpusRecord, SearchQuery};

/// A text with a stable identity; identical ids are treated as the same
/// item when forming in-batch negatives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Item {
    pub id: String,
    pub text: String,
}

impl Item {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }

    pub fn paper(p: &CorpusRecord) -> Self {
        Self::new(p.id.clone(), p.text())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingSample {
    pub factor: Factor,
    pub anchor: Item,
    pub positive: Item,
    pub hard_negatives: Vec<Item>,
}

/// Queries and result entries dropped by [`build_semantic_samples`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SkipReport {
    /// Queries without any non-zero result.
    pub queries_without_clicks: usize,
    /// Result entries naming a document absent from the corpus.
    pub unknown_documents: usize,
}

/// Smallest field layer that counts as fine-grained for the topic factor.
pub const FINE_FIELD_LAYER: u8 = 3;

/// Default cap on topic positives per anchor paper.
pub const TOPIC_POSITIVES_PER_PAPER: usize = 10;

/// One sample per (query, document with non-zero score); hard negatives are
/// drawn from the zero-score documents of the same result list.
pub fn build_semantic_samples<R: Rng>(
    log: &[SearchQuery],
    papers: &HashMap<&str, &CorpusRecord>,
    hard_negatives: usize,
    rng: &mut R,
) -> (Vec<TrainingSample>, SkipReport) {
    let mut report = SkipReport::default();
    let mut out = Vec::new();
    for (qi, q) in log.iter().enumerate() {
        let mut clicked = Vec::new();
        let mut unclicked = Vec::new();
        for r in &q.results {
            match papers.get(r.doc_id.as_str()) {
                None => report.unknown_documents += 1,
                Some(p) if r.score > 0 => clicked.push(*p),
                Some(p) => unclicked.push(*p),
            }
        }
        if clicked.is_empty() {
            report.queries_without_clicks += 1;
            continue;
        }
        let anchor = Item::new(format!("query:{qi}"), q.query.clone());
        for p in clicked {
            out.push(TrainingSample {
                factor: Factor::Semantic,
                anchor: anchor.clone(),
                positive: Item::paper(p),
                hard_negatives: unclicked
                    .choose_multiple(rng, hard_negatives)
                    .map(|n| Item::paper(n))
                    .collect(),
            });
        }
    }
    (out, report)
}

/// True when the two papers share a field at layer 3 or deeper.
pub fn is_topic_positive(a: &CorpusRecord, b: &CorpusRecord) -> bool {
    let fa = a.fields_from_layer(FINE_FIELD_LAYER);
    b.fields_from_layer(FINE_FIELD_LAYER)
        .iter()
        .any(|f| fa.contains(f))
}

/// All unordered topic-positive pairs `(i, j)`, `i < j`, as corpus indices.
pub fn topic_positive_pairs(papers: &[CorpusRecord]) -> BTreeSet<(usize, usize)> {
    let mut by_field: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in papers.iter().enumerate() {
        for f in p.fields_from_layer(FINE_FIELD_LAYER) {
            by_field.entry(f).or_default().push(i);
        }
    }
    let mut pairs = BTreeSet::new();
    for members in by_field.values() {
        for (k, &i) in members.iter().enumerate() {
            for &j in &members[k + 1..] {
                if i != j {
                    pairs.insert((i.min(j), i.max(j)));
                }
            }
        }
    }
    pairs
}

/// Topic samples: for every paper, up to `cap` positives sharing a
/// fine-grained field, each with hard negatives from the same venue that
/// share no fine-grained field with the anchor.
pub fn build_topic_samples<R: Rng>(
    papers: &[CorpusRecord],
    cap: usize,
    hard_negatives: usize,
    rng: &mut R,
) -> Vec<TrainingSample> {
    let mut partners: Vec<Vec<usize>> = vec![Vec::new(); papers.len()];
    for (i, j) in topic_positive_pairs(papers) {
        partners[i].push(j);
        partners[j].push(i);
    }
    let mut by_venue: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in papers.iter().enumerate() {
        if let Some(v) = &p.venue {
            by_venue.entry(v.as_str()).or_default().push(i);
        }
    }
    let mut out = Vec::new();
    for (i, anchor) in papers.iter().enumerate() {
        let mut pos = partners[i].clone();
        pos.sort_unstable();
        if pos.len() > cap {
            pos.shuffle(rng);
            pos.truncate(cap);
            pos.sort_unstable();
        }
        if pos.is_empty() {
            continue;
        }
        let negative_pool: Vec<usize> = anchor
            .venue
            .as_deref()
            .and_then(|v| by_venue.get(v))
            .map(|members| {
                members
                    .iter()
                    .copied()
                    .filter(|&j| j != i && !is_topic_positive(anchor, &papers[j]))
                    .collect()
            })
            .unwrap_or_default();
        for j in pos {
            out.push(TrainingSample {
                factor: Factor::Topic,
                anchor: Item::paper(anchor),
                positive: Item::paper(&papers[j]),
                hard_negatives: negative_pool
                    .choose_multiple(rng, hard_negatives)
                    .map(|&n| Item::paper(&papers[n]))
                    .collect(),
            });
        }
    }
    out
}

/// Directed citation edges between papers of the corpus, as sorted index
/// lists. References to unknown ids and self-citations are dropped.
pub fn citation_graph(papers: &[CorpusRecord]) -> Vec<Vec<usize>> {
    let index: HashMap<&str, usize> = papers
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id.as_str(), i))
        .collect();
    papers
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut out: Vec<usize> = p
                .references
                .iter()
                .filter_map(|r| index.get(r.as_str()).copied())
                .filter(|&j| j != i)
                .collect();
            out.sort_unstable();
            out.dedup();
            out
        })
        .collect()
}

/// Every `(p, q⁺, q⁻)` with `p → q⁺`, `q⁺ → q⁻`, `q⁻ ≠ p` and no `p → q⁻`.
pub fn citation_triplets(graph: &[Vec<usize>]) -> BTreeSet<(usize, usize, usize)> {
    let mut out = BTreeSet::new();
    for (p, cited) in graph.iter().enumerate() {
        for &q in cited {
            for &n in &graph[q] {
                if n != p && cited.binary_search(&n).is_err() {
                    out.insert((p, q, n));
                }
            }
        }
    }
    out
}

/// One sample per citation edge `p → q⁺`; hard negatives are papers cited by
/// `q⁺` but not by `p`.
pub fn build_citation_samples<R: Rng>(
    papers: &[CorpusRecord],
    hard_negatives: usize,
    rng: &mut R,
) -> Vec<TrainingSample> {
    let graph = citation_graph(papers);
    let mut out = Vec::new();
    for (p, cited) in graph.iter().enumerate() {
        for &q in cited {
            let pool: Vec<usize> = graph[q]
                .iter()
                .copied()
                .filter(|&n| n != p && cited.binary_search(&n).is_err())
                .collect();
            out.push(TrainingSample {
                factor: Factor::Citation,
                anchor: Item::paper(&papers[p]),
                positive: Item::paper(&papers[q]),
                hard_negatives: pool
                    .choose_multiple(rng, hard_negatives)
                    .map(|&n| Item::paper(&papers[n]))
                    .collect(),
            });
        }
    }
    out
}

/// Builds the three per-factor datasets in a fixed order (semantic, topic,
/// citation) from one rng, logging how many search-log entries were skipped.
pub fn build_datasets<R: Rng>(
    papers: &[CorpusRecord],
    log: &[SearchQuery],
    topic_cap: usize,
    hard_negatives: usize,
    rng: &mut R,
) -> BTreeMap<Factor, Vec<TrainingSample>> {
    let index: HashMap<&str, &CorpusRecord> = papers.iter().map(|p| (p.id.as_str(), p)).collect();
    let (semantic, report) = build_semantic_samples(log, &index, hard_negatives, rng);
    if report != SkipReport::default() {
        log::warn!(
            "search log: {} unknown documents, {} queries without clicks",
            report.unknown_documents,
            report.queries_without_clicks
        );
    }
    let topic = build_topic_samples(papers, topic_cap, hard_negatives, rng);
    let citation = build_citation_samples(papers, hard_negatives, rng);
    BTreeMap::from([
        (Factor::Semantic, semantic),
        (Factor::Topic, topic),
        (Factor::Citation, citation),
    ])
}

/// Texts a training vocabulary should cover: paper texts, queries, field
/// names and every instruction.
pub fn vocabulary_texts(papers: &[CorpusRecord], log: &[SearchQuery], field_names: &[String]) -> Vec<String> {
    let mut texts: Vec<String> = papers.iter().map(CorpusRecord::text).collect();
    texts.extend(log.iter().map(|q| q.query.clone()));
    texts.extend(field_names.iter().cloned());
    let instructed = Factor::MATCHING.into_iter().chain([Factor::TopicClassification]);
    texts.extend(instructed.map(|f| f.instruction().to_string()));
    texts
}
