//! Seeded synthetic corpus: a field hierarchy with signature pseudo-words,
//! papers written from their field path and method, year-ordered citations
//! biased toward shared fields, a click log, reviewers and graded judgments.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::Factor;
use crate::error::{CofError, Result};
use crate::evaluation::{jaccard_to_rating, DEFAULT_JACCARD_THRESHOLDS};
use crate::io::{CorpusRecord, FieldTag, Judgment, ReviewerRecord, SearchQuery, SearchResult};
use crate::tokenizer::split_words;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpusSpec {
    /// Fields at layer 1.
    pub top_fields: usize,
    /// Children per non-leaf field.
    pub branching: usize,
    /// Number of hierarchy layers; leaves sit at this layer.
    pub depth: usize,
    pub num_papers: usize,
    /// Papers of the target venue (year after the corpus) to be matched.
    pub num_submissions: usize,
    pub num_authors: usize,
    /// The first `num_reviewers` authors form the reviewer pool.
    pub num_reviewers: usize,
    pub num_queries: usize,
    pub num_methods: usize,
    /// Mean references per paper.
    pub citation_density: f64,
    /// Signature words per field and per method.
    pub words_per_field: usize,
    /// Size of the shared filler vocabulary.
    pub filler_words: usize,
    /// Size of the pool of paper-specific terms; abstracts mention their own
    /// term and those of the papers they cite.
    pub num_terms: usize,
    pub abstract_len: usize,
    pub first_year: u32,
    pub last_year: u32,
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            top_fields: 4,
            branching: 3,
            depth: 4,
            num_papers: 2000,
            num_submissions: 50,
            num_authors: 400,
            num_reviewers: 30,
            num_queries: 600,
            num_methods: 12,
            citation_density: 5.0,
            words_per_field: 3,
            filler_words: 60,
            num_terms: 150,
            abstract_len: 16,
            first_year: 2000,
            last_year: 2019,
            seed: 0,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CofError::Config(m));
        if self.top_fields == 0 || self.branching == 0 || self.depth < 3 {
            return bad("need at least one top field, branching >= 1 and depth >= 3".into());
        }
        if self.num_papers == 0 || self.num_authors == 0 || self.num_methods == 0 {
            return bad("papers, authors and methods must be positive".into());
        }
        if self.num_reviewers > self.num_authors {
            return bad(format!(
                "{} reviewers but only {} authors",
                self.num_reviewers, self.num_authors
            ));
        }
        if self.words_per_field == 0
            || self.filler_words == 0
            || self.num_terms == 0
            || self.abstract_len == 0
        {
            return bad("word counts must be positive".into());
        }
        if self.first_year > self.last_year || !(1000..9999).contains(&self.last_year) {
            return bad("invalid year range".into());
        }
        if !(self.citation_density >= 0.0 && self.citation_density.is_finite()) {
            return bad("citation density must be finite and >= 0".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldNode {
    pub name: String,
    pub layer: u8,
    pub parent: Option<usize>,
    pub words: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldHierarchy {
    pub fields: Vec<FieldNode>,
}

impl FieldHierarchy {
    /// Field indices from the root down to `leaf`.
    pub fn path(&self, leaf: usize) -> Vec<usize> {
        let mut out = vec![leaf];
        let mut cur = leaf;
        while let Some(p) = self.fields[cur].parent {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    pub fn at_layer(&self, layer: u8) -> Vec<usize> {
        (0..self.fields.len())
            .filter(|&i| self.fields[i].layer == layer)
            .collect()
    }

    pub fn tags(&self, leaf: usize) -> Vec<FieldTag> {
        self.path(leaf)
            .into_iter()
            .map(|i| FieldTag {
                name: self.fields[i].name.clone(),
                layer: self.fields[i].layer,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub hierarchy: FieldHierarchy,
    pub papers: Vec<CorpusRecord>,
    pub submissions: Vec<CorpusRecord>,
    pub reviewers: Vec<ReviewerRecord>,
    pub judgments: Vec<Judgment>,
    pub search_log: Vec<SearchQuery>,
}

struct WordSource {
    used: HashSet<String>,
}

impl WordSource {
    const CONSONANTS: &'static [u8] = b"bdfgklmnprstvz";
    const VOWELS: &'static [u8] = b"aeiou";

    fn new() -> Self {
        let used = Factor::MATCHING
            .iter()
            .chain(&[Factor::TopicClassification])
            .flat_map(|f| split_words(f.instruction()))
            .collect();
        Self { used }
    }

    fn fresh<R: Rng>(&mut self, rng: &mut R) -> String {
        loop {
            let syllables = rng.random_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push(*Self::CONSONANTS.choose(rng).unwrap() as char);
                w.push(*Self::VOWELS.choose(rng).unwrap() as char);
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn many<R: Rng>(&mut self, n: usize, rng: &mut R) -> Vec<String> {
        (0..n).map(|_| self.fresh(rng)).collect()
    }
}

struct Author {
    leaf: usize,
    method: usize,
}

struct Draft {
    leaf: usize,
    method: usize,
    year: u32,
    authors: Vec<usize>,
    venue: usize,
    term: usize,
}

/// Generates the corpus described by `spec`; the same spec yields the same
/// corpus.
pub fn generate_synthetic_corpus(spec: &SyntheticCorpusSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut words = WordSource::new();

    let mut fields = Vec::new();
    let mut frontier: Vec<Option<usize>> = vec![None];
    for layer in 1..=spec.depth {
        let mut next = Vec::new();
        for parent in frontier {
            let n = if parent.is_none() {
                spec.top_fields
            } else {
                spec.branching
            };
            for _ in 0..n {
                let w = words.many(spec.words_per_field, &mut rng);
                fields.push(FieldNode {
                    name: w.join(" "),
                    layer: layer as u8,
                    parent,
                    words: w,
                });
                next.push(Some(fields.len() - 1));
            }
        }
        frontier = next;
    }
    let hierarchy = FieldHierarchy { fields };
    let leaves = hierarchy.at_layer(spec.depth as u8);
    let venues = hierarchy.at_layer(2);
    let methods: Vec<Vec<String>> = (0..spec.num_methods)
        .map(|_| words.many(spec.words_per_field, &mut rng))
        .collect();
    let filler = words.many(spec.filler_words, &mut rng);
    let terms = words.many(spec.num_terms, &mut rng);

    // Reviewers work inside the first top field (the target venue's scope).
    let scope: Vec<usize> = leaves
        .iter()
        .copied()
        .filter(|&l| hierarchy.path(l)[0] == hierarchy.at_layer(1)[0])
        .collect();
    let authors: Vec<Author> = (0..spec.num_authors)
        .map(|a| Author {
            leaf: if a < spec.num_reviewers {
                *scope.choose(&mut rng).unwrap()
            } else {
                *leaves.choose(&mut rng).unwrap()
            },
            method: rng.random_range(0..spec.num_methods),
        })
        .collect();
    let ancestor = |leaf: usize, layer: usize| hierarchy.path(leaf)[layer - 1];

    let mut authors_by_l2: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, a) in authors.iter().enumerate() {
        authors_by_l2.entry(ancestor(a.leaf, 2)).or_default().push(i);
    }

    let draft = |rng: &mut ChaCha8Rng, lead: usize, year: u32| -> Draft {
        let a = &authors[lead];
        let leaf = if rng.random_bool(0.8) {
            a.leaf
        } else {
            let l2 = ancestor(a.leaf, 2);
            let siblings: Vec<usize> = leaves
                .iter()
                .copied()
                .filter(|&l| ancestor(l, 2) == l2)
                .collect();
            *siblings.choose(rng).unwrap()
        };
        let method = if rng.random_bool(0.5) {
            a.method
        } else {
            rng.random_range(0..spec.num_methods)
        };
        let mut team = vec![lead];
        let peers = &authors_by_l2[&ancestor(a.leaf, 2)];
        for _ in 0..rng.random_range(0..=2) {
            let co = if rng.random_bool(0.7) {
                *peers.choose(rng).unwrap()
            } else {
                rng.random_range(0..spec.num_authors)
            };
            if !team.contains(&co) {
                team.push(co);
            }
        }
        let own = venues.iter().position(|&v| v == ancestor(leaf, 2)).unwrap();
        let venue = if rng.random_bool(0.85) {
            own
        } else {
            rng.random_range(0..venues.len())
        };
        Draft {
            leaf,
            method,
            year,
            authors: team,
            venue,
            term: rng.random_range(0..spec.num_terms),
        }
    };

    let mut drafts: Vec<Draft> = (0..spec.num_papers)
        .map(|_| {
            let year = rng.random_range(spec.first_year..=spec.last_year);
            let lead = rng.random_range(0..spec.num_authors);
            draft(&mut rng, lead, year)
        })
        .collect();
    drafts.sort_by_key(|d| d.year);
    let target_year = spec.last_year + 1;
    let outsiders = spec.num_reviewers..spec.num_authors;
    let submission_drafts: Vec<Draft> = (0..spec.num_submissions)
        .map(|_| {
            let lead = if outsiders.is_empty() {
                0
            } else {
                rng.random_range(outsiders.clone())
            };
            let mut d = draft(&mut rng, lead, target_year);
            d.leaf = *scope.choose(&mut rng).unwrap();
            d.venue = venues.iter().position(|&v| v == ancestor(d.leaf, 2)).unwrap();
            d.authors.retain(|&a| a >= spec.num_reviewers || outsiders.is_empty());
            if d.authors.is_empty() {
                d.authors.push(lead);
            }
            d
        })
        .collect();

    let compose = |rng: &mut ChaCha8Rng, d: &Draft| -> (String, String) {
        let path = hierarchy.path(d.leaf);
        let m = &methods[d.method];
        let leaf_words = &hierarchy.fields[d.leaf].words;
        let mut title: Vec<&str> = m.choose_multiple(rng, 2).map(String::as_str).collect();
        title.extend(leaf_words.choose_multiple(rng, 2).map(String::as_str));
        title.push(terms[d.term].as_str());
        title.shuffle(rng);
        let groups: [(&[String], f64); 6] = [
            (leaf_words, 0.30),
            (&hierarchy.fields[path[path.len() - 2]].words, 0.20),
            (&hierarchy.fields[path[1]].words, 0.10),
            (&hierarchy.fields[path[0]].words, 0.05),
            (m, 0.20),
            (&filler, 0.15),
        ];
        let mut abstract_words: Vec<&str> = vec![terms[d.term].as_str()];
        abstract_words.extend((0..spec.abstract_len)
            .map(|_| {
                let mut u: f64 = rng.random();
                for (g, p) in &groups {
                    if u < *p {
                        return g.choose(rng).unwrap().as_str();
                    }
                    u -= p;
                }
                filler.choose(rng).unwrap().as_str()
            }));
        (title.join(" "), abstract_words.join(" "))
    };

    let l3_of: Vec<usize> = drafts.iter().map(|d| ancestor(d.leaf, 3)).collect();
    let mut by_l3: Vec<Vec<usize>> = vec![Vec::new(); hierarchy.fields.len()];
    let mut by_method: Vec<Vec<usize>> = vec![Vec::new(); spec.num_methods];
    for (i, d) in drafts.iter().enumerate() {
        by_l3[l3_of[i]].push(i);
        by_method[d.method].push(i);
    }
    let references = |rng: &mut ChaCha8Rng, d: &Draft| -> Vec<usize> {
        let earlier = drafts.partition_point(|e| e.year < d.year);
        if earlier == 0 {
            return Vec::new();
        }
        let prefix = |list: &[usize]| -> Vec<usize> {
            list[..list.partition_point(|&j| j < earlier)].to_vec()
        };
        let same_l3 = prefix(&by_l3[ancestor(d.leaf, 3)]);
        let same_leaf: Vec<usize> = same_l3
            .iter()
            .copied()
            .filter(|&j| drafts[j].leaf == d.leaf)
            .collect();
        let same_method = prefix(&by_method[d.method]);
        let max = (2.0 * spec.citation_density).round() as usize;
        let mut out = BTreeSet::new();
        for _ in 0..rng.random_range(0..=max) {
            let u: f64 = rng.random();
            let pick = if u < 0.75 && !same_leaf.is_empty() {
                *same_leaf.choose(rng).unwrap()
            } else if u < 0.95 && !same_l3.is_empty() {
                *same_l3.choose(rng).unwrap()
            } else if u < 0.98 && !same_method.is_empty() {
                *same_method.choose(rng).unwrap()
            } else {
                rng.random_range(0..earlier)
            };
            out.insert(pick);
        }
        out.into_iter().collect()
    };

    let paper_id = |i: usize| format!("P{:05}", i + 1);
    let author_id = |a: usize| format!("A{:04}", a + 1);
    let venue_name = |v: usize| format!("V{:02}", v + 1);
    let record = |rng: &mut ChaCha8Rng, id: String, d: &Draft| -> CorpusRecord {
        let (title, mut abstract_text) = compose(rng, d);
        let refs = references(rng, d);
        for &r in &refs {
            abstract_text.push(' ');
            abstract_text.push_str(&terms[drafts[r].term]);
        }
        CorpusRecord {
            id,
            title,
            abstract_text,
            year: Some(d.year),
            venue: Some(venue_name(d.venue)),
            authors: d.authors.iter().map(|&a| author_id(a)).collect(),
            fields: hierarchy.tags(d.leaf),
            references: refs.into_iter().map(paper_id).collect(),
        }
    };
    let papers: Vec<CorpusRecord> = drafts
        .iter()
        .enumerate()
        .map(|(i, d)| record(&mut rng, paper_id(i), d))
        .collect();
    let submissions: Vec<CorpusRecord> = submission_drafts
        .iter()
        .enumerate()
        .map(|(i, d)| record(&mut rng, format!("S{:04}", i + 1), d))
        .collect();

    let reviewers: Vec<ReviewerRecord> = (0..spec.num_reviewers)
        .map(|r| ReviewerRecord {
            reviewer_id: author_id(r),
            paper_ids: drafts
                .iter()
                .enumerate()
                .filter(|(_, d)| d.authors.contains(&r))
                .map(|(i, _)| paper_id(i))
                .collect(),
        })
        .collect();
    let field_set = |leaf: usize| -> BTreeSet<usize> { hierarchy.path(leaf).into_iter().collect() };
    let mut judgments = Vec::new();
    for (s, d) in submissions.iter().zip(&submission_drafts) {
        let fs = field_set(d.leaf);
        for (r, rec) in reviewers.iter().enumerate() {
            let score = jaccard_to_rating(&fs, &field_set(authors[r].leaf), DEFAULT_JACCARD_THRESHOLDS)?;
            judgments.push(Judgment {
                paper_id: s.id.clone(),
                reviewer_id: rec.reviewer_id.clone(),
                score,
            });
        }
    }

    let search_log = (0..spec.num_queries)
        .map(|_| {
            let src = rng.random_range(0..drafts.len());
            let mut terms = split_words(&papers[src].title);
            terms.shuffle(&mut rng);
            terms.truncate(3);
            let d = &drafts[src];
            let mut shown: Vec<SearchResult> = vec![SearchResult {
                doc_id: paper_id(src),
                score: rng.random_range(3..=14),
            }];
            let mut seen: BTreeSet<usize> = BTreeSet::from([src]);
            let similar: Vec<usize> = by_l3[l3_of[src]]
                .iter()
                .copied()
                .filter(|&j| drafts[j].leaf == d.leaf && drafts[j].method == d.method && j != src)
                .collect();
            for &j in similar.choose_multiple(&mut rng, 2) {
                seen.insert(j);
                shown.push(SearchResult {
                    doc_id: paper_id(j),
                    score: rng.random_range(1..=2),
                });
            }
            let l2 = ancestor(d.leaf, 2);
            let unclicked: Vec<usize> = (0..drafts.len())
                .filter(|&j| ancestor(drafts[j].leaf, 2) == l2 && drafts[j].leaf != d.leaf)
                .collect();
            for &j in unclicked.choose_multiple(&mut rng, 6) {
                if seen.insert(j) {
                    shown.push(SearchResult {
                        doc_id: paper_id(j),
                        score: 0,
                    });
                }
            }
            shown.shuffle(&mut rng);
            SearchQuery {
                query: terms.join(" "),
                results: shown,
            }
        })
        .collect();

    Ok(SyntheticCorpus {
        hierarchy,
        papers,
        submissions,
        reviewers,
        judgments,
        search_log,
    })
}
