use std::collections::{BTreeMap, HashMap};

use crate::error::Result;
use crate::tokenizer::split_words;

use super::cascade::{order_reviewers, RankedReviewer, ReviewerScore};
use super::profile::ReviewerProfile;

/// Document frequencies over a reference corpus.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TfIdf {
    num_docs: usize,
    df: HashMap<String, usize>,
}

fn term_counts(text: &str) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for w in split_words(text) {
        if w.chars().any(char::is_alphanumeric) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

impl TfIdf {
    pub fn fit<'a>(docs: impl IntoIterator<Item = &'a str>) -> Self {
        let mut df = HashMap::new();
        let mut num_docs = 0;
        for d in docs {
            num_docs += 1;
            for term in term_counts(d).into_keys() {
                *df.entry(term).or_insert(0) += 1;
            }
        }
        Self { num_docs, df }
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    /// `ln(N / df)`, with `df` floored at 1.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.df.get(term).copied().unwrap_or(0).max(1);
        (self.num_docs.max(1) as f64 / df as f64).ln()
    }

    /// Raw term counts weighted by idf.
    pub fn vector(&self, text: &str) -> BTreeMap<String, f64> {
        term_counts(text)
            .into_iter()
            .map(|(t, c)| {
                let w = c as f64 * self.idf(&t);
                (t, w)
            })
            .collect()
    }
}

/// tf–idf dot product between the submission text and the concatenation of
/// the reviewer's profile texts; 0 for an empty profile.
pub fn tpms_score(paper_text: &str, profile_texts: &[&str], stats: &TfIdf) -> f64 {
    if profile_texts.is_empty() {
        return 0.0;
    }
    let p = stats.vector(paper_text);
    let r = stats.vector(&profile_texts.join(" "));
    p.iter()
        .filter_map(|(t, w)| r.get(t).map(|v| w * v))
        .sum()
}

/// Ranks reviewers by TPMS; `texts` maps paper ids to their text.
pub fn rank_reviewers_tpms(
    paper_text: &str,
    profiles: &[ReviewerProfile],
    texts: &HashMap<&str, String>,
    stats: &TfIdf,
) -> Result<Vec<RankedReviewer>> {
    let scores = profiles
        .iter()
        .map(|r| {
            let docs: Vec<&str> = r
                .paper_ids()
                .filter_map(|q| texts.get(q).map(String::as_str))
                .collect();
            let s = tpms_score(paper_text, &docs, stats);
            (
                r.reviewer_id.clone(),
                ReviewerScore {
                    total: s,
                    semantic: s,
                    topic: 0.0,
                    citation: 0.0,
                },
            )
        })
        .collect();
    Ok(order_reviewers(scores))
}
