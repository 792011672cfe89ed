use std::collections::{BTreeSet, HashMap};
use std::str::FromStr;

use crate::error::{CofError, Result};
use crate::io::{CorpusRecord, ReviewerRecord};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AuthorRank {
    #[default]
    Any,
    First,
    Last,
    FirstOrLast,
}

impl FromStr for AuthorRank {
    type Err = CofError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "any" => Ok(AuthorRank::Any),
            "first" => Ok(AuthorRank::First),
            "last" => Ok(AuthorRank::Last),
            "first_or_last" | "first|last" => Ok(AuthorRank::FirstOrLast),
            other => Err(CofError::Usage(format!(
                "unknown author rank {other:?} (any, first, last, first_or_last)"
            ))),
        }
    }
}

/// Profile filters; all active filters must hold.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProfileFilter {
    /// Keep papers from the `years_back` years before the reference year.
    pub years_back: Option<u32>,
    pub venues: Option<BTreeSet<String>>,
    pub author_rank: AuthorRank,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfilePaper {
    pub id: String,
    pub year: Option<u32>,
    pub venue: Option<String>,
    /// 0-based position of the reviewer in the author list, if listed.
    pub author_position: Option<usize>,
    pub num_authors: usize,
}

impl ProfilePaper {
    fn is_first(&self) -> bool {
        self.author_position == Some(0)
    }

    fn is_last(&self) -> bool {
        self.author_position
            .is_some_and(|p| p + 1 == self.num_authors)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReviewerProfile {
    pub reviewer_id: String,
    pub papers: Vec<ProfilePaper>,
}

impl ReviewerProfile {
    pub fn paper_ids(&self) -> impl Iterator<Item = &str> {
        self.papers.iter().map(|p| p.id.as_str())
    }
}

impl ProfileFilter {
    fn keeps(&self, p: &ProfilePaper, reference_year: u32) -> bool {
        if let Some(y) = self.years_back {
            let from = reference_year.saturating_sub(y);
            if !p.year.is_some_and(|py| py >= from && py < reference_year) {
                return false;
            }
        }
        if let Some(v) = &self.venues {
            if !p.venue.as_ref().is_some_and(|pv| v.contains(pv)) {
                return false;
            }
        }
        match self.author_rank {
            AuthorRank::Any => true,
            AuthorRank::First => p.is_first(),
            AuthorRank::Last => p.is_last(),
            AuthorRank::FirstOrLast => p.is_first() || p.is_last(),
        }
    }
}

/// Builds a profile from the reviewer's papers, applying `filter` relative to
/// `reference_year`. Papers are ordered by year (newest first, undated
/// last) then id; duplicates are dropped.
pub fn build_profile(
    reviewer_id: &str,
    papers: &[&CorpusRecord],
    filter: &ProfileFilter,
    reference_year: u32,
) -> ReviewerProfile {
    let mut seen = BTreeSet::new();
    let mut kept: Vec<ProfilePaper> = papers
        .iter()
        .filter(|p| seen.insert(p.id.as_str()))
        .map(|p| ProfilePaper {
            id: p.id.clone(),
            year: p.year,
            venue: p.venue.clone(),
            author_position: p.authors.iter().position(|a| a == reviewer_id),
            num_authors: p.authors.len(),
        })
        .filter(|p| filter.keeps(p, reference_year))
        .collect();
    kept.sort_by(|a, b| {
        b.year
            .cmp(&a.year)
            .then_with(|| a.id.cmp(&b.id))
    });
    if kept.is_empty() {
        log::warn!("reviewer {reviewer_id:?} has an empty profile after filtering");
    }
    ReviewerProfile {
        reviewer_id: reviewer_id.to_string(),
        papers: kept,
    }
}

/// Builds every reviewer's profile from reviewer records; paper ids missing
/// from the corpus are skipped with a warning.
pub fn build_profiles(
    reviewers: &[ReviewerRecord],
    corpus: &HashMap<&str, &CorpusRecord>,
    filter: &ProfileFilter,
    reference_year: u32,
) -> Vec<ReviewerProfile> {
    reviewers
        .iter()
        .map(|r| {
            let papers: Vec<&CorpusRecord> = r
                .paper_ids
                .iter()
                .filter_map(|id| {
                    let found = corpus.get(id.as_str()).copied();
                    if found.is_none() {
                        log::warn!("reviewer {:?}: unknown paper {id:?}", r.reviewer_id);
                    }
                    found
                })
                .collect();
            build_profile(&r.reviewer_id, &papers, filter, reference_year)
        })
        .collect()
}
