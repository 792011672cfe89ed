//! Reviewer profiles, the semantic → topic → citation cascade with its
//! ablations, and the TPMS baseline.

mod cascade;
mod profile;
mod tpms;

pub use cascade::{
    aggregate_reviewer_scores, factor_score, flat_stage, order_reviewers, profile_union,
    rank_reviewers, run_stages, stage_citation, stage_semantic, stage_topic, ChainConfig,
    FactorEmbeddings, FactorScores, Keep, MatchEmbeddings, PaperEmbeddings, RankedReviewer,
    ReviewerScore, StageResult, Variant,
};
pub use profile::{build_profile, build_profiles, AuthorRank, ProfileFilter, ProfilePaper, ReviewerProfile};
pub use tpms::{rank_reviewers_tpms, tpms_score, TfIdf};

/// Mean of the `k` largest scores (all of them when fewer); `-inf` for an
/// empty list.
pub fn aggregate_topk_mean(scores: &[f64], k: usize) -> f64 {
    if scores.is_empty() || k == 0 {
        return f64::NEG_INFINITY;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.truncate(k);
    sorted.iter().sum::<f64>() / sorted.len() as f64
}
