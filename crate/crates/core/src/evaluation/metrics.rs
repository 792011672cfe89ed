use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::Serialize;

use crate::io::Judgment;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrecisionMode {
    /// Scores of 2 or 3 count as relevant.
    Soft,
    /// Only a score of 3 counts.
    Hard,
}

impl PrecisionMode {
    fn relevant(self, score: u8) -> bool {
        match self {
            PrecisionMode::Soft => score >= 2,
            PrecisionMode::Hard => score == 3,
        }
    }
}

/// Judgment scores of the ranked reviewers that have a judgment for this
/// paper, in ranking order. Reviewers without a judgment are skipped.
fn judged_scores(ranked: &[String], judgments: &HashMap<&str, u8>) -> Vec<u8> {
    ranked
        .iter()
        .filter_map(|r| judgments.get(r.as_str()).copied())
        .collect()
}

fn warn_short(len: usize, k: usize) {
    if len < k {
        log::warn!("only {len} judged reviewers for P@{k}; dividing by {k} regardless");
    }
}

/// Fraction of the top `k` judged reviewers that are relevant, over `k`.
pub fn precision_at_k(
    ranked: &[String],
    judgments: &HashMap<&str, u8>,
    k: usize,
    mode: PrecisionMode,
) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let scores = judged_scores(ranked, judgments);
    warn_short(scores.len(), k);
    let hits = scores.iter().take(k).filter(|&&s| mode.relevant(s)).count();
    hits as f64 / k as f64
}

/// Sum of the top `k` judgment scores over `3k`.
pub fn precision_at_k_liu(ranked: &[String], judgments: &HashMap<&str, u8>, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let scores = judged_scores(ranked, judgments);
    warn_short(scores.len(), k);
    let total: u32 = scores.iter().take(k).map(|&s| s as u32).sum();
    total as f64 / (3 * k) as f64
}

/// Soft precision with denominator `min(k, |R_p|)`.
pub fn precision_at_k_anjum(ranked: &[String], judgments: &HashMap<&str, u8>, k: usize) -> f64 {
    let scores = judged_scores(ranked, judgments);
    let n = k.min(scores.len());
    if n == 0 {
        return 0.0;
    }
    let hits = scores.iter().take(n).filter(|&&s| s >= 2).count();
    hits as f64 / n as f64
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PaperMetrics {
    pub paper_id: String,
    pub soft_p5: f64,
    pub soft_p10: f64,
    pub hard_p5: f64,
    pub hard_p10: f64,
    pub liu_p5: f64,
    pub liu_p10: f64,
    pub anjum_p5: f64,
    pub anjum_p10: f64,
}

impl PaperMetrics {
    fn compute(paper_id: &str, ranked: &[String], judgments: &HashMap<&str, u8>) -> Self {
        use PrecisionMode::{Hard, Soft};
        Self {
            paper_id: paper_id.to_string(),
            soft_p5: precision_at_k(ranked, judgments, 5, Soft),
            soft_p10: precision_at_k(ranked, judgments, 10, Soft),
            hard_p5: precision_at_k(ranked, judgments, 5, Hard),
            hard_p10: precision_at_k(ranked, judgments, 10, Hard),
            liu_p5: precision_at_k_liu(ranked, judgments, 5),
            liu_p10: precision_at_k_liu(ranked, judgments, 10),
            anjum_p5: precision_at_k_anjum(ranked, judgments, 5),
            anjum_p10: precision_at_k_anjum(ranked, judgments, 10),
        }
    }

    fn values(&self) -> [f64; 8] {
        [
            self.soft_p5,
            self.soft_p10,
            self.hard_p5,
            self.hard_p10,
            self.liu_p5,
            self.liu_p10,
            self.anjum_p5,
            self.anjum_p10,
        ]
    }
}

/// Metrics averaged over papers, plus the per-paper breakdown.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricReport {
    pub soft_p5: f64,
    pub soft_p10: f64,
    pub hard_p5: f64,
    pub hard_p10: f64,
    pub liu_p5: f64,
    pub liu_p10: f64,
    pub anjum_p5: f64,
    pub anjum_p10: f64,
    /// Mean of soft/hard P@5 and P@10.
    pub average: f64,
    pub per_paper: Vec<PaperMetrics>,
}

impl MetricReport {
    pub const NAMES: [&'static str; 9] = [
        "soft_p5", "soft_p10", "hard_p5", "hard_p10", "liu_p5", "liu_p10", "anjum_p5",
        "anjum_p10", "average",
    ];

    pub fn values(&self) -> [f64; 9] {
        [
            self.soft_p5,
            self.soft_p10,
            self.hard_p5,
            self.hard_p10,
            self.liu_p5,
            self.liu_p10,
            self.anjum_p5,
            self.anjum_p10,
            self.average,
        ]
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>8}", "metric", "value")?;
        for (name, v) in Self::NAMES.iter().zip(self.values()) {
            writeln!(f, "{name:<10} {:>8.4}", v)?;
        }
        write!(f, "papers     {:>8}", self.per_paper.len())
    }
}

/// Evaluates rankings (paper id → reviewer ids, best first) against
/// judgments. Every judged paper is evaluated; a judged paper without a
/// ranking scores zero.
pub fn evaluate(rankings: &BTreeMap<String, Vec<String>>, judgments: &[Judgment]) -> MetricReport {
    let mut by_paper: BTreeMap<&str, HashMap<&str, u8>> = BTreeMap::new();
    for j in judgments {
        by_paper
            .entry(j.paper_id.as_str())
            .or_default()
            .insert(j.reviewer_id.as_str(), j.score);
    }
    for p in rankings.keys() {
        if !by_paper.contains_key(p.as_str()) {
            log::warn!("ranking for paper {p:?} has no judgments; skipped");
        }
    }
    let empty = Vec::new();
    let per_paper: Vec<PaperMetrics> = by_paper
        .iter()
        .map(|(p, js)| {
            let ranked = rankings.get(*p).unwrap_or(&empty);
            PaperMetrics::compute(p, ranked, js)
        })
        .collect();
    let n = per_paper.len().max(1) as f64;
    let mut sums = [0.0; 8];
    for m in &per_paper {
        for (s, v) in sums.iter_mut().zip(m.values()) {
            *s += v;
        }
    }
    let mean = sums.map(|s| s / n);
    MetricReport {
        soft_p5: mean[0],
        soft_p10: mean[1],
        hard_p5: mean[2],
        hard_p10: mean[3],
        liu_p5: mean[4],
        liu_p10: mean[5],
        anjum_p5: mean[6],
        anjum_p10: mean[7],
        average: (mean[0] + mean[1] + mean[2] + mean[3]) / 4.0,
        per_paper,
    }
}
