use std::collections::HashSet;

use crate::encoder::Factor;
use crate::error::{CofError, Result};

use super::samples::{Item, TrainingSample};

/// A factor-homogeneous batch laid out as an anchor × candidate logit grid.
///
/// Candidates are the anchors' positives followed by every hard negative;
/// `mask[i * candidates.len() + j]` marks the candidates row `i` is scored
/// against, and `positive[i]` is the column of its own positive.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub factor: Factor,
    pub anchors: Vec<Item>,
    pub candidates: Vec<Item>,
    pub positive: Vec<usize>,
    pub mask: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Candidate columns scored as negatives for anchor `i`.
    pub fn negatives_of(&self, i: usize) -> Vec<usize> {
        let m = self.candidates.len();
        (0..m)
            .filter(|&j| self.mask[i * m + j] && j != self.positive[i])
            .collect()
    }
}

/// Lays out a batch. Each anchor's negatives are its own hard negatives plus,
/// with `in_batch_negatives`, the other anchors' positives. Candidates whose
/// id equals the anchor itself or any positive of a sample with the same
/// anchor are left out, as are repeats of an id already counted for that
/// anchor.
pub fn assemble_batch(samples: &[TrainingSample], in_batch_negatives: bool) -> Result<Batch> {
    let first = samples
        .first()
        .ok_or_else(|| CofError::Usage("cannot assemble an empty batch".into()))?;
    let factor = first.factor;
    if let Some(s) = samples.iter().find(|s| s.factor != factor) {
        return Err(CofError::Usage(format!(
            "batch mixes factors {factor} and {}",
            s.factor
        )));
    }
    let b = samples.len();
    let mut candidates: Vec<Item> = samples.iter().map(|s| s.positive.clone()).collect();
    let mut hard_cols = Vec::with_capacity(b);
    for s in samples {
        let start = candidates.len();
        candidates.extend(s.hard_negatives.iter().cloned());
        hard_cols.push(start..candidates.len());
    }
    let m = candidates.len();
    let mut mask = vec![false; b * m];
    for (i, s) in samples.iter().enumerate() {
        let row = &mut mask[i * m..(i + 1) * m];
        row[i] = true;
        let mut seen: HashSet<&str> = HashSet::new();
        seen.insert(s.anchor.id.as_str());
        for t in samples.iter().filter(|t| t.anchor.id == s.anchor.id) {
            seen.insert(t.positive.id.as_str());
        }
        let in_batch = (0..b).filter(|&j| in_batch_negatives && j != i);
        for j in hard_cols[i].clone().chain(in_batch) {
            if seen.insert(candidates[j].id.as_str()) {
                row[j] = true;
            }
        }
    }
    Ok(Batch {
        factor,
        anchors: samples.iter().map(|s| s.anchor.clone()).collect(),
        candidates,
        positive: (0..b).collect(),
        mask,
    })
}
