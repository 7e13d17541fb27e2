//! Preference pairs by minimum edit distance.
//!
//! Every incorrect candidate of a batch is paired with the correct candidate
//! closest to it in character-level Levenshtein distance. Batches without at
//! least one correct and one incorrect candidate yield no pairs.

use crate::judge::CandidateResult;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;

/// Character-level Levenshtein distance (unit costs).
pub fn levenshtein(a: &str, b: &str) -> usize {
    strsim::levenshtein(a, b)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub seg_id: String,
    pub chosen: String,
    pub rejected: String,
    pub edit_distance: usize,
    pub chosen_index: usize,
    pub rejected_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    AllCorrect,
    AllIncorrect,
    FlakyJudgement,
}

impl DiscardReason {
    pub const ALL: [DiscardReason; 3] = [
        DiscardReason::AllCorrect,
        DiscardReason::AllIncorrect,
        DiscardReason::FlakyJudgement,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DiscardReason::AllCorrect => "all_correct",
            DiscardReason::AllIncorrect => "all_incorrect",
            DiscardReason::FlakyJudgement => "flaky_judgement",
        }
    }
}

impl fmt::Display for DiscardReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscardRecord {
    pub seg_id: String,
    pub reason: DiscardReason,
    pub n_correct: usize,
    pub n_incorrect: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairOutcome {
    pub pairs: Vec<PreferencePair>,
    pub discards: Vec<DiscardRecord>,
}

/// Pairs one segmentation's judged batch.
///
/// An empty batch counts as all-incorrect. A rejected candidate whose nearest
/// correct candidate has identical text is dropped as a flaky judgement.
pub fn build_pairs(seg_id: &str, results: &[CandidateResult]) -> PairOutcome {
    let correct: Vec<(usize, &str)> = results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.correct)
        .map(|(i, r)| (i, r.candidate.as_str()))
        .collect();
    let n_correct = correct.len();
    let n_incorrect = results.len() - n_correct;
    let discard = |reason| DiscardRecord {
        seg_id: seg_id.to_string(),
        reason,
        n_correct,
        n_incorrect,
    };

    if n_correct == 0 {
        return PairOutcome {
            pairs: Vec::new(),
            discards: vec![discard(DiscardReason::AllIncorrect)],
        };
    }
    if n_incorrect == 0 {
        return PairOutcome {
            pairs: Vec::new(),
            discards: vec![discard(DiscardReason::AllCorrect)],
        };
    }

    let mut out = PairOutcome::default();
    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    for (ri, rejected) in results.iter().enumerate().filter(|(_, r)| !r.correct) {
        let (ci, chosen, distance) = correct
            .iter()
            .map(|&(ci, text)| (ci, text, levenshtein(text, &rejected.candidate)))
            .min_by_key(|&(ci, _, d)| (d, ci))
            .expect("correct set is non-empty");
        if distance == 0 {
            log::warn!("{seg_id}: candidate {ri} has the text of correct candidate {ci} but failed");
            out.discards.push(discard(DiscardReason::FlakyJudgement));
            continue;
        }
        if !seen.insert((chosen, rejected.candidate.as_str())) {
            continue;
        }
        out.pairs.push(PreferencePair {
            seg_id: seg_id.to_string(),
            chosen: chosen.to_string(),
            rejected: rejected.candidate.clone(),
            edit_distance: distance,
            chosen_index: ci,
            rejected_index: ri,
        });
    }
    out
}
