//! Segment-masked DPO arithmetic over precomputed log-probabilities.
//!
//! Nothing here runs a model. Scores arrive as JSONL, one sequence per line:
//! `{id, token_ids, logp_policy, logp_ref, loss_mask}`.

use crate::jsonl;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const DEFAULT_BETA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSequence {
    #[serde(default)]
    pub id: String,
    pub token_ids: Vec<i64>,
    pub logp_policy: Vec<f64>,
    pub logp_ref: Vec<f64>,
    pub loss_mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DpoError {
    #[error("sequence {id:?}: field lengths differ (tokens {tokens}, policy {policy}, ref {reference}, mask {mask})")]
    LengthMismatch {
        id: String,
        tokens: usize,
        policy: usize,
        reference: usize,
        mask: usize,
    },
    #[error("sequence {id:?}: log-probability {value} at token {index} is not a finite value <= 0")]
    InvalidLogProb { id: String, index: usize, value: f64 },
    #[error("beta must be positive and finite, got {0}")]
    InvalidBeta(f64),
    #[error("chosen and rejected differ inside the shared prefix at token {0}")]
    PrefixMismatch(usize),
    #[error("bad segment layout: {0}")]
    Layout(String),
    #[error("{chosen} chosen sequences but {rejected} rejected")]
    CountMismatch { chosen: usize, rejected: usize },
}

impl ScoredSequence {
    /// Unit mask over every token.
    pub fn unmasked(token_ids: Vec<i64>, logp_policy: Vec<f64>, logp_ref: Vec<f64>) -> Self {
        let n = token_ids.len();
        Self {
            id: String::new(),
            token_ids,
            logp_policy,
            logp_ref,
            loss_mask: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn validate(&self) -> Result<(), DpoError> {
        let n = self.token_ids.len();
        if self.logp_policy.len() != n || self.logp_ref.len() != n || self.loss_mask.len() != n {
            return Err(DpoError::LengthMismatch {
                id: self.id.clone(),
                tokens: n,
                policy: self.logp_policy.len(),
                reference: self.logp_ref.len(),
                mask: self.loss_mask.len(),
            });
        }
        for (index, &value) in self.logp_policy.iter().chain(&self.logp_ref).enumerate() {
            if !(value.is_finite() && value <= 0.0) {
                return Err(DpoError::InvalidLogProb {
                    id: self.id.clone(),
                    index: index % n.max(1),
                    value,
                });
            }
        }
        Ok(())
    }

    fn diffs(&self) -> impl Iterator<Item = f64> + '_ {
        self.logp_policy.iter().zip(&self.logp_ref).map(|(p, r)| p - r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpoConfig {
    pub beta: f64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self { beta: DEFAULT_BETA }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<(), DpoError> {
        check_beta(self.beta)
    }
}

fn check_beta(beta: f64) -> Result<(), DpoError> {
    if beta.is_finite() && beta > 0.0 {
        Ok(())
    } else {
        Err(DpoError::InvalidBeta(beta))
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `-ln σ(margin)`.
pub fn loss_from_margin(margin: f64) -> f64 {
    softplus(-margin)
}

/// β · Σ over masked tokens of `logp_policy - logp_ref`.
pub fn masked_logratio(seq: &ScoredSequence, beta: f64) -> Result<f64, DpoError> {
    seq.validate()?;
    check_beta(beta)?;
    let sum: f64 = seq.diffs().zip(&seq.loss_mask).filter(|(_, m)| **m).map(|(d, _)| d).sum();
    Ok(beta * sum)
}

pub fn dpo_loss(chosen: &ScoredSequence, rejected: &ScoredSequence, beta: f64) -> Result<f64, DpoError> {
    let margin = masked_logratio(chosen, beta)? - masked_logratio(rejected, beta)?;
    Ok(loss_from_margin(margin))
}

/// β · (`logp_policy - logp_ref`) for every token, mask ignored.
pub fn per_token_reward(seq: &ScoredSequence, beta: f64) -> Result<Vec<f64>, DpoError> {
    seq.validate()?;
    check_beta(beta)?;
    Ok(seq.diffs().map(|d| beta * d).collect())
}

/// Token counts of the three segments of a FIM pair. Both sequences are laid
/// out as `prefix | middle | suffix`; the prefix and the suffix token ids are
/// shared, the middles are free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentLayout {
    pub prefix_len: usize,
    pub chosen_mid_len: usize,
    pub rejected_mid_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub beta: f64,
    /// Unmasked margin over the whole sequences.
    pub full_argument: f64,
    pub full_loss: f64,
    pub prefix_term: f64,
    pub mid_term: f64,
    pub suf_term: f64,
    /// `|full_argument - (mid_term + suf_term)|`
    pub residual: f64,
    /// Loss with only the middle tokens masked in.
    pub mid_only_loss: f64,
}

fn span_sum(seq: &ScoredSequence, range: std::ops::Range<usize>) -> f64 {
    seq.diffs().skip(range.start).take(range.len()).sum()
}

/// Splits the unmasked DPO margin of a FIM pair into prefix, middle and
/// suffix contributions. The suffix scores of each sequence are the ones
/// produced under that sequence's own middle.
pub fn decomposition_check(
    chosen: &ScoredSequence,
    rejected: &ScoredSequence,
    layout: SegmentLayout,
    beta: f64,
) -> Result<DecompositionReport, DpoError> {
    chosen.validate()?;
    rejected.validate()?;
    check_beta(beta)?;
    let p = layout.prefix_len;
    let (cm, rm) = (layout.chosen_mid_len, layout.rejected_mid_len);
    if p + cm > chosen.len() || p + rm > rejected.len() {
        return Err(DpoError::Layout(format!(
            "prefix {p} + middles ({cm}, {rm}) exceed sequence lengths ({}, {})",
            chosen.len(),
            rejected.len()
        )));
    }
    let (cs, rs) = (chosen.len() - p - cm, rejected.len() - p - rm);
    if cs != rs {
        return Err(DpoError::Layout(format!("suffix lengths differ: {cs} vs {rs}")));
    }
    for i in 0..p {
        if chosen.token_ids[i] != rejected.token_ids[i]
            || chosen.logp_policy[i] != rejected.logp_policy[i]
            || chosen.logp_ref[i] != rejected.logp_ref[i]
        {
            return Err(DpoError::PrefixMismatch(i));
        }
    }
    if chosen.token_ids[p + cm..] != rejected.token_ids[p + rm..] {
        return Err(DpoError::Layout("suffix token ids differ".into()));
    }

    let term = |a: f64, b: f64| beta * a - beta * b;
    let full_argument = term(
        span_sum(chosen, 0..chosen.len()),
        span_sum(rejected, 0..rejected.len()),
    );
    let prefix_term = term(span_sum(chosen, 0..p), span_sum(rejected, 0..p));
    let mid_term = term(span_sum(chosen, p..p + cm), span_sum(rejected, p..p + rm));
    let suf_term = term(
        span_sum(chosen, p + cm..chosen.len()),
        span_sum(rejected, p + rm..rejected.len()),
    );
    Ok(DecompositionReport {
        beta,
        full_argument,
        full_loss: loss_from_margin(full_argument),
        prefix_term,
        mid_term,
        suf_term,
        residual: (full_argument - (mid_term + suf_term)).abs(),
        mid_only_loss: loss_from_margin(mid_term),
    })
}

pub fn read_scores(path: &Path) -> anyhow::Result<Vec<ScoredSequence>> {
    let seqs: Vec<ScoredSequence> = jsonl::read(path)?;
    for (i, s) in seqs.iter().enumerate() {
        s.validate()
            .map_err(|e| anyhow::anyhow!("{}: line {}: {e}", path.display(), i + 1))?;
    }
    Ok(seqs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub chosen_id: String,
    pub rejected_id: String,
    pub chosen_logratio: f64,
    pub rejected_logratio: f64,
    pub margin: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub beta: f64,
    pub n_pairs: usize,
    pub mean_loss: f64,
    /// Fraction of pairs with a positive margin.
    pub accuracy: f64,
    pub pairs: Vec<PairScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub id: String,
    pub rewards: Vec<f64>,
}

/// Scores line-aligned chosen and rejected sequences.
pub fn analyze(chosen: &[ScoredSequence], rejected: &[ScoredSequence], beta: f64) -> Result<AnalysisReport, DpoError> {
    check_beta(beta)?;
    if chosen.len() != rejected.len() {
        return Err(DpoError::CountMismatch {
            chosen: chosen.len(),
            rejected: rejected.len(),
        });
    }
    let pairs = chosen
        .iter()
        .zip(rejected)
        .map(|(c, r)| {
            let cl = masked_logratio(c, beta)?;
            let rl = masked_logratio(r, beta)?;
            Ok(PairScore {
                chosen_id: c.id.clone(),
                rejected_id: r.id.clone(),
                chosen_logratio: cl,
                rejected_logratio: rl,
                margin: cl - rl,
                loss: loss_from_margin(cl - rl),
            })
        })
        .collect::<Result<Vec<_>, DpoError>>()?;
    let n = pairs.len();
    let mean = |f: &dyn Fn(&PairScore) -> f64| if n == 0 { 0.0 } else { pairs.iter().map(f).sum::<f64>() / n as f64 };
    Ok(AnalysisReport {
        beta,
        n_pairs: n,
        mean_loss: mean(&|p| p.loss),
        accuracy: mean(&|p| f64::from(u8::from(p.margin > 0.0))),
        pairs,
    })
}

pub fn heatmaps(seqs: &[ScoredSequence], beta: f64) -> Result<Vec<Heatmap>, DpoError> {
    seqs.iter()
        .map(|s| {
            Ok(Heatmap {
                id: s.id.clone(),
                rewards: per_token_reward(s, beta)?,
            })
        })
        .collect()
}
