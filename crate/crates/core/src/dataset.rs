//! Final training records: format mixing, curriculum order, emission and
//! corpus statistics.

use crate::jsonl::{self, JsonlError};
use crate::pairs::{DiscardReason, DiscardRecord, PreferencePair};
use crate::prompt::{render_training, LossSpan, PromptError, Sentinels, Style};
use crate::segment::{BlockKind, Segmentation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::cmp::Reverse;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

pub const DATASET_SCHEMA: &str = "fimforge.dataset/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub id: String,
    pub task_id: String,
    pub solution_index: usize,
    pub block_kind: BlockKind,
    pub block_depth: usize,
    pub block_start_byte: usize,
    pub middle_lines: usize,
    pub curriculum_rank: usize,
    pub style: Style,
    pub prompt_or_user: String,
    pub chosen_response: String,
    pub rejected_response: String,
    pub chosen_loss_span: LossSpan,
    pub rejected_loss_span: LossSpan,
    pub edit_distance: usize,
    pub chosen_index: usize,
    pub rejected_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumKey {
    /// Chosen middle line count, short to long.
    #[default]
    Lines,
    /// Block depth, deepest first; whole programs last.
    Depth,
}

impl fmt::Display for CurriculumKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurriculumKey::Lines => "lines",
            CurriculumKey::Depth => "depth",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("alpha must lie in [0, 1], got {0}")]
    Alpha(f64),
    #[error("pair {id}: {source}")]
    Render {
        id: String,
        #[source]
        source: PromptError,
    },
    #[error(transparent)]
    Io(#[from] JsonlError),
    #[error("serializing {what}: {source}")]
    Serialize {
        what: &'static str,
        #[source]
        source: serde_json::Error,
    },
}

pub fn check_alpha(alpha: f64) -> Result<(), DatasetError> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(DatasetError::Alpha(alpha))
    }
}

/// One Bernoulli(`alpha`) draw from the stream `index` of a generator seeded
/// with `seed`: [`Style::Fim`] on success.
pub fn assign_format(seed: u64, index: u64, alpha: f64) -> Result<Style, DatasetError> {
    check_alpha(alpha)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let u: f64 = rng.random();
    Ok(if u < alpha { Style::Fim } else { Style::Chat })
}

/// Everything needed to render one pair.
#[derive(Debug, Clone, Copy)]
pub struct PairSource<'a> {
    pub pair: &'a PreferencePair,
    pub seg: &'a Segmentation,
    pub question: &'a str,
}

fn line_count(text: &str) -> usize {
    text.lines().count()
}

/// Renders pairs in the given order; the position of a pair in `sources` is
/// its format stream index. Ranks are left at zero until sorting.
pub fn build_records(
    sources: &[PairSource<'_>],
    seed: u64,
    alpha: f64,
    sentinels: &Sentinels,
) -> Result<Vec<TrainingRecord>, DatasetError> {
    check_alpha(alpha)?;
    sources
        .iter()
        .enumerate()
        .map(|(i, src)| {
            let style = assign_format(seed, i as u64, alpha)?;
            let id = format!("{}/{}", src.pair.seg_id, src.pair.rejected_index);
            let render = |text: &str| {
                render_training(src.seg, text, src.question, style, sentinels).map_err(|source| DatasetError::Render {
                    id: id.clone(),
                    source,
                })
            };
            let chosen = render(&src.pair.chosen)?;
            let rejected = render(&src.pair.rejected)?;
            debug_assert_eq!(chosen.prompt, rejected.prompt);
            Ok(TrainingRecord {
                id: id.clone(),
                task_id: src.seg.task_id.clone(),
                solution_index: src.seg.solution_index,
                block_kind: src.seg.block.kind,
                block_depth: src.seg.block.depth,
                block_start_byte: src.seg.block.start_byte,
                middle_lines: line_count(&src.pair.chosen),
                curriculum_rank: 0,
                style,
                prompt_or_user: chosen.prompt,
                chosen_response: chosen.response,
                rejected_response: rejected.response,
                chosen_loss_span: chosen.loss_span,
                rejected_loss_span: rejected.loss_span,
                edit_distance: src.pair.edit_distance,
                chosen_index: src.pair.chosen_index,
                rejected_index: src.pair.rejected_index,
            })
        })
        .collect()
}

/// Stable sort on the curriculum key alone, then ranks `0..n`.
pub fn curriculum_sort(mut records: Vec<TrainingRecord>, key: CurriculumKey) -> Vec<TrainingRecord> {
    match key {
        CurriculumKey::Lines => records.sort_by_key(|r| r.middle_lines),
        CurriculumKey::Depth => {
            records.sort_by_key(|r| (r.block_kind == BlockKind::WholeProgram, Reverse(r.block_depth)))
        }
    }
    for (rank, r) in records.iter_mut().enumerate() {
        r.curriculum_rank = rank;
    }
    records
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleCounts {
    pub records: usize,
    pub fim: usize,
    pub chat: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub seed: u64,
    pub alpha: f64,
    pub curriculum_key: CurriculumKey,
    pub sentinels: Sentinels,
    pub corpus_hash: String,
    pub backend: String,
    pub counts: StyleCounts,
    pub data_file: String,
    pub data_sha256: String,
}

/// Settings recorded in the manifest alongside the data hash.
#[derive(Debug, Clone)]
pub struct EmitSettings<'a> {
    pub seed: u64,
    pub alpha: f64,
    pub curriculum_key: CurriculumKey,
    pub sentinels: &'a Sentinels,
    pub corpus_hash: &'a str,
    pub backend: &'a str,
}

#[derive(Serialize)]
struct DatasetLine<'a> {
    schema: &'static str,
    #[serde(flatten)]
    record: &'a TrainingRecord,
}

/// Writes `records` as JSONL to `data_path` and the manifest to
/// `manifest_path`, each atomically. Every line carries a `schema` field.
pub fn emit_dataset(
    records: &[TrainingRecord],
    data_path: &Path,
    manifest_path: &Path,
    settings: &EmitSettings<'_>,
) -> Result<Manifest, DatasetError> {
    let lines: Vec<DatasetLine<'_>> = records
        .iter()
        .map(|record| DatasetLine {
            schema: DATASET_SCHEMA,
            record,
        })
        .collect();
    let bytes = jsonl::to_bytes(&lines).map_err(|source| DatasetError::Serialize {
        what: "dataset",
        source,
    })?;
    jsonl::write_atomic(data_path, &bytes)?;
    let fim = records.iter().filter(|r| r.style == Style::Fim).count();
    let manifest = Manifest {
        schema: DATASET_SCHEMA.to_string(),
        seed: settings.seed,
        alpha: settings.alpha,
        curriculum_key: settings.curriculum_key,
        sentinels: settings.sentinels.clone(),
        corpus_hash: settings.corpus_hash.to_string(),
        backend: settings.backend.to_string(),
        counts: StyleCounts {
            records: records.len(),
            fim,
            chat: records.len() - fim,
        },
        data_file: data_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        data_sha256: hex::encode(Sha256::digest(&bytes)),
    };
    let mut text = serde_json::to_vec_pretty(&manifest).map_err(|source| DatasetError::Serialize {
        what: "manifest",
        source,
    })?;
    text.push(b'\n');
    if let Err(e) = jsonl::write_atomic(manifest_path, &text) {
        let _ = std::fs::remove_file(data_path);
        return Err(e.into());
    }
    Ok(manifest)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KindStat {
    pub count: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    /// Over the four block kinds only.
    pub kinds: BTreeMap<String, KindStat>,
    pub block_segmentations: usize,
    pub whole_program: usize,
    pub pairs: usize,
    pub pairs_by_kind: BTreeMap<String, usize>,
    pub discards: BTreeMap<String, usize>,
}

pub fn compute_stats(
    segmentations: &[Segmentation],
    pairs: &[PreferencePair],
    discards: &[DiscardRecord],
) -> CorpusStats {
    let mut counts: BTreeMap<BlockKind, usize> = BlockKind::AST_KINDS.iter().map(|k| (*k, 0)).collect();
    let mut whole_program = 0;
    let mut kind_of: BTreeMap<String, BlockKind> = BTreeMap::new();
    for seg in segmentations {
        kind_of.insert(seg.seg_id(), seg.block.kind);
        match seg.block.kind {
            BlockKind::WholeProgram => whole_program += 1,
            k => *counts.entry(k).or_default() += 1,
        }
    }
    let total: usize = counts.values().sum();
    let kinds = counts
        .iter()
        .map(|(k, &count)| {
            let fraction = if total == 0 { 0.0 } else { count as f64 / total as f64 };
            (k.as_str().to_string(), KindStat { count, fraction })
        })
        .collect();

    let mut pairs_by_kind: BTreeMap<String, usize> = BTreeMap::new();
    for p in pairs {
        let kind = kind_of.get(&p.seg_id).map_or("unknown", |k| k.as_str());
        *pairs_by_kind.entry(kind.to_string()).or_default() += 1;
    }
    let mut hist: BTreeMap<String, usize> = DiscardReason::ALL.iter().map(|r| (r.as_str().to_string(), 0)).collect();
    for d in discards {
        *hist.entry(d.reason.as_str().to_string()).or_default() += 1;
    }
    CorpusStats {
        kinds,
        block_segmentations: total,
        whole_program,
        pairs: pairs.len(),
        pairs_by_kind,
        discards: hist,
    }
}
