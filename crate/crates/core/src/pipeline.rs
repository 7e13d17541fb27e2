//! Stage orchestration with JSONL checkpoints.
//!
//! Each stage reads the checkpoint of the stage before it from the output
//! directory and writes its own, so any suffix of the pipeline can be re-run
//! from intermediates:
//!
//! | stage    | reads                                   | writes                              |
//! |----------|-----------------------------------------|-------------------------------------|
//! | ingest   | corpus root                             | `tasks.jsonl`, `skipped.jsonl`      |
//! | segment  | tasks                                   | `segments.jsonl`                    |
//! | gen      | tasks, segments                         | `generations.jsonl`                 |
//! | judge    | tasks, segments, generations            | `judgements.jsonl`                  |
//! | pair     | judgements                              | `pairs.jsonl`, `discards.jsonl`     |
//! | assemble | tasks, segments, generations, pairs,    | `dataset.jsonl`, `manifest.json`,   |
//! |          | discards                                | `stats.json`                        |
//!
//! Every JSONL line carries a `schema` field naming its record type and
//! version.

use crate::config::{BackendKind, GoldenPolicy, PipelineConfig};
use crate::corpus::{self, CodeTask, SkippedTask};
use crate::dataset::{self, CorpusStats, EmitSettings, Manifest, PairSource};
use crate::generate::{generate_all, Backend, GenerationRequest, HttpBackend, StubBackend};
use crate::judge::{self, CandidateResult, Limits, Runner, SubprocessRunner};
use crate::jsonl;
use crate::pairs::{self, DiscardRecord, PreferencePair};
use crate::prompt::build_fim_prompt;
use crate::segment::{self, Segmentation};
use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

pub const API_KEY_ENV: &str = "FIMFORGE_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub schema: String,
    #[serde(flatten)]
    pub record: T,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    #[serde(flatten)]
    pub task: CodeTask,
    /// Solutions used as golden sources.
    pub golden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub seg_id: String,
    #[serde(flatten)]
    pub seg: Segmentation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub seg_id: String,
    pub backend: String,
    pub candidates: Vec<String>,
    pub partial: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgementRecord {
    pub seg_id: String,
    pub results: Vec<CandidateResult>,
}

/// Checkpoint file names and their record schemas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Checkpoint {
    Tasks,
    Skipped,
    Segments,
    Generations,
    Judgements,
    Pairs,
    Discards,
    Dataset,
}

impl Checkpoint {
    pub fn file_name(self) -> &'static str {
        match self {
            Checkpoint::Tasks => "tasks.jsonl",
            Checkpoint::Skipped => "skipped.jsonl",
            Checkpoint::Segments => "segments.jsonl",
            Checkpoint::Generations => "generations.jsonl",
            Checkpoint::Judgements => "judgements.jsonl",
            Checkpoint::Pairs => "pairs.jsonl",
            Checkpoint::Discards => "discards.jsonl",
            Checkpoint::Dataset => "dataset.jsonl",
        }
    }

    pub fn schema(self) -> &'static str {
        match self {
            Checkpoint::Tasks => "fimforge.task/1",
            Checkpoint::Skipped => "fimforge.skipped/1",
            Checkpoint::Segments => "fimforge.segment/1",
            Checkpoint::Generations => "fimforge.generation/1",
            Checkpoint::Judgements => "fimforge.judgement/1",
            Checkpoint::Pairs => "fimforge.pair/1",
            Checkpoint::Discards => "fimforge.discard/1",
            Checkpoint::Dataset => dataset::DATASET_SCHEMA,
        }
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const STATS_FILE: &str = "stats.json";

/// The output directory of one pipeline run.
#[derive(Debug, Clone)]
pub struct Workspace {
    dir: PathBuf,
}

impl Workspace {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, cp: Checkpoint) -> PathBuf {
        self.dir.join(cp.file_name())
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join(MANIFEST_FILE)
    }

    pub fn stats_path(&self) -> PathBuf {
        self.dir.join(STATS_FILE)
    }

    pub fn write<T: Serialize>(&self, cp: Checkpoint, items: &[T]) -> Result<()> {
        std::fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        let stamped: Vec<Stamped<&T>> = items
            .iter()
            .map(|record| Stamped {
                schema: cp.schema().to_string(),
                record,
            })
            .collect();
        let bytes = jsonl::to_bytes(&stamped)?;
        jsonl::write_atomic(&self.path(cp), &bytes)?;
        Ok(())
    }

    pub fn read<T: DeserializeOwned>(&self, cp: Checkpoint) -> Result<Vec<T>> {
        let path = self.path(cp);
        let stamped: Vec<Stamped<T>> =
            jsonl::read(&path).with_context(|| format!("missing or unreadable checkpoint; run the stage that writes {}", cp.file_name()))?;
        stamped
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                if s.schema != cp.schema() {
                    bail!(
                        "{}: line {}: schema {:?}, expected {:?}",
                        path.display(),
                        i + 1,
                        s.schema,
                        cp.schema()
                    );
                }
                Ok(s.record)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, clap::ValueEnum)]
pub enum Stage {
    Ingest,
    Segment,
    Gen,
    Judge,
    Pair,
    Assemble,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Ingest => "ingest",
            Stage::Segment => "segment",
            Stage::Gen => "gen",
            Stage::Judge => "judge",
            Stage::Pair => "pair",
            Stage::Assemble => "assemble",
        })
    }
}

fn limits(cfg: &PipelineConfig) -> Limits {
    Limits {
        timeout_s: cfg.exec.timeout_s,
        memory_mb: cfg.exec.memory_mb,
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?)
}

fn derive_seed(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new().chain_update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("32-byte digest"))
}

pub fn build_backend(cfg: &PipelineConfig) -> Result<Box<dyn Backend>> {
    Ok(match cfg.backend.kind {
        BackendKind::Stub => Box::new(StubBackend::new(cfg.seed)),
        BackendKind::Http => {
            let base = cfg
                .backend
                .base_url
                .as_deref()
                .context("backend.base_url is required for the http backend")?;
            Box::new(HttpBackend::new(
                base,
                std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
                cfg.backend.model.clone(),
                cfg.backend.max_retries,
                Duration::from_millis(cfg.backend.backoff_ms),
                Duration::from_secs_f64(cfg.backend.request_timeout_s),
                cfg.sentinels.clone(),
            )?)
        }
    })
}

pub fn build_runner(cfg: &PipelineConfig) -> SubprocessRunner {
    SubprocessRunner::new(cfg.exec.runner.clone())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub loaded: usize,
    pub skipped: usize,
    pub dropped_solutions: usize,
    pub without_golden: usize,
}

fn select_golden(task: &CodeTask, policy: GoldenPolicy, limits: &Limits, runner: &dyn Runner) -> Vec<usize> {
    let passes = |i: usize| judge::judge(&task.solutions[i], &task.tests, limits, runner).correct();
    match policy {
        GoldenPolicy::First => (!task.solutions.is_empty()).then_some(0).into_iter().collect(),
        GoldenPolicy::FirstPassing => (0..task.solutions.len()).find(|&i| passes(i)).into_iter().collect(),
        GoldenPolicy::AllPassing => (0..task.solutions.len()).filter(|&i| passes(i)).collect(),
    }
}

/// Loads and normalizes the corpus and picks golden solutions.
pub fn ingest(cfg: &PipelineConfig, ws: &Workspace, runner: &dyn Runner) -> Result<IngestSummary> {
    let loaded = corpus::load_corpus(&cfg.corpus.root, cfg.corpus.limit)?;
    let formatter = cfg.corpus.formatter_cmd.as_deref();
    let limits = limits(cfg);
    let records: Vec<(TaskRecord, usize)> = pool(cfg.exec.workers)?.install(|| {
        loaded
            .tasks
            .par_iter()
            .map(|task| {
                let mut task = task.clone();
                let before = task.solutions.len();
                task.solutions = task
                    .solutions
                    .iter()
                    .filter_map(|s| match corpus::normalize_source(s, formatter) {
                        Ok(s) if !s.is_empty() => Some(s),
                        Ok(_) => None,
                        Err(e) => {
                            log::warn!("{}: dropping solution: {e}", task.task_id);
                            None
                        }
                    })
                    .collect();
                let dropped = before - task.solutions.len();
                let golden = select_golden(&task, cfg.corpus.golden, &limits, runner);
                if golden.is_empty() {
                    log::warn!("{}: no golden solution", task.task_id);
                }
                (TaskRecord { task, golden }, dropped)
            })
            .collect()
    });
    let summary = IngestSummary {
        loaded: records.len(),
        skipped: loaded.skipped.len(),
        dropped_solutions: records.iter().map(|(_, d)| d).sum(),
        without_golden: records.iter().filter(|(r, _)| r.golden.is_empty()).count(),
    };
    let records: Vec<TaskRecord> = records.into_iter().map(|(r, _)| r).collect();
    ws.write(Checkpoint::Tasks, &records)?;
    ws.write::<SkippedTask>(Checkpoint::Skipped, &loaded.skipped)?;
    Ok(summary)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SegmentSummary {
    pub solutions: usize,
    pub segmentations: usize,
    pub unparsable: usize,
}

/// Segmentations of one golden source in canonical order: blocks by start
/// byte, then the whole program.
pub fn segment_solution(cfg: &PipelineConfig, task_id: &str, index: usize, source: &str) -> Result<Vec<Segmentation>, String> {
    if let Some(seed) = cfg.segment.random_span_seed {
        let seed = derive_seed(seed, &[task_id.as_bytes(), &index.to_le_bytes()]);
        return match segment::mask_random_span(task_id, index, source, seed) {
            Ok(s) => Ok(vec![s]),
            Err(e) => Err(e.to_string()),
        };
    }
    let mut blocks = segment::parse_blocks(source).map_err(|e| e.to_string())?;
    if let Some(max) = cfg.segment.max_blocks_per_solution {
        blocks.truncate(max);
    }
    if cfg.segment.include_whole_program {
        blocks.extend(segment::whole_program(source));
    }
    blocks
        .iter()
        .map(|b| segment::segment(task_id, index, source, b).map_err(|e| e.to_string()))
        .collect()
}

pub fn segment_stage(cfg: &PipelineConfig, ws: &Workspace) -> Result<SegmentSummary> {
    let tasks: Vec<TaskRecord> = ws.read(Checkpoint::Tasks)?;
    let mut summary = SegmentSummary::default();
    let mut out = Vec::new();
    for rec in &tasks {
        for &i in &rec.golden {
            let source = rec
                .task
                .solutions
                .get(i)
                .with_context(|| format!("{}: golden index {i} out of range", rec.task.task_id))?;
            summary.solutions += 1;
            match segment_solution(cfg, &rec.task.task_id, i, source) {
                Ok(segs) => out.extend(segs),
                Err(e) => {
                    log::warn!("{}#{i}: not segmented: {e}", rec.task.task_id);
                    summary.unparsable += 1;
                }
            }
        }
    }
    summary.segmentations = out.len();
    let records: Vec<SegmentRecord> = out
        .into_iter()
        .map(|seg| SegmentRecord {
            seg_id: seg.seg_id(),
            seg,
        })
        .collect();
    ws.write(Checkpoint::Segments, &records)?;
    Ok(summary)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GenSummary {
    pub requests: usize,
    pub partial: usize,
    pub failed: usize,
    pub prompt_errors: usize,
}

fn questions(tasks: &[TaskRecord]) -> HashMap<&str, &CodeTask> {
    tasks.iter().map(|t| (t.task.task_id.as_str(), &t.task)).collect()
}

pub fn gen_stage(cfg: &PipelineConfig, ws: &Workspace, backend: &dyn Backend) -> Result<GenSummary> {
    cfg.sampling.validate()?;
    let tasks: Vec<TaskRecord> = ws.read(Checkpoint::Tasks)?;
    let by_id = questions(&tasks);
    let segs: Vec<SegmentRecord> = ws.read(Checkpoint::Segments)?;
    let mut summary = GenSummary::default();

    let mut prompts = Vec::new();
    for rec in &segs {
        let task = by_id
            .get(rec.seg.task_id.as_str())
            .with_context(|| format!("{}: unknown task", rec.seg_id))?;
        match build_fim_prompt(&rec.seg, &task.question, &cfg.sentinels) {
            Ok(p) => prompts.push((rec, p)),
            Err(e) => {
                log::warn!("{}: skipped: {e}", rec.seg_id);
                summary.prompt_errors += 1;
            }
        }
    }
    let requests: Vec<GenerationRequest<'_>> = prompts
        .iter()
        .map(|(rec, p)| GenerationRequest {
            id: &rec.seg_id,
            prompt: p,
            reference_middle: Some(&rec.seg.middle),
        })
        .collect();
    summary.requests = requests.len();
    let results = generate_all(backend, &requests, &cfg.sampling, cfg.backend.workers);
    let backend_id = backend.id();
    let mut out = Vec::with_capacity(results.len());
    for (req, res) in requests.iter().zip(results) {
        match res {
            Ok(g) => {
                summary.partial += usize::from(g.partial);
                out.push(GenerationRecord {
                    seg_id: req.id.to_string(),
                    backend: backend_id.clone(),
                    candidates: g.candidates,
                    partial: g.partial,
                    error: None,
                });
            }
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => {
                log::warn!("{}: generation failed: {e}", req.id);
                summary.failed += 1;
                out.push(GenerationRecord {
                    seg_id: req.id.to_string(),
                    backend: backend_id.clone(),
                    candidates: Vec::new(),
                    partial: true,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    ws.write(Checkpoint::Generations, &out)?;
    Ok(summary)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct JudgeSummary {
    pub segmentations: usize,
    pub candidates: usize,
    pub correct: usize,
}

pub fn judge_stage(cfg: &PipelineConfig, ws: &Workspace, runner: &dyn Runner) -> Result<JudgeSummary> {
    let tasks: Vec<TaskRecord> = ws.read(Checkpoint::Tasks)?;
    let by_id = questions(&tasks);
    let segs: Vec<SegmentRecord> = ws.read(Checkpoint::Segments)?;
    let segs: HashMap<&str, &Segmentation> = segs.iter().map(|r| (r.seg_id.as_str(), &r.seg)).collect();
    let gens: Vec<GenerationRecord> = ws.read(Checkpoint::Generations)?;
    let limits = limits(cfg);

    let mut jobs = Vec::new();
    for g in gens.iter().filter(|g| g.error.is_none()) {
        let seg = *segs
            .get(g.seg_id.as_str())
            .with_context(|| format!("{}: generation without segmentation", g.seg_id))?;
        let task = by_id
            .get(seg.task_id.as_str())
            .with_context(|| format!("{}: unknown task", g.seg_id))?;
        jobs.push((g, seg, *task));
    }
    let records: Vec<JudgementRecord> = pool(cfg.exec.workers)?.install(|| {
        jobs.par_iter()
            .map(|(g, seg, task)| JudgementRecord {
                seg_id: g.seg_id.clone(),
                results: judge::judge_batch(seg, &g.candidates, &task.tests, &limits, runner),
            })
            .collect()
    });
    let summary = JudgeSummary {
        segmentations: records.len(),
        candidates: records.iter().map(|r| r.results.len()).sum(),
        correct: records.iter().flat_map(|r| &r.results).filter(|c| c.correct).count(),
    };
    ws.write(Checkpoint::Judgements, &records)?;
    Ok(summary)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PairSummary {
    pub pairs: usize,
    pub discards: usize,
}

pub fn pair_stage(ws: &Workspace) -> Result<PairSummary> {
    let judgements: Vec<JudgementRecord> = ws.read(Checkpoint::Judgements)?;
    let outcomes: Vec<_> = judgements
        .par_iter()
        .map(|j| pairs::build_pairs(&j.seg_id, &j.results))
        .collect();
    let mut all_pairs: Vec<PreferencePair> = Vec::new();
    let mut discards: Vec<DiscardRecord> = Vec::new();
    for o in outcomes {
        all_pairs.extend(o.pairs);
        discards.extend(o.discards);
    }
    ws.write(Checkpoint::Pairs, &all_pairs)?;
    ws.write(Checkpoint::Discards, &discards)?;
    Ok(PairSummary {
        pairs: all_pairs.len(),
        discards: discards.len(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    jsonl::write_atomic(path, &bytes)?;
    Ok(())
}

/// Renders, orders and emits the dataset; writes the manifest and stats.
pub fn assemble_stage(cfg: &PipelineConfig, ws: &Workspace) -> Result<Manifest> {
    dataset::check_alpha(cfg.dataset.alpha)?;
    let tasks: Vec<TaskRecord> = ws.read(Checkpoint::Tasks)?;
    let by_id = questions(&tasks);
    let seg_records: Vec<SegmentRecord> = ws.read(Checkpoint::Segments)?;
    let segs: HashMap<&str, &Segmentation> = seg_records.iter().map(|r| (r.seg_id.as_str(), &r.seg)).collect();
    let pair_list: Vec<PreferencePair> = ws.read(Checkpoint::Pairs)?;
    let discards: Vec<DiscardRecord> = ws.read(Checkpoint::Discards)?;
    let backend = ws
        .read::<GenerationRecord>(Checkpoint::Generations)
        .ok()
        .and_then(|g| g.first().map(|g| g.backend.clone()))
        .unwrap_or_default();

    let sources = pair_list
        .iter()
        .map(|pair| {
            let seg = *segs
                .get(pair.seg_id.as_str())
                .with_context(|| format!("{}: pair without segmentation", pair.seg_id))?;
            let task = by_id
                .get(seg.task_id.as_str())
                .with_context(|| format!("{}: unknown task", pair.seg_id))?;
            Ok(PairSource {
                pair,
                seg,
                question: &task.question,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let records = dataset::build_records(&sources, cfg.seed, cfg.dataset.alpha, &cfg.sentinels)?;
    let records = dataset::curriculum_sort(records, cfg.dataset.curriculum_key);

    let all_tasks: Vec<CodeTask> = tasks.iter().map(|t| t.task.clone()).collect();
    let corpus_hash = corpus::corpus_hash(&all_tasks);
    let settings = EmitSettings {
        seed: cfg.seed,
        alpha: cfg.dataset.alpha,
        curriculum_key: cfg.dataset.curriculum_key,
        sentinels: &cfg.sentinels,
        corpus_hash: &corpus_hash,
        backend: &backend,
    };
    let manifest = dataset::emit_dataset(&records, &ws.path(Checkpoint::Dataset), &ws.manifest_path(), &settings)?;

    let segs_only: Vec<Segmentation> = seg_records.into_iter().map(|r| r.seg).collect();
    let stats = dataset::compute_stats(&segs_only, &pair_list, &discards);
    write_json(&ws.stats_path(), &stats)?;
    Ok(manifest)
}

/// Recomputes `stats.json` from the segment, pair and discard checkpoints.
pub fn stats_stage(ws: &Workspace) -> Result<CorpusStats> {
    let segs: Vec<SegmentRecord> = ws.read(Checkpoint::Segments)?;
    let segs: Vec<Segmentation> = segs.into_iter().map(|r| r.seg).collect();
    let pair_list: Vec<PreferencePair> = ws.read(Checkpoint::Pairs).unwrap_or_default();
    let discards: Vec<DiscardRecord> = ws.read(Checkpoint::Discards).unwrap_or_default();
    let stats = dataset::compute_stats(&segs, &pair_list, &discards);
    write_json(&ws.stats_path(), &stats)?;
    Ok(stats)
}

/// Runs every stage from `from` onwards.
pub fn run_all(
    cfg: &PipelineConfig,
    ws: &Workspace,
    backend: &dyn Backend,
    runner: &dyn Runner,
    from: Stage,
) -> Result<Manifest> {
    cfg.validate()?;
    if from <= Stage::Ingest {
        let s = ingest(cfg, ws, runner).context("ingest")?;
        log::info!("ingest: {s:?}");
    }
    if from <= Stage::Segment {
        let s = segment_stage(cfg, ws).context("segment")?;
        log::info!("segment: {s:?}");
    }
    if from <= Stage::Gen {
        let s = gen_stage(cfg, ws, backend).context("gen")?;
        log::info!("gen: {s:?}");
    }
    if from <= Stage::Judge {
        let s = judge_stage(cfg, ws, runner).context("judge")?;
        log::info!("judge: {s:?}");
    }
    if from <= Stage::Pair {
        let s = pair_stage(ws).context("pair")?;
        log::info!("pair: {s:?}");
    }
    let manifest = assemble_stage(cfg, ws).context("assemble")?;
    log::info!("assemble: {} records", manifest.counts.records);
    Ok(manifest)
}
