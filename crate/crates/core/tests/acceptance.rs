//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails. Run with
//! `cargo test -p fimforge --test acceptance`.

mod common;

use fimforge::corpus::{load_corpus, normalize_source};
use fimforge::dataset::{self, CurriculumKey, PairSource, TrainingRecord};
use fimforge::dpo::{self, ScoredSequence, SegmentLayout};
use fimforge::generate::StubBackend;
use fimforge::judge::{CandidateResult, SubprocessRunner, Verdict};
use fimforge::pairs::{build_pairs, levenshtein, DiscardReason, PreferencePair};
use fimforge::pipeline::{self, Stage, Workspace};
use fimforge::prompt::{LossSpan, Sentinels, Style};
use fimforge::segment::{parse_blocks, segment, whole_program, Block};
use fimforge::{BlockKind, Segmentation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn reconstruction() -> Outcome {
    let sources = common::fixture_sources();
    let start = Instant::now();
    let (mut segs, mut bad) = (0, Vec::new());
    let mut kinds = BTreeMap::new();
    let (mut max_depth, mut at_start, mut at_end, mut solutions) = (0, false, false, 0);
    for (name, src) in &sources {
        solutions += usize::from(name.starts_with("apps/"));
        let mut blocks = match parse_blocks(src) {
            Ok(b) => b,
            Err(e) => {
                bad.push(format!("{name}: {e}"));
                continue;
            }
        };
        for b in &blocks {
            *kinds.entry(b.kind).or_insert(0) += 1;
            max_depth = max_depth.max(b.depth);
            at_start |= b.start_byte == 0;
            at_end |= b.end_byte == src.len();
        }
        blocks.extend(whole_program(src));
        for b in &blocks {
            segs += 1;
            match segment(name, 0, src, b) {
                Ok(s) if [s.prefix.as_bytes(), s.middle.as_bytes(), s.suffix.as_bytes()].concat() == src.as_bytes() => {}
                _ => bad.push(format!("{name}: {}-{}", b.start_line, b.end_line)),
            }
        }
    }
    let elapsed = start.elapsed();
    let coverage = sources.len() >= 20 && kinds.len() == 4 && max_depth >= 3 && at_start && at_end;
    check(
        bad.is_empty() && coverage && elapsed < Duration::from_secs(5),
        format!(
            "{} sources ({solutions} corpus solutions), {segs} segmentations, {} mismatches, kinds {kinds:?}, max depth {max_depth}, block at start {at_start}, at end {at_end}, {elapsed:.2?} (< 5s)",
            sources.len(),
            bad.len()
        ),
    )
}

fn segmenter_oracle() -> Outcome {
    let oracle = common::oracle_spans();
    let sources = common::fixture_sources();
    let mut discrepancies = 0;
    let mut blocks = 0;
    for (name, src) in &sources {
        let ours: Vec<common::OracleBlock> = parse_blocks(src)
            .map(|bs| {
                bs.into_iter()
                    .map(|b| common::OracleBlock {
                        kind: b.kind.to_string(),
                        start_line: b.start_line,
                        end_line: b.end_line,
                        depth: b.depth,
                    })
                    .collect()
            })
            .unwrap_or_default();
        let Some(expected) = oracle.get(name) else {
            discrepancies += 1;
            continue;
        };
        blocks += expected.len();
        let common_len = ours.len().min(expected.len());
        discrepancies += ours.iter().zip(expected).filter(|(a, b)| a != b).count();
        discrepancies += ours.len().max(expected.len()) - common_len;
    }
    discrepancies += oracle.keys().filter(|k| !sources.contains_key(*k)).count();
    check(
        discrepancies == 0,
        format!("{} sources, {blocks} reference blocks, {discrepancies} discrepancies", sources.len()),
    )
}

fn random_seq(rng: &mut ChaCha8Rng, ids: Vec<i64>) -> ScoredSequence {
    let n = ids.len();
    ScoredSequence {
        id: String::new(),
        token_ids: ids,
        logp_policy: (0..n).map(|_| -rng.random_range(0.0..12.0)).collect(),
        logp_ref: (0..n).map(|_| -rng.random_range(0.0..12.0)).collect(),
        loss_mask: (0..n).map(|_| rng.random_bool(0.5)).collect(),
    }
}

fn dpo_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for beta in [0.01, 0.1, 0.5, 1.0, 5.0] {
        for _ in 0..200 {
            let n = rng.random_range(0..40);
            let mut c = random_seq(&mut rng, (0..n).collect());
            c.logp_ref = c.logp_policy.clone();
            let mut r = random_seq(&mut rng, (0..n + 3).collect());
            r.logp_ref = r.logp_policy.clone();
            let loss = dpo::dpo_loss(&c, &r, beta).unwrap();
            worst = worst.max((loss - std::f64::consts::LN_2).abs());
        }
    }
    check(worst <= 1e-12, format!("1000 sequence pairs, max |loss - ln 2| = {worst:.3e} (<= 1e-12)"))
}

fn decomposition() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_res, mut worst_prefix, mut worst_indep, mut worst_mid_only): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    let beta = dpo::DEFAULT_BETA;
    for trial in 0..1000 {
        let p = rng.random_range(0..60);
        let cm = rng.random_range(1..30);
        let rm = rng.random_range(1..30);
        let s = rng.random_range(0..40);
        let prefix = random_seq(&mut rng, (0..p).collect());
        let build = |rng: &mut ChaCha8Rng, mid: i64| {
            let ids: Vec<i64> = (1000..1000 + mid).chain(5000..5000 + s).collect();
            let body = random_seq(rng, ids);
            ScoredSequence {
                id: String::new(),
                token_ids: prefix.token_ids.iter().chain(&body.token_ids).copied().collect(),
                logp_policy: prefix.logp_policy.iter().chain(&body.logp_policy).copied().collect(),
                logp_ref: prefix.logp_ref.iter().chain(&body.logp_ref).copied().collect(),
                loss_mask: prefix.loss_mask.iter().chain(&body.loss_mask).copied().collect(),
            }
        };
        let chosen = build(&mut rng, cm);
        let mut rejected = build(&mut rng, rm);
        // A third of the trials share suffix scores across the two contexts.
        if trial % 3 == 0 {
            let (ct, rt) = ((p + cm) as usize, (p + rm) as usize);
            rejected.logp_policy[rt..].copy_from_slice(&chosen.logp_policy[ct..]);
            rejected.logp_ref[rt..].copy_from_slice(&chosen.logp_ref[ct..]);
        }
        let layout = SegmentLayout {
            prefix_len: p as usize,
            chosen_mid_len: cm as usize,
            rejected_mid_len: rm as usize,
        };
        let rep = dpo::decomposition_check(&chosen, &rejected, layout, beta).unwrap();
        worst_res = worst_res.max(rep.residual);
        worst_prefix = worst_prefix.max(rep.prefix_term.abs());

        // Independent evaluation of the full-sequence margin.
        let total = |q: &ScoredSequence| q.logp_policy.iter().zip(&q.logp_ref).map(|(a, b)| a - b).sum::<f64>();
        let full = beta * (total(&chosen) - total(&rejected));
        worst_indep = worst_indep.max((full - (rep.mid_term + rep.suf_term)).abs());
        if trial % 3 == 0 {
            worst_mid_only = worst_mid_only.max((rep.full_loss - rep.mid_only_loss).abs());
        } else {
            // Loss shift equals the suffix term moving the sigmoid argument.
            let shifted = dpo::loss_from_margin(rep.mid_term + rep.suf_term);
            worst_mid_only = worst_mid_only.max((rep.full_loss - shifted).abs());
        }
    }
    let elapsed = start.elapsed();
    check(
        worst_res < 1e-9 && worst_indep < 1e-9 && worst_prefix <= 1e-12 && worst_mid_only < 1e-9 && elapsed < Duration::from_secs(10),
        format!(
            "1000 trials, max residual {worst_res:.2e}, independent {worst_indep:.2e} (< 1e-9), max |prefix term| {worst_prefix:.2e} (<= 1e-12), loss split {worst_mid_only:.2e}, {elapsed:.2?} (< 10s)"
        ),
    )
}

fn dp_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 0..=a.len() {
        t[i][0] = i;
    }
    for j in 0..=b.len() {
        t[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = t[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            t[i][j] = sub.min(t[i - 1][j] + 1).min(t[i][j - 1] + 1);
        }
    }
    t[a.len()][b.len()]
}

fn candidate(text: String, correct: bool) -> CandidateResult {
    CandidateResult {
        full_program: text.clone(),
        candidate: text,
        per_test: Vec::new(),
        overall: if correct { Verdict::Accepted } else { Verdict::WrongAnswer },
        correct,
    }
}

fn pairing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let alphabet = ['a', 'b', 'c', '\n', ' '];
    let (mut batches, mut mismatched, mut discard_errors, mut pairs_seen) = (0, 0, 0, 0);
    for _ in 0..5000 {
        let n = rng.random_range(0..=8);
        let batch: Vec<(String, bool)> = (0..n)
            .map(|_| {
                let len = rng.random_range(0..7);
                let text: String = (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect();
                (text, rng.random_bool(0.5))
            })
            .collect();
        let results: Vec<_> = batch.iter().map(|(t, c)| candidate(t.clone(), *c)).collect();
        let out = build_pairs("s", &results);
        batches += 1;
        pairs_seen += out.pairs.len();

        let n_correct = batch.iter().filter(|(_, c)| *c).count();
        let degenerate = n_correct == 0 || n_correct == batch.len();
        let fired = out
            .discards
            .iter()
            .any(|d| matches!(d.reason, DiscardReason::AllCorrect | DiscardReason::AllIncorrect));
        if degenerate != fired || (degenerate && !out.pairs.is_empty()) {
            discard_errors += 1;
        }

        let mut expected = Vec::new();
        let mut seen = std::collections::HashSet::new();
        if !degenerate {
            for (ri, (rt, _)) in batch.iter().enumerate().filter(|(_, (_, c))| !*c) {
                let all: Vec<(usize, usize)> = batch
                    .iter()
                    .enumerate()
                    .filter(|(_, (_, c))| *c)
                    .map(|(ci, (ct, _))| (dp_distance(ct, rt), ci))
                    .collect();
                let &(d, ci) = all.iter().min().unwrap();
                if d > 0 && seen.insert((batch[ci].0.clone(), rt.clone())) {
                    expected.push((ci, ri, d));
                }
            }
        }
        let got: Vec<_> = out.pairs.iter().map(|p| (p.chosen_index, p.rejected_index, p.edit_distance)).collect();
        if got != expected {
            mismatched += 1;
        }
    }
    let kitten = levenshtein("kitten", "sitting");
    check(
        mismatched == 0 && discard_errors == 0 && kitten == 3,
        format!(
            "{batches} batches (<= 8 candidates), {pairs_seen} pairs, {mismatched} oracle mismatches, {discard_errors} discard-rule errors, levenshtein(kitten, sitting) = {kitten}"
        ),
    )
}

fn synthetic_record(lines: usize, tag: usize) -> TrainingRecord {
    TrainingRecord {
        id: tag.to_string(),
        task_id: "t".into(),
        solution_index: 0,
        block_kind: BlockKind::For,
        block_depth: 0,
        block_start_byte: 0,
        middle_lines: lines,
        curriculum_rank: 0,
        style: Style::Chat,
        prompt_or_user: String::new(),
        chosen_response: String::new(),
        rejected_response: String::new(),
        chosen_loss_span: LossSpan { start: 0, end: 0 },
        rejected_loss_span: LossSpan { start: 0, end: 0 },
        edit_distance: 1,
        chosen_index: 0,
        rejected_index: tag,
    }
}

fn curriculum(out: &Path) -> Outcome {
    let lines: Vec<Value> = read_jsonl(&out.join("dataset.jsonl"));
    let keys: Vec<u64> = lines.iter().map(|v| v["middle_lines"].as_u64().unwrap()).collect();
    let adjacent = keys.len().saturating_sub(1);
    let violations = keys.windows(2).filter(|w| w[0] > w[1]).count();

    // Independent stable sort of the canonical pair order by chosen line count.
    let pairs: Vec<Value> = read_jsonl(&out.join("pairs.jsonl"));
    let mut expected: Vec<(usize, String)> = pairs
        .iter()
        .map(|p| {
            let chosen = p["chosen"].as_str().unwrap();
            (
                chosen.split_terminator('\n').count(),
                format!("{}/{}", p["seg_id"].as_str().unwrap(), p["rejected_index"]),
            )
        })
        .collect();
    expected.sort_by_key(|(n, _)| *n);
    let expected_ids: Vec<&str> = expected.iter().map(|(_, id)| id.as_str()).collect();
    let got_ids: Vec<&str> = lines.iter().map(|v| v["id"].as_str().unwrap()).collect();
    let ranks_ok = lines
        .iter()
        .enumerate()
        .all(|(i, v)| v["curriculum_rank"].as_u64() == Some(i as u64));

    // Stability on a synthetic list heavy in ties.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let synth: Vec<_> = (0..5000).map(|i| synthetic_record(rng.random_range(1..6), i)).collect();
    let sorted = dataset::curriculum_sort(synth, CurriculumKey::Lines);
    let stable = sorted
        .windows(2)
        .all(|w| w[0].middle_lines < w[1].middle_lines || (w[0].middle_lines == w[1].middle_lines && w[0].rejected_index < w[1].rejected_index));

    check(
        violations == 0 && expected_ids == got_ids && ranks_ok && stable && !lines.is_empty(),
        format!(
            "{} records, {violations}/{adjacent} adjacent decreases, matches independent stable sort: {}, ranks sequential: {ranks_ok}, synthetic ties stable: {stable}",
            lines.len(),
            expected_ids == got_ids
        ),
    )
}

fn format_mixing() -> Outcome {
    let seg = Segmentation {
        task_id: "t".into(),
        solution_index: 0,
        block: Block {
            kind: BlockKind::If,
            start_byte: 6,
            end_byte: 26,
            start_line: 2,
            end_line: 3,
            depth: 0,
            line_count: 2,
        },
        prefix: "n = 1\n".into(),
        middle: "if n:\n    print(n)\n".into(),
        suffix: String::new(),
    };
    let pair = PreferencePair {
        seg_id: seg.seg_id(),
        chosen: seg.middle.clone(),
        rejected: "if not n:\n    print(n)\n".into(),
        edit_distance: 4,
        chosen_index: 0,
        rejected_index: 1,
    };
    let sources: Vec<_> = (0..10_000)
        .map(|_| PairSource {
            pair: &pair,
            seg: &seg,
            question: "Print n.",
        })
        .collect();
    let fim = |alpha| {
        dataset::build_records(&sources, 1234, alpha, &Sentinels::default())
            .unwrap()
            .iter()
            .filter(|r| r.style == Style::Fim)
            .count()
    };
    let (half, none, all) = (fim(0.5), fim(0.0), fim(1.0));
    let frac = half as f64 / 10_000.0;
    check(
        (0.48..=0.52).contains(&frac) && none == 0 && all == 10_000,
        format!("10000 records, seed 1234: alpha=0.5 -> {frac:.4} Fim (in [0.48, 0.52]), alpha=0 -> {none} Fim, alpha=1 -> {all} Fim"),
    )
}

fn read_jsonl(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap_or_default()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn normalized(text: &str) -> Vec<&str> {
    let mut lines: Vec<&str> = text.split('\n').map(|l| l.trim_end()).collect();
    while lines.last() == Some(&"") {
        lines.pop();
    }
    lines
}

fn io_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(|i| i.as_str().unwrap()).collect::<Vec<_>>().join("\n") + "\n",
        other => panic!("unexpected test payload {other}"),
    }
}

/// Runs `program` directly under python3; true when every test matches.
fn passes_all(program: &str, tests: &[(String, String)]) -> bool {
    tests.iter().all(|(input, expected)| {
        let mut child = Command::new("timeout")
            .args(["10", "python3", "-c", program])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("python3 available");
        let mut stdin = child.stdin.take().unwrap();
        let payload = input.clone();
        let writer = std::thread::spawn(move || {
            let _ = stdin.write_all(payload.as_bytes());
        });
        let out = child.wait_with_output().unwrap();
        let _ = writer.join();
        out.status.success() && normalized(&String::from_utf8_lossy(&out.stdout)) == normalized(expected)
    })
}

fn comment(question: &str) -> String {
    let mut s: String = question.lines().map(|l| format!("# {l}\n")).collect();
    s.push_str("#\n");
    s
}

/// Rebuilds (chosen program, rejected program) from a dataset line alone.
fn programs(line: &Value, question: &str) -> Option<(String, String)> {
    let s = Sentinels::default();
    let span = |key: &str, text: &str| -> Option<String> {
        let a = line[key][0].as_u64()? as usize;
        let b = line[key][1].as_u64()? as usize;
        Some(text.chars().skip(a).take(b - a).collect())
    };
    let chosen_resp = line["chosen_response"].as_str()?;
    let rejected_resp = line["rejected_response"].as_str()?;
    match line["style"].as_str()? {
        "chat" => {
            if line["prompt_or_user"].as_str()? != question {
                return None;
            }
            Some((chosen_resp.to_string(), rejected_resp.to_string()))
        }
        "fim" => {
            let prompt = line["prompt_or_user"].as_str()?;
            let body = prompt.strip_prefix(&format!("{}{}", s.pre, comment(question)))?;
            let (prefix, rest) = body.split_once(&s.suf)?;
            let suffix = rest.strip_suffix(&s.mid)?;
            let chosen = chosen_resp.strip_suffix(&s.eot)?;
            let rejected = rejected_resp.strip_suffix(&s.eot)?;
            if span("chosen_loss_span", chosen_resp)? != chosen || span("rejected_loss_span", rejected_resp)? != rejected {
                return None;
            }
            Some((format!("{prefix}{chosen}{suffix}"), format!("{prefix}{rejected}{suffix}")))
        }
        _ => None,
    }
}

fn end_to_end(out: &Path) -> Outcome {
    let mut cfg = fimforge::config::PipelineConfig::default();
    cfg.seed = 2024;
    cfg.corpus.root = common::apps_root();
    cfg.exec.runner = common::runner_cmd();
    cfg.output.dir = out.to_path_buf();
    let ws = Workspace::new(out);
    let start = Instant::now();
    let manifest = match pipeline::run_all(
        &cfg,
        &ws,
        &StubBackend::new(cfg.seed),
        &SubprocessRunner::new(cfg.exec.runner.clone()),
        Stage::Ingest,
    ) {
        Ok(m) => m,
        Err(e) => return Outcome::Fail(format!("pipeline error: {e:#}")),
    };
    let elapsed = start.elapsed();

    // Independent judging from the fixture files and the emitted dataset.
    let mut tasks: HashMap<String, (String, Vec<(String, String)>)> = HashMap::new();
    for entry in std::fs::read_dir(common::apps_root()).unwrap() {
        let dir = entry.unwrap().path();
        let id = dir.file_name().unwrap().to_string_lossy().into_owned();
        let io: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("input_output.json")).unwrap()).unwrap();
        let tests = io["inputs"]
            .as_array()
            .unwrap()
            .iter()
            .zip(io["outputs"].as_array().unwrap())
            .map(|(i, o)| (io_text(i), io_text(o)))
            .collect();
        tasks.insert(id, (std::fs::read_to_string(dir.join("question.txt")).unwrap(), tests));
    }
    let lines = read_jsonl(&out.join("dataset.jsonl"));
    let pairs = read_jsonl(&out.join("pairs.jsonl"));
    let verify_start = Instant::now();
    let mut cache: HashMap<String, bool> = HashMap::new();
    let (mut bad_chosen, mut bad_rejected, mut unparsable) = (0, 0, 0);
    for line in &lines {
        let (question, tests) = &tasks[line["task_id"].as_str().unwrap()];
        let Some((chosen, rejected)) = programs(line, question) else {
            unparsable += 1;
            continue;
        };
        let mut verdict = |p: &String| *cache.entry(p.clone()).or_insert_with(|| passes_all(p, tests));
        bad_chosen += usize::from(!verdict(&chosen));
        bad_rejected += usize::from(verdict(&rejected));
    }
    let kinds: std::collections::BTreeSet<_> = lines.iter().filter_map(|l| l["block_kind"].as_str()).collect();
    check(
        !lines.is_empty()
            && lines.len() == pairs.len()
            && manifest.counts.records == lines.len()
            && bad_chosen == 0
            && bad_rejected == 0
            && unparsable == 0
            && elapsed < Duration::from_secs(120),
        format!(
            "{} records from {} pairs over kinds {kinds:?}; chosen failing: {bad_chosen}, rejected passing: {bad_rejected}, unreadable: {unparsable}; {} distinct programs re-judged in {:.2?}; pipeline {elapsed:.2?} (< 120s)",
            lines.len(),
            pairs.len(),
            cache.len(),
            verify_start.elapsed()
        ),
    )
}

fn apps_distribution() -> Outcome {
    let Ok(root) = std::env::var("FIMFORGE_APPS_ROOT") else {
        return Outcome::Skip("set FIMFORGE_APPS_ROOT to an APPS train/ directory to run".into());
    };
    let corpus = match load_corpus(Path::new(&root), None) {
        Ok(c) => c,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    use rayon::prelude::*;
    let (counts, failures) = corpus
        .tasks
        .par_iter()
        .flat_map(|t| t.solutions.par_iter())
        .map(|s| {
            let mut c = BTreeMap::new();
            let src = normalize_source(s, None).unwrap();
            match parse_blocks(&src) {
                Ok(blocks) => {
                    for b in blocks {
                        *c.entry(b.kind).or_insert(0usize) += 1;
                    }
                    (c, 0usize)
                }
                Err(_) => (c, 1),
            }
        })
        .reduce(
            || (BTreeMap::new(), 0),
            |(mut a, fa), (b, fb)| {
                for (k, v) in b {
                    *a.entry(k).or_insert(0) += v;
                }
                (a, fa + fb)
            },
        );
    let total: usize = counts.values().sum();
    let reference = [
        (BlockKind::If, 41.54),
        (BlockKind::For, 32.09),
        (BlockKind::Function, 18.63),
        (BlockKind::While, 7.74),
    ];
    let mut ok = total > 0;
    let mut parts = Vec::new();
    for (k, want) in reference {
        let got = 100.0 * counts.get(&k).copied().unwrap_or(0) as f64 / total.max(1) as f64;
        ok &= (got - want).abs() <= 2.0;
        parts.push(format!("{k} {got:.2}% (ref {want}%)"));
    }
    check(
        ok,
        format!(
            "{} tasks, {total} blocks, {failures} unparsable solutions: {}",
            corpus.tasks.len(),
            parts.join(", ")
        ),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let e2e_dir = tmp.path().join("e2e");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("reconstruction", Box::new(reconstruction)),
        ("segmenter oracle", Box::new(segmenter_oracle)),
        ("DPO identity", Box::new(dpo_identity)),
        ("decomposition", Box::new(decomposition)),
        ("pairing oracle", Box::new(pairing)),
        ("format mixing", Box::new(format_mixing)),
        ("end-to-end stub run", Box::new({
            let d = e2e_dir.clone();
            move || end_to_end(&d)
        })),
        ("curriculum", Box::new({
            let d = e2e_dir.clone();
            move || curriculum(&d)
        })),
        ("APPS block distribution (optional)", Box::new(apps_distribution)),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run()))
            .unwrap_or_else(|_| Outcome::Fail("panicked".into()));
        match outcome {
            Outcome::Pass(d) => println!("PASS  {name}: {d}"),
            Outcome::Skip(d) => println!("SKIP  {name}: {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("FAIL  {name}: {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
