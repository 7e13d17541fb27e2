//! APPS-format corpus loading and golden-source normalization.
//!
//! Each task lives in its own directory holding `question.txt`,
//! `solutions.json` (array of source strings) and `input_output.json`
//! (`{"inputs": [...], "outputs": [...]}`). Only stdin/stdout-judged tasks
//! are loaded; call-based tasks (those declaring `fn_name`) are skipped and
//! counted.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub input: String,
    pub expected: String,
    /// Set when the expected output is empty after normalization, so an
    /// empty expectation is always explicit.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub expects_empty: bool,
}

impl TestCase {
    pub fn new(input: impl Into<String>, expected: impl Into<String>) -> Self {
        let expected = expected.into();
        let expects_empty = expected.trim_end().is_empty();
        Self {
            input: input.into(),
            expected,
            expects_empty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeTask {
    pub task_id: String,
    pub question: String,
    pub solutions: Vec<String>,
    pub tests: Vec<TestCase>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    CallBased,
    Malformed,
    NoSolutions,
    NoTests,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipReason::CallBased => "call_based",
            SkipReason::Malformed => "malformed",
            SkipReason::NoSolutions => "no_solutions",
            SkipReason::NoTests => "no_tests",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedTask {
    pub task_id: String,
    pub reason: SkipReason,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadedCorpus {
    pub tasks: Vec<CodeTask>,
    pub skipped: Vec<SkippedTask>,
}

impl LoadedCorpus {
    pub fn skip_counts(&self) -> BTreeMap<SkipReason, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.skipped {
            *counts.entry(s.reason).or_insert(0) += 1;
        }
        counts
    }

    pub fn scanned(&self) -> usize {
        self.tasks.len() + self.skipped.len()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("corpus root {0} does not exist or is not a directory")]
    MissingRoot(PathBuf),
    #[error("reading corpus root {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum NormalizeError {
    #[error("failed to spawn formatter `{cmd}`: {source}")]
    Spawn {
        cmd: String,
        #[source]
        source: std::io::Error,
    },
    #[error("formatter `{cmd}` exited with {status}: {stderr}")]
    Failed {
        cmd: String,
        status: String,
        stderr: String,
    },
    #[error("formatter `{cmd}` produced non-UTF-8 output")]
    NotUtf8 { cmd: String },
}

/// Loads every task directory under `root` in lexicographic order.
///
/// With `limit`, scanning stops once that many tasks have been loaded.
pub fn load_corpus(root: &Path, limit: Option<usize>) -> Result<LoadedCorpus, CorpusError> {
    if !root.is_dir() {
        return Err(CorpusError::MissingRoot(root.to_path_buf()));
    }
    let entries = fs::read_dir(root).map_err(|source| CorpusError::Io {
        path: root.to_path_buf(),
        source,
    })?;
    let mut dirs: Vec<(String, PathBuf)> = entries
        .filter_map(Result::ok)
        .filter(|e| e.path().is_dir())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), e.path()))
        .collect();
    dirs.sort();

    let parsed: Vec<Result<CodeTask, SkippedTask>> = dirs
        .par_iter()
        .map(|(id, path)| load_task(id, path))
        .collect();

    let mut corpus = LoadedCorpus::default();
    for item in parsed {
        if limit.is_some_and(|l| corpus.tasks.len() >= l) {
            break;
        }
        match item {
            Ok(task) => corpus.tasks.push(task),
            Err(skip) => {
                log::warn!("skipping task {}: {} ({})", skip.task_id, skip.reason, skip.detail);
                corpus.skipped.push(skip);
            }
        }
    }
    Ok(corpus)
}

#[derive(Deserialize)]
struct InputOutput {
    #[serde(default)]
    inputs: Vec<serde_json::Value>,
    #[serde(default)]
    outputs: Vec<serde_json::Value>,
    #[serde(default)]
    fn_name: Option<serde_json::Value>,
}

fn load_task(task_id: &str, dir: &Path) -> Result<CodeTask, SkippedTask> {
    let skip = |reason, detail: String| SkippedTask {
        task_id: task_id.to_string(),
        reason,
        detail,
    };
    let read = |name: &str| {
        fs::read_to_string(dir.join(name))
            .map_err(|e| skip(SkipReason::Malformed, format!("{name}: {e}")))
    };

    let io: InputOutput = serde_json::from_str(&read("input_output.json")?)
        .map_err(|e| skip(SkipReason::Malformed, format!("input_output.json: {e}")))?;
    if io.fn_name.is_some() {
        return Err(skip(SkipReason::CallBased, "declares fn_name".into()));
    }
    if io.inputs.len() != io.outputs.len() {
        return Err(skip(
            SkipReason::Malformed,
            format!("{} inputs vs {} outputs", io.inputs.len(), io.outputs.len()),
        ));
    }
    if io.inputs.is_empty() {
        return Err(skip(SkipReason::NoTests, "input_output.json has no tests".into()));
    }
    let mut tests = Vec::with_capacity(io.inputs.len());
    for (i, (input, output)) in io.inputs.iter().zip(&io.outputs).enumerate() {
        let (Some(input), Some(output)) = (io_text(input), io_text(output)) else {
            return Err(skip(SkipReason::Malformed, format!("test {i} is not text")));
        };
        tests.push(TestCase::new(input, output));
    }

    let solutions_path = dir.join("solutions.json");
    if !solutions_path.exists() {
        return Err(skip(SkipReason::NoSolutions, "solutions.json missing".into()));
    }
    let solutions: Vec<String> = serde_json::from_str(&read("solutions.json")?)
        .map_err(|e| skip(SkipReason::Malformed, format!("solutions.json: {e}")))?;
    if solutions.is_empty() {
        return Err(skip(SkipReason::NoSolutions, "solutions.json is empty".into()));
    }
    let question = read("question.txt")?;

    Ok(CodeTask {
        task_id: task_id.to_string(),
        question,
        solutions,
        tests,
    })
}

/// APPS stores most stdin/stdout payloads as strings, a few as line arrays.
fn io_text(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Array(items) => {
            let lines: Option<Vec<&str>> = items.iter().map(|i| i.as_str()).collect();
            lines.map(|l| {
                let mut s = l.join("\n");
                s.push('\n');
                s
            })
        }
        _ => None,
    }
}

/// Normalizes golden source text: LF line endings, no trailing whitespace on
/// any line, exactly one trailing newline. With `formatter_cmd` the LF text is
/// first piped through that shell command and its output is used.
///
/// Idempotent whenever the formatter itself is idempotent.
pub fn normalize_source(source: &str, formatter_cmd: Option<&str>) -> Result<String, NormalizeError> {
    let unified = source.replace("\r\n", "\n").replace('\r', "\n");
    let text = match formatter_cmd {
        Some(cmd) => run_formatter(cmd, &unified)?,
        None => unified,
    };
    let mut out = String::with_capacity(text.len() + 1);
    for line in text.split('\n') {
        out.push_str(line.trim_end());
        out.push('\n');
    }
    let trimmed = out.trim_end_matches('\n').len();
    out.truncate(trimmed);
    if !out.is_empty() {
        out.push('\n');
    }
    Ok(out)
}

fn run_formatter(cmd: &str, input: &str) -> Result<String, NormalizeError> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| NormalizeError::Spawn {
            cmd: cmd.to_string(),
            source,
        })?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let payload = input.to_string();
    let writer = std::thread::spawn(move || stdin.write_all(payload.as_bytes()));
    let output = child.wait_with_output().map_err(|source| NormalizeError::Spawn {
        cmd: cmd.to_string(),
        source,
    })?;
    let _ = writer.join();
    if !output.status.success() {
        return Err(NormalizeError::Failed {
            cmd: cmd.to_string(),
            status: output.status.to_string(),
            stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
        });
    }
    String::from_utf8(output.stdout).map_err(|_| NormalizeError::NotUtf8 { cmd: cmd.to_string() })
}

/// Stable content hash over the loaded tasks, recorded in dataset manifests.
pub fn corpus_hash(tasks: &[CodeTask]) -> String {
    let mut hasher = Sha256::new();
    for task in tasks {
        let bytes = serde_json::to_vec(task).expect("CodeTask serializes");
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    hex::encode(hasher.finalize())
}
