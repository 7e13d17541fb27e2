//! Program assembly and test-case judging.
//!
//! Candidates are spliced into their segmentation and each test case is sent
//! to a runner as one JSON job `{program, stdin, timeout_s}`. The runner
//! answers with one JSON line `{verdict, stdout, stderr, exit_code, wall_ms}`
//! whose verdict is one of `accepted|runtime_error|compile_error|timeout`;
//! comparing stdout against the expected output, and therefore deciding
//! `wrong_answer`, happens here.

use crate::corpus::TestCase;
use crate::segment::Segmentation;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::os::unix::process::CommandExt;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    WrongAnswer,
    RuntimeError,
    CompileError,
    Timeout,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Accepted => "accepted",
            Verdict::WrongAnswer => "wrong_answer",
            Verdict::RuntimeError => "runtime_error",
            Verdict::CompileError => "compile_error",
            Verdict::Timeout => "timeout",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub verdict: Verdict,
    pub wall_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgement {
    pub per_test: Vec<TestOutcome>,
    pub overall: Verdict,
}

impl Judgement {
    pub fn correct(&self) -> bool {
        self.overall == Verdict::Accepted
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub candidate: String,
    pub full_program: String,
    pub per_test: Vec<TestOutcome>,
    pub overall: Verdict,
    pub correct: bool,
}

impl CandidateResult {
    pub fn new(candidate: String, full_program: String, judgement: Judgement) -> Self {
        let correct = judgement.correct();
        Self {
            candidate,
            full_program,
            per_test: judgement.per_test,
            overall: judgement.overall,
            correct,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Limits {
    pub timeout_s: f64,
    /// Forwarded to runners that enforce it; unlimited when absent.
    pub memory_mb: Option<u64>,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            timeout_s: 10.0,
            memory_mb: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub program: String,
    pub stdin: String,
    pub timeout_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_mb: Option<u64>,
}

impl Job {
    pub fn new(program: impl Into<String>, stdin: impl Into<String>, timeout_s: f64) -> Self {
        Self {
            program: program.into(),
            stdin: stdin.into(),
            timeout_s,
            memory_mb: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunnerVerdict {
    Accepted,
    RuntimeError,
    CompileError,
    Timeout,
    ProtocolError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunnerReport {
    pub verdict: RunnerVerdict,
    #[serde(default)]
    pub stdout: String,
    #[serde(default)]
    pub stderr: String,
    #[serde(default)]
    pub exit_code: Option<i32>,
    #[serde(default)]
    pub wall_ms: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error("failed to start runner `{cmd}`: {source}")]
    Spawn {
        cmd: String,
        #[source]
        source: std::io::Error,
    },
    #[error("runner protocol violation: {0}")]
    Protocol(String),
}

/// Executes one job. Implementations must be callable from many threads.
pub trait Runner: Send + Sync {
    fn run(&self, job: &Job) -> Result<RunnerReport, RunnerError>;
}

/// Spawns an external runner process per job and enforces the wall-clock
/// limit itself: a runner still alive `timeout_s + grace` after spawn is
/// killed together with its process group and the test is a timeout.
#[derive(Debug, Clone)]
pub struct SubprocessRunner {
    argv: Vec<String>,
    grace: Duration,
}

impl SubprocessRunner {
    pub fn new(argv: Vec<String>) -> Self {
        Self {
            argv,
            grace: Duration::from_secs(1),
        }
    }

    pub fn with_grace(mut self, grace: Duration) -> Self {
        self.grace = grace;
        self
    }

    fn cmd_string(&self) -> String {
        self.argv.join(" ")
    }
}

fn kill_group(pid: u32) {
    // SAFETY: plain syscall; the child leads its own process group.
    unsafe {
        libc::kill(-(pid as libc::pid_t), libc::SIGKILL);
    }
}

impl Runner for SubprocessRunner {
    fn run(&self, job: &Job) -> Result<RunnerReport, RunnerError> {
        let (prog, args) = self
            .argv
            .split_first()
            .ok_or_else(|| RunnerError::Protocol("empty runner command".into()))?;
        let start = Instant::now();
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .process_group(0)
            .spawn()
            .map_err(|source| RunnerError::Spawn {
                cmd: self.cmd_string(),
                source,
            })?;

        let mut line = serde_json::to_vec(job).map_err(|e| RunnerError::Protocol(e.to_string()))?;
        line.push(b'\n');
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = thread::spawn(move || stdin.write_all(&line));
        let stdout = child.stdout.take().expect("piped stdout");
        let reader = thread::spawn(move || {
            let mut first = String::new();
            let _ = BufReader::new(stdout).read_line(&mut first);
            first
        });

        let deadline = Duration::from_secs_f64(job.timeout_s) + self.grace;
        let status = loop {
            if let Some(status) = child.try_wait().map_err(|e| RunnerError::Protocol(e.to_string()))? {
                break Some(status);
            }
            if start.elapsed() >= deadline {
                kill_group(child.id());
                let _ = child.wait();
                break None;
            }
            thread::sleep(Duration::from_millis(5));
        };
        // Take down anything the runner left behind in its group.
        kill_group(child.id());
        let _ = writer.join();
        let reply = reader.join().unwrap_or_default();

        let Some(status) = status else {
            return Ok(RunnerReport {
                verdict: RunnerVerdict::Timeout,
                stdout: String::new(),
                stderr: "killed by harness".into(),
                exit_code: None,
                wall_ms: start.elapsed().as_millis() as u64,
            });
        };
        let report: RunnerReport = serde_json::from_str(reply.trim()).map_err(|e| {
            RunnerError::Protocol(format!("bad result line {:?} (exit {status}): {e}", reply.trim()))
        })?;
        if report.verdict == RunnerVerdict::ProtocolError {
            return Err(RunnerError::Protocol(format!("runner rejected job: {}", report.stderr)));
        }
        Ok(report)
    }
}

/// Replays recorded runner results keyed by program hash and stdin.
#[derive(Debug, Clone, Default)]
pub struct RecordedRunner {
    results: HashMap<(String, String), RunnerReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Recording {
    pub program_sha256: String,
    pub stdin: String,
    pub result: RunnerReport,
}

impl RecordedRunner {
    pub fn program_key(program: &str) -> String {
        hex::encode(Sha256::digest(program.as_bytes()))
    }

    pub fn insert(&mut self, program: &str, stdin: &str, result: RunnerReport) {
        self.results
            .insert((Self::program_key(program), stdin.to_string()), result);
    }

    pub fn from_recordings(recordings: impl IntoIterator<Item = Recording>) -> Self {
        let results = recordings
            .into_iter()
            .map(|r| ((r.program_sha256, r.stdin), r.result))
            .collect();
        Self { results }
    }
}

impl Runner for RecordedRunner {
    fn run(&self, job: &Job) -> Result<RunnerReport, RunnerError> {
        self.results
            .get(&(Self::program_key(&job.program), job.stdin.clone()))
            .cloned()
            .ok_or_else(|| RunnerError::Protocol("no recorded result for job".into()))
    }
}

pub fn assemble(seg: &Segmentation, candidate: &str) -> String {
    let mut out = String::with_capacity(seg.prefix.len() + candidate.len() + seg.suffix.len());
    out.push_str(&seg.prefix);
    out.push_str(candidate);
    out.push_str(&seg.suffix);
    out
}

/// Lines with trailing whitespace removed, trailing blank lines dropped.
pub fn normalize_output(text: &str) -> Vec<&str> {
    let mut lines: Vec<&str> = text.split('\n').map(str::trim_end).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines
}

pub fn outputs_match(actual: &str, expected: &str) -> bool {
    normalize_output(actual) == normalize_output(expected)
}

/// Runs `program` on each test in order, stopping at the first failure.
pub fn judge(program: &str, tests: &[TestCase], limits: &Limits, runner: &dyn Runner) -> Judgement {
    let mut per_test = Vec::with_capacity(tests.len());
    for test in tests {
        let job = Job {
            program: program.to_string(),
            stdin: test.input.clone(),
            timeout_s: limits.timeout_s,
            memory_mb: limits.memory_mb,
        };
        let outcome = match runner.run(&job) {
            Ok(report) => {
                let verdict = match report.verdict {
                    RunnerVerdict::Accepted if outputs_match(&report.stdout, &test.expected) => Verdict::Accepted,
                    RunnerVerdict::Accepted => Verdict::WrongAnswer,
                    RunnerVerdict::RuntimeError => Verdict::RuntimeError,
                    RunnerVerdict::CompileError => Verdict::CompileError,
                    RunnerVerdict::Timeout => Verdict::Timeout,
                    RunnerVerdict::ProtocolError => Verdict::RuntimeError,
                };
                TestOutcome {
                    verdict,
                    wall_ms: report.wall_ms,
                    diagnostic: None,
                }
            }
            Err(e) => {
                log::warn!("runner failure: {e}");
                TestOutcome {
                    verdict: Verdict::RuntimeError,
                    wall_ms: 0,
                    diagnostic: Some(e.to_string()),
                }
            }
        };
        let failed = outcome.verdict != Verdict::Accepted;
        per_test.push(outcome);
        if failed {
            break;
        }
    }
    let overall = per_test
        .iter()
        .map(|t| t.verdict)
        .find(|v| *v != Verdict::Accepted)
        .unwrap_or(Verdict::Accepted);
    Judgement { per_test, overall }
}

/// Judges every candidate of one segmentation on up to `workers` threads,
/// returning results in candidate order.
pub fn judge_candidates(
    seg: &Segmentation,
    candidates: &[String],
    tests: &[TestCase],
    limits: &Limits,
    runner: &dyn Runner,
    workers: usize,
) -> Vec<CandidateResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| judge_batch(seg, candidates, tests, limits, runner))
}

/// Like [`judge_candidates`] but on the current rayon pool.
pub fn judge_batch(
    seg: &Segmentation,
    candidates: &[String],
    tests: &[TestCase],
    limits: &Limits,
    runner: &dyn Runner,
) -> Vec<CandidateResult> {
    candidates
        .par_iter()
        .map(|c| {
            let program = assemble(seg, c);
            let judgement = judge(&program, tests, limits, runner);
            CandidateResult::new(c.clone(), program, judgement)
        })
        .collect()
}
