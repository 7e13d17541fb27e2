//! Shared fixture helpers for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn apps_root() -> PathBuf {
    fixtures().join("apps")
}

pub fn runner_cmd() -> Vec<String> {
    vec![
        "python3".to_string(),
        fixtures().join("runner/exec_runner.py").display().to_string(),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct OracleBlock {
    pub kind: String,
    pub start_line: usize,
    pub end_line: usize,
    pub depth: usize,
}

/// Spans emitted once by `fixtures/oracle/python_ast_spans.py`.
pub fn oracle_spans() -> BTreeMap<String, Vec<OracleBlock>> {
    let text = fs::read_to_string(fixtures().join("oracle/expected_spans.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Every fixture source keyed the same way as the oracle output.
pub fn fixture_sources() -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(fixtures().join("snippets")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "py") {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            out.insert(format!("snippets/{name}"), fs::read_to_string(&path).unwrap());
        }
    }
    for entry in fs::read_dir(apps_root()).unwrap() {
        let dir = entry.unwrap().path();
        let task = dir.file_name().unwrap().to_string_lossy().into_owned();
        let sols: Vec<String> =
            serde_json::from_str(&fs::read_to_string(dir.join("solutions.json")).unwrap()).unwrap();
        for (i, s) in sols.into_iter().enumerate() {
            out.insert(format!("apps/{task}/{i}"), s);
        }
    }
    out
}
