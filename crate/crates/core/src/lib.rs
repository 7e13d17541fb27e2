//! fimforge: fine-grained fill-in-the-middle preference data for code DPO.
//!
//! The pipeline turns a small corpus of verified coding tasks into
//! test-verified preference pairs at AST-block granularity:
//!
//! 1. [`corpus`] loads APPS-style tasks and normalizes golden solutions.
//! 2. [`segment`] splits each golden solution at `if`/`for`/`while`/`def`
//!    blocks into `(prefix, middle, suffix)` triples.
//! 3. [`prompt`] renders FIM prompts and training texts.
//! 4. [`generate`] samples candidate middles from a completion service or
//!    from a seeded mutation stub.
//! 5. [`judge`] assembles and executes candidates against the task tests.
//! 6. [`pairs`] matches every failing candidate to its nearest passing one.
//! 7. [`dataset`] orders, formats and emits the final training records.
//!
//! [`dpo`] is independent of the pipeline: it evaluates the segment-masked
//! DPO loss and per-token implicit rewards over log-probability files.

pub mod config;
pub mod corpus;
pub mod dataset;
pub mod dpo;
pub mod generate;
pub mod judge;
pub mod jsonl;
pub mod pairs;
pub mod pipeline;
pub mod prompt;
pub mod segment;

pub use corpus::{CodeTask, TestCase};
pub use segment::{Block, BlockKind, Segmentation};
