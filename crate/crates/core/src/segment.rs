//! AST block extraction and `(prefix, middle, suffix)` segmentation.
//!
//! Golden solutions are parsed with the tree-sitter Python grammar. Every
//! `if`, `for`, `while` and function-definition node becomes a [`Block`],
//! nested ones included. Block spans always cover whole lines, a
//! conditional's span covers its `elif`/`else` clauses, and a decorated
//! function's span starts at its first decorator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::fmt;
use tree_sitter::{Node, Parser, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    If,
    For,
    While,
    Function,
    /// Synthetic: the whole solution, or a random span for FIM evaluation.
    WholeProgram,
}

impl BlockKind {
    pub const AST_KINDS: [BlockKind; 4] = [BlockKind::If, BlockKind::For, BlockKind::While, BlockKind::Function];

    pub fn as_str(self) -> &'static str {
        match self {
            BlockKind::If => "if",
            BlockKind::For => "for",
            BlockKind::While => "while",
            BlockKind::Function => "function",
            BlockKind::WholeProgram => "whole_program",
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    pub start_byte: usize,
    pub end_byte: usize,
    /// 1-based, inclusive.
    pub start_line: usize,
    pub end_line: usize,
    /// Number of enclosing blocks of the four AST kinds.
    pub depth: usize,
    pub line_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    pub task_id: String,
    pub solution_index: usize,
    pub block: Block,
    pub prefix: String,
    pub middle: String,
    pub suffix: String,
}

impl Segmentation {
    /// Identifier unique within a corpus run.
    pub fn seg_id(&self) -> String {
        format!(
            "{}#{}@{}-{}:{}",
            self.task_id, self.solution_index, self.block.start_line, self.block.end_line, self.block.kind
        )
    }

    pub fn source(&self) -> String {
        [self.prefix.as_str(), &self.middle, &self.suffix].concat()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("syntax error at line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SegmentError {
    #[error("block bytes {start}..{end} do not fit a {len}-byte source on line boundaries")]
    OutOfRange { start: usize, end: usize, len: usize },
    #[error("source with {lines} line(s) has no maskable span")]
    UnmaskableSource { lines: usize },
}

thread_local! {
    static PARSER: RefCell<Parser> = RefCell::new({
        let mut p = Parser::new();
        p.set_language(&tree_sitter_python::LANGUAGE.into())
            .expect("bundled Python grammar matches the tree-sitter ABI");
        p
    });
}

fn parse_tree(source: &str) -> Tree {
    PARSER.with(|p| p.borrow_mut().parse(source, None).expect("parser has a language and no timeout"))
}

/// Byte offset at which each line starts, plus a final entry equal to `len`
/// when the source does not end with a newline.
struct LineIndex {
    starts: Vec<usize>,
    len: usize,
}

impl LineIndex {
    fn new(source: &str) -> Self {
        let mut starts = vec![0];
        starts.extend(source.match_indices('\n').map(|(i, _)| i + 1));
        if starts.last() == Some(&source.len()) && !source.is_empty() {
            starts.pop();
        }
        if source.is_empty() {
            starts.clear();
        }
        Self {
            starts,
            len: source.len(),
        }
    }

    fn line_count(&self) -> usize {
        self.starts.len()
    }

    /// Start byte of 0-based `row`.
    fn start(&self, row: usize) -> usize {
        self.starts[row]
    }

    /// Byte just past the end (including newline) of 0-based `row`.
    fn end(&self, row: usize) -> usize {
        self.starts.get(row + 1).copied().unwrap_or(self.len)
    }

    fn is_boundary(&self, byte: usize) -> bool {
        byte == self.len || self.starts.binary_search(&byte).is_ok()
    }
}

fn ast_kind(node: &Node) -> Option<BlockKind> {
    match node.kind() {
        "if_statement" => Some(BlockKind::If),
        "for_statement" => Some(BlockKind::For),
        "while_statement" => Some(BlockKind::While),
        "function_definition" => Some(BlockKind::Function),
        "decorated_definition" => node
            .child_by_field_name("definition")
            .filter(|d| d.kind() == "function_definition")
            .map(|_| BlockKind::Function),
        _ => None,
    }
}

/// Row of the last non-comment token under `node`. Comments trailing a block
/// at the block's indentation are attached to the node by the grammar but do
/// not belong to the statement.
fn content_end_row(node: Node) -> usize {
    let mut current = node;
    loop {
        let mut cursor = current.walk();
        let last = current
            .children(&mut cursor)
            .filter(|c| c.kind() != "comment")
            .last();
        match last {
            Some(child) => current = child,
            None => return current.end_position().row,
        }
    }
}

fn first_error(node: Node) -> Option<Node> {
    if node.is_error() || node.is_missing() {
        return Some(node);
    }
    if !node.has_error() {
        return None;
    }
    let mut cursor = node.walk();
    let children: Vec<Node> = node.children(&mut cursor).collect();
    children.into_iter().find_map(first_error)
}

/// Extracts every if/for/while/function block of `source`, ordered by start
/// byte and then by descending span length.
pub fn parse_blocks(source: &str) -> Result<Vec<Block>, ParseError> {
    let tree = parse_tree(source);
    let root = tree.root_node();
    if let Some(err) = first_error(root) {
        let pos = err.start_position();
        let message = if err.is_missing() {
            format!("missing {}", err.kind())
        } else {
            "unexpected input".to_string()
        };
        return Err(ParseError {
            line: pos.row + 1,
            column: pos.column + 1,
            message,
        });
    }

    let lines = LineIndex::new(source);
    let mut blocks = Vec::new();
    let mut stack: Vec<(Node, usize)> = vec![(root, 0)];
    while let Some((node, depth)) = stack.pop() {
        let mut child_depth = depth;
        // The function inside a decorated definition was already emitted
        // with the decorator span.
        let wrapped = node.kind() == "function_definition"
            && node.parent().is_some_and(|p| p.kind() == "decorated_definition");
        if let Some(kind) = ast_kind(&node).filter(|_| !wrapped) {
            let start_row = node.start_position().row;
            let end_row = content_end_row(node);
            blocks.push(Block {
                kind,
                start_byte: lines.start(start_row),
                end_byte: lines.end(end_row),
                start_line: start_row + 1,
                end_line: end_row + 1,
                depth,
                line_count: end_row - start_row + 1,
            });
            child_depth = depth + 1;
        }
        let mut cursor = node.walk();
        let children: Vec<Node> = node.children(&mut cursor).collect();
        for child in children.into_iter().rev() {
            if child.is_named() {
                stack.push((child, child_depth));
            }
        }
    }
    blocks.sort_by_key(|b| (b.start_byte, std::cmp::Reverse(b.end_byte - b.start_byte)));
    Ok(blocks)
}

/// Splits `source` around `block` so that `prefix + middle + suffix == source`.
pub fn segment(
    task_id: &str,
    solution_index: usize,
    source: &str,
    block: &Block,
) -> Result<Segmentation, SegmentError> {
    let lines = LineIndex::new(source);
    let (start, end) = (block.start_byte, block.end_byte);
    if start >= end || end > source.len() || !lines.is_boundary(start) || !lines.is_boundary(end) {
        return Err(SegmentError::OutOfRange {
            start,
            end,
            len: source.len(),
        });
    }
    Ok(Segmentation {
        task_id: task_id.to_string(),
        solution_index,
        block: block.clone(),
        prefix: source[..start].to_string(),
        middle: source[start..end].to_string(),
        suffix: source[end..].to_string(),
    })
}

/// The synthetic block covering the entire source, or `None` for empty text.
pub fn whole_program(source: &str) -> Option<Block> {
    let lines = LineIndex::new(source);
    let n = lines.line_count();
    (n > 0).then(|| Block {
        kind: BlockKind::WholeProgram,
        start_byte: 0,
        end_byte: source.len(),
        start_line: 1,
        end_line: n,
        depth: 0,
        line_count: n,
    })
}

/// Masks a random contiguous run of whole lines for FIM evaluation.
///
/// The start line is drawn uniformly from all lines, then the span length
/// uniformly from `1..=min(lines - 1, lines - start + 1)`, so the middle
/// never covers the whole file.
pub fn mask_random_span(
    task_id: &str,
    solution_index: usize,
    source: &str,
    seed: u64,
) -> Result<Segmentation, SegmentError> {
    let lines = LineIndex::new(source);
    let n = lines.line_count();
    if n < 2 {
        return Err(SegmentError::UnmaskableSource { lines: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start_row = rng.random_range(0..n);
    let max_len = (n - 1).min(n - start_row);
    let span = rng.random_range(1..=max_len);
    let end_row = start_row + span - 1;
    let block = Block {
        kind: BlockKind::WholeProgram,
        start_byte: lines.start(start_row),
        end_byte: lines.end(end_row),
        start_line: start_row + 1,
        end_line: end_row + 1,
        depth: 0,
        line_count: span,
    };
    segment(task_id, solution_index, source, &block)
}

/// Whether `snippet` parses on its own as a single compound statement or
/// function definition after removing its common indentation.
pub fn is_standalone_block(snippet: &str) -> bool {
    let dedented = dedent(snippet);
    let tree = parse_tree(&dedented);
    let root = tree.root_node();
    if root.has_error() {
        return false;
    }
    let mut cursor = root.walk();
    let stmts: Vec<Node> = root
        .children(&mut cursor)
        .filter(|c| c.kind() != "comment")
        .collect();
    stmts.len() == 1 && ast_kind(&stmts[0]).is_some()
}

fn dedent(text: &str) -> String {
    let indent = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.len() - l.trim_start().len())
        .min()
        .unwrap_or(0);
    text.split_inclusive('\n')
        .map(|l| if l.len() >= indent && l[..indent].trim().is_empty() { &l[indent..] } else { l.trim_start() })
        .collect()
}
