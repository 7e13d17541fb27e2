//! Seeded source mutations used as an offline stand-in for a FIM model.
//!
//! Four operators, applied to a lexed view of the snippet so that string
//! literals and comments are never touched:
//!
//! * comparison flip: `<`/`<=`, `>`/`>=`, `==`/`!=`
//! * integer literal off-by-one (both directions)
//! * identifier swap: one occurrence replaced by another identifier of the snippet
//! * deletion of one non-blank line
//!
//! Draws cycle through the operators in that order, each draw taking a random
//! unused site of the current operator, so the first mutant is a comparison
//! flip whenever the snippet has a comparison.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operator {
    ComparisonFlip,
    IntOffByOne,
    IdentifierSwap,
    LineDeletion,
}

impl Operator {
    const ORDER: [Operator; 4] = [
        Operator::ComparisonFlip,
        Operator::IntOffByOne,
        Operator::IdentifierSwap,
        Operator::LineDeletion,
    ];
}

/// One replacement of `text[start..end]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Site {
    pub op: Operator,
    pub start: usize,
    pub end: usize,
    pub replacement: String,
}

impl Site {
    pub fn apply(&self, text: &str) -> String {
        format!("{}{}{}", &text[..self.start], self.replacement, &text[self.end..])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MutationSet {
    /// The verbatim middle followed by the mutants, in draw order.
    pub candidates: Vec<String>,
    /// Fewer than the requested mutants could be produced.
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MutateError {
    #[error("cannot mutate an empty middle")]
    EmptyMiddle,
}

const KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class", "continue", "def", "del",
    "elif", "else", "except", "finally", "for", "from", "global", "if", "import", "in", "is", "lambda", "nonlocal",
    "not", "or", "pass", "raise", "return", "try", "while", "with", "yield", "match", "case",
];

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token<'a> {
    Compare(&'a str),
    Int(&'a str),
    Ident(&'a str),
}

/// Lexes just enough Python to find mutation sites, skipping strings and comments.
fn lex(text: &str) -> Vec<(usize, Token<'_>)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b'#' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'\'' | b'"' => i = skip_string(bytes, i),
            b'0'..=b'9' => {
                let start = i;
                i = skip_number(bytes, i);
                let lit = &text[start..i];
                if lit.bytes().all(|b| b.is_ascii_digit() || b == b'_') && (lit == "0" || !lit.starts_with('0')) {
                    out.push((start, Token::Int(lit)));
                }
            }
            b'.' if bytes.get(i + 1).is_some_and(u8::is_ascii_digit) => i = skip_number(bytes, i + 1),
            b'<' | b'>' => {
                let next = bytes.get(i + 1).copied();
                if next == Some(c) {
                    // shift operator, possibly augmented
                    i += if bytes.get(i + 2) == Some(&b'=') { 3 } else { 2 };
                } else if next == Some(b'=') {
                    out.push((i, Token::Compare(&text[i..i + 2])));
                    i += 2;
                } else {
                    out.push((i, Token::Compare(&text[i..i + 1])));
                    i += 1;
                }
            }
            b'=' | b'!' if bytes.get(i + 1) == Some(&b'=') => {
                out.push((i, Token::Compare(&text[i..i + 2])));
                i += 2;
            }
            b'-' if bytes.get(i + 1) == Some(&b'>') => i += 2,
            _ if c == b'_' || c.is_ascii_alphabetic() || c >= 0x80 => {
                let start = i;
                while i < bytes.len() && (bytes[i] == b'_' || bytes[i].is_ascii_alphanumeric() || bytes[i] >= 0x80) {
                    i += 1;
                }
                let word = &text[start..i];
                let is_prefix = word.len() <= 2
                    && word.chars().all(|ch| "rRbBfFuU".contains(ch))
                    && matches!(bytes.get(i), Some(b'\'' | b'"'));
                if is_prefix {
                    i = skip_string(bytes, i);
                } else {
                    out.push((start, Token::Ident(word)));
                }
            }
            _ => i += 1,
        }
    }
    out
}

fn skip_string(bytes: &[u8], start: usize) -> usize {
    let quote = bytes[start];
    let triple = bytes.get(start + 1) == Some(&quote) && bytes.get(start + 2) == Some(&quote);
    let mut i = start + if triple { 3 } else { 1 };
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b'\n' if !triple => return i,
            q if q == quote => {
                if !triple {
                    return i + 1;
                }
                if bytes.get(i + 1) == Some(&quote) && bytes.get(i + 2) == Some(&quote) {
                    return i + 3;
                }
                i += 1;
            }
            _ => i += 1,
        }
    }
    bytes.len()
}

fn skip_number(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() {
        let b = bytes[i];
        if b.is_ascii_alphanumeric() || b == b'_' || b == b'.' {
            i += 1;
        } else if (b == b'+' || b == b'-') && matches!(bytes[i - 1], b'e' | b'E') {
            i += 1;
        } else {
            break;
        }
    }
    i
}

/// Enumerates every mutation site of `text`, grouped in operator order.
pub fn mutation_sites(text: &str) -> Vec<Site> {
    let tokens = lex(text);
    let mut sites = Vec::new();

    for (pos, tok) in &tokens {
        if let Token::Compare(op) = tok {
            let flipped = match *op {
                "<" => "<=",
                "<=" => "<",
                ">" => ">=",
                ">=" => ">",
                "==" => "!=",
                "!=" => "==",
                _ => continue,
            };
            sites.push(Site {
                op: Operator::ComparisonFlip,
                start: *pos,
                end: pos + op.len(),
                replacement: flipped.to_string(),
            });
        }
    }

    for (pos, tok) in &tokens {
        if let Token::Int(lit) = tok {
            let Ok(value) = lit.replace('_', "").parse::<u128>() else {
                continue;
            };
            let mut push = |v: u128| {
                sites.push(Site {
                    op: Operator::IntOffByOne,
                    start: *pos,
                    end: pos + lit.len(),
                    replacement: v.to_string(),
                })
            };
            push(value + 1);
            if value > 0 {
                push(value - 1);
            }
        }
    }

    let idents: Vec<(usize, &str)> = tokens
        .iter()
        .filter_map(|(p, t)| match t {
            Token::Ident(w) if !KEYWORDS.contains(w) => Some((*p, *w)),
            _ => None,
        })
        .collect();
    let names: BTreeSet<&str> = idents.iter().map(|(_, w)| *w).collect();
    for (pos, word) in &idents {
        for other in names.iter().filter(|n| *n != word) {
            sites.push(Site {
                op: Operator::IdentifierSwap,
                start: *pos,
                end: pos + word.len(),
                replacement: other.to_string(),
            });
        }
    }

    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if !line.trim().is_empty() {
            sites.push(Site {
                op: Operator::LineDeletion,
                start: offset,
                end: offset + line.len(),
                replacement: String::new(),
            });
        }
        offset += line.len();
    }
    sites
}

/// Returns `[middle]` followed by up to `k` distinct mutants of it.
pub fn mutate_golden(middle: &str, seed: u64, k: usize) -> Result<MutationSet, MutateError> {
    if middle.is_empty() {
        return Err(MutateError::EmptyMiddle);
    }
    let mut pools: Vec<Vec<Site>> = vec![Vec::new(); Operator::ORDER.len()];
    for site in mutation_sites(middle) {
        let slot = Operator::ORDER.iter().position(|o| *o == site.op).expect("known operator");
        pools[slot].push(site);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates = vec![middle.to_string()];
    let mut cursor = 0;
    while candidates.len() <= k {
        let Some(slot) = (0..pools.len())
            .map(|step| (cursor + step) % pools.len())
            .find(|&s| !pools[s].is_empty())
        else {
            break;
        };
        let pool = &mut pools[slot];
        let site = pool.swap_remove(rng.random_range(0..pool.len()));
        let mutant = site.apply(middle);
        if !candidates.contains(&mutant) {
            candidates.push(mutant);
            cursor = slot + 1;
        }
    }
    let exhausted = candidates.len() <= k;
    Ok(MutationSet { candidates, exhausted })
}
