//! Line-oriented text format for topology fixtures and dumps.
//!
//! ```text
//! node 0
//! node 1
//! link 0 0 1 4 A
//! ```
//!
//! `node <id>` lines first, then `link <id> <src> <tgt> <weight> <A|I|U>`
//! lines. Blank lines and `#` comments are ignored.

use thiserror::Error;

use crate::topology::{LinkId, LinkState, NodeId, Topology, TopologyError};

#[derive(Debug, Error, PartialEq)]
pub enum TextError {
    #[error("line {line}: expected `node <id>` or `link <id> <src> <tgt> <weight> <A|I|U>`")]
    Malformed { line: usize },
    #[error("line {line}: bad number")]
    BadNumber { line: usize },
    #[error("line {line}: bad state (expected A, I or U)")]
    BadState { line: usize },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: TopologyError,
    },
}

pub fn to_text(t: &Topology) -> String {
    let mut out = String::new();
    for n in t.node_ids() {
        out.push_str(&format!("node {}\n", n.0));
    }
    for l in t.links() {
        out.push_str(&format!(
            "link {} {} {} {} {}\n",
            l.id.0,
            l.src.0,
            l.tgt.0,
            l.weight,
            l.state.letter()
        ));
    }
    out
}

pub fn from_text(input: &str) -> Result<Topology, TextError> {
    let mut t = Topology::new();
    for (idx, raw) in input.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut parts = content.split_whitespace();
        match parts.next() {
            Some("node") => {
                let id = parse_u64(parts.next(), line)?;
                if parts.next().is_some() {
                    return Err(TextError::Malformed { line });
                }
                t.insert_node(NodeId(id)).map_err(|source| TextError::Invalid { line, source })?;
            }
            Some("link") => {
                let id = parse_u64(parts.next(), line)?;
                let src = parse_u64(parts.next(), line)?;
                let tgt = parse_u64(parts.next(), line)?;
                let weight = parse_f64(parts.next(), line)?;
                let state = parts
                    .next()
                    .and_then(|s| {
                        let mut chars = s.chars();
                        match (chars.next(), chars.next()) {
                            (Some(c), None) => LinkState::from_letter(c),
                            _ => None,
                        }
                    })
                    .ok_or(TextError::BadState { line })?;
                if parts.next().is_some() {
                    return Err(TextError::Malformed { line });
                }
                t.insert_link(LinkId(id), NodeId(src), NodeId(tgt), weight, state)
                    .map_err(|source| TextError::Invalid { line, source })?;
            }
            _ => return Err(TextError::Malformed { line }),
        }
    }
    Ok(t)
}

fn parse_u64(field: Option<&str>, line: usize) -> Result<u64, TextError> {
    field
        .ok_or(TextError::Malformed { line })?
        .parse()
        .map_err(|_| TextError::BadNumber { line })
}

fn parse_f64(field: Option<&str>, line: usize) -> Result<f64, TextError> {
    let v: f64 = field
        .ok_or(TextError::Malformed { line })?
        .parse()
        .map_err(|_| TextError::BadNumber { line })?;
    Ok(v)
}
