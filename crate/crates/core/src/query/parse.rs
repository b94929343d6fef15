//! Textual pipeline syntax, one stage per `|`:
//!
//! ```text
//! seed <id>[,<id>...]          text "<words>" [k]          vector <x,y,...> [k]
//! traverse <type|*> [out|in|both] [depth|*]
//! filter_type <Type>[,<Type>...]
//! filter_time <from> [<to>]
//! where_connected <type> <out|in|both> <id>
//! in_world <id>
//! as_of <valid|ingested> <t>
//! include_superseded
//! prefer_summaries
//! ```
//!
//! Times are integer microseconds since the Unix epoch.

use crate::error::{Error, Result};
use crate::hash::Hash;
use crate::model::{EdgeType, NodeType};
use crate::time::Timestamp;

use super::{Axis, Direction, Op, Query, StartSet};

fn split_stages(src: &str) -> Result<Vec<Vec<String>>> {
    let mut stages = vec![Vec::new()];
    let mut word = String::new();
    let mut in_word = false;
    let mut quoted = false;
    let mut chars = src.chars();
    while let Some(c) = chars.next() {
        match c {
            '"' => {
                quoted = !quoted;
                in_word = true;
            }
            '\\' if quoted => {
                if let Some(n) = chars.next() {
                    word.push(n);
                }
            }
            '|' if !quoted => {
                if in_word {
                    stages.last_mut().expect("non-empty").push(std::mem::take(&mut word));
                    in_word = false;
                }
                stages.push(Vec::new());
            }
            c if c.is_whitespace() && !quoted => {
                if in_word {
                    stages.last_mut().expect("non-empty").push(std::mem::take(&mut word));
                    in_word = false;
                }
            }
            c => {
                word.push(c);
                in_word = true;
            }
        }
    }
    if quoted {
        return Err(Error::Parse("unterminated quote".into()));
    }
    if in_word {
        stages.last_mut().expect("non-empty").push(word);
    }
    if stages.iter().any(Vec::is_empty) {
        return Err(Error::Parse("empty pipeline stage".into()));
    }
    Ok(stages)
}

fn direction(s: &str) -> Result<Direction> {
    match s {
        "out" | "outgoing" => Ok(Direction::Outgoing),
        "in" | "incoming" => Ok(Direction::Incoming),
        "both" => Ok(Direction::Both),
        _ => Err(Error::Parse(format!("unknown direction {s:?}"))),
    }
}

fn time(s: &str) -> Result<Timestamp> {
    s.parse::<i64>().map(Timestamp).map_err(|_| Error::Parse(format!("bad timestamp {s:?}")))
}

fn count(s: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::Parse(format!("bad count {s:?}")))
}

/// Parse a pipeline. `resolve` maps id tokens (full hex or a prefix) to hashes.
pub fn parse_pipeline(src: &str, resolve: &dyn Fn(&str) -> Result<Hash>) -> Result<Query> {
    let stages = split_stages(src)?;
    let (head, rest) = stages.split_first().ok_or_else(|| Error::Parse("empty pipeline".into()))?;
    let arg = |words: &[String], i: usize| -> Result<String> {
        words.get(i).cloned().ok_or_else(|| Error::Parse(format!("{} expects more arguments", words[0])))
    };
    let start = match head[0].as_str() {
        "seed" | "seeds" => {
            let ids = arg(head, 1)?;
            StartSet::Hashes(ids.split(',').filter(|s| !s.is_empty()).map(resolve).collect::<Result<_>>()?)
        }
        "text" => StartSet::Text { text: arg(head, 1)?, k: head.get(2).map(|s| count(s)).transpose()?.unwrap_or(10) },
        "vector" => {
            let vector = arg(head, 1)?
                .trim_matches(|c| c == '[' || c == ']')
                .split(',')
                .map(|x| x.trim().parse::<f32>().map_err(|_| Error::Parse(format!("bad vector component {x:?}"))))
                .collect::<Result<Vec<f32>>>()?;
            StartSet::Vector { vector, k: head.get(2).map(|s| count(s)).transpose()?.unwrap_or(10) }
        }
        other => return Err(Error::Parse(format!("pipeline must start with seed, text or vector, not {other:?}"))),
    };
    let mut ops = Vec::with_capacity(rest.len());
    for words in rest {
        let op = match words[0].as_str() {
            "traverse" => {
                let t = arg(words, 1)?;
                let edge_type = (t != "*").then(|| EdgeType::new(t));
                let direction = words.get(2).map(|s| direction(s)).transpose()?.unwrap_or(Direction::Outgoing);
                let depth = match words.get(3).map(String::as_str) {
                    None => Some(1),
                    Some("*") => None,
                    Some(d) => Some(d.parse().map_err(|_| Error::Parse(format!("bad depth {d:?}")))?),
                };
                Op::Traverse { edge_type, direction, depth }
            }
            "filter_type" => Op::FilterType(arg(words, 1)?.split(',').filter(|s| !s.is_empty()).map(NodeType::new).collect()),
            "filter_time" => Op::FilterTime { from: time(&arg(words, 1)?)?, to: words.get(2).map(|s| time(s)).transpose()? },
            "where_connected" => Op::WhereConnected {
                edge_type: EdgeType::new(arg(words, 1)?),
                direction: direction(&arg(words, 2)?)?,
                target: resolve(&arg(words, 3)?)?,
            },
            "in_world" => Op::InWorld(resolve(&arg(words, 1)?)?),
            "as_of" => {
                let axis = match arg(words, 1)?.as_str() {
                    "valid" => Axis::Valid,
                    "ingested" => Axis::Ingested,
                    a => return Err(Error::Parse(format!("unknown axis {a:?}"))),
                };
                Op::AsOf { axis, at: time(&arg(words, 2)?)? }
            }
            "include_superseded" => Op::IncludeSuperseded,
            "prefer_summaries" => Op::PreferSummaries,
            other => return Err(Error::Parse(format!("unknown operator {other:?}"))),
        };
        ops.push(op);
    }
    Ok(Query { start, ops })
}
