//! Plain-text dump of an [`SdpProblem`].
//!
//! ```text
//! # posicert sdp dump
//! blocks 3 1
//! free 1
//! objective 0
//! constraints 2
//! 0 1 1 | 0:0:0:1 0:1:2:0.5
//! 1 -0.5 0 | 1:0:0:1
//! ```
//!
//! Each record line is `k rhs c_0 .. c_{free-1} | blk:i:j:v ...` with `i ≤ j`
//! and `A[i][j] = A[j][i] = v`, so `⟨A, X⟩` counts an off-diagonal entry
//! twice. Floats are printed in shortest round-trip form.

use super::{SdpConstraint, SdpProblem, SymEntry};
use std::fmt::Write;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {reason}")]
pub struct DumpError {
    pub line: usize,
    pub reason: String,
}

pub fn write_dump(p: &SdpProblem) -> String {
    let mut out = String::from("# posicert sdp dump\n");
    let dims: Vec<String> = p.block_dims.iter().map(|d| d.to_string()).collect();
    let _ = writeln!(out, "blocks {}", dims.join(" "));
    let _ = writeln!(out, "free {}", p.n_free);
    let _ = writeln!(out, "objective {}", p.objective);
    let _ = writeln!(out, "constraints {}", p.constraints.len());
    for (k, c) in p.constraints.iter().enumerate() {
        let _ = write!(out, "{k} {:?}", c.rhs);
        for v in &c.free {
            let _ = write!(out, " {v:?}");
        }
        out.push_str(" |");
        for e in &c.entries {
            let _ = write!(out, " {}:{}:{}:{:?}", e.block, e.row, e.col, e.value);
        }
        out.push('\n');
    }
    out
}

fn err(line: usize, reason: impl Into<String>) -> DumpError {
    DumpError {
        line,
        reason: reason.into(),
    }
}

fn num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T, DumpError> {
    s.parse().map_err(|_| err(line, format!("bad number {s:?}")))
}

fn header<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, key: &str) -> Result<(usize, Vec<&'a str>), DumpError> {
    let (no, line) = lines.next().ok_or_else(|| err(0, format!("missing {key} line")))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(err(no, format!("expected {key}")));
    }
    Ok((no, parts.collect()))
}

pub fn parse_dump(text: &str) -> Result<SdpProblem, DumpError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (no, dims) = header(&mut lines, "blocks")?;
    let block_dims = dims
        .iter()
        .map(|d| num::<usize>(d, no))
        .collect::<Result<Vec<_>, _>>()?;
    let (no, f) = header(&mut lines, "free")?;
    let n_free: usize = num(f.first().ok_or_else(|| err(no, "missing count"))?, no)?;
    let (no, o) = header(&mut lines, "objective")?;
    let objective: usize = num(o.first().ok_or_else(|| err(no, "missing index"))?, no)?;
    let (no, c) = header(&mut lines, "constraints")?;
    let count: usize = num(c.first().ok_or_else(|| err(no, "missing count"))?, no)?;
    let mut constraints = Vec::with_capacity(count);
    for (no, line) in lines {
        let (head, tail) = line
            .split_once('|')
            .ok_or_else(|| err(no, "missing '|' separator"))?;
        let head: Vec<&str> = head.split_whitespace().collect();
        if head.len() != 2 + n_free {
            return Err(err(no, format!("expected {} header fields", 2 + n_free)));
        }
        let k: usize = num(head[0], no)?;
        if k != constraints.len() {
            return Err(err(no, format!("record {k} out of order")));
        }
        let rhs: f64 = num(head[1], no)?;
        let free = head[2..]
            .iter()
            .map(|v| num::<f64>(v, no))
            .collect::<Result<Vec<_>, _>>()?;
        let mut entries = Vec::new();
        for tok in tail.split_whitespace() {
            let parts: Vec<&str> = tok.split(':').collect();
            if parts.len() != 4 {
                return Err(err(no, format!("bad entry {tok:?}")));
            }
            entries.push(SymEntry {
                block: num(parts[0], no)?,
                row: num(parts[1], no)?,
                col: num(parts[2], no)?,
                value: num(parts[3], no)?,
            });
        }
        constraints.push(SdpConstraint { entries, free, rhs });
    }
    if constraints.len() != count {
        return Err(err(0, format!("expected {count} records, found {}", constraints.len())));
    }
    let p = SdpProblem {
        block_dims,
        n_free,
        objective,
        constraints,
    };
    p.validate().map_err(|e| err(0, e.to_string()))?;
    Ok(p)
}
