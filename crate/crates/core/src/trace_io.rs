//! Text trace format.
//!
//! One record per line: `<warp> <A|L|S> [<hex addr>] [local]`. Blank lines
//! and anything after `#` are ignored. The trailing `local` marks an access
//! to per-thread local memory.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::types::{AccessKind, GlobalAddress, MemSpace, Trace, TraceRecord, WarpId};

#[derive(Debug, Error)]
pub enum TraceIoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {reason} (`{token}`)")]
    Parse {
        line: usize,
        token: String,
        reason: &'static str,
    },
}

fn parse_error(line: usize, token: &str, reason: &'static str) -> TraceIoError {
    TraceIoError::Parse {
        line,
        token: token.to_string(),
        reason,
    }
}

fn parse_line(n: usize, text: &str) -> Result<Option<TraceRecord>, TraceIoError> {
    let body = text.split('#').next().unwrap_or("");
    let mut tokens = body.split_whitespace();
    let Some(warp_tok) = tokens.next() else {
        return Ok(None);
    };
    let warp: u8 = warp_tok
        .parse()
        .ok()
        .filter(|w| (*w as u32) < (1 << crate::types::MAX_WID_BITS))
        .ok_or_else(|| parse_error(n, warp_tok, "bad warp id"))?;
    let kind_tok = tokens
        .next()
        .ok_or_else(|| parse_error(n, body.trim(), "missing kind"))?;
    let kind = match kind_tok {
        "A" => AccessKind::Alu,
        "L" => AccessKind::Load,
        "S" => AccessKind::Store,
        _ => return Err(parse_error(n, kind_tok, "kind must be A, L or S")),
    };
    let mut rec = TraceRecord {
        warp: WarpId(warp),
        kind,
        addr: None,
        space: MemSpace::Global,
    };
    if kind != AccessKind::Alu {
        let tok = tokens
            .next()
            .ok_or_else(|| parse_error(n, kind_tok, "missing address"))?;
        let hex = tok
            .strip_prefix("0x")
            .or_else(|| tok.strip_prefix("0X"))
            .ok_or_else(|| parse_error(n, tok, "address must be 0x-prefixed hex"))?;
        let addr = u64::from_str_radix(hex, 16).map_err(|_| parse_error(n, tok, "bad hex address"))?;
        rec.addr = Some(GlobalAddress(addr));
        if let Some(tok) = tokens.next() {
            if tok != "local" {
                return Err(parse_error(n, tok, "unexpected token"));
            }
            rec.space = MemSpace::Local;
        }
    }
    if let Some(tok) = tokens.next() {
        return Err(parse_error(n, tok, "unexpected token"));
    }
    Ok(Some(rec))
}

pub fn parse_trace(text: &str) -> Result<Trace, TraceIoError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(r) = parse_line(i + 1, line)? {
            records.push(r);
        }
    }
    Ok(Trace::new(records))
}

pub fn format_trace(trace: &Trace) -> String {
    let mut out = String::with_capacity(trace.len() * 16);
    for r in &trace.records {
        let kind = match r.kind {
            AccessKind::Alu => 'A',
            AccessKind::Load => 'L',
            AccessKind::Store => 'S',
        };
        let _ = write!(out, "{} {}", r.warp.0, kind);
        if let Some(a) = r.addr {
            let _ = write!(out, " {:#010x}", a.0);
            if r.space == MemSpace::Local {
                out.push_str(" local");
            }
        }
        out.push('\n');
    }
    out
}

pub fn read_trace(path: &Path) -> Result<Trace, TraceIoError> {
    parse_trace(&fs::read_to_string(path)?)
}

pub fn write_trace(trace: &Trace, path: &Path) -> Result<(), TraceIoError> {
    fs::write(path, format_trace(trace))?;
    Ok(())
}
