//! CSV trace files: header `iteration,objective,grad_norm,perturbed`, one
//! row per record, floats in shortest round-trip form, flag as `0`/`1`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::optim::TraceRecord;

pub const TRACE_HEADER: &str = "iteration,objective,grad_norm,perturbed";

pub fn trace_to_string(trace: &[TraceRecord]) -> String {
    let mut out = String::with_capacity(32 * (trace.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in trace {
        writeln!(out, "{},{:?},{:?},{}", r.iteration, r.objective, r.grad_norm, u8::from(r.perturbed))
            .expect("writing to a String");
    }
    out
}

pub fn write_trace(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    fs::write(path, trace_to_string(trace))?;
    Ok(())
}

fn parse_err<T>(line: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse { line, message: message.into() })
}

/// Parse trace text. Line numbers in errors are 1-based.
pub fn trace_from_str(text: &str) -> Result<Vec<TraceRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == TRACE_HEADER => {}
        Some(h) => return parse_err(1, format!("unexpected header {h:?}")),
        None => return parse_err(1, "missing header"),
    }
    let mut out: Vec<TraceRecord> = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return parse_err(lineno, format!("expected 4 fields, found {}", fields.len()));
        }
        let iteration: u64 = fields[0]
            .parse()
            .or_else(|_| parse_err(lineno, format!("bad iteration {:?}", fields[0])))?;
        let objective: f64 = fields[1]
            .parse()
            .or_else(|_| parse_err(lineno, format!("bad objective {:?}", fields[1])))?;
        let grad_norm: f64 = fields[2]
            .parse()
            .or_else(|_| parse_err(lineno, format!("bad grad_norm {:?}", fields[2])))?;
        let perturbed = match fields[3] {
            "0" | "false" => false,
            "1" | "true" => true,
            other => return parse_err(lineno, format!("bad perturbed flag {other:?}")),
        };
        if let Some(prev) = out.last() {
            if iteration <= prev.iteration {
                return parse_err(lineno, format!("iteration {iteration} does not increase"));
            }
        }
        out.push(TraceRecord { iteration, objective, grad_norm, perturbed });
    }
    Ok(out)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    trace_from_str(&fs::read_to_string(path)?)
}
