//! `STRN-WEIGHTS v1` parameter files.
//!
//! ```text
//! STRN-WEIGHTS v1
//! @seed 7
//! @meta ablation A+L+S+T
//! spatial.Wq.h0 64 64
//! 1.2345678901234567e-1 -3.0000000000000000e0 ...
//! ```
//!
//! Values carry 17 significant digits, so a store survives a round trip bit
//! for bit.

use std::fmt::Write as _;

use strn_core::numeric::ParamStore;

use crate::error::{Error, Result};

const MAGIC: &str = "STRN-WEIGHTS v1";

pub fn write_weights(store: &ParamStore) -> String {
    let mut out = format!("{MAGIC}\n@seed {}\n", store.seed());
    for (k, v) in store.meta() {
        let _ = writeln!(out, "@meta {k} {v}");
    }
    for p in store.iter() {
        out.push_str(&p.name);
        for d in &p.shape {
            let _ = write!(out, " {d}");
        }
        out.push('\n');
        let mut first = true;
        for x in &p.data {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{x:.16e}");
        }
        out.push('\n');
    }
    out
}

struct RawParam {
    line: usize,
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
    need: usize,
}

pub fn parse_weights(text: &str) -> Result<ParamStore> {
    let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, MAGIC)) => {}
        other => {
            let (line, got) = other.unwrap_or((1, ""));
            return Err(Error::parse(line, format!("expected header {MAGIC:?}, got {got:?}")));
        }
    }
    let mut seed = None;
    let mut meta = Vec::new();
    let mut params: Vec<RawParam> = Vec::new();
    let mut pending: Option<RawParam> = None;
    for (line, l) in lines {
        if let Some(p) = pending.as_mut() {
            for tok in l.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| Error::parse(line, format!("not a number: {tok:?}")))?;
                p.data.push(v);
            }
            if p.data.len() > p.need {
                return Err(Error::parse(line, format!("too many values: expected {}", p.need)));
            }
            if p.data.len() == p.need {
                params.extend(pending.take());
            }
            continue;
        }
        if let Some(rest) = l.strip_prefix("@seed") {
            seed = Some(rest.trim().parse::<u64>().map_err(|_| Error::parse(line, "seed must be an unsigned integer"))?);
        } else if let Some(rest) = l.strip_prefix("@meta") {
            let rest = rest.trim();
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            meta.push((k.to_string(), v.trim().to_string()));
        } else {
            let mut toks = l.split_whitespace();
            let name = toks.next().unwrap_or_default().to_string();
            let shape = toks
                .map(|t| t.parse::<usize>().ok().filter(|d| *d > 0))
                .collect::<Option<Vec<_>>>()
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::parse(line, format!("parameter {name} needs positive integer dimensions")))?;
            let need = shape.iter().product();
            pending = Some(RawParam { line, name, shape, data: Vec::with_capacity(need), need });
        }
    }
    if let Some(p) = pending {
        return Err(Error::parse(p.line, format!("parameter {} has {} of {} values", p.name, p.data.len(), p.need)));
    }
    let mut store = ParamStore::new(seed.ok_or_else(|| Error::MissingKey("@seed".into()))?);
    for (k, v) in meta {
        store.set_meta(&k, &v);
    }
    for p in params {
        store.insert(&p.name, &p.shape, p.data).map_err(|e| Error::parse(p.line, e.to_string()))?;
    }
    Ok(store)
}
