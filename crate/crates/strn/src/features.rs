//! `STRN-FEATS v1` appearance feature files.

use std::fmt::Write as _;

use strn_core::appearance::FeatureTable;
use strn_core::geometry::Detection;

use crate::error::{Error, Result};

const MAGIC: &str = "STRN-FEATS v1";

/// Header `STRN-FEATS v1 d=<dim>`, then `frame,index,v1,...,vd` per record
/// in key order. Values use the shortest text that parses back exactly.
pub fn write_features(table: &FeatureTable) -> String {
    let mut out = format!("{MAGIC} d={}\n", table.dim());
    for (frame, index, v) in table.iter() {
        let _ = write!(out, "{frame},{index}");
        for x in v {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_features(text: &str) -> Result<FeatureTable> {
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l.trim()).unwrap_or("");
    let dim = header
        .strip_prefix(MAGIC)
        .and_then(|rest| rest.trim().strip_prefix("d="))
        .and_then(|d| d.parse::<usize>().ok())
        .ok_or_else(|| Error::parse(1, format!("expected header \"{MAGIC} d=<dim>\", got {header:?}")))?;
    let mut table = FeatureTable::new(dim).map_err(|e| Error::parse(1, e.to_string()))?;
    for (n, raw) in lines {
        let line = n + 1;
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let mut fields = row.split(',').map(str::trim);
        let frame: u32 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .filter(|f| *f >= 1)
            .ok_or_else(|| Error::parse(line, "frame must be an integer >= 1"))?;
        let index: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::parse(line, "index must be a non-negative integer"))?;
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|_| Error::parse(line, format!("not a number: {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        table.insert(frame, index, values).map_err(|e| Error::parse(line, e.to_string()))?;
    }
    Ok(table)
}

/// Checks that features and detections have exactly the same keys.
pub fn check_completeness(table: &FeatureTable, detections: &[(u32, Vec<Detection>)]) -> Result<()> {
    let mut expected = 0;
    for (frame, dets) in detections {
        for index in 0..dets.len() {
            if table.get(*frame, index).is_none() {
                return Err(strn_core::Error::ProviderMiss { frame: *frame, index }.into());
            }
        }
        expected += dets.len();
    }
    if table.len() != expected {
        let orphan = table
            .iter()
            .find(|(f, i, _)| !detections.iter().any(|(df, d)| df == f && *i < d.len()))
            .map(|(f, i, _)| (f, i));
        return Err(strn_core::Error::Validation(format!("feature record {orphan:?} has no matching detection")).into());
    }
    Ok(())
}
