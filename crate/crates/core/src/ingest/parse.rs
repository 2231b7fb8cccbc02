use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fact annotated with a validity interval at year precision.
/// `None` marks a missing (`####`) date component.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalFact {
    pub s_name: String,
    pub r_name: String,
    pub o_name: String,
    pub begin: Option<i32>,
    pub end: Option<i32>,
}

pub fn parse_interval_file(path: &Path) -> Result<Vec<IntervalFact>> {
    let text = fs::read_to_string(path)?;
    parse_interval_str(&text, path)
}

/// Parses `s \t r \t o [\t begin [\t end]]` lines. Lines without any tab are
/// split on whitespace instead (numeric-id dumps).
pub fn parse_interval_str(text: &str, origin: &Path) -> Result<Vec<IntervalFact>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').collect()
        } else {
            line.split_whitespace().collect()
        };
        if fields.len() < 3 {
            return Err(err(format!("expected at least 3 fields, found {}", fields.len())));
        }
        if fields.len() > 5 {
            return Err(err(format!("expected at most 5 fields, found {}", fields.len())));
        }
        let name = |f: &str, what: &str| -> Result<String> {
            let f = f.trim();
            if f.is_empty() {
                Err(err(format!("empty {what}")))
            } else {
                Ok(f.to_string())
            }
        };
        let date = |idx: usize| -> Result<Option<i32>> {
            match fields.get(idx) {
                None => Ok(None),
                Some(f) => parse_year(f).map_err(err),
            }
        };
        out.push(IntervalFact {
            s_name: name(fields[0], "subject")?,
            r_name: name(fields[1], "relation")?,
            o_name: name(fields[2], "object")?,
            begin: date(3)?,
            end: date(4)?,
        });
    }
    Ok(out)
}

/// Extracts the year from `YYYY`, `YYYY-MM-DD`, `YYYY-##-##`, `-YYYY-..`.
/// Wildcard or empty years yield `None`; month and day are ignored.
pub fn parse_year(field: &str) -> std::result::Result<Option<i32>, String> {
    let f = field.trim();
    if f.is_empty() {
        return Ok(None);
    }
    let (negative, body) = match f.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, f),
    };
    let year = body.split('-').next().unwrap_or("");
    if year.is_empty() || year.contains('#') {
        return Ok(None);
    }
    let year = year.split('.').next().unwrap_or(year);
    if !year.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("unparseable date `{f}`"));
    }
    let y: i32 = year.parse().map_err(|_| format!("year out of range in `{f}`"))?;
    Ok(Some(if negative { -y } else { y }))
}
