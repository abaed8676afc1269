//! Tab-separated decode dumps: `input  output  total  per-token`, where the
//! per-token column is a comma-separated list (empty when not applicable).

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DumpRecord {
    pub input: String,
    pub output: String,
    pub total: f64,
    pub per_token: Vec<f64>,
}

pub fn format_dump_line(r: &DumpRecord) -> String {
    let per: Vec<String> = r.per_token.iter().map(|v| format!("{v:.6}")).collect();
    format!("{}\t{}\t{:.6}\t{}", r.input, r.output, r.total, per.join(","))
}

fn parse_line(path: &str, n: usize, line: &str) -> Result<DumpRecord> {
    let err = |message: String| Error::Parse {
        path: path.to_owned(),
        line: n,
        message,
    };
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 4 {
        return Err(err(format!("expected 4 columns, found {}", cols.len())));
    }
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| err(format!("bad number {s:?}: {e}")));
    let per_token = if cols[3].is_empty() {
        Vec::new()
    } else {
        cols[3].split(',').map(num).collect::<Result<_>>()?
    };
    Ok(DumpRecord {
        input: cols[0].to_owned(),
        output: cols[1].to_owned(),
        total: num(cols[2])?,
        per_token,
    })
}

pub fn parse_dump(text: &str) -> Result<Vec<DumpRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| parse_line("<dump>", i + 1, l))
        .collect()
}

pub fn read_dump(path: &Path) -> Result<Vec<DumpRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dump(&text).map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::Parse {
            path: path.display().to_string(),
            line,
            message,
        },
        other => other,
    })
}
