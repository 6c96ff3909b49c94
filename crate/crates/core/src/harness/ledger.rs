//! Per-iteration CSV ledger.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const LEDGER_HEADER: &str =
    "iteration,remaining_weights_pct,accuracy,ece,nll_mean,brier,strategy,reinit_mode,seed,wall_seconds";

#[derive(Clone, Debug, PartialEq)]
pub struct LedgerRow {
    pub iteration: usize,
    pub remaining_weights_pct: f64,
    pub accuracy: f64,
    pub ece: f64,
    pub nll_mean: f64,
    pub brier: f64,
    pub strategy: String,
    pub reinit_mode: String,
    pub seed: u64,
    pub wall_seconds: f64,
    /// Set on rows produced by a transfer run.
    pub source_run: Option<String>,
}

/// Renders rows as CSV. A `source_run` column is appended when any row has one.
pub fn render_csv(rows: &[LedgerRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::data("ledger has no rows"));
    }
    let with_source = rows.iter().any(|r| r.source_run.is_some());
    let mut s = String::from(LEDGER_HEADER);
    if with_source {
        s.push_str(",source_run");
    }
    s.push('\n');
    for r in rows {
        for field in [&r.strategy, &r.reinit_mode] {
            if field.contains([',', '\n', '"']) {
                return Err(Error::data(format!("ledger field `{field}` contains a separator")));
            }
        }
        let _ = write!(
            s,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{:.6}",
            r.iteration,
            r.remaining_weights_pct,
            r.accuracy,
            r.ece,
            r.nll_mean,
            r.brier,
            r.strategy,
            r.reinit_mode,
            r.seed,
            r.wall_seconds
        );
        if with_source {
            let src = r.source_run.as_deref().unwrap_or("");
            if src.contains([',', '\n', '"']) {
                return Err(Error::data(format!("source run `{src}` contains a separator")));
            }
            let _ = write!(s, ",{src}");
        }
        s.push('\n');
    }
    Ok(s)
}

/// Writes the ledger atomically: a sibling temp file is renamed into place.
pub fn emit_csv(rows: &[LedgerRow], path: impl AsRef<Path>) -> Result<()> {
    let text = render_csv(rows)?;
    write_atomic(path.as_ref(), text.as_bytes())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(format!("renaming into {}", path.display()), e)
    })
}

pub fn parse_csv(text: &str) -> Result<Vec<LedgerRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::format("empty ledger"))?;
    let with_source = match header.strip_prefix(LEDGER_HEADER) {
        Some("") => false,
        Some(",source_run") => true,
        _ => return Err(Error::format(format!("unexpected ledger header `{header}`"))),
    };
    let width = if with_source { 11 } else { 10 };
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let lineno = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != width {
            return Err(Error::format(format!("line {lineno}: expected {width} fields, got {}", f.len())));
        }
        let num = |j: usize| -> Result<f64> {
            f[j].parse()
                .map_err(|_| Error::format(format!("line {lineno}: bad number `{}`", f[j])))
        };
        rows.push(LedgerRow {
            iteration: f[0]
                .parse()
                .map_err(|_| Error::format(format!("line {lineno}: bad iteration `{}`", f[0])))?,
            remaining_weights_pct: num(1)?,
            accuracy: num(2)?,
            ece: num(3)?,
            nll_mean: num(4)?,
            brier: num(5)?,
            strategy: f[6].to_string(),
            reinit_mode: f[7].to_string(),
            seed: f[8]
                .parse()
                .map_err(|_| Error::format(format!("line {lineno}: bad seed `{}`", f[8])))?,
            wall_seconds: num(9)?,
            source_run: with_source.then(|| f[10].to_string()),
        });
    }
    if rows.is_empty() {
        return Err(Error::data("ledger has no rows"));
    }
    Ok(rows)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<LedgerRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_csv(&text)
}
