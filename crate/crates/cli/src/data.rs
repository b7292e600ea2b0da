//! Whitespace-delimited return tables.

use std::path::Path;

use regimix::grid::ReturnsPanel;

use crate::error::{read_text, CliError, CliResult};

fn rows_of(text: &str) -> CliResult<Vec<Vec<f64>>> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            l.split_whitespace()
                .map(|tok| tok.parse::<f64>().map_err(|_| CliError::Data(format!("line {}: cannot parse `{tok}`", i + 1))))
                .collect()
        })
        .collect()
}

/// Reads the first `t` rows of `n_assets` returns each.
pub fn parse_returns_str(text: &str, n_assets: usize, t: usize) -> CliResult<ReturnsPanel> {
    let rows = rows_of(text)?;
    if rows.len() < t {
        return Err(CliError::Data(format!("should have {t} rows of returns, found {}", rows.len())));
    }
    let rows: Vec<Vec<f64>> = rows.into_iter().take(t).collect();
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n_assets) {
        return Err(CliError::Data(format!("row {} has {} values, expected {n_assets}", i + 1, r.len())));
    }
    Ok(ReturnsPanel::new(rows)?)
}

pub fn parse_returns(path: &Path, n_assets: usize, t: usize) -> CliResult<ReturnsPanel> {
    parse_returns_str(&read_text(path)?, n_assets, t)
}

/// Reads every row; the width comes from the first row.
pub fn parse_table(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let rows = rows_of(&read_text(path)?)?;
    if let Some(first) = rows.first() {
        if let Some((i, _)) = rows.iter().enumerate().find(|(_, r)| r.len() != first.len()) {
            return Err(CliError::Data(format!("row {} width differs from the first row", i + 1)));
        }
    }
    Ok(rows)
}

/// Writes rows with shortest round-trip float formatting.
pub fn format_rows(header: &[String], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(" ");
    out.push('\n');
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}
