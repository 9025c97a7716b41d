use std::fs;
use std::io::Write;
use std::path::Path;

use super::Graph;
use crate::error::{Error, Result};

/// Reads whitespace separated `i j` pairs (0-based), one per line.
/// Blank lines and lines starting with `#` are skipped.
pub fn load_edge_list(path: impl AsRef<Path>, n: usize) -> Result<Graph> {
    let text = fs::read_to_string(path)?;
    parse_edge_list(&text, n)
}

pub fn parse_edge_list(text: &str, n: usize) -> Result<Graph> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut next = || -> Result<usize> {
            let tok =
                it.next().ok_or_else(|| Error::Parse { line: line_no, msg: "expected two node indices".into() })?;
            tok.parse::<usize>().map_err(|_| Error::Parse { line: line_no, msg: format!("not a node index: {tok:?}") })
        };
        let (i, j) = (next()?, next()?);
        if it.next().is_some() {
            return Err(Error::Parse { line: line_no, msg: "trailing tokens".into() });
        }
        if i >= n || j >= n {
            return Err(Error::Parse { line: line_no, msg: format!("index {} >= n = {n}", i.max(j)) });
        }
        edges.push((i, j));
    }
    let (g, loops) = Graph::from_edges(n, edges)?;
    if loops > 0 {
        log::warn!("dropped {loops} self-loop(s) from edge list");
    }
    Ok(g)
}

pub fn write_edge_list(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for (i, j) in g.edges() {
        writeln!(out, "{i} {j}")?;
    }
    out.flush()?;
    Ok(())
}
