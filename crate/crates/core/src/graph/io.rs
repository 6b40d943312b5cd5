//! Plain-text graph ingestion: TSV edges, CSV features, CSV labels.

use std::fs;
use std::path::Path;

use super::{Graph, GraphError, Result};
use crate::autodiff::Tensor;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| GraphError::Io { path: path.display().to_string(), msg: e.to_string() })
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> GraphError {
    GraphError::Parse { path: path.display().to_string(), line, msg: msg.into() }
}

/// Non-empty lines with their 1-based line numbers; `#` starts a comment line.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_edges(path: &Path) -> Result<Vec<(usize, usize, usize)>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (no, line) in lines(&text) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(parse_err(path, no, format!("expected two node indices, found {}", fields.len())));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| parse_err(path, no, format!("bad node index {s:?}")));
        out.push((parse(fields[0])?, parse(fields[1])?, no));
    }
    Ok(out)
}

fn parse_features(path: &Path) -> Result<Tensor> {
    let text = read(path)?;
    let mut data = Vec::new();
    let (mut rows, mut cols) = (0usize, None);
    for (no, line) in lines(&text) {
        let row = line
            .split(',')
            .map(|s| {
                let s = s.trim();
                match s.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(parse_err(path, no, format!("bad feature value {s:?}"))),
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(parse_err(path, no, format!("expected {c} columns, found {}", row.len())))
            }
            _ => {}
        }
        data.extend(row);
        rows += 1;
    }
    Tensor::matrix(rows, cols.unwrap_or(0), data).map_err(|e| parse_err(path, 0, e.to_string()))
}

fn parse_labels(path: &Path) -> Result<Vec<usize>> {
    let text = read(path)?;
    lines(&text)
        .map(|(no, l)| l.parse::<usize>().map_err(|_| parse_err(path, no, format!("bad label {l:?}"))))
        .collect()
}

/// Reads a 0-indexed edge list with optional features and labels. The node
/// count comes from the features or labels when given, otherwise from the
/// largest index. Files that look 1-indexed are rejected rather than shifted.
pub fn load_graph(edges_path: &Path, features_path: Option<&Path>, labels_path: Option<&Path>) -> Result<Graph> {
    let edges = parse_edges(edges_path)?;
    let features = features_path.map(parse_features).transpose()?;
    let labels = labels_path.map(parse_labels).transpose()?;
    if let (Some(f), Some(l)) = (&features, &labels) {
        if f.rows() != l.len() {
            return Err(GraphError::Invalid(format!("{} feature rows but {} labels", f.rows(), l.len())));
        }
    }
    let declared = features.as_ref().map(|f| f.rows()).or(labels.as_ref().map(|l| l.len()));
    let min = edges.iter().map(|&(u, v, _)| u.min(v)).min();
    let max = edges.iter().map(|&(u, v, _)| u.max(v)).max();
    if let (Some(min), Some(max)) = (min, max) {
        let one_indexed = min == 1 && declared.map_or(true, |n| max == n);
        if one_indexed {
            return Err(GraphError::Invalid(format!(
                "{} looks 1-indexed (smallest index 1, largest {max}); node indices must start at 0",
                edges_path.display()
            )));
        }
    }
    let n = declared.unwrap_or(max.map_or(0, |m| m + 1));
    for &(u, v, no) in &edges {
        for x in [u, v] {
            if x >= n {
                return Err(GraphError::Index {
                    index: x,
                    n,
                    context: format!(" at {}:{no}", edges_path.display()),
                });
            }
        }
    }
    let mut g = Graph::new(n, edges.into_iter().map(|(u, v, _)| (u, v)))?;
    if let Some(f) = features {
        g = g.with_features(f)?;
    }
    if let Some(l) = labels {
        g = g.with_labels(l)?;
    }
    Ok(g)
}

/// Writes `u<TAB>v` lines, one per undirected edge.
pub fn write_edges(g: &Graph) -> String {
    let mut s = String::with_capacity(g.num_edges() * 10);
    for &(u, v) in g.edges() {
        s.push_str(&format!("{u}\t{v}\n"));
    }
    s
}

/// Writes one comma-separated row per node.
pub fn write_features(x: &Tensor) -> String {
    let mut s = String::new();
    for i in 0..x.rows() {
        let row: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn write_labels(labels: &[usize]) -> String {
    labels.iter().map(|l| format!("{l}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    struct TempDir(PathBuf);

    impl TempDir {
        fn new(tag: &str) -> Self {
            let p = std::env::temp_dir().join(format!("kgcn-io-{tag}-{}", std::process::id()));
            fs::create_dir_all(&p).unwrap();
            Self(p)
        }

        fn file(&self, name: &str, body: &str) -> PathBuf {
            let p = self.0.join(name);
            fs::write(&p, body).unwrap();
            p
        }
    }

    impl Drop for TempDir {
        fn drop(&mut self) {
            let _ = fs::remove_dir_all(&self.0);
        }
    }

    #[test]
    fn path_and_duplicates() {
        let dir = TempDir::new("path");
        let g = load_graph(&dir.file("e.tsv", "0\t1\n1\t2"), None, None).unwrap();
        assert_eq!((g.n(), g.edges()), (3, &[(0, 1), (1, 2)][..]));
        let g = load_graph(&dir.file("d.tsv", "0\t1\n0\t1\n2\t2\n"), None, None).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(g.n(), 3);
    }

    #[test]
    fn index_and_parse_errors() {
        let dir = TempDir::new("err");
        let feats = dir.file("f.csv", "1,0\n0,1\n0.5,0.5\n");
        let err = load_graph(&dir.file("e.tsv", "0\t5\n"), Some(&feats), None).unwrap_err();
        assert!(matches!(err, GraphError::Index { index: 5, n: 3, .. }));
        let err = load_graph(&dir.file("p.tsv", "0\t1\n1\tx\n"), None, None).unwrap_err();
        assert!(matches!(err, GraphError::Parse { line: 2, .. }));
        let err = load_graph(&dir.file("q.tsv", "0 1 2\n"), None, None).unwrap_err();
        assert!(matches!(err, GraphError::Parse { line: 1, .. }));
        let bad = dir.file("g.csv", "1,0\n0\n");
        let err = load_graph(&dir.file("r.tsv", "0\t1\n"), Some(&bad), None).unwrap_err();
        assert!(matches!(err, GraphError::Parse { line: 2, .. }));
        let err = load_graph(&dir.0.join("missing.tsv"), None, None).unwrap_err();
        assert!(matches!(err, GraphError::Io { .. }));
    }

    #[test]
    fn one_indexed_files_are_rejected() {
        let dir = TempDir::new("one");
        let labels = dir.file("l.csv", "0\n1\n0\n");
        let err = load_graph(&dir.file("e.tsv", "1\t2\n2\t3\n"), None, Some(&labels)).unwrap_err();
        assert!(matches!(err, GraphError::Invalid(ref m) if m.contains("1-indexed")));
        let err = load_graph(&dir.file("f.tsv", "1\t2\n2\t3\n"), None, None).unwrap_err();
        assert!(matches!(err, GraphError::Invalid(_)));
    }

    #[test]
    fn features_and_labels_round_trip() {
        let dir = TempDir::new("full");
        let f = dir.file("f.csv", "1.5, -2\n0,1e-3\n");
        let l = dir.file("l.csv", "1\n0\n");
        let e = dir.file("e.tsv", "# comment\n0\t1\n");
        let g = load_graph(&e, Some(&f), Some(&l)).unwrap();
        assert_eq!(g.features().unwrap().data(), &[1.5, -2.0, 0.0, 1e-3]);
        assert_eq!(g.labels(), Some(&[1, 0][..]));
        assert_eq!(g.num_classes(), Some(2));
        assert_eq!(write_edges(&g), "0\t1\n");
        assert_eq!(write_features(g.features().unwrap()), "1.5,-2\n0,0.001\n");
        assert_eq!(write_labels(g.labels().unwrap()), "1\n0\n");
        let short = dir.file("s.csv", "1\n");
        assert!(load_graph(&e, Some(&f), Some(&short)).is_err());
    }
}
