//! Directory format:
//!
//! * `nodes.tsv`: `<node_id>\t<label>\t<f1,f2,...,fd>`, ids `0..n` in order,
//!   labels in `{0, 1, -1}`.
//! * `edges_<relation>.tsv`: `<src>\t<dst>` per line.
//! * `graph_meta.json` (optional on load): `{"num_nodes", "feature_dim", "relations"}`.
//!   When present it fixes the relation order; otherwise edge files are read
//!   in name order.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Label, MultiRelationGraph, RelationAdjacency};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

pub const NODES_FILE: &str = "nodes.tsv";
pub const META_FILE: &str = "graph_meta.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub num_nodes: usize,
    pub feature_dim: usize,
    pub relations: Vec<String>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Load {
        path: path.to_path_buf(),
        source,
    })
}

fn format_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn edge_file(dir: &Path, relation: &str) -> PathBuf {
    dir.join(format!("edges_{relation}.tsv"))
}

fn parse_nodes(path: &Path) -> Result<(Matrix, Vec<Label>)> {
    let text = read(path)?;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut dim: Option<usize> = None;
    for (k, line) in text.lines().enumerate() {
        let lineno = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(id), Some(label)) = (fields.next(), fields.next()) else {
            return Err(format_err(path, lineno, "expected <node_id>\\t<label>\\t<features>"));
        };
        let feats = fields.next().unwrap_or("");
        if fields.next().is_some() {
            return Err(format_err(path, lineno, "too many tab-separated fields"));
        }
        let id: usize = id
            .trim()
            .parse()
            .map_err(|_| format_err(path, lineno, format!("bad node id {id:?}")))?;
        if id != labels.len() {
            return Err(format_err(
                path,
                lineno,
                format!("node id {id} out of order, expected {}", labels.len()),
            ));
        }
        let label = label
            .trim()
            .parse::<i64>()
            .ok()
            .and_then(Label::from_code)
            .ok_or_else(|| format_err(path, lineno, format!("bad label {label:?}")))?;
        let row: Vec<f64> = if feats.trim().is_empty() {
            Vec::new()
        } else {
            feats
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| format_err(path, lineno, format!("bad feature value {v:?}")))
                })
                .collect::<Result<_>>()?
        };
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(format_err(
                    path,
                    lineno,
                    format!("ragged feature row: {} values, expected {d}", row.len()),
                ))
            }
            Some(_) => {}
        }
        if let Some(v) = row.iter().find(|v| !v.is_finite()) {
            return Err(format_err(path, lineno, format!("non-finite feature {v}")));
        }
        data.extend(row);
        labels.push(label);
    }
    let features = Matrix::from_vec(labels.len(), dim.unwrap_or(0), data)?;
    Ok((features, labels))
}

fn parse_edges(path: &Path, num_nodes: usize) -> Result<Vec<(usize, usize)>> {
    let text = read(path)?;
    let mut edges = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let lineno = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(format_err(path, lineno, "expected <src>\\t<dst>"));
        };
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| format_err(path, lineno, format!("bad node id {s:?}")))
        };
        let (u, v) = (parse(a)?, parse(b)?);
        if u >= num_nodes || v >= num_nodes {
            return Err(Error::Index(format!(
                "{}:{lineno}: edge ({u}, {v}) outside 0..{num_nodes}",
                path.display()
            )));
        }
        edges.push((u, v));
    }
    Ok(edges)
}

fn discover_relations(dir: &Path) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|source| Error::Load {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_prefix("edges_")?
                .strip_suffix(".tsv")
                .map(str::to_owned)
        })
        .collect();
    names.sort();
    Ok(names)
}

pub fn load_graph(dir: impl AsRef<Path>) -> Result<MultiRelationGraph> {
    let dir = dir.as_ref();
    let nodes_path = dir.join(NODES_FILE);
    let (features, labels) = parse_nodes(&nodes_path)?;
    let n = labels.len();

    let meta_path = dir.join(META_FILE);
    let relation_names = if meta_path.exists() {
        let meta: GraphMeta = serde_json::from_str(&read(&meta_path)?)
            .map_err(|e| format_err(&meta_path, e.line(), e.to_string()))?;
        if meta.num_nodes != n {
            return Err(format_err(
                &meta_path,
                1,
                format!("num_nodes {} but {NODES_FILE} has {n} rows", meta.num_nodes),
            ));
        }
        if n > 0 && meta.feature_dim != features.cols() {
            return Err(format_err(
                &meta_path,
                1,
                format!(
                    "feature_dim {} but {NODES_FILE} rows have {}",
                    meta.feature_dim,
                    features.cols()
                ),
            ));
        }
        meta.relations
    } else {
        discover_relations(dir)?
    };
    if relation_names.is_empty() {
        return Err(Error::Load {
            path: dir.join("edges_<relation>.tsv"),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no edge files"),
        });
    }

    let relations = relation_names
        .iter()
        .map(|r| {
            let edges = parse_edges(&edge_file(dir, r), n)?;
            RelationAdjacency::from_edges(n, &edges)
        })
        .collect::<Result<Vec<_>>>()?;
    MultiRelationGraph::new(features, relations, relation_names, labels)
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let wrap = |source| Error::Write {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(wrap)?;
    let mut w = BufWriter::new(file);
    body(&mut w).map_err(wrap)?;
    w.flush().map_err(wrap)
}

/// Writes the directory format. Features use the shortest decimal form that
/// parses back to the identical `f64`.
pub fn save_graph(graph: &MultiRelationGraph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| Error::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    write_file(&dir.join(NODES_FILE), |w| {
        for (i, label) in graph.labels().iter().enumerate() {
            write!(w, "{i}\t{}\t", label.code())?;
            for (k, v) in graph.features().row(i).iter().enumerate() {
                if k > 0 {
                    w.write_all(b",")?;
                }
                write!(w, "{v}")?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;
    for (name, adj) in graph.relation_names().iter().zip(graph.relations()) {
        write_file(&edge_file(dir, name), |w| {
            for (u, v) in adj.edges() {
                writeln!(w, "{u}\t{v}")?;
            }
            Ok(())
        })?;
    }
    let meta = GraphMeta {
        num_nodes: graph.num_nodes(),
        feature_dim: graph.feature_dim(),
        relations: graph.relation_names().to_vec(),
    };
    write_file(&dir.join(META_FILE), |w| {
        serde_json::to_writer_pretty(&mut *w, &meta)?;
        w.write_all(b"\n")
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    #[test]
    fn loads_and_symmetrizes() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), NODES_FILE, "0\t0\t1.0,2.0\n1\t1\t0.5,0.5\n2\t-1\t0,0\n");
        write(dir.path(), "edges_a.tsv", "0\t1\n1\t2\n");
        let g = load_graph(dir.path()).unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.relations()[0].nnz(), 4);
        assert_eq!(g.relation_names(), &["a".to_string()]);
    }

    #[test]
    fn self_loop_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), NODES_FILE, "0\t0\t1\n1\t1\t2\n");
        write(dir.path(), "edges_a.tsv", "0\t1\n0\t0\n");
        let g = load_graph(dir.path()).unwrap();
        assert_eq!(g.relations()[0].nnz(), 2);
    }

    #[test]
    fn label_codes_are_parsed() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), NODES_FILE, "0\t0\t1\n1\t1\t1\n2\t-1\t1\n3\t0\t1\n");
        write(dir.path(), "edges_a.tsv", "0\t1\n");
        let g = load_graph(dir.path()).unwrap();
        let codes: Vec<i8> = g.labels().iter().map(|l| l.code()).collect();
        assert_eq!(codes, vec![0, 1, -1, 0]);
        assert_eq!(g.labeled_count(), 3);
    }

    #[test]
    fn missing_nodes_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "edges_a.tsv", "0\t1\n");
        let err = load_graph(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Load { .. }));
        assert!(err.to_string().contains(NODES_FILE));
    }

    #[test]
    fn missing_edge_file_from_meta_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), NODES_FILE, "0\t0\t1\n1\t1\t1\n");
        write(
            dir.path(),
            META_FILE,
            r#"{"num_nodes": 2, "feature_dim": 1, "relations": ["upu"]}"#,
        );
        let err = load_graph(dir.path()).unwrap_err();
        assert!(err.to_string().contains("edges_upu.tsv"), "{err}");
    }

    #[test]
    fn ragged_features_report_the_line() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), NODES_FILE, "0\t0\t1,2\n1\t1\t1\n");
        write(dir.path(), "edges_a.tsv", "0\t1\n");
        match load_graph(dir.path()).unwrap_err() {
            Error::Format { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_endpoint_is_an_index_error() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), NODES_FILE, "0\t0\t1\n1\t1\t1\n");
        write(dir.path(), "edges_a.tsv", "0\t5\n");
        assert!(matches!(load_graph(dir.path()), Err(Error::Index(_))));
    }

    #[test]
    fn meta_fixes_relation_order() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), NODES_FILE, "0\t0\t1\n1\t1\t1\n2\t0\t1\n");
        write(dir.path(), "edges_b.tsv", "0\t1\n");
        write(dir.path(), "edges_a.tsv", "1\t2\n");
        write(
            dir.path(),
            META_FILE,
            r#"{"num_nodes": 3, "feature_dim": 1, "relations": ["b", "a"]}"#,
        );
        let g = load_graph(dir.path()).unwrap();
        assert_eq!(g.relation_names(), &["b".to_string(), "a".to_string()]);
        assert!(g.relations()[0].contains(0, 1));
    }
}
