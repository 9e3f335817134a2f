//! JSON file formats for graphs, trajectories, reference sequences, and
//! corpora, plus atomic file output.
//!
//! Graphs use the node/edge list layout the extraction prompts ask the model
//! for:
//!
//! ```json
//! {"nodes": [["Krakow", {"type": "City"}]],
//!  "edges": [["Krakow", "Poland", {"relation": "inclusion"}]]}
//! ```
//!
//! Parsing is lenient about shape (bare strings, objects, missing attribute
//! dictionaries) because the same parser reads model output.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::model::{Document, Edge, LocationGraph, LocationNode, LocationType, RelationKind, Span, Trajectory, Visit};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FormatError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.into(),
            source,
        }
    }
}

fn schema(msg: impl Into<String>) -> FormatError {
    FormatError::Schema(msg.into())
}

/// A parsed value plus notes about anything that had to be skipped or guessed.
#[derive(Debug, Clone)]
pub struct Parsed<T> {
    pub value: T,
    pub notes: Vec<String>,
}

fn field<'a>(obj: &'a Map<String, Value>, keys: &[&str]) -> Option<&'a Value> {
    keys.iter().find_map(|k| obj.get(*k))
}

fn as_name(v: &Value) -> Option<String> {
    match v {
        Value::String(s) if !s.trim().is_empty() => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn list_field<'a>(top: &'a Value, key: &str) -> Result<&'a Vec<Value>, FormatError> {
    let obj = top
        .as_object()
        .ok_or_else(|| schema("expected a JSON object with \"nodes\" and \"edges\""))?;
    match obj.get(key) {
        Some(Value::Array(items)) => Ok(items),
        Some(Value::Null) => Err(schema(format!("\"{key}\" is null"))),
        Some(_) => Err(schema(format!("\"{key}\" is not a list"))),
        None => Err(schema(format!("missing \"{key}\""))),
    }
}

/// Splits a node entry into its name and attribute object.
fn node_parts(entry: &Value) -> Option<(String, Option<&Map<String, Value>>)> {
    match entry {
        Value::String(_) => as_name(entry).map(|n| (n, None)),
        Value::Array(items) => {
            let name = as_name(items.first()?)?;
            let attrs = items.get(1).and_then(Value::as_object);
            Some((name, attrs))
        }
        Value::Object(obj) => {
            let name = as_name(field(obj, &["name", "id", "node"])?)?;
            Some((name, Some(obj)))
        }
        _ => None,
    }
}

/// Splits an edge entry into (source, target, attributes).
fn edge_parts(entry: &Value) -> Option<(String, String, Option<&Map<String, Value>>)> {
    match entry {
        Value::Array(items) => {
            let source = as_name(items.first()?)?;
            let target = as_name(items.get(1)?)?;
            Some((source, target, items.get(2).and_then(Value::as_object)))
        }
        Value::Object(obj) => {
            let source = as_name(field(obj, &["source", "from", "u"])?)?;
            let target = as_name(field(obj, &["target", "to", "v"])?)?;
            Some((source, target, Some(obj)))
        }
        _ => None,
    }
}

/// Reads a graph without cleaning it: duplicate node names keep their first
/// occurrence, but dangling, duplicate, and self-loop edges are preserved for
/// the caller to inspect.
pub fn parse_graph_value(value: &Value) -> Result<Parsed<LocationGraph>, FormatError> {
    let raw_nodes = list_field(value, "nodes")?;
    let raw_edges = list_field(value, "edges")?;
    let mut notes = Vec::new();
    let mut graph = LocationGraph::new();

    for entry in raw_nodes {
        let Some((name, attrs)) = node_parts(entry) else {
            notes.push(format!("skipped malformed node entry {entry}"));
            continue;
        };
        let loc_type = match attrs.and_then(|a| field(a, &["type", "Type", "kind"])) {
            Some(Value::String(t)) => LocationType::parse(t),
            _ => {
                notes.push(format!("node {name:?} has no type"));
                LocationType::parse("")
            }
        };
        let mut node = LocationNode::new(name.clone(), loc_type);
        if let Some(Value::Array(aliases)) = attrs.and_then(|a| a.get("aliases")) {
            node.aliases = aliases
                .iter()
                .filter_map(as_name)
                .filter(|a| *a != name)
                .collect();
        }
        if let Some(degree) = attrs.and_then(|a| a.get("degree")).and_then(Value::as_u64) {
            node.degree = degree as usize;
        }
        if !graph.insert_node(node) {
            notes.push(format!("duplicate node {name:?} ignored"));
        }
    }

    let mut edges = Vec::with_capacity(raw_edges.len());
    for entry in raw_edges {
        let Some((source, target, attrs)) = edge_parts(entry) else {
            notes.push(format!("skipped malformed edge entry {entry}"));
            continue;
        };
        let relation = match attrs.and_then(|a| field(a, &["relation", "type", "kind"])) {
            Some(Value::String(r)) => RelationKind::parse(r).unwrap_or_else(|| {
                notes.push(format!("unknown relation {r:?} on {source:?} -> {target:?}; using inclusion"));
                RelationKind::Inclusion
            }),
            _ => RelationKind::Inclusion,
        };
        edges.push(Edge::new(source, target, relation));
    }
    let nodes: Vec<LocationNode> = graph.nodes().cloned().collect();
    Ok(Parsed {
        value: LocationGraph::from_parts(nodes, edges),
        notes,
    })
}

pub fn graph_to_value(graph: &LocationGraph) -> Value {
    let nodes: Vec<Value> = graph
        .nodes()
        .map(|n| {
            let mut attrs = Map::new();
            attrs.insert("type".into(), Value::String(n.loc_type.label().to_string()));
            if !n.aliases.is_empty() {
                attrs.insert("aliases".into(), json!(n.aliases));
            }
            if n.degree > 0 {
                attrs.insert("degree".into(), json!(n.degree));
            }
            json!([n.name, attrs])
        })
        .collect();
    let edges: Vec<Value> = graph
        .edges()
        .iter()
        .map(|e| json!([e.source, e.target, {"relation": e.relation.as_str()}]))
        .collect();
    json!({"nodes": nodes, "edges": edges})
}

fn as_index(v: &Value) -> Option<usize> {
    match v {
        Value::Number(n) => n.as_u64().map(|x| x as usize).or_else(|| {
            n.as_f64()
                .filter(|f| *f >= 0.0 && f.fract() == 0.0)
                .map(|f| f as usize)
        }),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Reads a `"sentences"` label: a single index `k` (span `[k, k]`), a pair,
/// a longer list (first and last), or a `"a-b"` string.
pub fn parse_span(v: &Value) -> Option<Span> {
    match v {
        Value::Array(items) if !items.is_empty() => {
            let start = as_index(&items[0])?;
            let end = as_index(items.last()?)?;
            Some(Span::new(start, end))
        }
        Value::String(s) => {
            if let Some((a, b)) = s.split_once('-') {
                Some(Span::new(a.trim().parse().ok()?, b.trim().parse().ok()?))
            } else {
                s.trim().parse().ok().map(Span::single)
            }
        }
        other => as_index(other).map(Span::single),
    }
}

/// Reads a trajectory. Transport labels are matched to adjacent visit pairs
/// by position first, then by the first unused edge with the same endpoints.
pub fn parse_trajectory_value(value: &Value, doc_id: &str) -> Result<Parsed<Trajectory>, FormatError> {
    let raw_nodes = list_field(value, "nodes")?;
    let raw_edges = list_field(value, "edges")?;
    let mut notes = Vec::new();
    let doc_id = value
        .get("doc_id")
        .and_then(Value::as_str)
        .unwrap_or(doc_id)
        .to_string();

    let mut visits = Vec::with_capacity(raw_nodes.len());
    for entry in raw_nodes {
        let Some((name, attrs)) = node_parts(entry) else {
            notes.push(format!("skipped malformed visit entry {entry}"));
            continue;
        };
        let span = attrs
            .and_then(|a| field(a, &["sentences", "sentence", "segments", "span"]))
            .and_then(parse_span);
        let span = match span {
            Some(span) => span,
            None => {
                let fallback = visits.last().map(|v: &Visit| Span::single(v.span.end)).unwrap_or(Span::single(1));
                notes.push(format!("visit {name:?} has no usable sentence label"));
                fallback
            }
        };
        visits.push(Visit::new(name, span));
    }

    let mut edges: Vec<(String, String, Option<String>, bool)> = raw_edges
        .iter()
        .filter_map(|entry| {
            let (a, b, attrs) = edge_parts(entry)?;
            let transport = attrs
                .and_then(|m| field(m, &["transport", "method", "transportation"]))
                .and_then(|t| t.as_str())
                .map(str::to_string);
            Some((a, b, transport, false))
        })
        .collect();
    let mut transports = Vec::with_capacity(visits.len().saturating_sub(1));
    for (i, pair) in visits.windows(2).enumerate() {
        let (from, to) = (&pair[0].location, &pair[1].location);
        let slot = match edges.get(i) {
            Some((a, b, _, false)) if a == from && b == to => Some(i),
            _ => edges.iter().position(|(a, b, _, used)| !used && a == from && b == to),
        };
        match slot {
            Some(k) => {
                edges[k].3 = true;
                transports.push(edges[k].2.clone());
            }
            None => transports.push(None),
        }
    }
    Ok(Parsed {
        value: Trajectory {
            doc_id,
            visits,
            transports,
        },
        notes,
    })
}

pub fn trajectory_to_value(traj: &Trajectory) -> Value {
    let nodes: Vec<Value> = traj
        .visits
        .iter()
        .map(|v| json!([v.location, {"sentences": [v.span.start, v.span.end]}]))
        .collect();
    let edges: Vec<Value> = traj
        .visits
        .windows(2)
        .zip(&traj.transports)
        .map(|(pair, transport)| json!([pair[0].location, pair[1].location, {"transport": transport}]))
        .collect();
    json!({"doc_id": traj.doc_id, "nodes": nodes, "edges": edges})
}

/// Pretty JSON with a trailing newline.
pub fn to_pretty(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    s.push('\n');
    s
}

pub fn read_json(path: &Path) -> Result<Value, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| FormatError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_graph(path: &Path) -> Result<LocationGraph, FormatError> {
    Ok(parse_graph_value(&read_json(path)?)?.value)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, FormatError> {
    let stem = path
        .file_name()
        .and_then(|s| s.to_str())
        .and_then(|s| s.split('.').next())
        .unwrap_or_default();
    Ok(parse_trajectory_value(&read_json(path)?, stem)?.value)
}

/// Reads every `*.trajectory.json` (or plain `*.json`) in a directory, sorted by doc id.
pub fn read_trajectory_dir(dir: &Path) -> Result<Vec<Trajectory>, FormatError> {
    let mut out = Vec::new();
    for path in sorted_entries(dir)? {
        let name = path.file_name().and_then(|s| s.to_str()).unwrap_or_default();
        if name.ends_with(".trajectory.json") {
            out.push(read_trajectory(&path)?);
        }
    }
    out.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(out)
}

/// Reads every `<doc_id>.graph.json` in a directory, sorted by doc id.
pub fn read_graph_dir(dir: &Path) -> Result<Vec<(String, LocationGraph)>, FormatError> {
    let mut out = Vec::new();
    for path in sorted_entries(dir)? {
        let name = path.file_name().and_then(|s| s.to_str()).unwrap_or_default();
        if let Some(doc_id) = name.strip_suffix(".graph.json") {
            out.push((doc_id.to_string(), read_graph(&path)?));
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// Reference sequences: `{doc_id: [location, ...]}`.
pub type ReferenceSet = BTreeMap<String, Vec<String>>;

pub fn read_references(path: &Path) -> Result<ReferenceSet, FormatError> {
    let value = read_json(path)?;
    serde_json::from_value(value).map_err(|e| schema(format!("{}: {e}", path.display())))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, FormatError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| FormatError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    Ok(paths)
}

/// Loads a corpus directory: `*.txt` files hold one segment per line and are
/// named by doc id; `*.json` files hold `{"doc_id", "segments"}`. Sorted by
/// file name.
pub fn read_corpus(dir: &Path) -> Result<Vec<Document>, FormatError> {
    let mut docs = Vec::new();
    for path in sorted_entries(dir)? {
        match path.extension().and_then(|e| e.to_str()) {
            Some("txt") => {
                let text = fs::read_to_string(&path).map_err(|e| FormatError::io(&path, e))?;
                let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                docs.push(Document::from_lines(id, &text));
            }
            Some("json") => {
                let doc: Document = serde_json::from_value(read_json(&path)?)
                    .map_err(|e| schema(format!("{}: {e}", path.display())))?;
                docs.push(Document::new(doc.doc_id, doc.segments));
            }
            _ => {}
        }
    }
    Ok(docs)
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory, so readers see either the old file or the complete new one.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), FormatError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| FormatError::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| FormatError::io(path, e))?;
    tmp.persist(path).map_err(|e| FormatError::io(path, e.error))?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), FormatError> {
    write_atomic(path, to_pretty(value).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LocationKind;

    #[test]
    fn parses_prompt_style_graph() {
        let v = json!({
            "nodes": [["Krakow", {"type": "City"}], ["Poland", {"type": "country"}]],
            "edges": [["Krakow", "Poland"], ["Krakow", "Warsaw", {"relation": "proximity"}]]
        });
        let g = parse_graph_value(&v).unwrap().value;
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.node("Poland").unwrap().kind(), LocationKind::Country);
        assert_eq!(g.edges()[0], Edge::inclusion("Krakow", "Poland"));
        assert_eq!(g.edges()[1].relation, RelationKind::Proximity);
    }

    #[test]
    fn duplicate_nodes_keep_first() {
        let v = json!({"nodes": [["A", {"type": "City"}], ["A", {"type": "Village"}]], "edges": []});
        let parsed = parse_graph_value(&v).unwrap();
        assert_eq!(parsed.value.node_count(), 1);
        assert_eq!(parsed.value.node("A").unwrap().kind(), LocationKind::City);
        assert_eq!(parsed.notes.len(), 1);
    }

    #[test]
    fn missing_fields_are_schema_errors() {
        assert!(matches!(parse_graph_value(&json!({"nodes": []})), Err(FormatError::Schema(_))));
        assert!(matches!(parse_graph_value(&json!([1, 2])), Err(FormatError::Schema(_))));
    }

    #[test]
    fn spans_accept_several_shapes() {
        assert_eq!(parse_span(&json!(4)), Some(Span::new(4, 4)));
        assert_eq!(parse_span(&json!([2, 5])), Some(Span::new(2, 5)));
        assert_eq!(parse_span(&json!([2, 3, 5])), Some(Span::new(2, 5)));
        assert_eq!(parse_span(&json!("7-9")), Some(Span::new(7, 9)));
        assert_eq!(parse_span(&json!(null)), None);
    }

    #[test]
    fn trajectory_transports_follow_edges() {
        let v = json!({
            "nodes": [["A", {"sentences": [1, 2]}], ["B", {"sentences": 3}], ["C", {"sentences": [4, 6]}]],
            "edges": [["B", "C", {"transport": "by train"}], ["A", "B", {"transport": null}]]
        });
        let t = parse_trajectory_value(&v, "doc").unwrap().value;
        assert_eq!(t.doc_id, "doc");
        assert_eq!(t.transports, vec![None, Some("by train".to_string())]);
        assert_eq!(t.visits[1].span, Span::single(3));
    }

    #[test]
    fn graph_round_trip_with_aliases() {
        let mut node = LocationNode::new("USA", LocationKind::Country);
        node.aliases.insert("US".into());
        let g = LocationGraph::from_parts(
            [node, LocationNode::new("New York", LocationType::parse("Metropolis"))],
            vec![Edge::inclusion("New York", "USA")],
        )
        .with_degrees();
        let back = parse_graph_value(&graph_to_value(&g)).unwrap().value;
        assert_eq!(back, g);
    }
}
