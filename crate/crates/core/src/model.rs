//! Domain types shared by every stage: location types and their hierarchy,
//! location graphs ("maps"), documents, and trajectories.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

/// The closed set of location kinds the extraction prompts ask for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LocationKind {
    Continent,
    Country,
    County,
    Region,
    City,
    Village,
    Ghetto,
    ArmyCamp,
    ConcentrationCamp,
    DeathCamp,
    Natural,
    Facility,
    Unknown,
}

impl LocationKind {
    pub const ALL: [LocationKind; 13] = [
        LocationKind::Continent,
        LocationKind::Country,
        LocationKind::County,
        LocationKind::Region,
        LocationKind::City,
        LocationKind::Village,
        LocationKind::Ghetto,
        LocationKind::ArmyCamp,
        LocationKind::ConcentrationCamp,
        LocationKind::DeathCamp,
        LocationKind::Natural,
        LocationKind::Facility,
        LocationKind::Unknown,
    ];

    /// Hierarchy level; smaller is more general.
    pub fn rank(self) -> u8 {
        match self {
            LocationKind::Continent => 0,
            LocationKind::Country => 1,
            LocationKind::County | LocationKind::Region => 2,
            LocationKind::City | LocationKind::Village => 3,
            LocationKind::Ghetto
            | LocationKind::ArmyCamp
            | LocationKind::ConcentrationCamp
            | LocationKind::DeathCamp
            | LocationKind::Natural
            | LocationKind::Facility => 4,
            LocationKind::Unknown => 5,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LocationKind::Continent => "Continent",
            LocationKind::Country => "Country",
            LocationKind::County => "County",
            LocationKind::Region => "Region",
            LocationKind::City => "City",
            LocationKind::Village => "Village",
            LocationKind::Ghetto => "Ghetto",
            LocationKind::ArmyCamp => "Army Camp",
            LocationKind::ConcentrationCamp => "Concentration Camp",
            LocationKind::DeathCamp => "Death Camp",
            LocationKind::Natural => "Natural",
            LocationKind::Facility => "Facility",
            LocationKind::Unknown => "Unknown",
        }
    }

    /// Case-insensitive lookup that ignores surrounding whitespace and
    /// treats spaces, underscores and hyphens as interchangeable.
    pub fn from_label(label: &str) -> Option<LocationKind> {
        let key: String = label
            .trim()
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
            .flat_map(char::to_lowercase)
            .collect();
        if key.is_empty() || key == "unknown" {
            return None;
        }
        LocationKind::ALL.iter().copied().find(|kind| {
            *kind != LocationKind::Unknown && kind.label().replace(' ', "").to_lowercase() == key
        })
    }
}

impl fmt::Display for LocationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A location's type. Unrecognised type strings map to
/// [`LocationKind::Unknown`] and keep the original text.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LocationType {
    kind: LocationKind,
    original: Option<String>,
}

impl LocationType {
    pub fn new(kind: LocationKind) -> Self {
        Self {
            kind,
            original: None,
        }
    }

    pub fn parse(label: &str) -> Self {
        if label.trim().eq_ignore_ascii_case("unknown") {
            return Self::new(LocationKind::Unknown);
        }
        match LocationKind::from_label(label) {
            Some(kind) => Self::new(kind),
            None => Self {
                kind: LocationKind::Unknown,
                original: Some(label.trim().to_string()),
            },
        }
    }

    pub fn kind(&self) -> LocationKind {
        self.kind
    }

    pub fn rank(&self) -> u8 {
        self.kind.rank()
    }

    /// The original string for unknown types.
    pub fn original(&self) -> Option<&str> {
        self.original.as_deref()
    }

    /// Text written back to JSON: the canonical label, or the original
    /// string for unknown types.
    pub fn label(&self) -> &str {
        match (&self.kind, &self.original) {
            (LocationKind::Unknown, Some(original)) => original,
            (kind, _) => kind.label(),
        }
    }
}

impl From<LocationKind> for LocationType {
    fn from(kind: LocationKind) -> Self {
        LocationType::new(kind)
    }
}

impl fmt::Display for LocationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocationNode {
    pub name: String,
    pub loc_type: LocationType,
    pub aliases: BTreeSet<String>,
    pub degree: usize,
}

impl LocationNode {
    pub fn new(name: impl Into<String>, loc_type: impl Into<LocationType>) -> Self {
        Self {
            name: name.into(),
            loc_type: loc_type.into(),
            aliases: BTreeSet::new(),
            degree: 0,
        }
    }

    pub fn kind(&self) -> LocationKind {
        self.loc_type.kind()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationKind {
    /// `source` lies inside `target`.
    Inclusion,
    /// `source` lies near `target`.
    Proximity,
}

impl RelationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RelationKind::Inclusion => "inclusion",
            RelationKind::Proximity => "proximity",
        }
    }

    pub fn parse(s: &str) -> Option<RelationKind> {
        match s.trim().to_lowercase().as_str() {
            "inclusion" | "in" | "contained" | "containment" => Some(RelationKind::Inclusion),
            "proximity" | "near" => Some(RelationKind::Proximity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub source: String,
    pub target: String,
    pub relation: RelationKind,
}

impl Edge {
    pub fn new(source: impl Into<String>, target: impl Into<String>, relation: RelationKind) -> Self {
        Self {
            source: source.into(),
            target: target.into(),
            relation,
        }
    }

    pub fn inclusion(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self::new(source, target, RelationKind::Inclusion)
    }

    pub fn proximity(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self::new(source, target, RelationKind::Proximity)
    }
}

/// A directed graph of locations keyed by canonical name.
///
/// Node names are unique by construction. Edges are stored as given so that
/// [`validate_graph`] can report dangling, duplicate, and self-loop edges;
/// [`LocationGraph::add_edge`] refuses to create any of them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LocationGraph {
    nodes: IndexMap<String, LocationNode>,
    edges: Vec<Edge>,
}

impl LocationGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a graph from raw parts without cleaning anything. Later nodes
    /// with an already-seen name are ignored.
    pub fn from_parts(nodes: impl IntoIterator<Item = LocationNode>, edges: Vec<Edge>) -> Self {
        let mut graph = LocationGraph::new();
        for node in nodes {
            graph.insert_node(node);
        }
        graph.edges = edges;
        graph
    }

    /// Inserts `node` unless a node of that name exists. Returns whether it was inserted.
    pub fn insert_node(&mut self, node: LocationNode) -> bool {
        if self.nodes.contains_key(&node.name) {
            return false;
        }
        self.nodes.insert(node.name.clone(), node);
        true
    }

    /// Adds an edge if both endpoints exist, the edge is not a self-loop and
    /// the same triple is not already present.
    pub fn add_edge(&mut self, edge: Edge) -> bool {
        if edge.source == edge.target
            || !self.nodes.contains_key(&edge.source)
            || !self.nodes.contains_key(&edge.target)
            || self.edges.contains(&edge)
        {
            return false;
        }
        self.edges.push(edge);
        true
    }

    pub fn node(&self, name: &str) -> Option<&LocationNode> {
        self.nodes.get(name)
    }

    pub fn node_mut(&mut self, name: &str) -> Option<&mut LocationNode> {
        self.nodes.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.nodes.contains_key(name)
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = &LocationNode> {
        self.nodes.values()
    }

    pub fn node_names(&self) -> impl ExactSizeIterator<Item = &str> {
        self.nodes.keys().map(String::as_str)
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.get_index_of(name)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Keeps only the edges for which `keep` returns true.
    pub fn retain_edges(&mut self, keep: impl FnMut(&Edge) -> bool) {
        self.edges.retain(keep);
    }

    /// Removes nodes for which `keep` returns false, together with their edges.
    pub fn retain_nodes(&mut self, mut keep: impl FnMut(&LocationNode) -> bool) {
        self.nodes.retain(|_, node| keep(node));
        let nodes = &self.nodes;
        self.edges
            .retain(|e| nodes.contains_key(&e.source) && nodes.contains_key(&e.target));
    }

    /// Recomputes every node's degree (in + out, counting each stored edge once).
    pub fn fill_degrees(&mut self) {
        for node in self.nodes.values_mut() {
            node.degree = 0;
        }
        for edge in &self.edges {
            if let Some(node) = self.nodes.get_mut(&edge.source) {
                node.degree += 1;
            }
            if let Some(node) = self.nodes.get_mut(&edge.target) {
                node.degree += 1;
            }
        }
    }

    pub fn with_degrees(mut self) -> Self {
        self.fill_degrees();
        self
    }

    /// Drops self-loops, duplicate triples, and edges naming absent nodes.
    /// Returns the number of removed edges.
    pub fn drop_invalid_edges(&mut self) -> usize {
        let before = self.edges.len();
        let mut seen = HashSet::new();
        let nodes = &self.nodes;
        self.edges.retain(|e| {
            e.source != e.target
                && nodes.contains_key(&e.source)
                && nodes.contains_key(&e.target)
                && seen.insert(e.clone())
        });
        before - self.edges.len()
    }
}

/// A structural or semantic problem found in a graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphViolation {
    EmptyName,
    CanonicalInAliases { node: String },
    DanglingEdge { edge: Edge, missing: String },
    DuplicateEdge { edge: Edge },
    SelfLoop { node: String },
}

impl GraphViolation {
    /// Structural violations break the graph contract itself; everything else
    /// is diagnostic.
    pub fn is_structural(&self) -> bool {
        matches!(
            self,
            GraphViolation::DanglingEdge { .. }
                | GraphViolation::DuplicateEdge { .. }
                | GraphViolation::SelfLoop { .. }
        )
    }
}

impl fmt::Display for GraphViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphViolation::EmptyName => write!(f, "node with empty name"),
            GraphViolation::CanonicalInAliases { node } => {
                write!(f, "node {node:?} lists its own name as an alias")
            }
            GraphViolation::DanglingEdge { edge, missing } => write!(
                f,
                "edge {:?} -> {:?} references absent node {missing:?}",
                edge.source, edge.target
            ),
            GraphViolation::DuplicateEdge { edge } => write!(
                f,
                "duplicate {} edge {:?} -> {:?}",
                edge.relation.as_str(),
                edge.source,
                edge.target
            ),
            GraphViolation::SelfLoop { node } => write!(f, "self-loop on {node:?}"),
        }
    }
}

pub fn validate_graph(graph: &LocationGraph) -> Vec<GraphViolation> {
    let mut violations = Vec::new();
    for node in graph.nodes() {
        if node.name.trim().is_empty() {
            violations.push(GraphViolation::EmptyName);
        }
        if node.aliases.contains(&node.name) {
            violations.push(GraphViolation::CanonicalInAliases {
                node: node.name.clone(),
            });
        }
    }
    let mut seen = HashSet::new();
    for edge in graph.edges() {
        if edge.source == edge.target {
            violations.push(GraphViolation::SelfLoop {
                node: edge.source.clone(),
            });
        }
        for endpoint in [&edge.source, &edge.target] {
            if !graph.contains(endpoint) {
                violations.push(GraphViolation::DanglingEdge {
                    edge: edge.clone(),
                    missing: endpoint.clone(),
                });
                if edge.source == edge.target {
                    break;
                }
            }
        }
        if !seen.insert(edge) {
            violations.push(GraphViolation::DuplicateEdge { edge: edge.clone() });
        }
    }
    violations
}

/// A pre-segmented narrative. Segments are addressed 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub segments: Vec<String>,
}

impl Document {
    /// Builds a document, dropping blank segments.
    pub fn new(doc_id: impl Into<String>, segments: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            doc_id: doc_id.into(),
            segments: segments
                .into_iter()
                .map(Into::into)
                .filter(|s: &String| !s.trim().is_empty())
                .collect(),
        }
    }

    /// One segment per non-blank line.
    pub fn from_lines(doc_id: impl Into<String>, text: &str) -> Self {
        Self::new(doc_id, text.lines().map(str::trim_end))
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// `"N. text"` per line, numbered from 1.
    pub fn numbered_text(&self) -> String {
        self.segments
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{}. {}", i + 1, s))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Inclusive, 1-based segment interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn single(index: usize) -> Self {
        Self::new(index, index)
    }

    pub fn union(self, other: Span) -> Span {
        Span::new(self.start.min(other.start), self.end.max(other.end))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Visit {
    pub location: String,
    pub span: Span,
}

impl Visit {
    pub fn new(location: impl Into<String>, span: Span) -> Self {
        Self {
            location: location.into(),
            span,
        }
    }
}

/// The ordered places a narrative passes through. `transports[i]` labels the
/// move from `visits[i]` to `visits[i + 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub doc_id: String,
    pub visits: Vec<Visit>,
    pub transports: Vec<Option<String>>,
}

impl Trajectory {
    /// A trajectory without transport labels.
    pub fn new(doc_id: impl Into<String>, visits: Vec<Visit>) -> Self {
        let transports = vec![None; visits.len().saturating_sub(1)];
        Self {
            doc_id: doc_id.into(),
            visits,
            transports,
        }
    }

    pub fn locations(&self) -> Vec<&str> {
        self.visits.iter().map(|v| v.location.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.visits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visits.is_empty()
    }

    /// Merges runs of adjacent visits to the same location into one visit
    /// covering the union of their spans. Returns how many visits were merged away.
    pub fn collapse_adjacent(&mut self) -> usize {
        let before = self.visits.len();
        let mut visits: Vec<Visit> = Vec::with_capacity(before);
        let mut transports: Vec<Option<String>> = Vec::with_capacity(before);
        for (i, visit) in std::mem::take(&mut self.visits).into_iter().enumerate() {
            match visits.last_mut() {
                Some(last) if last.location == visit.location => {
                    last.span = last.span.union(visit.span);
                }
                Some(_) => {
                    transports.push(self.transports.get(i - 1).cloned().flatten());
                    visits.push(visit);
                }
                None => visits.push(visit),
            }
        }
        self.visits = visits;
        self.transports = transports;
        before - self.visits.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrajectoryViolation {
    DocumentMismatch { trajectory: String, document: String },
    AdjacentRepeat { index: usize, location: String },
    NonMonotonic { index: usize },
    InvertedSpan { index: usize },
    OutOfBounds { index: usize, span: Span, segments: usize },
    NotInMap { index: usize, location: String },
    TransportCount { expected: usize, found: usize },
}

impl fmt::Display for TrajectoryViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrajectoryViolation::DocumentMismatch { trajectory, document } => write!(
                f,
                "trajectory for {trajectory:?} checked against document {document:?}"
            ),
            TrajectoryViolation::AdjacentRepeat { index, location } => write!(
                f,
                "visit {index} repeats {location:?} immediately after itself"
            ),
            TrajectoryViolation::NonMonotonic { index } => {
                write!(f, "visit {index} starts before the previous visit")
            }
            TrajectoryViolation::InvertedSpan { index } => {
                write!(f, "visit {index} has start after end")
            }
            TrajectoryViolation::OutOfBounds { index, span, segments } => write!(
                f,
                "visit {index} span {}-{} outside segments 1-{segments}",
                span.start, span.end
            ),
            TrajectoryViolation::NotInMap { index, location } => {
                write!(f, "visit {index} location {location:?} is not on the map")
            }
            TrajectoryViolation::TransportCount { expected, found } => {
                write!(f, "expected {expected} transport labels, found {found}")
            }
        }
    }
}

pub fn validate_trajectory(
    traj: &Trajectory,
    doc: &Document,
    map_nodes: &HashSet<&str>,
) -> Vec<TrajectoryViolation> {
    let mut violations = Vec::new();
    if traj.doc_id != doc.doc_id {
        violations.push(TrajectoryViolation::DocumentMismatch {
            trajectory: traj.doc_id.clone(),
            document: doc.doc_id.clone(),
        });
    }
    let expected = traj.visits.len().saturating_sub(1);
    if traj.transports.len() != expected {
        violations.push(TrajectoryViolation::TransportCount {
            expected,
            found: traj.transports.len(),
        });
    }
    for (index, visit) in traj.visits.iter().enumerate() {
        if visit.span.start > visit.span.end {
            violations.push(TrajectoryViolation::InvertedSpan { index });
        }
        if visit.span.start < 1 || visit.span.end > doc.len() || visit.span.start > doc.len() {
            violations.push(TrajectoryViolation::OutOfBounds {
                index,
                span: visit.span,
                segments: doc.len(),
            });
        }
        if index > 0 {
            let prev = &traj.visits[index - 1];
            if prev.location == visit.location {
                violations.push(TrajectoryViolation::AdjacentRepeat {
                    index,
                    location: visit.location.clone(),
                });
            }
            if visit.span.start < prev.span.start {
                violations.push(TrajectoryViolation::NonMonotonic { index });
            }
        }
        if !map_nodes.contains(visit.location.as_str()) {
            violations.push(TrajectoryViolation::NotInMap {
                index,
                location: visit.location.clone(),
            });
        }
    }
    violations
}
