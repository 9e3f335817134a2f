//! Alias dictionary, graph canonicalization and union, and sparsification.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::extraction::ExtractionError;
use crate::format::{read_json, FormatError};
use crate::gateway::{extract_json_block, ChatSettings, Conversation, Gateway, PromptLibrary, TemplateId};
use crate::model::{LocationGraph, LocationNode, RelationKind, Trajectory};

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Groups of surface names that denote one place, and the canonical name
/// each grouped name maps to.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasDictionary {
    pub groups: Vec<Vec<String>>,
    pub overrides: Vec<Vec<String>>,
    pub canonical: BTreeMap<String, String>,
}

/// Picks the most frequent form, then the longest, then the
/// lexicographically smallest.
fn representative<'a>(group: &'a [String], frequencies: &HashMap<String, usize>) -> &'a str {
    group
        .iter()
        .min_by(|a, b| {
            let fa = frequencies.get(*a).copied().unwrap_or(0);
            let fb = frequencies.get(*b).copied().unwrap_or(0);
            fb.cmp(&fa)
                .then_with(|| b.chars().count().cmp(&a.chars().count()))
                .then_with(|| a.cmp(b))
        })
        .map(String::as_str)
        .unwrap_or_default()
}

fn closure(groups: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for name in groups.iter().flatten() {
        let next = index.len();
        index.entry(name.as_str()).or_insert(next);
    }
    let mut uf = UnionFind::new(index.len());
    for group in groups {
        for pair in group.windows(2) {
            uf.union(index[pair[0].as_str()], index[pair[1].as_str()]);
        }
    }
    let mut classes: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (name, i) in &index {
        let root = uf.find(*i);
        classes.entry(root).or_default().push(name.to_string());
    }
    let mut out: Vec<Vec<String>> = classes.into_values().filter(|g| g.len() > 1).collect();
    out.sort();
    out
}

impl AliasDictionary {
    /// Builds the dictionary from model groups and manual override groups.
    ///
    /// Model group members absent from `names` are dropped. Override groups
    /// win: their members are pulled out of any model group before the
    /// override groups are added.
    pub fn from_groups(
        names: &[String],
        model_groups: &[Vec<String>],
        overrides: &[Vec<String>],
        frequencies: &HashMap<String, usize>,
    ) -> Self {
        let known: HashSet<&str> = names.iter().map(String::as_str).collect();
        let overridden: HashSet<&str> = overrides.iter().flatten().map(String::as_str).collect();
        let mut all: Vec<Vec<String>> = model_groups
            .iter()
            .map(|g| {
                g.iter()
                    .filter(|n| known.contains(n.as_str()) && !overridden.contains(n.as_str()))
                    .cloned()
                    .collect()
            })
            .collect();
        all.extend(overrides.iter().cloned());
        let groups = closure(&all);
        let mut canonical = BTreeMap::new();
        for group in &groups {
            let rep = representative(group, frequencies).to_string();
            for name in group {
                canonical.insert(name.clone(), rep.clone());
            }
        }
        Self { groups, overrides: overrides.to_vec(), canonical }
    }

    pub fn is_empty(&self) -> bool {
        self.canonical.is_empty()
    }

    /// The canonical form of `name`; ungrouped names map to themselves.
    pub fn canonical<'a>(&'a self, name: &'a str) -> &'a str {
        self.canonical.get(name).map(String::as_str).unwrap_or(name)
    }
}

/// Reads a list of string lists, either bare or as the only list-valued
/// field of an object.
pub fn parse_groups(value: &Value) -> Result<Vec<Vec<String>>, FormatError> {
    let items = match value {
        Value::Array(items) => items,
        Value::Object(obj) => {
            let mut lists = obj.values().filter_map(Value::as_array);
            match (lists.next(), lists.next()) {
                (Some(items), None) => items,
                _ => return Err(FormatError::Schema("expected a list of name lists".into())),
            }
        }
        _ => return Err(FormatError::Schema("expected a list of name lists".into())),
    };
    items
        .iter()
        .map(|group| {
            group
                .as_array()
                .ok_or_else(|| FormatError::Schema(format!("alias group is not a list: {group}")))?
                .iter()
                .map(|n| {
                    n.as_str()
                        .map(|s| s.trim().to_string())
                        .ok_or_else(|| FormatError::Schema(format!("alias is not a string: {n}")))
                })
                .collect()
        })
        .collect()
}

pub fn read_overrides(path: &Path) -> Result<Vec<Vec<String>>, FormatError> {
    parse_groups(&read_json(path)?)
}

/// How many graphs each node name occurs in.
pub fn name_frequencies<'a>(graphs: impl IntoIterator<Item = &'a LocationGraph>) -> HashMap<String, usize> {
    let mut freq = HashMap::new();
    for graph in graphs {
        for name in graph.node_names() {
            *freq.entry(name.to_string()).or_insert(0) += 1;
        }
    }
    freq
}

/// Asks the model which of `names` denote the same place and builds the
/// dictionary from its answer.
pub fn build_alias_dictionary(
    gateway: &Gateway,
    prompts: &PromptLibrary,
    settings: &ChatSettings,
    names: &[String],
    frequencies: &HashMap<String, usize>,
    overrides: &[Vec<String>],
) -> Result<AliasDictionary, ExtractionError> {
    if names.is_empty() {
        return Ok(AliasDictionary::from_groups(names, &[], overrides, frequencies));
    }
    let list = serde_json::to_string(names).expect("string list serializes");
    let prompt = prompts.render(TemplateId::AliasMerge, &[("locations", &list)])?;
    let reply = Conversation::new(settings.clone()).ask(gateway, prompt)?;
    let groups = parse_groups(&extract_json_block(&reply)?)?;
    Ok(AliasDictionary::from_groups(names, &groups, overrides, frequencies))
}

/// Folds `node` into `graph`, merging with an existing node of the same name.
fn absorb(graph: &mut LocationGraph, mut node: LocationNode, notes: &mut Vec<String>) {
    node.aliases.remove(&node.name);
    let Some(existing) = graph.node_mut(&node.name) else {
        graph.insert_node(node);
        return;
    };
    existing.aliases.extend(node.aliases);
    if existing.loc_type != node.loc_type {
        let (kept, other) = if node.loc_type.rank() < existing.loc_type.rank() {
            let other = existing.loc_type.clone();
            existing.loc_type = node.loc_type;
            (existing.loc_type.clone(), other)
        } else {
            (existing.loc_type.clone(), node.loc_type)
        };
        notes.push(format!(
            "type conflict on {:?}: kept {} over {}",
            existing.name,
            kept.label(),
            other.label()
        ));
    }
}

fn canonicalize_into(out: &mut LocationGraph, graph: &LocationGraph, dict: &AliasDictionary, notes: &mut Vec<String>) {
    for node in graph.nodes() {
        let mut renamed = node.clone();
        let canonical = dict.canonical(&node.name);
        if canonical != node.name {
            renamed.aliases.insert(node.name.clone());
            renamed.name = canonical.to_string();
        }
        absorb(out, renamed, notes);
    }
    for edge in graph.edges() {
        let mut e = edge.clone();
        e.source = dict.canonical(&edge.source).to_string();
        e.target = dict.canonical(&edge.target).to_string();
        out.add_edge(e);
    }
}

/// Renames every node to its canonical name, merging nodes that collide.
pub fn apply_aliases_noted(graph: &LocationGraph, dict: &AliasDictionary, notes: &mut Vec<String>) -> LocationGraph {
    let mut out = LocationGraph::new();
    canonicalize_into(&mut out, graph, dict, notes);
    out.with_degrees()
}

pub fn apply_aliases(graph: &LocationGraph, dict: &AliasDictionary) -> LocationGraph {
    apply_aliases_noted(graph, dict, &mut Vec::new())
}

/// Unions canonicalized graphs. Earlier graphs win type ties.
pub fn merge_graphs_noted(graphs: &[LocationGraph], dict: &AliasDictionary, notes: &mut Vec<String>) -> LocationGraph {
    let mut out = LocationGraph::new();
    for graph in graphs {
        canonicalize_into(&mut out, graph, dict, notes);
    }
    out.with_degrees()
}

pub fn merge_graphs(graphs: &[LocationGraph], dict: &AliasDictionary) -> LocationGraph {
    merge_graphs_noted(graphs, dict, &mut Vec::new())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsifyOptions {
    /// Also drop proximity edges between two nodes of the same kind.
    #[serde(default)]
    pub drop_same_kind_proximity: bool,
}

/// Drops inclusion edges between nodes of the same kind and inclusion edges
/// that point from a more general to a more specific place. Nodes are never
/// removed.
pub fn sparsify_with(map: &LocationGraph, options: SparsifyOptions) -> LocationGraph {
    let mut out = map.clone();
    let kinds: HashMap<String, _> = map.nodes().map(|n| (n.name.clone(), n.kind())).collect();
    out.retain_edges(|e| {
        let (Some(a), Some(b)) = (kinds.get(&e.source), kinds.get(&e.target)) else {
            return false;
        };
        match e.relation {
            RelationKind::Inclusion => a != b && a.rank() >= b.rank(),
            RelationKind::Proximity => !(options.drop_same_kind_proximity && a == b),
        }
    });
    out.with_degrees()
}

pub fn sparsify(map: &LocationGraph) -> LocationGraph {
    sparsify_with(map, SparsifyOptions::default())
}

/// Renames a trajectory's locations to canonical names, merges visits that
/// become adjacent duplicates, and notes visits that are not on the map.
pub fn trajectory_to_map_noted(
    traj: &Trajectory,
    map: &LocationGraph,
    dict: &AliasDictionary,
    notes: &mut Vec<String>,
) -> Trajectory {
    let mut out = traj.clone();
    for visit in &mut out.visits {
        visit.location = dict.canonical(&visit.location).to_string();
    }
    out.collapse_adjacent();
    for visit in &out.visits {
        if !map.contains(&visit.location) {
            notes.push(format!("{}: {:?} is not on the map", traj.doc_id, visit.location));
        }
    }
    out
}

pub fn trajectory_to_map(traj: &Trajectory, map: &LocationGraph, dict: &AliasDictionary) -> Trajectory {
    trajectory_to_map_noted(traj, map, dict, &mut Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{DomainProfile, ScriptRule, ScriptedTransport};
    use crate::model::{Edge, LocationKind, Span, Visit};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn dict(groups: &[&[&str]]) -> AliasDictionary {
        let groups: Vec<Vec<String>> = groups.iter().map(|g| s(g)).collect();
        let names: Vec<String> = groups.iter().flatten().cloned().collect();
        AliasDictionary::from_groups(&names, &groups, &[], &HashMap::new())
    }

    fn build(reply: &str, names: &[&str]) -> AliasDictionary {
        let t = Arc::new(ScriptedTransport::new(vec![ScriptRule::new(None, "Here is the input", reply)]));
        let gw = Gateway::new(t, None);
        let prompts = PromptLibrary::builtin(DomainProfile::Holocaust);
        build_alias_dictionary(&gw, &prompts, &ChatSettings::default(), &s(names), &HashMap::new(), &[]).unwrap()
    }

    #[test]
    fn us_usa_america() {
        let d = build(r#"[["US","USA","America"]]"#, &["America", "Poland", "US", "USA"]);
        assert_eq!(d.groups, vec![s(&["America", "US", "USA"])]);
        // no frequencies: longest wins
        for n in ["US", "USA", "America"] {
            assert_eq!(d.canonical(n), "America");
        }
        assert_eq!(d.canonical("Poland"), "Poland");
    }

    #[test]
    fn members_not_in_input_are_dropped() {
        let d = build(r#"[["Lodz","Atlantis"],["Lodz","Łódź"]]"#, &["Lodz", "Łódź"]);
        assert_eq!(d.groups, vec![s(&["Lodz", "Łódź"])]);
        assert!(!d.canonical.contains_key("Atlantis"));
    }

    #[test]
    fn empty_names_skip_the_model() {
        let t = Arc::new(ScriptedTransport::new(vec![]));
        let gw = Gateway::new(t.clone(), None);
        let prompts = PromptLibrary::builtin(DomainProfile::Holocaust);
        let d = build_alias_dictionary(&gw, &prompts, &ChatSettings::default(), &[], &HashMap::new(), &[]).unwrap();
        assert!(d.is_empty());
        assert_eq!(t.calls(), 0);
    }

    #[test]
    fn unparseable_reply() {
        let t = Arc::new(ScriptedTransport::new(vec![ScriptRule::new(None, "input", "none")]));
        let gw = Gateway::new(t, None);
        let prompts = PromptLibrary::builtin(DomainProfile::Holocaust);
        let r = build_alias_dictionary(&gw, &prompts, &ChatSettings::default(), &s(&["A"]), &HashMap::new(), &[]);
        assert!(matches!(r, Err(ExtractionError::Json(_))));
        let t = Arc::new(ScriptedTransport::new(vec![ScriptRule::new(None, "input", r#"{"a": 1}"#)]));
        let gw = Gateway::new(t, None);
        let r = build_alias_dictionary(&gw, &prompts, &ChatSettings::default(), &s(&["A"]), &HashMap::new(), &[]);
        assert!(matches!(r, Err(ExtractionError::Schema(_))));
    }

    #[test]
    fn representative_prefers_frequency_then_length_then_lexicographic() {
        let names = s(&["US", "USA", "America", "AB", "AA"]);
        let freq: HashMap<String, usize> = [("USA".to_string(), 5), ("America".to_string(), 2)].into();
        let d = AliasDictionary::from_groups(&names, &[s(&["US", "USA", "America"]), s(&["AB", "AA"])], &[], &freq);
        assert_eq!(d.canonical("US"), "USA");
        assert_eq!(d.canonical("AB"), "AA");
    }

    #[test]
    fn groups_close_transitively() {
        let d = dict(&[&["a", "b"], &["b", "c"], &["x", "y"]]);
        assert_eq!(d.groups, vec![s(&["a", "b", "c"]), s(&["x", "y"])]);
        assert_eq!(d.canonical("a"), d.canonical("c"));
    }

    #[test]
    fn overrides_win() {
        let names = s(&["Georgia", "Tbilisi", "Atlanta", "Sakartvelo"]);
        let model = vec![s(&["Georgia", "Atlanta", "Sakartvelo"])];
        let overrides = vec![s(&["Georgia", "Sakartvelo"])];
        let d = AliasDictionary::from_groups(&names, &model, &overrides, &HashMap::new());
        assert_eq!(d.groups, vec![s(&["Georgia", "Sakartvelo"])]);
        assert_eq!(d.canonical("Atlanta"), "Atlanta");
    }

    #[test]
    fn parse_group_shapes() {
        assert_eq!(parse_groups(&serde_json::json!([["a", "b"]])).unwrap(), vec![s(&["a", "b"])]);
        assert_eq!(parse_groups(&serde_json::json!({"groups": [["a", "b"]]})).unwrap(), vec![s(&["a", "b"])]);
        assert!(parse_groups(&serde_json::json!([[1]])).is_err());
        assert!(parse_groups(&serde_json::json!("x")).is_err());
    }

    fn node(name: &str, kind: LocationKind) -> LocationNode {
        LocationNode::new(name, kind)
    }

    #[test]
    fn aliased_nodes_collapse() {
        let g = LocationGraph::from_parts(
            [
                node("US", LocationKind::Country),
                node("USA", LocationKind::Country),
                node("NY", LocationKind::City),
            ],
            vec![Edge::inclusion("NY", "US"), Edge::inclusion("NY", "USA")],
        );
        let d = dict(&[&["US", "USA"]]);
        let out = apply_aliases(&g, &d);
        assert_eq!(out.node_count(), 2);
        assert_eq!(out.edges(), &[Edge::inclusion("NY", "USA")]);
        assert!(out.node("USA").unwrap().aliases.contains("US"));
        assert_eq!(out.node("USA").unwrap().degree, 1);
    }

    #[test]
    fn type_conflicts() {
        let g = LocationGraph::from_parts(
            [node("Kolo", LocationKind::City), node("Kolo town", LocationKind::Village)],
            vec![],
        );
        let mut notes = Vec::new();
        let out = apply_aliases_noted(&g, &dict(&[&["Kolo", "Kolo town"]]), &mut notes);
        assert_eq!(out.node("Kolo town").unwrap().kind(), LocationKind::City);
        assert_eq!(notes.len(), 1);

        let g = LocationGraph::from_parts(
            [node("Lwow", LocationKind::City), node("Lviv", LocationKind::Country)],
            vec![],
        );
        let out = apply_aliases(&g, &dict(&[&["Lwow", "Lviv"]]));
        assert_eq!(out.node("Lviv").unwrap().kind(), LocationKind::Country);
    }

    #[test]
    fn merge_two_graphs() {
        let a = LocationGraph::from_parts(
            [node("Krakow", LocationKind::City), node("Poland", LocationKind::Country)],
            vec![Edge::inclusion("Krakow", "Poland")],
        );
        let b = LocationGraph::from_parts(
            [node("Lodz", LocationKind::City), node("Poland", LocationKind::Country)],
            vec![Edge::inclusion("Lodz", "Poland"), Edge::inclusion("Krakow", "Poland")],
        );
        let m = merge_graphs(&[a.clone(), b], &AliasDictionary::default());
        assert_eq!(m.node_names().collect::<Vec<_>>(), vec!["Krakow", "Poland", "Lodz"]);
        assert_eq!(m.edge_count(), 2);
        assert_eq!(m.node("Poland").unwrap().degree, 2);
        assert!(merge_graphs(&[], &AliasDictionary::default()).is_empty());
        let d = dict(&[&["Krakow", "Cracow"]]);
        assert_eq!(merge_graphs(&[a.clone(), a.clone()], &d), apply_aliases(&a, &d));
    }

    #[test]
    fn sparsify_examples() {
        let g = LocationGraph::from_parts(
            [
                node("France", LocationKind::Country),
                node("Germany", LocationKind::Country),
                node("Poland", LocationKind::Country),
                node("Krakow", LocationKind::City),
                node("Wawel", LocationKind::Facility),
                node("Vistula", LocationKind::Natural),
                node("Lodz", LocationKind::City),
            ],
            vec![
                Edge::inclusion("France", "Germany"),
                Edge::inclusion("Poland", "Krakow"),
                Edge::inclusion("Krakow", "Poland"),
                Edge::inclusion("Wawel", "Vistula"),
                Edge::proximity("France", "Germany"),
                Edge::proximity("Krakow", "Lodz"),
            ],
        );
        let out = sparsify(&g);
        assert_eq!(
            out.edges(),
            &[
                Edge::inclusion("Krakow", "Poland"),
                Edge::inclusion("Wawel", "Vistula"),
                Edge::proximity("France", "Germany"),
                Edge::proximity("Krakow", "Lodz"),
            ]
        );
        assert_eq!(out.node_count(), g.node_count());
        let strict = sparsify_with(&g, SparsifyOptions { drop_same_kind_proximity: true });
        assert_eq!(strict.edge_count(), 2);
    }

    #[test]
    fn trajectory_renaming() {
        let map = LocationGraph::from_parts([node("USA", LocationKind::Country)], vec![]);
        let d = dict(&[&["US", "USA"]]);
        let t = Trajectory::new(
            "d",
            vec![
                Visit::new("US", Span::new(1, 2)),
                Visit::new("USA", Span::new(3, 3)),
                Visit::new("Atlantis", Span::new(4, 4)),
            ],
        );
        let mut notes = Vec::new();
        let out = trajectory_to_map_noted(&t, &map, &d, &mut notes);
        assert_eq!(out.locations(), vec!["USA", "Atlantis"]);
        assert_eq!(out.visits[0].span, Span::new(1, 3));
        assert_eq!(notes.len(), 1);
        assert_eq!(trajectory_to_map(&t, &map, &AliasDictionary::default()), t);
    }

    fn arb_graph() -> impl Strategy<Value = LocationGraph> {
        let names = ["a", "b", "c", "d", "e", "f"];
        (
            prop::collection::vec(0usize..13, 6),
            prop::collection::vec((0usize..6, 0usize..6, any::<bool>()), 0..20),
        )
            .prop_map(move |(kinds, edges)| {
                let mut g = LocationGraph::new();
                for (n, k) in names.iter().zip(kinds) {
                    g.insert_node(LocationNode::new(*n, LocationKind::ALL[k]));
                }
                for (a, b, incl) in edges {
                    let rel = if incl { RelationKind::Inclusion } else { RelationKind::Proximity };
                    g.add_edge(Edge::new(names[a], names[b], rel));
                }
                g.with_degrees()
            })
    }

    fn arb_groups() -> impl Strategy<Value = Vec<Vec<String>>> {
        prop::collection::vec(prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "f"]), 1..4), 0..4)
            .prop_map(|gs| gs.into_iter().map(|g| g.into_iter().map(String::from).collect()).collect())
    }

    proptest! {
        #[test]
        fn sparsify_is_idempotent_and_keeps_nodes(g in arb_graph()) {
            let once = sparsify(&g);
            prop_assert_eq!(sparsify(&once), once.clone());
            prop_assert_eq!(once.node_count(), g.node_count());
            for e in once.edges().iter().filter(|e| e.relation == RelationKind::Inclusion) {
                let (a, b) = (once.node(&e.source).unwrap().kind(), once.node(&e.target).unwrap().kind());
                prop_assert!(a != b && a.rank() >= b.rank());
            }
        }

        #[test]
        fn dictionary_groups_are_disjoint_and_transitive(groups in arb_groups()) {
            let names: Vec<String> = ["a", "b", "c", "d", "e", "f"].iter().map(|s| s.to_string()).collect();
            let d = AliasDictionary::from_groups(&names, &groups, &[], &HashMap::new());
            let mut seen = HashSet::new();
            for g in &d.groups {
                let rep = d.canonical(&g[0]);
                prop_assert!(g.iter().any(|n| n == rep));
                for n in g {
                    prop_assert!(seen.insert(n.clone()));
                    prop_assert_eq!(d.canonical(n), rep);
                }
            }
            for g in &groups {
                for pair in g.windows(2) {
                    prop_assert_eq!(d.canonical(&pair[0]), d.canonical(&pair[1]));
                }
            }
        }

        #[test]
        fn single_merge_equals_apply(g in arb_graph(), groups in arb_groups()) {
            let names: Vec<String> = g.node_names().map(String::from).collect();
            let d = AliasDictionary::from_groups(&names, &groups, &[], &HashMap::new());
            let applied = apply_aliases(&g, &d);
            prop_assert_eq!(merge_graphs(std::slice::from_ref(&g), &d), applied.clone());
            prop_assert!(crate::model::validate_graph(&applied).is_empty());
        }
    }
}
