//! Reference maps built from GIS-labeled locations, map normalization for
//! scoring, and the random, most-frequent, and entity-tagger baselines.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Document, Edge, LocationGraph, LocationKind, LocationNode, RelationKind};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Error)]
pub enum RefmapError {
    #[error("{child} locations need at least one {parent}")]
    MissingParentLevel { child: GisLevel, parent: GisLevel },
    #[error("GIS record {line}: {message}")]
    InvalidRecord { line: usize, message: String },
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
    #[error("node set is empty")]
    EmptyNodeSet,
    #[error("reference sequence is empty")]
    EmptyReference,
    #[error("entity tagger unavailable: {0}")]
    TaggerUnavailable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GisLevel {
    Country,
    County,
    City,
    Natural,
    Facility,
}

impl GisLevel {
    pub fn parent(self) -> Option<GisLevel> {
        match self {
            GisLevel::Country => None,
            GisLevel::County => Some(GisLevel::Country),
            GisLevel::City => Some(GisLevel::County),
            GisLevel::Natural | GisLevel::Facility => Some(GisLevel::City),
        }
    }

    pub fn kind(self) -> LocationKind {
        match self {
            GisLevel::Country => LocationKind::Country,
            GisLevel::County => LocationKind::County,
            GisLevel::City => LocationKind::City,
            GisLevel::Natural => LocationKind::Natural,
            GisLevel::Facility => LocationKind::Facility,
        }
    }

    /// The level a model-assigned kind is compared at.
    pub fn from_kind(kind: LocationKind) -> Option<GisLevel> {
        match kind {
            LocationKind::Country => Some(GisLevel::Country),
            LocationKind::County | LocationKind::Region => Some(GisLevel::County),
            LocationKind::City | LocationKind::Village => Some(GisLevel::City),
            LocationKind::Natural => Some(GisLevel::Natural),
            LocationKind::Ghetto
            | LocationKind::ArmyCamp
            | LocationKind::ConcentrationCamp
            | LocationKind::DeathCamp
            | LocationKind::Facility => Some(GisLevel::Facility),
            LocationKind::Continent | LocationKind::Unknown => None,
        }
    }

    fn is_leaf(self) -> bool {
        matches!(self, GisLevel::Natural | GisLevel::Facility)
    }
}

impl fmt::Display for GisLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind().label())
    }
}

impl FromStr for GisLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LocationKind::from_label(s)
            .and_then(GisLevel::from_kind)
            .ok_or_else(|| format!("unknown GIS level {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GisRecord {
    pub name: String,
    pub level: GisLevel,
    pub lat: f64,
    pub lon: f64,
}

impl GisRecord {
    pub fn new(name: impl Into<String>, level: GisLevel, lat: f64, lon: f64) -> Self {
        Self { name: name.into(), level, lat, lon }
    }

    fn check(&self) -> Result<(), String> {
        if self.name.trim().is_empty() {
            return Err("empty name".into());
        }
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(format!("coordinates ({}, {}) out of range", self.lat, self.lon));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct RawRecord {
    name: String,
    level: String,
    lat: f64,
    lon: f64,
}

/// Reads CSV with header `name,level,lat,lon`.
pub fn parse_gis_csv(input: impl Read) -> Result<Vec<GisRecord>, RefmapError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<RawRecord>().enumerate() {
        let line = i + 2;
        let invalid = |message: String| RefmapError::InvalidRecord { line, message };
        let raw = row.map_err(|e| invalid(e.to_string()))?;
        let level = raw.level.parse().map_err(invalid)?;
        let rec = GisRecord::new(raw.name, level, raw.lat, raw.lon);
        rec.check().map_err(invalid)?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_gis_csv(path: &Path) -> Result<Vec<GisRecord>, RefmapError> {
    let file = std::fs::File::open(path)
        .map_err(|e| RefmapError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_gis_csv(file)
}

/// Great-circle distance in kilometres.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

fn distance(a: &GisRecord, b: &GisRecord) -> f64 {
    haversine_km(a.lat, a.lon, b.lat, b.lon)
}

/// First record per name, in input order.
fn unique(records: &[GisRecord]) -> Vec<&GisRecord> {
    let mut seen = HashSet::new();
    records.iter().filter(|r| seen.insert(r.name.as_str())).collect()
}

fn nearest<'a>(child: &GisRecord, candidates: &[&'a GisRecord]) -> Option<&'a GisRecord> {
    candidates
        .iter()
        .copied()
        .min_by(|x, y| distance(child, x).total_cmp(&distance(child, y)).then_with(|| x.name.cmp(&y.name)))
}

/// Builds a level hierarchy, choosing each child's parent with `choose`.
fn build_tree<'a>(
    records: &'a [GisRecord],
    mut choose: impl FnMut(&GisRecord, &[&'a GisRecord]) -> &'a GisRecord,
) -> Result<LocationGraph, RefmapError> {
    let records = unique(records);
    let mut by_level: BTreeMap<GisLevel, Vec<&GisRecord>> = BTreeMap::new();
    for r in &records {
        by_level.entry(r.level).or_default().push(r);
    }
    let mut graph = LocationGraph::new();
    for r in &records {
        graph.insert_node(LocationNode::new(r.name.clone(), r.level.kind()));
    }
    for r in &records {
        let Some(parent_level) = r.level.parent() else { continue };
        let candidates = by_level.get(&parent_level).map(Vec::as_slice).unwrap_or_default();
        if candidates.is_empty() {
            if parent_level == GisLevel::Country {
                continue;
            }
            return Err(RefmapError::MissingParentLevel { child: r.level, parent: parent_level });
        }
        let parent = choose(r, candidates);
        graph.add_edge(Edge::inclusion(r.name.clone(), parent.name.clone()));
    }
    Ok(graph.with_degrees())
}

/// Links naturals and facilities to the nearest city, cities to the nearest
/// county, and counties to the nearest country (when there is one). Ties go
/// to the lexicographically smaller name.
pub fn build_reference_map(records: &[GisRecord]) -> Result<LocationGraph, RefmapError> {
    build_tree(records, |child, candidates| nearest(child, candidates).expect("candidates are non-empty"))
}

/// Same levels as [`build_reference_map`], with each parent drawn uniformly.
pub fn random_tree_baseline(records: &[GisRecord], seed: u64) -> Result<LocationGraph, RefmapError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    build_tree(records, |_, candidates| candidates.choose(&mut rng).expect("candidates are non-empty"))
}

/// Prepares a model map for comparison with a reference map: nodes without
/// a GIS record are dropped, and an inclusion edge between two
/// natural/facility places is replaced by edges from both to the city that
/// contains the container (falling back to the nearest mapped city).
pub fn normalize_map_for_eval(model_map: &LocationGraph, gis: &[GisRecord]) -> LocationGraph {
    let lookup: HashMap<&str, &GisRecord> = unique(gis).into_iter().map(|r| (r.name.as_str(), r)).collect();
    let mut map = model_map.clone();
    map.retain_nodes(|n| lookup.contains_key(n.name.as_str()));
    let level = |name: &str| lookup[name].level;
    let leaf_pairs: Vec<Edge> = map
        .edges()
        .iter()
        .filter(|e| e.relation == RelationKind::Inclusion && level(&e.source).is_leaf() && level(&e.target).is_leaf())
        .cloned()
        .collect();
    if leaf_pairs.is_empty() {
        return map.with_degrees();
    }
    let cities: Vec<&GisRecord> =
        map.node_names().map(|n| lookup[n]).filter(|r| r.level == GisLevel::City).collect();
    let city_of = |start: &str| -> Option<String> {
        let mut seen = HashSet::new();
        let mut frontier = vec![start.to_string()];
        while let Some(cur) = frontier.pop() {
            if !seen.insert(cur.clone()) {
                continue;
            }
            for e in map.edges().iter().filter(|e| e.relation == RelationKind::Inclusion && e.source == cur) {
                match level(&e.target) {
                    GisLevel::City => return Some(e.target.clone()),
                    l if l.is_leaf() => frontier.push(e.target.clone()),
                    _ => {}
                }
            }
        }
        nearest(lookup[start], &cities).map(|c| c.name.clone())
    };
    let attach: Vec<(Edge, Option<String>)> = leaf_pairs.into_iter().map(|e| {
        let city = city_of(&e.target);
        (e, city)
    }).collect();
    map.retain_edges(|e| !attach.iter().any(|(x, _)| x == e));
    for (e, city) in attach {
        if let Some(city) = city {
            map.add_edge(Edge::inclusion(e.source.clone(), city.clone()));
            map.add_edge(Edge::inclusion(e.target.clone(), city));
        }
    }
    map.with_degrees()
}

/// `len` independent uniform draws from `nodes`; repeats are allowed.
pub fn random_trajectory_baseline(nodes: &[String], len: usize, seed: u64) -> Result<Vec<String>, RefmapError> {
    if nodes.is_empty() {
        return Err(RefmapError::EmptyNodeSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..len).map(|_| nodes.choose(&mut rng).expect("nodes are non-empty").clone()).collect())
}

/// The reference's most common location, repeated to the reference length.
/// Ties go to the location seen first.
pub fn frequent_location_baseline(reference: &[String]) -> Result<Vec<String>, RefmapError> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for r in reference {
        *counts.entry(r.as_str()).or_insert(0) += 1;
    }
    let mut best: Option<(&str, usize)> = None;
    for r in reference {
        let c = counts[r.as_str()];
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((r, c));
        }
    }
    let (mode, _) = best.ok_or(RefmapError::EmptyReference)?;
    Ok(vec![mode.to_string(); reference.len()])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedEntity {
    pub text: String,
    pub label: String,
    pub segment: usize,
}

pub trait EntityTagger {
    /// Entities in document order.
    fn tag(&self, doc: &Document) -> Result<Vec<TaggedEntity>, RefmapError>;
}

pub const PLACE_LABELS: [&str; 3] = ["GPE", "LOC", "LOCATION"];

/// Place entities in order, with consecutive repeats collapsed.
pub fn ner_sequence_baseline(doc: &Document, tagger: &dyn EntityTagger) -> Result<Vec<String>, RefmapError> {
    let mut out: Vec<String> = Vec::new();
    for ent in tagger.tag(doc)? {
        if !PLACE_LABELS.contains(&ent.label.to_uppercase().as_str()) {
            continue;
        }
        if out.last() != Some(&ent.text) {
            out.push(ent.text);
        }
    }
    Ok(out)
}

/// Tags exact, word-bounded occurrences of known phrases. Longer phrases win
/// over shorter ones starting at the same place.
#[derive(Debug, Clone, Default)]
pub struct GazetteerTagger {
    entries: Vec<(String, String)>,
}

impl GazetteerTagger {
    pub fn new(entries: impl IntoIterator<Item = (String, String)>) -> Self {
        let mut entries: Vec<(String, String)> = entries.into_iter().filter(|(p, _)| !p.is_empty()).collect();
        entries.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Self { entries }
    }

    /// Loads a JSON object mapping phrase to label.
    pub fn from_file(path: &Path) -> Result<Self, RefmapError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RefmapError::TaggerUnavailable(format!("{}: {e}", path.display())))?;
        let map: BTreeMap<String, String> = serde_json::from_str(&text)
            .map_err(|e| RefmapError::TaggerUnavailable(format!("{}: {e}", path.display())))?;
        Ok(Self::new(map))
    }
}

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(char::is_alphanumeric)
}

impl EntityTagger for GazetteerTagger {
    fn tag(&self, doc: &Document) -> Result<Vec<TaggedEntity>, RefmapError> {
        let mut out = Vec::new();
        for (i, segment) in doc.segments.iter().enumerate() {
            let mut hits: Vec<(usize, usize, &str, &str)> = Vec::new();
            for (phrase, label) in &self.entries {
                for (start, _) in segment.match_indices(phrase.as_str()) {
                    let end = start + phrase.len();
                    if is_word_char(segment[..start].chars().next_back()) || is_word_char(segment[end..].chars().next()) {
                        continue;
                    }
                    hits.push((start, end, phrase, label));
                }
            }
            hits.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
            let mut covered = 0;
            for (start, end, phrase, label) in hits {
                if start < covered {
                    continue;
                }
                covered = end;
                out.push(TaggedEntity { text: phrase.to_string(), label: label.to_string(), segment: i + 1 });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::map_accuracy;
    use crate::model::validate_graph;
    use proptest::prelude::*;

    fn rec(name: &str, level: GisLevel, lat: f64, lon: f64) -> GisRecord {
        GisRecord::new(name, level, lat, lon)
    }

    #[test]
    fn haversine_known_values() {
        // One degree of latitude along a meridian.
        let d = haversine_km(0.0, 0.0, 1.0, 0.0);
        assert!((d - EARTH_RADIUS_KM * std::f64::consts::PI / 180.0).abs() < 1e-9);
        // asin is ill-conditioned near antipodes, hence the looser bound.
        let antipode = haversine_km(10.0, 20.0, -10.0, -160.0);
        assert!((antipode - EARTH_RADIUS_KM * std::f64::consts::PI).abs() < 1e-3);
        assert_eq!(haversine_km(54.6, -2.9, 54.6, -2.9), 0.0);
    }

    proptest! {
        #[test]
        fn haversine_properties(a in -90.0f64..90.0, b in -180.0f64..180.0, c in -90.0f64..90.0, d in -180.0f64..180.0) {
            let x = haversine_km(a, b, c, d);
            prop_assert_eq!(x, haversine_km(c, d, a, b));
            prop_assert!((0.0..=EARTH_RADIUS_KM * std::f64::consts::PI + 1e-9).contains(&x));
        }
    }

    #[test]
    fn nearest_city() {
        let recs = vec![
            rec("Tarn", GisLevel::Natural, 54.45, -3.09),
            rec("X", GisLevel::City, 54.46, -3.08),
            rec("Y", GisLevel::City, 54.60, -2.90),
            rec("Cumberland", GisLevel::County, 10.0, 10.0),
        ];
        let g = build_reference_map(&recs).unwrap();
        assert!(g.edges().contains(&Edge::inclusion("Tarn", "X")));
        assert!(g.edges().contains(&Edge::inclusion("Y", "Cumberland")));
        assert_eq!(g.edge_count(), 3);
        assert!(matches!(
            build_reference_map(&recs[..1]),
            Err(RefmapError::MissingParentLevel { child: GisLevel::Natural, parent: GisLevel::City })
        ));
    }

    #[test]
    fn ties_go_to_smaller_name() {
        let recs = vec![
            rec("c", GisLevel::City, 0.0, 0.0),
            rec("B", GisLevel::County, 0.0, 1.0),
            rec("A", GisLevel::County, 0.0, -1.0),
        ];
        assert_eq!(build_reference_map(&recs).unwrap().edges(), &[Edge::inclusion("c", "A")]);
    }

    #[test]
    fn parse_csv() {
        let csv = "name,level,lat,lon\nKeswick, City ,54.6,-3.13\nAira Force,natural,54.57,-2.93\n";
        let recs = parse_gis_csv(csv.as_bytes()).unwrap();
        assert_eq!(recs[1], rec("Aira Force", GisLevel::Natural, 54.57, -2.93));
        assert!(parse_gis_csv("name,level,lat,lon\nX,City,91,0\n".as_bytes()).is_err());
        assert!(parse_gis_csv("name,level,lat,lon\nX,Planet,1,0\n".as_bytes()).is_err());
    }

    fn lakes() -> Vec<GisRecord> {
        vec![
            rec("Cumbria", GisLevel::County, 54.5, -3.0),
            rec("Keswick", GisLevel::City, 54.60, -3.13),
            rec("Ambleside", GisLevel::City, 54.43, -2.96),
            rec("Valley", GisLevel::Natural, 54.58, -3.10),
            rec("Waterfall", GisLevel::Natural, 54.57, -3.11),
            rec("Inn", GisLevel::Facility, 54.44, -2.97),
        ]
    }

    fn model_map(edges: &[(&str, &str)], extra: &[&str]) -> LocationGraph {
        let gis = lakes();
        let mut g = LocationGraph::new();
        for (a, b) in edges {
            for n in [a, b] {
                let kind = gis.iter().find(|r| r.name == *n).map(|r| r.level.kind()).unwrap_or(LocationKind::Natural);
                g.insert_node(LocationNode::new(*n, kind));
            }
            g.add_edge(Edge::inclusion(*a, *b));
        }
        for n in extra {
            g.insert_node(LocationNode::new(*n, LocationKind::Natural));
        }
        g
    }

    #[test]
    fn normalization_footnote_rule() {
        let m = model_map(&[("Waterfall", "Valley"), ("Valley", "Keswick"), ("the fells", "Keswick")], &[]);
        let out = normalize_map_for_eval(&m, &lakes());
        assert!(!out.contains("the fells"));
        assert_eq!(out.edges(), &[Edge::inclusion("Valley", "Keswick"), Edge::inclusion("Waterfall", "Keswick")]);
        assert_eq!(normalize_map_for_eval(&out, &lakes()), out);
    }

    #[test]
    fn normalization_falls_back_to_nearest_city() {
        let m = model_map(&[("Inn", "Waterfall")], &["Ambleside", "Keswick"]);
        let out = normalize_map_for_eval(&m, &lakes());
        // Waterfall has no city parent; Keswick is nearest to it.
        assert_eq!(out.edges(), &[Edge::inclusion("Inn", "Keswick"), Edge::inclusion("Waterfall", "Keswick")]);
        let bare = model_map(&[("Inn", "Waterfall")], &[]);
        assert_eq!(normalize_map_for_eval(&bare, &lakes()).edge_count(), 0);
    }

    #[test]
    fn reference_map_is_a_forest_and_matches_itself() {
        let g = build_reference_map(&lakes()).unwrap();
        assert!(validate_graph(&g).is_empty());
        for n in g.nodes() {
            let out = g.edges().iter().filter(|e| e.source == n.name).count();
            assert_eq!(out, usize::from(n.kind() != LocationKind::County));
        }
        let acc = map_accuracy(&g, &g);
        assert_eq!((acc.precision, acc.recall, acc.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn random_tree_determinism() {
        let a = random_tree_baseline(&lakes(), 7).unwrap();
        assert_eq!(a, random_tree_baseline(&lakes(), 7).unwrap());
        let single = vec![rec("c", GisLevel::City, 0.0, 0.0), rec("k", GisLevel::County, 5.0, 5.0), rec("n", GisLevel::Natural, 1.0, 1.0)];
        assert_eq!(random_tree_baseline(&single, 3).unwrap(), build_reference_map(&single).unwrap());
        assert!(random_tree_baseline(&lakes()[3..], 1).is_err());
    }

    #[test]
    fn trajectory_baselines() {
        let one = vec!["x".to_string()];
        assert_eq!(random_trajectory_baseline(&one, 3, 0).unwrap(), vec!["x"; 3]);
        let nodes: Vec<String> = (0..50).map(|i| format!("n{i}")).collect();
        assert_eq!(random_trajectory_baseline(&nodes, 10, 9).unwrap(), random_trajectory_baseline(&nodes, 10, 9).unwrap());
        assert!(random_trajectory_baseline(&[], 2, 0).is_err());
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert_eq!(frequent_location_baseline(&s(&["A", "B", "A"])).unwrap(), s(&["A", "A", "A"]));
        assert_eq!(frequent_location_baseline(&s(&["A"])).unwrap(), s(&["A"]));
        assert_eq!(frequent_location_baseline(&s(&["A", "B"])).unwrap(), s(&["A", "A"]));
        assert_eq!(frequent_location_baseline(&s(&["B", "A", "A", "B"])).unwrap(), s(&["B"; 4]));
        assert!(frequent_location_baseline(&[]).is_err());
    }

    struct Fixed(Vec<(&'static str, &'static str)>);

    impl EntityTagger for Fixed {
        fn tag(&self, _: &Document) -> Result<Vec<TaggedEntity>, RefmapError> {
            Ok(self.0.iter().map(|(t, l)| TaggedEntity { text: t.to_string(), label: l.to_string(), segment: 1 }).collect())
        }
    }

    #[test]
    fn ner_collapse_and_filter() {
        let doc = Document::new("d", ["x"]);
        let t = Fixed(vec![("Poland", "GPE"), ("Poland", "GPE"), ("Krakow", "GPE")]);
        assert_eq!(ner_sequence_baseline(&doc, &t).unwrap(), vec!["Poland", "Krakow"]);
        let people = Fixed(vec![("Anna", "PERSON")]);
        assert!(ner_sequence_baseline(&doc, &people).unwrap().is_empty());
    }

    #[test]
    fn gazetteer_tagging() {
        let tagger = GazetteerTagger::new([
            ("New York".to_string(), "GPE".to_string()),
            ("York".to_string(), "GPE".to_string()),
            ("Vistula".to_string(), "LOC".to_string()),
            ("Anna".to_string(), "PERSON".to_string()),
        ]);
        let doc = Document::new(
            "d",
            [
                "Anna grew up near the Vistula.",
                "Later she moved to New York, then York, then New Yorker magazine.",
            ],
        );
        assert_eq!(ner_sequence_baseline(&doc, &tagger).unwrap(), vec!["Vistula", "New York", "York"]);
        let tags = tagger.tag(&doc).unwrap();
        assert_eq!(tags[0], TaggedEntity { text: "Anna".into(), label: "PERSON".into(), segment: 1 });
        assert!(GazetteerTagger::from_file(Path::new("/nonexistent/gazetteer.json")).is_err());
    }
}
