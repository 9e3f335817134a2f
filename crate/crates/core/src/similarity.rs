//! Graph-aware trajectory distances (weighted edit, DTW), pairwise distance
//! matrices, and transition counts.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::io::Write;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LocationGraph, LocationKind, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimilarityError {
    #[error("location {0:?} is not on the map")]
    UnknownLocation(String),
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("{0}")]
    Precondition(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Kinds counted as ghettos and camps by the transition filter.
pub const HOLOCAUST_RELATED: [LocationKind; 4] = [
    LocationKind::Ghetto,
    LocationKind::ArmyCamp,
    LocationKind::ConcentrationCamp,
    LocationKind::DeathCamp,
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubstitutionCost {
    /// Graph distance plus type penalty, scaled into [0, 1].
    #[default]
    Graph,
    /// 0 for equal names, 1 otherwise. The map is not consulted.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityConfig {
    /// Path length used for disconnected pairs; defaults to `d_max`.
    pub graph_cap: Option<f64>,
    pub type_penalty: f64,
    /// Normalizer for path lengths; defaults to the diameter of the largest
    /// connected component (1 if that is 0).
    pub d_max: Option<f64>,
    pub substitution: SubstitutionCost,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self { graph_cap: None, type_penalty: 0.5, d_max: None, substitution: SubstitutionCost::Graph }
    }
}

const UNREACHABLE: u32 = u32::MAX;

/// Pointwise location distance over a map, with memoized BFS rows.
pub struct GraphDistance<'m> {
    map: &'m LocationGraph,
    adjacency: Vec<Vec<usize>>,
    rows: RwLock<HashMap<usize, Arc<Vec<u32>>>>,
    d_max: f64,
    graph_cap: f64,
    type_penalty: f64,
    substitution: SubstitutionCost,
}

impl<'m> GraphDistance<'m> {
    pub fn new(map: &'m LocationGraph, cfg: &SimilarityConfig) -> Result<Self, SimilarityError> {
        let mut adjacency = vec![Vec::new(); map.node_count()];
        for e in map.edges() {
            if let (Some(a), Some(b)) = (map.node_index(&e.source), map.node_index(&e.target)) {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        let mut gd = Self {
            map,
            adjacency,
            rows: RwLock::new(HashMap::new()),
            d_max: 1.0,
            graph_cap: 1.0,
            type_penalty: cfg.type_penalty,
            substitution: cfg.substitution,
        };
        let d_max = match cfg.d_max {
            Some(d) => d,
            None if cfg.substitution == SubstitutionCost::Unit => 1.0,
            None => match gd.largest_component_diameter() {
                0 => 1.0,
                d => d as f64,
            },
        };
        let graph_cap = cfg.graph_cap.unwrap_or(d_max);
        for (name, v) in [("d_max", d_max), ("graph_cap", graph_cap)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimilarityError::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(cfg.type_penalty.is_finite() && cfg.type_penalty >= 0.0) {
            return Err(SimilarityError::Config(format!("type penalty must be >= 0, got {}", cfg.type_penalty)));
        }
        gd.d_max = d_max;
        gd.graph_cap = graph_cap;
        Ok(gd)
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn type_penalty(&self) -> f64 {
        self.type_penalty
    }

    fn bfs(&self, source: usize) -> Arc<Vec<u32>> {
        if let Some(row) = self.rows.read().expect("distance cache poisoned").get(&source) {
            return row.clone();
        }
        let mut dist = vec![UNREACHABLE; self.adjacency.len()];
        dist[source] = 0;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if dist[v] == UNREACHABLE {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        let row = Arc::new(dist);
        self.rows.write().expect("distance cache poisoned").entry(source).or_insert(row).clone()
    }

    fn largest_component_diameter(&self) -> u32 {
        let n = self.adjacency.len();
        let mut component = vec![usize::MAX; n];
        let mut best: Vec<usize> = Vec::new();
        for start in 0..n {
            if component[start] != usize::MAX {
                continue;
            }
            let row = self.bfs(start);
            let members: Vec<usize> = (0..n).filter(|&v| row[v] != UNREACHABLE).collect();
            for &v in &members {
                component[v] = start;
            }
            if members.len() > best.len() {
                best = members;
            }
        }
        best.iter().map(|&v| self.bfs(v).iter().filter(|d| **d != UNREACHABLE).max().copied().unwrap_or(0)).max().unwrap_or(0)
    }

    fn index(&self, name: &str) -> Result<usize, SimilarityError> {
        self.map.node_index(name).ok_or_else(|| SimilarityError::UnknownLocation(name.to_string()))
    }

    /// Undirected hop count, or `None` if disconnected.
    pub fn path_length(&self, a: &str, b: &str) -> Result<Option<u32>, SimilarityError> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let d = self.bfs(ia)[ib];
        Ok((d != UNREACHABLE).then_some(d))
    }

    /// `min(1, path / d_max)` plus the type penalty when kinds differ.
    pub fn pointwise(&self, a: &str, b: &str) -> Result<f64, SimilarityError> {
        if self.substitution == SubstitutionCost::Unit {
            return Ok(if a == b { 0.0 } else { 1.0 });
        }
        let path = match self.path_length(a, b)? {
            Some(d) => d as f64,
            None => self.graph_cap,
        };
        if a == b {
            return Ok(0.0);
        }
        let kind = |n: &str| self.map.node(n).map(|n| n.kind());
        let penalty = if kind(a) != kind(b) { self.type_penalty } else { 0.0 };
        Ok((path / self.d_max).min(1.0) + penalty)
    }

    /// Substitution cost in [0, 1].
    pub fn substitution(&self, a: &str, b: &str) -> Result<f64, SimilarityError> {
        let d = self.pointwise(a, b)?;
        Ok(match self.substitution {
            SubstitutionCost::Unit => d,
            SubstitutionCost::Graph => d / (1.0 + self.type_penalty),
        })
    }
}

pub fn pointwise_distance(a: &str, b: &str, map: &LocationGraph, cfg: &SimilarityConfig) -> Result<f64, SimilarityError> {
    GraphDistance::new(map, cfg)?.pointwise(a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub a: Option<usize>,
    pub b: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryAlignment {
    pub pairs: Vec<AlignedPair>,
    pub cost: f64,
}

fn substitution_table(a: &[&str], b: &[&str], dist: &GraphDistance<'_>) -> Result<Vec<Vec<f64>>, SimilarityError> {
    a.iter().map(|x| b.iter().map(|y| dist.substitution(x, y)).collect()).collect()
}

/// Edit distance with graph-aware substitution and unit gaps, plus one
/// optimal alignment (ties prefer substitution, then deletion, then insertion).
pub fn weighted_edit_with(a: &[&str], b: &[&str], dist: &GraphDistance<'_>) -> Result<TrajectoryAlignment, SimilarityError> {
    let sub = substitution_table(a, b, dist)?;
    let (n, m) = (a.len(), b.len());
    let mut dp = vec![vec![0.0f64; m + 1]; n + 1];
    for i in 1..=n {
        dp[i][0] = dp[i - 1][0] + 1.0;
    }
    for j in 1..=m {
        dp[0][j] = dp[0][j - 1] + 1.0;
    }
    for i in 1..=n {
        for j in 1..=m {
            dp[i][j] = (dp[i - 1][j - 1] + sub[i - 1][j - 1]).min(dp[i - 1][j] + 1.0).min(dp[i][j - 1] + 1.0);
        }
    }
    let mut pairs = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && dp[i][j] == dp[i - 1][j - 1] + sub[i - 1][j - 1] {
            pairs.push(AlignedPair { a: Some(i - 1), b: Some(j - 1) });
            i -= 1;
            j -= 1;
        } else if i > 0 && dp[i][j] == dp[i - 1][j] + 1.0 {
            pairs.push(AlignedPair { a: Some(i - 1), b: None });
            i -= 1;
        } else {
            pairs.push(AlignedPair { a: None, b: Some(j - 1) });
            j -= 1;
        }
    }
    pairs.reverse();
    Ok(TrajectoryAlignment { pairs, cost: dp[n][m] })
}

pub fn weighted_edit_distance(
    a: &Trajectory,
    b: &Trajectory,
    map: &LocationGraph,
    cfg: &SimilarityConfig,
) -> Result<TrajectoryAlignment, SimilarityError> {
    weighted_edit_with(&a.locations(), &b.locations(), &GraphDistance::new(map, cfg)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtwResult {
    pub cost: f64,
    /// Matched index pairs, in order from (0, 0) to (|A|-1, |B|-1).
    pub path: Vec<(usize, usize)>,
}

/// Dynamic time warping over pointwise distances.
pub fn dtw_with(a: &[&str], b: &[&str], dist: &GraphDistance<'_>) -> Result<DtwResult, SimilarityError> {
    if a.is_empty() || b.is_empty() {
        return Err(SimilarityError::EmptyTrajectory);
    }
    let d: Vec<Vec<f64>> = a
        .iter()
        .map(|x| b.iter().map(|y| dist.pointwise(x, y)).collect::<Result<_, _>>())
        .collect::<Result<_, _>>()?;
    let (n, m) = (a.len(), b.len());
    let mut dp = vec![vec![f64::INFINITY; m]; n];
    for i in 0..n {
        for j in 0..m {
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => dp[0][j - 1],
                (_, 0) => dp[i - 1][0],
                _ => dp[i - 1][j - 1].min(dp[i - 1][j]).min(dp[i][j - 1]),
            };
            dp[i][j] = best + d[i][j];
        }
    }
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        (i, j) = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let (diag, up, left) = (dp[i - 1][j - 1], dp[i - 1][j], dp[i][j - 1]);
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        path.push((i, j));
    }
    path.reverse();
    Ok(DtwResult { cost: dp[n - 1][m - 1], path })
}

pub fn dtw_distance(
    a: &Trajectory,
    b: &Trajectory,
    map: &LocationGraph,
    cfg: &SimilarityConfig,
) -> Result<DtwResult, SimilarityError> {
    dtw_with(&a.locations(), &b.locations(), &GraphDistance::new(map, cfg)?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    #[default]
    WeightedEdit,
    Dtw,
}

impl std::str::FromStr for Measure {
    type Err = SimilarityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().replace('-', "_").as_str() {
            "weighted_edit" | "edit" => Ok(Measure::WeightedEdit),
            "dtw" => Ok(Measure::Dtw),
            other => Err(SimilarityError::Config(format!("unknown measure {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub doc_ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl DistanceMatrix {
    /// The `k` closest distinct pairs `(i, j, cost)` with `i < j`.
    pub fn top_k(&self, k: usize) -> Vec<(usize, usize, f64)> {
        let n = self.doc_ids.len();
        let mut pairs: Vec<(usize, usize, f64)> =
            (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| (i, j, self.values[i][j])).collect();
        pairs.sort_by(|x, y| x.2.total_cmp(&y.2).then((x.0, x.1).cmp(&(y.0, y.1))));
        pairs.truncate(k);
        pairs
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(std::iter::once("doc_id").chain(self.doc_ids.iter().map(String::as_str)))?;
        for (id, row) in self.doc_ids.iter().zip(&self.values) {
            w.write_record(std::iter::once(id.clone()).chain(row.iter().map(|v| format!("{v:?}"))))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is UTF-8")
    }
}

/// All pairwise costs under `measure`. Pairs are computed in parallel.
pub fn pairwise_matrix(
    trajs: &[Trajectory],
    map: &LocationGraph,
    cfg: &SimilarityConfig,
    measure: Measure,
) -> Result<DistanceMatrix, SimilarityError> {
    if trajs.len() < 2 {
        return Err(SimilarityError::Precondition(format!(
            "need at least 2 trajectories, got {}",
            trajs.len()
        )));
    }
    let dist = GraphDistance::new(map, cfg)?;
    let seqs: Vec<Vec<&str>> = trajs.iter().map(Trajectory::locations).collect();
    let n = trajs.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let costs: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| match measure {
            Measure::WeightedEdit => weighted_edit_with(&seqs[i], &seqs[j], &dist).map(|r| r.cost),
            Measure::Dtw => dtw_with(&seqs[i], &seqs[j], &dist).map(|r| r.cost),
        })
        .collect::<Result<_, _>>()?;
    let mut values = vec![vec![0.0; n]; n];
    for (&(i, j), c) in pairs.iter().zip(costs) {
        values[i][j] = c;
        values[j][i] = c;
    }
    Ok(DistanceMatrix { doc_ids: trajs.iter().map(|t| t.doc_id.clone()).collect(), values })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionCount {
    pub from: String,
    pub to: String,
    pub document_count: usize,
}

/// Directed adjacent pairs counted once per document. With a filter, only
/// transitions touching a filtered kind are kept; kinds come from `map`
/// (names missing from it count as unknown).
pub fn transition_counts(
    trajs: &[Trajectory],
    map: Option<&LocationGraph>,
    filter: Option<&HashSet<LocationKind>>,
    min_docs: usize,
) -> Vec<TransitionCount> {
    let kind = |name: &str| map.and_then(|m| m.node(name)).map(|n| n.kind()).unwrap_or(LocationKind::Unknown);
    let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    for t in trajs {
        let pairs: BTreeSet<(&str, &str)> = t
            .visits
            .windows(2)
            .map(|w| (w[0].location.as_str(), w[1].location.as_str()))
            .filter(|(a, b)| a != b)
            .collect();
        for (a, b) in pairs {
            *counts.entry((a.to_string(), b.to_string())).or_insert(0) += 1;
        }
    }
    let mut rows: Vec<TransitionCount> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_docs)
        .filter(|((a, b), _)| filter.is_none_or(|f| f.contains(&kind(a)) || f.contains(&kind(b))))
        .map(|((from, to), document_count)| TransitionCount { from, to, document_count })
        .collect();
    rows.sort_by(|x, y| y.document_count.cmp(&x.document_count).then_with(|| (&x.from, &x.to).cmp(&(&y.from, &y.to))));
    rows
}

pub fn transitions_csv(rows: &[TransitionCount]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["from", "to", "count"]).expect("writing to memory");
    for r in rows {
        w.serialize((&r.from, &r.to, r.document_count)).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("csv output is UTF-8")
}
