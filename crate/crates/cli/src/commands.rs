use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use locmap::extraction::{CorpusExtraction, Extractor};
use locmap::format::{
    graph_to_value, read_corpus, read_graph, read_graph_dir, read_json, read_references, read_trajectory,
    read_trajectory_dir, trajectory_to_value, write_atomic, write_json, ReferenceSet,
};
use locmap::gateway::{
    Gateway, HttpTransport, HttpTransportConfig, PromptLibrary, ResponseStore, ScriptRule, ScriptedTransport,
};
use locmap::merge::{
    build_alias_dictionary, merge_graphs_noted, name_frequencies, read_overrides, sparsify_with,
    trajectory_to_map_noted, AliasDictionary, SparsifyOptions,
};
use locmap::metrics::{evaluate_trajectories, map_accuracy, Aligner, EvalReport, MetricError};
use locmap::model::{LocationGraph, Span, Trajectory, Visit};
use locmap::refmap::{
    build_reference_map, frequent_location_baseline, ner_sequence_baseline, normalize_map_for_eval,
    random_trajectory_baseline, random_tree_baseline, read_gis_csv, GazetteerTagger,
};
use locmap::similarity::{pairwise_matrix, transition_counts, transitions_csv, Measure};
use locmap::viz::{export_visualization, VizFormat, VizOptions};

use crate::config::{parse_filter, Config};

/// An error tagged with the process exit code it should produce.
#[derive(Debug)]
pub struct Fail {
    pub code: u8,
    pub error: anyhow::Error,
}

impl fmt::Display for Fail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub const EXIT_INPUT: u8 = 1;
pub const EXIT_TOTAL: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;

impl From<anyhow::Error> for Fail {
    fn from(error: anyhow::Error) -> Self {
        Fail { code: EXIT_TOTAL, error }
    }
}

pub trait Classify<T> {
    fn input(self) -> Result<T, Fail>;
    fn config(self) -> Result<T, Fail>;
    fn total(self) -> Result<T, Fail>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> Result<T, Fail> {
        self.map_err(|e| Fail { code: EXIT_INPUT, error: e.into() })
    }
    fn config(self) -> Result<T, Fail> {
        self.map_err(|e| Fail { code: EXIT_CONFIG, error: e.into() })
    }
    fn total(self) -> Result<T, Fail> {
        self.map_err(|e| Fail { code: EXIT_TOTAL, error: e.into() })
    }
}

fn fail(code: u8, msg: impl fmt::Display) -> Fail {
    Fail { code, error: anyhow::anyhow!("{msg}") }
}

pub type CmdResult<T = ()> = Result<T, Fail>;

/// Picks the transport: a replay store, a script of canned answers, or a
/// live endpoint, in that order.
pub fn build_gateway(cfg: &Config) -> CmdResult<Gateway> {
    let m = &cfg.model;
    let gateway = if let Some(dir) = &m.replay_dir {
        if !dir.is_dir() {
            return Err(fail(EXIT_INPUT, format!("replay store {} does not exist", dir.display())));
        }
        Gateway::replay(ResponseStore::open(dir).input()?)
    } else {
        let cache = m.cache_dir.as_ref().map(ResponseStore::open).transpose().input()?;
        if let Some(script) = &m.script {
            let rules: Vec<ScriptRule> = serde_json::from_value(read_json(script).config()?)
                .map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", script.display())))?;
            Gateway::new(ScriptedTransport::new(rules), cache)
        } else if let Some(endpoint) = &m.endpoint {
            let mut http = HttpTransportConfig::new(endpoint.clone()).with_api_key_from_env(&m.api_key_env);
            http.timeout = std::time::Duration::from_secs(m.timeout_secs);
            Gateway::new(HttpTransport::new(http).config()?, cache)
        } else {
            return Err(fail(EXIT_CONFIG, "no model transport: set model.endpoint, model.replay_dir or model.script"));
        }
    };
    Ok(gateway.with_concurrency(m.concurrency).with_context_tokens(m.context_tokens))
}

pub fn prompt_library(cfg: &Config) -> CmdResult<PromptLibrary> {
    let profile = cfg.profile().config()?;
    match &cfg.model.prompt_dir {
        Some(dir) => PromptLibrary::with_overrides(profile, dir).config(),
        None => Ok(PromptLibrary::builtin(profile)),
    }
}

fn graph_path(dir: &Path, doc_id: &str) -> PathBuf {
    dir.join(format!("{doc_id}.graph.json"))
}

fn trajectory_path(dir: &Path, doc_id: &str) -> PathBuf {
    dir.join(format!("{doc_id}.trajectory.json"))
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    write_atomic(path, text.as_bytes()).total()
}

fn write_trajectories(dir: &Path, trajs: &[Trajectory]) -> CmdResult {
    for t in trajs {
        write_json(&trajectory_path(dir, &t.doc_id), &trajectory_to_value(t)).total()?;
    }
    Ok(())
}

pub fn read_trajectories(dir: &Path) -> CmdResult<Vec<Trajectory>> {
    if !dir.is_dir() {
        return Err(fail(EXIT_INPUT, format!("{} is not a directory", dir.display())));
    }
    read_trajectory_dir(dir).input()
}

pub fn extract(cfg: &Config, corpus: &Path, out: &Path) -> CmdResult<CorpusExtraction> {
    if !corpus.is_dir() {
        return Err(fail(EXIT_INPUT, format!("corpus directory {} is not readable", corpus.display())));
    }
    let docs = read_corpus(corpus).input()?;
    if docs.is_empty() {
        return Err(fail(EXIT_INPUT, format!("no documents in {}", corpus.display())));
    }
    let gateway = build_gateway(cfg)?;
    let prompts = prompt_library(cfg)?;
    let result = Extractor::new(&gateway, &prompts, cfg.model.chat_settings()).extract_corpus(&docs);

    fs::create_dir_all(out).input()?;
    let mut diagnostics = BTreeMap::new();
    for d in &result.documents {
        write_json(&graph_path(out, &d.doc_id), &graph_to_value(&d.graph)).total()?;
        write_json(&trajectory_path(out, &d.doc_id), &trajectory_to_value(&d.trajectory)).total()?;
        diagnostics.insert(d.doc_id.clone(), d.diagnostics.clone());
    }
    write_json(&out.join("diagnostics.json"), &diagnostics).total()?;
    let failures = out.join("failures.json");
    if result.failures.is_empty() {
        if failures.exists() {
            fs::remove_file(&failures).total()?;
        }
    } else {
        write_json(&failures, &result.failures).total()?;
        for f in &result.failures {
            warn!("{}: {}", f.doc_id, f.error);
        }
    }

    let nodes: usize = result.documents.iter().map(|d| d.graph.node_count()).sum();
    let edges: usize = result.documents.iter().map(|d| d.graph.edge_count()).sum();
    println!(
        "extract: {} ok, {} failed; {nodes} nodes, {edges} edges",
        result.documents.len(),
        result.failures.len()
    );
    if result.documents.is_empty() {
        return Err(fail(EXIT_TOTAL, "every document failed to extract"));
    }
    Ok(result)
}

pub struct MergeOutput {
    pub map: LocationGraph,
    pub aliases: AliasDictionary,
}

pub fn merge(
    cfg: &Config,
    extract_dir: &Path,
    out: &Path,
    overrides: Option<&Path>,
    proofed: Option<&Path>,
) -> CmdResult<MergeOutput> {
    if !extract_dir.is_dir() {
        return Err(fail(EXIT_INPUT, format!("{} is not a directory", extract_dir.display())));
    }
    let graphs: Vec<LocationGraph> = read_graph_dir(extract_dir).input()?.into_iter().map(|(_, g)| g).collect();
    if graphs.is_empty() {
        return Err(fail(EXIT_INPUT, format!("no *.graph.json files in {}", extract_dir.display())));
    }
    let overrides = match overrides.or(cfg.map.overrides.as_deref()) {
        Some(path) => read_overrides(path).input()?,
        None => Vec::new(),
    };
    let freq = name_frequencies(&graphs);
    let names: Vec<String> = graphs
        .iter()
        .flat_map(|g| g.node_names().map(str::to_string))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let aliases = match proofed {
        Some(path) => {
            let dict: AliasDictionary = serde_json::from_value(read_json(path).input()?)
                .map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", path.display())))?;
            AliasDictionary::from_groups(&names, &dict.groups, &overrides, &freq)
        }
        None => {
            let gateway = build_gateway(cfg)?;
            let prompts = prompt_library(cfg)?;
            build_alias_dictionary(&gateway, &prompts, &cfg.model.chat_settings(), &names, &freq, &overrides)
                .total()?
        }
    };
    let mut notes = Vec::new();
    let merged = merge_graphs_noted(&graphs, &aliases, &mut notes);
    for n in &notes {
        warn!("{n}");
    }
    let options = SparsifyOptions { drop_same_kind_proximity: cfg.map.drop_same_kind_proximity };
    let map = sparsify_with(&merged, options);

    write_json(&out.join("map.json"), &graph_to_value(&map)).total()?;
    write_json(&out.join("aliases.json"), &aliases).total()?;
    println!(
        "merge: {} graphs, {} alias groups; map has {} nodes, {} edges ({} dropped)",
        graphs.len(),
        aliases.groups.len(),
        map.node_count(),
        map.edge_count(),
        merged.edge_count() - map.edge_count()
    );
    Ok(MergeOutput { map, aliases })
}

pub fn load_aliases(path: &Path) -> CmdResult<AliasDictionary> {
    serde_json::from_value(read_json(path).input()?).map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", path.display())))
}

pub fn load_map(path: &Path) -> CmdResult<LocationGraph> {
    read_graph(path).input()
}

pub fn trajectories(
    extract_dir: &Path,
    map: &LocationGraph,
    aliases: &AliasDictionary,
    out: &Path,
) -> CmdResult<Vec<Trajectory>> {
    let raw = read_trajectories(extract_dir)?;
    let mut notes = Vec::new();
    let mapped: Vec<Trajectory> = raw.iter().map(|t| trajectory_to_map_noted(t, map, aliases, &mut notes)).collect();
    for n in &notes {
        warn!("{n}");
    }
    fs::create_dir_all(out).input()?;
    write_trajectories(out, &mapped)?;
    let visits: usize = mapped.iter().map(Trajectory::len).sum();
    println!("trajectories: {} documents, {visits} visits, {} off-map", mapped.len(), notes.len());
    Ok(mapped)
}

pub fn evaluate(cfg: &Config, preds: &[Trajectory], refs: &ReferenceSet, out: &Path) -> CmdResult<EvalReport> {
    let model_alignment = cfg.model_alignment().config()?;
    let (gateway, prompts) = if model_alignment {
        (Some(build_gateway(cfg)?), Some(prompt_library(cfg)?))
    } else {
        (None, None)
    };
    let aligner = match (&gateway, &prompts) {
        (Some(gateway), Some(prompts)) => Aligner::Model { gateway, prompts, settings: cfg.model.chat_settings() },
        _ => Aligner::Deterministic,
    };
    let report = evaluate_trajectories(preds, refs, &aligner).map_err(|e| match e {
        MetricError::Alignment { .. } => Fail { code: EXIT_TOTAL, error: e.into() },
        other => Fail { code: EXIT_INPUT, error: other.into() },
    })?;
    for n in &report.notes {
        warn!("{n}");
    }
    write_json(&out.join("eval.json"), &report).total()?;
    write_text(&out.join("eval.csv"), &report.to_csv())?;
    let a = &report.aggregate;
    println!(
        "evaluate: {} documents; edit {:.4} ± {:.4}, r_edit {:.4} ± {:.4}",
        a.documents, a.edit.mean, a.edit.std, a.r_edit.mean, a.r_edit.std
    );
    Ok(report)
}

pub fn read_refs(path: &Path) -> CmdResult<ReferenceSet> {
    read_references(path).input()
}

pub fn evaluate_map(map: &Path, reference: Option<&Path>, gis: Option<&Path>, out: Option<&Path>) -> CmdResult {
    let model = load_map(map)?;
    let records = gis.map(read_gis_csv).transpose().input()?;
    let reference = match (reference, &records) {
        (Some(path), _) => load_map(path)?,
        (None, Some(records)) => build_reference_map(records).input()?,
        (None, None) => return Err(fail(EXIT_INPUT, "evaluate-map needs --reference or --gis")),
    };
    let model = match &records {
        Some(records) => normalize_map_for_eval(&model, records),
        None => model,
    };
    let acc = map_accuracy(&model, &reference);
    if acc.undefined {
        warn!("map accuracy is undefined: no edges on the shared node set");
    }
    let text = locmap::format::to_pretty(&acc);
    match out {
        Some(path) => write_text(path, &text)?,
        None => println!("{text}"),
    }
    println!("evaluate-map: precision {:.4}, recall {:.4}, f1 {:.4}", acc.precision, acc.recall, acc.f1);
    Ok(())
}

pub fn refmap(gis: &Path, out: &Path, random_seed: Option<u64>) -> CmdResult {
    let records = read_gis_csv(gis).input()?;
    let map = match random_seed {
        Some(seed) => random_tree_baseline(&records, seed),
        None => build_reference_map(&records),
    }
    .input()?;
    write_json(out, &graph_to_value(&map)).total()?;
    println!("refmap: {} nodes, {} edges", map.node_count(), map.edge_count());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BaselineKind {
    Random,
    Frequent,
    Ner,
}

pub struct BaselineInputs<'a> {
    pub refs: Option<&'a Path>,
    pub map: Option<&'a Path>,
    pub corpus: Option<&'a Path>,
    pub gazetteer: Option<&'a Path>,
    pub length: Option<usize>,
}

fn as_trajectory(doc_id: &str, names: Vec<String>) -> Trajectory {
    let visits = names.into_iter().enumerate().map(|(i, n)| Visit::new(n, Span::single(i + 1))).collect();
    Trajectory::new(doc_id, visits)
}

fn require<'a>(value: Option<&'a Path>, flag: &str, kind: &str) -> CmdResult<&'a Path> {
    value.ok_or_else(|| fail(EXIT_INPUT, format!("the {kind} baseline needs {flag}")))
}

pub fn baseline(cfg: &Config, kind: BaselineKind, inputs: BaselineInputs<'_>, out: &Path) -> CmdResult {
    let trajs: Vec<Trajectory> = match kind {
        BaselineKind::Random => {
            let refs = read_refs(require(inputs.refs, "--refs", "random")?)?;
            let map = load_map(require(inputs.map, "--map", "random")?)?;
            let nodes: Vec<String> = map.node_names().map(str::to_string).collect();
            refs.iter()
                .enumerate()
                .map(|(i, (doc_id, r))| {
                    let len = inputs.length.unwrap_or(r.len());
                    random_trajectory_baseline(&nodes, len, cfg.seed.wrapping_add(i as u64))
                        .map(|names| as_trajectory(doc_id, names))
                })
                .collect::<Result<_, _>>()
                .input()?
        }
        BaselineKind::Frequent => {
            let refs = read_refs(require(inputs.refs, "--refs", "frequent")?)?;
            refs.iter()
                .map(|(doc_id, r)| frequent_location_baseline(r).map(|names| as_trajectory(doc_id, names)))
                .collect::<Result<_, _>>()
                .input()?
        }
        BaselineKind::Ner => {
            let corpus = require(inputs.corpus, "--corpus", "ner")?;
            let tagger = GazetteerTagger::from_file(require(inputs.gazetteer, "--gazetteer", "ner")?).input()?;
            read_corpus(corpus)
                .input()?
                .iter()
                .map(|doc| ner_sequence_baseline(doc, &tagger).map(|names| as_trajectory(&doc.doc_id, names)))
                .collect::<Result<_, _>>()
                .input()?
        }
    };
    fs::create_dir_all(out).input()?;
    write_trajectories(out, &trajs)?;
    println!("baseline: {} trajectories", trajs.len());
    Ok(())
}

pub fn similarity(cfg: &Config, map: &LocationGraph, trajs: &[Trajectory], out: &Path) -> CmdResult {
    let measure: Measure = cfg.measure().config()?;
    let matrix = pairwise_matrix(trajs, map, &cfg.similarity_config(), measure).input()?;
    write_text(out, &matrix.to_csv())?;
    for (i, j, cost) in matrix.top_k(cfg.similarity.top_k) {
        println!("{}\t{}\t{cost:.4}", matrix.doc_ids[i], matrix.doc_ids[j]);
    }
    Ok(())
}

pub fn transitions(
    cfg: &Config,
    trajs: &[Trajectory],
    map: Option<&LocationGraph>,
    filter: Option<&str>,
    out: &Path,
) -> CmdResult {
    let filter = match filter {
        Some(spec) => parse_filter(spec).input()?,
        None => cfg.transition_filter().config()?,
    };
    let rows = transition_counts(trajs, map, filter.as_ref(), cfg.transitions.min_docs);
    write_text(out, &transitions_csv(&rows))?;
    println!("transitions: {} rows with at least {} documents", rows.len(), cfg.transitions.min_docs);
    Ok(())
}

pub fn visualize(
    map: &LocationGraph,
    trajectory: Option<&Trajectory>,
    format: VizFormat,
    min_degree: usize,
    out: &Path,
) -> CmdResult {
    let rendered = export_visualization(map, trajectory, format, VizOptions { min_degree });
    for n in &rendered.notes {
        warn!("{n}");
    }
    write_text(out, &rendered.text)?;
    Ok(())
}

pub fn load_trajectory(path: &Path) -> CmdResult<Trajectory> {
    read_trajectory(path).input()
}

fn viz_file(format: VizFormat) -> &'static str {
    match format {
        VizFormat::Dot => "map.dot",
        VizFormat::GraphMl => "map.graphml",
        VizFormat::Json => "map.viz.json",
    }
}

/// Runs every stage into `out`: extract/, map.json, aliases.json,
/// trajectories/, eval.json and eval.csv (with references),
/// transitions.csv, the map drawing, and similarity.csv.
pub fn pipeline(cfg: &Config, corpus: &Path, out: &Path, refs: Option<&Path>, proofed: Option<&Path>) -> CmdResult {
    let refs = refs.map(read_refs).transpose()?;
    let format = cfg.viz_format().config()?;
    let extract_dir = out.join("extract");
    let extracted = extract(cfg, corpus, &extract_dir)?;
    let merged = merge(cfg, &extract_dir, out, None, proofed)?;
    let trajs = trajectories(&extract_dir, &merged.map, &merged.aliases, &out.join("trajectories"))?;
    if let Some(refs) = &refs {
        evaluate(cfg, &trajs, refs, out)?;
    }
    transitions(cfg, &trajs, Some(&merged.map), None, &out.join("transitions.csv"))?;
    visualize(&merged.map, None, format, cfg.viz.min_degree, &out.join(viz_file(format)))?;
    if trajs.len() >= 2 {
        similarity(cfg, &merged.map, &trajs, &out.join("similarity.csv"))?;
    } else {
        warn!("similarity skipped: fewer than 2 trajectories");
    }
    println!("pipeline: done ({} failed documents)", extracted.failures.len());
    Ok(())
}
