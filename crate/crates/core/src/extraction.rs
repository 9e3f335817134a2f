//! Per-document extraction: location graph, graph revision, trajectory, and
//! trajectory revision, all in one conversation with the model.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::format::{parse_graph_value, parse_trajectory_value, FormatError};
use crate::gateway::{
    extract_json_block, ChatSettings, Conversation, Gateway, GatewayError, JsonRecoveryError, PromptError,
    PromptLibrary, TemplateId,
};
use crate::model::{validate_graph, validate_trajectory, Document, LocationGraph, LocationNode, LocationType, Trajectory};

/// Follow-up sent once when a reply contains no recoverable JSON.
pub const REFORMAT_PROMPT: &str = "Give your answer as valid JSON only.";

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error(transparent)]
    Json(#[from] JsonRecoveryError),
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl From<FormatError> for ExtractionError {
    fn from(err: FormatError) -> Self {
        match err {
            FormatError::Schema(msg) => ExtractionError::Schema(msg),
            other => ExtractionError::Schema(other.to_string()),
        }
    }
}

/// Conversation state and diagnostics for one document.
pub struct DocumentSession<'d> {
    doc: &'d Document,
    conversation: Conversation,
    diagnostics: Vec<String>,
    graph_violations: usize,
    trajectory_violations: usize,
}

impl<'d> DocumentSession<'d> {
    pub fn document(&self) -> &Document {
        self.doc
    }

    pub fn diagnostics(&self) -> &[String] {
        &self.diagnostics
    }

    pub fn conversation(&self) -> &Conversation {
        &self.conversation
    }

    fn note(&mut self, step: &str, message: impl std::fmt::Display) {
        self.diagnostics.push(format!("{step}: {message}"));
    }
}

/// Everything extracted from one document.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentExtraction {
    pub doc_id: String,
    pub graph: LocationGraph,
    pub trajectory: Trajectory,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub doc_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct CorpusExtraction {
    /// Successful documents, in input order.
    pub documents: Vec<DocumentExtraction>,
    pub failures: Vec<FailureEntry>,
}

/// Puts a parsed graph into a valid state: endpoints missing from the node
/// list are added with an unknown type, then self-loops and duplicate edges
/// are dropped. Returns the number of violations the raw graph had.
fn clean_graph(graph: &mut LocationGraph, session: &mut DocumentSession<'_>, step: &str) -> usize {
    let violations = validate_graph(graph);
    for v in &violations {
        session.note(step, v);
    }
    let missing: Vec<String> = graph
        .edges()
        .iter()
        .flat_map(|e| [&e.source, &e.target])
        .filter(|name| !graph.contains(name))
        .cloned()
        .collect();
    for name in missing {
        if graph.insert_node(LocationNode::new(name.clone(), LocationType::parse(""))) {
            session.note(step, format_args!("added untyped node {name:?} referenced by an edge"));
        }
    }
    graph.drop_invalid_edges();
    for node in graph.nodes().map(|n| n.name.clone()).collect::<Vec<_>>() {
        if let Some(n) = graph.node_mut(&node) {
            n.aliases.remove(&node);
        }
    }
    violations.len()
}

pub struct Extractor<'a> {
    gateway: &'a Gateway,
    prompts: &'a PromptLibrary,
    settings: ChatSettings,
}

impl<'a> Extractor<'a> {
    pub fn new(gateway: &'a Gateway, prompts: &'a PromptLibrary, settings: ChatSettings) -> Self {
        Self { gateway, prompts, settings }
    }

    pub fn start<'d>(&self, doc: &'d Document) -> DocumentSession<'d> {
        DocumentSession {
            doc,
            conversation: Conversation::new(self.settings.clone()),
            diagnostics: Vec::new(),
            graph_violations: 0,
            trajectory_violations: 0,
        }
    }

    /// Asks and recovers JSON, with one reformat follow-up on failure.
    fn ask_json(&self, session: &mut DocumentSession<'_>, prompt: String) -> Result<Value, ExtractionError> {
        let reply = session.conversation.ask(self.gateway, prompt)?;
        match extract_json_block(&reply) {
            Ok(v) => Ok(v),
            Err(_) => {
                session.note("json", "reply had no valid JSON; asking to reformat");
                let reply = session.conversation.ask(self.gateway, REFORMAT_PROMPT)?;
                Ok(extract_json_block(&reply)?)
            }
        }
    }

    pub fn extract_location_graph(&self, session: &mut DocumentSession<'_>) -> Result<LocationGraph, ExtractionError> {
        let text = session.doc.numbered_text();
        let prompt = self.prompts.render(TemplateId::GraphExtraction, &[("testimony", &text)])?;
        let value = self.ask_json(session, prompt)?;
        let parsed = parse_graph_value(&value)?;
        for note in &parsed.notes {
            session.note("graph", note);
        }
        let mut graph = parsed.value;
        session.graph_violations = clean_graph(&mut graph, session, "graph");
        Ok(graph)
    }

    /// Keeps the revision only if it parses and has no more violations than the draft.
    pub fn revise_graph(
        &self,
        session: &mut DocumentSession<'_>,
        draft: LocationGraph,
    ) -> Result<LocationGraph, ExtractionError> {
        let prompt = self.prompts.render(TemplateId::GraphRevision, &[])?;
        let reply = session.conversation.ask(self.gateway, prompt)?;
        let parsed = match extract_json_block(&reply)
            .map_err(ExtractionError::from)
            .and_then(|v| Ok(parse_graph_value(&v)?))
        {
            Ok(parsed) => parsed,
            Err(err) => {
                session.note("graph revision", format_args!("kept draft: {err}"));
                return Ok(draft);
            }
        };
        let mut revised = parsed.value;
        let raw = validate_graph(&revised).len();
        let before = session.graph_violations;
        if raw > before {
            session.note(
                "graph revision",
                format_args!("kept draft: revision has {raw} violations, draft had {before}"),
            );
            return Ok(draft);
        }
        for note in &parsed.notes {
            session.note("graph revision", note);
        }
        session.graph_violations = clean_graph(&mut revised, session, "graph revision");
        Ok(revised)
    }

    fn trajectory_from(
        &self,
        session: &mut DocumentSession<'_>,
        value: &Value,
        graph: &LocationGraph,
        step: &str,
    ) -> Result<(Trajectory, usize), ExtractionError> {
        let parsed = parse_trajectory_value(value, &session.doc.doc_id)?;
        let mut traj = parsed.value;
        traj.doc_id = session.doc.doc_id.clone();
        let nodes: HashSet<&str> = graph.node_names().collect();
        let violations = validate_trajectory(&traj, session.doc, &nodes);
        let notes: Vec<String> = parsed
            .notes
            .into_iter()
            .chain(violations.iter().map(ToString::to_string))
            .collect();
        for note in notes {
            session.note(step, note);
        }
        let merged = traj.collapse_adjacent();
        if merged > 0 {
            session.note(step, format_args!("collapsed {merged} repeated adjacent visits"));
        }
        Ok((traj, violations.len()))
    }

    pub fn extract_trajectory(
        &self,
        session: &mut DocumentSession<'_>,
        graph: &LocationGraph,
    ) -> Result<Trajectory, ExtractionError> {
        let prompt = self.prompts.render(TemplateId::TrajectoryExtraction, &[])?;
        let value = self.ask_json(session, prompt)?;
        let (traj, violations) = self.trajectory_from(session, &value, graph, "trajectory")?;
        session.trajectory_violations = violations;
        Ok(traj)
    }

    /// Keeps the revision iff it parses and its violation count is at most the draft's.
    pub fn revise_trajectory(
        &self,
        session: &mut DocumentSession<'_>,
        graph: &LocationGraph,
        draft: Trajectory,
    ) -> Result<Trajectory, ExtractionError> {
        let prompt = self.prompts.render(TemplateId::TrajectoryRevision, &[])?;
        let reply = session.conversation.ask(self.gateway, prompt)?;
        let value = match extract_json_block(&reply) {
            Ok(v) => v,
            Err(err) => {
                session.note("trajectory revision", format_args!("kept draft: {err}"));
                return Ok(draft);
            }
        };
        let mut scratch = Vec::new();
        std::mem::swap(&mut scratch, &mut session.diagnostics);
        let attempt = self.trajectory_from(session, &value, graph, "trajectory revision");
        std::mem::swap(&mut scratch, &mut session.diagnostics);
        match attempt {
            Ok((revised, violations)) if violations <= session.trajectory_violations => {
                session.diagnostics.extend(scratch);
                session.trajectory_violations = violations;
                Ok(revised)
            }
            Ok((_, violations)) => {
                let before = session.trajectory_violations;
                session.note(
                    "trajectory revision",
                    format_args!("kept draft: revision has {violations} violations, draft had {before}"),
                );
                Ok(draft)
            }
            Err(err) => {
                session.note("trajectory revision", format_args!("kept draft: {err}"));
                Ok(draft)
            }
        }
    }

    /// Runs the four steps in order on one document.
    pub fn extract_document(&self, doc: &Document) -> Result<DocumentExtraction, ExtractionError> {
        let mut session = self.start(doc);
        let draft = self.extract_location_graph(&mut session)?;
        let graph = self.revise_graph(&mut session, draft)?;
        let draft = self.extract_trajectory(&mut session, &graph)?;
        let trajectory = self.revise_trajectory(&mut session, &graph, draft)?;
        Ok(DocumentExtraction {
            doc_id: doc.doc_id.clone(),
            graph,
            trajectory,
            diagnostics: session.diagnostics,
        })
    }

    /// Extracts every document, running up to the gateway's concurrency limit
    /// at once. A failing document is reported and skipped.
    pub fn extract_corpus(&self, docs: &[Document]) -> CorpusExtraction {
        let threads = self.gateway.concurrency().min(docs.len()).max(1);
        let run = || -> Vec<Result<DocumentExtraction, FailureEntry>> {
            docs.par_iter()
                .map(|doc| {
                    self.extract_document(doc).map_err(|err| FailureEntry {
                        doc_id: doc.doc_id.clone(),
                        error: err.to_string(),
                    })
                })
                .collect()
        };
        let results = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        };
        let mut out = CorpusExtraction::default();
        for result in results {
            match result {
                Ok(doc) => out.documents.push(doc),
                Err(failure) => out.failures.push(failure),
            }
        }
        out
    }
}
