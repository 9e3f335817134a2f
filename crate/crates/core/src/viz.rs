//! Styled graph export (DOT, GraphML, JSON) for external renderers. Layout
//! is left to the renderer; only attributes are emitted.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::model::{LocationGraph, LocationKind, Trajectory};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VizError {
    #[error("unknown export format {0:?} (expected dot, graphml or json)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VizFormat {
    Dot,
    GraphMl,
    Json,
}

impl FromStr for VizFormat {
    type Err = VizError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "dot" | "gv" => Ok(VizFormat::Dot),
            "graphml" => Ok(VizFormat::GraphMl),
            "json" => Ok(VizFormat::Json),
            other => Err(VizError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeStyle {
    pub shape: &'static str,
    pub color: &'static str,
}

pub fn node_style(kind: LocationKind) -> NodeStyle {
    use LocationKind::*;
    match kind {
        Continent | Country | County | Region => NodeStyle { shape: "circle", color: "#8b5a2b" },
        City | Village => NodeStyle { shape: "square", color: "#1f77b4" },
        Ghetto | ArmyCamp | ConcentrationCamp | DeathCamp | Natural => NodeStyle { shape: "triangle", color: "#2ca02c" },
        Facility => NodeStyle { shape: "diamond", color: "#e6c229" },
        Unknown => NodeStyle { shape: "ellipse", color: "#999999" },
    }
}

/// Node width in inches, growing linearly with degree.
pub fn node_size(degree: usize) -> f64 {
    0.3 + 0.05 * degree as f64
}

/// Color for trajectory step `step` of `steps`, from light to dark red.
pub fn ramp_color(step: usize, steps: usize) -> String {
    let t = if steps == 0 { 1.0 } else { (step + 1) as f64 / steps as f64 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(252.0, 103.0), lerp(187.0, 0.0), lerp(161.0, 13.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VizOptions {
    /// Nodes with degree below this are hidden, unless on the trajectory.
    pub min_degree: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub text: String,
    pub notes: Vec<String>,
}

struct Scene<'g> {
    graph: LocationGraph,
    steps: Vec<(&'g str, &'g str)>,
}

fn scene<'g>(map: &LocationGraph, trajectory: Option<&'g Trajectory>, options: VizOptions, notes: &mut Vec<String>) -> Scene<'g> {
    let mut stops: Vec<&str> = Vec::new();
    if let Some(t) = trajectory {
        for v in &t.visits {
            if !map.contains(&v.location) {
                let note = format!("visit to {:?} is not on the map; dropped", v.location);
                log::warn!("{note}");
                notes.push(note);
                continue;
            }
            if stops.last() != Some(&v.location.as_str()) {
                stops.push(&v.location);
            }
        }
    }
    let on_path: HashSet<&str> = stops.iter().copied().collect();
    let mut graph = map.clone().with_degrees();
    graph.retain_nodes(|n| n.degree >= options.min_degree || on_path.contains(n.name.as_str()));
    let steps = stops.windows(2).map(|w| (w[0], w[1])).collect();
    Scene { graph, steps }
}

fn dot_quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn to_dot(s: &Scene<'_>) -> String {
    let mut out = String::from("digraph locations {\n");
    out.push_str("    graph [outputorder=edgesfirst];\n");
    out.push_str("    node [style=filled, fontsize=10];\n");
    out.push_str("    edge [color=\"#bbbbbb\"];\n");
    for n in s.graph.nodes() {
        let style = node_style(n.kind());
        let size = node_size(n.degree);
        let _ = writeln!(
            out,
            "    {} [type={}, shape={}, fillcolor=\"{}\", width={size:.2}, height={size:.2}];",
            dot_quote(&n.name),
            dot_quote(n.loc_type.label()),
            style.shape,
            style.color
        );
    }
    for e in s.graph.edges() {
        let _ = writeln!(out, "    {} -> {} [relation={}];", dot_quote(&e.source), dot_quote(&e.target), e.relation.as_str());
    }
    for (i, (a, b)) in s.steps.iter().enumerate() {
        let _ = writeln!(
            out,
            "    {} -> {} [step={}, color=\"{}\", penwidth=2];",
            dot_quote(a),
            dot_quote(b),
            i + 1,
            ramp_color(i, s.steps.len())
        );
    }
    out.push_str("}\n");
    out
}

fn to_graphml(s: &Scene<'_>) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str("<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n");
    for (id, target, name, ty) in [
        ("type", "node", "type", "string"),
        ("shape", "node", "shape", "string"),
        ("color", "node", "color", "string"),
        ("size", "node", "size", "double"),
        ("degree", "node", "degree", "int"),
        ("relation", "edge", "relation", "string"),
        ("step", "edge", "step", "int"),
        ("ecolor", "edge", "color", "string"),
    ] {
        let _ = writeln!(out, "  <key id=\"{id}\" for=\"{target}\" attr.name=\"{name}\" attr.type=\"{ty}\"/>");
    }
    out.push_str("  <graph id=\"locations\" edgedefault=\"directed\">\n");
    for n in s.graph.nodes() {
        let style = node_style(n.kind());
        let _ = writeln!(out, "    <node id=\"{}\">", xml_escape(&n.name));
        let _ = writeln!(out, "      <data key=\"type\">{}</data>", xml_escape(n.loc_type.label()));
        let _ = writeln!(out, "      <data key=\"shape\">{}</data>", style.shape);
        let _ = writeln!(out, "      <data key=\"color\">{}</data>", style.color);
        let _ = writeln!(out, "      <data key=\"size\">{:.2}</data>", node_size(n.degree));
        let _ = writeln!(out, "      <data key=\"degree\">{}</data>", n.degree);
        out.push_str("    </node>\n");
    }
    for (i, e) in s.graph.edges().iter().enumerate() {
        let _ = writeln!(
            out,
            "    <edge id=\"e{i}\" source=\"{}\" target=\"{}\">\n      <data key=\"relation\">{}</data>\n    </edge>",
            xml_escape(&e.source),
            xml_escape(&e.target),
            e.relation.as_str()
        );
    }
    for (i, (a, b)) in s.steps.iter().enumerate() {
        let _ = writeln!(
            out,
            "    <edge id=\"t{}\" source=\"{}\" target=\"{}\">\n      <data key=\"step\">{}</data>\n      <data key=\"ecolor\">{}</data>\n    </edge>",
            i + 1,
            xml_escape(a),
            xml_escape(b),
            i + 1,
            ramp_color(i, s.steps.len())
        );
    }
    out.push_str("  </graph>\n</graphml>\n");
    out
}

fn to_json(s: &Scene<'_>) -> String {
    let nodes: Vec<_> = s
        .graph
        .nodes()
        .map(|n| {
            let style = node_style(n.kind());
            json!({
                "name": n.name,
                "type": n.loc_type.label(),
                "degree": n.degree,
                "shape": style.shape,
                "color": style.color,
                "size": (node_size(n.degree) * 100.0).round() / 100.0,
            })
        })
        .collect();
    let edges: Vec<_> = s
        .graph
        .edges()
        .iter()
        .map(|e| json!({"source": e.source, "target": e.target, "relation": e.relation.as_str()}))
        .collect();
    let steps: Vec<_> = s
        .steps
        .iter()
        .enumerate()
        .map(|(i, (a, b))| json!({"source": a, "target": b, "step": i + 1, "color": ramp_color(i, s.steps.len())}))
        .collect();
    crate::format::to_pretty(&json!({"nodes": nodes, "edges": edges, "trajectory": steps}))
}

/// Renders `map`, optionally overlaid with `trajectory`, in `format`.
pub fn export_visualization(
    map: &LocationGraph,
    trajectory: Option<&Trajectory>,
    format: VizFormat,
    options: VizOptions,
) -> Rendered {
    let mut notes = Vec::new();
    let s = scene(map, trajectory, options, &mut notes);
    let text = match format {
        VizFormat::Dot => to_dot(&s),
        VizFormat::GraphMl => to_graphml(&s),
        VizFormat::Json => to_json(&s),
    };
    Rendered { text, notes }
}
