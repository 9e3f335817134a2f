//! Trajectory scores (Edit, R-Edit), map accuracy over edges, and the
//! location alignment that precedes trajectory scoring.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::extraction::ExtractionError;
use crate::format::ReferenceSet;
use crate::gateway::{extract_json_block, ChatSettings, Conversation, Gateway, PromptLibrary, TemplateId};
use crate::model::{LocationGraph, Trajectory};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("reference sequence is empty")]
    EmptyReference,
    #[error("reference for {doc_id:?} is empty")]
    EmptyReferenceFor { doc_id: String },
    #[error("no reference for {doc_id:?}")]
    MissingReference { doc_id: String },
    #[error("aligning {doc_id:?}: {source}")]
    Alignment {
        doc_id: String,
        #[source]
        source: ExtractionError,
    },
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(pred: &[T], reference: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=reference.len()).collect();
    let mut cur = vec![0; reference.len() + 1];
    for (i, p) in pred.iter().enumerate() {
        cur[0] = i + 1;
        for (j, r) in reference.iter().enumerate() {
            let sub = prev[j] + usize::from(p != r);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[reference.len()]
}

/// Cheapest script turning `pred` into `reference` when deleting from
/// `pred` is free and insertions and substitutions cost 1.
pub fn free_deletion_distance<T: PartialEq>(pred: &[T], reference: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=reference.len()).collect();
    let mut cur = vec![0; reference.len() + 1];
    for p in pred {
        cur[0] = 0;
        for (j, r) in reference.iter().enumerate() {
            let sub = prev[j] + usize::from(p != r);
            cur[j + 1] = sub.min(prev[j + 1]).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[reference.len()]
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    let mut cur = vec![0; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance normalized by the reference length. Can exceed 1.
pub fn normalized_edit<T: PartialEq>(pred: &[T], reference: &[T]) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    Ok(edit_distance(pred, reference) as f64 / reference.len() as f64)
}

/// Recall-oriented edit: extra predicted items are deleted for free.
pub fn r_edit<T: PartialEq>(pred: &[T], reference: &[T]) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    Ok(free_deletion_distance(pred, reference) as f64 / reference.len() as f64)
}

/// The same quantity as [`r_edit`], computed as `(|ref| - LCS) / |ref|`.
pub fn r_edit_via_lcs<T: PartialEq>(pred: &[T], reference: &[T]) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    Ok((reference.len() - lcs_len(pred, reference)) as f64 / reference.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapAccuracy {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Set when a ratio had a zero denominator and was reported as 0.
    pub undefined: bool,
}

fn ratio(num: usize, den: usize, undefined: &mut bool) -> f64 {
    if den == 0 {
        *undefined = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 of `model`'s edges against `reference`'s, as
/// unlabeled directed pairs over the nodes both graphs share.
pub fn map_accuracy(model: &LocationGraph, reference: &LocationGraph) -> MapAccuracy {
    let common: HashSet<&str> = model.node_names().filter(|n| reference.contains(n)).collect();
    let pairs = |g: &'_ LocationGraph| -> HashSet<(String, String)> {
        g.edges()
            .iter()
            .filter(|e| common.contains(e.source.as_str()) && common.contains(e.target.as_str()))
            .map(|e| (e.source.clone(), e.target.clone()))
            .collect()
    };
    let m = pairs(model);
    let r = pairs(reference);
    let tp = m.intersection(&r).count();
    let fp = m.len() - tp;
    let fneg = r.len() - tp;
    let mut undefined = false;
    let precision = ratio(tp, tp + fp, &mut undefined);
    let recall = ratio(tp, tp + fneg, &mut undefined);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        undefined = true;
        0.0
    };
    MapAccuracy { precision, recall, f1, true_positives: tp, false_positives: fp, false_negatives: fneg, undefined }
}

/// For each predicted name, the index of its gold match or -1.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentMap {
    pub ids: Vec<i64>,
}

/// Match key for deterministic alignment: diacritics stripped, lowercase,
/// punctuation and brackets turned into spaces, a leading "the" dropped,
/// and common transliteration variants folded (ts/tz→c, cz→ch, sz→sh, w→v).
pub fn normalize_name(name: &str) -> String {
    let mut base = String::with_capacity(name.len());
    for c in name.nfd().filter(|c| !is_combining_mark(*c)) {
        match c {
            'ł' | 'Ł' => base.push('l'),
            'ø' | 'Ø' => base.push('o'),
            'ß' => base.push_str("ss"),
            'đ' | 'Đ' => base.push('d'),
            c if c.is_alphanumeric() => base.extend(c.to_lowercase()),
            _ => base.push(' '),
        }
    }
    let words: Vec<&str> = base.split_whitespace().collect();
    let words = match words.split_first() {
        Some((&"the", rest)) if !rest.is_empty() => rest,
        _ => &words[..],
    };
    words
        .join(" ")
        .replace("ts", "c")
        .replace("tz", "c")
        .replace("cz", "ch")
        .replace("sz", "sh")
        .replace('w', "v")
}

pub fn align_deterministic(pred: &[String], gold: &[String]) -> AlignmentMap {
    let mut keys: HashMap<String, i64> = HashMap::new();
    for (i, g) in gold.iter().enumerate() {
        keys.entry(normalize_name(g)).or_insert(i as i64);
    }
    AlignmentMap {
        ids: pred.iter().map(|p| keys.get(&normalize_name(p)).copied().unwrap_or(-1)).collect(),
    }
}

/// Reads the model's `{"ids": [...]}` answer, coercing anything unusable to -1.
pub fn parse_alignment(value: &Value, pred_len: usize, gold_len: usize, notes: &mut Vec<String>) -> Option<AlignmentMap> {
    let items = match value {
        Value::Object(obj) => obj.get("ids")?.as_array()?,
        Value::Array(items) => items,
        _ => return None,
    };
    let mut ids: Vec<i64> = items
        .iter()
        .map(|v| match v.as_i64() {
            Some(id) if id >= 0 && (id as usize) < gold_len => id,
            Some(-1) => -1,
            _ => {
                notes.push(format!("alignment id {v} out of range; using -1"));
                -1
            }
        })
        .collect();
    if ids.len() != pred_len {
        notes.push(format!("alignment has {} ids for {pred_len} predicted names", ids.len()));
        ids.resize(pred_len, -1);
    }
    Some(AlignmentMap { ids })
}

/// How predicted names are matched to gold names before scoring.
pub enum Aligner<'a> {
    Deterministic,
    Model {
        gateway: &'a Gateway,
        prompts: &'a PromptLibrary,
        settings: ChatSettings,
    },
}

impl Aligner<'_> {
    pub fn align(&self, pred: &[String], gold: &[String], notes: &mut Vec<String>) -> Result<AlignmentMap, ExtractionError> {
        let (gateway, prompts, settings) = match self {
            Aligner::Deterministic => return Ok(align_deterministic(pred, gold)),
            Aligner::Model { gateway, prompts, settings } => (gateway, prompts, settings),
        };
        if pred.is_empty() {
            return Ok(AlignmentMap::default());
        }
        if gold.is_empty() {
            return Ok(AlignmentMap { ids: vec![-1; pred.len()] });
        }
        let p = serde_json::to_string(pred).expect("string list serializes");
        let g = serde_json::to_string(gold).expect("string list serializes");
        let prompt = prompts.render(TemplateId::EvalAlignment, &[("predicted", &p), ("gold", &g)])?;
        let reply = Conversation::new(settings.clone()).ask(gateway, prompt)?;
        let value = extract_json_block(&reply)?;
        parse_alignment(&value, pred.len(), gold.len(), notes)
            .ok_or_else(|| ExtractionError::Schema("expected {\"ids\": [...]}".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub doc_id: String,
    pub edit: f64,
    pub r_edit: f64,
    pub pred_len: usize,
    pub ref_len: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation; zeros for an empty input.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let values: Vec<f64> = values.into_iter().collect();
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalAggregate {
    pub documents: usize,
    pub edit: MeanStd,
    pub r_edit: MeanStd,
    pub pred_len: MeanStd,
    pub ref_len: MeanStd,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_document: Vec<EvalRow>,
    pub aggregate: EvalAggregate,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>, notes: Vec<String>) -> Self {
        let aggregate = EvalAggregate {
            documents: rows.len(),
            edit: MeanStd::of(rows.iter().map(|r| r.edit)),
            r_edit: MeanStd::of(rows.iter().map(|r| r.r_edit)),
            pred_len: MeanStd::of(rows.iter().map(|r| r.pred_len as f64)),
            ref_len: MeanStd::of(rows.iter().map(|r| r.ref_len as f64)),
        };
        Self { per_document: rows, aggregate, notes }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["doc_id", "edit", "r_edit", "pred_len", "ref_len"])?;
        for row in &self.per_document {
            w.serialize((&row.doc_id, row.edit, row.r_edit, row.pred_len, row.ref_len))?;
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

fn first_occurrences(names: &[&str]) -> Vec<String> {
    let mut seen = HashSet::new();
    names.iter().filter(|n| seen.insert(**n)).map(|n| n.to_string()).collect()
}

fn collapse<T: PartialEq>(mut seq: Vec<T>) -> Vec<T> {
    seq.dedup();
    seq
}

/// Scores one prediction against one reference sequence.
pub fn score_document(
    doc_id: &str,
    pred: &[&str],
    reference: &[String],
    aligner: &Aligner<'_>,
    notes: &mut Vec<String>,
) -> Result<EvalRow, MetricError> {
    let ref_names: Vec<&str> = reference.iter().map(String::as_str).collect();
    let gold = first_occurrences(&ref_names);
    let gold_id: HashMap<&str, i64> = gold.iter().enumerate().map(|(i, g)| (g.as_str(), i as i64)).collect();
    let ref_symbols = collapse(ref_names.iter().map(|n| gold_id[n]).collect::<Vec<_>>());
    if ref_symbols.is_empty() {
        return Err(MetricError::EmptyReferenceFor { doc_id: doc_id.to_string() });
    }
    let uniq_pred = first_occurrences(pred);
    let mut doc_notes = Vec::new();
    let alignment = aligner
        .align(&uniq_pred, &gold, &mut doc_notes)
        .map_err(|source| MetricError::Alignment { doc_id: doc_id.to_string(), source })?;
    notes.extend(doc_notes.into_iter().map(|n| format!("{doc_id}: {n}")));
    let matched: HashMap<&str, i64> = uniq_pred.iter().map(String::as_str).zip(alignment.ids.iter().copied()).collect();
    let mut sentinel = -1;
    let pred_symbols = collapse(
        pred.iter()
            .map(|n| match matched.get(n) {
                Some(&id) if id >= 0 => id,
                _ => {
                    sentinel -= 1;
                    sentinel
                }
            })
            .collect::<Vec<_>>(),
    );
    Ok(EvalRow {
        doc_id: doc_id.to_string(),
        edit: normalized_edit(&pred_symbols, &ref_symbols)?,
        r_edit: r_edit(&pred_symbols, &ref_symbols)?,
        pred_len: pred_symbols.len(),
        ref_len: ref_symbols.len(),
    })
}

/// Scores every prediction against its reference. References with no
/// prediction are scored as empty predictions.
pub fn evaluate_trajectories(
    preds: &[Trajectory],
    references: &ReferenceSet,
    aligner: &Aligner<'_>,
) -> Result<EvalReport, MetricError> {
    let mut by_doc: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for t in preds {
        by_doc.insert(&t.doc_id, t.locations());
    }
    if let Some(doc_id) = by_doc.keys().find(|d| !references.contains_key(**d)) {
        return Err(MetricError::MissingReference { doc_id: doc_id.to_string() });
    }
    let mut notes = Vec::new();
    let mut rows = Vec::new();
    for (doc_id, reference) in references {
        let pred = match by_doc.get(doc_id.as_str()) {
            Some(p) => p.clone(),
            None => {
                notes.push(format!("{doc_id}: no prediction; scored as empty"));
                Vec::new()
            }
        };
        rows.push(score_document(doc_id, &pred, reference, aligner, &mut notes)?);
    }
    Ok(EvalReport::from_rows(rows, notes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{DomainProfile, ScriptRule, ScriptedTransport};
    use crate::model::{Edge, LocationKind, LocationNode, Span, Visit};
    use proptest::prelude::*;
    use std::sync::Arc;

    /// Minimum over all order-preserving pairings of positions. Unpaired
    /// prediction items cost `del`, unpaired reference items cost 1, paired
    /// items cost 1 if they differ.
    fn enumerate_alignments(p: &[u8], r: &[u8], del: usize) -> usize {
        fn go(p: &[u8], r: &[u8], del: usize) -> usize {
            if p.is_empty() {
                return r.len();
            }
            if r.is_empty() {
                return p.len() * del;
            }
            let pair = go(&p[1..], &r[1..], del) + usize::from(p[0] != r[0]);
            let skip_p = go(&p[1..], r, del) + del;
            let skip_r = go(p, &r[1..], del) + 1;
            pair.min(skip_p).min(skip_r)
        }
        go(p, r, del)
    }

    fn lcs_oracle(p: &[u8], r: &[u8]) -> usize {
        let mut best = 0;
        for mask in 0u32..(1 << p.len()) {
            let sub: Vec<u8> = (0..p.len()).filter(|i| mask & (1 << i) != 0).map(|i| p[i]).collect();
            let mut it = r.iter();
            if sub.iter().all(|c| it.any(|x| x == c)) {
                best = best.max(sub.len());
            }
        }
        best
    }

    fn all_seqs(max_len: usize, alphabet: u8) -> Vec<Vec<u8>> {
        let mut out = vec![vec![]];
        let mut frontier = vec![vec![]];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for s in &frontier {
                for c in 0..alphabet {
                    let mut t: Vec<u8> = s.clone();
                    t.push(c);
                    next.push(t);
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    #[test]
    fn worked_examples() {
        let abc = ['A', 'B', 'C'];
        assert_eq!(edit_distance(&abc, &abc), 0);
        assert_eq!(edit_distance(&[], &['A', 'B']), 2);
        assert_eq!(edit_distance(&['A', 'X', 'C'], &['A', 'B', 'C', 'D']), 2);
        assert_eq!(r_edit(&['A', 'X', 'C'], &['A', 'B', 'C', 'D']).unwrap(), 0.5);
        assert_eq!(r_edit(&['A', 'B', 'X', 'C', 'D'], &['A', 'B', 'C', 'D']).unwrap(), 0.0);
        assert_eq!(r_edit::<char>(&[], &['A', 'B', 'C', 'D']).unwrap(), 1.0);
        let pred: Vec<u32> = (100..115).collect();
        assert_eq!(normalized_edit(&pred, &[1, 2, 3, 4, 5]).unwrap(), 3.0);
        assert!(matches!(normalized_edit::<u8>(&[1], &[]), Err(MetricError::EmptyReference)));
        assert!(matches!(r_edit::<u8>(&[], &[]), Err(MetricError::EmptyReference)));
    }

    #[test]
    fn dp_matches_enumeration() {
        let seqs = all_seqs(4, 3);
        for p in &seqs {
            for r in &seqs {
                assert_eq!(edit_distance(p, r), enumerate_alignments(p, r, 1), "{p:?} {r:?}");
                assert_eq!(free_deletion_distance(p, r), enumerate_alignments(p, r, 0), "{p:?} {r:?}");
                assert_eq!(lcs_len(p, r), lcs_oracle(p, r), "{p:?} {r:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn r_edit_equals_lcs_form(p in prop::collection::vec(0u8..5, 0..30), r in prop::collection::vec(0u8..5, 1..30)) {
            prop_assert_eq!(r_edit(&p, &r).unwrap(), r_edit_via_lcs(&p, &r).unwrap());
            prop_assert!(r_edit(&p, &r).unwrap() <= normalized_edit(&p, &r).unwrap());
        }

        #[test]
        fn relabeling_invariance(p in prop::collection::vec(0u8..6, 0..12), r in prop::collection::vec(0u8..6, 1..12), perm in Just([0u8, 1, 2, 3, 4, 5]).prop_shuffle()) {
            let relabel = |s: &[u8]| s.iter().map(|c| perm[*c as usize]).collect::<Vec<_>>();
            prop_assert_eq!(normalized_edit(&p, &r).unwrap(), normalized_edit(&relabel(&p), &relabel(&r)).unwrap());
        }
    }

    fn graph(edges: &[(&str, &str)]) -> LocationGraph {
        let mut g = LocationGraph::new();
        for (a, b) in edges {
            g.insert_node(LocationNode::new(*a, LocationKind::City));
            g.insert_node(LocationNode::new(*b, LocationKind::City));
            g.add_edge(Edge::inclusion(*a, *b));
        }
        g
    }

    #[test]
    fn map_accuracy_examples() {
        let m = graph(&[("a", "b"), ("a", "c")]);
        let r = graph(&[("a", "b"), ("b", "c")]);
        let acc = map_accuracy(&m, &r);
        assert_eq!((acc.precision, acc.recall, acc.f1), (0.5, 0.5, 0.5));
        let acc = map_accuracy(&m, &m);
        assert_eq!((acc.precision, acc.recall, acc.f1), (1.0, 1.0, 1.0));
        let acc = map_accuracy(&graph(&[("a", "b")]), &graph(&[("b", "a")]));
        assert_eq!((acc.precision, acc.recall, acc.f1), (0.0, 0.0, 0.0));
        assert!(acc.undefined);
        let empty = map_accuracy(&LocationGraph::new(), &LocationGraph::new());
        assert!(empty.undefined && empty.f1 == 0.0);
    }

    #[test]
    fn map_accuracy_ignores_outside_nodes_and_relations() {
        let mut m = graph(&[("a", "b"), ("a", "z")]);
        m.insert_node(LocationNode::new("q", LocationKind::City));
        let mut r = graph(&[("b", "c")]);
        r.insert_node(LocationNode::new("a", LocationKind::City));
        r.add_edge(Edge::proximity("a", "b"));
        let acc = map_accuracy(&m, &r);
        assert_eq!((acc.true_positives, acc.false_positives, acc.false_negatives), (1, 0, 0));
    }

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn alignment_worked_example() {
        let pred = s(&["Warsaw (Ghetto)", "Luck", "Warsaw", "New York"]);
        let gold = s(&["Lutsk", "The Warsaw ghetto"]);
        assert_eq!(align_deterministic(&pred, &gold).ids, vec![1, 0, -1, -1]);
        let same = s(&["Krakow", "Łódź", "Brooklyn"]);
        assert_eq!(align_deterministic(&same, &same).ids, vec![0, 1, 2]);
        assert!(align_deterministic(&[], &gold).ids.is_empty());
        assert_eq!(align_deterministic(&s(&["Kraków", "Lodz"]), &same).ids, vec![0, 1]);
    }

    #[test]
    fn name_normalization() {
        assert_eq!(normalize_name("The Hague"), "hague");
        assert_eq!(normalize_name("The"), "the");
        assert_eq!(normalize_name("  Bergen-Belsen "), "bergen belsen");
        assert_eq!(normalize_name("Tarnów"), normalize_name("Tarnov"));
    }

    fn model_aligner_reply(reply: &str) -> (Result<AlignmentMap, ExtractionError>, Vec<String>) {
        let t = Arc::new(ScriptedTransport::new(vec![ScriptRule::new(None, "Gold-standard locations", reply)]));
        let gw = Gateway::new(t, None);
        let prompts = PromptLibrary::builtin(DomainProfile::Holocaust);
        let aligner = Aligner::Model { gateway: &gw, prompts: &prompts, settings: ChatSettings::default() };
        let mut notes = Vec::new();
        let r = aligner.align(&s(&["Luck", "Paris", "Rome"]), &s(&["Lutsk", "Paris"]), &mut notes);
        (r, notes)
    }

    #[test]
    fn model_alignment() {
        let (r, notes) = model_aligner_reply("```json\n{\"ids\": [0, 1, -1]}\n```");
        assert_eq!(r.unwrap().ids, vec![0, 1, -1]);
        assert!(notes.is_empty());
        let (r, notes) = model_aligner_reply("{\"ids\": [0, 7]}");
        assert_eq!(r.unwrap().ids, vec![0, -1, -1]);
        assert_eq!(notes.len(), 2);
        assert!(matches!(model_aligner_reply("no idea").0, Err(ExtractionError::Json(_))));
    }

    fn traj(doc: &str, names: &[&str]) -> Trajectory {
        Trajectory::new(doc, names.iter().enumerate().map(|(i, n)| Visit::new(*n, Span::single(i + 1))).collect())
    }

    #[test]
    fn evaluation_table() {
        // d1: exact. d2: one extra predicted place, one missed. d3: two
        // predictions align to the same gold place and merge.
        let preds = vec![
            traj("d1", &["Krakow", "Auschwitz", "New York"]),
            traj("d2", &["Lodz", "Paris", "Warsaw"]),
            traj("d3", &["Warsaw (Ghetto)", "The Warsaw ghetto", "Treblinka"]),
        ];
        let refs: ReferenceSet = [
            ("d1".to_string(), s(&["Krakow", "Auschwitz", "New York"])),
            ("d2".to_string(), s(&["Lodz", "Warsaw", "Lublin"])),
            ("d3".to_string(), s(&["Warsaw Ghetto", "Treblinka"])),
        ]
        .into();
        let report = evaluate_trajectories(&preds, &refs, &Aligner::Deterministic).unwrap();
        let rows: Vec<(f64, f64, usize, usize)> =
            report.per_document.iter().map(|r| (r.edit, r.r_edit, r.pred_len, r.ref_len)).collect();
        // d2: [Lodz, X, Warsaw] vs [Lodz, Warsaw, Lublin]: Levenshtein 2, LCS 2.
        assert_eq!(rows, vec![(0.0, 0.0, 3, 3), (2.0 / 3.0, 1.0 / 3.0, 3, 3), (0.0, 0.0, 2, 2)]);
        assert!((report.aggregate.edit.mean - 2.0 / 9.0).abs() < 1e-12);
        let expected_std = ((2.0f64 / 9.0).powi(2) * 2.0 + (4.0f64 / 9.0).powi(2)) / 3.0;
        assert!((report.aggregate.edit.std - expected_std.sqrt()).abs() < 1e-12);
        assert_eq!(report.aggregate.pred_len.mean, 8.0 / 3.0);
        let csv = report.to_csv();
        assert!(csv.starts_with("doc_id,edit,r_edit,pred_len,ref_len\nd1,0.0,0.0,3,3\n"));
    }

    #[test]
    fn unmatched_predictions_never_match_each_other() {
        let refs: ReferenceSet = [("d".to_string(), s(&["A", "B"]))].into();
        let report = evaluate_trajectories(&[traj("d", &["X", "Y"])], &refs, &Aligner::Deterministic).unwrap();
        assert_eq!(report.per_document[0].edit, 1.0);
    }

    #[test]
    fn missing_and_empty() {
        let refs: ReferenceSet = [("d".to_string(), s(&["A", "B", "C"]))].into();
        let report = evaluate_trajectories(&[], &refs, &Aligner::Deterministic).unwrap();
        assert_eq!((report.per_document[0].edit, report.per_document[0].r_edit), (1.0, 1.0));
        assert_eq!(report.notes.len(), 1);
        let err = evaluate_trajectories(&[traj("other", &["A"])], &refs, &Aligner::Deterministic);
        assert!(matches!(err, Err(MetricError::MissingReference { .. })));
        let refs: ReferenceSet = [("d".to_string(), vec![])].into();
        let err = evaluate_trajectories(&[traj("d", &["A"])], &refs, &Aligner::Deterministic);
        assert!(matches!(err, Err(MetricError::EmptyReferenceFor { .. })));
    }
}
