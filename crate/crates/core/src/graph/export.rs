use std::fmt::Write;

use super::{EdgeKind, HeteroGraph, NodeKind};

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("malformed graph json: {0}")]
    Json(#[from] serde_json::Error),
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn label(g: &HeteroGraph, i: usize) -> String {
    let n = &g.nodes()[i];
    match &n.kind {
        NodeKind::Question => "q".into(),
        NodeKind::Title { paragraph } => format!("t{paragraph}"),
        NodeKind::Sentence {
            paragraph,
            sentence,
        } => format!("s{paragraph}.{sentence}"),
        NodeKind::Argument { key } => format!("{}: {}", key.phrase_norm, key.role),
    }
}

/// Graphviz rendering. Doc nodes are circles, argument nodes boxes; semantic
/// edges carry their predicate words.
pub fn export_dot(g: &HeteroGraph) -> String {
    let mut out = String::from("graph srl {\n");
    for n in g.nodes() {
        let shape = if n.kind.is_doc() { "circle" } else { "box" };
        let _ = writeln!(
            out,
            "  n{} [shape={shape}, label=\"{}\"];",
            n.index,
            escape(&label(g, n.index))
        );
    }
    for e in g.edges() {
        let mut attrs = vec![format!("weight={}", e.weight)];
        if e.kind == EdgeKind::ArgumentArgument {
            let words: Vec<&str> = g
                .semantic()
                .get(e.a, e.b)
                .iter()
                .map(|p| p.word.as_str())
                .collect();
            attrs.push(format!("label=\"{}\"", escape(&words.join(", "))));
        } else if e.kind == EdgeKind::SentenceSentence || e.kind == EdgeKind::QuestionSentence {
            attrs.push("style=dashed".into());
        }
        let _ = writeln!(out, "  n{} -- n{} [{}];", e.a, e.b, attrs.join(", "));
    }
    out.push_str("}\n");
    out
}

/// JSON with the same shape as the in-memory graph.
pub fn export_structured(g: &HeteroGraph) -> String {
    serde_json::to_string_pretty(g).expect("graph serializes")
}

pub fn import_structured(text: &str) -> Result<HeteroGraph, ExportError> {
    Ok(serde_json::from_str(text)?)
}
