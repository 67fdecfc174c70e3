use crate::data::QAInstance;
use crate::graph::HeteroGraph;
use crate::sf_chain::gold_path;

/// Whether the gold supporting facts form a chain from the question of at
/// most `max_hops` sentences in the sentence-level graph.
pub fn is_covered(g: &HeteroGraph, inst: &QAInstance, max_hops: usize) -> bool {
    let gold = inst.gold_sentence_refs();
    if gold.len() != inst.supporting_facts.len() {
        return false;
    }
    gold_path(g, &gold).is_ok_and(|p| p.len() <= max_hops + 1)
}

/// Fraction of covered instances; 0 for an empty set.
pub fn graph_coverage<'a>(
    items: impl IntoIterator<Item = (&'a HeteroGraph, &'a QAInstance)>,
    max_hops: usize,
) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for (g, inst) in items {
        n += 1;
        hit += usize::from(is_covered(g, inst, max_hops));
    }
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}
