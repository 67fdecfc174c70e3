//! Semantic-role-labeling graph reasoning for multi-hop question answering.
//!
//! The pipeline selects two paragraphs, builds a heterogeneous graph of
//! sentences and SRL arguments, runs a two-layer GCN over it, walks a
//! supporting-fact chain with beam search and extracts the answer.

pub mod answer;
pub mod cli;
pub mod data;
pub mod embed;
pub mod gcn;
pub mod graph;
pub mod nn;
pub mod select;
pub mod sf_chain;
pub mod synth;
pub mod train;

#[cfg(test)]
mod testutil;
