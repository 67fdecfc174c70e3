//! Two-round paragraph selection.

use ndarray::{Array1, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{truncate_paragraph, Paragraph, QAInstance};
use crate::embed::{summary_features, EmbedError, EncoderParams, VocabEmbeddings};
use crate::nn::{Mlp2, Mlp2Cache};

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("paragraph selection needs at least two paragraphs, found {0}")]
    TooFewParagraphs(usize),
    #[error("selector mask must mark exactly two of at least two scores: {0}")]
    BadMask(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

pub const DEFAULT_MAX_PARAGRAPH_TOKENS: usize = 256;
pub const DEFAULT_MAX_QUERY_TOKENS: usize = 384;

/// Relevance scorer: `W_b·relu(W_a·summary + b_a) + b_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorParams {
    pub mlp: Mlp2,
}

impl SelectorParams {
    pub fn new(rng: &mut impl Rng, d_model: usize, hidden: usize) -> Self {
        SelectorParams {
            mlp: Mlp2::new(rng, d_model, hidden, 1),
        }
    }

    pub fn zeros(d_model: usize, hidden: usize) -> Self {
        SelectorParams {
            mlp: Mlp2::zeros(d_model, hidden, 1),
        }
    }

    pub fn score_summary(&self, summary: ArrayView1<f64>) -> (f64, Mlp2Cache) {
        let (y, cache) = self.mlp.forward(summary);
        (y[0], cache)
    }
}

/// Selector weights together with the encoder copy they read summaries from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorModel {
    pub encoder: EncoderParams,
    pub scorer: SelectorParams,
}

impl SelectorModel {
    pub(crate) fn visit_named(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.encoder.visit_named("selector.encoder", f);
        self.scorer.mlp.visit_named("selector.mlp", f);
    }

    pub(crate) fn visit_named_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.encoder.visit_named_mut("selector.encoder", f);
        self.scorer.mlp.visit_named_mut("selector.mlp", f);
    }
}

impl crate::nn::Parameters for SelectorModel {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.visit_named(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.visit_named_mut(f);
    }
}

/// Bounds applied to selector inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectLimits {
    pub max_paragraph_tokens: usize,
    pub max_query_tokens: usize,
}

impl Default for SelectLimits {
    fn default() -> Self {
        SelectLimits {
            max_paragraph_tokens: DEFAULT_MAX_PARAGRAPH_TOKENS,
            max_query_tokens: DEFAULT_MAX_QUERY_TOKENS,
        }
    }
}

pub fn score_paragraph(
    sel: &SelectorParams,
    enc: &EncoderParams,
    v: &VocabEmbeddings,
    q_tokens: &[String],
    para: &Paragraph,
) -> Result<f64, SelectError> {
    let f = summary_features(v, q_tokens, &para.flat_tokens())?;
    let s = enc.project_summary(f.view());
    Ok(sel.score_summary(s.view()).0)
}

/// Index of the maximum; ties go to the smallest index.
pub fn argmax(xs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in xs.iter().enumerate() {
        match best {
            Some(b) if x <= xs[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// `q ++ paragraph tokens`, capped at `cap` tokens with the question first.
pub fn extend_query(q: &[String], para: &Paragraph, cap: usize) -> Vec<String> {
    let mut out = q.to_vec();
    out.extend(para.flat_tokens());
    out.truncate(cap);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub first: usize,
    pub second: usize,
    pub query: Vec<String>,
    pub round1_scores: Vec<f64>,
    pub round2_scores: Vec<f64>,
}

/// Round one picks the best paragraph for `q`; round two rescores the rest
/// against `q` extended with that paragraph.
pub fn select_two_rounds(
    model: &SelectorModel,
    v: &VocabEmbeddings,
    inst: &QAInstance,
    limits: SelectLimits,
) -> Result<Selection, SelectError> {
    let n = inst.contexts.len();
    if n < 2 {
        return Err(SelectError::TooFewParagraphs(n));
    }
    let paras: Vec<Paragraph> = inst
        .contexts
        .iter()
        .map(|p| truncate_paragraph(p, limits.max_paragraph_tokens))
        .collect();
    let round1 = paras
        .iter()
        .map(|p| score_paragraph(&model.scorer, &model.encoder, v, &inst.question, p))
        .collect::<Result<Vec<_>, _>>()?;
    let first = argmax(&round1).expect("non-empty");
    let query = extend_query(&inst.question, &paras[first], limits.max_query_tokens);
    let mut round2 = vec![f64::NEG_INFINITY; n];
    for (i, p) in paras.iter().enumerate() {
        if i != first {
            round2[i] = score_paragraph(&model.scorer, &model.encoder, v, &query, p)?;
        }
    }
    let second = argmax(&round2).expect("non-empty");
    Ok(Selection {
        first,
        second,
        query,
        round1_scores: round1,
        round2_scores: round2,
    })
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy of `sigmoid(scores)` against 0/1 labels, with gradient.
pub fn bce_mean(scores: &[f64], labels: &[bool]) -> (f64, Array1<f64>) {
    let n = scores.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array1::zeros(scores.len());
    for (i, (&s, &y)) in scores.iter().zip(labels).enumerate() {
        loss += if y { softplus(-s) } else { softplus(s) };
        grad[i] = (sigmoid(s) - if y { 1.0 } else { 0.0 }) / n;
    }
    (loss / n, grad)
}

pub fn selector_loss(scores: &[f64], gold_mask: &[bool]) -> Result<f64, SelectError> {
    if scores.len() < 2 || scores.len() != gold_mask.len() {
        return Err(SelectError::BadMask(format!(
            "{} scores, {} labels",
            scores.len(),
            gold_mask.len()
        )));
    }
    let ones = gold_mask.iter().filter(|&&b| b).count();
    if ones != 2 {
        return Err(SelectError::BadMask(format!("{ones} gold paragraphs")));
    }
    Ok(bce_mean(scores, gold_mask).0)
}
