//! Word vectors, phrase embeddings, and the deterministic sequence encoder.
//!
//! The encoder has two projections sharing one parameter struct:
//!
//! * sequence summary of a (left, right) pair. Feature layout, length `2·D + 3`:
//!   `[0, D)` mean vector of `left`; `[D, 2D)` mean vector of `right` (zeros when
//!   empty); `2D` fraction of `right` tokens that also occur in `left`;
//!   `2D + 1` = `|right| / (|left| + |right|)`; `2D + 2` = `min / max` of the two
//!   lengths (0 when `right` is empty). Output `tanh(features · W + b)`.
//! * per-token encoding. Feature layout, length `D + 1`: `[0, D)` the token vector,
//!   `D` = `position / length`. Output `tanh(features · W' + b')` per token.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{outer_add, Dense};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot embed an empty phrase")]
    EmptyPhrase,
    #[error("summary needs a non-empty left sequence")]
    EmptyLeftSequence,
    #[error("cannot encode an empty token sequence")]
    EmptySequence,
    #[error("word-vector file line {line}: {msg}")]
    BadVectorLine { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const DEFAULT_DIM: usize = 300;
pub const DEFAULT_OOV_SEED: u64 = 0x5e_ed0f_0b0e;

/// Pre-trained vectors plus a hashed fallback for unknown tokens.
#[derive(Debug, Clone)]
pub struct VocabEmbeddings {
    dim: usize,
    table: HashMap<String, Array1<f64>>,
    oov_seed: u64,
}

impl VocabEmbeddings {
    /// Empty table: every lookup falls back to the hashed vectors.
    pub fn hashed(dim: usize, oov_seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        VocabEmbeddings {
            dim,
            table: HashMap::new(),
            oov_seed,
        }
    }

    /// Read the plain-text format: `token v1 v2 ... vD` per line.
    pub fn from_text(r: impl BufRead, dim: usize, oov_seed: u64) -> Result<Self, EmbedError> {
        let mut out = Self::hashed(dim, oov_seed);
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let vals = parts
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| EmbedError::BadVectorLine {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            if vals.len() != dim {
                return Err(EmbedError::BadVectorLine {
                    line: i + 1,
                    msg: format!("expected {dim} values, found {}", vals.len()),
                });
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(EmbedError::BadVectorLine {
                    line: i + 1,
                    msg: "non-finite value".into(),
                });
            }
            out.table.insert(token.to_string(), Array1::from(vals));
        }
        Ok(out)
    }

    pub fn insert(&mut self, token: &str, v: Array1<f64>) {
        assert_eq!(v.len(), self.dim);
        self.table.insert(token.to_string(), v);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn oov_seed(&self) -> u64 {
        self.oov_seed
    }

    pub fn contains(&self, token: &str) -> bool {
        self.table.contains_key(token)
    }

    pub fn lookup(&self, token: &str) -> Array1<f64> {
        match self.table.get(token) {
            Some(v) => v.clone(),
            None => self.oov_vector(token),
        }
    }

    fn oov_vector(&self, token: &str) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()) ^ self.oov_seed);
        let v = Array1::from_shape_fn(self.dim, |_| rng.sample::<f64, _>(StandardNormal));
        let norm = v.dot(&v).sqrt();
        v / norm
    }

    /// Mean of token vectors; the zero vector for an empty list.
    pub fn mean_vector<S: AsRef<str>>(&self, tokens: &[S]) -> Array1<f64> {
        let mut acc = Array1::zeros(self.dim);
        for t in tokens {
            acc += &self.lookup(t.as_ref());
        }
        if !tokens.is_empty() {
            acc /= tokens.len() as f64;
        }
        acc
    }

    pub fn embed_phrase<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Array1<f64>, EmbedError> {
        if tokens.is_empty() {
            return Err(EmbedError::EmptyPhrase);
        }
        Ok(self.mean_vector(tokens))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Trainable projections standing in for a pretrained encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub summary: Dense,
    pub token: Dense,
}

impl EncoderParams {
    pub fn new(rng: &mut impl Rng, embed_dim: usize, d_model: usize) -> Self {
        EncoderParams {
            summary: Dense::new(rng, summary_feature_len(embed_dim), d_model),
            token: Dense::new(rng, embed_dim + 1, d_model),
        }
    }

    pub fn zeros(embed_dim: usize, d_model: usize) -> Self {
        EncoderParams {
            summary: Dense::zeros(summary_feature_len(embed_dim), d_model),
            token: Dense::zeros(embed_dim + 1, d_model),
        }
    }

    pub fn d_model(&self) -> usize {
        self.summary.output_dim()
    }

    /// `tanh(features · W + b)`.
    pub fn project_summary(&self, features: ArrayView1<f64>) -> Array1<f64> {
        self.summary.forward(features).mapv(f64::tanh)
    }

    /// Accumulate gradients for a summary given its output and upstream gradient.
    pub fn backward_summary(
        &self,
        features: ArrayView1<f64>,
        output: ArrayView1<f64>,
        dout: ArrayView1<f64>,
        grad: &mut EncoderParams,
    ) {
        let dpre = &dout * &output.mapv(|y| 1.0 - y * y);
        outer_add(&mut grad.summary.w, features, dpre.view());
        grad.summary.b += &dpre;
    }

    pub fn project_tokens(&self, features: ArrayView2<f64>) -> Array2<f64> {
        self.token.forward_rows(features).mapv(f64::tanh)
    }

    pub fn backward_tokens(
        &self,
        features: ArrayView2<f64>,
        output: &Array2<f64>,
        dout: ArrayView2<f64>,
        grad: &mut EncoderParams,
    ) {
        let dpre = &dout * &output.mapv(|y| 1.0 - y * y);
        self.token.backward_rows(features, dpre.view(), &mut grad.token);
    }

    pub(crate) fn visit_named(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &[usize], &[f64]),
    ) {
        self.summary.visit_named(&format!("{prefix}.summary"), f);
        self.token.visit_named(&format!("{prefix}.token"), f);
    }

    pub(crate) fn visit_named_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &[usize], &mut [f64]),
    ) {
        self.summary.visit_named_mut(&format!("{prefix}.summary"), f);
        self.token.visit_named_mut(&format!("{prefix}.token"), f);
    }
}

pub fn summary_feature_len(embed_dim: usize) -> usize {
    2 * embed_dim + 3
}

/// Fixed (parameter-free) summary features of a (left, right) pair.
pub fn summary_features<S: AsRef<str>, T: AsRef<str>>(
    v: &VocabEmbeddings,
    left: &[S],
    right: &[T],
) -> Result<Array1<f64>, EmbedError> {
    if left.is_empty() {
        return Err(EmbedError::EmptyLeftSequence);
    }
    let d = v.dim();
    let mut f = Array1::zeros(summary_feature_len(d));
    f.slice_mut(ndarray::s![..d]).assign(&v.mean_vector(left));
    if !right.is_empty() {
        f.slice_mut(ndarray::s![d..2 * d]).assign(&v.mean_vector(right));
        let left_set: HashSet<&str> = left.iter().map(AsRef::as_ref).collect();
        let hits = right
            .iter()
            .filter(|t| left_set.contains(t.as_ref()))
            .count();
        let (l, r) = (left.len() as f64, right.len() as f64);
        f[2 * d] = hits as f64 / r;
        f[2 * d + 1] = r / (l + r);
        f[2 * d + 2] = l.min(r) / l.max(r);
    }
    Ok(f)
}

pub fn summarize_sequence<S: AsRef<str>, T: AsRef<str>>(
    enc: &EncoderParams,
    v: &VocabEmbeddings,
    left: &[S],
    right: &[T],
) -> Result<Array1<f64>, EmbedError> {
    Ok(enc.project_summary(summary_features(v, left, right)?.view()))
}

/// Per-token features `[vector; position / length]`, one row per token.
pub fn token_features<S: AsRef<str>>(
    v: &VocabEmbeddings,
    tokens: &[S],
) -> Result<Array2<f64>, EmbedError> {
    if tokens.is_empty() {
        return Err(EmbedError::EmptySequence);
    }
    let d = v.dim();
    let n = tokens.len();
    let mut f = Array2::zeros((n, d + 1));
    for (i, t) in tokens.iter().enumerate() {
        f.row_mut(i).slice_mut(ndarray::s![..d]).assign(&v.lookup(t.as_ref()));
        f[[i, d]] = i as f64 / n as f64;
    }
    Ok(f)
}

pub fn encode_tokens<S: AsRef<str>>(
    enc: &EncoderParams,
    v: &VocabEmbeddings,
    tokens: &[S],
) -> Result<Array2<f64>, EmbedError> {
    Ok(enc.project_tokens(token_features(v, tokens)?.view()))
}
