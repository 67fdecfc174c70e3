use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::answer::HeadParams;
use crate::embed::EncoderParams;
use crate::gcn::GcnParams;
use crate::nn::Parameters;
use crate::select::{SelectorModel, SelectorParams};
use crate::sf_chain::RnnParams;

/// Layer widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Word-vector dimension `D`.
    pub embed: usize,
    pub d_model: usize,
    pub gcn_hidden: usize,
    pub gcn_out: usize,
    pub rnn_hidden: usize,
    pub head_hidden: usize,
    pub selector_hidden: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            embed: crate::embed::DEFAULT_DIM,
            d_model: 64,
            gcn_hidden: 128,
            gcn_out: 64,
            rnn_hidden: 64,
            head_hidden: 64,
            selector_hidden: 32,
        }
    }
}

/// Everything trained jointly in the second stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub gcn: GcnParams,
    pub rnn: RnnParams,
    pub heads: HeadParams,
}

impl ModelParams {
    pub fn new(dims: &Dims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParams {
            encoder: EncoderParams::new(&mut rng, dims.embed, dims.d_model),
            gcn: GcnParams::new(&mut rng, 2 * dims.embed, dims.gcn_hidden, dims.gcn_out),
            rnn: RnnParams::new(&mut rng, dims.rnn_hidden, dims.gcn_out + dims.d_model),
            heads: HeadParams::new(&mut rng, dims.d_model, dims.gcn_out, dims.head_hidden),
        }
    }

    pub fn zeros(dims: &Dims) -> Self {
        ModelParams {
            encoder: EncoderParams::zeros(dims.embed, dims.d_model),
            gcn: GcnParams::zeros(2 * dims.embed, dims.gcn_hidden, dims.gcn_out),
            rnn: RnnParams::zeros(dims.rnn_hidden, dims.gcn_out + dims.d_model),
            heads: HeadParams::zeros(dims.d_model, dims.gcn_out, dims.head_hidden),
        }
    }
}

impl Parameters for ModelParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.encoder.visit_named("encoder", f);
        self.gcn.visit_named("gcn", f);
        self.rnn.visit_named("rnn", f);
        self.heads.visit_named("heads", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.encoder.visit_named_mut("encoder", f);
        self.gcn.visit_named_mut("gcn", f);
        self.rnn.visit_named_mut("rnn", f);
        self.heads.visit_named_mut("heads", f);
    }
}

pub fn new_selector(dims: &Dims, seed: u64) -> SelectorModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SelectorModel {
        encoder: EncoderParams::new(&mut rng, dims.embed, dims.d_model),
        scorer: SelectorParams::new(&mut rng, dims.d_model, dims.selector_hidden),
    }
}

pub fn zero_selector(dims: &Dims) -> SelectorModel {
    SelectorModel {
        encoder: EncoderParams::zeros(dims.embed, dims.d_model),
        scorer: SelectorParams::zeros(dims.d_model, dims.selector_hidden),
    }
}

/// `dst += scale · src`, tensor by tensor.
pub fn add_scaled<P: Parameters>(dst: &mut P, src: &P, scale: f64) {
    let flat = src.flatten();
    let mut at = 0;
    dst.visit_mut(&mut |_, _, s| {
        for v in s.iter_mut() {
            *v += scale * flat[at];
            at += 1;
        }
    });
}
