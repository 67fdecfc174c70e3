//! Joint objective, gradients, optimizer, metrics and the two training stages.

mod adam;
mod checkpoint;
mod coverage;
mod loss;
mod metrics;
mod model;
mod pipeline;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState, ShapeMismatch};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, write_atomic, Checkpoint, CheckpointError, TensorEntry,
    FORMAT_VERSION,
};
pub use coverage::{graph_coverage, is_covered};
pub use loss::{
    compute_gradients, forward, instance_gradients, joint_loss, prepare, Gold, LossParts, Prepared,
};
pub use metrics::{
    answer_metrics, joint_metrics, normalize_answer, score_instance, sf_metrics, InstanceScores,
    MetricsReport, Prf,
};
pub(crate) use pipeline::{gold_coverage, predict_inputs, prepare_gold};
pub use model::{add_scaled, new_selector, zero_selector, Dims, ModelParams};
pub use pipeline::{
    evaluate, predict, predict_all, prepare_selected, selector_gradients, selector_instance,
    train, train_joint, train_selector, EpochRecord, Prediction, SelectorInstance, SelectorRecord,
    TrainOutcome,
};

use crate::gcn::FeatureFlags;
use crate::graph::GraphConfig;
use crate::select::SelectLimits;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite loss on {id} in epoch {epoch}")]
    NonFiniteLoss { id: String, epoch: usize },
    #[error("empty training set")]
    EmptyDataset,
    #[error("{id}: {source}")]
    Instance {
        id: String,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error(transparent)]
    Shape(#[from] ShapeMismatch),
}

impl TrainError {
    pub(crate) fn at(id: &str, e: impl std::error::Error + Send + Sync + 'static) -> Self {
        TrainError::Instance {
            id: id.to_string(),
            source: Box::new(e),
        }
    }
}

/// Every tunable setting of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    pub lambda_ans: f64,
    pub lambda_sf: f64,
    pub lambda_type: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub epochs: usize,
    pub selector_epochs: usize,
    pub batch_size: usize,
    pub beam_width: usize,
    pub max_hops: usize,
    pub max_span: usize,
    pub window: usize,
    pub pmi_floor: f64,
    pub max_paragraph_tokens: usize,
    pub max_query_tokens: usize,
    pub embed_dim: usize,
    pub d_model: usize,
    pub gcn_hidden: usize,
    pub gcn_out: usize,
    pub rnn_hidden: usize,
    pub head_hidden: usize,
    pub selector_hidden: usize,
    pub use_graph: bool,
    pub use_arg_type: bool,
    pub use_semantic_edges: bool,
    pub joint_training: bool,
}

impl Default for Hyper {
    fn default() -> Self {
        let dims = Dims::default();
        Hyper {
            lambda_ans: 1.0,
            lambda_sf: 1.0,
            lambda_type: 1.0,
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            epochs: 20,
            selector_epochs: 10,
            batch_size: 8,
            beam_width: crate::sf_chain::DEFAULT_BEAM_WIDTH,
            max_hops: crate::sf_chain::DEFAULT_MAX_HOPS,
            max_span: crate::answer::DEFAULT_MAX_SPAN,
            window: crate::graph::DEFAULT_PMI_WINDOW,
            pmi_floor: crate::graph::DEFAULT_PMI_FLOOR,
            max_paragraph_tokens: crate::select::DEFAULT_MAX_PARAGRAPH_TOKENS,
            max_query_tokens: crate::select::DEFAULT_MAX_QUERY_TOKENS,
            embed_dim: dims.embed,
            d_model: dims.d_model,
            gcn_hidden: dims.gcn_hidden,
            gcn_out: dims.gcn_out,
            rnn_hidden: dims.rnn_hidden,
            head_hidden: dims.head_hidden,
            selector_hidden: dims.selector_hidden,
            use_graph: true,
            use_arg_type: true,
            use_semantic_edges: true,
            joint_training: true,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<(), String> {
        let lambdas = [self.lambda_ans, self.lambda_sf, self.lambda_type];
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err("loss weights must be finite and non-negative".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err("lr must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err("betas must lie in [0, 1)".into());
        }
        if !(self.eps_adam > 0.0) {
            return Err("eps_adam must be positive".into());
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("beam_width", self.beam_width),
            ("max_hops", self.max_hops),
            ("max_span", self.max_span),
            ("embed_dim", self.embed_dim),
            ("d_model", self.d_model),
            ("gcn_hidden", self.gcn_hidden),
            ("gcn_out", self.gcn_out),
            ("rnn_hidden", self.rnn_hidden),
            ("head_hidden", self.head_hidden),
            ("selector_hidden", self.selector_hidden),
            ("max_paragraph_tokens", self.max_paragraph_tokens),
            ("max_query_tokens", self.max_query_tokens),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(format!("{name} must be at least 1"));
        }
        if self.window < 2 {
            return Err("window must be at least 2".into());
        }
        if !(self.pmi_floor > 0.0 && self.pmi_floor <= 1.0) {
            return Err("pmi_floor must lie in (0, 1]".into());
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        Dims {
            embed: self.embed_dim,
            d_model: self.d_model,
            gcn_hidden: self.gcn_hidden,
            gcn_out: self.gcn_out,
            rnn_hidden: self.rnn_hidden,
            head_hidden: self.head_hidden,
            selector_hidden: self.selector_hidden,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps_adam,
        }
    }

    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig {
            window: self.window,
            pmi_floor: self.pmi_floor,
        }
    }

    pub fn feature_flags(&self) -> FeatureFlags {
        FeatureFlags {
            use_arg_type: self.use_arg_type,
            use_semantic_edges: self.use_semantic_edges,
        }
    }

    pub fn select_limits(&self) -> SelectLimits {
        SelectLimits {
            max_paragraph_tokens: self.max_paragraph_tokens,
            max_query_tokens: self.max_query_tokens,
        }
    }
}
