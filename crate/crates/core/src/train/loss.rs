//! Per-instance forward and reverse passes through encoder, GCN, RNN and heads.

use ndarray::{s, Array1, Array2};
use rayon::prelude::*;

use super::{Hyper, ModelParams, TrainError};
use crate::answer::{
    answer_losses, locate_answer, span_backward, span_logits, token_arg_map,
    token_arg_map_backward, token_arguments, type_logits, SpanCache,
};
use crate::data::{AnswerType, Example, QAInstance};
use crate::embed::{summary_features, token_features, VocabEmbeddings};
use crate::gcn::{assemble_features, gcn_backward, gcn_forward, GraphEmbeddings, NormAdjacency};
use crate::graph::{build_graph, GraphInput, HeteroGraph};
use crate::nn::{Mlp2Cache, Parameters};
use crate::sf_chain::{candidate_reps, gold_path, sf_backward, sf_forward};

/// `λ1·L_ans + λ2·L_SF + λ3·L_type`.
pub fn joint_loss(l_ans: f64, l_sf: f64, l_type: f64, h: &Hyper) -> f64 {
    h.lambda_ans * l_ans + h.lambda_sf * l_sf + h.lambda_type * l_type
}

/// Supervision available for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Gold {
    /// Teacher-forcing path; `None` when the gold chain is not in the graph.
    pub path: Option<Vec<usize>>,
    pub answer_type: AnswerType,
    /// Token span in the answer context; `None` when the text is absent.
    pub span: Option<(usize, usize)>,
}

/// An instance with everything that does not depend on trainable weights
/// computed once: graph, node features and encoder inputs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub instance: QAInstance,
    pub paragraphs: [usize; 2],
    pub graph: HeteroGraph,
    pub adj: NormAdjacency,
    pub features: Array2<f64>,
    /// Summary features of (question, node tokens) per doc node.
    pub doc_summary: Array2<f64>,
    /// Summary features of (question, whole answer context).
    pub type_features: Array1<f64>,
    pub token_features: Array2<f64>,
    pub token_args: Vec<Option<usize>>,
    pub context: Vec<String>,
    pub owner: Vec<(usize, usize)>,
    pub gold: Gold,
}

/// Build the graph over `paragraphs` (taken in context order) and precompute inputs.
pub fn prepare(
    ex: &Example,
    paragraphs: [usize; 2],
    v: &VocabEmbeddings,
    h: &Hyper,
) -> Result<Prepared, TrainError> {
    let inst = &ex.instance;
    let mut paragraphs = paragraphs;
    paragraphs.sort_unstable();
    let graph = build_graph(
        &GraphInput {
            instance: inst,
            paragraphs,
            srl: &ex.srl,
        },
        &h.graph_config(),
    );
    let adj = NormAdjacency::from_graph(&graph);
    let features = assemble_features(&graph, v, h.feature_flags());
    let dc = graph.doc_count();
    let flen = crate::embed::summary_feature_len(v.dim());
    let mut doc_summary = Array2::zeros((dc, flen));
    for n in &graph.nodes()[..dc] {
        let f = summary_features(v, &inst.question, &n.tokens).map_err(|e| TrainError::at(&inst.id, e))?;
        doc_summary.row_mut(n.index).assign(&f);
    }
    let (context, owner) = graph.answer_context();
    let type_features =
        summary_features(v, &inst.question, &context).map_err(|e| TrainError::at(&inst.id, e))?;
    let token_features = token_features(v, &context).map_err(|e| TrainError::at(&inst.id, e))?;
    let token_args = token_arguments(&graph);

    let gold_refs = inst.gold_sentence_refs();
    let path = gold_path(&graph, &gold_refs)
        .ok()
        .filter(|p| gold_refs.len() == inst.supporting_facts.len() && p.len() <= h.max_hops + 1);
    let gold_nodes: Vec<usize> = gold_refs.iter().filter_map(|&r| graph.doc_node(r)).collect();
    let answer_type = inst.answer.kind();
    let span = match answer_type {
        AnswerType::Span => {
            let answer: Vec<String> = inst.answer.text().split_whitespace().map(String::from).collect();
            locate_answer(&context, &answer, |i| gold_nodes.contains(&owner[i].0))
        }
        _ => None,
    };
    Ok(Prepared {
        instance: inst.clone(),
        paragraphs,
        graph,
        adj,
        features,
        doc_summary,
        type_features,
        token_features,
        token_args,
        context,
        owner,
        gold: Gold {
            path,
            answer_type,
            span,
        },
    })
}

/// Forward activations for one instance.
#[derive(Debug, Clone)]
pub struct Forward {
    gcn: Option<GraphEmbeddings>,
    /// Every node's GCN row (zeros without the graph).
    pub g_rows: Array2<f64>,
    pub summaries: Array2<f64>,
    pub reps: Array2<f64>,
    pub type_summary: Array1<f64>,
    pub type_logits: Array1<f64>,
    type_cache: Mlp2Cache,
    pub token_reps: Array2<f64>,
    pub start: Array1<f64>,
    pub end: Array1<f64>,
    span_cache: SpanCache,
}

pub fn forward(p: &ModelParams, prep: &Prepared, h: &Hyper) -> Result<Forward, TrainError> {
    let id = &prep.instance.id;
    let n = prep.graph.node_count();
    let dc = prep.graph.doc_count();
    let (gcn, g_rows) = if h.use_graph {
        let out = gcn_forward(&prep.adj, prep.features.view(), &p.gcn, dc)
            .map_err(|e| TrainError::at(id, e))?;
        let rows = out.g.clone();
        (Some(out), rows)
    } else {
        (None, Array2::zeros((n, p.gcn.output_dim())))
    };
    let summaries = p.encoder.summary.forward_rows(prep.doc_summary.view()).mapv(f64::tanh);
    let reps = candidate_reps(g_rows.slice(s![..dc, ..]), summaries.view());
    let type_summary = p.encoder.project_summary(prep.type_features.view());
    let (type_logits, type_cache) = type_logits(&p.heads, type_summary.view());
    let token_reps = p.encoder.project_tokens(prep.token_features.view());
    let arg_rows = token_arg_map(&prep.token_args, g_rows.view());
    let (start, end, span_cache) = span_logits(&p.heads, token_reps.view(), arg_rows.view())
        .map_err(|e| TrainError::at(id, e))?;
    Ok(Forward {
        gcn,
        g_rows,
        summaries,
        reps,
        type_summary,
        type_logits,
        type_cache,
        token_reps,
        start,
        end,
        span_cache,
    })
}

/// Unweighted loss components of one instance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub l_ans: f64,
    pub l_sf: f64,
    pub l_type: f64,
    pub total: f64,
    /// No teacher-forcing path, so `l_sf` is zero.
    pub sf_skipped: bool,
}

/// Loss of one instance; accumulates `scale ·` its gradient into `grad`.
pub fn instance_gradients(
    p: &ModelParams,
    prep: &Prepared,
    h: &Hyper,
    scale: f64,
    grad: &mut ModelParams,
) -> Result<LossParts, TrainError> {
    let id = &prep.instance.id;
    let fwd = forward(p, prep, h)?;
    let dc = prep.graph.doc_count();
    let f2 = p.gcn.output_dim();

    let adj = prep.graph.doc_adjacency();
    let tf = match &prep.gold.path {
        Some(path) => Some(sf_forward(adj, fwd.reps.view(), &p.rnn, path).map_err(|e| TrainError::at(id, e))?),
        None => None,
    };
    let l_sf = tf.as_ref().map_or(0.0, |t| t.loss);
    let losses = answer_losses(
        fwd.type_logits.view(),
        prep.gold.answer_type,
        fwd.start.view(),
        fwd.end.view(),
        prep.gold.span,
    )
    .map_err(|e| TrainError::at(id, e))?;
    let parts = LossParts {
        l_ans: losses.l_ans,
        l_sf,
        l_type: losses.l_type,
        total: joint_loss(losses.l_ans, l_sf, losses.l_type, h),
        sf_skipped: tf.is_none(),
    };

    let mut d_rows = Array2::zeros(fwd.g_rows.dim());
    // supporting-fact chain
    if let Some(tf) = &tf {
        let d_reps = sf_backward(fwd.reps.view(), &p.rnn, tf, scale * h.lambda_sf, &mut grad.rnn);
        d_rows
            .slice_mut(s![..dc, ..])
            .scaled_add(1.0, &d_reps.slice(s![.., ..f2]));
        let d_sum = d_reps.slice(s![.., f2..]).to_owned() * fwd.summaries.mapv(|y| 1.0 - y * y);
        p.encoder
            .summary
            .backward_rows(prep.doc_summary.view(), d_sum.view(), &mut grad.encoder.summary);
    }
    // answer type
    let d_type = &losses.d_type * (scale * h.lambda_type);
    let d_ts = p.heads.type_mlp.backward(
        fwd.type_summary.view(),
        &fwd.type_cache,
        d_type.view(),
        &mut grad.heads.type_mlp,
    );
    p.encoder.backward_summary(
        prep.type_features.view(),
        fwd.type_summary.view(),
        d_ts.view(),
        &mut grad.encoder,
    );
    // span
    let w = scale * h.lambda_ans;
    let (d_tok, d_arg) = span_backward(
        &p.heads,
        &fwd.span_cache,
        (&losses.d_start * w).view(),
        (&losses.d_end * w).view(),
        &mut grad.heads,
    );
    p.encoder.backward_tokens(
        prep.token_features.view(),
        &fwd.token_reps,
        d_tok.view(),
        &mut grad.encoder,
    );
    token_arg_map_backward(&prep.token_args, d_arg.view(), &mut d_rows);
    // graph
    if let Some(g) = &fwd.gcn {
        let gg = gcn_backward(&prep.adj, &p.gcn, g, d_rows.view(), None).map_err(|e| TrainError::at(id, e))?;
        grad.gcn.w1 += &gg.w1;
        grad.gcn.w2 += &gg.w2;
    }
    Ok(parts)
}

/// Mean joint loss over `batch` and its gradient. Instances fan out in
/// parallel; their gradients are summed in batch order.
pub fn compute_gradients(
    p: &ModelParams,
    batch: &[&Prepared],
    h: &Hyper,
) -> Result<(f64, ModelParams), TrainError> {
    let dims = h.dims();
    let scale = 1.0 / batch.len().max(1) as f64;
    let per: Vec<(LossParts, ModelParams)> = batch
        .par_iter()
        .map(|prep| {
            let mut g = ModelParams::zeros(&dims);
            let parts = instance_gradients(p, prep, h, scale, &mut g)?;
            Ok((parts, g))
        })
        .collect::<Result<_, TrainError>>()?;
    let mut total = ModelParams::zeros(&dims);
    let mut loss = 0.0;
    for ((parts, g), prep) in per.iter().zip(batch) {
        if !parts.total.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                id: prep.instance.id.clone(),
                epoch: 0,
            });
        }
        loss += parts.total * scale;
        super::add_scaled(&mut total, g, 1.0);
    }
    debug_assert!(total.all_finite());
    Ok((loss, total))
}

