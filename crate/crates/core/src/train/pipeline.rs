//! Training stages, prediction and evaluation.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    adam_step, compute_gradients, forward, graph_coverage, instance_gradients, new_selector,
    prepare, score_instance, zero_selector, AdamState, Hyper, InstanceScores, MetricsReport,
    ModelParams, Prepared, TrainError,
};
use crate::answer::{predict_answer, AnswerPrediction};
use crate::data::{truncate_paragraph, Example, Paragraph};
use crate::embed::{summary_features, VocabEmbeddings};
use crate::nn::{softmax, Parameters};
use crate::select::{argmax, bce_mean, extend_query, select_two_rounds, SelectorModel};
use crate::sf_chain::{beam_search, sf_from_path, ReasoningPath};

const SELECTOR_SEED_SALT: u64 = 0x5e_1ec7;
const SHUFFLE_SEED_SALT: u64 = 0x5_4ff1e;

/// Selector inputs for one instance, precomputed for both gold-first orders.
#[derive(Debug, Clone)]
pub struct SelectorInstance {
    pub id: String,
    pub round1: Array2<f64>,
    pub labels: Vec<bool>,
    pub gold: [usize; 2],
    /// Round-two features when gold `k` is picked first, over `round2_index[k]`.
    round2: [Array2<f64>; 2],
    round2_index: [Vec<usize>; 2],
}

fn stack(rows: Vec<Array1<f64>>, width: usize) -> Array2<f64> {
    let mut m = Array2::zeros((rows.len(), width));
    for (i, r) in rows.into_iter().enumerate() {
        m.row_mut(i).assign(&r);
    }
    m
}

/// `None` when the instance does not name exactly two gold paragraphs.
pub fn selector_instance(
    ex: &Example,
    v: &VocabEmbeddings,
    h: &Hyper,
) -> Result<Option<SelectorInstance>, TrainError> {
    let inst = &ex.instance;
    let Some((a, b)) = inst.gold_pair() else {
        return Ok(None);
    };
    let limits = h.select_limits();
    let width = crate::embed::summary_feature_len(v.dim());
    let paras: Vec<Paragraph> = inst
        .contexts
        .iter()
        .map(|p| truncate_paragraph(p, limits.max_paragraph_tokens))
        .collect();
    let feats = |q: &[String], idx: &[usize]| -> Result<Array2<f64>, TrainError> {
        let rows = idx
            .iter()
            .map(|&i| summary_features(v, q, &paras[i].flat_tokens()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| TrainError::at(&inst.id, e))?;
        Ok(stack(rows, width))
    };
    let all: Vec<usize> = (0..paras.len()).collect();
    let round1 = feats(&inst.question, &all)?;
    let mut round2 = Vec::new();
    let mut round2_index = Vec::new();
    for g in [a, b] {
        let q = extend_query(&inst.question, &paras[g], limits.max_query_tokens);
        let idx: Vec<usize> = all.iter().copied().filter(|&i| i != g).collect();
        round2.push(feats(&q, &idx)?);
        round2_index.push(idx);
    }
    let [r2a, r2b]: [Array2<f64>; 2] = round2.try_into().expect("two golds");
    let [ia, ib]: [Vec<usize>; 2] = round2_index.try_into().expect("two golds");
    Ok(Some(SelectorInstance {
        id: inst.id.clone(),
        round1,
        labels: all.iter().map(|&i| i == a || i == b).collect(),
        gold: [a, b],
        round2: [r2a, r2b],
        round2_index: [ia, ib],
    }))
}

fn selector_scores(
    m: &SelectorModel,
    f: ArrayView2<f64>,
) -> (Array1<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
    let s = m.encoder.summary.forward_rows(f).mapv(f64::tanh);
    let (y, pre, act) = m.scorer.mlp.forward_rows(s.view());
    (y.column(0).to_owned(), s, pre, act)
}

fn selector_backward(
    m: &SelectorModel,
    f: ArrayView2<f64>,
    cache: &(Array1<f64>, Array2<f64>, Array2<f64>, Array2<f64>),
    d_scores: &Array1<f64>,
    grad: &mut SelectorModel,
) {
    let (_, s, pre, act) = cache;
    let dy = d_scores.view().insert_axis(Axis(1));
    let ds = m
        .scorer
        .mlp
        .backward_rows(s.view(), pre, act, dy, &mut grad.scorer.mlp);
    let dpre = ds * s.mapv(|y| 1.0 - y * y);
    m.encoder
        .summary
        .backward_rows(f, dpre.view(), &mut grad.encoder.summary);
}

/// Round-one BCE over all paragraphs plus round-two BCE with the question
/// extended by the higher-scored gold paragraph. Accumulates `scale ·` grad.
pub fn selector_gradients(
    m: &SelectorModel,
    si: &SelectorInstance,
    scale: f64,
    grad: &mut SelectorModel,
) -> f64 {
    let c1 = selector_scores(m, si.round1.view());
    let (l1, d1) = bce_mean(c1.0.as_slice().expect("contiguous"), &si.labels);
    selector_backward(m, si.round1.view(), &c1, &(d1 * scale), grad);
    let [a, b] = si.gold;
    let k = if c1.0[b] > c1.0[a] { 1 } else { 0 };
    let other = si.gold[1 - k];
    let f2 = si.round2[k].view();
    let c2 = selector_scores(m, f2);
    let labels: Vec<bool> = si.round2_index[k].iter().map(|&i| i == other).collect();
    let (l2, d2) = bce_mean(c2.0.as_slice().expect("contiguous"), &labels);
    selector_backward(m, f2, &c2, &(d2 * scale), grad);
    l1 + l2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Fraction of training instances whose two selected paragraphs are the gold pair.
    pub train_accuracy: f64,
}

fn batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

fn selection_accuracy(m: &SelectorModel, sis: &[SelectorInstance]) -> f64 {
    if sis.is_empty() {
        return 0.0;
    }
    let hits = sis
        .par_iter()
        .map(|si| {
            let s1 = selector_scores(m, si.round1.view()).0;
            let first = argmax(s1.as_slice().expect("contiguous")).expect("non-empty");
            let Some(k) = si.gold.iter().position(|&g| g == first) else {
                return 0usize;
            };
            let s2 = selector_scores(m, si.round2[k].view()).0;
            let j = argmax(s2.as_slice().expect("contiguous")).expect("non-empty");
            usize::from(si.round2_index[k][j] == si.gold[1 - k])
        })
        .collect::<Vec<_>>();
    hits.iter().sum::<usize>() as f64 / sis.len() as f64
}

/// First stage: fit the paragraph selector on gold-paragraph labels.
pub fn train_selector(
    examples: &[Example],
    v: &VocabEmbeddings,
    h: &Hyper,
    seed: u64,
) -> Result<(SelectorModel, Vec<SelectorRecord>), TrainError> {
    let dims = h.dims();
    let mut model = new_selector(&dims, seed ^ SELECTOR_SEED_SALT);
    let sis: Vec<SelectorInstance> = examples
        .par_iter()
        .map(|ex| selector_instance(ex, v, h))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    if sis.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut st = AdamState::new(model.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SELECTOR_SEED_SALT ^ SHUFFLE_SEED_SALT);
    let mut history = Vec::new();
    for epoch in 1..=h.selector_epochs {
        let mut total = 0.0;
        for batch in batches(sis.len(), h.batch_size, &mut rng) {
            let scale = 1.0 / batch.len() as f64;
            let per: Vec<(f64, SelectorModel)> = batch
                .par_iter()
                .map(|&i| {
                    let mut g = zero_selector(&dims);
                    let l = selector_gradients(&model, &sis[i], scale, &mut g);
                    (l, g)
                })
                .collect();
            let mut grad = zero_selector(&dims);
            for ((l, g), &i) in per.iter().zip(&batch) {
                if !l.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        id: sis[i].id.clone(),
                        epoch,
                    });
                }
                total += l;
                super::add_scaled(&mut grad, g, 1.0);
            }
            adam_step(&mut model, &grad, &mut st, &h.adam(), None)?;
        }
        history.push(SelectorRecord {
            epoch,
            train_loss: total / sis.len() as f64,
            train_accuracy: selection_accuracy(&model, &sis),
        });
    }
    Ok((model, history))
}

/// Per-instance prediction with its explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub paragraphs: [usize; 2],
    pub answer: AnswerPrediction,
    pub supporting_facts: Vec<(String, usize)>,
    pub paths: Vec<ReasoningPath>,
    pub question_isolated: bool,
}

pub fn predict(p: &ModelParams, prep: &Prepared, h: &Hyper) -> Result<Prediction, TrainError> {
    let fwd = forward(p, prep, h)?;
    let type_dist = softmax(fwd.type_logits.view());
    let answer = predict_answer(
        type_dist.view(),
        fwd.start.view(),
        fwd.end.view(),
        h.max_span,
        &prep.context,
    );
    let beam = beam_search(
        prep.graph.doc_adjacency(),
        fwd.reps.view(),
        &p.rnn,
        h.beam_width,
        h.max_hops,
    )
    .map_err(|e| TrainError::at(&prep.instance.id, e))?;
    let sf = sf_from_path(&beam.best().nodes, &prep.graph, &prep.instance);
    Ok(Prediction {
        id: prep.instance.id.clone(),
        paragraphs: prep.paragraphs,
        answer,
        supporting_facts: sf.into_iter().collect(),
        paths: beam.paths,
        question_isolated: beam.question_isolated,
    })
}

/// Prepare an instance over the selector's two paragraphs.
pub fn prepare_selected(
    selector: &SelectorModel,
    ex: &Example,
    v: &VocabEmbeddings,
    h: &Hyper,
) -> Result<Prepared, TrainError> {
    let sel = select_two_rounds(selector, v, &ex.instance, h.select_limits())
        .map_err(|e| TrainError::at(&ex.instance.id, e))?;
    prepare(ex, [sel.first, sel.second], v, h)
}

fn gold_set(prep: &Prepared) -> BTreeSet<(String, usize)> {
    prep.instance.supporting_facts.iter().cloned().collect()
}

/// Scores, predictions and mean joint loss over prepared instances.
pub fn evaluate(
    p: &ModelParams,
    prepared: &[Prepared],
    h: &Hyper,
    coverage: f64,
) -> Result<(MetricsReport, Vec<Prediction>, f64), TrainError> {
    let dims = h.dims();
    let out: Vec<(Prediction, InstanceScores, f64)> = prepared
        .par_iter()
        .map(|prep| {
            let pred = predict(p, prep, h)?;
            let pred_sf: BTreeSet<_> = pred.supporting_facts.iter().cloned().collect();
            let scores = score_instance(
                &pred.answer.text,
                prep.instance.answer.text(),
                &pred_sf,
                &gold_set(prep),
            );
            let mut scratch = ModelParams::zeros(&dims);
            let loss = instance_gradients(p, prep, h, 1.0, &mut scratch)?.total;
            Ok((pred, scores, loss))
        })
        .collect::<Result<_, TrainError>>()?;
    let scores: Vec<InstanceScores> = out.iter().map(|o| o.1).collect();
    let loss = out.iter().map(|o| o.2).sum::<f64>() / out.len().max(1) as f64;
    let preds = out.into_iter().map(|o| o.0).collect();
    Ok((MetricsReport::aggregate(&scores, coverage), preds, loss))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
    pub metrics: Option<MetricsReport>,
}

fn run_epochs(
    model: &mut ModelParams,
    train: &[Prepared],
    dev: Option<(&[Prepared], f64)>,
    h: &Hyper,
    rng: &mut ChaCha8Rng,
    mask: Option<&dyn Fn(&str) -> bool>,
    first_epoch: usize,
    history: &mut Vec<EpochRecord>,
) -> Result<(), TrainError> {
    let mut st = AdamState::new(model.num_params());
    for epoch in first_epoch..first_epoch + h.epochs {
        let mut total = 0.0;
        for batch in batches(train.len(), h.batch_size, rng) {
            let refs: Vec<&Prepared> = batch.iter().map(|&i| &train[i]).collect();
            let (loss, grad) = compute_gradients(model, &refs, h).map_err(|e| match e {
                TrainError::NonFiniteLoss { id, .. } => TrainError::NonFiniteLoss { id, epoch },
                e => e,
            })?;
            total += loss * refs.len() as f64;
            adam_step(model, &grad, &mut st, &h.adam(), mask)?;
        }
        let (dev_loss, metrics) = match dev {
            Some((d, cov)) => {
                let (m, _, l) = evaluate(model, d, h, cov)?;
                (Some(l), Some(m))
            }
            None => (None, None),
        };
        history.push(EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            dev_loss,
            metrics,
        });
    }
    Ok(())
}

/// Second stage: joint training from `init` on prepared instances. Without
/// joint training the chain is fitted first, then frozen while the answer
/// heads train.
pub fn train_joint(
    init: ModelParams,
    train: &[Prepared],
    dev: Option<(&[Prepared], f64)>,
    h: &Hyper,
    seed: u64,
) -> Result<(ModelParams, Vec<EpochRecord>), TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut model = init;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SHUFFLE_SEED_SALT);
    let mut history = Vec::new();
    if h.joint_training {
        run_epochs(&mut model, train, dev, h, &mut rng, None, 1, &mut history)?;
    } else {
        let chain = Hyper {
            lambda_ans: 0.0,
            lambda_type: 0.0,
            ..h.clone()
        };
        run_epochs(&mut model, train, dev, &chain, &mut rng, None, 1, &mut history)?;
        let heads = Hyper {
            lambda_sf: 0.0,
            ..h.clone()
        };
        let answer_only = |name: &str| name.starts_with("heads.") || name.starts_with("encoder.token");
        run_epochs(
            &mut model,
            train,
            dev,
            &heads,
            &mut rng,
            Some(&answer_only),
            h.epochs + 1,
            &mut history,
        )?;
    }
    Ok((model, history))
}

/// Both stages plus the prepared dev set.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub selector: SelectorModel,
    pub model: ModelParams,
    pub selector_history: Vec<SelectorRecord>,
    pub history: Vec<EpochRecord>,
}

/// Prepare over the gold paragraphs, skipping instances without a gold pair.
pub(crate) fn prepare_gold(examples: &[Example], v: &VocabEmbeddings, h: &Hyper) -> Result<Vec<Prepared>, TrainError> {
    examples
        .par_iter()
        .filter_map(|ex| ex.instance.gold_pair().map(|(a, b)| prepare(ex, [a, b], v, h)))
        .collect()
}

/// Coverage of gold-paragraph graphs.
pub(crate) fn gold_coverage(prepared: &[Prepared], h: &Hyper) -> f64 {
    graph_coverage(prepared.iter().map(|p| (&p.graph, &p.instance)), h.max_hops)
}

/// Train the selector, then the joint model on gold paragraphs, reporting dev
/// metrics over selected paragraphs after every epoch.
pub fn train(
    train_set: &[Example],
    dev_set: &[Example],
    v: &VocabEmbeddings,
    h: &Hyper,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    let (selector, selector_history) = train_selector(train_set, v, h, seed)?;
    let train_prep = prepare_gold(train_set, v, h)?;
    let dev_prep = predict_inputs(&selector, dev_set, v, h)?;
    let cov = gold_coverage(&prepare_gold(dev_set, v, h)?, h);
    let dev = (!dev_prep.is_empty()).then_some((dev_prep.as_slice(), cov));
    let init = ModelParams::new(&h.dims(), seed);
    let (model, history) = train_joint(init, &train_prep, dev, h, seed)?;
    Ok(TrainOutcome {
        selector,
        model,
        selector_history,
        history,
    })
}

/// Prepared inputs over selected paragraphs.
pub(crate) fn predict_inputs(
    selector: &SelectorModel,
    examples: &[Example],
    v: &VocabEmbeddings,
    h: &Hyper,
) -> Result<Vec<Prepared>, TrainError> {
    examples
        .par_iter()
        .map(|ex| prepare_selected(selector, ex, v, h))
        .collect()
}

/// Select, build and predict for every example.
pub fn predict_all(
    selector: &SelectorModel,
    model: &ModelParams,
    examples: &[Example],
    v: &VocabEmbeddings,
    h: &Hyper,
) -> Result<Vec<Prediction>, TrainError> {
    predict_inputs(selector, examples, v, h)?
        .par_iter()
        .map(|prep| predict(model, prep, h))
        .collect()
}
