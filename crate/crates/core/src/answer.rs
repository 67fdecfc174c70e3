//! Answer type classification and span extraction over the selected context.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::AnswerType;
use crate::graph::HeteroGraph;
use crate::nn::{softmax, softmax_cross_entropy, Mlp2, Mlp2Cache};

pub const DEFAULT_MAX_SPAN: usize = 30;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AnswerError {
    #[error("{tokens} token reps but {args} argument rows")]
    LengthMismatch { tokens: usize, args: usize },
    #[error("gold span ({start}, {end}) outside a context of {len} tokens")]
    GoldSpanOutOfRange { start: usize, end: usize, len: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub type_mlp: Mlp2,
    pub start_mlp: Mlp2,
    pub end_mlp: Mlp2,
}

impl HeadParams {
    /// `d_model` inputs for the type head, `d_model + f2` for the span heads.
    pub fn new(rng: &mut impl Rng, d_model: usize, f2: usize, hidden: usize) -> Self {
        HeadParams {
            type_mlp: Mlp2::new(rng, d_model, hidden, 3),
            start_mlp: Mlp2::new(rng, d_model + f2, hidden, 1),
            end_mlp: Mlp2::new(rng, d_model + f2, hidden, 1),
        }
    }

    pub fn zeros(d_model: usize, f2: usize, hidden: usize) -> Self {
        HeadParams {
            type_mlp: Mlp2::zeros(d_model, hidden, 3),
            start_mlp: Mlp2::zeros(d_model + f2, hidden, 1),
            end_mlp: Mlp2::zeros(d_model + f2, hidden, 1),
        }
    }

    pub(crate) fn visit_named(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.type_mlp.visit_named(&format!("{prefix}.type"), f);
        self.start_mlp.visit_named(&format!("{prefix}.start"), f);
        self.end_mlp.visit_named(&format!("{prefix}.end"), f);
    }

    pub(crate) fn visit_named_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &[usize], &mut [f64]),
    ) {
        self.type_mlp.visit_named_mut(&format!("{prefix}.type"), f);
        self.start_mlp.visit_named_mut(&format!("{prefix}.start"), f);
        self.end_mlp.visit_named_mut(&format!("{prefix}.end"), f);
    }
}

/// For each token of the answer context, the argument node whose occurrence
/// covers it: the shortest covering span, then the earliest start, then the
/// lowest node index. `None` outside every argument.
pub fn token_arguments(g: &HeteroGraph) -> Vec<Option<usize>> {
    let dc = g.doc_count();
    let mut offset = vec![0; dc];
    let mut total = 0;
    for n in &g.nodes()[1..dc] {
        offset[n.index] = total;
        total += n.tokens.len();
    }
    // (len, start, node) of the current winner per token
    let mut best: Vec<Option<(usize, usize, usize)>> = vec![None; total];
    for n in &g.nodes()[dc..] {
        for occ in &n.occurrences {
            let Some(d) = g.doc_node(occ.sentence) else { continue };
            if d == 0 {
                continue;
            }
            let key = (occ.end - occ.start, occ.start, n.index);
            for pos in occ.start..occ.end {
                let slot = &mut best[offset[d] + pos];
                if slot.is_none_or(|cur| key < cur) {
                    *slot = Some(key);
                }
            }
        }
    }
    best.into_iter().map(|b| b.map(|(_, _, i)| i)).collect()
}

/// Per-token argument rows, `L × F2`, taken from the full GCN output `g_rows`.
pub fn token_arg_map(assignment: &[Option<usize>], g_rows: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((assignment.len(), g_rows.ncols()));
    for (t, a) in assignment.iter().enumerate() {
        if let Some(i) = a {
            out.row_mut(t).assign(&g_rows.row(*i));
        }
    }
    out
}

/// Scatter per-token gradients back onto GCN rows.
pub fn token_arg_map_backward(
    assignment: &[Option<usize>],
    d_tokens: ArrayView2<f64>,
    d_rows: &mut Array2<f64>,
) {
    for (t, a) in assignment.iter().enumerate() {
        if let Some(i) = a {
            d_rows.row_mut(*i).scaled_add(1.0, &d_tokens.row(t));
        }
    }
}

/// Type logits plus the cache for backward.
pub fn type_logits(hp: &HeadParams, summary: ArrayView1<f64>) -> (Array1<f64>, Mlp2Cache) {
    hp.type_mlp.forward(summary)
}

/// Probabilities over (yes, no, span).
pub fn classify_type(hp: &HeadParams, summary: ArrayView1<f64>) -> Array1<f64> {
    softmax(type_logits(hp, summary).0.view())
}

/// Activations of the span heads.
#[derive(Debug, Clone)]
pub struct SpanCache {
    input: Array2<f64>,
    start: (Array2<f64>, Array2<f64>),
    end: (Array2<f64>, Array2<f64>),
    d_model: usize,
}

/// Start and end logits from `[token rep ; argument row]` per token.
pub fn span_logits(
    hp: &HeadParams,
    tokens: ArrayView2<f64>,
    args: ArrayView2<f64>,
) -> Result<(Array1<f64>, Array1<f64>, SpanCache), AnswerError> {
    if tokens.nrows() != args.nrows() {
        return Err(AnswerError::LengthMismatch {
            tokens: tokens.nrows(),
            args: args.nrows(),
        });
    }
    let input = concatenate![Axis(1), tokens, args];
    let (ys, ps, as_) = hp.start_mlp.forward_rows(input.view());
    let (ye, pe, ae) = hp.end_mlp.forward_rows(input.view());
    let cache = SpanCache {
        input,
        start: (ps, as_),
        end: (pe, ae),
        d_model: tokens.ncols(),
    };
    Ok((ys.column(0).to_owned(), ye.column(0).to_owned(), cache))
}

/// Gradients w.r.t. token reps and argument rows.
pub fn span_backward(
    hp: &HeadParams,
    cache: &SpanCache,
    d_start: ArrayView1<f64>,
    d_end: ArrayView1<f64>,
    grad: &mut HeadParams,
) -> (Array2<f64>, Array2<f64>) {
    let ds = d_start.insert_axis(Axis(1));
    let de = d_end.insert_axis(Axis(1));
    let mut d_in = hp.start_mlp.backward_rows(
        cache.input.view(),
        &cache.start.0,
        &cache.start.1,
        ds,
        &mut grad.start_mlp,
    );
    d_in += &hp.end_mlp.backward_rows(
        cache.input.view(),
        &cache.end.0,
        &cache.end.1,
        de,
        &mut grad.end_mlp,
    );
    let d = cache.d_model;
    (
        d_in.slice(s![.., ..d]).to_owned(),
        d_in.slice(s![.., d..]).to_owned(),
    )
}

/// Best `(i, j)` with `i ≤ j < i + max_len` by `start[i] + end[j]`; ties to
/// the smallest `i`, then the smallest `j`.
pub fn decode_span(start: ArrayView1<f64>, end: ArrayView1<f64>, max_len: usize) -> (usize, usize) {
    assert!(!start.is_empty() && start.len() == end.len() && max_len >= 1);
    let l = start.len();
    let mut best = (0, 0);
    let mut best_score = f64::NEG_INFINITY;
    for i in 0..l {
        for j in i..l.min(i + max_len) {
            let sc = start[i] + end[j];
            if sc > best_score {
                best_score = sc;
                best = (i, j);
            }
        }
    }
    best
}

/// Losses and their logit gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerLosses {
    pub l_type: f64,
    pub l_ans: f64,
    pub d_type: Array1<f64>,
    pub d_start: Array1<f64>,
    pub d_end: Array1<f64>,
}

/// `L_type` is cross-entropy of the type softmax; `L_ans` is start plus end
/// cross-entropy at the gold span, and zero without one.
pub fn answer_losses(
    type_logits: ArrayView1<f64>,
    gold_type: AnswerType,
    start: ArrayView1<f64>,
    end: ArrayView1<f64>,
    gold_span: Option<(usize, usize)>,
) -> Result<AnswerLosses, AnswerError> {
    let (l_type, d_type) = softmax_cross_entropy(type_logits, gold_type.index());
    let l = start.len();
    let mut out = AnswerLosses {
        l_type,
        l_ans: 0.0,
        d_type,
        d_start: Array1::zeros(l),
        d_end: Array1::zeros(l),
    };
    if let (AnswerType::Span, Some((i, j))) = (gold_type, gold_span) {
        if i > j || j >= l {
            return Err(AnswerError::GoldSpanOutOfRange {
                start: i,
                end: j,
                len: l,
            });
        }
        let (ls, ds) = softmax_cross_entropy(start, i);
        let (le, de) = softmax_cross_entropy(end, j);
        out.l_ans = ls + le;
        out.d_start = ds;
        out.d_end = de;
    }
    Ok(out)
}

/// First occurrence of `answer` in `tokens` (case-insensitive) whose start
/// satisfies `prefer`, falling back to the first occurrence anywhere.
pub fn locate_answer(
    tokens: &[String],
    answer: &[String],
    prefer: impl Fn(usize) -> bool,
) -> Option<(usize, usize)> {
    if answer.is_empty() || answer.len() > tokens.len() {
        return None;
    }
    let hits: Vec<usize> = (0..=tokens.len() - answer.len())
        .filter(|&i| {
            tokens[i..i + answer.len()]
                .iter()
                .zip(answer)
                .all(|(a, b)| a.eq_ignore_ascii_case(b))
        })
        .collect();
    let i = hits
        .iter()
        .copied()
        .find(|&i| prefer(i))
        .or_else(|| hits.first().copied())?;
    Some((i, i + answer.len() - 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerPrediction {
    pub type_dist: Vec<f64>,
    pub span: Option<(usize, usize)>,
    pub text: String,
}

pub fn predict_answer(
    type_dist: ArrayView1<f64>,
    start: ArrayView1<f64>,
    end: ArrayView1<f64>,
    max_len: usize,
    tokens: &[String],
) -> AnswerPrediction {
    let kind = crate::select::argmax(&type_dist.to_vec()).expect("three types");
    let (span, text) = match AnswerType::from_index(kind) {
        AnswerType::Yes => (None, "yes".to_string()),
        AnswerType::No => (None, "no".to_string()),
        AnswerType::Span => {
            let (i, j) = decode_span(start, end, max_len);
            (Some((i, j)), tokens[i..=j].join(" "))
        }
    };
    AnswerPrediction {
        type_dist: type_dist.to_vec(),
        span,
        text,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SrlAnnotation, SrlFrame};
    use crate::graph::{build_graph, GraphInput};
    use crate::nn::Dense;
    use crate::testutil::*;
    use ndarray::array;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn brute_force(start: &[f64], end: &[f64], max_len: usize) -> (usize, usize) {
        let mut pairs = Vec::new();
        for i in 0..start.len() {
            for j in 0..end.len() {
                if i <= j && j - i < max_len {
                    pairs.push((start[i] + end[j], i, j));
                }
            }
        }
        let top = pairs.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let (_, i, j) = pairs.into_iter().find(|p| p.0 == top).unwrap();
        (i, j)
    }

    #[test]
    fn nested_arguments_prefer_the_shorter_span() {
        let inst = fig3_instance();
        // "jerry a former football player played ..." with a 5-token and a 2-token argument
        let srl = SrlAnnotation::from_frames(
            vec![
                SrlFrame::new(sent(1, 1), 5, vec![arg("ARG0", 0, 5)]),
                SrlFrame::new(sent(1, 1), 7, vec![arg("ARG1", 3, 5)]),
            ],
            &inst,
        )
        .unwrap();
        let g = build_graph(
            &GraphInput {
                instance: &inst,
                paragraphs: [0, 1],
                srl: &srl,
            },
            &Default::default(),
        );
        let assign = token_arguments(&g);
        let (toks, owner) = g.answer_context();
        assert_eq!(assign.len(), toks.len());
        let base = owner.iter().position(|&(d, _)| d == g.doc_node(sent(1, 1)).unwrap()).unwrap();
        let long = g.doc_count();
        let short = g.doc_count() + 1;
        assert_eq!(assign[base], Some(long));
        assert_eq!(assign[base + 3], Some(short));
        assert_eq!(assign[base + 4], Some(short));
        assert_eq!(assign[base + 5], None);
        let mut rows = Array2::zeros((g.node_count(), 2));
        rows.row_mut(long).fill(1.0);
        rows.row_mut(short).fill(2.0);
        let m = token_arg_map(&assign, rows.view());
        assert_eq!(m.row(base + 3), array![2.0, 2.0]);
        assert_eq!(m.row(base + 5), array![0.0, 0.0]);
        assert_eq!(m.row(0), array![0.0, 0.0]);
    }

    #[test]
    fn zero_type_head_is_uniform() {
        let hp = HeadParams::zeros(4, 2, 3);
        let p = classify_type(&hp, array![1.0, -2.0, 0.5, 3.0].view());
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn one_unit_type_head_matches_scalar_arithmetic() {
        let mut hp = HeadParams::zeros(1, 1, 1);
        hp.type_mlp = Mlp2 {
            hidden: Dense {
                w: array![[2.0]],
                b: array![-0.5],
            },
            out: Dense {
                w: array![[1.0, -1.0, 0.5]],
                b: array![0.0, 0.1, 0.2],
            },
        };
        let x = 0.75_f64;
        let hdn = (2.0 * x - 0.5).max(0.0);
        let z = [hdn, -hdn + 0.1, 0.5 * hdn + 0.2];
        let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        let tot: f64 = e.iter().sum();
        let p = classify_type(&hp, array![x].view());
        for k in 0..3 {
            assert!((p[k] - e[k] / tot).abs() < 1e-12);
        }
    }

    #[test]
    fn span_logits_match_per_token_mlp() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hp = HeadParams::new(&mut rng, 3, 2, 4);
        let toks = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let args = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));
        let (st, en, _) = span_logits(&hp, toks.view(), args.view()).unwrap();
        for t in 0..5 {
            let x = concatenate![Axis(0), toks.row(t), args.row(t)];
            assert!((hp.start_mlp.forward(x.view()).0[0] - st[t]).abs() < 1e-12);
            assert!((hp.end_mlp.forward(x.view()).0[0] - en[t]).abs() < 1e-12);
        }
        let one = span_logits(&hp, toks.slice(s![..1, ..]), args.slice(s![..1, ..])).unwrap();
        assert_eq!((one.0.len(), one.1.len()), (1, 1));
        assert_eq!(
            span_logits(&hp, toks.view(), args.slice(s![..2, ..])).unwrap_err(),
            AnswerError::LengthMismatch { tokens: 5, args: 2 }
        );
    }

    #[test]
    fn arg_block_only_matters_through_its_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut hp = HeadParams::new(&mut rng, 3, 2, 4);
        let toks = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let args = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
        let zero = Array2::zeros((4, 2));
        let a = span_logits(&hp, toks.view(), args.view()).unwrap();
        let b = span_logits(&hp, toks.view(), zero.view()).unwrap();
        assert_ne!(a.0, b.0);
        hp.start_mlp.hidden.w.slice_mut(s![3.., ..]).fill(0.0);
        hp.end_mlp.hidden.w.slice_mut(s![3.., ..]).fill(0.0);
        let a = span_logits(&hp, toks.view(), args.view()).unwrap();
        let b = span_logits(&hp, toks.view(), zero.view()).unwrap();
        assert_eq!((a.0, a.1), (b.0, b.1));
    }

    #[test]
    fn decode_edge_cases() {
        assert_eq!(decode_span(array![0.3].view(), array![-1.0].view(), 5), (0, 0));
        let flat = Array1::from_elem(6, 2.0);
        assert_eq!(decode_span(flat.view(), flat.view(), 3), (0, 0));
        // the best end lies beyond max_len from the best start
        let st = array![5.0, 0.0, 0.0, 0.0];
        let en = array![0.0, 0.0, 0.0, 9.0];
        assert_eq!(decode_span(st.view(), en.view(), 2), (2, 3));
    }

    #[test]
    fn losses_match_scalar_cross_entropy() {
        let tl = array![0.2, -0.1, 1.3];
        let st = array![0.5, 1.5, -0.5];
        let en = array![0.0, 0.3, 0.9];
        let out = answer_losses(tl.view(), AnswerType::Span, st.view(), en.view(), Some((1, 2))).unwrap();
        let ce = |v: &Array1<f64>, k: usize| {
            let z: f64 = v.iter().map(|x| x.exp()).sum();
            -(v[k].exp() / z).ln()
        };
        assert!((out.l_type - ce(&tl, 2)).abs() < 1e-12);
        assert!((out.l_ans - ce(&st, 1) - ce(&en, 2)).abs() < 1e-12);
        let yes = answer_losses(tl.view(), AnswerType::Yes, st.view(), en.view(), Some((1, 2))).unwrap();
        assert_eq!(yes.l_ans, 0.0);
        assert!(yes.d_start.iter().all(|&v| v == 0.0));
        let uniform = Array1::zeros(4);
        let u = answer_losses(tl.view(), AnswerType::Span, uniform.view(), uniform.view(), Some((0, 3))).unwrap();
        assert!((u.l_ans - 2.0 * 4f64.ln()).abs() < 1e-12);
        assert!(matches!(
            answer_losses(tl.view(), AnswerType::Span, st.view(), en.view(), Some((1, 3))),
            Err(AnswerError::GoldSpanOutOfRange { .. })
        ));
    }

    #[test]
    fn confident_predictions_have_tiny_losses() {
        let tl = array![-30.0, -30.0, 30.0];
        let st = array![40.0, 0.0];
        let en = array![0.0, 40.0];
        let out = answer_losses(tl.view(), AnswerType::Span, st.view(), en.view(), Some((0, 1))).unwrap();
        assert!(out.l_type < 1e-6 && out.l_ans < 1e-6);
    }

    #[test]
    fn span_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let hp = HeadParams::new(&mut rng, 3, 2, 4);
        let toks = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let args = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));
        let loss = |t: &Array2<f64>, a: &Array2<f64>| {
            let (s, e, _) = span_logits(&hp, t.view(), a.view()).unwrap();
            answer_losses(array![0.0, 0.0, 0.0].view(), AnswerType::Span, s.view(), e.view(), Some((1, 3)))
                .unwrap()
                .l_ans
        };
        let (s, e, cache) = span_logits(&hp, toks.view(), args.view()).unwrap();
        let l = answer_losses(array![0.0, 0.0, 0.0].view(), AnswerType::Span, s.view(), e.view(), Some((1, 3))).unwrap();
        let mut g = HeadParams::zeros(3, 2, 4);
        let (dt, da) = span_backward(&hp, &cache, l.d_start.view(), l.d_end.view(), &mut g);
        let h = 1e-5;
        for (m, dm) in [(&toks, &dt), (&args, &da)] {
            for idx in 0..m.len() {
                let (r, c) = (idx / m.ncols(), idx % m.ncols());
                let bump = |delta: f64| {
                    let (mut t, mut a) = (toks.clone(), args.clone());
                    if std::ptr::eq(m, &toks) {
                        t[[r, c]] += delta;
                    } else {
                        a[[r, c]] += delta;
                    }
                    loss(&t, &a)
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                assert!((fd - dm[[r, c]]).abs() < 1e-6, "{fd} vs {}", dm[[r, c]]);
            }
        }
    }

    #[test]
    fn locate_prefers_marked_positions() {
        let t = toks("x ans y ans z");
        assert_eq!(locate_answer(&t, &toks("ans"), |_| false), Some((1, 1)));
        assert_eq!(locate_answer(&t, &toks("ans"), |i| i > 2), Some((3, 3)));
        assert_eq!(locate_answer(&t, &toks("ANS y"), |_| false), Some((1, 2)));
        assert_eq!(locate_answer(&t, &toks("nope"), |_| true), None);
    }

    #[test]
    fn prediction_reads_text_from_span() {
        let t = toks("a b c");
        let p = predict_answer(
            array![0.1, 0.2, 0.7].view(),
            array![0.0, 5.0, 0.0].view(),
            array![0.0, 0.0, 5.0].view(),
            30,
            &t,
        );
        assert_eq!(p.span, Some((1, 2)));
        assert_eq!(p.text, "b c");
        let y = predict_answer(array![0.8, 0.1, 0.1].view(), array![0.0].view(), array![0.0].view(), 30, &t);
        assert_eq!((y.span, y.text.as_str()), (None, "yes"));
    }

    proptest! {
        #[test]
        fn decode_matches_brute_force(
            start in proptest::collection::vec(-3i32..3, 1..=64),
            seed in 0u64..1000,
            max_len in 1usize..8,
        ) {
            // integer-valued logits make ties common
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let st: Vec<f64> = start.iter().map(|&v| v as f64).collect();
            let en: Vec<f64> = (0..st.len()).map(|_| rng.random_range(-3..3) as f64).collect();
            let got = decode_span(Array1::from(st.clone()).view(), Array1::from(en.clone()).view(), max_len);
            prop_assert_eq!(got, brute_force(&st, &en, max_len));
        }

        #[test]
        fn decode_is_shift_invariant(seed in 0u64..1000, a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let st = Array1::from_shape_fn(12, |_| rng.random_range(-1.0..1.0));
            let en = Array1::from_shape_fn(12, |_| rng.random_range(-1.0..1.0));
            prop_assert_eq!(
                decode_span(st.view(), en.view(), 5),
                decode_span((&st + a).view(), (&en + b).view(), 5)
            );
        }

        #[test]
        fn type_distribution_is_valid(seed in 0u64..1000, scale in 0.0f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let hp = HeadParams::new(&mut rng, 4, 1, 3);
            let x = Array1::from_shape_fn(4, |_| scale * rng.random_range(-1.0..1.0));
            let p = classify_type(&hp, x.view());
            prop_assert!((p.sum() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
