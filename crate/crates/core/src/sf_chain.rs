//! Supporting-fact chains: an RNN scores candidate next sentences over the
//! sentence-level graph and beam search keeps the best paths.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{QAInstance, SentenceRef};
use crate::graph::{HeteroGraph, NodeKind};
use crate::nn::{
    init_matrix, init_vector, log_softmax, outer_add, softmax_cross_entropy, visit_matrix,
    visit_matrix_mut, visit_vector, visit_vector_mut,
};

pub const DEFAULT_BEAM_WIDTH: usize = 4;
pub const DEFAULT_MAX_HOPS: usize = 3;
pub const DEFAULT_HIDDEN: usize = 64;
/// Gold chains longer than this are not searched for an ordering.
const MAX_GOLD_PERMUTED: usize = 8;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SfError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("node {0} is not a document node")]
    UnknownNode(usize),
    #[error("gold supporting facts do not form a chain from the question")]
    GoldPathDisconnected,
}

/// `h_t = tanh(W h_{t-1} + U x + b_h)`, `o_t = V·h_t + b_o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnParams {
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub v: Array1<f64>,
    pub b_h: Array1<f64>,
    /// Length-one output bias.
    pub b_o: Array1<f64>,
}

impl RnnParams {
    pub fn new(rng: &mut impl Rng, hidden: usize, d_in: usize) -> Self {
        RnnParams {
            w: init_matrix(rng, hidden, hidden),
            u: init_matrix(rng, d_in, hidden).reversed_axes().as_standard_layout().to_owned(),
            v: init_vector(rng, hidden, hidden),
            b_h: init_vector(rng, hidden, hidden),
            b_o: init_vector(rng, hidden, 1),
        }
    }

    pub fn zeros(hidden: usize, d_in: usize) -> Self {
        RnnParams {
            w: Array2::zeros((hidden, hidden)),
            u: Array2::zeros((hidden, d_in)),
            v: Array1::zeros(hidden),
            b_h: Array1::zeros(hidden),
            b_o: Array1::zeros(1),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.u.ncols()
    }

    pub(crate) fn visit_named(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        visit_matrix(&format!("{prefix}.w"), &self.w, f);
        visit_matrix(&format!("{prefix}.u"), &self.u, f);
        visit_vector(&format!("{prefix}.v"), &self.v, f);
        visit_vector(&format!("{prefix}.b_h"), &self.b_h, f);
        visit_vector(&format!("{prefix}.b_o"), &self.b_o, f);
    }

    pub(crate) fn visit_named_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &[usize], &mut [f64]),
    ) {
        visit_matrix_mut(&format!("{prefix}.w"), &mut self.w, f);
        visit_matrix_mut(&format!("{prefix}.u"), &mut self.u, f);
        visit_vector_mut(&format!("{prefix}.v"), &mut self.v, f);
        visit_vector_mut(&format!("{prefix}.b_h"), &mut self.b_h, f);
        visit_vector_mut(&format!("{prefix}.b_o"), &mut self.b_o, f);
    }
}

/// `[G_S row ; summary]` for one candidate.
pub fn candidate_rep(
    g_s: ArrayView2<f64>,
    node: usize,
    summary: ArrayView1<f64>,
) -> Result<Array1<f64>, SfError> {
    if node >= g_s.nrows() {
        return Err(SfError::UnknownNode(node));
    }
    Ok(concatenate![Axis(0), g_s.row(node), summary])
}

/// Candidate reps for every doc node, one row each.
pub fn candidate_reps(g_s: ArrayView2<f64>, summaries: ArrayView2<f64>) -> Array2<f64> {
    concatenate![Axis(1), g_s, summaries]
}

pub fn rnn_step(
    p: &RnnParams,
    h_prev: ArrayView1<f64>,
    x: ArrayView1<f64>,
) -> Result<(Array1<f64>, f64), SfError> {
    if h_prev.len() != p.hidden() || x.len() != p.input_dim() {
        return Err(SfError::ShapeMismatch(format!(
            "h {} / x {} for hidden {} input {}",
            h_prev.len(),
            x.len(),
            p.hidden(),
            p.input_dim()
        )));
    }
    let h = (p.w.dot(&h_prev) + p.u.dot(&x) + &p.b_h).mapv(f64::tanh);
    let o = p.v.dot(&h) + p.b_o[0];
    Ok((h, o))
}

/// Backward through one step. `dh` is the gradient reaching `h_t` from later
/// steps, `d_o` the gradient on `o_t`. Returns `(dh_prev, dx)`.
pub fn rnn_step_backward(
    p: &RnnParams,
    h_prev: ArrayView1<f64>,
    x: ArrayView1<f64>,
    h: ArrayView1<f64>,
    dh: ArrayView1<f64>,
    d_o: f64,
    grad: &mut RnnParams,
) -> (Array1<f64>, Array1<f64>) {
    grad.v.scaled_add(d_o, &h);
    grad.b_o[0] += d_o;
    let dh_total = &dh + &(&p.v * d_o);
    let dpre = dh_total * h.mapv(|y| 1.0 - y * y);
    outer_add(&mut grad.w, dpre.view(), h_prev);
    outer_add(&mut grad.u, dpre.view(), x);
    grad.b_h += &dpre;
    (p.w.t().dot(&dpre), p.u.t().dot(&dpre))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningPath {
    /// Doc nodes, starting at the question.
    pub nodes: Vec<usize>,
    /// Logit of each chosen node.
    pub step_logits: Vec<f64>,
    /// Sum of per-step log-probabilities.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamOutcome {
    /// Finished paths, best first.
    pub paths: Vec<ReasoningPath>,
    /// The question had no neighbors; `paths` is the lone `[q]`.
    pub question_isolated: bool,
}

impl BeamOutcome {
    pub fn best(&self) -> &ReasoningPath {
        &self.paths[0]
    }
}

/// Best-first ordering: higher score, then the smaller node sequence.
fn rank(a: &ReasoningPath, b: &ReasoningPath) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.nodes.cmp(&b.nodes))
}

fn frontier(adj: &[Vec<usize>], path: &[usize]) -> Vec<usize> {
    let last = *path.last().expect("path starts at the question");
    adj[last]
        .iter()
        .copied()
        .filter(|c| !path.contains(c))
        .collect()
}

/// Beam search from the question node (index 0) over `adj`, scoring candidates
/// with rows of `reps`. Paths stop at `max_hops + 1` nodes or when no
/// unvisited neighbor remains.
pub fn beam_search(
    adj: &[Vec<usize>],
    reps: ArrayView2<f64>,
    p: &RnnParams,
    beam_width: usize,
    max_hops: usize,
) -> Result<BeamOutcome, SfError> {
    assert!(beam_width >= 1 && max_hops >= 1);
    if reps.nrows() != adj.len() {
        return Err(SfError::ShapeMismatch(format!(
            "{} reps for {} doc nodes",
            reps.nrows(),
            adj.len()
        )));
    }
    let start = ReasoningPath {
        nodes: vec![0],
        step_logits: vec![],
        score: 0.0,
    };
    let mut beams = vec![(start, Array1::zeros(p.hidden()))];
    let mut finished = Vec::new();
    for _ in 0..max_hops {
        let mut cands = Vec::new();
        for (path, h) in beams.drain(..) {
            let front = frontier(adj, &path.nodes);
            if front.is_empty() {
                finished.push(path);
                continue;
            }
            let mut outs = Vec::with_capacity(front.len());
            for &c in &front {
                outs.push(rnn_step(p, h.view(), reps.row(c))?);
            }
            let logits = Array1::from_iter(outs.iter().map(|(_, o)| *o));
            let lp = log_softmax(logits.view());
            for ((c, (hc, o)), l) in front.into_iter().zip(outs).zip(lp) {
                let mut next = path.clone();
                next.nodes.push(c);
                next.step_logits.push(o);
                next.score += l;
                cands.push((next, hc));
            }
        }
        cands.sort_by(|a, b| rank(&a.0, &b.0));
        cands.truncate(beam_width);
        beams = cands;
        if beams.is_empty() {
            break;
        }
    }
    finished.extend(beams.into_iter().map(|(p, _)| p));
    finished.sort_by(rank);
    let question_isolated = adj[0].is_empty();
    Ok(BeamOutcome {
        paths: finished,
        question_isolated,
    })
}

/// Supporting facts named by a path: its sentence nodes as (title, index).
pub fn sf_from_path(
    path: &[usize],
    g: &HeteroGraph,
    inst: &QAInstance,
) -> BTreeSet<(String, usize)> {
    path.iter()
        .filter_map(|&i| match g.nodes()[i].kind {
            NodeKind::Sentence {
                paragraph,
                sentence,
            } => Some((inst.contexts[paragraph].title_text(), sentence)),
            _ => None,
        })
        .collect()
}

/// Gold supporting facts as a path from the question: the first ordering of
/// `gold` (permutations in lexicographic order of file positions) in which
/// every node neighbors the previous one.
pub fn gold_path(g: &HeteroGraph, gold: &[SentenceRef]) -> Result<Vec<usize>, SfError> {
    let nodes: Vec<usize> = gold
        .iter()
        .map(|&r| g.doc_node(r).ok_or(SfError::GoldPathDisconnected))
        .collect::<Result<_, _>>()?;
    if nodes.is_empty() || nodes.len() > MAX_GOLD_PERMUTED {
        return Err(SfError::GoldPathDisconnected);
    }
    let adj = g.doc_adjacency();
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    loop {
        let mut prev = 0;
        let ok = order.iter().all(|&k| {
            let ok = adj[prev].binary_search(&nodes[k]).is_ok();
            prev = nodes[k];
            ok
        });
        if ok {
            let mut path = vec![0];
            path.extend(order.iter().map(|&k| nodes[k]));
            return Ok(path);
        }
        if !next_permutation(&mut order) {
            return Err(SfError::GoldPathDisconnected);
        }
    }
}

fn next_permutation(v: &mut [usize]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let Some(i) = (0..n - 1).rev().find(|&i| v[i] < v[i + 1]) else {
        return false;
    };
    let j = (i + 1..n).rev().find(|&j| v[j] > v[i]).expect("successor exists");
    v.swap(i, j);
    v[i + 1..].reverse();
    true
}

/// Teacher-forced pass along a gold path.
#[derive(Debug, Clone)]
pub struct TeacherForced {
    pub loss: f64,
    steps: Vec<ForcedStep>,
}

#[derive(Debug, Clone)]
struct ForcedStep {
    h_prev: Array1<f64>,
    frontier: Vec<usize>,
    hidden: Vec<Array1<f64>>,
    probs: Array1<f64>,
    gold: usize,
}

/// Sum over steps of frontier cross-entropy at the gold next node.
pub fn sf_forward(
    adj: &[Vec<usize>],
    reps: ArrayView2<f64>,
    p: &RnnParams,
    path: &[usize],
) -> Result<TeacherForced, SfError> {
    let mut h = Array1::zeros(p.hidden());
    let mut loss = 0.0;
    let mut steps = Vec::new();
    for t in 1..path.len() {
        let front = frontier(adj, &path[..t]);
        let gold = front
            .iter()
            .position(|&c| c == path[t])
            .ok_or(SfError::GoldPathDisconnected)?;
        let mut hidden = Vec::with_capacity(front.len());
        let mut logits = Array1::zeros(front.len());
        for (k, &c) in front.iter().enumerate() {
            let (hc, o) = rnn_step(p, h.view(), reps.row(c))?;
            hidden.push(hc);
            logits[k] = o;
        }
        let (l, grad) = softmax_cross_entropy(logits.view(), gold);
        loss += l;
        let next = hidden[gold].clone();
        steps.push(ForcedStep {
            h_prev: h,
            frontier: front,
            hidden,
            probs: grad,
            gold,
        });
        h = next;
    }
    Ok(TeacherForced { loss, steps })
}

/// Backpropagate `scale · loss`; returns `∂/∂reps` and accumulates RNN grads.
pub fn sf_backward(
    reps: ArrayView2<f64>,
    p: &RnnParams,
    tf: &TeacherForced,
    scale: f64,
    grad: &mut RnnParams,
) -> Array2<f64> {
    let mut d_reps = Array2::zeros(reps.dim());
    let mut dh_next = Array1::zeros(p.hidden());
    for st in tf.steps.iter().rev() {
        let mut dh_prev = Array1::zeros(p.hidden());
        for (k, &c) in st.frontier.iter().enumerate() {
            let d_o = scale * st.probs[k];
            let dh = if k == st.gold {
                dh_next.clone()
            } else {
                Array1::zeros(p.hidden())
            };
            let (dhp, dx) = rnn_step_backward(
                p,
                st.h_prev.view(),
                reps.row(c),
                st.hidden[k].view(),
                dh.view(),
                d_o,
                grad,
            );
            dh_prev += &dhp;
            d_reps.row_mut(c).scaled_add(1.0, &dx);
        }
        dh_next = dh_prev;
    }
    d_reps
}

/// Per-step frontier cross-entropy along `path`.
pub fn sf_loss(
    adj: &[Vec<usize>],
    reps: ArrayView2<f64>,
    p: &RnnParams,
    path: &[usize],
) -> Result<f64, SfError> {
    Ok(sf_forward(adj, reps, p, path)?.loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::*;
    use ndarray::array;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn undirected(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for l in &mut adj {
            l.sort_unstable();
        }
        adj
    }

    fn random_reps(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    /// Every maximal simple path from 0 with at most `max_hops` hops, scored
    /// by independent per-step softmax arithmetic.
    fn enumerate(
        adj: &[Vec<usize>],
        reps: &Array2<f64>,
        p: &RnnParams,
        max_hops: usize,
    ) -> Vec<(Vec<usize>, f64)> {
        fn rec(
            adj: &[Vec<usize>],
            reps: &Array2<f64>,
            p: &RnnParams,
            max_hops: usize,
            path: Vec<usize>,
            h: Array1<f64>,
            score: f64,
            out: &mut Vec<(Vec<usize>, f64)>,
        ) {
            let last = *path.last().unwrap();
            let front: Vec<usize> = adj[last].iter().copied().filter(|c| !path.contains(c)).collect();
            if path.len() == max_hops + 1 || front.is_empty() {
                out.push((path, score));
                return;
            }
            let step: Vec<(Array1<f64>, f64)> = front
                .iter()
                .map(|&c| {
                    let pre = p.w.dot(&h) + p.u.dot(&reps.row(c)) + &p.b_h;
                    let hc = pre.mapv(f64::tanh);
                    let o = p.v.dot(&hc) + p.b_o[0];
                    (hc, o)
                })
                .collect();
            let z: f64 = step.iter().map(|(_, o)| o.exp()).sum();
            for (&c, (hc, o)) in front.iter().zip(step) {
                let mut next = path.clone();
                next.push(c);
                rec(adj, reps, p, max_hops, next, hc, score + (o.exp() / z).ln(), out);
            }
        }
        let mut out = Vec::new();
        rec(adj, reps, p, max_hops, vec![0], Array1::zeros(p.hidden()), 0.0, &mut out);
        out
    }

    #[test]
    fn zero_params_give_zero_state() {
        let p = RnnParams::zeros(3, 2);
        let (h, o) = rnn_step(&p, Array1::zeros(3).view(), array![1.0, 2.0].view()).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
        assert_eq!(o, 0.0);
    }

    #[test]
    fn zero_recurrence_ignores_previous_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = RnnParams::new(&mut rng, 3, 2);
        p.w.fill(0.0);
        let x = array![0.5, -0.2];
        let a = rnn_step(&p, array![1.0, 2.0, 3.0].view(), x.view()).unwrap();
        let b = rnn_step(&p, array![-4.0, 0.0, 9.0].view(), x.view()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hand_evaluated_step() {
        let p = RnnParams {
            w: array![[0.5, -0.25], [0.0, 1.0]],
            u: array![[1.0, 2.0], [-1.0, 0.5]],
            v: array![2.0, -3.0],
            b_h: array![0.1, -0.1],
            b_o: array![0.25],
        };
        let hp = array![0.2, -0.4];
        let x = array![0.3, 0.1];
        let h0 = (0.5 * 0.2 + -0.25 * -0.4 + 1.0 * 0.3 + 2.0 * 0.1 + 0.1_f64).tanh();
        let h1 = (0.0 * 0.2 + 1.0 * -0.4 + -1.0 * 0.3 + 0.5 * 0.1 - 0.1_f64).tanh();
        let o = 2.0 * h0 - 3.0 * h1 + 0.25;
        let (h, got) = rnn_step(&p, hp.view(), x.view()).unwrap();
        assert!((h[0] - h0).abs() < 1e-12 && (h[1] - h1).abs() < 1e-12);
        assert!((got - o).abs() < 1e-12);
    }

    #[test]
    fn candidate_rep_is_concatenation() {
        let g_s = array![[1.0, 2.0], [3.0, 4.0]];
        let summary = array![9.0, 8.0, 7.0];
        let rep = candidate_rep(g_s.view(), 1, summary.view()).unwrap();
        assert_eq!(rep, array![3.0, 4.0, 9.0, 8.0, 7.0]);
        let other = candidate_rep(g_s.view(), 0, summary.view()).unwrap();
        assert_eq!(other.slice(ndarray::s![2..]), rep.slice(ndarray::s![2..]));
        assert_eq!(candidate_rep(g_s.view(), 2, summary.view()), Err(SfError::UnknownNode(2)));
        let zero = candidate_rep(Array2::zeros((2, 2)).view(), 0, summary.view()).unwrap();
        assert!(zero.iter().take(2).all(|&v| v == 0.0));
    }

    #[test]
    fn chain_graph_has_one_path() {
        let adj = undirected(3, &[(0, 1), (1, 2)]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = RnnParams::new(&mut rng, 4, 3);
        let reps = random_reps(&mut rng, 3, 3);
        let out = beam_search(&adj, reps.view(), &p, 4, 2).unwrap();
        assert_eq!(out.paths.len(), 1);
        assert_eq!(out.best().nodes, vec![0, 1, 2]);
        assert!(out.best().score.abs() < 1e-12);
    }

    #[test]
    fn isolated_question_is_flagged() {
        let adj = undirected(3, &[(1, 2)]);
        let p = RnnParams::zeros(2, 2);
        let out = beam_search(&adj, Array2::zeros((3, 2)).view(), &p, 2, 3).unwrap();
        assert!(out.question_isolated);
        assert_eq!(out.best().nodes, vec![0]);
    }

    #[test]
    fn singleton_frontier_costs_nothing_and_uniform_costs_ln_k() {
        let adj = undirected(4, &[(0, 1), (1, 2), (1, 3)]);
        let p = RnnParams::zeros(2, 2);
        let reps = Array2::zeros((4, 2));
        // step 1: one candidate; step 2: two equal logits
        let l = sf_loss(&adj, reps.view(), &p, &[0, 1, 3]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn three_step_loss_is_sum_of_step_cross_entropies() {
        let adj = undirected(6, &[(0, 1), (0, 2), (1, 3), (1, 4), (3, 5), (4, 5)]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = RnnParams::new(&mut rng, 3, 2);
        let reps = random_reps(&mut rng, 6, 2);
        let path = [0, 1, 3, 5];
        let mut h = Array1::zeros(3);
        let mut want = 0.0;
        for (front, gold) in [(vec![1, 2], 0), (vec![3, 4], 0), (vec![5], 0)] {
            let step: Vec<_> = front
                .iter()
                .map(|&c: &usize| {
                    let hc = (p.w.dot(&h) + p.u.dot(&reps.row(c)) + &p.b_h).mapv(f64::tanh);
                    let o = p.v.dot(&hc) + p.b_o[0];
                    (hc, o)
                })
                .collect();
            let z: f64 = step.iter().map(|(_, o)| o.exp()).sum();
            want += -(step[gold].1.exp() / z).ln();
            h = step[gold].0.clone();
        }
        let got = sf_loss(&adj, reps.view(), &p, &path).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn teacher_forced_gradients_match_finite_differences() {
        let adj = undirected(6, &[(0, 1), (0, 2), (1, 3), (1, 4), (3, 5), (4, 5), (2, 4)]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = RnnParams::new(&mut rng, 3, 2);
        let reps = random_reps(&mut rng, 6, 2);
        let path = [0, 1, 4, 5];
        let tf = sf_forward(&adj, reps.view(), &p, &path).unwrap();
        let mut grad = RnnParams::zeros(3, 2);
        let d_reps = sf_backward(reps.view(), &p, &tf, 1.0, &mut grad);
        let h = 1e-5;
        let loss = |p: &RnnParams, r: &Array2<f64>| sf_loss(&adj, r.view(), p, &path).unwrap();
        let mut analytic = Vec::new();
        grad.visit_named("g", &mut |_, _, s| analytic.extend_from_slice(s));
        let mut k = 0;
        let mut base = p.clone();
        let n = analytic.len();
        for idx in 0..n {
            let mut at = 0;
            let mut bump = |delta: f64, q: &mut RnnParams| {
                at = 0;
                q.visit_named_mut("p", &mut |_, _, s| {
                    if idx >= at && idx < at + s.len() {
                        s[idx - at] += delta;
                    }
                    at += s.len();
                });
            };
            bump(h, &mut base);
            let lp = loss(&base, &reps);
            bump(-2.0 * h, &mut base);
            let lm = loss(&base, &reps);
            bump(h, &mut base);
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - analytic[idx]).abs() < 1e-6, "param {idx}: {fd} vs {}", analytic[idx]);
            k += 1;
        }
        assert_eq!(k, n);
        for i in 0..6 {
            for j in 0..2 {
                let (mut rp, mut rm) = (reps.clone(), reps.clone());
                rp[[i, j]] += h;
                rm[[i, j]] -= h;
                let fd = (loss(&p, &rp) - loss(&p, &rm)) / (2.0 * h);
                assert!((fd - d_reps[[i, j]]).abs() < 1e-6, "rep {i},{j}");
            }
        }
    }

    #[test]
    fn fitted_rnn_prefers_the_trained_path() {
        // q neighbors s2 and s3; s3 neighbors s4 and s5; s2 neighbors s1.
        let adj = undirected(6, &[(0, 2), (0, 3), (3, 4), (3, 5), (2, 1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = RnnParams::new(&mut rng, 4, 3);
        let reps = random_reps(&mut rng, 6, 3);
        let gold = [0, 3, 5];
        for _ in 0..300 {
            let tf = sf_forward(&adj, reps.view(), &p, &gold).unwrap();
            let mut g = RnnParams::zeros(4, 3);
            sf_backward(reps.view(), &p, &tf, 1.0, &mut g);
            let mut flat = Vec::new();
            g.visit_named("g", &mut |_, _, s| flat.extend_from_slice(s));
            let mut at = 0;
            p.visit_named_mut("p", &mut |_, _, s| {
                for v in s.iter_mut() {
                    *v -= 0.5 * flat[at];
                    at += 1;
                }
            });
        }
        let out = beam_search(&adj, reps.view(), &p, 2, 2).unwrap();
        assert_eq!(out.best().nodes, gold.to_vec());
    }

    #[test]
    fn gold_path_uses_first_connected_ordering() {
        let g = fig3_graph();
        // q–s0.1 shares "william", s0.1–s1.1 share the player phrase
        let path = gold_path(&g, &[sent(0, 1), sent(1, 1)]).unwrap();
        assert_eq!(path, vec![0, 3, 6]);
        // s1.1 is not a question neighbor, so the reversed listing is permuted
        let path = gold_path(&g, &[sent(1, 1), sent(0, 1)]).unwrap();
        assert_eq!(path, vec![0, 3, 6]);
    }

    #[test]
    fn disconnected_gold_is_reported() {
        let inst = fig3_instance();
        let srl = crate::data::SrlAnnotation::default();
        let g = crate::graph::build_graph(
            &crate::graph::GraphInput {
                instance: &inst,
                paragraphs: [0, 1],
                srl: &srl,
            },
            &Default::default(),
        );
        assert_eq!(gold_path(&g, &[sent(0, 0)]), Err(SfError::GoldPathDisconnected));
    }

    #[test]
    fn sf_set_maps_sentences_and_drops_duplicates() {
        let g = fig3_graph();
        let inst = fig3_instance();
        assert!(sf_from_path(&[0], &g, &inst).is_empty());
        let s = sf_from_path(&[0, 3, 6], &g, &inst);
        let want: BTreeSet<_> = [("william".to_string(), 1), ("jerry".to_string(), 1)].into();
        assert_eq!(s, want);
        let twice = sf_from_path(&[0, 2, 3, 2], &g, &inst);
        assert_eq!(twice.len(), 2);
    }

    proptest! {
        #[test]
        fn beam_with_full_width_matches_enumeration(seed in 0u64..10_000, n in 2usize..=7, hops in 1usize..=4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut edges = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    if rng.random_bool(0.45) {
                        edges.push((a, b));
                    }
                }
            }
            let adj = undirected(n, &edges);
            let p = RnnParams::new(&mut rng, 3, 2);
            let reps = random_reps(&mut rng, n, 2);
            let all = enumerate(&adj, &reps, &p, hops);
            let out = beam_search(&adj, reps.view(), &p, 10_000, hops).unwrap();
            prop_assert_eq!(out.paths.len(), all.len());
            let best = all
                .iter()
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| b.0.cmp(&a.0)))
                .unwrap();
            prop_assert_eq!(&out.best().nodes, &best.0);
            prop_assert!((out.best().score - best.1).abs() < 1e-9);
            for path in &out.paths {
                for w in path.nodes.windows(2) {
                    prop_assert!(adj[w[0]].contains(&w[1]));
                }
                let uniq: BTreeSet<_> = path.nodes.iter().collect();
                prop_assert_eq!(uniq.len(), path.nodes.len());
                prop_assert!(path.nodes.len() <= hops + 1);
            }
        }

        #[test]
        fn shifting_output_bias_keeps_the_ranking(seed in 0u64..1000, shift in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let adj = undirected(6, &[(0, 1), (0, 2), (1, 3), (2, 3), (3, 4), (2, 5)]);
            let p = RnnParams::new(&mut rng, 3, 2);
            let reps = random_reps(&mut rng, 6, 2);
            let mut q = p.clone();
            q.b_o[0] += shift;
            let a = beam_search(&adj, reps.view(), &p, 3, 3).unwrap();
            let b = beam_search(&adj, reps.view(), &q, 3, 3).unwrap();
            let na: Vec<_> = a.paths.iter().map(|p| p.nodes.clone()).collect();
            let nb: Vec<_> = b.paths.iter().map(|p| p.nodes.clone()).collect();
            prop_assert_eq!(na, nb);
        }
    }
}
