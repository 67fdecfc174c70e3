//! Small dense layers with hand-written backward passes.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
pub fn init_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = 1.0 / (rows.max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound))
}

pub fn init_vector(rng: &mut impl Rng, fan_in: usize, len: usize) -> Array1<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array1::from_shape_fn(len, |_| rng.random_range(-bound..=bound))
}

pub fn relu(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Numerically stable softmax.
pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let e = logits.mapv(|v| (v - max).exp());
    let z = e.sum();
    e / z
}

pub fn log_softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + logits.mapv(|v| (v - max).exp()).sum().ln();
    logits.mapv(|v| v - lse)
}

/// Cross-entropy of softmax(logits) at `gold`, and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: ArrayView1<f64>, gold: usize) -> (f64, Array1<f64>) {
    let ls = log_softmax(logits);
    let mut grad = ls.mapv(f64::exp);
    grad[gold] -= 1.0;
    (-ls[gold], grad)
}

/// Affine map `x·w + b` with `w` stored as (in × out).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn new(rng: &mut impl Rng, input: usize, output: usize) -> Self {
        Dense {
            w: init_matrix(rng, input, output),
            b: init_vector(rng, input, output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            w: Array2::zeros((input, output)),
            b: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Array1<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulate parameter gradients into `grad` and return d/dx.
    pub fn backward(&self, x: ArrayView1<f64>, dy: ArrayView1<f64>, grad: &mut Dense) -> Array1<f64> {
        outer_add(&mut grad.w, x, dy);
        grad.b += &dy;
        self.w.dot(&dy)
    }

    /// Batched forward over rows of `x`.
    pub fn forward_rows(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Batched backward; `dy` rows align with `x` rows.
    pub fn backward_rows(
        &self,
        x: ArrayView2<f64>,
        dy: ArrayView2<f64>,
        grad: &mut Dense,
    ) -> Array2<f64> {
        grad.w += &x.t().dot(&dy);
        grad.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }
}

/// `m += a ⊗ b`.
pub fn outer_add(m: &mut Array2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) {
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        m.row_mut(i).scaled_add(ai, &b);
    }
}

/// Two-layer perceptron with a relu hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp2 {
    pub hidden: Dense,
    pub out: Dense,
}

/// Activations kept from an [`Mlp2`] forward pass.
#[derive(Debug, Clone)]
pub struct Mlp2Cache {
    pub pre: Array1<f64>,
    pub act: Array1<f64>,
}

impl Mlp2 {
    pub fn new(rng: &mut impl Rng, input: usize, hidden: usize, output: usize) -> Self {
        Mlp2 {
            hidden: Dense::new(rng, input, hidden),
            out: Dense::new(rng, hidden, output),
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Mlp2 {
            hidden: Dense::zeros(input, hidden),
            out: Dense::zeros(hidden, output),
        }
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> (Array1<f64>, Mlp2Cache) {
        let pre = self.hidden.forward(x);
        let act = relu(&pre);
        let y = self.out.forward(act.view());
        (y, Mlp2Cache { pre, act })
    }

    pub fn backward(
        &self,
        x: ArrayView1<f64>,
        cache: &Mlp2Cache,
        dy: ArrayView1<f64>,
        grad: &mut Mlp2,
    ) -> Array1<f64> {
        let dact = self.out.backward(cache.act.view(), dy, &mut grad.out);
        let dpre = &dact * &cache.pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        self.hidden.backward(x, dpre.view(), &mut grad.hidden)
    }

    /// Row-wise forward: returns outputs plus (pre, act) matrices.
    pub fn forward_rows(&self, x: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let pre = self.hidden.forward_rows(x);
        let act = pre.mapv(|v| v.max(0.0));
        let y = self.out.forward_rows(act.view());
        (y, pre, act)
    }

    pub fn backward_rows(
        &self,
        x: ArrayView2<f64>,
        pre: &Array2<f64>,
        act: &Array2<f64>,
        dy: ArrayView2<f64>,
        grad: &mut Mlp2,
    ) -> Array2<f64> {
        let dact = self.out.backward_rows(act.view(), dy, &mut grad.out);
        let dpre = dact * pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        self.hidden.backward_rows(x, dpre.view(), &mut grad.hidden)
    }
}

/// Uniform access to every trainable tensor, as flat slices in a fixed order.
pub trait Parameters {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, s| n += s.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |_, _, s| out.extend_from_slice(s));
        out
    }

    /// Overwrite every tensor from a flat buffer laid out as [`Parameters::flatten`].
    fn load_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        self.visit_mut(&mut |_, _, s| {
            s.copy_from_slice(&flat[at..at + s.len()]);
            at += s.len();
        });
        assert_eq!(at, flat.len(), "flat buffer length mismatch");
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, _, s| ok &= s.iter().all(|v| v.is_finite()));
        ok
    }
}

pub(crate) fn visit_matrix(
    name: &str,
    m: &Array2<f64>,
    f: &mut dyn FnMut(&str, &[usize], &[f64]),
) {
    f(name, m.shape(), m.as_slice().expect("standard layout"));
}

pub(crate) fn visit_matrix_mut(
    name: &str,
    m: &mut Array2<f64>,
    f: &mut dyn FnMut(&str, &[usize], &mut [f64]),
) {
    let shape = m.shape().to_vec();
    f(name, &shape, m.as_slice_mut().expect("standard layout"));
}

pub(crate) fn visit_vector(
    name: &str,
    v: &Array1<f64>,
    f: &mut dyn FnMut(&str, &[usize], &[f64]),
) {
    f(name, v.shape(), v.as_slice().expect("standard layout"));
}

pub(crate) fn visit_vector_mut(
    name: &str,
    v: &mut Array1<f64>,
    f: &mut dyn FnMut(&str, &[usize], &mut [f64]),
) {
    let shape = v.shape().to_vec();
    f(name, &shape, v.as_slice_mut().expect("standard layout"));
}

impl Dense {
    pub(crate) fn visit_named(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        visit_matrix(&format!("{prefix}.w"), &self.w, f);
        visit_vector(&format!("{prefix}.b"), &self.b, f);
    }

    pub(crate) fn visit_named_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &[usize], &mut [f64]),
    ) {
        visit_matrix_mut(&format!("{prefix}.w"), &mut self.w, f);
        visit_vector_mut(&format!("{prefix}.b"), &mut self.b, f);
    }
}

impl Mlp2 {
    pub(crate) fn visit_named(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.hidden.visit_named(&format!("{prefix}.hidden"), f);
        self.out.visit_named(&format!("{prefix}.out"), f);
    }

    pub(crate) fn visit_named_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &[usize], &mut [f64]),
    ) {
        self.hidden.visit_named_mut(&format!("{prefix}.hidden"), f);
        self.out.visit_named_mut(&format!("{prefix}.out"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_sums_to_one_and_ce_matches() {
        let l = array![1.0, 2.0, 3.0];
        let p = softmax(l.view());
        assert!((p.sum() - 1.0).abs() < 1e-12);
        let (loss, g) = softmax_cross_entropy(l.view(), 2);
        assert!((loss + p[2].ln()).abs() < 1e-12);
        assert!(g.sum().abs() < 1e-12);
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp2::new(&mut rng, 4, 5, 2);
        let x = array![0.3, -0.7, 0.2, 0.9];
        let (y, cache) = mlp.forward(x.view());
        let dy = array![1.0, -0.5];
        let mut grad = Mlp2::zeros(4, 5, 2);
        let dx = mlp.backward(x.view(), &cache, dy.view(), &mut grad);
        let loss = |x: &Array1<f64>| mlp.forward(x.view()).0.dot(&dy);
        for i in 0..4 {
            let mut xp = x.clone();
            xp[i] += 1e-6;
            let mut xm = x.clone();
            xm[i] -= 1e-6;
            let fd = (loss(&xp) - loss(&xm)) / 2e-6;
            assert!((fd - dx[i]).abs() < 1e-6, "{fd} vs {}", dx[i]);
        }
        assert_eq!(y.len(), 2);
    }
}
