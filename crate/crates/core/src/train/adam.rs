use serde::{Deserialize, Serialize};

use crate::nn::Parameters;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moments, flat in [`Parameters::flatten`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        AdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("{params} parameters, {grads} gradients, {state} moments")]
pub struct ShapeMismatch {
    pub params: usize,
    pub grads: usize,
    pub state: usize,
}

/// One bias-corrected Adam update. `mask`, when given, selects which named
/// tensors move; the rest keep their values and moments.
pub fn adam_step<P: Parameters>(
    params: &mut P,
    grads: &P,
    st: &mut AdamState,
    cfg: &AdamConfig,
    mask: Option<&dyn Fn(&str) -> bool>,
) -> Result<(), ShapeMismatch> {
    let g = grads.flatten();
    let n = params.num_params();
    if g.len() != n || st.m.len() != n || st.v.len() != n {
        return Err(ShapeMismatch {
            params: n,
            grads: g.len(),
            state: st.m.len(),
        });
    }
    st.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(st.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(st.t as i32);
    let mut at = 0;
    params.visit_mut(&mut |name, _, s| {
        let live = mask.is_none_or(|m| m(name));
        for p in s.iter_mut() {
            if live {
                let gi = g[at];
                st.m[at] = cfg.beta1 * st.m[at] + (1.0 - cfg.beta1) * gi;
                st.v[at] = cfg.beta2 * st.v[at] + (1.0 - cfg.beta2) * gi * gi;
                let mh = st.m[at] / bc1;
                let vh = st.v[at] / bc2;
                *p -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            }
            at += 1;
        }
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{visit_vector, visit_vector_mut};
    use ndarray::{array, Array1};

    #[derive(Debug, Clone, PartialEq)]
    struct Vec1(Array1<f64>);

    impl Parameters for Vec1 {
        fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
            visit_vector("x", &self.0, f);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
            visit_vector_mut("x", &mut self.0, f);
        }
    }

    const CFG: AdamConfig = AdamConfig {
        lr: 0.1,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Vec1(array![1.0, -2.0]);
        let mut st = AdamState::new(2);
        adam_step(&mut p, &Vec1(array![0.0, 0.0]), &mut st, &CFG, None).unwrap();
        assert_eq!(p.0, array![1.0, -2.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_by_hand() {
        let mut p = Vec1(array![1.0]);
        let mut st = AdamState::new(1);
        adam_step(&mut p, &Vec1(array![0.5]), &mut st, &CFG, None).unwrap();
        // m̂ = 0.5, v̂ = 0.25
        let want = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((p.0[0] - want).abs() < 1e-15);
        assert!((p.0[0] - 0.9).abs() < 1e-7);
    }

    #[test]
    fn consecutive_steps_replay_identically() {
        let grads = [array![0.3, -0.1], array![-0.2, 0.4], array![0.05, 0.0]];
        let run = || {
            let mut p = Vec1(array![0.5, 0.5]);
            let mut st = AdamState::new(2);
            for g in &grads {
                adam_step(&mut p, &Vec1(g.clone()), &mut st, &CFG, None).unwrap();
            }
            (p, st)
        };
        assert_eq!(run(), run());
        // manual scalar recurrence for the first coordinate
        let (mut m, mut v, mut x) = (0.0, 0.0, 0.5);
        for (t, g) in grads.iter().enumerate() {
            let g = g[0];
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let vh = v / (1.0 - 0.999f64.powi(t as i32 + 1));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((run().0 .0[0] - x).abs() < 1e-15);
    }

    #[test]
    fn mask_freezes_tensors() {
        let mut p = Vec1(array![1.0]);
        let mut st = AdamState::new(1);
        let frozen = |_: &str| false;
        adam_step(&mut p, &Vec1(array![1.0]), &mut st, &CFG, Some(&frozen)).unwrap();
        assert_eq!(p.0[0], 1.0);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut p = Vec1(array![1.0]);
        let mut st = AdamState::new(2);
        assert!(adam_step(&mut p, &Vec1(array![1.0]), &mut st, &CFG, None).is_err());
    }
}
