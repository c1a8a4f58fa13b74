use super::{Matrix, ParamStore};

/// Adam moments and hyperparameters for one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        Self::with_betas(store, learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(store: &ParamStore, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<Matrix> = store
            .iter()
            .map(|(_, v)| Matrix::zeros(v.rows(), v.cols()))
            .collect();
        AdamState {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update using the gradients held in `store`.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) {
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, eps) = (state.learning_rate, state.epsilon);
    let (values, grads) = store.values_and_grads_mut();
    for (((w, g), m), v) in values
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        let w = w.as_mut_slice();
        let g = g.as_slice();
        let m = m.as_mut_slice();
        let v = v.as_mut_slice();
        for i in 0..w.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
