//! LSTM cell, stacked sequence runner and backpropagation through time.
//!
//! Gate order everywhere is input, forget, output, candidate.

use rand_chacha::ChaCha8Rng;

use super::activation::sigmoid_scalar;
use super::matrix::{gemv_acc, gemv_t_acc, outer_acc};
use super::{uniform_init, Gradients, Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};

pub const GATES: [&str; 4] = ["i", "f", "o", "g"];

/// Handles to one cell's weights inside a [`ParamStore`].
///
/// `w[k]` is `hidden x input`, `u[k]` is `hidden x hidden`, `b[k]` is
/// `hidden x 1`, for gate `k` in [`GATES`] order.
#[derive(Clone, Debug)]
pub struct LstmCellParams {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w: [ParamId; 4],
    pub u: [ParamId; 4],
    pub b: [ParamId; 4],
}

impl LstmCellParams {
    /// Registers a freshly initialized cell under `prefix`.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut w = Vec::with_capacity(4);
        let mut u = Vec::with_capacity(4);
        let mut b = Vec::with_capacity(4);
        for gate in GATES {
            w.push(store.add(
                format!("{prefix}.w_{gate}"),
                uniform_init(hidden_size, input_size, input_size, rng),
            )?);
            u.push(store.add(
                format!("{prefix}.u_{gate}"),
                uniform_init(hidden_size, hidden_size, hidden_size, rng),
            )?);
            b.push(store.add(
                format!("{prefix}.b_{gate}"),
                uniform_init(hidden_size, 1, hidden_size, rng),
            )?);
        }
        Ok(LstmCellParams {
            input_size,
            hidden_size,
            w: [w[0], w[1], w[2], w[3]],
            u: [u[0], u[1], u[2], u[3]],
            b: [b[0], b[1], b[2], b[3]],
        })
    }

    /// Adds `v` to every forget-gate bias.
    pub fn shift_forget_bias(&self, store: &mut ParamStore, v: f64) {
        store.value_mut(self.b[1]).as_mut_slice().iter_mut().for_each(|x| *x += v);
    }

    /// Resolves an existing cell under `prefix`, checking every shape.
    pub fn bind(store: &ParamStore, prefix: &str, input_size: usize, hidden_size: usize) -> Result<Self> {
        let mut ids = [[ParamId(0); 4]; 3];
        for (k, gate) in GATES.iter().enumerate() {
            ids[0][k] = store.require(&format!("{prefix}.w_{gate}"), (hidden_size, input_size))?;
            ids[1][k] = store.require(&format!("{prefix}.u_{gate}"), (hidden_size, hidden_size))?;
            ids[2][k] = store.require(&format!("{prefix}.b_{gate}"), (hidden_size, 1))?;
        }
        Ok(LstmCellParams {
            input_size,
            hidden_size,
            w: ids[0],
            u: ids[1],
            b: ids[2],
        })
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.w.iter().chain(&self.u).chain(&self.b).copied()
    }
}

/// Intermediates of one cell step needed by the backward pass.
#[derive(Clone, Debug)]
pub struct CellCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: [Vec<f64>; 4],
    tanh_c: Vec<f64>,
}

fn check_len(op: &'static str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Dimension {
            op,
            left: (got, 1),
            right: (want, 1),
        });
    }
    Ok(())
}

/// One LSTM step: returns `(h_t, c_t, cache)`.
pub fn lstm_cell_forward(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    p: &LstmCellParams,
    store: &ParamStore,
) -> Result<(Vec<f64>, Vec<f64>, CellCache)> {
    check_len("lstm input", x.len(), p.input_size)?;
    check_len("lstm hidden", h_prev.len(), p.hidden_size)?;
    check_len("lstm cell", c_prev.len(), p.hidden_size)?;
    Ok(cell_forward_unchecked(x, h_prev, c_prev, p, store))
}

fn cell_forward_unchecked(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    p: &LstmCellParams,
    store: &ParamStore,
) -> (Vec<f64>, Vec<f64>, CellCache) {
    let hidden = p.hidden_size;
    let mut gates: [Vec<f64>; 4] = Default::default();
    for k in 0..4 {
        let mut pre = store.value(p.b[k]).as_slice().to_vec();
        gemv_acc(store.value(p.w[k]), x, &mut pre);
        gemv_acc(store.value(p.u[k]), h_prev, &mut pre);
        if k == 3 {
            pre.iter_mut().for_each(|v| *v = v.tanh());
        } else {
            pre.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
        }
        gates[k] = pre;
    }
    let mut c = Vec::with_capacity(hidden);
    let mut h = Vec::with_capacity(hidden);
    let mut tanh_c = Vec::with_capacity(hidden);
    for j in 0..hidden {
        let cj = gates[1][j] * c_prev[j] + gates[0][j] * gates[3][j];
        let tc = cj.tanh();
        c.push(cj);
        tanh_c.push(tc);
        h.push(gates[2][j] * tc);
    }
    let cache = CellCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gates,
        tanh_c,
    };
    (h, c, cache)
}

/// Backward through one step. `dh` and `dc` are the gradients arriving at
/// `h_t` and `c_t`; returns `(dx, dh_prev, dc_prev)` and accumulates weight
/// gradients into `grads`.
pub fn lstm_cell_backward(
    dh: &[f64],
    dc: &[f64],
    cache: &CellCache,
    p: &LstmCellParams,
    store: &ParamStore,
    grads: &mut Gradients,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hidden = p.hidden_size;
    let [i, f, o, g] = &cache.gates;
    let mut dpre: [Vec<f64>; 4] = [
        vec![0.0; hidden],
        vec![0.0; hidden],
        vec![0.0; hidden],
        vec![0.0; hidden],
    ];
    let mut dc_prev = vec![0.0; hidden];
    for j in 0..hidden {
        let tc = cache.tanh_c[j];
        let dcj = dc[j] + dh[j] * o[j] * (1.0 - tc * tc);
        dpre[2][j] = dh[j] * tc * o[j] * (1.0 - o[j]);
        dpre[0][j] = dcj * g[j] * i[j] * (1.0 - i[j]);
        dpre[3][j] = dcj * i[j] * (1.0 - g[j] * g[j]);
        dpre[1][j] = dcj * cache.c_prev[j] * f[j] * (1.0 - f[j]);
        dc_prev[j] = dcj * f[j];
    }
    let mut dx = vec![0.0; p.input_size];
    let mut dh_prev = vec![0.0; hidden];
    for k in 0..4 {
        outer_acc(grads.get_mut(p.w[k]), &dpre[k], &cache.x);
        outer_acc(grads.get_mut(p.u[k]), &dpre[k], &cache.h_prev);
        super::matrix::axpy(1.0, &dpre[k], grads.get_mut(p.b[k]).as_mut_slice());
        gemv_t_acc(store.value(p.w[k]), &dpre[k], &mut dx);
        gemv_t_acc(store.value(p.u[k]), &dpre[k], &mut dh_prev);
    }
    (dx, dh_prev, dc_prev)
}

/// Initial or final `(h, c)` of one layer.
pub type LayerState = (Vec<f64>, Vec<f64>);

/// Layers of LSTM cells run over a sequence, each layer feeding the next.
#[derive(Clone, Debug)]
pub struct LstmStack {
    pub layers: Vec<LstmCellParams>,
}

/// Everything recorded by [`LstmStack::forward`].
#[derive(Clone, Debug, Default)]
pub struct StackTrace {
    caches: Vec<Vec<CellCache>>,
    /// Per layer, per step hidden output after the layer's dropout mask.
    outputs: Vec<Vec<Vec<f64>>>,
    finals: Vec<LayerState>,
    masks: Vec<Option<Matrix>>,
}

impl StackTrace {
    pub fn steps(&self) -> usize {
        self.outputs.first().map_or(0, Vec::len)
    }

    /// Top-layer outputs (post-dropout) for every step.
    pub fn top_outputs(&self) -> &[Vec<f64>] {
        self.outputs.last().map_or(&[], Vec::as_slice)
    }

    /// Raw final `(h, c)` of every layer, before any dropout.
    pub fn final_states(&self) -> &[LayerState] {
        &self.finals
    }
}

impl LstmStack {
    pub fn new(layers: Vec<LstmCellParams>) -> Self {
        LstmStack { layers }
    }

    pub fn hidden_size(&self) -> usize {
        self.layers.last().map_or(0, |l| l.hidden_size)
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(LstmCellParams::param_ids)
    }

    /// Runs the stack over `inputs`.
    ///
    /// `init` seeds each layer's state (zeros when `None`). `masks[l]`, when
    /// present, is a `steps x hidden` dropout mask applied to layer `l`'s
    /// output before it is passed upward (or returned, for the top layer).
    pub fn forward(
        &self,
        store: &ParamStore,
        inputs: &[Vec<f64>],
        init: Option<&[LayerState]>,
        masks: Vec<Option<Matrix>>,
    ) -> Result<StackTrace> {
        if masks.len() != self.layers.len() {
            return Err(Error::invalid("one dropout slot per layer required"));
        }
        if let Some(init) = init {
            if init.len() != self.layers.len() {
                return Err(Error::invalid("one initial state per layer required"));
            }
        }
        let steps = inputs.len();
        let mut trace = StackTrace {
            caches: Vec::with_capacity(self.layers.len()),
            outputs: Vec::with_capacity(self.layers.len()),
            finals: Vec::with_capacity(self.layers.len()),
            masks,
        };
        for (l, cell) in self.layers.iter().enumerate() {
            let (mut h, mut c) = match init {
                Some(s) => s[l].clone(),
                None => (vec![0.0; cell.hidden_size], vec![0.0; cell.hidden_size]),
            };
            check_len("lstm init hidden", h.len(), cell.hidden_size)?;
            check_len("lstm init cell", c.len(), cell.hidden_size)?;
            if let Some(m) = &trace.masks[l] {
                if m.shape() != (steps, cell.hidden_size) {
                    return Err(Error::Dimension {
                        op: "dropout mask",
                        left: m.shape(),
                        right: (steps, cell.hidden_size),
                    });
                }
            }
            let mut caches = Vec::with_capacity(steps);
            let mut outs = Vec::with_capacity(steps);
            for t in 0..steps {
                let x: &[f64] = if l == 0 {
                    &inputs[t]
                } else {
                    &trace.outputs[l - 1][t]
                };
                check_len("lstm input", x.len(), cell.input_size)?;
                let (h_t, c_t, cache) = cell_forward_unchecked(x, &h, &c, cell, store);
                let mut out = h_t.clone();
                if let Some(m) = &trace.masks[l] {
                    out.iter_mut().zip(m.row(t)).for_each(|(v, k)| *v *= k);
                }
                caches.push(cache);
                outs.push(out);
                h = h_t;
                c = c_t;
            }
            trace.caches.push(caches);
            trace.outputs.push(outs);
            trace.finals.push((h, c));
        }
        Ok(trace)
    }

    /// Backpropagation through time.
    ///
    /// `d_top[t]` is the gradient at the top layer's (post-dropout) output at
    /// step `t`. `d_final[l]`, when given, is the gradient at layer `l`'s raw
    /// final `(h, c)`. Returns the gradient for every input vector and for
    /// every layer's initial state.
    pub fn backward(
        &self,
        store: &ParamStore,
        trace: &StackTrace,
        d_top: &[Vec<f64>],
        d_final: Option<&[LayerState]>,
        grads: &mut Gradients,
    ) -> Result<(Vec<Vec<f64>>, Vec<LayerState>)> {
        if trace.caches.len() != self.layers.len() {
            return Err(Error::State(
                "backward called without a completed forward pass".into(),
            ));
        }
        let steps = trace.steps();
        if d_top.len() != steps {
            return Err(Error::invalid(format!(
                "expected {steps} output gradients, got {}",
                d_top.len()
            )));
        }
        let mut d_out: Vec<Vec<f64>> = d_top.to_vec();
        let mut d_init = vec![(Vec::new(), Vec::new()); self.layers.len()];
        for l in (0..self.layers.len()).rev() {
            let cell = &self.layers[l];
            let hidden = cell.hidden_size;
            if let Some(m) = &trace.masks[l] {
                for (t, d) in d_out.iter_mut().enumerate() {
                    d.iter_mut().zip(m.row(t)).for_each(|(v, k)| *v *= k);
                }
            }
            let (mut dh_next, mut dc_next) = match d_final {
                Some(df) => df[l].clone(),
                None => (vec![0.0; hidden], vec![0.0; hidden]),
            };
            let mut d_in = vec![Vec::new(); steps];
            for t in (0..steps).rev() {
                let mut dh = std::mem::take(&mut d_out[t]);
                dh.iter_mut().zip(&dh_next).for_each(|(a, b)| *a += b);
                let (dx, dh_prev, dc_prev) =
                    lstm_cell_backward(&dh, &dc_next, &trace.caches[l][t], cell, store, grads);
                d_in[t] = dx;
                dh_next = dh_prev;
                dc_next = dc_prev;
            }
            d_init[l] = (dh_next, dc_next);
            d_out = d_in;
        }
        Ok((d_out, d_init))
    }
}
