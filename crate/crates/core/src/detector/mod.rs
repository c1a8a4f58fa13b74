//! Sequence-to-sequence LSTM autoencoder over encoded requests.
//!
//! The encoder reads the id sequence and its final per-layer `(h, c)` seed
//! the decoder, which is teacher-forced with `SOS` followed by the target
//! ids. The reconstruction loss is the mean per-position cross-entropy over
//! the active (non-PAD) positions. Requests are flagged when that loss is
//! strictly above a threshold fitted on benign validation traffic.

mod threshold;

pub use threshold::{fit_threshold, ThresholdModel, DEFAULT_QUANTILE};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{encode, CanonicalRequest, EncodedSequence, Vocabulary, EOS, SOS};
use crate::error::{Error, Result};
use crate::neural::activation::softmax_in_place;
use crate::neural::matrix::{axpy, gemv_acc, gemv_t_acc, outer_acc};
use crate::neural::{
    cross_entropy, dropout, lstm_cell_forward, mix_seed, uniform_init, Gradients, LayerState,
    LstmCellParams, LstmStack, Matrix, Mode, ParamId, ParamStore, StackTrace,
};
use crate::training::{train_loop, Trainable};

/// Model and training hyperparameters. The classifier reuses this shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub batch_size: usize,
    pub embed_size: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    /// Probability of zeroing a unit.
    pub dropout_rate: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub max_len: usize,
    pub seed: u64,
    pub clip_norm: f64,
    /// Added to the forget-gate biases at initialization.
    pub forget_bias: f64,
    /// Per-class loss weights (classifier only).
    pub class_weights: Option<Vec<f64>>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            batch_size: 128,
            embed_size: 64,
            hidden_size: 64,
            num_layers: 2,
            dropout_rate: 0.7,
            epochs: 30,
            learning_rate: 1e-3,
            max_len: 1000,
            seed: 0,
            clip_norm: 5.0,
            forget_bias: 0.0,
            class_weights: None,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("batch_size", self.batch_size),
            ("embed_size", self.embed_size),
            ("hidden_size", self.hidden_size),
            ("num_layers", self.num_layers),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.max_len < 2 {
            return Err(Error::invalid("max_len must be at least 2"));
        }
        dropout::check_rate(self.dropout_rate)?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !self.forget_bias.is_finite() {
            return Err(Error::invalid("forget_bias must be finite"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid("clip_norm must be positive"));
        }
        Ok(())
    }
}

/// Outcome of scoring one request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Normal,
    Anomalous,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub decision: Decision,
    pub loss: f64,
}

/// Loss trace from [`train_detector`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean inference-mode loss over the training set before any update.
    pub initial_loss: f64,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

#[derive(Clone, Debug)]
pub struct DetectorModel {
    store: ParamStore,
    embedding: ParamId,
    encoder: LstmStack,
    decoder: LstmStack,
    proj_w: ParamId,
    proj_b: ParamId,
    vocab: Vocabulary,
    config: DetectorConfig,
}

/// Everything the backward pass needs from one forward pass.
struct Pass {
    enc_ids: Vec<u32>,
    dec_ids: Vec<u32>,
    targets: Vec<u32>,
    enc: StackTrace,
    dec: StackTrace,
    probs: Vec<Vec<f64>>,
    loss: f64,
}

pub(crate) fn stack_prefixes(kind: &str, layers: usize) -> Vec<String> {
    (0..layers).map(|l| format!("{kind}.{l}")).collect()
}

impl DetectorModel {
    /// Fresh seeded initialization.
    pub fn new(vocab: Vocabulary, config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, &[0x1417]));
        let v = vocab.size();
        let (e, h) = (config.embed_size, config.hidden_size);
        let mut store = ParamStore::new();
        let embedding = store.add("embedding", uniform_init(v, e, e, &mut rng))?;
        let mut build = |kind: &str, store: &mut ParamStore| -> Result<LstmStack> {
            let mut layers = Vec::with_capacity(config.num_layers);
            for (l, prefix) in stack_prefixes(kind, config.num_layers).iter().enumerate() {
                let input = if l == 0 { e } else { h };
                let cell = LstmCellParams::init(store, prefix, input, h, &mut rng)?;
                if config.forget_bias != 0.0 {
                    cell.shift_forget_bias(store, config.forget_bias);
                }
                layers.push(cell);
            }
            Ok(LstmStack::new(layers))
        };
        let encoder = build("encoder", &mut store)?;
        let decoder = build("decoder", &mut store)?;
        let proj_w = store.add("output.w", uniform_init(v, h, h, &mut rng))?;
        let proj_b = store.add("output.b", uniform_init(v, 1, h, &mut rng))?;
        Ok(DetectorModel {
            store,
            embedding,
            encoder,
            decoder,
            proj_w,
            proj_b,
            vocab,
            config,
        })
    }

    /// Rebuilds a model around a loaded parameter store.
    pub fn from_parts(vocab: Vocabulary, config: DetectorConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let v = vocab.size();
        let (e, h) = (config.embed_size, config.hidden_size);
        let embedding = store.require("embedding", (v, e))?;
        let bind = |kind: &str| -> Result<LstmStack> {
            let layers = stack_prefixes(kind, config.num_layers)
                .iter()
                .enumerate()
                .map(|(l, p)| LstmCellParams::bind(&store, p, if l == 0 { e } else { h }, h))
                .collect::<Result<Vec<_>>>()?;
            Ok(LstmStack::new(layers))
        };
        let encoder = bind("encoder")?;
        let decoder = bind("decoder")?;
        let proj_w = store.require("output.w", (v, h))?;
        let proj_b = store.require("output.b", (v, 1))?;
        if store.len() != 3 + 24 * config.num_layers {
            return Err(Error::invalid("unexpected extra parameters in detector store"));
        }
        Ok(DetectorModel {
            store,
            embedding,
            encoder,
            decoder,
            proj_w,
            proj_b,
            vocab,
            config,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn zero_params(&mut self) {
        for id in self.store.ids().collect::<Vec<_>>() {
            self.store.value_mut(id).fill(0.0);
        }
    }

    pub fn encode(&self, c: &CanonicalRequest) -> Result<EncodedSequence> {
        encode(&self.vocab, c, self.config.max_len)
    }

    fn check_ids(&self, seq: &EncodedSequence) -> Result<()> {
        if seq.true_length == 0 || seq.true_length > seq.ids.len() {
            return Err(Error::invalid("sequence true_length out of range"));
        }
        let v = self.vocab.size() as u32;
        if let Some(&bad) = seq.active().iter().find(|&&id| id >= v) {
            return Err(Error::invalid(format!(
                "id {bad} outside vocabulary of size {v}"
            )));
        }
        Ok(())
    }

    fn embed(&self, ids: &[u32]) -> Vec<Vec<f64>> {
        let e = self.store.value(self.embedding);
        ids.iter().map(|&id| e.row(id as usize).to_vec()).collect()
    }

    fn masks(&self, steps: usize, mode: Mode, tag: u64) -> Result<Vec<Option<Matrix>>> {
        let layers = self.config.num_layers;
        (0..layers)
            .map(|l| match mode {
                Mode::Training { seed } if l + 1 < layers && self.config.dropout_rate > 0.0 => {
                    dropout::dropout_mask(
                        steps,
                        self.config.hidden_size,
                        self.config.dropout_rate,
                        mix_seed(seed, &[tag, l as u64]),
                    )
                    .map(Some)
                }
                _ => Ok(None),
            })
            .collect()
    }

    /// Final top-layer encoder hidden state.
    pub fn encode_latent(&self, seq: &EncodedSequence) -> Result<Vec<f64>> {
        self.check_ids(seq)?;
        let inputs = self.embed(seq.active());
        let trace = self
            .encoder
            .forward(&self.store, &inputs, None, self.masks(inputs.len(), Mode::Inference, 0)?)?;
        Ok(trace.final_states().last().map(|s| s.0.clone()).unwrap_or_default())
    }

    fn forward(&self, seq: &EncodedSequence, mode: Mode) -> Result<Pass> {
        self.check_ids(seq)?;
        let targets = seq.active().to_vec();
        let steps = targets.len();
        let enc_ids = targets.clone();
        let mut dec_ids = Vec::with_capacity(steps);
        dec_ids.push(SOS);
        dec_ids.extend_from_slice(&targets[..steps - 1]);

        let enc = self.encoder.forward(
            &self.store,
            &self.embed(&enc_ids),
            None,
            self.masks(steps, mode, 0)?,
        )?;
        let dec = self.decoder.forward(
            &self.store,
            &self.embed(&dec_ids),
            Some(enc.final_states()),
            self.masks(steps, mode, 1)?,
        )?;
        let w = self.store.value(self.proj_w);
        let b = self.store.value(self.proj_b).as_slice();
        let mut probs = Vec::with_capacity(steps);
        let mut loss = 0.0;
        for (h, &y) in dec.top_outputs().iter().zip(&targets) {
            let mut logits = b.to_vec();
            gemv_acc(w, h, &mut logits);
            softmax_in_place(&mut logits);
            loss += cross_entropy(&logits, y as usize);
            probs.push(logits);
        }
        loss /= steps as f64;
        Ok(Pass {
            enc_ids,
            dec_ids,
            targets,
            enc,
            dec,
            probs,
            loss,
        })
    }

    fn backward(&self, pass: &Pass) -> Result<Gradients> {
        let mut grads = self.store.zero_gradients();
        let steps = pass.targets.len();
        let scale = 1.0 / steps as f64;
        let w = self.store.value(self.proj_w);
        let mut d_top = Vec::with_capacity(steps);
        for ((p, &y), h) in pass.probs.iter().zip(&pass.targets).zip(pass.dec.top_outputs()) {
            let mut dlogit: Vec<f64> = p.iter().map(|v| v * scale).collect();
            dlogit[y as usize] -= scale;
            outer_acc(grads.get_mut(self.proj_w), &dlogit, h);
            axpy(1.0, &dlogit, grads.get_mut(self.proj_b).as_mut_slice());
            let mut dh = vec![0.0; self.config.hidden_size];
            gemv_t_acc(w, &dlogit, &mut dh);
            d_top.push(dh);
        }
        let (d_dec_in, d_dec_init) =
            self.decoder
                .backward(&self.store, &pass.dec, &d_top, None, &mut grads)?;
        let zeros = vec![vec![0.0; self.config.hidden_size]; steps];
        let (d_enc_in, _) =
            self.encoder
                .backward(&self.store, &pass.enc, &zeros, Some(&d_dec_init), &mut grads)?;
        let de = grads.get_mut(self.embedding);
        for (ids, d) in [(&pass.dec_ids, &d_dec_in), (&pass.enc_ids, &d_enc_in)] {
            for (&id, g) in ids.iter().zip(d) {
                axpy(1.0, g, de.row_mut(id as usize));
            }
        }
        Ok(grads)
    }

    /// Mean teacher-forced cross-entropy over the active positions.
    pub fn reconstruction_loss(&self, seq: &EncodedSequence, mode: Mode) -> Result<f64> {
        Ok(self.forward(seq, mode)?.loss)
    }

    /// Loss and parameter gradients for one sequence.
    pub fn loss_and_gradients(&self, seq: &EncodedSequence, mode: Mode) -> Result<(f64, Gradients)> {
        let pass = self.forward(seq, mode)?;
        let grads = self.backward(&pass)?;
        Ok((pass.loss, grads))
    }

    pub fn score(&self, c: &CanonicalRequest) -> Result<f64> {
        self.reconstruction_loss(&self.encode(c)?, Mode::Inference)
    }

    /// Free-running argmax decode from the latent state. Returns the emitted
    /// ids including the terminating EOS (if one was emitted within
    /// `max_len` steps).
    pub fn greedy_decode(&self, seq: &EncodedSequence) -> Result<Vec<u32>> {
        self.check_ids(seq)?;
        let inputs = self.embed(seq.active());
        let enc = self
            .encoder
            .forward(&self.store, &inputs, None, self.masks(inputs.len(), Mode::Inference, 0)?)?;
        let mut states: Vec<LayerState> = enc.final_states().to_vec();
        let e = self.store.value(self.embedding);
        let w = self.store.value(self.proj_w);
        let b = self.store.value(self.proj_b).as_slice();
        let mut prev = SOS;
        let mut out = Vec::new();
        for _ in 0..self.config.max_len {
            let mut x = e.row(prev as usize).to_vec();
            for (cell, state) in self.decoder.layers.iter().zip(states.iter_mut()) {
                let (h, c, _) = lstm_cell_forward(&x, &state.0, &state.1, cell, &self.store)?;
                x = h.clone();
                *state = (h, c);
            }
            let mut logits = b.to_vec();
            gemv_acc(w, &x, &mut logits);
            let next = argmax(&logits) as u32;
            out.push(next);
            if next == EOS {
                break;
            }
            prev = next;
        }
        Ok(out)
    }

    /// Continues training from the current weights.
    pub fn fit(&mut self, corpus: &[EncodedSequence], cfg: &DetectorConfig) -> Result<TrainReport> {
        if corpus.is_empty() {
            return Err(Error::invalid("detector training corpus is empty"));
        }
        cfg.validate()?;
        for seq in corpus {
            self.check_ids(seq)?;
        }
        let initial_loss = mean_loss(self, corpus)?;
        let lengths: Vec<usize> = corpus.iter().map(|s| s.true_length).collect();
        let mut run = TrainRun { model: self, corpus };
        let epoch_losses = train_loop(&mut run, &lengths, cfg)?;
        Ok(TrainReport {
            initial_loss,
            epoch_losses,
        })
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn mean_loss(m: &DetectorModel, corpus: &[EncodedSequence]) -> Result<f64> {
    let mut total = 0.0;
    for s in corpus {
        total += m.reconstruction_loss(s, Mode::Inference)?;
    }
    Ok(total / corpus.len() as f64)
}

struct TrainRun<'a> {
    model: &'a mut DetectorModel,
    corpus: &'a [EncodedSequence],
}

impl Trainable for TrainRun<'_> {
    fn params(&self) -> &ParamStore {
        &self.model.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.model.store
    }

    fn example_grads(&self, index: usize, mode: Mode) -> Result<(f64, Gradients)> {
        self.model.loss_and_gradients(&self.corpus[index], mode)
    }
}

/// Initializes a model over `vocab` and trains it on benign sequences.
pub fn train_detector(
    corpus: &[EncodedSequence],
    vocab: Vocabulary,
    cfg: &DetectorConfig,
) -> Result<(DetectorModel, TrainReport)> {
    if corpus.is_empty() {
        return Err(Error::invalid("detector training corpus is empty"));
    }
    let mut model = DetectorModel::new(vocab, cfg.clone())?;
    let report = model.fit(corpus, cfg)?;
    Ok((model, report))
}

/// Inference-mode loss compared strictly against `theta`.
pub fn detect(m: &DetectorModel, t: &ThresholdModel, c: &CanonicalRequest) -> Result<Detection> {
    let loss = m.score(c)?;
    Ok(Detection {
        decision: t.decide(loss),
        loss,
    })
}
