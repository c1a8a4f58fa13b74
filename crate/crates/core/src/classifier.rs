//! Seven-way LSTM attack classifier for requests the detector flags.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{encode, CanonicalRequest, EncodedSequence, Vocabulary};
use crate::detector::{argmax, stack_prefixes, DetectorConfig};
use crate::error::{Error, Result};
use crate::neural::activation::softmax_in_place;
use crate::neural::matrix::{axpy, gemv_acc, gemv_t_acc, outer_acc};
use crate::neural::{
    cross_entropy, dropout, mix_seed, uniform_init, Gradients, LstmCellParams, LstmStack, Matrix, Mode,
    ParamId, ParamStore,
};
use crate::training::{train_loop, Trainable};

pub type ClassifierConfig = DetectorConfig;

pub const NUM_CLASSES: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttackClass {
    OsCommanding = 0,
    PathTraversal = 1,
    SqlInjection = 2,
    XPathInjection = 3,
    LdapInjection = 4,
    Ssi = 5,
    Xss = 6,
}

impl AttackClass {
    pub const ALL: [AttackClass; NUM_CLASSES] = [
        AttackClass::OsCommanding,
        AttackClass::PathTraversal,
        AttackClass::SqlInjection,
        AttackClass::XPathInjection,
        AttackClass::LdapInjection,
        AttackClass::Ssi,
        AttackClass::Xss,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            AttackClass::OsCommanding => "OsCommanding",
            AttackClass::PathTraversal => "PathTraversal",
            AttackClass::SqlInjection => "SqlInjection",
            AttackClass::XPathInjection => "XPathInjection",
            AttackClass::LdapInjection => "LdapInjection",
            AttackClass::Ssi => "Ssi",
            AttackClass::Xss => "Xss",
        }
    }
}

impl fmt::Display for AttackClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown attack class {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledExample {
    pub canonical: CanonicalRequest,
    pub label: AttackClass,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: AttackClass,
    pub distribution: [f64; NUM_CLASSES],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierEvaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
}

/// Embedding, stacked LSTM with dropout after every layer, and a projection
/// of the final step's top hidden state onto the seven classes.
#[derive(Clone, Debug)]
pub struct ClassifierModel {
    store: ParamStore,
    embedding: ParamId,
    layers: LstmStack,
    proj_w: ParamId,
    proj_b: ParamId,
    vocab: Vocabulary,
    config: ClassifierConfig,
}

struct Pass {
    ids: Vec<u32>,
    trace: crate::neural::StackTrace,
    probs: Vec<f64>,
    label: usize,
    weight: f64,
    loss: f64,
}

impl ClassifierModel {
    pub fn new(vocab: Vocabulary, config: ClassifierConfig) -> Result<Self> {
        config.validate()?;
        check_weights(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, &[0xc1a55]));
        let v = vocab.size();
        let (e, h) = (config.embed_size, config.hidden_size);
        let mut store = ParamStore::new();
        let embedding = store.add("embedding", uniform_init(v, e, e, &mut rng))?;
        let mut layers = Vec::with_capacity(config.num_layers);
        for (l, prefix) in stack_prefixes("lstm", config.num_layers).iter().enumerate() {
            let input = if l == 0 { e } else { h };
            let cell = LstmCellParams::init(&mut store, prefix, input, h, &mut rng)?;
            if config.forget_bias != 0.0 {
                cell.shift_forget_bias(&mut store, config.forget_bias);
            }
            layers.push(cell);
        }
        let proj_w = store.add("output.w", uniform_init(NUM_CLASSES, h, h, &mut rng))?;
        let proj_b = store.add("output.b", uniform_init(NUM_CLASSES, 1, h, &mut rng))?;
        Ok(ClassifierModel {
            store,
            embedding,
            layers: LstmStack::new(layers),
            proj_w,
            proj_b,
            vocab,
            config,
        })
    }

    pub fn from_parts(vocab: Vocabulary, config: ClassifierConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        check_weights(&config)?;
        let v = vocab.size();
        let (e, h) = (config.embed_size, config.hidden_size);
        let embedding = store.require("embedding", (v, e))?;
        let layers = stack_prefixes("lstm", config.num_layers)
            .iter()
            .enumerate()
            .map(|(l, p)| LstmCellParams::bind(&store, p, if l == 0 { e } else { h }, h))
            .collect::<Result<Vec<_>>>()?;
        let proj_w = store.require("output.w", (NUM_CLASSES, h))?;
        let proj_b = store.require("output.b", (NUM_CLASSES, 1))?;
        if store.len() != 3 + 12 * config.num_layers {
            return Err(Error::invalid("unexpected extra parameters in classifier store"));
        }
        Ok(ClassifierModel {
            store,
            embedding,
            layers: LstmStack::new(layers),
            proj_w,
            proj_b,
            vocab,
            config,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &ClassifierConfig {
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

    fn masks(&self, steps: usize, mode: Mode) -> Result<Vec<Option<Matrix>>> {
        (0..self.config.num_layers)
            .map(|l| match mode {
                Mode::Training { seed } if self.config.dropout_rate > 0.0 => dropout::dropout_mask(
                    steps,
                    self.config.hidden_size,
                    self.config.dropout_rate,
                    mix_seed(seed, &[2, l as u64]),
                )
                .map(Some),
                _ => Ok(None),
            })
            .collect()
    }

    fn logits_for(&self, seq: &EncodedSequence, mode: Mode) -> Result<(Vec<u32>, crate::neural::StackTrace, Vec<f64>)> {
        if seq.true_length == 0 || seq.true_length > seq.ids.len() {
            return Err(Error::invalid("sequence true_length out of range"));
        }
        let v = self.vocab.size() as u32;
        let ids = seq.active().to_vec();
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::invalid(format!("id {bad} outside vocabulary of size {v}")));
        }
        let e = self.store.value(self.embedding);
        let inputs: Vec<Vec<f64>> = ids.iter().map(|&id| e.row(id as usize).to_vec()).collect();
        let trace = self
            .layers
            .forward(&self.store, &inputs, None, self.masks(ids.len(), mode)?)?;
        let last = trace.top_outputs().last().expect("at least one step");
        let mut logits = self.store.value(self.proj_b).as_slice().to_vec();
        gemv_acc(self.store.value(self.proj_w), last, &mut logits);
        Ok((ids, trace, logits))
    }

    fn forward(&self, seq: &EncodedSequence, label: AttackClass, mode: Mode) -> Result<Pass> {
        let (ids, trace, mut probs) = self.logits_for(seq, mode)?;
        softmax_in_place(&mut probs);
        let label = label.code();
        let weight = self
            .config
            .class_weights
            .as_ref()
            .map_or(1.0, |w| w[label]);
        let loss = weight * cross_entropy(&probs, label);
        Ok(Pass {
            ids,
            trace,
            probs,
            label,
            weight,
            loss,
        })
    }

    fn backward(&self, pass: &Pass) -> Result<Gradients> {
        let mut grads = self.store.zero_gradients();
        let steps = pass.ids.len();
        let mut dlogit: Vec<f64> = pass.probs.iter().map(|p| p * pass.weight).collect();
        dlogit[pass.label] -= pass.weight;
        let last = pass.trace.top_outputs().last().expect("at least one step");
        outer_acc(grads.get_mut(self.proj_w), &dlogit, last);
        axpy(1.0, &dlogit, grads.get_mut(self.proj_b).as_mut_slice());
        let mut d_top = vec![vec![0.0; self.config.hidden_size]; steps];
        gemv_t_acc(self.store.value(self.proj_w), &dlogit, &mut d_top[steps - 1]);
        let (d_in, _) = self
            .layers
            .backward(&self.store, &pass.trace, &d_top, None, &mut grads)?;
        let de = grads.get_mut(self.embedding);
        for (&id, g) in pass.ids.iter().zip(&d_in) {
            axpy(1.0, g, de.row_mut(id as usize));
        }
        Ok(grads)
    }

    /// (Weighted) cross-entropy of the true label.
    pub fn loss(&self, seq: &EncodedSequence, label: AttackClass, mode: Mode) -> Result<f64> {
        Ok(self.forward(seq, label, mode)?.loss)
    }

    pub fn loss_and_gradients(
        &self,
        seq: &EncodedSequence,
        label: AttackClass,
        mode: Mode,
    ) -> Result<(f64, Gradients)> {
        let pass = self.forward(seq, label, mode)?;
        let g = self.backward(&pass)?;
        Ok((pass.loss, g))
    }

    pub fn predict_sequence(&self, seq: &EncodedSequence) -> Result<Prediction> {
        let (_, _, mut probs) = self.logits_for(seq, Mode::Inference)?;
        softmax_in_place(&mut probs);
        let class = AttackClass::from_code(argmax(&probs)).expect("seven outputs");
        let mut distribution = [0.0; NUM_CLASSES];
        distribution.copy_from_slice(&probs);
        Ok(Prediction {
            class,
            distribution,
        })
    }

    /// Most likely class and the full distribution. Ties go to the lowest
    /// class code.
    pub fn predict(&self, c: &CanonicalRequest) -> Result<Prediction> {
        self.predict_sequence(&self.encode(c)?)
    }

    pub fn fit(&mut self, data: &[LabeledExample], cfg: &ClassifierConfig) -> Result<Vec<f64>> {
        if data.is_empty() {
            return Err(Error::invalid("classifier training set is empty"));
        }
        cfg.validate()?;
        check_weights(cfg)?;
        self.config.class_weights = cfg.class_weights.clone();
        let encoded = data
            .iter()
            .map(|ex| Ok((self.encode(&ex.canonical)?, ex.label)))
            .collect::<Result<Vec<_>>>()?;
        let lengths: Vec<usize> = encoded.iter().map(|(s, _)| s.true_length).collect();
        let mut run = TrainRun {
            model: self,
            data: &encoded,
        };
        train_loop(&mut run, &lengths, cfg)
    }
}

fn check_weights(cfg: &ClassifierConfig) -> Result<()> {
    if let Some(w) = &cfg.class_weights {
        if w.len() != NUM_CLASSES || w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::invalid("class_weights needs 7 non-negative finite values"));
        }
    }
    Ok(())
}

struct TrainRun<'a> {
    model: &'a mut ClassifierModel,
    data: &'a [(EncodedSequence, AttackClass)],
}

impl Trainable for TrainRun<'_> {
    fn params(&self) -> &ParamStore {
        &self.model.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.model.store
    }

    fn example_grads(&self, index: usize, mode: Mode) -> Result<(f64, Gradients)> {
        let (seq, label) = &self.data[index];
        self.model.loss_and_gradients(seq, *label, mode)
    }
}

/// Fresh model trained on labeled attacks; returns it with the per-epoch
/// mean loss.
pub fn train_classifier(
    data: &[LabeledExample],
    vocab: Vocabulary,
    cfg: &ClassifierConfig,
) -> Result<(ClassifierModel, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::invalid("classifier training set is empty"));
    }
    let mut model = ClassifierModel::new(vocab, cfg.clone())?;
    let trace = model.fit(data, cfg)?;
    Ok((model, trace))
}

pub fn evaluate_classifier(m: &ClassifierModel, data: &[LabeledExample]) -> Result<ClassifierEvaluation> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    for ex in data {
        let p = m.predict(&ex.canonical)?;
        confusion[ex.label.code()][p.class.code()] += 1;
    }
    Ok(ClassifierEvaluation {
        accuracy: accuracy_of(&confusion),
        confusion,
    })
}

pub fn accuracy_of(confusion: &[[usize; NUM_CLASSES]; NUM_CLASSES]) -> f64 {
    let total: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..NUM_CLASSES).map(|i| confusion[i][i]).sum();
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}
