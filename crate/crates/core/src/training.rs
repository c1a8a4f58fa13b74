//! Mini-batch loop shared by the detector and the classifier.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::neural::{adam_step, mix_seed, AdamState, Gradients, Mode, ParamStore};

pub(crate) trait Trainable {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn example_grads(&self, index: usize, mode: Mode) -> Result<(f64, Gradients)>;
}

/// Batches of similar length. Composition is fixed; only the order of the
/// batches is shuffled each epoch.
pub(crate) fn length_buckets(lengths: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| (lengths[i], i));
    order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

/// Runs `cfg.epochs` epochs of clipped Adam and returns the mean training
/// loss of each epoch.
pub(crate) fn train_loop<M: Trainable>(
    model: &mut M,
    lengths: &[usize],
    cfg: &DetectorConfig,
) -> Result<Vec<f64>> {
    if lengths.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mut batches = length_buckets(lengths, cfg.batch_size);
    let mut adam = AdamState::new(model.params(), cfg.learning_rate);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, &[0x5eed, epoch as u64]));
        batches.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in &batches {
            let mut acc = model.params().zero_gradients();
            for &i in batch {
                let mode = Mode::Training {
                    seed: mix_seed(cfg.seed, &[step, i as u64]),
                };
                let (loss, g) = model.example_grads(i, mode)?;
                total += loss;
                acc.accumulate(&g);
            }
            acc.scale(1.0 / batch.len() as f64);
            let store = model.params_mut();
            store.set_grads(acc)?;
            store.clip_grad_norm(cfg.clip_norm);
            adam_step(store, &mut adam);
            step += 1;
        }
        let mean = total / lengths.len() as f64;
        log_epoch(epoch, mean);
        trace.push(mean);
    }
    Ok(trace)
}

fn log_epoch(epoch: usize, mean: f64) {
    if std::env::var_os("REQSENTRY_VERBOSE").is_some() {
        eprintln!("epoch {epoch:>3}  mean loss {mean:.5}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buckets_group_by_length() {
        let b = length_buckets(&[5, 1, 3, 1, 9], 2);
        assert_eq!(b, vec![vec![1, 3], vec![2, 0], vec![4]]);
    }
}
