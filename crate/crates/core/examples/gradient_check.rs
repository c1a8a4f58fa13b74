//! Compare backpropagated gradients against central differences for both
//! networks on a tiny configuration.

use reqsentry::classifier::{AttackClass, ClassifierModel};
use reqsentry::codec::{encode_text, Vocabulary};
use reqsentry::detector::{DetectorConfig, DetectorModel};
use reqsentry::neural::{check_gradients, Mode};

fn main() -> reqsentry::Result<()> {
    let vocab = Vocabulary::from_chars(vec!['a', 'b', 'c', 'd'])?;
    let cfg = DetectorConfig {
        embed_size: 4,
        hidden_size: 4,
        num_layers: 2,
        max_len: 5,
        dropout_rate: 0.3,
        ..Default::default()
    };
    let seq = encode_text(&vocab, "abcd", cfg.max_len)?;

    for mode in [Mode::Inference, Mode::Training { seed: 9 }] {
        let mut det = DetectorModel::new(vocab.clone(), cfg.clone())?;
        let (_, g) = det.loss_and_gradients(&seq, mode)?;
        let r = check_gradients(&mut det, &g, 1e-5, |m| m.params_mut(), |m| {
            m.reconstruction_loss(&seq, mode).unwrap()
        });
        println!("detector   {mode:?}: {} entries, max rel {:.2e} at {:?}", r.checked, r.max_rel_error, r.worst);

        let mut cls = ClassifierModel::new(vocab.clone(), cfg.clone())?;
        let (_, g) = cls.loss_and_gradients(&seq, AttackClass::Xss, mode)?;
        let r = check_gradients(&mut cls, &g, 1e-5, |m| m.params_mut(), |m| {
            m.loss(&seq, AttackClass::Xss, mode).unwrap()
        });
        println!("classifier {mode:?}: {} entries, max rel {:.2e} at {:?}", r.checked, r.max_rel_error, r.worst);
    }
    Ok(())
}
