//! Train the attack-type classifier and print its confusion matrix.

use reqsentry::classifier::{evaluate_classifier, train_classifier, AttackClass, LabeledExample};
use reqsentry::codec::{build_vocab, canonicalize_raw};
use reqsentry::detector::DetectorConfig;
use reqsentry::engine::{generate_synthetic_corpus, SynthSpec};

fn main() -> reqsentry::Result<()> {
    let corpus = generate_synthetic_corpus(&SynthSpec {
        benign: 0,
        attacks: 280,
        seed: 11,
    })?;
    let data = corpus
        .attacks
        .iter()
        .map(|(label, raw)| {
            Ok(LabeledExample {
                canonical: canonicalize_raw(raw.as_bytes())?,
                label: *label,
            })
        })
        .collect::<reqsentry::Result<Vec<_>>>()?;
    let (train, holdout) = data.split_at(210);

    let cfg = DetectorConfig {
        embed_size: 32,
        hidden_size: 32,
        num_layers: 2,
        batch_size: 8,
        dropout_rate: 0.3,
        epochs: 25,
        forget_bias: 2.0,
        ..Default::default()
    };
    let vocab = build_vocab(train.iter().map(|e| &e.canonical), 1)?;
    let (model, losses) = train_classifier(train, vocab, &cfg)?;
    println!("loss {:.3} -> {:.3}", losses[0], losses[losses.len() - 1]);

    let eval = evaluate_classifier(&model, holdout)?;
    println!("holdout accuracy {:.3}", eval.accuracy);
    for (i, row) in eval.confusion.iter().enumerate() {
        println!("{:>16} {row:?}", AttackClass::ALL[i].name());
    }

    let probe = canonicalize_raw(b"GET /products?id=1'+OR+'1'='1 HTTP/1.1\r\nHost: bank.local\r\n\r\n")?;
    let p = model.predict(&probe)?;
    println!("probe -> {} ({:.3})", p.class, p.distribution[p.class.code()]);
    Ok(())
}
