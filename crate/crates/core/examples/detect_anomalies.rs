//! Train a small autoencoder on synthetic benign traffic, calibrate a
//! threshold and score benign and attack requests.

use reqsentry::codec::{build_vocab, canonicalize_raw, encode};
use reqsentry::detector::{detect, fit_threshold, train_detector, Decision, DetectorConfig};
use reqsentry::engine::{generate_synthetic_corpus, SynthSpec};
use reqsentry::CanonicalRequest;

fn main() -> reqsentry::Result<()> {
    let corpus = generate_synthetic_corpus(&SynthSpec {
        benign: 400,
        attacks: 70,
        seed: 1,
    })?;
    let benign: Vec<CanonicalRequest> = corpus
        .benign
        .iter()
        .map(|r| canonicalize_raw(r.as_bytes()))
        .collect::<reqsentry::Result<_>>()?;
    let (train, rest) = benign.split_at(300);
    let (holdout, test) = rest.split_at(50);

    let cfg = DetectorConfig {
        embed_size: 16,
        hidden_size: 16,
        num_layers: 1,
        batch_size: 8,
        learning_rate: 1e-2,
        dropout_rate: 0.1,
        epochs: 8,
        ..Default::default()
    };
    let vocab = build_vocab(train.iter(), 1)?;
    let seqs = train
        .iter()
        .map(|c| encode(&vocab, c, cfg.max_len))
        .collect::<reqsentry::Result<Vec<_>>>()?;
    let (model, report) = train_detector(&seqs, vocab, &cfg)?;
    println!("loss {:.3} -> {:.3}", report.initial_loss, report.final_loss());

    let losses = holdout.iter().map(|c| model.score(c)).collect::<reqsentry::Result<Vec<_>>>()?;
    let threshold = fit_threshold(&losses, 0.995)?;
    println!("theta {:.4}", threshold.theta());

    let flagged = test
        .iter()
        .filter(|c| matches!(detect(&model, &threshold, c), Ok(d) if d.decision == Decision::Anomalous))
        .count();
    println!("benign flagged: {flagged}/{}", test.len());

    let mut caught = 0;
    for (class, raw) in &corpus.attacks {
        let d = detect(&model, &threshold, &canonicalize_raw(raw.as_bytes())?)?;
        if d.decision == Decision::Anomalous {
            caught += 1;
        } else {
            println!("missed {class}: loss {:.3}", d.loss);
        }
    }
    println!("attacks caught: {caught}/{}", corpus.attacks.len());
    Ok(())
}
