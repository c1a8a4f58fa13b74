//! Character-frequency PCA baseline: fit on benign traffic and compare
//! reconstruction errors of held-out benign and attack requests.

use reqsentry::codec::{build_vocab, canonicalize_raw, CanonicalRequest};
use reqsentry::engine::{generate_synthetic_corpus, SynthSpec};
use reqsentry::eval::{auc, roc_curve};
use reqsentry::pca::{feature_matrix, feature_vector, fit_pca, pca_anomaly_score};

fn main() -> reqsentry::Result<()> {
    let corpus = generate_synthetic_corpus(&SynthSpec {
        benign: 600,
        attacks: 140,
        seed: 3,
    })?;
    let canon = |r: &String| canonicalize_raw(r.as_bytes());
    let benign: Vec<CanonicalRequest> = corpus.benign.iter().map(canon).collect::<reqsentry::Result<_>>()?;
    let (train, test) = benign.split_at(500);
    let vocab = build_vocab(train.iter(), 1)?;
    let x = feature_matrix(&vocab, train)?;

    for k in [1, 3, 8] {
        let model = fit_pca(&x, k)?;
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for c in test {
            scores.push(pca_anomaly_score(&model, &feature_vector(&vocab, c))?);
            labels.push(false);
        }
        for (_, raw) in &corpus.attacks {
            scores.push(pca_anomaly_score(&model, &feature_vector(&vocab, &canon(raw)?))?);
            labels.push(true);
        }
        let top: Vec<String> = model.eigenvalues.iter().take(3).map(|e| format!("{e:.2e}")).collect();
        println!("k={k} eigenvalues {top:?} auc {:.4}", auc(&roc_curve(&scores, &labels)?));
    }
    Ok(())
}
