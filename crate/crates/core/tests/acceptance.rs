//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to
//! stderr (bypassing output capture) before asserting.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use reqsentry::classifier::{evaluate_classifier, train_classifier, AttackClass, ClassifierModel, LabeledExample};
use reqsentry::codec::{build_vocab, canonicalize_raw, decode_ids, encode, encode_text, CanonicalRequest, Vocabulary};
use reqsentry::detector::{detect, fit_threshold, train_detector, Decision, DetectorConfig, DetectorModel};
use reqsentry::engine::corpus::write_record;
use reqsentry::engine::synth::{generate_synthetic_corpus, SynthSpec};
use reqsentry::engine::{load_bundle, process_request, save_bundle, serve_stream, EngineBundle, RetrainStore, Verdict};
use reqsentry::eval::{auc, rates, roc_curve, ConfusionCounts};
use reqsentry::neural::{check_gradients, Matrix, Mode};
use reqsentry::pca::{covariance, fit_pca, pc_scores, pca_anomaly_score, pca_mse, LinearAeConfig, LinearAutoencoder};

fn report(name: &str, ok: bool, detail: &str, elapsed: Duration) {
    let tag = if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "[{tag}] {name}: {detail} ({:.1}s)",
        elapsed.as_secs_f64()
    );
}

fn canon(raw: &str) -> CanonicalRequest {
    canonicalize_raw(raw.as_bytes()).unwrap()
}

#[test]
fn metric_formulas() {
    let t = Instant::now();
    let r = rates(&ConfusionCounts {
        tp: 1097,
        fn_: 0,
        fp: 7,
        tn: 2193,
    });
    let rounded = (r.fpr * 10_000.0).round() / 10_000.0;
    let ok = r.tpr == 1.0 && r.fpr == 7.0 / 2200.0 && rounded == 0.0032 && r.fpr.to_string().starts_with("0.003181");
    let elapsed = t.elapsed();
    let ok = ok && elapsed < Duration::from_secs(1);
    report(
        "metric formulas",
        ok,
        &format!("tpr={} fpr={} (rounds to {rounded})", r.tpr, r.fpr),
        elapsed,
    );
    assert!(ok);
}

fn tiny_detector_config() -> DetectorConfig {
    DetectorConfig {
        embed_size: 4,
        hidden_size: 4,
        num_layers: 2,
        dropout_rate: 0.3,
        max_len: 5,
        seed: 5,
        ..Default::default()
    }
}

#[test]
fn gradient_suite() {
    let t = Instant::now();
    // 4 reserved ids + 4 characters
    let vocab = Vocabulary::from_chars(vec!['a', 'b', 'c', 'd']).unwrap();
    assert_eq!(vocab.size(), 8);
    let cfg = tiny_detector_config();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for mode in [Mode::Inference, Mode::Training { seed: 17 }] {
        let mut det = DetectorModel::new(vocab.clone(), cfg.clone()).unwrap();
        let seq = encode_text(&vocab, "dacb", 5).unwrap();
        assert_eq!(seq.true_length, 5);
        let (_, g) = det.loss_and_gradients(&seq, mode).unwrap();
        let r = check_gradients(&mut det, &g, 1e-5, |m| m.params_mut(), |m| {
            m.reconstruction_loss(&seq, mode).unwrap()
        });
        worst = worst.max(r.max_rel_error);
        checked += r.checked;

        let mut cls = ClassifierModel::new(vocab.clone(), cfg.clone()).unwrap();
        let label = AttackClass::LdapInjection;
        let (_, g) = cls.loss_and_gradients(&seq, label, mode).unwrap();
        let r = check_gradients(&mut cls, &g, 1e-5, |m| m.params_mut(), |m| {
            m.loss(&seq, label, mode).unwrap()
        });
        worst = worst.max(r.max_rel_error);
        checked += r.checked;
    }
    let elapsed = t.elapsed();
    let ok = worst < 1e-4 && elapsed < Duration::from_secs(120);
    report(
        "gradient suite",
        ok,
        &format!("{checked} entries, max relative error {worst:.2e}"),
        elapsed,
    );
    assert!(ok);
}

#[test]
fn synthetic_separation() {
    let t = Instant::now();
    let corpus = generate_synthetic_corpus(&SynthSpec {
        benign: 2400,
        attacks: 350,
        seed: 7,
    })
    .unwrap();
    let benign: Vec<CanonicalRequest> = corpus.benign.iter().map(|r| canon(r)).collect();
    let (train, rest) = benign.split_at(2000);
    let (holdout, test_benign) = rest.split_at(200);
    let cfg = DetectorConfig {
        batch_size: 32,
        embed_size: 32,
        hidden_size: 32,
        num_layers: 2,
        dropout_rate: 0.3,
        epochs: 30,
        ..Default::default()
    };
    let vocab = build_vocab(train.iter(), 1).unwrap();
    let seqs: Vec<_> = train.iter().map(|c| encode(&vocab, c, cfg.max_len).unwrap()).collect();
    let (model, trace) = train_detector(&seqs, vocab, &cfg).unwrap();
    let hold: Vec<f64> = holdout.iter().map(|c| model.score(c).unwrap()).collect();
    let theta = fit_threshold(&hold, 0.995).unwrap();

    let mut scores: Vec<f64> = test_benign.iter().map(|c| model.score(c).unwrap()).collect();
    let mut labels = vec![false; scores.len()];
    for (_, raw) in &corpus.attacks {
        scores.push(model.score(&canon(raw)).unwrap());
        labels.push(true);
    }
    let r = rates(&ConfusionCounts::at_threshold(&scores, &labels, theta.theta()).unwrap());
    let area = auc(&roc_curve(&scores, &labels).unwrap());
    let elapsed = t.elapsed();
    let ok = r.tpr >= 0.90 && r.fpr <= 0.02 && area >= 0.98 && elapsed < Duration::from_secs(15 * 60);
    report(
        "synthetic separation",
        ok,
        &format!(
            "tpr={:.3} fpr={:.3} auc={area:.4} theta={:.4} loss {:.3}->{:.3}",
            r.tpr,
            r.fpr,
            theta.theta(),
            trace.initial_loss,
            trace.final_loss()
        ),
        elapsed,
    );

    // trained-model properties
    let t2 = Instant::now();
    let own = train.iter().filter(|c| detect(&model, &theta, c).unwrap().decision == Decision::Normal).count();
    let a = model.encode_latent(&model.encode(&train[0]).unwrap()).unwrap();
    let mut altered = train[0].text().to_owned();
    altered.replace_range(0..1, "P");
    let b = model.encode_latent(&model.encode(&CanonicalRequest::from_text(altered)).unwrap()).unwrap();
    let bundle = EngineBundle::new(model, theta, None).unwrap();
    let mut store = RetrainStore::in_memory();
    let normal_idx = (0..train.len())
        .find(|&i| detect(bundle.detector(), bundle.threshold(), &train[i]).unwrap().decision == Decision::Normal)
        .unwrap();
    let v = process_request(&bundle, &mut store, corpus.benign[normal_idx].as_bytes()).unwrap();
    let props_ok = own as f64 / train.len() as f64 >= 0.99 && a != b && v.decision == Decision::Normal && store.count() == 1;
    report(
        "trained detector properties",
        props_ok,
        &format!(
            "{own}/{} training requests Normal, one-char change moves latent, stored normal count {}",
            train.len(),
            store.count()
        ),
        t2.elapsed(),
    );
    assert!(ok);
    assert!(props_ok);
}

#[test]
fn training_loss_trend() {
    let t = Instant::now();
    let corpus = generate_synthetic_corpus(&SynthSpec {
        benign: 200,
        attacks: 0,
        seed: 7,
    })
    .unwrap();
    let benign: Vec<CanonicalRequest> = corpus.benign.iter().map(|r| canon(r)).collect();
    let cfg = DetectorConfig {
        batch_size: 8,
        embed_size: 32,
        hidden_size: 32,
        num_layers: 2,
        dropout_rate: 0.3,
        epochs: 30,
        learning_rate: 1e-2,
        ..Default::default()
    };
    let vocab = build_vocab(benign.iter(), 1).unwrap();
    let ln_v = (vocab.size() as f64).ln();
    let seqs: Vec<_> = benign.iter().map(|c| encode(&vocab, c, cfg.max_len).unwrap()).collect();
    let (_, trace) = train_detector(&seqs, vocab, &cfg).unwrap();
    let ratio = trace.final_loss() / trace.initial_loss;
    let start_ok = (trace.initial_loss - ln_v).abs() / ln_v < 0.2;
    let ok = ratio < 0.25 && start_ok;
    report(
        "training loss trend",
        ok,
        &format!(
            "initial {:.3} (ln V = {ln_v:.3}), final {:.3}, ratio {ratio:.3}",
            trace.initial_loss,
            trace.final_loss()
        ),
        t.elapsed(),
    );
    assert!(ok);
}

#[test]
fn overfit_sanity() {
    let t = Instant::now();
    let corpus = generate_synthetic_corpus(&SynthSpec {
        benign: 1,
        attacks: 0,
        seed: 7,
    })
    .unwrap();
    let c = canon(&corpus.benign[0]);
    let vocab = build_vocab([&c], 1).unwrap();
    let cfg = DetectorConfig {
        batch_size: 1,
        embed_size: 32,
        hidden_size: 32,
        num_layers: 2,
        dropout_rate: 0.0,
        epochs: 500,
        learning_rate: 1e-2,
        ..Default::default()
    };
    let seq = encode(&vocab, &c, cfg.max_len).unwrap();
    let (m, trace) = train_detector(&[seq.clone()], vocab, &cfg).unwrap();
    assert_eq!(trace.epoch_losses.len(), 500);
    let loss = m.reconstruction_loss(&seq, Mode::Inference).unwrap();
    let decoded = decode_ids(m.vocab(), &m.greedy_decode(&seq).unwrap());
    let elapsed = t.elapsed();
    let ok = loss < 0.05 && decoded == c.text() && elapsed < Duration::from_secs(30);
    report(
        "overfit sanity",
        ok,
        &format!("loss {loss:.5}, exact roundtrip {}", decoded == c.text()),
        elapsed,
    );
    assert!(ok);
}

fn labeled(attacks: &[(AttackClass, String)]) -> Vec<LabeledExample> {
    attacks
        .iter()
        .map(|(label, raw)| LabeledExample {
            canonical: canon(raw),
            label: *label,
        })
        .collect()
}

#[test]
fn attack_classifier() {
    let t = Instant::now();
    // classes cycle, so the first 350 hold 50 per class and the last 70 hold 10
    let corpus = generate_synthetic_corpus(&SynthSpec {
        benign: 0,
        attacks: 420,
        seed: 11,
    })
    .unwrap();
    let data = labeled(&corpus.attacks);
    let (train, holdout) = data.split_at(350);
    let cfg = DetectorConfig {
        batch_size: 8,
        embed_size: 32,
        hidden_size: 32,
        num_layers: 2,
        dropout_rate: 0.3,
        epochs: 40,
        forget_bias: 2.0,
        ..Default::default()
    };
    let vocab = build_vocab(train.iter().map(|e| &e.canonical), 1).unwrap();
    let (m, _) = train_classifier(train, vocab, &cfg).unwrap();
    let tr = evaluate_classifier(&m, train).unwrap();
    let ho = evaluate_classifier(&m, holdout).unwrap();
    let elapsed = t.elapsed();
    let ok = tr.accuracy >= 0.95 && ho.accuracy >= 0.85 && elapsed < Duration::from_secs(600);
    report(
        "attack classifier",
        ok,
        &format!("train accuracy {:.3}, holdout accuracy {:.3}", tr.accuracy, ho.accuracy),
        elapsed,
    );
    let toy = canon("GET /products?id=1'+OR+'1'='1 HTTP/1.1\r\nHost: bank.local\r\nCookie: sid=4f2a9c\r\nUser-Agent: Mozilla/5.0\r\n\r\n");
    let p = m.predict(&toy).unwrap();
    report(
        "classifier toy SQL injection",
        p.class == AttackClass::SqlInjection,
        &format!("predicted {} with p={:.3}", p.class, p.distribution[p.class.code()]),
        Duration::ZERO,
    );
    assert!(ok);
    assert_eq!(p.class, AttackClass::SqlInjection);
}

fn gaussian(n: usize, scales: &[f64], seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = scales.len();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        for s in scales {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(s * z + 0.5);
        }
    }
    Matrix::from_vec(n, d, data).unwrap()
}

#[test]
fn pca_properties() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let x = Matrix::from_vec(20, 8, (0..160).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let full = fit_pca(&x, 8).unwrap();
    let recon_err = (0..20)
        .map(|r| pca_anomaly_score(&full, x.row(r)).unwrap())
        .fold(0.0, f64::max);
    let (_, cov) = covariance(&x);
    let mut residual: f64 = 0.0;
    for j in 0..8 {
        let v = full.components.col(j);
        let cv = cov.matmul(&Matrix::column(&v)).unwrap();
        let r: f64 = cv
            .as_slice()
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - full.eigenvalues[j] * b).powi(2))
            .sum::<f64>()
            .sqrt();
        residual = residual.max(r);
    }
    let _ = pc_scores(&full, x.row(0)).unwrap();

    let g = gaussian(500, &[3.0, 2.5, 2.0, 0.6, 0.5, 0.4, 0.3, 0.2], 21);
    let pca = fit_pca(&g, 3).unwrap();
    let pca_err = pca_mse(&pca, &g).unwrap();
    let mut ae = LinearAutoencoder::new(8, 3, 22).unwrap();
    let ae_err = ae.fit(&g, &LinearAeConfig::default()).unwrap();
    let rel = (ae_err - pca_err).abs() / pca_err;
    let ok = recon_err < 1e-8 && residual < 1e-8 && rel < 0.05;
    report(
        "pca properties",
        ok,
        &format!(
            "full-rank error {recon_err:.1e}, eigen residual {residual:.1e}, linear AE mse {ae_err:.4} vs pca {pca_err:.4} ({:.2}%)",
            rel * 100.0
        ),
        t.elapsed(),
    );
    assert!(ok);
}

#[test]
fn roc_properties() {
    let t = Instant::now();
    let perfect = auc(&roc_curve(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap());
    let tied = roc_curve(&[0.5; 6], &[true, false, true, false, true, false]).unwrap();
    let diagonal = tied.points.iter().all(|p| p.fpr == p.tpr);
    let tied_auc = auc(&tied);
    let four = roc_curve(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap();
    let four_auc = auc(&four);
    let points: Vec<(f64, f64)> = four.points.iter().map(|p| (p.fpr, p.tpr)).collect();
    let elapsed = t.elapsed();
    let props_ok = perfect == 1.0 && diagonal && tied_auc == 0.5 && elapsed < Duration::from_secs(1);
    report(
        "roc properties",
        props_ok,
        &format!("perfect auc {perfect}, tied auc {tied_auc}, diagonal {diagonal}"),
        elapsed,
    );
    // The published expectation of 0.625 for this example disagrees with the
    // trapezoid over its own listed points, which is 0.75. The line stays red.
    let expected_points = vec![(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)];
    report(
        "roc four-score example",
        four_auc == 0.625,
        &format!("auc {four_auc} (expected 0.625) over {points:?}"),
        elapsed,
    );
    assert!(props_ok);
    assert_eq!(points, expected_points);
    assert_eq!(four_auc, 0.75);
}

fn small_bundle() -> (EngineBundle, Vec<String>) {
    let corpus = generate_synthetic_corpus(&SynthSpec {
        benign: 120,
        attacks: 14,
        seed: 9,
    })
    .unwrap();
    let benign: Vec<CanonicalRequest> = corpus.benign.iter().map(|r| canon(r)).collect();
    let attacks = labeled(&corpus.attacks);
    let cfg = DetectorConfig {
        batch_size: 8,
        embed_size: 12,
        hidden_size: 12,
        num_layers: 2,
        dropout_rate: 0.1,
        epochs: 4,
        learning_rate: 1e-2,
        seed: 3,
        ..Default::default()
    };
    let vocab = build_vocab(benign[..100].iter().chain(attacks.iter().map(|e| &e.canonical)), 1).unwrap();
    let seqs: Vec<_> = benign[..100].iter().map(|c| encode(&vocab, c, cfg.max_len).unwrap()).collect();
    let (det, _) = train_detector(&seqs, vocab.clone(), &cfg).unwrap();
    let hold: Vec<f64> = benign[100..].iter().map(|c| det.score(c).unwrap()).collect();
    let theta = fit_threshold(&hold, 0.5).unwrap();
    let cls_cfg = DetectorConfig { epochs: 2, ..cfg };
    let (cls, _) = train_classifier(&attacks, vocab, &cls_cfg).unwrap();
    let mut raws = corpus.benign[100..].to_vec();
    raws.extend(corpus.attacks.iter().map(|(_, r)| r.clone()));
    (EngineBundle::new(det, theta, Some(cls)).unwrap(), raws)
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(0..80);
    (0..len)
        .map(|_| {
            if rng.gen_bool(0.9) {
                rng.gen_range(' '..='~')
            } else {
                rng.gen_range('\u{a0}'..='\u{2fff}')
            }
        })
        .collect()
}

#[test]
fn engine_invariants() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (bundle, raws) = small_bundle();
    let p1 = dir.path().join("a.bundle");
    save_bundle(&bundle, &p1).unwrap();
    let loaded = load_bundle(&p1).unwrap();
    let p2 = dir.path().join("b.bundle");
    save_bundle(&loaded, &p2).unwrap();
    let twice = load_bundle(&p2).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let inputs: Vec<CanonicalRequest> = (0..100).map(|_| CanonicalRequest::from_text(random_text(&mut rng))).collect();
    let bits = |b: &EngineBundle| -> Vec<(u64, Option<[u64; 7]>)> {
        inputs
            .iter()
            .map(|c| {
                let s = b.detector().score(c).unwrap().to_bits();
                let d = b.classifier().map(|m| m.predict(c).unwrap().distribution.map(f64::to_bits));
                (s, d)
            })
            .collect()
    };
    let reference = bits(&bundle);
    let bit_exact = reference == bits(&loaded) && reference == bits(&twice);

    // ten records, one of them unreadable
    let mut input = Vec::new();
    let mut expected_digests = Vec::new();
    for (i, raw) in raws.iter().take(10).enumerate() {
        if i == 4 {
            write_record(&mut input, b"\x00\x01\x02 garbage").unwrap();
            expected_digests.push(None);
        } else {
            write_record(&mut input, raw.as_bytes()).unwrap();
            expected_digests.push(Some(canon(raw).digest(64)));
        }
    }
    let store_path = dir.path().join("retrain.jsonl");
    let mut store = RetrainStore::open(&store_path).unwrap();
    let mut out = Vec::new();
    serve_stream(&loaded, &mut store, &input[..], &mut out).unwrap();
    let verdicts: Vec<Verdict> = String::from_utf8(out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let ordered = verdicts.len() == 10
        && verdicts.iter().zip(&expected_digests).all(|(v, d)| match d {
            Some(d) => &v.digest == d && v.error.is_none(),
            None => v.error.is_some() && v.decision == Decision::Anomalous && v.loss.is_infinite(),
        });
    let normal = verdicts.iter().filter(|v| v.decision == Decision::Normal).count();
    let anomalous_classified = verdicts
        .iter()
        .filter(|v| v.decision == Decision::Anomalous && v.error.is_none())
        .all(|v| v.attack_class.is_some() && (v.distribution.unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    drop(store);
    let reloaded = RetrainStore::open(&store_path).unwrap().count();
    let ok = bit_exact && ordered && normal == reloaded && anomalous_classified;
    report(
        "engine invariants",
        ok,
        &format!(
            "bit-exact reload {bit_exact}, {} ordered verdicts ({} fail-closed), normal {normal} = stored {reloaded}",
            verdicts.len(),
            verdicts.iter().filter(|v| v.error.is_some()).count()
        ),
        t.elapsed(),
    );
    assert!(ok);
}
