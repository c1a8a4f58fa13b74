//! End-to-end pipeline: parse, canonicalize, detect, then route normal
//! requests to the retraining store and anomalous ones to the classifier.

pub mod bundle;
pub mod cli;
pub mod corpus;
pub mod store;
pub mod synth;

use std::io::{BufRead, Write};

use chrono::{SecondsFormat, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use bundle::{load_bundle, save_bundle, EngineBundle};
pub use corpus::RecordReader;
pub use store::RetrainStore;
pub use synth::{generate_synthetic_corpus, SynthSpec, SyntheticCorpus};

use crate::classifier::{AttackClass, NUM_CLASSES};
use crate::codec::canonical::bytes_to_text;
use crate::codec::{build_vocab, canonicalize_raw, encode, CanonicalRequest, EncodedSequence};
use crate::detector::{
    detect, fit_threshold, train_detector, Decision, DetectorConfig, DetectorModel, ThresholdModel,
    TrainReport,
};
use crate::error::{Error, Result};
use crate::neural::mix_seed;

pub const DIGEST_CHARS: usize = 64;

/// One line of serving output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub digest: String,
    /// `+inf` for requests that could not be read; written as `"inf"`.
    #[serde(serialize_with = "ser_loss", deserialize_with = "de_loss")]
    pub loss: f64,
    pub theta: f64,
    pub decision: Decision,
    pub attack_class: Option<AttackClass>,
    pub distribution: Option<[f64; NUM_CLASSES]>,
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Verdict {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

fn ser_loss<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

fn de_loss<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(v),
        Repr::Text(t) => match t.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            _ => Err(serde::de::Error::custom(format!("bad loss {t:?}"))),
        },
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn fail_closed(bundle: &EngineBundle, raw: &[u8], error: String) -> Verdict {
    let text = bytes_to_text(raw).replace('\r', "");
    Verdict {
        digest: CanonicalRequest::from_text(text).digest(DIGEST_CHARS),
        loss: f64::INFINITY,
        theta: bundle.threshold().theta(),
        decision: Decision::Anomalous,
        attack_class: None,
        distribution: None,
        timestamp: now(),
        error: Some(error),
    }
}

/// Verdict for one raw request. Unreadable input is flagged rather than
/// dropped; the only error is a failure to write the retraining store.
pub fn process_request(bundle: &EngineBundle, store: &mut RetrainStore, raw: &[u8]) -> Result<Verdict> {
    let canonical = match canonicalize_raw(raw) {
        Ok(c) => c,
        Err(e) => return Ok(fail_closed(bundle, raw, e.to_string())),
    };
    let det = match detect(bundle.detector(), bundle.threshold(), &canonical) {
        Ok(d) => d,
        Err(e) => return Ok(fail_closed(bundle, raw, e.to_string())),
    };
    let mut verdict = Verdict {
        digest: canonical.digest(DIGEST_CHARS),
        loss: det.loss,
        theta: bundle.threshold().theta(),
        decision: det.decision,
        attack_class: None,
        distribution: None,
        timestamp: now(),
        error: None,
    };
    match det.decision {
        Decision::Normal => store.append(&canonical)?,
        Decision::Anomalous => {
            if let Some(cls) = bundle.classifier() {
                let p = cls.predict(&canonical)?;
                verdict.attack_class = Some(p.class);
                verdict.distribution = Some(p.distribution);
            }
        }
    }
    Ok(verdict)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ServeSummary {
    pub records: usize,
    pub normal: usize,
    pub anomalous: usize,
    pub unreadable: usize,
}

/// Reads `.reqs`-framed records until end of input and writes one verdict
/// JSON line per record, in input order.
pub fn serve_stream(
    bundle: &EngineBundle,
    store: &mut RetrainStore,
    input: impl BufRead,
    mut output: impl Write,
) -> Result<ServeSummary> {
    let mut summary = ServeSummary::default();
    for record in RecordReader::new(input) {
        let v = process_request(bundle, store, &record?)?;
        summary.records += 1;
        match v.decision {
            Decision::Normal => summary.normal += 1,
            Decision::Anomalous => summary.anomalous += 1,
        }
        if v.error.is_some() {
            summary.unreadable += 1;
        }
        writeln!(output, "{}", v.to_json_line()?)?;
        output.flush()?;
    }
    Ok(summary)
}

/// Share of the shuffled benign corpus held out for threshold calibration.
pub const HOLDOUT_FRACTION: f64 = 0.1;

/// Seeded shuffle, then the last `HOLDOUT_FRACTION` (at least one item) is
/// split off.
pub fn holdout_split<T>(mut items: Vec<T>, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if items.len() < 2 {
        return Err(Error::invalid("need at least two requests to hold out a calibration set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[0x401d]));
    items.shuffle(&mut rng);
    let hold = ((items.len() as f64 * HOLDOUT_FRACTION).round() as usize).clamp(1, items.len() - 1);
    let holdout = items.split_off(items.len() - hold);
    Ok((items, holdout))
}

pub fn encode_all(d: &DetectorModel, corpus: &[CanonicalRequest]) -> Result<Vec<EncodedSequence>> {
    corpus.iter().map(|c| d.encode(c)).collect()
}

/// Inference losses of `holdout`, fitted at `quantile`.
pub fn calibrate(d: &DetectorModel, holdout: &[CanonicalRequest], quantile: f64) -> Result<ThresholdModel> {
    let losses = holdout.iter().map(|c| d.score(c)).collect::<Result<Vec<_>>>()?;
    fit_threshold(&losses, quantile)
}

#[derive(Clone, Debug)]
pub struct DetectorTraining {
    pub bundle: EngineBundle,
    pub report: TrainReport,
    pub train_size: usize,
    pub holdout_size: usize,
}

/// Vocabulary, detector and threshold from a benign corpus. `extra_vocab`
/// only widens the vocabulary (so a classifier can later share it); it is
/// never trained on.
pub fn build_detector_bundle(
    benign: Vec<CanonicalRequest>,
    extra_vocab: &[CanonicalRequest],
    cfg: &DetectorConfig,
    quantile: f64,
) -> Result<DetectorTraining> {
    let (train, holdout) = holdout_split(benign, cfg.seed)?;
    let vocab = build_vocab(train.iter().chain(extra_vocab), 1)?;
    let seqs = train
        .iter()
        .map(|c| encode(&vocab, c, cfg.max_len))
        .collect::<Result<Vec<_>>>()?;
    let (detector, report) = train_detector(&seqs, vocab, cfg)?;
    let threshold = calibrate(&detector, &holdout, quantile)?;
    Ok(DetectorTraining {
        bundle: EngineBundle::new(detector, threshold, None)?,
        report,
        train_size: train.len(),
        holdout_size: holdout.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ClassifierModel;
    use crate::codec::{build_vocab, encode};
    use crate::detector::{fit_threshold, DetectorConfig, DetectorModel};

    fn bundle(theta_from: &[f64]) -> EngineBundle {
        let texts = ["GET\n/a\nx=1\n", "POST\n/l\n\nu=b"];
        let canon: Vec<_> = texts.iter().map(|t| CanonicalRequest::from_text(*t)).collect();
        let vocab = build_vocab(canon.iter(), 1).unwrap();
        let cfg = DetectorConfig {
            embed_size: 4,
            hidden_size: 4,
            max_len: 40,
            ..Default::default()
        };
        let det = DetectorModel::new(vocab.clone(), cfg.clone()).unwrap();
        let cls = ClassifierModel::new(vocab, cfg).unwrap();
        EngineBundle::new(det, fit_threshold(theta_from, 1.0).unwrap(), Some(cls)).unwrap()
    }

    #[test]
    fn garbage_fails_closed() {
        let b = bundle(&[1.0]);
        let mut store = RetrainStore::in_memory();
        let v = process_request(&b, &mut store, b"\x00\x01 not http").unwrap();
        assert_eq!(v.decision, Decision::Anomalous);
        assert_eq!(v.loss, f64::INFINITY);
        assert!(v.attack_class.is_none() && v.error.is_some());
        assert_eq!(store.count(), 0);
        let line = v.to_json_line().unwrap();
        assert!(line.contains("\"loss\":\"inf\""));
        let back: Verdict = serde_json::from_str(&line).unwrap();
        assert_eq!(back.loss, f64::INFINITY);
    }

    #[test]
    fn routing_by_decision() {
        let raw = b"GET /a?x=1 HTTP/1.1\r\n\r\n";
        // huge theta: everything normal and stored
        let b = bundle(&[1e9]);
        let mut store = RetrainStore::in_memory();
        let v = process_request(&b, &mut store, raw).unwrap();
        assert_eq!(v.decision, Decision::Normal);
        assert!(v.attack_class.is_none() && v.distribution.is_none());
        assert_eq!(store.count(), 1);
        assert_eq!(v.digest, "GET\n/a\nx=1\n");

        // zero theta: anomalous and classified
        let b = bundle(&[0.0]);
        let v = process_request(&b, &mut store, raw).unwrap();
        assert_eq!(v.decision, Decision::Anomalous);
        let d = v.distribution.unwrap();
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(v.attack_class.is_some());
        assert_eq!(store.count(), 1);
        let expected = encode(b.vocab(), &CanonicalRequest::from_text("GET\n/a\nx=1\n"), 40).unwrap();
        assert_eq!(v.loss, b.detector().reconstruction_loss(&expected, crate::neural::Mode::Inference).unwrap());
    }

    #[test]
    fn stream_order_and_counts() {
        let b = bundle(&[3.0]);
        let mut store = RetrainStore::in_memory();
        let mut input = Vec::new();
        for i in 0..9 {
            corpus::write_record(&mut input, format!("GET /a?x={i} HTTP/1.1\r\n\r\n").as_bytes()).unwrap();
        }
        corpus::write_record(&mut input, b"\xff\xfe").unwrap();
        let mut out = Vec::new();
        let s = serve_stream(&b, &mut store, &input[..], &mut out).unwrap();
        let lines: Vec<Verdict> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 10);
        assert_eq!(s.records, 10);
        assert_eq!(s.unreadable, 1);
        assert!(lines[9].error.is_some());
        for (i, v) in lines[..9].iter().enumerate() {
            assert_eq!(v.digest, format!("GET\n/a\nx={i}\n"));
        }
        let normal = lines.iter().filter(|v| v.decision == Decision::Normal).count();
        assert_eq!(store.count(), normal);
        assert_eq!(s.normal, normal);

        let mut out = Vec::new();
        assert_eq!(serve_stream(&b, &mut store, &b""[..], &mut out).unwrap().records, 0);
        assert!(out.is_empty());
    }

    #[test]
    fn split_sizes() {
        let (a, b) = holdout_split((0..100).collect(), 1).unwrap();
        assert_eq!((a.len(), b.len()), (90, 10));
        let (c, d) = holdout_split((0..100).collect(), 1).unwrap();
        assert_eq!((a, b), (c, d));
        assert_eq!(holdout_split(vec![1, 2], 0).unwrap().1.len(), 1);
        assert!(holdout_split(vec![1], 0).is_err());
    }

    #[test]
    fn timestamp_is_utc_rfc3339() {
        let t = now();
        assert!(t.ends_with('Z'));
        assert!(chrono::DateTime::parse_from_rfc3339(&t).is_ok());
    }
}
