//! Single-file model bundle.
//!
//! Layout: the 8-byte magic `RQSENTRY`, the manifest length as a
//! little-endian `u64`, the JSON manifest, the little-endian `f64`
//! parameter payload, and a little-endian CRC32 of the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierConfig, ClassifierModel};
use crate::codec::Vocabulary;
use crate::detector::{DetectorConfig, DetectorModel, ThresholdModel};
use crate::error::{Error, FormatError, Result};
use crate::neural::{Matrix, ParamStore};

pub const MAGIC: &[u8; 8] = b"RQSENTRY";
pub const FORMAT_VERSION: u32 = 1;

const DETECTOR_PREFIX: &str = "detector.";
const CLASSIFIER_PREFIX: &str = "classifier.";

/// Everything needed to serve: one vocabulary shared by all models.
#[derive(Clone, Debug)]
pub struct EngineBundle {
    detector: DetectorModel,
    threshold: ThresholdModel,
    classifier: Option<ClassifierModel>,
}

/// Training configuration captured when the bundle was built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub detector: DetectorConfig,
    pub classifier: Option<ClassifierConfig>,
}

impl EngineBundle {
    pub fn new(
        detector: DetectorModel,
        threshold: ThresholdModel,
        classifier: Option<ClassifierModel>,
    ) -> Result<Self> {
        if let Some(c) = &classifier {
            check_same_vocab(detector.vocab(), c.vocab())?;
        }
        Ok(EngineBundle {
            detector,
            threshold,
            classifier,
        })
    }

    pub fn version(&self) -> u32 {
        FORMAT_VERSION
    }

    pub fn vocab(&self) -> &Vocabulary {
        self.detector.vocab()
    }

    pub fn detector(&self) -> &DetectorModel {
        &self.detector
    }

    pub fn threshold(&self) -> &ThresholdModel {
        &self.threshold
    }

    pub fn classifier(&self) -> Option<&ClassifierModel> {
        self.classifier.as_ref()
    }

    pub fn config(&self) -> ConfigSnapshot {
        ConfigSnapshot {
            detector: self.detector.config().clone(),
            classifier: self.classifier.as_ref().map(|c| c.config().clone()),
        }
    }

    pub fn set_threshold(&mut self, t: ThresholdModel) {
        self.threshold = t;
    }

    pub fn set_detector(&mut self, d: DetectorModel) -> Result<()> {
        check_same_vocab(self.vocab(), d.vocab())?;
        self.detector = d;
        Ok(())
    }

    pub fn set_classifier(&mut self, c: ClassifierModel) -> Result<()> {
        check_same_vocab(self.vocab(), c.vocab())?;
        self.classifier = Some(c);
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut params = Vec::new();
        let mut payload = Vec::new();
        let mut push = |prefix: &str, store: &ParamStore| {
            for (name, m) in store.iter() {
                params.push(ParamEntry {
                    name: format!("{prefix}{name}"),
                    rows: m.rows(),
                    cols: m.cols(),
                    offset: payload.len() as u64,
                });
                for v in m.as_slice() {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
        };
        push(DETECTOR_PREFIX, self.detector.params());
        if let Some(c) = &self.classifier {
            push(CLASSIFIER_PREFIX, c.params());
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            config: self.config(),
            vocabulary: self.vocab().chars().to_vec(),
            threshold: self.threshold.clone(),
            params,
            payload_bytes: payload.len() as u64,
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(8 + 8 + json.len() + payload.len() + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        let magic = r.take(8, "magic")?;
        if magic != MAGIC {
            return Err(FormatError::BadMagic.into());
        }
        let len = u64::from_le_bytes(r.take(8, "manifest length")?.try_into().expect("8 bytes"));
        let len = usize::try_from(len).map_err(|_| FormatError::Truncated("manifest"))?;
        let json = r.take(len, "manifest")?;

        let header: VersionProbe = serde_json::from_slice(json)
            .map_err(|e| FormatError::Manifest(e.to_string()))?;
        if header.format_version != FORMAT_VERSION {
            return Err(FormatError::Version {
                found: header.format_version,
                expected: FORMAT_VERSION,
            }
            .into());
        }
        let manifest: Manifest =
            serde_json::from_slice(json).map_err(|e| FormatError::Manifest(e.to_string()))?;
        let payload_len =
            usize::try_from(manifest.payload_bytes).map_err(|_| FormatError::Truncated("payload"))?;
        let payload = r.take(payload_len, "payload")?;
        let stored = u32::from_le_bytes(r.take(4, "checksum")?.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(FormatError::Checksum { stored, computed }.into());
        }
        if r.pos != bytes.len() {
            return Err(FormatError::Manifest("trailing bytes after checksum".into()).into());
        }

        let mut detector_store = ParamStore::new();
        let mut classifier_store = ParamStore::new();
        for p in &manifest.params {
            let m = read_matrix(payload, p)?;
            if let Some(name) = p.name.strip_prefix(DETECTOR_PREFIX) {
                detector_store.add(name, m)?;
            } else if let Some(name) = p.name.strip_prefix(CLASSIFIER_PREFIX) {
                classifier_store.add(name, m)?;
            } else {
                return Err(FormatError::Manifest(format!("unknown parameter {}", p.name)).into());
            }
        }
        let bad = |e: Error| Error::from(FormatError::Manifest(e.to_string()));
        let vocab = Vocabulary::from_chars(manifest.vocabulary).map_err(bad)?;
        let detector =
            DetectorModel::from_parts(vocab.clone(), manifest.config.detector, detector_store).map_err(bad)?;
        let classifier = match manifest.config.classifier {
            Some(cfg) => Some(ClassifierModel::from_parts(vocab, cfg, classifier_store).map_err(bad)?),
            None if !classifier_store.is_empty() => {
                return Err(FormatError::Manifest("classifier parameters without config".into()).into())
            }
            None => None,
        };
        EngineBundle::new(detector, manifest.threshold, classifier)
    }
}

fn check_same_vocab(a: &Vocabulary, b: &Vocabulary) -> Result<()> {
    if a != b {
        return Err(Error::invalid("all bundle components must share one vocabulary"));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// Byte offset into the payload.
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: ConfigSnapshot,
    vocabulary: Vec<char>,
    threshold: ThresholdModel,
    params: Vec<ParamEntry>,
    payload_bytes: u64,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(FormatError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

fn read_matrix(payload: &[u8], p: &ParamEntry) -> Result<Matrix> {
    let n = p.rows.checked_mul(p.cols).and_then(|n| n.checked_mul(8));
    let start = usize::try_from(p.offset).ok();
    let range = match (start, n) {
        (Some(s), Some(n)) if s.checked_add(n).is_some_and(|e| e <= payload.len()) => s..s + n,
        _ => {
            return Err(FormatError::Manifest(format!("parameter {} lies outside the payload", p.name)).into())
        }
    };
    let data = payload[range]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    Matrix::from_vec(p.rows, p.cols, data)
}

pub fn save_bundle(b: &EngineBundle, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, b.to_bytes()?)?;
    Ok(())
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<EngineBundle> {
    EngineBundle::from_bytes(&fs::read(path)?)
}
