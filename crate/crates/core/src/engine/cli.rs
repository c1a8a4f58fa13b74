//! Command-line front end. Exit status: 0 on success, 1 on an operational
//! error, 2 on a usage error.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::corpus::{self, load_canonical, load_labeled_examples};
use super::store::{read_store, RetrainStore};
use super::synth::{generate_synthetic_corpus, SynthSpec};
use super::{
    build_detector_bundle, calibrate, encode_all, holdout_split, load_bundle, process_request,
    save_bundle, serve_stream, EngineBundle,
};
use crate::classifier::{evaluate_classifier, train_classifier, ClassifierConfig};
use crate::codec::{build_vocab, canonicalize_raw, CanonicalRequest};
use crate::detector::{DetectorConfig, DEFAULT_QUANTILE};
use crate::error::{Error, Result};
use crate::eval::{auc, rates, roc_curve, write_roc_csv, ConfusionCounts};
use crate::pca::{feature_matrix, feature_vector, fit_pca, pca_anomaly_score};

#[derive(Debug, Parser)]
#[command(name = "reqsentry", version, about = "LSTM autoencoder web request anomaly detection")]
pub struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Seed for initialization, shuffling, dropout and generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML file with `[detector]` and `[classifier]` tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Threshold quantile over benign calibration losses.
    #[arg(long, global = true)]
    quantile: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the autoencoder on benign requests and calibrate its threshold.
    TrainDetector {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Labeled attacks whose characters join the vocabulary.
        #[arg(long)]
        labeled: Option<PathBuf>,
    },
    /// Train the attack classifier and add it to a bundle.
    TrainClassifier {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        labeled: PathBuf,
        /// Defaults to overwriting the input bundle.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Refit the threshold on benign requests.
    FitThreshold {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        benign: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score one raw request and print its verdict.
    Score {
        #[arg(long)]
        bundle: PathBuf,
        /// Raw request file, `-` for stdin.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Stream verdicts for `---END---`-framed requests.
    Serve {
        #[arg(long)]
        bundle: PathBuf,
        /// Defaults to stdin.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Defaults to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Retraining store; in memory when absent.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Detection rates, AUC and (with labels) classifier accuracy.
    Evaluate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        benign: PathBuf,
        #[arg(long)]
        attacks: PathBuf,
    },
    /// ROC curve CSV over benign and attack scores.
    Roc {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        benign: PathBuf,
        #[arg(long)]
        attacks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// PCA reconstruction-error baseline on character frequencies.
    PcaBaseline {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        benign: PathBuf,
        #[arg(long)]
        attacks: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic benign corpus and labeled attack file.
    GenCorpus {
        #[arg(long)]
        benign_out: PathBuf,
        #[arg(long)]
        attacks_out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        benign: usize,
        #[arg(long, default_value_t = 350)]
        attacks: usize,
    },
    /// Continue training the detector on the retraining store.
    Retrain {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub detector: DetectorConfig,
    pub classifier: ClassifierConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    }
}

struct Ctx<'a> {
    seed: Option<u64>,
    config: Option<FileConfig>,
    quantile: f64,
    stdin: &'a mut dyn BufRead,
    stdout: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn detector_config(&self, fallback: Option<&DetectorConfig>) -> DetectorConfig {
        let mut cfg = match (&self.config, fallback) {
            (Some(f), _) => f.detector.clone(),
            (None, Some(b)) => b.clone(),
            (None, None) => DetectorConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg
    }

    fn classifier_config(&self) -> ClassifierConfig {
        let mut cfg = self.config.as_ref().map(|f| f.classifier.clone()).unwrap_or_default();
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg
    }

    fn print(&mut self, v: serde_json::Value) -> Result<()> {
        writeln!(self.stdout, "{v}")?;
        Ok(())
    }
}

/// Parses `args` (program name first) and runs against the process stdio.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdin = io::stdin();
    let mut lock = stdin.lock();
    let mut out = io::stdout().lock();
    let mut err = io::stderr().lock();
    run_cli_with(args, &mut lock, &mut out, &mut err)
}

pub fn run_cli_with<I, T>(args: I, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            // help and version go to stdout with status 0
            let _ = if code == 0 {
                write!(stdout, "{rendered}")
            } else {
                write!(stderr, "{rendered}")
            };
            return code;
        }
    };
    match run(cli, stdin, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}

fn run(cli: Cli, stdin: &mut dyn BufRead, stdout: &mut dyn Write) -> Result<()> {
    let config = cli.common.config.as_deref().map(FileConfig::load).transpose()?;
    let mut ctx = Ctx {
        seed: cli.common.seed,
        config,
        quantile: cli.common.quantile.unwrap_or(DEFAULT_QUANTILE),
        stdin,
        stdout,
    };
    match cli.command {
        Command::TrainDetector {
            corpus,
            out,
            labeled,
        } => {
            let benign = load_canonical(&corpus)?;
            let extra: Vec<CanonicalRequest> = match &labeled {
                Some(p) => load_labeled_examples(p)?.into_iter().map(|e| e.canonical).collect(),
                None => Vec::new(),
            };
            let cfg = ctx.detector_config(None);
            let t = build_detector_bundle(benign, &extra, &cfg, ctx.quantile)?;
            save_bundle(&t.bundle, &out)?;
            ctx.print(json!({
                "bundle": out,
                "train": t.train_size,
                "holdout": t.holdout_size,
                "vocab_size": t.bundle.vocab().size(),
                "initial_loss": t.report.initial_loss,
                "final_loss": t.report.final_loss(),
                "theta": t.bundle.threshold().theta(),
            }))
        }
        Command::TrainClassifier {
            bundle,
            labeled,
            out,
        } => {
            let mut b = load_bundle(&bundle)?;
            let data = load_labeled_examples(&labeled)?;
            let cfg = ctx.classifier_config();
            let (model, trace) = train_classifier(&data, b.vocab().clone(), &cfg)?;
            let acc = evaluate_classifier(&model, &data)?.accuracy;
            b.set_classifier(model)?;
            let out = out.unwrap_or(bundle);
            save_bundle(&b, &out)?;
            ctx.print(json!({
                "bundle": out,
                "examples": data.len(),
                "final_loss": trace.last(),
                "train_accuracy": acc,
            }))
        }
        Command::FitThreshold {
            bundle,
            benign,
            out,
        } => {
            let mut b = load_bundle(&bundle)?;
            let t = calibrate(b.detector(), &load_canonical(&benign)?, ctx.quantile)?;
            b.set_threshold(t);
            let out = out.unwrap_or(bundle);
            save_bundle(&b, &out)?;
            ctx.print(json!({
                "bundle": out,
                "theta": b.threshold().theta(),
                "quantile": b.threshold().quantile(),
                "calibration_size": b.threshold().calibration_size(),
            }))
        }
        Command::Score {
            bundle,
            input,
            store,
        } => {
            let b = load_bundle(&bundle)?;
            let raw = if input.as_os_str() == "-" {
                let mut buf = Vec::new();
                ctx.stdin.read_to_end(&mut buf)?;
                buf
            } else {
                fs::read(&input)?
            };
            let mut store = open_store(store.as_deref())?;
            let v = process_request(&b, &mut store, &raw)?;
            writeln!(ctx.stdout, "{}", v.to_json_line()?)?;
            Ok(())
        }
        Command::Serve {
            bundle,
            input,
            output,
            store,
        } => {
            let b = load_bundle(&bundle)?;
            let mut store = open_store(store.as_deref())?;
            let mut out: Box<dyn Write + '_> = match &output {
                Some(p) => Box::new(BufWriter::new(File::create(p)?)),
                None => Box::new(&mut *ctx.stdout),
            };
            match &input {
                Some(p) => serve_stream(&b, &mut store, BufReader::new(File::open(p)?), &mut out)?,
                None => serve_stream(&b, &mut store, &mut *ctx.stdin, &mut out)?,
            };
            out.flush()?;
            Ok(())
        }
        Command::Evaluate {
            bundle,
            benign,
            attacks,
        } => {
            let b = load_bundle(&bundle)?;
            let (scores, labels) = scored(&b, &benign, &attacks)?;
            let counts = ConfusionCounts::at_threshold(&scores, &labels, b.threshold().theta())?;
            let area = auc(&roc_curve(&scores, &labels)?);
            let accuracy = match (b.classifier(), is_labeled(&attacks)?) {
                (Some(c), true) => Some(evaluate_classifier(c, &load_labeled_examples(&attacks)?)?.accuracy),
                _ => None,
            };
            ctx.print(json!({
                "counts": counts,
                "rates": rates(&counts),
                "auc": area,
                "theta": b.threshold().theta(),
                "classifier_accuracy": accuracy,
            }))
        }
        Command::Roc {
            bundle,
            benign,
            attacks,
            out,
        } => {
            let b = load_bundle(&bundle)?;
            let (scores, labels) = scored(&b, &benign, &attacks)?;
            let curve = roc_curve(&scores, &labels)?;
            write_roc_csv(&curve, BufWriter::new(File::create(&out)?))?;
            ctx.print(json!({ "out": out, "points": curve.points.len(), "auc": auc(&curve) }))
        }
        Command::PcaBaseline {
            train,
            benign,
            attacks,
            k,
            out,
        } => {
            let train = load_canonical(&train)?;
            let vocab = build_vocab(train.iter(), 1)?;
            let model = fit_pca(&feature_matrix(&vocab, &train)?, k)?;
            let score = |c: &CanonicalRequest| pca_anomaly_score(&model, &feature_vector(&vocab, c));
            let train_scores = train.iter().map(score).collect::<Result<Vec<_>>>()?;
            let threshold = crate::detector::fit_threshold(&train_scores, ctx.quantile)?;
            let mut scores = Vec::new();
            let mut labels = Vec::new();
            for (path, label) in [(&benign, false), (&attacks, true)] {
                for raw in corpus::read_requests(path)? {
                    scores.push(match canonicalize_raw(&raw) {
                        Ok(c) => score(&c)?,
                        Err(_) => f64::INFINITY,
                    });
                    labels.push(label);
                }
            }
            let curve = roc_curve(&scores, &labels)?;
            if let Some(p) = &out {
                write_roc_csv(&curve, BufWriter::new(File::create(p)?))?;
            }
            let counts = ConfusionCounts::at_threshold(&scores, &labels, threshold.theta())?;
            ctx.print(json!({
                "k": k,
                "eigenvalues": model.eigenvalues,
                "theta": threshold.theta(),
                "counts": counts,
                "rates": rates(&counts),
                "auc": auc(&curve),
            }))
        }
        Command::GenCorpus {
            benign_out,
            attacks_out,
            benign,
            attacks,
        } => {
            let spec = SynthSpec {
                benign,
                attacks,
                seed: ctx.seed.unwrap_or(0),
            };
            let c = generate_synthetic_corpus(&spec)?;
            corpus::write_records(BufWriter::new(File::create(&benign_out)?), &c.benign)?;
            corpus::write_labeled_records(
                BufWriter::new(File::create(&attacks_out)?),
                c.attacks.iter().map(|(l, r)| (*l, r.as_bytes())),
            )?;
            ctx.print(json!({ "benign": c.benign.len(), "attacks": c.attacks.len(), "seed": spec.seed }))
        }
        Command::Retrain { bundle, store, out } => {
            let mut b = load_bundle(&bundle)?;
            let records = read_store(&store)?;
            let cfg = ctx.detector_config(Some(b.detector().config()));
            let (train, holdout) = holdout_split(records, cfg.seed)?;
            let mut detector = b.detector().clone();
            let report = detector.fit(&encode_all(&detector, &train)?, &cfg)?;
            let threshold = calibrate(&detector, &holdout, ctx.quantile)?;
            b.set_detector(detector)?;
            b.set_threshold(threshold);
            let out = out.unwrap_or(bundle);
            save_bundle(&b, &out)?;
            ctx.print(json!({
                "bundle": out,
                "train": train.len(),
                "holdout": holdout.len(),
                "initial_loss": report.initial_loss,
                "final_loss": report.final_loss(),
                "theta": b.threshold().theta(),
            }))
        }
    }
}

fn open_store(path: Option<&Path>) -> Result<RetrainStore> {
    match path {
        Some(p) => RetrainStore::open(p),
        None => Ok(RetrainStore::in_memory()),
    }
}

fn is_labeled(path: &Path) -> Result<bool> {
    let first = corpus::open_records(path)?.next().transpose()?;
    Ok(first.is_some_and(|r| r.starts_with(b"LABEL:")))
}

/// Detector losses for benign (`false`) then attack (`true`) records;
/// unreadable records score `+inf`, matching the fail-closed verdict.
fn scored(b: &EngineBundle, benign: &Path, attacks: &Path) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (path, label) in [(benign, false), (attacks, true)] {
        for raw in corpus::read_requests(path)? {
            scores.push(match canonicalize_raw(&raw) {
                Ok(c) => b.detector().score(&c)?,
                Err(_) => f64::INFINITY,
            });
            labels.push(label);
        }
    }
    Ok((scores, labels))
}
