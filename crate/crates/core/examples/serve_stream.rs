//! Build a bundle, save and reload it, then stream framed requests through
//! it and print the verdict lines.

use reqsentry::codec::canonicalize_raw;
use reqsentry::detector::DetectorConfig;
use reqsentry::engine::corpus::write_record;
use reqsentry::engine::{
    build_detector_bundle, generate_synthetic_corpus, load_bundle, save_bundle, serve_stream, RetrainStore, SynthSpec,
};

fn main() -> reqsentry::Result<()> {
    let corpus = generate_synthetic_corpus(&SynthSpec {
        benign: 200,
        attacks: 7,
        seed: 5,
    })?;
    let benign = corpus
        .benign
        .iter()
        .map(|r| canonicalize_raw(r.as_bytes()))
        .collect::<reqsentry::Result<Vec<_>>>()?;
    let cfg = DetectorConfig {
        embed_size: 16,
        hidden_size: 16,
        num_layers: 1,
        batch_size: 8,
        learning_rate: 1e-2,
        epochs: 5,
        ..Default::default()
    };
    let t = build_detector_bundle(benign, &[], &cfg, 0.99)?;

    let dir = std::env::temp_dir().join(format!("reqsentry-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.bundle");
    save_bundle(&t.bundle, &path)?;
    let bundle = load_bundle(&path)?;
    println!("bundle {} ({} bytes), theta {:.4}", path.display(), std::fs::metadata(&path)?.len(), bundle.threshold().theta());

    let mut input = Vec::new();
    for raw in corpus.benign.iter().take(3) {
        write_record(&mut input, raw.as_bytes())?;
    }
    write_record(&mut input, b"\xff\xfe not http")?;
    for (_, raw) in &corpus.attacks {
        write_record(&mut input, raw.as_bytes())?;
    }

    let mut store = RetrainStore::open(dir.join("retrain.jsonl"))?;
    let summary = serve_stream(&bundle, &mut store, &input[..], std::io::stdout().lock())?;
    println!("{summary:?}; store holds {}", store.count());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
