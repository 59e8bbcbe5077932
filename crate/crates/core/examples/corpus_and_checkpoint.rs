//! Generate a corpus to disk, reload it, train briefly, save a checkpoint and
//! confirm the reloaded model reproduces the outputs bit for bit.

use nibkit::autodiff::Tensor;
use nibkit::halftone::{train_halftoner, HalftoneLossConfig, TrainOptions};
use nibkit::io::checkpoint::{load_checkpoint, read_header, save_checkpoint};
use nibkit::io::corpus::{gen_corpus, Corpus, CorpusSpec};
use nibkit::models::{ModelConfig, NibConfig};

fn main() -> nibkit::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/corpus_and_checkpoint".into()));
    let spec = CorpusSpec {
        count: 10,
        size: 64,
        flat_fraction: 0.6,
        seed: 7,
        ..CorpusSpec::default()
    };
    let corpus = gen_corpus(&spec)?;
    let manifest = corpus.write(out.join("corpus"))?;
    let reloaded = Corpus::load(out.join("corpus"))?;
    println!(
        "{} images, mean flat fraction {:.3}, manifest {}, reload identical: {}",
        corpus.images.len(),
        corpus.mean_flat_fraction(),
        manifest.display(),
        reloaded.images == corpus.images
    );

    let opts = TrainOptions {
        steps: 20,
        lr: 2e-3,
        ..TrainOptions::default()
    };
    let trained = train_halftoner(
        &ModelConfig::resnet(8, Some(NibConfig::default())),
        &HalftoneLossConfig::default(),
        &reloaded,
        &opts,
    )?;
    let path = out.join("model.ckpt");
    save_checkpoint(&path, &trained.checkpoint())?;
    let (header, _) = read_header(&path)?;
    println!("checkpoint: step {}, {} tensors, {} payload bytes", header.step, header.tensors.len(), header.payload_bytes);

    let model = load_checkpoint(&path)?.to_model()?;
    let x = Tensor::full([1, 1, 64, 64], 0.5);
    println!("reloaded outputs identical: {}", model.infer(&x, 0)? == trained.model.infer(&x, 0)?);
    Ok(())
}
