//! Train a small NIB resnet halftoner on a synthetic corpus, then dither a
//! flat gray image. A standard resnet cannot place dots on flat input; the NIB
//! model can.
//!
//! cargo run --release --example neural_dither -- [steps] [out_dir]

use nibkit::autodiff::Tensor;
use nibkit::halftone::{dither, train_halftoner, HalftoneLossConfig, TrainOptions};
use nibkit::io::corpus::{gen_corpus, CorpusSpec};
use nibkit::io::{write_image, ImageFormat};
use nibkit::models::{ModelConfig, NibConfig};

fn main() -> nibkit::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(400, |s| s.parse().expect("steps"));
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "out/neural_dither".into()));

    let corpus = gen_corpus(&CorpusSpec {
        count: 64,
        size: 64,
        flat_fraction: 0.9,
        seed: 1,
        ..CorpusSpec::default()
    })?;
    let loss = HalftoneLossConfig::default();
    let opts = TrainOptions {
        steps,
        lr: 2e-3,
        eval_every: steps / 4,
        ..TrainOptions::default()
    };
    let gray = Tensor::full([1, 1, 64, 64], 0.5);
    for (label, nib) in [("standard", None), ("nib", Some(NibConfig::default()))] {
        let trained = train_halftoner(&ModelConfig::resnet(8, nib), &loss, &corpus, &opts)?;
        let last = trained.log.last().expect("at least one step");
        let r = dither(&trained.model, &gray, &loss)?;
        println!(
            "{label:<8} val tone_psnr {:6.2} dB | flat 0.5: mean {:.3} tone_psnr {:6.2} dB degraded {}",
            last.val_psnr.unwrap_or(f64::NAN),
            r.binary.mean(),
            r.metrics.tone_psnr,
            r.metrics.flatness_degraded
        );
        write_image(out.join(format!("{label}_gray50.pbm")), &r.binary, ImageFormat::Pbm)?;
    }
    Ok(())
}
