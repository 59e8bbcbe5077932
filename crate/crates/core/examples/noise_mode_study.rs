//! Compare noise families, modes and injection schemes by validation tone
//! PSNR over several seeds, against a model with no NIB.
//!
//! cargo run --release --example noise_mode_study -- [steps] [seeds]

use nibkit::flatlab::{run_noise_mode_study, StudyConfig, FIG5_VARIANTS};
use nibkit::halftone::TrainOptions;
use nibkit::io::corpus::{gen_corpus, CorpusSpec};
use nibkit::nib::NoiseSpec;

fn main() -> nibkit::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(300, |s| s.parse().expect("steps"));
    let n_seeds: u64 = args.next().map_or(3, |s| s.parse().expect("seeds"));

    let corpus = gen_corpus(&CorpusSpec {
        count: 64,
        size: 64,
        flat_fraction: 0.9,
        seed: 1,
        ..CorpusSpec::default()
    })?;
    let variants = FIG5_VARIANTS
        .iter()
        .map(|l| NoiseSpec::from_label(l, 42))
        .collect::<nibkit::Result<Vec<_>>>()?;
    let cfg = StudyConfig {
        train: TrainOptions {
            steps,
            ..StudyConfig::default().train
        },
        ..StudyConfig::default()
    };
    let seeds: Vec<u64> = (0..n_seeds).collect();
    let study = run_noise_mode_study(&variants, &corpus, &cfg, &seeds)?;
    print!("{}", study.to_csv());
    Ok(())
}
