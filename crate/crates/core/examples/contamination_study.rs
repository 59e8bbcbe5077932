//! Autoencoder reconstruction with clean input, with additive noise on the
//! input, and with a NIB stem. The NIB recovers the clean signal; plain
//! additive noise does not.
//!
//! cargo run --release --example contamination_study -- [steps]

use nibkit::flatlab::{run_contamination_study, ContaminationConfig};
use nibkit::io::corpus::{gen_corpus, CorpusSpec};

fn main() -> nibkit::Result<()> {
    let steps: usize = std::env::args().nth(1).map_or(500, |s| s.parse().expect("steps"));
    let corpus = gen_corpus(&CorpusSpec {
        count: 64,
        size: 64,
        flat_fraction: 0.9,
        seed: 1,
        ..CorpusSpec::default()
    })?;
    let cfg = ContaminationConfig {
        steps,
        ..ContaminationConfig::default()
    };
    let r = run_contamination_study(&corpus, &cfg, 0)?;
    println!("autoencoder          {:6.2} dB", r.psnr_ae);
    println!("autoencoder + noise  {:6.2} dB", r.psnr_noise);
    println!("autoencoder + NIB    {:6.2} dB", r.psnr_nib);
    Ok(())
}
