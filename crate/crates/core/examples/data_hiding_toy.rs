//! Hide a binary message field in a gray image and recover it, with and
//! without a NIB stem, and compare recovery error on flat and textured
//! blocks. Around 2000 steps are needed before either arm recovers bits.
//!
//! cargo run --release --example data_hiding_toy -- [steps]

use nibkit::flatlab::{run_data_hiding_toy, HidingConfig};
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
    let cfg = HidingConfig {
        steps,
        ..HidingConfig::default()
    };
    let report = run_data_hiding_toy(&corpus, &cfg, 0)?;
    print!("{}", report.to_csv());
    Ok(())
}
