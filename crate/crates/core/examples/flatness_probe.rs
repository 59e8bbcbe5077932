//! Feed a constant gray image through a standard and a NIB resnet and report
//! the interior spatial std of every layer.
//!
//! cargo run --release --example flatness_probe -- [gray] [out_dir]

use nibkit::flatlab::constant_probe;
use nibkit::io::{write_image, ImageFormat};
use nibkit::models::{build_model, NibConfig, ModelConfig};

fn main() -> nibkit::Result<()> {
    let mut args = std::env::args().skip(1);
    let gray: f64 = args.next().map_or(0.5, |s| s.parse().expect("gray level"));
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "out/flatness_probe".into()));

    for (label, nib) in [("standard", None), ("nib", Some(NibConfig::default()))] {
        let model = build_model::<f32>(&ModelConfig::resnet(16, nib))?;
        let report = constant_probe(&model, gray, 64)?;
        println!("== {label} resnet, constant {gray}");
        for l in &report.layers {
            println!("  {:2} {:<14} margin {:2}  max std {:.2e}", l.index, l.name, l.margin, l.max_std());
        }
        println!("  all flat: {}", report.all_flat());
        for (i, d) in report.dumps.iter().enumerate() {
            write_image(out.join(label).join(format!("layer_{i:02}.pgm")), d, ImageFormat::Pgm)?;
        }
    }
    println!("feature dumps in {}", out.display());
    Ok(())
}
