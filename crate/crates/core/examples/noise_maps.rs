//! Render the noise map of every study variant to PGM and print its
//! statistics. Dynamic maps change with the sample id; stationary maps do not.

use nibkit::flatlab::FIG5_VARIANTS;
use nibkit::io::{write_image, ImageFormat};
use nibkit::nib::{make_noise_map, NoiseSpec};

fn main() -> nibkit::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/noise_maps".into()));
    for label in FIG5_VARIANTS {
        let spec = NoiseSpec::from_label(label, 42)?;
        let a = make_noise_map::<f32>(&spec, 64, 64, 0)?;
        let b = make_noise_map::<f32>(&spec, 64, 64, 1)?;
        let mean = a.data().iter().map(|&v| v as f64).sum::<f64>() / 4096.0;
        let var = a.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 4096.0;
        let changed = a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count();
        println!(
            "{label:<12} mean {mean:+.4} std {:.4}  pixels differing between samples 0 and 1: {changed}",
            var.sqrt()
        );
        let (lo, hi) = a.min_max();
        let shown = a.map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 });
        write_image(out.join(format!("{label}.pgm")), &shown, ImageFormat::Pgm)?;
    }
    Ok(())
}
