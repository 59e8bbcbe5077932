//! Floyd-Steinberg and Bayer halftones of a horizontal ramp and a flat gray
//! patch, with tone PSNR, SSIM and low-frequency energy share.

use nibkit::autodiff::Tensor;
use nibkit::halftone::{bayer_dither, floyd_steinberg, score_halftone, HalftoneLossConfig};
use nibkit::io::{write_image, ImageFormat};

fn main() -> nibkit::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/classical_dither".into()));
    let cfg = HalftoneLossConfig::default();
    let inputs = [
        ("ramp", Tensor::from_fn([1, 1, 64, 128], |_, _, _, x| x as f32 / 127.0)),
        ("gray50", Tensor::full([1, 1, 64, 64], 0.5)),
    ];
    for (name, gray) in &inputs {
        for (method, binary) in [("fs", floyd_steinberg(gray)), ("bayer", bayer_dither(gray, 3)?)] {
            let r = score_halftone(binary, gray, &cfg)?;
            println!(
                "{name:<7} {method:<6} tone_psnr {:6.2} dB  ssim {:.3}  lowfreq_share {:.4}  mean {:.3}",
                r.metrics.tone_psnr,
                r.metrics.ssim,
                r.metrics.lowfreq_share,
                r.binary.mean()
            );
            write_image(out.join(format!("{name}_{method}.pbm")), &r.binary, ImageFormat::Pbm)?;
        }
    }
    Ok(())
}
