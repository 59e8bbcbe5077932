//! Analytic receptive fields of the three architectures, plus a brute-force
//! check on the resnet: perturb one input pixel and measure how far the
//! output changes.

use nibkit::autodiff::Tensor;
use nibkit::models::{build_model, receptive_field, rf_profile, ModelConfig};

fn main() -> nibkit::Result<()> {
    for cfg in [
        ModelConfig::resnet(8, None),
        ModelConfig::unet(8, None),
        ModelConfig::autoencoder(8, None),
    ] {
        let model = build_model::<f32>(&cfg)?;
        let (h, w) = receptive_field(&model);
        println!("{:?}: {h}x{w}", cfg.arch);
        for (meta, p) in model.layers().iter().zip(rf_profile(model.layers())) {
            println!("    {:<16} extent {:3} jump {}", meta.name, p.extent, p.jump);
        }
    }

    let model = build_model::<f64>(&ModelConfig::resnet(8, None))?;
    let n = 48;
    let base = Tensor::<f64>::from_fn([1, 1, n, n], |_, _, y, x| ((x * 7 + y * 13) % 17) as f64 / 17.0);
    let mut bumped = base.clone();
    bumped.set(0, 0, n / 2, n / 2, 1.5);
    let (a, b) = (model.infer(&base, 0)?, model.infer(&bumped, 0)?);
    let (mut lo, mut hi) = (n, 0);
    for y in 0..n {
        for x in 0..n {
            if (a.at(0, 0, y, x) - b.at(0, 0, y, x)).abs() > 0.0 {
                lo = lo.min(x.min(y));
                hi = hi.max(x.max(y));
            }
        }
    }
    println!("brute force: changed region spans {} pixels (bound {})", hi + 1 - lo, receptive_field(&model).0);
    Ok(())
}
