use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, OptimizerState, Shape, Tensor, Var};
use crate::error::{Error, Result};
use crate::halftone::{dither, evaluate, psnr, train_halftoner, HalftoneLossConfig, HalftoneMetrics, TrainOptions};
use crate::io::corpus::{flat_mask, Corpus};
use crate::io::to_bytes;
use crate::models::{build_model, ModelConfig, NibConfig, OutputActivation};
use crate::nib::{noise_for_batch, NoiseSpec};

/// The variant set of the noise-mode study.
pub const FIG5_VARIANTS: [&str; 7] = ["S-N-0.3", "D-N-0.3", "S-N-0.03", "S-U-0.3", "regular-grid", "D-B-0.5", "F-D-N-0.3"];

/// Label of the reference arm without a NIB.
pub const BASELINE_LABEL: &str = "no-NIB";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub width: usize,
    pub loss: HalftoneLossConfig,
    pub train: TrainOptions,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            width: 8,
            loss: HalftoneLossConfig::default(),
            train: TrainOptions {
                steps: 1000,
                lr: 2e-3,
                ..TrainOptions::default()
            },
        }
    }
}

/// One trained halftoning arm.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmRun {
    pub label: String,
    pub seed: u64,
    pub val_psnr: f64,
    pub val_ssim: f64,
    /// Metrics of the halftone of a constant 0.5 image at corpus size.
    pub half_gray: HalftoneMetrics,
    pub half_gray_mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyResult {
    pub label: String,
    pub mean: f64,
    /// Sample standard deviation across seeds.
    pub std: f64,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModeStudy {
    /// Baseline first, then the variants in the order given.
    pub results: Vec<StudyResult>,
    pub runs: Vec<ArmRun>,
}

impl NoiseModeStudy {
    pub fn result(&self, label: &str) -> Option<&StudyResult> {
        self.results.iter().find(|r| r.label == label)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,mean_psnr,std_psnr,runs\n");
        for r in &self.results {
            writeln!(s, "{},{:.4},{:.4},{}", r.label, r.mean, r.std, r.values.len()).unwrap();
        }
        s
    }
}

pub fn summarize(label: &str, values: Vec<f64>) -> StudyResult {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n.max(1.0);
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    StudyResult {
        label: label.to_string(),
        mean,
        std: var.sqrt(),
        values,
    }
}

/// Trains one halftoning ResNet (init and batch order both seeded by `seed`)
/// and scores it on the validation split.
pub fn train_arm(
    label: &str,
    noise: Option<NoiseSpec>,
    cfg: &StudyConfig,
    corpus: &Corpus,
    seed: u64,
) -> Result<ArmRun> {
    let model_cfg = ModelConfig::resnet(cfg.width, noise.map(|noise| NibConfig { noise, kernel: 1 })).with_seed(seed);
    let opts = TrainOptions {
        seed,
        eval_every: 0,
        ..cfg.train.clone()
    };
    let out = train_halftoner(&model_cfg, &cfg.loss, corpus, &opts)?;
    let val = evaluate(&out.model, &corpus.val(), &cfg.loss)?;
    let size = corpus.images[0].shape().h;
    let half = dither(&out.model, &Tensor::full([1, 1, size, size], 0.5), &cfg.loss)?;
    Ok(ArmRun {
        label: label.to_string(),
        seed,
        val_psnr: val.mean_psnr,
        val_ssim: val.mean_ssim,
        half_gray: half.metrics,
        half_gray_mean: half.binary.mean() as f64,
    })
}

/// Trains the no-NIB baseline and every variant with each seed and reports
/// validation tone PSNR as mean and std across seeds.
pub fn run_noise_mode_study(
    variants: &[NoiseSpec],
    corpus: &Corpus,
    cfg: &StudyConfig,
    seeds: &[u64],
) -> Result<NoiseModeStudy> {
    if seeds.len() < 3 {
        return Err(Error::Config(format!("a study needs at least 3 seeds, got {}", seeds.len())));
    }
    let mut arms: Vec<(String, Option<NoiseSpec>)> = vec![(BASELINE_LABEL.to_string(), None)];
    arms.extend(variants.iter().map(|v| (v.label(), Some(*v))));
    let jobs: Vec<(usize, u64)> = (0..arms.len()).flat_map(|a| seeds.iter().map(move |&s| (a, s))).collect();
    let runs = crate::parallel::map(jobs, |(a, seed)| train_arm(&arms[a].0, arms[a].1, cfg, corpus, seed))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let results = arms
        .iter()
        .map(|(label, _)| {
            summarize(
                label,
                runs.iter().filter(|r| &r.label == label).map(|r| r.val_psnr).collect(),
            )
        })
        .collect();
    Ok(NoiseModeStudy { results, runs })
}

fn random_crops(rng: &mut ChaCha8Rng, images: &[&Tensor], batch: usize, crop: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(batch * crop * crop);
    for _ in 0..batch {
        let src = images[rng.gen_range(0..images.len())];
        let s = src.shape();
        let y0 = rng.gen_range(0..=s.h - crop);
        let x0 = rng.gen_range(0..=s.w - crop);
        data.extend_from_slice(src.crop(y0, x0, crop, crop)?.data());
    }
    Tensor::from_vec(Shape::new(batch, 1, crop, crop), data)
}

fn check_finite(step: usize, loss: f32) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("training diverged at step {step}; lower the learning rate")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContaminationConfig {
    pub width: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub crop: usize,
    /// Cosine decay of the learning rate to zero over the run.
    pub cosine_decay: bool,
    /// Noise of the additive arm and of the NIB arm.
    pub noise: NoiseSpec,
}

impl Default for ContaminationConfig {
    fn default() -> Self {
        ContaminationConfig {
            width: 8,
            steps: 1000,
            batch: 8,
            lr: 2e-3,
            crop: 32,
            cosine_decay: true,
            noise: NoiseSpec::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContaminationResult {
    pub psnr_ae: f64,
    /// Noise added straight to the input, no symmetric branch.
    pub psnr_noise: f64,
    pub psnr_nib: f64,
}

#[derive(Clone, Copy, PartialEq)]
enum AeArm {
    Plain,
    AdditiveNoise,
    Nib,
}

fn train_autoencoder(arm: AeArm, corpus: &Corpus, cfg: &ContaminationConfig, seed: u64) -> Result<f64> {
    let nib = (arm == AeArm::Nib).then_some(NibConfig {
        noise: cfg.noise,
        kernel: 1,
    });
    let mut model = build_model::<f32>(&ModelConfig::autoencoder(cfg.width, nib).with_seed(seed))?;
    let train = corpus.train();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = OptimizerState::adam(cfg.lr);
    let corrupt = |clean: &Tensor, sample_id: u64| -> Result<Tensor> {
        if arm == AeArm::AdditiveNoise {
            let n = noise_for_batch::<f32>(&cfg.noise, clean.shape(), sample_id);
            clean.zip_map(&n, |a, b| a + b)
        } else {
            Ok(clean.clone())
        }
    };
    for step in 0..cfg.steps {
        if cfg.cosine_decay {
            let t = step as f64 / cfg.steps as f64;
            opt.lr = cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
        }
        let clean = random_crops(&mut rng, &train, cfg.batch, cfg.crop)?;
        let input = corrupt(&clean, (step * cfg.batch) as u64)?;
        let g = Graph::new();
        let p = model.params().bind(&g, true);
        let y = model.forward(&p, g.constant(input), (step * cfg.batch) as u64)?;
        let loss = y.mse(g.constant(clean))?;
        check_finite(step, loss.item())?;
        loss.backward()?;
        let grads = p.take_grads();
        drop(p);
        opt.step(model.params_mut(), &grads)?;
    }
    let scores = corpus
        .val()
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let out = model.infer(&corrupt(img, i as u64)?, i as u64)?.map(|v| v.clamp(0.0, 1.0));
            psnr(&out, img)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len().max(1) as f64)
}

/// Trains the same autoencoder three ways and reports raw reconstruction
/// PSNR on the validation split.
pub fn run_contamination_study(corpus: &Corpus, cfg: &ContaminationConfig, seed: u64) -> Result<ContaminationResult> {
    let arms = vec![AeArm::Plain, AeArm::AdditiveNoise, AeArm::Nib];
    let p = crate::parallel::map(arms, |arm| train_autoencoder(arm, corpus, cfg, seed))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(ContaminationResult {
        psnr_ae: p[0],
        psnr_noise: p[1],
        psnr_nib: p[2],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HidingConfig {
    pub width: usize,
    /// Residual blocks of the encoder. Kept shallow so its receptive field
    /// is smaller than a message cell.
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub crop: usize,
    /// Side of the cells of the hidden binary message.
    pub block: usize,
    /// Largest change the encoder may apply to a pixel.
    pub amplitude: f64,
    /// Weight of the carrier-to-gray MSE.
    pub leash: f64,
    pub noise: NoiseSpec,
}

impl Default for HidingConfig {
    fn default() -> Self {
        HidingConfig {
            width: 8,
            encoder_blocks: 2,
            decoder_blocks: 4,
            steps: 1000,
            batch: 8,
            lr: 2e-3,
            crop: 32,
            block: 16,
            amplitude: 0.1,
            leash: 4.0,
            noise: NoiseSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HidingArm {
    pub label: String,
    pub flat_mse: f64,
    pub textured_mse: f64,
    /// Mean |carrier - gray| on held-out images.
    pub carrier_dev: f64,
}

impl HidingArm {
    pub fn ratio(&self) -> f64 {
        self.flat_mse / self.textured_mse
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataHidingReport {
    pub standard: HidingArm,
    pub nib: HidingArm,
}

impl DataHidingReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("arm,flat_mse,textured_mse,ratio,carrier_dev\n");
        for a in [&self.standard, &self.nib] {
            writeln!(
                s,
                "{},{:.6},{:.6},{:.3},{:.5}",
                a.label,
                a.flat_mse,
                a.textured_mse,
                a.ratio(),
                a.carrier_dev
            )
            .unwrap();
        }
        s
    }
}

/// Binary message with one random bit per `block x block` cell.
fn hidden_field(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize, block: usize) -> Tensor {
    let (bh, bw) = (h.div_ceil(block), w.div_ceil(block));
    let cells: Vec<f32> = (0..n * bh * bw).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    Tensor::from_fn(Shape::new(n, 1, h, w), |i, _, y, x| cells[(i * bh + y / block) * bw + x / block])
}

struct HidingNets {
    encoder: crate::models::Model<f32>,
    decoder: crate::models::Model<f32>,
}

impl HidingNets {
    fn carrier<'g>(
        &self,
        enc: &crate::autodiff::Bound<'g, f32>,
        gray: Var<'g, f32>,
        field: Var<'g, f32>,
        amplitude: f64,
        sample_id: u64,
    ) -> Result<Var<'g, f32>> {
        let x = Var::concat(&[gray, field])?;
        let delta = self.encoder.forward(enc, x, sample_id)?;
        gray.add(delta.affine(amplitude, 0.0))
    }
}

fn train_hiding_arm(nib: bool, corpus: &Corpus, cfg: &HidingConfig, seed: u64) -> Result<HidingArm> {
    let nib_cfg = nib.then_some(NibConfig {
        noise: cfg.noise,
        kernel: 1,
    });
    let mut enc_cfg = ModelConfig::resnet(cfg.width, nib_cfg).with_seed(seed);
    enc_cfg.in_channels = 2;
    enc_cfg.blocks = cfg.encoder_blocks;
    enc_cfg.output_activation = OutputActivation::Tanh;
    let mut dec_cfg = ModelConfig::resnet(cfg.width, None).with_seed(seed.wrapping_add(1));
    dec_cfg.blocks = cfg.decoder_blocks;
    let mut nets = HidingNets {
        encoder: build_model(&enc_cfg)?,
        decoder: build_model(&dec_cfg)?,
    };
    let train = corpus.train();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt_e = OptimizerState::adam(cfg.lr);
    let mut opt_d = OptimizerState::adam(cfg.lr);
    for step in 0..cfg.steps {
        let gray = random_crops(&mut rng, &train, cfg.batch, cfg.crop)?;
        let field = hidden_field(&mut rng, cfg.batch, cfg.crop, cfg.crop, cfg.block);
        let g = Graph::new();
        let pe = nets.encoder.params().bind(&g, true);
        let pd = nets.decoder.params().bind(&g, true);
        let gv = g.constant(gray);
        let fv = g.constant(field);
        let sid = (step * cfg.batch) as u64;
        let carrier = nets.carrier(&pe, gv, fv, cfg.amplitude, sid)?;
        let decoded = nets.decoder.forward(&pd, carrier, sid)?;
        let loss = decoded.mse(fv)?.add(carrier.mse(gv)?.affine(cfg.leash, 0.0))?;
        check_finite(step, loss.item())?;
        loss.backward()?;
        let (ge, gd) = (pe.take_grads(), pd.take_grads());
        drop((pe, pd));
        opt_e.step(nets.encoder.params_mut(), &ge)?;
        opt_d.step(nets.decoder.params_mut(), &gd)?;
    }

    let mut eval_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xE7A1);
    let (mut flat_se, mut flat_n, mut tex_se, mut tex_n, mut dev, mut total) = (0.0, 0usize, 0.0, 0usize, 0.0, 0usize);
    for (i, img) in corpus.val().iter().enumerate() {
        let s = img.shape();
        let field = hidden_field(&mut eval_rng, 1, s.h, s.w, cfg.block);
        let g = Graph::new();
        let pe = nets.encoder.params().bind(&g, false);
        let pd = nets.decoder.params().bind(&g, false);
        let carrier = nets.carrier(&pe, g.constant((*img).clone()), g.constant(field.clone()), cfg.amplitude, i as u64)?;
        let decoded = nets.decoder.forward(&pd, carrier, i as u64)?.value();
        let mask = flat_mask(&to_bytes(img), s.h, s.w);
        for (j, &flat) in mask.iter().enumerate() {
            let e = (decoded.data()[j] - field.data()[j]) as f64;
            if flat {
                flat_se += e * e;
                flat_n += 1;
            } else {
                tex_se += e * e;
                tex_n += 1;
            }
        }
        let c = carrier.value();
        dev += c.data().iter().zip(img.data()).map(|(a, b)| (a - b).abs() as f64).sum::<f64>();
        total += s.numel();
    }
    Ok(HidingArm {
        label: if nib { "nib" } else { "standard" }.to_string(),
        flat_mse: flat_se / flat_n.max(1) as f64,
        textured_mse: tex_se / tex_n.max(1) as f64,
        carrier_dev: dev / total.max(1) as f64,
    })
}

/// Trains an encoder that hides a blockwise-constant field in a carrier image
/// close to the gray input, plus a decoder that recovers the field from the
/// carrier alone, with and without a NIB in the encoder. Recovery error is
/// split by flat and textured pixels of held-out images.
pub fn run_data_hiding_toy(corpus: &Corpus, cfg: &HidingConfig, seed: u64) -> Result<DataHidingReport> {
    let arms = crate::parallel::map(vec![false, true], |nib| train_hiding_arm(nib, corpus, cfg, seed))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut it = arms.into_iter();
    Ok(DataHidingReport {
        standard: it.next().expect("two arms"),
        nib: it.next().expect("two arms"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let r = summarize("x", vec![1.0, 2.0, 3.0]);
        assert_eq!(r.mean, 2.0);
        assert!((r.std - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hidden_field_is_blockwise_constant() {
        let f = hidden_field(&mut ChaCha8Rng::seed_from_u64(1), 1, 64, 64, 8);
        assert!(f.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(f.at(0, 0, 0, 0), f.at(0, 0, 7, 7));
        let ones = f.data().iter().filter(|&&v| v == 1.0).count();
        assert!(ones > 0 && ones < 64 * 64);
    }

    #[test]
    fn study_needs_three_seeds() {
        let corpus = crate::io::corpus::gen_corpus(&crate::io::corpus::CorpusSpec {
            count: 4,
            size: 16,
            ..Default::default()
        })
        .unwrap();
        let e = run_noise_mode_study(&[NoiseSpec::default()], &corpus, &StudyConfig::default(), &[1, 2]);
        assert!(matches!(e, Err(Error::Config(_))));
    }
}
