use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{binarization_penalty, blue_noise_loss, build_lowfreq_mask, dither_with_id, tone_loss, HalftoneLossConfig};
use crate::autodiff::{Graph, OptimizerState, Shape, Tensor, ADAM_DEFAULT_LR};
use crate::error::{Error, Result};
use crate::io::checkpoint::Checkpoint;
use crate::io::corpus::Corpus;
use crate::models::{build_model, Model, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Drives batch sampling and constant-patch levels.
    pub seed: u64,
    /// Side of the random training crops; 0 uses whole images.
    pub crop: usize,
    /// Validate every this many steps (and after the last one); 0 only at the end.
    pub eval_every: usize,
    /// Cap on validation images, for cheap periodic checks.
    pub val_limit: Option<usize>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            steps: 500,
            batch: 8,
            lr: ADAM_DEFAULT_LR,
            seed: 0,
            crop: 32,
            eval_every: 0,
            val_limit: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub tone_loss: f64,
    pub bin_loss: f64,
    pub blue_loss: f64,
    pub total: f64,
    pub val_psnr: Option<f64>,
    pub val_ssim: Option<f64>,
}

pub const METRICS_HEADER: &str = "step,tone_loss,bin_loss,blue_loss,total,val_psnr,val_ssim";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    for r in rows {
        writeln!(
            s,
            "{},{:.8},{:.8},{:.8},{:.8},{},{}",
            r.step,
            r.tone_loss,
            r.bin_loss,
            r.blue_loss,
            r.total,
            opt(r.val_psnr),
            opt(r.val_ssim)
        )
        .unwrap();
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

/// Dithers every image (sample id = index) and averages tone PSNR and SSIM.
pub fn evaluate(model: &Model<f32>, images: &[&Tensor], cfg: &HalftoneLossConfig) -> Result<EvalSummary> {
    let jobs: Vec<(usize, &Tensor)> = images.iter().copied().enumerate().collect();
    let results = crate::parallel::map(jobs, |(i, img)| dither_with_id(model, img, cfg, i as u64));
    let mut psnr = Vec::with_capacity(results.len());
    let mut ssim = Vec::with_capacity(results.len());
    for r in results {
        let r = r?;
        psnr.push(r.metrics.tone_psnr);
        ssim.push(r.metrics.ssim);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    Ok(EvalSummary {
        mean_psnr: mean(&psnr),
        mean_ssim: mean(&ssim),
        psnr,
        ssim,
    })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub optimizer: OptimizerState<f32>,
    pub log: Vec<MetricsRow>,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(&self.model, Some(&self.optimizer), self.log.len() as u64)
    }
}

/// Trains a halftoning network with Adam.
///
/// Each batch holds `round(batch * constant_patch_ratio)` constant patches
/// with gray levels uniform in [0.1, 0.9] after random crops of training
/// images. The loss is `w_tone * tone + w_bin * bin + w_blue * L_B`, with
/// `L_B` computed on the constant patches only. A non-finite loss aborts with
/// [`Error::Diverged`] carrying the last parameters that gave a finite loss.
pub fn train_halftoner(
    model_cfg: &ModelConfig,
    loss_cfg: &HalftoneLossConfig,
    corpus: &Corpus,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    loss_cfg.validate()?;
    let train = corpus.train();
    let val = corpus.val();
    if train.is_empty() {
        return Err(Error::Corpus("training split is empty".into()));
    }
    if opts.batch == 0 || !(opts.lr > 0.0) {
        return Err(Error::Config(format!(
            "batch must be positive and lr > 0 (batch {}, lr {})",
            opts.batch, opts.lr
        )));
    }
    let mut model = build_model::<f32>(model_cfg)?;
    let img = train[0].shape();
    let crop = if opts.crop == 0 { img.h.min(img.w) } else { opts.crop.min(img.h).min(img.w) };
    let multiple = model_cfg.size_multiple();
    if crop % multiple != 0 {
        return Err(Error::Indivisible {
            h: crop,
            w: crop,
            required: multiple,
        });
    }
    let n_const = ((opts.batch as f64 * loss_cfg.constant_patch_ratio).round() as usize).min(opts.batch);
    let n_nat = opts.batch - n_const;
    let mask = build_lowfreq_mask::<f32>(crop, crop, loss_cfg.mask_fraction)?;
    let val_set: Vec<&Tensor> = match opts.val_limit {
        Some(k) => val.iter().copied().take(k).collect(),
        None => val.clone(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut opt = OptimizerState::adam(opts.lr);
    let mut log = Vec::with_capacity(opts.steps);
    let mut last_good = (model.params().clone(), opt.clone());

    for step in 0..opts.steps {
        let mut data = Vec::with_capacity(opts.batch * crop * crop);
        for _ in 0..n_nat {
            let src = train[rng.gen_range(0..train.len())];
            let s = src.shape();
            let y0 = rng.gen_range(0..=s.h - crop);
            let x0 = rng.gen_range(0..=s.w - crop);
            data.extend_from_slice(src.crop(y0, x0, crop, crop)?.data());
        }
        for _ in 0..n_const {
            let level: f32 = rng.gen_range(0.1..0.9);
            data.extend(std::iter::repeat(level).take(crop * crop));
        }
        let batch = Tensor::from_vec(Shape::new(opts.batch, 1, crop, crop), data)?;

        let g = Graph::new();
        let p = model.params().bind(&g, true);
        let x = g.constant(batch);
        let soft = model.forward(&p, x, (step * opts.batch) as u64)?;
        let tone = tone_loss(soft, x, loss_cfg)?;
        let bin = binarization_penalty(soft);
        let mut total = tone.affine(loss_cfg.w_tone, 0.0).add(bin.affine(loss_cfg.w_bin, 0.0))?;
        let blue_val = if n_const > 0 {
            let blue = blue_noise_loss(soft.narrow_batch(n_nat, n_const)?, &mask)?;
            if loss_cfg.w_blue > 0.0 {
                total = total.add(blue.affine(loss_cfg.w_blue, 0.0))?;
            }
            blue.item() as f64
        } else {
            0.0
        };
        let total_val = total.item() as f64;
        if !total_val.is_finite() {
            let (params, optimizer) = last_good;
            let mut good = model;
            good.load_params(params)?;
            return Err(Error::Diverged {
                step,
                last_good: Box::new(Checkpoint::from_model(&good, Some(&optimizer), step.saturating_sub(1) as u64)),
            });
        }
        total.backward()?;
        let grads = p.take_grads();
        drop(p);
        last_good = (model.params().clone(), opt.clone());
        opt.step(model.params_mut(), &grads)?;

        let done = step + 1;
        let validate = done == opts.steps || (opts.eval_every > 0 && done % opts.eval_every == 0);
        let (val_psnr, val_ssim) = if validate && !val_set.is_empty() {
            let e = evaluate(&model, &val_set, loss_cfg)?;
            (Some(e.mean_psnr), Some(e.mean_ssim))
        } else {
            (None, None)
        };
        log.push(MetricsRow {
            step: done,
            tone_loss: tone.item() as f64,
            bin_loss: bin.item() as f64,
            blue_loss: blue_val,
            total: total_val,
            val_psnr,
            val_ssim,
        });
    }
    Ok(TrainOutcome {
        model,
        optimizer: opt,
        log,
    })
}
