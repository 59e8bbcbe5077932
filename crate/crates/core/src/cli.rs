//! Command-line front end.
//!
//! ```text
//! nibkit <gen-corpus|train|dither|probe|study|eval> [--config FILE] [--KEY VALUE ...] [options]
//! ```
//!
//! Settings come from a flat `key = value` file and `--key value` overrides
//! (dotted keys such as `--train.steps 200`). Before doing any work each
//! subcommand writes the complete effective settings to
//! `<out.dir>/effective.cfg`, which can be fed back through `--config`.
//! Failures print one line `error: <code>: <detail>` and exit with 1 for
//! usage errors or 2 for runtime failures.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::flatlab::{
    constant_probe, run_contamination_study, run_data_hiding_toy, run_noise_mode_study, ContaminationConfig,
    HidingConfig, StudyConfig, FIG5_VARIANTS,
};
use crate::halftone::{
    bayer_dither, dither, evaluate, floyd_steinberg, metrics_csv, score_halftone, train_halftoner,
    HalftoneLossConfig, HalftoneResult, TrainOptions,
};
use crate::io::checkpoint::{load_checkpoint, save_checkpoint};
use crate::io::corpus::{gen_corpus, Corpus, CorpusSpec, Split};
use crate::io::{read_image, write_image, ImageFormat};
use crate::models::{build_model, receptive_field, Arch, ModelConfig, NibConfig};
use crate::nib::{Injection, NoiseFamily, NoiseMode, NoiseSpec};

/// Every configuration key with its default value.
pub const CONFIG_KEYS: [(&str, &str); 28] = [
    ("arch", "resnet"),
    ("base_width", "8"),
    ("nib.enabled", "true"),
    ("nib.mode", "stationary"),
    ("nib.family", "gaussian"),
    ("nib.sigma", "0.3"),
    ("nib.lo", "-0.3"),
    ("nib.hi", "0.3"),
    ("nib.p", "0.5"),
    ("nib.period", "2"),
    ("nib.injection", "additive_symmetric"),
    ("nib.kernel", "1"),
    ("nib.seed", "42"),
    ("loss.blur_sigma", "2.0"),
    ("loss.w_tone", "1.0"),
    ("loss.w_bin", "0.1"),
    ("loss.w_blue", "0.05"),
    ("loss.mask_fraction", "0.05"),
    ("loss.const_ratio", "0.25"),
    ("train.steps", "1000"),
    ("train.batch", "8"),
    ("train.lr", "0.002"),
    ("train.seed", "0"),
    ("corpus.count", "64"),
    ("corpus.size", "64"),
    ("corpus.flat_fraction", "0.9"),
    ("corpus.seed", "0"),
    ("out.dir", "out"),
];

/// Side of the random crops used for training.
const TRAIN_CROP: usize = 32;

const SUBCOMMANDS: [&str; 6] = ["gen-corpus", "train", "dither", "probe", "study", "eval"];

/// Usage problems (exit 1) versus runtime failures (exit 2).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

fn valid_keys() -> String {
    CONFIG_KEYS.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(", ")
}

/// Merged settings. Values stay textual until a subcommand asks for them.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: CONFIG_KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        match self.values.get_mut(key) {
            Some(v) => {
                *v = value.trim().to_string();
                Ok(())
            }
            None => usage(format!("unknown key `{key}`; valid keys: {}", valid_keys())),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("known key")
    }

    /// Applies a `key = value` text; `#` starts a comment.
    pub fn merge_text(&mut self, text: &str) -> CliResult<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return usage(format!("config line {}: expected `key = value`, got `{line}`", n + 1));
            };
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, _) in CONFIG_KEYS {
            writeln!(s, "{k} = {}", self.get(k)).unwrap();
        }
        s
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> CliResult<T> {
        let v = self.get(key);
        v.parse()
            .or_else(|_| usage(format!("`{key}` has invalid value `{v}`")))
    }

    fn flag(&self, key: &str) -> CliResult<bool> {
        match self.get(key) {
            "true" | "on" | "yes" | "1" => Ok(true),
            "false" | "off" | "no" | "0" => Ok(false),
            v => usage(format!("`{key}` must be on/off, got `{v}`")),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out.dir"))
    }

    pub fn noise_spec(&self) -> CliResult<NoiseSpec> {
        let mode = match self.get("nib.mode") {
            "stationary" => NoiseMode::Stationary,
            "dynamic" => NoiseMode::Dynamic,
            v => return usage(format!("`nib.mode` must be stationary or dynamic, got `{v}`")),
        };
        let family = match self.get("nib.family") {
            "gaussian" => {
                // `var:<v>` reads the value as a variance instead of a standard deviation.
                let raw = self.get("nib.sigma");
                match raw.strip_prefix("var:") {
                    Some(v) => NoiseFamily::gaussian_from_variance(
                        0.0,
                        v.parse().or_else(|_| usage(format!("`nib.sigma` has invalid value `{raw}`")))?,
                    ),
                    None => NoiseFamily::Gaussian {
                        mean: 0.0,
                        sigma: self.parse("nib.sigma")?,
                    },
                }
            }
            "uniform" => NoiseFamily::Uniform {
                lo: self.parse("nib.lo")?,
                hi: self.parse("nib.hi")?,
            },
            "bernoulli" => NoiseFamily::Bernoulli { p: self.parse("nib.p")? },
            "regular_grid" => NoiseFamily::RegularGrid {
                period: self.parse("nib.period")?,
            },
            v => {
                return usage(format!(
                    "`nib.family` must be gaussian, uniform, bernoulli or regular_grid, got `{v}`"
                ))
            }
        };
        let injection = match self.get("nib.injection") {
            "additive_symmetric" => Injection::AdditiveSymmetric,
            "multiplicative_complementary" => Injection::MultiplicativeComplementary,
            "feature_domain" => Injection::FeatureDomain,
            v => return usage(format!("unknown `nib.injection` `{v}`")),
        };
        Ok(NoiseSpec::new(mode, family, injection, self.parse("nib.seed")?)?)
    }

    pub fn model_config(&self) -> CliResult<ModelConfig> {
        let arch: Arch = self.get("arch").parse()?;
        let width = self.parse("base_width")?;
        let nib = if self.flag("nib.enabled")? {
            Some(NibConfig {
                noise: self.noise_spec()?,
                kernel: self.parse("nib.kernel")?,
            })
        } else {
            None
        };
        let cfg = match arch {
            Arch::Resnet => ModelConfig::resnet(width, nib),
            Arch::Unet => ModelConfig::unet(width, nib),
            Arch::Autoencoder => ModelConfig::autoencoder(width, nib),
        }
        .with_seed(self.parse("train.seed")?);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn loss_config(&self) -> CliResult<HalftoneLossConfig> {
        let cfg = HalftoneLossConfig {
            blur_sigma: self.parse("loss.blur_sigma")?,
            w_tone: self.parse("loss.w_tone")?,
            w_bin: self.parse("loss.w_bin")?,
            w_blue: self.parse("loss.w_blue")?,
            mask_fraction: self.parse("loss.mask_fraction")?,
            constant_patch_ratio: self.parse("loss.const_ratio")?,
            ..HalftoneLossConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_options(&self) -> CliResult<TrainOptions> {
        let size: usize = self.parse("corpus.size")?;
        Ok(TrainOptions {
            steps: self.parse("train.steps")?,
            batch: self.parse("train.batch")?,
            lr: self.parse("train.lr")?,
            seed: self.parse("train.seed")?,
            crop: TRAIN_CROP.min(size),
            eval_every: 0,
            val_limit: None,
        })
    }

    pub fn corpus_spec(&self) -> CliResult<CorpusSpec> {
        Ok(CorpusSpec {
            count: self.parse("corpus.count")?,
            size: self.parse("corpus.size")?,
            flat_fraction: self.parse("corpus.flat_fraction")?,
            seed: self.parse("corpus.seed")?,
            ..CorpusSpec::default()
        })
    }
}

/// Parsed command line.
#[derive(Debug)]
struct Invocation {
    command: String,
    config: RunConfig,
    /// Options that are not configuration keys.
    options: BTreeMap<String, String>,
}

/// Per-subcommand options, plus shorthands for configuration keys.
fn command_options(cmd: &str) -> (&'static [&'static str], &'static [(&'static str, &'static str)]) {
    match cmd {
        "gen-corpus" => (&[], &[("count", "corpus.count"), ("size", "corpus.size"), ("seed", "corpus.seed"), ("out", "out.dir")]),
        "train" => (&["corpus"], &[("steps", "train.steps"), ("seed", "train.seed"), ("nib", "nib.enabled"), ("out", "out.dir")]),
        "dither" => (
            &["input", "checkpoint", "baseline", "format"],
            &[("out", "out.dir")],
        ),
        "probe" => (
            &["checkpoint", "gray", "size"],
            &[("nib", "nib.enabled"), ("seed", "train.seed"), ("out", "out.dir")],
        ),
        "study" => (&["kind", "corpus", "seeds"], &[("steps", "train.steps"), ("out", "out.dir")]),
        "eval" => (&["checkpoint", "corpus", "split"], &[("out", "out.dir")]),
        _ => (&[], &[]),
    }
}

fn parse_args(argv: &[String]) -> CliResult<Invocation> {
    let mut args = argv.iter().skip(1);
    let command = match args.next() {
        Some(c) if SUBCOMMANDS.contains(&c.as_str()) => c.clone(),
        Some(c) if c == "--help" || c == "-h" || c == "help" => return usage(help_text()),
        Some(c) => return usage(format!("unknown subcommand `{c}`; expected one of {}", SUBCOMMANDS.join(", "))),
        None => return usage(help_text()),
    };
    let (opts, aliases) = command_options(&command);
    let mut pairs = Vec::new();
    let rest: Vec<&String> = args.collect();
    let mut i = 0;
    while i < rest.len() {
        let a = rest[i];
        let Some(name) = a.strip_prefix("--") else {
            return usage(format!("unexpected argument `{a}`"));
        };
        let (name, value) = match name.split_once('=') {
            Some((n, v)) => (n.to_string(), v.to_string()),
            None => {
                i += 1;
                match rest.get(i) {
                    Some(v) => (name.to_string(), v.to_string()),
                    None => return usage(format!("option `--{name}` needs a value")),
                }
            }
        };
        pairs.push((name, value));
        i += 1;
    }
    let mut config = RunConfig::default();
    if let Some((_, path)) = pairs.iter().find(|(n, _)| n == "config") {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Runtime(Error::io(path, e)))?;
        config.merge_text(&text)?;
    }
    let mut options = BTreeMap::new();
    for (name, value) in pairs {
        if name == "config" {
            continue;
        }
        if let Some((_, key)) = aliases.iter().find(|(a, _)| *a == name) {
            config.set(key, &value)?;
        } else if opts.contains(&name.as_str()) {
            options.insert(name, value);
        } else if CONFIG_KEYS.iter().any(|(k, _)| *k == name) {
            config.set(&name, &value)?;
        } else {
            let mut valid: Vec<String> = opts.iter().map(|o| format!("--{o}")).collect();
            valid.extend(aliases.iter().map(|(a, _)| format!("--{a}")));
            return usage(format!(
                "unknown option `--{name}` for {command}; options: {}; config keys: {}",
                valid.join(", "),
                valid_keys()
            ));
        }
    }
    Ok(Invocation {
        command,
        config,
        options,
    })
}

pub fn help_text() -> String {
    format!(
        "usage: nibkit <{}> [--config FILE] [--KEY VALUE ...]\nconfig keys: {}",
        SUBCOMMANDS.join("|"),
        valid_keys()
    )
}

/// Entry point; returns the process exit code.
pub fn cli_main(argv: Vec<String>) -> i32 {
    let result = parse_args(&argv).and_then(|inv| run(&inv));
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: usage: {}", one_line(&msg));
            1
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {}: {}", e.code(), one_line(&e.to_string()));
            2
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(inv: &Invocation) -> CliResult<()> {
    let out = inv.config.out_dir();
    write_text(&out.join("effective.cfg"), &inv.config.to_text())?;
    match inv.command.as_str() {
        "gen-corpus" => cmd_gen_corpus(inv, &out),
        "train" => cmd_train(inv, &out),
        "dither" => cmd_dither(inv, &out),
        "probe" => cmd_probe(inv, &out),
        "study" => cmd_study(inv, &out),
        "eval" => cmd_eval(inv, &out),
        _ => unreachable!("validated in parse_args"),
    }
}

fn load_or_generate_corpus(inv: &Invocation) -> CliResult<Corpus> {
    match inv.options.get("corpus") {
        Some(dir) => Ok(Corpus::load(dir)?),
        None => Ok(gen_corpus(&inv.config.corpus_spec()?)?),
    }
}

fn cmd_gen_corpus(inv: &Invocation, out: &Path) -> CliResult<()> {
    let corpus = gen_corpus(&inv.config.corpus_spec()?)?;
    let manifest = corpus.write(out)?;
    println!(
        "wrote {} images ({} train, {} val), mean flat fraction {:.4}, manifest {}",
        corpus.images.len(),
        corpus.train().len(),
        corpus.val().len(),
        corpus.mean_flat_fraction(),
        manifest.display()
    );
    Ok(())
}

fn cmd_train(inv: &Invocation, out: &Path) -> CliResult<()> {
    let corpus = load_or_generate_corpus(inv)?;
    let model_cfg = inv.config.model_config()?;
    let loss = inv.config.loss_config()?;
    let opts = inv.config.train_options()?;
    match train_halftoner(&model_cfg, &loss, &corpus, &opts) {
        Ok(t) => {
            write_text(&out.join("metrics.csv"), &metrics_csv(&t.log))?;
            save_checkpoint(out.join("model.ckpt"), &t.checkpoint())?;
            let last = t.log.last();
            println!(
                "trained {} steps; val tone_psnr {}; checkpoint {}",
                t.log.len(),
                last.and_then(|r| r.val_psnr).map_or("n/a".into(), |v| format!("{v:.3} dB")),
                out.join("model.ckpt").display()
            );
            Ok(())
        }
        Err(Error::Diverged { step, last_good }) => {
            save_checkpoint(out.join("last_good.ckpt"), &last_good)?;
            Err(CliError::Runtime(Error::Diverged { step, last_good }))
        }
        Err(e) => Err(e.into()),
    }
}

fn metrics_line(name: &str, method: &str, r: &HalftoneResult) -> String {
    let m = &r.metrics;
    format!(
        "image={name} method={method} tone_psnr={:.4} ssim={:.4} lowfreq_share={:.4} mean={:.4} flatness_degraded={}",
        m.tone_psnr,
        m.ssim,
        m.lowfreq_share,
        r.binary.mean(),
        m.flatness_degraded
    )
}

fn cmd_dither(inv: &Invocation, out: &Path) -> CliResult<()> {
    let Some(input) = inv.options.get("input") else {
        return usage("dither needs --input FILE");
    };
    let gray = read_image(input)?;
    if gray.shape().c != 1 {
        return Err(Error::shape("dither", "input must be a grayscale image").into());
    }
    let loss = inv.config.loss_config()?;
    let format = match inv.options.get("format").map(String::as_str) {
        None | Some("pbm") => ImageFormat::Pbm,
        Some("png") => ImageFormat::Png,
        Some(f) => return usage(format!("--format must be pbm or png, got `{f}`")),
    };
    let ext = if format == ImageFormat::Pbm { "pbm" } else { "png" };
    let stem = Path::new(input)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_string();
    let mut rows = vec![];
    if let Some(ckpt) = inv.options.get("checkpoint") {
        let model = load_checkpoint(ckpt)?.to_model()?;
        let r = dither(&model, &gray, &loss)?;
        write_image(out.join(format!("{stem}_halftone.{ext}")), &r.binary, format)?;
        rows.push(("model", r));
    }
    match inv.options.get("baseline").map(String::as_str) {
        None => {}
        Some("fs") => rows.push(("fs", score_halftone(floyd_steinberg(&gray), &gray, &loss)?)),
        Some("bayer") => rows.push(("bayer", score_halftone(bayer_dither(&gray, 3)?, &gray, &loss)?)),
        Some(b) => return usage(format!("--baseline must be fs or bayer, got `{b}`")),
    }
    if rows.is_empty() {
        return usage("dither needs --checkpoint FILE and/or --baseline fs|bayer");
    }
    let mut csv = String::from("image,method,tone_psnr,ssim,lowfreq_share,mean,flatness_degraded\n");
    for (method, r) in &rows {
        if *method != "model" {
            write_image(out.join(format!("{stem}_{method}.{ext}")), &r.binary, format)?;
        }
        println!("{}", metrics_line(&stem, method, r));
        let m = &r.metrics;
        writeln!(
            csv,
            "{stem},{method},{:.6},{:.6},{:.6},{:.6},{}",
            m.tone_psnr,
            m.ssim,
            m.lowfreq_share,
            r.binary.mean(),
            m.flatness_degraded
        )
        .unwrap();
    }
    write_text(&out.join(format!("{stem}_metrics.csv")), &csv)?;
    Ok(())
}

fn cmd_probe(inv: &Invocation, out: &Path) -> CliResult<()> {
    let model = match inv.options.get("checkpoint") {
        Some(p) => load_checkpoint(p)?.to_model()?,
        None => build_model::<f32>(&inv.config.model_config()?)?,
    };
    let gray: f64 = match inv.options.get("gray") {
        Some(g) => g.parse().or_else(|_| usage(format!("--gray must be a number, got `{g}`")))?,
        None => 0.5,
    };
    let (rf, _) = receptive_field(&model);
    let multiple = model.config().size_multiple().max(8);
    let size: usize = match inv.options.get("size") {
        Some(s) => s.parse().or_else(|_| usage(format!("--size must be an integer, got `{s}`")))?,
        None => (rf + 16).div_ceil(multiple) * multiple,
    };
    let report = constant_probe(&model, gray, size)?;
    write_text(&out.join("probe.csv"), &report.to_csv())?;
    for (i, d) in report.dumps.iter().enumerate() {
        write_image(out.join("dumps").join(format!("layer_{i:02}.pgm")), d, ImageFormat::Pgm)?;
    }
    for l in &report.layers {
        println!(
            "layer {:2} {:<18} margin {:3} std {:.3e} {}",
            l.index,
            l.name,
            l.margin,
            l.max_std(),
            if l.flat { "flat" } else { "non-flat" }
        );
    }
    println!(
        "receptive field {rf}x{rf}; {}",
        match report.first_non_flat() {
            Some(i) => format!("first non-flat layer: {i}"),
            None => "all layers flat".into(),
        }
    );
    Ok(())
}

fn cmd_study(inv: &Invocation, out: &Path) -> CliResult<()> {
    let corpus = load_or_generate_corpus(inv)?;
    let cfg = &inv.config;
    let seed: u64 = cfg.parse("train.seed")?;
    let n_seeds: u64 = match inv.options.get("seeds") {
        Some(s) => s.parse().or_else(|_| usage(format!("--seeds must be an integer, got `{s}`")))?,
        None => 3,
    };
    let opts = cfg.train_options()?;
    let width = cfg.parse("base_width")?;
    let noise = cfg.noise_spec()?;
    match inv.options.get("kind").map(String::as_str).unwrap_or("noise-mode") {
        "noise-mode" => {
            let variants = FIG5_VARIANTS
                .iter()
                .map(|l| NoiseSpec::from_label(l, noise.seed))
                .collect::<Result<Vec<_>>>()?;
            let study_cfg = StudyConfig {
                width,
                loss: cfg.loss_config()?,
                train: opts,
            };
            let seeds: Vec<u64> = (0..n_seeds).map(|i| seed + i).collect();
            let study = run_noise_mode_study(&variants, &corpus, &study_cfg, &seeds)?;
            write_text(&out.join("study_noise_mode.csv"), &study.to_csv())?;
            let mut runs = String::from("variant,seed,val_psnr,val_ssim,half_gray_psnr,half_gray_lowfreq_share\n");
            for r in &study.runs {
                writeln!(
                    runs,
                    "{},{},{:.4},{:.4},{:.4},{:.4}",
                    r.label, r.seed, r.val_psnr, r.val_ssim, r.half_gray.tone_psnr, r.half_gray.lowfreq_share
                )
                .unwrap();
            }
            write_text(&out.join("study_noise_mode_runs.csv"), &runs)?;
            print!("{}", study.to_csv());
        }
        "contamination" => {
            let c = ContaminationConfig {
                width,
                steps: opts.steps,
                batch: opts.batch,
                lr: opts.lr,
                crop: opts.crop,
                cosine_decay: true,
                noise,
            };
            let r = run_contamination_study(&corpus, &c, seed)?;
            let csv = format!(
                "arm,psnr\nautoencoder,{:.4}\nautoencoder+noise,{:.4}\nautoencoder+nib,{:.4}\n",
                r.psnr_ae, r.psnr_noise, r.psnr_nib
            );
            write_text(&out.join("study_contamination.csv"), &csv)?;
            print!("{csv}");
        }
        "data-hiding" => {
            let h = HidingConfig {
                width,
                steps: opts.steps,
                batch: opts.batch,
                lr: opts.lr,
                crop: opts.crop,
                noise,
                ..HidingConfig::default()
            };
            let r = run_data_hiding_toy(&corpus, &h, seed)?;
            write_text(&out.join("study_data_hiding.csv"), &r.to_csv())?;
            print!("{}", r.to_csv());
        }
        k => return usage(format!("--kind must be noise-mode, contamination or data-hiding, got `{k}`")),
    }
    Ok(())
}

fn cmd_eval(inv: &Invocation, out: &Path) -> CliResult<()> {
    let Some(ckpt) = inv.options.get("checkpoint") else {
        return usage("eval needs --checkpoint FILE");
    };
    let model = load_checkpoint(ckpt)?.to_model()?;
    let corpus = load_or_generate_corpus(inv)?;
    let split = match inv.options.get("split").map(String::as_str).unwrap_or("val") {
        "train" => Split::Train,
        "val" => Split::Val,
        s => return usage(format!("--split must be train or val, got `{s}`")),
    };
    let loss = inv.config.loss_config()?;
    let (names, images): (Vec<&str>, Vec<&Tensor>) = corpus
        .entries
        .iter()
        .zip(&corpus.images)
        .filter(|(e, _)| e.split == split)
        .map(|(e, t)| (e.path.as_str(), t))
        .unzip();
    let summary = evaluate(&model, &images, &loss)?;
    let mut csv = String::from("image,tone_psnr,ssim\n");
    for ((n, p), s) in names.iter().zip(&summary.psnr).zip(&summary.ssim) {
        writeln!(csv, "{n},{p:.4},{s:.4}").unwrap();
    }
    writeln!(csv, "mean,{:.4},{:.4}", summary.mean_psnr, summary.mean_ssim).unwrap();
    write_text(&out.join(format!("eval_{}.csv", split.as_str())), &csv)?;
    print!("{csv}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        std::iter::once("nibkit").chain(s.split_whitespace()).map(String::from).collect()
    }

    #[test]
    fn defaults_round_trip_through_text() {
        let c = RunConfig::default();
        let mut d = RunConfig::default();
        d.set("train.steps", "5").unwrap();
        d.merge_text(&c.to_text()).unwrap();
        assert_eq!(c, d);
        assert_eq!(c.noise_spec().unwrap(), NoiseSpec::default());
    }

    #[test]
    fn unknown_keys_and_options_are_usage_errors() {
        assert!(matches!(RunConfig::default().set("nib.sigmaa", "1"), Err(CliError::Usage(_))));
        assert!(matches!(parse_args(&argv("train --bogus 1")), Err(CliError::Usage(_))));
        assert!(matches!(parse_args(&argv("frobnicate")), Err(CliError::Usage(_))));
        assert!(matches!(parse_args(&argv("train --train.steps")), Err(CliError::Usage(_))));
    }

    #[test]
    fn aliases_and_dotted_flags() {
        let inv = parse_args(&argv("gen-corpus --count 10 --size=64 --seed 7 --corpus.flat_fraction 0.5")).unwrap();
        assert_eq!(inv.config.get("corpus.count"), "10");
        assert_eq!(inv.config.get("corpus.size"), "64");
        assert_eq!(inv.config.get("corpus.seed"), "7");
        assert_eq!(inv.config.get("corpus.flat_fraction"), "0.5");
        let inv = parse_args(&argv("probe --arch resnet --nib off")).unwrap();
        assert!(inv.config.model_config().unwrap().nib.is_none());
    }

    #[test]
    fn sigma_can_be_given_as_variance() {
        let mut c = RunConfig::default();
        c.set("nib.sigma", "var:0.09").unwrap();
        match c.noise_spec().unwrap().family {
            NoiseFamily::Gaussian { sigma, .. } => assert!((sigma - 0.3).abs() < 1e-12),
            f => panic!("{f:?}"),
        }
    }

    #[test]
    fn invalid_values_are_reported() {
        let mut c = RunConfig::default();
        c.set("train.steps", "many").unwrap();
        assert!(matches!(c.train_options(), Err(CliError::Usage(_))));
        let mut c = RunConfig::default();
        c.set("nib.family", "bernoulli").unwrap();
        c.set("nib.p", "1.5").unwrap();
        assert!(matches!(c.noise_spec(), Err(CliError::Runtime(Error::InvalidNoiseSpec(_)))));
    }
}
