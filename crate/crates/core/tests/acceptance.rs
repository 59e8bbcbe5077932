//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Runs the full desk-scale training studies, so expect it to take a while
//! (roughly 45 minutes on one core). The process exits 0 whatever the
//! outcome; the report lines are the result.

#[path = "common/mod.rs"]
mod common;

use std::time::{Duration, Instant};

use common::{gradcheck, probe_sum, tensor, FD_RTOL};
use nibkit::autodiff::{Graph, ParamStore, Tensor, Var};
use nibkit::flatlab::{
    constant_probe, probe_stack, run_contamination_study, run_noise_mode_study, train_arm, ContaminationConfig,
    LayerStack, NoiseModeStudy, StudyConfig, BASELINE_LABEL, FIG5_VARIANTS,
};
use nibkit::halftone::{
    bayer_matrix, floyd_steinberg, train_halftoner, HalftoneLossConfig, TrainOptions,
};
use nibkit::io::checkpoint::{decode, encode};
use nibkit::io::corpus::{gen_corpus, Corpus, CorpusSpec};
use nibkit::models::layers::{Conv2dLayer, Initializer};
use nibkit::models::{build_model, receptive_field, ModelConfig, NibConfig};
use nibkit::nib::{nib_forward, NibParams, NoiseSpec};

const SEEDS: [u64; 3] = [0, 1, 2];
const NIB_LABEL: &str = "S-N-0.3";

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn report(n: usize, title: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let mut o = f();
    let took = t.elapsed();
    if let Some(b) = budget {
        if took > b {
            o.pass = false;
            o.detail.push_str(&format!("; over the {}s budget", b.as_secs()));
        }
    }
    println!(
        "criterion {n:2}: {} | {title} | {} | {:.1}s",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        took.as_secs_f64()
    );
    o.pass
}

fn corpus() -> Corpus {
    gen_corpus(&CorpusSpec {
        count: 64,
        size: 64,
        flat_fraction: 0.9,
        seed: 1,
        ..CorpusSpec::default()
    })
    .expect("corpus")
}

fn flatness_invariant() -> Outcome {
    let levels = [0.0, 0.25, 0.5, 1.0];
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for seed in 0..50 {
        let stack = LayerStack::<f32>::random(seed);
        let size = (stack.receptive_extent() + 24).max(32);
        for g in levels {
            let r = probe_stack(&stack, g, size).unwrap();
            worst = r.layers.iter().map(|l| l.max_std()).fold(worst, f64::max);
            if !r.all_flat() {
                failures.push(format!("stack {seed} @ {g}"));
            }
        }
    }
    for width in [8, 16] {
        let model = build_model::<f32>(&ModelConfig::resnet(width, None)).unwrap();
        for g in levels {
            let r = constant_probe(&model, g, 64).unwrap();
            worst = r.layers.iter().map(|l| l.max_std()).fold(worst, f64::max);
            if !r.all_flat() {
                failures.push(format!("resnet w{width} @ {g}"));
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!("50 random stacks + resnet, worst interior std {worst:.2e}; non-flat: {failures:?}"),
    )
}

fn nib_breaks_flatness(study: &NoiseModeStudy, per_run: Duration) -> Outcome {
    let model = build_model::<f32>(&ModelConfig::resnet(8, Some(NibConfig::default()))).unwrap();
    let r = constant_probe(&model, 0.5, 64).unwrap();
    let layer1 = r.layers[0].max_std();
    let run = study.runs.iter().find(|r| r.label == NIB_LABEL && r.seed == SEEDS[0]).unwrap();
    let mean = run.half_gray_mean;
    let non_constant = mean > 0.0 && mean < 1.0;
    outcome(
        layer1 > 1e-3 && non_constant && (0.4..=0.6).contains(&mean) && per_run <= Duration::from_secs(600),
        format!(
            "init layer-1 std {layer1:.3e}; after {:.0}s of training, halftone of 0.5: mean {mean:.3}, non-constant {non_constant}",
            per_run.as_secs_f64()
        ),
    )
}

fn gradient_suite() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut track = |name: &str, e: f64, bad: &mut Vec<String>| {
        worst = worst.max(e);
        if e >= FD_RTOL {
            bad.push(format!("{name} {e:.1e}"));
        }
    };
    let mut bad = Vec::new();
    let x = tensor([2, 2, 4, 4], 1, -1.0, 1.0);
    let y = tensor([2, 2, 4, 4], 2, -1.0, 1.0);
    // Away from the kinks of relu / abs / minimum.
    let xs = x.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    for (k, s, p) in [(3, 1, 1), (3, 2, 1), (1, 1, 0)] {
        let w = tensor([3, 2, k, k], 3, -0.5, 0.5);
        let b = tensor([1, 3, 1, 1], 4, -0.5, 0.5);
        let e = gradcheck(&[x.clone(), w, b], |g, v| probe_sum(g, v[0].conv2d(v[1], Some(v[2]), s, p)?, 5));
        track(&format!("conv k{k} s{s}"), e, &mut bad);
    }
    type Bin = for<'g> fn(Var<'g, f64>, Var<'g, f64>) -> nibkit::Result<Var<'g, f64>>;
    let bins: [(&str, Bin); 6] = [
        ("add", |a, b| a.add(b)),
        ("sub", |a, b| a.sub(b)),
        ("mul", |a, b| a.mul(b)),
        ("minimum", |a, b| a.minimum(b)),
        ("mse", |a, b| a.mse(b)),
        ("l1", |a, b| a.l1(b)),
    ];
    for (name, op) in bins {
        let e = gradcheck(&[xs.clone(), y.clone()], |g, v| {
            let out = op(v[0], v[1])?;
            if out.shape().numel() == 1 {
                Ok(out)
            } else {
                probe_sum(g, out, 6)
            }
        });
        track(name, e, &mut bad);
    }
    type Un = for<'g> fn(Var<'g, f64>) -> nibkit::Result<Var<'g, f64>>;
    let uns: [(&str, Un); 13] = [
        ("affine", |x| Ok(x.affine(0.7, -0.2))),
        ("relu", |x| Ok(x.relu())),
        ("leaky_relu", |x| Ok(x.leaky_relu(0.2))),
        ("sigmoid", |x| Ok(x.sigmoid())),
        ("tanh", |x| Ok(x.tanh())),
        ("abs", |x| Ok(x.abs())),
        ("upsample2", |x| Ok(x.upsample2())),
        ("sum", |x| Ok(x.sum())),
        ("mean", |x| Ok(x.mean())),
        ("dct2", |x| Ok(x.dct2())),
        ("idct2", |x| Ok(x.idct2())),
        ("gaussian_blur", |x| x.gaussian_blur(2.0, 11)),
        ("narrow_batch", |x| x.narrow_batch(1, 1)),
    ];
    for (name, op) in uns {
        let e = gradcheck(std::slice::from_ref(&xs), |g, v| {
            let out = op(v[0])?;
            if out.shape().numel() == 1 {
                Ok(out)
            } else {
                probe_sum(g, out, 7)
            }
        });
        track(name, e, &mut bad);
    }
    let e = gradcheck(&[x.clone(), y.clone()], |g, v| probe_sum(g, Var::concat(&[v[0], v[1]])?, 8));
    track("concat", e, &mut bad);

    let mut dct_err: f64 = 0.0;
    for (h, w) in [(4, 4), (7, 5), (16, 16)] {
        let t = tensor([1, 2, h, w], (h * w) as u64, -2.0, 2.0);
        let d = t.dct2();
        let r = d.idct2();
        dct_err = t.data().iter().zip(r.data()).map(|(a, b)| (a - b).abs()).fold(dct_err, f64::max);
        let (ex, ed): (f64, f64) = (t.data().iter().map(|v| v * v).sum(), d.data().iter().map(|v| v * v).sum());
        dct_err = dct_err.max((ex - ed).abs());
    }
    outcome(
        bad.is_empty() && dct_err < 1e-6,
        format!("22 ops, worst relative error {worst:.2e}; dct roundtrip/Parseval error {dct_err:.1e}; failing: {bad:?}"),
    )
}

fn noise_cancellation() -> Outcome {
    let mut store = ParamStore::<f32>::new();
    let mut init = Initializer::new(7);
    let f1 = Conv2dLayer::new(&mut store, &mut init, "f1", 1, 8, 3, 1, 1.0);
    let f2 = Conv2dLayer::new(&mut store, &mut init, "f2", 1, 8, 3, 1, 1.0);
    *store.get_mut(f2.weight) = store.get(f1.weight).clone();
    *store.get_mut(f1.bias.unwrap()) = Tensor::full([1, 8, 1, 1], 0.1);
    *store.get_mut(f2.bias.unwrap()) = Tensor::full([1, 8, 1, 1], 0.1);
    let params = NibParams::new(f1, f2).unwrap();
    let x: Tensor = tensor([2, 1, 32, 32], 9, 0.0, 1.0).cast();
    let run = |seed| {
        let g = Graph::new();
        let bound = store.bind(&g, false);
        let spec = NoiseSpec {
            seed,
            ..NoiseSpec::default()
        };
        let y = nib_forward(g.constant(x.clone()), &spec, &params, &bound, 0).unwrap();
        (*y.value()).clone()
    };
    let (a, b) = (run(1), run(2));
    let identical = a.data().iter().zip(b.data()).all(|(u, v)| u.to_bits() == v.to_bits());
    outcome(identical, format!("tied 3x3 branches, seeds 1 vs 2: bit-identical {identical}"))
}

fn table1_property(study: &NoiseModeStudy, per_run: Duration) -> Outcome {
    let nib = study.result(NIB_LABEL).unwrap();
    let std = study.result(BASELINE_LABEL).unwrap();
    // Six of the study's runs (two arms, three seeds) make up this criterion.
    let cost = per_run * 6;
    outcome(
        nib.mean - std.mean >= 1.0 && cost <= Duration::from_secs(1800),
        format!(
            "training {:.0}s; NIB {:.2} +- {:.2} dB vs standard {:.2} +- {:.2} dB (gap {:.2})",
            cost.as_secs_f64(),
            nib.mean,
            nib.std,
            std.mean,
            std.std,
            nib.mean - std.mean
        ),
    )
}

fn fig5_property(study: &NoiseModeStudy, took: Duration) -> Outcome {
    let noise_based: Vec<_> = FIG5_VARIANTS
        .iter()
        .filter(|l| **l != "regular-grid")
        .map(|l| study.result(l).unwrap())
        .collect();
    let grid = study.result("regular-grid").unwrap();
    let floor = study.result(BASELINE_LABEL).unwrap().mean;
    let hi = noise_based.iter().map(|r| r.mean).fold(f64::MIN, f64::max);
    let lo = noise_based.iter().map(|r| r.mean).fold(f64::MAX, f64::min);
    let spread_ok = hi - lo <= 1.0;
    let grid_worst = noise_based.iter().all(|r| grid.mean < r.mean);
    let above_floor = grid.mean > floor && lo > floor;
    let means: Vec<String> = study.results.iter().map(|r| format!("{} {:.2}", r.label, r.mean)).collect();
    outcome(
        spread_ok && grid_worst && above_floor && took <= Duration::from_secs(7200),
        format!(
            "training {:.0}s; spread {:.2} dB (<= 1.0: {spread_ok}), grid worst {grid_worst}, above floor {above_floor}; {}",
            took.as_secs_f64(),
            hi - lo,
            means.join(", ")
        ),
    )
}

fn contamination(corpus: &Corpus) -> Outcome {
    let cfg = ContaminationConfig {
        steps: CONTAMINATION_STEPS,
        ..ContaminationConfig::default()
    };
    let r = run_contamination_study(corpus, &cfg, 0).unwrap();
    let keeps = r.psnr_nib >= r.psnr_ae - 0.5;
    let beats_noise = r.psnr_nib - r.psnr_noise >= 5.0;
    outcome(
        keeps && beats_noise,
        format!(
            "AE {:.2} dB, AE+noise {:.2} dB, AE+NIB {:.2} dB; NIB >= AE-0.5: {keeps}; NIB-noise >= 5: {beats_noise}",
            r.psnr_ae, r.psnr_noise, r.psnr_nib
        ),
    )
}

const CONTAMINATION_STEPS: usize = 5000;

fn blue_noise_property(study: &NoiseModeStudy, corpus: &Corpus, cfg: &StudyConfig) -> Outcome {
    let noise = NoiseSpec::from_label(NIB_LABEL, 42).unwrap();
    let no_blue = StudyConfig {
        loss: HalftoneLossConfig {
            w_blue: 0.0,
            ..cfg.loss.clone()
        },
        ..cfg.clone()
    };
    let runs0: Vec<_> = SEEDS
        .iter()
        .map(|&s| train_arm("w_blue=0", Some(noise), &no_blue, corpus, s).unwrap())
        .collect();
    let runs1: Vec<_> = study.runs.iter().filter(|r| r.label == NIB_LABEL).collect();
    let mean = |v: &mut dyn Iterator<Item = f64>| {
        let (s, n) = v.fold((0.0, 0), |(s, n), x| (s + x, n + 1));
        s / n as f64
    };
    let lf0 = mean(&mut runs0.iter().map(|r| r.half_gray.lowfreq_share));
    let lf1 = mean(&mut runs1.iter().map(|r| r.half_gray.lowfreq_share));
    let p0 = mean(&mut runs0.iter().map(|r| r.val_psnr));
    let p1 = mean(&mut runs1.iter().map(|r| r.val_psnr));
    let pstd = study.result(BASELINE_LABEL).unwrap().mean;
    let reduces = lf1 < lf0;
    let above = p0 > pstd && p1 > pstd;
    outcome(
        reduces && above,
        format!(
            "lowfreq share w_blue>0 {lf1:.4} vs w_blue=0 {lf0:.4} (reduced: {reduces}); \
             val psnr {p1:.2} / {p0:.2} vs standard {pstd:.2} (above: {above})"
        ),
    )
}

fn classical_oracles() -> Outcome {
    let fs = floyd_steinberg(&Tensor::from_rows(&[&[0.5, 0.5], &[0.5, 0.5]]).unwrap());
    let fs_ok = fs.data() == [1.0, 0.0, 0.0, 1.0];
    let zeros = floyd_steinberg(&Tensor::zeros([1, 1, 9, 7]));
    let ones = floyd_steinberg(&Tensor::full([1, 1, 9, 7], 1.0));
    let fixed = zeros.data().iter().all(|&v| v == 0.0) && ones.data().iter().all(|&v| v == 1.0);
    let bayer_ok = bayer_matrix(1).unwrap() == vec![vec![0, 2], vec![3, 1]];
    outcome(
        fs_ok && fixed && bayer_ok,
        format!("fs 2x2 {:?}, fixed points {fixed}, bayer base {bayer_ok}", fs.data()),
    )
}

fn receptive_field_check() -> Outcome {
    let model = build_model::<f64>(&ModelConfig::resnet(8, None).with_seed(3)).unwrap();
    let rf = receptive_field(&model);
    let base = tensor([1, 1, 48, 48], 6, 0.2, 0.8);
    let mut bumped = base.clone();
    bumped.set(0, 0, 24, 24, 0.95);
    let (a, b) = (model.infer(&base, 0).unwrap(), model.infer(&bumped, 0).unwrap());
    let (mut y0, mut y1, mut x0, mut x1) = (usize::MAX, 0, usize::MAX, 0);
    for y in 0..48 {
        for x in 0..48 {
            if a.at(0, 0, y, x) != b.at(0, 0, y, x) {
                (y0, y1, x0, x1) = (y0.min(y), y1.max(y), x0.min(x), x1.max(x));
            }
        }
    }
    let (h, w) = (y1 + 1 - y0, x1 + 1 - x0);
    outcome(
        rf == (41, 41) && h <= 41 && w <= 41,
        format!("analytic {rf:?}; brute-force changed region {h}x{w} on 48x48"),
    )
}

fn persistence() -> Outcome {
    let small = gen_corpus(&CorpusSpec {
        count: 8,
        size: 32,
        flat_fraction: 0.6,
        seed: 4,
        ..CorpusSpec::default()
    })
    .unwrap();
    let cfg = ModelConfig::resnet(8, Some(NibConfig::default())).with_seed(2);
    let opts = TrainOptions {
        steps: 20,
        batch: 4,
        lr: 2e-3,
        crop: 16,
        ..TrainOptions::default()
    };
    let loss = HalftoneLossConfig::default();
    let a = train_halftoner(&cfg, &loss, &small, &opts).unwrap();
    let b = train_halftoner(&cfg, &loss, &small, &opts).unwrap();
    let (ea, eb) = (encode(&a.checkpoint()).unwrap(), encode(&b.checkpoint()).unwrap());
    let same_runs = ea == eb;
    let roundtrip = decode(&ea).unwrap() == a.checkpoint();

    let spec = CorpusSpec {
        count: 10,
        size: 64,
        seed: 7,
        ..CorpusSpec::default()
    };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen_corpus(&spec).unwrap().write(d1.path()).unwrap();
    gen_corpus(&spec).unwrap().write(d2.path()).unwrap();
    let files = |d: &std::path::Path| {
        let mut v: Vec<_> = std::fs::read_dir(d)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_owned(), std::fs::read(&p).unwrap())
            })
            .collect();
        v.sort();
        v
    };
    let corpus_same = files(d1.path()) == files(d2.path());
    outcome(
        same_runs && roundtrip && corpus_same,
        format!("checkpoint roundtrip {roundtrip}, identical training runs {same_runs}, corpus byte-identical {corpus_same}"),
    )
}

fn main() {
    let start = Instant::now();
    let corpus = corpus();
    let cfg = StudyConfig::default();
    let variants: Vec<NoiseSpec> = FIG5_VARIANTS.iter().map(|l| NoiseSpec::from_label(l, 42).unwrap()).collect();

    let mut results = Vec::new();
    results.push(report(1, "flatness degradation invariant", Some(Duration::from_secs(60)), flatness_invariant));
    println!("   training noise-mode study: {} arms x {} seeds, {} steps each", variants.len() + 1, SEEDS.len(), cfg.train.steps);
    let t = Instant::now();
    let study = run_noise_mode_study(&variants, &corpus, &cfg, &SEEDS).unwrap();
    let study_time = t.elapsed();
    println!("   noise-mode study trained in {:.0}s", study_time.as_secs_f64());
    for r in &study.runs {
        println!(
            "   run {:<12} seed {} val psnr {:6.2} ssim {:.3} | gray 0.5: mean {:.3} lowfreq {:.4}",
            r.label, r.seed, r.val_psnr, r.val_ssim, r.half_gray_mean, r.half_gray.lowfreq_share
        );
    }
    let per_run = study_time / study.runs.len() as u32;
    results.push(report(2, "NIB breaks flatness", None, || nib_breaks_flatness(&study, per_run)));
    results.push(report(3, "gradient suite", Some(Duration::from_secs(60)), gradient_suite));
    results.push(report(4, "noise-cancellation exactness", None, noise_cancellation));
    results.push(report(5, "NIB beats standard resnet by >= 1 dB", None, || table1_property(&study, per_run)));
    results.push(report(6, "noise-mode ordering", None, || fig5_property(&study, study_time)));
    results.push(report(7, "contamination ordering", Some(Duration::from_secs(1200)), || contamination(&corpus)));
    results.push(report(8, "blue-noise loss lowers low-frequency share", None, || {
        blue_noise_property(&study, &corpus, &cfg)
    }));
    results.push(report(9, "classical oracle exactness", None, classical_oracles));
    results.push(report(10, "receptive field", None, receptive_field_check));
    results.push(report(11, "persistence and reproducibility", None, persistence));
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed in {:.0}s", results.len(), start.elapsed().as_secs_f64());
}
