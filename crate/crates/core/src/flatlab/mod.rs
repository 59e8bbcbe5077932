//! Model-analysis experiments: constant-input flatness probes, the noise-mode
//! study, the autoencoder contamination study and a small data-hiding task.

mod studies;

pub use studies::{
    run_contamination_study, run_data_hiding_toy, run_noise_mode_study, summarize, train_arm, ArmRun,
    ContaminationConfig, ContaminationResult, DataHidingReport, HidingArm, HidingConfig, NoiseModeStudy,
    StudyConfig, StudyResult, BASELINE_LABEL, FIG5_VARIANTS,
};

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Bound, Graph, ParamId, ParamStore, Real, Shape, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::layers::Initializer;
use crate::models::{rf_profile, LayerMeta, Model};

/// Interior spatial std below this counts as flat.
pub const FLAT_THRESHOLD: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerProbe {
    pub index: usize,
    pub name: String,
    /// Interior population std of every channel of batch item 0.
    pub std: Vec<f64>,
    /// Border rows/columns excluded, in this layer's feature pixels.
    pub margin: usize,
    /// The same margin expressed in input pixels.
    pub margin_input: f64,
    /// Analytic receptive extent of this layer's outputs.
    pub receptive_extent: usize,
    pub flat: bool,
}

impl LayerProbe {
    pub fn max_std(&self) -> f64 {
        self.std.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub gray_level: f64,
    pub size: usize,
    pub layers: Vec<LayerProbe>,
    /// First channel of each layer, linearly rescaled to [0, 1] (flat maps are 0.5).
    pub dumps: Vec<Tensor>,
}

impl ProbeReport {
    pub fn all_flat(&self) -> bool {
        self.layers.iter().all(|l| l.flat)
    }

    /// First layer whose interior is not flat.
    pub fn first_non_flat(&self) -> Option<usize> {
        self.layers.iter().position(|l| !l.flat)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,name,margin,margin_input,receptive_extent,max_std,verdict\n");
        for l in &self.layers {
            writeln!(
                s,
                "{},{},{},{},{},{:.6e},{}",
                l.index,
                l.name,
                l.margin,
                l.margin_input,
                l.receptive_extent,
                l.max_std(),
                if l.flat { "flat" } else { "non-flat" }
            )
            .unwrap();
        }
        s
    }
}

/// `(x - min) / (max - min)`; a constant map becomes 0.5 everywhere.
pub fn rescale_for_display(t: &Tensor) -> Tensor {
    let (lo, hi) = t.min_max();
    if hi > lo {
        t.map(|v| (v - lo) / (hi - lo))
    } else {
        t.map(|_| 0.5)
    }
}

/// Border rows not influenced by zero padding, tracked per side along a
/// chain of layers. `sizes[i]` is the spatial side after layer `i`.
fn clean_margins(path: &[LayerMeta], input: usize, sizes: &[usize]) -> Vec<usize> {
    let (mut lo, mut hi) = (0usize, 0usize);
    let mut n = input;
    path.iter()
        .zip(sizes)
        .map(|(l, &out)| {
            if l.upsample_before {
                lo *= 2;
                hi *= 2;
                n *= 2;
            }
            let (k, s) = (l.kernel, l.stride);
            let p = (k - 1) / 2;
            // Output i reads input rows [i*s - p, i*s - p + k - 1].
            lo = (lo + p).div_ceil(s);
            let last_clean = (n + p).checked_sub(hi + k).map(|v| v / s);
            hi = match last_clean {
                Some(last) if last < out => out - 1 - last,
                _ => out,
            };
            n = out;
            lo.max(hi)
        })
        .collect()
}

fn probe_traces(
    path: &[LayerMeta],
    traces: &[Tensor],
    gray_level: f64,
    size: usize,
) -> Result<ProbeReport> {
    let profile = rf_profile(path);
    let sizes: Vec<usize> = traces.iter().map(|t| t.shape().h).collect();
    let clean = clean_margins(path, size, &sizes);
    let mut layers = Vec::with_capacity(traces.len());
    let mut dumps = Vec::with_capacity(traces.len());
    for (i, t) in traces.iter().enumerate() {
        let rf = profile[i];
        let analytic = ((rf.extent as f64 - 1.0) / 2.0 / rf.jump).ceil() as usize + usize::from(rf.resampled);
        let margin = analytic.max(clean[i]);
        let std = t.interior_std(margin).ok_or_else(|| {
            Error::invalid(
                "constant_probe",
                format!(
                    "size {size} leaves no interior at layer {i} ({}): receptive extent {}, margin {margin}",
                    path[i].name, rf.extent
                ),
            )
        })?;
        let first: Vec<f64> = std.iter().take(t.shape().c).copied().collect();
        let flat = first.iter().all(|&s| s < FLAT_THRESHOLD);
        layers.push(LayerProbe {
            index: i,
            name: path[i].name.clone(),
            std: first,
            margin,
            margin_input: margin as f64 * rf.jump,
            receptive_extent: rf.extent,
            flat,
        });
        let s = t.shape();
        dumps.push(rescale_for_display(&Tensor::from_vec(
            Shape::new(1, 1, s.h, s.w),
            t.plane(0, 0).to_vec(),
        )?));
    }
    Ok(ProbeReport {
        gray_level,
        size,
        layers,
        dumps,
    })
}

/// Feeds a constant `size x size` image through the model and records every
/// layer's interior spatial std, with margins wide enough that zero padding
/// cannot reach the measured pixels.
pub fn constant_probe(model: &Model<f32>, gray_level: f64, size: usize) -> Result<ProbeReport> {
    let (rf, _) = crate::models::receptive_field(model);
    if size < rf {
        return Err(Error::invalid(
            "constant_probe",
            format!("size {size} is smaller than the receptive field {rf}"),
        ));
    }
    let cfg = model.config();
    let x = Tensor::full(Shape::new(1, cfg.in_channels, size, size), gray_level as f32);
    let g = Graph::new();
    let p = model.params().bind(&g, false);
    let (_, trace) = model.forward_traced(&p, g.constant(x), 0)?;
    let traces: Vec<Tensor> = trace.iter().map(|v| (*v.value()).clone()).collect();
    probe_traces(model.layers(), &traces, gray_level, size)
}

/// One primitive in a [`LayerStack`].
#[derive(Clone, Debug, PartialEq)]
pub enum StackOp {
    Conv { out_channels: usize, kernel: usize, stride: usize, bias: bool },
    Relu,
    LeakyRelu,
    Sigmoid,
    Tanh,
    Affine { scale: f64, shift: f64 },
    Upsample2,
}

/// A NIB-free chain of primitives with its own parameters, used to check the
/// flatness property on arbitrary compositions.
#[derive(Clone, Debug)]
pub struct LayerStack<T: Real = f32> {
    pub in_channels: usize,
    pub ops: Vec<StackOp>,
    params: ParamStore<T>,
    ids: Vec<Option<(ParamId, Option<ParamId>)>>,
}

impl<T: Real> LayerStack<T> {
    pub fn new(in_channels: usize, ops: Vec<StackOp>, seed: u64) -> Result<Self> {
        let mut init = Initializer::new(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB1A5);
        let mut params = ParamStore::new();
        let mut ids = Vec::with_capacity(ops.len());
        let mut c = in_channels;
        for (i, op) in ops.iter().enumerate() {
            ids.push(match *op {
                StackOp::Conv { out_channels, kernel, stride, bias } => {
                    if kernel % 2 == 0 || stride == 0 || out_channels == 0 {
                        return Err(Error::invalid("LayerStack", format!("bad conv at {i}: {op:?}")));
                    }
                    let w = params.insert(
                        format!("{i}.weight"),
                        init.kaiming(Shape::new(out_channels, c, kernel, kernel), 1.0),
                    );
                    let b = bias.then(|| {
                        let data = (0..out_channels).map(|_| T::from_f64(rng.gen_range(-0.5..0.5))).collect();
                        params.insert(format!("{i}.bias"), Tensor::from_vec([1, out_channels, 1, 1], data).unwrap())
                    });
                    c = out_channels;
                    Some((w, b))
                }
                _ => None,
            });
        }
        Ok(LayerStack { in_channels, ops, params, ids })
    }

    /// A random stack of 1 to 8 primitives with 1 to 4 channels.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = rng.gen_range(1..=8);
        let mut ops = Vec::with_capacity(depth);
        let mut scale = 0i32;
        for _ in 0..depth {
            let op = match rng.gen_range(0..10) {
                0..=4 => {
                    let stride = if scale > -2 && rng.gen_bool(0.2) { 2 } else { 1 };
                    StackOp::Conv {
                        out_channels: rng.gen_range(1..=4),
                        kernel: [1, 3, 3, 5][rng.gen_range(0..4)],
                        stride,
                        bias: rng.gen_bool(0.8),
                    }
                }
                5 => StackOp::Relu,
                6 => StackOp::LeakyRelu,
                7 => [StackOp::Sigmoid, StackOp::Tanh][rng.gen_range(0..2)].clone(),
                8 => StackOp::Affine {
                    scale: rng.gen_range(-2.0..2.0),
                    shift: rng.gen_range(-1.0..1.0),
                },
                _ if scale < 0 => StackOp::Upsample2,
                _ => StackOp::Relu,
            };
            match op {
                StackOp::Conv { stride: 2, .. } => scale -= 1,
                StackOp::Upsample2 => scale += 1,
                _ => {}
            }
            ops.push(op);
        }
        Self::new(rng.gen_range(1..=3), ops, seed).expect("generated ops are valid")
    }

    /// Receptive-field metadata, one entry per op.
    pub fn layers(&self) -> Vec<LayerMeta> {
        self.ops
            .iter()
            .enumerate()
            .map(|(i, op)| {
                let (kernel, stride, up) = match *op {
                    StackOp::Conv { kernel, stride, .. } => (kernel, stride, false),
                    StackOp::Upsample2 => (1, 1, true),
                    _ => (1, 1, false),
                };
                LayerMeta {
                    name: format!("{i}.{}", op_name(op)),
                    kernel,
                    stride,
                    upsample_before: up,
                }
            })
            .collect()
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn forward_traced<'g>(&self, p: &Bound<'g, T>, x: Var<'g, T>) -> Result<Vec<Var<'g, T>>> {
        let mut h = x;
        let mut out = Vec::with_capacity(self.ops.len());
        for (op, ids) in self.ops.iter().zip(&self.ids) {
            h = match *op {
                StackOp::Conv { kernel, stride, .. } => {
                    let (w, b) = ids.expect("conv has weights");
                    h.conv2d(p.get(w), b.map(|b| p.get(b)), stride, (kernel - 1) / 2)?
                }
                StackOp::Relu => h.relu(),
                StackOp::LeakyRelu => h.leaky_relu(0.2),
                StackOp::Sigmoid => h.sigmoid(),
                StackOp::Tanh => h.tanh(),
                StackOp::Affine { scale, shift } => h.affine(scale, shift),
                StackOp::Upsample2 => h.upsample2(),
            };
            out.push(h);
        }
        Ok(out)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let g = Graph::new();
        let p = self.params.bind(&g, false);
        let trace = self.forward_traced(&p, g.constant(x.clone()))?;
        Ok(match trace.last() {
            Some(v) => (*v.value()).clone(),
            None => x.clone(),
        })
    }

    /// Analytic receptive extent of the whole chain.
    pub fn receptive_extent(&self) -> usize {
        rf_profile(&self.layers()).last().map_or(1, |p| p.extent)
    }
}

fn op_name(op: &StackOp) -> &'static str {
    match op {
        StackOp::Conv { .. } => "conv",
        StackOp::Relu => "relu",
        StackOp::LeakyRelu => "leaky_relu",
        StackOp::Sigmoid => "sigmoid",
        StackOp::Tanh => "tanh",
        StackOp::Affine { .. } => "affine",
        StackOp::Upsample2 => "upsample2",
    }
}

/// [`constant_probe`] for a [`LayerStack`].
pub fn probe_stack(stack: &LayerStack<f32>, gray_level: f64, size: usize) -> Result<ProbeReport> {
    let x = Tensor::full(Shape::new(1, stack.in_channels, size, size), gray_level as f32);
    let g = Graph::new();
    let p = stack.params.bind(&g, false);
    let trace = stack.forward_traced(&p, g.constant(x))?;
    let traces: Vec<Tensor> = trace.iter().map(|v| (*v.value()).clone()).collect();
    probe_traces(&stack.layers(), &traces, gray_level, size)
}
