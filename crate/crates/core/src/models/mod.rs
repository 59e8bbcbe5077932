//! Generator architectures with an optional NIB as their first block, plus
//! analytic receptive-field bookkeeping.
//!
//! Every architecture starts with a pointwise stem (a 1x1 conv, or a NIB with
//! 1x1 branches) so the NIB-equipped and standard variants differ only in
//! that first block.

pub mod layers;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Graph, ParamStore, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::nib::{nib_forward, NibParams, NoiseSpec};
use layers::{Conv2dLayer, Initializer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Resnet,
    Unet,
    Autoencoder,
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resnet" => Ok(Arch::Resnet),
            "unet" => Ok(Arch::Unet),
            "autoencoder" | "ae" => Ok(Arch::Autoencoder),
            _ => Err(Error::InvalidModelConfig(format!("unknown arch `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Sigmoid,
    Tanh,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NibConfig {
    pub noise: NoiseSpec,
    /// Branch kernel size (1 or 3).
    pub kernel: usize,
}

impl Default for NibConfig {
    fn default() -> Self {
        NibConfig {
            noise: NoiseSpec::default(),
            kernel: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub base_width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub output_activation: OutputActivation,
    pub init_seed: u64,
    pub nib: Option<NibConfig>,
    /// Residual blocks (resnet only).
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    /// 3x3 convs at the 1/8-resolution bottleneck (unet only).
    #[serde(default = "default_bottleneck")]
    pub unet_bottleneck: usize,
}

fn default_blocks() -> usize {
    10
}

fn default_bottleneck() -> usize {
    7
}

impl ModelConfig {
    /// Single-channel halftoning ResNet with sigmoid output.
    pub fn resnet(base_width: usize, nib: Option<NibConfig>) -> Self {
        ModelConfig {
            arch: Arch::Resnet,
            base_width,
            in_channels: 1,
            out_channels: 1,
            output_activation: OutputActivation::Sigmoid,
            init_seed: 0,
            nib,
            blocks: default_blocks(),
            unet_bottleneck: default_bottleneck(),
        }
    }

    pub fn unet(base_width: usize, nib: Option<NibConfig>) -> Self {
        ModelConfig {
            arch: Arch::Unet,
            ..Self::resnet(base_width, nib)
        }
    }

    /// Regression autoencoder (no output activation).
    pub fn autoencoder(base_width: usize, nib: Option<NibConfig>) -> Self {
        ModelConfig {
            arch: Arch::Autoencoder,
            output_activation: OutputActivation::None,
            ..Self::resnet(base_width, nib)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidModelConfig(m));
        if self.base_width < 8 {
            return bad(format!("base_width must be >= 8, got {}", self.base_width));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.arch == Arch::Resnet && self.blocks == 0 {
            return bad("resnet needs at least one residual block".into());
        }
        if let Some(nib) = &self.nib {
            nib.noise.validate()?;
            if nib.kernel % 2 == 0 {
                return bad(format!("NIB kernel must be odd, got {}", nib.kernel));
            }
        }
        Ok(())
    }

    /// Required divisibility of the spatial size.
    pub fn size_multiple(&self) -> usize {
        match self.arch {
            Arch::Resnet => 1,
            Arch::Unet | Arch::Autoencoder => 8,
        }
    }
}

/// One conv layer on the longest input-to-output path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerMeta {
    pub name: String,
    pub kernel: usize,
    pub stride: usize,
    /// Nearest x2 upsampling applied right before this layer.
    pub upsample_before: bool,
}

#[derive(Clone, Debug, PartialEq)]
enum Stem {
    Conv(Conv2dLayer),
    Nib(NibParams),
}

#[derive(Clone, Debug, PartialEq)]
struct ResBlock {
    conv1: Conv2dLayer,
    conv2: Conv2dLayer,
}

#[derive(Clone, Debug, PartialEq)]
enum Body {
    Resnet {
        blocks: Vec<ResBlock>,
    },
    Unet {
        enc: Vec<[Conv2dLayer; 2]>,
        down: Vec<Conv2dLayer>,
        bottleneck: Vec<Conv2dLayer>,
        dec: Vec<[Conv2dLayer; 2]>,
    },
    Autoencoder {
        enc: Vec<Conv2dLayer>,
        dec: Vec<Conv2dLayer>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Real = f32> {
    config: ModelConfig,
    params: ParamStore<T>,
    stem: Stem,
    body: Body,
    tail: Conv2dLayer,
    path: Vec<LayerMeta>,
}

/// Builds and deterministically initializes a model.
pub fn build_model<T: Real>(config: &ModelConfig) -> Result<Model<T>> {
    config.validate()?;
    let mut store = ParamStore::new();
    let mut init = Initializer::new(config.init_seed);
    let w = config.base_width;
    let mut path = Vec::new();
    let mut meta = |name: &str, kernel, stride, up| {
        path.push(LayerMeta {
            name: name.to_string(),
            kernel,
            stride,
            upsample_before: up,
        })
    };

    let stem = match &config.nib {
        Some(nc) => {
            let f1 = Conv2dLayer::new(&mut store, &mut init, "nib.f1", config.in_channels, w, nc.kernel, 1, 1.0);
            let f2 = Conv2dLayer::new(&mut store, &mut init, "nib.f2", config.in_channels, w, nc.kernel, 1, 1.0);
            meta("nib", nc.kernel, 1, false);
            Stem::Nib(NibParams::new(f1, f2)?)
        }
        None => {
            meta("head", 1, 1, false);
            Stem::Conv(Conv2dLayer::new(&mut store, &mut init, "head", config.in_channels, w, 1, 1, 1.0))
        }
    };

    let mut conv = |store: &mut ParamStore<T>, name: String, cin, cout, k, stride, gain, up: bool| {
        meta(&name, k, stride, up);
        Conv2dLayer::new(store, &mut init, &name, cin, cout, k, stride, gain)
    };

    let (body, tail_in) = match config.arch {
        Arch::Resnet => {
            let blocks = (0..config.blocks)
                .map(|i| ResBlock {
                    conv1: conv(&mut store, format!("blocks.{i}.conv1"), w, w, 3, 1, 1.0, false),
                    // Small second conv keeps the un-normalized stack near identity at init.
                    conv2: conv(&mut store, format!("blocks.{i}.conv2"), w, w, 3, 1, 0.1, false),
                })
                .collect();
            (Body::Resnet { blocks }, w)
        }
        Arch::Unet => {
            let widths = [w, 2 * w, 4 * w, 4 * w];
            let mut enc = Vec::new();
            let mut down = Vec::new();
            for lvl in 0..3 {
                let c = widths[lvl];
                enc.push([
                    conv(&mut store, format!("enc.{lvl}.conv1"), c, c, 3, 1, 1.0, false),
                    conv(&mut store, format!("enc.{lvl}.conv2"), c, c, 3, 1, 1.0, false),
                ]);
                down.push(conv(&mut store, format!("down.{lvl}"), c, widths[lvl + 1], 3, 2, 1.0, false));
            }
            let bottleneck = (0..config.unet_bottleneck)
                .map(|i| conv(&mut store, format!("bottleneck.{i}"), widths[3], widths[3], 3, 1, 1.0, false))
                .collect();
            let mut dec = Vec::new();
            for lvl in (0..3).rev() {
                let cin = widths[lvl + 1] + widths[lvl];
                let c = widths[lvl];
                dec.push([
                    conv(&mut store, format!("dec.{lvl}.conv1"), cin, c, 3, 1, 1.0, true),
                    conv(&mut store, format!("dec.{lvl}.conv2"), c, c, 3, 1, 1.0, false),
                ]);
            }
            (
                Body::Unet {
                    enc,
                    down,
                    bottleneck,
                    dec,
                },
                w,
            )
        }
        Arch::Autoencoder => {
            let widths = [w, 2 * w, 4 * w, 8 * w];
            let enc = (0..3)
                .map(|i| conv(&mut store, format!("enc.{i}"), widths[i], widths[i + 1], 3, 2, 1.0, false))
                .collect();
            let dec = (0..3)
                .rev()
                .map(|i| conv(&mut store, format!("dec.{i}"), widths[i + 1], widths[i], 3, 1, 1.0, true))
                .collect();
            (Body::Autoencoder { enc, dec }, w)
        }
    };
    let tail = conv(&mut store, "tail".into(), tail_in, config.out_channels, 1, 1, 1.0, false);
    Ok(Model {
        config: config.clone(),
        params: store,
        stem,
        body,
        tail,
        path,
    })
}

/// Analytic receptive field of a layer path: `r += (k - 1) * j; j *= stride`,
/// with upsampling halving the jump.
pub fn receptive_field_of(path: &[LayerMeta]) -> (usize, usize) {
    let r = rf_profile(path).last().map_or(1, |p| p.extent);
    (r, r)
}

/// Cumulative receptive extent and jump after each layer of a path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RfPoint {
    pub extent: usize,
    /// Input pixels per feature pixel.
    pub jump: f64,
    /// Whether any stride or upsampling occurred up to here.
    pub resampled: bool,
}

pub fn rf_profile(path: &[LayerMeta]) -> Vec<RfPoint> {
    let mut r = 1.0f64;
    let mut j = 1.0f64;
    let mut resampled = false;
    path.iter()
        .map(|l| {
            if l.upsample_before {
                j /= 2.0;
                resampled = true;
            }
            r += (l.kernel as f64 - 1.0) * j;
            j *= l.stride as f64;
            resampled |= l.stride != 1;
            RfPoint {
                extent: r.round() as usize,
                jump: j,
                resampled,
            }
        })
        .collect()
}

pub fn receptive_field<T: Real>(model: &Model<T>) -> (usize, usize) {
    receptive_field_of(&model.path)
}

impl<T: Real> Model<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Replaces all parameters; names and shapes must match.
    pub fn load_params(&mut self, params: ParamStore<T>) -> Result<()> {
        if params.names() != self.params.names() {
            return Err(Error::InvalidModelConfig("parameter names do not match the architecture".into()));
        }
        for i in 0..params.len() {
            if params.value(i).shape() != self.params.value(i).shape() {
                return Err(Error::InvalidModelConfig(format!(
                    "parameter `{}` has shape {}, expected {}",
                    params.name(i),
                    params.value(i).shape(),
                    self.params.value(i).shape()
                )));
            }
        }
        self.params = params;
        Ok(())
    }

    /// Conv layers along the longest path, in evaluation order.
    pub fn layers(&self) -> &[LayerMeta] {
        &self.path
    }

    pub fn noise(&self) -> Option<&NoiseSpec> {
        match &self.stem {
            Stem::Nib(_) => self.config.nib.as_ref().map(|n| &n.noise),
            Stem::Conv(_) => None,
        }
    }

    pub fn has_nib(&self) -> bool {
        matches!(self.stem, Stem::Nib(_))
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            stem: self.stem.clone(),
            body: self.body.clone(),
            tail: self.tail.clone(),
            path: self.path.clone(),
        }
    }

    pub fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.c != self.config.in_channels {
            return Err(Error::shape(
                "forward",
                format!("input has {} channels, model expects {}", s.c, self.config.in_channels),
            ));
        }
        let m = self.config.size_multiple();
        if s.h % m != 0 || s.w % m != 0 || s.h == 0 || s.w == 0 {
            return Err(Error::Indivisible {
                h: s.h,
                w: s.w,
                required: m,
            });
        }
        Ok(())
    }

    pub fn forward<'g>(&self, p: &Bound<'g, T>, x: Var<'g, T>, sample_id: u64) -> Result<Var<'g, T>> {
        self.run(p, x, sample_id, None)
    }

    /// Forward pass that also returns the activation after every layer of
    /// [`Model::layers`], index-aligned.
    pub fn forward_traced<'g>(
        &self,
        p: &Bound<'g, T>,
        x: Var<'g, T>,
        sample_id: u64,
    ) -> Result<(Var<'g, T>, Vec<Var<'g, T>>)> {
        let mut trace = Vec::with_capacity(self.path.len());
        let y = self.run(p, x, sample_id, Some(&mut trace))?;
        debug_assert_eq!(trace.len(), self.path.len());
        Ok((y, trace))
    }

    /// Inference on a plain tensor without recording gradients.
    pub fn infer(&self, x: &Tensor<T>, sample_id: u64) -> Result<Tensor<T>> {
        let g = Graph::new();
        let p = self.params.bind(&g, false);
        let y = self.forward(&p, g.constant(x.clone()), sample_id)?;
        let out = (*y.value()).clone();
        Ok(out)
    }

    fn run<'g>(
        &self,
        p: &Bound<'g, T>,
        x: Var<'g, T>,
        sample_id: u64,
        mut trace: Option<&mut Vec<Var<'g, T>>>,
    ) -> Result<Var<'g, T>> {
        self.check_input(&x.value())?;
        let mut rec = |v: Var<'g, T>| {
            if let Some(t) = trace.as_deref_mut() {
                t.push(v);
            }
            v
        };
        let stem = match &self.stem {
            Stem::Conv(c) => c.forward(p, x)?,
            Stem::Nib(nib) => {
                let spec = &self.config.nib.as_ref().expect("nib config").noise;
                nib_forward(x, spec, nib, p, sample_id)?
            }
        };
        let mut h = rec(stem.relu());
        match &self.body {
            Body::Resnet { blocks } => {
                for b in blocks {
                    let t = rec(b.conv1.forward(p, h)?.relu());
                    h = rec(h.add(b.conv2.forward(p, t)?)?);
                }
            }
            Body::Unet {
                enc,
                down,
                bottleneck,
                dec,
            } => {
                let mut skips = Vec::with_capacity(3);
                for (pair, d) in enc.iter().zip(down) {
                    h = rec(pair[0].forward(p, h)?.relu());
                    h = rec(pair[1].forward(p, h)?.relu());
                    skips.push(h);
                    h = rec(d.forward(p, h)?.relu());
                }
                for c in bottleneck {
                    h = rec(c.forward(p, h)?.relu());
                }
                for pair in dec {
                    let skip = skips.pop().expect("one skip per level");
                    let up = Var::concat(&[h.upsample2(), skip])?;
                    h = rec(pair[0].forward(p, up)?.relu());
                    h = rec(pair[1].forward(p, h)?.relu());
                }
            }
            Body::Autoencoder { enc, dec } => {
                for c in enc {
                    h = rec(c.forward(p, h)?.relu());
                }
                for c in dec {
                    h = rec(c.forward(p, h.upsample2())?.relu());
                }
            }
        }
        let y = self.tail.forward(p, h)?;
        let y = match self.config.output_activation {
            OutputActivation::Sigmoid => y.sigmoid(),
            OutputActivation::Tanh => y.tanh(),
            OutputActivation::None => y,
        };
        Ok(rec(y))
    }
}
