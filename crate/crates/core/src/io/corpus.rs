//! Deterministic synthetic grayscale corpus with a controllable share of
//! flat pixels.
//!
//! A pixel is flat when every in-frame pixel of its 3x3 neighborhood has the
//! same 8-bit value (range < 1/255). Images are built from a constant
//! background, hard-edged flat shapes and textured patches; textured patches
//! are added until the measured flat fraction reaches the per-image target.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::io::{pnm, read_image, to_bytes, write_image, ImageFormat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette {
    pub constant_patches: bool,
    pub gradients: bool,
    pub polygons: bool,
    pub blobs: bool,
}

impl Default for Palette {
    fn default() -> Self {
        Palette {
            constant_patches: true,
            gradients: true,
            polygons: true,
            blobs: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub count: usize,
    /// Square image side, divisible by 8.
    pub size: usize,
    pub flat_fraction: f64,
    pub palette: Palette,
    /// Share of images in the training split.
    pub split: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            count: 64,
            size: 64,
            flat_fraction: 0.9,
            palette: Palette::default(),
            split: 0.8,
            seed: 0,
        }
    }
}

/// Allowed gap between the corpus-mean flat fraction and the target.
pub const FLAT_TOLERANCE: f64 = 0.05;

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Corpus(m));
        if self.count < 2 {
            return bad(format!("count must be >= 2, got {}", self.count));
        }
        if self.size == 0 || self.size % 8 != 0 {
            return bad(format!("size must be a positive multiple of 8, got {}", self.size));
        }
        if !(0.0..=1.0).contains(&self.flat_fraction) {
            return bad(format!("flat_fraction must be in [0, 1], got {}", self.flat_fraction));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return bad(format!("split must be in (0, 1), got {}", self.split));
        }
        let textured = self.palette.gradients || self.palette.blobs;
        if !textured && self.flat_fraction < 1.0 - FLAT_TOLERANCE {
            return Err(Error::CorpusUnreachable(format!(
                "flat_fraction {} needs textured shapes but the palette has neither gradients nor blobs",
                self.flat_fraction
            )));
        }
        Ok(())
    }

    pub fn train_count(&self) -> usize {
        ((self.count as f64 * self.split).round() as usize).clamp(1, self.count - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub path: String,
    pub split: Split,
    pub flat_fraction: f64,
    pub mean_gray: f64,
}

/// Images plus their manifest rows, index-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub images: Vec<Tensor>,
    pub entries: Vec<ManifestEntry>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> Vec<&Tensor> {
        self.images
            .iter()
            .zip(&self.entries)
            .filter(|(_, e)| e.split == split)
            .map(|(t, _)| t)
            .collect()
    }

    pub fn train(&self) -> Vec<&Tensor> {
        self.split(Split::Train)
    }

    pub fn val(&self) -> Vec<&Tensor> {
        self.split(Split::Val)
    }

    pub fn mean_flat_fraction(&self) -> f64 {
        self.entries.iter().map(|e| e.flat_fraction).sum::<f64>() / self.entries.len().max(1) as f64
    }

    /// Writes `img_XXXX.pgm` files and `manifest.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        for (img, e) in self.images.iter().zip(&self.entries) {
            write_image(dir.join(&e.path), img, ImageFormat::Pgm)?;
        }
        let path = dir.join("manifest.csv");
        std::fs::write(&path, manifest_csv(&self.entries)).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Loads a corpus written by [`Corpus::write`].
    pub fn load(dir: impl AsRef<Path>) -> Result<Corpus> {
        let dir = dir.as_ref();
        let entries = read_manifest(dir.join("manifest.csv"))?;
        let images = entries
            .iter()
            .map(|e| read_image(dir.join(&e.path)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus { images, entries })
    }
}

pub const MANIFEST_HEADER: &str = "path,split,flat_fraction,mean_gray";

pub fn manifest_csv(entries: &[ManifestEntry]) -> String {
    let mut s = String::from(MANIFEST_HEADER);
    s.push('\n');
    for e in entries {
        writeln!(s, "{},{},{:.6},{:.6}", e.path, e.split.as_str(), e.flat_fraction, e.mean_gray).unwrap();
    }
    s
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(Error::Corpus(format!("{}: missing header `{MANIFEST_HEADER}`", path.display())));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let bad = || Error::Corpus(format!("{}: malformed row {}: `{l}`", path.display(), i + 2));
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            let split = match f[1] {
                "train" => Split::Train,
                "val" => Split::Val,
                _ => return Err(bad()),
            };
            Ok(ManifestEntry {
                path: f[0].to_string(),
                split,
                flat_fraction: f[2].parse().map_err(|_| bad())?,
                mean_gray: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Per-pixel flatness of an 8-bit plane.
pub fn flat_mask(bytes: &[u8], h: usize, w: usize) -> Vec<bool> {
    let mut mask = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let v = bytes[y * w + x];
            let mut flat = true;
            'n: for ny in y.saturating_sub(1)..(y + 2).min(h) {
                for nx in x.saturating_sub(1)..(x + 2).min(w) {
                    if bytes[ny * w + nx] != v {
                        flat = false;
                        break 'n;
                    }
                }
            }
            mask[y * w + x] = flat;
        }
    }
    mask
}

pub fn flat_fraction_of_bytes(bytes: &[u8], h: usize, w: usize) -> f64 {
    flat_mask(bytes, h, w).iter().filter(|&&f| f).count() as f64 / (h * w) as f64
}

/// Flat fraction of a single-plane image after 8-bit quantization.
pub fn flat_fraction(image: &Tensor) -> f64 {
    let s = image.shape();
    flat_fraction_of_bytes(&to_bytes(image), s.h, s.w)
}

pub fn mean_gray(image: &Tensor) -> f64 {
    let b = to_bytes(image);
    b.iter().map(|&v| v as f64).sum::<f64>() / (255.0 * b.len() as f64)
}

pub fn gen_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let images = crate::parallel::map((0..spec.count).collect(), |i| generate_image(spec, i));
    let mut order: Vec<usize> = (0..spec.count).collect();
    // Stream 0 drives the split; image i uses stream i + 1.
    order.shuffle(&mut image_rng(spec.seed, usize::MAX));
    let mut split = vec![Split::Val; spec.count];
    for &i in &order[..spec.train_count()] {
        split[i] = Split::Train;
    }
    let entries: Vec<ManifestEntry> = images
        .iter()
        .enumerate()
        .map(|(i, img)| ManifestEntry {
            path: format!("img_{i:04}.pgm"),
            split: split[i],
            flat_fraction: flat_fraction(img),
            mean_gray: mean_gray(img),
        })
        .collect();
    let corpus = Corpus { images, entries };
    let mean = corpus.mean_flat_fraction();
    if (mean - spec.flat_fraction).abs() > FLAT_TOLERANCE {
        return Err(Error::CorpusUnreachable(format!(
            "measured mean flat fraction {mean:.4} is outside {} +/- {FLAT_TOLERANCE}",
            spec.flat_fraction
        )));
    }
    Ok(corpus)
}

fn image_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((index as u64).wrapping_add(1));
    rng
}

struct Canvas {
    n: usize,
    px: Vec<f32>,
}

impl Canvas {
    fn quantized(&self) -> Vec<u8> {
        let mut c = 0;
        self.px.iter().map(|&v| pnm::quantize(v, &mut c)).collect()
    }

    fn flat(&self) -> f64 {
        flat_fraction_of_bytes(&self.quantized(), self.n, self.n)
    }
}

fn generate_image(spec: &CorpusSpec, index: usize) -> Tensor {
    let mut rng = image_rng(spec.seed, index);
    let n = spec.size;
    let bg: f32 = rng.gen_range(0.1..0.9);
    let mut canvas = Canvas { n, px: vec![bg; n * n] };
    let target = spec.flat_fraction;
    let p = spec.palette;

    // Flat shapes only cost their one-pixel outline, so keep them while there
    // is slack above the target.
    let flat_kinds: Vec<u8> = [(p.constant_patches, 0u8), (p.polygons, 1)]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, k)| *k)
        .collect();
    if !flat_kinds.is_empty() && target < 1.0 {
        for _ in 0..rng.gen_range(1..=4) {
            let before = canvas.px.clone();
            match flat_kinds[rng.gen_range(0..flat_kinds.len())] {
                0 => draw_rect(&mut canvas, &mut rng),
                _ => draw_polygon(&mut canvas, &mut rng),
            }
            if canvas.flat() < target + 0.02 {
                canvas.px = before;
            }
        }
    }

    let tex_kinds: Vec<u8> = [(p.gradients, 0u8), (p.blobs, 1)]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, k)| *k)
        .collect();
    if !tex_kinds.is_empty() {
        let area = (n * n) as f64;
        for _ in 0..64 {
            let flat = canvas.flat();
            let deficit = flat - target;
            if deficit <= 0.005 {
                break;
            }
            // Patch side chosen so that the patch plus its outline roughly covers the deficit.
            let side = ((deficit * area).sqrt() - 1.0).clamp(1.0, n as f64);
            let side = (side * rng.gen_range(0.6..1.0)).max(1.0).round() as usize;
            let aspect: f64 = rng.gen_range(0.5..2.0);
            let ph = ((side as f64 * aspect.sqrt()).round() as usize).clamp(1, n);
            let pw = ((side * side) as f64 / ph as f64).round().clamp(1.0, n as f64) as usize;
            let y0 = rng.gen_range(0..=n - ph);
            let x0 = rng.gen_range(0..=n - pw);
            match tex_kinds[rng.gen_range(0..tex_kinds.len())] {
                0 => draw_gradient(&mut canvas, &mut rng, y0, x0, ph, pw),
                _ => draw_blob(&mut canvas, &mut rng, y0, x0, ph, pw),
            }
        }
    }

    let bytes = canvas.quantized();
    Tensor::from_vec(
        Shape::new(1, 1, n, n),
        bytes.iter().map(|&b| b as f32 / 255.0).collect(),
    )
    .expect("square canvas")
}

fn draw_rect(c: &mut Canvas, rng: &mut ChaCha8Rng) {
    let n = c.n;
    let h = rng.gen_range(n / 8..=n / 2).max(2);
    let w = rng.gen_range(n / 8..=n / 2).max(2);
    let y0 = rng.gen_range(0..=n - h);
    let x0 = rng.gen_range(0..=n - w);
    let v: f32 = rng.gen_range(0.05..0.95);
    for y in y0..y0 + h {
        c.px[y * n + x0..y * n + x0 + w].fill(v);
    }
}

fn draw_polygon(c: &mut Canvas, rng: &mut ChaCha8Rng) {
    let n = c.n as f64;
    let k = rng.gen_range(3..=5);
    let (cy, cx) = (rng.gen_range(0.2 * n..0.8 * n), rng.gen_range(0.2 * n..0.8 * n));
    let r = rng.gen_range(0.1 * n..0.3 * n);
    let mut angles: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    let pts: Vec<(f64, f64)> = angles
        .iter()
        .map(|a| (cy + r * a.sin(), cx + r * a.cos()))
        .collect();
    let v: f32 = rng.gen_range(0.05..0.95);
    for y in 0..c.n {
        for x in 0..c.n {
            if inside(&pts, y as f64 + 0.5, x as f64 + 0.5) {
                c.px[y * c.n + x] = v;
            }
        }
    }
}

fn inside(pts: &[(f64, f64)], y: f64, x: f64) -> bool {
    let mut hit = false;
    let mut j = pts.len() - 1;
    for i in 0..pts.len() {
        let (yi, xi) = pts[i];
        let (yj, xj) = pts[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            hit = !hit;
        }
        j = i;
    }
    hit
}

/// Axis-aligned ramp steep enough that every pixel differs from its neighbors.
fn draw_gradient(c: &mut Canvas, rng: &mut ChaCha8Rng, y0: usize, x0: usize, h: usize, w: usize) {
    let horizontal = rng.gen_bool(0.5);
    let len = if horizontal { w } else { h } as f32;
    let slope = (rng.gen_range(2.0..6.0) / 255.0f32).max(0.6 / len.max(1.0));
    let start: f32 = rng.gen_range(0.05..0.95);
    let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let jitter: f32 = 1.5 / 255.0;
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            let t = if horizontal { x - x0 } else { y - y0 } as f32;
            // Reflect at the ends to stay in range without clipping into flat runs.
            let raw = start + dir * slope * t;
            let folded = 1.0 - ((raw.rem_euclid(2.0)) - 1.0).abs();
            let v = 0.05 + 0.9 * folded + rng.gen_range(-jitter..jitter);
            c.px[y * c.n + x] = v;
        }
    }
}

/// Soft gaussian bump with fine grain.
fn draw_blob(c: &mut Canvas, rng: &mut ChaCha8Rng, y0: usize, x0: usize, h: usize, w: usize) {
    let base = c.px[(y0 + h / 2) * c.n + x0 + w / 2];
    let amp: f32 = rng.gen_range(-0.4..0.4);
    let (cy, cx) = (y0 as f32 + h as f32 / 2.0, x0 as f32 + w as f32 / 2.0);
    let (sy, sx) = ((h as f32 / 3.0).max(0.5), (w as f32 / 3.0).max(0.5));
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            let dy = (y as f32 + 0.5 - cy) / sy;
            let dx = (x as f32 + 0.5 - cx) / sx;
            let grain: f32 = rng.gen_range(-0.04..0.04);
            let v = base + amp * (-0.5 * (dy * dy + dx * dx)).exp() + grain;
            c.px[y * c.n + x] = v.clamp(0.0, 1.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_mask_uses_in_frame_neighbors() {
        // 3x3 with a single odd pixel in the corner: only pixels away from it stay flat.
        let mut b = vec![10u8; 9];
        b[0] = 11;
        let m = flat_mask(&b, 3, 3);
        assert_eq!(m, [false, false, true, false, false, true, true, true, true]);
    }

    #[test]
    fn split_counts() {
        let spec = CorpusSpec {
            count: 10,
            size: 16,
            ..Default::default()
        };
        assert_eq!(spec.train_count(), 8);
        let c = gen_corpus(&spec).unwrap();
        assert_eq!(c.train().len(), 8);
        assert_eq!(c.val().len(), 2);
    }

    #[test]
    fn validation() {
        let bad = |s: CorpusSpec| gen_corpus(&s).is_err();
        assert!(bad(CorpusSpec { count: 1, ..Default::default() }));
        assert!(bad(CorpusSpec { size: 20, ..Default::default() }));
        let flat_only = Palette {
            gradients: false,
            blobs: false,
            ..Default::default()
        };
        assert!(matches!(
            gen_corpus(&CorpusSpec { flat_fraction: 0.3, palette: flat_only, ..Default::default() }),
            Err(Error::CorpusUnreachable(_))
        ));
    }

    #[test]
    fn targets_are_met() {
        for target in [0.0, 0.3, 0.6, 0.9, 1.0] {
            let spec = CorpusSpec {
                count: 12,
                size: 32,
                flat_fraction: target,
                seed: 5,
                ..Default::default()
            };
            let c = gen_corpus(&spec).unwrap();
            assert!((c.mean_flat_fraction() - target).abs() <= FLAT_TOLERANCE, "{target}");
        }
    }
}
