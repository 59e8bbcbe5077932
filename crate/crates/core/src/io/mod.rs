//! Image files, the synthetic corpus and checkpoints.
//!
//! Images are `(1, c, h, w)` tensors with values in [0, 1]. Supported files
//! are binary PGM (P5), binary PBM (P4) and 8-bit PNG (gray or RGB).

pub mod checkpoint;
pub mod corpus;
pub mod pnm;

use std::path::Path;

use crate::autodiff::{Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Pbm,
    Png,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "pgm" => Some(ImageFormat::Pgm),
            "pbm" => Some(ImageFormat::Pbm),
            "png" => Some(ImageFormat::Png),
            _ => None,
        }
    }
}

/// Reads a PGM, PBM or PNG file. The format is detected from the content.
pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

pub fn decode_image(bytes: &[u8]) -> Result<Tensor> {
    if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes)
    } else {
        pnm::decode(bytes)
    }
}

/// Writes an image and returns how many samples were clamped into [0, 1].
pub fn write_image(path: impl AsRef<Path>, image: &Tensor, format: ImageFormat) -> Result<usize> {
    let path = path.as_ref();
    let (bytes, clamped) = encode_image(image, format)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(clamped)
}

pub fn encode_image(image: &Tensor, format: ImageFormat) -> Result<(Vec<u8>, usize)> {
    match format {
        ImageFormat::Pgm => pnm::encode_pgm(image),
        ImageFormat::Pbm => pnm::encode_pbm(image),
        ImageFormat::Png => encode_png(image),
    }
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Png(e.to_string())
}

fn decode_png(bytes: &[u8]) -> Result<Tensor> {
    let mut decoder = png::Decoder::new(bytes);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(png_err(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let (stride, channels) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => return Err(png_err("palette was not expanded")),
    };
    let (h, w) = (info.height as usize, info.width as usize);
    let row = info.line_size;
    Ok(Tensor::from_fn(Shape::new(1, channels, h, w), |_, c, y, x| {
        buf[y * row + x * stride + c] as f32 / 255.0
    }))
}

fn encode_png(image: &Tensor) -> Result<(Vec<u8>, usize)> {
    let s = image.shape();
    let color = match (s.n, s.c) {
        (1, 1) => png::ColorType::Grayscale,
        (1, 3) => png::ColorType::Rgb,
        _ => return Err(Error::shape("encode_png", format!("expected (1, 1|3, h, w), got {s}"))),
    };
    let mut clamped = 0;
    let mut pixels = Vec::with_capacity(s.numel());
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..s.c {
                pixels.push(pnm::quantize(image.at(0, c, y, x), &mut clamped));
            }
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, s.w as u32, s.h as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&pixels).map_err(png_err)?;
    }
    Ok((out, clamped))
}

/// 8-bit sample values of a single-plane image, as written to disk.
pub fn to_bytes(image: &Tensor) -> Vec<u8> {
    let mut clamped = 0;
    image.data().iter().map(|&v| pnm::quantize(v, &mut clamped)).collect()
}
