//! Binary PGM (P5) and PBM (P4).

use crate::autodiff::{Shape, Tensor};
use crate::error::{Error, Result};

fn format_err(offset: usize, detail: impl Into<String>) -> Error {
    Error::ImageFormat {
        offset,
        detail: detail.into(),
    }
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    /// Offset of the first raster byte.
    data_start: usize,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(match self.bytes.get(self.pos) {
                Some(b) => format_err(self.pos, format!("expected {what}, found byte 0x{b:02x}")),
                None => format_err(self.pos, format!("unexpected end of file while reading {what}")),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(start, format!("{what} is out of range")))
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(format_err(0, "file too short for a magic number"));
    }
    let magic = [bytes[0], bytes[1]];
    if magic != *b"P5" && magic != *b"P4" {
        return Err(format_err(0, format!("unknown magic {:?}", String::from_utf8_lossy(&magic))));
    }
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = if magic == *b"P5" {
        let off = cur.pos;
        let m = cur.number("maxval")?;
        if m == 0 || m > 255 {
            return Err(format_err(off, format!("maxval {m} unsupported (only 8-bit, 1..=255)")));
        }
        m
    } else {
        1
    };
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => {}
        Some(_) => return Err(format_err(cur.pos, "expected a single whitespace byte before raster data")),
        None => return Err(format_err(cur.pos, "header ends without raster data")),
    }
    if width == 0 || height == 0 {
        return Err(format_err(2, format!("empty image {width}x{height}")));
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval,
        data_start: cur.pos + 1,
    })
}

/// Decodes P5 or P4 bytes into a `(1, 1, h, w)` tensor with values in [0, 1].
/// PBM bit 1 is black, so it maps to 0.
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let h = parse_header(bytes)?;
    let raster = &bytes[h.data_start..];
    let shape = Shape::new(1, 1, h.height, h.width);
    if h.magic == *b"P5" {
        let need = h.width * h.height;
        if raster.len() < need {
            return Err(format_err(
                h.data_start + raster.len(),
                format!("raster truncated: expected {need} bytes, found {}", raster.len()),
            ));
        }
        let mut data = Vec::with_capacity(need);
        for (i, &b) in raster[..need].iter().enumerate() {
            if b as usize > h.maxval {
                return Err(format_err(h.data_start + i, format!("sample {b} exceeds maxval {}", h.maxval)));
            }
            data.push(b as f32 / h.maxval as f32);
        }
        Tensor::from_vec(shape, data)
    } else {
        let row_bytes = h.width.div_ceil(8);
        let need = row_bytes * h.height;
        if raster.len() < need {
            return Err(format_err(
                h.data_start + raster.len(),
                format!("raster truncated: expected {need} bytes, found {}", raster.len()),
            ));
        }
        Ok(Tensor::from_fn(shape, |_, _, y, x| {
            let byte = raster[y * row_bytes + x / 8];
            let black = (byte >> (7 - x % 8)) & 1 == 1;
            if black {
                0.0
            } else {
                1.0
            }
        }))
    }
}

pub(crate) fn quantize(v: f32, clamped: &mut usize) -> u8 {
    if !(0.0..=1.0).contains(&v) {
        *clamped += 1;
    }
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round() as u8
}

fn single_plane(t: &Tensor, op: &'static str) -> Result<Shape> {
    let s = t.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::shape(op, format!("expected a (1, 1, h, w) image, got {s}")));
    }
    Ok(s)
}

/// Encodes as P5 with maxval 255. Returns the bytes and the number of
/// samples that had to be clamped into [0, 1].
pub fn encode_pgm(t: &Tensor) -> Result<(Vec<u8>, usize)> {
    let s = single_plane(t, "encode_pgm")?;
    let mut out = format!("P5\n{} {}\n255\n", s.w, s.h).into_bytes();
    let mut clamped = 0;
    out.extend(t.data().iter().map(|&v| quantize(v, &mut clamped)));
    Ok((out, clamped))
}

/// Encodes as P4. Values >= 0.5 are white (bit 0), others black (bit 1).
pub fn encode_pbm(t: &Tensor) -> Result<(Vec<u8>, usize)> {
    let s = single_plane(t, "encode_pbm")?;
    let mut out = format!("P4\n{} {}\n", s.w, s.h).into_bytes();
    let row_bytes = s.w.div_ceil(8);
    let mut clamped = 0;
    for y in 0..s.h {
        let mut row = vec![0u8; row_bytes];
        for x in 0..s.w {
            let v = t.at(0, 0, y, x);
            if !(0.0..=1.0).contains(&v) {
                clamped += 1;
            }
            if v.is_nan() || v < 0.5 {
                row[x / 8] |= 0x80 >> (x % 8);
            }
        }
        out.extend_from_slice(&row);
    }
    Ok((out, clamped))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p5_vector() {
        let bytes = b"P5\n2 2\n255\n\x00\x80\xff\x40";
        let t = decode(bytes).unwrap();
        assert_eq!(t.data(), &[0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0]);
    }

    #[test]
    fn p4_vector() {
        let t = Tensor::<f32>::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let (bytes, clamped) = encode_pbm(&t).unwrap();
        assert_eq!(bytes, b"P4\n2 2\n\x40\x80");
        assert_eq!(clamped, 0);
        assert_eq!(decode(&bytes).unwrap(), t);
    }

    #[test]
    fn p4_row_padding() {
        // 10 pixels per row -> 2 bytes, last 6 bits are padding.
        let t = Tensor::from_fn([1, 1, 1, 10], |_, _, _, x| if x == 9 { 0.0 } else { 1.0 });
        let (bytes, _) = encode_pbm(&t).unwrap();
        assert_eq!(&bytes[bytes.len() - 2..], &[0x00, 0x40]);
    }

    #[test]
    fn comments_and_maxval() {
        let t = decode(b"P5 # c\n# full line\n1 1 15\n\x0f").unwrap();
        assert_eq!(t.data(), &[1.0]);
    }

    #[test]
    fn errors_report_offsets() {
        let e = decode(b"P6\n1 1\n255\n\x00").unwrap_err();
        assert!(matches!(e, Error::ImageFormat { offset: 0, .. }));
        let e = decode(b"P5\n2 x\n255\n").unwrap_err();
        assert!(matches!(e, Error::ImageFormat { offset: 5, .. }), "{e}");
        let e = decode(b"P5\n2 2\n255\n\x00\x00\x00").unwrap_err();
        assert!(matches!(e, Error::ImageFormat { offset: 14, .. }), "{e}");
        let e = decode(b"P5\n1 1\n100\n\xff").unwrap_err();
        assert!(matches!(e, Error::ImageFormat { offset: 11, .. }), "{e}");
    }

    #[test]
    fn clamping_is_counted() {
        let t = Tensor::from_vec([1, 1, 1, 3], vec![-0.5, 0.5, 2.0]).unwrap();
        let (bytes, clamped) = encode_pgm(&t).unwrap();
        assert_eq!(clamped, 2);
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 128, 255]);
    }
}
