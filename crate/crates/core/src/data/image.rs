use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// 8-bit raster, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// 1 (PGM) or 3 (PPM).
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!("images have 1 or 3 channels, got {channels}")));
        }
        if width == 0 || height == 0 || pixels.len() != width * height * channels {
            return Err(Error::InvalidArgument(format!(
                "{} bytes for a {width}x{height}x{channels} image",
                pixels.len()
            )));
        }
        Ok(Image { width, height, channels, pixels })
    }

    /// `[H, W, C]` tensor of raw values in `[0, 255]`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.pixels.iter().map(|&b| T::lit(f64::from(b))).collect();
        Tensor::new(vec![self.height, self.width, self.channels], data).expect("image shape")
    }

    /// Rounds and clamps `[H, W, 1|3]` values in `[0, 1]` to bytes.
    pub fn from_unit_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let [h, w, c] = match *t.shape() {
            [h, w, c] => [h, w, c],
            ref s => return Err(Error::shape("Image::from_unit_tensor", format!("{s:?}"))),
        };
        let pixels = t
            .to_f64_vec()
            .into_iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        Image::new(w, h, c, pixels)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn err(&self, detail: impl Into<String>) -> Error {
        Error::Format { path: self.path.to_path_buf(), detail: detail.into() }
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
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
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err(format!("expected {what} in header")))
    }
}

/// Decodes binary PGM (`P5`) or PPM (`P6`) with a maximum value of at most 255.
pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Image> {
    let mut c = Cursor { bytes, pos: 0, path };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(c.err("not a binary PGM (P5) or PPM (P6) file")),
    };
    c.pos = 2;
    let width = c.number("width")?;
    let height = c.number("height")?;
    let maxval = c.number("maximum value")?;
    if width == 0 || height == 0 {
        return Err(c.err(format!("empty {width}x{height} image")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(c.err(format!("maximum value {maxval} is not an 8-bit depth")));
    }
    if !bytes.get(c.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(c.err("missing whitespace after header"));
    }
    let start = c.pos + 1;
    let need = width * height * channels;
    let payload = bytes
        .get(start..start + need)
        .ok_or_else(|| c.err(format!("payload truncated: need {need} bytes, have {}", bytes.len().saturating_sub(start))))?;
    Image::new(width, height, channels, payload.to_vec())
}

pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn read_pnm(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes, path)
}

pub fn write_pnm(path: &Path, img: &Image) -> Result<()> {
    std::fs::write(path, encode_pnm(img)).map_err(|e| Error::io(path, e))
}

/// `[H, W, C]` tensor of raw values in `[0, 255]` from a PGM or PPM file.
pub fn load_image<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    Ok(read_pnm(path)?.to_tensor())
}

/// `a + (b - a) t`, kept inside `[min(a, b), max(a, b)]`.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    (a + (b - a) * t).clamp(a.min(b), a.max(b))
}

/// Source coordinate, lower index, upper index and weight for each output
/// position along one axis (half-pixel centers, edge clamped).
fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Bilinear resize of an `[H, W, C]` tensor with half-pixel centers and no
/// corner alignment.
pub fn resize_bilinear<T: Scalar>(img: &Tensor<T>, height: usize, width: usize) -> Result<Tensor<T>> {
    let [h, w, c] = match *img.shape() {
        [h, w, c] if h > 0 && w > 0 && c > 0 => [h, w, c],
        ref s => return Err(Error::shape("resize_bilinear", format!("expected [H, W, C], got {s:?}"))),
    };
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!("resize target {height}x{width} is empty")));
    }
    let src = img.to_f64_vec();
    let at = |y: usize, x: usize, ch: usize| src[(y * w + x) * c + ch];
    let rows = axis_taps(h, height);
    let cols = axis_taps(w, width);
    let mut out = Vec::with_capacity(height * width * c);
    for &(y0, y1, ty) in &rows {
        for &(x0, x1, tx) in &cols {
            for ch in 0..c {
                let top = lerp(at(y0, x0, ch), at(y0, x1, ch), tx);
                let bottom = lerp(at(y1, x0, ch), at(y1, x1, ch), tx);
                out.push(T::lit(lerp(top, bottom, ty)));
            }
        }
    }
    Tensor::new(vec![height, width, c], out)
}

/// Resize to `height x width`, replicate grayscale to three channels and
/// scale `[0, 255]` to `[0, 1]`.
pub fn preprocess<T: Scalar>(img: &Tensor<T>, height: usize, width: usize) -> Result<Tensor<T>> {
    let resized = resize_bilinear(img, height, width)?;
    let scale = T::lit(255.0);
    let data: Vec<T> = match resized.shape()[2] {
        3 => resized.data().iter().map(|&v| v / scale).collect(),
        1 => resized.data().iter().flat_map(|&v| [v / scale; 3]).collect(),
        c => return Err(Error::shape("preprocess", format!("{c} channels, expected 1 or 3"))),
    };
    Tensor::new(vec![height, width, 3], data)
}
