//! 8-bit RGB images: PNG and binary PPM files, tensor conversion.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<RgbImage> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!("{}x{} RGB image needs {} bytes, got {}", width, height, width * height * 3, data.len())));
        }
        Ok(RgbImage { width, height, data })
    }

    /// `3×H×W` tensor with values in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor3 {
        Tensor3::from_fn(3, self.height, self.width, |c, y, x| self.data[(y * self.width + x) * 3 + c] as f64 / 255.0)
    }

    /// Clamp to `[0, 1]`, scale and round; crops to `width × height` from the
    /// top-left corner.
    pub fn from_tensor(t: &Tensor3, width: usize, height: usize) -> Result<RgbImage> {
        if t.channels() != 3 || t.height() < height || t.width() < width {
            return Err(Error::Shape(format!("cannot take a {}x{} RGB image from {:?}", width, height, t.shape())));
        }
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push((t.at(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        RgbImage::new(width, height, data)
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

pub fn read_image(path: &Path) -> Result<RgbImage> {
    let mut f = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let mut magic = [0u8; 8];
    let n = f.read(&mut magic).map_err(|e| io_err(path, e))?;
    drop(f);
    if n >= 8 && magic == *b"\x89PNG\r\n\x1a\n" {
        read_png(path)
    } else if n >= 2 && &magic[..2] == b"P6" {
        read_ppm(path)
    } else {
        Err(io_err(path, "unsupported image format (PNG or binary PPM expected)"))
    }
}

pub fn write_image(path: &Path, img: &RgbImage) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("ppm") => write_ppm(path, img),
        Some("png") => write_png(path, img),
        _ => Err(io_err(path, "output must end in .png or .ppm")),
    }
}

fn read_png(path: &Path) -> Result<RgbImage> {
    let decoder = png::Decoder::new(BufReader::new(File::open(path).map_err(|e| io_err(path, e))?));
    let mut reader = decoder.read_info().map_err(|e| io_err(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| io_err(path, "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| io_err(path, e))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(io_err(path, format!("{:?}-bit PNG is not supported", info.bit_depth)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let px = &buf[..info.buffer_size()];
    let stride = info.line_size;
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        let row = &px[y * stride..];
        for x in 0..w {
            match info.color_type {
                png::ColorType::Rgb => data.extend_from_slice(&row[x * 3..x * 3 + 3]),
                png::ColorType::Rgba => data.extend_from_slice(&row[x * 4..x * 4 + 3]),
                png::ColorType::Grayscale => data.extend_from_slice(&[row[x]; 3]),
                png::ColorType::GrayscaleAlpha => data.extend_from_slice(&[row[x * 2]; 3]),
                png::ColorType::Indexed => return Err(io_err(path, "indexed PNG is not supported")),
            }
        }
    }
    RgbImage::new(w, h, data)
}

fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    let f = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    let mut enc = png::Encoder::new(f, img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| io_err(path, e))?;
    w.write_image_data(&img.data).map_err(|e| io_err(path, e))?;
    w.finish().map_err(|e| io_err(path, e))?;
    Ok(())
}

fn read_ppm(path: &Path) -> Result<RgbImage> {
    let mut bytes = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| io_err(path, e))?;
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| io_err(path, "malformed PPM header"))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(io_err(path, format!("PPM maxval {maxval} is not supported")));
    }
    pos += 1;
    let need = w * h * 3;
    let data = bytes.get(pos..pos + need).ok_or_else(|| io_err(path, "PPM pixel data is truncated"))?;
    RgbImage::new(w, h, data.to_vec())
}

fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    write!(f, "P6\n{} {}\n255\n", img.width, img.height)?;
    f.write_all(&img.data)?;
    f.flush()?;
    Ok(())
}
