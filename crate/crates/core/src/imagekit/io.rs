//! PNG (8-bit RGB) and PFM (32-bit float RGB) reading and writing.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use image::{ColorType, ImageReader, RgbImage};

use super::image::{Image, CHANNELS};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Png,
    Pfm,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("png") => Ok(Format::Png),
            Some("pfm") => Ok(Format::Pfm),
            _ => Err(Error::UnsupportedFormat(path.display().to_string())),
        }
    }
}

pub fn read_image<T: Real>(path: impl AsRef<Path>) -> Result<Image<T>> {
    let path = path.as_ref();
    match Format::from_path(path)? {
        Format::Png => read_png(path),
        Format::Pfm => read_pfm(path),
    }
}

pub fn write_image<T: Real>(path: impl AsRef<Path>, img: &Image<T>) -> Result<()> {
    let path = path.as_ref();
    match Format::from_path(path)? {
        Format::Png => write_png(path, img),
        Format::Pfm => write_pfm(path, img),
    }
}

/// Nearest 8-bit level of a normalized sample.
#[inline]
pub fn quantize_u8<T: Real>(v: T) -> u8 {
    let v = v.to_f64_lossy();
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round() as u8
}

/// Snaps every sample to the 256-level grid, as a PNG round trip would.
pub fn quantize<T: Real>(img: &Image<T>) -> Image<T> {
    img.map(|v| T::lit(quantize_u8(v) as f64 / 255.0))
}

fn read_png<T: Real>(path: &Path) -> Result<Image<T>> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader
        .decode()
        .map_err(|e| Error::corrupt(path, e.to_string()))?;
    if decoded.color() != ColorType::Rgb8 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: expected 8-bit RGB, found {:?}",
            path.display(),
            decoded.color()
        )));
    }
    let rgb = decoded.into_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data = rgb
        .into_raw()
        .into_iter()
        .map(|b| T::lit(b as f64 / 255.0))
        .collect();
    Image::from_vec(w, h, data)
}

fn write_png<T: Real>(path: &Path, img: &Image<T>) -> Result<()> {
    let raw: Vec<u8> = img.data().iter().map(|&v| quantize_u8(v)).collect();
    let buf = RgbImage::from_raw(img.width() as u32, img.height() as u32, raw)
        .expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

fn write_pfm<T: Real>(path: &Path, img: &Image<T>) -> Result<()> {
    let (w, h) = img.dims();
    let mut bytes = Vec::with_capacity(32 + w * h * CHANNELS * 4);
    write!(bytes, "PF\n{w} {h}\n-1.0\n").expect("write to vec");
    // PFM stores scanlines bottom to top.
    for y in (0..h).rev() {
        let row = &img.data()[y * w * CHANNELS..(y + 1) * w * CHANNELS];
        for &v in row {
            bytes.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_pfm<T: Real>(path: &Path) -> Result<Image<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut header = Vec::new();
    for _ in 0..3 {
        let mut line = String::new();
        reader
            .read_line(&mut line)
            .map_err(|e| Error::io(path, e))?;
        header.push(line.trim().to_string());
    }
    match header[0].as_str() {
        "PF" => {}
        "Pf" => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: single-channel PFM",
                path.display()
            )))
        }
        other => return Err(Error::corrupt(path, format!("bad PFM magic {other:?}"))),
    }
    let dims: Vec<usize> = header[1]
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::corrupt(path, "bad PFM dimensions"))?;
    if dims.len() != 2 || dims[0] == 0 || dims[1] == 0 {
        return Err(Error::corrupt(path, "bad PFM dimensions"));
    }
    let scale: f64 = header[2]
        .parse()
        .map_err(|_| Error::corrupt(path, "bad PFM scale"))?;
    let little = scale < 0.0;
    let (w, h) = (dims[0], dims[1]);
    let mut raw = Vec::new();
    reader
        .read_to_end(&mut raw)
        .map_err(|e| Error::io(path, e))?;
    let n = w * h * CHANNELS;
    if raw.len() != n * 4 {
        return Err(Error::corrupt(
            path,
            format!("expected {} payload bytes, found {}", n * 4, raw.len()),
        ));
    }
    let mut data = vec![T::zero(); n];
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let row = i / (w * CHANNELS);
        let col = i % (w * CHANNELS);
        data[(h - 1 - row) * w * CHANNELS + col] = T::lit(v as f64);
    }
    Image::from_vec(w, h, data)
}
