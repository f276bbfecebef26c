//! Lossless PNG IO for RGB tiles and 8-bit class masks.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::MaskTile;
use crate::error::{Error, Result};

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height * 3] }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

fn encoder(path: &Path, w: usize, h: usize, color: png::ColorType) -> Result<png::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    enc.write_header().map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let mut w = encoder(path, img.width, img.height, png::ColorType::Rgb)?;
    w.write_image_data(&img.data).map_err(|e| Error::format(path, e.to_string()))?;
    w.finish().map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_mask(path: &Path, mask: &MaskTile) -> Result<()> {
    let mut w = encoder(path, mask.width(), mask.height(), png::ColorType::Grayscale)?;
    w.write_image_data(mask.pixels()).map_err(|e| Error::format(path, e.to_string()))?;
    w.finish().map_err(|e| Error::format(path, e.to_string()))
}

fn decode(path: &Path) -> Result<(usize, usize, png::ColorType, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| Error::format(path, e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e.to_string()))?;
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, info.color_type, buf))
}

/// Reads any 8/16-bit PNG as RGB; alpha is dropped and gray is replicated.
pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let (width, height, color, buf) = decode(path)?;
    let data = match color {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        png::ColorType::Indexed => return Err(Error::format(path, "unexpanded palette image")),
    };
    Ok(RgbImage { width, height, data })
}

/// Reads a single-channel mask; values outside 0..=5 are rejected.
pub fn read_mask(path: &Path) -> Result<MaskTile> {
    let (width, height, color, buf) = decode(path)?;
    if color != png::ColorType::Grayscale {
        return Err(Error::format(path, format!("mask must be 8-bit grayscale, found {color:?}")));
    }
    MaskTile::new(width, height, buf).map_err(|e| Error::format(path, e.to_string()))
}
