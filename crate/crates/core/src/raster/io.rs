//! PNG (and PGM fallback) reading and writing. Quantization to 8 bits
//! happens only here.

use std::path::Path;

use image::{ImageFormat, Luma, Rgb, RgbImage};

use super::{to_grayscale, GrayImage, Mask};
use crate::error::{Error, Result};

pub fn read_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    Ok(image::open(path.as_ref())?.to_rgb8())
}

pub fn decode_rgb(bytes: &[u8]) -> Result<RgbImage> {
    Ok(image::load_from_memory(bytes)?.to_rgb8())
}

/// Read a PNG or PGM as a grayscale image. Colour inputs are converted with
/// luma weights.
pub fn read_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let dynamic = image::open(path.as_ref())?;
    match dynamic {
        image::DynamicImage::ImageLuma8(g) => {
            GrayImage::from_u8(g.width() as usize, g.height() as usize, g.as_raw())
        }
        other => to_grayscale(&other.to_rgb8()),
    }
}

pub fn gray_to_image(img: &GrayImage) -> image::GrayImage {
    image::GrayImage::from_raw(img.width() as u32, img.height() as u32, img.to_u8())
        .expect("buffer length matches dimensions")
}

pub fn write_gray(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    gray_to_image(img).save_with_format(path.as_ref(), ImageFormat::Png)?;
    Ok(())
}

pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let buf = image::GrayImage::from_raw(mask.width() as u32, mask.height() as u32, mask.data().to_vec())
        .expect("buffer length matches dimensions");
    buf.save_with_format(path.as_ref(), ImageFormat::Png)?;
    Ok(())
}

/// Read a mask; any nonzero pixel counts as foreground.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let g = image::open(path.as_ref())?.to_luma8();
    let bits: Vec<bool> = g.pixels().map(|p: &Luma<u8>| p[0] != 0).collect();
    Mask::from_bools(g.width() as usize, g.height() as usize, &bits)
}

pub fn write_rgb(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    img.save_with_format(path.as_ref(), ImageFormat::Png)?;
    Ok(())
}

pub fn encode_png_rgb(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Replicate a gray image into three channels.
pub fn gray_to_rgb(img: &GrayImage) -> RgbImage {
    let bytes = img.to_u8();
    RgbImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let v = bytes[y as usize * img.width() + x as usize];
        Rgb([v, v, v])
    })
}

/// Write a label raster as an indexed-colour PNG. Label 0 is black, label 1
/// dark gray, higher labels cycle through a fixed palette.
pub fn write_indexed_labels(path: impl AsRef<Path>, width: usize, height: usize, labels: &[u32]) -> Result<()> {
    if labels.len() != width * height {
        return Err(Error::dims("label buffer does not match dimensions"));
    }
    let mut palette = vec![0u8, 0, 0, 64, 64, 64];
    for i in 2..256u32 {
        // golden-ratio hue walk gives well separated colours
        let h = (i as f64 * 0.618_033_988_75).fract();
        let (r, g, b) = hsv_to_rgb(h, 0.75, 0.95);
        palette.extend_from_slice(&[r, g, b]);
    }
    let indices: Vec<u8> = labels.iter().map(|&l| if l > 255 { 2 + ((l - 2) % 254) as u8 } else { l as u8 }).collect();
    let file = std::fs::File::create(path.as_ref())?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette(palette);
    let mut writer = enc.write_header().map_err(|e| Error::Io(std::io::Error::other(e)))?;
    writer.write_image_data(&indices).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(())
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (u8, u8, u8) {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    let (r, g, b) = match i as i32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    ((r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8)
}
