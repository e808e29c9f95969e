use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, GrayImage, ImageEncoder, Luma, Rgb, RgbImage};
use ndarray::ArrayView2;

use crate::error::{Error, Result};

const BLUE: [f64; 3] = [33.0, 102.0, 172.0];
const MID: [f64; 3] = [247.0, 247.0, 247.0];
const RED: [f64; 3] = [178.0, 24.0, 43.0];
pub const BACKGROUND: [u8; 3] = [255, 255, 255];

/// Blue–white–red color for `v` on the symmetric range `[-vmax, vmax]`.
pub fn diverging_color(v: f64, vmax: f64) -> [u8; 3] {
    let t = if vmax > 0.0 && v.is_finite() { (v / vmax).clamp(-1.0, 1.0) } else { 0.0 };
    let (end, a) = if t < 0.0 { (BLUE, -t) } else { (RED, t) };
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (MID[c] + a * (end[c] - MID[c])).round() as u8;
    }
    out
}

fn image_err(e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::Format(other.to_string()),
    }
}

fn write_pnm(path: &Path, subtype: PnmSubtype, buf: &[u8], w: u32, h: u32, color: ExtendedColorType) -> Result<()> {
    let enc = PnmEncoder::new(BufWriter::new(File::create(path)?)).with_subtype(subtype);
    enc.write_image(buf, w, h, color).map_err(image_err)
}

/// Scalp map with a color scale symmetric about zero; pixels outside `mask` are white.
pub fn topomap_rgb(map: ArrayView2<f64>, mask: ArrayView2<bool>) -> Result<RgbImage> {
    if map.dim() != mask.dim() {
        return Err(Error::shape(format!("map {:?} and mask {:?} differ", map.dim(), mask.dim())));
    }
    let vmax = map.iter().zip(mask.iter()).filter(|(_, &m)| m).map(|(v, _)| v.abs()).fold(0.0, f64::max);
    let (h, w) = map.dim();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (r, c) = (y as usize, x as usize);
        Rgb(if mask[[r, c]] { diverging_color(map[[r, c]], vmax) } else { BACKGROUND })
    }))
}

/// Writes [`topomap_rgb`] as a binary PPM (P6).
pub fn render_topomap_image(map: ArrayView2<f64>, mask: ArrayView2<bool>, path: &Path) -> Result<()> {
    let img = topomap_rgb(map, mask)?;
    let subtype = PnmSubtype::Pixmap(SampleEncoding::Binary);
    write_pnm(path, subtype, img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)
}

/// Grayscale heatmap linearly scaled from `[lo, hi]` to `[0, 255]`; non-finite cells are black.
pub fn heatmap_gray(values: ArrayView2<f64>, lo: f64, hi: f64) -> Result<GrayImage> {
    if !(hi > lo) {
        return Err(Error::invalid(format!("heatmap range [{lo}, {hi}] is empty")));
    }
    let (h, w) = values.dim();
    Ok(GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let v = values[[y as usize, x as usize]];
        Luma([if v.is_finite() { (255.0 * ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).round() as u8 } else { 0 }])
    }))
}

/// Writes [`heatmap_gray`] as a binary PGM (P5).
pub fn write_heatmap_pgm(values: ArrayView2<f64>, lo: f64, hi: f64, path: &Path) -> Result<()> {
    let img = heatmap_gray(values, lo, hi)?;
    let subtype = PnmSubtype::Graymap(SampleEncoding::Binary);
    write_pnm(path, subtype, img.as_raw(), img.width(), img.height(), ExtendedColorType::L8)
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(image_err)?.to_rgb8())
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    Ok(image::open(path).map_err(image_err)?.to_luma8())
}
