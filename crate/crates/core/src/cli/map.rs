//! Classification maps as indexed PNG images.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::data::LabelRaster;
use crate::error::{Error, Result};

const BASE: [[u8; 3]; 16] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
];

/// 256 RGB entries: black for unlabeled, a fixed list for the first
/// sixteen classes, then hues spaced by the golden angle.
pub fn palette() -> Vec<u8> {
    let mut out = vec![0u8; 3];
    out.extend(BASE.iter().flatten());
    for i in BASE.len() + 1..256 {
        let h = (i as f64 * 137.507_764) % 360.0;
        out.extend(hsv(h, 0.75, 0.9));
    }
    out
}

fn hsv(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|u| ((u + m) * 255.0).round() as u8)
}

pub fn write_png(map: &LabelRaster, path: &Path) -> Result<()> {
    if map.max_label() > 255 {
        return Err(Error::format(path, format!("label {} does not fit an 8-bit palette", map.max_label())));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), map.cols() as u32, map.rows() as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette(palette());
    let pixels: Vec<u8> = map.labels().iter().map(|&l| l as u8).collect();
    enc.write_header()
        .and_then(|mut w| w.write_image_data(&pixels))
        .map_err(|e| Error::format(path, e.to_string()))
}
