//! Atomic writers for JSON, CSV and PNG previews.

use std::path::Path;

use dudodp::tomography::io::write_atomic;
use dudodp::tomography::Image;
use dudodp::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Display window of the previews, in HU.
pub const PREVIEW_WINDOW: (f64, f64) = (-175.0, 275.0);

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Data(format!("cannot serialize {}: {e}", path.display())))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
    write_atomic(path, &bytes)
}

/// 8-bit grayscale rendering of `img` clipped to [`PREVIEW_WINDOW`].
pub fn preview_png(img: &Image) -> Vec<u8> {
    let (lo, hi) = PREVIEW_WINDOW;
    let (h, w) = img.shape();
    let pixels: Vec<u8> = img
        .to_hu()
        .iter()
        .map(|&v| ((v.clamp(lo, hi) - lo) / (hi - lo) * 255.0).round() as u8)
        .collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("in-memory png header");
        writer.write_image_data(&pixels).expect("in-memory png data");
    }
    out
}

pub fn write_preview(path: &Path, img: &Image) -> Result<()> {
    write_atomic(path, &preview_png(img))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use dudodp::tomography::MU_WATER;
    use ndarray::Array2;

    #[test]
    fn preview_window_maps_to_full_range() {
        let hu = Array2::from_shape_vec((1, 4), vec![-1000.0, -175.0, 275.0, 3000.0]).unwrap();
        let img = Image::from_hu(&hu, MU_WATER).unwrap();
        let bytes = preview_png(&img);
        let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        reader.next_frame(&mut buf).unwrap();
        assert_eq!(&buf[..4], &[0, 0, 255, 255]);
    }

    #[test]
    fn checksum_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
