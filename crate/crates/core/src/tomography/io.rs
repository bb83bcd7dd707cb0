//! Raw field files: a flat little-endian `f32` array in row-major order, plus a JSON
//! sidecar with the same stem describing shape, kind and units.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Geometry, Image, Sinogram};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Image,
    Sinogram,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    Mu,
    Hu,
    LineIntegral,
    /// Boolean masks stored as {0.0, 1.0}.
    Mask,
    /// Values in the normalized diffusion range.
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub shape: [usize; 2],
    pub kind: FieldKind,
    pub units: Units,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<Geometry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_water: Option<f64>,
}

impl FieldHeader {
    pub fn new(shape: (usize, usize), kind: FieldKind, units: Units) -> Self {
        FieldHeader {
            shape: [shape.0, shape.1],
            kind,
            units,
            geometry: None,
            mu_water: None,
        }
    }

    pub fn with_geometry(mut self, geom: &Geometry) -> Self {
        self.geometry = Some(geom.clone());
        self
    }
}

/// Sidecar path for a data file: the same path with a `.json` extension.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn encode_f32(values: &Array2<f64>) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values.iter() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    bytes
}

pub fn decode_f32(bytes: &[u8], shape: (usize, usize)) -> Result<Array2<f64>> {
    let expected = shape.0 * shape.1 * 4;
    if bytes.len() != expected {
        return Err(Error::Data(format!(
            "float file holds {} bytes, shape {shape:?} needs {expected}",
            bytes.len()
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Array2::from_shape_vec(shape, flat).expect("length checked"))
}

pub fn write_field(path: &Path, values: &Array2<f64>, header: &FieldHeader) -> Result<()> {
    if header.shape != [values.nrows(), values.ncols()] {
        return Err(Error::Contract(format!(
            "header shape {:?} does not match data {:?}",
            header.shape,
            values.dim()
        )));
    }
    let json = serde_json::to_vec_pretty(header).expect("header serializes");
    write_atomic(&sidecar_path(path), &json)?;
    write_atomic(path, &encode_f32(values))
}

pub fn read_header(path: &Path) -> Result<FieldHeader> {
    let side = sidecar_path(path);
    let text = fs::read(&side).map_err(|e| Error::io(&side, e))?;
    serde_json::from_slice(&text)
        .map_err(|e| Error::Data(format!("bad sidecar {}: {e}", side.display())))
}

pub fn read_field(path: &Path) -> Result<(Array2<f64>, FieldHeader)> {
    let header = read_header(path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let values = decode_f32(&bytes, (header.shape[0], header.shape[1]))?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!("{} contains non-finite values", path.display())));
    }
    Ok((values, header))
}

pub fn write_image(path: &Path, img: &Image, geom: Option<&Geometry>) -> Result<()> {
    let mut header = FieldHeader::new(img.shape(), FieldKind::Image, Units::Mu);
    header.geometry = geom.cloned();
    header.mu_water = Some(img.mu_water());
    write_field(path, img.values(), &header)
}

pub fn read_image(path: &Path) -> Result<Image> {
    let (values, header) = read_field(path)?;
    if header.kind != FieldKind::Image || header.units != Units::Mu {
        return Err(Error::Data(format!("{} is not an attenuation image", path.display())));
    }
    let mu_water = header
        .mu_water
        .ok_or_else(|| Error::Data(format!("{} lacks mu_water", path.display())))?;
    Image::new(values, mu_water).map_err(|e| Error::Data(e.to_string()))
}

pub fn write_sinogram(path: &Path, sino: &Sinogram, geom: &Geometry) -> Result<()> {
    let header = FieldHeader::new(sino.shape(), FieldKind::Sinogram, Units::LineIntegral).with_geometry(geom);
    write_field(path, sino.values(), &header)
}

pub fn read_sinogram(path: &Path) -> Result<(Sinogram, Option<Geometry>)> {
    let (values, header) = read_field(path)?;
    if header.kind != FieldKind::Sinogram {
        return Err(Error::Data(format!("{} is not a sinogram", path.display())));
    }
    Ok((Sinogram::new(values)?, header.geometry))
}

pub fn write_mask(path: &Path, mask: &Array2<bool>, kind: FieldKind, geom: Option<&Geometry>) -> Result<()> {
    let mut header = FieldHeader::new(mask.dim(), kind, Units::Mask);
    header.geometry = geom.cloned();
    write_field(path, &mask.mapv(|b| if b { 1.0 } else { 0.0 }), &header)
}

pub fn read_mask(path: &Path) -> Result<(Array2<bool>, FieldHeader)> {
    let (values, header) = read_field(path)?;
    if header.units != Units::Mask {
        return Err(Error::Data(format!("{} is not a mask", path.display())));
    }
    if values.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Data(format!("{} has values outside {{0, 1}}", path.display())));
    }
    Ok((values.mapv(|v| v == 1.0), header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tomography::MU_WATER;

    #[test]
    fn file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.f32");
        let q = dir.path().join("img2.f32");
        let values = Array2::from_shape_fn((5, 7), |(r, c)| (r as f64 * 0.31 - c as f64 * 1.7).sin() * 1e-2);
        let img = Image::new(values, MU_WATER).unwrap();
        let geom = Geometry::parallel(5, 3, 5);
        write_image(&p, &img, Some(&geom)).unwrap();
        let back = read_image(&p).unwrap();
        write_image(&q, &back, Some(&geom)).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&q).unwrap());
        assert_eq!(fs::read(sidecar_path(&p)).unwrap(), fs::read(sidecar_path(&q)).unwrap());
        let header = read_header(&p).unwrap();
        assert_eq!(header.shape, [5, 7]);
        assert_eq!(header.geometry, Some(geom));
        // Values survive up to f32 rounding.
        for (a, b) in img.values().iter().zip(back.values()) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn sidecar_layout_and_byte_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.f32");
        let values = Array2::from_shape_vec((1, 2), vec![1.0, -2.0]).unwrap();
        let header = FieldHeader::new((1, 2), FieldKind::Sinogram, Units::LineIntegral);
        write_field(&p, &values, &header).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[4..], &(-2.0f32).to_le_bytes());
        let json: serde_json::Value = serde_json::from_slice(&fs::read(sidecar_path(&p)).unwrap()).unwrap();
        assert_eq!(json["shape"], serde_json::json!([1, 2]));
        assert_eq!(json["kind"], "sinogram");
        assert_eq!(json["units"], "line_integral");
    }

    #[test]
    fn truncated_file_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.f32");
        let mask = Array2::from_shape_fn((3, 3), |(r, c)| r == c);
        write_mask(&p, &mask, FieldKind::Image, None).unwrap();
        let (back, _) = read_mask(&p).unwrap();
        assert_eq!(back, mask);
        fs::write(&p, [0u8; 7]).unwrap();
        assert!(matches!(read_mask(&p), Err(Error::Data(_))));
    }
}
