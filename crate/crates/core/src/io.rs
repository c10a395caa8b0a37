//! PNG and JSON encodings of scans, masks and traces.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::BoundaryTrace;

pub fn decode_gray_png(bytes: &[u8]) -> Result<Array2<u8>> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    let gray = match img {
        DynamicImage::ImageLuma8(g) => g,
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
            img.to_luma8()
        }
        _ => return Err(Error::invalid("colour images are not supported")),
    };
    let (w, h) = gray.dimensions();
    Array2::from_shape_vec((h as usize, w as usize), gray.into_raw())
        .map_err(|e| Error::invalid(e.to_string()))
}

pub fn read_gray_png(path: impl AsRef<Path>) -> Result<Array2<u8>> {
    decode_gray_png(&std::fs::read(path)?)
}

pub fn encode_gray_png(pixels: &Array2<u8>) -> Result<Vec<u8>> {
    let (h, w) = pixels.dim();
    let raw: Vec<u8> = pixels.iter().copied().collect();
    let img = GrayImage::from_raw(w as u32, h as u32, raw)
        .ok_or_else(|| Error::invalid("pixel buffer size mismatch"))?;
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Masks are stored as 8-bit images with values {0, 255}.
pub fn encode_mask_png(mask: &Array2<bool>) -> Result<Vec<u8>> {
    encode_gray_png(&mask.mapv(|v| if v { 255 } else { 0 }))
}

/// Any nonzero pixel counts as set.
pub fn decode_mask_png(bytes: &[u8]) -> Result<Array2<bool>> {
    Ok(decode_gray_png(bytes)?.mapv(|v| v != 0))
}

pub fn read_mask_png(path: impl AsRef<Path>) -> Result<Array2<bool>> {
    decode_mask_png(&std::fs::read(path)?)
}

/// Scales a [0,1] map to 8 bits for display.
pub fn encode_unit_map_png(values: &Array2<f64>) -> Result<Vec<u8>> {
    encode_gray_png(&values.mapv(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
}

/// Canonical JSON bytes (pretty, trailing newline) shared by every writer so that
/// files and HTTP bodies compare byte for byte.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TraceFile {
    Bare(BoundaryTrace),
    Result { trace: BoundaryTrace },
}

/// Reads either a bare trace or a full tracing result.
pub fn trace_from_json(bytes: &[u8]) -> Result<BoundaryTrace> {
    let trace = match serde_json::from_slice::<TraceFile>(bytes)? {
        TraceFile::Bare(t) | TraceFile::Result { trace: t } => t,
    };
    trace.validate(None)?;
    Ok(trace)
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<BoundaryTrace> {
    trace_from_json(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::BoundaryKind;

    #[test]
    fn png_round_trip() {
        let img = Array2::from_shape_fn((7, 5), |(r, c)| (r * 30 + c) as u8);
        let bytes = encode_gray_png(&img).unwrap();
        assert_eq!(decode_gray_png(&bytes).unwrap(), img);
    }

    #[test]
    fn mask_png_uses_0_and_255() {
        let mask = Array2::from_shape_fn((3, 3), |(r, c)| r == c);
        let bytes = encode_mask_png(&mask).unwrap();
        let gray = decode_gray_png(&bytes).unwrap();
        assert!(gray.iter().all(|&v| v == 0 || v == 255));
        assert_eq!(decode_mask_png(&bytes).unwrap(), mask);
    }

    #[test]
    fn trace_json_round_trip_is_exact() {
        let rows = vec![100.123456789012_f64, 0.1 + 0.2, 1.0 / 3.0];
        let t = BoundaryTrace::exact(BoundaryKind::RpeChoroid, 4, rows);
        let bytes = to_json_bytes(&t).unwrap();
        assert_eq!(trace_from_json(&bytes).unwrap(), t);
    }

    #[test]
    fn trace_reads_from_result_wrapper() {
        let t = BoundaryTrace::exact(BoundaryKind::RpeChoroid, 3, vec![10.0, 10.5]);
        let wrapped = serde_json::json!({ "trace": t, "iterations": 4 });
        assert_eq!(trace_from_json(&serde_json::to_vec(&wrapped).unwrap()).unwrap(), t);
    }
}
