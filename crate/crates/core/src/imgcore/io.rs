//! Cube container file ("MLEC") plus 16-bit PNG/PGM plane import/export.
//!
//! MLEC layout, all integers little-endian:
//!
//! ```text
//! magic "MLEC" (4 bytes) | version u16 = 1 | width u32 | height u32 |
//! channels u32 | dtype u8 (1 = IEEE-754 binary32 LE) | reserved [0u8; 7] |
//! payload: row-major, plane-major f32 |
//! optional: metadata byte length u32 + UTF-8 JSON
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};
use serde_json::{json, Value};

use crate::error::{MleError, Result};
use crate::imgcore::{Field, IllumTag, SpectralCube};

const MAGIC: &[u8; 4] = b"MLEC";
const VERSION: u16 = 1;
const DTYPE_F32: u8 = 1;

/// Raw plane stack plus JSON metadata; the common denominator of cube and
/// field storage.
pub struct MlecData {
    /// Shape `(planes, height, width)`.
    pub planes: Array3<f64>,
    pub metadata: Value,
}

pub fn write_mlec(path: &Path, data: &MlecData) -> Result<()> {
    let (n, h, w) = data.planes.dim();
    let mut buf: Vec<u8> = Vec::with_capacity(26 + 4 * n * h * w);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.push(DTYPE_F32);
    buf.extend_from_slice(&[0u8; 7]);
    for p in 0..n {
        for r in 0..h {
            for c in 0..w {
                buf.extend_from_slice(&(data.planes[(p, r, c)] as f32).to_le_bytes());
            }
        }
    }
    if !data.metadata.is_null() {
        let meta = serde_json::to_vec(&data.metadata)?;
        buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        buf.extend_from_slice(&meta);
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_mlec(path: &Path) -> Result<MlecData> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 26 || &bytes[0..4] != MAGIC {
        return Err(MleError::Format("not an MLEC file".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(MleError::Format(format!("unsupported MLEC version {version}")));
    }
    let rd_u32 = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let w = rd_u32(6) as usize;
    let h = rd_u32(10) as usize;
    let n = rd_u32(14) as usize;
    let dtype = bytes[18];
    if dtype != DTYPE_F32 {
        return Err(MleError::Format(format!("unsupported dtype code {dtype}")));
    }
    if bytes[19..26].iter().any(|&b| b != 0) {
        return Err(MleError::Format("nonzero reserved bytes".into()));
    }
    let payload = 4 * n * h * w;
    if bytes.len() < 26 + payload {
        return Err(MleError::Format("truncated MLEC payload".into()));
    }
    let mut planes = Array3::zeros((n, h, w));
    let mut off = 26;
    for p in 0..n {
        for r in 0..h {
            for c in 0..w {
                let v = f32::from_le_bytes([
                    bytes[off],
                    bytes[off + 1],
                    bytes[off + 2],
                    bytes[off + 3],
                ]);
                planes[(p, r, c)] = v as f64;
                off += 4;
            }
        }
    }
    let metadata = if bytes.len() > off + 4 {
        let len = rd_u32(off) as usize;
        off += 4;
        if bytes.len() < off + len {
            return Err(MleError::Format("truncated MLEC metadata".into()));
        }
        serde_json::from_slice(&bytes[off..off + len])?
    } else {
        Value::Null
    };
    Ok(MlecData { planes, metadata })
}

fn mask_to_rle(mask: &Array2<bool>) -> Vec<u32> {
    // Alternating run lengths, first run counts leading `true`s (may be 0).
    let mut runs = Vec::new();
    let mut current = true;
    let mut count: u32 = 0;
    for &m in mask.iter() {
        if m == current {
            count += 1;
        } else {
            runs.push(count);
            current = m;
            count = 1;
        }
    }
    runs.push(count);
    runs
}

fn mask_from_rle(runs: &[u32], h: usize, w: usize) -> Result<Array2<bool>> {
    let mut flat = Vec::with_capacity(h * w);
    let mut value = true;
    for &r in runs {
        flat.extend(std::iter::repeat(value).take(r as usize));
        value = !value;
    }
    if flat.len() != h * w {
        return Err(MleError::Format("mask run length does not match dimensions".into()));
    }
    Array2::from_shape_vec((h, w), flat).map_err(|e| MleError::Format(e.to_string()))
}

pub fn write_cube(path: &Path, cube: &SpectralCube) -> Result<()> {
    let metadata = json!({
        "kind": "cube",
        "wavelengths_nm": cube.wavelengths_nm,
        "mask_rle": mask_to_rle(&cube.mask),
    });
    write_mlec(
        path,
        &MlecData {
            planes: cube.planes().clone(),
            metadata,
        },
    )
}

pub fn read_cube(path: &Path) -> Result<SpectralCube> {
    let data = read_mlec(path)?;
    let (n, h, w) = data.planes.dim();
    let wavelengths: Vec<f64> = data
        .metadata
        .get("wavelengths_nm")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .unwrap_or_else(|| (0..n).map(|i| i as f64).collect());
    let mask = match data.metadata.get("mask_rle") {
        Some(v) => {
            let runs: Vec<u32> = serde_json::from_value(v.clone())?;
            mask_from_rle(&runs, h, w)?
        }
        None => Array2::from_elem((h, w), true),
    };
    SpectralCube::new(data.planes, wavelengths, mask)
}

pub fn write_field(path: &Path, field: &Field) -> Result<()> {
    let (h, w, c) = field.data().dim();
    let mut planes = Array3::zeros((c, h, w));
    for ch in 0..c {
        planes
            .index_axis_mut(ndarray::Axis(0), ch)
            .assign(&field.data().index_axis(ndarray::Axis(2), ch));
    }
    let metadata = json!({
        "kind": "field",
        "frame_id": field.frame_id,
        "parity": field.parity,
        "illum": field.illum,
        "mask_rle": mask_to_rle(&field.mask),
    });
    write_mlec(path, &MlecData { planes, metadata })
}

pub fn read_field(path: &Path) -> Result<Field> {
    let data = read_mlec(path)?;
    let (c, h, w) = data.planes.dim();
    let mut pixels = Array3::zeros((h, w, c));
    for ch in 0..c {
        pixels
            .index_axis_mut(ndarray::Axis(2), ch)
            .assign(&data.planes.index_axis(ndarray::Axis(0), ch));
    }
    let illum: IllumTag = data
        .metadata
        .get("illum")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .unwrap_or_default();
    let frame_id = data
        .metadata
        .get("frame_id")
        .and_then(Value::as_u64)
        .unwrap_or(0);
    let mut field = Field::new(pixels, frame_id, illum)?;
    if let Some(v) = data.metadata.get("parity") {
        field.parity = serde_json::from_value(v.clone()).ok().flatten();
    }
    if let Some(v) = data.metadata.get("mask_rle") {
        let runs: Vec<u32> = serde_json::from_value(v.clone())?;
        field.mask = mask_from_rle(&runs, h, w)?;
    }
    Ok(field)
}

/// 16-bit grayscale PNG of one plane; values clamped to [0, 1].
pub fn write_plane_png16(path: &Path, plane: &Array2<f64>) -> Result<()> {
    let (h, w) = plane.dim();
    let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(w as u32, h as u32);
    for ((r, c), v) in plane.indexed_iter() {
        let code = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        img.put_pixel(c as u32, r as u32, image::Luma([code]));
    }
    img.save(path)
        .map_err(|e| MleError::Format(format!("png write: {e}")))
}

pub fn read_plane_png16(path: &Path) -> Result<Array2<f64>> {
    let img = image::open(path)
        .map_err(|e| MleError::Format(format!("png read: {e}")))?
        .into_luma16();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
        img.get_pixel(c as u32, r as u32).0[0] as f64 / 65535.0
    }))
}

/// Binary 16-bit PGM (P5, maxval 65535, big-endian samples per the format).
pub fn write_plane_pgm16(path: &Path, plane: &Array2<f64>) -> Result<()> {
    let (h, w) = plane.dim();
    let mut buf = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for v in plane.iter() {
        let code = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        buf.extend_from_slice(&code.to_be_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_plane_pgm16(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path)?;
    let header_err = || MleError::Format("invalid PGM header".into());
    // Header is ASCII tokens followed by one whitespace byte, then binary
    // payload; parse tokens byte-wise since the payload is not UTF-8.
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> Result<String> {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(header_err());
        }
        String::from_utf8(bytes[start..*pos].to_vec()).map_err(|_| header_err())
    };
    if token(&mut pos)? != "P5" {
        return Err(header_err());
    }
    let w: usize = token(&mut pos)?.parse().map_err(|_| header_err())?;
    let h: usize = token(&mut pos)?.parse().map_err(|_| header_err())?;
    let maxval: usize = token(&mut pos)?.parse().map_err(|_| header_err())?;
    if maxval != 65535 {
        return Err(MleError::Format("PGM maxval must be 65535".into()));
    }
    let header_len = pos + 1;
    if bytes.len() < header_len + 2 * w * h {
        return Err(MleError::Format("truncated PGM payload".into()));
    }
    Ok(Array2::from_shape_fn((h, w), |(r, c)| {
        let o = header_len + 2 * (r * w + c);
        u16::from_be_bytes([bytes[o], bytes[o + 1]]) as f64 / 65535.0
    }))
}

/// 8-bit RGB PNG of an `(h, w, 3)` linear image; values clamped to [0, 1].
pub fn write_rgb_png(path: &Path, rgb: &Array3<f64>) -> Result<()> {
    let (h, w, c) = rgb.dim();
    if c != 3 {
        return Err(MleError::DimensionMismatch(format!(
            "RGB image needs 3 channels, got {c}"
        )));
    }
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                (rgb[(y, x, 0)].clamp(0.0, 1.0) * 255.0).round() as u8,
                (rgb[(y, x, 1)].clamp(0.0, 1.0) * 255.0).round() as u8,
                (rgb[(y, x, 2)].clamp(0.0, 1.0) * 255.0).round() as u8,
            ];
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img.save(path)
        .map_err(|e| MleError::Format(format!("png write: {e}")))
}

/// False-color 8-bit RGB PNG of a scalar map; masked pixels render black.
pub fn write_false_color_png(
    path: &Path,
    plane: &Array2<f64>,
    mask: &Array2<bool>,
    vmin: f64,
    vmax: f64,
) -> Result<()> {
    let (h, w) = plane.dim();
    let mut img = image::RgbImage::new(w as u32, h as u32);
    let span = (vmax - vmin).max(1e-12);
    for ((r, c), v) in plane.indexed_iter() {
        let px = if mask[(r, c)] {
            colormap(((v - vmin) / span).clamp(0.0, 1.0))
        } else {
            [0, 0, 0]
        };
        img.put_pixel(c as u32, r as u32, image::Rgb(px));
    }
    img.save(path)
        .map_err(|e| MleError::Format(format!("png write: {e}")))
}

/// Small blue->cyan->yellow->red map, linear between anchors.
fn colormap(t: f64) -> [u8; 3] {
    const ANCHORS: [[f64; 3]; 5] = [
        [0.05, 0.03, 0.53],
        [0.13, 0.57, 0.55],
        [0.37, 0.79, 0.38],
        [0.95, 0.91, 0.13],
        [0.90, 0.17, 0.08],
    ];
    let s = t * (ANCHORS.len() - 1) as f64;
    let i = (s.floor() as usize).min(ANCHORS.len() - 2);
    let f = s - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        let v = ANCHORS[i][c] + f * (ANCHORS[i + 1][c] - ANCHORS[i][c]);
        out[c] = (v * 255.0).round() as u8;
    }
    out
}
