//! File formats: 8/16-bit PNG and baseline JPEG for images, PFM and 16-bit
//! PNG for depth maps.
//!
//! PFM follows the usual convention: `Pf` header, `width height`, a negative
//! scale for little-endian data, raw f32 scanlines stored bottom-up. Invalid
//! depth pixels are written as -1.0. The 16-bit PNG encoding maps
//! `[d_min, d_max]` linearly to `[0, 65535]` with invalid pixels at 0.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::sphere::{EquirectImage, SphereError};
use crate::sweep::DepthMap;

#[derive(Debug, Error)]
pub enum ImgIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image decode error on {path}: {source}")]
    Decode {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("unsupported pixel format in {0}")]
    UnsupportedFormat(String),
    #[error("invalid image: {0}")]
    Sphere(#[from] SphereError),
    #[error("malformed PFM {path}: {reason}")]
    MalformedPfm { path: String, reason: String },
}

fn io_err(path: &Path, source: std::io::Error) -> ImgIoError {
    ImgIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Loads an 8- or 16-bit PNG or baseline JPEG into `[0, 1]` channels.
///
/// The canonical 2:1 aspect is not enforced here so cropped captures load;
/// construction still validates dimensions and channel ranges.
pub fn load_image(path: &Path) -> Result<EquirectImage, ImgIoError> {
    let dynimg = image::open(path).map_err(|source| ImgIoError::Decode {
        path: path.display().to_string(),
        source,
    })?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let mut data = Vec::with_capacity(w * h * 3);
    match dynimg {
        image::DynamicImage::ImageRgb16(img) => {
            for px in img.pixels() {
                for c in 0..3 {
                    data.push(px.0[c] as f64 / 65535.0);
                }
            }
        }
        image::DynamicImage::ImageLuma16(img) => {
            for px in img.pixels() {
                let v = px.0[0] as f64 / 65535.0;
                data.extend_from_slice(&[v, v, v]);
            }
        }
        other => {
            let rgb = other.to_rgb8();
            for px in rgb.pixels() {
                for c in 0..3 {
                    data.push(px.0[c] as f64 / 255.0);
                }
            }
        }
    }
    Ok(EquirectImage::from_data_any_aspect(w, h, data)?)
}

/// Writes an image as 8-bit RGB PNG.
pub fn save_png8(img: &EquirectImage, path: &Path) -> Result<(), ImgIoError> {
    let (w, h) = img.dims();
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for v in 0..h {
        for u in 0..w {
            let rgb = img.rgb(u, v);
            let px = [
                (rgb[0] * 255.0).round() as u8,
                (rgb[1] * 255.0).round() as u8,
                (rgb[2] * 255.0).round() as u8,
            ];
            buf.put_pixel(u as u32, v as u32, image::Rgb(px));
        }
    }
    buf.save(path).map_err(|source| ImgIoError::Decode {
        path: path.display().to_string(),
        source,
    })
}

/// Writes a depth map as grayscale PFM in meters; invalid pixels become -1.
pub fn write_pfm(depth: &DepthMap, path: &Path) -> Result<(), ImgIoError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let (w, h) = (depth.width(), depth.height());
    write!(out, "Pf\n{} {}\n-1.0\n", w, h).map_err(|e| io_err(path, e))?;
    // PFM scanlines run bottom-to-top.
    for v in (0..h).rev() {
        for u in 0..w {
            let value = match depth.get(u, v) {
                Some(d) => d as f32,
                None => -1.0f32,
            };
            out.write_all(&value.to_le_bytes())
                .map_err(|e| io_err(path, e))?;
        }
    }
    out.flush().map_err(|e| io_err(path, e))
}

/// Reads a grayscale little-endian PFM written by [`write_pfm`]; values that
/// are non-finite or ≤ 0 load as invalid pixels.
pub fn read_pfm(path: &Path) -> Result<DepthMap, ImgIoError> {
    let malformed = |reason: &str| ImgIoError::MalformedPfm {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = BufReader::new(file);
    let mut raw = Vec::new();
    reader.read_to_end(&mut raw).map_err(|e| io_err(path, e))?;

    // Header: four whitespace-separated tokens (type, width, height, scale),
    // then a single whitespace byte, then raw f32 data.
    let mut pos = 0usize;
    let mut tokens: Vec<String> = Vec::new();
    while tokens.len() < 4 {
        while pos < raw.len() && raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < raw.len() && !raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&raw[start..pos]).into_owned());
    }
    if pos >= raw.len() {
        return Err(malformed("missing data"));
    }
    pos += 1; // single whitespace after the scale token
    if tokens[0] != "Pf" {
        return Err(malformed("expected grayscale 'Pf' header"));
    }
    let w: usize = tokens[1].parse().map_err(|_| malformed("bad width"))?;
    let h: usize = tokens[2].parse().map_err(|_| malformed("bad height"))?;
    if w == 0 || h == 0 {
        return Err(malformed("zero dimension"));
    }
    let scale: f64 = tokens[3].parse().map_err(|_| malformed("bad scale"))?;
    if scale >= 0.0 {
        return Err(malformed("big-endian PFM not supported"));
    }
    let pos2 = pos;
    let need = w * h * 4;
    if raw.len() < pos2 + need {
        return Err(malformed("data shorter than width*height floats"));
    }
    let mut depths = vec![f64::NAN; w * h];
    for v_file in 0..h {
        let v = h - 1 - v_file;
        for u in 0..w {
            let o = pos2 + (v_file * w + u) * 4;
            let bits = [raw[o], raw[o + 1], raw[o + 2], raw[o + 3]];
            depths[v * w + u] = f32::from_le_bytes(bits) as f64;
        }
    }
    let mut dmin = f64::INFINITY;
    let mut dmax = 0.0f64;
    for &d in &depths {
        if d.is_finite() && d > 0.0 {
            dmin = dmin.min(d);
            dmax = dmax.max(d);
        }
    }
    if !dmin.is_finite() {
        // All pixels invalid; keep a harmless nominal range.
        dmin = 0.0;
        dmax = 1.0;
    }
    let mut map = DepthMap::new_invalid(w, h, dmin, dmax);
    for v in 0..h {
        for u in 0..w {
            let d = depths[v * w + u];
            if d.is_finite() && d > 0.0 {
                map.set(u, v, d, f64::NAN);
            }
        }
    }
    Ok(map)
}

/// Writes a depth map as 16-bit grayscale PNG, mapping `[d_min, d_max]`
/// linearly onto `[0, 65535]`; invalid pixels encode as 0.
pub fn write_depth_png16(depth: &DepthMap, path: &Path) -> Result<(), ImgIoError> {
    let (w, h) = (depth.width(), depth.height());
    let (d_min, d_max) = depth.range();
    let span = (d_max - d_min).max(1e-12);
    let mut buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(w as u32, h as u32);
    for v in 0..h {
        for u in 0..w {
            let code = match depth.get(u, v) {
                Some(d) => (((d - d_min) / span) * 65535.0).round().clamp(0.0, 65535.0) as u16,
                None => 0,
            };
            buf.put_pixel(u as u32, v as u32, image::Luma([code]));
        }
    }
    buf.save(path).map_err(|source| ImgIoError::Decode {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("depth.pfm");
        let mut map = DepthMap::new_invalid(6, 3, 0.05, 10.0);
        map.set(0, 0, 0.5, 1.0);
        map.set(5, 2, 9.25, 2.0);
        map.set(3, 1, 2.125, 0.0);
        write_pfm(&map, &path).unwrap();
        let back = read_pfm(&path).unwrap();
        assert_eq!(back.dims(), (6, 3));
        assert_eq!(back.get(0, 0), Some(0.5));
        assert_eq!(back.get(5, 2), Some(9.25));
        assert_eq!(back.get(3, 1), Some(2.125));
        assert_eq!(back.get(1, 1), None);
        assert_eq!(back.valid_count(), 3);
    }

    #[test]
    fn png_roundtrip_8bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut img = EquirectImage::new(8, 4).unwrap();
        img.set(3, 2, [1.0, 0.0, 0.5019607843137255]);
        save_png8(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.dims(), (8, 4));
        assert!((back.get(3, 2, 0) - 1.0).abs() < 1e-9);
        assert!((back.get(3, 2, 2) - 0.5019607843137255).abs() < 1e-9);
    }

    #[test]
    fn missing_file_errors() {
        assert!(load_image(Path::new("/nonexistent/x.png")).is_err());
        assert!(read_pfm(Path::new("/nonexistent/x.pfm")).is_err());
    }

    #[test]
    fn depth_png16_linear_code_with_invalid_at_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("depth16.png");
        let mut map = DepthMap::new_invalid(4, 2, 1.0, 3.0);
        map.set(0, 0, 1.0, 0.0); // d_min -> 0
        map.set(1, 0, 2.0, 0.0); // midpoint -> 32768
        map.set(2, 0, 3.0, 0.0); // d_max -> 65535
        write_depth_png16(&map, &path).unwrap();
        let img = image::open(&path).unwrap().into_luma16();
        assert_eq!(img.get_pixel(0, 0).0[0], 0);
        assert_eq!(img.get_pixel(1, 0).0[0], 32768);
        assert_eq!(img.get_pixel(2, 0).0[0], 65535);
        // Invalid pixels encode as 0.
        assert_eq!(img.get_pixel(3, 0).0[0], 0);
        assert_eq!(img.get_pixel(0, 1).0[0], 0);
    }

    #[test]
    fn jpeg_loads_into_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.jpg");
        let mut img = EquirectImage::new(16, 8).unwrap();
        for v in 0..8 {
            for u in 0..16 {
                img.set(u, v, [u as f64 / 15.0, 0.5, v as f64 / 7.0]);
            }
        }
        save_png8(&img, &dir.path().join("tmp.png")).unwrap();
        // Re-encode as baseline JPEG via the image crate.
        let dynimg = image::open(dir.path().join("tmp.png")).unwrap();
        dynimg.save(&path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.dims(), (16, 8));
        // Lossy codec: just require closeness and valid range.
        assert!((back.get(15, 0, 0) - 1.0).abs() < 0.1);
        assert!((back.get(0, 7, 2) - 1.0).abs() < 0.1);
    }
}
