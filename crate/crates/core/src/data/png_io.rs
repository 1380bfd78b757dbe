//! Lossless 8- and 16-bit RGB PNG reading and writing.
//!
//! Pixel data crosses this boundary in **planar** channel-major order
//! (`[3, H, W]`, matching tensor layout); the interleaving PNG requires
//! is handled here. No alpha, palette, or grayscale support — inputs to
//! the pipeline are plain RGB by contract.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

/// Decoded RGB image in planar order.
#[derive(Debug)]
pub enum DecodedImage {
    /// 8-bit samples.
    Rgb8 { data: Vec<u8>, h: usize, w: usize },
    /// 16-bit samples.
    Rgb16 { data: Vec<u16>, h: usize, w: usize },
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedFile {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn unsupported(path: &Path, reason: impl Into<String>) -> Error {
    Error::UnsupportedImage {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Loads an RGB PNG of either supported depth.
pub fn load_rgb(path: &Path) -> Result<DecodedImage> {
    let file = File::open(path)?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| malformed(path, e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| malformed(path, e.to_string()))?;
    if info.color_type != png::ColorType::Rgb {
        return Err(unsupported(
            path,
            format!("expected RGB color, got {:?}", info.color_type),
        ));
    }
    let (h, w) = (info.height as usize, info.width as usize);
    let pixels = h * w;
    match info.bit_depth {
        png::BitDepth::Eight => {
            let interleaved = &buf[..pixels * 3];
            let mut data = vec![0u8; pixels * 3];
            for i in 0..pixels {
                for c in 0..3 {
                    data[c * pixels + i] = interleaved[i * 3 + c];
                }
            }
            Ok(DecodedImage::Rgb8 { data, h, w })
        }
        png::BitDepth::Sixteen => {
            let interleaved = &buf[..pixels * 6];
            let mut data = vec![0u16; pixels * 3];
            for i in 0..pixels {
                for c in 0..3 {
                    let hi = interleaved[(i * 3 + c) * 2] as u16;
                    let lo = interleaved[(i * 3 + c) * 2 + 1] as u16;
                    data[c * pixels + i] = (hi << 8) | lo;
                }
            }
            Ok(DecodedImage::Rgb16 { data, h, w })
        }
        other => Err(unsupported(path, format!("unsupported bit depth {other:?}"))),
    }
}

fn check_planar_len(len: usize, h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || len != 3 * h * w {
        return Err(Error::shape(format!(
            "planar RGB data of length {len} does not match 3x{h}x{w}"
        )));
    }
    Ok(())
}

/// Writes planar 8-bit RGB data as a PNG.
pub fn save_rgb8(path: &Path, data: &[u8], h: usize, w: usize) -> Result<()> {
    check_planar_len(data.len(), h, w)?;
    let pixels = h * w;
    let mut interleaved = vec![0u8; pixels * 3];
    for i in 0..pixels {
        for c in 0..3 {
            interleaved[i * 3 + c] = data[c * pixels + i];
        }
    }
    write_png(path, &interleaved, h, w, png::BitDepth::Eight)
}

/// Writes planar 16-bit RGB data as a PNG.
pub fn save_rgb16(path: &Path, data: &[u16], h: usize, w: usize) -> Result<()> {
    check_planar_len(data.len(), h, w)?;
    let pixels = h * w;
    let mut interleaved = vec![0u8; pixels * 6];
    for i in 0..pixels {
        for c in 0..3 {
            let v = data[c * pixels + i];
            interleaved[(i * 3 + c) * 2] = (v >> 8) as u8;
            interleaved[(i * 3 + c) * 2 + 1] = (v & 0xff) as u8;
        }
    }
    write_png(path, &interleaved, h, w, png::BitDepth::Sixteen)
}

fn write_png(path: &Path, interleaved: &[u8], h: usize, w: usize, depth: png::BitDepth) -> Result<()> {
    let file = File::create(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(depth);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::contract(format!("png header: {e}")))?;
    writer
        .write_image_data(interleaved)
        .map_err(|e| Error::contract(format!("png payload: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb8_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let data: Vec<u8> = (0..3 * 5 * 4).map(|i| (i * 7 % 256) as u8).collect();
        save_rgb8(&path, &data, 5, 4).unwrap();
        match load_rgb(&path).unwrap() {
            DecodedImage::Rgb8 { data: d, h, w } => {
                assert_eq!((h, w), (5, 4));
                assert_eq!(d, data);
            }
            _ => panic!("expected 8-bit"),
        }
    }

    #[test]
    fn rgb16_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.png");
        // A ramp covering the full 16-bit range.
        let data: Vec<u16> = (0..3 * 8 * 8).map(|i| (i * 1021 % 65536) as u16).collect();
        save_rgb16(&path, &data, 8, 8).unwrap();
        match load_rgb(&path).unwrap() {
            DecodedImage::Rgb16 { data: d, h, w } => {
                assert_eq!((h, w), (8, 8));
                assert_eq!(d, data);
            }
            _ => panic!("expected 16-bit"),
        }
    }

    #[test]
    fn truncated_file_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        let data: Vec<u8> = vec![128; 3 * 16];
        save_rgb8(&path, &data, 4, 4).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            load_rgb(&path),
            Err(Error::MalformedFile { .. })
        ));
    }

    #[test]
    fn not_a_png_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        std::fs::write(&path, b"definitely not a png").unwrap();
        assert!(matches!(
            load_rgb(&path),
            Err(Error::MalformedFile { .. })
        ));
    }

    #[test]
    fn missing_file_is_io() {
        let err = load_rgb(Path::new("/nonexistent/nowhere.png")).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }

    #[test]
    fn bad_planar_length_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.png");
        assert!(save_rgb8(&path, &[0u8; 10], 2, 2).is_err());
    }
}
