//! Binary netpbm readers and writers: 8-bit grayscale PGM (P5) and 24-bit
//! RGB PPM (P6). Values map to [0, 1] by /255.

use std::fs;
use std::path::Path;

use dpnse_core::augment::Image;

use crate::error::{CliError, Result};

/// Reads a P5 or P6 image. Header comments (`#` to end of line) are allowed.
pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    let err = |msg: &str| CliError::Input(format!("{}: {msg}", path.display()));
    if bytes.len() < 2 {
        return Err(err("not a netpbm file"));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(err("expected P5 (PGM) or P6 (PPM) magic")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and comments.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(err("malformed header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("digits are ASCII")
            .parse()
            .map_err(|_| err("header value out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(err("only 8-bit images (maxval 255) are supported"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(err("missing whitespace before pixel data"));
    }
    pos += 1;
    let expected = width * height * channels;
    let data = &bytes[pos..];
    if data.len() != expected {
        return Err(err(&format!(
            "expected {expected} pixel bytes, found {}",
            data.len()
        )));
    }
    let pixels: Vec<f64> = data.iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(height, width, channels, pixels).map_err(Into::into)
}

fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes a grayscale image as binary PGM (P5). RGB inputs are collapsed to
/// luma first.
pub fn write_pgm(path: &Path, img: &Image) -> Result<()> {
    let gray = img.to_grayscale();
    let mut out = format!("P5\n{} {}\n255\n", gray.width(), gray.height()).into_bytes();
    out.extend(gray.pixels().iter().map(|&v| quantize(v)));
    fs::write(path, out).map_err(CliError::io(path))
}

/// Writes an RGB image as binary PPM (P6). Grayscale inputs are replicated
/// across channels.
pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    let rgb = img.to_rgb();
    let mut out = format!("P6\n{} {}\n255\n", rgb.width(), rgb.height()).into_bytes();
    out.extend(rgb.pixels().iter().map(|&v| quantize(v)));
    fs::write(path, out).map_err(CliError::io(path))
}
