//! Binary (P6) portable pixmap reader and writer, maxval 255.
//!
//! The only image file format in this project: codec-free and bit-exact,
//! sufficient for corpora and heatmap output.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

pub fn write_ppm(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_ppm(image);
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_ppm(&bytes).map_err(|e| match e {
        Error::Data(msg) => Error::data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.to_bytes());
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::data("not a P6 pixmap (bad magic)"));
    }
    let mut pos = 2usize;
    let mut read_token = |what: &str| -> Result<usize> {
        // Skip whitespace and '#' comment lines between header tokens.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::data(format!("malformed header: missing {what}")));
        }
        std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::data(format!("malformed header: bad {what}")))
    };
    let width = read_token("width")?;
    let height = read_token("height")?;
    let maxval = read_token("maxval")?;
    if maxval != 255 {
        return Err(Error::data(format!("unsupported maxval {maxval}, expected 255")));
    }
    if width == 0 || height == 0 {
        return Err(Error::data(format!("invalid dimensions {width}x{height}")));
    }
    // Exactly one whitespace byte separates the header from pixel data.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::data("malformed header: missing separator before pixels"));
    }
    pos += 1;
    let expected = width * height * 3;
    let pixels = bytes
        .get(pos..pos + expected)
        .ok_or_else(|| Error::data(format!("truncated pixel data: expected {expected} bytes")))?;
    Image::from_bytes(height, width, pixels)
}
