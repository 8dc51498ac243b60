//! Binary 8-bit PGM (P5) reading and writing.

use std::fs;
use std::path::Path;

use super::{DataError, GrayImage};

/// Parses one header token, skipping whitespace and `#` comments.
fn header_token(bytes: &[u8], pos: &mut usize) -> Result<usize, DataError> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(_) => break,
            None => return Err(DataError::Pgm("header truncated".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| DataError::Pgm(format!("bad header field at byte {start}")))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, DataError> {
    match bytes.get(..2) {
        Some(b"P5") => {}
        Some(m) => return Err(DataError::Pgm(format!("unsupported magic {:?}", String::from_utf8_lossy(m)))),
        None => return Err(DataError::Pgm("file too short".into())),
    }
    let mut pos = 2;
    let width = header_token(bytes, &mut pos)?;
    let height = header_token(bytes, &mut pos)?;
    let maxval = header_token(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(DataError::Pgm(format!("max value {maxval} unsupported (need 255)")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(DataError::Pgm("missing separator after header".into()));
    }
    pos += 1;
    let n = width * height;
    let payload = bytes
        .get(pos..pos + n)
        .ok_or_else(|| DataError::Pgm(format!("payload truncated: need {n} bytes, have {}", bytes.len() - pos)))?;
    Ok(GrayImage::new(width, height, payload.iter().map(|&b| f64::from(b) / 255.0).collect()))
}

/// Values are clamped to `[0, 1]` and rounded to 8 bits.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage, DataError> {
    decode_pgm(&fs::read(path)?)
}

pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<(), DataError> {
    fs::write(path, encode_pgm(img))?;
    Ok(())
}
