//! Binary (P5) graymap reading and writing.

use super::DataError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u16>,
}

fn header_err(reason: impl Into<String>) -> DataError {
    DataError::Pgm(reason.into())
}

/// Reads ASCII header fields, skipping whitespace and `#` comments.
fn next_field(bytes: &[u8], pos: &mut usize) -> Result<u64, DataError> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(header_err("truncated header")),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return Err(header_err(format!("expected a number at byte {start}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| header_err(format!("number too large at byte {start}")))
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Pgm, DataError> {
    if !bytes.starts_with(b"P5") {
        return Err(header_err("missing P5 magic"));
    }
    let mut pos = 2;
    let width = next_field(bytes, &mut pos)? as usize;
    let height = next_field(bytes, &mut pos)? as usize;
    let maxval = next_field(bytes, &mut pos)?;
    if width == 0 || height == 0 {
        return Err(header_err("zero-sized image"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(header_err(format!("maxval {maxval} outside 1..=65535")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(header_err("header must end with one whitespace byte")),
    }
    let wide = maxval > 255;
    let n = width * height;
    let payload = &bytes[pos..];
    let need = if wide { 2 * n } else { n };
    if payload.len() != need {
        return Err(header_err(format!("payload has {} bytes, expected {need}", payload.len())));
    }
    let pixels: Vec<u16> = if wide {
        payload.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        payload.iter().map(|&b| b as u16).collect()
    };
    if let Some(v) = pixels.iter().find(|&&v| v as u64 > maxval) {
        return Err(header_err(format!("sample {v} exceeds maxval {maxval}")));
    }
    Ok(Pgm { width, height, maxval: maxval as u16, pixels })
}

pub fn encode_pgm(pgm: &Pgm) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", pgm.width, pgm.height, pgm.maxval).into_bytes();
    if pgm.maxval > 255 {
        for v in &pgm.pixels {
            out.extend_from_slice(&v.to_be_bytes());
        }
    } else {
        out.extend(pgm.pixels.iter().map(|&v| v as u8));
    }
    out
}

/// `[0,1]` reals as a 16-bit image, `round(x * 65535)`.
pub fn image_to_pgm(image: &[f32], size: usize) -> Pgm {
    let pixels = image.iter().map(|&x| (x.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16).collect();
    Pgm { width: size, height: size, maxval: 65535, pixels }
}

pub fn pgm_to_image(pgm: &Pgm) -> Vec<f32> {
    let m = pgm.maxval as f64;
    pgm.pixels.iter().map(|&v| (v as f64 / m) as f32).collect()
}

pub fn mask_to_pgm(mask: &[u8], size: usize) -> Pgm {
    Pgm { width: size, height: size, maxval: 255, pixels: mask.iter().map(|&m| if m != 0 { 255 } else { 0 }).collect() }
}

pub fn pgm_to_mask(pgm: &Pgm) -> Vec<u8> {
    pgm.pixels.iter().map(|&v| (v != 0) as u8).collect()
}
