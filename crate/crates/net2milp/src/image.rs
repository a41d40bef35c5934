//! Grayscale images as plain-text grids or binary 8-bit PGM (`P5`).

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("grid line {line}: {message}")]
    Grid { line: usize, message: String },
    #[error("pgm: {0}")]
    Pgm(String),
}

/// Row-major pixels, nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Self {
        assert_eq!(height * width, pixels.len(), "pixel count");
        Self { height, width, pixels }
    }
}

/// One row per line, values separated by whitespace. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_grid(text: &str) -> Result<Image, ImageError> {
    let mut pixels = Vec::new();
    let mut width = None;
    let mut height = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| ImageError::Grid {
                    line: i + 1,
                    message: format!("{t:?} is not a finite real"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(ImageError::Grid {
                    line: i + 1,
                    message: format!("{} values, expected {w}", row.len()),
                })
            }
            _ => {}
        }
        pixels.extend(row);
        height += 1;
    }
    let width = width.ok_or(ImageError::Grid {
        line: 0,
        message: "empty grid".into(),
    })?;
    Ok(Image::new(height, width, pixels))
}

/// Exact text form: shortest representation that parses back to the same bits.
pub fn format_grid(img: &Image) -> String {
    let mut out = String::new();
    for row in img.pixels.chunks(img.width) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

fn pgm_token(bytes: &[u8], pos: &mut usize) -> Result<usize, ImageError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ImageError::Pgm(format!("bad header field at byte {start}")))
}

/// Binary PGM, 8-bit samples scaled by `1 / maxval` (`1 / 255` for
/// ordinary files).
pub fn parse_pgm(bytes: &[u8]) -> Result<Image, ImageError> {
    if !bytes.starts_with(b"P5") {
        return Err(ImageError::Pgm("missing P5 magic".into()));
    }
    let mut pos = 2;
    let width = pgm_token(bytes, &mut pos)?;
    let height = pgm_token(bytes, &mut pos)?;
    let maxval = pgm_token(bytes, &mut pos)?;
    if !(1..=255).contains(&maxval) {
        return Err(ImageError::Pgm(format!("maxval {maxval} is not an 8-bit depth")));
    }
    if width == 0 || height == 0 {
        return Err(ImageError::Pgm("zero extent".into()));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let raster = bytes.get(pos..pos + width * height).ok_or_else(|| ImageError::Pgm("raster is truncated".into()))?;
    let scale = maxval as f64;
    Ok(Image::new(height, width, raster.iter().map(|&b| f64::from(b) / scale).collect()))
}

/// Rescales `[0, 1]` to 8 bits, clamping and rounding to nearest.
pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// Reads a PGM when the file starts with `P5`, a text grid otherwise.
pub fn load_image(path: &Path) -> Result<Image, ImageError> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(b"P5") {
        parse_pgm(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| ImageError::Grid {
            line: 0,
            message: "not UTF-8 text".into(),
        })?;
        parse_grid(&text)
    }
}
