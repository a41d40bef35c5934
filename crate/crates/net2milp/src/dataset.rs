//! Labelled image sets: a directory of text grids indexed by `labels.csv`,
//! the synthetic 8x8 glyph fixtures, and MNIST IDX files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use net2milp_core::tensor::Tensor;
use net2milp_core::train::{Dataset, TrainError};
use rand::Rng;
use thiserror::Error;

use crate::image::{format_grid, parse_grid, Image, ImageError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{file}: {source}")]
    Image { file: String, source: ImageError },
    #[error("labels.csv line {line}: {message}")]
    Labels { line: usize, message: String },
    #[error("idx: {0}")]
    Idx(String),
    #[error("image {index} is {got:?}, expected {want:?}")]
    Shape { index: usize, got: (usize, usize), want: (usize, usize) },
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelledImages {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
}

impl LabelledImages {
    pub fn class_count(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Core dataset with `[h, w]` inputs and one-hot targets.
    pub fn to_dataset(&self, class_count: usize) -> Result<Dataset, DatasetError> {
        let want = self.images.first().map_or((0, 0), |i| (i.height, i.width));
        let mut inputs = Vec::with_capacity(self.images.len());
        for (index, img) in self.images.iter().enumerate() {
            if (img.height, img.width) != want {
                return Err(DatasetError::Shape {
                    index,
                    got: (img.height, img.width),
                    want,
                });
            }
            inputs.push(Tensor::new(vec![img.height, img.width], img.pixels.clone()).map_err(TrainError::from)?);
        }
        Ok(Dataset::from_labels(inputs, &self.labels, class_count)?)
    }
}

/// Reads `dir/labels.csv` (header `file,label`) and the grids it names.
pub fn load_dir(dir: &Path) -> Result<LabelledImages, DatasetError> {
    let index = fs::read_to_string(dir.join("labels.csv"))?;
    let mut out = LabelledImages {
        images: Vec::new(),
        labels: Vec::new(),
    };
    for (i, line) in index.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: &str| DatasetError::Labels {
            line: i + 1,
            message: message.into(),
        };
        let (file, label) = line.split_once(',').ok_or_else(|| bad("expected file,label"))?;
        let label: usize = label.trim().parse().map_err(|_| bad("label is not a class index"))?;
        let text = fs::read_to_string(dir.join(file.trim()))?;
        let img = parse_grid(&text).map_err(|source| DatasetError::Image {
            file: file.trim().into(),
            source,
        })?;
        out.images.push(img);
        out.labels.push(label);
    }
    Ok(out)
}

/// Writes the set as `dir/c{label}_{index}.txt` plus `labels.csv`.
pub fn save_dir(dir: &Path, set: &LabelledImages) -> Result<(), DatasetError> {
    fs::create_dir_all(dir)?;
    let mut index = String::from("file,label\n");
    for (i, (img, label)) in set.images.iter().zip(&set.labels).enumerate() {
        let name = format!("c{label}_{i:03}.txt");
        fs::write(dir.join(&name), format_grid(img))?;
        let _ = writeln!(index, "{name},{label}");
    }
    fs::write(dir.join("labels.csv"), index)?;
    Ok(())
}

const GLYPHS: [[&str; 8]; 10] = [
    ["..####..", ".#....#.", ".#....#.", ".#....#.", ".#....#.", ".#....#.", "..####..", "........"],
    ["...##...", "..###...", "...##...", "...##...", "...##...", "...##...", "..####..", "........"],
    ["..####..", ".#....#.", "......#.", ".....#..", "...##...", "..#.....", ".######.", "........"],
    [".#####..", "......#.", "......#.", "..####..", "......#.", "......#.", ".#####..", "........"],
    ["....##..", "...#.#..", "..#..#..", ".#...#..", ".######.", ".....#..", ".....#..", "........"],
    [".######.", ".#......", ".#####..", "......#.", "......#.", ".#....#.", "..####..", "........"],
    ["..####..", ".#......", ".#......", ".#####..", ".#....#.", ".#....#.", "..####..", "........"],
    [".######.", "......#.", ".....#..", "....#...", "...#....", "...#....", "...#....", "........"],
    ["..####..", ".#....#.", ".#....#.", "..####..", ".#....#.", ".#....#.", "..####..", "........"],
    ["..####..", ".#....#.", ".#....#.", "..#####.", "......#.", "......#.", "..####..", "........"],
];

pub const GLYPH_SIDE: usize = 8;

/// `per_class` noisy copies of digit glyphs `0..classes`, interleaved by
/// class. Each copy is shifted by at most one pixel, strokes take an
/// intensity in `[0.75, 1]`, the background gets noise in `[0, 0.15]`, and
/// every value is a multiple of 1/255 so the set survives PGM export.
pub fn glyph_fixtures(classes: usize, per_class: usize, seed: u64) -> LabelledImages {
    assert!((2..=10).contains(&classes), "glyph fixtures cover 2 to 10 classes");
    let mut rng = net2milp_core::rng::named(seed, "fixtures");
    let quantize = |v: f64| (v * 255.0).round() / 255.0;
    let mut out = LabelledImages {
        images: Vec::new(),
        labels: Vec::new(),
    };
    for _ in 0..per_class {
        for (c, glyph) in GLYPHS.iter().enumerate().take(classes) {
            let dx = rng.random_range(-1i64..=1) as isize;
            let dy = rng.random_range(0i64..=1) as isize;
            let ink = rng.random_range(0.75..=1.0);
            let mut pixels = vec![0.0; GLYPH_SIDE * GLYPH_SIDE];
            for (r, px) in pixels.chunks_mut(GLYPH_SIDE).enumerate() {
                for (col, p) in px.iter_mut().enumerate() {
                    let sr = r as isize - dy;
                    let sc = col as isize - dx;
                    let on = (0..GLYPH_SIDE as isize).contains(&sr)
                        && (0..GLYPH_SIDE as isize).contains(&sc)
                        && glyph[sr as usize].as_bytes()[sc as usize] == b'#';
                    let noise: f64 = rng.random_range(0.0..0.15);
                    *p = quantize(if on { ink } else { noise });
                }
            }
            out.images.push(Image::new(GLYPH_SIDE, GLYPH_SIDE, pixels));
            out.labels.push(c);
        }
    }
    out
}

fn be_u32(bytes: &[u8], at: usize) -> Result<usize, DatasetError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize)
        .ok_or_else(|| DatasetError::Idx("truncated header".into()))
}

/// IDX image file (magic 0x803), bytes scaled by 1/255.
pub fn parse_idx_images(bytes: &[u8], limit: Option<usize>) -> Result<Vec<Image>, DatasetError> {
    if be_u32(bytes, 0)? != 0x803 {
        return Err(DatasetError::Idx("not an unsigned-byte 3-D image file".into()));
    }
    let (n, h, w) = (be_u32(bytes, 4)?, be_u32(bytes, 8)?, be_u32(bytes, 12)?);
    let n = limit.map_or(n, |l| l.min(n));
    let body = bytes.get(16..16 + n * h * w).ok_or_else(|| DatasetError::Idx("image data truncated".into()))?;
    Ok(body
        .chunks(h * w)
        .map(|c| Image::new(h, w, c.iter().map(|&b| f64::from(b) / 255.0).collect()))
        .collect())
}

/// IDX label file (magic 0x801).
pub fn parse_idx_labels(bytes: &[u8], limit: Option<usize>) -> Result<Vec<usize>, DatasetError> {
    if be_u32(bytes, 0)? != 0x801 {
        return Err(DatasetError::Idx("not an unsigned-byte label file".into()));
    }
    let n = be_u32(bytes, 4)?;
    let n = limit.map_or(n, |l| l.min(n));
    let body = bytes.get(8..8 + n).ok_or_else(|| DatasetError::Idx("label data truncated".into()))?;
    Ok(body.iter().map(|&b| usize::from(b)).collect())
}

pub fn load_idx(images: &Path, labels: &Path, limit: Option<usize>) -> Result<LabelledImages, DatasetError> {
    let images = parse_idx_images(&fs::read(images)?, limit)?;
    let labels = parse_idx_labels(&fs::read(labels)?, limit)?;
    if images.len() != labels.len() {
        return Err(DatasetError::Idx(format!("{} images but {} labels", images.len(), labels.len())));
    }
    Ok(LabelledImages { images, labels })
}
