//! Binary PGM (`P5`, maxval 255) images and per-frame instance-mask folders.
//!
//! A mask folder holds one PGM per instance plus `index.json`, an object
//! mapping each mask file name to the zero-based row of the object in the
//! frame's label file.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const MASK_INDEX: &str = "index.json";

/// An 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn from_mask(mask: &[bool], width: usize, height: usize) -> Self {
        GrayImage { width, height, pixels: mask.iter().map(|&b| if b { 255 } else { 0 }).collect() }
    }

    /// Min-max normalizes `values` to 0..=255; a constant input maps to 0.
    pub fn normalized(values: &[f64], width: usize, height: usize) -> Self {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let pixels =
            values.iter().map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 }).collect();
        GrayImage { width, height, pixels }
    }
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Parses a binary PGM with maxval 255; `#` comments are allowed in the header.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Input("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P5" {
        return Err(Error::Input(format!("unsupported image magic `{}`", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Input(format!("bad PGM header field `{s}`")));
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(Error::Input(format!("PGM maxval {maxval}, expected 255")));
    }
    let n = width * height;
    if bytes.len() < pos + n {
        return Err(Error::Input(format!("PGM raster has {} bytes, expected {n}", bytes.len().saturating_sub(pos))));
    }
    Ok(GrayImage { width, height, pixels: bytes[pos..pos + n].to_vec() })
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    decode_pgm(&std::fs::read(path)?).map_err(|e| match e {
        Error::Input(msg) => Error::Input(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    std::fs::write(path, encode_pgm(img))?;
    Ok(())
}

/// Loads the masks of one frame. Entry `i` of the result belongs to label
/// row `i`; objects without a mask get `None`. Masks must match the image
/// extents, hold only 0/255 and be nonempty.
pub fn load_instance_masks(
    dir: &Path,
    label_count: usize,
    width: usize,
    height: usize,
) -> Result<Vec<Option<Vec<bool>>>> {
    let index_path = dir.join(MASK_INDEX);
    let index: BTreeMap<String, usize> = serde_json::from_str(&std::fs::read_to_string(&index_path)?)
        .map_err(|e| Error::Input(format!("{}: {e}", index_path.display())))?;
    let mut out = vec![None; label_count];
    for (file, obj) in index {
        if obj >= label_count {
            return Err(Error::Input(format!(
                "{}: `{file}` refers to object {obj} but the frame has {label_count} labels",
                index_path.display()
            )));
        }
        let img = read_pgm(&dir.join(&file))?;
        if img.width != width || img.height != height {
            return Err(Error::Input(format!(
                "{file}: mask is {}x{}, image is {width}x{height}",
                img.width, img.height
            )));
        }
        if let Some(bad) = img.pixels.iter().find(|&&p| p != 0 && p != 255) {
            return Err(Error::Input(format!("{file}: pixel value {bad} is not 0 or 255")));
        }
        let mask: Vec<bool> = img.pixels.iter().map(|&p| p == 255).collect();
        if !mask.iter().any(|&b| b) {
            return Err(Error::Input(format!("{file}: mask is empty")));
        }
        if out[obj].is_some() {
            return Err(Error::Input(format!("{file}: object {obj} already has a mask")));
        }
        out[obj] = Some(mask);
    }
    Ok(out)
}

/// Writes masks (indexed by object) and the sidecar into `dir`.
pub fn write_instance_masks(dir: &Path, masks: &[Option<Vec<bool>>], width: usize, height: usize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut index = BTreeMap::new();
    for (i, m) in masks.iter().enumerate() {
        if let Some(m) = m {
            let name = format!("{i:03}.pgm");
            write_pgm(&dir.join(&name), &GrayImage::from_mask(m, width, height))?;
            index.insert(name, i);
        }
    }
    std::fs::write(dir.join(MASK_INDEX), serde_json::to_string_pretty(&index)?)?;
    Ok(())
}
