//! IDX files (the MNIST container): big-endian header, u8 payload.

use std::fs;
use std::path::Path;

use htlab_core::data::Dataset;
use htlab_core::Matrix;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Decoded image file: `count` images of `rows x cols` pixels, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn header(bytes: &[u8], magic: u32) -> Result<Vec<usize>, String> {
    let word = |i: usize| -> Result<u32, String> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
            .ok_or_else(|| "truncated header".to_string())
    };
    let found = word(0).map_err(|_| "not IDX: file too short".to_string())?;
    if found != magic {
        return Err(format!("not IDX: magic {found:#010x}, expected {magic:#010x}"));
    }
    let ndim = (magic & 0xff) as usize;
    (1..=ndim).map(|i| word(i).map(|v| v as usize)).collect()
}

fn payload(bytes: &[u8], offset: usize, len: usize) -> Result<&[u8], String> {
    let have = bytes.len().saturating_sub(offset);
    match have.cmp(&len) {
        std::cmp::Ordering::Less => Err(format!("truncated: {len} payload bytes declared, {have} present")),
        std::cmp::Ordering::Greater => Err(format!("{} trailing bytes after payload", have - len)),
        std::cmp::Ordering::Equal => Ok(&bytes[offset..]),
    }
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages, String> {
    let dims = header(bytes, IMAGES_MAGIC)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let len = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or("image dimensions overflow")?;
    let pixels = payload(bytes, 16, len)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>, String> {
    let dims = header(bytes, LABELS_MAGIC)?;
    Ok(payload(bytes, 8, dims[0])?.to_vec())
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    assert_eq!(images.pixels.len(), images.count * images.rows * images.cols);
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(Error::io(path))
}

/// Loads an image/label pair as a dataset with pixels scaled to `[0, 1]`.
/// The class count is the largest label plus one unless given.
pub fn load_idx_with_classes(images_path: &Path, labels_path: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let images = parse_images(&read(images_path)?).map_err(|m| Error::format(images_path, m))?;
    let labels = parse_labels(&read(labels_path)?).map_err(|m| Error::format(labels_path, m))?;
    if labels.len() != images.count {
        return Err(Error::format(
            labels_path,
            format!("{} labels for {} images", labels.len(), images.count),
        ));
    }
    let dim = images.rows * images.cols;
    let data: Vec<f64> = images.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let features = Matrix::from_vec(images.count, dim, data)?;
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    Ok(Dataset::new(features, labels, classes)?)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    load_idx_with_classes(images_path, labels_path, None)
}

/// Quantizes features in `[0, 1]` back to u8 pixels, one `1 x d` image per
/// row. Fails if any feature lies outside the unit interval.
pub fn quantize(data: &Dataset) -> Result<(IdxImages, Vec<u8>), String> {
    let mut pixels = Vec::with_capacity(data.len() * data.dim());
    for &v in data.features().as_slice() {
        if !(0.0..=1.0).contains(&v) {
            return Err(format!("feature {v} outside [0, 1] cannot be stored as IDX"));
        }
        pixels.push((v * 255.0).round() as u8);
    }
    let labels = data
        .labels()
        .iter()
        .map(|&y| u8::try_from(y).map_err(|_| format!("label {y} does not fit in a byte")))
        .collect::<Result<Vec<u8>, String>>()?;
    let images = IdxImages {
        count: data.len(),
        rows: 1,
        cols: data.dim(),
        pixels,
    };
    Ok((images, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn magic_numbers_by_hand() {
        let img = encode_images(&IdxImages {
            count: 2,
            rows: 1,
            cols: 3,
            pixels: vec![0, 1, 2, 3, 4, 255],
        });
        assert_eq!(&img[..16], &[0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 3]);
        assert_eq!(encode_labels(&[7, 9]), vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 9]);
    }

    #[test]
    fn round_trip() {
        let images = IdxImages {
            count: 3,
            rows: 2,
            cols: 2,
            pixels: (0..12).collect(),
        };
        assert_eq!(parse_images(&encode_images(&images)).unwrap(), images);
        assert_eq!(parse_labels(&encode_labels(&[1, 0, 4])).unwrap(), vec![1, 0, 4]);
    }

    #[test]
    fn wrong_magic_is_not_idx() {
        let labels = encode_labels(&[1]);
        assert!(parse_images(&labels).unwrap_err().starts_with("not IDX"));
        assert!(parse_labels(&[0, 0, 8]).unwrap_err().starts_with("not IDX"));
    }

    #[test]
    fn truncated_and_padded_payloads_fail() {
        let mut bytes = encode_labels(&[1, 2, 3]);
        bytes.pop();
        assert!(parse_labels(&bytes).unwrap_err().starts_with("truncated"));
        let mut bytes = encode_labels(&[1, 2, 3]);
        bytes.push(0);
        assert!(parse_labels(&bytes).is_err());
        let img = encode_images(&IdxImages {
            count: 2,
            rows: 2,
            cols: 2,
            pixels: vec![0; 8],
        });
        assert!(parse_images(&img[..10]).is_err());
    }
}
