//! IDX binary format (the MNIST distribution format).
//!
//! Header: big-endian `u32` magic (`0x00000803` for rank-3 unsigned-byte
//! images, `0x00000801` for rank-1 labels), then one big-endian `u32` per
//! dimension, then the raw bytes.

use std::path::{Path, PathBuf};

use super::{DataError, LabeledDataset};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;
const MNIST_CLASSES: usize = 10;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, DataError> {
    let end = offset + 4;
    let word = bytes.get(offset..end).ok_or(DataError::TruncatedFile {
        needed: end,
        available: bytes.len(),
    })?;
    Ok(u32::from_be_bytes([word[0], word[1], word[2], word[3]]))
}

/// Returns `(dims, payload)` after checking the magic number and that the
/// payload holds exactly the declared element count.
fn parse_header(bytes: &[u8], expected: u32) -> Result<(Vec<usize>, &[u8]), DataError> {
    let magic = read_u32(bytes, 0)?;
    if magic != expected {
        return Err(DataError::BadMagic {
            expected,
            found: magic,
        });
    }
    let rank = (expected & 0xff) as usize;
    let dims = (0..rank)
        .map(|i| read_u32(bytes, 4 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let header = 4 + 4 * rank;
    let count: usize = dims.iter().product();
    let needed = header + count;
    if bytes.len() < needed {
        return Err(DataError::TruncatedFile {
            needed,
            available: bytes.len(),
        });
    }
    Ok((dims, &bytes[header..needed]))
}

/// Decodes an images/labels pair already held in memory. Pixels are scaled
/// by `1/255`.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset, DataError> {
    let (img_dims, pixels) = parse_header(images, IMAGES_MAGIC)?;
    let (lbl_dims, raw_labels) = parse_header(labels, LABELS_MAGIC)?;
    if img_dims[0] != lbl_dims[0] {
        return Err(DataError::CountMismatch {
            images: img_dims[0],
            labels: lbl_dims[0],
        });
    }
    let feature_dim = img_dims[1] * img_dims[2];
    let features = pixels.iter().map(|&p| f32::from(p) / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&l| usize::from(l)).collect();
    let num_classes = labels
        .iter()
        .map(|&l| l + 1)
        .max()
        .unwrap_or(0)
        .max(MNIST_CLASSES);
    LabeledDataset::new(features, labels, feature_dim.max(1), num_classes)
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            DataError::MissingFile(path.display().to_string())
        } else {
            DataError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            }
        }
    })
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset, DataError> {
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;
    parse_idx(&images, &labels)
}

/// The four standard MNIST file names inside one directory.
#[derive(Debug, Clone)]
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test_images: dir.join("t10k-images-idx3-ubyte"),
            test_labels: dir.join("t10k-labels-idx1-ubyte"),
        }
    }

    pub fn missing(&self) -> Vec<&Path> {
        [
            &self.train_images,
            &self.train_labels,
            &self.test_images,
            &self.test_labels,
        ]
        .into_iter()
        .filter(|p| !p.is_file())
        .map(PathBuf::as_path)
        .collect()
    }
}

/// Loads `(train, test)` from a directory holding the uncompressed MNIST
/// files.
pub fn load_mnist(dir: &Path) -> Result<(LabeledDataset, LabeledDataset), DataError> {
    let files = MnistFiles::in_dir(dir);
    if let Some(p) = files.missing().first() {
        return Err(DataError::MissingFile(p.display().to_string()));
    }
    let train = load_idx(&files.train_images, &files.train_labels)?;
    let test = load_idx(&files.test_images, &files.test_labels)?;
    Ok((train, test))
}

/// Encodes raw pixel bytes as an IDX image file.
pub fn encode_idx_images(count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), count * rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for d in [count, rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
