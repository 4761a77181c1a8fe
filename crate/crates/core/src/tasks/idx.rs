//! IDX image/label files (big-endian header, unsigned byte payload).

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// One split: `images` has a row per sample with pixels scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImages {
    pub images: Matrix,
    pub labels: Vec<usize>,
    pub height: usize,
    pub width: usize,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Keeps the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        if n < self.len() {
            let keep: Vec<usize> = (0..n).collect();
            self.images = self.images.select_rows(&keep);
            self.labels.truncate(n);
        }
    }

    /// Inputs as columns, ready for a forward pass.
    pub fn batch(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        let x = self.images.select_rows(indices).transpose();
        (x, indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageClassTask {
    pub train: LabeledImages,
    pub test: LabeledImages,
    pub classes: usize,
}

fn be_u32(bytes: &[u8], at: usize, what: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Data(format!("{}: truncated header", what.display())))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Parses an image file and its label file.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledImages> {
    let img = read(images_path)?;
    let lab = read(labels_path)?;

    let magic = be_u32(&img, 0, images_path)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}",
            images_path.display()
        )));
    }
    let count = be_u32(&img, 4, images_path)? as usize;
    let height = be_u32(&img, 8, images_path)? as usize;
    let width = be_u32(&img, 12, images_path)? as usize;
    let pixels = height * width;
    let payload = &img[16..];
    if payload.len() != count * pixels {
        return Err(Error::Data(format!(
            "{}: {} payload bytes for {count} images of {height}x{width}",
            images_path.display(),
            payload.len()
        )));
    }

    let magic = be_u32(&lab, 0, labels_path)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}",
            labels_path.display()
        )));
    }
    let label_count = be_u32(&lab, 4, labels_path)? as usize;
    if label_count != count {
        return Err(Error::Data(format!(
            "{count} images but {label_count} labels"
        )));
    }
    let labels_raw = &lab[8..];
    if labels_raw.len() != count {
        return Err(Error::Data(format!(
            "{}: {} payload bytes for {count} labels",
            labels_path.display(),
            labels_raw.len()
        )));
    }

    let images = Matrix::from_vec(count, pixels, payload.iter().map(|&p| p as f64 / 255.0).collect())?;
    Ok(LabeledImages {
        images,
        labels: labels_raw.iter().map(|&l| l as usize).collect(),
        height,
        width,
    })
}

pub fn write_idx_images(path: &Path, pixels: &[u8], count: usize, height: usize, width: usize) -> Result<()> {
    assert_eq!(pixels.len(), count * height * width, "pixel buffer size");
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count as u32, height as u32, width as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    Ok(fs::write(path, out)?)
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    Ok(fs::write(path, out)?)
}

/// The four standard MNIST file names under `dir`.
pub fn mnist_paths(dir: &Path) -> [PathBuf; 4] {
    [
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
    ]
}

/// Loads MNIST from `dir`, keeping at most `train_limit`/`test_limit`
/// samples of each split.
pub fn load_mnist(dir: &Path, train_limit: Option<usize>, test_limit: Option<usize>) -> Result<ImageClassTask> {
    let [tri, trl, tei, tel] = mnist_paths(dir);
    let mut train = load_idx(&tri, &trl)?;
    let mut test = load_idx(&tei, &tel)?;
    if let Some(n) = train_limit {
        train.truncate(n);
    }
    if let Some(n) = test_limit {
        test.truncate(n);
    }
    let classes = train.num_classes().max(test.num_classes());
    Ok(ImageClassTask { train, test, classes })
}
