//! IDX dataset ingestion, one-hot targets, batching, and the synthetic
//! dataset used when no files are around.
//!
//! IDX files are the big-endian containers the MNIST family ships in:
//! magic 0x00000803 + count/rows/cols for images, 0x00000801 + count for
//! labels, then raw unsigned bytes. Gzip-compressed files are accepted
//! transparently (sniffed by the 1f 8b prefix, whatever the extension).

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::linalg::{Rng, Vector};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Number of classes in the datasets this crate targets.
pub const NUM_CLASSES: usize = 10;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Images as flattened [0,1] vectors (pixel byte / 255).
#[derive(Debug, Clone)]
pub struct ImageSet {
    rows: usize,
    cols: usize,
    images: Vec<Vector>,
}

impl ImageSet {
    pub fn count(&self) -> usize {
        self.images.len()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn image(&self, i: usize) -> &Vector {
        &self.images[i]
    }
}

/// Class labels, each in [0, NUM_CLASSES).
#[derive(Debug, Clone)]
pub struct LabelSet {
    labels: Vec<u8>,
}

impl LabelSet {
    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })?;
        return Ok(out);
    }
    Ok(raw)
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::IdxLength {
            path: path.to_path_buf(),
            expected: end,
            actual: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parses an IDX image file; pixels are mapped to [0,1] by p/255.
pub fn load_idx_images(path: &Path) -> Result<ImageSet> {
    let bytes = read_file(path)?;
    let magic = read_u32_be(&bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::IdxMagic {
            path: path.to_path_buf(),
            expected: IMAGES_MAGIC,
            actual: magic,
        });
    }
    let count = read_u32_be(&bytes, 4, path)? as usize;
    let rows = read_u32_be(&bytes, 8, path)? as usize;
    let cols = read_u32_be(&bytes, 12, path)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() != expected {
        return Err(Error::IdxLength {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len(),
        });
    }
    let px = rows * cols;
    let images = (0..count)
        .map(|i| {
            let start = 16 + i * px;
            Vector::new(
                bytes[start..start + px]
                    .iter()
                    .map(|&b| f64::from(b) / 255.0)
                    .collect(),
            )
        })
        .collect();
    Ok(ImageSet { rows, cols, images })
}

/// Parses an IDX label file; every label must be a valid class index.
pub fn load_idx_labels(path: &Path) -> Result<LabelSet> {
    let bytes = read_file(path)?;
    let magic = read_u32_be(&bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(Error::IdxMagic {
            path: path.to_path_buf(),
            expected: LABELS_MAGIC,
            actual: magic,
        });
    }
    let count = read_u32_be(&bytes, 4, path)? as usize;
    let expected = 8 + count;
    if bytes.len() != expected {
        return Err(Error::IdxLength {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len(),
        });
    }
    let labels = bytes[8..].to_vec();
    for (index, &label) in labels.iter().enumerate() {
        if label as usize >= NUM_CLASSES {
            return Err(Error::LabelRange {
                index,
                label: label as usize,
                num_classes: NUM_CLASSES,
            });
        }
    }
    Ok(LabelSet { labels })
}

/// Resolves `dir/base`, falling back to `dir/base.gz`.
pub fn resolve_idx_path(dir: &Path, base: &str) -> Result<PathBuf> {
    let plain = dir.join(base);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{base}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    Err(Error::Io {
        path: plain,
        source: std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no {base} or {base}.gz in {}", dir.display()),
        ),
    })
}

/// Indicator vector of `label` among `num_classes` entries.
pub fn one_hot(label: usize, num_classes: usize) -> Result<Vector> {
    if label >= num_classes {
        return Err(Error::LabelRange {
            index: label,
            label,
            num_classes,
        });
    }
    let mut v = vec![0.0; num_classes];
    v[label] = 1.0;
    Ok(Vector::new(v))
}

/// Seeded uniform shuffle of all sample indices, chunked into batches; the
/// last batch may be smaller. Every index lands in exactly one batch.
pub fn make_batches(
    images: &ImageSet,
    labels: &LabelSet,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<usize>>> {
    if images.count() != labels.count() {
        return Err(Error::Shape {
            op: "make_batches",
            detail: format!("{} images vs {} labels", images.count(), labels.count()),
        });
    }
    Ok(batch_indices(images.count(), batch_size, Some(rng)))
}

/// Index batching without the dataset types; `rng = None` keeps file order.
pub fn batch_indices(n: usize, batch_size: usize, rng: Option<&mut Rng>) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut idx: Vec<usize> = (0..n).collect();
    if let Some(r) = rng {
        r.shuffle(&mut idx);
    }
    idx.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Paired inputs and one-hot targets ready for training.
#[derive(Debug, Clone)]
pub struct Dataset {
    inputs: Vec<Vector>,
    targets: Vec<Vector>,
    labels: Vec<u8>,
    num_classes: usize,
}

impl Dataset {
    /// Builds a training-ready dataset from parsed IDX sets, consuming the
    /// images to avoid holding the pixels twice.
    pub fn from_idx(images: ImageSet, labels: LabelSet, num_classes: usize) -> Result<Self> {
        if images.count() != labels.count() {
            return Err(Error::Shape {
                op: "Dataset::from_idx",
                detail: format!("{} images vs {} labels", images.count(), labels.count()),
            });
        }
        let targets = labels
            .labels
            .iter()
            .map(|&l| one_hot(l as usize, num_classes))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            inputs: images.images,
            targets,
            labels: labels.labels,
            num_classes,
        })
    }

    /// Seeded stand-in dataset: standard-normal inputs, uniform random
    /// labels. Lets gradient checks and rule comparisons run without files.
    pub fn synthetic(input_dim: usize, num_classes: usize, n: usize, rng: &mut Rng) -> Self {
        let mut inputs = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            inputs.push(Vector::new((0..input_dim).map(|_| rng.normal()).collect()));
            let label = rng.below(num_classes);
            targets.push(one_hot(label, num_classes).unwrap());
            labels.push(label as u8);
        }
        Dataset {
            inputs,
            targets,
            labels,
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input(&self, i: usize) -> &Vector {
        &self.inputs[i]
    }

    pub fn target(&self, i: usize) -> &Vector {
        &self.targets[i]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Fraction of samples labelled with class `c`.
    pub fn class_frequency(&self, c: u8) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.labels.iter().filter(|&&l| l == c).count() as f64 / self.len() as f64
    }
}

/// Loads the four canonical files from a directory into train/test datasets.
pub fn load_dataset_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train_images = load_idx_images(&resolve_idx_path(dir, TRAIN_IMAGES)?)?;
    let train_labels = load_idx_labels(&resolve_idx_path(dir, TRAIN_LABELS)?)?;
    let test_images = load_idx_images(&resolve_idx_path(dir, TEST_IMAGES)?)?;
    let test_labels = load_idx_labels(&resolve_idx_path(dir, TEST_LABELS)?)?;
    Ok((
        Dataset::from_idx(train_images, train_labels, NUM_CLASSES)?,
        Dataset::from_idx(test_images, test_labels, NUM_CLASSES)?,
    ))
}
