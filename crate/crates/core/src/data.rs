//! IDX (MNIST) parsing, normalization and deterministic batching.
//!
//! Images are scaled by `1/255` and zero-padded by two pixels on every side,
//! so 28x28 digits become the 32x32 inputs LeNet-5 expects.

use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{Error, IdxError, Result};
use crate::rng::seeded_permutation;
use crate::tensor::{Dims4, Tensor4};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;
/// Zero padding added on each side of every image.
pub const PAD: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let len = self.rows * self.cols;
        &self.pixels[i * len..(i + 1) * len]
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxError::Truncated {
            expected: at + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), IdxError> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(IdxError::BadMagic { found, expected });
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages, IdxError> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..expected].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let labels = bytes[8..expected].to_vec();
    if let Some((index, &label)) = labels
        .iter()
        .enumerate()
        .find(|(_, &l)| l as usize >= NUM_CLASSES)
    {
        return Err(IdxError::LabelOutOfRange { index, label });
    }
    Ok(labels)
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGE_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Read a file, transparently inflating it when it starts with the gzip magic.
pub fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Locations of the four IDX files plus batching parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetHandle {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    /// Keep only the first `n` training samples.
    pub train_limit: Option<usize>,
    /// Keep only the first `n` test samples.
    pub test_limit: Option<usize>,
}

impl DatasetHandle {
    /// Standard MNIST file names inside `dir`; a `.gz` variant is used when
    /// only the compressed file exists.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        let pick = |stem: &str| {
            let plain = dir.join(stem);
            let gz = dir.join(format!("{stem}.gz"));
            if !plain.exists() && gz.exists() {
                gz
            } else {
                plain
            }
        };
        DatasetHandle {
            train_images: pick("train-images-idx3-ubyte"),
            train_labels: pick("train-labels-idx1-ubyte"),
            test_images: pick("t10k-images-idx3-ubyte"),
            test_labels: pick("t10k-labels-idx1-ubyte"),
            batch_size: 256,
            shuffle_seed: 0,
            train_limit: None,
            test_limit: None,
        }
    }

    pub fn paths(&self) -> [&Path; 4] {
        [
            &self.train_images,
            &self.train_labels,
            &self.test_images,
            &self.test_labels,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch {
    pub images: Tensor4,
    pub labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(images: Tensor4, labels: Vec<usize>) -> Result<Self> {
        if images.dims().n != labels.len() {
            return Err(Error::shape(format!(
                "batch has {} images but {} labels",
                images.dims().n,
                labels.len()
            )));
        }
        Ok(LabeledBatch { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One split held in memory as normalized, padded `f32` images.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitData {
    pub side_h: usize,
    pub side_w: usize,
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
}

impl SplitData {
    pub fn from_idx(images: &IdxImages, labels: &[u8], limit: Option<usize>) -> Result<Self> {
        if images.count != labels.len() {
            return Err(Error::shape(format!(
                "{} images but {} labels",
                images.count,
                labels.len()
            )));
        }
        let count = limit.map_or(images.count, |l| l.min(images.count));
        let (h, w) = (images.rows + 2 * PAD, images.cols + 2 * PAD);
        let mut data = vec![0.0f32; count * h * w];
        for i in 0..count {
            let src = images.image(i);
            let dst = &mut data[i * h * w..(i + 1) * h * w];
            for r in 0..images.rows {
                for c in 0..images.cols {
                    dst[(r + PAD) * w + c + PAD] = src[r * images.cols + c] as f32 / 255.0;
                }
            }
        }
        Ok(SplitData {
            side_h: h,
            side_w: w,
            images: data,
            labels: labels[..count].iter().map(|&l| l as usize).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn gather(&self, order: &[usize]) -> LabeledBatch {
        let plane = self.side_h * self.side_w;
        let mut data = Vec::with_capacity(order.len() * plane);
        for &i in order {
            data.extend_from_slice(&self.images[i * plane..(i + 1) * plane]);
        }
        LabeledBatch {
            images: Tensor4::from_vec(Dims4::new(order.len(), 1, self.side_h, self.side_w), data)
                .expect("gather sizes are consistent"),
            labels: order.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Batches in stored order, or in a seeded shuffled order. The final short batch is kept.
    pub fn batches(&self, batch_size: usize, shuffle: Option<u64>) -> Result<Vec<LabeledBatch>> {
        Ok(self.iter_batches(batch_size, shuffle)?.collect())
    }

    pub fn iter_batches(
        &self,
        batch_size: usize,
        shuffle: Option<u64>,
    ) -> Result<impl Iterator<Item = LabeledBatch> + '_> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        let order = match shuffle {
            Some(seed) => seeded_permutation(self.len(), seed),
            None => (0..self.len()).collect(),
        };
        let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
        Ok(chunks.into_iter().map(move |idx| self.gather(&idx)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: SplitData,
    pub test: SplitData,
}

impl Dataset {
    pub fn load(handle: &DatasetHandle) -> Result<Self> {
        let load_split = |img: &Path, lab: &Path, limit| -> Result<SplitData> {
            let images = parse_idx_images(&read_maybe_gzip(img)?).map_err(|source| Error::Idx {
                path: img.to_path_buf(),
                source,
            })?;
            let labels = parse_idx_labels(&read_maybe_gzip(lab)?).map_err(|source| Error::Idx {
                path: lab.to_path_buf(),
                source,
            })?;
            SplitData::from_idx(&images, &labels, limit)
        };
        Ok(Dataset {
            train: load_split(&handle.train_images, &handle.train_labels, handle.train_limit)?,
            test: load_split(&handle.test_images, &handle.test_labels, handle.test_limit)?,
        })
    }

    pub fn split(&self, split: Split) -> &SplitData {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

/// Load the split named by `split` and cut it into batches of `handle.batch_size`.
/// Training order is shuffled with `handle.shuffle_seed`; test order is preserved.
pub fn make_batches(handle: &DatasetHandle, split: Split) -> Result<Vec<LabeledBatch>> {
    let (img, lab, limit) = match split {
        Split::Train => (&handle.train_images, &handle.train_labels, handle.train_limit),
        Split::Test => (&handle.test_images, &handle.test_labels, handle.test_limit),
    };
    let images = parse_idx_images(&read_maybe_gzip(img)?).map_err(|source| Error::Idx {
        path: img.clone(),
        source,
    })?;
    let labels = parse_idx_labels(&read_maybe_gzip(lab)?).map_err(|source| Error::Idx {
        path: lab.clone(),
        source,
    })?;
    let data = SplitData::from_idx(&images, &labels, limit)?;
    let shuffle = (split == Split::Train).then_some(handle.shuffle_seed);
    data.batches(handle.batch_size, shuffle)
}
