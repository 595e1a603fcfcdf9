use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndgrad::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Images with clean labels and, after corruption, noisy labels.
///
/// Training code only ever sees [`TrainingBatch`]es, which carry the noisy
/// labels and an opaque [`AuditFlags`] record. Clean labels are reachable
/// through [`LabeledDataset::ground_truth`] for evaluation and auditing.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    images: Tensor<f32>,
    clean_labels: Vec<usize>,
    noisy_labels: Vec<usize>,
    clean_flag: Vec<bool>,
    class_count: usize,
    split: Split,
    corrupted: bool,
}

/// Read-only view of the clean labels.
#[derive(Clone, Copy, Debug)]
pub struct GroundTruth<'a> {
    labels: &'a [usize],
}

impl<'a> GroundTruth<'a> {
    pub fn labels(&self) -> &'a [usize] {
        self.labels
    }
}

/// Per-sample "noisy label equals clean label" bits for one batch. Only
/// aggregate counts over a selection can be read back.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditFlags(Vec<bool>);

impl AuditFlags {
    pub fn new(flags: Vec<bool>) -> Self {
        Self(flags)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of clean samples among `selection` (batch-local indices).
    pub fn clean_count(&self, selection: &[usize]) -> usize {
        selection.iter().filter(|&&i| self.0[i]).count()
    }
}

/// Images and noisy labels for a minibatch, in batch order.
#[derive(Clone, Debug)]
pub struct TrainingBatch {
    /// Dataset indices of the batch members.
    pub indices: Vec<usize>,
    /// `[B, C, H, W]`.
    pub images: Tensor<f32>,
    pub noisy_labels: Vec<usize>,
    pub audit: AuditFlags,
}

impl LabeledDataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, class_count: usize, split: Split) -> Result<Self> {
        let shape = images.shape();
        if shape.len() != 4 {
            return Err(Error::dim("dataset", format!("images must be [N,C,H,W], got {shape:?}")));
        }
        if shape[0] != labels.len() {
            return Err(Error::dim(
                "dataset",
                format!("{} images but {} labels", shape[0], labels.len()),
            ));
        }
        if class_count < 2 {
            return Err(Error::Validation(format!("class_count must be >= 2, got {class_count}")));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Validation(format!("label {bad} outside [0, {class_count})")));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation("pixel values must lie in [0, 1]".into()));
        }
        let n = labels.len();
        Ok(Self {
            images,
            noisy_labels: labels.clone(),
            clean_labels: labels,
            clean_flag: vec![true; n],
            class_count,
            split,
            corrupted: false,
        })
    }

    pub fn len(&self) -> usize {
        self.clean_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean_labels.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn is_corrupted(&self) -> bool {
        self.corrupted
    }

    /// `[C, H, W]` of one image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn image(&self, i: usize) -> Tensor<f32> {
        let [c, h, w] = self.image_shape();
        Tensor::new([c, h, w], self.images.row(i).to_vec()).expect("image slice has image shape")
    }

    pub fn noisy_labels(&self) -> &[usize] {
        &self.noisy_labels
    }

    pub fn clean_flags(&self) -> &[bool] {
        &self.clean_flag
    }

    pub fn ground_truth(&self) -> GroundTruth<'_> {
        GroundTruth {
            labels: &self.clean_labels,
        }
    }

    pub fn with_split(mut self, split: Split) -> Result<Self> {
        if self.corrupted && split == Split::Test {
            return Err(Error::Validation("a corrupted dataset cannot become a test split".into()));
        }
        self.split = split;
        Ok(self)
    }

    pub fn training_batch(&self, indices: &[usize]) -> TrainingBatch {
        TrainingBatch {
            indices: indices.to_vec(),
            images: self.images.select_rows(indices),
            noisy_labels: indices.iter().map(|&i| self.noisy_labels[i]).collect(),
            audit: AuditFlags::new(indices.iter().map(|&i| self.clean_flag[i]).collect()),
        }
    }

    /// Replaces the noisy labels; `clean_flag` is recomputed from them.
    pub(crate) fn set_noisy_labels(&mut self, noisy: Vec<usize>) {
        debug_assert_eq!(noisy.len(), self.clean_labels.len());
        self.clean_flag = noisy.iter().zip(&self.clean_labels).map(|(a, b)| a == b).collect();
        self.noisy_labels = noisy;
        self.corrupted = true;
    }

    /// Serializes to the flat binary dataset format (see [`FLAT_MAGIC`]).
    pub fn to_flat_bytes(&self) -> Vec<u8> {
        let [c, h, w] = self.image_shape();
        let header = [
            FLAT_VERSION,
            self.len() as u32,
            c as u32,
            h as u32,
            w as u32,
            self.class_count as u32,
            match self.split {
                Split::Train => 0,
                Split::Test => 1,
            },
            self.corrupted as u32,
        ];
        let mut out = Vec::with_capacity(8 + 4 * header.len() + 8 * self.len() + 4 * self.images.numel());
        out.extend_from_slice(FLAT_MAGIC);
        for v in header {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &l in self.clean_labels.iter().chain(&self.noisy_labels) {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        for &p in self.images.data() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_flat_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(8)? != FLAT_MAGIC {
            return Err(Error::format(origin, "bad magic"));
        }
        let version = r.u32()?;
        if version != FLAT_VERSION {
            return Err(Error::format(origin, format!("unsupported version {version}")));
        }
        let n = r.u32()? as usize;
        let (c, h, w) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let class_count = r.u32()? as usize;
        let split = match r.u32()? {
            0 => Split::Train,
            1 => Split::Test,
            other => return Err(Error::format(origin, format!("bad split tag {other}"))),
        };
        let corrupted = r.u32()? != 0;
        let clean = (0..n).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let noisy = (0..n).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let pixels = (0..n * c * h * w).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::format(origin, "trailing bytes after pixel block"));
        }
        let images = Tensor::new([n, c, h, w], pixels)?;
        let mut ds = Self::new(images, clean, class_count, split)
            .map_err(|e| Error::format(origin, e.to_string()))?;
        if corrupted {
            if let Some(&bad) = noisy.iter().find(|&&l| l >= class_count) {
                return Err(Error::format(origin, format!("noisy label {bad} out of range")));
            }
            ds.set_noisy_labels(noisy);
        }
        Ok(ds)
    }

    pub fn write_flat(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_flat_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_flat(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_flat_bytes(&bytes, path)
    }
}

/// Flat dataset file layout, all integers little-endian `u32`:
///
/// ```text
/// magic "CMLABDS\0" | version | N | C | H | W | classes | split (0 train, 1 test) | corrupted
/// clean labels  (N × u32)
/// noisy labels  (N × u32)
/// pixels        (N·C·H·W × f32 LE, row-major [N, C, H, W])
/// ```
pub const FLAT_MAGIC: &[u8; 8] = b"CMLABDS\0";
pub const FLAT_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.origin, "file truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
