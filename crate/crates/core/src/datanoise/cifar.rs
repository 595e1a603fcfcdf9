//! CIFAR-10 binary batches: records of one label byte followed by 3072
//! pixel bytes (1024 R, 1024 G, 1024 B; each plane row-major 32×32).

use std::fs;
use std::path::Path;

use super::dataset::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::ndgrad::Tensor;

pub const SIDE: usize = 32;
pub const CHANNELS: usize = 3;
pub const PIXELS: usize = CHANNELS * SIDE * SIDE;
pub const RECORD_LEN: usize = 1 + PIXELS;
pub const RECORDS_PER_BATCH: usize = 10_000;
pub const CLASSES: usize = 10;

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

pub fn encode_record(label: u8, pixels: &[f32]) -> Vec<u8> {
    assert_eq!(pixels.len(), PIXELS);
    let mut out = Vec::with_capacity(RECORD_LEN);
    out.push(label);
    out.extend(pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

fn parse_batch(bytes: &[u8], path: &Path, labels: &mut Vec<usize>, pixels: &mut Vec<f32>) -> Result<()> {
    let expected = RECORDS_PER_BATCH * RECORD_LEN;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} bytes ({RECORDS_PER_BATCH} records), found {}", bytes.len()),
        ));
    }
    for (r, record) in bytes.chunks_exact(RECORD_LEN).enumerate() {
        let label = record[0] as usize;
        if label >= CLASSES {
            return Err(Error::format(path, format!("record {r} has label byte {label}")));
        }
        labels.push(label);
        pixels.extend(record[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok(())
}

fn load_files(dir: &Path, files: &[&str], split: Split) -> Result<LabeledDataset> {
    let mut labels = Vec::with_capacity(files.len() * RECORDS_PER_BATCH);
    let mut pixels = Vec::with_capacity(files.len() * RECORDS_PER_BATCH * PIXELS);
    for name in files {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        parse_batch(&bytes, &path, &mut labels, &mut pixels)?;
    }
    let images = Tensor::new([labels.len(), CHANNELS, SIDE, SIDE], pixels)?;
    LabeledDataset::new(images, labels, CLASSES, split)
}

/// Loads the five training batches and the test batch from `dir`.
pub fn load_cifar10(dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let train = load_files(dir, &TRAIN_FILES, Split::Train)?;
    let test = load_files(dir, &[TEST_FILE], Split::Test)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn known_image() -> Vec<f32> {
        (0..PIXELS).map(|i| ((i * 37) % 256) as f32 / 255.0).collect()
    }

    fn write_batch(path: &Path, label_of: impl Fn(usize) -> u8) {
        let img = encode_record(0, &known_image());
        let mut bytes = Vec::with_capacity(RECORDS_PER_BATCH * RECORD_LEN);
        for r in 0..RECORDS_PER_BATCH {
            bytes.push(label_of(r));
            bytes.extend_from_slice(&img[1..]);
        }
        fs::write(path, bytes).unwrap();
    }

    #[test]
    fn record_round_trips_bytes() {
        let img = known_image();
        let bytes = encode_record(7, &img);
        let mut labels = Vec::new();
        let mut pixels = Vec::new();
        let mut batch = Vec::new();
        for _ in 0..RECORDS_PER_BATCH {
            batch.extend_from_slice(&bytes);
        }
        parse_batch(&batch, Path::new("mem"), &mut labels, &mut pixels).unwrap();
        assert_eq!(labels[0], 7);
        assert_eq!(encode_record(7, &pixels[..PIXELS]), bytes);
        assert_eq!(&pixels[..PIXELS], &img[..]);
    }

    #[test]
    fn truncated_batch_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(TEST_FILE);
        fs::write(&path, vec![0u8; RECORD_LEN * 3 + 5]).unwrap();
        let err = load_files(dir.path(), &[TEST_FILE], Split::Test).unwrap_err();
        assert_eq!(err.category(), "format");
    }

    #[test]
    fn bad_label_byte_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        write_batch(&dir.path().join(TEST_FILE), |r| if r == 17 { 10 } else { 3 });
        let err = load_files(dir.path(), &[TEST_FILE], Split::Test).unwrap_err();
        assert_eq!(err.category(), "format");
        assert!(err.to_string().contains("record 17"));
    }

    #[test]
    fn missing_file_is_io_error_naming_it() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_cifar10(dir.path()).unwrap_err();
        assert_eq!(err.category(), "io");
        assert!(err.to_string().contains("data_batch_1.bin"));
    }

    #[test]
    fn well_formed_directory_loads_all_splits() {
        let dir = tempfile::tempdir().unwrap();
        for name in TRAIN_FILES.iter().chain([&TEST_FILE]) {
            write_batch(&dir.path().join(name), |r| (r % CLASSES) as u8);
        }
        let (train, test) = load_cifar10(dir.path()).unwrap();
        assert_eq!(train.len(), 50_000);
        assert_eq!(test.len(), 10_000);
        assert_eq!(train.class_count(), 10);
        assert_eq!(train.image_shape(), [3, 32, 32]);
        assert_eq!(test.split(), Split::Test);
    }
}
