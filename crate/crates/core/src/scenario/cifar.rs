//! CIFAR-10 binary batches and the transport / non-transport binarization.

use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 32;
pub const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const RECORD_LEN: usize = 1 + 3 * PIXELS;

pub const CLASS_NAMES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

/// Original classes mapped to binary label 1.
pub const TRANSPORT_CLASSES: [usize; 5] = [0, 1, 7, 8, 9];

/// A 32×32×3 image, channels interleaved, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::shape(format!(
                "image {height}x{width}x3 needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Image { height, width, data })
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Parses concatenated CIFAR-10 records: one label byte followed by 1024 red,
/// 1024 green and 1024 blue bytes, each plane row-major.
pub fn read_cifar10_batch(bytes: &[u8]) -> Result<Vec<(u8, Image)>> {
    if bytes.len() % RECORD_LEN != 0 {
        return Err(Error::Format(format!(
            "CIFAR-10 batch length {} is not a multiple of {RECORD_LEN}",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(RECORD_LEN)
        .enumerate()
        .map(|(index, record)| {
            let label = record[0];
            if label > 9 {
                return Err(Error::CorruptRecord {
                    index,
                    reason: format!("label byte {label} > 9"),
                });
            }
            let planes = &record[1..];
            let mut data = vec![0f32; 3 * PIXELS];
            for p in 0..PIXELS {
                for c in 0..3 {
                    data[p * 3 + c] = f32::from(planes[c * PIXELS + p]) / 255.0;
                }
            }
            Ok((label, Image::new(IMAGE_SIDE, IMAGE_SIDE, data)?))
        })
        .collect()
}

pub fn read_cifar10_file(path: &Path) -> Result<Vec<(u8, Image)>> {
    let bytes = std::fs::read(path)?;
    read_cifar10_batch(&bytes)
}

/// 1 for transportation means (airplane, automobile, horse, ship, truck), 0 otherwise.
pub fn binarize_label(class_id: usize) -> Result<usize> {
    if class_id > 9 {
        return Err(Error::invalid(format!("CIFAR-10 class {class_id} out of range")));
    }
    Ok(usize::from(TRANSPORT_CLASSES.contains(&class_id)))
}

/// Original classes belonging to a binary label, in ascending order.
pub fn modes_of_binary_class(label: usize) -> Vec<usize> {
    (0..10)
        .filter(|&c| binarize_label(c).ok() == Some(label))
        .collect()
}
