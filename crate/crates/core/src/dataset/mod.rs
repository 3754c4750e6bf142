//! MNIST ingestion.
//!
//! Images come from big-endian IDX containers (optionally gzip-wrapped) and
//! are normalized with `x / 127.5 - 1`, so raw byte 0 maps to -1.0 and 255 to
//! +1.0. Sample order is always file order.

mod fetch;
mod idx;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use fetch::{fetch_remote, sha256_file, sha256_hex};
pub use idx::{encode_idx_images, encode_idx_labels, parse_idx_images, parse_idx_labels};

use crate::error::{Error, Result};

/// Pixels per image (28 x 28).
pub const PIXELS: usize = 784;
/// Number of numeral classes.
pub const CLASSES: usize = 10;

/// Maps a raw grey level to the network's input range.
#[inline]
pub fn normalize_pixel(raw: u8) -> f64 {
    raw as f64 / 127.5 - 1.0
}

/// Inverse of [`normalize_pixel`] for values produced by it.
#[inline]
pub fn denormalize_pixel(value: f64) -> u8 {
    ((value + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Argument(format!("unknown split `{other}`"))),
        }
    }
}

/// One normalized image and its class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub pixels: Vec<f64>,
    pub label: u8,
}

impl LabeledSample {
    pub fn new(pixels: Vec<f64>, label: u8) -> Result<Self> {
        if pixels.len() != PIXELS {
            return Err(Error::Shape(format!(
                "sample has {} pixels, expected {PIXELS}",
                pixels.len()
            )));
        }
        if label as usize >= CLASSES {
            return Err(Error::Data(format!("label {label} outside 0..{CLASSES}")));
        }
        if let Some(p) = pixels.iter().find(|p| !(-1.0..=1.0).contains(*p)) {
            return Err(Error::Data(format!("pixel value {p} outside [-1, 1]")));
        }
        Ok(LabeledSample { pixels, label })
    }
}

/// An immutable, ordered collection of samples from one split.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
    split: Split,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledSample>, split: Split) -> Self {
        Dataset { samples, split }
    }

    /// Reads an image/label file pair. Files ending in `.gz` are inflated.
    pub fn load_idx(images: &Path, labels: &Path, split: Split) -> Result<Self> {
        let image_bytes = idx::read_maybe_gz(images)?;
        let label_bytes = idx::read_maybe_gz(labels)?;
        let images_name = images.display().to_string();
        let labels_name = labels.display().to_string();
        let (count, raw) = parse_idx_images(&image_bytes, &images_name)?;
        let label_values = parse_idx_labels(&label_bytes, &labels_name)?;
        if label_values.len() != count {
            return Err(Error::Consistency(format!(
                "{images_name} holds {count} images but {labels_name} holds {} labels",
                label_values.len()
            )));
        }
        let samples = raw
            .chunks_exact(PIXELS)
            .zip(label_values)
            .map(|(px, label)| LabeledSample {
                pixels: px.iter().copied().map(normalize_pixel).collect(),
                label,
            })
            .collect();
        Ok(Dataset { samples, split })
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = u8> + '_ {
        self.samples.iter().map(|s| s.label)
    }

    pub fn class_counts(&self) -> [usize; CLASSES] {
        let mut counts = [0; CLASSES];
        for l in self.labels() {
            counts[l as usize] += 1;
        }
        counts
    }

    /// The first `n` samples (or all of them).
    pub fn truncated(&self, n: usize) -> Dataset {
        Dataset {
            samples: self.samples[..n.min(self.samples.len())].to_vec(),
            split: self.split,
        }
    }

    /// Re-serializes the pixel payload and labels as IDX files.
    pub fn to_idx(&self) -> (Vec<u8>, Vec<u8>) {
        let raw: Vec<u8> = self
            .samples
            .iter()
            .flat_map(|s| s.pixels.iter().map(|&p| denormalize_pixel(p)))
            .collect();
        let labels: Vec<u8> = self.labels().collect();
        (encode_idx_images(&raw, self.len(), 28, 28), encode_idx_labels(&labels))
    }
}

/// `+1.0` where the label equals `numeral`, `-1.0` elsewhere.
pub fn one_vs_rest_targets(dataset: &Dataset, numeral: usize) -> Result<Vec<f64>> {
    check_numeral(numeral)?;
    Ok(dataset
        .labels()
        .map(|l| if l as usize == numeral { 1.0 } else { -1.0 })
        .collect())
}

pub(crate) fn check_numeral(numeral: usize) -> Result<()> {
    if numeral < CLASSES {
        Ok(())
    } else {
        Err(Error::Argument(format!("numeral {numeral} outside 0..{CLASSES}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(labels: &[u8]) -> Dataset {
        let samples = labels
            .iter()
            .map(|&l| LabeledSample {
                pixels: vec![0.0; PIXELS],
                label: l,
            })
            .collect();
        Dataset::new(samples, Split::Test)
    }

    #[test]
    fn normalization_endpoints() {
        assert_eq!(normalize_pixel(0), -1.0);
        assert_eq!(normalize_pixel(255), 1.0);
        assert!((normalize_pixel(128) - 0.003_921_568_627_451).abs() < 1e-12);
    }

    #[test]
    fn normalization_is_strictly_monotone_and_invertible() {
        for b in 0u8..255 {
            assert!(normalize_pixel(b) < normalize_pixel(b + 1));
        }
        for b in 0u8..=255 {
            assert_eq!(denormalize_pixel(normalize_pixel(b)), b);
        }
    }

    #[test]
    fn one_vs_rest_examples() {
        let ds = tiny(&[3, 1, 3]);
        assert_eq!(one_vs_rest_targets(&ds, 3).unwrap(), vec![1.0, -1.0, 1.0]);
        assert_eq!(one_vs_rest_targets(&ds, 7).unwrap(), vec![-1.0; 3]);
        assert!(matches!(one_vs_rest_targets(&ds, 10), Err(Error::Argument(_))));
    }

    #[test]
    fn one_vs_rest_partitions_every_numeral() {
        let ds = tiny(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 4]);
        for c in 0..CLASSES {
            let t = one_vs_rest_targets(&ds, c).unwrap();
            let pos = t.iter().filter(|&&v| v == 1.0).count();
            let neg = t.iter().filter(|&&v| v == -1.0).count();
            assert_eq!(pos + neg, ds.len());
            assert_eq!(pos, ds.class_counts()[c]);
        }
    }

    #[test]
    fn sample_validation() {
        assert!(LabeledSample::new(vec![0.0; 10], 1).is_err());
        assert!(LabeledSample::new(vec![0.0; PIXELS], 10).is_err());
        assert!(LabeledSample::new(vec![1.5; PIXELS], 1).is_err());
        assert!(LabeledSample::new(vec![1.0; PIXELS], 9).is_ok());
    }
}
