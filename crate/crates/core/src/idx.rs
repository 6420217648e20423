//! Reader for MNIST-style IDX files (big-endian headers, unsigned byte data).

use std::path::{Path, PathBuf};

use crate::data::{Example, ExamplePool};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, thiserror::Error)]
pub enum IdxError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32, IdxError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxError::Truncated {
            expected: offset + 4,
            found: bytes.len(),
        })
}

fn payload(bytes: &[u8], header: usize, len: usize) -> Result<&[u8], IdxError> {
    let expected = header + len;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    Ok(&bytes[header..expected])
}

/// Parses an image file into `(rows × cols, pixels)`; pixels are one flat buffer.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, &[u8]), IdxError> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(IdxError::BadMagic {
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let pixels = payload(bytes, 16, count * rows * cols)?;
    Ok((count, rows * cols, pixels))
}

pub fn parse_labels(bytes: &[u8]) -> Result<&[u8], IdxError> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(IdxError::BadMagic {
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    payload(bytes, 8, count)
}

/// Builds a pool from raw image and label file contents; pixels scale to `[0, 1]`.
pub fn pool_from_bytes(images: &[u8], labels: &[u8]) -> Result<ExamplePool, IdxError> {
    let (count, dim, pixels) = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if labels.len() != count {
        return Err(IdxError::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    let examples = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| Example {
            id: i,
            features: pixels[i * dim..(i + 1) * dim]
                .iter()
                .map(|&p| f64::from(p) / 255.0)
                .collect(),
            label: usize::from(label),
        })
        .collect();
    let class_count = labels.iter().max().map_or(0, |&m| usize::from(m) + 1);
    Ok(ExamplePool {
        class_count,
        input_dim: dim,
        examples,
    })
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<ExamplePool, IdxError> {
    let read = |path: &Path| {
        std::fs::read(path).map_err(|source| IdxError::Io {
            path: path.to_owned(),
            source,
        })
    };
    pool_from_bytes(&read(images_path)?, &read(labels_path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images_fixture() -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 3];
        b.extend_from_slice(&[0, 255, 0, 51, 102, 153, 204, 255, 0]);
        b.extend_from_slice(&[255; 9]);
        b
    }

    fn labels_fixture(n: u8) -> Vec<u8> {
        let mut b = vec![0, 0, 8, 1, 0, 0, 0, n];
        b.extend((0..n).map(|i| i + 3));
        b
    }

    #[test]
    fn parses_hand_built_pair() {
        let pool = pool_from_bytes(&images_fixture(), &labels_fixture(2)).unwrap();
        assert_eq!(pool.len(), 2);
        assert_eq!(pool.input_dim, 9);
        assert_eq!(pool.examples[0].features[0], 0.0);
        assert_eq!(pool.examples[0].features[1], 1.0);
        assert!((pool.examples[0].features[3] - 0.2).abs() < 1e-15);
        assert!(pool.examples[1].features.iter().all(|&x| x == 1.0));
        assert_eq!((pool.examples[0].label, pool.examples[1].label), (3, 4));
        assert_eq!(pool.class_count, 5);
    }

    #[test]
    fn reports_distinct_errors() {
        assert!(matches!(
            pool_from_bytes(&images_fixture(), &labels_fixture(3)),
            Err(IdxError::CountMismatch { images: 2, labels: 3 })
        ));
        let mut bad = images_fixture();
        bad[3] = 1;
        assert!(matches!(
            pool_from_bytes(&bad, &labels_fixture(2)),
            Err(IdxError::BadMagic {
                expected: IMAGES_MAGIC,
                found: 0x0801
            })
        ));
        let short = &images_fixture()[..20];
        assert!(matches!(
            pool_from_bytes(short, &labels_fixture(2)),
            Err(IdxError::Truncated {
                expected: 34,
                found: 20
            })
        ));
        assert!(matches!(parse_labels(&[0, 0, 8]), Err(IdxError::Truncated { .. })));
    }

    #[test]
    fn loads_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
        std::fs::write(&img, images_fixture()).unwrap();
        std::fs::write(&lab, labels_fixture(2)).unwrap();
        assert_eq!(load_idx(&img, &lab).unwrap().len(), 2);
        assert!(matches!(
            load_idx(&dir.path().join("missing"), &lab),
            Err(IdxError::Io { .. })
        ));
    }
}
