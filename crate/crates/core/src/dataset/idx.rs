use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{CLASSES, PIXELS};
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

pub(crate) fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, file: &str, field: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            file: file.to_string(),
            field,
            detail: format!("file ends before byte {}", offset + 4),
        })
}

/// Returns `(count, raw pixel bytes)`; images must be 28 x 28.
pub fn parse_idx_images<'a>(bytes: &'a [u8], file: &str) -> Result<(usize, &'a [u8])> {
    let bad = |field, detail: String| Error::Format {
        file: file.to_string(),
        field,
        detail,
    };
    let magic = be_u32(bytes, 0, file, "magic")?;
    if magic != IMAGE_MAGIC {
        return Err(bad(
            "magic",
            format!("expected {IMAGE_MAGIC:#010x}, found {magic:#010x}"),
        ));
    }
    let count = be_u32(bytes, 4, file, "count")? as usize;
    let rows = be_u32(bytes, 8, file, "rows")? as usize;
    let cols = be_u32(bytes, 12, file, "cols")? as usize;
    if rows * cols != PIXELS {
        return Err(bad(
            "rows/cols",
            format!("{rows}x{cols} images, expected {PIXELS} pixels"),
        ));
    }
    let payload = &bytes[16..];
    if payload.len() != count * PIXELS {
        return Err(bad(
            "payload",
            format!(
                "header declares {count} images ({} bytes) but {} bytes follow",
                count * PIXELS,
                payload.len()
            ),
        ));
    }
    Ok((count, payload))
}

pub fn parse_idx_labels(bytes: &[u8], file: &str) -> Result<Vec<u8>> {
    let bad = |field, detail: String| Error::Format {
        file: file.to_string(),
        field,
        detail,
    };
    let magic = be_u32(bytes, 0, file, "magic")?;
    if magic != LABEL_MAGIC {
        return Err(bad(
            "magic",
            format!("expected {LABEL_MAGIC:#010x}, found {magic:#010x}"),
        ));
    }
    let count = be_u32(bytes, 4, file, "count")? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(bad(
            "payload",
            format!("header declares {count} labels but {} bytes follow", payload.len()),
        ));
    }
    if let Some(l) = payload.iter().find(|&&l| l as usize >= CLASSES) {
        return Err(bad("label", format!("value {l} outside 0..{CLASSES}")));
    }
    Ok(payload.to_vec())
}

pub fn encode_idx_images(raw: &[u8], count: usize, rows: u32, cols: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + raw.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(count as u32).to_be_bytes());
    out.extend_from_slice(&rows.to_be_bytes());
    out.extend_from_slice(&cols.to_be_bytes());
    out.extend_from_slice(raw);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
