use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Downloads `url` to `dest`, inflating it first when the URL ends in `.gz`.
///
/// `checksum` is the sha256 of the file as stored at `dest` (after
/// inflation). An existing `dest` with a matching digest is returned without
/// touching the network. A mismatching download is discarded.
pub fn fetch_remote(url: &str, checksum: &str, dest: &Path) -> Result<PathBuf> {
    let expected = checksum.to_ascii_lowercase();
    if dest.exists() && sha256_file(dest)? == expected {
        log::debug!("{} already present and verified", dest.display());
        return Ok(dest.to_path_buf());
    }

    log::info!("fetching {url}");
    let transport = |message: String| Error::Transport {
        url: url.to_string(),
        message,
    };
    let response = ureq::get(url).call().map_err(|e| transport(e.to_string()))?;
    let mut body = response.into_body();
    let body = body
        .with_config()
        .limit(256 * 1024 * 1024)
        .read_to_vec()
        .map_err(|e| transport(e.to_string()))?;

    let payload = if url.ends_with(".gz") {
        let mut out = Vec::new();
        GzDecoder::new(body.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Data(format!("{url} is not valid gzip: {e}")))?;
        out
    } else {
        body
    };

    let actual = sha256_hex(&payload);
    if actual != expected {
        return Err(Error::Integrity {
            path: dest.to_path_buf(),
            expected,
            actual,
        });
    }

    if let Some(parent) = dest.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let partial = dest.with_extension("partial");
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&partial)?;
        f.write_all(&payload)?;
        f.sync_all()?;
        fs::rename(&partial, dest)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&partial);
        Error::io(dest, e)
    })?;
    Ok(dest.to_path_buf())
}
