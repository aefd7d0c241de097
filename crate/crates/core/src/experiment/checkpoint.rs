use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct Envelope<'a, B> {
    format_version: u32,
    kind: &'a str,
    body: &'a B,
}

#[derive(Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
}

#[derive(Deserialize)]
struct Owned<B> {
    body: B,
}

/// Writes `body` wrapped with a format version and a kind tag.
pub fn save<B: Serialize>(path: &Path, kind: &str, body: &B) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let s = serde_json::to_string(&Envelope { format_version: FORMAT_VERSION, kind, body })?;
    write_atomic(path, s.as_bytes())
}

/// Reads a checkpoint written by [`save`], checking version and kind.
pub fn load<B: DeserializeOwned>(path: &Path, kind: &str) -> Result<B> {
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path.to_path_buf()));
    }
    let s = fs::read_to_string(path)?;
    let header: Header = serde_json::from_str(&s)?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::FormatVersion { found: header.format_version, expected: FORMAT_VERSION });
    }
    if header.kind != kind {
        return Err(Error::Precondition(format!("{} holds a `{}`, expected `{kind}`", path.display(), header.kind)));
    }
    Ok(serde_json::from_str::<Owned<B>>(&s)?.body)
}

/// Write to a sibling temp file and rename, so readers never see half a file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// FNV-1a 64 digest as 16 hex digits.
pub fn digest(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}
