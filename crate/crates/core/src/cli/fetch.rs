//! MovieLens100K download: archive checksum, then only the ratings member
//! is extracted.

use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{input, Error, Result};

pub const MOVIELENS_URL: &str = "https://files.grouplens.org/datasets/movielens/ml-100k.zip";
pub const RATINGS_MEMBER: &str = "ml-100k/u.data";
pub const RATINGS_LINES: usize = 100_000;
const DOWNLOAD_LIMIT: u64 = 64 << 20;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FetchSource {
    Url(String),
    /// Offline: an archive already on disk.
    Archive(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FetchReport {
    pub archive_sha256: String,
    pub ratings: PathBuf,
    pub lines: usize,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn download(url: &str) -> Result<Vec<u8>> {
    let mut resp = ureq::get(url)
        .call()
        .map_err(|e| Error::Io(std::io::Error::other(format!("GET {url}: {e}"))))?;
    resp.body_mut()
        .with_config()
        .limit(DOWNLOAD_LIMIT)
        .read_to_vec()
        .map_err(|e| Error::Io(std::io::Error::other(format!("reading {url}: {e}"))))
}

/// Verifies `expected_sha256` (when given) and writes the ratings member to
/// `dest/u.data`.
pub fn extract_ratings(archive: &[u8], expected_sha256: Option<&str>, dest: &Path) -> Result<FetchReport> {
    let actual = sha256_hex(archive);
    if let Some(exp) = expected_sha256 {
        if !exp.eq_ignore_ascii_case(&actual) {
            return Err(Error::Checksum {
                expected: exp.to_ascii_lowercase(),
                actual,
            });
        }
    }
    let mut zip = zip::ZipArchive::new(Cursor::new(archive))
        .map_err(|e| input(format!("not a zip archive: {e}")))?;
    let mut member = zip
        .by_name(RATINGS_MEMBER)
        .map_err(|e| input(format!("archive has no {RATINGS_MEMBER}: {e}")))?;
    let mut data = Vec::new();
    member.read_to_end(&mut data)?;
    std::fs::create_dir_all(dest)?;
    let out = dest.join("u.data");
    std::fs::write(&out, &data)?;
    let lines = data.split(|&b| b == b'\n').filter(|l| !l.is_empty()).count();
    if lines != RATINGS_LINES {
        log::warn!("{}: {lines} ratings, the canonical file has {RATINGS_LINES}", out.display());
    }
    Ok(FetchReport {
        archive_sha256: actual,
        ratings: out,
        lines,
    })
}

pub fn fetch_movielens(source: &FetchSource, dest: &Path, expected_sha256: Option<&str>) -> Result<FetchReport> {
    let bytes = match source {
        FetchSource::Url(u) => download(u)?,
        FetchSource::Archive(p) => std::fs::read(p)?,
    };
    extract_ratings(&bytes, expected_sha256, dest)
}
