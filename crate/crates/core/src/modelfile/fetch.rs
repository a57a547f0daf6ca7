//! Verified, resumable model download.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::header::RANGE;
use reqwest::StatusCode;

use super::{Md5Stream, ModelManifest};
use crate::error::{Error, Result};

const CHUNK: usize = 64 * 1024;

/// How a fetch finished.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FetchOutcome {
    pub path: PathBuf,
    /// True when an existing file already matched and no request was made.
    pub cached: bool,
    /// Bytes received over the network in this call.
    pub downloaded: u64,
    /// Size of the partial file the download continued from.
    pub resumed_from: u64,
}

fn in_flight() -> &'static Mutex<HashSet<PathBuf>> {
    static SET: OnceLock<Mutex<HashSet<PathBuf>>> = OnceLock::new();
    SET.get_or_init(Default::default)
}

struct FlightGuard(PathBuf);

impl FlightGuard {
    fn claim(path: &Path) -> Result<Self> {
        let mut set = in_flight().lock().unwrap_or_else(|p| p.into_inner());
        if !set.insert(path.to_path_buf()) {
            return Err(Error::Busy);
        }
        Ok(FlightGuard(path.to_path_buf()))
    }
}

impl Drop for FlightGuard {
    fn drop(&mut self) {
        in_flight()
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .remove(&self.0);
    }
}

fn hash_file(path: &Path) -> Result<(Md5Stream, u64)> {
    let mut f = File::open(path)?;
    let mut h = Md5Stream::new();
    let mut buf = vec![0u8; CHUNK];
    let mut n = 0u64;
    loop {
        let k = f.read(&mut buf)?;
        if k == 0 {
            return Ok((h, n));
        }
        h.update(&buf[..k]);
        n += k as u64;
    }
}

pub fn part_path(dest_dir: &Path, manifest: &ModelManifest) -> PathBuf {
    dest_dir.join(format!("{}.part", manifest.name))
}

/// Downloads `manifest.url` into `dest_dir/manifest.name`.
///
/// An existing file whose MD5 matches is returned without touching the
/// network. Otherwise bytes stream into a `.part` file, resuming with a
/// `Range` request when one is left over, and the file is renamed into
/// place only after its digest matches. `progress(done, total)` is
/// non-decreasing and ends with `done == total` on success.
pub fn fetch_model(
    manifest: &ModelManifest,
    dest_dir: &Path,
    mut progress: impl FnMut(u64, u64),
) -> Result<FetchOutcome> {
    manifest.validate()?;
    fs::create_dir_all(dest_dir)?;
    let target = dest_dir.join(&manifest.name);
    let _guard = FlightGuard::claim(&target)?;
    let total = manifest.bytes;

    if target.exists() {
        let (h, _) = hash_file(&target)?;
        if h.finish_hex() == manifest.md5 {
            progress(total, total);
            return Ok(FetchOutcome {
                path: target,
                cached: true,
                downloaded: 0,
                resumed_from: 0,
            });
        }
        fs::remove_file(&target)?;
    }

    let part = part_path(dest_dir, manifest);
    let mut have = fs::metadata(&part).map(|m| m.len()).unwrap_or(0);
    if have > total {
        fs::remove_file(&part)?;
        have = 0;
    }
    let (mut hasher, mut done) = if have > 0 {
        hash_file(&part)?
    } else {
        (Md5Stream::new(), 0)
    };
    let resumed_from = done;
    let mut downloaded = 0;
    progress(done, total);

    if done < total {
        let client = Client::builder()
            .connect_timeout(Duration::from_secs(10))
            .timeout(None)
            .build()
            .map_err(|e| Error::Network(e.to_string()))?;
        let mut req = client.get(&manifest.url);
        if done > 0 {
            req = req.header(RANGE, format!("bytes={done}-"));
        }
        let mut resp = req.send().map_err(|e| Error::Network(e.to_string()))?;
        let mut file = match resp.status() {
            StatusCode::PARTIAL_CONTENT if done > 0 => OpenOptions::new().append(true).open(&part)?,
            s if s.is_success() => {
                // server ignored the range; start over
                hasher = Md5Stream::new();
                done = 0;
                progress(done, total);
                File::create(&part)?
            }
            s => return Err(Error::Network(format!("GET {} returned {s}", manifest.url))),
        };
        let mut buf = vec![0u8; CHUNK];
        loop {
            let k = match resp.read(&mut buf) {
                Ok(k) => k,
                Err(e) => {
                    file.flush()?;
                    return Err(Error::Network(format!("read failed after {done} bytes: {e}")));
                }
            };
            if k == 0 {
                break;
            }
            if done + k as u64 > total {
                drop(file);
                let _ = fs::remove_file(&part);
                return Err(Error::ChecksumMismatch {
                    expected: manifest.md5.clone(),
                    actual: format!("<more than {total} bytes>"),
                });
            }
            file.write_all(&buf[..k])?;
            hasher.update(&buf[..k]);
            done += k as u64;
            downloaded += k as u64;
            progress(done, total);
        }
        file.sync_all()?;
        if done < total {
            return Err(Error::Network(format!(
                "connection closed at {done} of {total} bytes"
            )));
        }
    }

    let actual = hasher.finish_hex();
    if actual != manifest.md5 {
        let _ = fs::remove_file(&part);
        return Err(Error::ChecksumMismatch {
            expected: manifest.md5.clone(),
            actual,
        });
    }
    fs::rename(&part, &target)?;
    Ok(FetchOutcome {
        path: target,
        cached: false,
        downloaded,
        resumed_from,
    })
}

/// Reads a manifest from a local path or an `http://` URL.
pub fn load_manifest(location: &str) -> Result<ModelManifest> {
    let text = if location.starts_with("http://") || location.starts_with("https://") {
        let resp = Client::builder()
            .connect_timeout(Duration::from_secs(10))
            .timeout(Duration::from_secs(30))
            .build()
            .and_then(|c| c.get(location).send())
            .map_err(|e| Error::Network(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(Error::Network(format!("GET {location} returned {}", resp.status())));
        }
        resp.text().map_err(|e| Error::Network(e.to_string()))?
    } else {
        fs::read_to_string(location)?
    };
    ModelManifest::from_json(&text)
}
