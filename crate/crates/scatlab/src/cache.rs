//! Content-addressed JSON cache for run reports. IO trouble degrades to a
//! warning and a cache bypass; corrupted entries are evicted, never served.

use serde_json::Value;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Environment variable overriding the cache directory.
pub const CACHE_DIR_ENV: &str = "SCATLAB_CACHE_DIR";

#[derive(Debug, Clone)]
pub struct Cache {
    dir: PathBuf,
    pub enabled: bool,
}

impl Cache {
    /// Cache rooted at `dir`, unless the environment override is set.
    pub fn new(dir: &Path, enabled: bool) -> Self {
        let dir = match std::env::var_os(CACHE_DIR_ENV) {
            Some(d) if !d.is_empty() => PathBuf::from(d),
            _ => dir.to_path_buf(),
        };
        Cache { dir, enabled }
    }

    /// A disabled cache that never hits and never writes.
    pub fn disabled() -> Self {
        Cache {
            dir: PathBuf::new(),
            enabled: false,
        }
    }

    fn entry_path(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    /// Fetch a stored report. A corrupted entry is deleted and reported as
    /// a miss; unreadable directories just bypass the cache.
    pub fn lookup(&self, digest: &str) -> Option<Value> {
        if !self.enabled {
            return None;
        }
        let path = self.entry_path(digest);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return None,
            Err(e) => {
                eprintln!("warning: cache read failed ({e}); bypassing cache");
                return None;
            }
        };
        match serde_json::from_str(&text) {
            Ok(v) => Some(v),
            Err(e) => {
                eprintln!("warning: evicting corrupted cache entry {digest} ({e})");
                let _ = fs::remove_file(&path);
                None
            }
        }
    }

    /// Store a report atomically (temp file in the same directory, then
    /// rename). Failures warn and leave the cache unused.
    pub fn store(&self, digest: &str, report: &Value) {
        if !self.enabled {
            return;
        }
        if let Err(e) = self.try_store(digest, report) {
            eprintln!("warning: cache write failed ({e}); continuing without cache");
        }
    }

    fn try_store(&self, digest: &str, report: &Value) -> std::io::Result<()> {
        fs::create_dir_all(&self.dir)?;
        let tmp = self
            .dir
            .join(format!(".{digest}.tmp.{}", std::process::id()));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(serde_json::to_string_pretty(report).unwrap().as_bytes())?;
            f.write_all(b"\n")?;
        }
        fs::rename(&tmp, self.entry_path(digest))
    }
}
