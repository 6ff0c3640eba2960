//! Content-addressed on-disk store for token embedding matrices.
//!
//! Entry file name: hex SHA-256 of `backend_id || 0x00 || text`, suffix `.emb`.
//! Layout (little endian):
//!
//! ```text
//! magic        8 bytes  "PTEEMB01"
//! id_len       u32      backend_id byte length, then the bytes
//! dim          u32
//! token_count  u32
//! precision    u8       bytes per value, always 4 (f32)
//! tokens       token_count x (u32 length, UTF-8 bytes)
//! values       token_count * dim x f32
//! checksum     32 bytes SHA-256 of everything above
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::util::{sha256_hex, write_atomic};

use super::TokenEmbeddingMatrix;

const MAGIC: &[u8; 8] = b"PTEEMB01";
const PRECISION_F32: u8 = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
}

impl CacheStats {
    pub fn hit_rate(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }
}

#[derive(Debug)]
pub struct EmbeddingCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

pub fn cache_key(backend_id: &str, text: &str) -> String {
    sha256_hex([backend_id.as_bytes(), &[0u8], text.as_bytes()])
}

fn encode(backend_id: &str, m: &TokenEmbeddingMatrix) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64 + m.values().len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(backend_id.len() as u32).to_le_bytes());
    buf.extend_from_slice(backend_id.as_bytes());
    buf.extend_from_slice(&(m.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.token_count() as u32).to_le_bytes());
    buf.push(PRECISION_F32);
    for t in m.tokens() {
        buf.extend_from_slice(&(t.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.as_bytes());
    }
    for v in m.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
}

fn decode(expected_backend: &str, bytes: &[u8]) -> std::result::Result<TokenEmbeddingMatrix, String> {
    if bytes.len() < MAGIC.len() + 32 {
        return Err("truncated entry".into());
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err("checksum mismatch".into());
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(8) != Some(MAGIC.as_slice()) {
        return Err("bad magic".into());
    }
    let id_len = r.u32().ok_or("truncated header")? as usize;
    let id = r.take(id_len).ok_or("truncated header")?;
    if id != expected_backend.as_bytes() {
        return Err("backend id mismatch".into());
    }
    let dim = r.u32().ok_or("truncated header")? as usize;
    let count = r.u32().ok_or("truncated header")? as usize;
    if r.take(1) != Some([PRECISION_F32].as_slice()) {
        return Err("unsupported precision".into());
    }
    let mut tokens = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32().ok_or("truncated tokens")? as usize;
        let t = r.take(len).ok_or("truncated tokens")?;
        tokens.push(String::from_utf8(t.to_vec()).map_err(|_| "invalid token utf-8")?);
    }
    let n_values = count.checked_mul(dim).ok_or("size overflow")?;
    let raw = r.take(n_values * 4).ok_or("truncated values")?;
    if r.pos != body.len() {
        return Err("trailing bytes".into());
    }
    let values = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
        .collect();
    TokenEmbeddingMatrix::new(tokens, dim, values).map_err(|e| e.to_string())
}

impl EmbeddingCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(EmbeddingCache {
            dir,
            write_lock: Mutex::new(()),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, backend_id: &str, text: &str) -> PathBuf {
        self.dir.join(format!("{}.emb", cache_key(backend_id, text)))
    }

    /// Returns the stored matrix, or `None` on a miss. Unreadable or corrupt
    /// entries count as misses.
    pub fn lookup(&self, backend_id: &str, text: &str) -> Option<TokenEmbeddingMatrix> {
        let path = self.path_for(backend_id, text);
        let found = match fs::read(&path) {
            Ok(bytes) => match decode(backend_id, &bytes) {
                Ok(m) => Some(m),
                Err(reason) => {
                    log::warn!("ignoring corrupt cache entry {}: {reason}", path.display());
                    None
                }
            },
            Err(_) => None,
        };
        let counter = if found.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        found
    }

    pub fn store(&self, backend_id: &str, text: &str, matrix: &TokenEmbeddingMatrix) -> Result<()> {
        let bytes = encode(backend_id, matrix);
        let path = self.path_for(backend_id, text);
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        write_atomic(&path, &bytes)
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    pub fn entry_count(&self) -> usize {
        fs::read_dir(&self.dir)
            .map(|it| {
                it.filter_map(|e| e.ok())
                    .filter(|e| e.path().extension().is_some_and(|x| x == "emb"))
                    .count()
            })
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::hash;

    #[test]
    fn miss_store_hit() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::open(dir.path()).unwrap();
        assert!(cache.lookup("h", "some text").is_none());
        let m = hash::embed("some text", 16, 1);
        cache.store("h", "some text", &m).unwrap();
        let back = cache.lookup("h", "some text").unwrap();
        assert_eq!(back, m);
        let bits = |m: &TokenEmbeddingMatrix| m.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
        assert_eq!(cache.stats(), CacheStats { hits: 1, misses: 1 });
        // Other backends never see this entry.
        assert!(cache.lookup("other", "some text").is_none());
    }

    #[test]
    fn equal_content_shares_an_entry() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::open(dir.path()).unwrap();
        let text = String::from("same");
        let m = hash::embed(&text, 8, 0);
        cache.store("h", &text, &m).unwrap();
        cache.store("h", "same", &m).unwrap();
        assert_eq!(cache.entry_count(), 1);
    }

    #[test]
    fn survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let m = hash::embed("persist", 8, 0);
        EmbeddingCache::open(dir.path()).unwrap().store("h", "persist", &m).unwrap();
        let reopened = EmbeddingCache::open(dir.path()).unwrap();
        assert_eq!(reopened.lookup("h", "persist"), Some(m));
    }

    #[test]
    fn corrupt_entries_are_misses() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::open(dir.path()).unwrap();
        let m = hash::embed("x y z", 8, 0);
        cache.store("h", "x y z", &m).unwrap();
        let path = cache.path_for("h", "x y z");
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        assert!(cache.lookup("h", "x y z").is_none());
        fs::write(&path, &bytes[..10]).unwrap();
        assert!(cache.lookup("h", "x y z").is_none());
    }
}
