//! On-disk embedding cache.
//!
//! One file per (image content, backend) pair, named by the concatenation of
//! the image content digest and the digest of the backend id — 128 hex
//! characters total. Re-running the pipeline with a different backend never
//! collides with earlier runs, and renamed image files still hit.
//!
//! Record layout (little-endian): `IDLE` magic, u16 format version, u32
//! dimension, then dimension f32 values. Unreadable or stale records are
//! treated as misses (with a warning) rather than errors, so a damaged cache
//! degrades to recomputation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{EmbedError, ImageEmbedding};
use crate::corpus::ContentHash;

const MAGIC: &[u8; 4] = b"IDLE";
const VERSION: u16 = 1;

pub struct EmbeddingCache {
    dir: PathBuf,
    backend_digest: [u8; 32],
}

impl EmbeddingCache {
    /// Opens (creating if needed) a cache directory scoped to one backend id.
    pub fn open(dir: &Path, backend_id: &str) -> Result<EmbeddingCache, EmbedError> {
        fs::create_dir_all(dir)?;
        Ok(EmbeddingCache {
            dir: dir.to_path_buf(),
            backend_digest: Sha256::digest(backend_id.as_bytes()).into(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, content: &ContentHash) -> PathBuf {
        let mut name = String::with_capacity(128);
        name.push_str(&content.to_hex());
        name.push_str(&hex::encode(self.backend_digest));
        self.dir.join(name)
    }

    /// Looks up an embedding. Corrupt or incompatible records are misses.
    pub fn get(&self, content: &ContentHash) -> Option<ImageEmbedding> {
        let path = self.entry_path(content);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return None,
            Err(e) => {
                log::warn!("cache read failed for {}: {e}", path.display());
                return None;
            }
        };
        match decode_record(&bytes) {
            Ok(embedding) => Some(embedding),
            Err(reason) => {
                log::warn!("ignoring cache entry {}: {reason}", path.display());
                None
            }
        }
    }

    /// Stores an embedding atomically (write to a temp file, then rename), so
    /// concurrent writers and interrupted runs never leave torn records.
    pub fn put(&self, content: &ContentHash, embedding: &ImageEmbedding) -> Result<(), EmbedError> {
        let path = self.entry_path(content);
        let mut record = Vec::with_capacity(4 + 2 + 4 + embedding.dim() * 4);
        record.extend_from_slice(MAGIC);
        record.extend_from_slice(&VERSION.to_le_bytes());
        record.extend_from_slice(&(embedding.dim() as u32).to_le_bytes());
        for v in embedding.values() {
            record.extend_from_slice(&v.to_le_bytes());
        }

        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(&record)?;
        tmp.flush()?;
        tmp.persist(&path).map_err(|e| EmbedError::Io(e.error))?;
        Ok(())
    }
}

fn decode_record(bytes: &[u8]) -> Result<ImageEmbedding, String> {
    if bytes.len() < 10 {
        return Err(format!("record too short ({} bytes)", bytes.len()));
    }
    if &bytes[0..4] != MAGIC {
        return Err("bad magic".to_string());
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(format!("format version {version}, expected {VERSION}"));
    }
    let dim = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let payload = &bytes[10..];
    if payload.len() != dim * 4 {
        return Err(format!(
            "payload is {} bytes, expected {} for dimension {dim}",
            payload.len(),
            dim * 4
        ));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ImageEmbedding::new(values).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hash_of(byte: u8) -> ContentHash {
        ContentHash::of_bytes(&[byte])
    }

    fn sample(dim: usize, seed: f32) -> ImageEmbedding {
        ImageEmbedding::new((0..dim).map(|i| seed + i as f32 * 0.25).collect()).unwrap()
    }

    #[test]
    fn round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::open(dir.path(), "stub:16").unwrap();
        let embedding = sample(16, 0.5);
        assert!(cache.get(&hash_of(1)).is_none());
        cache.put(&hash_of(1), &embedding).unwrap();
        assert_eq!(cache.get(&hash_of(1)), Some(embedding));
    }

    #[test]
    fn entries_are_scoped_by_backend_id() {
        let dir = tempfile::tempdir().unwrap();
        let a = EmbeddingCache::open(dir.path(), "stub:16").unwrap();
        let b = EmbeddingCache::open(dir.path(), "stub:32").unwrap();
        a.put(&hash_of(1), &sample(16, 0.0)).unwrap();
        assert!(a.get(&hash_of(1)).is_some());
        assert!(b.get(&hash_of(1)).is_none(), "different backend must miss");
    }

    #[test]
    fn filenames_are_128_hex_characters() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::open(dir.path(), "stub:8").unwrap();
        cache.put(&hash_of(9), &sample(8, 1.0)).unwrap();
        let names: Vec<String> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        assert_eq!(names.len(), 1);
        assert_eq!(names[0].len(), 128);
        assert!(names[0].chars().all(|c| c.is_ascii_hexdigit()));
        assert!(names[0].starts_with(&hash_of(9).to_hex()));
    }

    #[test]
    fn corrupt_records_become_misses() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::open(dir.path(), "stub:4").unwrap();
        cache.put(&hash_of(3), &sample(4, 2.0)).unwrap();
        let entry = fs::read_dir(dir.path()).unwrap().next().unwrap().unwrap().path();

        // truncated
        let full = fs::read(&entry).unwrap();
        fs::write(&entry, &full[..full.len() - 3]).unwrap();
        assert!(cache.get(&hash_of(3)).is_none());

        // bad magic
        let mut bad = full.clone();
        bad[0] = b'X';
        fs::write(&entry, &bad).unwrap();
        assert!(cache.get(&hash_of(3)).is_none());

        // future version
        let mut future = full.clone();
        future[4] = 0x63;
        fs::write(&entry, &future).unwrap();
        assert!(cache.get(&hash_of(3)).is_none());

        // intact record still hits
        fs::write(&entry, &full).unwrap();
        assert_eq!(cache.get(&hash_of(3)), Some(sample(4, 2.0)));
    }

    #[test]
    fn put_overwrites_existing_entry() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::open(dir.path(), "stub:4").unwrap();
        cache.put(&hash_of(5), &sample(4, 0.0)).unwrap();
        cache.put(&hash_of(5), &sample(4, 9.0)).unwrap();
        assert_eq!(cache.get(&hash_of(5)), Some(sample(4, 9.0)));
    }

    #[test]
    fn concurrent_writers_leave_a_valid_record() {
        let dir = tempfile::tempdir().unwrap();
        let dir_path = dir.path().to_path_buf();
        let mut handles = Vec::new();
        for t in 0..8u8 {
            let dir_path = dir_path.clone();
            handles.push(std::thread::spawn(move || {
                let cache = EmbeddingCache::open(&dir_path, "stub:64").unwrap();
                for _ in 0..20 {
                    cache.put(&hash_of(77), &sample(64, t as f32)).unwrap();
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        let cache = EmbeddingCache::open(&dir_path, "stub:64").unwrap();
        let got = cache.get(&hash_of(77)).expect("entry must exist");
        // must be exactly one of the written values, never a torn mix
        assert!((0..8).any(|t| got == sample(64, t as f32)));
    }
}
