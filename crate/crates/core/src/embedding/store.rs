//! Persistent account-embedding file: the sealed artifact the embed stage
//! writes and the train/predict stages read.
//!
//! Layout (little-endian): `IDAM` magic, u16 format version, u32 dimension,
//! u32 account count, then per account — u32 id length, UTF-8 id, u32 image
//! count, dimension f32 mean values. Accounts are stored sorted by id so the
//! file is byte-reproducible.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{AccountEmbedding, EmbedError};

const MAGIC: &[u8; 4] = b"IDAM";
const VERSION: u16 = 1;

/// Writes account means, sorted by account id, atomically.
pub fn write_account_embeddings(
    path: &Path,
    accounts: &[AccountEmbedding],
) -> Result<(), EmbedError> {
    let dim = match accounts.first() {
        Some(first) => first.mean.len(),
        None => return Err(EmbedError::Empty),
    };
    for account in accounts {
        if account.mean.len() != dim {
            return Err(EmbedError::DimensionMismatch {
                expected: dim,
                got: account.mean.len(),
            });
        }
    }
    let mut sorted: Vec<&AccountEmbedding> = accounts.iter().collect();
    sorted.sort_by(|a, b| a.account_id.cmp(&b.account_id));

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(sorted.len() as u32).to_le_bytes());
    for account in sorted {
        let id = account.account_id.as_bytes();
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id);
        buf.extend_from_slice(&(account.n_images as u32).to_le_bytes());
        for v in &account.mean {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&buf)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| EmbedError::Io(e.error))?;
    Ok(())
}

/// Reads an account-embedding file back, in stored (sorted) order.
pub fn read_account_embeddings(path: &Path) -> Result<Vec<AccountEmbedding>, EmbedError> {
    let bytes = fs::read(path)?;
    let bad = |reason: &str| EmbedError::BadStore(format!("{}: {reason}", path.display()));
    if bytes.len() < 14 {
        return Err(bad("file too short"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let dim = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;

    fn take<'a>(
        bytes: &'a [u8],
        pos: &mut usize,
        n: usize,
    ) -> Result<&'a [u8], &'static str> {
        let end = pos.checked_add(n).ok_or("length overflow")?;
        let slice = bytes.get(*pos..end).ok_or("truncated record")?;
        *pos = end;
        Ok(slice)
    }

    let mut accounts = Vec::with_capacity(count);
    let mut pos = 14;
    for _ in 0..count {
        let id_len =
            u32::from_le_bytes(take(&bytes, &mut pos, 4).map_err(|r| bad(r))?.try_into().unwrap())
                as usize;
        let account_id = String::from_utf8(take(&bytes, &mut pos, id_len).map_err(|r| bad(r))?.to_vec())
            .map_err(|_| bad("account id is not UTF-8"))?;
        let n_images =
            u32::from_le_bytes(take(&bytes, &mut pos, 4).map_err(|r| bad(r))?.try_into().unwrap())
                as usize;
        let mean: Vec<f32> = take(&bytes, &mut pos, dim * 4)
            .map_err(|r| bad(r))?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        accounts.push(AccountEmbedding {
            account_id,
            mean,
            n_images,
        });
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes after last record"));
    }
    Ok(accounts)
}
