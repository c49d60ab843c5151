//! Data model and manifest ingestion.
//!
//! A corpus is a validated, immutable collection of accounts, each carrying a
//! group tag, an optional ideology label, and the list of images the account
//! shared. Manifests are UTF-8 CSV with the header
//! `account_id,group,image_path,nominate_score`; one row per image, the score
//! column optional, `#`-prefixed lines ignored.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Names of the five reserved groups, in reporting order.
pub const CANONICAL_GROUPS: [&str; 5] = ["iran", "russia", "china", "venezuela", "politicians"];

const PROVENANCE_PREFIX: &str = "#provenance=";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("manifest not found: {0}")]
    MissingFile(PathBuf),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: label {value} out of range [-1, 1]")]
    LabelOutOfRange { line: u64, value: f64 },
    #[error("line {line}: duplicate image_id `{image_id}`")]
    DuplicateImage { line: u64, image_id: String },
    #[error("line {line}: account `{account_id}` has conflicting {field}")]
    ConflictingAccount {
        line: u64,
        account_id: String,
        field: String,
    },
    #[error("empty manifest: no data rows")]
    EmptyManifest,
    #[error("manifest header must be `account_id,group,image_path,nominate_score`, got `{0}`")]
    BadHeader(String),
    #[error("no labeled training accounts with at least one image")]
    NoTrainingAccounts,
}

/// Group tag for an account. The five canonical names are reserved and
/// matched case-insensitively; anything else is an open-ended custom tag,
/// stored lowercase.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum GroupLabel {
    Iran,
    Russia,
    China,
    Venezuela,
    Politicians,
    Custom(String),
}

impl GroupLabel {
    pub fn parse(raw: &str) -> Result<Self, String> {
        let name = raw.trim().to_lowercase();
        if name.is_empty() {
            return Err("empty group name".to_string());
        }
        Ok(match name.as_str() {
            "iran" => GroupLabel::Iran,
            "russia" => GroupLabel::Russia,
            "china" => GroupLabel::China,
            "venezuela" => GroupLabel::Venezuela,
            "politicians" => GroupLabel::Politicians,
            _ => GroupLabel::Custom(name),
        })
    }

    pub fn as_str(&self) -> &str {
        match self {
            GroupLabel::Iran => "iran",
            GroupLabel::Russia => "russia",
            GroupLabel::China => "china",
            GroupLabel::Venezuela => "venezuela",
            GroupLabel::Politicians => "politicians",
            GroupLabel::Custom(name) => name,
        }
    }

    /// Position among the reserved groups; custom tags sort after them.
    fn canonical_rank(&self) -> usize {
        match self {
            GroupLabel::Iran => 0,
            GroupLabel::Russia => 1,
            GroupLabel::China => 2,
            GroupLabel::Venezuela => 3,
            GroupLabel::Politicians => 4,
            GroupLabel::Custom(_) => 5,
        }
    }
}

impl fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Ord for GroupLabel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.canonical_rank()
            .cmp(&other.canonical_rank())
            .then_with(|| self.as_str().cmp(other.as_str()))
    }
}

impl PartialOrd for GroupLabel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl serde::Serialize for GroupLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

/// First-dimension NOMINATE-convention score: a real in [-1, 1], negative
/// liberal, positive conservative.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
#[serde(transparent)]
pub struct IdeologyScore(f64);

impl IdeologyScore {
    pub fn new(value: f64) -> Result<Self, f64> {
        if value.is_finite() && (-1.0..=1.0).contains(&value) {
            Ok(IdeologyScore(value))
        } else {
            Err(value)
        }
    }

    /// Clamps into [-1, 1]; NaN is mapped to 0.
    pub fn clamped(value: f64) -> Self {
        if value.is_nan() {
            IdeologyScore(0.0)
        } else {
            IdeologyScore(value.clamp(-1.0, 1.0))
        }
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// 256-bit content digest (SHA-256 of the file bytes).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContentHash(pub [u8; 32]);

impl ContentHash {
    pub fn of_bytes(bytes: &[u8]) -> Self {
        use sha2::{Digest, Sha256};
        ContentHash(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, String> {
        let bytes = hex::decode(s).map_err(|e| e.to_string())?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| "content hash must be 32 bytes".to_string())?;
        Ok(ContentHash(arr))
    }
}

/// Where an image's bytes live. Most images are files on disk; synthetic
/// corpora use `hash://<64 hex>` locators that carry the content digest
/// inline so no file ever needs to exist.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageLocator {
    File(PathBuf),
    Hashed(ContentHash),
}

impl ImageLocator {
    pub fn parse(raw: &str) -> Result<Self, String> {
        if let Some(hex_part) = raw.strip_prefix("hash://") {
            Ok(ImageLocator::Hashed(ContentHash::from_hex(hex_part)?))
        } else if raw.is_empty() {
            Err("empty image_path".to_string())
        } else {
            Ok(ImageLocator::File(PathBuf::from(raw)))
        }
    }

    pub fn as_manifest_string(&self) -> String {
        match self {
            ImageLocator::File(p) => p.to_string_lossy().into_owned(),
            ImageLocator::Hashed(h) => format!("hash://{}", h.to_hex()),
        }
    }
}

/// One shared image. `image_id` is `<account_id>/<image_path>` and is unique
/// corpus-wide.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub account_id: String,
    pub locator: ImageLocator,
}

/// Stable image key derived from the manifest row.
pub fn image_id_for(account_id: &str, image_path: &str) -> String {
    format!("{account_id}/{image_path}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccountProfile {
    pub account_id: String,
    pub group: GroupLabel,
    pub label: Option<IdeologyScore>,
    pub images: Vec<ImageRecord>,
}

/// Immutable collection of accounts, sorted by `account_id`, with images
/// sorted by `image_id` within each account.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub accounts: Vec<AccountProfile>,
    pub provenance: String,
}

impl Corpus {
    pub fn account(&self, account_id: &str) -> Option<&AccountProfile> {
        self.accounts
            .binary_search_by(|a| a.account_id.as_str().cmp(account_id))
            .ok()
            .map(|i| &self.accounts[i])
    }

    pub fn n_images(&self) -> usize {
        self.accounts.iter().map(|a| a.images.len()).sum()
    }
}

struct PendingAccount {
    group: GroupLabel,
    label: Option<IdeologyScore>,
    images: Vec<ImageRecord>,
}

/// Parses a manifest CSV into a validated corpus.
///
/// Rows for the same account are aggregated; a label on any row applies to
/// the whole account, and two rows disagreeing on label or group is an
/// error. No image file is opened here: content hashes are resolved later,
/// at the embedding stage.
pub fn parse_manifest(path: &Path) -> Result<Corpus, CorpusError> {
    if !path.exists() {
        return Err(CorpusError::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let provenance = text
        .lines()
        .find_map(|l| l.strip_prefix(PROVENANCE_PREFIX))
        .unwrap_or_else(|| {
            path.file_name()
                .map(|n| n.to_str().unwrap_or(""))
                .unwrap_or("")
        })
        .to_string();
    parse_manifest_text(&text, provenance)
}

fn parse_manifest_text(text: &str, provenance: String) -> Result<Corpus, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());

    let headers = reader
        .headers()
        .map_err(|e| CorpusError::BadHeader(e.to_string()))?
        .clone();
    let expected = ["account_id", "group", "image_path", "nominate_score"];
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(CorpusError::BadHeader(got.join(",")));
    }

    let mut pending: BTreeMap<String, PendingAccount> = BTreeMap::new();
    let mut seen_images: BTreeMap<String, u64> = BTreeMap::new();
    let mut n_rows = 0u64;

    for record in reader.records() {
        let record = record.map_err(|e| CorpusError::MalformedRow {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 4 {
            return Err(CorpusError::MalformedRow {
                line,
                reason: format!("expected 4 fields, got {}", record.len()),
            });
        }
        let account_id = record[0].trim().to_string();
        if account_id.is_empty() {
            return Err(CorpusError::MalformedRow {
                line,
                reason: "empty account_id".to_string(),
            });
        }
        let group = GroupLabel::parse(&record[1])
            .map_err(|reason| CorpusError::MalformedRow { line, reason })?;
        let image_path = record[2].trim();
        let locator = ImageLocator::parse(image_path)
            .map_err(|reason| CorpusError::MalformedRow { line, reason })?;
        let label = parse_score_field(&record[3], line)?;

        let image_id = image_id_for(&account_id, image_path);
        if let Some(_prev) = seen_images.insert(image_id.clone(), line) {
            return Err(CorpusError::DuplicateImage { line, image_id });
        }

        let entry = pending.entry(account_id.clone()).or_insert(PendingAccount {
            group: group.clone(),
            label: None,
            images: Vec::new(),
        });
        if entry.group != group {
            return Err(CorpusError::ConflictingAccount {
                line,
                account_id,
                field: "group".to_string(),
            });
        }
        if let Some(score) = label {
            match entry.label {
                Some(existing) if existing != score => {
                    return Err(CorpusError::ConflictingAccount {
                        line,
                        account_id,
                        field: "label".to_string(),
                    });
                }
                _ => entry.label = Some(score),
            }
        }
        entry.images.push(ImageRecord {
            image_id,
            account_id: account_id.clone(),
            locator,
        });
        n_rows += 1;
    }

    if n_rows == 0 {
        return Err(CorpusError::EmptyManifest);
    }

    let accounts = pending
        .into_iter()
        .map(|(account_id, mut acc)| {
            acc.images.sort_by(|a, b| a.image_id.cmp(&b.image_id));
            AccountProfile {
                account_id,
                group: acc.group,
                label: acc.label,
                images: acc.images,
            }
        })
        .collect();

    Ok(Corpus {
        accounts,
        provenance,
    })
}

fn parse_score_field(raw: &str, line: u64) -> Result<Option<IdeologyScore>, CorpusError> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    let value: f64 = raw.parse().map_err(|_| CorpusError::MalformedRow {
        line,
        reason: format!("invalid nominate_score `{raw}`"),
    })?;
    IdeologyScore::new(value)
        .map(Some)
        .map_err(|value| CorpusError::LabelOutOfRange { line, value })
}

/// Applies a label sidecar (`account_id,nominate_score` CSV) on top of inline
/// labels. Accounts named in the sidecar but absent from the corpus are
/// skipped with a warning.
pub fn apply_label_sidecar(corpus: &mut Corpus, path: &Path) -> Result<(), CorpusError> {
    if !path.exists() {
        return Err(CorpusError::MissingFile(path.to_path_buf()));
    }
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::BadHeader(e.to_string()))?;
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != ["account_id", "nominate_score"] {
        return Err(CorpusError::BadHeader(got.join(",")));
    }
    for record in reader.records() {
        let record = record.map_err(|e| CorpusError::MalformedRow {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let account_id = record[0].trim();
        let score = parse_score_field(&record[1], line)?.ok_or(CorpusError::MalformedRow {
            line,
            reason: "sidecar rows must carry a score".to_string(),
        })?;
        match corpus
            .accounts
            .binary_search_by(|a| a.account_id.as_str().cmp(account_id))
        {
            Ok(i) => corpus.accounts[i].label = Some(score),
            Err(_) => log::warn!("label sidecar names unknown account `{account_id}`, skipping"),
        }
    }
    Ok(())
}

/// Writes a corpus back to manifest CSV. `parse_manifest` of the written file
/// reproduces the corpus exactly, provenance included.
pub fn write_manifest(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let mut out = Vec::new();
    writeln!(out, "{PROVENANCE_PREFIX}{}", corpus.provenance).unwrap();
    writeln!(out, "account_id,group,image_path,nominate_score").unwrap();
    for account in &corpus.accounts {
        let label = account
            .label
            .map(|s| s.value().to_string())
            .unwrap_or_default();
        for image in &account.images {
            writeln!(
                out,
                "{},{},{},{}",
                account.account_id,
                account.group,
                image.locator.as_manifest_string(),
                label
            )
            .unwrap();
        }
    }
    std::fs::write(path, out).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Per-group accounting: accounts with at least one image, and total images.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GroupStat {
    pub group: GroupLabel,
    pub accounts: usize,
    pub images: usize,
}

/// Counts accounts (with >= 1 image) and images per group, in canonical
/// group order followed by custom tags lexicographically.
pub fn corpus_stats(corpus: &Corpus) -> Vec<GroupStat> {
    let mut by_group: BTreeMap<GroupLabel, (usize, usize)> = BTreeMap::new();
    for account in &corpus.accounts {
        let entry = by_group.entry(account.group.clone()).or_insert((0, 0));
        if !account.images.is_empty() {
            entry.0 += 1;
        }
        entry.1 += account.images.len();
    }
    by_group
        .into_iter()
        .map(|(group, (accounts, images))| GroupStat {
            group,
            accounts,
            images,
        })
        .collect()
}

/// Partitions a corpus into (training, inference): training is the labeled
/// politicians accounts, inference is everything else. Accounts with zero
/// images are dropped from both sides (they take part in no feature
/// computation) with a warning.
pub fn split_roles(corpus: &Corpus) -> (Corpus, Corpus) {
    let mut training = Vec::new();
    let mut inference = Vec::new();
    for account in &corpus.accounts {
        if account.images.is_empty() {
            log::warn!(
                "account `{}` has no images and is excluded from all roles",
                account.account_id
            );
            continue;
        }
        if account.group == GroupLabel::Politicians && account.label.is_some() {
            training.push(account.clone());
        } else {
            inference.push(account.clone());
        }
    }
    (
        Corpus {
            accounts: training,
            provenance: corpus.provenance.clone(),
        },
        Corpus {
            accounts: inference,
            provenance: corpus.provenance.clone(),
        },
    )
}
