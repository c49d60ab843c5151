//! Image featurization: pluggable embedding backends, per-account mean
//! aggregation, and a content-addressed on-disk cache.

mod backend;
mod cache;
mod preprocess;
pub mod store;

pub use backend::{Backend, BackendKind};
pub use cache::EmbeddingCache;
pub use preprocess::{
    preprocess_image, PixelTensor, CROP_SIDE, IMAGENET_MEAN, IMAGENET_STD, RESIZE_SHORT,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("image could not be decoded: {0}")]
    Undecodable(String),
    #[error("no embeddings for account `{0}`")]
    NoEmbeddings(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding contains non-finite values")]
    NonFinite,
    #[error("embedding must not be empty")]
    Empty,
    #[error("unknown backend descriptor `{0}` (expected stub[:<dim>], precomputed:<dim>:<tag>, or onnx:<path>)")]
    BadDescriptor(String),
    #[error("backend `{0}` holds no model and cannot embed; it serves precomputed caches only")]
    CannotCompute(String),
    #[error("backend model error: {0}")]
    Model(String),
    #[error("account embedding file error: {0}")]
    BadStore(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Fixed-length real vector describing one image. All entries are finite;
/// the dimension equals the producing backend's declared dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEmbedding {
    values: Vec<f32>,
}

impl ImageEmbedding {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(ImageEmbedding { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Scales to unit L2 norm. A zero vector is returned unchanged.
    pub fn l2_normalized(&self) -> ImageEmbedding {
        let norm = self
            .values
            .iter()
            .map(|v| (*v as f64) * (*v as f64))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            return self.clone();
        }
        ImageEmbedding {
            values: self.values.iter().map(|v| (*v as f64 / norm) as f32).collect(),
        }
    }
}

/// Component-wise mean of an account's image embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct AccountEmbedding {
    pub account_id: String,
    pub mean: Vec<f32>,
    pub n_images: usize,
}

/// Averages embeddings in input order with f64 accumulators.
///
/// Callers that need order-independent results must fix the order first;
/// [`embed_account_sorted`] does so by image id.
pub fn embed_account(
    account_id: &str,
    embeddings: &[ImageEmbedding],
) -> Result<AccountEmbedding, EmbedError> {
    let first = embeddings
        .first()
        .ok_or_else(|| EmbedError::NoEmbeddings(account_id.to_string()))?;
    let dim = first.dim();
    let mut sums = vec![0.0f64; dim];
    for e in embeddings {
        if e.dim() != dim {
            return Err(EmbedError::DimensionMismatch {
                expected: dim,
                got: e.dim(),
            });
        }
        for (s, v) in sums.iter_mut().zip(e.values()) {
            *s += *v as f64;
        }
    }
    let n = embeddings.len();
    let mean = sums.iter().map(|s| (s / n as f64) as f32).collect();
    Ok(AccountEmbedding {
        account_id: account_id.to_string(),
        mean,
        n_images: n,
    })
}

/// Averages `(image_id, embedding)` pairs in canonical (sorted image id)
/// order, so the result is bit-identical for any input permutation.
pub fn embed_account_sorted(
    account_id: &str,
    mut items: Vec<(String, ImageEmbedding)>,
) -> Result<AccountEmbedding, EmbedError> {
    items.sort_by(|a, b| a.0.cmp(&b.0));
    let embeddings: Vec<ImageEmbedding> = items.into_iter().map(|(_, e)| e).collect();
    embed_account(account_id, &embeddings)
}
