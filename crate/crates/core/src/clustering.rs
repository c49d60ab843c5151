//! k-means clustering of image embeddings and the cluster-proportion
//! features derived from it (the Model 1 feature vector).
//!
//! The model is fitted on training-corpus images only, then frozen; campaign
//! images are assigned to the fixed centroids. Fitting is Lloyd's algorithm
//! with k-means++ seeding and multiple restarts, implemented so the result is
//! bit-identical for a given (points, params) regardless of worker count:
//! restarts use derived seeds, per-point work is order-preserving, and every
//! floating-point reduction runs in a fixed sequential order.

use std::path::Path;

use base64::Engine as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::ImageEmbedding;

#[derive(Debug, thiserror::Error)]
pub enum ClusterError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("need at least {k} points to fit {k} clusters, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cannot compute cluster proportions for an empty image list")]
    Empty,
    #[error("invalid cluster model file: {0}")]
    BadModel(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Fitting parameters. `restarts` independent runs are fitted and the one
/// with minimal inertia wins; `tol` is the squared-norm sum of centroid
/// shifts below which an individual run stops.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KmeansParams {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for KmeansParams {
    fn default() -> Self {
        KmeansParams {
            k: 8,
            seed: 0,
            restarts: 10,
            max_iters: 300,
            tol: 1e-4,
        }
    }
}

/// A fitted k-means model. Centroids are stored as f32 (matching the
/// embedding precision and the file format) and all distance math runs in
/// f64, so a saved-and-reloaded model behaves identically to the original.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    k: usize,
    dim: usize,
    centroids: Vec<f32>,
    inertia: f64,
    seed: u64,
    n_points: usize,
}

impl ClusterModel {
    /// Assembles a model from raw parts (used by [`ClusterModel::load`] and
    /// by tests that need hand-placed centroids).
    pub fn from_parts(
        k: usize,
        dim: usize,
        centroids: Vec<f32>,
        inertia: f64,
        seed: u64,
        n_points: usize,
    ) -> Result<ClusterModel, ClusterError> {
        if k == 0 {
            return Err(ClusterError::ZeroK);
        }
        if centroids.len() != k * dim || dim == 0 {
            return Err(ClusterError::DimensionMismatch {
                expected: k * dim,
                got: centroids.len(),
            });
        }
        Ok(ClusterModel {
            k,
            dim,
            centroids,
            inertia,
            seed,
            n_points,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major k × dim centroid matrix.
    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// Sum of squared distances from each training point to its assigned
    /// centroid, for exactly the centroids stored in this model.
    pub fn inertia(&self) -> f64 {
        self.inertia
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn save(&self, path: &Path) -> Result<(), ClusterError> {
        let mut bytes = Vec::with_capacity(self.centroids.len() * 4);
        for v in &self.centroids {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let file = ClusterModelFile {
            format: FORMAT.to_string(),
            version: VERSION,
            k: self.k,
            dim: self.dim,
            seed: self.seed,
            n_points: self.n_points,
            inertia: self.inertia,
            centroids: base64::engine::general_purpose::STANDARD.encode(bytes),
        };
        let json = serde_json::to_vec_pretty(&file)
            .map_err(|e| ClusterError::BadModel(e.to_string()))?;
        write_atomic(path, &json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ClusterModel, ClusterError> {
        let bytes = std::fs::read(path)?;
        let file: ClusterModelFile = serde_json::from_slice(&bytes)
            .map_err(|e| ClusterError::BadModel(format!("{}: {e}", path.display())))?;
        let bad = |reason: String| ClusterError::BadModel(format!("{}: {reason}", path.display()));
        if file.format != FORMAT {
            return Err(bad(format!("format `{}`, expected `{FORMAT}`", file.format)));
        }
        if file.version != VERSION {
            return Err(bad(format!("version {}, expected {VERSION}", file.version)));
        }
        let raw = base64::engine::general_purpose::STANDARD
            .decode(&file.centroids)
            .map_err(|e| bad(format!("centroid payload: {e}")))?;
        if raw.len() != file.k * file.dim * 4 {
            return Err(bad(format!(
                "centroid payload is {} bytes, expected {}",
                raw.len(),
                file.k * file.dim * 4
            )));
        }
        let centroids: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ClusterModel::from_parts(file.k, file.dim, centroids, file.inertia, file.seed, file.n_points)
    }
}

const FORMAT: &str = "cluster-model";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ClusterModelFile {
    format: String,
    version: u32,
    k: usize,
    dim: usize,
    seed: u64,
    n_points: usize,
    inertia: f64,
    /// base64 of the row-major k × dim little-endian f32 centroid matrix
    centroids: String,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    use std::io::Write;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// An account's empirical distribution of images over the k clusters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterProportions {
    pub account_id: String,
    pub proportions: Vec<f64>,
}

/// Fits k-means over `points`, returning the best of `params.restarts`
/// independently seeded runs.
pub fn fit_kmeans(
    points: &[ImageEmbedding],
    params: &KmeansParams,
) -> Result<ClusterModel, ClusterError> {
    if params.k == 0 {
        return Err(ClusterError::ZeroK);
    }
    if points.len() < params.k {
        return Err(ClusterError::TooFewPoints {
            n: points.len(),
            k: params.k,
        });
    }
    let dim = points[0].dim();
    for p in points {
        if p.dim() != dim {
            return Err(ClusterError::DimensionMismatch {
                expected: dim,
                got: p.dim(),
            });
        }
    }
    let restarts = params.restarts.max(1);
    // Deterministic winner: total order on (inertia, restart index) makes the
    // reduction independent of scheduling.
    let best = (0..restarts)
        .into_par_iter()
        .map(|r| (run_restart(points, dim, params, r), r))
        .min_by(|(a, ra), (b, rb)| {
            a.inertia
                .partial_cmp(&b.inertia)
                .expect("inertia is finite")
                .then(ra.cmp(rb))
        })
        .expect("at least one restart")
        .0;
    Ok(ClusterModel {
        k: params.k,
        dim,
        centroids: best.centroids,
        inertia: best.inertia,
        seed: params.seed,
        n_points: points.len(),
    })
}

struct Restart {
    centroids: Vec<f32>,
    inertia: f64,
    /// Inertia measured at each assignment step, for the monotonicity check.
    #[cfg_attr(not(test), allow(dead_code))]
    trace: Vec<f64>,
}

fn run_restart(
    points: &[ImageEmbedding],
    dim: usize,
    params: &KmeansParams,
    restart: usize,
) -> Restart {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(restart as u64));
    let mut centroids = plus_plus_seed(points, dim, params.k, &mut rng);
    let mut trace = Vec::new();
    for _ in 0..params.max_iters {
        let (assignment, dists) = assign_all(points, &centroids, dim);
        trace.push(dists.iter().sum());
        let new_centroids = update_step(points, &assignment, &dists, dim, params.k);
        let shift: f64 = centroids
            .iter()
            .zip(&new_centroids)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        centroids = new_centroids;
        if shift < params.tol {
            break;
        }
    }
    // Round to the stored precision, then recompute the exact objective of
    // the final assignment so the reported inertia matches the stored model.
    let centroids_f32: Vec<f32> = centroids.iter().map(|v| *v as f32).collect();
    let rounded: Vec<f64> = centroids_f32.iter().map(|v| *v as f64).collect();
    let (_, dists) = assign_all(points, &rounded, dim);
    Restart {
        centroids: centroids_f32,
        inertia: dists.iter().sum(),
        trace,
    }
}

/// k-means++ seeding: first center uniform, then D²-weighted draws.
fn plus_plus_seed(points: &[ImageEmbedding], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len();
    let mut centroids: Vec<f64> = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend(points[first].values().iter().map(|v| *v as f64));
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| dist2(p.values(), &centroids[0..dim]))
        .collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let chosen = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut cum = 0.0;
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                cum += w;
                if cum > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // all remaining distances zero (duplicate points)
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend(points[chosen].values().iter().map(|v| *v as f64));
        let new_c = centroids[start..start + dim].to_vec();
        for (i, p) in points.iter().enumerate() {
            let d = dist2(p.values(), &new_c);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

/// Nearest-centroid assignment for every point; parallel over points but
/// order-preserving, so downstream reductions stay deterministic.
fn assign_all(points: &[ImageEmbedding], centroids: &[f64], dim: usize) -> (Vec<u32>, Vec<f64>) {
    let k = centroids.len() / dim;
    let pairs: Vec<(u32, f64)> = points
        .par_iter()
        .map(|p| nearest(p.values(), centroids, dim, k))
        .collect();
    let assignment = pairs.iter().map(|(c, _)| *c).collect();
    let dists = pairs.iter().map(|(_, d)| *d).collect();
    (assignment, dists)
}

/// Index and squared distance of the nearest centroid; ties go to the lowest
/// index because only a strictly smaller distance replaces the incumbent.
fn nearest(p: &[f32], centroids: &[f64], dim: usize, k: usize) -> (u32, f64) {
    let mut best_c = 0u32;
    let mut best_d = f64::INFINITY;
    for c in 0..k {
        let d = dist2(p, &centroids[c * dim..(c + 1) * dim]);
        if d < best_d {
            best_d = d;
            best_c = c as u32;
        }
    }
    (best_c, best_d)
}

fn dist2(p: &[f32], c: &[f64]) -> f64 {
    p.iter()
        .zip(c)
        .map(|(a, b)| {
            let d = *a as f64 - b;
            d * d
        })
        .sum()
}

/// Mean-update step. Sums accumulate sequentially in point order (exact
/// reproducibility); a cluster that lost all its points is re-seeded to the
/// point currently farthest from its assigned centroid.
fn update_step(
    points: &[ImageEmbedding],
    assignment: &[u32],
    dists: &[f64],
    dim: usize,
    k: usize,
) -> Vec<f64> {
    let mut sums = vec![0.0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignment) {
        let c = c as usize;
        counts[c] += 1;
        let row = &mut sums[c * dim..(c + 1) * dim];
        for (acc, v) in row.iter_mut().zip(p.values()) {
            *acc += *v as f64;
        }
    }
    let mut new_centroids = vec![0.0f64; k * dim];
    let mut taken: Vec<usize> = Vec::new();
    for c in 0..k {
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            for d in 0..dim {
                new_centroids[c * dim + d] = sums[c * dim + d] * inv;
            }
        } else {
            // farthest-point reseed, ties to the lowest point index
            let mut far_i = 0usize;
            let mut far_d = f64::NEG_INFINITY;
            for (i, &d) in dists.iter().enumerate() {
                if !taken.contains(&i) && d > far_d {
                    far_d = d;
                    far_i = i;
                }
            }
            taken.push(far_i);
            for (d, v) in points[far_i].values().iter().enumerate() {
                new_centroids[c * dim + d] = *v as f64;
            }
        }
    }
    new_centroids
}

/// Index of the nearest centroid, ties broken toward the lowest index.
pub fn assign(embedding: &ImageEmbedding, model: &ClusterModel) -> Result<usize, ClusterError> {
    if embedding.dim() != model.dim {
        return Err(ClusterError::DimensionMismatch {
            expected: model.dim,
            got: embedding.dim(),
        });
    }
    let centroids: Vec<f64> = model.centroids.iter().map(|v| *v as f64).collect();
    Ok(nearest(embedding.values(), &centroids, model.dim, model.k).0 as usize)
}

/// Fraction of the account's images assigned to each cluster.
pub fn cluster_proportions(
    account_id: &str,
    images: &[ImageEmbedding],
    model: &ClusterModel,
) -> Result<ClusterProportions, ClusterError> {
    if images.is_empty() {
        return Err(ClusterError::Empty);
    }
    let mut counts = vec![0usize; model.k];
    for image in images {
        counts[assign(image, model)?] += 1;
    }
    let total = images.len() as f64;
    Ok(ClusterProportions {
        account_id: account_id.to_string(),
        proportions: counts.iter().map(|c| *c as f64 / total).collect(),
    })
}
