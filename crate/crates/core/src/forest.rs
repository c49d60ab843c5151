//! Deterministic random-forest regression: CART trees with
//! variance-reduction splits, bootstrap sampling, per-node feature
//! subsampling, out-of-bag scoring, and a k-fold cross-validation harness.
//!
//! Every source of randomness is a counter-derived ChaCha stream (tree t
//! uses seed + t), trees build depth-first with sequential accumulations,
//! and aggregations run in fixed order, so a trained model is bit-identical
//! across runs and worker counts.

use std::path::Path;

use base64::Engine as _;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, AnalysisError};

#[derive(Debug, thiserror::Error)]
pub enum ForestError {
    #[error("need at least 2 training samples, got {0}")]
    TooFewSamples(usize),
    #[error("training matrix shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in training data at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("hyperparameter counts must all be at least 1")]
    BadHyperparams,
    #[error("cross-validation needs 2 <= folds <= n, got folds {folds} with n {n}")]
    BadFolds { folds: usize, n: usize },
    #[error("cross-validation fold failed: {0}")]
    FoldFailed(String),
    #[error("target is constant; R-squared is undefined")]
    ConstantTarget,
    #[error("invalid forest model file: {0}")]
    BadModel(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// How many features each split considers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureRule {
    All,
    OneThird,
    Sqrt,
}

impl FeatureRule {
    pub fn count(&self, p: usize) -> usize {
        match self {
            FeatureRule::All => p,
            FeatureRule::OneThird => (p / 3).max(1),
            FeatureRule::Sqrt => ((p as f64).sqrt().floor() as usize).max(1),
        }
    }

    pub fn parse(s: &str) -> Result<FeatureRule, String> {
        match s.trim() {
            "all" => Ok(FeatureRule::All),
            "one_third" => Ok(FeatureRule::OneThird),
            "sqrt" => Ok(FeatureRule::Sqrt),
            other => Err(format!(
                "unknown features_per_split `{other}` (expected all, one_third, or sqrt)"
            )),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureRule::All => "all",
            FeatureRule::OneThird => "one_third",
            FeatureRule::Sqrt => "sqrt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestHyperparams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub features_per_split: FeatureRule,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestHyperparams {
    fn default() -> Self {
        ForestHyperparams {
            n_trees: 500,
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: FeatureRule::OneThird,
            bootstrap: true,
            seed: 0,
        }
    }
}

/// Row-major n × p feature matrix with aligned targets and account ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMatrix {
    row_ids: Vec<String>,
    x: Vec<f64>,
    p: usize,
    y: Vec<f64>,
}

impl TrainingMatrix {
    pub fn new(
        row_ids: Vec<String>,
        x: Vec<f64>,
        p: usize,
        y: Vec<f64>,
    ) -> Result<TrainingMatrix, ForestError> {
        let n = row_ids.len();
        if p == 0 {
            return Err(ForestError::Shape("p must be at least 1".to_string()));
        }
        if x.len() != n * p {
            return Err(ForestError::Shape(format!(
                "x has {} entries, expected n*p = {}*{}",
                x.len(),
                n,
                p
            )));
        }
        if y.len() != n {
            return Err(ForestError::Shape(format!(
                "y has {} entries, expected {n}",
                y.len()
            )));
        }
        for (i, v) in x.iter().enumerate() {
            if !v.is_finite() {
                return Err(ForestError::NonFinite {
                    row: i / p,
                    col: i % p,
                });
            }
        }
        for (i, v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(ForestError::NonFinite { row: i, col: p });
            }
        }
        Ok(TrainingMatrix { row_ids, x, p, y })
    }

    pub fn n(&self) -> usize {
        self.row_ids.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    /// Copies the selected rows into a new matrix (used by the CV harness).
    pub fn subset(&self, indices: &[usize]) -> TrainingMatrix {
        let mut x = Vec::with_capacity(indices.len() * self.p);
        let mut y = Vec::with_capacity(indices.len());
        let mut row_ids = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
            row_ids.push(self.row_ids[i].clone());
        }
        TrainingMatrix {
            row_ids,
            x,
            p: self.p,
            y,
        }
    }
}

/// Flattened tree node; 32 bytes in the serialized form.
#[derive(Debug, Clone, PartialEq)]
struct Node {
    feature: u32,
    threshold: f64,
    left: u32,
    right: u32,
    leaf: bool,
    value: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    #[cfg_attr(not(test), allow(dead_code))]
    fn leaf(value: f64) -> Tree {
        Tree {
            nodes: vec![Node {
                feature: 0,
                threshold: 0.0,
                left: 0,
                right: 0,
                leaf: true,
                value,
            }],
        }
    }

    fn predict(&self, x: &[f64]) -> f64 {
        let mut node = &self.nodes[0];
        while !node.leaf {
            node = if x[node.feature as usize] <= node.threshold {
                &self.nodes[node.left as usize]
            } else {
                &self.nodes[node.right as usize]
            };
        }
        node.value
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    hyperparams: ForestHyperparams,
    feature_dim: usize,
    trees: Vec<Tree>,
    oob_r2: Option<f64>,
}

impl ForestModel {
    pub fn hyperparams(&self) -> &ForestHyperparams {
        &self.hyperparams
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Out-of-bag R²; absent when bootstrap was off or the score was
    /// undefined (e.g. every sample landed in every bag).
    pub fn oob_r2(&self) -> Option<f64> {
        self.oob_r2
    }

    /// Mean of the per-tree outputs.
    pub fn predict(&self, x: &[f64]) -> Result<f64, ForestError> {
        if x.len() != self.feature_dim {
            return Err(ForestError::DimensionMismatch {
                expected: self.feature_dim,
                got: x.len(),
            });
        }
        let first = self.trees[0].predict(x);
        let mut sum = 0.0f64;
        let mut all_same = true;
        for tree in &self.trees {
            let v = tree.predict(x);
            all_same &= v == first;
            sum += v;
        }
        // unanimous trees short-circuit the rounded average so a forest
        // trained on a constant target returns that constant exactly
        if all_same {
            return Ok(first);
        }
        Ok(sum / self.trees.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<(), ForestError> {
        let trees: Vec<String> = self
            .trees
            .iter()
            .map(|t| {
                let mut bytes = Vec::with_capacity(t.nodes.len() * 32);
                for n in &t.nodes {
                    bytes.extend_from_slice(&n.feature.to_le_bytes());
                    bytes.extend_from_slice(&n.threshold.to_le_bytes());
                    bytes.extend_from_slice(&n.left.to_le_bytes());
                    bytes.extend_from_slice(&n.right.to_le_bytes());
                    bytes.extend_from_slice(&(n.leaf as u32).to_le_bytes());
                    bytes.extend_from_slice(&n.value.to_le_bytes());
                }
                base64::engine::general_purpose::STANDARD.encode(bytes)
            })
            .collect();
        let file = ForestModelFile {
            format: FORMAT.to_string(),
            version: VERSION,
            feature_dim: self.feature_dim,
            oob_r2: self.oob_r2,
            hyperparams: self.hyperparams.clone(),
            trees,
        };
        let json =
            serde_json::to_vec_pretty(&file).map_err(|e| ForestError::BadModel(e.to_string()))?;
        write_atomic(path, &json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ForestModel, ForestError> {
        let bytes = std::fs::read(path)?;
        let file: ForestModelFile = serde_json::from_slice(&bytes)
            .map_err(|e| ForestError::BadModel(format!("{}: {e}", path.display())))?;
        let bad = |reason: String| ForestError::BadModel(format!("{}: {reason}", path.display()));
        if file.format != FORMAT {
            return Err(bad(format!("format `{}`, expected `{FORMAT}`", file.format)));
        }
        if file.version != VERSION {
            return Err(bad(format!("version {}, expected {VERSION}", file.version)));
        }
        let mut trees = Vec::with_capacity(file.trees.len());
        for (t, encoded) in file.trees.iter().enumerate() {
            let raw = base64::engine::general_purpose::STANDARD
                .decode(encoded)
                .map_err(|e| bad(format!("tree {t}: {e}")))?;
            if raw.is_empty() || raw.len() % 32 != 0 {
                return Err(bad(format!("tree {t}: payload of {} bytes", raw.len())));
            }
            let count = raw.len() / 32;
            let mut nodes = Vec::with_capacity(count);
            for chunk in raw.chunks_exact(32) {
                let feature = u32::from_le_bytes(chunk[0..4].try_into().unwrap());
                let threshold = f64::from_le_bytes(chunk[4..12].try_into().unwrap());
                let left = u32::from_le_bytes(chunk[12..16].try_into().unwrap());
                let right = u32::from_le_bytes(chunk[16..20].try_into().unwrap());
                let leaf_flag = u32::from_le_bytes(chunk[20..24].try_into().unwrap());
                let value = f64::from_le_bytes(chunk[24..32].try_into().unwrap());
                if leaf_flag > 1 {
                    return Err(bad(format!("tree {t}: bad leaf flag {leaf_flag}")));
                }
                let leaf = leaf_flag == 1;
                if !leaf {
                    if feature as usize >= file.feature_dim {
                        return Err(bad(format!(
                            "tree {t}: split feature {feature} out of range"
                        )));
                    }
                    if left as usize >= count || right as usize >= count {
                        return Err(bad(format!("tree {t}: child index out of range")));
                    }
                }
                if !threshold.is_finite() || !value.is_finite() {
                    return Err(bad(format!("tree {t}: non-finite node payload")));
                }
                nodes.push(Node {
                    feature,
                    threshold,
                    left,
                    right,
                    leaf,
                    value,
                });
            }
            trees.push(Tree { nodes });
        }
        Ok(ForestModel {
            hyperparams: file.hyperparams,
            feature_dim: file.feature_dim,
            trees,
            oob_r2: file.oob_r2,
        })
    }
}

const FORMAT: &str = "forest-model";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ForestModelFile {
    format: String,
    version: u32,
    feature_dim: usize,
    oob_r2: Option<f64>,
    hyperparams: ForestHyperparams,
    /// one base64 string per tree; each decodes to a flat array of
    /// 32-byte nodes (feature u32, threshold f64, left u32, right u32,
    /// leaf flag u32, value f64; all little-endian)
    trees: Vec<String>,
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

/// Trains a forest of `hp.n_trees` CART regression trees. Tree t draws its
/// bootstrap sample and feature subsets from a ChaCha stream seeded with
/// `hp.seed + t`, so training parallelizes across trees without affecting
/// the result.
pub fn train_forest(
    data: &TrainingMatrix,
    hp: &ForestHyperparams,
) -> Result<ForestModel, ForestError> {
    if data.n() < 2 {
        return Err(ForestError::TooFewSamples(data.n()));
    }
    if hp.n_trees == 0 || hp.min_samples_leaf == 0 || hp.max_depth == Some(0) {
        return Err(ForestError::BadHyperparams);
    }
    let results: Vec<(Tree, Vec<(u32, f64)>)> = (0..hp.n_trees)
        .into_par_iter()
        .map(|t| train_one_tree(data, hp, t as u64))
        .collect();

    // Out-of-bag aggregation in tree order, then sample order: exact
    // reproducibility for the floating-point sums.
    let oob_r2 = if hp.bootstrap {
        let n = data.n();
        let mut sums = vec![0.0f64; n];
        let mut counts = vec![0u32; n];
        for (_, oob) in &results {
            for &(i, pred) in oob {
                sums[i as usize] += pred;
                counts[i as usize] += 1;
            }
        }
        let mut y_oob = Vec::new();
        let mut pred_oob = Vec::new();
        for i in 0..n {
            if counts[i] > 0 {
                y_oob.push(data.y()[i]);
                pred_oob.push(sums[i] / counts[i] as f64);
            }
        }
        match analysis::r_squared(&y_oob, &pred_oob) {
            Ok(r2) => Some(r2),
            Err(AnalysisError::Empty) | Err(AnalysisError::ConstantInput) => None,
            Err(e) => return Err(ForestError::Shape(e.to_string())),
        }
    } else {
        None
    };

    Ok(ForestModel {
        hyperparams: hp.clone(),
        feature_dim: data.p(),
        trees: results.into_iter().map(|(t, _)| t).collect(),
        oob_r2,
    })
}

/// Builds tree `t` and returns it with its out-of-bag predictions
/// (sample index, prediction), in ascending sample order.
fn train_one_tree(
    data: &TrainingMatrix,
    hp: &ForestHyperparams,
    t: u64,
) -> (Tree, Vec<(u32, f64)>) {
    let n = data.n();
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed.wrapping_add(t));
    let (mut indices, in_bag) = if hp.bootstrap {
        let mut in_bag = vec![false; n];
        let indices: Vec<u32> = (0..n)
            .map(|_| {
                let i = rng.random_range(0..n);
                in_bag[i] = true;
                i as u32
            })
            .collect();
        (indices, Some(in_bag))
    } else {
        ((0..n as u32).collect(), None)
    };

    let mut builder = TreeBuilder {
        data,
        hp,
        rng,
        nodes: Vec::new(),
    };
    builder.build(&mut indices, 0);
    let tree = Tree {
        nodes: builder.nodes,
    };

    let oob = match in_bag {
        Some(in_bag) => (0..n)
            .filter(|i| !in_bag[*i])
            .map(|i| (i as u32, tree.predict(data.row(i))))
            .collect(),
        None => Vec::new(),
    };
    (tree, oob)
}

struct TreeBuilder<'a> {
    data: &'a TrainingMatrix,
    hp: &'a ForestHyperparams,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    /// Builds the subtree over `idx` (sample indices, bootstrap multiplicity
    /// included) and returns its node id. Children build depth-first,
    /// left before right.
    fn build(&mut self, idx: &mut [u32], depth: usize) -> u32 {
        let node_id = self.nodes.len() as u32;
        // The rounded sum of n identical values divided by n can be off by
        // an ulp; take the exact value when the targets agree so constant
        // targets reproduce exactly.
        let first_y = self.data.y()[idx[0] as usize];
        let constant = idx.iter().all(|&i| self.data.y()[i as usize] == first_y);
        let mean = if constant {
            first_y
        } else {
            let sum: f64 = idx.iter().map(|&i| self.data.y()[i as usize]).sum();
            sum / idx.len() as f64
        };
        self.nodes.push(Node {
            feature: 0,
            threshold: 0.0,
            left: 0,
            right: 0,
            leaf: true,
            value: mean,
        });

        let splittable = !constant
            && idx.len() >= 2 * self.hp.min_samples_leaf
            && self.hp.max_depth.map_or(true, |d| depth < d);
        if !splittable {
            return node_id;
        }
        let Some((feature, threshold)) = self.best_split(idx, mean) else {
            return node_id;
        };

        let (mut left, mut right): (Vec<u32>, Vec<u32>) = idx
            .iter()
            .partition(|&&i| self.data.row(i as usize)[feature as usize] <= threshold);
        let left_id = self.build(&mut left, depth + 1);
        let right_id = self.build(&mut right, depth + 1);
        let node = &mut self.nodes[node_id as usize];
        node.feature = feature;
        node.threshold = threshold;
        node.left = left_id;
        node.right = right_id;
        node.leaf = false;
        node_id
    }

    /// Finds the variance-reduction-maximizing (feature, threshold).
    ///
    /// Candidate features are a random draw without replacement; features
    /// that are constant within the node do not count against the quota, so
    /// a node splits whenever any feature still varies (this is what makes
    /// a full-depth tree memorize distinct rows even with feature
    /// subsampling). Candidates are evaluated in ascending feature order and
    /// only a strictly better reduction replaces the incumbent, which
    /// implements the (lowest feature, lowest threshold) tie-break.
    fn best_split(&mut self, idx: &[u32], mean: f64) -> Option<(u32, f64)> {
        let p = self.data.p();
        let quota = self.hp.features_per_split.count(p);
        let mut order: Vec<u32> = (0..p as u32).collect();
        order.shuffle(&mut self.rng);

        let mut candidates: Vec<u32> = Vec::with_capacity(quota);
        for &f in &order {
            if candidates.len() >= quota {
                break;
            }
            let first = self.data.row(idx[0] as usize)[f as usize];
            if idx
                .iter()
                .any(|&i| self.data.row(i as usize)[f as usize] != first)
            {
                candidates.push(f);
            }
        }
        candidates.sort_unstable();

        let msl = self.hp.min_samples_leaf;
        let n = idx.len();
        let mut best: Option<(f64, u32, f64)> = None; // (reduction, feature, threshold)
        let mut sorted: Vec<(f64, u32)> = Vec::with_capacity(n);
        for &f in &candidates {
            sorted.clear();
            sorted.extend(
                idx.iter()
                    .map(|&i| (self.data.row(i as usize)[f as usize], i)),
            );
            sorted.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

            // prefix scan over targets centered on the node mean
            let total_sy: f64 = sorted
                .iter()
                .map(|&(_, i)| self.data.y()[i as usize] - mean)
                .sum();
            let total_syy: f64 = sorted
                .iter()
                .map(|&(_, i)| {
                    let z = self.data.y()[i as usize] - mean;
                    z * z
                })
                .sum();
            let mut sy = 0.0f64;
            let mut syy = 0.0f64;
            for s in 1..n {
                let (x_prev, i_prev) = sorted[s - 1];
                let z = self.data.y()[i_prev as usize] - mean;
                sy += z;
                syy += z * z;
                let x_next = sorted[s].0;
                if x_prev == x_next || s < msl || n - s < msl {
                    continue;
                }
                let threshold = x_prev + (x_next - x_prev) / 2.0;
                if !(x_prev < threshold && threshold < x_next) {
                    // adjacent floats: midpoint collapses onto an endpoint
                    continue;
                }
                let nl = s as f64;
                let nr = (n - s) as f64;
                let sse_left = syy - sy * sy / nl;
                let sse_right = (total_syy - syy) - (total_sy - sy) * (total_sy - sy) / nr;
                let reduction = total_syy - sse_left - sse_right;
                if reduction > 0.0 && best.map_or(true, |(b, _, _)| reduction > b) {
                    best = Some((reduction, f, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

/// Per-fold and pooled cross-validation scores. `held_out[i]` is row i's
/// prediction from the fold that held it out.
#[derive(Debug, Clone)]
pub struct CvResult {
    /// R² within each fold; absent when the fold's targets are constant.
    pub fold_r2: Vec<Option<f64>>,
    /// R² over all held-out predictions, concatenated in row order.
    pub pooled_r2: f64,
    pub held_out: Vec<f64>,
}

/// Seeded k-fold cross-validation of a forest with the given
/// hyperparameters. See [`cross_validate_with`] for the fold protocol.
pub fn cross_validate(
    data: &TrainingMatrix,
    hp: &ForestHyperparams,
    folds: usize,
    seed: u64,
) -> Result<CvResult, ForestError> {
    cross_validate_with(
        data,
        folds,
        seed,
        |fold_data| train_forest(fold_data, hp).map_err(|e| e.to_string()),
        |model, x| model.predict(x).map_err(|e| e.to_string()),
    )
}

/// Seeded k-fold cross-validation harness for any regressor: rows are
/// shuffled once, split into contiguous folds (the first n mod folds folds
/// get one extra row), and `train` fits on each fold's complement.
pub fn cross_validate_with<M>(
    data: &TrainingMatrix,
    folds: usize,
    seed: u64,
    mut train: impl FnMut(&TrainingMatrix) -> Result<M, String>,
    predict: impl Fn(&M, &[f64]) -> Result<f64, String>,
) -> Result<CvResult, ForestError> {
    let n = data.n();
    if folds < 2 || n < folds {
        return Err(ForestError::BadFolds { folds, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let base = n / folds;
    let extra = n % folds;
    let mut held_out = vec![f64::NAN; n];
    let mut fold_r2 = Vec::with_capacity(folds);
    let mut start = 0usize;
    for fold in 0..folds {
        let size = base + usize::from(fold < extra);
        let test_idx = &order[start..start + size];
        start += size;
        let train_idx: Vec<usize> = order
            .iter()
            .copied()
            .filter(|i| !test_idx.contains(i))
            .collect();
        let model = train(&data.subset(&train_idx)).map_err(ForestError::FoldFailed)?;
        let mut y_fold = Vec::with_capacity(size);
        let mut pred_fold = Vec::with_capacity(size);
        for &i in test_idx {
            let pred = predict(&model, data.row(i)).map_err(ForestError::FoldFailed)?;
            held_out[i] = pred;
            y_fold.push(data.y()[i]);
            pred_fold.push(pred);
        }
        fold_r2.push(match analysis::r_squared(&y_fold, &pred_fold) {
            Ok(r2) => Some(r2),
            Err(AnalysisError::ConstantInput) => None,
            Err(e) => return Err(ForestError::Shape(e.to_string())),
        });
    }
    let pooled_r2 = analysis::r_squared(data.y(), &held_out).map_err(|e| match e {
        AnalysisError::ConstantInput => ForestError::ConstantTarget,
        other => ForestError::Shape(other.to_string()),
    })?;
    Ok(CvResult {
        fold_r2,
        pooled_r2,
        held_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// n random rows with distinct features and a noisy linear target.
    fn linear_data(n: usize, p: usize, noise: f64, seed: u64) -> TrainingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(n * p);
        let mut y = Vec::with_capacity(n);
        let mut ids = Vec::with_capacity(n);
        for i in 0..n {
            let row: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let target = 2.0 * row[0] - 0.5 * row[p.min(2) - 1]
                + noise * rng.random_range(-1.0..1.0);
            x.extend_from_slice(&row);
            y.push(target);
            ids.push(format!("row{i}"));
        }
        TrainingMatrix::new(ids, x, p, y).unwrap()
    }

    fn single_tree_hp(features: FeatureRule) -> ForestHyperparams {
        ForestHyperparams {
            n_trees: 1,
            bootstrap: false,
            features_per_split: features,
            ..ForestHyperparams::default()
        }
    }

    #[test]
    fn single_full_tree_memorizes_distinct_rows() {
        let data = linear_data(12, 3, 0.3, 1);
        for rule in [FeatureRule::All, FeatureRule::OneThird, FeatureRule::Sqrt] {
            let model = train_forest(&data, &single_tree_hp(rule)).unwrap();
            for i in 0..data.n() {
                let pred = model.predict(data.row(i)).unwrap();
                assert_eq!(pred, data.y()[i], "rule {rule:?}, row {i}");
            }
        }
    }

    #[test]
    fn constant_target_predicts_the_constant() {
        let mut data = linear_data(10, 2, 0.0, 2);
        data = TrainingMatrix::new(
            data.row_ids().to_vec(),
            (0..10 * 2).map(|i| i as f64).collect(),
            2,
            vec![0.3; 10],
        )
        .unwrap();
        let hp = ForestHyperparams {
            n_trees: 20,
            ..ForestHyperparams::default()
        };
        let model = train_forest(&data, &hp).unwrap();
        for i in 0..data.n() {
            assert_eq!(model.predict(data.row(i)).unwrap(), 0.3);
        }
        assert_eq!(model.predict(&[100.0, -100.0]).unwrap(), 0.3);
    }

    #[test]
    fn prediction_is_mean_of_tree_outputs() {
        let model = ForestModel {
            hyperparams: ForestHyperparams::default(),
            feature_dim: 2,
            trees: vec![Tree::leaf(0.2), Tree::leaf(0.4)],
            oob_r2: None,
        };
        assert_abs_diff_eq!(model.predict(&[0.0, 0.0]).unwrap(), 0.3, epsilon = 1e-15);
        assert!(matches!(
            model.predict(&[0.0]),
            Err(ForestError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn predictions_stay_within_training_target_range() {
        let data = linear_data(40, 4, 0.5, 3);
        let lo = data.y().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = data.y().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let hp = ForestHyperparams {
            n_trees: 30,
            seed: 9,
            ..ForestHyperparams::default()
        };
        let model = train_forest(&data, &hp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let pred = model.predict(&x).unwrap();
            assert!(pred >= lo - 1e-12 && pred <= hi + 1e-12, "{pred} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn shifting_targets_shifts_predictions() {
        let data = linear_data(30, 3, 0.4, 5);
        let shifted = TrainingMatrix::new(
            data.row_ids().to_vec(),
            (0..data.n()).flat_map(|i| data.row(i).to_vec()).collect(),
            3,
            data.y().iter().map(|y| y + 0.5).collect(),
        )
        .unwrap();
        let hp = ForestHyperparams {
            n_trees: 15,
            seed: 21,
            ..ForestHyperparams::default()
        };
        let base = train_forest(&data, &hp).unwrap();
        let moved = train_forest(&shifted, &hp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..30 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = base.predict(&x).unwrap();
            let b = moved.predict(&x).unwrap();
            assert_abs_diff_eq!(b, a + 0.5, epsilon = 1e-9);
        }
    }

    #[test]
    fn training_is_bit_identical_across_worker_counts() {
        let data = linear_data(50, 5, 0.3, 7);
        let hp = ForestHyperparams {
            n_trees: 24,
            seed: 13,
            ..ForestHyperparams::default()
        };
        let mut models = Vec::new();
        for threads in [1usize, 4, 8] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            models.push(pool.install(|| train_forest(&data, &hp).unwrap()));
        }
        assert_eq!(models[0], models[1]);
        assert_eq!(models[0], models[2]);
        assert_eq!(
            models[0].oob_r2().unwrap().to_bits(),
            models[1].oob_r2().unwrap().to_bits()
        );
    }

    #[test]
    fn oob_score_present_only_with_bootstrap() {
        let data = linear_data(60, 3, 0.2, 8);
        let with = ForestHyperparams {
            n_trees: 100,
            seed: 1,
            ..ForestHyperparams::default()
        };
        let model = train_forest(&data, &with).unwrap();
        let oob = model.oob_r2().expect("bootstrap forests report OOB");
        assert!(oob > 0.5, "OOB R² {oob} unexpectedly weak");

        let without = ForestHyperparams {
            bootstrap: false,
            n_trees: 5,
            ..ForestHyperparams::default()
        };
        assert!(train_forest(&data, &without).unwrap().oob_r2().is_none());
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let tiny = linear_data(1, 2, 0.0, 9);
        assert!(matches!(
            train_forest(&tiny, &ForestHyperparams::default()),
            Err(ForestError::TooFewSamples(1))
        ));
        assert!(matches!(
            TrainingMatrix::new(vec!["a".into()], vec![f64::NAN, 0.0], 2, vec![0.0]),
            Err(ForestError::NonFinite { row: 0, col: 0 })
        ));
        assert!(matches!(
            TrainingMatrix::new(vec!["a".into()], vec![0.0], 1, vec![f64::INFINITY]),
            Err(ForestError::NonFinite { row: 0, col: 1 })
        ));
        let data = linear_data(10, 2, 0.0, 10);
        let bad = ForestHyperparams {
            n_trees: 0,
            ..ForestHyperparams::default()
        };
        assert!(matches!(
            train_forest(&data, &bad),
            Err(ForestError::BadHyperparams)
        ));
    }

    #[test]
    fn feature_rule_counts() {
        assert_eq!(FeatureRule::All.count(8), 8);
        assert_eq!(FeatureRule::OneThird.count(1), 1);
        assert_eq!(FeatureRule::OneThird.count(8), 2);
        assert_eq!(FeatureRule::OneThird.count(64), 21);
        assert_eq!(FeatureRule::Sqrt.count(64), 8);
        assert_eq!(FeatureRule::Sqrt.count(10), 3);
        assert!(FeatureRule::parse("one_third").is_ok());
        assert!(FeatureRule::parse("half").is_err());
    }

    #[test]
    fn max_depth_one_yields_stumps() {
        let data = linear_data(30, 2, 0.1, 11);
        let hp = ForestHyperparams {
            n_trees: 4,
            max_depth: Some(1),
            bootstrap: false,
            features_per_split: FeatureRule::All,
            seed: 2,
            ..ForestHyperparams::default()
        };
        let model = train_forest(&data, &hp).unwrap();
        for tree in &model.trees {
            assert!(tree.nodes.len() <= 3, "stump has at most 3 nodes");
        }
    }

    #[test]
    fn cross_validation_reaches_one_on_memorizable_duplicates() {
        // 3 distinct rows, each duplicated 10 times: every held-out row also
        // appears in training, so a full tree predicts it exactly.
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut ids = Vec::new();
        for rep in 0..10 {
            for (j, (a, b, target)) in
                [(0.0, 1.0, -0.4), (1.0, 0.0, 0.2), (1.0, 1.0, 0.9)].iter().enumerate()
            {
                x.extend_from_slice(&[*a, *b]);
                y.push(*target);
                ids.push(format!("r{rep}c{j}"));
            }
        }
        let data = TrainingMatrix::new(ids, x, 2, y).unwrap();
        let hp = single_tree_hp(FeatureRule::All);
        let cv = cross_validate(&data, &hp, 5, 77).unwrap();
        assert_abs_diff_eq!(cv.pooled_r2, 1.0, epsilon = 1e-12);
        for fold in &cv.fold_r2 {
            if let Some(r2) = fold {
                assert_abs_diff_eq!(*r2, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cross_validation_on_shuffled_targets_scores_near_zero() {
        use rand::seq::SliceRandom;
        let hp = ForestHyperparams {
            n_trees: 40,
            seed: 3,
            ..ForestHyperparams::default()
        };
        let mut pooled = Vec::new();
        for rep in 0..10 {
            let data = linear_data(60, 4, 0.1, 100 + rep);
            let mut y = data.y().to_vec();
            let mut rng = ChaCha8Rng::seed_from_u64(500 + rep);
            y.shuffle(&mut rng);
            let shuffled = TrainingMatrix::new(
                data.row_ids().to_vec(),
                (0..data.n()).flat_map(|i| data.row(i).to_vec()).collect(),
                4,
                y,
            )
            .unwrap();
            pooled.push(cross_validate(&shuffled, &hp, 5, rep).unwrap().pooled_r2);
        }
        let mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
        assert!(mean <= 0.1, "null-model pooled R² mean {mean}: {pooled:?}");
    }

    #[test]
    fn leave_one_out_is_legal() {
        let data = linear_data(10, 2, 0.05, 12);
        let hp = ForestHyperparams {
            n_trees: 10,
            seed: 4,
            ..ForestHyperparams::default()
        };
        let cv = cross_validate(&data, &hp, 10, 1).unwrap();
        assert!(cv.pooled_r2.is_finite());
        assert_eq!(cv.fold_r2.len(), 10);
        // single-row folds have constant targets, so per-fold R² is absent
        assert!(cv.fold_r2.iter().all(|r| r.is_none()));
        assert!(cv.held_out.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn cross_validation_rejects_bad_fold_counts() {
        let data = linear_data(10, 2, 0.0, 13);
        let hp = ForestHyperparams::default();
        assert!(matches!(
            cross_validate(&data, &hp, 1, 0),
            Err(ForestError::BadFolds { folds: 1, n: 10 })
        ));
        assert!(matches!(
            cross_validate(&data, &hp, 11, 0),
            Err(ForestError::BadFolds { folds: 11, n: 10 })
        ));
    }

    #[test]
    fn model_file_round_trips_bit_exactly() {
        let data = linear_data(25, 3, 0.2, 14);
        let hp = ForestHyperparams {
            n_trees: 8,
            seed: 5,
            ..ForestHyperparams::default()
        };
        let model = train_forest(&data, &hp).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("forest.json");
        model.save(&path).unwrap();
        let back = ForestModel::load(&path).unwrap();
        assert_eq!(model, back);
        let x = [0.25, -0.5, 0.75];
        assert_eq!(
            model.predict(&x).unwrap().to_bits(),
            back.predict(&x).unwrap().to_bits()
        );

        // saving the reloaded model reproduces the file byte-for-byte
        let path2 = dir.path().join("forest2.json");
        back.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());

        std::fs::write(&path, b"not json").unwrap();
        assert!(matches!(
            ForestModel::load(&path),
            Err(ForestError::BadModel(_))
        ));
    }

    #[test]
    fn split_determinism_same_seed_same_trees() {
        let data = linear_data(40, 6, 0.25, 15);
        let hp = ForestHyperparams {
            n_trees: 12,
            seed: 99,
            ..ForestHyperparams::default()
        };
        let a = train_forest(&data, &hp).unwrap();
        let b = train_forest(&data, &hp).unwrap();
        assert_eq!(a, b);
        let different_seed = ForestHyperparams { seed: 100, ..hp };
        let c = train_forest(&data, &different_seed).unwrap();
        assert_ne!(a, c, "different seed should alter at least one tree");
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn matrix(xs: &[f64], ys: &[f64], p: usize) -> TrainingMatrix {
            let n = (xs.len() / p).min(ys.len());
            let ids = (0..n).map(|i| format!("row-{i:03}")).collect();
            TrainingMatrix::new(ids, xs[..n * p].to_vec(), p, ys[..n].to_vec()).unwrap()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            /// Leaf means are convex combinations of targets, so every
            /// prediction stays inside the training-target range.
            #[test]
            fn predictions_stay_inside_the_target_range(
                xs in proptest::collection::vec(-3.0f64..3.0, 40..160),
                ys in proptest::collection::vec(-2.0f64..2.0, 10..40),
                queries in proptest::collection::vec(-10.0f64..10.0, 12..24),
                p in 2usize..5,
                seed in 0u64..200,
            ) {
                prop_assume!(xs.len() / p >= 2 && ys.len() >= 2);
                let data = matrix(&xs, &ys, p);
                let hp = ForestHyperparams { n_trees: 25, seed, ..ForestHyperparams::default() };
                let model = train_forest(&data, &hp).unwrap();
                let lo = data.y().iter().copied().fold(f64::INFINITY, f64::min);
                let hi = data.y().iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for q in queries.chunks_exact(p) {
                    let pred = model.predict(q).unwrap();
                    prop_assert!((lo..=hi).contains(&pred), "{pred} outside [{lo}, {hi}]");
                }
            }

            /// Pooled cross-validation R² can never exceed 1.
            #[test]
            fn pooled_cv_r2_never_exceeds_one(
                xs in proptest::collection::vec(-3.0f64..3.0, 60..160),
                ys in proptest::collection::vec(-2.0f64..2.0, 12..40),
                folds in 2usize..5,
                seed in 0u64..200,
            ) {
                let p = 3;
                prop_assume!(xs.len() / p >= folds && ys.len() >= folds);
                let data = matrix(&xs, &ys, p);
                prop_assume!(data.y().iter().any(|v| *v != data.y()[0]));
                let hp = ForestHyperparams { n_trees: 20, seed, ..ForestHyperparams::default() };
                let cv = cross_validate(&data, &hp, folds, seed).unwrap();
                prop_assert!(cv.pooled_r2 <= 1.0 + 1e-12, "pooled R² {}", cv.pooled_r2);
                prop_assert_eq!(cv.fold_r2.len(), folds);
                prop_assert_eq!(cv.held_out.len(), data.n());
            }
        }
    }
}
