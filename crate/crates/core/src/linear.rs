//! Closed-form ridge regression, the alternative Model 2 regressor.
//!
//! Features and targets are centered, the L2-regularized normal equations
//! are solved by Cholesky factorization, and the intercept is recovered
//! from the training means. When the feature count exceeds the sample
//! count the equivalent dual system (n × n instead of p × p) is solved
//! instead; for λ > 0 the two give identical weights.

use std::path::Path;

use base64::Engine as _;
use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::forest::TrainingMatrix;

#[derive(Debug, thiserror::Error)]
pub enum LinearError {
    #[error("need at least 2 training samples, got {0}")]
    TooFewSamples(usize),
    #[error("ridge lambda must be nonnegative and finite, got {0}")]
    BadLambda(f64),
    #[error("normal equations are singular; increase lambda")]
    Singular,
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid linear model file: {0}")]
    BadModel(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub const DEFAULT_RIDGE_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    weights: Vec<f64>,
    intercept: f64,
    lambda: f64,
}

impl RidgeModel {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, LinearError> {
        if x.len() != self.weights.len() {
            return Err(LinearError::DimensionMismatch {
                expected: self.weights.len(),
                got: x.len(),
            });
        }
        let dot: f64 = self.weights.iter().zip(x).map(|(w, v)| w * v).sum();
        Ok(dot + self.intercept)
    }

    pub fn save(&self, path: &Path) -> Result<(), LinearError> {
        let mut bytes = Vec::with_capacity(self.weights.len() * 8);
        for w in &self.weights {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        let file = LinearModelFile {
            format: FORMAT.to_string(),
            version: VERSION,
            feature_dim: self.weights.len(),
            lambda: self.lambda,
            intercept: self.intercept,
            weights: base64::engine::general_purpose::STANDARD.encode(bytes),
        };
        let json =
            serde_json::to_vec_pretty(&file).map_err(|e| LinearError::BadModel(e.to_string()))?;
        write_atomic(path, &json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RidgeModel, LinearError> {
        let bytes = std::fs::read(path)?;
        let file: LinearModelFile = serde_json::from_slice(&bytes)
            .map_err(|e| LinearError::BadModel(format!("{}: {e}", path.display())))?;
        let bad = |reason: String| LinearError::BadModel(format!("{}: {reason}", path.display()));
        if file.format != FORMAT {
            return Err(bad(format!("format `{}`, expected `{FORMAT}`", file.format)));
        }
        if file.version != VERSION {
            return Err(bad(format!("version {}, expected {VERSION}", file.version)));
        }
        let raw = base64::engine::general_purpose::STANDARD
            .decode(&file.weights)
            .map_err(|e| bad(e.to_string()))?;
        if raw.len() != file.feature_dim * 8 {
            return Err(bad(format!(
                "weight payload of {} bytes for feature_dim {}",
                raw.len(),
                file.feature_dim
            )));
        }
        let weights: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if !file.intercept.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(bad("non-finite coefficients".to_string()));
        }
        Ok(RidgeModel {
            weights,
            intercept: file.intercept,
            lambda: file.lambda,
        })
    }
}

const FORMAT: &str = "linear-model";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LinearModelFile {
    format: String,
    version: u32,
    feature_dim: usize,
    lambda: f64,
    intercept: f64,
    /// base64 of feature_dim little-endian f64 weights
    weights: String,
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

/// Fits ridge regression by centered normal equations:
/// (XcᵀXc + λI) w = Xcᵀ yc, intercept = ȳ − w·x̄.
pub fn train_ridge(data: &TrainingMatrix, lambda: f64) -> Result<RidgeModel, LinearError> {
    let n = data.n();
    let p = data.p();
    if n < 2 {
        return Err(LinearError::TooFewSamples(n));
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(LinearError::BadLambda(lambda));
    }

    let mut x_mean = vec![0.0f64; p];
    for i in 0..n {
        for (m, v) in x_mean.iter_mut().zip(data.row(i)) {
            *m += v;
        }
    }
    for m in &mut x_mean {
        *m /= n as f64;
    }
    let y_mean = data.y().iter().sum::<f64>() / n as f64;

    let xc = DMatrix::from_fn(n, p, |i, j| data.row(i)[j] - x_mean[j]);
    let yc = DVector::from_fn(n, |i, _| data.y()[i] - y_mean);

    let weights = if p <= n {
        solve_primal(&xc, &yc, lambda)?
    } else {
        solve_dual(&xc, &yc, lambda)?
    };

    let shift: f64 = weights.iter().zip(&x_mean).map(|(w, m)| w * m).sum();
    Ok(RidgeModel {
        weights,
        intercept: y_mean - shift,
        lambda,
    })
}

/// p × p system (XᵀX + λI) w = Xᵀy.
fn solve_primal(xc: &DMatrix<f64>, yc: &DVector<f64>, lambda: f64) -> Result<Vec<f64>, LinearError> {
    let p = xc.ncols();
    let mut gram = xc.transpose() * xc;
    for j in 0..p {
        gram[(j, j)] += lambda;
    }
    let rhs = xc.transpose() * yc;
    let chol = Cholesky::new(gram).ok_or(LinearError::Singular)?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

/// n × n dual system (XXᵀ + λI) α = y, w = Xᵀα. For λ > 0 this equals the
/// primal solution but factors the smaller matrix when p > n.
fn solve_dual(xc: &DMatrix<f64>, yc: &DVector<f64>, lambda: f64) -> Result<Vec<f64>, LinearError> {
    let n = xc.nrows();
    let mut gram = xc * xc.transpose();
    for i in 0..n {
        gram[(i, i)] += lambda;
    }
    let chol = Cholesky::new(gram).ok_or(LinearError::Singular)?;
    let alpha = chol.solve(yc);
    Ok((xc.transpose() * alpha).iter().copied().collect())
}
