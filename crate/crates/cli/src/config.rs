//! Pipeline configuration: a flat `key = value` file, every key
//! overridable by a same-named command-line flag, and the effective
//! configuration archived verbatim next to each stage's outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ideolens_core::forest::FeatureRule;

/// Which images the k-means model fits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterScope {
    /// labeled training accounts only (the politician corpus in the
    /// original study)
    Labeled,
    /// every account in the manifest
    All,
}

impl ClusterScope {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "labeled" => Ok(ClusterScope::Labeled),
            "all" => Ok(ClusterScope::All),
            other => bail!("unknown cluster_scope `{other}` (expected labeled or all)"),
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            ClusterScope::Labeled => "labeled",
            ClusterScope::All => "all",
        }
    }
}

/// Regressor family for Model 2 (raw mean-embedding features).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model2Regressor {
    Forest,
    Linear,
}

impl Model2Regressor {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "forest" => Ok(Model2Regressor::Forest),
            "linear" => Ok(Model2Regressor::Linear),
            other => bail!("unknown model2_regressor `{other}` (expected forest or linear)"),
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Model2Regressor::Forest => "forest",
            Model2Regressor::Linear => "linear",
        }
    }
}

/// Effective settings for every stage. Optional paths stay unset until the
/// stage that requires them checks.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// corpus manifest CSV
    pub manifest: Option<PathBuf>,
    /// optional ideology-label sidecar CSV
    pub labels: Option<PathBuf>,
    /// embedding backend descriptor (stub, stub:<dim>,
    /// precomputed:<dim>:<tag>, onnx:<path>)
    pub backend: String,
    pub cache_dir: PathBuf,
    /// stage output directory
    pub out: PathBuf,
    /// directory holding a train stage's model files (predict input)
    pub models: Option<PathBuf>,
    /// predictions CSV (report input)
    pub predictions: Option<PathBuf>,
    pub seed: u64,
    /// rayon worker count; 0 means all cores
    pub workers: usize,
    pub k: usize,
    pub kmeans_restarts: usize,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
    pub cluster_scope: ClusterScope,
    pub trees: usize,
    /// 0 means unlimited depth
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub features_per_split: FeatureRule,
    pub bootstrap: bool,
    pub model2_regressor: Model2Regressor,
    pub ridge_lambda: f64,
    pub folds: usize,
    pub bins: usize,
    pub hist_lo: f64,
    pub hist_hi: f64,
    /// whether predict also scores the labeled training accounts
    pub score_training: bool,
    pub synth_politicians: usize,
    pub synth_campaign_size: usize,
    pub synth_dim: usize,
    pub synth_k: usize,
    pub synth_noise_std: f64,
    pub synth_label_noise_std: f64,
    pub synth_images_lo: u32,
    pub synth_images_hi: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            manifest: None,
            labels: None,
            backend: "stub".to_string(),
            cache_dir: PathBuf::from("cache"),
            out: PathBuf::from("out"),
            models: None,
            predictions: None,
            seed: 42,
            workers: 0,
            k: 8,
            kmeans_restarts: 10,
            kmeans_max_iters: 300,
            kmeans_tol: 1e-4,
            cluster_scope: ClusterScope::Labeled,
            trees: 500,
            max_depth: 0,
            min_samples_leaf: 1,
            features_per_split: FeatureRule::OneThird,
            bootstrap: true,
            model2_regressor: Model2Regressor::Forest,
            ridge_lambda: 1.0,
            folds: 5,
            bins: 40,
            hist_lo: -1.0,
            hist_hi: 1.0,
            score_training: true,
            synth_politicians: 700,
            synth_campaign_size: 150,
            synth_dim: 64,
            synth_k: 8,
            synth_noise_std: 0.1,
            synth_label_noise_std: 0.05,
            synth_images_lo: 15,
            synth_images_hi: 25,
        }
    }
}

/// Command-line overrides; every config key has a same-named flag
/// (kebab-case). Unset flags leave the file/default value in place.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    #[arg(long, global = true, help = "Corpus manifest CSV")]
    pub manifest: Option<PathBuf>,
    #[arg(long, global = true, help = "Ideology label sidecar CSV")]
    pub labels: Option<PathBuf>,
    #[arg(long, global = true, help = "Embedding backend descriptor")]
    pub backend: Option<String>,
    #[arg(long, global = true, help = "Embedding cache directory")]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, global = true, help = "Stage output directory")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, help = "Directory with trained model files")]
    pub models: Option<PathBuf>,
    #[arg(long, global = true, help = "Predictions CSV consumed by report")]
    pub predictions: Option<PathBuf>,
    #[arg(long, global = true, help = "Master random seed")]
    pub seed: Option<u64>,
    #[arg(long, global = true, help = "Worker threads (0 = all cores)")]
    pub workers: Option<usize>,
    #[arg(long, global = true, help = "Number of k-means clusters")]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub kmeans_restarts: Option<usize>,
    #[arg(long, global = true)]
    pub kmeans_max_iters: Option<usize>,
    #[arg(long, global = true)]
    pub kmeans_tol: Option<f64>,
    #[arg(long, global = true, help = "Images k-means fits on: labeled | all")]
    pub cluster_scope: Option<String>,
    #[arg(long, global = true, help = "Trees per forest")]
    pub trees: Option<usize>,
    #[arg(long, global = true, help = "Maximum tree depth (0 = unlimited)")]
    pub max_depth: Option<usize>,
    #[arg(long, global = true)]
    pub min_samples_leaf: Option<usize>,
    #[arg(long, global = true, help = "all | one_third | sqrt")]
    pub features_per_split: Option<String>,
    #[arg(long, global = true, help = "Bootstrap resampling: true | false")]
    pub bootstrap: Option<bool>,
    #[arg(long, global = true, help = "Model 2 regressor: forest | linear")]
    pub model2_regressor: Option<String>,
    #[arg(long, global = true)]
    pub ridge_lambda: Option<f64>,
    #[arg(long, global = true, help = "Cross-validation folds")]
    pub folds: Option<usize>,
    #[arg(long, global = true, help = "Histogram bin count")]
    pub bins: Option<usize>,
    #[arg(long, global = true)]
    pub hist_lo: Option<f64>,
    #[arg(long, global = true)]
    pub hist_hi: Option<f64>,
    #[arg(long, global = true, help = "Also score training accounts: true | false")]
    pub score_training: Option<bool>,
    #[arg(long, global = true)]
    pub synth_politicians: Option<usize>,
    #[arg(long, global = true)]
    pub synth_campaign_size: Option<usize>,
    #[arg(long, global = true)]
    pub synth_dim: Option<usize>,
    #[arg(long, global = true)]
    pub synth_k: Option<usize>,
    #[arg(long, global = true)]
    pub synth_noise_std: Option<f64>,
    #[arg(long, global = true)]
    pub synth_label_noise_std: Option<f64>,
    #[arg(long, global = true)]
    pub synth_images_lo: Option<u32>,
    #[arg(long, global = true)]
    pub synth_images_hi: Option<u32>,
}

impl PipelineConfig {
    /// Defaults, then the config file (if given), then command-line
    /// overrides; validates the result.
    pub fn load(config_file: Option<&Path>, overrides: &Overrides) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = config_file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            cfg.apply_file(&text)
                .with_context(|| format!("in config file {}", path.display()))?;
        }
        cfg.apply_overrides(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_file(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected `key = value`, got `{raw}`", lineno + 1);
            };
            let key = key.trim();
            let value = value.trim();
            self.set(key, value)
                .with_context(|| format!("line {}: key `{key}`", lineno + 1))?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse::<T>()
                .map_err(|e| anyhow::anyhow!("invalid value `{value}` for {key}: {e}"))
        }
        match key {
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "labels" => self.labels = Some(PathBuf::from(value)),
            "backend" => self.backend = value.to_string(),
            "cache_dir" => self.cache_dir = PathBuf::from(value),
            "out" => self.out = PathBuf::from(value),
            "models" => self.models = Some(PathBuf::from(value)),
            "predictions" => self.predictions = Some(PathBuf::from(value)),
            "seed" => self.seed = num(key, value)?,
            "workers" => self.workers = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "kmeans_restarts" => self.kmeans_restarts = num(key, value)?,
            "kmeans_max_iters" => self.kmeans_max_iters = num(key, value)?,
            "kmeans_tol" => self.kmeans_tol = num(key, value)?,
            "cluster_scope" => self.cluster_scope = ClusterScope::parse(value)?,
            "trees" => self.trees = num(key, value)?,
            "max_depth" => self.max_depth = num(key, value)?,
            "min_samples_leaf" => self.min_samples_leaf = num(key, value)?,
            "features_per_split" => {
                self.features_per_split =
                    FeatureRule::parse(value).map_err(|e| anyhow::anyhow!(e))?
            }
            "bootstrap" => self.bootstrap = num(key, value)?,
            "model2_regressor" => self.model2_regressor = Model2Regressor::parse(value)?,
            "ridge_lambda" => self.ridge_lambda = num(key, value)?,
            "folds" => self.folds = num(key, value)?,
            "bins" => self.bins = num(key, value)?,
            "hist_lo" => self.hist_lo = num(key, value)?,
            "hist_hi" => self.hist_hi = num(key, value)?,
            "score_training" => self.score_training = num(key, value)?,
            "synth_politicians" => self.synth_politicians = num(key, value)?,
            "synth_campaign_size" => self.synth_campaign_size = num(key, value)?,
            "synth_dim" => self.synth_dim = num(key, value)?,
            "synth_k" => self.synth_k = num(key, value)?,
            "synth_noise_std" => self.synth_noise_std = num(key, value)?,
            "synth_label_noise_std" => self.synth_label_noise_std = num(key, value)?,
            "synth_images_lo" => self.synth_images_lo = num(key, value)?,
            "synth_images_hi" => self.synth_images_hi = num(key, value)?,
            other => bail!("unknown config key `{other}`"),
        }
        Ok(())
    }

    fn apply_overrides(&mut self, o: &Overrides) -> Result<()> {
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = &o.$field {
                    self.$field = v.clone();
                }
            };
        }
        if let Some(v) = &o.manifest {
            self.manifest = Some(v.clone());
        }
        if let Some(v) = &o.labels {
            self.labels = Some(v.clone());
        }
        if let Some(v) = &o.models {
            self.models = Some(v.clone());
        }
        if let Some(v) = &o.predictions {
            self.predictions = Some(v.clone());
        }
        take!(backend);
        take!(cache_dir);
        take!(out);
        take!(seed);
        take!(workers);
        take!(k);
        take!(kmeans_restarts);
        take!(kmeans_max_iters);
        take!(kmeans_tol);
        take!(trees);
        take!(max_depth);
        take!(min_samples_leaf);
        take!(bootstrap);
        take!(ridge_lambda);
        take!(folds);
        take!(bins);
        take!(hist_lo);
        take!(hist_hi);
        take!(score_training);
        take!(synth_politicians);
        take!(synth_campaign_size);
        take!(synth_dim);
        take!(synth_k);
        take!(synth_noise_std);
        take!(synth_label_noise_std);
        take!(synth_images_lo);
        take!(synth_images_hi);
        if let Some(v) = &o.cluster_scope {
            self.cluster_scope = ClusterScope::parse(v)?;
        }
        if let Some(v) = &o.features_per_split {
            self.features_per_split = FeatureRule::parse(v).map_err(|e| anyhow::anyhow!(e))?;
        }
        if let Some(v) = &o.model2_regressor {
            self.model2_regressor = Model2Regressor::parse(v)?;
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            bail!("k must be at least 1");
        }
        if self.kmeans_restarts == 0 || self.kmeans_max_iters == 0 {
            bail!("kmeans_restarts and kmeans_max_iters must be at least 1");
        }
        if !self.kmeans_tol.is_finite() || self.kmeans_tol < 0.0 {
            bail!("kmeans_tol must be finite and nonnegative");
        }
        if self.trees == 0 || self.min_samples_leaf == 0 {
            bail!("trees and min_samples_leaf must be at least 1");
        }
        if !self.ridge_lambda.is_finite() || self.ridge_lambda < 0.0 {
            bail!("ridge_lambda must be finite and nonnegative");
        }
        if self.folds < 2 {
            bail!("folds must be at least 2");
        }
        if self.bins == 0 {
            bail!("bins must be at least 1");
        }
        if !(self.hist_lo.is_finite() && self.hist_hi.is_finite() && self.hist_lo < self.hist_hi) {
            bail!("histogram range needs hist_lo < hist_hi, both finite");
        }
        if self.synth_politicians == 0 || self.synth_campaign_size == 0 {
            bail!("synth group sizes must be at least 1");
        }
        if self.synth_dim == 0 || self.synth_k == 0 {
            bail!("synth_dim and synth_k must be at least 1");
        }
        if self.synth_images_lo == 0 || self.synth_images_lo > self.synth_images_hi {
            bail!("synthetic images per account must satisfy 1 <= lo <= hi");
        }
        if !(self.synth_noise_std.is_finite() && self.synth_noise_std >= 0.0) {
            bail!("synth_noise_std must be finite and nonnegative");
        }
        if !(self.synth_label_noise_std.is_finite() && self.synth_label_noise_std >= 0.0) {
            bail!("synth_label_noise_std must be finite and nonnegative");
        }
        Ok(())
    }

    /// Every key in canonical order, as written to `effective.conf` and
    /// recorded in the run manifest. Unset optional keys are omitted.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut e: Vec<(&'static str, String)> = Vec::new();
        if let Some(p) = &self.manifest {
            e.push(("manifest", p.display().to_string()));
        }
        if let Some(p) = &self.labels {
            e.push(("labels", p.display().to_string()));
        }
        e.push(("backend", self.backend.clone()));
        e.push(("cache_dir", self.cache_dir.display().to_string()));
        e.push(("out", self.out.display().to_string()));
        if let Some(p) = &self.models {
            e.push(("models", p.display().to_string()));
        }
        if let Some(p) = &self.predictions {
            e.push(("predictions", p.display().to_string()));
        }
        e.push(("seed", self.seed.to_string()));
        e.push(("workers", self.workers.to_string()));
        e.push(("k", self.k.to_string()));
        e.push(("kmeans_restarts", self.kmeans_restarts.to_string()));
        e.push(("kmeans_max_iters", self.kmeans_max_iters.to_string()));
        e.push(("kmeans_tol", self.kmeans_tol.to_string()));
        e.push(("cluster_scope", self.cluster_scope.as_str().to_string()));
        e.push(("trees", self.trees.to_string()));
        e.push(("max_depth", self.max_depth.to_string()));
        e.push(("min_samples_leaf", self.min_samples_leaf.to_string()));
        e.push(("features_per_split", self.features_per_split.as_str().to_string()));
        e.push(("bootstrap", self.bootstrap.to_string()));
        e.push(("model2_regressor", self.model2_regressor.as_str().to_string()));
        e.push(("ridge_lambda", self.ridge_lambda.to_string()));
        e.push(("folds", self.folds.to_string()));
        e.push(("bins", self.bins.to_string()));
        e.push(("hist_lo", self.hist_lo.to_string()));
        e.push(("hist_hi", self.hist_hi.to_string()));
        e.push(("score_training", self.score_training.to_string()));
        e.push(("synth_politicians", self.synth_politicians.to_string()));
        e.push(("synth_campaign_size", self.synth_campaign_size.to_string()));
        e.push(("synth_dim", self.synth_dim.to_string()));
        e.push(("synth_k", self.synth_k.to_string()));
        e.push(("synth_noise_std", self.synth_noise_std.to_string()));
        e.push(("synth_label_noise_std", self.synth_label_noise_std.to_string()));
        e.push(("synth_images_lo", self.synth_images_lo.to_string()));
        e.push(("synth_images_hi", self.synth_images_hi.to_string()));
        e
    }

    pub fn entries_map(&self) -> BTreeMap<String, String> {
        self.entries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    /// Renders the flat key = value document; `load`ing it back yields an
    /// identical config.
    pub fn to_conf_string(&self) -> String {
        let mut out = String::from("# effective pipeline configuration\n");
        for (key, value) in self.entries() {
            writeln!(out, "{key} = {value}").unwrap();
        }
        out
    }

    /// Archives the effective configuration next to a stage's outputs.
    pub fn write_effective(&self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir)?;
        std::fs::write(out_dir.join("effective.conf"), self.to_conf_string())?;
        Ok(())
    }

    pub fn manifest_path(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| anyhow::anyhow!("a manifest is required (set --manifest or the `manifest` config key)"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_conf_text() {
        let mut cfg = PipelineConfig::default();
        cfg.manifest = Some(PathBuf::from("runs/synth/manifest.csv"));
        cfg.kmeans_tol = 1e-4;
        cfg.synth_noise_std = 0.1;
        let text = cfg.to_conf_string();

        let mut back = PipelineConfig::default();
        back.apply_file(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn file_then_flag_precedence() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_file("k = 12\nseed = 7\n# comment\n\ntrees = 99\n").unwrap();
        assert_eq!((cfg.k, cfg.seed, cfg.trees), (12, 7, 99));

        let overrides = Overrides {
            k: Some(3),
            ..Overrides::default()
        };
        cfg.apply_overrides(&overrides).unwrap();
        assert_eq!(cfg.k, 3);
        assert_eq!(cfg.seed, 7, "flags only override what they set");
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut cfg = PipelineConfig::default();
        assert!(cfg.apply_file("mystery = 1\n").is_err());
        assert!(cfg.apply_file("k = banana\n").is_err());
        assert!(cfg.apply_file("just a line\n").is_err());
    }

    #[test]
    fn validation_catches_degenerate_settings() {
        for bad in [
            "k = 0",
            "folds = 1",
            "trees = 0",
            "hist_lo = 1\nhist_hi = -1",
            "synth_images_lo = 9\nsynth_images_hi = 3",
            "cluster_scope = everything",
            "model2_regressor = svm",
            "features_per_split = half",
        ] {
            let mut cfg = PipelineConfig::default();
            let applied = cfg.apply_file(bad).and_then(|_| cfg.validate());
            assert!(applied.is_err(), "`{bad}` should be rejected");
        }
    }

    #[test]
    fn float_keys_round_trip_exactly() {
        let mut cfg = PipelineConfig::default();
        cfg.kmeans_tol = 0.1 + 0.2; // deliberately non-representable sum
        cfg.ridge_lambda = 1e-9;
        let text = cfg.to_conf_string();
        let mut back = PipelineConfig::default();
        back.apply_file(&text).unwrap();
        assert_eq!(cfg.kmeans_tol.to_bits(), back.kmeans_tol.to_bits());
        assert_eq!(cfg.ridge_lambda.to_bits(), back.ridge_lambda.to_bits());
    }
}
