//! Stage implementations behind the CLI subcommands.
//!
//! Stages communicate only through files: the manifest, the embedding
//! cache, and each stage's sealed output directory. Per-item problems
//! (an unreadable image, an account with no embeddings) are logged and
//! skipped; structural problems (no data at all, missing models, shape
//! mismatches) abort with a nonzero exit.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ideolens_core::analysis::{group_summary, HistogramSpec, ModelTag, Prediction, PredictionTable};
use ideolens_core::clustering::{
    cluster_proportions, fit_kmeans, ClusterModel, KmeansParams,
};
use ideolens_core::corpus::{
    apply_label_sidecar, corpus_stats, parse_manifest, split_roles, write_manifest,
    AccountProfile, ContentHash, Corpus, ImageLocator,
};
use ideolens_core::embedding::{
    embed_account_sorted, preprocess_image, store, AccountEmbedding, Backend, EmbeddingCache,
    ImageEmbedding,
};
use ideolens_core::forest::{
    cross_validate, cross_validate_with, train_forest, CvResult, ForestError, ForestHyperparams,
    ForestModel, TrainingMatrix,
};
use ideolens_core::linear::{train_ridge, RidgeModel};
use ideolens_core::synth::{self, SynthSpec};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ClusterScope, Model2Regressor, PipelineConfig};
use crate::manifest::RunManifest;

pub const CLUSTER_MODEL_FILE: &str = "cluster_model.json";
pub const MODEL1_FILE: &str = "model1_forest.json";
pub const MODEL2_FOREST_FILE: &str = "model2_forest.json";
pub const MODEL2_LINEAR_FILE: &str = "model2_linear.json";

/// Generates a synthetic corpus: manifest CSV, pre-populated embedding
/// cache under a `precomputed` backend, and a ground-truth file.
pub fn cmd_synth(cfg: &PipelineConfig) -> Result<()> {
    let mut spec = SynthSpec::default();
    spec.groups[0].n_accounts = cfg.synth_politicians;
    for group in &mut spec.groups[1..] {
        group.n_accounts = cfg.synth_campaign_size;
    }
    spec.images_per_account = (cfg.synth_images_lo, cfg.synth_images_hi);
    spec.dim = cfg.synth_dim;
    spec.k_true = cfg.synth_k;
    spec.noise_std = cfg.synth_noise_std;
    spec.label_noise_std = cfg.synth_label_noise_std;
    spec.seed = cfg.seed;

    let synth = synth::generate(&spec)?;
    std::fs::create_dir_all(&cfg.out)?;

    let manifest_path = cfg.out.join("manifest.csv");
    write_manifest(&synth.corpus, &manifest_path)?;

    let backend_id = format!("precomputed:{}:synth-seed{}", spec.dim, spec.seed);
    let cache = EmbeddingCache::open(&cfg.cache_dir, &backend_id)?;
    let mut cached = 0usize;
    for account in &synth.corpus.accounts {
        for image in &account.images {
            let ImageLocator::Hashed(hash) = &image.locator else {
                unreachable!("synthetic images are hash-addressed");
            };
            cache.put(hash, &synth.embeddings[&image.image_id])?;
            cached += 1;
        }
    }

    #[derive(Serialize)]
    struct TruthFile<'a> {
        format: &'static str,
        version: u32,
        seed: u64,
        dim: usize,
        k_true: usize,
        ideology_weights: &'a [f64],
        centers: &'a [Vec<f64>],
        true_scores: &'a BTreeMap<String, f64>,
    }
    let truth = TruthFile {
        format: "synth-truth",
        version: 1,
        seed: spec.seed,
        dim: spec.dim,
        k_true: spec.k_true,
        ideology_weights: &synth.ideology_weights,
        centers: &synth.centers,
        true_scores: &synth.true_scores,
    };
    std::fs::write(
        cfg.out.join("truth.json"),
        serde_json::to_vec_pretty(&truth)?,
    )?;

    // the archived config points downstream stages at the generated corpus
    let mut effective = cfg.clone();
    effective.manifest = Some(manifest_path.clone());
    effective.backend = backend_id.clone();
    effective.write_effective(&cfg.out)?;

    let mut rm = RunManifest::new("synth", &effective);
    rm.record_input_value("backend_id", &backend_id);
    rm.record_output(&cfg.out, "manifest.csv")?;
    rm.record_output(&cfg.out, "truth.json")?;
    rm.save(&cfg.out)?;

    log::info!(
        "synthesized {} accounts / {} images; cache entries written: {cached}",
        synth.corpus.accounts.len(),
        synth.corpus.n_images(),
    );
    Ok(())
}

/// Embeds every readable image (cache-first), then writes per-account mean
/// embeddings and an image index.
pub fn cmd_embed(cfg: &PipelineConfig) -> Result<()> {
    let corpus = load_corpus(cfg)?;
    let backend = Backend::from_descriptor(&cfg.backend)?;
    let cache = EmbeddingCache::open(&cfg.cache_dir, backend.id())?;
    std::fs::create_dir_all(&cfg.out)?;

    let images: Vec<&ideolens_core::corpus::ImageRecord> = corpus
        .accounts
        .iter()
        .flat_map(|a| a.images.iter())
        .collect();

    let mut rows: Vec<EmbedRow> = images
        .par_iter()
        .map(|image| {
            let (hash, outcome) = embed_one(image, &backend, &cache);
            EmbedRow {
                image_id: image.image_id.clone(),
                account_id: image.account_id.clone(),
                hash,
                outcome,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.image_id.cmp(&b.image_id));

    let (mut n_cached, mut n_computed, mut n_failed) = (0usize, 0usize, 0usize);
    let mut per_account: BTreeMap<&str, Vec<(String, ImageEmbedding)>> = BTreeMap::new();
    for row in &rows {
        match &row.outcome {
            EmbedOutcome::Cached(emb) => {
                n_cached += 1;
                per_account
                    .entry(&row.account_id)
                    .or_default()
                    .push((row.image_id.clone(), emb.clone()));
            }
            EmbedOutcome::Computed(emb) => {
                n_computed += 1;
                per_account
                    .entry(&row.account_id)
                    .or_default()
                    .push((row.image_id.clone(), emb.clone()));
            }
            EmbedOutcome::Failed(reason) => {
                n_failed += 1;
                log::warn!("image `{}` skipped: {reason}", row.image_id);
            }
        }
    }
    if n_cached + n_computed == 0 {
        bail!(
            "no readable images: all {} images failed (backend `{}`)",
            rows.len(),
            backend.id()
        );
    }

    let mut means: Vec<AccountEmbedding> = Vec::with_capacity(per_account.len());
    for (account_id, items) in per_account {
        means.push(embed_account_sorted(account_id, items)?);
    }
    store::write_account_embeddings(&cfg.out.join("account_embeddings.bin"), &means)?;

    let mut writer = csv::Writer::from_path(cfg.out.join("image_index.csv"))?;
    writer.write_record(["image_id", "account_id", "content_hash", "status"])?;
    // cache hit vs fresh computation is logged, not recorded: a warm-cache
    // rerun must produce byte-identical outputs
    for row in &rows {
        let hash = row.hash.as_ref().map(|h| h.to_hex()).unwrap_or_default();
        let status = match &row.outcome {
            EmbedOutcome::Cached(_) | EmbedOutcome::Computed(_) => "ok".to_string(),
            EmbedOutcome::Failed(reason) => format!("failed: {reason}"),
        };
        writer.write_record([&row.image_id, &row.account_id, &hash, &status])?;
    }
    writer.flush()?;

    cfg.write_effective(&cfg.out)?;
    let mut rm = RunManifest::new("embed", cfg);
    rm.record_input_file("manifest", cfg.manifest_path()?)?;
    rm.record_input_value("backend_id", backend.id());
    rm.record_output(&cfg.out, "account_embeddings.bin")?;
    rm.record_output(&cfg.out, "image_index.csv")?;
    rm.save(&cfg.out)?;

    log::info!(
        "embedded {} images ({n_cached} cached, {n_computed} computed), {n_failed} failed; {} account means",
        n_cached + n_computed,
        means.len()
    );
    Ok(())
}

struct EmbedRow {
    image_id: String,
    account_id: String,
    hash: Option<ContentHash>,
    outcome: EmbedOutcome,
}

enum EmbedOutcome {
    Cached(ImageEmbedding),
    Computed(ImageEmbedding),
    Failed(String),
}

/// Cache-first embedding of one image. Hash-addressed images can only be
/// served from the cache; file-addressed images fall back to preprocessing
/// and the backend when it can compute.
fn embed_one(
    image: &ideolens_core::corpus::ImageRecord,
    backend: &Backend,
    cache: &EmbeddingCache,
) -> (Option<ContentHash>, EmbedOutcome) {
    match &image.locator {
        ImageLocator::Hashed(hash) => {
            let outcome = match cache.get(hash) {
                Some(emb) => EmbedOutcome::Cached(emb),
                None => EmbedOutcome::Failed(
                    "hash-addressed image not in cache and has no pixel source".to_string(),
                ),
            };
            (Some(hash.clone()), outcome)
        }
        ImageLocator::File(path) => {
            let bytes = match std::fs::read(path) {
                Ok(bytes) => bytes,
                Err(e) => {
                    return (
                        None,
                        EmbedOutcome::Failed(format!("reading {}: {e}", path.display())),
                    )
                }
            };
            let hash = ContentHash::of_bytes(&bytes);
            if let Some(emb) = cache.get(&hash) {
                return (Some(hash), EmbedOutcome::Cached(emb));
            }
            if !backend.can_compute() {
                return (
                    Some(hash),
                    EmbedOutcome::Failed(format!(
                        "not in cache and backend `{}` cannot compute embeddings",
                        backend.id()
                    )),
                );
            }
            let outcome = preprocess_image(&bytes)
                .and_then(|tensor| backend.embed_image(&tensor))
                .and_then(|emb| cache.put(&hash, &emb).map(|()| emb));
            match outcome {
                Ok(emb) => (Some(hash), EmbedOutcome::Computed(emb)),
                Err(e) => (Some(hash), EmbedOutcome::Failed(e.to_string())),
            }
        }
    }
}

/// Fits the cluster model and trains both ideology models on the labeled
/// accounts, emitting an evaluation report.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<()> {
    let corpus = load_corpus(cfg)?;
    let backend = Backend::from_descriptor(&cfg.backend)?;
    let cache = EmbeddingCache::open(&cfg.cache_dir, backend.id())?;
    std::fs::create_dir_all(&cfg.out)?;

    let (training, inference) = split_roles(&corpus);
    let train_embedded = load_account_images(&training.accounts, &cache);
    if train_embedded.len() < 2 {
        bail!(
            "insufficient training data: {} labeled accounts with embedded images (need at least 2)",
            train_embedded.len()
        );
    }

    // k-means points, globally sorted by image id
    let cluster_points: Vec<ImageEmbedding> = match cfg.cluster_scope {
        ClusterScope::Labeled => flatten_images(&train_embedded),
        ClusterScope::All => {
            let mut all = train_embedded.clone();
            all.extend(load_account_images(&inference.accounts, &cache));
            flatten_images(&all)
        }
    };
    let kparams = KmeansParams {
        k: cfg.k,
        seed: cfg.seed,
        restarts: cfg.kmeans_restarts,
        max_iters: cfg.kmeans_max_iters,
        tol: cfg.kmeans_tol,
    };
    let cluster_model =
        fit_kmeans(&cluster_points, &kparams).context("fitting the cluster model")?;
    cluster_model.save(&cfg.out.join(CLUSTER_MODEL_FILE))?;
    log::info!(
        "fitted k={} clusters on {} images (inertia {:.4})",
        cluster_model.k(),
        cluster_points.len(),
        cluster_model.inertia()
    );

    let (m1_data, m2_data) =
        build_matrices(&training, &train_embedded, &cluster_model).context("building features")?;

    let hp = forest_hyperparams(cfg);
    let model1 = train_forest(&m1_data, &hp).context("training Model 1")?;
    model1.save(&cfg.out.join(MODEL1_FILE))?;
    let eval1 = evaluate_forest("model1", &model1, &m1_data, &hp, cfg);

    let (model2_file, eval2) = match cfg.model2_regressor {
        Model2Regressor::Forest => {
            let model2 = train_forest(&m2_data, &hp).context("training Model 2")?;
            model2.save(&cfg.out.join(MODEL2_FOREST_FILE))?;
            (MODEL2_FOREST_FILE, evaluate_forest("model2", &model2, &m2_data, &hp, cfg))
        }
        Model2Regressor::Linear => {
            let model2 =
                train_ridge(&m2_data, cfg.ridge_lambda).context("training Model 2 (ridge)")?;
            model2.save(&cfg.out.join(MODEL2_LINEAR_FILE))?;
            (MODEL2_LINEAR_FILE, evaluate_ridge(&model2, &m2_data, cfg))
        }
    };

    #[derive(Serialize)]
    struct TrainingReport<'a> {
        format: &'static str,
        version: u32,
        n_training_accounts: usize,
        model1: &'a ModelEval,
        model2: &'a ModelEval,
    }
    let report = TrainingReport {
        format: "training-report",
        version: 1,
        n_training_accounts: m1_data.n(),
        model1: &eval1,
        model2: &eval2,
    };
    std::fs::write(
        cfg.out.join("training_report.json"),
        serde_json::to_vec_pretty(&report)?,
    )?;
    for eval in [&eval1, &eval2] {
        log::info!(
            "{}: in-sample R2 {:?}, OOB R2 {:?}, {}-fold CV pooled R2 {:?}",
            eval.name,
            eval.in_sample_r2,
            eval.oob_r2,
            eval.cv_folds,
            eval.cv_pooled_r2
        );
    }

    cfg.write_effective(&cfg.out)?;
    let mut rm = RunManifest::new("train", cfg);
    rm.record_input_file("manifest", cfg.manifest_path()?)?;
    rm.record_input_value("backend_id", backend.id());
    rm.record_output(&cfg.out, CLUSTER_MODEL_FILE)?;
    rm.record_output(&cfg.out, MODEL1_FILE)?;
    rm.record_output(&cfg.out, model2_file)?;
    rm.record_output(&cfg.out, "training_report.json")?;
    rm.save(&cfg.out)?;
    Ok(())
}

/// Scores inference accounts (and optionally the training accounts) with
/// both trained models.
pub fn cmd_predict(cfg: &PipelineConfig) -> Result<()> {
    let corpus = load_corpus(cfg)?;
    let backend = Backend::from_descriptor(&cfg.backend)?;
    let cache = EmbeddingCache::open(&cfg.cache_dir, backend.id())?;
    std::fs::create_dir_all(&cfg.out)?;

    let models_dir = cfg
        .models
        .as_deref()
        .ok_or_else(|| anyhow::anyhow!("a models directory is required (set --models to a train output)"))?;
    let cluster_model = ClusterModel::load(&models_dir.join(CLUSTER_MODEL_FILE))?;
    let model1 = ForestModel::load(&models_dir.join(MODEL1_FILE))?;
    let model2 = Model2::load(models_dir)?;
    if model1.feature_dim() != cluster_model.k() {
        bail!(
            "model/feature dimension mismatch: Model 1 expects {} features, cluster model has k={}",
            model1.feature_dim(),
            cluster_model.k()
        );
    }

    let (training, inference) = split_roles(&corpus);
    let mut targets = inference.accounts.clone();
    if cfg.score_training {
        targets.extend(training.accounts.iter().cloned());
    }
    let embedded = load_account_images(&targets, &cache);

    let mut rows: Vec<Prediction> = Vec::with_capacity(embedded.len() * 2);
    let mut skipped: Vec<(String, String)> = Vec::new();
    let by_id: BTreeMap<&str, &AccountProfile> =
        targets.iter().map(|a| (a.account_id.as_str(), a)).collect();
    for account in targets.iter() {
        if !embedded.contains_key(account.account_id.as_str()) {
            skipped.push((account.account_id.clone(), "no embedded images".to_string()));
        }
    }
    skipped.sort();

    let scored: Vec<(String, f64, f64)> = embedded
        .par_iter()
        .map(|(account_id, items)| -> Result<(String, f64, f64)> {
            let embeddings: Vec<ImageEmbedding> =
                items.iter().map(|(_, e)| e.clone()).collect();
            let props = cluster_proportions(account_id, &embeddings, &cluster_model)
                .with_context(|| format!("assigning clusters for `{account_id}`"))?;
            let s1 = model1
                .predict(&props.proportions)
                .with_context(|| format!("Model 1 on `{account_id}`"))?;
            let mean = embed_account_sorted(account_id, items.clone())?;
            let x2: Vec<f64> = mean.mean.iter().map(|v| *v as f64).collect();
            let s2 = model2
                .predict(&x2)
                .with_context(|| format!("Model 2 on `{account_id}`"))?;
            Ok((account_id.to_string(), s1, s2))
        })
        .collect::<Result<Vec<_>>>()?;

    for (account_id, s1, s2) in scored {
        let group = by_id[account_id.as_str()].group.clone();
        rows.push(Prediction {
            account_id: account_id.clone(),
            group: group.clone(),
            model_tag: ModelTag::Model1,
            score: s1,
        });
        rows.push(Prediction {
            account_id,
            group,
            model_tag: ModelTag::Model2,
            score: s2,
        });
    }
    let table = PredictionTable::new(rows)?;
    table.write_csv(&cfg.out.join("predictions.csv"))?;

    let mut writer = csv::Writer::from_path(cfg.out.join("skipped.csv"))?;
    writer.write_record(["account_id", "reason"])?;
    for (account_id, reason) in &skipped {
        log::warn!("account `{account_id}` skipped: {reason}");
        writer.write_record([account_id, reason])?;
    }
    writer.flush()?;

    cfg.write_effective(&cfg.out)?;
    let mut rm = RunManifest::new("predict", cfg);
    rm.record_input_file("manifest", cfg.manifest_path()?)?;
    rm.record_input_value("backend_id", backend.id());
    rm.record_input_file("cluster_model", &models_dir.join(CLUSTER_MODEL_FILE))?;
    rm.record_input_file("model1", &models_dir.join(MODEL1_FILE))?;
    rm.record_input_file("model2", &models_dir.join(model2.file_name()))?;
    rm.record_output(&cfg.out, "predictions.csv")?;
    rm.record_output(&cfg.out, "skipped.csv")?;
    rm.save(&cfg.out)?;

    log::info!(
        "scored {} accounts ({} skipped) with both models",
        table.rows().len() / 2,
        skipped.len()
    );
    Ok(())
}

/// Summarizes a predictions CSV into the per-group report document.
pub fn cmd_report(cfg: &PipelineConfig) -> Result<()> {
    let predictions = cfg
        .predictions
        .as_deref()
        .ok_or_else(|| anyhow::anyhow!("a predictions CSV is required (set --predictions)"))?;
    let table = PredictionTable::read_csv(predictions)?;
    let spec = HistogramSpec {
        lo: cfg.hist_lo,
        hi: cfg.hist_hi,
        bins: cfg.bins,
    };
    let report = group_summary(&table, spec)?;
    std::fs::create_dir_all(&cfg.out)?;
    report.save(&cfg.out.join("report.json"))?;

    for row in &report.rows {
        log::info!(
            "{} / {}: n={} mean={:.4} std={} bc={} bimodal={}",
            row.group,
            row.model_tag.as_str(),
            row.n,
            row.mean,
            row.std.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            row.bimodality_coefficient
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into()),
            row.bimodal.map(|b| b.to_string()).unwrap_or_else(|| "-".into()),
        );
    }

    cfg.write_effective(&cfg.out)?;
    let mut rm = RunManifest::new("report", cfg);
    rm.record_input_file("predictions", predictions)?;
    rm.record_output(&cfg.out, "report.json")?;
    rm.save(&cfg.out)?;
    Ok(())
}

/// Prints per-group account/image counts as CSV.
pub fn cmd_stats(cfg: &PipelineConfig, out: &mut impl Write) -> Result<()> {
    let corpus = load_corpus(cfg)?;
    writeln!(out, "group,accounts,images")?;
    for stat in corpus_stats(&corpus) {
        writeln!(out, "{},{},{}", stat.group, stat.accounts, stat.images)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// shared helpers

fn load_corpus(cfg: &PipelineConfig) -> Result<Corpus> {
    let path = cfg.manifest_path()?;
    let mut corpus =
        parse_manifest(path).with_context(|| format!("parsing manifest {}", path.display()))?;
    if let Some(labels) = &cfg.labels {
        apply_label_sidecar(&mut corpus, labels)
            .with_context(|| format!("applying labels {}", labels.display()))?;
    }
    Ok(corpus)
}

/// Hash of an image's content: direct for hash:// locators, sha256 of the
/// file bytes otherwise.
fn resolve_hash(locator: &ImageLocator) -> Result<ContentHash, String> {
    match locator {
        ImageLocator::Hashed(h) => Ok(h.clone()),
        ImageLocator::File(path) => std::fs::read(path)
            .map(|bytes| ContentHash::of_bytes(&bytes))
            .map_err(|e| format!("reading {}: {e}", path.display())),
    }
}

/// Loads each account's cached image embeddings in parallel. Images missing
/// from the cache are logged and skipped; accounts with nothing embedded are
/// omitted.
fn load_account_images(
    accounts: &[AccountProfile],
    cache: &EmbeddingCache,
) -> BTreeMap<String, Vec<(String, ImageEmbedding)>> {
    let loaded: Vec<(String, Vec<(String, ImageEmbedding)>)> = accounts
        .par_iter()
        .map(|account| {
            let mut items = Vec::with_capacity(account.images.len());
            for image in &account.images {
                match resolve_hash(&image.locator) {
                    Ok(hash) => match cache.get(&hash) {
                        Some(emb) => items.push((image.image_id.clone(), emb)),
                        None => log::warn!("image `{}` has no cached embedding", image.image_id),
                    },
                    Err(reason) => log::warn!("image `{}`: {reason}", image.image_id),
                }
            }
            items.sort_by(|a, b| a.0.cmp(&b.0));
            (account.account_id.clone(), items)
        })
        .collect();
    loaded
        .into_iter()
        .filter(|(_, items)| !items.is_empty())
        .collect()
}

/// All embeddings across accounts, sorted globally by image id.
fn flatten_images(
    per_account: &BTreeMap<String, Vec<(String, ImageEmbedding)>>,
) -> Vec<ImageEmbedding> {
    let mut all: Vec<(&str, &ImageEmbedding)> = per_account
        .values()
        .flat_map(|items| items.iter().map(|(id, e)| (id.as_str(), e)))
        .collect();
    all.sort_by(|a, b| a.0.cmp(b.0));
    all.into_iter().map(|(_, e)| e.clone()).collect()
}

/// Model 1 (cluster proportions) and Model 2 (mean embedding) training
/// matrices over the labeled accounts, rows in account-id order.
fn build_matrices(
    training: &Corpus,
    embedded: &BTreeMap<String, Vec<(String, ImageEmbedding)>>,
    cluster_model: &ClusterModel,
) -> Result<(TrainingMatrix, TrainingMatrix)> {
    let mut ids = Vec::new();
    let mut x1 = Vec::new();
    let mut x2 = Vec::new();
    let mut y = Vec::new();
    for (account_id, items) in embedded {
        let account = training
            .account(account_id)
            .expect("embedded accounts come from the training corpus");
        let label = account
            .label
            .expect("training accounts are labeled")
            .value();
        let embeddings: Vec<ImageEmbedding> = items.iter().map(|(_, e)| e.clone()).collect();
        let props = cluster_proportions(account_id, &embeddings, cluster_model)?;
        let mean = embed_account_sorted(account_id, items.clone())?;
        x1.extend(props.proportions);
        x2.extend(mean.mean.iter().map(|v| *v as f64));
        y.push(label);
        ids.push(account_id.clone());
    }
    let k = cluster_model.k();
    let dim = cluster_model.dim();
    let m1 = TrainingMatrix::new(ids.clone(), x1, k, y.clone())?;
    let m2 = TrainingMatrix::new(ids, x2, dim, y)?;
    Ok((m1, m2))
}

fn forest_hyperparams(cfg: &PipelineConfig) -> ForestHyperparams {
    ForestHyperparams {
        n_trees: cfg.trees,
        max_depth: (cfg.max_depth > 0).then_some(cfg.max_depth),
        min_samples_leaf: cfg.min_samples_leaf,
        features_per_split: cfg.features_per_split,
        bootstrap: cfg.bootstrap,
        seed: cfg.seed,
    }
}

#[derive(Serialize)]
struct ModelEval {
    name: &'static str,
    kind: &'static str,
    feature_dim: usize,
    in_sample_r2: Option<f64>,
    oob_r2: Option<f64>,
    cv_folds: usize,
    cv_pooled_r2: Option<f64>,
    cv_fold_r2: Vec<Option<f64>>,
}

fn in_sample_r2(data: &TrainingMatrix, predict: impl Fn(&[f64]) -> Result<f64>) -> Option<f64> {
    let preds: Result<Vec<f64>> = (0..data.n()).map(|i| predict(data.row(i))).collect();
    match preds {
        Ok(p) => ideolens_core::analysis::r_squared(data.y(), &p).ok(),
        Err(e) => {
            log::warn!("in-sample evaluation failed: {e:#}");
            None
        }
    }
}

fn cv_summary(outcome: Result<CvResult, ForestError>, what: &str) -> (Option<f64>, Vec<Option<f64>>) {
    match outcome {
        Ok(cv) => (Some(cv.pooled_r2), cv.fold_r2),
        Err(e) => {
            log::warn!("{what} cross-validation unavailable: {e}");
            (None, Vec::new())
        }
    }
}

fn evaluate_forest(
    name: &'static str,
    model: &ForestModel,
    data: &TrainingMatrix,
    hp: &ForestHyperparams,
    cfg: &PipelineConfig,
) -> ModelEval {
    let (cv_pooled_r2, cv_fold_r2) =
        cv_summary(cross_validate(data, hp, cfg.folds, cfg.seed), name);
    ModelEval {
        name,
        kind: "forest",
        feature_dim: data.p(),
        in_sample_r2: in_sample_r2(data, |x| model.predict(x).map_err(Into::into)),
        oob_r2: model.oob_r2(),
        cv_folds: cfg.folds,
        cv_pooled_r2,
        cv_fold_r2,
    }
}

fn evaluate_ridge(model: &RidgeModel, data: &TrainingMatrix, cfg: &PipelineConfig) -> ModelEval {
    let lambda = cfg.ridge_lambda;
    let outcome = cross_validate_with(
        data,
        cfg.folds,
        cfg.seed,
        |fold| train_ridge(fold, lambda).map_err(|e| e.to_string()),
        |m, x| m.predict(x).map_err(|e| e.to_string()),
    );
    let (cv_pooled_r2, cv_fold_r2) = cv_summary(outcome, "model2");
    ModelEval {
        name: "model2",
        kind: "linear",
        feature_dim: data.p(),
        in_sample_r2: in_sample_r2(data, |x| model.predict(x).map_err(Into::into)),
        oob_r2: None,
        cv_folds: cfg.folds,
        cv_pooled_r2,
        cv_fold_r2,
    }
}

/// Either Model 2 family, loaded from a train output directory.
enum Model2 {
    Forest(ForestModel),
    Linear(RidgeModel),
}

impl Model2 {
    fn load(models_dir: &Path) -> Result<Model2> {
        let forest_path = models_dir.join(MODEL2_FOREST_FILE);
        let linear_path = models_dir.join(MODEL2_LINEAR_FILE);
        if forest_path.exists() {
            Ok(Model2::Forest(ForestModel::load(&forest_path)?))
        } else if linear_path.exists() {
            Ok(Model2::Linear(RidgeModel::load(&linear_path)?))
        } else {
            bail!(
                "no Model 2 file ({MODEL2_FOREST_FILE} or {MODEL2_LINEAR_FILE}) in {}",
                models_dir.display()
            )
        }
    }

    fn file_name(&self) -> &'static str {
        match self {
            Model2::Forest(_) => MODEL2_FOREST_FILE,
            Model2::Linear(_) => MODEL2_LINEAR_FILE,
        }
    }

    fn predict(&self, x: &[f64]) -> Result<f64> {
        match self {
            Model2::Forest(m) => Ok(m.predict(x)?),
            Model2::Linear(m) => Ok(m.predict(x)?),
        }
    }
}
