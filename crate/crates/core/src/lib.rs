//! Core library for inferring the ideological presentation of social-media
//! accounts from the images they share.
//!
//! The pipeline, end to end:
//!
//! 1. [`corpus`] ingests account/image manifests and ideology labels.
//! 2. [`embedding`] turns image files into fixed-length vectors through a
//!    pluggable backend and aggregates per-account means, with an on-disk
//!    cache keyed by content hash.
//! 3. [`clustering`] fits a k-means model over training-image embeddings and
//!    converts each account's images into cluster-proportion features.
//! 4. [`forest`] trains deterministic random-forest regressors mapping either
//!    cluster proportions (Model 1) or mean embeddings (Model 2) to a score
//!    in [-1, 1]; [`linear`] provides a ridge alternative for Model 2.
//! 5. [`analysis`] summarizes score distributions per group: mean, standard
//!    deviation, histograms, and a bimodality coefficient.
//!
//! [`synth`] generates a fully synthetic corpus with known ground truth so
//! the whole pipeline can be validated without any platform data.
//!
//! Every stage is deterministic: identical inputs, seeds, and configuration
//! produce bit-identical models and reports regardless of worker count.

pub mod analysis;
pub mod clustering;
pub mod corpus;
pub mod embedding;
pub mod forest;
pub mod linear;
pub mod synth;

pub use analysis::{GroupReport, ModelTag, Prediction, PredictionTable};
pub use clustering::{ClusterModel, ClusterProportions, KmeansParams};
pub use corpus::{AccountProfile, ContentHash, Corpus, GroupLabel, IdeologyScore, ImageRecord};
pub use embedding::{AccountEmbedding, Backend, EmbeddingCache, ImageEmbedding};
pub use forest::{ForestHyperparams, ForestModel, TrainingMatrix};
pub use linear::RidgeModel;
pub use synth::{SynthCorpus, SynthSpec};
