//! Synthetic-corpus generator and ground-truth oracle.
//!
//! Real politician and influence-campaign image data is access-gated, so
//! end-to-end validation runs on generated corpora with a known
//! cluster structure and a known proportions→ideology mapping. Accounts
//! draw images from a group-conditioned mixture over well-separated
//! Gaussian clusters, and each account's score is the ideology-weighted
//! empirical cluster mix plus clamped label noise — precisely the signal
//! the pipeline is supposed to recover.
//!
//! Generation is single-threaded and a pure function of [`SynthSpec`]:
//! one seeded ChaCha stream drives every draw in a fixed order.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::clustering::ClusterProportions;
use crate::corpus::{
    AccountProfile, ContentHash, Corpus, GroupLabel, IdeologyScore, ImageLocator, ImageRecord,
};
use crate::embedding::ImageEmbedding;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("degenerate synthetic spec: {0}")]
    DegenerateSpec(String),
    #[error("unknown account `{0}`")]
    UnknownAccount(String),
}

/// One Gaussian component of a group's target-ideology mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMode {
    pub center: f64,
    pub std: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpec {
    pub group: GroupLabel,
    pub n_accounts: usize,
    /// mixture the account's steering ideology is drawn from
    pub label_modes: Vec<LabelMode>,
    /// whether generated accounts carry training labels in the corpus
    pub labeled: bool,
}

/// Full description of a synthetic corpus. Cluster centers and ideology
/// weights are derived from the seed at generation time and reported back
/// on the [`SynthCorpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub groups: Vec<GroupSpec>,
    /// inclusive range; the original corpora average roughly 20
    pub images_per_account: (u32, u32),
    pub dim: usize,
    pub k_true: usize,
    /// isotropic per-coordinate std of image embeddings around their center
    pub noise_std: f64,
    /// std of the Gaussian noise added to the account score
    pub label_noise_std: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let politician_modes = vec![
            LabelMode {
                center: -0.5,
                std: 0.15,
                weight: 0.5,
            },
            LabelMode {
                center: 0.5,
                std: 0.15,
                weight: 0.5,
            },
        ];
        let campaign_modes = vec![LabelMode {
            center: 0.2,
            std: 0.08,
            weight: 1.0,
        }];
        let campaign = |name: &str| GroupSpec {
            group: GroupLabel::parse(name).unwrap(),
            n_accounts: 150,
            label_modes: campaign_modes.clone(),
            labeled: false,
        };
        SynthSpec {
            groups: vec![
                GroupSpec {
                    group: GroupLabel::parse("politicians").unwrap(),
                    n_accounts: 700,
                    label_modes: politician_modes,
                    labeled: true,
                },
                campaign("iran"),
                campaign("russia"),
                campaign("china"),
                campaign("venezuela"),
            ],
            images_per_account: (15, 25),
            dim: 64,
            k_true: 8,
            noise_std: 0.1,
            label_noise_std: 0.05,
            seed: 42,
        }
    }
}

/// A generated corpus together with every piece of ground truth the
/// pipeline is supposed to recover.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    /// per-image embeddings, keyed by image id (bypasses file decoding)
    pub embeddings: BTreeMap<String, ImageEmbedding>,
    /// image id → true cluster index
    pub true_assignments: BTreeMap<String, usize>,
    /// account id → true ideology score (clamped to [−1, 1])
    pub true_scores: BTreeMap<String, f64>,
    /// k_true × dim generated cluster centers
    pub centers: Vec<Vec<f64>>,
    /// length-k_true mapping from cluster proportions to ideology
    pub ideology_weights: Vec<f64>,
}

/// Ideology anchors of the two cluster-usage profiles: an account whose
/// steering ideology sits at or left of −0.5 draws purely from the
/// liberal profile, at or right of +0.5 purely from the conservative one,
/// and in between from the linear blend.
const PROFILE_ANCHOR: f64 = 0.5;

/// Keeps every cluster reachable from both profiles so proportions are
/// informative for all groups.
const PROFILE_FLOOR: f64 = 0.02;

pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus, SynthError> {
    validate(spec)?;
    let k = spec.k_true;
    let d = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // ideology weight of cluster c: evenly spaced over [−1, 1]
    let weights: Vec<f64> = (0..k)
        .map(|c| {
            if k == 1 {
                0.0
            } else {
                -1.0 + 2.0 * c as f64 / (k - 1) as f64
            }
        })
        .collect();

    let centers = draw_separated_centers(&mut rng, k, d, spec.noise_std);

    // cluster-usage profiles for the two ideological poles
    let profile_left = normalized(weights.iter().map(|w| (-w).max(0.0) + PROFILE_FLOOR));
    let profile_right = normalized(weights.iter().map(|w| w.max(0.0) + PROFILE_FLOOR));

    let normal = StandardNormal;
    let mut accounts = Vec::new();
    let mut embeddings = BTreeMap::new();
    let mut true_assignments = BTreeMap::new();
    let mut true_scores = BTreeMap::new();

    for group_spec in &spec.groups {
        for a in 0..group_spec.n_accounts {
            let account_id = format!("{}-{:04}", group_spec.group.as_str(), a);

            // steering ideology from the group's mixture
            let mode = pick_mode(&mut rng, &group_spec.label_modes);
            let z: f64 = normal.sample(&mut rng);
            let steer = mode.center + mode.std * z;
            let alpha = ((steer + PROFILE_ANCHOR) / (2.0 * PROFILE_ANCHOR)).clamp(0.0, 1.0);
            let mix: Vec<f64> = profile_left
                .iter()
                .zip(&profile_right)
                .map(|(l, r)| alpha * r + (1.0 - alpha) * l)
                .collect();

            let n_images =
                rng.random_range(spec.images_per_account.0..=spec.images_per_account.1) as usize;
            let mut cluster_counts = vec![0usize; k];
            let mut images = Vec::with_capacity(n_images);
            for j in 0..n_images {
                let cluster = pick_index(&mut rng, &mix);
                cluster_counts[cluster] += 1;
                let image_id = format!("{account_id}/img{j:03}");
                let values: Vec<f32> = (0..d)
                    .map(|coord| {
                        let z: f64 = normal.sample(&mut rng);
                        (centers[cluster][coord] + spec.noise_std * z) as f32
                    })
                    .collect();
                let hash = synth_content_hash(spec.seed, &image_id);
                images.push(ImageRecord {
                    image_id: image_id.clone(),
                    account_id: account_id.clone(),
                    locator: ImageLocator::Hashed(hash),
                });
                embeddings.insert(image_id.clone(), ImageEmbedding::new(values).unwrap());
                true_assignments.insert(image_id, cluster);
            }

            // the account's score is the signal the pipeline must recover:
            // ideology weights applied to the realized cluster mix
            let proportions_dot: f64 = cluster_counts
                .iter()
                .zip(&weights)
                .map(|(count, w)| *count as f64 / n_images as f64 * w)
                .sum();
            let label_z: f64 = normal.sample(&mut rng);
            let score = (proportions_dot + spec.label_noise_std * label_z).clamp(-1.0, 1.0);

            true_scores.insert(account_id.clone(), score);
            accounts.push(AccountProfile {
                account_id,
                group: group_spec.group.clone(),
                label: group_spec
                    .labeled
                    .then(|| IdeologyScore::new(score).expect("clamped score is in range")),
                images,
            });
        }
    }

    accounts.sort_by(|a, b| a.account_id.cmp(&b.account_id));
    let corpus = Corpus {
        accounts,
        provenance: format!(
            "synthetic seed={} dim={} k={} noise_std={}",
            spec.seed, d, k, spec.noise_std
        ),
    };
    Ok(SynthCorpus {
        corpus,
        embeddings,
        true_assignments,
        true_scores,
        centers,
        ideology_weights: weights,
    })
}

/// Exact cluster proportions of an account, straight from the generator's
/// assignments.
pub fn oracle_proportions(
    synth: &SynthCorpus,
    account_id: &str,
) -> Result<ClusterProportions, SynthError> {
    let account = synth
        .corpus
        .account(account_id)
        .ok_or_else(|| SynthError::UnknownAccount(account_id.to_string()))?;
    let k = synth.centers.len();
    let mut counts = vec![0usize; k];
    for image in &account.images {
        counts[synth.true_assignments[&image.image_id]] += 1;
    }
    let n = account.images.len() as f64;
    Ok(ClusterProportions {
        account_id: account_id.to_string(),
        proportions: counts.iter().map(|c| *c as f64 / n).collect(),
    })
}

fn validate(spec: &SynthSpec) -> Result<(), SynthError> {
    let bad = |msg: &str| Err(SynthError::DegenerateSpec(msg.to_string()));
    if spec.k_true == 0 {
        return bad("k_true must be at least 1");
    }
    if spec.dim == 0 {
        return bad("dim must be at least 1");
    }
    if spec.groups.is_empty() {
        return bad("at least one group is required");
    }
    for g in &spec.groups {
        if g.n_accounts == 0 {
            return bad("every group needs at least one account");
        }
        if g.label_modes.is_empty() {
            return bad("every group needs at least one label mode");
        }
        if g.label_modes
            .iter()
            .any(|m| !m.center.is_finite() || !m.std.is_finite() || m.std < 0.0 || m.weight <= 0.0)
        {
            return bad("label modes need finite centers, std >= 0, and positive weights");
        }
    }
    let (lo, hi) = spec.images_per_account;
    if lo == 0 || lo > hi {
        return bad("images_per_account must satisfy 1 <= lo <= hi");
    }
    if !spec.noise_std.is_finite() || spec.noise_std < 0.0 {
        return bad("noise_std must be finite and nonnegative");
    }
    if !spec.label_noise_std.is_finite() || spec.label_noise_std < 0.0 {
        return bad("label_noise_std must be finite and nonnegative");
    }
    Ok(())
}

/// Standard-normal centers, rescaled if needed so the minimum pairwise
/// distance is at least 6 noise-std per coordinate axis (i.e.
/// 6·noise_std·√dim in Euclidean terms), guaranteeing k-means can separate
/// the clusters.
fn draw_separated_centers(
    rng: &mut ChaCha8Rng,
    k: usize,
    d: usize,
    noise_std: f64,
) -> Vec<Vec<f64>> {
    let normal = StandardNormal;
    let mut centers: Vec<Vec<f64>> =
        (0..k).map(|_| (0..d).map(|_| normal.sample(rng)).collect()).collect();
    if k < 2 {
        return centers;
    }
    let mut min_dist = f64::INFINITY;
    for i in 0..k {
        for j in i + 1..k {
            let dist = centers[i]
                .iter()
                .zip(&centers[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            min_dist = min_dist.min(dist);
        }
    }
    let target = 6.0 * noise_std * (d as f64).sqrt();
    if min_dist > 0.0 && min_dist < target {
        let scale = target / min_dist;
        for center in &mut centers {
            for v in center {
                *v *= scale;
            }
        }
    }
    centers
}

fn normalized(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let raw: Vec<f64> = values.collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|v| v / sum).collect()
}

/// One uniform draw walks the cumulative mixture weights.
fn pick_mode<'a>(rng: &mut ChaCha8Rng, modes: &'a [LabelMode]) -> &'a LabelMode {
    let total: f64 = modes.iter().map(|m| m.weight).sum();
    let mut u: f64 = rng.random_range(0.0..total);
    for mode in modes {
        if u < mode.weight {
            return mode;
        }
        u -= mode.weight;
    }
    modes.last().unwrap()
}

fn pick_index(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let mut u: f64 = rng.random_range(0.0..1.0);
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    probs.len() - 1
}

/// Content hash of a synthetic image that never exists as a file.
fn synth_content_hash(seed: u64, image_id: &str) -> ContentHash {
    let mut hasher = Sha256::new();
    hasher.update(b"ideolens-synth");
    hasher.update(seed.to_le_bytes());
    hasher.update(image_id.as_bytes());
    ContentHash(hasher.finalize().into())
}
