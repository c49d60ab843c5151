//! Score-distribution statistics: R², per-group mean/std summaries,
//! histograms, and a sample-size-corrected bimodality coefficient.
//!
//! The group report pairs each computed row with static reference values
//! from the original study so runs on new corpora can be compared
//! side-by-side with the published distribution summaries.

use std::path::Path;

use serde::Serialize;

use crate::corpus::GroupLabel;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("length mismatch: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("input must not be empty")]
    Empty,
    #[error("input is constant; statistic undefined")]
    ConstantInput,
    #[error("need at least {need} samples, got {n}")]
    TooFewSamples { n: usize, need: usize },
    #[error("histogram needs at least one bin")]
    ZeroBins,
    #[error("histogram range is empty: lo {lo} must be below hi {hi}")]
    BadRange { lo: f64, hi: f64 },
    #[error("duplicate prediction for account `{account_id}` under {model_tag}")]
    DuplicateRow {
        account_id: String,
        model_tag: ModelTag,
    },
    #[error("non-finite score for account `{0}`")]
    NonFiniteScore(String),
    #[error("predictions file line {line}: {reason}")]
    BadCsv { line: u64, reason: String },
    #[error("unknown model tag `{0}` (expected model1 or model2)")]
    BadTag(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Which of the two regression models produced a score: `model1` consumes
/// cluster proportions, `model2` consumes mean embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTag {
    Model1,
    Model2,
}

impl ModelTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelTag::Model1 => "model1",
            ModelTag::Model2 => "model2",
        }
    }

    pub fn parse(s: &str) -> Result<ModelTag, AnalysisError> {
        match s.trim() {
            "model1" => Ok(ModelTag::Model1),
            "model2" => Ok(ModelTag::Model2),
            other => Err(AnalysisError::BadTag(other.to_string())),
        }
    }
}

impl std::fmt::Display for ModelTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One scored account under one model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub account_id: String,
    pub group: GroupLabel,
    pub model_tag: ModelTag,
    pub score: f64,
}

/// All predictions of a run. `(account_id, model_tag)` is unique and every
/// score is finite; rows are kept in canonical (group, account, model) order
/// so serialized output is reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    rows: Vec<Prediction>,
}

impl PredictionTable {
    pub fn new(mut rows: Vec<Prediction>) -> Result<PredictionTable, AnalysisError> {
        for row in &rows {
            if !row.score.is_finite() {
                return Err(AnalysisError::NonFiniteScore(row.account_id.clone()));
            }
        }
        rows.sort_by(|a, b| {
            (&a.group, &a.account_id, a.model_tag).cmp(&(&b.group, &b.account_id, b.model_tag))
        });
        for pair in rows.windows(2) {
            if pair[0].account_id == pair[1].account_id && pair[0].model_tag == pair[1].model_tag {
                return Err(AnalysisError::DuplicateRow {
                    account_id: pair[0].account_id.clone(),
                    model_tag: pair[0].model_tag,
                });
            }
        }
        Ok(PredictionTable { rows })
    }

    pub fn rows(&self) -> &[Prediction] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Scores for one (group, model) cell, in canonical row order.
    pub fn scores_for(&self, group: &GroupLabel, tag: ModelTag) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| &r.group == group && r.model_tag == tag)
            .map(|r| r.score)
            .collect()
    }

    /// Distinct groups present, in canonical group order.
    pub fn groups(&self) -> Vec<GroupLabel> {
        let mut groups: Vec<GroupLabel> = Vec::new();
        for row in &self.rows {
            if groups.last() != Some(&row.group) && !groups.contains(&row.group) {
                groups.push(row.group.clone());
            }
        }
        groups
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), AnalysisError> {
        let mut out = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(["account_id", "group", "model_tag", "score"])
                .map_err(csv_io)?;
            for row in &self.rows {
                w.write_record([
                    row.account_id.as_str(),
                    row.group.as_str(),
                    row.model_tag.as_str(),
                    &format!("{}", row.score),
                ])
                .map_err(csv_io)?;
            }
            w.flush()?;
        }
        write_atomic(path, &out)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<PredictionTable, AnalysisError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| AnalysisError::BadCsv {
                line: 0,
                reason: e.to_string(),
            })?;
        let headers = reader
            .headers()
            .map_err(|e| AnalysisError::BadCsv {
                line: 1,
                reason: e.to_string(),
            })?
            .clone();
        let expected = ["account_id", "group", "model_tag", "score"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(AnalysisError::BadCsv {
                line: 1,
                reason: format!("header must be `{}`", expected.join(",")),
            });
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| AnalysisError::BadCsv {
                line: 0,
                reason: e.to_string(),
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if record.len() != 4 {
                return Err(AnalysisError::BadCsv {
                    line,
                    reason: format!("expected 4 fields, got {}", record.len()),
                });
            }
            let score: f64 = record[3].trim().parse().map_err(|_| AnalysisError::BadCsv {
                line,
                reason: format!("invalid score `{}`", &record[3]),
            })?;
            rows.push(Prediction {
                account_id: record[0].to_string(),
                group: GroupLabel::parse(&record[1]).map_err(|_| AnalysisError::BadCsv {
                    line,
                    reason: format!("invalid group `{}`", &record[1]),
                })?,
                model_tag: ModelTag::parse(&record[2]).map_err(|_| AnalysisError::BadCsv {
                    line,
                    reason: format!("invalid model tag `{}`", &record[2]),
                })?,
                score,
            });
        }
        PredictionTable::new(rows)
    }
}

fn csv_io(e: csv::Error) -> AnalysisError {
    AnalysisError::BadCsv {
        line: 0,
        reason: e.to_string(),
    }
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

/// Coefficient of determination, 1 − SS_res/SS_tot. May be negative for
/// predictors worse than the mean.
pub fn r_squared(y_true: &[f64], y_pred: &[f64]) -> Result<f64, AnalysisError> {
    if y_true.len() != y_pred.len() {
        return Err(AnalysisError::LengthMismatch {
            a: y_true.len(),
            b: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(AnalysisError::Empty);
    }
    // exact equality, not a variance test: the rounded mean of n identical
    // values can differ from them by an ulp, leaving ss_tot tiny but nonzero
    if y_true.iter().all(|&v| v == y_true[0]) {
        return Err(AnalysisError::ConstantInput);
    }
    let mean: f64 = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return Err(AnalysisError::ConstantInput);
    }
    let ss_res: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(y, p)| (y - p) * (y - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Arithmetic mean and sample (n−1) standard deviation; std is absent when
/// n = 1.
pub fn mean_std(scores: &[f64]) -> Result<(f64, Option<f64>), AnalysisError> {
    if scores.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    if scores.len() == 1 {
        return Ok((mean, None));
    }
    let ss: f64 = scores.iter().map(|s| (s - mean) * (s - mean)).sum();
    Ok((mean, Some((ss / (n - 1.0)).sqrt())))
}

/// Scores above this bimodality-coefficient value suggest a bimodal shape;
/// a uniform distribution sits exactly at the benchmark.
pub const BIMODALITY_THRESHOLD: f64 = 5.0 / 9.0;

/// Sample-size-corrected bimodality coefficient
/// BC = (G₁² + 1) / (G₂ + 3(n−1)²/((n−2)(n−3))),
/// with G₁ the corrected sample skewness and G₂ the corrected sample excess
/// kurtosis. Requires n ≥ 4 and a non-constant sample.
pub fn bimodality_coefficient(scores: &[f64]) -> Result<f64, AnalysisError> {
    let n = scores.len();
    if n < 4 {
        return Err(AnalysisError::TooFewSamples { n, need: 4 });
    }
    if scores.iter().all(|&v| v == scores[0]) {
        return Err(AnalysisError::ConstantInput);
    }
    let nf = n as f64;
    let mean = scores.iter().sum::<f64>() / nf;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    for s in scores {
        let d = s - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if m2 == 0.0 {
        return Err(AnalysisError::ConstantInput);
    }
    let b1 = m3 / m2.powf(1.5);
    let b2 = m4 / (m2 * m2);
    let g1 = b1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0);
    let g2 = ((nf + 1.0) * (b2 - 3.0) + 6.0) * (nf - 1.0) / ((nf - 2.0) * (nf - 3.0));
    let correction = 3.0 * (nf - 1.0) * (nf - 1.0) / ((nf - 2.0) * (nf - 3.0));
    Ok((g1 * g1 + 1.0) / (g2 + correction))
}

/// Uniform-bin histogram over [lo, hi]. Values equal to `hi` land in the
/// last bin; values outside the range are tallied separately.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    /// bins + 1 edges, uniformly spaced from lo to hi.
    pub fn edges(&self) -> Vec<f64> {
        let bins = self.counts.len();
        (0..=bins)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / bins as f64)
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }
}

pub fn histogram(scores: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Histogram, AnalysisError> {
    if bins == 0 {
        return Err(AnalysisError::ZeroBins);
    }
    if !(lo < hi) {
        return Err(AnalysisError::BadRange { lo, hi });
    }
    let mut counts = vec![0u64; bins];
    let mut underflow = 0u64;
    let mut overflow = 0u64;
    let width = hi - lo;
    for &s in scores {
        if s < lo {
            underflow += 1;
        } else if s > hi {
            overflow += 1;
        } else if s == hi {
            counts[bins - 1] += 1;
        } else {
            let idx = (((s - lo) / width) * bins as f64) as usize;
            counts[idx.min(bins - 1)] += 1;
        }
    }
    Ok(Histogram {
        lo,
        hi,
        counts,
        underflow,
        overflow,
    })
}

/// Histogram shape used when summarizing groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramSpec {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        HistogramSpec {
            lo: -1.0,
            hi: 1.0,
            bins: 40,
        }
    }
}

/// Summary of one (group, model) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupModelStats {
    pub group: GroupLabel,
    pub model_tag: ModelTag,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; absent for n = 1.
    pub std: Option<f64>,
    /// Absent when n < 4 or the scores are constant.
    pub bimodality_coefficient: Option<f64>,
    /// True when the coefficient exceeds [`BIMODALITY_THRESHOLD`].
    pub bimodal: Option<bool>,
    pub histogram: Histogram,
}

/// Reference distribution summary published in the original study, kept
/// alongside computed rows for side-by-side comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceRow {
    pub group: &'static str,
    pub model_tag: ModelTag,
    pub mean: f64,
    pub std: f64,
}

/// Published per-group score summaries (mean and sample std) for both
/// models, as reported by the original study.
pub const REFERENCE_SUMMARY: [ReferenceRow; 10] = [
    ReferenceRow { group: "iran", model_tag: ModelTag::Model1, mean: 0.191, std: 0.145 },
    ReferenceRow { group: "russia", model_tag: ModelTag::Model1, mean: 0.244, std: 0.130 },
    ReferenceRow { group: "china", model_tag: ModelTag::Model1, mean: 0.167, std: 0.138 },
    ReferenceRow { group: "venezuela", model_tag: ModelTag::Model1, mean: 0.140, std: 0.147 },
    ReferenceRow { group: "politicians", model_tag: ModelTag::Model1, mean: 0.051, std: 0.313 },
    ReferenceRow { group: "iran", model_tag: ModelTag::Model2, mean: 0.096, std: 0.087 },
    ReferenceRow { group: "russia", model_tag: ModelTag::Model2, mean: 0.108, std: 0.089 },
    ReferenceRow { group: "china", model_tag: ModelTag::Model2, mean: 0.075, std: 0.071 },
    ReferenceRow { group: "venezuela", model_tag: ModelTag::Model2, mean: 0.085, std: 0.083 },
    ReferenceRow { group: "politicians", model_tag: ModelTag::Model2, mean: 0.052, std: 0.311 },
];

/// Per-group, per-model report over a prediction table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub format: &'static str,
    pub version: u32,
    pub rows: Vec<GroupModelStats>,
    pub reference: Vec<ReferenceRow>,
}

impl GroupReport {
    pub fn save(&self, path: &Path) -> Result<(), AnalysisError> {
        let json = serde_json::to_vec_pretty(self).expect("report serializes");
        write_atomic(path, &json)?;
        Ok(())
    }

    pub fn row(&self, group: &GroupLabel, tag: ModelTag) -> Option<&GroupModelStats> {
        self.rows
            .iter()
            .find(|r| &r.group == group && r.model_tag == tag)
    }
}

/// Builds the per-(group, model) report: mean, sample std, bimodality
/// coefficient, and a histogram, in canonical (model, group) order.
pub fn group_summary(
    preds: &PredictionTable,
    hist: HistogramSpec,
) -> Result<GroupReport, AnalysisError> {
    if preds.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let groups = preds.groups();
    let mut rows = Vec::new();
    for tag in [ModelTag::Model1, ModelTag::Model2] {
        for group in &groups {
            let scores = preds.scores_for(group, tag);
            if scores.is_empty() {
                continue;
            }
            let (mean, std) = mean_std(&scores)?;
            let bc = match bimodality_coefficient(&scores) {
                Ok(v) => Some(v),
                Err(AnalysisError::TooFewSamples { .. }) | Err(AnalysisError::ConstantInput) => None,
                Err(e) => return Err(e),
            };
            rows.push(GroupModelStats {
                group: group.clone(),
                model_tag: tag,
                n: scores.len(),
                mean,
                std,
                bimodality_coefficient: bc,
                bimodal: bc.map(|v| v > BIMODALITY_THRESHOLD),
                histogram: histogram(&scores, hist.lo, hist.hi, hist.bins)?,
            });
        }
    }
    Ok(GroupReport {
        format: "group-report",
        version: 1,
        rows,
        reference: REFERENCE_SUMMARY.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_distr::Distribution;

    fn pred(account: &str, group: &str, tag: ModelTag, score: f64) -> Prediction {
        Prediction {
            account_id: account.to_string(),
            group: GroupLabel::parse(group).unwrap(),
            model_tag: tag,
            score,
        }
    }

    #[test]
    fn r_squared_golden_values() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(r_squared(&y, &y).unwrap(), 1.0, epsilon = 1e-12);
        let mean_pred = [2.5; 4];
        assert_abs_diff_eq!(r_squared(&y, &mean_pred).unwrap(), 0.0, epsilon = 1e-12);
        // SS_res = 1, SS_tot = 2
        let r2 = r_squared(&[0.0, 1.0, 2.0], &[0.0, 1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(r2, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn r_squared_rejects_degenerate_inputs() {
        assert!(matches!(
            r_squared(&[1.0, 1.0], &[1.0, 2.0]),
            Err(AnalysisError::ConstantInput)
        ));
        assert!(matches!(
            r_squared(&[1.0], &[1.0, 2.0]),
            Err(AnalysisError::LengthMismatch { a: 1, b: 2 })
        ));
        assert!(matches!(r_squared(&[], &[]), Err(AnalysisError::Empty)));
    }

    #[test]
    fn r_squared_can_be_negative() {
        let r2 = r_squared(&[0.0, 1.0, 2.0], &[2.0, 1.0, 0.0]).unwrap();
        assert!(r2 < 0.0);
    }

    #[test]
    fn mean_std_hand_computed() {
        let (mean, std) = mean_std(&[0.0, 0.1, 0.2]).unwrap();
        assert_abs_diff_eq!(mean, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(std.unwrap(), 0.1, epsilon = 1e-12);
        let (mean, std) = mean_std(&[0.244]).unwrap();
        assert_abs_diff_eq!(mean, 0.244, epsilon = 1e-15);
        assert!(std.is_none());
    }

    #[test]
    fn bimodality_of_two_point_sample() {
        let mut scores = vec![-1.0; 2500];
        scores.extend(vec![1.0; 2500]);
        let bc = bimodality_coefficient(&scores).unwrap();
        assert!(bc > BIMODALITY_THRESHOLD);
        // Exact evaluation: a symmetric ±1 sample has G1 = 0 and b2 = 1,
        // so with n = 5000 the denominator is
        //   G2 + 3(n−1)²/((n−2)(n−3))
        //   = (5001·(−2) + 6)·4999/24975006 + 3·4999²/24975006
        //   = (74970003 − 49970004)/24975006 = 24999999/24975006
        // and BC = 24975006/24999999.
        assert_abs_diff_eq!(bc, 24_975_006.0 / 24_999_999.0, epsilon = 1e-12);
    }

    #[test]
    fn bimodality_of_gaussian_sample_is_near_one_third() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let normal = rand_distr::Normal::new(0.0f64, 1.0).unwrap();
        let scores: Vec<f64> = (0..5000).map(|_| normal.sample(&mut rng)).collect();
        let bc = bimodality_coefficient(&scores).unwrap();
        assert!((bc - 1.0 / 3.0).abs() < 0.05, "BC {bc}");
        assert!(bc < BIMODALITY_THRESHOLD);
    }

    #[test]
    fn bimodality_rejects_tiny_or_constant_samples() {
        assert!(matches!(
            bimodality_coefficient(&[1.0, 2.0, 3.0]),
            Err(AnalysisError::TooFewSamples { n: 3, need: 4 })
        ));
        assert!(matches!(
            bimodality_coefficient(&[0.3; 10]),
            Err(AnalysisError::ConstantInput)
        ));
    }

    #[test]
    fn histogram_boundary_rules() {
        let h = histogram(&[-1.0, 1.0], -1.0, 1.0, 2).unwrap();
        assert_eq!(h.counts, vec![1, 1]);
        assert_eq!((h.underflow, h.overflow), (0, 0));
        assert_eq!(h.edges(), vec![-1.0, 0.0, 1.0]);

        let empty = histogram(&[], -1.0, 1.0, 4).unwrap();
        assert_eq!(empty.counts, vec![0, 0, 0, 0]);
        assert_eq!(empty.total(), 0);

        let spill = histogram(&[-2.0, 0.0, 3.0], -1.0, 1.0, 2).unwrap();
        assert_eq!(spill.counts, vec![0, 1]);
        assert_eq!((spill.underflow, spill.overflow), (1, 1));
        assert_eq!(spill.total(), 3);

        assert!(matches!(
            histogram(&[0.0], -1.0, 1.0, 0),
            Err(AnalysisError::ZeroBins)
        ));
        assert!(matches!(
            histogram(&[0.0], 1.0, -1.0, 2),
            Err(AnalysisError::BadRange { .. })
        ));
    }

    #[test]
    fn histogram_of_bimodal_mixture_has_two_separated_peaks() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let lobe = rand_distr::Normal::new(0.5f64, 0.15).unwrap();
        let scores: Vec<f64> = (0..4000)
            .map(|i| {
                let v = lobe.sample(&mut rng);
                if i % 2 == 0 {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let h = histogram(&scores, -1.0, 1.0, 40).unwrap();
        // local maxima: strictly higher than both neighbors
        let peaks: Vec<usize> = (1..39)
            .filter(|&i| h.counts[i] > h.counts[i - 1] && h.counts[i] > h.counts[i + 1])
            .collect();
        let lo_peak = peaks.iter().min().unwrap();
        let hi_peak = peaks.iter().max().unwrap();
        assert!(
            hi_peak - lo_peak >= 5,
            "peaks {peaks:?} not separated in {:?}",
            h.counts
        );
    }

    #[test]
    fn prediction_table_enforces_uniqueness_and_finiteness() {
        let dup = vec![
            pred("a", "iran", ModelTag::Model1, 0.1),
            pred("a", "iran", ModelTag::Model1, 0.2),
        ];
        assert!(matches!(
            PredictionTable::new(dup),
            Err(AnalysisError::DuplicateRow { .. })
        ));

        // same account under both models is fine
        let ok = vec![
            pred("a", "iran", ModelTag::Model2, 0.1),
            pred("a", "iran", ModelTag::Model1, 0.2),
        ];
        let table = PredictionTable::new(ok).unwrap();
        assert_eq!(table.rows()[0].model_tag, ModelTag::Model1);

        assert!(matches!(
            PredictionTable::new(vec![pred("x", "china", ModelTag::Model1, f64::NAN)]),
            Err(AnalysisError::NonFiniteScore(_))
        ));
    }

    #[test]
    fn prediction_csv_round_trips_and_is_order_canonical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        let rows = vec![
            pred("acct2", "russia", ModelTag::Model2, -0.25),
            pred("acct1", "iran", ModelTag::Model1, 0.125),
            pred("acct9", "politicians", ModelTag::Model1, 0.75),
        ];
        let mut reversed = rows.clone();
        reversed.reverse();
        PredictionTable::new(rows.clone()).unwrap().write_csv(&a).unwrap();
        PredictionTable::new(reversed).unwrap().write_csv(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

        let back = PredictionTable::read_csv(&a).unwrap();
        assert_eq!(back, PredictionTable::new(rows).unwrap());
    }

    #[test]
    fn prediction_csv_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "account_id,group,model_tag,score\na,iran,model1,0.5\nb,iran,model3,0.5\n",
        )
        .unwrap();
        match PredictionTable::read_csv(&path) {
            Err(AnalysisError::BadCsv { line, reason }) => {
                assert_eq!(line, 3);
                assert!(reason.contains("model3"), "{reason}");
            }
            other => panic!("expected BadCsv, got {other:?}"),
        }
    }

    #[test]
    fn group_summary_hand_checked() {
        let rows = vec![
            pred("a", "russia", ModelTag::Model1, 0.0),
            pred("b", "russia", ModelTag::Model1, 0.1),
            pred("c", "russia", ModelTag::Model1, 0.2),
            pred("solo", "iran", ModelTag::Model2, 0.244),
        ];
        let table = PredictionTable::new(rows).unwrap();
        let report = group_summary(&table, HistogramSpec::default()).unwrap();
        assert_eq!(report.rows.len(), 2);

        let russia = report
            .row(&GroupLabel::parse("russia").unwrap(), ModelTag::Model1)
            .unwrap();
        assert_eq!(russia.n, 3);
        assert_abs_diff_eq!(russia.mean, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(russia.std.unwrap(), 0.1, epsilon = 1e-12);
        assert!(russia.bimodality_coefficient.is_none()); // n < 4
        assert_eq!(russia.histogram.total(), 3);

        let iran = report
            .row(&GroupLabel::parse("iran").unwrap(), ModelTag::Model2)
            .unwrap();
        assert_eq!(iran.n, 1);
        assert!(iran.std.is_none());

        assert!(matches!(
            group_summary(&PredictionTable::new(Vec::new()).unwrap(), HistogramSpec::default()),
            Err(AnalysisError::Empty)
        ));
    }

    #[test]
    fn reference_summary_spot_checks() {
        assert_eq!(REFERENCE_SUMMARY.len(), 10);
        let russia1 = REFERENCE_SUMMARY
            .iter()
            .find(|r| r.group == "russia" && r.model_tag == ModelTag::Model1)
            .unwrap();
        assert_eq!((russia1.mean, russia1.std), (0.244, 0.130));
        let pol1 = REFERENCE_SUMMARY
            .iter()
            .find(|r| r.group == "politicians" && r.model_tag == ModelTag::Model1)
            .unwrap();
        assert_eq!((pol1.mean, pol1.std), (0.051, 0.313));
        let pol2 = REFERENCE_SUMMARY
            .iter()
            .find(|r| r.group == "politicians" && r.model_tag == ModelTag::Model2)
            .unwrap();
        assert_eq!((pol2.mean, pol2.std), (0.052, 0.311));
    }

    #[test]
    fn report_json_is_deterministic_and_self_describing() {
        let rows = vec![
            pred("a", "china", ModelTag::Model1, 0.3),
            pred("b", "china", ModelTag::Model1, -0.2),
        ];
        let table = PredictionTable::new(rows).unwrap();
        let report = group_summary(&table, HistogramSpec::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("r1.json");
        let p2 = dir.path().join("r2.json");
        report.save(&p1).unwrap();
        report.save(&p2).unwrap();
        let bytes = std::fs::read(&p1).unwrap();
        assert_eq!(bytes, std::fs::read(&p2).unwrap());
        let value: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(value["format"], "group-report");
        assert_eq!(value["rows"][0]["group"], "china");
        assert_eq!(value["reference"].as_array().unwrap().len(), 10);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn r_squared_is_affine_invariant(
                ys in proptest::collection::vec(-1.0f64..1.0, 3..40),
                noise in proptest::collection::vec(-0.5f64..0.5, 3..40),
                a in proptest::sample::select(vec![-3.0f64, -0.5, 0.25, 2.0]),
                b in -2.0f64..2.0,
            ) {
                let n = ys.len().min(noise.len());
                let y: Vec<f64> = ys[..n].to_vec();
                let p: Vec<f64> = y.iter().zip(&noise[..n]).map(|(y, e)| y + e).collect();
                if let Ok(base) = r_squared(&y, &p) {
                    let ya: Vec<f64> = y.iter().map(|v| a * v + b).collect();
                    let pa: Vec<f64> = p.iter().map(|v| a * v + b).collect();
                    let mapped = r_squared(&ya, &pa).unwrap();
                    prop_assert!((base - mapped).abs() < 1e-9, "{base} vs {mapped}");
                }
            }

            #[test]
            fn bimodality_is_affine_invariant(
                ys in proptest::collection::vec(-1.0f64..1.0, 4..60),
                a in proptest::sample::select(vec![-2.0f64, 0.5, 3.0]),
                b in -1.0f64..1.0,
            ) {
                if let Ok(base) = bimodality_coefficient(&ys) {
                    let mapped: Vec<f64> = ys.iter().map(|v| a * v + b).collect();
                    let bc = bimodality_coefficient(&mapped).unwrap();
                    prop_assert!((base - bc).abs() < 1e-6, "{base} vs {bc}");
                }
            }

            #[test]
            fn histogram_counts_always_sum_to_n(
                ys in proptest::collection::vec(-3.0f64..3.0, 0..80),
                bins in 1usize..30,
            ) {
                let h = histogram(&ys, -1.0, 1.0, bins).unwrap();
                prop_assert_eq!(h.total(), ys.len() as u64);
            }

            #[test]
            fn mean_std_is_permutation_invariant(
                ys in proptest::collection::vec(-1.0f64..1.0, 2..50),
                seed in 0u64..1000,
            ) {
                use rand::seq::SliceRandom;
                let mut shuffled = ys.clone();
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                shuffled.shuffle(&mut rng);
                let (m1, s1) = mean_std(&ys).unwrap();
                let (m2, s2) = mean_std(&shuffled).unwrap();
                prop_assert!((m1 - m2).abs() < 1e-12);
                prop_assert!((s1.unwrap() - s2.unwrap()).abs() < 1e-12);
            }
        }
    }
}
