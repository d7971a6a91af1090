//! Feature rank, active-unit counts, weight norms and k-NN error of learned
//! features.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{covariance_spectrum, DenseMatrix, EigenSpectrum};
use crate::nets::{Dataset, Model};

/// Ranks at the variance thresholds used when none are requested.
pub const DEFAULT_THRESHOLDS: [f64; 4] = [0.95, 0.99, 0.999, 0.9999];

/// Block outputs of `net` on every example of `data`, one row per example.
pub fn feature_matrix<M: Model>(net: &M, data: &Dataset, block: usize) -> Result<DenseMatrix> {
    let width = net.block_width(block)?;
    let mut out = Vec::with_capacity(data.len() * width);
    for i in 0..data.len() {
        out.extend(net.block_output(data.input(i), block)?);
    }
    Ok(DenseMatrix::from_raw(data.len(), width, out))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub spectrum: Option<EigenSpectrum>,
    pub thresholds: Vec<f64>,
    /// `ranks[i]` is the number of leading principal components needed to
    /// reach `thresholds[i]` of the total variance.
    pub ranks: Vec<usize>,
}

impl RankReport {
    pub fn rank_at(&self, threshold: f64) -> Option<usize> {
        self.thresholds
            .iter()
            .position(|&t| t == threshold)
            .map(|i| self.ranks[i])
    }
}

fn check_thresholds(thresholds: &[f64]) -> Result<()> {
    if let Some(bad) = thresholds.iter().find(|&&t| !(t > 0.0 && t <= 1.0)) {
        return Err(Error::invalid(format!(
            "variance threshold {bad} is outside (0, 1]"
        )));
    }
    Ok(())
}

/// Minimal `k` with `(λ_1 + … + λ_k) / Σλ >= threshold`; 0 when the total
/// variance is 0.
pub fn rank_at_threshold(spectrum: &EigenSpectrum, threshold: f64) -> usize {
    if spectrum.total <= 0.0 {
        return 0;
    }
    let mut cumulative = 0.0;
    for (k, &v) in spectrum.eigenvalues.iter().enumerate() {
        cumulative += v;
        if cumulative / spectrum.total >= threshold {
            return k + 1;
        }
    }
    spectrum.eigenvalues.len()
}

pub fn rank_report(spectrum: EigenSpectrum, thresholds: &[f64]) -> Result<RankReport> {
    check_thresholds(thresholds)?;
    let ranks = thresholds
        .iter()
        .map(|&t| rank_at_threshold(&spectrum, t))
        .collect();
    Ok(RankReport {
        spectrum: Some(spectrum),
        thresholds: thresholds.to_vec(),
        ranks,
    })
}

/// PCA-based feature rank of an `n × d` feature matrix at each threshold.
pub fn feature_rank(features: &DenseMatrix, thresholds: &[f64], center: bool) -> Result<RankReport> {
    check_thresholds(thresholds)?;
    rank_report(covariance_spectrum(features, center)?, thresholds)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ActivityMode {
    /// A unit is active if any entry of its column is `> 0`.
    AnyNonzero,
    /// A unit is active if any entry of its column is at least `fraction`
    /// of the largest entry of the whole matrix.
    RelativeThreshold(f64),
}

impl Default for ActivityMode {
    fn default() -> Self {
        ActivityMode::AnyNonzero
    }
}

impl fmt::Display for ActivityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivityMode::AnyNonzero => f.write_str("any_nonzero"),
            ActivityMode::RelativeThreshold(frac) => write!(f, "relative:{frac}"),
        }
    }
}

impl FromStr for ActivityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "any_nonzero" {
            return Ok(ActivityMode::AnyNonzero);
        }
        if let Some(frac) = s.strip_prefix("relative:") {
            let frac: f64 = frac
                .parse()
                .map_err(|_| Error::invalid(format!("bad activity fraction `{frac}`")))?;
            if !(frac > 0.0 && frac <= 1.0) {
                return Err(Error::invalid(format!(
                    "activity fraction must be in (0, 1], got {frac}"
                )));
            }
            return Ok(ActivityMode::RelativeThreshold(frac));
        }
        Err(Error::invalid(format!(
            "unknown activity mode `{s}` (expected any_nonzero or relative:<fraction>)"
        )))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActivityReport {
    pub total_units: usize,
    pub active_units: usize,
    pub mode: ActivityMode,
}

/// Counts the feature-matrix columns (units) that are active on at least one
/// row (example).
pub fn active_units(features: &DenseMatrix, mode: ActivityMode) -> ActivityReport {
    let cutoff = match mode {
        ActivityMode::AnyNonzero => None,
        ActivityMode::RelativeThreshold(frac) => match features.max_entry() {
            Some(max) if max > 0.0 => Some(frac * max),
            _ => {
                return ActivityReport {
                    total_units: features.cols(),
                    active_units: 0,
                    mode,
                }
            }
        },
    };
    let active = (0..features.cols())
        .filter(|&j| {
            (0..features.rows()).any(|i| {
                let v = features.get(i, j);
                match cutoff {
                    None => v > 0.0,
                    Some(c) => v >= c,
                }
            })
        })
        .count();
    ActivityReport {
        total_units: features.cols(),
        active_units: active,
        mode,
    }
}

/// ℓ2 norm of all trainable parameters.
pub fn weight_norm<M: Model>(net: &M) -> f64 {
    net.params().norm()
}

/// Fraction of test rows misclassified by a `k`-nearest-neighbour vote over
/// the training rows (Euclidean distance). Distance ties go to the lower
/// training index, vote ties to the smaller label.
pub fn knn_error(
    train_feats: &DenseMatrix,
    train_labels: &[usize],
    test_feats: &DenseMatrix,
    test_labels: &[usize],
    k: usize,
) -> Result<f64> {
    if train_feats.rows() == 0 {
        return Err(Error::Empty("k-NN training set"));
    }
    if test_feats.rows() == 0 {
        return Err(Error::Empty("k-NN test set"));
    }
    if train_labels.len() != train_feats.rows() || test_labels.len() != test_feats.rows() {
        return Err(Error::invalid("k-NN labels must align with feature rows"));
    }
    if train_feats.cols() != test_feats.cols() {
        return Err(Error::Shape {
            op: "knn_error",
            left: train_feats.shape(),
            right: test_feats.shape(),
        });
    }
    if k == 0 || k > train_feats.rows() {
        return Err(Error::invalid(format!(
            "k must be in 1..={}, got {k}",
            train_feats.rows()
        )));
    }

    let mut order: Vec<(f64, usize)> = Vec::with_capacity(train_feats.rows());
    let mut errors = 0usize;
    for (t, &truth) in test_labels.iter().enumerate() {
        let query = test_feats.row(t);
        order.clear();
        order.extend((0..train_feats.rows()).map(|i| {
            let d: f64 = train_feats
                .row(i)
                .iter()
                .zip(query)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (d, i)
        }));
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        for &(_, i) in &order[..k] {
            *votes.entry(train_labels[i]).or_default() += 1;
        }
        // BTreeMap iterates labels ascending; keep the first maximum
        let mut best = (0usize, 0usize);
        for (&label, &count) in &votes {
            if count > best.1 {
                best = (label, count);
            }
        }
        if best.0 != truth {
            errors += 1;
        }
    }
    Ok(errors as f64 / test_labels.len() as f64)
}
