//! Ensemble statistics and enhancement figures.
//!
//! Every reported quantity is an average over independent disorder
//! realizations with a quoted standard error, and enhancement factors are
//! decomposed into a power-normalized part and a total-counts ratio so that
//! gains from redistributing light are distinguished from gains obtained by
//! merely reducing bend loss.
//!
//! Summation uses pairwise reduction throughout so results are independent
//! of how work was chunked across threads.

use crate::fiber::Displacements;
use crate::quantum::RateMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from ensemble statistics.
#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("ensemble needs at least 2 samples, got {got}")]
    TooFewSamples { got: usize },
    #[error("baseline mean is zero; enhancement undefined")]
    ZeroBaseline,
    #[error("maps cover different scans and cannot be compared")]
    ScanMismatch,
}

/// Sum with pairwise (cascade) reduction; deterministic and O(log n) error
/// growth regardless of upstream parallel chunking.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Mean and spread of a scalar observable over disorder realizations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisorderStats {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std: f64,
    pub count: usize,
    /// Seed of the displacement ensemble (0 for externally drawn samples).
    pub seed: u64,
}

impl DisorderStats {
    /// Reduce raw samples to summary statistics.
    pub fn from_samples(samples: &[f64], seed: u64) -> Result<Self, MetricsError> {
        if samples.len() < 2 {
            return Err(MetricsError::TooFewSamples { got: samples.len() });
        }
        let n = samples.len() as f64;
        let mean = pairwise_sum(samples) / n;
        let sq: Vec<f64> = samples.iter().map(|&x| (x - mean) * (x - mean)).collect();
        let std = (pairwise_sum(&sq) / (n - 1.0)).sqrt();
        Ok(Self {
            mean,
            std,
            count: samples.len(),
            seed,
        })
    }

    /// Standard error of the mean.
    pub fn standard_error(&self) -> f64 {
        self.std / (self.count as f64).sqrt()
    }
}

/// Evaluate an observable over `count` indexed realizations in parallel and
/// collect the samples in index order, so results are independent of thread
/// scheduling.
pub fn ensemble_samples<E, F>(count: usize, sample: F) -> Result<Vec<f64>, E>
where
    E: Send,
    F: Fn(u64) -> Result<f64, E> + Sync + Send,
{
    (0..count as u64).into_par_iter().map(sample).collect()
}

/// Evaluate a cost at `n_samples` uniform random displacement vectors (the
/// unoptimized "disorder" ensemble) and reduce to summary statistics.
pub fn disorder_average<E, F>(
    cost: F,
    actuator_count: usize,
    n_samples: usize,
    seed: u64,
) -> Result<DisorderStats, E>
where
    E: Send + From<MetricsError>,
    F: Fn(&Displacements) -> Result<f64, E> + Sync + Send,
{
    let samples = ensemble_samples(n_samples, |i| {
        let mut rng = crate::seeds::stream(seed, "disorder", i);
        cost(&Displacements::random(actuator_count, &mut rng))
    })?;
    Ok(DisorderStats::from_samples(&samples, seed)?)
}

/// An enhancement factor with its propagated statistical uncertainty.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Enhancement {
    pub value: f64,
    /// Uncertainty from the finite baseline ensemble.
    pub uncertainty: f64,
}

/// Raw enhancement of a rate over its disorder baseline.
pub fn enhancement(optimized: f64, baseline: &DisorderStats) -> Result<Enhancement, MetricsError> {
    if baseline.mean == 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    let value = optimized / baseline.mean;
    let uncertainty = (value * baseline.standard_error() / baseline.mean).abs();
    Ok(Enhancement { value, uncertainty })
}

/// Enhancement decomposed into redistribution and total-counts parts, with
/// the singles-rate change at the target for context.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnhancementReport {
    /// Raw enhancement: optimized rate at the target over the baseline mean.
    pub enhancement: Enhancement,
    /// Enhancement of the normalized map, `enhancement / total_ratio`.
    pub normalized: f64,
    /// Total counts over the scanned region, after / before.
    pub total_ratio: f64,
    /// Singles rate at the target, after / before.
    pub singles_enhancement: f64,
}

/// Build the enhancement report from before/after coincidence and singles
/// maps at the target position `(x, y)` µm, against the disorder baseline
/// of the target rate.
pub fn enhancement_report(
    coincidence_before: &RateMap,
    coincidence_after: &RateMap,
    singles_before: &RateMap,
    singles_after: &RateMap,
    target_x_um: f64,
    target_y_um: f64,
    baseline: &DisorderStats,
) -> Result<EnhancementReport, MetricsError> {
    if coincidence_before.scan != coincidence_after.scan
        || singles_before.scan != singles_after.scan
    {
        return Err(MetricsError::ScanMismatch);
    }
    let target = coincidence_after.nearest_index(target_x_um, target_y_um);
    let enhancement = self::enhancement(coincidence_after.values[target], baseline)?;
    let total_before = coincidence_before.total();
    if total_before == 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    let total_ratio = coincidence_after.total() / total_before;
    let singles_target = singles_after.nearest_index(target_x_um, target_y_um);
    let singles_before_rate = singles_before.values[singles_target];
    if singles_before_rate == 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok(EnhancementReport {
        enhancement,
        normalized: enhancement.value / total_ratio,
        total_ratio,
        singles_enhancement: singles_after.values[singles_target] / singles_before_rate,
    })
}
