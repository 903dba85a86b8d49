//! Photon-pair states, heralding, and count-rate observables.
//!
//! A down-conversion source emits photon pairs in a Schmidt decomposition
//! over the fiber modes (identity embedding: Schmidt mode `a` is fiber mode
//! `a`; any fixed embedding is statistically equivalent after the first
//! random mixing segment). Two measurement configurations are modeled:
//!
//! - **two-photon**: both photons traverse the fiber; the coincidence rate
//!   between detectors collecting modes `d₁`, `d₂` is
//!   `|Σ_a √λ_a (Tᵀd₁)_a (Tᵀd₂)_a|²`.
//! - **heralded**: the idler is projected directly onto a herald mode at
//!   the source, collapsing the signal to a pure single-photon state that
//!   then traverses the fiber alone.
//!
//! Singles rates are incoherent sums over Schmidt modes, which is why a
//! highly entangled pair beam shows smooth singles but fully developed
//! speckle in the coincidences.
//!
//! All rates consume detector projections `u = Tᵀd` of collection vectors,
//! so optimization loops can use the row fast path of
//! [`FiberModel::propagate_row`] without assembling transmission matrices.

use crate::fiber::{Displacements, FiberError, FiberModel, TransmissionMatrix};
use crate::metrics::pairwise_sum;
use crate::modes::{DetectorSpec, ModeBasis, ModeError};
use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from state construction and rate evaluation.
#[derive(Debug, Error)]
pub enum QuantumError {
    #[error("Schmidt number target {target} infeasible for {n_modes} modes (need 1 ≤ K ≤ n)")]
    InfeasibleSpectrum { target: f64, n_modes: usize },
    #[error("herald mode must have unit norm, got {norm}")]
    HeraldNotNormalized { norm: f64 },
    #[error("herald mode has zero overlap with every occupied Schmidt mode")]
    ZeroHeraldOverlap,
    #[error("vector has {got} entries, state has {expected} modes")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("contrast needs at least 2 samples, got {got}")]
    TooFewSamples { got: usize },
    #[error("contrast undefined: sample mean is not positive")]
    NonPositiveMean,
    #[error("contrast must be positive and finite, got {value}")]
    InvalidContrast { value: f64 },
    #[error("Poisson rate must be finite and nonnegative, got {rate}")]
    InvalidRate { rate: f64 },
    #[error(transparent)]
    Fiber(#[from] FiberError),
    #[error(transparent)]
    Mode(#[from] ModeError),
}

/// The biphoton state of the pair source, as a Schmidt spectrum over the
/// fiber modes.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhotonState {
    /// Schmidt weights λ_a ≥ 0 in nonincreasing order, Σλ = 1; padded with
    /// zeros to the full mode count.
    lambdas: DVector<f64>,
}

impl TwoPhotonState {
    /// Geometric (thermal-like) Schmidt spectrum `λ_a ∝ q^a` with the ratio
    /// `q` solved by bisection so the Schmidt number `1/Σλ²` meets
    /// `k_target` within 1e−6. This is the physically typical spectrum of a
    /// Gaussian pair source.
    pub fn geometric(n_modes: usize, k_target: f64) -> Result<Self, QuantumError> {
        if !(1.0..=n_modes as f64).contains(&k_target) || !k_target.is_finite() {
            return Err(QuantumError::InfeasibleSpectrum {
                target: k_target,
                n_modes,
            });
        }
        let schmidt_of = |q: f64| -> f64 {
            if q == 0.0 {
                return 1.0;
            }
            if q == 1.0 {
                return n_modes as f64;
            }
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            let mut w = 1.0;
            for _ in 0..n_modes {
                sum += w;
                sum_sq += w * w;
                w *= q;
            }
            sum * sum / sum_sq
        };
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if schmidt_of(mid) < k_target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let q = 0.5 * (lo + hi);
        let mut lambdas = DVector::zeros(n_modes);
        let mut w = 1.0;
        for a in 0..n_modes {
            lambdas[a] = w;
            w *= q;
        }
        let total: f64 = lambdas.iter().sum();
        lambdas /= total;
        let state = Self { lambdas };
        debug_assert!((state.schmidt_number() - k_target).abs() < 1e-6);
        Ok(state)
    }

    /// Maximally entangled spectrum: `λ_a = 1/K` for the first `k` modes.
    pub fn equal_weight(n_modes: usize, k: usize) -> Result<Self, QuantumError> {
        if k < 1 || k > n_modes {
            return Err(QuantumError::InfeasibleSpectrum {
                target: k as f64,
                n_modes,
            });
        }
        let mut lambdas = DVector::zeros(n_modes);
        for a in 0..k {
            lambdas[a] = 1.0 / k as f64;
        }
        Ok(Self { lambdas })
    }

    /// Schmidt weights, nonincreasing, summing to 1.
    pub fn schmidt_coefficients(&self) -> &DVector<f64> {
        &self.lambdas
    }

    pub fn n_modes(&self) -> usize {
        self.lambdas.len()
    }

    /// Effective entangled mode count `K = 1/Σλ²`.
    pub fn schmidt_number(&self) -> f64 {
        1.0 / self.lambdas.iter().map(|l| l * l).sum::<f64>()
    }

    fn check_len(&self, v: &DVector<Complex64>) -> Result<(), QuantumError> {
        if v.len() != self.lambdas.len() {
            return Err(QuantumError::DimensionMismatch {
                got: v.len(),
                expected: self.lambdas.len(),
            });
        }
        Ok(())
    }
}

/// The signal photon conditioned on an idler herald click.
#[derive(Debug, Clone)]
pub struct HeraldedState {
    /// Unit-norm mode coefficients of the collapsed signal photon.
    coeffs: DVector<Complex64>,
    /// Probability that the idler heralds, in (0, 1].
    probability: f64,
}

/// Project the idler onto `herald_mode` (unit-norm mode coefficients at the
/// source) and collapse the signal: `c_a ∝ √λ_a ⟨h|φ_a⟩`.
pub fn herald(
    state: &TwoPhotonState,
    herald_mode: &DVector<Complex64>,
) -> Result<HeraldedState, QuantumError> {
    state.check_len(herald_mode)?;
    let norm = herald_mode.norm();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(QuantumError::HeraldNotNormalized { norm });
    }
    let mut coeffs = DVector::from_fn(state.n_modes(), |a, _| {
        herald_mode[a].conj() * state.lambdas[a].sqrt()
    });
    let amp_norm = coeffs.norm();
    if amp_norm <= 0.0 {
        return Err(QuantumError::ZeroHeraldOverlap);
    }
    coeffs /= Complex64::new(amp_norm, 0.0);
    Ok(HeraldedState {
        coeffs,
        probability: amp_norm * amp_norm,
    })
}

impl HeraldedState {
    pub fn coefficients(&self) -> &DVector<Complex64> {
        &self.coeffs
    }

    pub fn herald_probability(&self) -> f64 {
        self.probability
    }

    /// Collected amplitude `⟨g|Tψ⟩` given the detector projection `u = Tᵀd`.
    pub fn amplitude(&self, projected: &DVector<Complex64>) -> Result<Complex64, QuantumError> {
        if projected.len() != self.coeffs.len() {
            return Err(QuantumError::DimensionMismatch {
                got: projected.len(),
                expected: self.coeffs.len(),
            });
        }
        Ok(projected
            .iter()
            .zip(self.coeffs.iter())
            .map(|(u, c)| u * c)
            .sum())
    }

    /// Conditional collected intensity `|⟨g|Tψ⟩|²` (given a herald click).
    pub fn conditional_rate(&self, projected: &DVector<Complex64>) -> Result<f64, QuantumError> {
        Ok(self.amplitude(projected)?.norm_sqr())
    }

    /// Herald–signal coincidence rate: herald probability times the
    /// conditional collected intensity.
    pub fn coincidence_rate(&self, projected: &DVector<Complex64>) -> Result<f64, QuantumError> {
        Ok(self.probability * self.conditional_rate(projected)?)
    }
}

/// Detector projection `u = Tᵀ d` of a collection vector through an
/// assembled transmission matrix.
pub fn detector_projection(
    t: &TransmissionMatrix,
    collection: &DVector<Complex64>,
) -> Result<DVector<Complex64>, QuantumError> {
    if collection.len() != t.matrix.nrows() {
        return Err(QuantumError::DimensionMismatch {
            got: collection.len(),
            expected: t.matrix.nrows(),
        });
    }
    Ok(t.matrix.tr_mul(collection))
}

/// Two-photon detection amplitude `Σ_a √λ_a u₁_a u₂_a` for both photons
/// through the same fiber.
pub fn two_photon_amplitude(
    state: &TwoPhotonState,
    u1: &DVector<Complex64>,
    u2: &DVector<Complex64>,
) -> Result<Complex64, QuantumError> {
    state.check_len(u1)?;
    state.check_len(u2)?;
    let mut amp = Complex64::new(0.0, 0.0);
    for a in 0..state.n_modes() {
        let l = state.lambdas[a];
        if l > 0.0 {
            amp += l.sqrt() * u1[a] * u2[a];
        }
    }
    Ok(amp)
}

/// Coincidence rate between two detectors in the two-photon configuration.
pub fn coincidence_rate(
    state: &TwoPhotonState,
    u1: &DVector<Complex64>,
    u2: &DVector<Complex64>,
) -> Result<f64, QuantumError> {
    Ok(two_photon_amplitude(state, u1, u2)?.norm_sqr())
}

/// Singles rate at one detector: incoherent sum `Σ_a λ_a |u_a|²`.
pub fn singles_rate(state: &TwoPhotonState, u: &DVector<Complex64>) -> Result<f64, QuantumError> {
    state.check_len(u)?;
    Ok(state
        .lambdas
        .iter()
        .zip(u.iter())
        .map(|(l, z)| l * z.norm_sqr())
        .sum())
}

/// A rectangular scan of detector positions across the output plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSpec {
    /// Side of the scanned square, centered on the axis (µm).
    pub side_um: f64,
    /// Scan positions per side.
    pub samples: usize,
    /// Collection radius of the scanning detector (µm).
    pub detector_radius_um: f64,
}

impl ScanSpec {
    /// Center coordinate of scan column/row `i` (µm).
    pub fn coord_um(&self, i: usize) -> f64 {
        let pitch = self.side_um / self.samples as f64;
        -0.5 * self.side_um + (i as f64 + 0.5) * pitch
    }

    /// The scanning detector at scan cell `(ix, iy)`.
    pub fn detector_at(&self, ix: usize, iy: usize) -> DetectorSpec {
        DetectorSpec::new(
            self.coord_um(ix),
            self.coord_um(iy),
            self.detector_radius_um,
        )
    }

    pub fn len(&self) -> usize {
        self.samples * self.samples
    }

    pub fn is_empty(&self) -> bool {
        self.samples == 0
    }

    /// Row-major flat index of scan cell `(ix, iy)`.
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.samples + ix
    }
}

/// A map of nonnegative rates over a detector scan.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMap {
    pub scan: ScanSpec,
    /// Row-major rates, one per scan cell.
    pub values: Vec<f64>,
    /// The non-scanning detector for coincidence maps, if any.
    pub fixed: Option<DetectorSpec>,
}

impl RateMap {
    pub fn value_at(&self, ix: usize, iy: usize) -> f64 {
        self.values[self.scan.index(ix, iy)]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Sum of all rates over the scan (total counts proxy).
    pub fn total(&self) -> f64 {
        pairwise_sum(&self.values)
    }

    /// Flat index of the scan cell whose center is nearest `(x, y)` µm.
    pub fn nearest_index(&self, x_um: f64, y_um: f64) -> usize {
        let pitch = self.scan.side_um / self.scan.samples as f64;
        let clamp = |c: f64| {
            (((c + 0.5 * self.scan.side_um) / pitch).floor() as i64)
                .clamp(0, self.scan.samples as i64 - 1) as usize
        };
        self.scan.index(clamp(x_um), clamp(y_um))
    }
}

fn scan_map<F>(scan: &ScanSpec, per_cell: F) -> Result<Vec<f64>, QuantumError>
where
    F: Fn(usize, usize) -> Result<f64, QuantumError> + Sync,
{
    (0..scan.len())
        .into_par_iter()
        .map(|flat| per_cell(flat % scan.samples, flat / scan.samples))
        .collect()
}

/// Unconditional singles map of the pair beam over a detector scan.
pub fn singles_map(
    state: &TwoPhotonState,
    t: &TransmissionMatrix,
    basis: &ModeBasis,
    scan: &ScanSpec,
) -> Result<RateMap, QuantumError> {
    let values = scan_map(scan, |ix, iy| {
        let d = basis.collection_vector(&scan.detector_at(ix, iy))?;
        singles_rate(state, &detector_projection(t, &d)?)
    })?;
    Ok(RateMap {
        scan: *scan,
        values,
        fixed: None,
    })
}

/// Coincidence map of the scanning detector against a fixed detector, both
/// photons through the same fiber.
pub fn coincidence_map(
    state: &TwoPhotonState,
    t: &TransmissionMatrix,
    basis: &ModeBasis,
    scan: &ScanSpec,
    fixed: &DetectorSpec,
) -> Result<RateMap, QuantumError> {
    let u_fixed = detector_projection(t, &basis.collection_vector(fixed)?)?;
    let values = scan_map(scan, |ix, iy| {
        let d = basis.collection_vector(&scan.detector_at(ix, iy))?;
        coincidence_rate(state, &detector_projection(t, &d)?, &u_fixed)
    })?;
    Ok(RateMap {
        scan: *scan,
        values,
        fixed: Some(*fixed),
    })
}

/// Herald–signal coincidence map of a heralded photon over a detector scan.
pub fn heralded_coincidence_map(
    h: &HeraldedState,
    t: &TransmissionMatrix,
    basis: &ModeBasis,
    scan: &ScanSpec,
) -> Result<RateMap, QuantumError> {
    let values = scan_map(scan, |ix, iy| {
        let d = basis.collection_vector(&scan.detector_at(ix, iy))?;
        h.coincidence_rate(&detector_projection(t, &d)?)
    })?;
    Ok(RateMap {
        scan: *scan,
        values,
        fixed: None,
    })
}

/// Speckle contrast: sample standard deviation over sample mean.
pub fn contrast(samples: &[f64]) -> Result<f64, QuantumError> {
    if samples.len() < 2 {
        return Err(QuantumError::TooFewSamples { got: samples.len() });
    }
    let n = samples.len() as f64;
    let mean = pairwise_sum(samples) / n;
    if mean <= 0.0 {
        return Err(QuantumError::NonPositiveMean);
    }
    let sq: Vec<f64> = samples.iter().map(|&x| (x - mean) * (x - mean)).collect();
    let std = (pairwise_sum(&sq) / (n - 1.0)).sqrt();
    Ok(std / mean)
}

/// Mode-count estimate from measured contrasts: `K = (1/C_s²)/(1/C_c²)`,
/// the singles mode count discounted by the residual coincidence modes.
pub fn schmidt_estimate(
    singles_contrast: f64,
    coincidence_contrast: f64,
) -> Result<f64, QuantumError> {
    for value in [singles_contrast, coincidence_contrast] {
        if !(value.is_finite() && value > 0.0) {
            return Err(QuantumError::InvalidContrast { value });
        }
    }
    let singles_modes = 1.0 / (singles_contrast * singles_contrast);
    let coincidence_modes = 1.0 / (coincidence_contrast * coincidence_contrast);
    Ok(singles_modes / coincidence_modes)
}

/// Predicted singles contrast for `k` equal-weight modes observed through
/// an `n`-mode random unitary at a fixed output projection.
///
/// The collected rate is a Beta-distributed share of the unit sphere, giving
/// contrast `√((n−k)/(k(n+1)))`; this approaches the ideal thin-spectrum
/// law `1/√k` only when `k ≪ n`.
pub fn singles_contrast_law(n_modes: usize, k: usize) -> f64 {
    let (n, k) = (n_modes as f64, k as f64);
    ((n - k) / (k * (n + 1.0))).sqrt()
}

/// Deterministic Poisson detection counts for a rate integrated over
/// `integration`: mean counts = `rate · integration`.
pub fn poisson_counts<R: Rng>(
    rate: f64,
    integration: f64,
    rng: &mut R,
) -> Result<u64, QuantumError> {
    if !rate.is_finite() || rate < 0.0 || !integration.is_finite() || integration < 0.0 {
        return Err(QuantumError::InvalidRate { rate });
    }
    let mean = rate * integration;
    if mean == 0.0 {
        return Ok(0);
    }
    let poisson = Poisson::new(mean).map_err(|_| QuantumError::InvalidRate { rate })?;
    Ok(poisson.sample(rng) as u64)
}

/// Result of the random-configuration contrast protocol.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SchmidtProtocolReport {
    pub singles_contrast: f64,
    pub coincidence_contrast: f64,
    pub estimate: f64,
    pub configurations: usize,
}

/// Estimate the Schmidt number by sampling singles and herald–signal
/// coincidence rates at a fixed signal detector over many random actuator
/// configurations, then taking the contrast ratio.
///
/// The heralded configuration is used deliberately: the herald click is
/// displacement-independent, so the coincidence contrast isolates the pure
/// collapsed photon and the finite-mode-count corrections of the two
/// contrasts cancel in the ratio.
pub fn schmidt_protocol(
    model: &FiberModel,
    state: &TwoPhotonState,
    herald_mode: &DVector<Complex64>,
    signal_collection: &DVector<Complex64>,
    configurations: usize,
    seed: u64,
) -> Result<SchmidtProtocolReport, QuantumError> {
    if configurations < 2 {
        return Err(QuantumError::TooFewSamples {
            got: configurations,
        });
    }
    let heralded = herald(state, herald_mode)?;
    let samples: Vec<(f64, f64)> = (0..configurations as u64)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64), QuantumError> {
            let mut rng = crate::seeds::stream(seed, "schmidt-config", i);
            let v = Displacements::random(model.actuator_count(), &mut rng);
            let u = model.propagate_row(signal_collection, &v)?;
            Ok((singles_rate(state, &u)?, heralded.coincidence_rate(&u)?))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let singles: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let coincidences: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let singles_contrast = contrast(&singles)?;
    let coincidence_contrast = contrast(&coincidences)?;
    Ok(SchmidtProtocolReport {
        singles_contrast,
        coincidence_contrast,
        estimate: schmidt_estimate(singles_contrast, coincidence_contrast)?,
        configurations,
    })
}
