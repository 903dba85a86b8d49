//! Experiment configuration: a single strict JSON document describing the
//! fiber, the pair source, the detectors, and the optimization protocol.
//!
//! Every section rejects unknown fields, and parse failures report the JSON
//! path of the offending field so a typo is caught before any computation.

use std::fs;
use std::path::Path;

use fiber_piano::fiber::LossModel;
use fiber_piano::modes::{DetectorSpec, FiberSpec, GridSpec};
use fiber_piano::optimize::PsoConfig;
use fiber_piano::quantum::ScanSpec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Configuration loading and validation failures.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("config field `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("config field `{field}` invalid: {reason}")]
    Invalid { field: &'static str, reason: String },
}

/// The pair source: Schmidt spectrum shape and arm arrangement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumKind {
    /// Geometric Schmidt spectrum tuned to the target Schmidt number.
    Geometric,
    /// Equal weight over the first `schmidt_target` modes (integer only).
    EqualWeight,
}

/// Which photons travel the fiber and how coincidences are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigurationKind {
    /// Idler projected at the source; only the signal enters the fiber.
    Heralded,
    /// Both photons enter the fiber; coincidences against a fixed detector.
    TwoPhoton,
}

/// Which measured signal drives the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    /// Pair rate at the target detector.
    SingleSpot,
    /// Balanced pair rates at the target and second target.
    TwoSpot,
    /// Heralded coupling into a single-mode collection fiber.
    SmfCoupling,
    /// Singles rate at the target (negative control).
    SinglesFeedback,
}

/// The bank of mechanical actuators pressing on the fiber.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorConfig {
    /// Number of independent actuators along the fiber.
    pub count: usize,
    /// Mode-coupling strength of a full stroke (operator norm).
    pub coupling_sigma: f64,
    /// Displacement-dependent loss model.
    pub loss: LossModel,
}

/// The two-photon source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateConfig {
    /// Target Schmidt number of the source.
    pub schmidt_target: f64,
    /// Shape of the Schmidt spectrum.
    pub spectrum: SpectrumKind,
    /// Arm arrangement for coincidence measurements.
    pub configuration: ConfigurationKind,
}

/// Detector geometry, by role.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    /// Primary optimization target in the output plane.
    pub target: DetectorSpec,
    /// Partner target for two-spot feedback.
    pub second_target: DetectorSpec,
    /// Fixed coincidence detector for the two-photon configuration.
    pub fixed: DetectorSpec,
    /// Radius of the centered Gaussian the idler is projected onto.
    pub herald_radius_um: f64,
}

/// Particle-swarm hyperparameters, without the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsoTuning {
    pub swarm_size: usize,
    pub max_iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Velocity limit as a fraction of the stroke range.
    pub velocity_clamp: f64,
    /// Cost samples averaged per evaluation (for noisy feedback).
    pub evaluations_per_cost: usize,
}

impl PsoTuning {
    /// Attach the run seed to produce the optimizer configuration.
    pub fn to_core(self, seed: u64) -> PsoConfig {
        PsoConfig {
            swarm_size: self.swarm_size,
            max_iterations: self.max_iterations,
            inertia: self.inertia,
            cognitive: self.cognitive,
            social: self.social,
            velocity_clamp: self.velocity_clamp,
            evaluations_per_cost: self.evaluations_per_cost,
            seed,
        }
    }
}

/// The optimization protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizationConfig {
    /// Which measured signal the swarm maximizes.
    pub feedback: FeedbackKind,
    /// Weight of the |c₁ − c₂| penalty in the two-spot objective.
    pub imbalance_penalty: f64,
    /// Disorder realizations averaged for the baseline rate.
    pub baseline_samples: usize,
    pub pso: PsoTuning,
}

/// Detection statistics of the measurement layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Poisson-sample every measured count when true; expectation values
    /// otherwise.
    pub shot_noise: bool,
    /// Expected counts per unit rate over one integration window.
    pub counts_per_rate: f64,
}

/// The random-configuration Schmidt-number estimation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchmidtConfig {
    /// Mode truncation for the estimation run (well above the source's
    /// Schmidt number so the contrast ratio resolves it).
    pub mode_truncation: usize,
    /// Random actuator configurations sampled.
    pub configurations: usize,
}

/// The complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub fiber: FiberSpec,
    pub grid: GridSpec,
    pub actuators: ActuatorConfig,
    pub state: StateConfig,
    pub detectors: DetectorConfig,
    pub scan: ScanSpec,
    pub optimization: OptimizationConfig,
    pub noise: NoiseConfig,
    pub schmidt: SchmidtConfig,
    /// Master seed; every stream in a run is derived from it by role.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            fiber: FiberSpec {
                core_radius_um: 25.0,
                numerical_aperture: 0.2,
                wavelength_nm: 807.6,
                mode_truncation: 30,
            },
            grid: GridSpec {
                side_um: 120.0,
                samples: 256,
            },
            actuators: ActuatorConfig {
                count: 37,
                coupling_sigma: 2.5,
                loss: LossModel::Scalar { beta: 0.03 },
            },
            state: StateConfig {
                schmidt_target: 15.0,
                spectrum: SpectrumKind::Geometric,
                configuration: ConfigurationKind::Heralded,
            },
            detectors: DetectorConfig {
                target: DetectorSpec::new(4.0, 3.0, 4.0),
                second_target: DetectorSpec::new(-4.0, -3.0, 4.0),
                fixed: DetectorSpec::new(-5.0, -4.0, 4.0),
                herald_radius_um: 6.0,
            },
            scan: ScanSpec {
                side_um: 80.0,
                samples: 64,
                detector_radius_um: 4.0,
            },
            optimization: OptimizationConfig {
                feedback: FeedbackKind::SingleSpot,
                imbalance_penalty: 0.04,
                baseline_samples: 100,
                pso: PsoTuning {
                    swarm_size: 30,
                    max_iterations: 500,
                    inertia: 0.7,
                    cognitive: 1.5,
                    social: 1.5,
                    velocity_clamp: 0.3,
                    evaluations_per_cost: 1,
                },
            },
            noise: NoiseConfig {
                shot_noise: false,
                counts_per_rate: 5e5,
            },
            schmidt: SchmidtConfig {
                mode_truncation: 180,
                configurations: 1900,
            },
            seed: 7,
        }
    }
}

impl ExperimentConfig {
    /// Check every cross-field constraint the schema cannot express.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field: &'static str, reason: String| ConfigError::Invalid { field, reason };
        self.fiber
            .validate()
            .map_err(|e| invalid("fiber", e.to_string()))?;
        if self.actuators.count == 0 {
            return Err(invalid("actuators.count", "must be at least 1".into()));
        }
        if self.actuators.coupling_sigma <= 0.0 || !self.actuators.coupling_sigma.is_finite() {
            return Err(invalid(
                "actuators.coupling_sigma",
                format!("must be positive, got {}", self.actuators.coupling_sigma),
            ));
        }
        let k = self.state.schmidt_target;
        if k < 1.0 || k.is_nan() {
            return Err(invalid(
                "state.schmidt_target",
                format!("must be at least 1, got {k}"),
            ));
        }
        if self.state.spectrum == SpectrumKind::EqualWeight && k.fract() != 0.0 {
            return Err(invalid(
                "state.schmidt_target",
                format!("equal-weight spectrum needs an integer mode count, got {k}"),
            ));
        }
        for (field, truncation) in [
            ("fiber.mode_truncation", self.fiber.mode_truncation),
            ("schmidt.mode_truncation", self.schmidt.mode_truncation),
        ] {
            if k > truncation as f64 {
                return Err(invalid(
                    field,
                    format!("must be at least the Schmidt target {k}, got {truncation}"),
                ));
            }
        }
        for (field, radius) in [
            ("detectors.target", self.detectors.target.radius_um),
            (
                "detectors.second_target",
                self.detectors.second_target.radius_um,
            ),
            ("detectors.fixed", self.detectors.fixed.radius_um),
            (
                "detectors.herald_radius_um",
                self.detectors.herald_radius_um,
            ),
            ("scan.detector_radius_um", self.scan.detector_radius_um),
        ] {
            if radius <= 0.0 || !radius.is_finite() {
                return Err(invalid(
                    field,
                    format!("collection radius must be positive, got {radius}"),
                ));
            }
        }
        if self.scan.samples < 2 {
            return Err(invalid(
                "scan.samples",
                format!(
                    "need at least 2 scan positions per side, got {}",
                    self.scan.samples
                ),
            ));
        }
        if self.scan.side_um <= 0.0
            || self.scan.side_um.is_nan()
            || self.scan.side_um > self.grid.side_um
        {
            return Err(invalid(
                "scan.side_um",
                format!(
                    "must be positive and fit the {} µm grid, got {}",
                    self.grid.side_um, self.scan.side_um
                ),
            ));
        }
        if self.optimization.imbalance_penalty < 0.0 {
            return Err(invalid(
                "optimization.imbalance_penalty",
                format!(
                    "must be nonnegative, got {}",
                    self.optimization.imbalance_penalty
                ),
            ));
        }
        if self.optimization.baseline_samples < 2 {
            return Err(invalid(
                "optimization.baseline_samples",
                format!(
                    "need at least 2 samples, got {}",
                    self.optimization.baseline_samples
                ),
            ));
        }
        self.optimization
            .pso
            .to_core(0)
            .validate()
            .map_err(|e| invalid("optimization.pso", e.to_string()))?;
        if self.optimization.feedback == FeedbackKind::SmfCoupling
            && self.state.configuration != ConfigurationKind::Heralded
        {
            return Err(invalid(
                "optimization.feedback",
                "smf_coupling measures the heralded photon; set state.configuration \
                 to \"heralded\""
                    .into(),
            ));
        }
        if self.noise.counts_per_rate <= 0.0 || !self.noise.counts_per_rate.is_finite() {
            return Err(invalid(
                "noise.counts_per_rate",
                format!("must be positive, got {}", self.noise.counts_per_rate),
            ));
        }
        if self.schmidt.configurations < 2 {
            return Err(invalid(
                "schmidt.configurations",
                format!(
                    "need at least 2 configurations, got {}",
                    self.schmidt.configurations
                ),
            ));
        }
        Ok(())
    }
}

/// Parse and validate a configuration document, reporting the JSON path of
/// any schema violation.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let config: ExperimentConfig =
        serde_path_to_error::deserialize(&mut de).map_err(|e| ConfigError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    config.validate()?;
    Ok(config)
}

/// Load a configuration file, returning it with the SHA-256 hex digest of
/// the file bytes for run provenance.
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, String), ConfigError> {
    let read_err = |source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    };
    let bytes = fs::read(path).map_err(read_err)?;
    let digest = sha256_hex(&bytes);
    let text = String::from_utf8(bytes)
        .map_err(|e| read_err(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
    Ok((parse_config(&text)?, digest))
}

/// Hex SHA-256 digest of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    use std::fmt::Write;
    let digest = Sha256::digest(bytes);
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Field-by-field notes written next to the default configuration.
pub const CONFIG_NOTES: &str = r#"# Configuration notes

Companion to `config.json`. Every field is listed; unknown fields are
rejected with the JSON path of the offender.

## fiber
- `core_radius_um`, `numerical_aperture`, `wavelength_nm`: step-index fiber
  geometry; they fix the V-number, the mode capacity per polarization, and
  the Gaussian waist of the fundamental mode.
- `mode_truncation`: how many fiber modes the simulation keeps. Must not
  exceed the fiber's capacity.

## grid
- `side_um`, `samples`: the square field grid modes are rendered on. The
  grid must resolve the fundamental waist (at least 8 samples per waist)
  and contain the mode family (side at least 3 waists).

## actuators
- `count`: independent pressure points along the fiber.
- `coupling_sigma`: operator-norm strength of a full actuator stroke; at
  the default 2.5 a single full stroke fully decorrelates the output
  speckle.
- `loss`: `{"kind": "lossless"}`, `{"kind": "scalar", "beta": β}` (power
  transmission exp(−βv²) per actuator), or `{"kind": "mode_dependent",
  "beta": β}` (random per-mode attenuation of the same average strength).

## state
- `schmidt_target`: Schmidt number of the photon-pair source.
- `spectrum`: `geometric` (tuned so the participation ratio hits the
  target) or `equal_weight` (integer target only).
- `configuration`: `heralded` (idler projected at the source, signal alone
  travels the fiber) or `two_photon` (both photons travel the fiber;
  coincidences against the fixed detector).

## detectors
- `target`: the spot the optimizer concentrates rates on; also the fixed
  signal detector of the `schmidt` command.
- `second_target`: partner spot for `two_spot` feedback.
- `fixed`: the non-scanning detector of the two-photon configuration.
- `herald_radius_um`: radius of the centered Gaussian mode the idler is
  projected onto when heralding.
- All detectors collect into a Gaussian spot: position `x_um`/`y_um`,
  waist `radius_um`.

## scan
- `side_um`, `samples`, `detector_radius_um`: the detector raster used for
  singles and coincidence maps, centered on the fiber axis.

## optimization
- `feedback`: `single_spot` (pair rate at `target`), `two_spot` (balanced
  pair rates at both targets), `smf_coupling` (heralded coupling into the
  fundamental collection mode; requires the heralded configuration), or
  `singles_feedback` (singles rate at `target`; the negative control —
  raising singles does not focus coincidences).
- `imbalance_penalty`: weight α of the |c₁ − c₂| term in the two-spot
  objective √c₁ + √c₂ − α|c₁ − c₂|, on the counts scale.
- `baseline_samples`: random actuator configurations averaged into the
  unoptimized baseline rate that enhancement factors are quoted against.
- `pso`: global-best particle swarm over the actuator box [−1, 1]^count.
  `velocity_clamp` is the per-step speed limit as a fraction of the stroke
  range; `evaluations_per_cost` averages repeated measurements of each
  candidate (useful with shot noise).

## noise
- `shot_noise`: when true, every measured count is Poisson-sampled.
- `counts_per_rate`: expected counts per unit rate in one integration
  window; sets the shot-noise scale and the counts the two-spot objective
  operates on.

## schmidt
- `mode_truncation`: mode count for the Schmidt-estimation run; keep it
  well above `schmidt_target` so the contrast ratio resolves the source.
- `configurations`: random actuator configurations sampled by the
  estimator.

## seed
- Master seed. Every random stream (fiber realization, swarm, disorder
  ensemble, shot noise, scan realizations) is derived from it by role, so
  one seed pins an entire run. `--seed` overrides it without editing the
  file.
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn default_config_roundtrips_through_json() {
        let config = ExperimentConfig::default();
        let text = serde_json::to_string_pretty(&config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn unknown_field_is_rejected_with_its_path() {
        let mut value = serde_json::to_value(ExperimentConfig::default()).unwrap();
        value["optimization"]["pso"]["swarm"] = 12.into();
        let text = serde_json::to_string(&value).unwrap();
        let mut de = serde_json::Deserializer::from_str(&text);
        let err = serde_path_to_error::deserialize::<_, ExperimentConfig>(&mut de).unwrap_err();
        assert_eq!(err.path().to_string(), "optimization.pso.swarm");
    }

    #[test]
    fn smf_feedback_demands_heralded_configuration() {
        let mut config = ExperimentConfig::default();
        config.optimization.feedback = FeedbackKind::SmfCoupling;
        config.state.configuration = ConfigurationKind::TwoPhoton;
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("heralded"));
    }

    #[test]
    fn fractional_equal_weight_target_is_rejected() {
        let mut config = ExperimentConfig::default();
        config.state.spectrum = SpectrumKind::EqualWeight;
        config.state.schmidt_target = 2.5;
        assert!(config.validate().is_err());
    }
}
