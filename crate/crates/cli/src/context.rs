//! Shared run context: the rendered mode basis, the fiber model, and the
//! pair source, assembled once from a validated configuration.

use fiber_piano::fiber::{Displacements, FiberModel, TransmissionMatrix};
use fiber_piano::modes::{DetectorSpec, FiberSpec, ModeBasis};
use fiber_piano::optimize::{Configuration, ExperimentCost, FeedbackSignal};
use fiber_piano::quantum::{
    self, coincidence_map, herald, heralded_coincidence_map, singles_map, HeraldedState, RateMap,
    TwoPhotonState,
};
use nalgebra::DVector;
use num_complex::Complex64;

use crate::config::{ConfigurationKind, ExperimentConfig, FeedbackKind, SpectrumKind};
use crate::error::CliError;

/// Everything a command needs to measure the modeled experiment.
pub struct Simulation {
    pub config: ExperimentConfig,
    /// Effective master seed (config seed unless overridden).
    pub seed: u64,
    pub basis: ModeBasis,
    pub model: FiberModel,
    pub state: TwoPhotonState,
}

impl Simulation {
    /// Build at the main truncation of the config's fiber section.
    pub fn build(config: ExperimentConfig, seed_override: Option<u64>) -> Result<Self, CliError> {
        let truncation = config.fiber.mode_truncation;
        Self::build_at(config, truncation, seed_override)
    }

    /// Build at the (larger) truncation of the Schmidt-estimation section.
    pub fn build_estimation(
        config: ExperimentConfig,
        seed_override: Option<u64>,
    ) -> Result<Self, CliError> {
        let truncation = config.schmidt.mode_truncation;
        Self::build_at(config, truncation, seed_override)
    }

    fn build_at(
        config: ExperimentConfig,
        truncation: usize,
        seed_override: Option<u64>,
    ) -> Result<Self, CliError> {
        let seed = seed_override.unwrap_or(config.seed);
        let fiber = FiberSpec {
            mode_truncation: truncation,
            ..config.fiber.clone()
        };
        let basis = ModeBasis::new(fiber, config.grid)?;
        let model = FiberModel::new(
            truncation,
            config.actuators.count,
            config.actuators.coupling_sigma,
            config.actuators.loss,
            seed,
        );
        let state = match config.state.spectrum {
            SpectrumKind::Geometric => {
                TwoPhotonState::geometric(truncation, config.state.schmidt_target)?
            }
            SpectrumKind::EqualWeight => {
                TwoPhotonState::equal_weight(truncation, config.state.schmidt_target as usize)?
            }
        };
        Ok(Self {
            config,
            seed,
            basis,
            model,
            state,
        })
    }

    /// Collection vector of one detector on this basis.
    pub fn collection(&self, det: &DetectorSpec) -> Result<DVector<Complex64>, CliError> {
        Ok(self.basis.collection_vector(det)?)
    }

    /// Unit-norm herald mode: the idler is projected onto a centered
    /// Gaussian, so the signal collapses toward the matching mode weights.
    pub fn herald_mode(&self) -> Result<DVector<Complex64>, CliError> {
        let det = DetectorSpec::new(0.0, 0.0, self.config.detectors.herald_radius_um);
        let d = self.basis.collection_vector(&det)?;
        let norm = d.norm();
        if norm <= 0.0 {
            return Err(quantum::QuantumError::ZeroHeraldOverlap.into());
        }
        Ok(d.map(|z| z.conj()).unscale(norm))
    }

    /// Collection vector of the single-mode output fiber: the fundamental
    /// mode itself.
    pub fn smf_collection(&self) -> DVector<Complex64> {
        DVector::from_fn(self.model.n_modes(), |i, _| {
            Complex64::new(if i == 0 { 1.0 } else { 0.0 }, 0.0)
        })
    }

    /// The configured arm arrangement.
    pub fn configuration(&self) -> Result<Configuration, CliError> {
        Ok(match self.config.state.configuration {
            ConfigurationKind::Heralded => Configuration::Heralded {
                herald_mode: self.herald_mode()?,
            },
            ConfigurationKind::TwoPhoton => Configuration::TwoPhoton {
                fixed_collection: self.collection(&self.config.detectors.fixed)?,
            },
        })
    }

    /// The collapsed signal photon, when heralding is configured.
    pub fn heralded_state(&self) -> Result<Option<HeraldedState>, CliError> {
        match self.config.state.configuration {
            ConfigurationKind::Heralded => Ok(Some(herald(&self.state, &self.herald_mode()?)?)),
            ConfigurationKind::TwoPhoton => Ok(None),
        }
    }

    /// The configured feedback signal over the configured detectors.
    pub fn feedback(&self) -> Result<FeedbackSignal, CliError> {
        let d = &self.config.detectors;
        Ok(match self.config.optimization.feedback {
            FeedbackKind::SingleSpot => FeedbackSignal::SingleSpot {
                target: self.collection(&d.target)?,
            },
            FeedbackKind::TwoSpot => FeedbackSignal::TwoSpot {
                targets: vec![
                    self.collection(&d.target)?,
                    self.collection(&d.second_target)?,
                ],
                alpha: self.config.optimization.imbalance_penalty,
            },
            FeedbackKind::SmfCoupling => FeedbackSignal::SmfCoupling {
                collection: self.smf_collection(),
            },
            FeedbackKind::SinglesFeedback => FeedbackSignal::SinglesFeedback {
                target: self.collection(&d.target)?,
            },
        })
    }

    /// The full measured cost the optimizer maximizes.
    pub fn cost(&self) -> Result<ExperimentCost<'_>, CliError> {
        let noise_seed = self.config.noise.shot_noise.then_some(self.seed);
        Ok(ExperimentCost::new(
            &self.model,
            &self.state,
            self.configuration()?,
            self.feedback()?,
            self.config.noise.counts_per_rate,
            noise_seed,
        )?)
    }

    /// Pair-rate probe fixed on one target detector.
    pub fn pair_probe(&self, det: &DetectorSpec) -> Result<PairProbe<'_>, CliError> {
        let fixed = match self.config.state.configuration {
            ConfigurationKind::Heralded => None,
            ConfigurationKind::TwoPhoton => Some(self.collection(&self.config.detectors.fixed)?),
        };
        Ok(PairProbe {
            model: &self.model,
            state: &self.state,
            target: self.collection(det)?,
            heralded: self.heralded_state()?,
            fixed,
        })
    }

    /// Heralded-coupling probe into the single-mode collection fiber.
    pub fn coupling_probe(&self) -> Result<CouplingProbe<'_>, CliError> {
        match self.heralded_state()? {
            Some(heralded) => Ok(CouplingProbe {
                model: &self.model,
                heralded,
                collection: self.smf_collection(),
            }),
            None => Err(fiber_piano::optimize::OptimizeError::SmfNeedsHerald.into()),
        }
    }

    /// Singles and coincidence maps over the configured scan for one
    /// transmission matrix.
    pub fn maps(&self, t: &TransmissionMatrix) -> Result<(RateMap, RateMap), CliError> {
        let scan = &self.config.scan;
        let singles = singles_map(&self.state, t, &self.basis, scan)?;
        let coincidences = match self.heralded_state()? {
            Some(heralded) => heralded_coincidence_map(&heralded, t, &self.basis, scan)?,
            None => coincidence_map(
                &self.state,
                t,
                &self.basis,
                scan,
                &self.config.detectors.fixed,
            )?,
        };
        Ok((singles, coincidences))
    }
}

/// Measures the pair rate at a fixed target as the actuators move.
pub struct PairProbe<'a> {
    model: &'a FiberModel,
    state: &'a TwoPhotonState,
    target: DVector<Complex64>,
    heralded: Option<HeraldedState>,
    fixed: Option<DVector<Complex64>>,
}

impl PairProbe<'_> {
    pub fn rate(&self, v: &Displacements) -> Result<f64, CliError> {
        let u = self.model.propagate_row(&self.target, v)?;
        match (&self.heralded, &self.fixed) {
            (Some(h), _) => Ok(h.coincidence_rate(&u)?),
            (None, Some(fixed)) => {
                let u_fixed = self.model.propagate_row(fixed, v)?;
                Ok(quantum::coincidence_rate(self.state, &u, &u_fixed)?)
            }
            (None, None) => unreachable!("probe built with neither herald nor fixed arm"),
        }
    }
}

/// Measures the heralded single-mode coupling as the actuators move.
pub struct CouplingProbe<'a> {
    model: &'a FiberModel,
    heralded: HeraldedState,
    collection: DVector<Complex64>,
}

impl CouplingProbe<'_> {
    pub fn rate(&self, v: &Displacements) -> Result<f64, CliError> {
        let u = self.model.propagate_row(&self.collection, v)?;
        Ok(self.heralded.conditional_rate(&u)?)
    }
}
