//! Particle-swarm feedback over the actuator bank.
//!
//! A global-best particle swarm searches the displacement box `[-1, 1]^n`
//! to maximize a measured count rate. Costs are pure functions of the
//! displacement vector (plus an evaluation id for optional shot noise), so
//! swarm evaluations run in parallel; all random draws for the swarm update
//! itself come from one sequential stream, which makes traces bit-identical
//! regardless of worker count.
//!
//! Four feedback signals are provided, matching the optimization scenarios
//! of the experiment: coincidence rate at one target, the balanced
//! two-target objective `√c₁ + √c₂ − α|c₁ − c₂|`, coupling of the heralded
//! photon into a single-mode collection fiber, and the singles rate at the
//! target (the negative control: it brightens the target without
//! concentrating the pair correlations).

use crate::fiber::{Displacements, FiberError, FiberModel};
use crate::quantum::{
    coincidence_rate, herald, poisson_counts, singles_rate, HeraldedState, QuantumError,
    TwoPhotonState,
};
use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

/// Error raised inside a cost function.
#[derive(Debug, Error)]
#[error(transparent)]
pub struct CostError(Box<dyn std::error::Error + Send + Sync + 'static>);

impl From<QuantumError> for CostError {
    fn from(e: QuantumError) -> Self {
        Self(Box::new(e))
    }
}

impl From<FiberError> for CostError {
    fn from(e: FiberError) -> Self {
        Self(Box::new(e))
    }
}

/// Errors from optimizer configuration and runs.
#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("invalid optimizer setting: {name} = {value}")]
    InvalidConfig { name: &'static str, value: f64 },
    #[error("cost failed at iteration {iteration}, particle {particle}: {source}")]
    CostEvaluation {
        iteration: usize,
        particle: usize,
        #[source]
        source: CostError,
    },
    #[error("two-spot feedback requires exactly 2 targets, got {got}")]
    TargetCount { got: usize },
    #[error("single-mode-fiber feedback requires the heralded configuration")]
    SmfNeedsHerald,
    #[error(transparent)]
    Quantum(#[from] QuantumError),
}

/// Hyperparameters of the particle swarm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub max_iterations: usize,
    /// Inertia weight on the previous velocity.
    pub inertia: f64,
    /// Attraction toward each particle's personal best.
    pub cognitive: f64,
    /// Attraction toward the swarm's global best.
    pub social: f64,
    /// Velocity limit as a fraction of the stroke range.
    pub velocity_clamp: f64,
    /// Cost samples averaged per evaluation (for noisy costs).
    pub evaluations_per_cost: usize,
    pub seed: u64,
}

impl PsoConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let checks: [(&'static str, f64, bool); 6] = [
            ("swarm_size", self.swarm_size as f64, self.swarm_size >= 2),
            (
                "max_iterations",
                self.max_iterations as f64,
                self.max_iterations >= 1,
            ),
            (
                "inertia",
                self.inertia,
                self.inertia > 0.0 && self.inertia < 1.0,
            ),
            ("cognitive", self.cognitive, self.cognitive > 0.0),
            ("social", self.social, self.social > 0.0),
            (
                "velocity_clamp",
                self.velocity_clamp,
                self.velocity_clamp > 0.0 && self.velocity_clamp <= 1.0,
            ),
        ];
        for (name, value, ok) in checks {
            if !ok {
                return Err(OptimizeError::InvalidConfig { name, value });
            }
        }
        if self.evaluations_per_cost < 1 {
            return Err(OptimizeError::InvalidConfig {
                name: "evaluations_per_cost",
                value: self.evaluations_per_cost as f64,
            });
        }
        Ok(())
    }
}

/// A feedback signal the swarm can maximize.
pub trait Cost: Sync {
    /// Evaluate the cost at `v`. `eval_id` identifies the evaluation for
    /// deterministic per-measurement noise streams.
    fn evaluate(&self, v: &Displacements, eval_id: u64) -> Result<f64, CostError>;
}

/// One point of the convergence trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    /// Best cost found so far (nondecreasing).
    pub best_cost: f64,
    /// Mean cost of the swarm at this iteration.
    pub mean_cost: f64,
}

/// Outcome of one swarm optimization.
#[derive(Debug, Clone)]
pub struct OptimizationRun {
    pub best: Displacements,
    pub best_cost: f64,
    pub trace: Vec<TracePoint>,
    pub cost_evaluations: u64,
    pub seed: u64,
    /// Wall-clock duration; informational only, never reproducible.
    pub duration_secs: f64,
}

/// Maximize `cost` over the displacement box with a global-best particle
/// swarm. Deterministic per (cost, config): swarm randomness is drawn
/// sequentially from one stream while evaluations parallelize by index.
pub fn pso_maximize<C: Cost>(
    cost: &C,
    dimensions: usize,
    config: &PsoConfig,
) -> Result<OptimizationRun, OptimizeError> {
    config.validate()?;
    let started = Instant::now();
    let mut rng = crate::seeds::stream(config.seed, "pso", 0);
    let (lo, hi) = (-1.0f64, 1.0f64);
    let v_max = config.velocity_clamp * (hi - lo);
    let swarm = config.swarm_size;
    let reps = config.evaluations_per_cost as u64;

    let mut positions: Vec<Vec<f64>> = (0..swarm)
        .map(|_| (0..dimensions).map(|_| rng.gen_range(lo..=hi)).collect())
        .collect();
    let mut velocities: Vec<Vec<f64>> = (0..swarm)
        .map(|_| {
            (0..dimensions)
                .map(|_| rng.gen_range(-v_max..=v_max))
                .collect()
        })
        .collect();

    let evaluate_swarm =
        |positions: &[Vec<f64>], iteration: usize| -> Result<Vec<f64>, OptimizeError> {
            positions
                .par_iter()
                .enumerate()
                .map(|(particle, x)| {
                    let v = Displacements::new(x.clone())
                        .expect("swarm positions stay inside the stroke box");
                    let base = (iteration as u64 * swarm as u64 + particle as u64) * reps;
                    let mut total = 0.0;
                    for rep in 0..reps {
                        total += cost.evaluate(&v, base + rep).map_err(|source| {
                            OptimizeError::CostEvaluation {
                                iteration,
                                particle,
                                source,
                            }
                        })?;
                    }
                    Ok(total / reps as f64)
                })
                .collect()
        };

    let mut costs = evaluate_swarm(&positions, 0)?;
    let mut personal_best = positions.clone();
    let mut personal_best_cost = costs.clone();
    let mut best_particle = 0;
    for p in 1..swarm {
        if costs[p] > costs[best_particle] {
            best_particle = p;
        }
    }
    let mut global_best = positions[best_particle].clone();
    let mut global_best_cost = costs[best_particle];

    let mean_of = |costs: &[f64]| crate::metrics::pairwise_sum(costs) / costs.len() as f64;
    let mut trace = Vec::with_capacity(config.max_iterations + 1);
    trace.push(TracePoint {
        iteration: 0,
        best_cost: global_best_cost,
        mean_cost: mean_of(&costs),
    });

    for iteration in 1..=config.max_iterations {
        for p in 0..swarm {
            for d in 0..dimensions {
                let r1: f64 = rng.gen_range(0.0..1.0);
                let r2: f64 = rng.gen_range(0.0..1.0);
                let mut vel = config.inertia * velocities[p][d]
                    + config.cognitive * r1 * (personal_best[p][d] - positions[p][d])
                    + config.social * r2 * (global_best[d] - positions[p][d]);
                vel = vel.clamp(-v_max, v_max);
                let mut x = positions[p][d] + vel;
                while x > hi || x < lo {
                    if x > hi {
                        x = 2.0 * hi - x;
                    } else {
                        x = 2.0 * lo - x;
                    }
                    vel = -vel;
                }
                positions[p][d] = x;
                velocities[p][d] = vel;
            }
        }

        costs = evaluate_swarm(&positions, iteration)?;
        for p in 0..swarm {
            if costs[p] > personal_best_cost[p] {
                personal_best_cost[p] = costs[p];
                personal_best[p].clone_from(&positions[p]);
            }
            if costs[p] > global_best_cost {
                global_best_cost = costs[p];
                global_best.clone_from(&positions[p]);
            }
        }
        trace.push(TracePoint {
            iteration,
            best_cost: global_best_cost,
            mean_cost: mean_of(&costs),
        });
    }

    Ok(OptimizationRun {
        best: Displacements::new(global_best).expect("best position stays inside the stroke box"),
        best_cost: global_best_cost,
        cost_evaluations: swarm as u64 * (config.max_iterations as u64 + 1) * reps,
        seed: config.seed,
        trace,
        duration_secs: started.elapsed().as_secs_f64(),
    })
}

/// Which arm arrangement feeds the detectors.
#[derive(Debug, Clone)]
pub enum Configuration {
    /// Idler projected at the source; only the signal enters the fiber.
    Heralded {
        /// Unit-norm herald mode coefficients at the source.
        herald_mode: DVector<Complex64>,
    },
    /// Both photons enter the fiber; coincidences taken against a fixed
    /// output detector.
    TwoPhoton {
        /// Collection vector of the fixed detector.
        fixed_collection: DVector<Complex64>,
    },
}

/// Which measured signal drives the feedback.
#[derive(Debug, Clone)]
pub enum FeedbackSignal {
    /// Pair rate at one target detector.
    SingleSpot { target: DVector<Complex64> },
    /// Balanced two-target objective `√c₁ + √c₂ − α|c₁ − c₂|` on counts.
    TwoSpot {
        targets: Vec<DVector<Complex64>>,
        alpha: f64,
    },
    /// Coupling efficiency of the heralded photon into a single-mode
    /// collection fiber.
    SmfCoupling { collection: DVector<Complex64> },
    /// Singles rate at the target (negative control).
    SinglesFeedback { target: DVector<Complex64> },
}

/// The balanced two-target objective on measured counts.
pub fn two_spot_objective(c1: f64, c2: f64, alpha: f64) -> f64 {
    c1.sqrt() + c2.sqrt() - alpha * (c1 - c2).abs()
}

/// A complete measured feedback signal over the fiber model.
pub struct ExperimentCost<'a> {
    model: &'a FiberModel,
    state: &'a TwoPhotonState,
    configuration: Configuration,
    signal: FeedbackSignal,
    heralded: Option<HeraldedState>,
    /// Expected counts per unit rate over one integration window.
    counts_per_rate: f64,
    /// Shot-noise stream seed; `None` measures expectation values.
    noise_seed: Option<u64>,
}

impl<'a> ExperimentCost<'a> {
    pub fn new(
        model: &'a FiberModel,
        state: &'a TwoPhotonState,
        configuration: Configuration,
        signal: FeedbackSignal,
        counts_per_rate: f64,
        noise_seed: Option<u64>,
    ) -> Result<Self, OptimizeError> {
        if let FeedbackSignal::TwoSpot { targets, .. } = &signal {
            if targets.len() != 2 {
                return Err(OptimizeError::TargetCount { got: targets.len() });
            }
        }
        if matches!(signal, FeedbackSignal::SmfCoupling { .. })
            && !matches!(configuration, Configuration::Heralded { .. })
        {
            return Err(OptimizeError::SmfNeedsHerald);
        }
        let heralded = match &configuration {
            Configuration::Heralded { herald_mode } => Some(herald(state, herald_mode)?),
            Configuration::TwoPhoton { .. } => None,
        };
        Ok(Self {
            model,
            state,
            configuration,
            signal,
            heralded,
            counts_per_rate,
            noise_seed,
        })
    }

    /// The heralded signal-photon state, when in the heralded configuration.
    pub fn heralded_state(&self) -> Option<&HeraldedState> {
        self.heralded.as_ref()
    }

    /// Pair-detection rate at one target given the already-propagated fixed
    /// arm (two-photon) or the source herald (heralded).
    fn pair_rate(
        &self,
        v: &Displacements,
        target: &DVector<Complex64>,
        fixed_projection: &Option<DVector<Complex64>>,
    ) -> Result<f64, CostError> {
        let u = self.model.propagate_row(target, v)?;
        match &self.configuration {
            Configuration::Heralded { .. } => {
                let h = self.heralded.as_ref().expect("heralded state precomputed");
                Ok(h.coincidence_rate(&u)?)
            }
            Configuration::TwoPhoton { .. } => {
                let u_fixed = fixed_projection.as_ref().expect("fixed arm propagated");
                Ok(coincidence_rate(self.state, &u, u_fixed)?)
            }
        }
    }

    /// Convert a rate into measured counts, Poisson-sampled when the shot
    /// noise layer is on. `draw` orders multiple measurements of one
    /// evaluation within its stream.
    fn measure_counts(&self, rate: f64, eval_id: u64, draw: u64) -> Result<f64, CostError> {
        match self.noise_seed {
            None => Ok(rate * self.counts_per_rate),
            Some(seed) => {
                let mut rng = crate::seeds::stream(seed, "shot-noise", eval_id * 8 + draw);
                Ok(poisson_counts(rate, self.counts_per_rate, &mut rng)? as f64)
            }
        }
    }
}

impl Cost for ExperimentCost<'_> {
    fn evaluate(&self, v: &Displacements, eval_id: u64) -> Result<f64, CostError> {
        let fixed_projection = match &self.configuration {
            Configuration::TwoPhoton { fixed_collection } => {
                Some(self.model.propagate_row(fixed_collection, v)?)
            }
            Configuration::Heralded { .. } => None,
        };
        match &self.signal {
            FeedbackSignal::SingleSpot { target } => {
                let rate = self.pair_rate(v, target, &fixed_projection)?;
                Ok(self.measure_counts(rate, eval_id, 0)? / self.counts_per_rate)
            }
            FeedbackSignal::TwoSpot { targets, alpha } => {
                let c1 = self.measure_counts(
                    self.pair_rate(v, &targets[0], &fixed_projection)?,
                    eval_id,
                    0,
                )?;
                let c2 = self.measure_counts(
                    self.pair_rate(v, &targets[1], &fixed_projection)?,
                    eval_id,
                    1,
                )?;
                Ok(two_spot_objective(c1, c2, *alpha))
            }
            FeedbackSignal::SmfCoupling { collection } => {
                let u = self.model.propagate_row(collection, v)?;
                let h = self.heralded.as_ref().expect("heralded state precomputed");
                let coupling = h.conditional_rate(&u)?;
                Ok(self.measure_counts(coupling, eval_id, 0)? / self.counts_per_rate)
            }
            FeedbackSignal::SinglesFeedback { target } => {
                let u = self.model.propagate_row(target, v)?;
                let rate = singles_rate(self.state, &u)?;
                Ok(self.measure_counts(rate, eval_id, 0)? / self.counts_per_rate)
            }
        }
    }
}
