//! The four subcommands: `init`, `speckle`, `optimize`, and `schmidt`.
//!
//! Every command is deterministic given the config file and the master
//! seed: rerunning one reproduces its output files byte for byte. Wall
//! clock and other irreproducible quantities go to stdout only.

use std::fs;
use std::path::{Path, PathBuf};

use fiber_piano::fiber::{speckle_correlation, Displacements};
use fiber_piano::io::{
    write_json, write_map_csv, write_map_pgm, write_trace_csv, write_transmission_matrix,
};
use fiber_piano::metrics::{
    disorder_average, enhancement, enhancement_report, DisorderStats, Enhancement,
    EnhancementReport,
};
use fiber_piano::optimize::pso_maximize;
use fiber_piano::quantum::{contrast, schmidt_protocol, RateMap, SchmidtProtocolReport};
use fiber_piano::seeds;
use serde::Serialize;

use crate::config::{ConfigurationKind, ExperimentConfig, FeedbackKind, CONFIG_NOTES};
use crate::context::Simulation;
use crate::error::CliError;

/// Provenance header shared by every run manifest.
#[derive(Serialize)]
struct Manifest<'a> {
    command: &'static str,
    version: &'static str,
    /// SHA-256 of the config file bytes as read.
    config_sha256: &'a str,
    master_seed: u64,
    mode_count: usize,
    actuator_count: usize,
    /// Files this run wrote, in order.
    outputs: Vec<String>,
}

/// Collects output paths under one directory and remembers their names.
struct Sink<'a> {
    dir: &'a Path,
    names: Vec<String>,
}

impl<'a> Sink<'a> {
    fn new(dir: &'a Path) -> Self {
        Self {
            dir,
            names: Vec::new(),
        }
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.names.push(name.to_string());
        self.dir.join(name)
    }
}

fn manifest<'a>(command: &'static str, config_sha256: &'a str, sim: &Simulation) -> Manifest<'a> {
    Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config_sha256,
        master_seed: sim.seed,
        mode_count: sim.model.n_modes(),
        actuator_count: sim.model.actuator_count(),
        outputs: Vec::new(),
    }
}

fn write_map(sink: &mut Sink<'_>, stem: &str, map: &RateMap, raster: bool) -> Result<(), CliError> {
    write_map_csv(&sink.path(&format!("{stem}.csv")), map)?;
    if raster {
        write_map_pgm(&sink.path(&format!("{stem}.pgm")), map)?;
    }
    Ok(())
}

fn announce(sink: &Sink<'_>) {
    for name in &sink.names {
        println!("wrote {}", sink.dir.join(name).display());
    }
}

/// Write the default configuration and its field notes.
pub fn init(out_dir: &Path, force: bool) -> Result<(), CliError> {
    let config_path = out_dir.join("config.json");
    let notes_path = out_dir.join("config.notes.md");
    for path in [&config_path, &notes_path] {
        if path.exists() && !force {
            return Err(CliError::RefuseOverwrite { path: path.clone() });
        }
    }
    write_json(&config_path, &ExperimentConfig::default())?;
    fs::write(&notes_path, CONFIG_NOTES)?;
    println!("wrote {}", config_path.display());
    println!("wrote {}", notes_path.display());
    Ok(())
}

#[derive(Serialize, Clone, Copy)]
struct SpeckleSummary {
    /// Intensity correlation between two independent disorder realizations
    /// for a fundamental-mode probe (near zero at full coupling strength).
    realization_correlation: f64,
    /// Spatial contrast (std/mean) of the singles map over scan cells
    /// within one core radius of the axis.
    singles_core_contrast: f64,
    /// Spatial contrast of the coincidence map over the same region.
    coincidence_core_contrast: f64,
    /// Largest entry of |T†T − I| for the rendered realization.
    max_unitarity_deviation: f64,
}

/// Spatial contrast of a map restricted to the illuminated core region;
/// the dark cladding would otherwise dominate the statistic.
fn core_region_contrast(map: &RateMap, core_radius_um: f64) -> Result<f64, CliError> {
    let scan = &map.scan;
    let mut values = Vec::new();
    for iy in 0..scan.samples {
        for ix in 0..scan.samples {
            let (x, y) = (scan.coord_um(ix), scan.coord_um(iy));
            if x * x + y * y <= core_radius_um * core_radius_um {
                values.push(map.value_at(ix, iy));
            }
        }
    }
    Ok(contrast(&values)?)
}

#[derive(Serialize)]
struct SpeckleManifest<'a> {
    #[serde(flatten)]
    header: Manifest<'a>,
    summary: SpeckleSummary,
}

/// Render singles and coincidence maps for one disorder realization.
pub fn speckle(
    config: ExperimentConfig,
    config_sha256: &str,
    seed_override: Option<u64>,
    out_dir: &Path,
    raster: bool,
) -> Result<(), CliError> {
    let sim = Simulation::build(config, seed_override)?;
    let mut rng = seeds::stream(sim.seed, "speckle", 0);
    let first = Displacements::random(sim.model.actuator_count(), &mut rng);
    let second = Displacements::random(sim.model.actuator_count(), &mut rng);
    let t = sim.model.assemble(&first)?;
    let t_other = sim.model.assemble(&second)?;

    let (singles, coincidences) = sim.maps(&t)?;
    let correlation = speckle_correlation(&t, &t_other, &sim.smf_collection(), &sim.basis)?;
    let core_radius = sim.config.fiber.core_radius_um;
    let summary = SpeckleSummary {
        realization_correlation: correlation.clipped,
        singles_core_contrast: core_region_contrast(&singles, core_radius)?,
        coincidence_core_contrast: core_region_contrast(&coincidences, core_radius)?,
        max_unitarity_deviation: t.max_unitarity_deviation(),
    };

    let mut sink = Sink::new(out_dir);
    write_map(&mut sink, "speckle_singles", &singles, raster)?;
    write_map(&mut sink, "speckle_coincidence", &coincidences, raster)?;
    write_transmission_matrix(&sink.path("speckle_tm.json"), &t)?;

    let mut header = manifest("speckle", config_sha256, &sim);
    header.outputs = sink.names.clone();
    write_json(
        &sink.dir.join("speckle_manifest.json"),
        &SpeckleManifest { header, summary },
    )?;
    sink.names.push("speckle_manifest.json".to_string());

    println!(
        "maps over {0}×{0} scan: core-region contrast {1:.3} (singles), {2:.3} (coincidence)",
        sim.config.scan.samples, summary.singles_core_contrast, summary.coincidence_core_contrast,
    );
    println!(
        "correlation with an independent realization: {:.3}",
        summary.realization_correlation
    );
    announce(&sink);
    Ok(())
}

#[derive(Serialize)]
struct SpotReport {
    /// Disorder-averaged pair rate at this spot.
    baseline: DisorderStats,
    /// Pair rate at this spot after optimization.
    optimized_rate: f64,
    enhancement: Enhancement,
}

#[derive(Serialize)]
struct SmfReport {
    /// Disorder-averaged heralded coupling into the fundamental mode.
    baseline: DisorderStats,
    /// Coupling at the optimized displacements.
    optimized_coupling: f64,
    enhancement: Enhancement,
}

#[derive(Serialize)]
struct OptimizeReport {
    feedback: FeedbackKind,
    configuration: ConfigurationKind,
    master_seed: u64,
    iterations: usize,
    cost_evaluations: u64,
    best_cost: f64,
    best_displacements: Vec<f64>,
    /// Disorder-averaged pair rate at the target.
    pair_baseline: DisorderStats,
    /// Pair rate at the target after optimization.
    optimized_pair_rate: f64,
    /// Optimized-over-baseline pair rate at the target.
    pair_enhancement: Enhancement,
    /// Decomposition of the map change at the target: raw enhancement,
    /// redistribution (normalized) part, total-transmission part, and the
    /// singles change.
    map_report: EnhancementReport,
    /// Pair imbalance |c₁ − c₂| / max(c₁, c₂) after optimization
    /// (two-spot feedback only).
    #[serde(skip_serializing_if = "Option::is_none")]
    imbalance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    second_spot: Option<SpotReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    smf: Option<SmfReport>,
}

/// Run the configured feedback optimization and report the enhancement.
pub fn optimize(
    config: ExperimentConfig,
    config_sha256: &str,
    seed_override: Option<u64>,
    out_dir: &Path,
    raster: bool,
) -> Result<(), CliError> {
    let sim = Simulation::build(config, seed_override)?;
    let n_act = sim.model.actuator_count();
    let opt = sim.config.optimization;
    let target = sim.config.detectors.target;

    let pair = sim.pair_probe(&target)?;
    let pair_baseline = disorder_average(|v| pair.rate(v), n_act, opt.baseline_samples, sim.seed)?;
    println!(
        "baseline pair rate at target: {:.4e} ± {:.1e} ({} realizations)",
        pair_baseline.mean,
        pair_baseline.standard_error(),
        pair_baseline.count,
    );

    let v_before = Displacements::random(n_act, &mut seeds::stream(sim.seed, "disorder", 0));
    let t_before = sim.model.assemble(&v_before)?;
    let (singles_before, co_before) = sim.maps(&t_before)?;

    let cost = sim.cost()?;
    let run = pso_maximize(&cost, n_act, &opt.pso.to_core(sim.seed))?;
    let iterations = run.trace.len().saturating_sub(1);
    println!(
        "swarm finished: best cost {:.6} after {} iterations, {} evaluations ({:.1} s)",
        run.best_cost, iterations, run.cost_evaluations, run.duration_secs,
    );

    let t_after = sim.model.assemble(&run.best)?;
    let (singles_after, co_after) = sim.maps(&t_after)?;

    let optimized_pair_rate = pair.rate(&run.best)?;
    let pair_enhancement = enhancement(optimized_pair_rate, &pair_baseline)?;
    let map_report = enhancement_report(
        &co_before,
        &co_after,
        &singles_before,
        &singles_after,
        target.x_um,
        target.y_um,
        &pair_baseline,
    )?;

    let (imbalance, second_spot) = if opt.feedback == FeedbackKind::TwoSpot {
        let second = sim.pair_probe(&sim.config.detectors.second_target)?;
        let baseline = disorder_average(|v| second.rate(v), n_act, opt.baseline_samples, sim.seed)?;
        let optimized_rate = second.rate(&run.best)?;
        let imbalance =
            (optimized_pair_rate - optimized_rate).abs() / optimized_pair_rate.max(optimized_rate);
        (
            Some(imbalance),
            Some(SpotReport {
                enhancement: enhancement(optimized_rate, &baseline)?,
                baseline,
                optimized_rate,
            }),
        )
    } else {
        (None, None)
    };

    let smf = if opt.feedback == FeedbackKind::SmfCoupling {
        let coupling = sim.coupling_probe()?;
        let baseline =
            disorder_average(|v| coupling.rate(v), n_act, opt.baseline_samples, sim.seed)?;
        let optimized_coupling = coupling.rate(&run.best)?;
        Some(SmfReport {
            enhancement: enhancement(optimized_coupling, &baseline)?,
            baseline,
            optimized_coupling,
        })
    } else {
        None
    };

    let report = OptimizeReport {
        feedback: opt.feedback,
        configuration: sim.config.state.configuration,
        master_seed: sim.seed,
        iterations,
        cost_evaluations: run.cost_evaluations,
        best_cost: run.best_cost,
        best_displacements: run.best.as_slice().to_vec(),
        pair_baseline,
        optimized_pair_rate,
        pair_enhancement,
        map_report,
        imbalance,
        second_spot,
        smf,
    };

    let mut sink = Sink::new(out_dir);
    write_trace_csv(&sink.path("optimize_trace.csv"), &run.trace)?;
    write_map(
        &mut sink,
        "optimize_singles_before",
        &singles_before,
        raster,
    )?;
    write_map(&mut sink, "optimize_singles_after", &singles_after, raster)?;
    write_map(&mut sink, "optimize_coincidence_before", &co_before, raster)?;
    write_map(&mut sink, "optimize_coincidence_after", &co_after, raster)?;
    write_json(&sink.path("optimize_report.json"), &report)?;

    let mut header = manifest("optimize", config_sha256, &sim);
    header.outputs = sink.names.clone();
    write_json(&sink.dir.join("optimize_manifest.json"), &header)?;
    sink.names.push("optimize_manifest.json".to_string());

    println!(
        "pair enhancement at target: {:.2} ± {:.2}",
        report.pair_enhancement.value, report.pair_enhancement.uncertainty,
    );
    println!(
        "target map cell: {:.2} = redistribution {:.2} × transmission {:.3}",
        report.map_report.enhancement.value,
        report.map_report.normalized,
        report.map_report.total_ratio,
    );
    println!(
        "singles at target changed by ×{:.2}",
        report.map_report.singles_enhancement
    );
    if let (Some(imbalance), Some(second)) = (&report.imbalance, &report.second_spot) {
        println!(
            "second spot enhancement: {:.2} ± {:.2}, imbalance {:.3}",
            second.enhancement.value, second.enhancement.uncertainty, imbalance,
        );
    }
    if let Some(smf) = &report.smf {
        println!(
            "single-mode coupling: {:.4} ({:.2}× its disorder baseline)",
            smf.optimized_coupling, smf.enhancement.value,
        );
    }
    announce(&sink);
    Ok(())
}

#[derive(Serialize)]
struct SchmidtReport {
    #[serde(flatten)]
    protocol: SchmidtProtocolReport,
    /// Schmidt number of the configured source.
    schmidt_target: f64,
    mode_truncation: usize,
    master_seed: u64,
}

/// Estimate the source's Schmidt number from random-configuration
/// contrasts of singles and heralded coincidences.
pub fn schmidt(
    config: ExperimentConfig,
    config_sha256: &str,
    seed_override: Option<u64>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let sim = Simulation::build_estimation(config, seed_override)?;
    let herald_mode = sim.herald_mode()?;
    let signal = sim.collection(&sim.config.detectors.target)?;
    let protocol = schmidt_protocol(
        &sim.model,
        &sim.state,
        &herald_mode,
        &signal,
        sim.config.schmidt.configurations,
        sim.seed,
    )?;
    let report = SchmidtReport {
        protocol,
        schmidt_target: sim.config.state.schmidt_target,
        mode_truncation: sim.model.n_modes(),
        master_seed: sim.seed,
    };

    let mut sink = Sink::new(out_dir);
    write_json(&sink.path("schmidt_report.json"), &report)?;
    let mut header = manifest("schmidt", config_sha256, &sim);
    header.outputs = sink.names.clone();
    write_json(&sink.dir.join("schmidt_manifest.json"), &header)?;
    sink.names.push("schmidt_manifest.json".to_string());

    println!(
        "Schmidt estimate {:.2} (target {}, {} modes, {} configurations)",
        report.protocol.estimate,
        report.schmidt_target,
        report.mode_truncation,
        report.protocol.configurations,
    );
    println!(
        "contrasts: singles {:.4}, heralded coincidence {:.4}",
        report.protocol.singles_contrast, report.protocol.coincidence_contrast,
    );
    announce(&sink);
    Ok(())
}
