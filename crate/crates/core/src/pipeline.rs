//! The end-to-end experiment: analyze, reduce, synthesize, simulate, sweep.
//! Every failure carries the stage it happened in.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::cmaes::{CmaEsConfig, Termination};
use crate::config::ExperimentConfig;
use crate::controller::ControllerParams;
use crate::error::{Error, Result};
use crate::objective::{reference_trust_radius, synthesize, ObjectiveSpec, Reference, SynthesisOutcome, SynthesisProblem};
use crate::spectral::{
    check_nonresonance, eigendecompose, select_slow_subspace, spectral_quotient, NonresonanceReport, SpectralData,
};
use crate::ssm::ReducedModel;
use crate::system::{AssumptionReport, ControlAffineSystem};
use crate::validate::{
    compare_fom_rom, loglog_slope, residual_scan, robustness_sweep, Comparison, ComparisonSpec, ErrorMetrics,
    SweepRow, SweepTemplate,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    BuildSystem,
    Eigendecompose,
    SelectSlowSubspace,
    Nonresonance,
    Reduce,
    Synthesize,
    Simulate,
    Sweep,
    WriteArtifacts,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::BuildSystem => "build_system",
            Stage::Eigendecompose => "eigendecompose",
            Stage::SelectSlowSubspace => "select_slow_subspace",
            Stage::Nonresonance => "nonresonance",
            Stage::Reduce => "reduce",
            Stage::Synthesize => "synthesize",
            Stage::Simulate => "simulate",
            Stage::Sweep => "sweep",
            Stage::WriteArtifacts => "write_artifacts",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("stage {stage}: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl StageError {
    pub fn new(stage: Stage, source: Error) -> Self {
        Self { stage, source }
    }

    /// `{"stage": ..., "error": ...}`
    pub fn report(&self) -> serde_json::Value {
        serde_json::json!({
            "stage": self.stage.as_str(),
            "error": self.source.to_string(),
        })
    }
}

pub trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|e| StageError::new(stage, e))
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

/// System and spectral data shared by every command.
#[derive(Debug, Clone)]
pub struct Setup {
    pub system: ControlAffineSystem,
    pub full: SpectralData,
    pub spectral: SpectralData,
}

pub fn setup(cfg: &ExperimentConfig) -> StageResult<Setup> {
    cfg.validate().at(Stage::Config)?;
    let system = cfg.system.build().at(Stage::BuildSystem)?;
    let full = eigendecompose(system.a()).at(Stage::Eigendecompose)?;
    let spectral = select_slow_subspace(&full, cfg.subspace_dim).at(Stage::SelectSlowSubspace)?;
    Ok(Setup { system, full, spectral })
}

#[derive(Debug, Clone, Serialize)]
pub struct Analysis {
    /// `[re, im]`, slowest first.
    pub eigenvalues: Vec<[f64; 2]>,
    pub master_indices: Vec<usize>,
    pub spectral_quotient: usize,
    pub nonresonance: NonresonanceReport,
    pub assumptions: AssumptionReport,
}

pub fn analyze(cfg: &ExperimentConfig) -> StageResult<Analysis> {
    let s = setup(cfg)?;
    analysis_of(cfg, &s)
}

fn analysis_of(cfg: &ExperimentConfig, s: &Setup) -> StageResult<Analysis> {
    let quotient = spectral_quotient(&s.spectral).at(Stage::Nonresonance)?;
    let max_order = cfg.nonresonance.max_order.unwrap_or(quotient);
    let nonresonance = check_nonresonance(&s.spectral, max_order, cfg.nonresonance.rtol).at(Stage::Nonresonance)?;
    Ok(Analysis {
        eigenvalues: s.full.eigenvalues().iter().map(|l| [l.re, l.im]).collect(),
        master_indices: s.spectral.master_indices().to_vec(),
        spectral_quotient: quotient,
        nonresonance,
        assumptions: s.system.check_assumptions(),
    })
}

/// Log-spaced `|p|` in `[1e-4, 1e-1]`.
pub fn residual_radii() -> Vec<f64> {
    (0..13).map(|k| 1e-4 * 10f64.powf(k as f64 / 4.0)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualSummary {
    pub radii: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Log-log slope of residual against radius.
    pub slope: f64,
}

pub fn residual_summary(model: &ReducedModel) -> Result<ResidualSummary> {
    let radii = residual_radii();
    let residuals = residual_scan(model, &radii)?;
    let floor = residuals.contains(&0.0);
    let slope = if floor { f64::INFINITY } else { loglog_slope(&radii, &residuals) };
    Ok(ResidualSummary { radii, residuals, slope })
}

#[derive(Debug, Clone)]
pub struct Reduction {
    pub model: ReducedModel,
    pub residual: ResidualSummary,
}

/// Solves the SSM, with the configured controller when one is given.
pub fn reduce(cfg: &ExperimentConfig) -> StageResult<Reduction> {
    let s = setup(cfg)?;
    let model = match &cfg.controller_params {
        Some(flat) => {
            let c = controller_template(cfg, &s).and_then(|mut c| {
                c.set_flat(flat)?;
                Ok(c)
            });
            ReducedModel::solve(&s.system, &s.spectral, &c.at(Stage::Config)?, &cfg.ssm)
        }
        None => ReducedModel::autonomous(&s.system, &s.spectral, &cfg.ssm),
    }
    .at(Stage::Reduce)?;
    let residual = residual_summary(&model).at(Stage::Reduce)?;
    Ok(Reduction { model, residual })
}

fn controller_template(cfg: &ExperimentConfig, s: &Setup) -> Result<ControllerParams> {
    ControllerParams::zeros(s.system.input_dim(), s.system.output_dim(), &cfg.controller, cfg.reference.omega)
}

fn reference(cfg: &ExperimentConfig) -> Result<Arc<dyn Reference>> {
    Ok(Arc::new(cfg.reference.build()?))
}

fn optimizer_config(cfg: &ExperimentConfig) -> CmaEsConfig {
    let mut o = cfg.optimizer.clone();
    if cfg.workers.is_some() {
        o.workers = cfg.workers;
    }
    o
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthesisReport {
    pub params: Vec<f64>,
    pub objective: f64,
    pub evaluations: usize,
    pub termination: Termination,
    pub trust_radius: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub outcome: SynthesisOutcome,
    pub trust_radius: Option<f64>,
}

impl Synthesis {
    pub fn report(&self) -> SynthesisReport {
        SynthesisReport {
            params: self.outcome.controller.flat().to_vec(),
            objective: self.outcome.objective,
            evaluations: self.outcome.optimizer.evaluations,
            termination: self.outcome.optimizer.termination,
            trust_radius: self.trust_radius,
        }
    }
}

pub fn synthesize_controller(cfg: &ExperimentConfig) -> StageResult<Synthesis> {
    let s = setup(cfg)?;
    synthesis_of(cfg, &s)
}

fn synthesis_of(cfg: &ExperimentConfig, s: &Setup) -> StageResult<Synthesis> {
    let stage = Stage::Synthesize;
    let reference = reference(cfg).at(Stage::Config)?;
    let template = controller_template(cfg, s).at(Stage::Config)?;
    let oc = &cfg.objective;
    let trust_radius = match (oc.trust_radius, oc.auto_trust_radius) {
        (Some(r), _) => Some(r),
        (None, true) => Some(reference_trust_radius(&s.system, &s.spectral, reference.as_ref(), 1000).at(stage)?),
        (None, false) => None,
    };
    let mut objective = ObjectiveSpec::new(reference, cfg.reference.omega).at(Stage::Config)?;
    objective.settle_periods = oc.settle_periods;
    objective.samples_per_period = oc.samples_per_period;
    let problem =
        SynthesisProblem::new(&s.system, &s.spectral, &cfg.ssm, &template, objective, trust_radius).at(Stage::Reduce)?;
    let x0 = cfg.initial_params.clone().unwrap_or_else(|| vec![0.0; problem.param_count()]);
    let outcome = synthesize(&problem, &optimizer_config(cfg), &x0).at(stage)?;
    Ok(Synthesis { outcome, trust_radius })
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub params: Vec<f64>,
    pub initial_state: Vec<f64>,
    pub metrics: ErrorMetrics,
    /// Output RMSE in degrees (pendulum angle units).
    pub rmse_deg: Vec<f64>,
    /// `fom_rom_gap_final_period / orbit_amplitude`.
    pub relative_gap_final_period: f64,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub comparison: Comparison,
    pub report: SimulationReport,
}

pub fn comparison_spec(cfg: &ExperimentConfig) -> Result<ComparisonSpec> {
    let mut spec = ComparisonSpec::new(reference(cfg)?, cfg.reference.omega);
    spec.settle_periods = cfg.objective.settle_periods;
    spec.total_periods = cfg.simulation.total_periods;
    spec.samples_per_period = cfg.simulation.samples_per_period;
    spec.integrator = cfg.simulation.integrator;
    spec.exact_drift = cfg.simulation.exact_drift;
    Ok(spec)
}

fn initial_state(cfg: &ExperimentConfig, s: &Setup) -> Vec<f64> {
    if cfg.simulation.initial_state.is_empty() {
        vec![0.0; s.system.state_dim()]
    } else {
        cfg.simulation.initial_state.clone()
    }
}

/// Closed-loop FOM against the lifted ROM for the given model's controller.
pub fn simulate_model(cfg: &ExperimentConfig, s: &Setup, model: &ReducedModel) -> StageResult<Simulation> {
    let spec = comparison_spec(cfg).at(Stage::Config)?;
    let x0 = initial_state(cfg, s);
    let comparison = compare_fom_rom(&s.system, model, &x0, &spec).at(Stage::Simulate)?;
    let m = &comparison.metrics;
    let report = SimulationReport {
        params: model.controller().map(|c| c.flat().to_vec()).unwrap_or_default(),
        initial_state: x0,
        rmse_deg: m.rmse.iter().map(|v| v.to_degrees()).collect(),
        relative_gap_final_period: m.fom_rom_gap_final_period / m.orbit_amplitude,
        metrics: m.clone(),
    };
    Ok(Simulation { comparison, report })
}

/// Controller coefficients from the config, or from a fresh synthesis.
pub fn nominal_model(cfg: &ExperimentConfig, s: &Setup) -> StageResult<(ReducedModel, Option<Synthesis>)> {
    match &cfg.controller_params {
        Some(flat) => {
            let mut c = controller_template(cfg, s).at(Stage::Config)?;
            c.set_flat(flat).at(Stage::Config)?;
            let model = ReducedModel::solve(&s.system, &s.spectral, &c, &cfg.ssm).at(Stage::Reduce)?;
            Ok((model, None))
        }
        None => {
            let syn = synthesis_of(cfg, s)?;
            Ok((syn.outcome.model.clone(), Some(syn)))
        }
    }
}

pub fn simulate(cfg: &ExperimentConfig) -> StageResult<(Simulation, Option<Synthesis>)> {
    let s = setup(cfg)?;
    let (model, syn) = nominal_model(cfg, &s)?;
    Ok((simulate_model(cfg, &s, &model)?, syn))
}

pub fn sweep(cfg: &ExperimentConfig) -> StageResult<(Vec<SweepRow>, Option<Synthesis>)> {
    let s = setup(cfg)?;
    let (model, syn) = nominal_model(cfg, &s)?;
    let (params, taylor_degree) = cfg
        .system
        .pendulum_params()
        .ok_or_else(|| Error::Config("the robustness sweep needs the pendulum system preset".into()))
        .at(Stage::Sweep)?;
    let template = SweepTemplate {
        params,
        taylor_degree,
        ssm: cfg.ssm.clone(),
        controller: model.controller().cloned().expect("nominal model has a controller"),
        comparison: comparison_spec(cfg).at(Stage::Config)?,
        x0: initial_state(cfg, &s),
    };
    let rows = match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
            .at(Stage::Sweep)?
            .install(|| robustness_sweep(&cfg.sweep, &template)),
        None => robustness_sweep(&cfg.sweep, &template),
    };
    Ok((rows, syn))
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub analysis: Analysis,
    pub residual: ResidualSummary,
    pub synthesis: Option<SynthesisReport>,
    pub simulation: SimulationReport,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: PipelineReport,
    pub model: ReducedModel,
    pub synthesis: Option<Synthesis>,
    pub simulation: Simulation,
}

/// Spectral analysis, subspace pick, SSM solve, controller optimization and
/// closed-loop full-order check, in that order.
pub fn run_pipeline(cfg: &ExperimentConfig) -> StageResult<PipelineRun> {
    let s = setup(cfg)?;
    let analysis = analysis_of(cfg, &s)?;
    if !analysis.nonresonance.ok {
        return Err(StageError::new(
            Stage::Nonresonance,
            Error::InvalidSubspace(format!(
                "{} resonant multi-indices up to order {}",
                analysis.nonresonance.resonant_tuples.len(),
                analysis.nonresonance.max_order_checked
            )),
        ));
    }
    let autonomous = ReducedModel::autonomous(&s.system, &s.spectral, &cfg.ssm).at(Stage::Reduce)?;
    let residual = residual_summary(&autonomous).at(Stage::Reduce)?;
    let (model, synthesis) = nominal_model(cfg, &s)?;
    let simulation = simulate_model(cfg, &s, &model)?;
    Ok(PipelineRun {
        report: PipelineReport {
            analysis,
            residual,
            synthesis: synthesis.as_ref().map(Synthesis::report),
            simulation: simulation.report.clone(),
        },
        model,
        synthesis,
        simulation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig3() -> ExperimentConfig {
        ExperimentConfig::preset("pendulum-fig3").unwrap()
    }

    #[test]
    fn analysis_of_fig3_preset() {
        let a = analyze(&fig3()).unwrap();
        assert_eq!(a.spectral_quotient, 122);
        assert!(a.nonresonance.ok);
        assert_eq!(a.nonresonance.max_order_checked, 122);
        assert!(a.assumptions.stable);
    }

    #[test]
    fn splitting_a_complex_pair_fails_at_subspace_selection() {
        let mut cfg = fig3();
        // b = 1: underdamped, eigenvalues form a complex pair
        cfg.system = crate::system::SystemSpec::pendulum(crate::system::PendulumParams { b: 1.0, ..Default::default() });
        let err = analyze(&cfg).unwrap_err();
        assert_eq!(err.stage, Stage::SelectSlowSubspace);
        assert_eq!(err.report()["stage"], "select_slow_subspace");
    }

    #[test]
    fn bad_config_fails_at_config_stage() {
        let mut cfg = fig3();
        cfg.reference.omega = -1.0;
        assert_eq!(analyze(&cfg).unwrap_err().stage, Stage::Config);
    }

    #[test]
    fn autonomous_reduction_residual_order() {
        let r = reduce(&fig3()).unwrap();
        assert!(r.residual.slope >= 3.5, "{:?}", r.residual);
    }

    #[test]
    fn fixed_controller_skips_synthesis() {
        let mut cfg = fig3();
        cfg.controller_params = Some(vec![0.0; 6]);
        cfg.simulation.total_periods = 3;
        cfg.simulation.samples_per_period = 100;
        let (sim, syn) = simulate(&cfg).unwrap();
        assert!(syn.is_none());
        // zero torque from rest: the pendulum stays put
        assert_eq!(sim.report.metrics.fom_rom_gap, 0.0);
    }

    #[test]
    fn wrong_controller_length_is_a_config_error() {
        let mut cfg = fig3();
        cfg.controller_params = Some(vec![0.0; 5]);
        assert_eq!(simulate(&cfg).unwrap_err().stage, Stage::Config);
    }
}
