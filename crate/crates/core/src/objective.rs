//! Tracking objective on the reduced model and the controller synthesis loop.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cmaes::{optimize_cma_es, CmaEsConfig, CmaEsResult};
use crate::controller::ControllerParams;
use crate::error::{check_dim, Error, Result};
use crate::integrate::{integrate, uniform_grid, IntegratorConfig, TrajectoryKind};
use crate::spectral::SpectralData;
use crate::ssm::{real_master_basis, solve_autonomous, AutonomousSolution, CorrectionBasis, ReducedModel, SsmConfig};
use crate::system::ControlAffineSystem;

/// Target output as a function of the phase `phi = Omega t`.
pub trait Reference: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, phi: f64) -> Vec<f64>;
    /// `d z / d phi`.
    fn phase_derivative(&self, phi: f64) -> Vec<f64>;
}

/// `z_k(phi) = offset_k + amplitude_k sin(phi)`, in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinusoidalReference {
    pub offset: Vec<f64>,
    pub amplitude: Vec<f64>,
}

impl SinusoidalReference {
    pub fn from_degrees(offset_deg: &[f64], amplitude_deg: &[f64]) -> Result<Self> {
        check_dim("reference amplitude", offset_deg.len(), amplitude_deg.len())?;
        Ok(Self {
            offset: offset_deg.iter().map(|v| v.to_radians()).collect(),
            amplitude: amplitude_deg.iter().map(|v| v.to_radians()).collect(),
        })
    }
}

impl Reference for SinusoidalReference {
    fn dim(&self) -> usize {
        self.offset.len()
    }

    fn value(&self, phi: f64) -> Vec<f64> {
        let s = phi.sin();
        self.offset.iter().zip(&self.amplitude).map(|(o, a)| o + a * s).collect()
    }

    fn phase_derivative(&self, phi: f64) -> Vec<f64> {
        let c = phi.cos();
        self.amplitude.iter().map(|a| a * c).collect()
    }
}

/// Largest `||z*(phi)||` over a uniform phase grid.
pub fn reference_scale(reference: &dyn Reference, samples: usize) -> f64 {
    (0..samples.max(1))
        .map(|k| {
            let phi = 2.0 * PI * k as f64 / samples.max(1) as f64;
            reference.value(phi).iter().map(|v| v * v).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max)
}

#[derive(Clone)]
pub struct ObjectiveSpec {
    pub reference: Arc<dyn Reference>,
    pub omega: f64,
    /// `t1 = settle_periods * T`.
    pub settle_periods: usize,
    pub samples_per_period: usize,
    /// Reduced initial state; `None` starts from the origin.
    pub p_init: Option<Vec<f64>>,
    /// Returned when the reduced trajectory leaves the trust region or fails.
    pub penalty: f64,
}

impl fmt::Debug for ObjectiveSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObjectiveSpec")
            .field("omega", &self.omega)
            .field("settle_periods", &self.settle_periods)
            .field("samples_per_period", &self.samples_per_period)
            .field("p_init", &self.p_init)
            .field("penalty", &self.penalty)
            .finish_non_exhaustive()
    }
}

impl ObjectiveSpec {
    /// Settles for two periods, 1000 samples per period, penalty `1e6` times the reference scale.
    pub fn new(reference: Arc<dyn Reference>, omega: f64) -> Result<Self> {
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::InvalidInput(format!("reference frequency must be positive, got {omega}")));
        }
        let scale = reference_scale(reference.as_ref(), 1000);
        Ok(Self {
            reference,
            omega,
            settle_periods: 2,
            samples_per_period: 1000,
            p_init: None,
            penalty: 1e6 * scale.max(1.0),
        })
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }

    pub fn settle_time(&self) -> f64 {
        self.settle_periods as f64 * self.period()
    }
}

/// `(1/T) int_{t1}^{t1+T} || z*(Omega t) - H lift(p(t), Omega t) ||_2 dt` on the reduced model.
/// Leaving the trust region or integration failure yields `spec.penalty`.
pub fn tracking_objective(model: &ReducedModel, spec: &ObjectiveSpec) -> Result<f64> {
    let sys = model.system();
    check_dim("reference dimension", sys.output_dim(), spec.reference.dim())?;
    if spec.samples_per_period == 0 {
        return Err(Error::InvalidInput("samples_per_period must be positive".into()));
    }
    let n = model.reduced_dim();
    let p0 = match &spec.p_init {
        Some(p) => {
            check_dim("initial reduced state", n, p.len())?;
            p.clone()
        }
        None => vec![0.0; n],
    };
    let t_period = spec.period();
    let m = spec.samples_per_period;
    let total = (spec.settle_periods + 1) * m;
    let grid = uniform_grid(0.0, (spec.settle_periods + 1) as f64 * t_period, total);
    let omega = spec.omega;
    let traj = integrate(
        |t, q, dq| model.reduced_rhs_into(q, omega * t, dq),
        &p0,
        &grid,
        &IntegratorConfig::Rk4Fixed { dt: t_period / m as f64 },
        TrajectoryKind::Reduced,
    );
    let traj = match traj {
        Ok(t) => t,
        Err(_) => return Ok(spec.penalty),
    };
    if let Some(r) = model.trust_radius() {
        if traj.states.iter().any(|q| q.iter().map(|v| v * v).sum::<f64>().sqrt() > r) {
            return Ok(spec.penalty);
        }
    }
    let mut x = vec![0.0; sys.state_dim()];
    let start = spec.settle_periods * m;
    let errs: Vec<f64> = (start..=total)
        .map(|k| {
            let phi = omega * traj.times[k];
            model.lift_into(&traj.states[k], phi, &mut x);
            let y = sys.output(&x);
            let z = spec.reference.value(phi);
            z.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        })
        .collect();
    let inner: f64 = errs[1..errs.len() - 1].iter().sum();
    let mean = (inner + 0.5 * (errs[0] + errs[errs.len() - 1])) / m as f64;
    Ok(if mean.is_finite() { mean } else { spec.penalty })
}

/// `1.2 * max_phi |(H L)^+ z*(phi)|` with `L` the real master basis.
pub fn reference_trust_radius(
    system: &ControlAffineSystem,
    spectral: &SpectralData,
    reference: &dyn Reference,
    samples: usize,
) -> Result<f64> {
    check_dim("reference dimension", system.output_dim(), reference.dim())?;
    let hl = system.h() * real_master_basis(spectral);
    let pinv = hl
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::InvalidInput(format!("output map on the subspace: {e}")))?;
    let samples = samples.max(1);
    let max = (0..samples)
        .map(|k| {
            let z = nalgebra::DVector::from_vec(reference.value(2.0 * PI * k as f64 / samples as f64));
            (&pinv * z).norm()
        })
        .fold(0.0, f64::max);
    Ok(1.2 * max)
}

/// Everything needed to evaluate candidate controllers of one family.
pub struct SynthesisProblem {
    system: ControlAffineSystem,
    spectral: SpectralData,
    ssm: SsmConfig,
    auto: AutonomousSolution,
    basis: CorrectionBasis,
    template: ControllerParams,
    objective: ObjectiveSpec,
    trust_radius: Option<f64>,
}

impl SynthesisProblem {
    pub fn new(
        system: &ControlAffineSystem,
        spectral: &SpectralData,
        ssm: &SsmConfig,
        template: &ControllerParams,
        objective: ObjectiveSpec,
        trust_radius: Option<f64>,
    ) -> Result<Self> {
        if (template.omega() - objective.omega).abs() > 1e-12 * objective.omega {
            return Err(Error::InvalidInput(format!(
                "controller frequency {} differs from reference frequency {}",
                template.omega(),
                objective.omega
            )));
        }
        let auto = solve_autonomous(system, spectral, ssm)?;
        let basis = CorrectionBasis::new(system, spectral, &auto, template, ssm)?;
        Ok(Self {
            system: system.clone(),
            spectral: spectral.clone(),
            ssm: ssm.clone(),
            auto,
            basis,
            template: template.clone(),
            objective,
            trust_radius,
        })
    }

    pub fn param_count(&self) -> usize {
        self.template.param_count()
    }

    pub fn objective_spec(&self) -> &ObjectiveSpec {
        &self.objective
    }

    pub fn trust_radius(&self) -> Option<f64> {
        self.trust_radius
    }

    pub fn controller(&self, flat: &[f64]) -> Result<ControllerParams> {
        let mut c = self.template.clone();
        c.set_flat(flat)?;
        Ok(c)
    }

    /// Reduced model for a parameter vector, via basis superposition.
    pub fn model(&self, flat: &[f64]) -> Result<ReducedModel> {
        let c = self.controller(flat)?;
        let corr = self.basis.combine(&c)?;
        Ok(
            ReducedModel::assemble(&self.system, &self.spectral, &self.auto, corr, Some(&c), c.omega(), &self.ssm)
                .with_trust_radius(self.trust_radius),
        )
    }

    pub fn evaluate(&self, flat: &[f64]) -> Result<f64> {
        tracking_objective(&self.model(flat)?, &self.objective)
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisOutcome {
    pub controller: ControllerParams,
    pub model: ReducedModel,
    pub objective: f64,
    pub optimizer: CmaEsResult,
}

/// Minimizes the tracking objective over the controller coefficients.
pub fn synthesize(problem: &SynthesisProblem, cma: &CmaEsConfig, x0: &[f64]) -> Result<SynthesisOutcome> {
    check_dim("initial controller parameters", problem.param_count(), x0.len())?;
    let result = optimize_cma_es(|x| problem.evaluate(x).unwrap_or(f64::NAN), x0, cma)?;
    let controller = problem.controller(&result.best_params)?;
    let model = problem.model(&result.best_params)?;
    Ok(SynthesisOutcome {
        controller,
        model,
        objective: result.best_value,
        optimizer: result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::ControllerFamily;
    use crate::spectral::{eigendecompose, select_slow_subspace};
    use crate::system::{pendulum, PendulumParams};

    fn setup() -> (ControlAffineSystem, SpectralData) {
        let sys = pendulum(PendulumParams::default(), 5, 1.0).unwrap();
        let spec = select_slow_subspace(&eigendecompose(sys.a()).unwrap(), 1).unwrap();
        (sys, spec)
    }

    fn fig3_reference() -> Arc<dyn Reference> {
        Arc::new(SinusoidalReference::from_degrees(&[30.0], &[60.0]).unwrap())
    }

    /// Replays a stored period of outputs at the grid phases.
    struct Replay {
        omega: f64,
        t1: f64,
        dt: f64,
        ys: Vec<f64>,
    }

    impl Reference for Replay {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, phi: f64) -> Vec<f64> {
            let k = ((phi / self.omega - self.t1) / self.dt).round();
            vec![self.ys[k.clamp(0.0, (self.ys.len() - 1) as f64) as usize]]
        }
        fn phase_derivative(&self, _phi: f64) -> Vec<f64> {
            vec![0.0]
        }
    }

    #[test]
    fn sinusoid_in_degrees() {
        let r = SinusoidalReference::from_degrees(&[30.0], &[60.0]).unwrap();
        assert!((r.value(PI / 2.0)[0] - 90f64.to_radians()).abs() < 1e-15);
        assert!((r.value(0.0)[0] - 30f64.to_radians()).abs() < 1e-15);
        assert!((reference_scale(&r, 1000) - 90f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn zero_controller_zero_reference_vanishes() {
        let (sys, spec) = setup();
        let c = ControllerParams::zeros(1, 1, &ControllerFamily::default(), PI).unwrap();
        let m = ReducedModel::solve(&sys, &spec, &c, &SsmConfig::default()).unwrap();
        let zero: Arc<dyn Reference> = Arc::new(SinusoidalReference {
            offset: vec![0.0],
            amplitude: vec![0.0],
        });
        let mut o = ObjectiveSpec::new(zero, PI).unwrap();
        o.p_init = Some(vec![0.5]);
        let short = tracking_objective(&m, &o).unwrap();
        o.settle_periods = 20;
        let long = tracking_objective(&m, &o).unwrap();
        assert!(short > 0.0 && long < 1e-2 * short, "{short} {long}");
    }

    #[test]
    fn self_tracking_is_zero() {
        let (sys, spec) = setup();
        let flat = [0.3, 1.0, -0.5, -2.0, 0.2, 0.1];
        let c = ControllerParams::from_flat(1, 1, &ControllerFamily::default(), PI, &flat).unwrap();
        let m = ReducedModel::solve(&sys, &spec, &c, &SsmConfig::default()).unwrap();
        let t = 2.0;
        let steps = 1000;
        let grid = uniform_grid(0.0, 3.0 * t, 3 * steps);
        let traj = integrate(
            |tt, q, dq| m.reduced_rhs_into(q, PI * tt, dq),
            &[0.0],
            &grid,
            &IntegratorConfig::Rk4Fixed { dt: t / steps as f64 },
            TrajectoryKind::Reduced,
        )
        .unwrap();
        let ys = (2 * steps..=3 * steps)
            .map(|k| m.lift(&traj.states[k], PI * grid[k]).unwrap().x[0])
            .collect();
        let replay: Arc<dyn Reference> = Arc::new(Replay {
            omega: PI,
            t1: 2.0 * t,
            dt: t / steps as f64,
            ys,
        });
        let o = ObjectiveSpec::new(replay, PI).unwrap();
        assert!(tracking_objective(&m, &o).unwrap() < 1e-14);
    }

    #[test]
    fn trust_radius_violation_returns_penalty() {
        let (sys, spec) = setup();
        let c = ControllerParams::from_flat(1, 1, &ControllerFamily::default(), PI, &[50.0, 0.0, 0.0, 0.0, 0.0, 0.0])
            .unwrap();
        let m = ReducedModel::solve(&sys, &spec, &c, &SsmConfig::default())
            .unwrap()
            .with_trust_radius(Some(0.1));
        let o = ObjectiveSpec::new(fig3_reference(), PI).unwrap();
        assert_eq!(tracking_objective(&m, &o).unwrap(), o.penalty);
        assert_eq!(o.penalty, 1e6 * 90f64.to_radians());
    }

    #[test]
    fn pendulum_trust_radius_from_reference() {
        let (sys, spec) = setup();
        let r = reference_trust_radius(&sys, &spec, fig3_reference().as_ref(), 1000).unwrap();
        let v11 = spec.right_vectors()[(0, 0)].re;
        assert!((r - 1.2 * 90f64.to_radians() / v11).abs() < 1e-9);
    }

    #[test]
    fn problem_model_matches_direct_solve() {
        let (sys, spec) = setup();
        let template = ControllerParams::zeros(1, 1, &ControllerFamily::default(), PI).unwrap();
        let o = ObjectiveSpec::new(fig3_reference(), PI).unwrap();
        let p = SynthesisProblem::new(&sys, &spec, &SsmConfig::default(), &template, o.clone(), None).unwrap();
        let flat = [1.0, -2.0, 3.0, 0.5, 0.25, -4.0];
        let direct = ReducedModel::solve(&sys, &spec, &p.controller(&flat).unwrap(), &SsmConfig::default()).unwrap();
        let a = tracking_objective(&direct, &o).unwrap();
        let b = p.evaluate(&flat).unwrap();
        assert!((a - b).abs() <= 1e-9 * a, "{a} {b}");
    }

    #[test]
    fn mismatched_frequency_rejected() {
        let (sys, spec) = setup();
        let template = ControllerParams::zeros(1, 1, &ControllerFamily::default(), 2.0).unwrap();
        let o = ObjectiveSpec::new(fig3_reference(), PI).unwrap();
        assert!(SynthesisProblem::new(&sys, &spec, &SsmConfig::default(), &template, o, None).is_err());
    }
}
