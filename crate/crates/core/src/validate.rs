//! Full-order and reduced closed-loop simulation, error metrics and the
//! damping/amplitude robustness sweep.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::ControllerParams;
use crate::error::{check_dim, Error, Result};
use crate::integrate::{integrate, uniform_grid, IntegratorConfig, Trajectory, TrajectoryKind};
use crate::objective::Reference;
use crate::spectral::{eigendecompose, select_slow_subspace, spectral_quotient};
use crate::ssm::{ReducedModel, SsmConfig};
use crate::system::{pendulum, ControlAffineSystem, PendulumParams};

/// Integrates `x' = A x + f0(x) + eps sum_i f_i(x) kappa_i(H x, Omega t)`.
/// `exact` switches to the closed-form drift when the system carries one.
#[allow(clippy::too_many_arguments)]
pub fn simulate_closed_loop_fom(
    system: &ControlAffineSystem,
    controller: Option<&ControllerParams>,
    x0: &[f64],
    periods: usize,
    samples_per_period: usize,
    omega: f64,
    integrator: &IntegratorConfig,
    exact: bool,
) -> Result<Trajectory> {
    check_dim("initial state", system.state_dim(), x0.len())?;
    if let Some(c) = controller {
        check_dim("controller inputs", system.input_dim(), c.inputs())?;
        check_dim("controller outputs", system.output_dim(), c.outputs())?;
    }
    let t_end = periods as f64 * 2.0 * PI / omega;
    let grid = uniform_grid(0.0, t_end, periods * samples_per_period);
    let mut u = vec![0.0; system.input_dim()];
    integrate(
        |t, x, dx| {
            if let Some(c) = controller {
                c.eval_into(&system.output(x), omega * t, &mut u);
            }
            system.rhs_into(x, &u, exact, dx);
        },
        x0,
        &grid,
        integrator,
        TrajectoryKind::FullState,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RomSimulation {
    pub reduced: Trajectory,
    pub lifted: Trajectory,
    pub outside_trust_region: Vec<bool>,
}

pub fn simulate_rom(
    model: &ReducedModel,
    q0: &[f64],
    periods: usize,
    samples_per_period: usize,
    integrator: &IntegratorConfig,
) -> Result<RomSimulation> {
    check_dim("initial reduced state", model.reduced_dim(), q0.len())?;
    let omega = model.omega();
    let t_end = periods as f64 * 2.0 * PI / omega;
    let grid = uniform_grid(0.0, t_end, periods * samples_per_period);
    let reduced = integrate(
        |t, q, dq| model.reduced_rhs_into(q, omega * t, dq),
        q0,
        &grid,
        integrator,
        TrajectoryKind::Reduced,
    )?;
    let mut outside = Vec::with_capacity(reduced.len());
    let lifted = reduced.map(TrajectoryKind::FullState, |t, q| {
        let l = model.lift(q, omega * t).expect("dimension checked");
        outside.push(l.outside_trust_region);
        l.x
    });
    Ok(RomSimulation {
        reduced,
        lifted,
        outside_trust_region: outside,
    })
}

#[derive(Clone)]
pub struct ComparisonSpec {
    pub reference: Arc<dyn Reference>,
    pub omega: f64,
    pub settle_periods: usize,
    pub total_periods: usize,
    pub samples_per_period: usize,
    pub integrator: IntegratorConfig,
    /// Use the closed-form drift for the full-order model.
    pub exact_drift: bool,
}

impl ComparisonSpec {
    /// `t1 = 2T`, `tf = 5T`, 1000 samples per period, exact drift.
    pub fn new(reference: Arc<dyn Reference>, omega: f64) -> Self {
        Self {
            reference,
            omega,
            settle_periods: 2,
            total_periods: 5,
            samples_per_period: 1000,
            integrator: IntegratorConfig::default(),
            exact_drift: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.total_periods <= self.settle_periods {
            return Err(Error::InvalidInput(format!(
                "total periods {} must exceed settle periods {}",
                self.total_periods, self.settle_periods
            )));
        }
        if self.samples_per_period == 0 || !(self.omega > 0.0) {
            return Err(Error::InvalidInput("need samples_per_period > 0 and omega > 0".into()));
        }
        Ok(())
    }
}

/// Steady-state errors over `[t1, tf]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    /// Full-order output RMSE against the reference, per output component.
    pub rmse: Vec<f64>,
    /// RMSE of the output rate `H x'` against `d z*/dt`, per output component.
    pub rmse_rate: Vec<f64>,
    /// Largest absolute output error over the window.
    pub max_abs_error: f64,
    /// RMS of `||x_FOM - lift(p, Omega t)||` over the window.
    pub fom_rom_gap: f64,
    /// Same, over the final period only.
    pub fom_rom_gap_final_period: f64,
    /// Largest `||x - mean(x)||` of the full-order orbit over the final period.
    pub orbit_amplitude: f64,
    /// Reduced-model output RMSE against the reference.
    pub rom_rmse: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub metrics: ErrorMetrics,
    pub fom: Trajectory,
    pub rom: RomSimulation,
}

/// Trapezoidal RMS of `values` on a uniform grid.
fn trapezoid_rms(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return values.first().map_or(0.0, |v| v.abs());
    }
    let k = values.len() - 1;
    let inner: f64 = values[1..k].iter().map(|v| v * v).sum();
    ((inner + 0.5 * (values[0].powi(2) + values[k].powi(2))) / k as f64).sqrt()
}

/// Simulates both models from `x0` (the reduced one from its projection) and
/// scores them against the reference.
pub fn compare_fom_rom(
    system: &ControlAffineSystem,
    model: &ReducedModel,
    x0: &[f64],
    spec: &ComparisonSpec,
) -> Result<Comparison> {
    spec.validate()?;
    check_dim("reference dimension", system.output_dim(), spec.reference.dim())?;
    let controller = model.controller();
    let m = spec.samples_per_period;
    let fom = simulate_closed_loop_fom(
        system,
        controller,
        x0,
        spec.total_periods,
        m,
        spec.omega,
        &spec.integrator,
        spec.exact_drift,
    )?;
    let q0 = model.project(x0)?;
    let rom = simulate_rom(model, &q0, spec.total_periods, m, &spec.integrator)?;

    let start = spec.settle_periods * m;
    let last_start = (spec.total_periods - 1) * m;
    let o = system.output_dim();
    let mut out_err = vec![Vec::new(); o];
    let mut rate_err = vec![Vec::new(); o];
    let mut rom_err = vec![Vec::new(); o];
    let mut gaps = Vec::new();
    let mut max_abs: f64 = 0.0;
    let mut u = vec![0.0; system.input_dim()];
    let mut dx = vec![0.0; system.state_dim()];
    for k in start..fom.len() {
        let phi = spec.omega * fom.times[k];
        let x = &fom.states[k];
        let y = system.output(x);
        if let Some(c) = controller {
            c.eval_into(&y, phi, &mut u);
        }
        system.rhs_into(x, &u, spec.exact_drift, &mut dx);
        let ydot = system.output(&dx);
        let z = spec.reference.value(phi);
        let zdot: Vec<f64> = spec.reference.phase_derivative(phi).iter().map(|v| v * spec.omega).collect();
        let y_rom = system.output(&rom.lifted.states[k]);
        for i in 0..o {
            out_err[i].push(y[i] - z[i]);
            rate_err[i].push(ydot[i] - zdot[i]);
            rom_err[i].push(y_rom[i] - z[i]);
            max_abs = max_abs.max((y[i] - z[i]).abs());
        }
        let g = x
            .iter()
            .zip(&rom.lifted.states[k])
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        gaps.push(g);
    }
    let final_states = &fom.states[last_start..];
    let n = system.state_dim();
    let mean: Vec<f64> = (0..n)
        .map(|i| final_states.iter().map(|x| x[i]).sum::<f64>() / final_states.len() as f64)
        .collect();
    let orbit_amplitude = final_states
        .iter()
        .map(|x| x.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let metrics = ErrorMetrics {
        rmse: out_err.iter().map(|e| trapezoid_rms(e)).collect(),
        rmse_rate: rate_err.iter().map(|e| trapezoid_rms(e)).collect(),
        max_abs_error: max_abs,
        fom_rom_gap: trapezoid_rms(&gaps),
        fom_rom_gap_final_period: trapezoid_rms(&gaps[last_start - start..]),
        orbit_amplitude,
        rom_rmse: rom_err.iter().map(|e| trapezoid_rms(e)).collect(),
    };
    Ok(Comparison { metrics, fom, rom })
}

/// `max ||x(t + T) - x(t)|| / max ||x||` over the period starting at sample `from`.
pub fn periodicity_defect(traj: &Trajectory, samples_per_period: usize, from: usize) -> Result<f64> {
    if from + 2 * samples_per_period > traj.len() {
        return Err(Error::InvalidInput("trajectory too short for a periodicity check".into()));
    }
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for k in from..=from + samples_per_period {
        let (a, b) = (&traj.states[k], &traj.states[k + samples_per_period]);
        num = num.max(norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>()));
        den = den.max(norm(a));
    }
    Ok(if den > 0.0 { num / den } else { num })
}

/// Least-squares slope of `ln gap(t)` over `[0, t_end]`, using only samples
/// well above the late-time floor (the gap stops decaying once it reaches
/// the reduced model's own truncation error).
pub fn transient_decay_rate(times: &[f64], gaps: &[f64], t_end: f64) -> Result<f64> {
    let floor = gaps
        .iter()
        .zip(times)
        .filter(|(_, &t)| t >= t_end)
        .map(|(g, _)| *g)
        .fold(f64::INFINITY, f64::min);
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(gaps)
        .take_while(|(&t, &g)| t <= t_end && g > 10.0 * floor)
        .filter(|(_, &g)| g > 0.0)
        .map(|(&t, &g)| (t, g.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InvalidInput("too few transient samples above the floor".into()));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mg = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - mg)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Largest invariance residual at each radius, sampled along every reduced
/// axis with both signs at phases `0` and `pi/2`.
pub fn residual_scan(model: &ReducedModel, radii: &[f64]) -> Result<Vec<f64>> {
    let n = model.reduced_dim();
    radii
        .iter()
        .map(|&r| {
            let mut samples = Vec::with_capacity(4 * n);
            for k in 0..n {
                for sign in [1.0, -1.0] {
                    for phi in [0.0, 0.5 * PI] {
                        let mut q = vec![0.0; n];
                        q[k] = sign * r;
                        samples.push((q, phi));
                    }
                }
            }
            Ok(model.invariance_residual(&samples)?.into_iter().fold(0.0, f64::max))
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let (lx, ly): (Vec<f64>, Vec<f64>) = xs.iter().zip(ys).map(|(x, y)| (x.ln(), y.ln())).unzip();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Damping values and controller amplitude scales for the robustness sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub dampings: Vec<f64>,
    pub amplitude_scales: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            dampings: vec![7.0, 10.0, 15.0, 20.0, 35.0],
            amplitude_scales: vec![0.25, 0.5, 1.0, 2.0, 4.0],
        }
    }
}

/// Pendulum cell template: every cell rebuilds the system with its own
/// damping and runs the nominal controller with its state-independent
/// (`j = 0`) torque scaled by the cell amplitude; feedback gains stay fixed.
#[derive(Clone)]
pub struct SweepTemplate {
    pub params: PendulumParams,
    pub taylor_degree: usize,
    pub ssm: SsmConfig,
    pub controller: ControllerParams,
    pub comparison: ComparisonSpec,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub b: f64,
    pub sigma: Option<usize>,
    pub amplitude_scale: f64,
    /// Infinite when the cell failed.
    pub gap: f64,
    pub rmse_theta_deg: f64,
    pub error: Option<String>,
}

fn sweep_cell(template: &SweepTemplate, b: f64, scale: f64) -> Result<(usize, f64, f64)> {
    let sys = pendulum(PendulumParams { b, ..template.params }, template.taylor_degree, 1.0)?;
    let spec = select_slow_subspace(&eigendecompose(sys.a())?, 1)?;
    let sigma = spectral_quotient(&spec)?;
    let mut c = template.controller.clone();
    // the state-independent (j = 0) block comes first in flat order
    let forcing = c.inputs() * c.slots();
    let scaled: Vec<f64> = c
        .flat()
        .iter()
        .enumerate()
        .map(|(i, v)| if i < forcing { v * scale } else { *v })
        .collect();
    c.set_flat(&scaled)?;
    let model = ReducedModel::solve(&sys, &spec, &c, &template.ssm)?;
    let cmp = compare_fom_rom(&sys, &model, &template.x0, &template.comparison)?;
    Ok((sigma, cmp.metrics.fom_rom_gap, cmp.metrics.rmse[0].to_degrees()))
}

/// Runs every grid cell (in parallel, output in grid order); failures are
/// recorded in the row and do not stop the sweep.
pub fn robustness_sweep(grid: &SweepGrid, template: &SweepTemplate) -> Vec<SweepRow> {
    let cells: Vec<(f64, f64)> = grid
        .dampings
        .iter()
        .flat_map(|&b| grid.amplitude_scales.iter().map(move |&s| (b, s)))
        .collect();
    cells
        .par_iter()
        .map(|&(b, s)| match sweep_cell(template, b, s) {
            Ok((sigma, gap, rmse)) => SweepRow {
                b,
                sigma: Some(sigma),
                amplitude_scale: s,
                gap: if gap.is_finite() { gap } else { f64::INFINITY },
                rmse_theta_deg: rmse,
                error: None,
            },
            Err(e) => SweepRow {
                b,
                sigma: None,
                amplitude_scale: s,
                gap: f64::INFINITY,
                rmse_theta_deg: f64::NAN,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

/// Columns: `b` (N m s/rad), `sigma`, `amplitude_scale` (x nominal), `gap`
/// (state units), `rmse_theta_deg` (deg), `error`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("b,sigma,amplitude_scale,gap,rmse_theta_deg,error\n");
    for r in rows {
        let sigma = r.sigma.map(|v| v.to_string()).unwrap_or_default();
        let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        let _ = writeln!(s, "{},{},{},{},{},{}", r.b, sigma, r.amplitude_scale, r.gap, r.rmse_theta_deg, err);
    }
    s
}
