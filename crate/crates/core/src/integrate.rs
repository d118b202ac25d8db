//! Explicit ODE integration onto a fixed reporting grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    FullState,
    Output,
    Reduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub kind: TrajectoryKind,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&[f64]> {
        self.states.last().map(|s| s.as_slice())
    }

    /// Samples with `t >= t_start` (up to a small slack for grid roundoff).
    pub fn window(&self, t_start: f64) -> Trajectory {
        let slack = 1e-9 * (1.0 + t_start.abs());
        let first = self.times.iter().position(|&t| t >= t_start - slack).unwrap_or(self.len());
        Trajectory {
            times: self.times[first..].to_vec(),
            states: self.states[first..].to_vec(),
            kind: self.kind,
        }
    }

    pub fn map(&self, kind: TrajectoryKind, mut f: impl FnMut(f64, &[f64]) -> Vec<f64>) -> Trajectory {
        Trajectory {
            times: self.times.clone(),
            states: self.times.iter().zip(&self.states).map(|(&t, x)| f(t, x)).collect(),
            kind,
        }
    }

    /// Equal lengths and strictly increasing times.
    pub fn check(&self) -> Result<()> {
        if self.times.len() != self.states.len() {
            return Err(Error::InvalidInput("trajectory times and states differ in length".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("trajectory times must be strictly increasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntegratorConfig {
    Rk4Fixed {
        dt: f64,
    },
    Rk45Adaptive {
        atol: f64,
        rtol: f64,
        #[serde(default)]
        max_step: Option<f64>,
    },
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig::Rk45Adaptive {
            atol: 1e-12,
            rtol: 1e-9,
            max_step: None,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            IntegratorConfig::Rk4Fixed { dt } if !(dt > 0.0 && dt.is_finite()) => {
                Err(Error::InvalidInput(format!("rk4 step must be positive, got {dt}")))
            }
            IntegratorConfig::Rk45Adaptive { atol, rtol, max_step } => {
                if !(atol > 0.0 && rtol > 0.0) {
                    return Err(Error::InvalidInput("rk45 tolerances must be positive".into()));
                }
                if let Some(h) = max_step {
                    if !(h > 0.0) {
                        return Err(Error::InvalidInput("rk45 max_step must be positive".into()));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

const MAX_STEPS: usize = 10_000_000;

/// `n` equal intervals on `[t0, t1]` (so `n + 1` grid points).
pub fn uniform_grid(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    let h = (t1 - t0) / n as f64;
    (0..=n).map(|k| if k == n { t1 } else { t0 + k as f64 * h }).collect()
}

/// Integrates `x' = rhs(t, x)` and reports the state at every grid point.
pub fn integrate<F>(rhs: F, x0: &[f64], grid: &[f64], cfg: &IntegratorConfig, kind: TrajectoryKind) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    cfg.validate()?;
    if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("reporting grid must be non-empty and strictly increasing".into()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integration {
            t: grid[0],
            reason: "non-finite initial state".into(),
        });
    }
    let mut stepper = Stepper::new(rhs, x0.len());
    let mut x = x0.to_vec();
    let mut states = Vec::with_capacity(grid.len());
    states.push(x.clone());
    let mut h_guess = None;
    for w in grid.windows(2) {
        match *cfg {
            IntegratorConfig::Rk4Fixed { dt } => {
                let span = w[1] - w[0];
                let m = ((span / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
                let h = span / m as f64;
                for k in 0..m {
                    let t = w[0] + k as f64 * h;
                    stepper.rk4(t, h, &mut x);
                    if x.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Integration {
                            t,
                            reason: "non-finite state".into(),
                        });
                    }
                }
            }
            IntegratorConfig::Rk45Adaptive { atol, rtol, max_step } => {
                h_guess = Some(stepper.dopri_span(w[0], w[1], &mut x, atol, rtol, max_step, h_guess)?);
            }
        }
        states.push(x.clone());
    }
    Ok(Trajectory {
        times: grid.to_vec(),
        states,
        kind,
    })
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

struct Stepper<F> {
    rhs: F,
    k: Vec<Vec<f64>>,
    tmp: Vec<f64>,
    err: Vec<f64>,
}

impl<F: FnMut(f64, &[f64], &mut [f64])> Stepper<F> {
    fn new(rhs: F, n: usize) -> Self {
        Self {
            rhs,
            k: vec![vec![0.0; n]; 7],
            tmp: vec![0.0; n],
            err: vec![0.0; n],
        }
    }

    fn rk4(&mut self, t: f64, h: f64, x: &mut [f64]) {
        let n = x.len();
        (self.rhs)(t, x, &mut self.k[0]);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k[0][i];
        }
        (self.rhs)(t + 0.5 * h, &self.tmp, &mut self.k[1]);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k[1][i];
        }
        (self.rhs)(t + 0.5 * h, &self.tmp, &mut self.k[2]);
        for i in 0..n {
            self.tmp[i] = x[i] + h * self.k[2][i];
        }
        (self.rhs)(t + h, &self.tmp, &mut self.k[3]);
        for i in 0..n {
            x[i] += h / 6.0 * (self.k[0][i] + 2.0 * self.k[1][i] + 2.0 * self.k[2][i] + self.k[3][i]);
        }
    }

    /// One trial step; writes the 5th-order solution to `tmp`, returns the scaled error norm.
    fn dopri_trial(&mut self, t: f64, h: f64, x: &[f64], atol: f64, rtol: f64) -> f64 {
        let n = x.len();
        (self.rhs)(t, x, &mut self.k[0]);
        for s in 1..7 {
            for i in 0..n {
                let mut acc = x[i];
                for (j, a) in A[s].iter().enumerate().take(s) {
                    acc += h * a * self.k[j][i];
                }
                self.tmp[i] = acc;
            }
            (self.rhs)(t + C[s] * h, &self.tmp, &mut self.k[s]);
        }
        // stage 7 was evaluated at the 5th-order solution, which is in tmp
        let mut sum = 0.0;
        for i in 0..n {
            let mut e = 0.0;
            for s in 0..7 {
                e += (B5[s] - B4[s]) * self.k[s][i];
            }
            self.err[i] = h * e;
            let sc = atol + rtol * x[i].abs().max(self.tmp[i].abs());
            sum += (self.err[i] / sc).powi(2);
        }
        (sum / n.max(1) as f64).sqrt()
    }

    #[allow(clippy::too_many_arguments)]
    fn dopri_span(
        &mut self,
        t0: f64,
        t1: f64,
        x: &mut [f64],
        atol: f64,
        rtol: f64,
        max_step: Option<f64>,
        h_guess: Option<f64>,
    ) -> Result<f64> {
        let hmax = max_step.unwrap_or(f64::INFINITY);
        let mut t = t0;
        let mut h = h_guess.unwrap_or((t1 - t0).min(1e-3 * (1.0 + t0.abs()))).min(hmax);
        let mut steps = 0;
        while t < t1 {
            steps += 1;
            if steps > MAX_STEPS {
                return Err(Error::Integration {
                    t,
                    reason: "step budget exhausted".into(),
                });
            }
            let remaining = t1 - t;
            let landing = h >= remaining * (1.0 - 1e-12);
            let step = if landing { remaining } else { h };
            if step <= 1e-14 * (1.0 + t.abs()) && !landing {
                return Err(Error::Integration {
                    t,
                    reason: format!("step size underflow (h = {step:e})"),
                });
            }
            let err = self.dopri_trial(t, step, x, atol, rtol);
            if !err.is_finite() || self.tmp.iter().any(|v| !v.is_finite()) {
                h = step * 0.25;
                if h <= 1e-14 * (1.0 + t.abs()) {
                    return Err(Error::Integration {
                        t,
                        reason: "non-finite state".into(),
                    });
                }
                continue;
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if err <= 1.0 {
                x.copy_from_slice(&self.tmp);
                if landing {
                    // a short landing step should not shrink the next interval's first try
                    t = t1;
                    h = h.max(step * factor).min(hmax);
                } else {
                    t += step;
                    h = (step * factor).min(hmax);
                }
            } else {
                h = step * factor.min(1.0);
            }
        }
        Ok(h)
    }
}
