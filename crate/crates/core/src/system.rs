//! Control-affine systems `x' = A x + f0(x) + eps * sum_i f_i(x) u_i`, `y = H x`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::field::{PolynomialVectorField, TermSpec};

/// Closed-form replacement for the Taylor-truncated drift, used by the
/// full-order simulator so truncation error stays attributable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExactDrift {
    /// `f0(x) = (0, a (x1 - sin x1))` with `a = g / l`.
    Pendulum { gravity_over_length: f64 },
}

impl ExactDrift {
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match *self {
            ExactDrift::Pendulum {
                gravity_over_length: a,
            } => out[1] += a * (x[0] - x[0].sin()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ControlAffineSystem {
    a: DMatrix<f64>,
    f0: PolynomialVectorField,
    controls: Vec<PolynomialVectorField>,
    h: DMatrix<f64>,
    epsilon: f64,
    exact_drift: Option<ExactDrift>,
}

impl ControlAffineSystem {
    pub fn new(
        a: DMatrix<f64>,
        f0: PolynomialVectorField,
        controls: Vec<PolynomialVectorField>,
        h: DMatrix<f64>,
        epsilon: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::InvalidInput(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        check_dim("f0 dimension", n, f0.dim())?;
        if controls.is_empty() {
            return Err(Error::InvalidInput("at least one control channel is required".into()));
        }
        for f in &controls {
            check_dim("control field dimension", n, f.dim())?;
        }
        check_dim("H columns", n, h.ncols())?;
        if h.nrows() == 0 || h.nrows() > n {
            return Err(Error::InvalidInput(format!(
                "output count must satisfy 1 <= o <= N, got o = {}",
                h.nrows()
            )));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidInput(format!("epsilon must be positive, got {epsilon}")));
        }
        if f0.degrees().contains(&1) {
            return Err(Error::InvalidInput(
                "f0 must not carry linear terms; move them into A".into(),
            ));
        }
        Ok(Self {
            a,
            f0,
            controls,
            h,
            epsilon,
            exact_drift: None,
        })
    }

    pub fn with_exact_drift(mut self, drift: ExactDrift) -> Self {
        self.exact_drift = Some(drift);
        self
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.controls.len()
    }

    pub fn output_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn f0(&self) -> &PolynomialVectorField {
        &self.f0
    }

    pub fn controls(&self) -> &[PolynomialVectorField] {
        &self.controls
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn exact_drift(&self) -> Option<ExactDrift> {
        self.exact_drift
    }

    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        (0..self.h.nrows())
            .map(|r| (0..x.len()).map(|c| self.h[(r, c)] * x[c]).sum())
            .collect()
    }

    /// `A x + f0(x) + eps * sum_i f_i(x) u_i` with the polynomial drift.
    pub fn eval_rhs(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.rhs_checked(x, u, false)
    }

    /// Same as [`eval_rhs`](Self::eval_rhs) but with the exact drift when one
    /// is attached (falls back to the polynomial drift otherwise).
    pub fn eval_rhs_exact(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.rhs_checked(x, u, true)
    }

    fn rhs_checked(&self, x: &[f64], u: &[f64], exact: bool) -> Result<Vec<f64>> {
        check_dim("state", self.state_dim(), x.len())?;
        check_dim("input", self.input_dim(), u.len())?;
        let mut out = vec![0.0; x.len()];
        self.rhs_into(x, u, exact, &mut out);
        Ok(out)
    }

    pub(crate) fn rhs_into(&self, x: &[f64], u: &[f64], exact: bool, out: &mut [f64]) {
        let n = x.len();
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..n).map(|j| self.a[(i, j)] * x[j]).sum();
        }
        match (exact, self.exact_drift) {
            (true, Some(drift)) => drift.eval_into(x, out),
            _ => self.f0.eval_into(x, out),
        }
        let mut scratch = vec![0.0; n];
        for (f, &ui) in self.controls.iter().zip(u) {
            if ui == 0.0 {
                continue;
            }
            scratch.iter_mut().for_each(|s| *s = 0.0);
            f.eval_into(x, &mut scratch);
            for (o, s) in out.iter_mut().zip(&scratch) {
                *o += self.epsilon * ui * s;
            }
        }
    }

    pub fn check_assumptions(&self) -> AssumptionReport {
        let eigs = self.a.clone().complex_eigenvalues();
        let max_real_part = eigs.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
        let f0_origin = self
            .f0
            .eval(&vec![0.0; self.state_dim()])
            .expect("dimension validated at construction");
        let f0_at_origin_norm = f0_origin.iter().map(|v| v * v).sum::<f64>().sqrt();
        let stable = max_real_part < 0.0;
        let equilibrium_ok = f0_at_origin_norm <= 1e-12;
        let mut details = Vec::new();
        if !stable {
            details.push(format!(
                "A is not Hurwitz: max Re(lambda) = {max_real_part}"
            ));
        }
        if !equilibrium_ok {
            details.push(format!(
                "origin is not an equilibrium: |f0(0)| = {f0_at_origin_norm:e}"
            ));
        }
        AssumptionReport {
            stable,
            equilibrium_ok,
            max_real_part,
            f0_at_origin_norm,
            details,
        }
    }

    pub fn to_spec(&self) -> InlineSystemSpec {
        InlineSystemSpec {
            a: rows_of(&self.a),
            f0: self.f0.to_terms(),
            controls: self.controls.iter().map(PolynomialVectorField::to_terms).collect(),
            h: rows_of(&self.h),
            epsilon: self.epsilon,
            exact_drift: self.exact_drift,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub stable: bool,
    pub equilibrium_ok: bool,
    pub max_real_part: f64,
    pub f0_at_origin_norm: f64,
    pub details: Vec<String>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Config(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(nr, nc, |r, c| rows[r][c]))
}

/// Pendulum parameters `{m, l, g, b}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    pub m: f64,
    pub l: f64,
    pub g: f64,
    pub b: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            m: 1.0,
            l: 1.0,
            g: 9.81,
            b: 35.0,
        }
    }
}

pub const DEFAULT_PENDULUM_TAYLOR_DEGREE: usize = 5;

/// Damped pendulum `theta'' = -(b/(m l^2)) theta' - (g/l) sin theta + eps u/(m l^2)`
/// split into `A`, a Taylor-truncated `f0` of the given odd/even degree, and
/// a constant input field. The exact `sin` drift is attached.
pub fn pendulum(params: PendulumParams, taylor_degree: usize, epsilon: f64) -> Result<ControlAffineSystem> {
    let PendulumParams { m, l, g, b } = params;
    if [m, l, g, b].iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Config(format!("pendulum parameters must be positive: {params:?}")));
    }
    let a_coef = g / l;
    let damping = b / (m * l * l);
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -a_coef, -damping]);
    let mut f0 = PolynomialVectorField::zero(2);
    // x - sin x = sum_{k>=1} (-1)^{k+1} x^{2k+1} / (2k+1)!
    let mut k = 3;
    while k <= taylor_degree {
        let fact: f64 = (1..=k).map(|i| i as f64).product();
        let sign = if (k / 2) % 2 == 1 { 1.0 } else { -1.0 };
        f0.add_term(&vec![0; k], 1, sign * a_coef / fact)?;
        k += 2;
    }
    let f1 = PolynomialVectorField::constant(&[0.0, 1.0 / (m * l * l)]);
    let h = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    Ok(ControlAffineSystem::new(a, f0, vec![f1], h, epsilon)?.with_exact_drift(ExactDrift::Pendulum {
        gravity_over_length: a_coef,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSystemSpec {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(default)]
    pub f0: Vec<TermSpec>,
    pub controls: Vec<Vec<TermSpec>>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    #[serde(default = "one")]
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_drift: Option<ExactDrift>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetSystemSpec {
    pub preset: String,
    #[serde(default)]
    pub m: Option<f64>,
    #[serde(default)]
    pub l: Option<f64>,
    #[serde(default)]
    pub g: Option<f64>,
    #[serde(default)]
    pub b: Option<f64>,
    #[serde(default)]
    pub taylor_degree: Option<usize>,
    #[serde(default)]
    pub epsilon: Option<f64>,
}

/// System definition as it appears in JSON documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemSpec {
    Preset(PresetSystemSpec),
    Inline(InlineSystemSpec),
}

impl SystemSpec {
    pub fn pendulum(params: PendulumParams) -> Self {
        SystemSpec::Preset(PresetSystemSpec {
            preset: "pendulum".into(),
            m: Some(params.m),
            l: Some(params.l),
            g: Some(params.g),
            b: Some(params.b),
            taylor_degree: Some(DEFAULT_PENDULUM_TAYLOR_DEGREE),
            epsilon: Some(1.0),
        })
    }

    /// Pendulum parameters and Taylor degree, for preset systems.
    pub fn pendulum_params(&self) -> Option<(PendulumParams, usize)> {
        match self {
            SystemSpec::Preset(p) if p.preset == "pendulum" => {
                let d = PendulumParams::default();
                let params = PendulumParams {
                    m: p.m.unwrap_or(d.m),
                    l: p.l.unwrap_or(d.l),
                    g: p.g.unwrap_or(d.g),
                    b: p.b.unwrap_or(d.b),
                };
                Some((params, p.taylor_degree.unwrap_or(DEFAULT_PENDULUM_TAYLOR_DEGREE)))
            }
            _ => None,
        }
    }

    pub fn build(&self) -> Result<ControlAffineSystem> {
        match self {
            SystemSpec::Preset(p) => {
                let (params, degree) = self
                    .pendulum_params()
                    .ok_or_else(|| Error::Config(format!("unknown system preset '{}'", p.preset)))?;
                pendulum(params, degree, p.epsilon.unwrap_or(1.0))
            }
            SystemSpec::Inline(s) => {
                let a = matrix_from_rows(&s.a, "A")?;
                let n = a.nrows();
                let f0 = PolynomialVectorField::from_terms(n, &s.f0)?;
                let controls = s
                    .controls
                    .iter()
                    .map(|t| PolynomialVectorField::from_terms(n, t))
                    .collect::<Result<Vec<_>>>()?;
                let h = matrix_from_rows(&s.h, "H")?;
                let sys = ControlAffineSystem::new(a, f0, controls, h, s.epsilon)?;
                Ok(match s.exact_drift {
                    Some(d) => sys.with_exact_drift(d),
                    None => sys,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pend() -> ControlAffineSystem {
        pendulum(PendulumParams::default(), 5, 1.0).unwrap()
    }

    #[test]
    fn origin_is_equilibrium() {
        assert_eq!(pend().eval_rhs(&[0.0, 0.0], &[0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn unit_torque_at_rest() {
        let y = pend().eval_rhs(&[0.0, 0.0], &[1.0]).unwrap();
        assert_eq!(y, vec![0.0, 1.0]);
    }

    #[test]
    fn exact_drift_at_thirty_degrees() {
        let y = pend()
            .eval_rhs_exact(&[std::f64::consts::PI / 6.0, 0.0], &[0.0])
            .unwrap();
        assert!(y[0].abs() < 1e-15);
        assert!((y[1] + 4.905).abs() < 1e-12, "{}", y[1]);
    }

    #[test]
    fn taylor_coefficients_of_pendulum_drift() {
        let sys = pend();
        let terms = sys.f0().to_terms();
        assert_eq!(terms.len(), 2);
        assert!((terms[0].coefficient - 9.81 / 6.0).abs() < 1e-15);
        assert!((terms[1].coefficient + 9.81 / 120.0).abs() < 1e-15);
    }

    #[test]
    fn truncation_error_bounded_by_next_term() {
        let cubic = pendulum(PendulumParams::default(), 3, 1.0).unwrap();
        for k in 0..=20 {
            let x1 = -0.1 + 0.01 * k as f64;
            let approx = cubic.f0().eval(&[x1, 0.0]).unwrap()[1];
            let exact = 9.81 * (x1 - x1.sin());
            // error divided by g/l is the sin remainder
            assert!((approx - exact).abs() / 9.81 <= x1.abs().powi(5) / 120.0 + 1e-18);
        }
    }

    #[test]
    fn assumptions_for_pendulum() {
        let r = pend().check_assumptions();
        assert!(r.stable && r.equilibrium_ok);
    }

    #[test]
    fn undamped_oscillator_is_not_stable() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let sys = ControlAffineSystem::new(
            a,
            PolynomialVectorField::zero(2),
            vec![PolynomialVectorField::constant(&[0.0, 1.0])],
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            1.0,
        )
        .unwrap();
        assert!(!sys.check_assumptions().stable);
    }

    #[test]
    fn constant_drift_breaks_equilibrium() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let sys = ControlAffineSystem::new(
            a,
            PolynomialVectorField::constant(&[0.1, 0.0]),
            vec![PolynomialVectorField::constant(&[0.0, 1.0])],
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            1.0,
        )
        .unwrap();
        let r = sys.check_assumptions();
        assert!(r.stable);
        assert!(!r.equilibrium_ok);
    }

    #[test]
    fn linear_terms_in_f0_rejected() {
        let mut f0 = PolynomialVectorField::zero(1);
        f0.add_term(&[0], 0, 1.0).unwrap();
        let err = ControlAffineSystem::new(
            DMatrix::from_element(1, 1, -1.0),
            f0,
            vec![PolynomialVectorField::constant(&[1.0])],
            DMatrix::from_element(1, 1, 1.0),
            1.0,
        );
        assert!(err.is_err());
    }

    #[test]
    fn json_preset_and_inline_agree() {
        let preset: SystemSpec =
            serde_json::from_str(r#"{"preset":"pendulum","b":35,"taylor_degree":3}"#).unwrap();
        let sys = preset.build().unwrap();
        let text = serde_json::to_string(&sys.to_spec()).unwrap();
        let inline: SystemSpec = serde_json::from_str(&text).unwrap();
        assert!(matches!(inline, SystemSpec::Inline(_)));
        let sys2 = inline.build().unwrap();
        let x = [0.3, -0.2];
        assert_eq!(
            sys.eval_rhs(&x, &[0.7]).unwrap(),
            sys2.eval_rhs(&x, &[0.7]).unwrap()
        );
        assert_eq!(
            sys.eval_rhs_exact(&x, &[0.7]).unwrap(),
            sys2.eval_rhs_exact(&x, &[0.7]).unwrap()
        );
    }

    #[test]
    fn unknown_preset_is_config_error() {
        let spec: SystemSpec = serde_json::from_str(r#"{"preset":"cartpole"}"#).unwrap();
        assert!(matches!(spec.build(), Err(Error::Config(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rhs_is_affine_in_input(
                x in prop::array::uniform2(-2.0..2.0f64),
                u1 in -10.0..10.0f64,
                u2 in -10.0..10.0f64,
                a in -3.0..3.0f64,
                b in -3.0..3.0f64,
            ) {
                let s = pend();
                let f = |u: f64| s.eval_rhs(&x, &[u]).unwrap();
                let lhs = f(a * u1 + b * u2);
                let (f1, f2, f0) = (f(u1), f(u2), f(0.0));
                for k in 0..2 {
                    let rhs = a * f1[k] + b * f2[k] - (a + b - 1.0) * f0[k];
                    let scale = f1[k].abs() + f2[k].abs() + f0[k].abs() + 1.0;
                    prop_assert!((lhs[k] - rhs).abs() <= 1e-12 * scale * (1.0 + a.abs() + b.abs()));
                }
            }
        }
    }
}
