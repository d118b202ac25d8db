//! Periodic feedback laws `kappa(y, phi) = sum_j D_j(phi) y^{(x) j}` with
//! truncated real Fourier coefficients.
//!
//! Parameters are stored flat, in the order the optimizer sees them:
//! Taylor degree `j` outermost, then input channel, then the output tuple of
//! length `j` (row-major over `o^j`), then the Fourier slots
//! `[const, cos(k1 phi), sin(k1 phi), cos(k2 phi), ...]` for the positive
//! frequencies `k1 < k2 < ...` of the harmonic set.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::series::C64;

/// Shape of the controller family: Taylor order and harmonic set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerFamily {
    pub taylor_order: usize,
    /// Signed harmonic set, closed under negation (e.g. `[-1, 0, 1]`).
    pub harmonics: Vec<i32>,
}

impl Default for ControllerFamily {
    fn default() -> Self {
        Self {
            taylor_order: 1,
            harmonics: vec![-1, 0, 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    inputs: usize,
    outputs: usize,
    taylor_order: usize,
    /// Distinct non-negative frequencies, ascending.
    frequencies: Vec<u32>,
    omega: f64,
    coefficients: Vec<f64>,
}

impl ControllerParams {
    pub fn zeros(inputs: usize, outputs: usize, family: &ControllerFamily, omega: f64) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::InvalidInput("controller needs m >= 1 and o >= 1".into()));
        }
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::InvalidInput(format!("frequency must be positive, got {omega}")));
        }
        let mut frequencies = Vec::new();
        for &h in &family.harmonics {
            if !family.harmonics.contains(&-h) {
                return Err(Error::InvalidInput(format!(
                    "harmonic set {:?} is not closed under negation",
                    family.harmonics
                )));
            }
            frequencies.push(h.unsigned_abs());
        }
        frequencies.sort_unstable();
        frequencies.dedup();
        if frequencies.is_empty() {
            return Err(Error::InvalidInput("empty harmonic set".into()));
        }
        let mut p = Self {
            inputs,
            outputs,
            taylor_order: family.taylor_order,
            frequencies,
            omega,
            coefficients: Vec::new(),
        };
        p.coefficients = vec![0.0; p.param_count()];
        Ok(p)
    }

    pub fn from_flat(
        inputs: usize,
        outputs: usize,
        family: &ControllerFamily,
        omega: f64,
        flat: &[f64],
    ) -> Result<Self> {
        let mut p = Self::zeros(inputs, outputs, family, omega)?;
        p.set_flat(flat)?;
        Ok(p)
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_dim("controller parameter vector", self.coefficients.len(), flat.len())?;
        self.coefficients.copy_from_slice(flat);
        Ok(())
    }

    pub fn flat(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn taylor_order(&self) -> usize {
        self.taylor_order
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.omega
    }

    pub fn family(&self) -> ControllerFamily {
        let mut harmonics: Vec<i32> = Vec::new();
        for &k in &self.frequencies {
            harmonics.push(k as i32);
            if k > 0 {
                harmonics.push(-(k as i32));
            }
        }
        harmonics.sort_unstable();
        ControllerFamily {
            taylor_order: self.taylor_order,
            harmonics,
        }
    }

    /// Signed harmonics carried by the family, ascending.
    pub fn signed_harmonics(&self) -> Vec<i32> {
        self.family().harmonics
    }

    /// Number of Fourier slots per tensor entry (`|H|`).
    pub fn slots(&self) -> usize {
        self.frequencies.iter().map(|&k| if k == 0 { 1 } else { 2 }).sum()
    }

    /// `sum_j |H| m o^j`.
    pub fn param_count(&self) -> usize {
        (0..=self.taylor_order)
            .map(|j| self.slots() * self.inputs * self.outputs.pow(j as u32))
            .sum()
    }

    fn degree_offset(&self, j: usize) -> usize {
        (0..j)
            .map(|d| self.slots() * self.inputs * self.outputs.pow(d as u32))
            .sum()
    }

    /// Real Fourier coefficients of `D_j[input][tuple]`, flat tuple index.
    fn entry(&self, j: usize, input: usize, tuple: usize) -> &[f64] {
        let width = self.outputs.pow(j as u32);
        let start = self.degree_offset(j) + (input * width + tuple) * self.slots();
        &self.coefficients[start..start + self.slots()]
    }

    fn fourier_real(&self, slots: &[f64], phi: f64) -> f64 {
        let mut s = 0.0;
        let mut at = 0;
        for &k in &self.frequencies {
            if k == 0 {
                s += slots[at];
                at += 1;
            } else {
                let (sin, cos) = (k as f64 * phi).sin_cos();
                s += slots[at] * cos + slots[at + 1] * sin;
                at += 2;
            }
        }
        s
    }

    /// Complex coefficient of `e^{i h phi}` in `D_j[input][tuple](phi)`.
    pub fn harmonic_coefficient(&self, j: usize, input: usize, tuple: usize, h: i32) -> C64 {
        let slots = self.entry(j, input, tuple);
        let mut at = 0;
        for &k in &self.frequencies {
            if k == 0 {
                if h == 0 {
                    return C64::new(slots[at], 0.0);
                }
                at += 1;
            } else {
                if h.unsigned_abs() == k {
                    let (c, s) = (slots[at], slots[at + 1]);
                    // c cos + s sin = (c - i s)/2 e^{i phi} + (c + i s)/2 e^{-i phi}
                    return if h > 0 {
                        C64::new(0.5 * c, -0.5 * s)
                    } else {
                        C64::new(0.5 * c, 0.5 * s)
                    };
                }
                at += 2;
            }
        }
        C64::new(0.0, 0.0)
    }

    /// `u = kappa(y, phi)`.
    pub fn eval(&self, y: &[f64], phi: f64) -> Result<Vec<f64>> {
        check_dim("controller output vector", self.outputs, y.len())?;
        let mut u = vec![0.0; self.inputs];
        self.eval_into(y, phi, &mut u);
        Ok(u)
    }

    pub(crate) fn eval_into(&self, y: &[f64], phi: f64, u: &mut [f64]) {
        for (input, ui) in u.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..=self.taylor_order {
                let width = self.outputs.pow(j as u32);
                for tuple in 0..width {
                    let d = self.fourier_real(self.entry(j, input, tuple), phi);
                    if d == 0.0 {
                        continue;
                    }
                    acc += d * tuple_product(y, tuple, j, self.outputs);
                }
            }
            *ui = acc;
        }
    }
}

/// `prod_k y[t_k]` for the row-major tuple index `flat` of length `len`.
pub(crate) fn tuple_product(y: &[f64], mut flat: usize, len: usize, base: usize) -> f64 {
    let mut prod = 1.0;
    for _ in 0..len {
        prod *= y[flat % base];
        flat /= base;
    }
    prod
}

/// Decodes a row-major tuple index into its components.
pub(crate) fn tuple_indices(mut flat: usize, len: usize, base: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = flat % base;
        flat /= base;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn pendulum_family(up: [f64; 6]) -> ControllerParams {
        ControllerParams::from_flat(1, 1, &ControllerFamily::default(), PI, &up).unwrap()
    }

    #[test]
    fn pendulum_family_has_six_parameters() {
        let p = ControllerParams::zeros(1, 1, &ControllerFamily::default(), PI).unwrap();
        assert_eq!(p.param_count(), 6);
        assert_eq!(p.slots(), 3);
    }

    #[test]
    fn zero_controller_is_zero() {
        let p = pendulum_family([0.0; 6]);
        for phi in [0.0, 1.0, 4.0] {
            assert_eq!(p.eval(&[0.7], phi).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn constant_term_only() {
        let p = pendulum_family([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        for phi in [0.0, 0.3, 2.0, 5.9] {
            assert_eq!(p.eval(&[0.3], phi).unwrap(), vec![1.0]);
        }
    }

    #[test]
    fn proportional_term_only() {
        let p = pendulum_family([0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        for phi in [0.0, 1.1, 3.3] {
            assert!((p.eval(&[0.3], phi).unwrap()[0] - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_explicit_pendulum_law() {
        let up = [0.4, -1.2, 0.7, 2.0, 0.3, -0.9];
        let p = pendulum_family(up);
        let (x1, phi): (f64, f64) = (0.37, 1.234);
        let explicit = up[0] + up[1] * phi.cos() + up[2] * phi.sin()
            + x1 * (up[3] + up[4] * phi.cos() + up[5] * phi.sin());
        assert!((p.eval(&[x1], phi).unwrap()[0] - explicit).abs() < 1e-14);
    }

    #[test]
    fn harmonic_form_reconstructs_real_form() {
        let up = [0.4, -1.2, 0.7, 2.0, 0.3, -0.9];
        let p = pendulum_family(up);
        let phi = 0.81;
        for j in 0..=1 {
            let mut s = C64::new(0.0, 0.0);
            for h in p.signed_harmonics() {
                s += p.harmonic_coefficient(j, 0, 0, h) * C64::from_polar(1.0, h as f64 * phi);
            }
            let real = p.fourier_real(p.entry(j, 0, 0), phi);
            assert!(s.im.abs() < 1e-15);
            assert!((s.re - real).abs() < 1e-14);
        }
    }

    #[test]
    fn asymmetric_harmonic_set_rejected() {
        let fam = ControllerFamily {
            taylor_order: 0,
            harmonics: vec![0, 1],
        };
        assert!(ControllerParams::zeros(1, 1, &fam, 1.0).is_err());
    }

    #[test]
    fn param_count_multi_io() {
        let fam = ControllerFamily {
            taylor_order: 2,
            harmonics: vec![-2, -1, 0, 1, 2],
        };
        let p = ControllerParams::zeros(2, 3, &fam, 1.0).unwrap();
        assert_eq!(p.param_count(), 5 * 2 * (1 + 3 + 9));
    }

    proptest! {
        #[test]
        fn periodic_in_phase(coeffs in prop::collection::vec(-5.0f64..5.0, 6), y in -2.0f64..2.0, phi in 0.0f64..6.3) {
            let p = pendulum_family(coeffs.try_into().unwrap());
            let a = p.eval(&[y], phi).unwrap()[0];
            let b = p.eval(&[y], phi + 2.0 * PI).unwrap()[0];
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn flatten_round_trip(coeffs in prop::collection::vec(-1e3f64..1e3, 2 * 5 * (1 + 2))) {
            let fam = ControllerFamily { taylor_order: 1, harmonics: vec![-2, -1, 0, 1, 2] };
            let p = ControllerParams::from_flat(2, 2, &fam, 2.0, &coeffs).unwrap();
            let q = ControllerParams::from_flat(2, 2, &p.family(), 2.0, p.flat()).unwrap();
            prop_assert_eq!(p.flat(), coeffs.as_slice());
            prop_assert_eq!(p, q);
        }
    }
}
