//! Truncated multivariate power series in the reduced coordinates, and the
//! Taylor-Fourier coefficient bundles built from them.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::for_each_multi_index;

pub type C64 = Complex<f64>;

const NONE: u32 = u32::MAX;

/// Monomials `p^e` in `vars` variables with `|e| <= max_degree`, ordered by
/// degree and then lexicographically decreasing within a degree.
#[derive(Debug)]
pub struct MonomialBasis {
    vars: usize,
    max_degree: usize,
    exponents: Vec<Vec<u32>>,
    degree_start: Vec<usize>,
    index: HashMap<Vec<u32>, usize>,
    /// `product[i * len + j]` is the index of `e_i + e_j`, or `NONE` past `max_degree`.
    product: Vec<u32>,
    /// `derivative[k][i]` = index of `e_i - 1_k` when `e_i[k] > 0`.
    derivative: Vec<Vec<u32>>,
}

impl MonomialBasis {
    pub fn new(vars: usize, max_degree: usize) -> Arc<Self> {
        let mut exponents: Vec<Vec<u32>> = Vec::new();
        let mut degree_start = Vec::with_capacity(max_degree + 2);
        for d in 0..=max_degree {
            degree_start.push(exponents.len());
            for_each_multi_index(vars, d, &mut |m| {
                exponents.push(m.iter().map(|&k| k as u32).collect());
            });
        }
        degree_start.push(exponents.len());
        let index: HashMap<Vec<u32>, usize> =
            exponents.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        let len = exponents.len();
        let mut product = vec![NONE; len * len];
        let mut sum = vec![0u32; vars];
        for i in 0..len {
            for j in 0..len {
                for k in 0..vars {
                    sum[k] = exponents[i][k] + exponents[j][k];
                }
                if let Some(&idx) = index.get(&sum) {
                    product[i * len + j] = idx as u32;
                }
            }
        }
        let derivative = (0..vars)
            .map(|k| {
                exponents
                    .iter()
                    .map(|e| {
                        if e[k] == 0 {
                            NONE
                        } else {
                            let mut d = e.clone();
                            d[k] -= 1;
                            index[&d] as u32
                        }
                    })
                    .collect()
            })
            .collect();
        Arc::new(Self {
            vars,
            max_degree,
            exponents,
            degree_start,
            index,
            product,
            derivative,
        })
    }

    pub fn vars(&self) -> usize {
        self.vars
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self, i: usize) -> &[u32] {
        &self.exponents[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.exponents[i].iter().sum::<u32>() as usize
    }

    pub fn degree_range(&self, d: usize) -> std::ops::Range<usize> {
        if d > self.max_degree {
            return self.len()..self.len();
        }
        self.degree_start[d]..self.degree_start[d + 1]
    }

    pub fn index_of(&self, exps: &[u32]) -> Option<usize> {
        self.index.get(exps).copied()
    }

    /// Index of the degree-one monomial `p_k`.
    pub fn linear(&self, k: usize) -> usize {
        let mut e = vec![0; self.vars];
        e[k] = 1;
        self.index[&e]
    }

    /// Values of every monomial at `p`.
    pub fn monomial_values(&self, p: &[C64]) -> Vec<C64> {
        let mut vals = vec![C64::new(0.0, 0.0); self.len()];
        vals[0] = C64::new(1.0, 0.0);
        for d in 1..=self.max_degree {
            for i in self.degree_range(d) {
                // peel one factor off the first nonzero exponent
                let e = &self.exponents[i];
                let k = e.iter().position(|&x| x > 0).expect("degree >= 1");
                let parent = self.derivative[k][i] as usize;
                vals[i] = vals[parent] * p[k];
            }
        }
        vals
    }

    /// Truncated product `a * b`, keeping terms up to `degree_cap`.
    pub fn mul(&self, a: &[C64], b: &[C64], degree_cap: usize) -> Vec<C64> {
        let len = self.len();
        let end = self.degree_range(degree_cap.min(self.max_degree)).end;
        let mut out = vec![C64::new(0.0, 0.0); len];
        for (i, ai) in a.iter().enumerate().take(end) {
            if ai.re == 0.0 && ai.im == 0.0 {
                continue;
            }
            let row = &self.product[i * len..(i + 1) * len];
            for (j, bj) in b.iter().enumerate().take(end) {
                if bj.re == 0.0 && bj.im == 0.0 {
                    continue;
                }
                let t = row[j];
                if t != NONE && (t as usize) < end {
                    out[t as usize] += ai * bj;
                }
            }
        }
        out
    }

    /// `d a / d p_k`.
    pub fn derivative(&self, a: &[C64], k: usize) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.len()];
        for (i, ai) in a.iter().enumerate() {
            let t = self.derivative[k][i];
            if t != NONE {
                out[t as usize] += ai * self.exponents[i][k] as f64;
            }
        }
        out
    }

    pub fn eval(&self, a: &[C64], p: &[C64]) -> C64 {
        let vals = self.monomial_values(p);
        a.iter().zip(&vals).map(|(c, v)| c * v).sum()
    }

    pub fn zero(&self) -> Vec<C64> {
        vec![C64::new(0.0, 0.0); self.len()]
    }
}

/// Vector-valued truncated series: one coefficient row per output component.
pub type SeriesVec = Vec<Vec<C64>>;

/// Taylor-Fourier bundle `F(p, phi) = F0(p) + eps * sum_h F1_h(p) e^{i h phi}`.
#[derive(Debug, Clone)]
pub struct TaylorFourierMap {
    basis: Arc<MonomialBasis>,
    out_dim: usize,
    autonomous: SeriesVec,
    periodic: BTreeMap<i32, SeriesVec>,
    epsilon: f64,
    omega: f64,
    taylor_order: usize,
    correction_order: usize,
}

impl TaylorFourierMap {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        basis: Arc<MonomialBasis>,
        out_dim: usize,
        autonomous: SeriesVec,
        periodic: BTreeMap<i32, SeriesVec>,
        epsilon: f64,
        omega: f64,
        taylor_order: usize,
        correction_order: usize,
    ) -> Self {
        Self {
            basis,
            out_dim,
            autonomous,
            periodic,
            epsilon,
            omega,
            taylor_order,
            correction_order,
        }
    }

    pub fn basis(&self) -> &Arc<MonomialBasis> {
        &self.basis
    }

    pub fn vars(&self) -> usize {
        self.basis.vars()
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn autonomous(&self) -> &SeriesVec {
        &self.autonomous
    }

    pub fn periodic(&self) -> &BTreeMap<i32, SeriesVec> {
        &self.periodic
    }

    pub fn harmonics(&self) -> Vec<i32> {
        self.periodic.keys().copied().collect()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn taylor_order(&self) -> usize {
        self.taylor_order
    }

    pub fn correction_order(&self) -> usize {
        self.correction_order
    }

    /// Coefficient of `p^exps` in the autonomous part, or in harmonic `h`.
    pub fn coefficient(&self, harmonic: Option<i32>, exps: &[u32]) -> Option<Vec<C64>> {
        let idx = self.basis.index_of(exps)?;
        let rows = match harmonic {
            None => &self.autonomous,
            Some(h) => self.periodic.get(&h)?,
        };
        Some(rows.iter().map(|r| r[idx]).collect())
    }

    pub fn eval(&self, p: &[C64], phi: f64) -> Vec<C64> {
        let vals = self.basis.monomial_values(p);
        self.eval_with(&vals, phi)
    }

    pub(crate) fn eval_with(&self, vals: &[C64], phi: f64) -> Vec<C64> {
        let mut out: Vec<C64> = self
            .autonomous
            .iter()
            .map(|row| row.iter().zip(vals).map(|(c, v)| c * v).sum())
            .collect();
        for (&h, rows) in &self.periodic {
            let rot = C64::from_polar(self.epsilon, h as f64 * phi);
            for (o, row) in out.iter_mut().zip(rows) {
                let s: C64 = row.iter().zip(vals).map(|(c, v)| c * v).sum();
                *o += rot * s;
            }
        }
        out
    }

    /// `d F / d p_k` evaluated at `(p, phi)`.
    pub fn eval_dp(&self, p: &[C64], phi: f64, k: usize) -> Vec<C64> {
        let vals = self.basis.monomial_values(p);
        let d = |row: &Vec<C64>| -> C64 {
            let dr = self.basis.derivative(row, k);
            dr.iter().zip(&vals).map(|(c, v)| c * v).sum()
        };
        let mut out: Vec<C64> = self.autonomous.iter().map(d).collect();
        for (&h, rows) in &self.periodic {
            let rot = C64::from_polar(self.epsilon, h as f64 * phi);
            for (o, row) in out.iter_mut().zip(rows) {
                *o += rot * d(row);
            }
        }
        out
    }

    /// `d F / d phi` at `(p, phi)`.
    pub fn eval_dphi(&self, p: &[C64], phi: f64) -> Vec<C64> {
        let vals = self.basis.monomial_values(p);
        let mut out = vec![C64::new(0.0, 0.0); self.out_dim];
        for (&h, rows) in &self.periodic {
            let rot = C64::from_polar(self.epsilon, h as f64 * phi) * C64::new(0.0, h as f64);
            for (o, row) in out.iter_mut().zip(rows) {
                let s: C64 = row.iter().zip(vals.iter()).map(|(c, v)| c * v).sum();
                *o += rot * s;
            }
        }
        out
    }

    pub fn to_json(&self) -> TaylorFourierJson {
        let mut coefficients = Vec::new();
        let mut push = |harmonic: Option<i32>, rows: &SeriesVec| {
            for i in 0..self.basis.len() {
                coefficients.push(CoefficientEntry {
                    degree: self.basis.degree(i),
                    harmonic,
                    exponents: self.basis.exponents(i).to_vec(),
                    re: rows.iter().map(|r| r[i].re).collect(),
                    im: rows.iter().map(|r| r[i].im).collect(),
                });
            }
        };
        push(None, &self.autonomous);
        for (&h, rows) in &self.periodic {
            push(Some(h), rows);
        }
        TaylorFourierJson {
            vars: self.vars(),
            out_dim: self.out_dim,
            basis_degree: self.basis.max_degree(),
            taylor_order: self.taylor_order,
            correction_order: self.correction_order,
            epsilon: self.epsilon,
            omega: self.omega,
            harmonics: self.harmonics(),
            coefficients,
        }
    }

    pub fn from_json(j: &TaylorFourierJson) -> Result<Self> {
        let basis = MonomialBasis::new(j.vars, j.basis_degree);
        let zero_rows = || vec![basis.zero(); j.out_dim];
        let mut autonomous = zero_rows();
        let mut periodic: BTreeMap<i32, SeriesVec> =
            j.harmonics.iter().map(|&h| (h, zero_rows())).collect();
        for e in &j.coefficients {
            let idx = basis.index_of(&e.exponents).ok_or_else(|| {
                Error::Config(format!("exponents {:?} outside the basis", e.exponents))
            })?;
            if e.re.len() != j.out_dim || e.im.len() != j.out_dim {
                return Err(Error::Config("coefficient entry has wrong length".into()));
            }
            let rows = match e.harmonic {
                None => &mut autonomous,
                Some(h) => periodic
                    .get_mut(&h)
                    .ok_or_else(|| Error::Config(format!("harmonic {h} not declared")))?,
            };
            for (o, row) in rows.iter_mut().enumerate() {
                row[idx] = C64::new(e.re[o], e.im[o]);
            }
        }
        Ok(Self::new(
            basis,
            j.out_dim,
            autonomous,
            periodic,
            j.epsilon,
            j.omega,
            j.taylor_order,
            j.correction_order,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEntry {
    pub degree: usize,
    pub harmonic: Option<i32>,
    pub exponents: Vec<u32>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

/// Flat, degree/harmonic-tagged serialization of a [`TaylorFourierMap`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorFourierJson {
    pub vars: usize,
    pub out_dim: usize,
    pub basis_degree: usize,
    pub taylor_order: usize,
    pub correction_order: usize,
    pub epsilon: f64,
    pub omega: f64,
    pub harmonics: Vec<i32>,
    pub coefficients: Vec<CoefficientEntry>,
}
