//! Taylor-truncated polynomial vector fields.
//!
//! Coefficients are kept in symmetrized form: every monomial is keyed by its
//! sorted multi-index (a combination with repetition of input indices) and
//! carries one coefficient per target component. The coefficient is the
//! coefficient of the monomial itself, so the equivalent symmetric tensor
//! entry is `coefficient / multiplicity` for every permutation of the index.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// One entry of the JSON term list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSpec {
    pub degree: usize,
    pub multi_index: Vec<usize>,
    pub target_component: usize,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialVectorField {
    dim: usize,
    monomials: BTreeMap<Vec<usize>, Vec<f64>>,
}

impl PolynomialVectorField {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            monomials: BTreeMap::new(),
        }
    }

    /// Constant field `x -> c`.
    pub fn constant(c: &[f64]) -> Self {
        let mut field = Self::zero(c.len());
        for (target, &value) in c.iter().enumerate() {
            if value != 0.0 {
                field.monomials.entry(Vec::new()).or_insert_with(|| vec![0.0; c.len()])[target] +=
                    value;
            }
        }
        field
    }

    pub fn from_terms(dim: usize, terms: &[TermSpec]) -> Result<Self> {
        let mut field = Self::zero(dim);
        for t in terms {
            if t.multi_index.len() != t.degree {
                return Err(Error::InvalidInput(format!(
                    "term of degree {} has multi-index of length {}",
                    t.degree,
                    t.multi_index.len()
                )));
            }
            field.add_term(&t.multi_index, t.target_component, t.coefficient)?;
        }
        Ok(field)
    }

    /// Adds `coefficient * prod_k x[multi_index[k]]` to component `target`.
    pub fn add_term(&mut self, multi_index: &[usize], target: usize, coefficient: f64) -> Result<()> {
        if target >= self.dim || multi_index.iter().any(|&i| i >= self.dim) {
            return Err(Error::InvalidInput(format!(
                "term index out of range for dimension {}: target {target}, multi-index {multi_index:?}",
                self.dim
            )));
        }
        let mut key = multi_index.to_vec();
        key.sort_unstable();
        let dim = self.dim;
        self.monomials.entry(key).or_insert_with(|| vec![0.0; dim])[target] += coefficient;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.monomials.values().all(|c| c.iter().all(|&v| v == 0.0))
    }

    /// Sorted multi-index and coefficient vector of every stored monomial.
    pub fn monomials(&self) -> impl Iterator<Item = (&[usize], &[f64])> {
        self.monomials.iter().map(|(k, v)| (k.as_slice(), v.as_slice()))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.monomials.keys().map(Vec::len).collect();
        d.dedup();
        d
    }

    pub fn min_degree(&self) -> Option<usize> {
        self.monomials.keys().map(Vec::len).min()
    }

    pub fn max_degree(&self) -> usize {
        self.monomials.keys().map(Vec::len).max().unwrap_or(0)
    }

    /// Field with only the monomials of degree `<= max_degree`.
    pub fn truncated(&self, max_degree: usize) -> Self {
        Self {
            dim: self.dim,
            monomials: self
                .monomials
                .iter()
                .filter(|(k, _)| k.len() <= max_degree)
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            monomials: self
                .monomials
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|c| c * s).collect()))
                .collect(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("polynomial field input", self.dim, x.len())?;
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out);
        Ok(out)
    }

    /// Accumulates the field value into `out` without dimension checks.
    pub(crate) fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (idx, coeffs) in &self.monomials {
            let m: f64 = idx.iter().map(|&i| x[i]).product();
            for (o, c) in out.iter_mut().zip(coeffs) {
                *o += c * m;
            }
        }
    }

    /// Jacobian `D f(x)` as a row-major `dim x dim` matrix.
    pub fn jacobian(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("polynomial field input", self.dim, x.len())?;
        let n = self.dim;
        let mut jac = vec![0.0; n * n];
        for (idx, coeffs) in &self.monomials {
            for k in 0..idx.len() {
                let rest: f64 = idx
                    .iter()
                    .enumerate()
                    .filter(|&(l, _)| l != k)
                    .map(|(_, &i)| x[i])
                    .product();
                for (target, c) in coeffs.iter().enumerate() {
                    jac[target * n + idx[k]] += c * rest;
                }
            }
        }
        Ok(jac)
    }

    /// Full symmetric tensor of degree `degree`, laid out as `dim x dim^degree`
    /// (target major, input indices in row-major order).
    pub fn densify(&self, degree: usize) -> Vec<f64> {
        let n = self.dim;
        let width = n.pow(degree as u32);
        let mut dense = vec![0.0; n * width];
        let mut tuple = vec![0usize; degree];
        for flat in 0..width {
            let mut r = flat;
            for slot in tuple.iter_mut().rev() {
                *slot = r % n;
                r /= n;
            }
            let mut key = tuple.clone();
            key.sort_unstable();
            if let Some(coeffs) = self.monomials.get(&key) {
                let mult = multinomial_count(&key) as f64;
                for (target, c) in coeffs.iter().enumerate() {
                    dense[target * width + flat] = c / mult;
                }
            }
        }
        dense
    }

    pub fn to_terms(&self) -> Vec<TermSpec> {
        let mut terms = Vec::new();
        for (idx, coeffs) in &self.monomials {
            for (target, &c) in coeffs.iter().enumerate() {
                if c != 0.0 {
                    terms.push(TermSpec {
                        degree: idx.len(),
                        multi_index: idx.clone(),
                        target_component: target,
                        coefficient: c,
                    });
                }
            }
        }
        terms
    }
}

/// Number of distinct orderings of a sorted multi-index.
pub fn multinomial_count(sorted_index: &[usize]) -> u64 {
    let mut count: u64 = 1;
    let mut placed: u64 = 0;
    let mut run: u64 = 0;
    for (k, &i) in sorted_index.iter().enumerate() {
        run = if k > 0 && sorted_index[k - 1] == i { run + 1 } else { 1 };
        placed += 1;
        // C(placed, run) built incrementally: count *= placed / run
        count = count * placed / run;
    }
    count
}
