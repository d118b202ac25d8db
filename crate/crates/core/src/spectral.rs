//! Eigen-analysis of the linear part, slow subspace selection, spectral
//! quotient and low-order nonresonance checks.

use std::cmp::Ordering;

use nalgebra::{Complex, DMatrix};
use serde::Serialize;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Relative tolerance under which two eigenvalues are treated as repeated.
pub const DEGENERACY_RTOL: f64 = 1e-8;
/// Default relative tolerance for the nonresonance test.
pub const DEFAULT_NONRESONANCE_RTOL: f64 = 1e-6;
/// Default cap on the nonresonance enumeration order.
pub const DEFAULT_NONRESONANCE_MAX_ORDER: usize = 200;

#[derive(Debug, Clone)]
pub struct SpectralData {
    eigenvalues: Vec<C64>,
    /// Columns are right eigenvectors.
    right: DMatrix<C64>,
    /// Rows are left eigenvectors, normalized so that `left * right = I`.
    left: DMatrix<C64>,
    master: Vec<usize>,
}

impl SpectralData {
    pub fn eigenvalues(&self) -> &[C64] {
        &self.eigenvalues
    }

    pub fn right_vectors(&self) -> &DMatrix<C64> {
        &self.right
    }

    pub fn left_vectors(&self) -> &DMatrix<C64> {
        &self.left
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Indices spanning the selected subspace (empty until one is selected).
    pub fn master_indices(&self) -> &[usize] {
        &self.master
    }

    pub fn slave_indices(&self) -> Vec<usize> {
        (0..self.dim()).filter(|i| !self.master.contains(i)).collect()
    }

    pub fn subspace_dim(&self) -> usize {
        self.master.len()
    }

    pub fn master_eigenvalues(&self) -> Vec<C64> {
        self.master.iter().map(|&i| self.eigenvalues[i]).collect()
    }

    /// Reduced coordinates of a full state: `p_k = u_k . x` for master `k`,
    /// i.e. projection along the spectral complement.
    pub fn project(&self, x: &[f64]) -> Vec<C64> {
        self.master
            .iter()
            .map(|&k| (0..x.len()).map(|j| self.left[(k, j)] * x[j]).sum())
            .collect()
    }

    /// Eigenvalues are simple, so this is also used when selecting.
    fn conjugate_index(&self, i: usize) -> Option<usize> {
        let l = self.eigenvalues[i];
        if l.im == 0.0 {
            return Some(i);
        }
        self.eigenvalues.iter().position(|&m| m == l.conj())
    }
}

fn sort_key_cmp(a: &C64, b: &C64) -> Ordering {
    b.re.partial_cmp(&a.re)
        .unwrap_or(Ordering::Equal)
        .then(a.im.abs().partial_cmp(&b.im.abs()).unwrap_or(Ordering::Equal))
        .then(b.im.partial_cmp(&a.im).unwrap_or(Ordering::Equal))
}

/// Right null vector of `A - lambda I`, from the smallest singular value.
fn null_vector(a: &DMatrix<f64>, lambda: C64) -> Vec<C64> {
    let n = a.nrows();
    if lambda.im == 0.0 {
        let shifted = a - DMatrix::<f64>::identity(n, n) * lambda.re;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("requested V^T");
        let k = argmin(svd.singular_values.as_slice());
        (0..n).map(|j| C64::new(v_t[(k, j)], 0.0)).collect()
    } else {
        let shifted =
            a.map(|v| C64::new(v, 0.0)) - DMatrix::<C64>::identity(n, n) * lambda;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("requested V^H");
        let k = argmin(svd.singular_values.as_slice());
        (0..n).map(|j| v_t[(k, j)].conj()).collect()
    }
}

fn argmin(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(Ordering::Equal))
        .map_or(0, |(i, _)| i)
}

/// Unit 2-norm, largest-magnitude component rotated onto the positive real axis.
fn normalize(v: &mut [C64]) {
    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let mut best = 0;
    for (i, c) in v.iter().enumerate() {
        // strict comparison with a small slack keeps the first index on ties
        if c.norm() > v[best].norm() * (1.0 + 1e-12) {
            best = i;
        }
    }
    let phase = v[best] / v[best].norm();
    let scale = phase.conj() / norm;
    for c in v.iter_mut() {
        *c *= scale;
    }
    v[best].im = 0.0;
}

/// Sorted spectrum with matched, biorthonormal left/right eigenvectors.
pub fn eigendecompose(a: &DMatrix<f64>) -> Result<SpectralData> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::InvalidInput("eigendecompose needs a non-empty square matrix".into()));
    }
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let raw = a.clone().complex_eigenvalues();

    // Real eigenvalues get an exactly zero imaginary part; complex ones are
    // rebuilt from their upper-half-plane member so pairs are exact conjugates.
    let im_tol = 1e-12 * scale;
    let mut eigenvalues: Vec<C64> = Vec::with_capacity(n);
    let mut lower: Vec<C64> = Vec::new();
    for l in raw.iter() {
        if l.im.abs() <= im_tol {
            eigenvalues.push(C64::new(l.re, 0.0));
        } else if l.im > 0.0 {
            eigenvalues.push(*l);
            eigenvalues.push(l.conj());
        } else {
            lower.push(*l);
        }
    }
    if eigenvalues.len() != n {
        return Err(Error::InvalidInput(format!(
            "unpaired complex eigenvalues in a real matrix: {lower:?}"
        )));
    }
    eigenvalues.sort_by(sort_key_cmp);

    let tol = DEGENERACY_RTOL * scale;
    for i in 0..n {
        for j in (i + 1)..n {
            if (eigenvalues[i] - eigenvalues[j]).norm() < tol {
                return Err(Error::DegenerateSpectrum {
                    first: fmt_c(eigenvalues[i]),
                    second: fmt_c(eigenvalues[j]),
                    tol,
                });
            }
        }
    }

    let mut right = DMatrix::<C64>::zeros(n, n);
    let mut j = 0;
    while j < n {
        let l = eigenvalues[j];
        let mut v = null_vector(a, l);
        normalize(&mut v);
        for (r, c) in v.iter().enumerate() {
            right[(r, j)] = *c;
        }
        if l.im != 0.0 && j + 1 < n && eigenvalues[j + 1] == l.conj() {
            for (r, c) in v.iter().enumerate() {
                right[(r, j + 1)] = c.conj();
            }
            j += 2;
        } else {
            j += 1;
        }
    }

    let left = right
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::DegenerateSpectrum {
            first: "eigenvector basis".into(),
            second: "singular".into(),
            tol,
        })?;

    Ok(SpectralData {
        eigenvalues,
        right,
        left,
        master: Vec::new(),
    })
}

/// Selects the `n` eigenvalues with largest real part.
pub fn select_slow_subspace(spec: &SpectralData, n: usize) -> Result<SpectralData> {
    if n == 0 || n > spec.dim() {
        return Err(Error::InvalidSubspace(format!(
            "subspace dimension must be in 1..={}, got {n}",
            spec.dim()
        )));
    }
    select_indices(spec, (0..n).collect())
}

/// Selects an explicit, conjugation-closed index set.
pub fn select_indices(spec: &SpectralData, mut indices: Vec<usize>) -> Result<SpectralData> {
    indices.sort_unstable();
    indices.dedup();
    if indices.is_empty() || indices.iter().any(|&i| i >= spec.dim()) {
        return Err(Error::InvalidSubspace(format!("bad index set {indices:?}")));
    }
    for &i in &indices {
        match spec.conjugate_index(i) {
            Some(c) if indices.contains(&c) => {}
            _ => {
                return Err(Error::InvalidSubspace(format!(
                    "selection splits the complex pair containing {}",
                    fmt_c(spec.eigenvalues[i])
                )))
            }
        }
    }
    Ok(SpectralData {
        master: indices,
        ..spec.clone()
    })
}

/// `Int[ min Re(spec A) / max Re(spec A|E) ]`.
pub fn spectral_quotient(spec: &SpectralData) -> Result<usize> {
    if spec.master.is_empty() {
        return Err(Error::InvalidSubspace("no subspace selected".into()));
    }
    let fastest = spec
        .eigenvalues
        .iter()
        .map(|l| l.re)
        .fold(f64::INFINITY, f64::min);
    let slowest_inside = spec
        .master
        .iter()
        .map(|&i| spec.eigenvalues[i].re)
        .fold(f64::NEG_INFINITY, f64::max);
    if slowest_inside == 0.0 {
        return Err(Error::ZeroDenominator(
            "slowest eigenvalue in the subspace has zero real part".into(),
        ));
    }
    if slowest_inside > 0.0 || fastest >= 0.0 {
        return Err(Error::ZeroDenominator(
            "spectral quotient requires a strictly stable spectrum".into(),
        ));
    }
    Ok((fastest / slowest_inside).floor() as usize)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ResonantTuple {
    /// Exponent of each master eigenvalue, in master order.
    pub multi_index: Vec<usize>,
    /// Index of the outer eigenvalue it collides with.
    pub outer_index: usize,
    pub combination_re: f64,
    pub outer_re: f64,
    /// `|sum m_j Re l_j - Re l_l| / |Re l_l|`.
    pub relative_margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NonresonanceReport {
    pub ok: bool,
    pub max_order_checked: usize,
    pub tuples_checked: usize,
    pub rtol: f64,
    pub resonant_tuples: Vec<ResonantTuple>,
    /// Smallest relative margin seen over all checked tuples.
    pub closest_margin: Option<f64>,
}

/// Tests `sum_j m_j Re(l_j) != Re(l_l)` for every outer eigenvalue and every
/// multi-index with `2 <= |m| <= min(Int quotient, max_order)`. Exponents may
/// be zero, so tuples touching only part of the subspace are included.
pub fn check_nonresonance(spec: &SpectralData, max_order: usize, rtol: f64) -> Result<NonresonanceReport> {
    let quotient = spectral_quotient(spec)?;
    let top = quotient.min(max_order);
    let master_re: Vec<f64> = spec.master.iter().map(|&i| spec.eigenvalues[i].re).collect();
    let outer: Vec<usize> = spec.slave_indices();
    let mut report = NonresonanceReport {
        ok: true,
        max_order_checked: top,
        tuples_checked: 0,
        rtol,
        resonant_tuples: Vec::new(),
        closest_margin: None,
    };
    for order in 2..=top {
        for_each_multi_index(master_re.len(), order, &mut |m| {
            let combo: f64 = m.iter().zip(&master_re).map(|(&k, re)| k as f64 * re).sum();
            for &l in &outer {
                let outer_re = spec.eigenvalues[l].re;
                let margin = (combo - outer_re).abs() / outer_re.abs().max(f64::MIN_POSITIVE);
                report.tuples_checked += 1;
                report.closest_margin = Some(report.closest_margin.map_or(margin, |c| c.min(margin)));
                if margin <= rtol {
                    report.resonant_tuples.push(ResonantTuple {
                        multi_index: m.to_vec(),
                        outer_index: l,
                        combination_re: combo,
                        outer_re,
                        relative_margin: margin,
                    });
                }
            }
        });
    }
    report.ok = report.resonant_tuples.is_empty();
    Ok(report)
}

/// Calls `f` on every exponent vector of length `vars` with total degree `order`,
/// in lexicographically decreasing order.
pub fn for_each_multi_index(vars: usize, order: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(pos: usize, remaining: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if pos + 1 == cur.len() {
            cur[pos] = remaining;
            f(cur);
            return;
        }
        for k in (0..=remaining).rev() {
            cur[pos] = k;
            rec(pos + 1, remaining - k, cur, f);
        }
    }
    if vars == 0 {
        if order == 0 {
            f(&[]);
        }
        return;
    }
    let mut cur = vec![0; vars];
    rec(0, order, &mut cur, f);
}

pub(crate) fn fmt_c(c: C64) -> String {
    if c.im == 0.0 {
        format!("{}", c.re)
    } else {
        format!("{}{:+}i", c.re, c.im)
    }
}
