//! (mu/mu_w, lambda)-CMA-ES with cumulative step-size adaptation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmaEsConfig {
    pub sigma0: f64,
    /// Defaults to `4 + floor(3 ln n)`.
    pub population: Option<usize>,
    pub max_evals: usize,
    pub seed: u64,
    /// Stop once the recent spread of objective values falls below this.
    pub f_tol: f64,
    /// Stop once the best value reaches this.
    pub f_target: Option<f64>,
    /// Stop once the search distribution is narrower than this in every coordinate.
    pub x_tol: f64,
    /// Value assigned to non-finite objective evaluations.
    pub penalty: f64,
    /// Worker threads for candidate evaluation; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for CmaEsConfig {
    fn default() -> Self {
        Self {
            sigma0: 0.5,
            population: None,
            max_evals: 20_000,
            seed: 0,
            f_tol: 1e-8,
            f_target: None,
            x_tol: 1e-12,
            penalty: 1e30,
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub evaluations: usize,
    /// Best value seen so far (non-increasing).
    pub best: f64,
    pub generation_best: f64,
    pub median: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxEvals,
    FTarget,
    FTol,
    XTol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaEsResult {
    pub best_params: Vec<f64>,
    pub best_value: f64,
    pub evaluations: usize,
    pub termination: Termination,
    pub history: Vec<GenerationRecord>,
}

struct Strategy {
    n: usize,
    lambda: usize,
    mu: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c1: f64,
    c_mu: f64,
    chi_n: f64,
}

impl Strategy {
    fn new(n: usize, population: Option<usize>) -> Self {
        let nf = n as f64;
        let lambda = population.unwrap_or(4 + (3.0 * nf.ln()).floor() as usize).max(2);
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let sum: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Self {
            n,
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c1,
            c_mu,
            chi_n,
        }
    }
}

fn median(sorted: &[f64]) -> f64 {
    let k = sorted.len();
    if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    }
}

/// Minimizes `objective` starting from `x0`. Deterministic for a fixed seed,
/// independent of the worker count.
pub fn optimize_cma_es<F>(objective: F, x0: &[f64], cfg: &CmaEsConfig) -> Result<CmaEsResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x0.len();
    if n == 0 {
        return Err(Error::InvalidInput("CMA-ES needs at least one parameter".into()));
    }
    if !(cfg.sigma0 > 0.0 && cfg.sigma0.is_finite()) {
        return Err(Error::InvalidInput(format!("sigma0 must be positive, got {}", cfg.sigma0)));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite starting point".into()));
    }
    let pool = match cfg.workers {
        Some(w) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::Optimizer(e.to_string()))?,
        ),
        None => None,
    };
    let evaluate = |xs: &[Vec<f64>]| -> Vec<f64> {
        let run = || xs.par_iter().map(|x| objective(x)).collect::<Vec<f64>>();
        match &pool {
            Some(p) => p.install(run),
            None => run(),
        }
    };

    let s = Strategy::new(n, cfg.population);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mean = DVector::from_column_slice(x0);
    let mut sigma = cfg.sigma0;
    let mut cov = DMatrix::<f64>::identity(n, n);
    let mut p_sigma = DVector::<f64>::zeros(n);
    let mut p_c = DVector::<f64>::zeros(n);
    let mut best_params = x0.to_vec();
    let mut best_value = f64::INFINITY;
    let mut history: Vec<GenerationRecord> = Vec::new();
    let mut evaluations = 0;
    let stall_window = 10 + (30.0 * n as f64 / s.lambda as f64).ceil() as usize;

    let termination = loop {
        let eig = SymmetricEigen::new(cov.clone());
        let d: DVector<f64> = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let b = eig.eigenvectors;
        let inv_sqrt = &b * DMatrix::from_diagonal(&d.map(|v| if v > 0.0 { 1.0 / v } else { 0.0 })) * b.transpose();

        let mut ys = Vec::with_capacity(s.lambda);
        let mut xs = Vec::with_capacity(s.lambda);
        for _ in 0..s.lambda {
            let z = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let y = &b * d.component_mul(&z);
            xs.push((&mean + &y * sigma).as_slice().to_vec());
            ys.push(y);
        }
        let raw = evaluate(&xs);
        evaluations += s.lambda;
        if raw.iter().all(|v| !v.is_finite()) {
            return Err(Error::Optimizer(format!(
                "every candidate of generation {} returned a non-finite objective",
                history.len()
            )));
        }
        let f: Vec<f64> = raw.iter().map(|&v| if v.is_finite() { v } else { cfg.penalty }).collect();
        let mut order: Vec<usize> = (0..s.lambda).collect();
        order.sort_by(|&i, &j| f[i].total_cmp(&f[j]).then(i.cmp(&j)));
        if f[order[0]] < best_value {
            best_value = f[order[0]];
            best_params = xs[order[0]].clone();
        }
        let mut sorted: Vec<f64> = order.iter().map(|&i| f[i]).collect();
        sorted.sort_by(f64::total_cmp);
        history.push(GenerationRecord {
            generation: history.len(),
            evaluations,
            best: best_value,
            generation_best: sorted[0],
            median: median(&sorted),
            sigma,
        });

        // recombination and adaptation
        let mut y_w = DVector::<f64>::zeros(n);
        for (w, &i) in s.weights.iter().zip(&order) {
            y_w += &ys[i] * *w;
        }
        mean += &y_w * sigma;
        p_sigma = &p_sigma * (1.0 - s.c_sigma) + (&inv_sqrt * &y_w) * (s.c_sigma * (2.0 - s.c_sigma) * s.mu_eff).sqrt();
        let gen = history.len() as i32;
        let ps_norm = p_sigma.norm();
        let h_sigma = ps_norm / (1.0 - (1.0 - s.c_sigma).powi(2 * gen)).sqrt()
            < (1.4 + 2.0 / (s.n as f64 + 1.0)) * s.chi_n;
        let hs = if h_sigma { 1.0 } else { 0.0 };
        p_c = &p_c * (1.0 - s.c_c) + &y_w * (hs * (s.c_c * (2.0 - s.c_c) * s.mu_eff).sqrt());
        let mut rank_mu = DMatrix::<f64>::zeros(n, n);
        for (w, &i) in s.weights.iter().zip(order.iter().take(s.mu)) {
            rank_mu += &ys[i] * ys[i].transpose() * *w;
        }
        let decay = 1.0 - s.c1 - s.c_mu + (1.0 - hs) * s.c1 * s.c_c * (2.0 - s.c_c);
        cov = &cov * decay + &p_c * p_c.transpose() * s.c1 + rank_mu * s.c_mu;
        cov = (&cov + cov.transpose()) * 0.5;
        sigma *= ((s.c_sigma / s.d_sigma) * (ps_norm / s.chi_n - 1.0)).exp();

        if let Some(target) = cfg.f_target {
            if best_value <= target {
                break Termination::FTarget;
            }
        }
        if evaluations + s.lambda > cfg.max_evals {
            break Termination::MaxEvals;
        }
        if history.len() >= stall_window {
            let recent = &history[history.len() - stall_window..];
            let hi = recent.iter().map(|r| r.generation_best).fold(f64::NEG_INFINITY, f64::max);
            let lo = recent.iter().map(|r| r.generation_best).fold(f64::INFINITY, f64::min);
            let spread = sorted[sorted.len() - 1] - sorted[0];
            if hi - lo < cfg.f_tol && spread < cfg.f_tol {
                break Termination::FTol;
            }
        }
        let width = (0..n)
            .map(|i| sigma * cov[(i, i)].sqrt().max(p_c[i].abs()))
            .fold(0.0, f64::max);
        if width < cfg.x_tol {
            break Termination::XTol;
        }
    };

    Ok(CmaEsResult {
        best_params,
        best_value,
        evaluations,
        termination,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    fn tight(max_evals: usize, seed: u64) -> CmaEsConfig {
        CmaEsConfig {
            max_evals,
            seed,
            f_tol: 1e-20,
            x_tol: 1e-20,
            ..Default::default()
        }
    }

    #[test]
    fn sphere_6d() {
        let r = optimize_cma_es(sphere, &[1.0; 6], &tight(3000, 1)).unwrap();
        assert!(r.evaluations <= 3000);
        assert!(r.best_value <= 1e-10, "best {}", r.best_value);
    }

    #[test]
    fn rosenbrock_2d() {
        let r = optimize_cma_es(rosenbrock, &[-1.0, 1.0], &tight(10_000, 3)).unwrap();
        assert!(r.best_value <= 1e-6, "best {}", r.best_value);
    }

    #[test]
    fn deterministic_for_seed_and_worker_count() {
        let a = optimize_cma_es(rosenbrock, &[0.0, 0.0], &tight(600, 7)).unwrap();
        let b = optimize_cma_es(rosenbrock, &[0.0, 0.0], &tight(600, 7)).unwrap();
        let c = optimize_cma_es(
            rosenbrock,
            &[0.0, 0.0],
            &CmaEsConfig {
                workers: Some(3),
                ..tight(600, 7)
            },
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        let d = optimize_cma_es(rosenbrock, &[0.0, 0.0], &tight(600, 8)).unwrap();
        assert_ne!(a.history, d.history);
    }

    #[test]
    fn best_ever_is_monotone() {
        let r = optimize_cma_es(rosenbrock, &[-1.0, 2.0], &tight(2000, 5)).unwrap();
        assert!(r.history.windows(2).all(|w| w[1].best <= w[0].best));
        assert_eq!(r.history.last().unwrap().best, r.best_value);
        assert_eq!(rosenbrock(&r.best_params), r.best_value);
    }

    #[test]
    fn non_finite_candidates_are_penalized() {
        let f = |x: &[f64]| if x[0] > 0.5 { f64::NAN } else { sphere(x) };
        let r = optimize_cma_es(f, &[0.0, 0.0], &tight(1000, 2)).unwrap();
        assert!(r.best_value.is_finite() && r.best_value < 1e-6);
    }

    #[test]
    fn all_non_finite_generation_aborts() {
        let r = optimize_cma_es(|_: &[f64]| f64::INFINITY, &[0.0], &CmaEsConfig::default());
        assert!(matches!(r, Err(Error::Optimizer(_))));
    }

    #[test]
    fn f_target_and_f_tol_stop_early() {
        let cfg = CmaEsConfig {
            f_target: Some(1e-3),
            ..Default::default()
        };
        let r = optimize_cma_es(sphere, &[1.0; 3], &cfg).unwrap();
        assert_eq!(r.termination, Termination::FTarget);
        let r = optimize_cma_es(sphere, &[1.0; 3], &CmaEsConfig::default()).unwrap();
        assert_eq!(r.termination, Termination::FTol);
        assert!(r.evaluations < 20_000);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = CmaEsConfig {
            sigma0: 0.0,
            ..Default::default()
        };
        assert!(optimize_cma_es(sphere, &[1.0], &cfg).is_err());
        assert!(optimize_cma_es(sphere, &[], &CmaEsConfig::default()).is_err());
    }
}
