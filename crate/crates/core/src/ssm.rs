//! Graph-style spectral submanifold over the modal coordinates of the master
//! subspace, with an O(eps) time-periodic correction.
//!
//! In modal coordinates `x = V xi` the manifold is `xi_E = p`,
//! `xi_S = h0(p) + eps * sum_h h1_h(p) e^{i h phi}` and the reduced dynamics are
//! `p' = Lambda_E p + R_nl(p) + eps * sum_h r1_h(p) e^{i h phi}`.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::controller::{tuple_indices, ControllerParams};
use crate::error::{check_dim, Error, Result};
use crate::field::PolynomialVectorField;
use crate::series::{MonomialBasis, SeriesVec, TaylorFourierJson, TaylorFourierMap, C64};
use crate::spectral::{fmt_c, SpectralData};
use crate::system::ControlAffineSystem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsmConfig {
    /// Autonomous Taylor order `K`.
    pub order: usize,
    /// Truncation of the autonomous reduced dynamics; defaults to `K`, at most `K + 1`.
    pub reduced_order: Option<usize>,
    /// Taylor order `K1` of the periodic correction.
    pub correction_order: usize,
    /// Solver harmonic set.
    pub harmonics: Vec<i32>,
    /// Divisors below `small_divisor_rtol * scale` are treated as resonant.
    pub small_divisor_rtol: f64,
    /// How `reduced_rhs` evaluates `R`.
    pub reduced_dynamics: ReducedDynamics,
}

/// `Series` evaluates the truncated Taylor-Fourier bundle `R0 + eps R1`.
/// `Graph` evaluates the master rows of the modal vector field on the lifted
/// state, `p' = Lambda_E p + [V^-1 (f0(W) + eps sum f_i(W) kappa_i(H W))]_E`;
/// its Taylor expansion is the series bundle, but it keeps the products of the
/// feedback with the eps-part of the lift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducedDynamics {
    Series,
    #[default]
    Graph,
}

impl Default for SsmConfig {
    fn default() -> Self {
        Self {
            order: 3,
            reduced_order: None,
            correction_order: 1,
            harmonics: vec![-1, 0, 1],
            small_divisor_rtol: 1e-8,
            reduced_dynamics: ReducedDynamics::default(),
        }
    }
}

impl SsmConfig {
    pub fn reduced_order(&self) -> usize {
        self.reduced_order.unwrap_or(self.order)
    }

    fn validate(&self) -> Result<()> {
        if self.order < 2 {
            return Err(Error::InvalidInput(format!("SSM order must be >= 2, got {}", self.order)));
        }
        let r = self.reduced_order();
        if r < 1 || r > self.order + 1 {
            return Err(Error::InvalidInput(format!(
                "reduced order must be in 1..={}, got {r}",
                self.order + 1
            )));
        }
        if self.correction_order > self.order {
            return Err(Error::InvalidInput(format!(
                "correction order {} exceeds SSM order {}",
                self.correction_order, self.order
            )));
        }
        if !(self.small_divisor_rtol >= 0.0) {
            return Err(Error::InvalidInput("small_divisor_rtol must be non-negative".into()));
        }
        Ok(())
    }

    fn basis_degree(&self) -> usize {
        self.order.max(self.reduced_order())
    }
}

/// Autonomous part of the solve.
#[derive(Debug, Clone)]
pub struct AutonomousSolution {
    basis: Arc<MonomialBasis>,
    /// `N` rows: `xi0(p)` in modal coordinates.
    modal: SeriesVec,
    /// `n` rows: full autonomous reduced dynamics, linear part included.
    rdyn: SeriesVec,
    /// `n` rows: nonlinear part `R_nl` only.
    rdyn_nl: SeriesVec,
    order: usize,
    reduced_order: usize,
}

impl AutonomousSolution {
    pub fn basis(&self) -> &Arc<MonomialBasis> {
        &self.basis
    }

    pub fn modal(&self) -> &SeriesVec {
        &self.modal
    }

    pub fn reduced(&self) -> &SeriesVec {
        &self.rdyn
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn reduced_order(&self) -> usize {
        self.reduced_order
    }
}

/// O(eps) coefficients per harmonic.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicCorrection {
    /// `N` rows per harmonic (master rows are zero).
    pub modal: BTreeMap<i32, SeriesVec>,
    /// `n` rows per harmonic.
    pub reduced: BTreeMap<i32, SeriesVec>,
}

impl PeriodicCorrection {
    fn zeros(harmonics: &[i32], big_n: usize, n: usize, len: usize) -> Self {
        let z = |rows| vec![vec![C64::new(0.0, 0.0); len]; rows];
        Self {
            modal: harmonics.iter().map(|&h| (h, z(big_n))).collect(),
            reduced: harmonics.iter().map(|&h| (h, z(n))).collect(),
        }
    }

    fn add_scaled(&mut self, other: &Self, s: f64) {
        let add = |a: &mut BTreeMap<i32, SeriesVec>, b: &BTreeMap<i32, SeriesVec>| {
            for (h, rows) in b {
                let dst = a.get_mut(h).expect("same harmonic set");
                for (d, r) in dst.iter_mut().zip(rows) {
                    for (x, y) in d.iter_mut().zip(r) {
                        *x += y * s;
                    }
                }
            }
        };
        add(&mut self.modal, &other.modal);
        add(&mut self.reduced, &other.reduced);
    }

    pub fn is_zero(&self) -> bool {
        self.modal
            .values()
            .chain(self.reduced.values())
            .flatten()
            .flatten()
            .all(|c| c.re == 0.0 && c.im == 0.0)
    }

    /// Largest coefficient magnitude, for comparisons in tests and diagnostics.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut m: f64 = 0.0;
        let mut cmp = |a: &BTreeMap<i32, SeriesVec>, b: &BTreeMap<i32, SeriesVec>| {
            for (h, rows) in a {
                for (ra, rb) in rows.iter().zip(&b[h]) {
                    for (x, y) in ra.iter().zip(rb) {
                        m = m.max((x - y).norm());
                    }
                }
            }
        };
        cmp(&self.modal, &other.modal);
        cmp(&self.reduced, &other.reduced);
        m
    }
}

fn zero_rows(rows: usize, len: usize) -> SeriesVec {
    vec![vec![C64::new(0.0, 0.0); len]; rows]
}

fn mat_series(m: &DMatrix<C64>, s: &SeriesVec, len: usize) -> SeriesVec {
    (0..m.nrows())
        .map(|i| {
            let mut row = vec![C64::new(0.0, 0.0); len];
            for (j, sj) in s.iter().enumerate() {
                let c = m[(i, j)];
                if c.re == 0.0 && c.im == 0.0 {
                    continue;
                }
                for (r, v) in row.iter_mut().zip(sj) {
                    *r += c * v;
                }
            }
            row
        })
        .collect()
}

fn real_mat_series(m: &DMatrix<f64>, s: &SeriesVec, len: usize) -> SeriesVec {
    mat_series(&m.map(|v| C64::new(v, 0.0)), s, len)
}

/// `field(x(p))` truncated at `cap`.
fn compose(field: &PolynomialVectorField, x: &SeriesVec, basis: &MonomialBasis, cap: usize) -> SeriesVec {
    let len = basis.len();
    let mut out = zero_rows(field.dim(), len);
    for (idx, coeffs) in field.monomials() {
        let mut prod = basis.zero();
        prod[0] = C64::new(1.0, 0.0);
        for &k in idx {
            prod = basis.mul(&prod, &x[k], cap);
        }
        for (t, &c) in coeffs.iter().enumerate() {
            if c != 0.0 {
                for (o, v) in out[t].iter_mut().zip(&prod) {
                    *o += v * c;
                }
            }
        }
    }
    out
}

/// `D field(x(p)) [dx(p)]` truncated at `cap`.
fn compose_linearized(
    field: &PolynomialVectorField,
    x: &SeriesVec,
    dx: &SeriesVec,
    basis: &MonomialBasis,
    cap: usize,
) -> SeriesVec {
    let len = basis.len();
    let mut out = zero_rows(field.dim(), len);
    for (idx, coeffs) in field.monomials() {
        for pos in 0..idx.len() {
            let mut prod = basis.zero();
            prod[0] = C64::new(1.0, 0.0);
            for (q, &k) in idx.iter().enumerate() {
                let factor = if q == pos { &dx[k] } else { &x[k] };
                prod = basis.mul(&prod, factor, cap);
            }
            for (t, &c) in coeffs.iter().enumerate() {
                if c != 0.0 {
                    for (o, v) in out[t].iter_mut().zip(&prod) {
                        *o += v * c;
                    }
                }
            }
        }
    }
    out
}

fn alpha_dot(exps: &[u32], lambdas: &[C64]) -> C64 {
    exps.iter().zip(lambdas).map(|(&e, &l)| l * e as f64).sum()
}

fn spectral_scale(spec: &SpectralData) -> f64 {
    spec.eigenvalues().iter().map(|l| l.norm()).fold(1.0, f64::max)
}

fn require_subspace(system: &ControlAffineSystem, spec: &SpectralData) -> Result<()> {
    check_dim("spectral data dimension", system.state_dim(), spec.dim())?;
    if spec.subspace_dim() == 0 {
        return Err(Error::InvalidSubspace("no subspace selected".into()));
    }
    Ok(())
}

/// Degree-by-degree solve of the autonomous invariance equation.
pub fn solve_autonomous(
    system: &ControlAffineSystem,
    spec: &SpectralData,
    cfg: &SsmConfig,
) -> Result<AutonomousSolution> {
    cfg.validate()?;
    require_subspace(system, spec)?;
    let master = spec.master_indices().to_vec();
    let slaves = spec.slave_indices();
    let lam = spec.eigenvalues();
    let lam_e = spec.master_eigenvalues();
    let n = master.len();
    let big_n = spec.dim();
    let basis = MonomialBasis::new(n, cfg.basis_degree());
    let len = basis.len();
    let r_order = cfg.reduced_order();
    let scale = spectral_scale(spec);

    let mut modal = zero_rows(big_n, len);
    for (k, &mk) in master.iter().enumerate() {
        modal[mk][basis.linear(k)] = C64::new(1.0, 0.0);
    }
    let mut rdyn_nl = zero_rows(n, len);

    for j in 2..=cfg.basis_degree() {
        let x = mat_series(spec.right_vectors(), &modal, len);
        let fx = compose(system.f0(), &x, &basis, j);
        let f = mat_series(spec.left_vectors(), &fx, len);
        let range = basis.degree_range(j);
        if j <= r_order {
            for (k, &mk) in master.iter().enumerate() {
                for i in range.clone() {
                    rdyn_nl[k][i] = f[mk][i];
                }
            }
        }
        if j > cfg.order {
            continue;
        }
        for &s in &slaves {
            let mut transport = basis.zero();
            for (a, r) in rdyn_nl.iter().enumerate() {
                let d = basis.derivative(&modal[s], a);
                for (t, v) in transport.iter_mut().zip(basis.mul(&d, r, j)) {
                    *t += v;
                }
            }
            for i in range.clone() {
                let divisor = lam[s] - alpha_dot(basis.exponents(i), &lam_e);
                if divisor.norm() < cfg.small_divisor_rtol * scale {
                    return Err(Error::Resonance {
                        degree: j,
                        eigenvalue: fmt_c(lam[s]),
                        divisor: divisor.norm(),
                    });
                }
                modal[s][i] = (transport[i] - f[s][i]) / divisor;
            }
        }
    }

    let mut rdyn = rdyn_nl.clone();
    for (k, row) in rdyn.iter_mut().enumerate() {
        row[basis.linear(k)] = lam_e[k];
    }
    Ok(AutonomousSolution {
        basis,
        modal,
        rdyn,
        rdyn_nl,
        order: cfg.order,
        reduced_order: r_order,
    })
}

/// Degree-by-degree solve of the O(eps) invariance equation for one controller.
pub fn solve_periodic_correction(
    system: &ControlAffineSystem,
    spec: &SpectralData,
    auto: &AutonomousSolution,
    controller: &ControllerParams,
    cfg: &SsmConfig,
) -> Result<PeriodicCorrection> {
    cfg.validate()?;
    require_subspace(system, spec)?;
    check_dim("controller inputs", system.input_dim(), controller.inputs())?;
    check_dim("controller outputs", system.output_dim(), controller.outputs())?;
    check_dim("SSM basis variables", spec.subspace_dim(), auto.basis.vars())?;
    for h in controller.signed_harmonics() {
        if !cfg.harmonics.contains(&h) {
            return Err(Error::HarmonicOutOfRange(h));
        }
    }
    let basis = &auto.basis;
    let len = basis.len();
    let k1 = cfg.correction_order;
    let master = spec.master_indices().to_vec();
    let slaves = spec.slave_indices();
    let lam = spec.eigenvalues();
    let lam_e = spec.master_eigenvalues();
    let (big_n, n, o) = (spec.dim(), master.len(), system.output_dim());
    let omega = controller.omega();
    let mut harmonics = cfg.harmonics.clone();
    harmonics.sort_unstable();
    harmonics.dedup();
    let scale = spectral_scale(spec).max(omega * harmonics.iter().map(|h| h.abs()).max().unwrap_or(0) as f64);

    let x0 = mat_series(spec.right_vectors(), &auto.modal, len);
    let y0 = real_mat_series(system.h(), &x0, len);
    let fi: Vec<SeriesVec> = system
        .controls()
        .iter()
        .map(|f| compose(f, &x0, basis, k1))
        .collect();

    // products y0_{t1} ... y0_{tj} for every tuple of every controller degree <= K1
    let mut tuple_series: Vec<Vec<Vec<C64>>> = Vec::new();
    for j in 0..=controller.taylor_order().min(k1) {
        let width = o.pow(j as u32);
        let mut per = Vec::with_capacity(width);
        for t in 0..width {
            let mut prod = basis.zero();
            prod[0] = C64::new(1.0, 0.0);
            for k in tuple_indices(t, j, o) {
                prod = basis.mul(&prod, &y0[k], k1);
            }
            per.push(prod);
        }
        tuple_series.push(per);
    }

    let mut out = PeriodicCorrection::zeros(&harmonics, big_n, n, len);
    for &h in &harmonics {
        // G = V^{-1} sum_i f_i(W0) kappa_{i,h}(H W0)
        let mut g_phys = zero_rows(big_n, len);
        let mut forced = false;
        for (i, f) in fi.iter().enumerate() {
            let mut kappa = basis.zero();
            for (j, per) in tuple_series.iter().enumerate() {
                for (t, prod) in per.iter().enumerate() {
                    let d = controller.harmonic_coefficient(j, i, t, h);
                    if d.re == 0.0 && d.im == 0.0 {
                        continue;
                    }
                    for (kv, pv) in kappa.iter_mut().zip(prod) {
                        *kv += d * pv;
                    }
                }
            }
            if kappa.iter().all(|c| c.re == 0.0 && c.im == 0.0) {
                continue;
            }
            forced = true;
            for (row, frow) in g_phys.iter_mut().zip(f) {
                for (r, v) in row.iter_mut().zip(basis.mul(frow, &kappa, k1)) {
                    *r += v;
                }
            }
        }
        if !forced {
            continue;
        }
        let g = mat_series(spec.left_vectors(), &g_phys, len);
        let ih_omega = C64::new(0.0, h as f64 * omega);
        let xi1 = out.modal.get_mut(&h).expect("allocated");
        let r1 = out.reduced.get_mut(&h).expect("allocated");

        for j in 0..=k1 {
            let dx = mat_series(spec.right_vectors(), xi1, len);
            let lin_phys = compose_linearized(system.f0(), &x0, &dx, basis, j);
            let l = mat_series(spec.left_vectors(), &lin_phys, len);
            let range = basis.degree_range(j);
            for (k, &mk) in master.iter().enumerate() {
                for i in range.clone() {
                    r1[k][i] = l[mk][i] + g[mk][i];
                }
            }
            for &s in &slaves {
                let mut transport = basis.zero();
                for a in 0..n {
                    let d1 = basis.derivative(&xi1[s], a);
                    let d0 = basis.derivative(&auto.modal[s], a);
                    let t1 = basis.mul(&d1, &auto.rdyn_nl[a], j);
                    let t2 = basis.mul(&d0, &r1[a], j);
                    for (t, (u, v)) in transport.iter_mut().zip(t1.iter().zip(&t2)) {
                        *t += u + v;
                    }
                }
                for i in range.clone() {
                    let divisor = alpha_dot(basis.exponents(i), &lam_e) + ih_omega - lam[s];
                    if divisor.norm() < cfg.small_divisor_rtol * scale {
                        return Err(Error::ForcingResonance {
                            degree: j,
                            harmonic: h,
                            eigenvalue: fmt_c(lam[s]),
                            divisor: divisor.norm(),
                        });
                    }
                    xi1[s][i] = (l[s][i] + g[s][i] - transport[i]) / divisor;
                }
            }
        }
    }
    Ok(out)
}

/// Precomputed corrections for each unit controller coefficient; any controller
/// of the same family is then a superposition.
#[derive(Debug, Clone)]
pub struct CorrectionBasis {
    template: ControllerParams,
    responses: Vec<PeriodicCorrection>,
    zero: PeriodicCorrection,
}

impl CorrectionBasis {
    pub fn new(
        system: &ControlAffineSystem,
        spec: &SpectralData,
        auto: &AutonomousSolution,
        template: &ControllerParams,
        cfg: &SsmConfig,
    ) -> Result<Self> {
        let np = template.param_count();
        let mut unit = template.clone();
        let mut responses = Vec::with_capacity(np);
        for q in 0..np {
            let mut e = vec![0.0; np];
            e[q] = 1.0;
            unit.set_flat(&e)?;
            responses.push(solve_periodic_correction(system, spec, auto, &unit, cfg)?);
        }
        unit.set_flat(&vec![0.0; np])?;
        let zero = solve_periodic_correction(system, spec, auto, &unit, cfg)?;
        Ok(Self {
            template: template.clone(),
            responses,
            zero,
        })
    }

    pub fn param_count(&self) -> usize {
        self.responses.len()
    }

    pub fn combine(&self, controller: &ControllerParams) -> Result<PeriodicCorrection> {
        if controller.family() != self.template.family()
            || controller.inputs() != self.template.inputs()
            || controller.outputs() != self.template.outputs()
            || controller.omega() != self.template.omega()
        {
            return Err(Error::InvalidInput(
                "controller does not belong to the precomputed family".into(),
            ));
        }
        let mut out = self.zero.clone();
        for (resp, &d) in self.responses.iter().zip(controller.flat()) {
            if d != 0.0 {
                out.add_scaled(resp, d);
            }
        }
        Ok(out)
    }
}

/// Map between real reduced coordinates `q` and modal coordinates `p`.
/// A complex master pair `(k, k')` with `Im lambda_k > 0` is represented by
/// `p_k = q_a + i q_b`, `p_k' = conj(p_k)`.
#[derive(Debug, Clone)]
enum Slot {
    Real(usize),
    Pair(usize, usize),
}

fn real_slots(spec: &SpectralData) -> Vec<Slot> {
    let lam = spec.master_eigenvalues();
    let mut slots = Vec::new();
    for (k, l) in lam.iter().enumerate() {
        if l.im == 0.0 {
            slots.push(Slot::Real(k));
        } else if l.im > 0.0 {
            let partner = lam
                .iter()
                .position(|m| *m == l.conj())
                .expect("selection is conjugation-closed");
            slots.push(Slot::Pair(k, partner));
        }
    }
    slots
}

/// Real `N x n` matrix `L` with `x = L q` on the linear subspace.
pub fn real_master_basis(spec: &SpectralData) -> DMatrix<f64> {
    let v = spec.right_vectors();
    let master = spec.master_indices();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for slot in real_slots(spec) {
        match slot {
            Slot::Real(k) => cols.push((0..spec.dim()).map(|i| v[(i, master[k])].re).collect()),
            Slot::Pair(k, _) => {
                cols.push((0..spec.dim()).map(|i| 2.0 * v[(i, master[k])].re).collect());
                cols.push((0..spec.dim()).map(|i| -2.0 * v[(i, master[k])].im).collect());
            }
        }
    }
    DMatrix::from_fn(spec.dim(), cols.len(), |i, j| cols[j][i])
}

#[derive(Debug, Clone)]
pub struct Lifted {
    pub x: Vec<f64>,
    pub outside_trust_region: bool,
}

/// Solved SSM: lift and reduced dynamics conditioned on one controller.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    system: ControlAffineSystem,
    spectral: SpectralData,
    controller: Option<ControllerParams>,
    config: SsmConfig,
    modal: TaylorFourierMap,
    lift: TaylorFourierMap,
    rdyn: TaylorFourierMap,
    /// Autonomous nonlinear reduced dynamics, kept apart so the residual never
    /// subtracts the linear part numerically.
    rdyn_nl: SeriesVec,
    slots: Vec<Slot>,
    trust_radius: Option<f64>,
}

impl ReducedModel {
    /// Autonomous model (eps-part empty).
    pub fn autonomous(system: &ControlAffineSystem, spec: &SpectralData, cfg: &SsmConfig) -> Result<Self> {
        let auto = solve_autonomous(system, spec, cfg)?;
        let empty = PeriodicCorrection {
            modal: BTreeMap::new(),
            reduced: BTreeMap::new(),
        };
        Ok(Self::assemble(system, spec, &auto, empty, None, 1.0, cfg))
    }

    /// Full solve for a controller, via the direct (reference) path.
    pub fn solve(
        system: &ControlAffineSystem,
        spec: &SpectralData,
        controller: &ControllerParams,
        cfg: &SsmConfig,
    ) -> Result<Self> {
        let auto = solve_autonomous(system, spec, cfg)?;
        let corr = solve_periodic_correction(system, spec, &auto, controller, cfg)?;
        Ok(Self::assemble(system, spec, &auto, corr, Some(controller), controller.omega(), cfg))
    }

    pub fn assemble(
        system: &ControlAffineSystem,
        spec: &SpectralData,
        auto: &AutonomousSolution,
        corr: PeriodicCorrection,
        controller: Option<&ControllerParams>,
        omega: f64,
        cfg: &SsmConfig,
    ) -> Self {
        let basis = auto.basis.clone();
        let len = basis.len();
        let eps = system.epsilon();
        let lift_periodic = corr
            .modal
            .iter()
            .map(|(&h, rows)| (h, mat_series(spec.right_vectors(), rows, len)))
            .collect();
        let make = |out_dim, autonomous: SeriesVec, periodic| {
            TaylorFourierMap::new(
                basis.clone(),
                out_dim,
                autonomous,
                periodic,
                eps,
                omega,
                cfg.order,
                cfg.correction_order,
            )
        };
        let big_n = spec.dim();
        let n = spec.subspace_dim();
        Self {
            system: system.clone(),
            spectral: spec.clone(),
            controller: controller.cloned(),
            config: cfg.clone(),
            modal: make(big_n, auto.modal.clone(), corr.modal),
            lift: make(big_n, mat_series(spec.right_vectors(), &auto.modal, len), lift_periodic),
            rdyn: make(n, auto.rdyn.clone(), corr.reduced),
            rdyn_nl: auto.rdyn_nl.clone(),
            slots: real_slots(spec),
            trust_radius: None,
        }
    }

    pub fn with_trust_radius(mut self, radius: Option<f64>) -> Self {
        self.trust_radius = radius;
        self
    }

    pub fn trust_radius(&self) -> Option<f64> {
        self.trust_radius
    }

    pub fn system(&self) -> &ControlAffineSystem {
        &self.system
    }

    pub fn spectral(&self) -> &SpectralData {
        &self.spectral
    }

    pub fn controller(&self) -> Option<&ControllerParams> {
        self.controller.as_ref()
    }

    pub fn config(&self) -> &SsmConfig {
        &self.config
    }

    /// Lift in modal coordinates (`xi`).
    pub fn modal_map(&self) -> &TaylorFourierMap {
        &self.modal
    }

    /// Lift in physical coordinates (`x = V xi`).
    pub fn lift_map(&self) -> &TaylorFourierMap {
        &self.lift
    }

    pub fn reduced_map(&self) -> &TaylorFourierMap {
        &self.rdyn
    }

    pub fn omega(&self) -> f64 {
        self.rdyn.omega()
    }

    /// Number of real reduced coordinates (equals `n`).
    pub fn reduced_dim(&self) -> usize {
        self.spectral.subspace_dim()
    }

    pub fn to_modal(&self, q: &[f64]) -> Vec<C64> {
        let mut p = vec![C64::new(0.0, 0.0); self.reduced_dim()];
        let mut at = 0;
        for slot in &self.slots {
            match *slot {
                Slot::Real(k) => {
                    p[k] = C64::new(q[at], 0.0);
                    at += 1;
                }
                Slot::Pair(k, c) => {
                    p[k] = C64::new(q[at], q[at + 1]);
                    p[c] = p[k].conj();
                    at += 2;
                }
            }
        }
        p
    }

    fn real_coords(&self, p: &[C64]) -> Vec<f64> {
        let mut q = Vec::with_capacity(self.reduced_dim());
        for slot in &self.slots {
            match *slot {
                Slot::Real(k) => q.push(p[k].re),
                Slot::Pair(k, _) => {
                    q.push(p[k].re);
                    q.push(p[k].im);
                }
            }
        }
        q
    }

    /// Reduced coordinates of a full state (projection along the spectral complement).
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("state vector", self.spectral.dim(), x.len())?;
        Ok(self.real_coords(&self.spectral.project(x)))
    }

    fn outside(&self, q: &[f64]) -> bool {
        match self.trust_radius {
            Some(r) => q.iter().map(|v| v * v).sum::<f64>().sqrt() > r,
            None => false,
        }
    }

    pub fn lift(&self, q: &[f64], phi: f64) -> Result<Lifted> {
        check_dim("reduced state", self.reduced_dim(), q.len())?;
        let p = self.to_modal(q);
        let x = self.lift.eval(&p, phi).iter().map(|c| c.re).collect();
        Ok(Lifted {
            x,
            outside_trust_region: self.outside(q),
        })
    }

    pub(crate) fn lift_into(&self, q: &[f64], phi: f64, x: &mut [f64]) {
        let p = self.to_modal(q);
        for (xi, c) in x.iter_mut().zip(self.lift.eval(&p, phi)) {
            *xi = c.re;
        }
    }

    /// `q' ` from `p' = R(p, phi)`.
    pub fn reduced_rhs(&self, q: &[f64], phi: f64) -> Result<(Vec<f64>, bool)> {
        check_dim("reduced state", self.reduced_dim(), q.len())?;
        let mut dq = vec![0.0; q.len()];
        self.reduced_rhs_into(q, phi, &mut dq);
        Ok((dq, self.outside(q)))
    }

    pub(crate) fn reduced_rhs_into(&self, q: &[f64], phi: f64, dq: &mut [f64]) {
        let p = self.to_modal(q);
        let r = match self.config.reduced_dynamics {
            ReducedDynamics::Series => self.rdyn.eval(&p, phi),
            ReducedDynamics::Graph => {
                let vals = self.rdyn.basis().monomial_values(&p);
                let f = self.modal_nonlinear(&self.modal.eval_with(&vals, phi), phi);
                self.graph_rhs(&p, &f)
            }
        };
        dq.copy_from_slice(&self.real_coords(&r));
    }

    /// Modal coordinates `V^-1 (f0(x) + eps sum_i f_i(x) kappa_i(H x, phi))` at
    /// the physical state of `xi`, without the linear part.
    fn modal_nonlinear(&self, xi: &[C64], phi: f64) -> Vec<C64> {
        let spec = &self.spectral;
        let sys = &self.system;
        let big_n = spec.dim();
        let x: Vec<f64> = (0..big_n)
            .map(|i| (0..big_n).map(|j| spec.right_vectors()[(i, j)] * xi[j]).sum::<C64>().re)
            .collect();
        let mut fx = vec![0.0; big_n];
        sys.f0().eval_into(&x, &mut fx);
        if let Some(ctrl) = &self.controller {
            let mut u = vec![0.0; sys.input_dim()];
            ctrl.eval_into(&sys.output(&x), phi, &mut u);
            let mut g = vec![0.0; big_n];
            for (f, ui) in sys.controls().iter().zip(&u) {
                g.iter_mut().for_each(|v| *v = 0.0);
                f.eval_into(&x, &mut g);
                for (a, b) in fx.iter_mut().zip(&g) {
                    *a += sys.epsilon() * ui * b;
                }
            }
        }
        (0..big_n)
            .map(|i| (0..big_n).map(|j| spec.left_vectors()[(i, j)] * fx[j]).sum())
            .collect()
    }

    /// Master rows of the modal field on the lift (`xi_E = p` for a graph).
    fn graph_rhs(&self, p: &[C64], f: &[C64]) -> Vec<C64> {
        let lam = self.spectral.eigenvalues();
        self.spectral
            .master_indices()
            .iter()
            .zip(p)
            .map(|(&mk, &pk)| lam[mk] * pk + f[mk])
            .collect()
    }

    /// Invariance residual `|| V rho ||` at each `(q, phi)`, with `rho` the
    /// modal-form defect; linear terms cancel symbolically.
    pub fn invariance_residual(&self, samples: &[(Vec<f64>, f64)]) -> Result<Vec<f64>> {
        let spec = &self.spectral;
        let big_n = spec.dim();
        let basis = self.rdyn.basis();
        let lam = spec.eigenvalues();
        let master = spec.master_indices();
        let omega = self.omega();
        let eps = self.system.epsilon();
        let mut out = Vec::with_capacity(samples.len());
        for (q, phi) in samples {
            check_dim("reduced state", self.reduced_dim(), q.len())?;
            let p = self.to_modal(q);
            let vals = basis.monomial_values(&p);
            let xi = self.modal.eval_with(&vals, *phi);
            let f = self.modal_nonlinear(&xi, *phi);

            let mut rho = vec![C64::new(0.0, 0.0); big_n];
            let r_full = match self.config.reduced_dynamics {
                ReducedDynamics::Series => {
                    // R_nl + eps r1, without the linear part
                    let mut r_nl: Vec<C64> = self
                        .rdyn_nl
                        .iter()
                        .map(|row| row.iter().zip(&vals).map(|(c, v)| c * v).sum())
                        .collect();
                    for (&h, rows) in self.rdyn.periodic() {
                        let rot = C64::from_polar(eps, h as f64 * phi);
                        for (o, row) in r_nl.iter_mut().zip(rows) {
                            *o += rot * row.iter().zip(&vals).map(|(c, v)| c * v).sum::<C64>();
                        }
                    }
                    for (k, &mk) in master.iter().enumerate() {
                        rho[mk] = f[mk] - r_nl[k];
                    }
                    self.rdyn.eval_with(&vals, *phi)
                }
                // master rows vanish identically
                ReducedDynamics::Graph => self.graph_rhs(&p, &f),
            };
            let dphi = self.modal.eval_dphi(&p, *phi);
            let dps: Vec<Vec<C64>> = (0..p.len()).map(|a| self.modal.eval_dp(&p, *phi, a)).collect();
            for s in spec.slave_indices() {
                let mut transport = dphi[s] * omega;
                for (a, dp) in dps.iter().enumerate() {
                    transport += dp[s] * r_full[a];
                }
                rho[s] = lam[s] * xi[s] + f[s] - transport;
            }
            let norm = (0..big_n)
                .map(|i| {
                    (0..big_n)
                        .map(|j| spec.right_vectors()[(i, j)] * rho[j])
                        .sum::<C64>()
                        .norm_sqr()
                })
                .sum::<f64>()
                .sqrt();
            out.push(norm);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> ReducedModelJson {
        ReducedModelJson {
            master_eigenvalues: self
                .spectral
                .master_eigenvalues()
                .iter()
                .map(|l| [l.re, l.im])
                .collect(),
            trust_radius: self.trust_radius,
            controller: self.controller.as_ref().map(|c| c.flat().to_vec()),
            lift: self.lift.to_json(),
            reduced: self.rdyn.to_json(),
        }
    }
}

/// Serialized coefficient bundles of a [`ReducedModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedModelJson {
    pub master_eigenvalues: Vec<[f64; 2]>,
    pub trust_radius: Option<f64>,
    pub controller: Option<Vec<f64>>,
    pub lift: TaylorFourierJson,
    pub reduced: TaylorFourierJson,
}
