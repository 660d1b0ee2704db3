//! Adiabatically switched isospectral perturbations `H(t) = G(t) H G(t)^*`
//! with `G(t) = exp(i Phi(t) . X)` and their unitary propagators.
//!
//! The gauge always uses the plain site coordinates `0..L_k`, whatever
//! displacement convention the model uses for commutators.

use ndarray::{Array1, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::LatticeOperatorSet;
use crate::ncalg::{adjoint, identity, op_norm, spectral_decompose, Mat, Operator, SpectralData, C64};

/// `s(t) = e^{eps t}` for `t <= 0` and `1` afterwards.
pub fn switch_value(eps: f64, t: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::NonPositiveEpsilon(eps));
    }
    Ok(if t <= 0.0 { (eps * t).exp() } else { 1.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Modulation {
    Constant,
    /// `sin^2(pi (t - t0) / (t1 - t0))` on `[t0, t1]`, zero elsewhere.
    CompactBump { t0: f64, t1: f64 },
    /// `cos(omega0 t)`.
    FourierCosine { omega0: f64 },
}

impl Modulation {
    pub fn name(&self) -> &'static str {
        match self {
            Modulation::Constant => "constant",
            Modulation::CompactBump { .. } => "compact_bump",
            Modulation::FourierCosine { .. } => "fourier_cosine",
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Modulation::Constant => 1.0,
            Modulation::CompactBump { t0, t1 } => {
                if t < t0 || t > t1 {
                    0.0
                } else {
                    (std::f64::consts::PI * (t - t0) / (t1 - t0)).sin().powi(2)
                }
            }
            Modulation::FourierCosine { omega0 } => (omega0 * t).cos(),
        }
    }

    /// Left edge of the support.
    pub fn support_start(&self) -> f64 {
        match *self {
            Modulation::CompactBump { t0, .. } => t0,
            _ => f64::NEG_INFINITY,
        }
    }

    /// `f` written as `sum c cos(w t + phase)` on `[a, b]`.
    fn cosine_terms(&self) -> (Vec<(f64, f64, f64)>, f64, f64) {
        match *self {
            Modulation::Constant => (vec![(1.0, 0.0, 0.0)], f64::NEG_INFINITY, f64::INFINITY),
            Modulation::CompactBump { t0, t1 } => {
                let w = 2.0 * std::f64::consts::PI / (t1 - t0);
                (vec![(0.5, 0.0, 0.0), (-0.5, w, -w * t0)], t0, t1)
            }
            Modulation::FourierCosine { omega0 } => {
                (vec![(1.0, omega0, 0.0)], f64::NEG_INFINITY, f64::INFINITY)
            }
        }
    }

    /// Kinks of `f` where quadrature panels should break.
    pub fn breakpoints(&self) -> Vec<f64> {
        match *self {
            Modulation::CompactBump { t0, t1 } => vec![t0, t1],
            _ => Vec::new(),
        }
    }
}

/// `int_a^b e^{eps tau} cos(w tau + phase) dtau`, with `a` possibly `-inf` when `eps > 0`.
fn exp_cos_integral(eps: f64, w: f64, phase: f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    if eps == 0.0 && w == 0.0 {
        return phase.cos() * (b - a);
    }
    let z = C64::new(eps, w);
    let prim = |x: f64| -> C64 {
        if x == f64::NEG_INFINITY {
            C64::new(0.0, 0.0)
        } else {
            (z * x).exp() / z
        }
    };
    (C64::from_polar(1.0, phase) * (prim(b) - prim(a))).re
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationProfile {
    pub eps: f64,
    pub field: Vec<f64>,
    pub modulation: Vec<Modulation>,
}

impl PerturbationProfile {
    pub fn constant(eps: f64, field: Vec<f64>) -> Self {
        let modulation = vec![Modulation::Constant; field.len()];
        Self { eps, field, modulation }
    }

    pub fn with_modulation(eps: f64, field: Vec<f64>, m: Modulation) -> Self {
        let modulation = vec![m; field.len()];
        Self { eps, field, modulation }
    }

    pub fn with_field(&self, field: Vec<f64>) -> Self {
        Self { field, ..self.clone() }
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        Self { eps, ..self.clone() }
    }

    pub fn dim(&self) -> usize {
        self.field.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::NonPositiveEpsilon(self.eps));
        }
        if self.field.len() != self.modulation.len() {
            return Err(Error::DimMismatch { left: self.field.len(), right: self.modulation.len() });
        }
        if self.field.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("field components must be finite".into()));
        }
        for m in &self.modulation {
            match *m {
                Modulation::CompactBump { t0, t1 } if !(t0 < t1) => {
                    return Err(Error::InvalidArgument(format!("compact bump needs t0 < t1, got [{t0}, {t1}]")));
                }
                Modulation::FourierCosine { omega0 } if !omega0.is_finite() => {
                    return Err(Error::InvalidArgument("omega0 must be finite".into()));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Left edge of the joint support of all `f_k`; `-inf` unless every
    /// component is compactly supported.
    pub fn t_start(&self) -> f64 {
        self.modulation
            .iter()
            .map(Modulation::support_start)
            .fold(f64::INFINITY, f64::min)
    }

    /// Earliest time that must be resolved so that `int_{-inf}^T s(tau) scale dtau <= tol`;
    /// exact support edge for compactly supported modulations.
    pub fn truncation_time(&self, scale: f64, tol: f64) -> f64 {
        let start = self.t_start();
        if start.is_finite() {
            return start;
        }
        if scale <= 0.0 {
            return 0.0;
        }
        ((tol * self.eps / scale).ln() / self.eps).min(0.0)
    }

    /// `int_{-inf}^t s(tau) f_k(tau) dtau` without the field factor.
    pub fn primitive(&self, k: usize, t: f64) -> f64 {
        let (terms, a, b) = self.modulation[k].cosine_terms();
        let hi = t.min(b);
        let mut acc = 0.0;
        for (c, w, phase) in terms {
            acc += c * exp_cos_integral(self.eps, w, phase, a, hi.min(0.0));
            acc += c * exp_cos_integral(0.0, w, phase, a.max(0.0), hi);
        }
        acc
    }

    /// `s(t) f_k(t)`.
    pub fn weight(&self, k: usize, t: f64) -> f64 {
        let s = if t <= 0.0 { (self.eps * t).exp() } else { 1.0 };
        s * self.modulation[k].value(t)
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        for m in &self.modulation {
            out.extend(m.breakpoints());
        }
        out
    }
}

/// `Phi^eps(t)`, componentwise `Phi_k int_{-inf}^t s f_k`.
pub fn phi_profile(p: &PerturbationProfile, t: f64) -> Vec<f64> {
    (0..p.dim()).map(|k| p.field[k] * p.primitive(k, t)).collect()
}

/// `d/dt Phi^eps(t) = s(t) Phi_k f_k(t)`.
pub fn drive(p: &PerturbationProfile, t: f64) -> Vec<f64> {
    (0..p.dim()).map(|k| p.field[k] * p.weight(k, t)).collect()
}

fn check_dims(set: &LatticeOperatorSet, p: &PerturbationProfile) -> Result<()> {
    p.validate()?;
    if p.dim() != set.directions() {
        return Err(Error::DimMismatch { left: set.directions(), right: p.dim() });
    }
    Ok(())
}

/// Diagonal of `G(t)`.
pub fn gauge_phases(set: &LatticeOperatorSet, phi: &[f64]) -> Array1<C64> {
    let n = set.dim();
    Array1::from_shape_fn(n, |a| {
        let arg: f64 = phi
            .iter()
            .enumerate()
            .map(|(k, f)| f * set.positions.coordinates(k)[a])
            .sum();
        C64::from_polar(1.0, arg)
    })
}

pub fn gauge_unitary(set: &LatticeOperatorSet, p: &PerturbationProfile, t: f64) -> Result<Operator> {
    check_dims(set, p)?;
    let g = gauge_phases(set, &phi_profile(p, t));
    Operator::unitary(Mat::from_diag(&g))
}

/// `diag(g) A diag(g)^*`.
pub fn conjugate_diag(g: &Array1<C64>, a: &Mat) -> Mat {
    let mut out = a.clone();
    Zip::indexed(&mut out).for_each(|(m, n), z| *z *= g[m] * g[n].conj());
    out
}

pub fn perturbed_hamiltonian(set: &LatticeOperatorSet, p: &PerturbationProfile, t: f64) -> Result<Operator> {
    check_dims(set, p)?;
    let g = gauge_phases(set, &phi_profile(p, t));
    Operator::hermitian(conjugate_diag(&g, set.h.entries()))
}

/// `ad_{X_1}^{k1} ad_{X_2}^{k2} (H)` with `ad_X(A) = i[X, A]` and plain coordinates.
pub fn iterated_ad(set: &LatticeOperatorSet, kappa: &[usize]) -> Mat {
    let mut out = set.h.entries().clone();
    for (k, &power) in kappa.iter().enumerate() {
        let x = set.positions.coordinates(k);
        for _ in 0..power {
            Zip::indexed(&mut out).for_each(|(a, b), z| *z *= C64::new(0.0, x[a] - x[b]));
        }
    }
    out
}

/// `J_kappa = (-1)^{|kappa|} ad_X^kappa(H)`.
pub fn current_tensor(set: &LatticeOperatorSet, kappa: &[usize]) -> Mat {
    let order: usize = kappa.iter().sum();
    let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
    iterated_ad(set, kappa).mapv(|z| z * sign)
}

fn multi_indices(d: usize, order: usize) -> Vec<Vec<usize>> {
    if d == 1 {
        return vec![vec![order]];
    }
    let mut out = Vec::new();
    for first in (0..=order).rev() {
        for mut rest in multi_indices(d - 1, order - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Truncated additive form `W_N(t) = sum_{1 <= |kappa| <= N} (-1)^{|kappa|}/kappa! w_kappa J_kappa`,
/// so that `H + W_N -> G H G^*` as `N` grows.
pub fn bch_additive_perturbation(
    set: &LatticeOperatorSet,
    p: &PerturbationProfile,
    t: f64,
    order: usize,
) -> Result<Operator> {
    check_dims(set, p)?;
    if order == 0 {
        return Err(Error::InvalidArgument("BCH order must be at least 1".into()));
    }
    let phi = phi_profile(p, t);
    let n = set.dim();
    let mut w = Mat::zeros((n, n));
    for r in 1..=order {
        for kappa in multi_indices(set.directions(), r) {
            let weight: f64 = kappa
                .iter()
                .zip(&phi)
                .map(|(&e, f)| f.powi(e as i32) / factorial(e))
                .product();
            if weight == 0.0 {
                continue;
            }
            let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
            w.scaled_add(C64::new(sign * weight, 0.0), &current_tensor(set, &kappa));
        }
    }
    Operator::new(w)
}

#[derive(Clone, Debug)]
pub struct PropagatorResult {
    pub u: Operator,
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
    pub steps: usize,
    pub midpoint: f64,
    pub cocycle_residual: f64,
}

/// Midpoint-exponential stepper. Each step applies
/// `exp(-i h G(m) H G(m)^*) = G(m) e^{-ihH} G(m)^*`, so one dense product
/// per step suffices once `e^{-ihH}` is known.
pub struct Stepper<'a> {
    set: &'a LatticeOperatorSet,
    p: &'a PerturbationProfile,
    spectral: SpectralData,
}

impl<'a> Stepper<'a> {
    pub fn new(set: &'a LatticeOperatorSet, p: &'a PerturbationProfile) -> Result<Self> {
        check_dims(set, p)?;
        Ok(Self { set, p, spectral: spectral_decompose(&set.h)? })
    }

    pub fn with_spectral(set: &'a LatticeOperatorSet, p: &'a PerturbationProfile, spectral: SpectralData) -> Result<Self> {
        check_dims(set, p)?;
        Ok(Self { set, p, spectral })
    }

    pub fn spectral(&self) -> &SpectralData {
        &self.spectral
    }

    pub fn phases(&self, t: f64) -> Array1<C64> {
        gauge_phases(self.set, &phi_profile(self.p, t))
    }

    /// Number of uniform steps of size at most `dt` covering `[t0, t1]`.
    pub fn step_count(t0: f64, t1: f64, dt: f64) -> Result<usize> {
        if !(dt > 0.0) {
            return Err(Error::NonPositiveStep(dt));
        }
        Ok(((t1 - t0) / dt).ceil().max(0.0) as usize)
    }

    /// Runs `n` uniform steps from `t0` to `t1`, calling `visit(i, tau_i, U(tau_i, t0))`
    /// at every node including both ends.
    pub fn sweep<F>(&self, t0: f64, t1: f64, n: usize, mut visit: F) -> Result<Mat>
    where
        F: FnMut(usize, f64, &Mat) -> Result<()>,
    {
        let dim = self.set.dim();
        let mut u = identity(dim);
        visit(0, t0, &u)?;
        if n == 0 {
            return Ok(u);
        }
        let h = (t1 - t0) / n as f64;
        let e = self.spectral.propagator(h);
        for i in 0..n {
            let g = self.phases(t0 + (i as f64 + 0.5) * h);
            for (a, mut row) in u.rows_mut().into_iter().enumerate() {
                let c = g[a].conj();
                row.mapv_inplace(|z| z * c);
            }
            u = e.dot(&u);
            for (a, mut row) in u.rows_mut().into_iter().enumerate() {
                let c = g[a];
                row.mapv_inplace(|z| z * c);
            }
            let tau = if i + 1 == n { t1 } else { t0 + (i + 1) as f64 * h };
            visit(i + 1, tau, &u)?;
        }
        Ok(u)
    }

    /// `U(t1, t0)`; for `t1 < t0` the adjoint of the forward propagator.
    pub fn evolve(&self, t0: f64, t1: f64, dt: f64) -> Result<Mat> {
        if t1 < t0 {
            return Ok(adjoint(&self.evolve(t1, t0, dt)?));
        }
        let n = Self::step_count(t0, t1, dt)?;
        self.sweep(t0, t1, n, |_, _, _| Ok(()))
    }
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

pub fn propagate(
    set: &LatticeOperatorSet,
    p: &PerturbationProfile,
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<PropagatorResult> {
    let stepper = Stepper::new(set, p)?;
    propagate_with(&stepper, t0, t1, dt)
}

pub fn propagate_with(stepper: &Stepper<'_>, t0: f64, t1: f64, dt: f64) -> Result<PropagatorResult> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveStep(dt));
    }
    let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
    let steps = Stepper::step_count(lo, hi, dt)?;
    let u = stepper.evolve(t0, t1, dt)?;
    let midpoint = lo + GOLDEN * (hi - lo);
    let cocycle_residual = if steps > 1 {
        let first = stepper.evolve(t0, midpoint, dt)?;
        let second = stepper.evolve(midpoint, t1, dt)?;
        op_norm(&(second.dot(&first) - &u))
    } else {
        0.0
    };
    Ok(PropagatorResult {
        u: Operator::unitary(u)?,
        t0,
        t1,
        dt,
        steps,
        midpoint,
        cocycle_residual,
    })
}

/// `alpha_{(t,s)}(A) = U(t,s) A U(t,s)^*`.
pub fn perturbed_evolve(
    set: &LatticeOperatorSet,
    p: &PerturbationProfile,
    t: f64,
    s: f64,
    dt: f64,
    a: &Mat,
) -> Result<Mat> {
    let u = Stepper::new(set, p)?.evolve(s, t, dt)?;
    Ok(u.dot(a).dot(&adjoint(&u)))
}

/// Operator-norm residual of
/// `U(t,s) - U_0(t-s) = -i int_s^t U(t,tau) W(tau) U_0(tau-s) dtau`,
/// `W = H(tau) - H`, with Simpson quadrature on the propagation grid.
pub fn duhamel_residual(
    set: &LatticeOperatorSet,
    p: &PerturbationProfile,
    t: f64,
    s: f64,
    dt: f64,
) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveStep(dt));
    }
    if t < s {
        return duhamel_residual(set, p, s, t, dt);
    }
    let stepper = Stepper::new(set, p)?;
    let mut n = Stepper::step_count(s, t, dt)?;
    if n == 0 {
        return Ok(0.0);
    }
    n += n % 2;
    let h = (t - s) / n as f64;
    let dim = set.dim();
    let spectral = stepper.spectral();
    // accumulates int U(tau,s)^* W(tau) U_0(tau-s)
    let mut acc = Mat::zeros((dim, dim));
    let u_ts = stepper.sweep(s, t, n, |i, tau, u| {
        let g = stepper.phases(tau);
        let w = conjugate_diag(&g, set.h.entries()) - set.h.entries();
        let u0 = spectral.propagator(tau - s);
        let term = adjoint(u).dot(&w.dot(&u0));
        let weight = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc.scaled_add(C64::new(weight * h / 3.0, 0.0), &term);
        Ok(())
    })?;
    let rhs = u_ts.dot(&acc).mapv(|z| z * C64::new(0.0, -1.0));
    let lhs = &u_ts - &spectral.propagator(t - s);
    Ok(op_norm(&(lhs - rhs)))
}
