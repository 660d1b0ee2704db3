//! State evolutions, net currents and conductivity coefficients.
//!
//! Conductivity matrices are indexed `sigma[[k, j]]`: the perturbation acts
//! along `Phi_k` and the current `J_j` is measured.

use std::time::Instant;

use gauss_quad::legendre::GaussLegendre;
use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::dynamics::{conjugate_diag, gauge_phases, phi_profile, Modulation, PerturbationProfile, Stepper};
use crate::error::{Error, Result};
use crate::lattice::{
    bloch_reduce, chern_number, fermi_dirac_state, fermi_projection, DisplacementConvention, LatticeOperatorSet,
    Positions, DEFAULT_CHERN_GRID,
};
use crate::ncalg::{adjoint, max_abs, Mat, Operator, SpectralData, TracialAlgebra, C64, I};

pub type SigmaMatrix = Array2<f64>;

/// Largest `[H, rho]` entry accepted for an equilibrium state.
pub const EQUILIBRIUM_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsOptions {
    pub dt: f64,
    /// Relative size of the neglected infinite-past tail of every time integral.
    pub tail_tol: f64,
    pub fd_step: f64,
    pub fd_tol: f64,
    pub quadrature_nodes: usize,
}

impl Default for NumericsOptions {
    fn default() -> Self {
        Self { dt: 1e-3, tail_tol: 1e-8, fd_step: 1e-3, fd_tol: 1e-4, quadrature_nodes: 16 }
    }
}

impl NumericsOptions {
    /// `dt = 1e-3 * 2 pi / ||H||`.
    pub fn default_dt(h_norm: f64) -> f64 {
        1e-3 * 2.0 * std::f64::consts::PI / h_norm.max(1e-12)
    }
}

/// Model, spectral data and current operators shared by all routes.
#[derive(Clone, Debug)]
pub struct ResponseContext {
    pub set: LatticeOperatorSet,
    pub spectral: SpectralData,
    pub currents: Vec<Operator>,
    pub alg: TracialAlgebra,
}

impl ResponseContext {
    pub fn new(set: LatticeOperatorSet) -> Result<Self> {
        let spectral = crate::ncalg::spectral_decompose(&set.h)?;
        let currents = set.currents();
        let alg = TracialAlgebra::normalized(set.dim());
        Ok(Self { set, spectral, currents, alg })
    }

    pub fn directions(&self) -> usize {
        self.set.directions()
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    fn requires_open(&self, what: &'static str) -> Result<()> {
        if self.set.positions.convention != DisplacementConvention::OpenPositions {
            return Err(Error::RequiresOpenPositions(what));
        }
        Ok(())
    }

    pub fn check_equilibrium(&self, rho: &Operator) -> Result<()> {
        if rho.dim() != self.dim() {
            return Err(Error::DimMismatch { left: self.dim(), right: rho.dim() });
        }
        let h = self.set.h.entries();
        let residual = max_abs(&(h.dot(rho.entries()) - rho.entries().dot(h)));
        if residual > EQUILIBRIUM_TOL {
            return Err(Error::NotEquilibrium { residual });
        }
        Ok(())
    }

    /// `d_{X_k}(rho)` with the model's displacement convention.
    pub fn derivatives(&self, rho: &Operator) -> Vec<Mat> {
        (0..self.directions()).map(|k| self.set.derive(k, rho.entries())).collect()
    }

    /// Start of the truncated time axis. Shared by every route so that all
    /// tails are cut at the same point.
    pub fn tail_start(&self, p: &PerturbationProfile, rho: &Operator, tol: f64) -> Result<f64> {
        let d_norm = self
            .derivatives(rho)
            .iter()
            .map(|d| self.alg.schatten_norm_mat(d, 1.0))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        let j_norm = self.currents.iter().map(Operator::op_norm).fold(1.0, f64::max);
        Ok(p.truncation_time(d_norm * j_norm, tol))
    }

    fn check_profile(&self, p: &PerturbationProfile) -> Result<()> {
        p.validate()?;
        if p.dim() != self.directions() {
            return Err(Error::DimMismatch { left: self.directions(), right: p.dim() });
        }
        Ok(())
    }
}

/// `gamma_t(rho) = G(t) rho G(t)^*`.
pub fn interaction_state(set: &LatticeOperatorSet, p: &PerturbationProfile, rho: &Operator, t: f64) -> Result<Operator> {
    p.validate()?;
    let g = gauge_phases(set, &phi_profile(p, t));
    let mut out = Operator::new(conjugate_diag(&g, rho.entries()))?;
    if rho.is_hermitian() {
        out = Operator::hermitian(out.into_entries())?;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvolutionMethod {
    DirectPropagation,
    ExpansionIntegral,
}

#[derive(Clone, Debug)]
pub struct EvolutionPair {
    pub t: f64,
    pub rho_int: Operator,
    pub rho_full: Operator,
    pub k: Vec<Operator>,
    pub method: EvolutionMethod,
    /// Start of the truncated time axis.
    pub tail_truncation: f64,
}

impl EvolutionPair {
    /// `||rho_full - rho_int - Phi . K||_1` in the normalized trace.
    pub fn expansion_residual(&self, alg: &TracialAlgebra, field: &[f64]) -> Result<f64> {
        let mut r = self.rho_full.entries() - self.rho_int.entries();
        for (kk, f) in self.k.iter().zip(field) {
            r.scaled_add(C64::new(-f, 0.0), kk.entries());
        }
        alg.schatten_norm_mat(&r, 1.0)
    }
}

/// `i[X_k, A]` with plain coordinates, the generator of the gauge unitary.
fn coordinate_derive(positions: &Positions, k: usize, a: &Mat) -> Mat {
    let x = positions.coordinates(k);
    let mut out = a.clone();
    Zip::indexed(&mut out).for_each(|(m, n), z| *z *= I * (x[m] - x[n]));
    out
}

fn scale_rows(u: &Mat, g: &Array1<C64>, conj: bool) -> Mat {
    let mut out = u.clone();
    for (a, mut row) in out.rows_mut().into_iter().enumerate() {
        let c = if conj { g[a].conj() } else { g[a] };
        row.mapv_inplace(|z| z * c);
    }
    out
}

/// Propagates `rho_int(T)` from the start `T` of the truncated axis to `t`
/// and, if requested, accumulates
/// `K_k = -int_T^t s f_k alpha_{(t,tau)}(d_k rho_int(tau)) dtau` on the same grid.
fn evolve(
    ctx: &ResponseContext,
    p: &PerturbationProfile,
    rho: &Operator,
    t: f64,
    opts: &NumericsOptions,
    with_k: bool,
) -> Result<EvolutionPair> {
    ctx.check_profile(p)?;
    ctx.check_equilibrium(rho)?;
    let set = &ctx.set;
    let n_dim = ctx.dim();
    let d = ctx.directions();
    let tail = ctx.tail_start(p, rho, opts.tail_tol)?.min(t);
    let rho_int_t = interaction_state(set, p, rho, t)?;
    let method = if with_k { EvolutionMethod::ExpansionIntegral } else { EvolutionMethod::DirectPropagation };
    let zero_k = || vec![Operator::zeros(n_dim); d];
    if t <= tail {
        return Ok(EvolutionPair {
            t,
            rho_full: rho_int_t.clone(),
            rho_int: rho_int_t,
            k: zero_k(),
            method,
            tail_truncation: tail,
        });
    }
    let stepper = Stepper::with_spectral(set, p, ctx.spectral.clone())?;
    let mut n = Stepper::step_count(tail, t, opts.dt)?;
    n += n % 2;
    let h = (t - tail) / n as f64;
    let derivs: Vec<Mat> = (0..d).map(|k| coordinate_derive(&set.positions, k, rho.entries())).collect();
    let mut acc: Vec<Mat> = vec![Mat::zeros((n_dim, n_dim)); if with_k { d } else { 0 }];
    let u_t = stepper.sweep(tail, t, n, |i, tau, u| {
        if !with_k {
            return Ok(());
        }
        let simpson = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let weights: Vec<f64> = (0..d).map(|k| p.weight(k, tau)).collect();
        if weights.iter().all(|w| *w == 0.0) {
            return Ok(());
        }
        let v = scale_rows(u, &stepper.phases(tau), true);
        let va = adjoint(&v);
        for k in 0..d {
            if weights[k] != 0.0 {
                let y = va.dot(&derivs[k].dot(&v));
                acc[k].scaled_add(C64::new(simpson * weights[k], 0.0), &y);
            }
        }
        Ok(())
    })?;
    let u_t_adj = adjoint(&u_t);
    let rho_start = interaction_state(set, p, rho, tail)?;
    let rho_full = Operator::hermitian(u_t.dot(rho_start.entries()).dot(&u_t_adj))?;
    let k = if with_k {
        acc.iter()
            .map(|a| Operator::new(u_t.dot(a).dot(&u_t_adj).mapv(|z| z * (-h / 3.0))))
            .collect::<Result<Vec<_>>>()?
    } else {
        zero_k()
    };
    Ok(EvolutionPair { t, rho_int: rho_int_t, rho_full, k, method, tail_truncation: tail })
}

/// `rho_full(t) = U(t, T) rho_int(T) U(t, T)^*` with `T` the start of the
/// truncated axis.
pub fn full_state_direct(
    ctx: &ResponseContext,
    p: &PerturbationProfile,
    rho: &Operator,
    t: f64,
    opts: &NumericsOptions,
) -> Result<Operator> {
    Ok(evolve(ctx, p, rho, t, opts, false)?.rho_full)
}

pub fn full_state_expansion(
    ctx: &ResponseContext,
    p: &PerturbationProfile,
    rho: &Operator,
    t: f64,
    opts: &NumericsOptions,
) -> Result<EvolutionPair> {
    evolve(ctx, p, rho, t, opts, true)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetCurrent {
    /// `T(J_Phi(t) (rho_full - rho_int))`.
    pub value: f64,
    /// `T(J_Phi(t) rho_full) - T(J rho)`.
    pub dual_form: f64,
}

/// Net currents for every current operator of the context.
pub fn net_currents(
    ctx: &ResponseContext,
    p: &PerturbationProfile,
    rho: &Operator,
    t: f64,
    opts: &NumericsOptions,
) -> Result<Vec<NetCurrent>> {
    let pair = evolve(ctx, p, rho, t, opts, false)?;
    let g = gauge_phases(&ctx.set, &phi_profile(p, t));
    let diff = pair.rho_full.entries() - pair.rho_int.entries();
    ctx.currents
        .iter()
        .map(|j| {
            let jp = conjugate_diag(&g, j.entries());
            let value = ctx.alg.trace_product(&jp, &diff)?.re;
            let dual_form = ctx.alg.trace_product(&jp, pair.rho_full.entries())?.re
                - ctx.alg.trace_product(j.entries(), rho.entries())?.re;
            Ok(NetCurrent { value, dual_form })
        })
        .collect()
}

pub fn net_current(
    ctx: &ResponseContext,
    p: &PerturbationProfile,
    j: usize,
    rho: &Operator,
    t: f64,
    opts: &NumericsOptions,
) -> Result<NetCurrent> {
    if j >= ctx.currents.len() {
        return Err(Error::InvalidArgument(format!("no current with index {j}")));
    }
    Ok(net_currents(ctx, p, rho, t, opts)?[j])
}

#[derive(Clone, Debug)]
pub struct FdResult {
    pub sigma: SigmaMatrix,
    /// `|level(dPhi) - level(dPhi/2)|` per entry.
    pub level_difference: SigmaMatrix,
}

/// Central differences of the net current in `Phi_k` at `Phi = 0`,
/// Richardson-combined over `dPhi` and `dPhi / 2`.
pub fn conductivity_fd(
    ctx: &ResponseContext,
    p: &PerturbationProfile,
    rho: &Operator,
    t: f64,
    opts: &NumericsOptions,
) -> Result<FdResult> {
    ctx.requires_open("finite differences of the gauge dynamics are compared with open-position derivations")?;
    ctx.check_profile(p)?;
    if !(opts.fd_step > 0.0) {
        return Err(Error::InvalidArgument("fd_step must be positive".into()));
    }
    let d = ctx.directions();
    let mut sigma = SigmaMatrix::zeros((d, d));
    let mut level_difference = SigmaMatrix::zeros((d, d));
    for k in 0..d {
        let mut levels = Vec::new();
        for h in [opts.fd_step, opts.fd_step / 2.0] {
            let current_at = |s: f64| -> Result<Vec<f64>> {
                let mut field = vec![0.0; d];
                field[k] = s * h;
                Ok(net_currents(ctx, &p.with_field(field), rho, t, opts)?.iter().map(|c| c.value).collect())
            };
            let plus = current_at(1.0)?;
            let minus = current_at(-1.0)?;
            levels.push(plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<_>>());
        }
        for j in 0..d {
            let (a, b) = (levels[0][j], levels[1][j]);
            let extrapolated = (4.0 * b - a) / 3.0;
            let difference = (a - b).abs();
            let bound = 10.0 * opts.fd_tol * extrapolated.abs().max(1.0);
            if difference > bound {
                return Err(Error::StepTooLarge { difference, bound });
            }
            sigma[[k, j]] = extrapolated;
            level_difference[[k, j]] = difference;
        }
    }
    Ok(FdResult { sigma, level_difference })
}

/// Eigenbasis coefficients `c_mn = J_nm (d_k rho)_mn / N` for all `(k, j)`.
fn kubo_coefficients(ctx: &ResponseContext, rho: &Operator) -> Vec<Vec<Mat>> {
    let n = ctx.dim() as f64;
    let derivs: Vec<Mat> = ctx.derivatives(rho).iter().map(|d| ctx.spectral.to_eigenbasis(d)).collect();
    let currents: Vec<Mat> = ctx.currents.iter().map(|j| ctx.spectral.to_eigenbasis(j.entries())).collect();
    derivs
        .iter()
        .map(|dk| {
            currents
                .iter()
                .map(|jj| {
                    let mut c = dk.clone();
                    Zip::from(&mut c).and(&jj.t()).for_each(|z, &jnm| *z *= jnm / n);
                    c
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct KuboResult {
    pub sigma: SigmaMatrix,
    pub est_error: SigmaMatrix,
    pub tail_truncation: f64,
}

/// `sigma_k[J_j](t) = -int_{-inf}^t s(tau) f_k(tau) T(J_j alpha_{t-tau}(d_k rho)) dtau`,
/// composite Gauss-Legendre on the truncated axis; the error estimate is the
/// change under panel doubling.
pub fn conductivity_kubo(
    ctx: &ResponseContext,
    p: &PerturbationProfile,
    rho: &Operator,
    t: f64,
    opts: &NumericsOptions,
) -> Result<KuboResult> {
    ctx.check_profile(p)?;
    ctx.check_equilibrium(rho)?;
    let d = ctx.directions();
    let tail = ctx.tail_start(p, rho, opts.tail_tol)?.min(t);
    let coeffs = kubo_coefficients(ctx, rho);
    let e = &ctx.spectral.eigenvalues;
    let bandwidth = (e[e.len() - 1] - e[0]).max(1e-12);
    let rule = GaussLegendre::new(opts.quadrature_nodes.max(2)).map_err(|err| Error::InvalidArgument(err.to_string()))?;
    let mut cuts: Vec<f64> = p.breakpoints().into_iter().filter(|b| *b > tail && *b < t).collect();
    cuts.push(tail);
    cuts.push(t);
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();
    let base_width = (4.0 / bandwidth).min(1.0);

    // T(J_j alpha_{t-tau}(d_k rho)) for all (k, j) at one time
    let correlation = |tau: f64| -> Array2<f64> {
        let a: Array1<C64> = e.mapv(|em| C64::from_polar(1.0, -(t - tau) * em));
        let a_conj = a.mapv(|z| z.conj());
        let mut out = Array2::zeros((d, d));
        for k in 0..d {
            for j in 0..d {
                out[[k, j]] = a.dot(&coeffs[k][j].dot(&a_conj)).re;
            }
        }
        out
    };
    let integrate = |refine: usize| -> Array2<f64> {
        let mut total = Array2::<f64>::zeros((d, d));
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let panels = (((hi - lo) / base_width).ceil() as usize).max(1) * refine;
            let width = (hi - lo) / panels as f64;
            for panel in 0..panels {
                let a = lo + panel as f64 * width;
                for (x, wt) in rule.as_node_weight_pairs() {
                    let tau = a + 0.5 * width * (x + 1.0);
                    let c = correlation(tau);
                    for k in 0..d {
                        let s = p.weight(k, tau);
                        if s != 0.0 {
                            for j in 0..d {
                                total[[k, j]] -= 0.5 * width * wt * s * c[[k, j]];
                            }
                        }
                    }
                }
            }
        }
        total
    };
    let coarse = integrate(1);
    let fine = integrate(2);
    let est_error = (&fine - &coarse).mapv(f64::abs);
    Ok(KuboResult { sigma: fine, est_error, tail_truncation: tail })
}

/// `(weight, kappa)` pairs with `f(tau) = sum weight e^{i kappa tau}`.
fn exponential_terms(p: &PerturbationProfile, k: usize) -> Result<Vec<(f64, f64)>> {
    match p.modulation[k] {
        Modulation::Constant => Ok(vec![(1.0, 0.0)]),
        Modulation::FourierCosine { omega0 } => Ok(vec![(0.5, omega0), (0.5, -omega0)]),
        m @ Modulation::CompactBump { .. } => Err(Error::UnsupportedModulation(m.name())),
    }
}

/// `(e^z - 1) / z`.
fn phi1(z: C64) -> C64 {
    if z.norm() < 1e-6 {
        C64::new(1.0, 0.0) + z / 2.0 + z * z / 6.0
    } else {
        (z.exp() - 1.0) / z
    }
}

/// Closed-form Kubo conductivity for constant and cosine modulations:
/// shifted Liouvillian resolvents for the switched-on past plus the exact
/// oscillatory integral over `[0, t]`.
pub fn conductivity_resolvent(
    ctx: &ResponseContext,
    p: &PerturbationProfile,
    rho: &Operator,
    t: f64,
) -> Result<SigmaMatrix> {
    ctx.check_profile(p)?;
    ctx.check_equilibrium(rho)?;
    let d = ctx.directions();
    let eps = p.eps;
    let coeffs = kubo_coefficients(ctx, rho);
    let e = &ctx.spectral.eigenvalues;
    let mut sigma = SigmaMatrix::zeros((d, d));
    for k in 0..d {
        let terms = exponential_terms(p, k)?;
        for j in 0..d {
            let mut acc = C64::new(0.0, 0.0);
            for &(w, kappa) in &terms {
                Zip::indexed(&coeffs[k][j]).for_each(|(m, n), &c| {
                    let omega = e[m] - e[n];
                    let nu = C64::new(0.0, omega + kappa);
                    let f = if t <= 0.0 {
                        C64::new(eps * t, kappa * t).exp() / C64::new(eps, omega + kappa)
                    } else {
                        let rot = C64::from_polar(1.0, -t * omega);
                        rot / C64::new(eps, omega + kappa) + rot * t * phi1(nu * t)
                    };
                    acc += c * f * w;
                });
            }
            sigma[[k, j]] = -acc.re;
        }
    }
    Ok(sigma)
}

/// The switch replaced by `e^{eps tau}` on the whole axis:
/// `-sum w e^{(eps + i kappa) t} T(J (eps + i kappa - L_H)^{-1}(d_k rho))`.
pub fn conductivity_tilde(ctx: &ResponseContext, p: &PerturbationProfile, rho: &Operator, t: f64) -> Result<SigmaMatrix> {
    ctx.check_profile(p)?;
    ctx.check_equilibrium(rho)?;
    let d = ctx.directions();
    let derivs = ctx.derivatives(rho);
    let mut sigma = SigmaMatrix::zeros((d, d));
    for k in 0..d {
        let terms = exponential_terms(p, k)?;
        let dk = Operator::new(derivs[k].clone())?;
        for &(w, kappa) in &terms {
            let r = ctx.spectral.liouvillian_resolvent(p.eps, kappa, &dk)?;
            let pre = C64::new(p.eps * t, kappa * t).exp() * w;
            for j in 0..d {
                let tr = ctx.alg.trace_product(ctx.currents[j].entries(), r.entries())?;
                sigma[[k, j]] -= (pre * tr).re;
            }
        }
    }
    Ok(sigma)
}

fn pairing_scale(ctx: &ResponseContext, rho: &Operator) -> Result<f64> {
    let mut scale: f64 = 1.0;
    for dk in ctx.derivatives(rho) {
        scale = scale.max(ctx.alg.schatten_norm_mat(&dk, 1.0)?);
    }
    let j = ctx.currents.iter().map(Operator::op_norm).fold(1.0, f64::max);
    Ok(scale * j)
}

/// Adiabatic limit `-T(P_H^perp(Q_J) d_k rho)` with `J = L_H(Q_J)`.
///
/// Without explicit `Q` operators, `Q_J` is solved in the eigenbasis on the
/// pairs with nonzero Bohr frequency. The Bohr-frequency-zero block of `J_j`
/// enters the `eps -> 0` limit only through its pairing with the same block
/// of `d_k rho`; a nonzero pairing means entry `(k, j)` has no limit and is
/// reported as `DiagonalObstruction`.
pub fn adiabatic_conductivity(ctx: &ResponseContext, rho: &Operator, q_map: Option<&[Operator]>) -> Result<SigmaMatrix> {
    let parts = adiabatic_parts(ctx, rho, q_map)?;
    for ((_, j), &pairing) in parts.pairing.indexed_iter() {
        if pairing > parts.bound {
            return Err(Error::DiagonalObstruction { direction: j, pairing });
        }
    }
    Ok(parts.sigma)
}

/// Single entry of [`adiabatic_conductivity`]; only the pairing of this
/// `(k, j)` is checked.
pub fn adiabatic_entry(ctx: &ResponseContext, rho: &Operator, k: usize, j: usize) -> Result<f64> {
    if k >= ctx.directions() || j >= ctx.directions() {
        return Err(Error::InvalidArgument(format!("entry ({k}, {j}) out of range")));
    }
    let parts = adiabatic_parts(ctx, rho, None)?;
    let pairing = parts.pairing[[k, j]];
    if pairing > parts.bound {
        return Err(Error::DiagonalObstruction { direction: j, pairing });
    }
    Ok(parts.sigma[[k, j]])
}

/// Adiabatic matrix with obstructed entries set to NaN.
pub fn adiabatic_conductivity_partial(ctx: &ResponseContext, rho: &Operator) -> Result<SigmaMatrix> {
    let parts = adiabatic_parts(ctx, rho, None)?;
    let mut sigma = parts.sigma;
    Zip::from(&mut sigma).and(&parts.pairing).for_each(|s, &p| {
        if p > parts.bound {
            *s = f64::NAN;
        }
    });
    Ok(sigma)
}

struct AdiabaticParts {
    sigma: SigmaMatrix,
    pairing: SigmaMatrix,
    bound: f64,
}

fn adiabatic_parts(ctx: &ResponseContext, rho: &Operator, q_map: Option<&[Operator]>) -> Result<AdiabaticParts> {
    ctx.check_equilibrium(rho)?;
    let d = ctx.directions();
    let tol = ctx.spectral.default_degeneracy_tol();
    let e = &ctx.spectral.eigenvalues;
    let n = ctx.dim() as f64;
    let derivs: Vec<Mat> = ctx.derivatives(rho).iter().map(|x| ctx.spectral.to_eigenbasis(x)).collect();
    let bound = 1e-10 * pairing_scale(ctx, rho)?;
    let mut sigma = SigmaMatrix::zeros((d, d));
    let mut pairing = SigmaMatrix::zeros((d, d));
    for j in 0..d {
        let q_eig: Mat = match q_map {
            Some(qs) => {
                if qs.len() != d {
                    return Err(Error::DimMismatch { left: d, right: qs.len() });
                }
                let (_, perp) = ctx.spectral.pinching(&qs[j], tol)?;
                ctx.spectral.to_eigenbasis(perp.entries())
            }
            None => {
                let jt = ctx.spectral.to_eigenbasis(ctx.currents[j].entries());
                for (k, dk) in derivs.iter().enumerate() {
                    let mut acc = C64::new(0.0, 0.0);
                    Zip::indexed(dk).for_each(|(a, b), &x| {
                        if (e[a] - e[b]).abs() <= tol {
                            acc += jt[[b, a]] * x;
                        }
                    });
                    pairing[[k, j]] = acc.norm() / n;
                }
                let mut q = jt;
                Zip::indexed(&mut q).for_each(|(a, b), z| {
                    let w = e[a] - e[b];
                    *z = if w.abs() > tol { I * *z / w } else { C64::new(0.0, 0.0) };
                });
                q
            }
        };
        for k in 0..d {
            let mut acc = C64::new(0.0, 0.0);
            Zip::indexed(&derivs[k]).for_each(|(a, b), &x| acc += q_eig[[b, a]] * x);
            sigma[[k, j]] = -(acc / n).re;
        }
    }
    Ok(AdiabaticParts { sigma, pairing, bound })
}

/// `sigma~^eps` over an eps grid, for convergence plots and extrapolation.
pub fn adiabatic_sweep(
    ctx: &ResponseContext,
    p: &PerturbationProfile,
    rho: &Operator,
    t: f64,
    eps_grid: &[f64],
) -> Result<Vec<(f64, SigmaMatrix)>> {
    eps_grid
        .iter()
        .map(|&eps| Ok((eps, conductivity_tilde(ctx, &p.with_eps(eps), rho, t)?)))
        .collect()
}

/// Polynomial (Neville) extrapolation of `(x_i, y_i)` to `x = 0`.
pub fn extrapolate_to_zero(points: &[(f64, f64)]) -> f64 {
    let mut y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let n = y.len();
    for level in 1..n {
        for i in 0..n - level {
            y[i] = (x[i + level] * y[i] - x[i] * y[i + 1]) / (x[i + level] - x[i]);
        }
    }
    y.first().copied().unwrap_or(f64::NAN)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StredaValue {
    /// `-i T(P [d_k P, d_j P])`.
    pub value: f64,
    /// `+i <[P, d_k P], d_j P>` in the trace scalar product.
    pub pairing_form: f64,
    /// Largest imaginary part of the two forms.
    pub imaginary: f64,
}

pub fn check_spectral_projection(h: &Operator, p: &Operator) -> Result<()> {
    let comm = h.entries().dot(p.entries()) - p.entries().dot(h.entries());
    let residual = max_abs(&comm);
    if !p.flags().projection || residual > EQUILIBRIUM_TOL {
        return Err(Error::NotSpectralProjection { residual });
    }
    Ok(())
}

pub fn kubo_streda(
    alg: &TracialAlgebra,
    s: &SpectralData,
    p: &Operator,
    positions: &Positions,
    k: usize,
    j: usize,
) -> Result<StredaValue> {
    check_spectral_projection(&s.source, p)?;
    let pm = p.entries();
    let dk = positions.derive(k, pm);
    let dj = positions.derive(j, pm);
    let comm = dk.dot(&dj) - dj.dot(&dk);
    let trace_form = -I * alg.trace_product(pm, &comm)?;
    let pk = pm.dot(&dk) - dk.dot(pm);
    let pairing = I * alg.trace_product(&adjoint(&pk), &dj)?;
    Ok(StredaValue {
        value: trace_form.re,
        pairing_form: pairing.re,
        imaginary: trace_form.im.abs().max(pairing.im.abs()),
    })
}

/// Full Kubo-Streda matrix `sigma[[k, j]]`.
pub fn kubo_streda_matrix(ctx: &ResponseContext, p: &Operator) -> Result<SigmaMatrix> {
    let d = ctx.directions();
    let mut out = SigmaMatrix::zeros((d, d));
    for k in 0..d {
        for j in 0..d {
            if k != j {
                out[[k, j]] = kubo_streda(&ctx.alg, &ctx.spectral, p, &ctx.set.positions, k, j)?.value;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct ZeroTemperatureRow {
    pub beta: f64,
    /// `||rho_beta - P||_1`.
    pub trace_distance: f64,
    pub sigma: SigmaMatrix,
}

#[derive(Clone, Debug)]
pub struct ZeroTemperatureTable {
    pub fermi: f64,
    pub gap: f64,
    pub rows: Vec<ZeroTemperatureRow>,
    pub projection_sigma: SigmaMatrix,
    pub monotone: bool,
}

/// Conductivities of `rho_beta` along a beta grid, next to the Fermi
/// projection value. Uses the closed-form route when the modulation allows
/// it and the Kubo quadrature otherwise.
pub fn zero_temperature_sweep(
    ctx: &ResponseContext,
    p: &PerturbationProfile,
    fermi: f64,
    beta_grid: &[f64],
    t: f64,
    opts: &NumericsOptions,
) -> Result<ZeroTemperatureTable> {
    let proj = fermi_projection(&ctx.spectral, fermi)?;
    let e = &ctx.spectral.eigenvalues;
    let below = e.iter().filter(|x| **x <= fermi).fold(f64::NEG_INFINITY, |m, x| m.max(*x));
    let above = e.iter().filter(|x| **x > fermi).fold(f64::INFINITY, |m, x| m.min(*x));
    let sigma_of = |rho: &Operator| -> Result<SigmaMatrix> {
        match conductivity_resolvent(ctx, p, rho, t) {
            Err(Error::UnsupportedModulation(_)) => Ok(conductivity_kubo(ctx, p, rho, t, opts)?.sigma),
            other => other,
        }
    };
    let projection_sigma = sigma_of(&proj)?;
    let mut rows = Vec::with_capacity(beta_grid.len());
    for &beta in beta_grid {
        let rho = fermi_dirac_state(&ctx.spectral, beta, fermi)?;
        let trace_distance = ctx.alg.schatten_norm_mat(&(rho.entries() - proj.entries()), 1.0)?;
        rows.push(ZeroTemperatureRow { beta, trace_distance, sigma: sigma_of(&rho)? });
    }
    let mut order: Vec<&ZeroTemperatureRow> = rows.iter().collect();
    order.sort_by(|a, b| a.beta.total_cmp(&b.beta));
    let monotone = order.windows(2).all(|w| w[1].trace_distance <= w[0].trace_distance + 1e-15);
    Ok(ZeroTemperatureTable { fermi, gap: above - below, rows, projection_sigma, monotone })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Fd,
    Kubo,
    Resolvent,
    Adiabatic,
    Streda,
}

impl Route {
    pub const ALL: [Route; 5] = [Route::Fd, Route::Kubo, Route::Resolvent, Route::Adiabatic, Route::Streda];

    pub fn name(&self) -> &'static str {
        match self {
            Route::Fd => "fd",
            Route::Kubo => "kubo",
            Route::Resolvent => "resolvent",
            Route::Adiabatic => "adiabatic",
            Route::Streda => "streda",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Agreement {
    Absolute { tol: f64 },
    /// `|a - b| <= tol * max(1, |b|)`.
    Relative { tol: f64 },
}

impl Agreement {
    pub fn holds(&self, a: f64, b: f64) -> bool {
        match *self {
            Agreement::Absolute { tol } => (a - b).abs() <= tol,
            Agreement::Relative { tol } => (a - b).abs() <= tol * b.abs().max(1.0),
        }
    }
}

/// Declared agreement between two routes evaluated on the same state and
/// profile; `None` where the routes compute different limits. The adiabatic
/// and Kubo-Streda values agree only up to finite-volume corrections.
pub fn agreement_tolerance(a: Route, b: Route) -> Option<Agreement> {
    use Route::*;
    match (a.min(b), a.max(b)) {
        (Kubo, Resolvent) => Some(Agreement::Absolute { tol: 1e-8 }),
        (Fd, Kubo) | (Fd, Resolvent) => Some(Agreement::Relative { tol: 1e-3 }),
        (Adiabatic, Streda) => Some(Agreement::Absolute { tol: 1e-2 }),
        _ => None,
    }
}

#[derive(Clone, Debug)]
pub struct RouteOutcome {
    pub route: Route,
    pub sigma: Result<SigmaMatrix>,
    pub est_error: Option<SigmaMatrix>,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct ConductivityReport {
    pub eps: f64,
    pub t: f64,
    pub routes: Vec<RouteOutcome>,
    pub chern_reference: Option<Array2<i64>>,
    pub options: NumericsOptions,
}

impl ConductivityReport {
    pub fn sigma(&self, route: Route) -> Option<&SigmaMatrix> {
        self.routes.iter().find(|r| r.route == route).and_then(|r| r.sigma.as_ref().ok())
    }
}

/// Evaluates the requested routes; failures are kept per route.
/// `projection` enables the Kubo-Streda route and the Chern reference.
pub fn conductivity_report(
    ctx: &ResponseContext,
    p: &PerturbationProfile,
    rho: &Operator,
    projection: Option<&Operator>,
    t: f64,
    routes: &[Route],
    opts: &NumericsOptions,
) -> ConductivityReport {
    let mut outcomes = Vec::new();
    for &route in routes {
        let start = Instant::now();
        let (sigma, est_error) = match route {
            Route::Fd => match conductivity_fd(ctx, p, rho, t, opts) {
                Ok(r) => (Ok(r.sigma), Some(r.level_difference)),
                Err(e) => (Err(e), None),
            },
            Route::Kubo => match conductivity_kubo(ctx, p, rho, t, opts) {
                Ok(r) => (Ok(r.sigma), Some(r.est_error)),
                Err(e) => (Err(e), None),
            },
            Route::Resolvent => (conductivity_resolvent(ctx, p, rho, t), None),
            Route::Adiabatic => (adiabatic_conductivity_partial(ctx, rho), None),
            Route::Streda => match projection {
                Some(proj) => (kubo_streda_matrix(ctx, proj), None),
                None => (Err(Error::NotSpectralProjection { residual: f64::NAN }), None),
            },
        };
        outcomes.push(RouteOutcome { route, sigma, est_error, wall_ms: start.elapsed().as_secs_f64() * 1e3 });
    }
    let chern_reference = projection.and_then(|proj| chern_reference(ctx, proj).ok());
    ConductivityReport { eps: p.eps, t, routes: outcomes, chern_reference, options: *opts }
}

/// Link-phase Chern number of the bands below a clean Fermi projection,
/// arranged as the antisymmetric matrix expected of `2 pi sigma`.
pub fn chern_reference(ctx: &ResponseContext, projection: &Operator) -> Result<Array2<i64>> {
    let spec = &ctx.set.spec;
    let family = bloch_reduce(spec)?;
    let rank = ctx.alg.trace(projection)?.re * spec.dim() as f64;
    let per_band = (spec.dim() / family.q) as f64;
    let bands = (rank / per_band).round();
    if (bands * per_band - rank).abs() > 1e-6 {
        return Err(Error::InvalidArgument("projection does not fill whole Bloch bands".into()));
    }
    let d = ctx.directions();
    let mut out = Array2::zeros((d, d));
    if bands >= 1.0 && (bands as usize) < family.q {
        let c = chern_number(&family, bands as usize, DEFAULT_CHERN_GRID)?;
        out[[0, 1]] = c;
        out[[1, 0]] = -c;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_model, ModelSpec};
    use crate::ncalg::{spectral_decompose, tests::random_matrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn open_ctx(l: usize, p: i64, q: i64) -> ResponseContext {
        let spec = ModelSpec::clean(l, l, p, q).with_displacement(DisplacementConvention::OpenPositions);
        ResponseContext::new(build_model(&spec).unwrap()).unwrap()
    }

    fn first_gap_projection(ctx: &ResponseContext, q: usize) -> (Operator, f64) {
        let e = &ctx.spectral.eigenvalues;
        let n = e.len() / q;
        let ef = 0.5 * (e[n - 1] + e[n]);
        (fermi_projection(&ctx.spectral, ef).unwrap(), ef)
    }

    fn largest_gap_projection(ctx: &ResponseContext) -> Operator {
        let e = &ctx.spectral.eigenvalues;
        let i = (0..e.len() - 1).max_by(|&a, &b| (e[a + 1] - e[a]).total_cmp(&(e[b + 1] - e[b]))).unwrap();
        fermi_projection(&ctx.spectral, 0.5 * (e[i] + e[i + 1])).unwrap()
    }

    fn quick() -> NumericsOptions {
        NumericsOptions { dt: 0.01, tail_tol: 1e-6, ..Default::default() }
    }

    #[test]
    fn interaction_state_examples() {
        let ctx = open_ctx(4, 1, 2);
        let p_f = largest_gap_projection(&ctx);
        let zero = PerturbationProfile::constant(0.5, vec![0.0, 0.0]);
        assert!(interaction_state(&ctx.set, &zero, &p_f, 1.0).unwrap().max_abs_diff(&p_f) == 0.0);
        let bump = PerturbationProfile::with_modulation(0.5, vec![0.1, 0.1], Modulation::CompactBump { t0: 0.0, t1: 1.0 });
        assert!(interaction_state(&ctx.set, &bump, &p_f, -0.5).unwrap().max_abs_diff(&p_f) == 0.0);
        let p = PerturbationProfile::constant(0.5, vec![0.1, 0.0]);
        let r = interaction_state(&ctx.set, &p, &p_f, 2.0).unwrap();
        let a = ctx.alg.schatten_norm(&r, 1.0).unwrap();
        let b = ctx.alg.schatten_norm(&p_f, 1.0).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn zero_field_keeps_equilibrium() {
        let ctx = open_ctx(4, 1, 2);
        let p_f = largest_gap_projection(&ctx);
        let zero = PerturbationProfile::constant(0.5, vec![0.0, 0.0]);
        let full = full_state_direct(&ctx, &zero, &p_f, 1.0, &quick()).unwrap();
        assert!(full.max_abs_diff(&p_f) < 1e-9);
        let pair = full_state_expansion(&ctx, &zero, &p_f, 1.0, &quick()).unwrap();
        assert!(pair.expansion_residual(&ctx.alg, &[0.0, 0.0]).unwrap() < 1e-9);
        let c = net_currents(&ctx, &zero, &p_f, 1.0, &quick()).unwrap();
        assert!(c.iter().all(|x| x.value.abs() < 1e-12));
    }

    #[test]
    fn non_equilibrium_rejected() {
        let ctx = open_ctx(4, 1, 2);
        let x = ctx.set.positions.operator(0);
        let p = PerturbationProfile::constant(0.5, vec![0.1, 0.0]);
        assert!(matches!(full_state_direct(&ctx, &p, &x, 0.0, &quick()), Err(Error::NotEquilibrium { .. })));
    }

    #[test]
    fn expansion_matches_direct_with_bump() {
        let ctx = open_ctx(4, 1, 2);
        let p_f = largest_gap_projection(&ctx);
        let bump = PerturbationProfile::with_modulation(0.5, vec![0.1, -0.05], Modulation::CompactBump { t0: -1.0, t1: 1.0 });
        let opts = NumericsOptions { dt: 0.005, ..Default::default() };
        let pair = full_state_expansion(&ctx, &bump, &p_f, 1.5, &opts).unwrap();
        assert!(pair.expansion_residual(&ctx.alg, &bump.field).unwrap() < 1e-5);
        let before = full_state_direct(&ctx, &bump, &p_f, -1.0, &opts).unwrap();
        assert!(before.max_abs_diff(&p_f) == 0.0);
        let n1 = ctx.alg.schatten_norm(&pair.rho_full, 2.0).unwrap();
        let n0 = ctx.alg.schatten_norm(&p_f, 2.0).unwrap();
        assert!((n1 - n0).abs() < 1e-8);
    }

    #[test]
    fn net_current_forms_agree() {
        let ctx = open_ctx(4, 1, 2);
        let p_f = largest_gap_projection(&ctx);
        let p = PerturbationProfile::constant(1.0, vec![0.05, 0.02]);
        for c in net_currents(&ctx, &p, &p_f, 0.5, &quick()).unwrap() {
            assert!((c.value - c.dual_form).abs() < 1e-10);
        }
    }

    #[test]
    fn kubo_matches_resolvent_and_fd() {
        let ctx = open_ctx(4, 1, 2);
        let e = &ctx.spectral.eigenvalues;
        let rho = fermi_dirac_state(&ctx.spectral, 3.0, 0.5 * (e[3] + e[4])).unwrap();
        let p = PerturbationProfile::constant(1.0, vec![0.0, 0.0]);
        let opts = NumericsOptions { dt: 0.004, tail_tol: 1e-12, fd_step: 1e-2, ..Default::default() };
        for t in [-0.4, 0.0, 0.7] {
            let kubo = conductivity_kubo(&ctx, &p, &rho, t, &opts).unwrap();
            let res = conductivity_resolvent(&ctx, &p, &rho, t).unwrap();
            assert!(max_abs_real(&(&kubo.sigma - &res)) < 1e-9, "t={t}");
        }
        let kubo = conductivity_kubo(&ctx, &p, &rho, 0.7, &opts).unwrap();
        let fd = conductivity_fd(&ctx, &p, &rho, 0.7, &opts).unwrap();
        assert!(max_abs_real(&(&kubo.sigma - &fd.sigma)) < 1e-3 * max_abs_real(&kubo.sigma).max(1.0));
        assert!(max_abs_real(&kubo.sigma) > 1e-3);
    }

    fn max_abs_real(a: &SigmaMatrix) -> f64 {
        a.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    #[test]
    fn cosine_and_bump_routes() {
        let ctx = open_ctx(4, 1, 2);
        let e = &ctx.spectral.eigenvalues;
        let rho = fermi_dirac_state(&ctx.spectral, 2.0, 0.5 * (e[3] + e[4])).unwrap();
        let p = PerturbationProfile::with_modulation(0.7, vec![0.0, 0.0], Modulation::FourierCosine { omega0: 1.1 });
        let opts = NumericsOptions { tail_tol: 1e-12, ..Default::default() };
        for t in [-0.5, 0.9] {
            let kubo = conductivity_kubo(&ctx, &p, &rho, t, &opts).unwrap();
            let res = conductivity_resolvent(&ctx, &p, &rho, t).unwrap();
            assert!(max_abs_real(&(&kubo.sigma - &res)) < 1e-9);
        }
        let bump = PerturbationProfile::with_modulation(0.7, vec![0.0, 0.0], Modulation::CompactBump { t0: -1.0, t1: 1.0 });
        assert!(matches!(conductivity_resolvent(&ctx, &bump, &rho, 0.0), Err(Error::UnsupportedModulation(_))));
        let k = conductivity_kubo(&ctx, &bump, &rho, -1.5, &opts).unwrap();
        assert!(max_abs_real(&k.sigma) == 0.0);
    }

    #[test]
    fn trivial_conductivities_vanish() {
        let ctx = open_ctx(4, 1, 2);
        let p = PerturbationProfile::constant(0.5, vec![0.0, 0.0]);
        let id = Operator::hermitian(crate::ncalg::identity(16).mapv(|z| z / 16.0)).unwrap();
        let opts = quick();
        assert_eq!(max_abs_real(&conductivity_kubo(&ctx, &p, &id, 0.0, &opts).unwrap().sigma), 0.0);
        assert_eq!(max_abs_real(&conductivity_resolvent(&ctx, &p, &id, 0.0).unwrap()), 0.0);
        // large eps: sigma ~ 1/eps
        let e = &ctx.spectral.eigenvalues;
        let rho = fermi_dirac_state(&ctx.spectral, 2.0, 0.5 * (e[3] + e[4])).unwrap();
        let big = conductivity_tilde(&ctx, &p.with_eps(1e4), &rho, 0.0).unwrap();
        let bigger = conductivity_tilde(&ctx, &p.with_eps(1e5), &rho, 0.0).unwrap();
        let r = max_abs_real(&big) / max_abs_real(&bigger);
        assert!((r - 10.0).abs() < 0.1, "{r}");
    }

    #[test]
    fn tilde_equals_resolvent_for_nonpositive_time() {
        let ctx = open_ctx(4, 1, 2);
        let e = &ctx.spectral.eigenvalues;
        let rho = fermi_dirac_state(&ctx.spectral, 2.0, 0.5 * (e[3] + e[4])).unwrap();
        for m in [Modulation::Constant, Modulation::FourierCosine { omega0: 0.8 }] {
            let p = PerturbationProfile::with_modulation(0.3, vec![0.0, 0.0], m);
            let a = conductivity_tilde(&ctx, &p, &rho, -0.6).unwrap();
            let b = conductivity_resolvent(&ctx, &p, &rho, -0.6).unwrap();
            assert!(max_abs_real(&(&a - &b)) < 1e-12);
        }
    }

    #[test]
    fn adiabatic_with_explicit_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ctx = open_ctx(4, 1, 2);
        let e = &ctx.spectral.eigenvalues;
        let rho = fermi_dirac_state(&ctx.spectral, 2.0, 0.5 * (e[3] + e[4])).unwrap();
        let tol = ctx.spectral.default_degeneracy_tol();
        let mut qs = Vec::new();
        for _ in 0..2 {
            let a = random_matrix(16, &mut rng);
            let herm = Operator::hermitian((&a + &adjoint(&a)).mapv(|z| z * 0.5)).unwrap();
            let (_, off) = ctx.spectral.pinching(&herm, tol).unwrap();
            qs.push(off);
        }
        let sigma = adiabatic_conductivity(&ctx, &rho, Some(&qs)).unwrap();
        for (j, q) in qs.iter().enumerate() {
            for (k, dk) in ctx.derivatives(&rho).iter().enumerate() {
                let expect = -ctx.alg.trace_product(q.entries(), dk).unwrap().re;
                assert!((sigma[[k, j]] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn pairing_obstruction_is_detected() {
        // degenerate levels coupled by J with a state that is not a function of H
        let spec = ModelSpec::clean(4, 4, 0, 1).with_displacement(DisplacementConvention::OpenPositions);
        let ctx = ResponseContext::new(build_model(&spec).unwrap()).unwrap();
        let s = &ctx.spectral;
        let e = &s.eigenvalues;
        // rho built from eigenvectors of one degenerate level with unequal weights
        let mut w = vec![0.0; 16];
        let mut found = false;
        for i in 0..15 {
            if (e[i] - e[i + 1]).abs() < 1e-9 {
                w[i] = 1.0;
                found = true;
                break;
            }
        }
        assert!(found);
        let v = s.eigenvectors.entries();
        let mut scaled = v.clone();
        for (c, mut col) in scaled.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|z| z * w[c]);
        }
        let rho = Operator::hermitian(scaled.dot(&adjoint(v))).unwrap();
        match adiabatic_conductivity(&ctx, &rho, None) {
            Err(Error::DiagonalObstruction { .. }) | Ok(_) => {}
            Err(other) => panic!("{other:?}"),
        }
    }

    #[test]
    fn streda_trivial_cases() {
        let ctx = open_ctx(4, 1, 2);
        let id = Operator::projection(crate::ncalg::identity(16)).unwrap();
        let v = kubo_streda(&ctx.alg, &ctx.spectral, &id, &ctx.set.positions, 0, 1).unwrap();
        assert_eq!(v.value, 0.0);
        let x = ctx.set.positions.operator(0);
        assert!(matches!(
            kubo_streda(&ctx.alg, &ctx.spectral, &x, &ctx.set.positions, 0, 1),
            Err(Error::NotSpectralProjection { .. })
        ));
    }

    #[test]
    fn streda_flux_third_small_torus() {
        let spec = ModelSpec::clean(12, 12, 1, 3);
        let ctx = ResponseContext::new(build_model(&spec).unwrap()).unwrap();
        let (p_f, _) = first_gap_projection(&ctx, 3);
        let v = kubo_streda(&ctx.alg, &ctx.spectral, &p_f, &ctx.set.positions, 0, 1).unwrap();
        assert!((2.0 * PI * v.value - 1.0).abs() < 0.05);
        assert!((v.value - v.pairing_form).abs() < 1e-10 && v.imaginary < 1e-10);
        let w = kubo_streda(&ctx.alg, &ctx.spectral, &p_f, &ctx.set.positions, 1, 0).unwrap();
        assert!((v.value + w.value).abs() < 1e-10);
        let reference = chern_reference(&ctx, &p_f).unwrap();
        assert_eq!(reference[[0, 1]], 1);
    }

    #[test]
    fn declared_agreements_are_symmetric() {
        for a in Route::ALL {
            for b in Route::ALL {
                assert_eq!(agreement_tolerance(a, b), agreement_tolerance(b, a));
            }
        }
        assert!(agreement_tolerance(Route::Kubo, Route::Streda).is_none());
        let rel = agreement_tolerance(Route::Fd, Route::Kubo).unwrap();
        assert!(rel.holds(10.005, 10.0) && !rel.holds(10.02, 10.0));
    }

    #[test]
    fn extrapolation_is_exact_for_polynomials() {
        let pts: Vec<(f64, f64)> = [0.2, 0.1, 0.05].iter().map(|&x| (x, 3.0 - 2.0 * x + x * x)).collect();
        assert!((extrapolate_to_zero(&pts) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_temperature_table() {
        let spec = ModelSpec::clean(6, 6, 1, 3);
        let ctx = ResponseContext::new(build_model(&spec).unwrap()).unwrap();
        let (_, ef) = first_gap_projection(&ctx, 3);
        let p = PerturbationProfile::constant(0.2, vec![0.0, 0.0]);
        let table = zero_temperature_sweep(&ctx, &p, ef, &[0.1, 1.0, 10.0, 100.0], 0.0, &quick()).unwrap();
        assert!(table.monotone);
        let last = table.rows.last().unwrap();
        assert!(max_abs_real(&(&last.sigma - &table.projection_sigma)) < 1e-6);
        let s = spectral_decompose(&ctx.set.h).unwrap();
        assert!(matches!(
            zero_temperature_sweep(&ctx, &p, s.eigenvalues[3], &[1.0], 0.0, &quick()),
            Err(Error::FermiOnEigenvalue { .. })
        ));
    }
}
