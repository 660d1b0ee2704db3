//! Magnetic tight-binding models on finite tori.
//!
//! Sites `(n1, n2)` with `0 <= n_k < L_k` are indexed as `n1 + L1 * n2`.
//! Hopping phases follow the symmetric gauge: a hop by `+e1` from `n` picks
//! up `e^{+i B n2}` and a hop by `+e2` picks up `e^{-i B n1}`. The product of
//! hopping amplitudes around a counterclockwise plaquette is `e^{-2iB}`, so a
//! model with flux `2 pi p / q` per plaquette uses `B = -pi p / q`, and the
//! torus closes consistently when `B L_k` is a multiple of `2 pi`.

use std::f64::consts::PI;

use ndarray::{Array2, Zip};
use ndarray_linalg::Determinant;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ncalg::{adjoint, hermitian_eigh, Mat, Operator, SpectralData, C64, I};

/// Gap tolerance below which a Fermi energy counts as sitting on the spectrum.
pub const FERMI_GAP_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplacementConvention {
    /// Shortest signed coordinate difference on the torus, in `(-L/2, L/2]`.
    #[default]
    MinimalImage,
    /// Plain coordinate differences of the sites `0..L`.
    OpenPositions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub l1: usize,
    pub l2: usize,
    #[serde(default)]
    pub flux_p: i64,
    #[serde(default = "one")]
    pub flux_q: i64,
    #[serde(default)]
    pub disorder_w: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub displacement: DisplacementConvention,
}

fn one() -> i64 {
    1
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl ModelSpec {
    pub fn clean(l1: usize, l2: usize, flux_p: i64, flux_q: i64) -> Self {
        Self {
            l1,
            l2,
            flux_p,
            flux_q,
            disorder_w: 0.0,
            seed: 0,
            displacement: DisplacementConvention::MinimalImage,
        }
    }

    pub fn with_displacement(mut self, d: DisplacementConvention) -> Self {
        self.displacement = d;
        self
    }

    pub fn with_disorder(mut self, w: f64, seed: u64) -> Self {
        self.disorder_w = w;
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.l1 == 0 || self.l2 == 0 {
            return Err(Error::InvalidModel("torus side lengths must be positive".into()));
        }
        if self.flux_q < 1 {
            return Err(Error::InvalidModel(format!("flux_q must be >= 1, got {}", self.flux_q)));
        }
        if gcd(self.flux_p, self.flux_q) != 1 && self.flux_p != 0 {
            return Err(Error::InvalidModel(format!(
                "flux {}/{} is not in lowest terms",
                self.flux_p, self.flux_q
            )));
        }
        if !(self.disorder_w >= 0.0) || !self.disorder_w.is_finite() {
            return Err(Error::InvalidModel("disorder_w must be a finite value >= 0".into()));
        }
        for (name, l) in [("l1", self.l1), ("l2", self.l2)] {
            let l = l as i64;
            if l % self.flux_q != 0 || (self.flux_p * l) % (2 * self.flux_q) != 0 {
                return Err(Error::FluxIncommensurate(format!(
                    "flux {}/{} needs p*{name}/q to be an even integer, {name} = {l}",
                    self.flux_p, self.flux_q
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.l1 * self.l2
    }

    pub fn lengths(&self) -> [usize; 2] {
        [self.l1, self.l2]
    }

    /// Flux per plaquette, `2 pi p / q`.
    pub fn plaquette_flux(&self) -> f64 {
        2.0 * PI * self.flux_p as f64 / self.flux_q as f64
    }

    /// Symmetric-gauge hopping angle, minus half the plaquette flux.
    pub fn hopping_angle(&self) -> f64 {
        -PI * self.flux_p as f64 / self.flux_q as f64
    }

    pub fn site_index(&self, n1: usize, n2: usize) -> usize {
        n1 + self.l1 * n2
    }

    pub fn site_coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.l1, idx / self.l1)
    }

    fn wrapped(&self, n1: i64, n2: i64) -> usize {
        let a = n1.rem_euclid(self.l1 as i64) as usize;
        let b = n2.rem_euclid(self.l2 as i64) as usize;
        self.site_index(a, b)
    }

    pub fn is_clean(&self) -> bool {
        self.disorder_w == 0.0
    }
}

/// Per-site uniform samples on `[-W/2, W/2)`. Site `i` of realization `r`
/// always reads the same counter block of the ChaCha stream `r`, so values do
/// not depend on evaluation order.
pub fn disorder_values(spec: &ModelSpec, realization: u64) -> Vec<f64> {
    let n = spec.dim();
    if spec.disorder_w == 0.0 {
        return vec![0.0; n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(realization);
    (0..n)
        .map(|i| {
            rng.set_word_pos(2 * i as u128);
            let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            spec.disorder_w * (u - 0.5)
        })
        .collect()
}

/// Cyclic shift of a site-indexed vector: `out(n) = values(n + shift)`.
pub fn shift_sites(spec: &ModelSpec, values: &[f64], shift: (i64, i64)) -> Vec<f64> {
    (0..spec.dim())
        .map(|i| {
            let (n1, n2) = spec.site_coords(i);
            values[spec.wrapped(n1 as i64 + shift.0, n2 as i64 + shift.1)]
        })
        .collect()
}

/// Position generators together with the displacement kernels used for
/// commutators `[X_k, A]_{ab} = d_k(a, b) A_{ab}`.
#[derive(Clone, Debug)]
pub struct Positions {
    pub convention: DisplacementConvention,
    coords: Vec<Vec<f64>>,
    kernels: Vec<Array2<f64>>,
}

pub fn position_operators(spec: &ModelSpec) -> Positions {
    let n = spec.dim();
    let lengths = spec.lengths();
    let coords: Vec<Vec<f64>> = (0..2)
        .map(|k| {
            (0..n)
                .map(|i| {
                    let (a, b) = spec.site_coords(i);
                    if k == 0 { a as f64 } else { b as f64 }
                })
                .collect()
        })
        .collect();
    let kernels = (0..2)
        .map(|k| {
            let l = lengths[k] as f64;
            let x = &coords[k];
            Array2::from_shape_fn((n, n), |(a, b)| {
                let d = x[a] - x[b];
                match spec.displacement {
                    DisplacementConvention::OpenPositions => d,
                    DisplacementConvention::MinimalImage => {
                        let r = d.rem_euclid(l);
                        if r > l / 2.0 { r - l } else { r }
                    }
                }
            })
        })
        .collect();
    Positions { convention: spec.displacement, coords, kernels }
}

impl Positions {
    pub fn directions(&self) -> usize {
        self.coords.len()
    }

    /// Diagonal position operator with site coordinates `0..L`.
    pub fn operator(&self, k: usize) -> Operator {
        Operator::from_real_diagonal(&self.coords[k])
    }

    pub fn coordinates(&self, k: usize) -> &[f64] {
        &self.coords[k]
    }

    pub fn kernel(&self, k: usize) -> &Array2<f64> {
        &self.kernels[k]
    }

    /// `[X_k, A]` through the displacement kernel.
    pub fn commutator(&self, k: usize, a: &Mat) -> Mat {
        let mut out = a.clone();
        Zip::from(&mut out).and(&self.kernels[k]).for_each(|z, &d| *z *= d);
        out
    }

    /// `d_{X_k}(A) = i [X_k, A]`.
    pub fn derive(&self, k: usize, a: &Mat) -> Mat {
        let mut out = a.clone();
        Zip::from(&mut out).and(&self.kernels[k]).for_each(|z, &d| *z *= I * d);
        out
    }

    /// Same kernel convention applied in the open-position gauge, for the
    /// BCH bookkeeping: `ad_{X_k}(A) = i [X_k, A]`.
    pub fn ad(&self, k: usize, a: &Mat) -> Mat {
        self.derive(k, a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelTerm {
    pub offset: (i64, i64),
    pub value: C64,
}

/// Twisted convolution `A = sum_a f(a) U_a` with
/// `<n + a| U_a |n> = e^{i B (a1 n2 - a2 n1)}`; every such operator commutes
/// with the magnetic translations.
pub fn covariant_from_kernel(spec: &ModelSpec, terms: &[KernelTerm]) -> Result<Operator> {
    spec.validate()?;
    let n = spec.dim();
    let b = spec.hopping_angle();
    let mut m = Array2::<C64>::zeros((n, n));
    for term in terms {
        let (a1, a2) = term.offset;
        if 2 * a1.unsigned_abs() as usize > spec.l1 || 2 * a2.unsigned_abs() as usize > spec.l2 {
            return Err(Error::RangeExceedsHalfTorus(a1, a2));
        }
        for src in 0..n {
            let (n1, n2) = spec.site_coords(src);
            let dst = spec.wrapped(n1 as i64 + a1, n2 as i64 + a2);
            let phase = b * (a1 as f64 * n2 as f64 - a2 as f64 * n1 as f64);
            m[[dst, src]] += term.value * C64::from_polar(1.0, phase);
        }
    }
    Operator::new(m)
}

pub fn nearest_neighbour_kernel() -> Vec<KernelTerm> {
    [(1, 0), (-1, 0), (0, 1), (0, -1)]
        .into_iter()
        .map(|offset| KernelTerm { offset, value: C64::new(1.0, 0.0) })
        .collect()
}

/// Magnetic translations by `+e1` and `+e2`:
/// `(S_1 psi)(n) = e^{+iB n2} psi(n + e1)`, `(S_2 psi)(n) = e^{-iB n1} psi(n + e2)`.
/// They satisfy `S_1 S_2 = e^{-2iB} S_2 S_1`, i.e. the plaquette flux phase.
pub fn magnetic_translations(spec: &ModelSpec) -> [Operator; 2] {
    let n = spec.dim();
    let b = spec.hopping_angle();
    let mut s1 = Array2::<C64>::zeros((n, n));
    let mut s2 = Array2::<C64>::zeros((n, n));
    for i in 0..n {
        let (n1, n2) = spec.site_coords(i);
        s1[[i, spec.wrapped(n1 as i64 + 1, n2 as i64)]] = C64::from_polar(1.0, b * n2 as f64);
        s2[[i, spec.wrapped(n1 as i64, n2 as i64 + 1)]] = C64::from_polar(1.0, -b * n1 as f64);
    }
    // both are permutations times phases
    [
        Operator::unitary(s1).expect("magnetic translation is unitary"),
        Operator::unitary(s2).expect("magnetic translation is unitary"),
    ]
}

/// Magnetic translation by an arbitrary lattice vector, `S_1^{a1} S_2^{a2}`.
pub fn magnetic_translation(spec: &ModelSpec, shift: (i64, i64)) -> Operator {
    let [s1, s2] = magnetic_translations(spec);
    let n = spec.dim();
    let power = |s: &Operator, k: i64| {
        let base = if k >= 0 { s.entries().clone() } else { adjoint(s.entries()) };
        let mut acc = crate::ncalg::identity(n);
        for _ in 0..k.unsigned_abs() {
            acc = acc.dot(&base);
        }
        acc
    };
    let m = power(&s1, shift.0).dot(&power(&s2, shift.1));
    Operator::unitary(m).expect("product of unitaries")
}

#[derive(Clone, Debug)]
pub struct LatticeOperatorSet {
    pub spec: ModelSpec,
    pub disorder: Vec<f64>,
    pub h: Operator,
    pub positions: Positions,
    pub translations: [Operator; 2],
}

pub fn build_model(spec: &ModelSpec) -> Result<LatticeOperatorSet> {
    spec.validate()?;
    build_model_with_disorder(spec, disorder_values(spec, 0))
}

pub fn build_model_with_disorder(spec: &ModelSpec, disorder: Vec<f64>) -> Result<LatticeOperatorSet> {
    spec.validate()?;
    if disorder.len() != spec.dim() {
        return Err(Error::DimMismatch { left: spec.dim(), right: disorder.len() });
    }
    let hop = covariant_from_kernel(spec, &nearest_neighbour_kernel())?;
    let mut h = hop.into_entries();
    for (i, v) in disorder.iter().enumerate() {
        h[[i, i]] += C64::new(*v, 0.0);
    }
    Ok(LatticeOperatorSet {
        spec: spec.clone(),
        disorder,
        h: Operator::hermitian(h)?,
        positions: position_operators(spec),
        translations: magnetic_translations(spec),
    })
}

impl LatticeOperatorSet {
    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn directions(&self) -> usize {
        self.positions.directions()
    }

    /// `J_k = i [H, X_k]` evaluated through the displacement kernel.
    pub fn current_operator(&self, k: usize) -> Operator {
        let j = self.positions.derive(k, self.h.entries()).mapv(|z| -z);
        Operator::hermitian(j).expect("current of a hermitian H is hermitian")
    }

    pub fn currents(&self) -> Vec<Operator> {
        (0..self.directions()).map(|k| self.current_operator(k)).collect()
    }

    pub fn derive(&self, k: usize, a: &Mat) -> Mat {
        self.positions.derive(k, a)
    }

    /// Same model with the other displacement convention.
    pub fn with_displacement(&self, convention: DisplacementConvention) -> Self {
        let spec = self.spec.clone().with_displacement(convention);
        Self { positions: position_operators(&spec), spec, ..self.clone() }
    }
}

pub fn current_operator(set: &LatticeOperatorSet, k: usize) -> Operator {
    set.current_operator(k)
}

pub fn fermi_gap_distance(s: &SpectralData, fermi: f64) -> f64 {
    s.eigenvalues.iter().fold(f64::INFINITY, |m, e| m.min((e - fermi).abs()))
}

/// `chi_{(-inf, E_F]}(H)`.
pub fn fermi_projection(s: &SpectralData, fermi: f64) -> Result<Operator> {
    let distance = fermi_gap_distance(s, fermi);
    if distance < FERMI_GAP_TOL {
        return Err(Error::FermiOnEigenvalue { fermi, distance });
    }
    let p = s.apply_function(|e| if e <= fermi { 1.0 } else { 0.0 });
    Operator::projection(p.into_entries())
}

pub fn fermi_dirac(beta: f64, fermi: f64, e: f64) -> f64 {
    let z = beta * (e - fermi);
    if z > 0.0 {
        let w = (-z).exp();
        w / (1.0 + w)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

pub fn fermi_dirac_state(s: &SpectralData, beta: f64, fermi: f64) -> Result<Operator> {
    if !(beta > 0.0) {
        return Err(Error::NonPositiveBeta(beta));
    }
    Ok(s.apply_function(|e| fermi_dirac(beta, fermi, e)))
}

/// Bloch-Floquet reduction of a clean model onto a `q x 1` magnetic cell in
/// the Landau gauge (phase `e^{+i theta n1}` on `+e2` hops, `theta` the
/// plaquette flux). This gauge is equivalent to the symmetric gauge of
/// [`build_model`] on the same torus, so spectra agree exactly.
#[derive(Clone, Debug)]
pub struct BlochFamily {
    pub q: usize,
    pub flux: f64,
    pub cells1: usize,
    pub l2: usize,
}

pub fn bloch_reduce(spec: &ModelSpec) -> Result<BlochFamily> {
    spec.validate()?;
    if !spec.is_clean() {
        return Err(Error::RequiresCleanModel);
    }
    let q = spec.flux_q as usize;
    Ok(BlochFamily { q, flux: 2.0 * spec.hopping_angle(), cells1: spec.l1 / q, l2: spec.l2 })
}

impl BlochFamily {
    /// Harper matrix at magnetic momentum `k1` (conjugate to the cell index)
    /// and `k2`; `2 pi`-periodic in both.
    pub fn hamiltonian(&self, k1: f64, k2: f64) -> Mat {
        let q = self.q;
        let mut h = Array2::<C64>::zeros((q, q));
        for j in 0..q {
            h[[j, j]] += C64::new(2.0 * (k2 + self.flux * j as f64).cos(), 0.0);
        }
        for j in 0..q.saturating_sub(1) {
            h[[j, j + 1]] += C64::new(1.0, 0.0);
            h[[j + 1, j]] += C64::new(1.0, 0.0);
        }
        h[[q - 1, 0]] += C64::from_polar(1.0, k1);
        h[[0, q - 1]] += C64::from_polar(1.0, -k1);
        h
    }

    /// Momenta of the finite torus, `(2 pi m / (L1/q), 2 pi n / L2)`.
    pub fn momenta(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.cells1 * self.l2);
        for m in 0..self.cells1 {
            for n in 0..self.l2 {
                out.push((
                    2.0 * PI * m as f64 / self.cells1 as f64,
                    2.0 * PI * n as f64 / self.l2 as f64,
                ));
            }
        }
        out
    }

    pub fn bands(&self, k1: f64, k2: f64) -> Result<(Vec<f64>, Mat)> {
        let (e, v) = hermitian_eigh(&self.hamiltonian(k1, k2))?;
        Ok((e.to_vec(), v))
    }

    /// Sorted union of all Bloch eigenvalues over the torus momenta.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let mut all = Vec::with_capacity(self.cells1 * self.l2 * self.q);
        for (k1, k2) in self.momenta() {
            all.extend(self.bands(k1, k2)?.0);
        }
        all.sort_by(|a, b| a.total_cmp(b));
        Ok(all)
    }
}

/// Link-phase (plaquette) Berry curvature sum of the lowest `band_count`
/// bands on an `n x n` grid of the `2 pi`-periodic Bloch torus.
pub fn chern_on_grid(family: &BlochFamily, band_count: usize, n: usize) -> Result<i64> {
    if band_count == 0 || band_count > family.q {
        return Err(Error::InvalidArgument(format!(
            "band_count must lie in 1..={}, got {band_count}",
            family.q
        )));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("Chern grid needs at least 2 points".into()));
    }
    let mut frames = Vec::with_capacity(n * n);
    let mut separation = f64::INFINITY;
    for a in 0..n {
        for b in 0..n {
            let k1 = 2.0 * PI * a as f64 / n as f64;
            let k2 = 2.0 * PI * b as f64 / n as f64;
            let (e, v) = family.bands(k1, k2)?;
            if band_count < family.q {
                separation = separation.min(e[band_count] - e[band_count - 1]);
            }
            frames.push(v.slice(ndarray::s![.., 0..band_count]).to_owned());
        }
    }
    if separation < 1e-8 {
        return Err(Error::GapClosure { separation });
    }
    let at = |a: usize, b: usize| &frames[(a % n) * n + (b % n)];
    let link = |u: &Mat, w: &Mat| -> Result<C64> {
        let d = adjoint(u).dot(w).det()?;
        Ok(d / d.norm())
    };
    let mut total = 0.0;
    for a in 0..n {
        for b in 0..n {
            let u1 = link(at(a, b), at(a + 1, b))?;
            let u2 = link(at(a + 1, b), at(a + 1, b + 1))?;
            let u3 = link(at(a, b + 1), at(a + 1, b + 1))?;
            let u4 = link(at(a, b), at(a, b + 1))?;
            total += (u1 * u2 * u3.conj() * u4.conj()).arg();
        }
    }
    Ok((total / (2.0 * PI)).round() as i64)
}

/// Chern number of the lowest `band_count` bands; the grid is doubled once
/// and both evaluations must agree.
pub fn chern_number(family: &BlochFamily, band_count: usize, grid: usize) -> Result<i64> {
    let coarse = chern_on_grid(family, band_count, grid)?;
    let fine = chern_on_grid(family, band_count, 2 * grid)?;
    if coarse != fine {
        return Err(Error::ChernNotConverged { coarse, fine });
    }
    Ok(coarse)
}

pub const DEFAULT_CHERN_GRID: usize = 60;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ncalg::{commutator, max_abs, op_norm, spectral_decompose, TracialAlgebra};

    fn sorted_eigs(op: &Operator) -> Vec<f64> {
        spectral_decompose(op).unwrap().eigenvalues.to_vec()
    }

    #[test]
    fn free_band_on_small_torus() {
        let spec = ModelSpec::clean(2, 2, 0, 1);
        let set = build_model(&spec).unwrap();
        let mut oracle: Vec<f64> = Vec::new();
        for m in 0..2 {
            for n in 0..2 {
                let (k1, k2) = (PI * m as f64, PI * n as f64);
                oracle.push(2.0 * k1.cos() + 2.0 * k2.cos());
            }
        }
        oracle.sort_by(|a, b| a.total_cmp(b));
        let got = sorted_eigs(&set.h);
        for (a, b) in got.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12, "{got:?} vs {oracle:?}");
        }
    }

    #[test]
    fn free_band_on_larger_torus() {
        let spec = ModelSpec::clean(6, 4, 0, 1);
        let set = build_model(&spec).unwrap();
        let mut oracle = Vec::new();
        for m in 0..6 {
            for n in 0..4 {
                oracle.push(
                    2.0 * (2.0 * PI * m as f64 / 6.0).cos() + 2.0 * (2.0 * PI * n as f64 / 4.0).cos(),
                );
            }
        }
        oracle.sort_by(|a, b| a.total_cmp(b));
        for (a, b) in sorted_eigs(&set.h).iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pi_flux_is_chiral_and_bounded() {
        let spec = ModelSpec::clean(8, 8, 1, 2);
        let set = build_model(&spec).unwrap();
        let e = sorted_eigs(&set.h);
        let n = e.len();
        for i in 0..n {
            assert!((e[i] + e[n - 1 - i]).abs() < 1e-10);
            assert!(e[i].abs() <= 4.0 + 1e-12);
        }
    }

    #[test]
    fn seeded_disorder_is_reproducible_and_bounded() {
        let spec = ModelSpec::clean(6, 6, 1, 3).with_disorder(0.5, 42);
        let a = build_model(&spec).unwrap();
        let b = build_model(&spec).unwrap();
        for i in 0..spec.dim() {
            assert_eq!(a.h.entries()[[i, i]], b.h.entries()[[i, i]]);
            assert!(a.disorder[i].abs() <= 0.25);
        }
        assert_eq!(a.disorder, b.disorder);
        assert_ne!(disorder_values(&spec, 0), disorder_values(&spec, 1));
    }

    #[test]
    fn incommensurate_flux_is_rejected() {
        let spec = ModelSpec::clean(12, 12, 1, 5);
        assert!(matches!(build_model(&spec), Err(Error::FluxIncommensurate(_))));
        // half-angle gauge needs p*L/q even
        let spec = ModelSpec::clean(3, 3, 1, 3);
        assert!(matches!(build_model(&spec), Err(Error::FluxIncommensurate(_))));
        assert!(build_model(&ModelSpec::clean(6, 6, 1, 3)).is_ok());
        assert!(build_model(&ModelSpec::clean(3, 3, 2, 3)).is_ok());
    }

    #[test]
    fn magnetic_translations_commute_with_clean_h() {
        let spec = ModelSpec::clean(6, 6, 1, 3);
        let set = build_model(&spec).unwrap();
        for s in &set.translations {
            assert!(op_norm(commutator(&set.h, s).unwrap().entries()) <= 1e-11);
        }
        let [s1, s2] = &set.translations;
        let lhs = s1.entries().dot(s2.entries());
        let phase = C64::from_polar(1.0, spec.plaquette_flux());
        let rhs = s2.entries().dot(s1.entries()).mapv(|z| z * phase);
        assert!(max_abs(&(lhs - rhs)) <= 1e-11);
    }

    #[test]
    fn plaquette_flux_matches_spec() {
        let spec = ModelSpec::clean(6, 6, 1, 3);
        let set = build_model(&spec).unwrap();
        let h = set.h.entries();
        for n1 in 0..6 {
            for n2 in 0..6 {
                let s = |a: usize, b: usize| spec.site_index(a % 6, b % 6);
                let p = h[[s(n1 + 1, n2), s(n1, n2)]]
                    * h[[s(n1 + 1, n2 + 1), s(n1 + 1, n2)]]
                    * h[[s(n1, n2 + 1), s(n1 + 1, n2 + 1)]]
                    * h[[s(n1, n2), s(n1, n2 + 1)]];
                let expect = C64::from_polar(1.0, spec.plaquette_flux());
                assert!((p - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn positions_and_wrap_convention() {
        let spec = ModelSpec::clean(8, 8, 0, 1);
        let pos = position_operators(&spec);
        let site = spec.site_index(3, 1);
        assert_eq!(pos.operator(0).entries()[[site, site]].re, 3.0);
        assert_eq!(pos.operator(1).entries()[[site, site]].re, 1.0);
        let a = spec.site_index(0, 0);
        let b = spec.site_index(7, 0);
        assert_eq!(pos.kernel(0)[[a, b]].abs(), 1.0);
        let open = position_operators(&spec.clone().with_displacement(DisplacementConvention::OpenPositions));
        assert_eq!(open.kernel(0)[[a, b]], -7.0);
        let x1 = pos.operator(0);
        let x2 = pos.operator(1);
        assert_eq!(max_abs(commutator(&x1, &x2).unwrap().entries()), 0.0);
        // kernel range (-L/2, L/2]
        assert!(pos.kernel(0).iter().all(|&d| d > -4.0 && d <= 4.0));
    }

    #[test]
    fn current_closed_form_and_hermiticity() {
        let spec = ModelSpec::clean(6, 6, 1, 3);
        let set = build_model(&spec).unwrap();
        let t1 = covariant_from_kernel(&spec, &[KernelTerm { offset: (1, 0), value: C64::new(1.0, 0.0) }])
            .unwrap();
        let t1 = t1.entries();
        let expect = (adjoint(t1) - t1).mapv(|z| I * z);
        let j1 = set.current_operator(0);
        assert!(max_abs(&(j1.entries() - &expect)) < 1e-12);
        // the same operator as a matrix commutator of H with the open X_1 away from the seam
        let open = set.with_displacement(DisplacementConvention::OpenPositions);
        let x1 = open.positions.operator(0);
        let via_matrix = commutator(&open.h, &x1).unwrap().entries().mapv(|z| I * z);
        assert!(max_abs(&(open.current_operator(0).entries() - via_matrix)) < 1e-12);

        let diag = Operator::from_real_diagonal(&(0..36).map(|i| i as f64 * 0.1).collect::<Vec<_>>());
        let d = open.positions.derive(0, diag.entries());
        assert!(max_abs(&d) == 0.0);
    }

    #[test]
    fn fermi_projection_counts_states() {
        let spec = ModelSpec::clean(6, 6, 1, 3);
        let set = build_model(&spec).unwrap();
        let s = spectral_decompose(&set.h).unwrap();
        let alg = TracialAlgebra::normalized(36);
        let below = fermi_projection(&s, -10.0).unwrap();
        assert!(max_abs(below.entries()) < 1e-14);
        let above = fermi_projection(&s, 10.0).unwrap();
        assert!(above.max_abs_diff(&Operator::identity(36)) < 1e-12);
        let e = &s.eigenvalues;
        let gap_mid = 0.5 * (e[11] + e[12]);
        assert!(e[12] - e[11] > 0.5);
        let p = fermi_projection(&s, gap_mid).unwrap();
        assert!((alg.trace(&p).unwrap().re - 1.0 / 3.0).abs() < 1e-10);
        assert!(op_norm(commutator(&set.h, &p).unwrap().entries()) < 1e-11);
        assert!(p.flags().projection);
        assert!(matches!(fermi_projection(&s, e[5]), Err(Error::FermiOnEigenvalue { .. })));
    }

    #[test]
    fn fermi_dirac_limits() {
        let h = Operator::from_real_diagonal(&[0.0, 1.0]);
        let s = spectral_decompose(&h).unwrap();
        let rho = fermi_dirac_state(&s, 2.0, 0.5).unwrap();
        let expect = [1.0 / (1.0 + (-1.0f64).exp()), 1.0 / (1.0 + 1.0f64.exp())];
        assert!(rho.max_abs_diff(&Operator::from_real_diagonal(&expect)) < 1e-14);
        assert!(matches!(fermi_dirac_state(&s, 0.0, 0.5), Err(Error::NonPositiveBeta(_))));

        let spec = ModelSpec::clean(6, 6, 1, 3);
        let set = build_model(&spec).unwrap();
        let s = spectral_decompose(&set.h).unwrap();
        let e = &s.eigenvalues;
        let gap = e[12] - e[11];
        let mid = 0.5 * (e[11] + e[12]);
        let p = fermi_projection(&s, mid).unwrap();
        let rho = fermi_dirac_state(&s, 400.0 / gap, mid).unwrap();
        let alg = TracialAlgebra::normalized(36);
        let diff = rho.entries() - p.entries();
        assert!(alg.schatten_norm_mat(&diff, 1.0).unwrap() <= 1e-8);
        assert!(rho.op_norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn bloch_free_band_and_pi_flux() {
        let fam = bloch_reduce(&ModelSpec::clean(4, 4, 0, 1)).unwrap();
        for (k1, k2) in fam.momenta() {
            let h = fam.hamiltonian(k1, k2);
            assert!((h[[0, 0]].re - 2.0 * k1.cos() - 2.0 * k2.cos()).abs() < 1e-14);
        }
        let fam = bloch_reduce(&ModelSpec::clean(8, 8, 1, 2)).unwrap();
        for (k1, k2) in fam.momenta() {
            let (e, _) = fam.bands(k1, k2).unwrap();
            let r = 2.0 * ((k1 / 2.0).cos().powi(2) + k2.cos().powi(2)).sqrt();
            assert!((e[0] + r).abs() < 1e-12 && (e[1] - r).abs() < 1e-12);
        }
    }

    #[test]
    fn bloch_spectrum_matches_dense() {
        for spec in [ModelSpec::clean(6, 6, 1, 3), ModelSpec::clean(8, 8, 1, 2), ModelSpec::clean(8, 16, 1, 4)] {
            let fam = bloch_reduce(&spec).unwrap();
            let bloch = fam.eigenvalues().unwrap();
            let dense = sorted_eigs(&build_model(&spec).unwrap().h);
            assert_eq!(bloch.len(), dense.len());
            for (a, b) in bloch.iter().zip(&dense) {
                assert!((a - b).abs() < 1e-9, "{spec:?}");
            }
        }
        let dirty = ModelSpec::clean(6, 6, 1, 3).with_disorder(0.1, 1);
        assert!(matches!(bloch_reduce(&dirty), Err(Error::RequiresCleanModel)));
    }

    #[test]
    fn chern_numbers_flux_one_third() {
        let fam = bloch_reduce(&ModelSpec::clean(6, 6, 1, 3)).unwrap();
        let c1 = chern_number(&fam, 1, DEFAULT_CHERN_GRID).unwrap();
        let c2 = chern_number(&fam, 2, DEFAULT_CHERN_GRID).unwrap();
        let c3 = chern_number(&fam, 3, 12).unwrap();
        assert_eq!(c1, 1);
        assert_eq!(c2, -1);
        assert_eq!(c3, 0);
        let free = bloch_reduce(&ModelSpec::clean(4, 4, 0, 1)).unwrap();
        assert_eq!(chern_number(&free, 1, 20).unwrap(), 0);
    }

    #[test]
    fn chern_gap_closure() {
        // flux 1/4: the two middle bands touch at zero energy
        let fam = bloch_reduce(&ModelSpec::clean(8, 8, 1, 4)).unwrap();
        assert!(matches!(chern_number(&fam, 2, 20), Err(Error::GapClosure { .. })));
    }

    #[test]
    fn kernel_operators() {
        let spec = ModelSpec::clean(6, 6, 1, 3);
        let id = covariant_from_kernel(&spec, &[KernelTerm { offset: (0, 0), value: C64::new(1.0, 0.0) }])
            .unwrap();
        assert!(id.max_abs_diff(&Operator::identity(36)) == 0.0);
        let h = covariant_from_kernel(&spec, &nearest_neighbour_kernel()).unwrap();
        assert!(h.max_abs_diff(&build_model(&spec).unwrap().h) < 1e-14);
        assert!(matches!(
            covariant_from_kernel(&spec, &[KernelTerm { offset: (4, 0), value: C64::new(1.0, 0.0) }]),
            Err(Error::RangeExceedsHalfTorus(4, 0))
        ));
        let terms: Vec<KernelTerm> = [(2, 1), (-1, 3), (0, -2), (1, 1)]
            .iter()
            .enumerate()
            .map(|(i, &offset)| KernelTerm { offset, value: C64::new(0.3 * i as f64 - 0.2, 0.1 * i as f64) })
            .collect();
        let a = covariant_from_kernel(&spec, &terms).unwrap();
        for s in magnetic_translations(&spec) {
            assert!(op_norm(commutator(&a, &s).unwrap().entries()) <= 1e-11);
        }
    }

    #[test]
    fn covariance_under_disorder_shift() {
        let spec = ModelSpec::clean(6, 6, 1, 3).with_disorder(1.0, 9);
        let set = build_model(&spec).unwrap();
        let shift = (2, 5);
        let s = magnetic_translation(&spec, shift);
        let conj = s.entries().dot(set.h.entries()).dot(&adjoint(s.entries()));
        let shifted = build_model_with_disorder(&spec, shift_sites(&spec, &set.disorder, shift)).unwrap();
        assert!(op_norm(&(conj - shifted.h.entries())) <= 1e-11);
    }
}
