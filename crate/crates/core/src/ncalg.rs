//! Finite-dimensional tracial algebra toolkit.
//!
//! Dense complex matrices stand in for elements of a von Neumann algebra with
//! a finite trace. Everything spectral goes through [`SpectralData`]: the
//! Liouvillian `L_H(A) = -i[H, A]`, its resolvent, the Heisenberg flow
//! `e^{-itH} A e^{itH}` and the pinching onto `ker L_H` are all diagonal
//! superoperators in the eigenbasis of `H`.

use ndarray::{Array1, Array2, ShapeBuilder, Zip};
use ndarray_linalg::{Eigh, SVD, UPLO};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type Mat = Array2<C64>;

pub const I: C64 = C64::new(0.0, 1.0);

const HERMITIAN_TOL: f64 = 1e-12;
const UNITARY_TOL: f64 = 1e-10;
const PROJECTION_TOL: f64 = 1e-10;

pub fn adjoint(a: &Mat) -> Mat {
    a.t().mapv(|z| z.conj())
}

pub fn max_abs(a: &Mat) -> f64 {
    a.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
}

pub fn identity(n: usize) -> Mat {
    Array2::eye(n)
}

/// Largest singular value.
pub fn op_norm(a: &Mat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    match a.svd(false, false) {
        Ok((_, s, _)) => s.iter().cloned().fold(0.0, f64::max),
        Err(_) => frobenius(a),
    }
}

/// `eigh` on a column-major copy; LAPACK on row-major complex input would
/// return conjugated eigenvectors.
pub fn hermitian_eigh(a: &Mat) -> Result<(Array1<f64>, Mat)> {
    let mut f = Array2::<C64>::zeros(a.raw_dim().f());
    f.assign(a);
    let (values, vectors) = f.eigh(UPLO::Lower)?;
    let mut out = Array2::<C64>::zeros(vectors.raw_dim());
    out.assign(&vectors);
    Ok((values, out))
}

pub fn frobenius(a: &Mat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn hermitian_residual(a: &Mat) -> f64 {
    let mut r = 0.0_f64;
    let n = a.nrows();
    for i in 0..n {
        for j in i..n {
            r = r.max((a[[i, j]] - a[[j, i]].conj()).norm());
        }
    }
    r
}

fn check_square(a: &Mat) -> Result<()> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::NotSquare { rows: r, cols: c });
    }
    Ok(())
}

fn check_same_dim(a: &Mat, b: &Mat) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch { left: a.nrows(), right: b.nrows() });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Flags {
    pub hermitian: bool,
    pub unitary: bool,
    pub projection: bool,
}

/// Dense square complex matrix with optional structural flags.
///
/// Flags are only ever set by the validating constructors, so a flag that is
/// present is a guarantee at the documented tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    entries: Mat,
    flags: Flags,
}

impl Operator {
    pub fn new(entries: Mat) -> Result<Self> {
        check_square(&entries)?;
        Ok(Self { entries, flags: Flags::default() })
    }

    /// Validates and exactly symmetrizes.
    pub fn hermitian(entries: Mat) -> Result<Self> {
        check_square(&entries)?;
        let residual = hermitian_residual(&entries);
        if residual > HERMITIAN_TOL {
            return Err(Error::NotHermitian { residual });
        }
        let sym = (&entries + &adjoint(&entries)).mapv(|z| z * 0.5);
        Ok(Self { entries: sym, flags: Flags { hermitian: true, ..Flags::default() } })
    }

    pub fn unitary(entries: Mat) -> Result<Self> {
        check_square(&entries)?;
        let n = entries.nrows();
        let residual = max_abs(&(entries.dot(&adjoint(&entries)) - identity(n)));
        if residual > UNITARY_TOL {
            return Err(Error::NotUnitary { residual });
        }
        Ok(Self { entries, flags: Flags { unitary: true, ..Flags::default() } })
    }

    pub fn projection(entries: Mat) -> Result<Self> {
        let mut op = Self::hermitian(entries)?;
        let residual = max_abs(&(op.entries.dot(&op.entries) - &op.entries));
        if residual > PROJECTION_TOL {
            return Err(Error::NotProjection { residual });
        }
        op.flags.projection = true;
        Ok(op)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            entries: identity(n),
            flags: Flags { hermitian: true, unitary: true, projection: true },
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            entries: Array2::zeros((n, n)),
            flags: Flags { hermitian: true, unitary: false, projection: true },
        }
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Array2::zeros((n, n));
        for (i, &d) in diag.iter().enumerate() {
            m[[i, i]] = C64::new(d, 0.0);
        }
        Self { entries: m, flags: Flags { hermitian: true, ..Flags::default() } }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Mat {
        &self.entries
    }

    pub fn into_entries(self) -> Mat {
        self.entries
    }

    pub fn flags(&self) -> Flags {
        self.flags
    }

    pub fn is_hermitian(&self) -> bool {
        self.flags.hermitian
    }

    pub fn adjoint(&self) -> Self {
        Self { entries: adjoint(&self.entries), flags: self.flags }
    }

    pub fn dot(&self, other: &Operator) -> Result<Operator> {
        check_same_dim(&self.entries, &other.entries)?;
        Ok(Operator { entries: self.entries.dot(&other.entries), flags: Flags::default() })
    }

    pub fn op_norm(&self) -> f64 {
        if self.flags.hermitian {
            if let Ok(ev) = ndarray_linalg::EigValsh::eigvalsh(&self.entries, UPLO::Lower) {
                return ev.iter().fold(0.0_f64, |m, e| m.max(e.abs()));
            }
        }
        op_norm(&self.entries)
    }

    /// Largest entrywise distance to another operator of the same size.
    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        max_abs(&(&self.entries - &other.entries))
    }
}

/// Eigen-decomposition of a hermitian operator with ascending eigenvalues.
#[derive(Clone, Debug)]
pub struct SpectralData {
    pub eigenvalues: Array1<f64>,
    pub eigenvectors: Operator,
    pub source: Operator,
}

pub fn spectral_decompose(h: &Operator) -> Result<SpectralData> {
    if !h.flags.hermitian {
        return Err(Error::NotHermitian { residual: hermitian_residual(&h.entries) });
    }
    let (values, vectors) = hermitian_eigh(&h.entries)?;
    Ok(SpectralData {
        eigenvalues: values,
        eigenvectors: Operator {
            entries: vectors,
            flags: Flags { unitary: true, ..Flags::default() },
        },
        source: h.clone(),
    })
}

impl SpectralData {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn norm(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0_f64, |m, e| m.max(e.abs()))
    }

    /// Default pinching tolerance, `1e-9 * ||H||`.
    pub fn default_degeneracy_tol(&self) -> f64 {
        1e-9 * self.norm().max(1.0)
    }

    /// `V^* A V`.
    pub fn to_eigenbasis(&self, a: &Mat) -> Mat {
        let v = &self.eigenvectors.entries;
        adjoint(v).dot(&a.dot(v))
    }

    /// `V A V^*`.
    pub fn from_eigenbasis(&self, a: &Mat) -> Mat {
        let v = &self.eigenvectors.entries;
        v.dot(&a.dot(&adjoint(v)))
    }

    fn check(&self, a: &Operator) -> Result<()> {
        if a.dim() != self.dim() {
            return Err(Error::DimMismatch { left: self.dim(), right: a.dim() });
        }
        Ok(())
    }

    /// Multiplies the eigenbasis entry `(m, n)` by `factor(E_m, E_n)`.
    pub fn eigenbasis_map<F>(&self, a: &Mat, factor: F) -> Mat
    where
        F: Fn(f64, f64) -> C64,
    {
        let mut t = self.to_eigenbasis(a);
        let e = &self.eigenvalues;
        Zip::indexed(&mut t).for_each(|(m, n), z| *z *= factor(e[m], e[n]));
        self.from_eigenbasis(&t)
    }

    pub fn apply_function<F>(&self, f: F) -> Operator
    where
        F: Fn(f64) -> f64,
    {
        let v = &self.eigenvectors.entries;
        let mut scaled = v.clone();
        for (j, mut col) in scaled.columns_mut().into_iter().enumerate() {
            let w = f(self.eigenvalues[j]);
            col.mapv_inplace(|z| z * w);
        }
        let m = scaled.dot(&adjoint(v));
        let sym = (&m + &adjoint(&m)).mapv(|z| z * 0.5);
        Operator { entries: sym, flags: Flags { hermitian: true, ..Flags::default() } }
    }

    /// `L_H(A) = -i[H, A]`.
    pub fn liouvillian_apply(&self, a: &Operator) -> Result<Operator> {
        self.check(a)?;
        let m = self.eigenbasis_map(&a.entries, |em, en| -I * (em - en));
        Ok(Operator { entries: m, flags: Flags::default() })
    }

    /// `(eps + i kappa - L_H)^{-1}(A)`, the Laplace transform
    /// `int_0^inf e^{-(eps + i kappa) tau} alpha_tau(A) dtau`.
    pub fn liouvillian_resolvent(&self, eps: f64, kappa: f64, a: &Operator) -> Result<Operator> {
        if !(eps > 0.0) {
            return Err(Error::NonPositiveEpsilon(eps));
        }
        self.check(a)?;
        let m = self.eigenbasis_map(&a.entries, |em, en| {
            C64::new(1.0, 0.0) / C64::new(eps, kappa + em - en)
        });
        Ok(Operator { entries: m, flags: Flags::default() })
    }

    /// `alpha_t(A) = e^{-itH} A e^{+itH}`.
    pub fn heisenberg_evolve(&self, t: f64, a: &Operator) -> Result<Operator> {
        self.check(a)?;
        let m = self.eigenbasis_map(&a.entries, |em, en| C64::from_polar(1.0, -t * (em - en)));
        Ok(Operator { entries: m, flags: a.flags })
    }

    /// `e^{-itH}`.
    pub fn propagator(&self, t: f64) -> Mat {
        let v = &self.eigenvectors.entries;
        let mut scaled = v.clone();
        for (j, mut col) in scaled.columns_mut().into_iter().enumerate() {
            let w = C64::from_polar(1.0, -t * self.eigenvalues[j]);
            col.mapv_inplace(|z| z * w);
        }
        scaled.dot(&adjoint(v))
    }

    /// Splits `A` into its part on `ker L_H` (entries between eigenvalues
    /// closer than `degeneracy_tol`) and the complement.
    pub fn pinching(&self, a: &Operator, degeneracy_tol: f64) -> Result<(Operator, Operator)> {
        self.check(a)?;
        let tol = degeneracy_tol.max(0.0);
        let t = self.to_eigenbasis(&a.entries);
        let e = &self.eigenvalues;
        let mut kept = t.clone();
        let mut rest = t;
        Zip::indexed(&mut kept).and(&mut rest).for_each(|(m, n), k, r| {
            if (e[m] - e[n]).abs() <= tol {
                *r = C64::new(0.0, 0.0);
            } else {
                *k = C64::new(0.0, 0.0);
            }
        });
        let kept = self.from_eigenbasis(&kept);
        let rest = a.entries() - &kept;
        Ok((
            Operator { entries: kept, flags: Flags::default() },
            Operator { entries: rest, flags: Flags::default() },
        ))
    }

    pub fn reconstruction_residual(&self) -> f64 {
        let rebuilt = self.apply_function(|x| x);
        op_norm(&(rebuilt.entries - &self.source.entries))
    }
}

pub fn apply_function<F: Fn(f64) -> f64>(s: &SpectralData, f: F) -> Operator {
    s.apply_function(f)
}

/// Which linear functional plays the role of the trace.
#[derive(Clone, Debug, PartialEq)]
pub enum TraceMode {
    /// `Tr(A) / dim`.
    Normalized,
    /// Diagonal expectation averaged over a reference set of sites.
    Site(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TracialAlgebra {
    pub dim: usize,
    pub mode: TraceMode,
}

impl TracialAlgebra {
    pub fn normalized(dim: usize) -> Self {
        Self { dim, mode: TraceMode::Normalized }
    }

    pub fn site(dim: usize, sites: Vec<usize>) -> Result<Self> {
        if sites.is_empty() || sites.iter().any(|&s| s >= dim) {
            return Err(Error::InvalidArgument("site trace needs valid reference sites".into()));
        }
        Ok(Self { dim, mode: TraceMode::Site(sites) })
    }

    fn check(&self, a: &Mat) -> Result<()> {
        check_square(a)?;
        if a.nrows() != self.dim {
            return Err(Error::DimMismatch { left: self.dim, right: a.nrows() });
        }
        Ok(())
    }

    pub fn trace_mat(&self, a: &Mat) -> Result<C64> {
        self.check(a)?;
        Ok(match &self.mode {
            TraceMode::Normalized => a.diag().sum() / self.dim as f64,
            TraceMode::Site(sites) => {
                sites.iter().map(|&s| a[[s, s]]).sum::<C64>() / sites.len() as f64
            }
        })
    }

    pub fn trace(&self, a: &Operator) -> Result<C64> {
        self.trace_mat(&a.entries)
    }

    /// `T(A B)` without forming the product.
    pub fn trace_product(&self, a: &Mat, b: &Mat) -> Result<C64> {
        self.check(a)?;
        self.check(b)?;
        Ok(match &self.mode {
            TraceMode::Normalized => {
                let mut s = C64::new(0.0, 0.0);
                Zip::from(a).and(&b.t()).for_each(|x, y| s += x * y);
                s / self.dim as f64
            }
            TraceMode::Site(sites) => {
                let mut s = C64::new(0.0, 0.0);
                for &i in sites {
                    s += a.row(i).iter().zip(b.column(i).iter()).map(|(x, y)| x * y).sum::<C64>();
                }
                s / sites.len() as f64
            }
        })
    }

    /// `||A||_p = T(|A|^p)^{1/p}`; `p = f64::INFINITY` gives the operator norm.
    pub fn schatten_norm(&self, a: &Operator, p: f64) -> Result<f64> {
        self.schatten_norm_mat(&a.entries, p)
    }

    pub fn schatten_norm_mat(&self, a: &Mat, p: f64) -> Result<f64> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::InvalidP(p));
        }
        self.check(a)?;
        if p.is_infinite() {
            return Ok(op_norm(a));
        }
        match &self.mode {
            TraceMode::Normalized => {
                let (_, s, _) = a.svd(false, false)?;
                let sum: f64 = s.iter().map(|x| x.powf(p)).sum();
                Ok((sum / self.dim as f64).powf(1.0 / p))
            }
            TraceMode::Site(_) => {
                let gram = adjoint(a).dot(a);
                let (vals, vecs) = hermitian_eigh(&gram)?;
                let mut scaled = vecs.clone();
                for (j, mut col) in scaled.columns_mut().into_iter().enumerate() {
                    let w = vals[j].max(0.0).powf(p / 2.0);
                    col.mapv_inplace(|z| z * w);
                }
                let abs_p = scaled.dot(&adjoint(&vecs));
                Ok(self.trace_mat(&abs_p)?.re.max(0.0).powf(1.0 / p))
            }
        }
    }
}

pub fn commutator(a: &Operator, b: &Operator) -> Result<Operator> {
    check_same_dim(&a.entries, &b.entries)?;
    let c = a.entries.dot(&b.entries) - b.entries.dot(&a.entries);
    Ok(Operator { entries: c, flags: Flags::default() })
}

/// `d_X(A) = i[X, A]` for hermitian `X`.
pub fn derivation(x: &Operator, a: &Operator) -> Result<Operator> {
    if !x.flags.hermitian {
        return Err(Error::NotHermitian { residual: hermitian_residual(&x.entries) });
    }
    let c = commutator(x, a)?;
    Ok(Operator { entries: c.entries.mapv(|z| I * z), flags: Flags::default() })
}
