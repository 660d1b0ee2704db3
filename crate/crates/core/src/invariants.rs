//! Randomized checks of the trace and derivation identities of the finite
//! tracial algebra. Each trial returns the violation: the size of the
//! difference for identities, the excess of the left side for inequalities.

use gauss_quad::legendre::GaussLegendre;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ncalg::{adjoint, hermitian_eigh, identity, max_abs, op_norm, Mat, Operator, TracialAlgebra, C64, I};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpInvariant {
    HolderDuality,
    Interpolation,
    AdjointIsometry,
    TraceCommutatorSwitch,
    Leibniz,
    IntegrationByParts,
    ProjectionOffdiagonal,
    DoubleCommutator,
}

impl LpInvariant {
    pub const ALL: [LpInvariant; 8] = [
        LpInvariant::HolderDuality,
        LpInvariant::Interpolation,
        LpInvariant::AdjointIsometry,
        LpInvariant::TraceCommutatorSwitch,
        LpInvariant::Leibniz,
        LpInvariant::IntegrationByParts,
        LpInvariant::ProjectionOffdiagonal,
        LpInvariant::DoubleCommutator,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LpInvariant::HolderDuality => "holder_duality",
            LpInvariant::Interpolation => "interpolation",
            LpInvariant::AdjointIsometry => "adjoint_isometry",
            LpInvariant::TraceCommutatorSwitch => "trace_commutator_switch",
            LpInvariant::Leibniz => "leibniz",
            LpInvariant::IntegrationByParts => "integration_by_parts",
            LpInvariant::ProjectionOffdiagonal => "projection_offdiagonal",
            LpInvariant::DoubleCommutator => "double_commutator",
        }
    }

    /// One randomized trial; the dimension is drawn from `2..=max_dim`.
    pub fn trial(&self, seed: u64, max_dim: usize) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=max_dim.max(2));
        let alg = TracialAlgebra::normalized(n);
        match self {
            LpInvariant::HolderDuality => {
                let (a, b) = (random_matrix(n, &mut rng), random_matrix(n, &mut rng));
                let ab = a.dot(&b);
                let mut worst: f64 = 0.0;
                for (p, q) in [(1.0, f64::INFINITY), (2.0, 2.0), (3.0, 1.5)] {
                    let tr = alg.trace_mat(&ab)?.norm();
                    let one = alg.schatten_norm_mat(&ab, 1.0)?;
                    let bound = alg.schatten_norm_mat(&a, p)? * alg.schatten_norm_mat(&b, q)?;
                    worst = worst.max(tr - one).max(one - bound);
                }
                Ok(worst.max(0.0))
            }
            LpInvariant::Interpolation => {
                let a = random_matrix(n, &mut rng);
                let p = rng.random_range(1.0..4.0);
                let q = rng.random_range(1.0..8.0);
                let (np, nq) = (alg.schatten_norm_mat(&a, p)?, alg.schatten_norm_mat(&a, q)?);
                let mut worst: f64 = 0.0;
                for theta in [0.0, 0.25, 0.5, 1.0] {
                    let r = p * q / (theta * p + (1.0 - theta) * q);
                    let lhs = alg.schatten_norm_mat(&a, r)?;
                    worst = worst.max(lhs - np.powf(1.0 - theta) * nq.powf(theta));
                }
                Ok(worst.max(0.0))
            }
            LpInvariant::AdjointIsometry => {
                let a = random_matrix(n, &mut rng);
                let ad = adjoint(&a);
                let mut worst: f64 = 0.0;
                for p in [1.0, 2.0, 4.0, f64::INFINITY] {
                    worst = worst.max((alg.schatten_norm_mat(&ad, p)? - alg.schatten_norm_mat(&a, p)?).abs());
                }
                Ok(worst)
            }
            LpInvariant::TraceCommutatorSwitch => {
                let (a, b, c) = (random_matrix(n, &mut rng), random_matrix(n, &mut rng), random_matrix(n, &mut rng));
                let lhs = alg.trace_product(&a, &comm(&b, &c))?;
                let rhs = alg.trace_product(&comm(&a, &b), &c)?;
                Ok((lhs - rhs).norm())
            }
            LpInvariant::Leibniz => {
                let x = random_hermitian(n, &mut rng);
                let (a, b) = (random_matrix(n, &mut rng), random_matrix(n, &mut rng));
                let lhs = derive(&x, &a.dot(&b));
                let rhs = derive(&x, &a).dot(&b) + a.dot(&derive(&x, &b));
                let star = derive(&x, &adjoint(&a)) - adjoint(&derive(&x, &a));
                Ok(max_abs(&(lhs - rhs)).max(max_abs(&star)))
            }
            LpInvariant::IntegrationByParts => {
                let x = random_hermitian(n, &mut rng);
                let (a, b) = (random_matrix(n, &mut rng), random_matrix(n, &mut rng));
                let lhs = alg.trace_product(&a, &derive(&x, &b))?;
                let rhs = -alg.trace_product(&derive(&x, &a), &b)?;
                Ok((lhs - rhs).norm())
            }
            LpInvariant::ProjectionOffdiagonal => {
                let (p, x) = (random_projection(n, &mut rng)?, random_hermitian(n, &mut rng));
                let dp = derive(&x, &p);
                let q = Array2::from_diag_elem(n, C64::new(1.0, 0.0)) - &p;
                Ok(max_abs(&p.dot(&dp).dot(&p)).max(max_abs(&q.dot(&dp).dot(&q))))
            }
            LpInvariant::DoubleCommutator => {
                let (p, x) = (random_projection(n, &mut rng)?, random_hermitian(n, &mut rng));
                let dp = derive(&x, &p);
                Ok(max_abs(&(comm(&p, &comm(&p, &dp)) - dp)))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantSummary {
    pub invariant: LpInvariant,
    pub trials: usize,
    pub failures: usize,
    pub worst: f64,
}

/// Runs `trials` seeded trials of every invariant against an absolute slack.
pub fn run_suite(base_seed: u64, trials: usize, max_dim: usize, slack: f64) -> Result<Vec<InvariantSummary>> {
    LpInvariant::ALL
        .iter()
        .enumerate()
        .map(|(i, inv)| {
            let mut failures = 0;
            let mut worst: f64 = 0.0;
            for t in 0..trials {
                let v = inv.trial(base_seed ^ ((i as u64) << 32) ^ t as u64, max_dim)?;
                worst = worst.max(v);
                if !(v <= slack) {
                    failures += 1;
                }
            }
            Ok(InvariantSummary { invariant: *inv, trials, failures, worst })
        })
        .collect()
}

/// `e^{-i step H}` by a scaled and squared Taylor series.
pub fn taylor_propagator(h: &Mat, step: f64) -> Mat {
    let n = h.nrows();
    let norm = op_norm(h) * step.abs();
    let squarings = (norm / 0.5).log2().ceil().max(0.0) as i32;
    let scaled = h.mapv(|z| z * C64::new(0.0, -step / 2f64.powi(squarings)));
    let mut term = identity(n);
    let mut sum = identity(n);
    for k in 1..30 {
        term = term.dot(&scaled).mapv(|z| z / k as f64);
        sum = sum + &term;
    }
    for _ in 0..squarings {
        sum = sum.dot(&sum);
    }
    sum
}

/// `int_0^inf e^{-eps tau} e^{-i tau H} A e^{i tau H} dtau` by composite
/// Gauss-Legendre quadrature, with the time evolution taken from Taylor
/// propagators rather than from an eigendecomposition. The integral is cut
/// where the integrand drops below `1e-12 ||A||`.
pub fn laplace_quadrature(h: &Mat, a: &Mat, eps: f64) -> Result<Mat> {
    if !(eps > 0.0) {
        return Err(Error::NonPositiveEpsilon(eps));
    }
    let n = h.nrows();
    let rule = GaussLegendre::new(16).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let tau_max = (op_norm(a).max(1e-300) * 1e12 / eps).ln().max(1.0) / eps;
    let width = (0.5 / op_norm(h).max(1e-3)).min(1.0);
    let panels = (tau_max / width).ceil() as usize;
    let width = tau_max / panels as f64;
    let nodes: Vec<(f64, f64, Mat)> = rule
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| {
            let offset = 0.5 * width * (x + 1.0);
            (offset, 0.5 * width * w, taylor_propagator(h, offset))
        })
        .collect();
    let panel_u = taylor_propagator(h, width);
    let mut u = identity(n);
    let mut acc = Mat::zeros((n, n));
    for panel in 0..panels {
        let start = panel as f64 * width;
        for (offset, w, un) in &nodes {
            let v = un.dot(&u);
            let evolved = v.dot(a).dot(&adjoint(&v));
            acc.scaled_add(C64::new(w * (-eps * (start + offset)).exp(), 0.0), &evolved);
        }
        u = panel_u.dot(&u);
    }
    Ok(acc)
}

/// Random `(H, A, eps)` triple of dimension `2..=max_dim`.
pub fn random_laplace_triple(seed: u64, max_dim: usize) -> (Mat, Mat, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=max_dim.max(2));
    let h = random_hermitian(n, &mut rng);
    let a = random_matrix(n, &mut rng);
    (h, a, rng.random_range(0.1..2.0))
}

fn comm(a: &Mat, b: &Mat) -> Mat {
    a.dot(b) - b.dot(a)
}

fn derive(x: &Mat, a: &Mat) -> Mat {
    comm(x, a).mapv(|z| I * z)
}

fn random_matrix(n: usize, rng: &mut ChaCha8Rng) -> Mat {
    Array2::from_shape_fn((n, n), |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> Mat {
    let a = random_matrix(n, rng);
    (&a + &adjoint(&a)).mapv(|z| z * 0.5)
}

fn random_projection(n: usize, rng: &mut ChaCha8Rng) -> Result<Mat> {
    let rank = rng.random_range(0..=n);
    let (_, v) = hermitian_eigh(&random_hermitian(n, rng))?;
    let cols = v.slice(ndarray::s![.., ..rank]).to_owned();
    Ok(Operator::projection(cols.dot(&adjoint(&cols)))?.into_entries())
}
