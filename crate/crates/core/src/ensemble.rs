//! Disorder ensembles, covariance checks and volume / ensemble averages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{
    build_model_with_disorder, disorder_values, fermi_projection, magnetic_translation, shift_sites, ModelSpec,
};
use crate::ncalg::{adjoint, op_norm, spectral_decompose, Operator, TracialAlgebra};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisorderRealization {
    pub seed: u64,
    pub index: u64,
    pub w: f64,
    pub values: Vec<f64>,
    pub spec: ModelSpec,
}

/// Realization `index` of the ensemble fixed by `spec.seed`. Every site value
/// is addressed directly in the generator stream, so the result does not
/// depend on evaluation order.
pub fn sample_disorder(spec: &ModelSpec, index: u64) -> Result<DisorderRealization> {
    spec.validate()?;
    Ok(DisorderRealization {
        seed: spec.seed,
        index,
        w: spec.disorder_w,
        values: disorder_values(spec, index),
        spec: spec.clone(),
    })
}

/// `||S_a H_omega S_a^* - H_{tau_a omega}||_op`.
pub fn covariance_check(spec: &ModelSpec, realization: &DisorderRealization, shift: (i64, i64)) -> Result<f64> {
    spec.validate()?;
    let h = build_model_with_disorder(spec, realization.values.clone())?.h;
    let shifted = build_model_with_disorder(spec, shift_sites(spec, &realization.values, shift))?.h;
    let s = magnetic_translation(spec, shift);
    let conj = s.entries().dot(h.entries()).dot(&s.adjoint().into_entries());
    Ok(op_norm(&(conj - shifted.entries())))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoxEstimate {
    pub size: (usize, usize),
    /// `(1/|box|) Tr(P_box A P_box)` for every cyclic placement, indexed by
    /// the lower-left corner `n1 + L1 n2`.
    pub values: Vec<f64>,
    pub mean: f64,
    pub spread: f64,
}

pub fn trace_per_volume_estimate(spec: &ModelSpec, a: &Operator, boxes: &[(usize, usize)]) -> Result<Vec<BoxEstimate>> {
    let [l1, l2] = spec.lengths();
    if a.dim() != spec.dim() {
        return Err(Error::DimMismatch { left: spec.dim(), right: a.dim() });
    }
    let diag: Vec<f64> = a.entries().diag().iter().map(|z| z.re).collect();
    boxes
        .iter()
        .map(|&(b1, b2)| {
            if b1 == 0 || b2 == 0 || b1 > l1 || b2 > l2 {
                return Err(Error::BoxExceedsTorus(b1, b2));
            }
            let volume = (b1 * b2) as f64;
            let mut values = Vec::with_capacity(l1 * l2);
            for c2 in 0..l2 {
                for c1 in 0..l1 {
                    let mut sum = 0.0;
                    for m2 in 0..b2 {
                        for m1 in 0..b1 {
                            sum += diag[spec.site_index((c1 + m1) % l1, (c2 + m2) % l2)];
                        }
                    }
                    values.push(sum / volume);
                }
            }
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(BoxEstimate { size: (b1, b2), values, mean, spread: hi - lo })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct EnsembleStats {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`; zero when one sample succeeded.
    pub stderr: f64,
    pub values: Vec<(u64, f64)>,
    pub failures: Vec<(u64, Error)>,
    pub single_sample: bool,
}

/// Mean and standard error of `quantity` over realizations `0..n`.
/// Failed realizations are kept aside; the call fails only if all do.
pub fn ensemble_average<F>(spec: &ModelSpec, n: usize, mut quantity: F) -> Result<EnsembleStats>
where
    F: FnMut(&DisorderRealization) -> Result<f64>,
{
    if n == 0 {
        return Err(Error::NonPositiveN);
    }
    let mut values = Vec::with_capacity(n);
    let mut failures = Vec::new();
    for index in 0..n as u64 {
        let r = sample_disorder(spec, index)?;
        match quantity(&r) {
            Ok(v) => values.push((index, v)),
            Err(e) => failures.push((index, e)),
        }
    }
    if values.is_empty() {
        return Err(failures.swap_remove(0).1);
    }
    let m = values.len() as f64;
    let mean = values.iter().map(|v| v.1).sum::<f64>() / m;
    let stderr = if values.len() > 1 {
        let var = values.iter().map(|v| (v.1 - mean).powi(2)).sum::<f64>() / (m - 1.0);
        (var / m).sqrt()
    } else {
        0.0
    };
    let single_sample = values.len() == 1;
    Ok(EnsembleStats { mean, stderr, values, failures, single_sample })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeNorm {
    pub l: usize,
    /// `||d_1 P||_2^2 + ||d_2 P||_2^2` in the normalized trace.
    pub squared_norm: f64,
}

/// `||d P||_2` of the Fermi projection of realization `index` on growing
/// square tori. Bounded growth is consistent with a localized Fermi level;
/// it is reported as a diagnostic and not as a certificate.
pub fn derivative_norm_growth(base: &ModelSpec, sizes: &[usize], fermi: f64, index: u64) -> Result<Vec<DerivativeNorm>> {
    sizes
        .iter()
        .map(|&l| {
            let spec = ModelSpec { l1: l, l2: l, ..base.clone() };
            let r = sample_disorder(&spec, index)?;
            let set = build_model_with_disorder(&spec, r.values)?;
            let s = spectral_decompose(&set.h)?;
            let p = fermi_projection(&s, fermi)?;
            let alg = TracialAlgebra::normalized(spec.dim());
            let mut squared_norm = 0.0;
            for k in 0..2 {
                let d = set.derive(k, p.entries());
                squared_norm += alg.trace_product(&adjoint(&d), &d)?.re;
            }
            Ok(DerivativeNorm { l, squared_norm })
        })
        .collect()
}
