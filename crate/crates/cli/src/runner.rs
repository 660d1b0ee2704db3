//! Sweep execution. Realizations are independent tasks on a small worker
//! pool; results are reassembled in realization order.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use linresp::dynamics::PerturbationProfile;
use linresp::ensemble::sample_disorder;
use linresp::lattice::{build_model_with_disorder, fermi_dirac_state, fermi_projection};
use linresp::ncalg::Operator;
use linresp::response::{
    adiabatic_entry, agreement_tolerance, chern_reference, conductivity_fd, conductivity_kubo, conductivity_resolvent,
    kubo_streda, Agreement, NumericsOptions, ResponseContext, Route,
};
use linresp::Error;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, StateConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub route: Route,
    /// `None` for routes that do not depend on the adiabatic rate.
    pub eps: Option<f64>,
    /// Finite-difference step; `None` except for the `fd` route.
    pub phi_k: Option<f64>,
    /// `None` for the Fermi projection (zero temperature).
    pub beta: Option<f64>,
    /// Realization index within the configured ensemble.
    pub seed: u64,
    pub k: usize,
    pub j: usize,
    pub sigma: Option<f64>,
    pub est_error: Option<f64>,
    pub wall_ms: f64,
    pub error: Option<String>,
}

impl Row {
    pub fn sigma_rescaled_2pi(&self) -> Option<f64> {
        self.sigma.map(|s| 2.0 * PI * s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementEntry {
    pub a: Route,
    pub b: Route,
    pub tolerance: Agreement,
    pub comparisons: usize,
    pub max_difference: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleEntry {
    pub route: Route,
    pub eps: Option<f64>,
    pub phi_k: Option<f64>,
    pub beta: Option<f64>,
    pub k: usize,
    pub j: usize,
    pub samples: usize,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub realizations: usize,
    pub rows: Vec<Row>,
    pub route_agreement: Vec<AgreementEntry>,
    pub ensemble: Vec<EnsembleEntry>,
    pub chern_reference: Option<Vec<Vec<i64>>>,
}

pub const SCHEMA_VERSION: u32 = 1;

/// States of one sweep: `(beta, rho, projection)`.
fn states(ctx: &ResponseContext, config: &ExperimentConfig) -> Vec<(Option<f64>, linresp::Result<Operator>, bool)> {
    let fermi = config.state.fermi();
    let mut out = Vec::new();
    match config.state {
        StateConfig::FermiDirac { beta, .. } if config.run.beta_grid.is_empty() => {
            out.push((Some(beta), fermi_dirac_state(&ctx.spectral, beta, fermi), false));
        }
        _ => {
            for &beta in &config.run.beta_grid {
                out.push((Some(beta), fermi_dirac_state(&ctx.spectral, beta, fermi), false));
            }
            if let StateConfig::FermiProjection { .. } = config.state {
                out.push((None, fermi_projection(&ctx.spectral, fermi), true));
            }
        }
    }
    out
}

#[derive(Clone, Copy)]
struct RowKey {
    route: Route,
    eps: Option<f64>,
    phi_k: Option<f64>,
    beta: Option<f64>,
    seed: u64,
}

fn push_matrix(
    rows: &mut Vec<Row>,
    key: &RowKey,
    d: usize,
    wall_ms: f64,
    result: linresp::Result<(ndarray::Array2<f64>, Option<ndarray::Array2<f64>>)>,
) {
    for k in 0..d {
        for j in 0..d {
            let (sigma, est_error, error) = match &result {
                Ok((s, e)) => (Some(s[[k, j]]), e.as_ref().map(|e| e[[k, j]]), None),
                Err(e) => (None, None, Some(e.to_string())),
            };
            rows.push(Row {
                route: key.route,
                eps: key.eps,
                phi_k: key.phi_k,
                beta: key.beta,
                seed: key.seed,
                k,
                j,
                sigma,
                est_error,
                wall_ms,
                error,
            });
        }
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64() * 1e3)
}

/// All rows of one realization. Failures become error rows.
pub fn run_realization(config: &ExperimentConfig, index: u64) -> Vec<Row> {
    let d = 2;
    let mut rows = Vec::new();
    let setup = (|| -> linresp::Result<ResponseContext> {
        let r = sample_disorder(&config.model, index)?;
        ResponseContext::new(build_model_with_disorder(&config.model, r.values)?)
    })();
    let ctx = match setup {
        Ok(ctx) => ctx,
        Err(e) => {
            for &route in &config.run.routes {
                let key = RowKey { route, eps: None, phi_k: None, beta: None, seed: index };
                push_matrix(&mut rows, &key, d, 0.0, Err(e.clone()));
            }
            return rows;
        }
    };
    let opts = config.numerics(ctx.set.h.op_norm());
    let t = config.perturbation.t;
    for (beta, rho, is_projection) in states(&ctx, config) {
        for &route in &config.run.routes {
            let base = RowKey { route, eps: None, phi_k: None, beta, seed: index };
            let rho = match &rho {
                Ok(r) => r,
                Err(e) => {
                    push_matrix(&mut rows, &base, d, 0.0, Err(e.clone()));
                    continue;
                }
            };
            match route {
                Route::Streda => {
                    let (res, ms) = timed(|| {
                        if !is_projection {
                            return Err(Error::NotSpectralProjection { residual: f64::NAN });
                        }
                        let mut s = ndarray::Array2::zeros((d, d));
                        for k in 0..d {
                            for j in 0..d {
                                if k != j {
                                    s[[k, j]] = kubo_streda(&ctx.alg, &ctx.spectral, rho, &ctx.set.positions, k, j)?.value;
                                }
                            }
                        }
                        Ok((s, None))
                    });
                    push_matrix(&mut rows, &base, d, ms, res);
                }
                Route::Adiabatic => {
                    for k in 0..d {
                        for j in 0..d {
                            let (res, ms) = timed(|| adiabatic_entry(&ctx, rho, k, j));
                            let (sigma, error) = match res {
                                Ok(v) => (Some(v), None),
                                Err(e) => (None, Some(e.to_string())),
                            };
                            rows.push(Row {
                                route,
                                eps: None,
                                phi_k: None,
                                beta,
                                seed: index,
                                k,
                                j,
                                sigma,
                                est_error: None,
                                wall_ms: ms,
                                error,
                            });
                        }
                    }
                }
                Route::Kubo | Route::Resolvent | Route::Fd => {
                    for eps in config.eps_grid() {
                        let p = PerturbationProfile::with_modulation(eps, vec![0.0; d], config.perturbation.modulation);
                        let key = RowKey { eps: Some(eps), ..base };
                        match route {
                            Route::Kubo => {
                                let (res, ms) = timed(|| conductivity_kubo(&ctx, &p, rho, t, &opts));
                                push_matrix(&mut rows, &key, d, ms, res.map(|r| (r.sigma, Some(r.est_error))));
                            }
                            Route::Resolvent => {
                                let (res, ms) = timed(|| conductivity_resolvent(&ctx, &p, rho, t));
                                push_matrix(&mut rows, &key, d, ms, res.map(|s| (s, None)));
                            }
                            _ => {
                                for &step in &config.run.phi_grid {
                                    let o = NumericsOptions { fd_step: step, ..opts };
                                    let (res, ms) = timed(|| conductivity_fd(&ctx, &p, rho, t, &o));
                                    let fd_key = RowKey { phi_k: Some(step), ..key };
                                    push_matrix(&mut rows, &fd_key, d, ms, res.map(|r| (r.sigma, Some(r.level_difference))));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    rows
}

fn worker_count(config: &ExperimentConfig, tasks: usize) -> usize {
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    config.run.workers.unwrap_or(available).clamp(1, tasks.max(1))
}

/// Number of distinct realizations: a clean model has exactly one.
pub fn realization_count(config: &ExperimentConfig) -> usize {
    if config.model.disorder_w == 0.0 {
        1
    } else {
        config.run.ensemble_n
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Report {
    let n = realization_count(config);
    let results: Mutex<Vec<Option<Vec<Row>>>> = Mutex::new(vec![None; n]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..worker_count(config, n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let rows = run_realization(config, i as u64);
                results.lock().expect("result slots poisoned")[i] = Some(rows);
            });
        }
    });
    let rows: Vec<Row> = results.into_inner().expect("result slots poisoned").into_iter().flatten().flatten().collect();
    let route_agreement = agreement_matrix(&rows);
    let ensemble = ensemble_summary(&rows);
    let chern = chern_for(config);
    Report {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        realizations: n,
        rows,
        route_agreement,
        ensemble,
        chern_reference: chern,
    }
}

fn chern_for(config: &ExperimentConfig) -> Option<Vec<Vec<i64>>> {
    if !config.model.is_clean() || !matches!(config.state, StateConfig::FermiProjection { .. }) {
        return None;
    }
    let ctx = ResponseContext::new(linresp::lattice::build_model(&config.model).ok()?).ok()?;
    let p = fermi_projection(&ctx.spectral, config.state.fermi()).ok()?;
    let c = chern_reference(&ctx, &p).ok()?;
    Some(c.rows().into_iter().map(|r| r.to_vec()).collect())
}

fn same(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => x.to_bits() == y.to_bits(),
        _ => false,
    }
}

/// Pairwise comparison of routes with a declared agreement, matching rows
/// on `(eps, beta, seed, k, j)`.
pub fn agreement_matrix(rows: &[Row]) -> Vec<AgreementEntry> {
    let mut out = Vec::new();
    for (ia, a) in Route::ALL.iter().enumerate() {
        for b in &Route::ALL[ia + 1..] {
            let Some(tolerance) = agreement_tolerance(*a, *b) else { continue };
            let mut comparisons = 0;
            let mut max_difference: f64 = 0.0;
            let mut pass = true;
            for ra in rows.iter().filter(|r| r.route == *a) {
                for rb in rows.iter().filter(|r| r.route == *b) {
                    let matched = (same(ra.eps, rb.eps) || ra.eps.is_none() || rb.eps.is_none())
                        && same(ra.beta, rb.beta)
                        && ra.seed == rb.seed
                        && ra.k == rb.k
                        && ra.j == rb.j;
                    if !matched {
                        continue;
                    }
                    if let (Some(x), Some(y)) = (ra.sigma, rb.sigma) {
                        comparisons += 1;
                        max_difference = max_difference.max((x - y).abs());
                        pass &= tolerance.holds(x, y);
                    }
                }
            }
            if comparisons > 0 {
                out.push(AgreementEntry { a: *a, b: *b, tolerance, comparisons, max_difference, pass });
            }
        }
    }
    out
}

/// Mean and standard error over realizations for every sweep point.
pub fn ensemble_summary(rows: &[Row]) -> Vec<EnsembleEntry> {
    let mut out: Vec<(EnsembleEntry, Vec<f64>)> = Vec::new();
    for r in rows {
        let Some(sigma) = r.sigma else { continue };
        let slot = out.iter_mut().find(|(e, _)| {
            e.route == r.route && same(e.eps, r.eps) && same(e.phi_k, r.phi_k) && same(e.beta, r.beta) && e.k == r.k && e.j == r.j
        });
        match slot {
            Some((_, values)) => values.push(sigma),
            None => out.push((
                EnsembleEntry {
                    route: r.route,
                    eps: r.eps,
                    phi_k: r.phi_k,
                    beta: r.beta,
                    k: r.k,
                    j: r.j,
                    samples: 0,
                    mean: 0.0,
                    stderr: 0.0,
                },
                vec![sigma],
            )),
        }
    }
    out.into_iter()
        .map(|(mut e, v)| {
            let m = v.len() as f64;
            e.samples = v.len();
            e.mean = v.iter().sum::<f64>() / m;
            e.stderr = if v.len() > 1 {
                (v.iter().map(|x| (x - e.mean).powi(2)).sum::<f64>() / (m - 1.0) / m).sqrt()
            } else {
                0.0
            };
            e
        })
        .collect()
}
