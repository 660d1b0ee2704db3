//! Named self-checks of the library invariants on small models.

use std::f64::consts::PI;
use std::time::Instant;

use linresp::dynamics::{duhamel_residual, perturbed_hamiltonian, propagate, Modulation, PerturbationProfile};
use linresp::ensemble::{covariance_check, ensemble_average, sample_disorder, trace_per_volume_estimate};
use linresp::invariants::{laplace_quadrature, random_laplace_triple, run_suite};
use linresp::lattice::{
    bloch_reduce, build_model, build_model_with_disorder, chern_number, fermi_dirac_state, fermi_projection,
    DisplacementConvention, ModelSpec,
};
use linresp::ncalg::{adjoint, hermitian_eigh, identity, max_abs, spectral_decompose, Operator, C64};
use linresp::response::*;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Level {
    Quick,
    Full,
}

/// Deliberate corruption used to confirm that a check can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Tamper {
    /// Flip the sign of the closed-form Liouvillian resolvent.
    LiouvillianSign,
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
    pub secs: f64,
}

type Check = linresp::Result<(bool, String)>;

fn max_abs_real(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn gap_projection(ctx: &ResponseContext, filled: usize) -> linresp::Result<(Operator, f64, f64)> {
    let e = &ctx.spectral.eigenvalues;
    let ef = 0.5 * (e[filled - 1] + e[filled]);
    Ok((fermi_projection(&ctx.spectral, ef)?, ef, e[filled] - e[filled - 1]))
}

fn third_flux(l: usize) -> ModelSpec {
    ModelSpec::clean(l, l, 1, 3)
}

fn open_disordered() -> ModelSpec {
    third_flux(6).with_disorder(1.0, 8).with_displacement(DisplacementConvention::OpenPositions)
}

fn spectral_reconstruction() -> Check {
    let set = build_model(&third_flux(6).with_disorder(1.0, 3))?;
    let r = spectral_decompose(&set.h)?.reconstruction_residual();
    Ok((r <= 1e-10, format!("residual {r:.1e}")))
}

fn resolvent_identity(tamper: Option<Tamper>) -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let (h, a, eps) = random_laplace_triple(400 + seed, 6);
        let quad = laplace_quadrature(&h, &a, eps)?;
        let s = spectral_decompose(&Operator::hermitian(h)?)?;
        let mut closed = s.liouvillian_resolvent(eps, 0.0, &Operator::new(a)?)?.into_entries();
        if tamper == Some(Tamper::LiouvillianSign) {
            closed.mapv_inplace(|z| -z);
        }
        worst = worst.max(max_abs(&(closed - &quad)));
    }
    Ok((worst <= 1e-8, format!("worst difference {worst:.1e}")))
}

fn magnetic_commutation() -> Check {
    let spec = third_flux(6);
    let set = build_model(&spec)?;
    let [s1, s2] = &set.translations;
    let phase = C64::from_polar(1.0, -2.0 * spec.hopping_angle());
    let (a, b) = (s1.entries(), s2.entries());
    let relation = max_abs(&(a.dot(b) - b.dot(a).mapv(|z| z * phase)));
    let h = set.h.entries();
    let commute = [a, b].iter().fold(0.0f64, |m, s| m.max(max_abs(&(s.dot(h) - h.dot(*s)))));
    Ok((relation <= 1e-12 && commute <= 1e-12, format!("S1S2 relation {relation:.1e}, [H,S] {commute:.1e}")))
}

fn disorder_covariance() -> Check {
    let spec = third_flux(6).with_disorder(1.0, 3);
    let r = sample_disorder(&spec, 2)?;
    let mut worst: f64 = 0.0;
    for shift in [(1, 0), (0, 1), (2, 5), (-1, 3)] {
        worst = worst.max(covariance_check(&spec, &r, shift)?);
    }
    Ok((worst <= 1e-11, format!("worst {worst:.1e}")))
}

fn bloch_spectrum() -> Check {
    let spec = third_flux(6);
    let direct = spectral_decompose(&build_model(&spec)?.h)?.eigenvalues;
    let bloch = bloch_reduce(&spec)?.eigenvalues()?;
    let worst = direct.iter().zip(&bloch).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok((worst <= 1e-10 && direct.len() == bloch.len(), format!("worst {worst:.1e}")))
}

fn chern_flux_third() -> Check {
    let family = bloch_reduce(&third_flux(12))?;
    let c1 = chern_number(&family, 1, 30)?;
    let c2 = chern_number(&family, 2, 30)?;
    Ok((c1 == 1 && c2 == -1, format!("lowest band {c1}, two bands {c2}")))
}

fn random_functions(ctx: &ResponseContext) -> Vec<Operator> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    (0..5)
        .map(|_| {
            let c: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            ctx.spectral.apply_function(|e| c[0] * e.sin() + c[1] * (2.0 * e).cos() + c[2] / (1.0 + e * e) + c[3])
        })
        .collect()
}

fn equilibrium_no_current() -> Check {
    let ctx = ResponseContext::new(build_model(&open_disordered())?)?;
    let mut worst: f64 = 0.0;
    for f in random_functions(&ctx) {
        for j in &ctx.currents {
            worst = worst.max(ctx.alg.trace_product(j.entries(), f.entries())?.norm());
        }
    }
    Ok((worst <= 1e-11, format!("max |T(J f(H))| {worst:.1e}")))
}

fn current_identity() -> Check {
    let ctx = ResponseContext::new(build_model(&open_disordered())?)?;
    let h = ctx.set.h.entries();
    let mut worst: f64 = 0.0;
    for f in random_functions(&ctx) {
        for k in 0..2 {
            let lhs = h.dot(&ctx.set.derive(k, f.entries()));
            let rhs = ctx.currents[k].entries().dot(f.entries()) + ctx.set.derive(k, &h.dot(f.entries()));
            worst = worst.max(max_abs(&(lhs - rhs)));
        }
    }
    Ok((worst <= 1e-11, format!("worst {worst:.1e}")))
}

fn driven() -> PerturbationProfile {
    PerturbationProfile::with_modulation(0.5, vec![0.05, 0.03], Modulation::FourierCosine { omega0: 0.7 })
}

fn isospectrality() -> Check {
    let set = build_model(&open_disordered())?;
    let e0 = spectral_decompose(&set.h)?.eigenvalues;
    let mut worst: f64 = 0.0;
    for t in [-3.0, 0.0, 2.5] {
        let (et, _) = hermitian_eigh(perturbed_hamiltonian(&set, &driven(), t)?.entries())?;
        worst = worst.max(et.iter().zip(e0.iter()).fold(0.0, |m, (a, b)| m.max((a - b).abs())));
    }
    Ok((worst <= 1e-9, format!("worst {worst:.1e}")))
}

fn unitarity_cocycle() -> Check {
    let set = build_model(&open_disordered())?;
    let r = propagate(&set, &driven(), -1.0, 1.0, 1e-3)?;
    let u = r.u.entries();
    let unitarity = max_abs(&(adjoint(u).dot(u) - identity(set.dim())));
    Ok((
        unitarity <= 1e-9 && r.cocycle_residual <= 1e-6,
        format!("unitarity {unitarity:.1e}, cocycle {:.1e}", r.cocycle_residual),
    ))
}

fn duhamel() -> Check {
    let set = build_model(&open_disordered())?;
    let d1 = duhamel_residual(&set, &driven(), 1.0, -1.0, 1e-3)?;
    let d2 = duhamel_residual(&set, &driven(), 1.0, -1.0, 2e-3)?;
    let order = (d2 / d1).log2();
    Ok((d1 <= 1e-5 && order >= 1.8, format!("residual {d1:.2e}, order {order:.2}")))
}

fn zero_field_current() -> Check {
    let ctx = ResponseContext::new(build_model(&open_disordered())?)?;
    let rho = fermi_dirac_state(&ctx.spectral, 2.0, 0.0)?;
    let zero = PerturbationProfile::constant(0.5, vec![0.0, 0.0]);
    let opts = NumericsOptions { dt: 1e-2, ..Default::default() };
    let currents = net_currents(&ctx, &zero, &rho, 0.7, &opts)?;
    let net = currents.iter().fold(0.0f64, |m, c| m.max(c.value.abs()).max(c.dual_form.abs()));
    Ok((net <= 1e-11, format!("net current {net:.1e}")))
}

fn hall_setup() -> linresp::Result<(ResponseContext, Operator, f64, f64)> {
    let ctx = ResponseContext::new(build_model(&third_flux(12))?)?;
    let (p, ef, gap) = gap_projection(&ctx, 48)?;
    Ok((ctx, p, ef, gap))
}

fn kubo_streda_quantization() -> Check {
    let (ctx, p, _, _) = hall_setup()?;
    let v = 2.0 * PI * kubo_streda(&ctx.alg, &ctx.spectral, &p, &ctx.set.positions, 0, 1)?.value;
    Ok(((v - 1.0).abs() <= 0.05, format!("2 pi sigma_12 = {v:.5}")))
}

fn trace_per_volume() -> Check {
    let spec = third_flux(12).with_disorder(0.5, 5);
    let ctx = ResponseContext::new(build_model(&spec)?)?;
    let (p, _, _) = gap_projection(&ctx, 48)?;
    let exact = ctx.alg.trace(&p)?.re;
    let est = trace_per_volume_estimate(&spec, &p, &[(3, 3), (12, 12)])?;
    let full = (est[1].mean - exact).abs() + est[1].spread;
    let small = (est[0].mean - exact).abs();
    Ok((full <= 1e-12 && small <= 1e-12, format!("T(P) {exact:.6}, full box {full:.1e}, 3x3 mean {small:.1e}")))
}

fn desk_model() -> linresp::Result<(ResponseContext, Operator)> {
    let spec = ModelSpec::clean(8, 8, 1, 4).with_displacement(DisplacementConvention::OpenPositions);
    let ctx = ResponseContext::new(build_model(&spec)?)?;
    let (p, _, _) = gap_projection(&ctx, 16)?;
    Ok((ctx, p))
}

fn comparison_theorem() -> Check {
    let (ctx, p) = desk_model()?;
    let prof = PerturbationProfile::constant(0.5, vec![0.05, 0.0]);
    let residual = |dt: f64| -> linresp::Result<f64> {
        let opts = NumericsOptions { dt, ..Default::default() };
        full_state_expansion(&ctx, &prof, &p, 1.0, &opts)?.expansion_residual(&ctx.alg, &prof.field)
    };
    let (r1, r2) = (residual(1e-3)?, residual(5e-4)?);
    Ok((r1 <= 1e-5 && r1 >= 3.0 * r2, format!("residual {r1:.2e}, ratio {:.2}", r1 / r2)))
}

fn route_equivalence() -> Check {
    let (ctx, p) = desk_model()?;
    let prof = PerturbationProfile::constant(0.5, vec![0.05, 0.0]);
    let opts = NumericsOptions::default();
    let kubo = conductivity_kubo(&ctx, &prof, &p, 1.0, &NumericsOptions { tail_tol: 1e-12, ..opts })?.sigma;
    let fd = conductivity_fd(&ctx, &prof, &p, 1.0, &opts)?.sigma;
    let res = conductivity_resolvent(&ctx, &prof, &p, 1.0)?;
    let fd_ok = fd.iter().zip(kubo.iter()).all(|(a, b)| (a - b).abs() <= 1e-3 * b.abs().max(1.0));
    let kr = max_abs_real(&(&kubo - &res));
    Ok((fd_ok && kr <= 1e-8, format!("fd within 1e-3: {fd_ok}, |kubo-resolvent| {kr:.1e}")))
}

const EPS_GRID: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

fn adiabatic_limit() -> Check {
    let (ctx, p, _, _) = hall_setup()?;
    let prof = PerturbationProfile::constant(0.1, vec![0.0, 0.0]);
    let mut pts = Vec::new();
    for eps in EPS_GRID {
        pts.push((eps, conductivity_tilde(&ctx, &prof.with_eps(eps), &p, 1.0)?[[0, 1]]));
    }
    let limit = extrapolate_to_zero(&pts);
    let ad = adiabatic_entry(&ctx, &p, 0, 1)?;
    let st = kubo_streda(&ctx.alg, &ctx.spectral, &p, &ctx.set.positions, 0, 1)?.value;
    Ok((
        (limit - ad).abs() <= 1e-2 && (ad - st).abs() <= 1e-2,
        format!("limit {limit:.5}, adiabatic {ad:.5}, streda {st:.5}"),
    ))
}

fn zero_temperature_ordering() -> Check {
    let (ctx, p, ef, gap) = hall_setup()?;
    let beta = 400.0 / gap;
    let rho = fermi_dirac_state(&ctx.spectral, beta, ef)?;
    let prof = PerturbationProfile::constant(0.1, vec![0.0, 0.0]);
    let mut worst: f64 = 0.0;
    for eps in EPS_GRID {
        let q = prof.with_eps(eps);
        worst = worst.max(max_abs_real(&(conductivity_resolvent(&ctx, &q, &rho, 0.0)? - conductivity_resolvent(&ctx, &q, &p, 0.0)?)));
    }
    let table = zero_temperature_sweep(&ctx, &prof, ef, &[1.0 / gap, 10.0 / gap, beta], 0.0, &NumericsOptions::default())?;
    Ok((worst <= 1e-4 && table.monotone, format!("difference {worst:.1e}, monotone {}", table.monotone)))
}

fn ensemble_robustness() -> Check {
    let (clean_ctx, clean_p, ef, _) = hall_setup()?;
    let clean = 2.0 * PI * kubo_streda(&clean_ctx.alg, &clean_ctx.spectral, &clean_p, &clean_ctx.set.positions, 0, 1)?.value;
    let spec = third_flux(12).with_disorder(0.3, 2024);
    let stats = ensemble_average(&spec, 8, |r| {
        let ctx = ResponseContext::new(build_model_with_disorder(&spec, r.values.clone())?)?;
        let p = fermi_projection(&ctx.spectral, ef)?;
        Ok(2.0 * PI * kubo_streda(&ctx.alg, &ctx.spectral, &p, &ctx.set.positions, 0, 1)?.value)
    })?;
    Ok((
        (stats.mean - clean).abs() <= 0.05 && stats.failures.is_empty(),
        format!("mean {:.5} +- {:.1e} vs clean {clean:.5}", stats.mean, stats.stderr),
    ))
}

fn timed(name: &str, f: impl FnOnce() -> Check) -> CheckResult {
    let start = Instant::now();
    let (pass, detail) = match f() {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckResult { name: name.to_string(), pass, detail, secs: start.elapsed().as_secs_f64() }
}

pub fn run(level: Level, tamper: Option<Tamper>) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let start = Instant::now();
    match run_suite(7, 100, 8, 1e-10) {
        Ok(suite) => {
            let secs = start.elapsed().as_secs_f64() / suite.len() as f64;
            for s in suite {
                out.push(CheckResult {
                    name: format!("lp_{}", s.invariant.name()),
                    pass: s.failures == 0,
                    detail: format!("{} trials, {} failures, worst {:.1e}", s.trials, s.failures, s.worst),
                    secs,
                });
            }
        }
        Err(e) => out.push(CheckResult { name: "lp_suite".into(), pass: false, detail: e.to_string(), secs: 0.0 }),
    }
    let quick: [(&str, fn() -> Check); 13] = [
        ("spectral_reconstruction", spectral_reconstruction),
        ("magnetic_commutation", magnetic_commutation),
        ("disorder_covariance", disorder_covariance),
        ("bloch_spectrum", bloch_spectrum),
        ("chern_flux_third", chern_flux_third),
        ("equilibrium_no_current", equilibrium_no_current),
        ("current_identity", current_identity),
        ("isospectrality", isospectrality),
        ("unitarity_cocycle", unitarity_cocycle),
        ("duhamel", duhamel),
        ("zero_field_current", zero_field_current),
        ("kubo_streda_quantization", kubo_streda_quantization),
        ("trace_per_volume", trace_per_volume),
    ];
    out.push(timed("resolvent_identity", || resolvent_identity(tamper)));
    for (name, f) in quick {
        out.push(timed(name, f));
    }
    if level == Level::Full {
        let full: [(&str, fn() -> Check); 5] = [
            ("comparison_theorem", comparison_theorem),
            ("route_equivalence", route_equivalence),
            ("adiabatic_limit", adiabatic_limit),
            ("zero_temperature_ordering", zero_temperature_ordering),
            ("ensemble_robustness", ensemble_robustness),
        ];
        for (name, f) in full {
            out.push(timed(name, f));
        }
    }
    out
}
