//! Acceptance criteria. Every criterion prints one PASS/FAIL line; the
//! binary exits nonzero if any criterion fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use linresp::dynamics::{duhamel_residual, perturbed_hamiltonian, propagate, Modulation, PerturbationProfile};
use linresp::ensemble::{covariance_check, ensemble_average};
use linresp::invariants::{laplace_quadrature, random_laplace_triple, run_suite};
use linresp::lattice::{
    bloch_reduce, build_model, build_model_with_disorder, chern_number, fermi_dirac_state, fermi_projection,
    DisplacementConvention, ModelSpec, DEFAULT_CHERN_GRID,
};
use linresp::ncalg::{adjoint, hermitian_eigh, identity, max_abs, spectral_decompose, Operator};
use linresp::response::*;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn max_abs_real(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn gap_projection(ctx: &ResponseContext, filled: usize) -> (Operator, f64, f64) {
    let e = &ctx.spectral.eigenvalues;
    let ef = 0.5 * (e[filled - 1] + e[filled]);
    (fermi_projection(&ctx.spectral, ef).unwrap(), ef, e[filled] - e[filled - 1])
}

fn criterion_1() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (l, tol) in [(12usize, 0.05), (24, 0.02)] {
        let start = Instant::now();
        let spec = ModelSpec::clean(l, l, 1, 3);
        let ctx = ResponseContext::new(build_model(&spec).unwrap()).unwrap();
        let family = bloch_reduce(&spec).unwrap();
        let n = spec.dim();
        for bands in [1usize, 2] {
            let (p, _, _) = gap_projection(&ctx, bands * n / 3);
            let value = 2.0 * PI * kubo_streda(&ctx.alg, &ctx.spectral, &p, &ctx.set.positions, 0, 1).unwrap().value;
            let chern = chern_number(&family, bands, DEFAULT_CHERN_GRID).unwrap() as f64;
            pass &= (value - chern).abs() <= tol;
            parts.push(format!("L={l} gap {bands}: {value:.5} vs {chern}"));
        }
        let secs = start.elapsed().as_secs_f64();
        pass &= secs <= 60.0;
        parts.push(format!("L={l} {secs:.1}s"));
    }
    Outcome { pass, detail: parts.join(", ") }
}

fn desk_model() -> (ResponseContext, Operator) {
    let spec = ModelSpec::clean(8, 8, 1, 4).with_displacement(DisplacementConvention::OpenPositions);
    let ctx = ResponseContext::new(build_model(&spec).unwrap()).unwrap();
    let (p, _, _) = gap_projection(&ctx, 16);
    (ctx, p)
}

fn criterion_2() -> Outcome {
    let (ctx, p) = desk_model();
    let prof = PerturbationProfile::constant(0.5, vec![0.05, 0.0]);
    let residual = |dt: f64| {
        let opts = NumericsOptions { dt, ..Default::default() };
        full_state_expansion(&ctx, &prof, &p, 1.0, &opts).unwrap().expansion_residual(&ctx.alg, &prof.field).unwrap()
    };
    let r1 = residual(1e-3);
    let r2 = residual(5e-4);
    Outcome {
        pass: r1 <= 1e-5 && r1 >= 3.0 * r2,
        detail: format!("residual {r1:.3e} at dt=1e-3, {r2:.3e} at dt=5e-4 (ratio {:.2})", r1 / r2),
    }
}

fn criterion_3() -> Outcome {
    let (ctx, p) = desk_model();
    let prof = PerturbationProfile::constant(0.5, vec![0.05, 0.0]);
    let opts = NumericsOptions::default();
    let kubo_opts = NumericsOptions { tail_tol: 1e-12, ..opts };
    let kubo = conductivity_kubo(&ctx, &prof, &p, 1.0, &kubo_opts).unwrap().sigma;
    let fd = conductivity_fd(&ctx, &prof, &p, 1.0, &opts).unwrap().sigma;
    let res = conductivity_resolvent(&ctx, &prof, &p, 1.0).unwrap();
    let mut fd_ok = true;
    let mut fd_worst: f64 = 0.0;
    for (a, b) in fd.iter().zip(kubo.iter()) {
        let d = (a - b).abs();
        fd_worst = fd_worst.max(d);
        fd_ok &= d <= 1e-3 * b.abs().max(1.0);
    }
    let kr = max_abs_real(&(&kubo - &res));
    Outcome {
        pass: fd_ok && kr <= 1e-8,
        detail: format!("sigma_11={:.6}, |fd-kubo|={fd_worst:.2e}, |kubo-resolvent|={kr:.2e}", kubo[[0, 0]]),
    }
}

fn criterion_4() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let (h, a, eps) = random_laplace_triple(400 + seed, 8);
        let quad = laplace_quadrature(&h, &a, eps).unwrap();
        let s = spectral_decompose(&Operator::hermitian(h).unwrap()).unwrap();
        let closed = s.liouvillian_resolvent(eps, 0.0, &Operator::new(a).unwrap()).unwrap();
        worst = worst.max(max_abs(&(closed.entries() - &quad)));
    }
    Outcome { pass: worst <= 1e-8, detail: format!("20 triples, worst entry difference {worst:.2e}") }
}

fn hall_setup() -> (ResponseContext, Operator, f64, f64) {
    let spec = ModelSpec::clean(12, 12, 1, 3);
    let ctx = ResponseContext::new(build_model(&spec).unwrap()).unwrap();
    let (p, ef, gap) = gap_projection(&ctx, 48);
    (ctx, p, ef, gap)
}

const EPS_GRID: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

fn criterion_5() -> Outcome {
    let (ctx, p, _, _) = hall_setup();
    let prof = PerturbationProfile::constant(0.1, vec![0.0, 0.0]);
    let t = 1.0;
    let mut deltas = Vec::new();
    let mut pts = [Vec::new(), Vec::new()];
    for eps in EPS_GRID {
        let q = prof.with_eps(eps);
        let tilde = conductivity_tilde(&ctx, &q, &p, t).unwrap();
        let full = conductivity_resolvent(&ctx, &q, &p, t).unwrap();
        deltas.push(max_abs_real(&(&full - &tilde)));
        pts[0].push((eps, tilde[[0, 1]]));
        pts[1].push((eps, tilde[[1, 0]]));
    }
    let decreasing = deltas.windows(2).all(|w| w[1] < w[0]);
    let mut pass = decreasing;
    let mut parts = vec![format!("delta {:.2e} -> {:.2e}", deltas[0], deltas[3])];
    for (idx, (k, j)) in [(0usize, 1usize), (1, 0)].into_iter().enumerate() {
        let limit = extrapolate_to_zero(&pts[idx]);
        let ad = adiabatic_entry(&ctx, &p, k, j).unwrap();
        let st = kubo_streda(&ctx.alg, &ctx.spectral, &p, &ctx.set.positions, k, j).unwrap().value;
        pass &= (limit - ad).abs() <= 1e-2 && (ad - st).abs() <= 1e-2;
        parts.push(format!("({k},{j}) limit {limit:.5} adiabatic {ad:.5} streda {st:.5}"));
    }
    Outcome { pass, detail: parts.join(", ") }
}

fn criterion_6() -> Outcome {
    let spec = ModelSpec::clean(8, 8, 1, 4)
        .with_disorder(0.5, 6)
        .with_displacement(DisplacementConvention::OpenPositions);
    let set = build_model(&spec).unwrap();
    let prof = PerturbationProfile::with_modulation(0.5, vec![0.05, 0.03], Modulation::FourierCosine { omega0: 0.7 });
    let e0 = spectral_decompose(&set.h).unwrap().eigenvalues;
    let mut iso: f64 = 0.0;
    for t in [-3.0, -0.5, 0.0, 1.0, 2.5] {
        let ht = perturbed_hamiltonian(&set, &prof, t).unwrap();
        let (et, _) = hermitian_eigh(ht.entries()).unwrap();
        iso = iso.max(et.iter().zip(e0.iter()).fold(0.0, |m, (a, b)| m.max((a - b).abs())));
    }
    let r = propagate(&set, &prof, -2.0, 1.0, 1e-3).unwrap();
    let u = r.u.entries();
    let unitarity = max_abs(&(adjoint(u).dot(u) - identity(spec.dim())));
    let d1 = duhamel_residual(&set, &prof, 1.0, -1.0, 1e-3).unwrap();
    let d2 = duhamel_residual(&set, &prof, 1.0, -1.0, 2e-3).unwrap();
    let order = (d2 / d1).log2();
    let pass = iso <= 1e-9 && unitarity <= 1e-9 && r.cocycle_residual <= 1e-6 && d1 <= 1e-5 && order >= 1.8;
    Outcome {
        pass,
        detail: format!(
            "isospectral {iso:.1e}, unitarity {unitarity:.1e}, cocycle {:.1e}, duhamel {d1:.2e} (order {order:.2})",
            r.cocycle_residual
        ),
    }
}

fn criterion_7() -> Outcome {
    let suite = run_suite(2024, 200, 8, 1e-10).unwrap();
    let failures: usize = suite.iter().map(|s| s.failures).sum();
    let worst = suite.iter().map(|s| s.worst).fold(0.0, f64::max);
    Outcome {
        pass: failures == 0,
        detail: format!("{} invariants x 200 trials, {failures} failures, worst {worst:.1e}", suite.len()),
    }
}

fn criterion_8() -> Outcome {
    let spec = ModelSpec::clean(6, 6, 1, 3)
        .with_disorder(1.0, 8)
        .with_displacement(DisplacementConvention::OpenPositions);
    let ctx = ResponseContext::new(build_model(&spec).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut no_go: f64 = 0.0;
    let mut identity_res: f64 = 0.0;
    let h = ctx.set.h.entries();
    for _ in 0..10 {
        let c: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = ctx.spectral.apply_function(|e| c[0] * e.sin() + c[1] * (2.0 * e).cos() + c[2] / (1.0 + e * e) + c[3]);
        for k in 0..2 {
            let j = &ctx.currents[k];
            no_go = no_go.max(ctx.alg.trace_product(j.entries(), f.entries()).unwrap().norm());
            let lhs = h.dot(&ctx.set.derive(k, f.entries()));
            let rhs = j.entries().dot(f.entries()) + ctx.set.derive(k, &h.dot(f.entries()));
            identity_res = identity_res.max(max_abs(&(lhs - rhs)));
        }
    }
    let rho = fermi_dirac_state(&ctx.spectral, 2.0, 0.0).unwrap();
    let zero = PerturbationProfile::constant(0.5, vec![0.0, 0.0]);
    let opts = NumericsOptions { dt: 1e-2, ..Default::default() };
    let currents = net_currents(&ctx, &zero, &rho, 0.7, &opts).unwrap();
    let net = currents.iter().fold(0.0f64, |m, c| m.max(c.value.abs()).max(c.dual_form.abs()));
    Outcome {
        pass: no_go <= 1e-11 && identity_res <= 1e-11 && net <= 1e-11,
        detail: format!("T(J f(H)) {no_go:.1e}, H d(rho) identity {identity_res:.1e}, net current at zero field {net:.1e}"),
    }
}

fn criterion_9() -> Outcome {
    let (ctx, p, ef, gap) = hall_setup();
    let beta = 400.0 / gap;
    let rho = fermi_dirac_state(&ctx.spectral, beta, ef).unwrap();
    let prof = PerturbationProfile::constant(0.1, vec![0.0, 0.0]);
    let mut worst: f64 = 0.0;
    let mut pts = Vec::new();
    for eps in EPS_GRID {
        let q = prof.with_eps(eps);
        let a = conductivity_resolvent(&ctx, &q, &rho, 0.0).unwrap();
        let b = conductivity_resolvent(&ctx, &q, &p, 0.0).unwrap();
        worst = worst.max(max_abs_real(&(&a - &b)));
        pts.push((eps, a[[0, 1]]));
    }
    let table = zero_temperature_sweep(&ctx, &prof, ef, &[1.0 / gap, 10.0 / gap, 100.0 / gap, beta], 0.0, &NumericsOptions::default()).unwrap();
    let limit = extrapolate_to_zero(&pts);
    let st = kubo_streda(&ctx.alg, &ctx.spectral, &p, &ctx.set.positions, 0, 1).unwrap().value;
    Outcome {
        pass: worst <= 1e-4 && (limit - st).abs() <= 1e-2 && table.monotone,
        detail: format!("|sigma(rho_beta)-sigma(P)| {worst:.1e} at beta=400/gap, beta->inf then eps->0 {limit:.5} vs streda {st:.5}"),
    }
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let clean = ModelSpec::clean(12, 12, 1, 3);
    let clean_ctx = ResponseContext::new(build_model(&clean).unwrap()).unwrap();
    let (clean_p, ef, _) = gap_projection(&clean_ctx, 48);
    let clean_value =
        2.0 * PI * kubo_streda(&clean_ctx.alg, &clean_ctx.spectral, &clean_p, &clean_ctx.set.positions, 0, 1).unwrap().value;
    let spec = clean.with_disorder(0.3, 2024);
    let mut worst_cov: f64 = 0.0;
    let stats = ensemble_average(&spec, 20, |r| {
        for shift in [(1, 0), (0, 1), (3, 5), (11, 7)] {
            worst_cov = worst_cov.max(covariance_check(&spec, r, shift)?);
        }
        let ctx = ResponseContext::new(build_model_with_disorder(&spec, r.values.clone())?)?;
        let p = fermi_projection(&ctx.spectral, ef)?;
        Ok(2.0 * PI * kubo_streda(&ctx.alg, &ctx.spectral, &p, &ctx.set.positions, 0, 1)?.value)
    })
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: (stats.mean - clean_value).abs() <= 0.05 && stats.failures.is_empty() && worst_cov <= 1e-11 && secs <= 600.0,
        detail: format!(
            "mean {:.5} +- {:.1e} vs clean {clean_value:.5}, covariance {worst_cov:.1e}, {secs:.1}s",
            stats.mean, stats.stderr
        ),
    }
}

fn main() -> std::process::ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 Kubo-Streda quantization", criterion_1),
        ("2 comparison of dynamics", criterion_2),
        ("3 route equivalence", criterion_3),
        ("4 resolvent identity", criterion_4),
        ("5 adiabatic limit", criterion_5),
        ("6 dynamics invariants", criterion_6),
        ("7 L^p suite", criterion_7),
        ("8 equilibrium exactness", criterion_8),
        ("9 zero-temperature ordering", criterion_9),
        ("10 ensemble robustness", criterion_10),
    ];
    let mut failed = Vec::new();
    for (name, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|_| Outcome { pass: false, detail: "panicked".into() });
        println!("{} criterion {name}: {}", if outcome.pass { "PASS" } else { "FAIL" }, outcome.detail);
        if !outcome.pass {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        println!("all {} criteria passed", criteria.len());
        std::process::ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        std::process::ExitCode::FAILURE
    }
}
