//! Acceptance criteria, one line each. Runs without the libtest harness so
//! the lines are always printed.
//!
//! A criterion listed in `KNOWN_RED` is still evaluated and printed as FAIL
//! when it fails, but does not fail the run.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use qpt_core::arithmetic::{construct_liouville_frequency, continued_fraction_expansion};
use qpt_core::floquet::band_structure;
use qpt_core::linalg::Rows;
use qpt_core::operator::{FiniteOperator, PeriodicModel, Potential, Rotation, SamplingFunction};
use qpt_core::par::Execution;
use qpt_core::transfer::{lyapunov_exponent, transfer_product};
use qpt_core::transport::{evolve, EvolutionConfig, Propagator};
use qpt_core::verify::{
    ballistic_audit, bandwidth_proposition_check, calibrate_lower_bound, combes_thomas_audit, floquet_identity_suite,
    frozen_lower_bound_constants, gordon_random_audit, lower_bound_scan, lower_bound_time_for_window, route_agreement,
    theorem_demo, EnsembleSpec, FloquetTolerances, LyapunovSettings, TheoremDemoConfig, TransportSuiteSpec,
};
use qpt_core::report::VerificationReport;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria whose failure is analysed rather than fixed.
const KNOWN_RED: &[u32] = &[11];

struct Outcome {
    id: u32,
    passed: bool,
    detail: String,
    elapsed: Duration,
}

fn run(id: u32, budget: Option<Duration>, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (ok, mut detail) = f();
    let elapsed = start.elapsed();
    let mut passed = ok;
    if let Some(b) = budget {
        if elapsed > b {
            passed = false;
            detail.push_str(&format!("; over the {:.0} s budget", b.as_secs_f64()));
        }
    }
    let o = Outcome {
        id,
        passed,
        detail,
        elapsed,
    };
    println!(
        "criterion {:>2}: {} ({:.1} s) {}",
        o.id,
        if o.passed { "PASS" } else { "FAIL" },
        o.elapsed.as_secs_f64(),
        o.detail
    );
    o
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

fn violations(r: &VerificationReport, names: &[&str]) -> (usize, usize) {
    names
        .iter()
        .map(|n| (r.instances_of(n), r.violations_of(n)))
        .fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
}

/// J_n(x) by the trapezoid rule on the periodic integral representation.
fn bessel_j(n: i64, x: f64) -> f64 {
    let m = 512;
    (0..m)
        .map(|k| {
            let tau = 2.0 * PI * k as f64 / m as f64;
            (n as f64 * tau - x * tau.sin()).cos()
        })
        .sum::<f64>()
        / m as f64
}

fn golden() -> qpt_core::arithmetic::Frequency {
    continued_fraction_expansion((5f64.sqrt() - 1.0) / 2.0, 30).unwrap()
}

fn main() {
    let exec = Execution::default();
    let mut outcomes = Vec::new();

    // 1: determinant identity.
    let ensemble = EnsembleSpec {
        trials: 100,
        q_min: 2,
        q_max: 12,
        seed: 2024,
        ..EnsembleSpec::default()
    };
    let tol = FloquetTolerances::default();
    let mut suite12: Option<VerificationReport> = None;
    outcomes.push(run(1, secs(10), || {
        let det_only = FloquetTolerances { kappa_points: 0, ..tol.clone() };
        let r = floquet_identity_suite(&ensemble, &det_only, exec).unwrap();
        let (n, v) = violations(&r, &["determinant"]);
        (v == 0 && n >= 100, format!("{v} violations in {n} (kappa, E) draws over 100 models, q <= 12, tol 1e-8"))
    }));

    // 2: derivative identity against differences.
    outcomes.push(run(2, secs(30), || {
        let e = EnsembleSpec { q_max: 10, ..ensemble.clone() };
        let r = floquet_identity_suite(&e, &tol, exec).unwrap();
        let (n, v) = violations(&r, &["derivative_identity", "derivative_sign"]);
        (v == 0 && n > 0, format!("{v} violations in {n} checks, q <= 10, rel tol 1e-4"))
    }));

    // 3: Last-type estimates with explicit constants.
    outcomes.push(run(3, secs(60), || {
        let r = floquet_identity_suite(&ensemble, &tol, exec).unwrap();
        let names = ["last_lower", "last_upper", "derivative_sandwich", "phi_derivative_bound", "chebyshev_witness"];
        let (n, v) = violations(&r, &names);
        let detail = format!("{v} violations in {n} checks over 100 models x 32 kappa points");
        suite12 = Some(r);
        (v == 0 && n > 0, detail)
    }));

    // 4: three routes.
    outcomes.push(run(4, secs(600), || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = TransportSuiteSpec {
            max_site: 60,
            rel_tol: 1e-3,
            abs_floor: 1e-9,
            resolvent: true,
            ..TransportSuiteSpec::default()
        };
        let cfg = EvolutionConfig::default();
        let mut report = VerificationReport::new("routes", &["q", "T", "n", "P_time", "P_floquet", "P_resolvent"]);
        for q in 2..=10 {
            let v: Vec<f64> = (0..q).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let m = PeriodicModel::from_potential(v).unwrap();
            for t in [5.0, 20.0, 50.0] {
                route_agreement(&m, t, &spec, &cfg, &mut report).unwrap();
            }
        }
        let (n, v) = violations(&report, &["time_vs_floquet", "resolvent_vs_time", "resolvent_vs_floquet"]);
        (
            v == 0,
            format!("{v} disagreements above 1e-3 (relative, 1e-9 absolute floor) in {n} comparisons; worst margin {:.3e}", report.worst_margin),
        )
    }));

    // 5: conservation.
    outcomes.push(run(5, None, || {
        let r = suite12.as_ref().unwrap();
        let (n_phi, v_phi) = violations(r, &["phi_sum"]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let diag: Vec<f64> = (0..201).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let h = FiniteOperator::from_diagonal(diag).unwrap();
        let mut psi = vec![Complex64::new(0.0, 0.0); h.dim()];
        psi[100] = Complex64::new(1.0, 0.0);
        let mut worst_u = 0.0f64;
        for t in [0.5, 5.0, 50.0, 500.0] {
            let out = evolve(&h, t, &psi).unwrap();
            worst_u = worst_u.max((out.iter().map(|z| z.norm_sqr()).sum::<f64>() - 1.0).abs());
        }
        let mut worst_d = 0.0f64;
        let amo = Potential::Quasi {
            f: SamplingFunction::amo(2.0),
            alpha: Rotation::Real(golden().value()),
            theta: 0.3,
        };
        for e in [-3.0, 0.0, 0.7, 5.0] {
            let p = transfer_product(&amo, e, 0, 99_999, false).unwrap();
            worst_d = worst_d.max((p.det_sign() * p.log_det().exp() - 1.0).abs());
        }
        (
            v_phi == 0 && worst_u < 1e-8 && worst_d < 1e-10,
            format!("phi sum: {v_phi}/{n_phi} off by 1e-10; unitarity error {worst_u:.2e}; |det - 1| = {worst_d:.2e} at length 1e5"),
        )
    }));

    // 6: four-block bound.
    outcomes.push(run(6, secs(5), || {
        let r = gordon_random_audit(10_000, 6).unwrap();
        (r.passed(), format!("{} violations in {} random (A, u); min statistic - 1/2 = {:.3e}", r.violations, r.instances, r.worst_margin))
    }));

    // 7: Lyapunov oracles.
    outcomes.push(run(7, secs(120), || {
        let free = lyapunov_exponent(&SamplingFunction::Zero, &Rotation::Real(0.5), 3.0, 20_000, 1, None, exec).unwrap();
        let exact = ((3.0 + 5f64.sqrt()) / 2.0).ln();
        let rel_free = (free.gamma_hat - exact).abs() / exact;
        let g = golden();
        let (p, q) = g.convergent(10).unwrap();
        let model = PeriodicModel::new(&SamplingFunction::amo(2.0), p.try_into().unwrap(), q.try_into().unwrap(), 0.0).unwrap();
        let bands = band_structure(&model, 2).unwrap();
        let e = bands.bands[q.to_string().parse::<usize>().unwrap() / 2].center();
        let amo = lyapunov_exponent(&SamplingFunction::amo(2.0), &Rotation::Real(g.value()), e, 100_000, 8, None, exec).unwrap();
        let rel_amo = (amo.gamma_hat - 2f64.ln()).abs() / 2f64.ln();
        (
            rel_free < 0.01 && rel_amo < 0.05,
            format!("V=0, E=3: {:.6} vs {exact:.6} (rel {rel_free:.1e}); AMO lambda=2 at E={e:.4}: {:.6} vs log 2 (rel {rel_amo:.1e})", free.gamma_hat, amo.gamma_hat),
        )
    }));

    // 8: Bessel oracle.
    outcomes.push(run(8, secs(30), || {
        let free = Potential::Periodic(PeriodicModel::from_potential(vec![0.0]).unwrap());
        let h = FiniteOperator::new(&free, 200);
        let sites = (-20..=20).map(|n| h.index(n).unwrap()).collect();
        let prop = Propagator::new(h, Rows::Sites(sites), exec).unwrap();
        let mut worst = 0.0f64;
        for k in 0..=40 {
            let t = 0.25 * k as f64;
            for n in -20i64..=20 {
                let a = prop.matrix_element(n, 0, t).unwrap().norm();
                worst = worst.max((a - bessel_j(n, 2.0 * t).abs()).abs());
            }
        }
        (worst < 1e-6, format!("max ||a(n,t)| - |J_n(2t)|| = {worst:.2e} for |n| <= 20, t <= 10, N = 200"))
    }));

    // 9: Combes–Thomas and ballistic envelopes.
    outcomes.push(run(9, None, || {
        let mut report = VerificationReport::new("envelopes", &["x"]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut pots = vec![
            Potential::Periodic(PeriodicModel::from_potential(vec![0.0]).unwrap()),
            Potential::Periodic(PeriodicModel::from_potential(vec![1.0, -1.0]).unwrap()),
            Potential::Quasi {
                f: SamplingFunction::amo(2.0),
                alpha: Rotation::Real(golden().value()),
                theta: 0.1,
            },
        ];
        pots.push(Potential::Periodic(PeriodicModel::from_potential((0..5).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap()));
        combes_thomas_audit(&pots, &mut report).unwrap();
        ballistic_audit(&pots, &[0.5, 2.0, 5.0], &mut report).unwrap();
        let (n, v) = violations(&report, &["combes_thomas", "ct_slope", "ballistic", "ballistic_slope"]);
        (v == 0, format!("{v} violations in {n} envelope checks; {}", report.notes.join("; ")))
    }));

    // 10: periodic lower bound with frozen constants.
    outcomes.push(run(10, secs(900), || {
        let frozen = frozen_lower_bound_constants();
        let cfg = EvolutionConfig::default();
        let fresh = calibrate_lower_bound(&cfg).unwrap();
        let reproduces = (fresh.c - frozen.c).abs() < 1e-9 * frozen.c && (fresh.c1 - frozen.c1).abs() < 1e-9 * frozen.c1;
        let g = golden();
        let mut ok = reproduces;
        let mut parts = vec![format!("calibration reproduces frozen constants: {reproduces}")];
        for m in [3usize, 4, 5, 6] {
            let (p, q) = g.convergent(m).unwrap();
            let model = PeriodicModel::new(&SamplingFunction::amo(2.0), p.try_into().unwrap(), q.try_into().unwrap(), 0.0).unwrap();
            let bands = band_structure(&model, 2).unwrap();
            let (lo, hi) = (bands.bands[0].lo, bands.bands[bands.bands.len() - 1].hi);
            let t = lower_bound_time_for_window(&model, lo, hi, &frozen, 16.0).unwrap();
            let s = lower_bound_scan(&model, lo, hi, t, &frozen, 64, &cfg).unwrap();
            ok &= s.satisfied_fraction >= 0.9;
            parts.push(format!("q={} T={:.3e}: {:.0}% of {} n", s.q, t, 100.0 * s.satisfied_fraction, s.points.len()));
        }
        (ok, parts.join("; "))
    }));

    // 11: bandwidth trend.
    outcomes.push(run(11, secs(600), || {
        let r = bandwidth_proposition_check(&SamplingFunction::amo(2.0), &golden(), &[6, 7, 8], &LyapunovSettings { n: 20_000, samples: 16 }, exec).unwrap();
        let (_, v) = violations(&r, &["trend", "floor"]);
        (v == 0, format!("min over bands of log(l_j)/q + gamma: {}", r.notes.join("; ")))
    }));

    // 12: theorem demonstration.
    outcomes.push(run(12, secs(1800), || {
        let cfg = TheoremDemoConfig {
            lyapunov: LyapunovSettings { n: 4000, samples: 16 },
            ..TheoremDemoConfig::default()
        };
        let demo = theorem_demo(&SamplingFunction::amo(1.05), &cfg).unwrap();
        let needed = 3.0 * (demo.gamma0 + 2.0 * cfg.eps_prime) / cfg.delta;
        let rows: Vec<String> = demo
            .rows
            .iter()
            .map(|r| format!("k={} T={:.4} p={}: min_theta M_p = {:.4e} vs {:.4e}", r.k, r.t_big, r.p, r.min_theta_moment, r.target))
            .collect();
        let ok = needed < cfg.beta && demo.first_k_passed() && !demo.infeasible.is_empty();
        let _ = construct_liouville_frequency(cfg.beta, cfg.q1, cfg.depth + 1).err();
        (
            ok,
            format!(
                "gamma0 = {:.4}, 3(gamma0+2eps')/delta = {needed:.3} < 2; {}; infeasible: {}",
                demo.gamma0,
                rows.join(", "),
                demo.infeasible.iter().map(|(k, r)| format!("k={k}: {r}")).collect::<Vec<_>>().join("; ")
            ),
        )
    }));

    let unexpected: Vec<u32> = outcomes
        .iter()
        .filter(|o| !o.passed && !KNOWN_RED.contains(&o.id))
        .map(|o| o.id)
        .collect();
    let red: Vec<u32> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    println!("acceptance: {} of {} criteria pass; failing: {red:?}", outcomes.len() - red.len(), outcomes.len());
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
