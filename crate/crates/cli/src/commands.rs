//! One function per subcommand. Each returns its artifacts as in-memory
//! files so that `sweep` can reuse them per grid point.

use qpt_core::floquet::{band_structure, discriminant_with_derivative, measure_csv};
use qpt_core::operator::potential_csv;
use qpt_core::par::Execution;
use qpt_core::report::{fmt_real, Table, VerificationReport};
use qpt_core::transfer::{lyapunov_csv, lyapunov_exponent};
use qpt_core::transport::{abel_probabilities_floquet, abel_probabilities_resolvent, abel_probabilities_time, moments, Method};
use qpt_core::verify::{
    bandwidth_proposition_check, floquet_identity_suite, frozen_lower_bound_constants, gordon_diagnostic, gordon_random_audit,
    lower_bound_scan, lower_bound_time_for_window, theorem_demo, transport_consistency_suite,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Freq,
    Bands,
    Discriminant,
    Measure,
    Lyapunov,
    Transport,
    Moments,
    Verify,
    TheoremDemo,
    Sweep,
}

impl Command {
    pub fn name(self) -> String {
        serde_json::to_value(self).unwrap().as_str().unwrap().to_string()
    }
}

#[derive(Debug, Default)]
pub struct Output {
    /// (path relative to the output directory, contents)
    pub files: Vec<(String, String)>,
    pub summary: String,
    /// Violations or failed points; any makes the exit code 1.
    pub failures: usize,
}

impl Output {
    /// The first CSV artifact, or the first artifact of any kind.
    pub fn primary(&self) -> Option<&(String, String)> {
        self.files.iter().find(|(n, _)| n.ends_with(".csv")).or(self.files.first())
    }
}

fn pretty(v: &impl Serialize) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(|e| CliError::Numerical(e.to_string()))
}

pub fn run(cmd: Command, cfg: &RunConfig, exec: Execution) -> Result<Output, CliError> {
    match cmd {
        Command::Freq => freq(cfg),
        Command::Bands => bands(cfg),
        Command::Discriminant => discriminant(cfg),
        Command::Measure => measure(cfg),
        Command::Lyapunov => lyapunov(cfg, exec),
        Command::Transport => transport(cfg, exec),
        Command::Moments => moments_cmd(cfg, exec),
        Command::Verify => verify(cfg, exec),
        Command::TheoremDemo => demo(cfg, exec),
        Command::Sweep => Err(CliError::Usage("sweep cannot be nested".into())),
    }
}

fn freq(cfg: &RunConfig) -> Result<Output, CliError> {
    let f = cfg.frequency()?;
    let v = f.to_json();
    Ok(Output {
        files: vec![("freq.json".into(), pretty(&v)?)],
        summary: serde_json::to_string(&v).map_err(|e| CliError::Numerical(e.to_string()))?,
        failures: 0,
    })
}

fn bands(cfg: &RunConfig) -> Result<Output, CliError> {
    let m = cfg.periodic_model()?;
    let b = band_structure(&m, cfg.kappa_grid)?;
    let total: f64 = b.widths().iter().sum();
    let (lo, hi) = (b.bands[0].lo, b.bands[m.q() - 1].hi);
    Ok(Output {
        files: vec![("bands.csv".into(), b.to_csv()), ("potential.csv".into(), potential_csv(0, &m.v))],
        summary: format!(
            "bands: q = {}, {} bands in [{lo:.6}, {hi:.6}], total width {total:.6e}",
            m.q(),
            b.bands.len()
        ),
        failures: 0,
    })
}

fn discriminant(cfg: &RunConfig) -> Result<Output, CliError> {
    let m = cfg.periodic_model()?;
    let mut t = Table::new(&["E", "Delta", "Delta_prime"]);
    let mut inside = 0;
    for e in cfg.energies.grid()? {
        let (d, dd) = discriminant_with_derivative(&m, e);
        inside += usize::from(d.abs() <= 2.0);
        t.push(vec![e, d, dd]);
    }
    Ok(Output {
        summary: format!("discriminant: q = {}, {} energies, {inside} with |Delta| <= 2", m.q(), t.len()),
        files: vec![("discriminant.csv".into(), t.to_csv())],
        failures: 0,
    })
}

fn measure(cfg: &RunConfig) -> Result<Output, CliError> {
    let m = cfg.periodic_model()?;
    let csv = measure_csv(&m, cfg.kappa_grid)?;
    Ok(Output {
        summary: format!("measure: q = {}, {} kappa points, {} rows", m.q(), cfg.kappa_grid, csv.lines().count() - 1),
        files: vec![("measure.csv".into(), csv), ("potential.csv".into(), potential_csv(0, &m.v))],
        failures: 0,
    })
}

fn lyapunov(cfg: &RunConfig, exec: Execution) -> Result<Output, CliError> {
    let f = cfg.sampling_function()?;
    let freq = cfg.frequency()?;
    let alpha = cfg.rotation(&freq);
    let l = &cfg.lyapunov;
    let est = cfg
        .energies
        .grid()?
        .into_iter()
        .map(|e| lyapunov_exponent(&f, &alpha, e, l.n, l.samples, cfg.seed, exec))
        .collect::<Result<Vec<_>, _>>()?;
    let g: Vec<f64> = est.iter().map(|e| e.gamma_hat).collect();
    let (gmin, gmax) = g.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    Ok(Output {
        summary: format!("lyapunov: {} energies, n = {}, gamma_hat in [{gmin:.6}, {gmax:.6}]", est.len(), l.n),
        files: vec![("lyapunov.csv".into(), lyapunov_csv(&est))],
        failures: 0,
    })
}

fn transport(cfg: &RunConfig, exec: Execution) -> Result<Output, CliError> {
    let spec = &cfg.transport;
    if spec.n_max < 0 {
        return Err(CliError::Usage("n_max must be nonnegative".into()));
    }
    let ns: Vec<i64> = (-spec.n_max..=spec.n_max).collect();
    let mut ev = cfg.evolution.clone();
    ev.exec = exec;
    let r = match spec.method {
        Method::Time => abel_probabilities_time(&cfg.potential()?, &ns, spec.t, &ev)?,
        Method::Resolvent => abel_probabilities_resolvent(&cfg.potential()?, &ns, spec.t, &ev)?,
        Method::Floquet => abel_probabilities_floquet(&cfg.periodic_model()?, &ns, spec.t, &ev, spec.integral)?.result,
    };
    let total: f64 = r.probabilities.iter().map(|(_, p)| p).sum();
    let meta = json!({
        "method": r.method,
        "T": r.t_big,
        "n_trunc": r.n_trunc,
        "t_max": r.t_max,
        "mass_leak": r.mass_leak,
        "error_estimate": r.error_estimate,
        "evaluations": r.evaluations,
        "evolution": ev,
    });
    Ok(Output {
        summary: format!(
            "transport: {:?} route, T = {}, {} sites, sum P = {total:.6e}, mass leak {:.3e}",
            r.method,
            r.t_big,
            ns.len(),
            r.mass_leak
        ),
        files: vec![("transport.csv".into(), r.probabilities_csv()), ("transport.json".into(), pretty(&meta)?)],
        failures: 0,
    })
}

fn moments_cmd(cfg: &RunConfig, exec: Execution) -> Result<Output, CliError> {
    let spec = &cfg.moments;
    if spec.p.is_empty() {
        return Err(CliError::Usage("no moment orders given".into()));
    }
    let mut ev = cfg.evolution.clone();
    ev.exec = exec;
    let r = moments(&cfg.potential()?, spec.t, &spec.p, spec.variant, &ev)?;
    let mut csv = String::from("p,M_p\n");
    for (p, m) in &r.moments {
        csv.push_str(&format!("{},{}\n", fmt_real(*p), fmt_real(*m)));
    }
    let meta = json!({
        "T": r.t_big,
        "variant": spec.variant,
        "n_cut": r.n_cut,
        "n_trunc": r.n_trunc,
        "discarded_tail": r.discarded_tail,
        "evolution": ev,
    });
    let listed: Vec<String> = r.moments.iter().map(|(p, m)| format!("M_{p} = {m:.6e}")).collect();
    Ok(Output {
        summary: format!("moments: T = {}, {}", r.t_big, listed.join(", ")),
        files: vec![("moments.csv".into(), csv), ("moments.json".into(), pretty(&meta)?)],
        failures: 0,
    })
}

fn report_output(report: VerificationReport) -> Result<Output, CliError> {
    let worst = if report.worst_margin.is_finite() {
        format!("{:.3e}", report.worst_margin)
    } else {
        "n/a".into()
    };
    Ok(Output {
        summary: format!(
            "verify {}: {} instances, {} violations, worst margin {worst}",
            report.check_id, report.instances, report.violations
        ),
        files: vec![
            (format!("{}.json", report.check_id), pretty(&report.to_json())?),
            (format!("{}.csv", report.check_id), report.artifacts.to_csv()),
        ],
        failures: report.violations,
    })
}

fn verify(cfg: &RunConfig, exec: Execution) -> Result<Output, CliError> {
    let v = &cfg.verify;
    let suite = v
        .suite
        .as_deref()
        .ok_or_else(|| CliError::Usage("verify needs a suite (floquet, transport, lower-bound, bandwidth, gordon, gordon-random)".into()))?;
    let mut ev = cfg.evolution.clone();
    ev.exec = exec;
    let mut report = match suite {
        "floquet" => {
            let mut ens = v.floquet.clone();
            if let Some(s) = cfg.seed {
                ens.seed = s;
            }
            floquet_identity_suite(&ens, &v.floquet_tolerances, exec)?
        }
        "transport" => transport_consistency_suite(&v.transport, &ev)?,
        "lower-bound" => lower_bound(cfg, &ev)?,
        "bandwidth" => {
            let freq = cfg.frequency()?;
            let depths = if v.bandwidth_depths.is_empty() {
                (2..=freq.depth().min(8)).collect()
            } else {
                v.bandwidth_depths.clone()
            };
            bandwidth_proposition_check(&cfg.sampling_function()?, &freq, &depths, &cfg.lyapunov, exec)?
        }
        "gordon" => {
            let g = &v.gordon;
            gordon_diagnostic(&cfg.sampling_function()?, &cfg.frequency()?, g.energy, &g.depths, cfg.theta, g.expect_decrease)?
        }
        "gordon-random" => gordon_random_audit(v.gordon.trials, cfg.seed.unwrap_or(1))?,
        other => return Err(CliError::Usage(format!("unknown verify suite `{other}`"))),
    };
    report.config_snapshot = serde_json::to_value(v).map_err(|e| CliError::Numerical(e.to_string()))?;
    report_output(report)
}

fn lower_bound(cfg: &RunConfig, ev: &qpt_core::transport::EvolutionConfig) -> Result<VerificationReport, CliError> {
    let spec = &cfg.verify.lower_bound;
    let m = cfg.periodic_model()?;
    let b = band_structure(&m, 65)?;
    let lo = spec.lo.unwrap_or(b.bands[0].lo);
    let hi = spec.hi.unwrap_or(b.bands[m.q() - 1].hi);
    let k = frozen_lower_bound_constants();
    let t = match spec.t {
        Some(t) => t,
        None => lower_bound_time_for_window(&m, lo, hi, &k, spec.n_target)?,
    };
    let scan = lower_bound_scan(&m, lo, hi, t, &k, spec.max_points, ev)?;
    let mut report = VerificationReport::new("lower_bound", &["n", "P", "rhs"])
        .tolerance("c", k.c)
        .tolerance("c1", k.c1)
        .tolerance("C", k.big_c);
    for &(n, p, rhs) in &scan.points {
        report.record("lower_bound", p - rhs);
        report.artifacts.push(vec![n as f64, p, rhs]);
    }
    report.note(format!(
        "q = {}, band {}, eta = {:e}, ell = {:e}, T = {}, window n in [{}, {}]",
        scan.q, scan.j, scan.eta, scan.ell, scan.t_big, scan.n_lo, scan.n_hi
    ));
    Ok(report)
}

fn demo(cfg: &RunConfig, exec: Execution) -> Result<Output, CliError> {
    let mut tc = cfg.theorem.clone();
    tc.evolution.exec = exec;
    if let Some(l) = &cfg.liouville {
        tc.beta = l.beta;
        tc.q1 = l.q1;
        tc.depth = l.depth;
    }
    let d = theorem_demo(&cfg.sampling_function()?, &tc)?;
    let failed = d.rows.iter().filter(|r| !r.passed).count();
    Ok(Output {
        summary: format!(
            "theorem-demo: gamma0 = {:.6}, {} rows evaluated, {failed} below target, {} checking times infeasible",
            d.gamma0,
            d.rows.len(),
            d.infeasible.len()
        ),
        files: vec![("theorem_demo.csv".into(), d.to_csv()), ("theorem_demo.json".into(), pretty(&d)?)],
        failures: failed,
    })
}
