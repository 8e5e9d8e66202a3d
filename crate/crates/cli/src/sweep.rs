//! Cartesian grid over (lambda, theta, E, T, depth). Points run on the worker
//! pool; artifacts are assembled afterwards in grid order.

use std::collections::BTreeMap;

use qpt_core::par::{self, Execution};
use qpt_core::report::fmt_real;

use crate::commands::{self, Command, Output};
use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Clone)]
pub struct Point {
    pub lambda: f64,
    pub theta: f64,
    pub energy: Option<f64>,
    pub t: Option<f64>,
    pub depth: Option<usize>,
}

impl Point {
    fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        c.sampling.lambda = self.lambda;
        c.theta = self.theta;
        if let Some(e) = self.energy {
            c.energies.values = vec![e];
            c.verify.gordon.energy = e;
        }
        if let Some(t) = self.t {
            c.transport.t = t;
            c.moments.t = t;
        }
        c.depth = self.depth;
        c
    }

    fn cells(&self) -> [String; 5] {
        let opt = |x: Option<f64>| x.map(fmt_real).unwrap_or_default();
        [
            fmt_real(self.lambda),
            fmt_real(self.theta),
            opt(self.energy),
            opt(self.t),
            self.depth.map(|d| d.to_string()).unwrap_or_default(),
        ]
    }

    /// Everything except θ, for grouping the θ-minimum.
    fn key_without_theta(&self) -> [String; 4] {
        let [l, _, e, t, d] = self.cells();
        [l, e, t, d]
    }
}

/// Points in row-major order: lambda slowest, depth fastest.
pub fn grid(cfg: &RunConfig) -> Result<Vec<Point>, CliError> {
    let s = &cfg.sweep;
    let thetas: Vec<f64> = if s.theta_grid > 0 {
        (0..s.theta_grid).map(|k| k as f64 / s.theta_grid as f64).collect()
    } else {
        s.theta.clone()
    };
    if s.lambda.is_empty() && thetas.is_empty() && s.energy.is_empty() && s.t.is_empty() && s.depth.is_empty() {
        return Err(CliError::Usage("sweep grid is empty: give at least one of lambda, theta, theta_grid, energy, t, depth".into()));
    }
    let or = |v: &[f64], d: f64| if v.is_empty() { vec![d] } else { v.to_vec() };
    let lambdas = or(&s.lambda, cfg.sampling.lambda);
    let thetas = or(&thetas, cfg.theta);
    let energies: Vec<Option<f64>> = if s.energy.is_empty() { vec![None] } else { s.energy.iter().map(|&e| Some(e)).collect() };
    let ts: Vec<Option<f64>> = if s.t.is_empty() { vec![None] } else { s.t.iter().map(|&t| Some(t)).collect() };
    let depths: Vec<Option<usize>> = if s.depth.is_empty() { vec![cfg.depth] } else { s.depth.iter().map(|&d| Some(d)).collect() };
    let mut out = Vec::new();
    for &lambda in &lambdas {
        for &theta in &thetas {
            for &energy in &energies {
                for &t in &ts {
                    for &depth in &depths {
                        out.push(Point { lambda, theta, energy, t, depth });
                    }
                }
            }
        }
    }
    Ok(out)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn run(cfg: &RunConfig, exec: Execution) -> Result<Output, CliError> {
    let cmd_name = cfg
        .sweep
        .command
        .as_deref()
        .ok_or_else(|| CliError::Usage("sweep needs sweep.command".into()))?;
    let cmd: Command = serde_json::from_value(serde_json::Value::String(cmd_name.into()))
        .map_err(|_| CliError::Usage(format!("unknown sweep command `{cmd_name}`")))?;
    if cmd == Command::Sweep {
        return Err(CliError::Usage("sweep cannot be nested".into()));
    }
    let points = grid(cfg)?;
    let results = par::map(exec, &points, |p| commands::run(cmd, &p.apply(cfg), Execution::Sequential));

    let mut files = Vec::new();
    let mut index = String::from("point,lambda,theta,E,T,depth,status,file,message\n");
    let mut failed = 0;
    for (i, (p, r)) in points.iter().zip(&results).enumerate() {
        let cells = p.cells().join(",");
        match r {
            Ok(o) => {
                let (name, body) = o.primary().ok_or_else(|| CliError::Numerical("point produced no artifact".into()))?;
                let ext = name.rsplit('.').next().unwrap_or("csv");
                let file = format!("points/point_{i:04}.{ext}");
                let status = if o.failures == 0 { "ok" } else { "violations" };
                failed += usize::from(o.failures > 0);
                index.push_str(&format!("{i},{cells},{status},{file},{}\n", csv_field(&o.summary)));
                files.push((file, body.clone()));
            }
            Err(e) => {
                failed += 1;
                index.push_str(&format!("{i},{cells},failed,,{}\n", csv_field(&e.to_string())));
            }
        }
    }
    files.push(("index.csv".into(), index));
    if cmd == Command::Moments {
        files.push(("aggregate.csv".into(), moments_aggregate(&points, &results)?));
    }
    Ok(Output {
        summary: format!("sweep {}: {} points, {failed} failed", cmd.name(), points.len()),
        files,
        failures: failed,
    })
}

fn parse_moments(o: &Output) -> Result<Vec<(f64, f64)>, CliError> {
    let bad = || CliError::Numerical("unreadable moments artifact".into());
    let (_, csv) = o.primary().ok_or_else(bad)?;
    csv.lines()
        .skip(1)
        .map(|l| {
            let (p, m) = l.split_once(',').ok_or_else(bad)?;
            Ok((p.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?))
        })
        .collect()
}

/// One row per point with M_p and min over θ of M_p among points that agree
/// on every other axis.
fn moments_aggregate(points: &[Point], results: &[Result<Output, CliError>]) -> Result<String, CliError> {
    let rows: Vec<Option<Vec<(f64, f64)>>> = results
        .iter()
        .map(|r| r.as_ref().ok().map(parse_moments).transpose())
        .collect::<Result<_, _>>()?;
    let ps: Vec<f64> = rows.iter().flatten().next().map(|r| r.iter().map(|x| x.0).collect()).unwrap_or_default();
    let mut minima: BTreeMap<[String; 4], Vec<f64>> = BTreeMap::new();
    for (p, r) in points.iter().zip(&rows) {
        let entry = minima.entry(p.key_without_theta()).or_insert_with(|| vec![f64::INFINITY; ps.len()]);
        if let Some(r) = r {
            for (slot, (_, m)) in entry.iter_mut().zip(r) {
                *slot = slot.min(*m);
            }
        }
    }
    let mut out = String::from("point,lambda,theta,E,T,depth");
    for p in &ps {
        out.push_str(&format!(",M_{p}"));
    }
    for p in &ps {
        out.push_str(&format!(",min_theta_M_{p}"));
    }
    out.push('\n');
    for (i, (p, r)) in points.iter().zip(&rows).enumerate() {
        out.push_str(&format!("{i},{}", p.cells().join(",")));
        for k in 0..ps.len() {
            out.push(',');
            if let Some(r) = r {
                out.push_str(&fmt_real(r[k].1));
            }
        }
        for m in &minima[&p.key_without_theta()] {
            out.push(',');
            if m.is_finite() {
                out.push_str(&fmt_real(*m));
            }
        }
        out.push('\n');
    }
    Ok(out)
}
