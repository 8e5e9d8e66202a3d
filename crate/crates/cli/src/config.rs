//! Run configuration: TOML file (or a previous run manifest) merged with
//! command-line flags.

use std::path::{Path, PathBuf};

use qpt_core::arithmetic::{construct_liouville_frequency, continued_fraction_expansion, continued_fraction_of_rational, Frequency};
use qpt_core::operator::{PeriodicModel, Potential, Rotation, SamplingFunction};
use qpt_core::transport::{EvolutionConfig, FloquetEnergyIntegral, Method, MomentVariant};
use qpt_core::verify::{EnsembleSpec, FloquetTolerances, LyapunovSettings, TheoremDemoConfig, TransportSuiteSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST_SCHEMA: u32 = 1;

/// Depth of the expansion used for real-valued frequencies.
const REAL_CF_DEPTH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSpec {
    /// amo, zero or table
    pub kind: String,
    pub lambda: f64,
    /// Grid values for `table`.
    pub values: Vec<f64>,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec {
            kind: "amo".into(),
            lambda: 1.0,
            values: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiouvilleSpec {
    pub beta: f64,
    pub q1: u64,
    pub depth: usize,
}

impl std::str::FromStr for LiouvilleSpec {
    type Err = String;

    /// `beta=2,q1=2,depth=3`
    fn from_str(s: &str) -> Result<Self, String> {
        let (mut beta, mut q1, mut depth) = (None, None, None);
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| format!("expected key=value, got `{part}`"))?;
            let bad = |e: &dyn std::fmt::Display| format!("bad value for {k}: {e}");
            match k.trim() {
                "beta" => beta = Some(v.trim().parse::<f64>().map_err(|e| bad(&e))?),
                "q1" => q1 = Some(v.trim().parse::<u64>().map_err(|e| bad(&e))?),
                "depth" => depth = Some(v.trim().parse::<usize>().map_err(|e| bad(&e))?),
                other => return Err(format!("unknown liouville key `{other}`")),
            }
        }
        Ok(LiouvilleSpec {
            beta: beta.ok_or("liouville needs beta")?,
            q1: q1.unwrap_or(2),
            depth: depth.unwrap_or(3),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergySpec {
    /// Explicit energies; when empty an equispaced grid [min, max] is used.
    pub values: Vec<f64>,
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for EnergySpec {
    fn default() -> Self {
        EnergySpec {
            values: Vec::new(),
            min: -4.0,
            max: 4.0,
            points: 81,
        }
    }
}

impl EnergySpec {
    pub fn grid(&self) -> Result<Vec<f64>, CliError> {
        if !self.values.is_empty() {
            return Ok(self.values.clone());
        }
        match self.points {
            0 => Err(CliError::Usage("energy grid is empty".into())),
            1 => Ok(vec![self.min]),
            n => Ok((0..n)
                .map(|i| self.min + (self.max - self.min) * i as f64 / (n - 1) as f64)
                .collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportSpec {
    pub t: f64,
    /// Sites (or cells for the Floquet route) -n_max..=n_max.
    pub n_max: i64,
    pub method: Method,
    pub integral: FloquetEnergyIntegral,
}

impl Default for TransportSpec {
    fn default() -> Self {
        TransportSpec {
            t: 10.0,
            n_max: 10,
            method: Method::Time,
            integral: FloquetEnergyIntegral::Analytic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentsSpec {
    pub t: f64,
    pub p: Vec<f64>,
    pub variant: MomentVariant,
}

impl Default for MomentsSpec {
    fn default() -> Self {
        MomentsSpec {
            t: 10.0,
            p: vec![1.0, 2.0],
            variant: MomentVariant::SummedEntries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LowerBoundSpec {
    /// Energy window; both `None` means the whole spectrum.
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    /// Time scale; `None` picks the smallest T with an admissible window of
    /// `n_target` cells.
    pub t: Option<f64>,
    pub n_target: f64,
    pub max_points: usize,
}

impl Default for LowerBoundSpec {
    fn default() -> Self {
        LowerBoundSpec {
            lo: None,
            hi: None,
            t: None,
            n_target: 16.0,
            max_points: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GordonSpec {
    pub energy: f64,
    pub depths: Vec<usize>,
    pub expect_decrease: bool,
    /// Random unimodular matrices for `gordon-random`.
    pub trials: usize,
}

impl Default for GordonSpec {
    fn default() -> Self {
        GordonSpec {
            energy: 0.0,
            depths: vec![2, 3, 4],
            expect_decrease: false,
            trials: 10_000,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    pub suite: Option<String>,
    pub floquet: EnsembleSpec,
    pub floquet_tolerances: FloquetTolerances,
    pub transport: TransportSuiteSpec,
    pub lower_bound: LowerBoundSpec,
    pub bandwidth_depths: Vec<usize>,
    pub gordon: GordonSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub command: Option<String>,
    pub lambda: Vec<f64>,
    pub theta: Vec<f64>,
    /// Shorthand for theta = k/N, k = 0..N.
    pub theta_grid: usize,
    pub energy: Vec<f64>,
    pub t: Vec<f64>,
    pub depth: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sampling: SamplingSpec,
    /// `p/q` or a real number in (0, 1).
    pub freq: Option<String>,
    pub liouville: Option<LiouvilleSpec>,
    /// Convergent index m; the periodic approximant p_m/q_m replaces α.
    pub depth: Option<usize>,
    pub theta: f64,
    pub seed: Option<u64>,
    /// Worker threads; 0 uses all cores, 1 runs sequentially.
    pub threads: usize,
    pub out: Option<PathBuf>,
    pub kappa_grid: usize,
    pub energies: EnergySpec,
    pub lyapunov: LyapunovSettings,
    pub transport: TransportSpec,
    pub moments: MomentsSpec,
    pub evolution: EvolutionConfig,
    pub verify: VerifySpec,
    pub theorem: TheoremDemoConfig,
    pub sweep: SweepSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sampling: SamplingSpec::default(),
            freq: None,
            liouville: None,
            depth: None,
            theta: 0.0,
            seed: None,
            threads: 0,
            out: None,
            kappa_grid: 65,
            energies: EnergySpec::default(),
            lyapunov: LyapunovSettings::default(),
            transport: TransportSpec::default(),
            moments: MomentsSpec::default(),
            evolution: EvolutionConfig::default(),
            verify: VerifySpec::default(),
            theorem: TheoremDemoConfig::default(),
            sweep: SweepSpec::default(),
        }
    }
}

/// Reads a TOML config, or the `config` member of a JSON run manifest.
pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let bad = |e: &dyn std::fmt::Display| CliError::Usage(format!("{}: {e}", path.display()));
    if path.extension().is_some_and(|e| e == "json") {
        let mut v: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(&e))?;
        if v.get("schema_version").and_then(|s| s.as_u64()) != Some(MANIFEST_SCHEMA as u64) {
            return Err(bad(&format!("not a version {MANIFEST_SCHEMA} run manifest")));
        }
        serde_json::from_value(v["config"].take()).map_err(|e| bad(&e))
    } else {
        toml::from_str(&text).map_err(|e| bad(&e))
    }
}

impl RunConfig {
    pub fn sampling_function(&self) -> Result<SamplingFunction, CliError> {
        match self.sampling.kind.as_str() {
            "amo" => Ok(SamplingFunction::amo(self.sampling.lambda)),
            "zero" => Ok(SamplingFunction::Zero),
            "table" if !self.sampling.values.is_empty() => Ok(SamplingFunction::Table {
                values: self.sampling.values.clone(),
            }),
            "table" => Err(CliError::Usage("table sampling needs sampling.values".into())),
            other => Err(CliError::Usage(format!("unknown sampling kind `{other}` (amo, zero, table)"))),
        }
    }

    pub fn frequency(&self) -> Result<Frequency, CliError> {
        if let Some(l) = &self.liouville {
            return Ok(construct_liouville_frequency(l.beta, l.q1, l.depth)?);
        }
        let s = self
            .freq
            .as_deref()
            .ok_or_else(|| CliError::Usage("no frequency given (use --freq or --liouville)".into()))?;
        if let Some((p, q)) = s.split_once('/') {
            let parse = |x: &str| {
                x.trim()
                    .parse::<num_bigint::BigInt>()
                    .map_err(|_| CliError::Usage(format!("bad rational frequency `{s}`")))
            };
            return Ok(continued_fraction_of_rational(&parse(p)?, &parse(q)?, usize::MAX)?);
        }
        let alpha = match s.trim() {
            "golden" => (5f64.sqrt() - 1.0) / 2.0,
            t => t.parse::<f64>().map_err(|_| CliError::Usage(format!("bad frequency `{s}`")))?,
        };
        Ok(continued_fraction_expansion(alpha, REAL_CF_DEPTH)?)
    }

    /// p/q of the approximant: convergent `depth` if set, else the frequency
    /// itself when it is a (small) rational.
    pub fn rational(&self, freq: &Frequency) -> Result<(u64, u64), CliError> {
        let (p, q) = match self.depth {
            Some(m) => {
                let c = freq.convergent(m).ok_or_else(|| {
                    CliError::Usage(format!("frequency has only {} convergents, depth {m} requested", freq.depth()))
                })?;
                (c.0.clone(), c.1.clone())
            }
            None if self.rational_input() => (freq.num.clone(), freq.den.clone()),
            None => return Err(CliError::Usage("a periodic model needs a rational frequency or --depth".into())),
        };
        match (u64::try_from(&p), u64::try_from(&q)) {
            (Ok(p), Ok(q)) => Ok((p, q)),
            _ => Err(CliError::Usage(format!("denominator {q} does not fit 64 bits"))),
        }
    }

    pub fn periodic_model(&self) -> Result<PeriodicModel, CliError> {
        let f = self.sampling_function()?;
        let (p, q) = self.rational(&self.frequency()?)?;
        Ok(PeriodicModel::new(&f, p, q, self.theta)?)
    }

    /// The approximant when `depth` is set or α is rational, else the
    /// quasiperiodic potential at the exact stored rotation.
    pub fn potential(&self) -> Result<Potential, CliError> {
        let freq = self.frequency()?;
        if self.depth.is_some() || self.rational_input() {
            return Ok(Potential::Periodic(self.periodic_model()?));
        }
        Ok(Potential::Quasi {
            f: self.sampling_function()?,
            alpha: self.rotation(&freq),
            theta: self.theta,
        })
    }

    /// The frequency was given as p/q (a float is only rationalized).
    fn rational_input(&self) -> bool {
        self.liouville.is_none() && self.freq.as_deref().is_some_and(|s| s.contains('/'))
    }

    pub fn rotation(&self, freq: &Frequency) -> Rotation {
        match self.depth.and_then(|m| freq.convergent(m)) {
            Some((p, q)) => Rotation::Rational { p: p.clone(), q: q.clone() },
            None => Rotation::of_frequency(freq),
        }
    }
}
