//! Verification reports and CSV formatting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::Result;

/// 17 significant digits, enough for a lossless f64 round trip.
pub fn fmt_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// A rectangular table of reals with named columns.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|x| fmt_real(*x)).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub check_id: String,
    pub instances: usize,
    pub violations: usize,
    /// Smallest slack over all checked instances; negative means violated.
    pub worst_margin: f64,
    pub tolerances: BTreeMap<String, f64>,
    pub artifacts: Table,
    pub notes: Vec<String>,
    pub config_snapshot: Value,
    /// Sub-checks keyed by name, each with (instances, violations).
    pub checks: BTreeMap<String, (usize, usize)>,
}

impl VerificationReport {
    pub fn new(check_id: &str, columns: &[&str]) -> Self {
        VerificationReport {
            check_id: check_id.to_string(),
            instances: 0,
            violations: 0,
            worst_margin: f64::INFINITY,
            tolerances: BTreeMap::new(),
            artifacts: Table::new(columns),
            notes: Vec::new(),
            config_snapshot: Value::Null,
            checks: BTreeMap::new(),
        }
    }

    pub fn tolerance(mut self, name: &str, value: f64) -> Self {
        self.tolerances.insert(name.to_string(), value);
        self
    }

    /// Records one instance of sub-check `name` with slack `margin`
    /// (violated iff `margin < 0`).
    pub fn record(&mut self, name: &str, margin: f64) -> bool {
        let ok = margin >= 0.0 && !margin.is_nan();
        self.instances += 1;
        let entry = self.checks.entry(name.to_string()).or_insert((0, 0));
        entry.0 += 1;
        if !ok {
            self.violations += 1;
            entry.1 += 1;
        }
        if margin < self.worst_margin || margin.is_nan() {
            self.worst_margin = margin;
        }
        ok
    }

    pub fn violations_of(&self, name: &str) -> usize {
        self.checks.get(name).map_or(0, |c| c.1)
    }

    pub fn instances_of(&self, name: &str) -> usize {
        self.checks.get(name).map_or(0, |c| c.0)
    }

    pub fn note(&mut self, msg: impl Into<String>) {
        self.notes.push(msg.into());
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("report serializes")
    }

    /// Writes `<check_id>.json` and `<check_id>.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join(format!("{}.json", self.check_id)),
            serde_json::to_string_pretty(&self.to_json())?,
        )?;
        std::fs::write(dir.join(format!("{}.csv", self.check_id)), self.artifacts.to_csv())?;
        Ok(())
    }
}
