//! Run directory layout and the machine-readable records written into it.
//!
//! ```text
//! <run>/metrics.csv
//! <run>/summary.json
//! <run>/trajectories/*.csv
//! <run>/checkpoints/*
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hypersolve::control::{Controller, Feedback, Saturation};
use hypersolve::neural::checkpoint::MlpRecord;
use hypersolve::solvers::Counts;

use crate::config::ExperimentConfig;

pub const CONTROLLER_FORMAT: &str = "hypersolve-controller";

/// Accuracy and cost of one solver, the row type of `compare`.
///
/// FLOPs are an estimate: `2·in·out` per affine layer per forward pass, summed
/// over every network evaluation (correction nets and controller) of one
/// trajectory. Vector-field arithmetic is not counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub solver: String,
    #[serde(with = "nonfinite")]
    pub mae: f64,
    /// Percent, in `[0, 200]`.
    #[serde(with = "nonfinite")]
    pub smape: f64,
    #[serde(with = "nonfinite")]
    pub residual_mean: f64,
    #[serde(with = "nonfinite")]
    pub residual_max: f64,
    /// Per trajectory.
    pub nfe: u64,
    pub net_evals: u64,
    pub param_count: usize,
    pub flops: u64,
}

impl MetricsBundle {
    pub fn new(solver: impl Into<String>, counts: &Counts, param_count: usize) -> Self {
        Self {
            solver: solver.into(),
            mae: 0.0,
            smape: 0.0,
            residual_mean: 0.0,
            residual_max: 0.0,
            nfe: counts.nfe,
            // open-loop control sequences are lookups, not network evaluations
            net_evals: counts.net_evals
                + if counts.policy_flops > 0 {
                    counts.policy_evals
                } else {
                    0
                },
            param_count,
            flops: counts.total_net_flops(),
        }
    }
}

/// Floats that survive JSON when a solver diverged: `inf`, `-inf` and `nan` are written as strings.
pub mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&x.to_string().to_lowercase())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// What two runs must share to be compared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compat {
    pub system: String,
    pub model: String,
    pub dynamics: serde_json::Value,
    pub eps: Vec<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub kind: String,
    pub version: String,
    pub git_describe: Option<String>,
    pub config: ExperimentConfig,
    pub compat: Compat,
    pub metrics: Vec<MetricsBundle>,
    /// Experiment-specific results.
    pub results: serde_json::Value,
    pub wall_time_s: f64,
}

pub fn git_describe() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerRecord {
    pub format: String,
    pub feedback: Feedback,
    pub bounds: Option<Vec<[f64; 2]>>,
    pub saturation: Saturation,
    pub net: MlpRecord,
}

impl ControllerRecord {
    pub fn from_controller(c: &Controller) -> Self {
        Self {
            format: CONTROLLER_FORMAT.into(),
            feedback: c.feedback,
            bounds: c.bounds.clone(),
            saturation: c.saturation,
            net: MlpRecord::from_mlp(&c.net),
        }
    }
}

pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: PathBuf) -> std::io::Result<Self> {
        std::fs::create_dir_all(root.join("trajectories"))?;
        std::fs::create_dir_all(root.join("checkpoints"))?;
        Ok(Self { root })
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(name)
    }

    pub fn write_trajectory(&self, name: &str, csv: &str) -> std::io::Result<()> {
        std::fs::write(
            self.root.join("trajectories").join(format!("{name}.csv")),
            csv,
        )
    }

    pub fn write_metrics(&self, table: &Table) -> std::io::Result<()> {
        table.write(&self.root.join("metrics.csv"))
    }

    pub fn write_summary(&self, s: &Summary) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(s).map_err(std::io::Error::other)?;
        std::fs::write(self.root.join("summary.json"), text + "\n")
    }
}

/// A CSV table built row by row.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}

/// Shortest round-trip text of a float, so reruns produce identical files.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn bundle_table(bundles: &[MetricsBundle]) -> Table {
    let mut t = Table::new(&[
        "solver",
        "mae",
        "smape",
        "residual_mean",
        "residual_max",
        "nfe",
        "net_evals",
        "param_count",
        "flops",
    ]);
    for b in bundles {
        t.push(vec![
            b.solver.clone(),
            num(b.mae),
            num(b.smape),
            num(b.residual_mean),
            num(b.residual_max),
            b.nfe.to_string(),
            b.net_evals.to_string(),
            b.param_count.to_string(),
            b.flops.to_string(),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nonfinite_metrics_round_trip() {
        let mut b = MetricsBundle::new("euler", &Counts::default(), 0);
        b.mae = f64::INFINITY;
        b.residual_max = f64::NAN;
        let text = serde_json::to_string(&b).unwrap();
        assert!(text.contains(r#""mae":"inf""#), "{text}");
        let back: MetricsBundle = serde_json::from_str(&text).unwrap();
        assert_eq!(back.mae, f64::INFINITY);
        assert!(back.residual_max.is_nan());
        assert_eq!(back.smape, 0.0);
    }
}
