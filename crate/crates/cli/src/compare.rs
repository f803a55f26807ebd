//! Side-by-side comparison of finished runs.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::output::{num, MetricsBundle, Summary, Table};

#[derive(Debug, Serialize)]
pub struct Row {
    pub run: String,
    #[serde(flatten)]
    pub bundle: MetricsBundle,
    /// Relative to the same solver in the first run, else the first row of the first run.
    pub baseline: String,
    #[serde(with = "crate::output::nonfinite")]
    pub delta_mae: f64,
    #[serde(with = "crate::output::nonfinite")]
    pub delta_smape: f64,
    pub delta_flops: i64,
    pub delta_nfe: i64,
}

pub fn read_summary(dir: &Path) -> Result<Summary, String> {
    let path = dir.join("summary.json");
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Fields of `b` that differ from `a` and make the runs incomparable.
pub fn incompatible(a: &Summary, b: &Summary) -> Vec<&'static str> {
    let (x, y) = (&a.compat, &b.compat);
    let mut out = Vec::new();
    if x.system != y.system {
        out.push("system");
    }
    if x.model != y.model {
        out.push("model");
    }
    if x.dynamics != y.dynamics {
        out.push("dynamics");
    }
    if x.eps != y.eps {
        out.push("eps");
    }
    if x.steps != y.steps {
        out.push("steps");
    }
    out
}

pub fn compare(dirs: &[PathBuf]) -> Result<Vec<Row>, String> {
    let runs = dirs
        .iter()
        .map(|d| read_summary(d))
        .collect::<Result<Vec<_>, _>>()?;
    let first = runs.first().ok_or("no runs given")?;
    let base_rows = &first.metrics;
    let fallback = base_rows
        .first()
        .ok_or_else(|| format!("{} has no metrics", dirs[0].display()))?;
    for (d, r) in dirs.iter().zip(&runs).skip(1) {
        let bad = incompatible(first, r);
        if !bad.is_empty() {
            return Err(format!(
                "{} is not comparable with {}: differs in {}",
                d.display(),
                dirs[0].display(),
                bad.join(", ")
            ));
        }
    }
    let mut rows = Vec::new();
    for (d, r) in dirs.iter().zip(&runs) {
        for b in &r.metrics {
            let base = base_rows
                .iter()
                .find(|x| x.solver == b.solver)
                .unwrap_or(fallback);
            rows.push(Row {
                run: d.display().to_string(),
                baseline: base.solver.clone(),
                delta_mae: diff(b.mae, base.mae),
                delta_smape: diff(b.smape, base.smape),
                delta_flops: b.flops as i64 - base.flops as i64,
                delta_nfe: b.nfe as i64 - base.nfe as i64,
                bundle: b.clone(),
            });
        }
    }
    Ok(rows)
}

// Identical values give zero even when infinite.
fn diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        a - b
    }
}

pub fn table(rows: &[Row]) -> Table {
    let mut t = Table::new(&[
        "run",
        "solver",
        "mae",
        "smape",
        "nfe",
        "net_evals",
        "param_count",
        "flops",
        "baseline",
        "delta_mae",
        "delta_smape",
        "delta_nfe",
        "delta_flops",
    ]);
    for r in rows {
        let b = &r.bundle;
        t.push(vec![
            r.run.clone(),
            b.solver.clone(),
            num(b.mae),
            num(b.smape),
            b.nfe.to_string(),
            b.net_evals.to_string(),
            b.param_count.to_string(),
            b.flops.to_string(),
            r.baseline.clone(),
            num(r.delta_mae),
            num(r.delta_smape),
            r.delta_nfe.to_string(),
            r.delta_flops.to_string(),
        ]);
    }
    t
}
