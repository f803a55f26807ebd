//! Human-readable summary of a checkpoint file.

use std::path::Path;

use serde_json::{json, Value};

use hypersolve::hypersolver::{load_hypersolver, load_multistage, SolverSpec};
use hypersolve::neural::checkpoint::MlpRecord;
use hypersolve::neural::Mlp;

fn describe_net(m: &Mlp) -> Value {
    json!({
        "dims": m.layer_dims(),
        "activations": m.activations().iter().map(|a| a.name()).collect::<Vec<_>>(),
        "params": m.param_count(),
        "flops_per_forward": m.flops(),
    })
}

fn net_at(v: &Value, key: &str) -> Result<Option<Value>, String> {
    match v.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(n) => {
            let rec: MlpRecord =
                serde_json::from_value(n.clone()).map_err(|e| format!("`{key}`: {e}"))?;
            Ok(Some(describe_net(
                &rec.to_mlp().map_err(|e| format!("`{key}`: {e}"))?,
            )))
        }
    }
}

pub fn inspect(path: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let format = v.get("format").and_then(Value::as_str).unwrap_or("");
    let mut out = json!({ "file": path.display().to_string(), "format": format });
    match format {
        "hypersolve-mlp" => {
            out["net"] = net_at(&json!({ "net": v }), "net")?.unwrap_or(Value::Null)
        }
        "hypersolve-hypersolver" => {
            let spec = match v.get("kind").and_then(Value::as_str) {
                Some("multistage") => {
                    SolverSpec::MultiStage(load_multistage(path).map_err(|e| e.to_string())?)
                }
                _ => SolverSpec::Hyper(load_hypersolver(path).map_err(|e| e.to_string())?),
            };
            out["kind"] = v["kind"].clone();
            out["stepper"] = json!(spec.name());
            out["layout"] = v["layout"].clone();
            match &spec {
                SolverSpec::Hyper(h) => {
                    out["base"] = json!(h.base.name());
                    out["eps"] = json!(h.eps);
                    out["g"] = describe_net(&h.g);
                }
                SolverSpec::MultiStage(m) => {
                    out["base"] = json!(m.base.name());
                    out["eps"] = json!(m.eps);
                    out["g"] = m.g.as_ref().map_or(Value::Null, describe_net);
                    out["h"] = m.h.as_ref().map_or(Value::Null, describe_net);
                }
                SolverSpec::Base(_) => unreachable!("checkpoints always carry a network"),
            }
        }
        "hypersolve-controller" => {
            for key in ["feedback", "bounds", "saturation"] {
                out[key] = v.get(key).cloned().unwrap_or(Value::Null);
            }
            out["net"] = net_at(&v, "net")?.unwrap_or(Value::Null);
        }
        other => {
            return Err(format!(
                "{}: unknown checkpoint format `{other}`",
                path.display()
            ))
        }
    }
    Ok(out)
}
