use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HypersolverSpec, InputLayout, MultiStageSpec};
use crate::error::{Error, Result};
use crate::neural::checkpoint::{f64_to_hex, hex_to_f64, MlpRecord};
use crate::solvers::Scheme;

const FORMAT: &str = "hypersolve-hypersolver";
const VERSION: u32 = 1;

/// On-disk form of either hypersolver kind. `h` is present only for multi-stage solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypersolverRecord {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub base: Scheme,
    pub layout: InputLayout,
    /// Bit pattern of the training step size.
    pub eps: String,
    pub g: Option<MlpRecord>,
    pub h: Option<MlpRecord>,
}

impl HypersolverRecord {
    fn check(&self, kind: &str) -> Result<f64> {
        if self.format != FORMAT {
            return Err(Error::Parse(format!("unexpected format {:?}", self.format)));
        }
        if self.version != VERSION {
            return Err(Error::Parse(format!(
                "unsupported version {}",
                self.version
            )));
        }
        if self.kind != kind {
            return Err(Error::Parse(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        hex_to_f64(&self.eps)
    }
}

fn write(rec: &HypersolverRecord, path: &Path) -> Result<()> {
    std::fs::write(
        path,
        serde_json::to_string_pretty(rec).expect("record serializes"),
    )?;
    Ok(())
}

fn read(path: &Path) -> Result<HypersolverRecord> {
    serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Parse(e.to_string()))
}

pub fn save_hypersolver(spec: &HypersolverSpec, path: &Path) -> Result<()> {
    write(
        &HypersolverRecord {
            format: FORMAT.into(),
            version: VERSION,
            kind: "standard".into(),
            base: spec.base,
            layout: spec.layout,
            eps: f64_to_hex(spec.eps),
            g: Some(MlpRecord::from_mlp(&spec.g)),
            h: None,
        },
        path,
    )
}

pub fn load_hypersolver(path: &Path) -> Result<HypersolverSpec> {
    let rec = read(path)?;
    let eps = rec.check("standard")?;
    let g = rec
        .g
        .as_ref()
        .ok_or_else(|| Error::Parse("missing correction network".into()))?
        .to_mlp()?;
    let n_x = g.output_dim();
    let extra = g.input_dim() as isize - 2 * n_x as isize - isize::from(rec.layout.include_t);
    if extra < 0 {
        return Err(Error::Parse(
            "network input too small for its layout".into(),
        ));
    }
    HypersolverSpec::new(rec.base, g, rec.layout, n_x, extra as usize, eps)
}

pub fn save_multistage(spec: &MultiStageSpec, path: &Path) -> Result<()> {
    write(
        &HypersolverRecord {
            format: FORMAT.into(),
            version: VERSION,
            kind: "multistage".into(),
            base: spec.base,
            layout: spec.layout,
            eps: f64_to_hex(spec.eps),
            g: spec.g.as_ref().map(MlpRecord::from_mlp),
            h: spec.h.as_ref().map(MlpRecord::from_mlp),
        },
        path,
    )
}

pub fn load_multistage(path: &Path) -> Result<MultiStageSpec> {
    let rec = read(path)?;
    let eps = rec.check("multistage")?;
    let g = rec.g.as_ref().map(MlpRecord::to_mlp).transpose()?;
    let h = rec.h.as_ref().map(MlpRecord::to_mlp).transpose()?;
    let Some(any) = g.as_ref().or(h.as_ref()) else {
        return Err(Error::Parse(
            "multi-stage checkpoint has no networks".into(),
        ));
    };
    let n_x = any.output_dim();
    let extra = any.input_dim() as isize - 2 * n_x as isize - isize::from(rec.layout.include_t);
    if extra < 0 {
        return Err(Error::Parse(
            "network input too small for its layout".into(),
        ));
    }
    MultiStageSpec::new(rec.base, h, g, rec.layout, n_x, extra as usize, eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Activation, Init, Mlp};

    fn tmp(name: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("hs-ckpt-{}-{name}", std::process::id()))
    }

    #[test]
    fn hypersolver_round_trip_bitwise() {
        let g = Mlp::new(&[5, 8, 2], &[Activation::Softplus], Init::UniformKaiming, 2).unwrap();
        let spec =
            HypersolverSpec::new(Scheme::Midpoint, g, InputLayout::default(), 2, 1, 0.1).unwrap();
        let p = tmp("hyper.json");
        save_hypersolver(&spec, &p).unwrap();
        assert_eq!(load_hypersolver(&p).unwrap(), spec);
        assert!(load_multistage(&p).is_err());
        std::fs::remove_file(p).ok();
    }

    #[test]
    fn multistage_round_trip_with_missing_stage() {
        let h = Mlp::new(&[10, 8, 4], &[Activation::snake()], Init::UniformKaiming, 5).unwrap();
        let spec = MultiStageSpec::new(
            Scheme::Rk4,
            Some(h),
            None,
            InputLayout { include_t: true },
            4,
            1,
            0.05,
        )
        .unwrap();
        let p = tmp("ms.json");
        save_multistage(&spec, &p).unwrap();
        assert_eq!(load_multistage(&p).unwrap(), spec);
        std::fs::remove_file(p).ok();
    }
}
