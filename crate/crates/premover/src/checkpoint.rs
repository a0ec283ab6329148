//! `premover-ckpt-v1`: both heads and τ as one JSON document.

use std::path::Path;

use premover_core::numerics::{MlpHead, ParamSet, Tensor2D};
use serde::{Deserialize, Serialize};

use crate::AppError;

pub const CHECKPOINT_SCHEMA: &str = "premover-ckpt-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HeadDoc {
    #[serde(rename = "W1")]
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    #[serde(rename = "W2")]
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    schema: String,
    d: usize,
    h: usize,
    d_proj: usize,
    tau: f64,
    img_head: HeadDoc,
    lang_head: HeadDoc,
    rng_seed: u64,
}

impl HeadDoc {
    fn from_head(h: &MlpHead) -> Self {
        Self {
            w1: h.w1.to_rows(),
            b1: h.b1.clone(),
            w2: h.w2.to_rows(),
            b2: h.b2.clone(),
        }
    }

    fn into_head(self, name: &str) -> Result<MlpHead, AppError> {
        let bad = |e: premover_core::Error| AppError::Config(format!("checkpoint {name}: {e}"));
        Ok(MlpHead {
            w1: Tensor2D::from_rows(&self.w1).map_err(bad)?,
            b1: self.b1,
            w2: Tensor2D::from_rows(&self.w2).map_err(bad)?,
            b2: self.b2,
        })
    }
}

/// Serialize parameters; `rng_seed` records the initialization seed.
pub fn to_json(params: &ParamSet, rng_seed: u64) -> Result<String, AppError> {
    if params.to_flat().iter().any(|v| !v.is_finite()) {
        return Err(AppError::Runtime("refusing to write non-finite parameters".into()));
    }
    let dims = params.dims();
    let doc = CheckpointDoc {
        schema: CHECKPOINT_SCHEMA.into(),
        d: dims.d,
        h: dims.h,
        d_proj: dims.d_proj,
        tau: params.tau,
        img_head: HeadDoc::from_head(&params.img_head),
        lang_head: HeadDoc::from_head(&params.lang_head),
        rng_seed,
    };
    serde_json::to_string(&doc).map_err(|e| AppError::Runtime(format!("checkpoint encoding: {e}")))
}

/// Parse a checkpoint; returns the parameters and the recorded seed.
pub fn from_json(text: &str) -> Result<(ParamSet, u64), AppError> {
    let doc: CheckpointDoc =
        serde_json::from_str(text).map_err(|e| AppError::Config(format!("checkpoint is malformed: {e}")))?;
    if doc.schema != CHECKPOINT_SCHEMA {
        return Err(AppError::Config(format!(
            "checkpoint schema '{}' is not {CHECKPOINT_SCHEMA}",
            doc.schema
        )));
    }
    let (d, h, d_proj, seed) = (doc.d, doc.h, doc.d_proj, doc.rng_seed);
    let params = ParamSet::from_parts(
        doc.img_head.into_head("img_head")?,
        doc.lang_head.into_head("lang_head")?,
        doc.tau,
    )?;
    let dims = params.dims();
    if (dims.d, dims.h, dims.d_proj) != (d, h, d_proj) {
        return Err(AppError::Config(format!(
            "checkpoint header says {d}/{h}/{d_proj} but heads are {}/{}/{}",
            dims.d, dims.h, dims.d_proj
        )));
    }
    Ok((params, seed))
}

pub fn save(path: &Path, params: &ParamSet, rng_seed: u64) -> Result<(), AppError> {
    let text = to_json(params, rng_seed)?;
    crate::report::write_atomic(path, text.as_bytes())
}

pub fn load(path: &Path) -> Result<(ParamSet, u64), AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
    from_json(&text)
}
