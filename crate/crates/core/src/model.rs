//! Inference facade and the persisted model document.

use std::fs;
use std::path::Path;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{Table, ZScore};
use crate::error::{FlsError, Result};
use crate::inference_it2::{it2_output, reduce_enum, reduce_km, SwitchMatrix};
use crate::inference_t1::{consequents, t1_output};
use crate::membership::{firings, grades};
use crate::params::{materialize, ModelConfig, ModelKind, RawParams, Reducer};
use crate::training::rmse;

/// Rows evaluated per chunk, bounding the `[B, P, M]` grade tensors.
const PREDICT_CHUNK: usize = 4096;

/// Crisp model outputs for normalized inputs `x`, shape `[N, D]`.
pub fn predict(config: &ModelConfig, raw: &RawParams, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    config.validate()?;
    raw.check_shape(config)?;
    if x.ncols() != config.inputs {
        return Err(FlsError::dimension("model inputs", &[config.inputs], &[x.ncols()]));
    }
    let cp = materialize(raw, config.kind)?;
    let switches = match (config.kind, config.reducer) {
        (ModelKind::IT2, Reducer::Enumeration) => Some(SwitchMatrix::new(config.rules)?),
        _ => None,
    };
    let mut parts = Vec::new();
    for chunk in x.axis_chunks_iter(Axis(0), PREDICT_CHUNK) {
        let f = firings(&grades(chunk, &cp)?);
        let yp = consequents(chunk, raw.a.view(), raw.a0.view())?;
        let out = match config.kind {
            ModelKind::T1 => match &f {
                crate::membership::FiringStrengths::T1(f) => t1_output(f.view(), &yp)?,
                _ => unreachable!("type-1 parameters give type-1 firings"),
            },
            ModelKind::IT2 => {
                let interval = match &switches {
                    Some(u) => reduce_enum(&f, &yp, u)?,
                    None => reduce_km(&f, &yp)?,
                };
                it2_output(&interval)
            }
        };
        parts.push(out);
    }
    if parts.is_empty() {
        return Ok(Array2::zeros((0, config.outputs)));
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    let out = concatenate(Axis(0), &views).expect("chunks share the output width");
    if !out.iter().all(|v| v.is_finite()) {
        return Err(FlsError::numeric("output", "non-finite prediction"));
    }
    Ok(out)
}

/// Everything needed to reuse a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub raw_params: RawParams,
    pub normalization: ZScore,
}

impl Model {
    pub fn new(config: ModelConfig, raw_params: RawParams, normalization: ZScore) -> Result<Self> {
        let model = Model {
            config,
            raw_params,
            normalization,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.raw_params.check_shape(&self.config)?;
        if self.normalization.inputs() != self.config.inputs
            || self.normalization.outputs() != self.config.outputs
            || self.normalization.feature_std.len() != self.config.inputs
            || self.normalization.target_std.len() != self.config.outputs
        {
            return Err(FlsError::ModelFormat(
                "normalization statistics do not match the model dimensions".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Model = serde_json::from_str(text).map_err(|e| FlsError::ModelFormat(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|source| FlsError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| FlsError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Model::from_json(&text)
    }

    /// Normalized predictions for normalized inputs.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        predict(&self.config, &self.raw_params, x)
    }

    /// Per-output RMSE in normalized units on a table in original units.
    pub fn evaluate(&self, table: &Table) -> Result<Vec<f64>> {
        if table.inputs() != self.config.inputs || table.outputs() != self.config.outputs {
            return Err(FlsError::Config(format!(
                "file has {} inputs and {} targets, model expects {} and {}",
                table.inputs(),
                table.outputs(),
                self.config.inputs,
                self.config.outputs
            )));
        }
        let data = self.normalization.apply(table)?;
        let pred = self.predict(data.features.view())?;
        rmse(pred.view(), data.targets.view())
    }
}
