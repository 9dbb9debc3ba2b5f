//! Model configuration and learnable parameters.
//!
//! The optimizer works on [`RawParams`], which carry no range constraints.
//! [`materialize`] maps them onto valid fuzzy-set parameters: heights pass
//! through a sigmoid, and the lower/upper spreads are `σ′ ∓ |Δ|` floored at
//! [`SIGMA_FLOOR`].

use ndarray::{Array2, Array3, ArrayView2, Zip};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FlsError, Result};

/// Lower bound applied to every Gaussian spread.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Largest rule count the enumeration reducer accepts (2^20 candidates).
pub const MAX_ENUM_RULES: usize = 20;

/// Initial LMF height.
pub const INIT_HEIGHT: f64 = 0.9;

/// Initial half-width `Δ` of the spread interval.
pub const INIT_DELTA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    T1,
    IT2,
}

/// Type-reduction strategy for IT2 models. Ignored by T1 models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reducer {
    #[serde(rename = "enum")]
    Enumeration,
    #[serde(rename = "km")]
    KarnikMendel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub rules: usize,
    pub inputs: usize,
    pub outputs: usize,
    pub reducer: Reducer,
}

impl ModelConfig {
    pub fn new(
        kind: ModelKind,
        rules: usize,
        inputs: usize,
        outputs: usize,
        reducer: Reducer,
    ) -> Result<Self> {
        let config = ModelConfig {
            kind,
            rules,
            inputs,
            outputs,
            reducer,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rules == 0 || self.inputs == 0 || self.outputs == 0 {
            return Err(FlsError::Config(format!(
                "rules, inputs and outputs must be positive (P={}, M={}, D={})",
                self.rules, self.inputs, self.outputs
            )));
        }
        if self.kind == ModelKind::IT2
            && self.reducer == Reducer::Enumeration
            && self.rules > MAX_ENUM_RULES
        {
            return Err(FlsError::Capacity {
                rules: self.rules,
                max: MAX_ENUM_RULES,
            });
        }
        Ok(())
    }
}

/// Unconstrained parameters as seen by the optimizer.
///
/// `delta` and `h_raw` are only read by IT2 models; T1 models keep them so
/// every model has the same parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct RawParams {
    /// Centers `c`, shape `[P, M]`.
    pub c: Array2<f64>,
    /// Spread `σ′`, shape `[P, M]`.
    pub sigma_raw: Array2<f64>,
    /// Spread half-width `Δ`, shape `[P, M]`.
    pub delta: Array2<f64>,
    /// Pre-sigmoid LMF height `h′`, shape `[P, M]`.
    pub h_raw: Array2<f64>,
    /// Consequent slopes, shape `[D, P, M]`.
    pub a: Array3<f64>,
    /// Consequent offsets, shape `[D, P]`.
    pub a0: Array2<f64>,
}

impl RawParams {
    pub fn zeros(rules: usize, inputs: usize, outputs: usize) -> Self {
        let pm = (rules, inputs);
        RawParams {
            c: Array2::zeros(pm),
            sigma_raw: Array2::zeros(pm),
            delta: Array2::zeros(pm),
            h_raw: Array2::zeros(pm),
            a: Array3::zeros((outputs, rules, inputs)),
            a0: Array2::zeros((outputs, rules)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        RawParams {
            c: Array2::zeros(self.c.raw_dim()),
            sigma_raw: Array2::zeros(self.sigma_raw.raw_dim()),
            delta: Array2::zeros(self.delta.raw_dim()),
            h_raw: Array2::zeros(self.h_raw.raw_dim()),
            a: Array3::zeros(self.a.raw_dim()),
            a0: Array2::zeros(self.a0.raw_dim()),
        }
    }

    pub fn rules(&self) -> usize {
        self.c.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.c.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.a.shape()[0]
    }

    /// Flattened views over every tensor in a fixed order:
    /// `c, sigma_raw, delta, h_raw, a, a0`.
    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            self.c.as_slice().expect("standard layout"),
            self.sigma_raw.as_slice().expect("standard layout"),
            self.delta.as_slice().expect("standard layout"),
            self.h_raw.as_slice().expect("standard layout"),
            self.a.as_slice().expect("standard layout"),
            self.a0.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.c.as_slice_mut().expect("standard layout"),
            self.sigma_raw.as_slice_mut().expect("standard layout"),
            self.delta.as_slice_mut().expect("standard layout"),
            self.h_raw.as_slice_mut().expect("standard layout"),
            self.a.as_slice_mut().expect("standard layout"),
            self.a0.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Checks every tensor shape against `config`.
    pub fn check_shape(&self, config: &ModelConfig) -> Result<()> {
        let pm = [config.rules, config.inputs];
        for t in [&self.c, &self.sigma_raw, &self.delta, &self.h_raw] {
            if t.shape() != pm {
                return Err(FlsError::dimension("antecedent parameters", &pm, t.shape()));
            }
        }
        let dpm = [config.outputs, config.rules, config.inputs];
        if self.a.shape() != dpm {
            return Err(FlsError::dimension("consequent slopes", &dpm, self.a.shape()));
        }
        let dp = [config.outputs, config.rules];
        if self.a0.shape() != dp {
            return Err(FlsError::dimension("consequent offsets", &dp, self.a0.shape()));
        }
        Ok(())
    }
}

/// Spreads and heights of the antecedent fuzzy sets.
#[derive(Debug, Clone, PartialEq)]
pub enum Spreads {
    T1 {
        sigma: Array2<f64>,
    },
    IT2 {
        sigma_lower: Array2<f64>,
        sigma_upper: Array2<f64>,
        height: Array2<f64>,
    },
}

/// Valid fuzzy-set parameters derived from [`RawParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedParams {
    pub c: Array2<f64>,
    pub spreads: Spreads,
}

impl ConstrainedParams {
    pub fn kind(&self) -> ModelKind {
        match self.spreads {
            Spreads::T1 { .. } => ModelKind::T1,
            Spreads::IT2 { .. } => ModelKind::IT2,
        }
    }

    /// True when `σ > 0` (T1) or `0 < σ̲ ≤ σ̄` and `0 < h ≤ 1` (IT2).
    pub fn is_valid(&self) -> bool {
        match &self.spreads {
            Spreads::T1 { sigma } => sigma.iter().all(|&s| s > 0.0),
            Spreads::IT2 {
                sigma_lower,
                sigma_upper,
                height,
            } => {
                Zip::from(sigma_lower)
                    .and(sigma_upper)
                    .all(|&lo, &hi| lo > 0.0 && lo <= hi)
                    && height.iter().all(|&h| h > 0.0 && h <= 1.0)
            }
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Maps unconstrained parameters onto valid fuzzy-set parameters.
pub fn materialize(raw: &RawParams, kind: ModelKind) -> Result<ConstrainedParams> {
    if !raw.is_finite() {
        return Err(FlsError::Parameter(
            "raw parameters contain non-finite values".into(),
        ));
    }
    let spreads = match kind {
        ModelKind::T1 => Spreads::T1 {
            sigma: raw.sigma_raw.mapv(|s| s.max(SIGMA_FLOOR)),
        },
        ModelKind::IT2 => {
            let half = raw.delta.mapv(f64::abs);
            Spreads::IT2 {
                sigma_lower: Zip::from(&raw.sigma_raw)
                    .and(&half)
                    .map_collect(|&s, &d| (s - d).max(SIGMA_FLOOR)),
                sigma_upper: Zip::from(&raw.sigma_raw)
                    .and(&half)
                    .map_collect(|&s, &d| (s + d).max(SIGMA_FLOOR)),
                height: raw.h_raw.mapv(sigmoid),
            }
        }
    };
    Ok(ConstrainedParams {
        c: raw.c.clone(),
        spreads,
    })
}

/// Seeded initialization from the (normalized) training inputs.
///
/// Centers are `P` distinct training rows, spreads start at 1 and slopes are
/// drawn from `U(-0.1, 0.1)`.
pub fn init_params(config: &ModelConfig, train_x: ArrayView2<f64>, seed: u64) -> Result<RawParams> {
    config.validate()?;
    let (rows, cols) = train_x.dim();
    if cols != config.inputs {
        return Err(FlsError::dimension(
            "training inputs",
            &[rows, config.inputs],
            &[rows, cols],
        ));
    }
    if rows < config.rules {
        return Err(FlsError::InsufficientData {
            rows,
            rules: config.rules,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = index::sample(&mut rng, rows, config.rules);

    let mut raw = RawParams::zeros(config.rules, config.inputs, config.outputs);
    for (p, row) in picks.iter().enumerate() {
        raw.c.row_mut(p).assign(&train_x.row(row));
    }
    raw.sigma_raw.fill(1.0);
    raw.delta.fill(INIT_DELTA);
    raw.h_raw.fill(logit(INIT_HEIGHT));
    raw.a.mapv_inplace(|_| rng.gen_range(-0.1..0.1));
    Ok(raw)
}

/// Nested-array form used for JSON persistence.
#[derive(Serialize, Deserialize)]
struct RawParamsDoc {
    c: Vec<Vec<f64>>,
    sigma_raw: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
    h_raw: Vec<Vec<f64>>,
    a: Vec<Vec<Vec<f64>>>,
    a0: Vec<Vec<f64>>,
}

fn nest2(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

fn unnest2(rows: Vec<Vec<f64>>, name: &str) -> std::result::Result<Array2<f64>, String> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(format!("ragged array `{name}`"));
    }
    Array2::from_shape_vec((n, m), rows.into_iter().flatten().collect())
        .map_err(|e| format!("`{name}`: {e}"))
}

impl Serialize for RawParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RawParamsDoc {
            c: nest2(&self.c),
            sigma_raw: nest2(&self.sigma_raw),
            delta: nest2(&self.delta),
            h_raw: nest2(&self.h_raw),
            a: self.a.outer_iter().map(|m| nest2(&m.to_owned())).collect(),
            a0: nest2(&self.a0),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RawParams {
    fn deserialize<De: serde::Deserializer<'de>>(d: De) -> std::result::Result<Self, De::Error> {
        use serde::de::Error;
        let doc = RawParamsDoc::deserialize(d)?;
        let slices = doc
            .a
            .into_iter()
            .map(|m| unnest2(m, "a"))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(De::Error::custom)?;
        let (p, m) = slices.first().map_or((0, 0), |s| s.dim());
        if slices.iter().any(|s| s.dim() != (p, m)) {
            return Err(De::Error::custom("ragged array `a`"));
        }
        let a = Array3::from_shape_vec(
            (slices.len(), p, m),
            slices.iter().flat_map(|s| s.iter().copied()).collect(),
        )
        .map_err(De::Error::custom)?;
        Ok(RawParams {
            c: unnest2(doc.c, "c").map_err(De::Error::custom)?,
            sigma_raw: unnest2(doc.sigma_raw, "sigma_raw").map_err(De::Error::custom)?,
            delta: unnest2(doc.delta, "delta").map_err(De::Error::custom)?,
            h_raw: unnest2(doc.h_raw, "h_raw").map_err(De::Error::custom)?,
            a,
            a0: unnest2(doc.a0, "a0").map_err(De::Error::custom)?,
        })
    }
}
