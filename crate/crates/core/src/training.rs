//! Mini-batch training with Adam.

use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{backward, forward};
use crate::error::{FlsError, Result};
use crate::model::predict;
use crate::params::{init_params, materialize, ModelConfig, RawParams, Spreads};

/// `B` input rows with their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    /// Features `[B, M]`.
    pub x: Array2<f64>,
    /// Targets `[B, D]`.
    pub y: Array2<f64>,
}

impl MiniBatch {
    pub fn new(x: Array2<f64>, y: Array2<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.nrows() != y.nrows() {
            return Err(FlsError::dimension("mini-batch rows", &[x.nrows().max(1)], &[y.nrows()]));
        }
        if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
            return Err(FlsError::Data("mini-batch contains non-finite values".into()));
        }
        Ok(MiniBatch { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }
}

/// Borrowed feature/target pair.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: ArrayView2<'a, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(FlsError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(FlsError::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(FlsError::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Sample-weighted mean training loss of each epoch.
    pub losses: Vec<f64>,
    pub rmse_train: Vec<f64>,
    pub rmse_test: Vec<f64>,
    pub wall_time_s: f64,
    pub epochs: usize,
}

/// Splits the data into `⌈N/B⌉` batches, shuffled with a generator seeded
/// from `seed ^ epoch` when `shuffle` is set.
pub fn make_batches(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    batch_size: usize,
    seed: u64,
    epoch: usize,
    shuffle: bool,
) -> Result<Vec<MiniBatch>> {
    let n = x.nrows();
    if n == 0 || y.nrows() != n {
        return Err(FlsError::dimension("training rows", &[n], &[y.nrows()]));
    }
    if batch_size == 0 {
        return Err(FlsError::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch as u64);
        order.shuffle(&mut rng);
    }
    Ok(order
        .chunks(batch_size)
        .map(|idx| MiniBatch {
            x: x.select(Axis(0), idx),
            y: y.select(Axis(0), idx),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: RawParams,
    pub v: RawParams,
}

impl AdamState {
    pub fn new(like: &RawParams) -> Self {
        AdamState {
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update at step `t >= 1`.
pub fn adam_step(
    raw: &RawParams,
    grads: &RawParams,
    state: &AdamState,
    hyper: &AdamConfig,
    lr: f64,
    t: usize,
) -> Result<(RawParams, AdamState)> {
    if t == 0 {
        return Err(FlsError::Config("Adam step counter starts at 1".into()));
    }
    if !grads.is_finite() {
        return Err(FlsError::numeric("optimizer", "non-finite gradient"));
    }
    let mut next = raw.clone();
    let mut st = state.clone();
    let c1 = 1.0 - hyper.beta1.powi(t as i32);
    let c2 = 1.0 - hyper.beta2.powi(t as i32);
    for (((p, g), m), v) in next
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(st.m.tensors_mut())
        .zip(st.v.tensors_mut())
    {
        if p.len() != g.len() {
            return Err(FlsError::dimension("optimizer gradient", &[p.len()], &[g.len()]));
        }
        for i in 0..p.len() {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    if !next.is_finite() {
        return Err(FlsError::numeric("optimizer", "update produced non-finite parameters"));
    }
    Ok((next, st))
}

/// Per-output root mean squared error.
pub fn rmse(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<Vec<f64>> {
    if pred.dim() != target.dim() {
        return Err(FlsError::dimension("rmse", target.shape(), pred.shape()));
    }
    if pred.nrows() == 0 {
        return Err(FlsError::Data("rmse of an empty set".into()));
    }
    let n = pred.nrows() as f64;
    Ok(Zip::from(pred.columns())
        .and(target.columns())
        .map_collect(|p, t| {
            let sse = p.iter().zip(t).fold(0.0, |acc, (a, b)| acc + (a - b) * (a - b));
            (sse / n).sqrt()
        })
        .to_vec())
}

/// Verifies `0 < h < 1` and `σ̲ <= σ̄` (or `σ > 0` for T1).
pub fn check_constraints(raw: &RawParams, config: &ModelConfig) -> Result<()> {
    let cp = materialize(raw, config.kind)?;
    let ok = match &cp.spreads {
        Spreads::T1 { sigma } => sigma.iter().all(|&s| s > 0.0),
        Spreads::IT2 {
            sigma_lower,
            sigma_upper,
            height,
        } => {
            Zip::from(sigma_lower).and(sigma_upper).all(|&l, &u| 0.0 < l && l <= u)
                && height.iter().all(|&h| 0.0 < h && h < 1.0)
        }
    };
    if ok {
        Ok(())
    } else {
        Err(FlsError::numeric("constraints", "materialized parameters left the feasible set"))
    }
}

/// Trains a model from a seeded initialization and evaluates it.
///
/// `epoch_hook` sees every epoch's mean loss as soon as it is known.
pub fn train_with_hook(
    config: &ModelConfig,
    tconfig: &TrainConfig,
    train: Samples<'_>,
    test: Samples<'_>,
    mut epoch_hook: impl FnMut(usize, f64),
) -> Result<(RawParams, TrainReport)> {
    config.validate()?;
    tconfig.validate()?;
    for (name, s) in [("training", (train.x, train.y)), ("test", (test.x, test.y))] {
        let s = Samples { x: s.0, y: s.1 };
        if s.x.ncols() != config.inputs || s.y.ncols() != config.outputs || s.x.nrows() != s.y.nrows() {
            return Err(FlsError::Config(format!(
                "{name} data is {}x{} -> {}x{}, model expects {} inputs and {} outputs",
                s.x.nrows(),
                s.x.ncols(),
                s.y.nrows(),
                s.y.ncols(),
                config.inputs,
                config.outputs
            )));
        }
    }

    let start = Instant::now();
    let hyper = AdamConfig {
        beta1: tconfig.beta1,
        beta2: tconfig.beta2,
        eps: tconfig.adam_eps,
    };
    let mut raw = init_params(config, train.x, tconfig.seed)?;
    let mut state = AdamState::new(&raw);
    let mut step = 0;
    let mut losses = Vec::with_capacity(tconfig.epochs);

    for epoch in 0..tconfig.epochs {
        let batches = make_batches(
            train.x,
            train.y,
            tconfig.batch_size,
            tconfig.seed,
            epoch,
            tconfig.shuffle,
        )?;
        let mut weighted = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let abort = |source| FlsError::TrainingAborted {
                epoch: epoch + 1,
                batch: bi + 1,
                source: Box::new(source),
            };
            let (loss, pass) = forward(&raw, batch, config).map_err(abort)?;
            let grads = backward(&pass);
            step += 1;
            let (next, next_state) =
                adam_step(&raw, &grads, &state, &hyper, tconfig.learning_rate, step).map_err(abort)?;
            raw = next;
            state = next_state;
            weighted += loss * batch.len() as f64;
        }
        check_constraints(&raw, config).map_err(|source| FlsError::TrainingAborted {
            epoch: epoch + 1,
            batch: batches.len(),
            source: Box::new(source),
        })?;
        let epoch_loss = weighted / train.x.nrows() as f64;
        epoch_hook(epoch + 1, epoch_loss);
        losses.push(epoch_loss);
    }
    let wall_time_s = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);

    let rmse_train = rmse(predict(config, &raw, train.x)?.view(), train.y)?;
    let rmse_test = if test.x.nrows() > 0 {
        rmse(predict(config, &raw, test.x)?.view(), test.y)?
    } else {
        Vec::new()
    };
    Ok((
        raw,
        TrainReport {
            losses,
            rmse_train,
            rmse_test,
            wall_time_s,
            epochs: tconfig.epochs,
        },
    ))
}

pub fn train(
    config: &ModelConfig,
    tconfig: &TrainConfig,
    train: Samples<'_>,
    test: Samples<'_>,
) -> Result<(RawParams, TrainReport)> {
    train_with_hook(config, tconfig, train, test, |_, _| {})
}
