//! Differentiable forward pass of a fuzzy system and its gradient.
//!
//! [`forward`] records `materialize → membership → firings → consequents →
//! output → mean squared error` on a [`Tape`]; [`backward`] sweeps it and
//! returns the gradient in the layout of [`RawParams`].

mod tape;

pub use tape::{Adjoints, Tape, Var};

use ndarray::{Array2, ArrayD, Ix2, Ix3};

use crate::error::{FlsError, Result};
use crate::inference_it2::{reduce_enum_traced, reduce_km_traced};
use crate::inference_t1::{ConsequentOutputs, FIRING_EPS};
use crate::membership::FiringStrengths;
use crate::params::{ModelConfig, ModelKind, RawParams, Reducer, SIGMA_FLOOR};
use crate::training::MiniBatch;

/// Tape handles for the six raw parameter tensors.
#[derive(Debug, Clone, Copy)]
struct ParamVars {
    c: Var,
    sigma_raw: Var,
    delta: Var,
    h_raw: Var,
    a: Var,
    a0: Var,
}

/// A recorded forward pass, ready for [`backward`].
#[derive(Debug)]
pub struct ForwardPass {
    tape: Tape,
    params: ParamVars,
    predictions: Var,
    loss: Var,
}

impl ForwardPass {
    pub fn loss(&self) -> f64 {
        self.tape.value(self.loss)[[]]
    }

    /// Model outputs `[B, D]` for the batch.
    pub fn predictions(&self) -> Array2<f64> {
        self.tape
            .value(self.predictions)
            .clone()
            .into_dimensionality::<Ix2>()
            .expect("predictions are [B, D]")
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }
}

fn ensure_finite(tape: &Tape, v: Var, stage: &'static str) -> Result<()> {
    if tape.value(v).iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(FlsError::numeric(stage, "non-finite intermediate values"))
    }
}

/// Gaussian grades `exp(-(x - c)^2 / (2 σ^2))` as `[B, P, M]`.
fn gaussian_grades(tape: &mut Tape, sq_dist: Var, sigma: Var, bpm: &[usize]) -> Var {
    let s2 = tape.square(sigma);
    let two_s2 = tape.scale(s2, 2.0);
    let denom = tape.broadcast(two_s2, bpm, &[1, 2]);
    let ratio = tape.div(sq_dist, denom);
    let neg = tape.scale(ratio, -1.0);
    tape.exp(neg)
}

/// Records the loss of `raw` on `batch` under `config`.
pub fn forward(raw: &RawParams, batch: &MiniBatch, config: &ModelConfig) -> Result<(f64, ForwardPass)> {
    config.validate()?;
    raw.check_shape(config)?;
    let (b, m) = batch.x.dim();
    if m != config.inputs || batch.y.dim() != (b, config.outputs) {
        return Err(FlsError::dimension(
            "mini-batch",
            &[b, config.inputs, config.outputs],
            &[b, m, batch.y.ncols()],
        ));
    }
    if !raw.is_finite() {
        return Err(FlsError::Parameter("raw parameters contain non-finite values".into()));
    }
    let (p, d) = (config.rules, config.outputs);
    let mut t = Tape::new();

    let params = ParamVars {
        c: t.leaf(raw.c.clone().into_dyn()),
        sigma_raw: t.leaf(raw.sigma_raw.clone().into_dyn()),
        delta: t.leaf(raw.delta.clone().into_dyn()),
        h_raw: t.leaf(raw.h_raw.clone().into_dyn()),
        a: t.leaf(raw.a.clone().into_dyn()),
        a0: t.leaf(raw.a0.clone().into_dyn()),
    };
    let x = t.leaf(batch.x.clone().into_dyn());
    let target = t.leaf(batch.y.clone().into_dyn());

    // Squared distances to every rule center, [B, P, M].
    let bpm = [b, p, m];
    let xb = t.broadcast(x, &bpm, &[0, 2]);
    let cb = t.broadcast(params.c, &bpm, &[1, 2]);
    let diff = t.sub(xb, cb);
    let sq_dist = t.square(diff);

    // Consequents, [B, D, P].
    let bdpm = [b, d, p, m];
    let xc = t.broadcast(x, &bdpm, &[0, 3]);
    let ac = t.broadcast(params.a, &bdpm, &[1, 2, 3]);
    let terms = t.mul(ac, xc);
    let dot = t.sum_axis(terms, 3);
    let offsets = t.broadcast(params.a0, &[b, d, p], &[1, 2]);
    let yp = t.add(dot, offsets);
    ensure_finite(&t, yp, "consequents")?;

    let predictions = match config.kind {
        ModelKind::T1 => {
            let sigma = t.clamp_min(params.sigma_raw, SIGMA_FLOOR);
            ensure_finite(&t, sigma, "materialize")?;
            let mu = gaussian_grades(&mut t, sq_dist, sigma, &bpm);
            ensure_finite(&t, mu, "membership")?;
            let f = t.prod_last_axis(mu);
            ensure_finite(&t, f, "firings")?;

            let fb = t.broadcast(f, &[b, d, p], &[0, 2]);
            let weighted = t.mul(fb, yp);
            let num = t.sum_axis(weighted, 2);
            let fsum = t.sum_axis(f, 1);
            let norm = t.add_scalar(fsum, FIRING_EPS);
            let normb = t.broadcast(norm, &[b, d], &[0]);
            t.div(num, normb)
        }
        ModelKind::IT2 => {
            let spread = t.abs(params.delta);
            let lo_raw = t.sub(params.sigma_raw, spread);
            let hi_raw = t.add(params.sigma_raw, spread);
            let sigma_lo = t.clamp_min(lo_raw, SIGMA_FLOOR);
            let sigma_hi = t.clamp_min(hi_raw, SIGMA_FLOOR);
            let height = t.sigmoid(params.h_raw);
            for v in [sigma_lo, sigma_hi, height] {
                ensure_finite(&t, v, "materialize")?;
            }

            let upper_mu = gaussian_grades(&mut t, sq_dist, sigma_hi, &bpm);
            let lower_shape = gaussian_grades(&mut t, sq_dist, sigma_lo, &bpm);
            let hb = t.broadcast(height, &bpm, &[1, 2]);
            let lower_mu = t.mul(hb, lower_shape);
            ensure_finite(&t, upper_mu, "membership")?;
            ensure_finite(&t, lower_mu, "membership")?;
            let f_lo = t.prod_last_axis(lower_mu);
            let f_hi = t.prod_last_axis(upper_mu);
            ensure_finite(&t, f_lo, "firings")?;
            ensure_finite(&t, f_hi, "firings")?;

            let firings = FiringStrengths::IT2 {
                lower: to2(t.value(f_lo)),
                upper: to2(t.value(f_hi)),
            };
            let cons = ConsequentOutputs(
                t.value(yp).clone().into_dimensionality::<Ix3>().expect("consequents are [B, D, P]"),
            );
            let trace = match config.reducer {
                Reducer::Enumeration => reduce_enum_traced(&firings, &cons)?,
                Reducer::KarnikMendel => reduce_km_traced(&firings, &cons)?,
            };
            let y_lo = t.type_reduce(
                f_lo,
                f_hi,
                yp,
                trace.interval.lower.into_dyn(),
                trace.lower_switches,
            );
            let y_hi = t.type_reduce(
                f_lo,
                f_hi,
                yp,
                trace.interval.upper.into_dyn(),
                trace.upper_switches,
            );
            ensure_finite(&t, y_lo, "type reduction")?;
            ensure_finite(&t, y_hi, "type reduction")?;
            let sum = t.add(y_lo, y_hi);
            t.scale(sum, 0.5)
        }
    };
    ensure_finite(&t, predictions, "output")?;

    let err = t.sub(predictions, target);
    let sq = t.square(err);
    let total = t.sum_all(sq);
    let loss = t.scale(total, 1.0 / (b * d) as f64);
    ensure_finite(&t, loss, "loss")?;

    let pass = ForwardPass {
        tape: t,
        params,
        predictions,
        loss,
    };
    Ok((pass.loss(), pass))
}

fn to2(v: &ArrayD<f64>) -> Array2<f64> {
    v.clone().into_dimensionality::<Ix2>().expect("rank-2 tensor")
}

/// Gradient of the recorded loss with respect to every raw parameter.
/// Parameters the loss does not depend on get exact zeros.
pub fn backward(pass: &ForwardPass) -> RawParams {
    let adj = pass.tape.backward(pass.loss);
    let grad = |v: Var| {
        adj.get(v)
            .cloned()
            .unwrap_or_else(|| ArrayD::zeros(pass.tape.value(v).raw_dim()))
    };
    let grad2 = |v: Var| grad(v).into_dimensionality::<Ix2>().expect("rank-2 gradient");
    RawParams {
        c: grad2(pass.params.c),
        sigma_raw: grad2(pass.params.sigma_raw),
        delta: grad2(pass.params.delta),
        h_raw: grad2(pass.params.h_raw),
        a: grad(pass.params.a)
            .into_dimensionality::<Ix3>()
            .expect("rank-3 gradient"),
        a0: grad2(pass.params.a0),
    }
}

#[cfg(test)]
mod tests;
