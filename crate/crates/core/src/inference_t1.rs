//! Takagi–Sugeno consequents and the type-1 weighted-average output.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};

use crate::error::{FlsError, Result};

/// Additive guard on every firing normalizer.
pub const FIRING_EPS: f64 = 1e-12;

/// Per-rule linear consequents `y_p`, shape `[B, D, P]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsequentOutputs(pub Array3<f64>);

impl ConsequentOutputs {
    pub fn view(&self) -> ArrayView3<'_, f64> {
        self.0.view()
    }

    pub fn batch_size(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn rules(&self) -> usize {
        self.0.shape()[2]
    }
}

/// `y_p[b, d, p] = Σ_m a[d, p, m] x[b, m] + a0[d, p]`.
pub fn consequents(
    x: ArrayView2<f64>,
    a: ArrayView3<f64>,
    a0: ArrayView2<f64>,
) -> Result<ConsequentOutputs> {
    let (b, m) = x.dim();
    let (d, p, am) = a.dim();
    if am != m {
        return Err(FlsError::dimension("consequent slopes", &[d, p, m], a.shape()));
    }
    if a0.dim() != (d, p) {
        return Err(FlsError::dimension("consequent offsets", &[d, p], a0.shape()));
    }
    Ok(ConsequentOutputs(Array3::from_shape_fn(
        (b, d, p),
        |(bi, di, pi)| {
            let dot = (0..m).fold(0.0, |acc, mi| acc + a[[di, pi, mi]] * x[[bi, mi]]);
            dot + a0[[di, pi]]
        },
    )))
}

/// Weighted average `Σ_p f y_p / (Σ_p f + ε)` per sample and output.
pub fn t1_output(f: ArrayView2<f64>, yp: &ConsequentOutputs) -> Result<Array2<f64>> {
    let (b, p) = f.dim();
    if yp.batch_size() != b || yp.rules() != p {
        return Err(FlsError::dimension(
            "type-1 output",
            &[b, yp.outputs(), p],
            yp.0.shape(),
        ));
    }
    let d = yp.outputs();
    let mut out = Array2::zeros((b, d));
    for bi in 0..b {
        let row = f.row(bi);
        let norm = row.iter().fold(0.0, |acc, &v| acc + v) + FIRING_EPS;
        for di in 0..d {
            let num = (0..p).fold(0.0, |acc, pi| acc + row[pi] * yp.0[[bi, di, pi]]);
            out[[bi, di]] = num / norm;
        }
    }
    Ok(out)
}
