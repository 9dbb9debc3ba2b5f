//! Gaussian membership grades and rule firing strengths for a batch.
//!
//! Grades are laid out `[B, P, M]` (sample, rule, input) and firings `[B, P]`.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};

use crate::error::{FlsError, Result};
use crate::params::{ConstrainedParams, ModelKind, Spreads};

/// Membership grades of a batch, per sample, rule and input.
#[derive(Debug, Clone, PartialEq)]
pub enum Grades {
    T1(Array3<f64>),
    IT2 {
        lower: Array3<f64>,
        upper: Array3<f64>,
    },
}

/// Rule firing strengths of a batch, shape `[B, P]`.
#[derive(Debug, Clone, PartialEq)]
pub enum FiringStrengths {
    T1(Array2<f64>),
    IT2 {
        lower: Array2<f64>,
        upper: Array2<f64>,
    },
}

impl FiringStrengths {
    pub fn kind(&self) -> ModelKind {
        match self {
            FiringStrengths::T1(_) => ModelKind::T1,
            FiringStrengths::IT2 { .. } => ModelKind::IT2,
        }
    }

    pub fn batch_size(&self) -> usize {
        match self {
            FiringStrengths::T1(f) => f.nrows(),
            FiringStrengths::IT2 { lower, .. } => lower.nrows(),
        }
    }

    pub fn rules(&self) -> usize {
        match self {
            FiringStrengths::T1(f) => f.ncols(),
            FiringStrengths::IT2 { lower, .. } => lower.ncols(),
        }
    }
}

#[inline]
pub(crate) fn gaussian(x: f64, center: f64, sigma: f64) -> f64 {
    let d = x - center;
    (-(d * d) / (2.0 * sigma * sigma)).exp()
}

fn check_inputs(x: &ArrayView2<f64>, params: &ConstrainedParams) -> Result<()> {
    let m = params.c.ncols();
    if x.ncols() != m {
        return Err(FlsError::dimension(
            "membership inputs",
            &[x.nrows(), m],
            x.shape(),
        ));
    }
    Ok(())
}

/// Evaluates `exp(-(x - c)^2 / (2 σ^2))` for every `(sample, rule, input)`.
fn grade_tensor(x: &ArrayView2<f64>, c: &Array2<f64>, sigma: &Array2<f64>) -> Array3<f64> {
    let (b, m) = x.dim();
    let p = c.nrows();
    Array3::from_shape_fn((b, p, m), |(bi, pi, mi)| {
        gaussian(x[[bi, mi]], c[[pi, mi]], sigma[[pi, mi]])
    })
}

pub fn mu_t1(x: ArrayView2<f64>, params: &ConstrainedParams) -> Result<Array3<f64>> {
    check_inputs(&x, params)?;
    match &params.spreads {
        Spreads::T1 { sigma } => Ok(grade_tensor(&x, &params.c, sigma)),
        Spreads::IT2 { .. } => Err(FlsError::Parameter(
            "type-1 grades requested from interval type-2 parameters".into(),
        )),
    }
}

/// Lower and upper membership grades. The lower grade is the height-scaled
/// Gaussian with the narrower spread, so `lower <= upper` elementwise.
pub fn mu_it2(
    x: ArrayView2<f64>,
    params: &ConstrainedParams,
) -> Result<(Array3<f64>, Array3<f64>)> {
    check_inputs(&x, params)?;
    match &params.spreads {
        Spreads::IT2 {
            sigma_lower,
            sigma_upper,
            height,
        } => {
            let upper = grade_tensor(&x, &params.c, sigma_upper);
            let mut lower = grade_tensor(&x, &params.c, sigma_lower);
            for mut slice in lower.outer_iter_mut() {
                Zip::from(&mut slice).and(height).for_each(|g, &h| *g *= h);
            }
            Ok((lower, upper))
        }
        Spreads::T1 { .. } => Err(FlsError::Parameter(
            "interval type-2 grades requested from type-1 parameters".into(),
        )),
    }
}

pub fn grades(x: ArrayView2<f64>, params: &ConstrainedParams) -> Result<Grades> {
    match params.kind() {
        ModelKind::T1 => mu_t1(x, params).map(Grades::T1),
        ModelKind::IT2 => mu_it2(x, params).map(|(lower, upper)| Grades::IT2 { lower, upper }),
    }
}

/// Product t-norm over the input axis, accumulated in input order.
pub fn product_over_inputs(mu: ArrayView3<f64>) -> Array2<f64> {
    mu.map_axis(Axis(2), |lane| lane.iter().fold(1.0, |acc, &g| acc * g))
}

pub fn firings(mu: &Grades) -> FiringStrengths {
    match mu {
        Grades::T1(g) => FiringStrengths::T1(product_over_inputs(g.view())),
        Grades::IT2 { lower, upper } => FiringStrengths::IT2 {
            lower: product_over_inputs(lower.view()),
            upper: product_over_inputs(upper.view()),
        },
    }
}
