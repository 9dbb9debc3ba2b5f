//! Interval type-2 type reduction.
//!
//! Two reducers compute the endpoints of the type-reduced set:
//!
//! * [`reduce_enum`] evaluates the centroid `Y(u) = X(u) / Z(u)` for every
//!   binary switching vector `u` (all `2^P` columns of [`SwitchMatrix`]) and
//!   takes the min and max. There is no sorting and no data-dependent
//!   iteration.
//! * [`reduce_km`] is the classical Karnik–Mendel procedure: sort the rule
//!   consequents, then iterate the switch point until it stops moving. It is
//!   the reference the enumeration is checked against.
//!
//! For a switching vector `u`, rule `p` fires at its upper strength when
//! `u_p = 1` and at its lower strength otherwise, so
//! `X(u) = α₀ + Σ_p α_p u_p` with `α₀ = Σ_p y_p f̲_p`, `α_p = y_p (f̄_p − f̲_p)`,
//! and `Z(u) = β₀ + Σ_p β_p u_p` with `β₀ = Σ_p f̲_p`, `β_p = f̄_p − f̲_p`.
//!
//! Candidates are streamed rather than materialized: `j` is split into a
//! high and a low part, partial sums for each part are tabulated once per
//! sample, and every candidate then costs two additions per output. Peak
//! memory is `O(2^⌈P/2⌉)` per worker instead of `O(2^P · B)`.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{FlsError, Result};
use crate::inference_t1::{ConsequentOutputs, FIRING_EPS};
use crate::membership::FiringStrengths;
use crate::params::MAX_ENUM_RULES;

/// Maximum Karnik–Mendel iterations before reporting non-convergence.
pub const KM_MAX_ITERATIONS: usize = 100;

/// Number of switching bits covered by the inner candidate table.
const LOW_BITS: usize = 10;

/// All `2^P` binary switching vectors, one per column.
///
/// Column `j` is the binary expansion of `j` with rule 0 as the most
/// significant bit. Entries are computed on demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwitchMatrix {
    rules: usize,
}

impl SwitchMatrix {
    pub fn new(rules: usize) -> Result<Self> {
        if rules == 0 {
            return Err(FlsError::Parameter("switch matrix needs at least one rule".into()));
        }
        if rules > MAX_ENUM_RULES {
            return Err(FlsError::Capacity {
                rules,
                max: MAX_ENUM_RULES,
            });
        }
        Ok(SwitchMatrix { rules })
    }

    pub fn rules(&self) -> usize {
        self.rules
    }

    pub fn columns(&self) -> usize {
        1 << self.rules
    }

    /// `u[p, j]`.
    #[inline]
    pub fn entry(&self, rule: usize, column: usize) -> u8 {
        ((column >> (self.rules - 1 - rule)) & 1) as u8
    }

    pub fn column(&self, column: usize) -> Vec<u8> {
        (0..self.rules).map(|p| self.entry(p, column)).collect()
    }

    /// Row-major `P × 2^P` materialization.
    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.rules)
            .map(|p| (0..self.columns()).map(|j| self.entry(p, j)).collect())
            .collect()
    }
}

/// Endpoints of the type-reduced set, each `[B, D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeReducedInterval {
    pub lower: Array2<f64>,
    pub upper: Array2<f64>,
}

/// Switching vectors that attain each endpoint, each `[B, D, P]`.
///
/// `true` means the rule contributes its upper firing strength.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionTrace {
    pub interval: TypeReducedInterval,
    pub lower_switches: Array3<bool>,
    pub upper_switches: Array3<bool>,
}

/// Enumeration result with the attaining column indices, each `[B, D]`.
///
/// Ties resolve to the lowest column index.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumReduction {
    pub interval: TypeReducedInterval,
    pub argmin: Array2<usize>,
    pub argmax: Array2<usize>,
}

fn it2_firings(f: &FiringStrengths) -> Result<(ArrayView2<'_, f64>, ArrayView2<'_, f64>)> {
    match f {
        FiringStrengths::IT2 { lower, upper } => Ok((lower.view(), upper.view())),
        FiringStrengths::T1(_) => Err(FlsError::Parameter(
            "type reduction needs interval type-2 firing strengths".into(),
        )),
    }
}

fn check_shapes(lower: &ArrayView2<f64>, upper: &ArrayView2<f64>, yp: &ConsequentOutputs) -> Result<()> {
    if lower.dim() != upper.dim() {
        return Err(FlsError::dimension("upper firing", lower.shape(), upper.shape()));
    }
    let (b, p) = lower.dim();
    if yp.batch_size() != b || yp.rules() != p {
        return Err(FlsError::dimension(
            "type reduction consequents",
            &[b, yp.outputs(), p],
            yp.0.shape(),
        ));
    }
    Ok(())
}

/// Subset sums over `weights`: `table[s] = Σ_{i ∈ s} weights[i]`.
fn subset_sums(weights: &[f64], table: &mut Vec<f64>) {
    let n = 1usize << weights.len();
    table.clear();
    table.resize(n, 0.0);
    for s in 1..n {
        let low = s.trailing_zeros() as usize;
        table[s] = table[s & (s - 1)] + weights[low];
    }
}

struct RowExtremes {
    min: Vec<f64>,
    max: Vec<f64>,
    argmin: Vec<usize>,
    argmax: Vec<usize>,
}

/// Scans all `2^P` candidates of one sample for every output.
fn enumerate_row(lower: &[f64], upper: &[f64], yp: &[Vec<f64>]) -> RowExtremes {
    let p = lower.len();
    let d = yp.len();
    let low_bits = p.min(LOW_BITS);
    let high_bits = p - low_bits;

    // Bit position q of column j holds rule P-1-q.
    let rule_at = |q: usize| p - 1 - q;
    let spread: Vec<f64> = lower.iter().zip(upper).map(|(l, u)| u - l).collect();
    let beta0 = lower.iter().fold(0.0, |acc, &v| acc + v);

    let mut z_low = Vec::new();
    let mut z_high = Vec::new();
    subset_sums(&(0..low_bits).map(|q| spread[rule_at(q)]).collect::<Vec<_>>(), &mut z_low);
    subset_sums(
        &(0..high_bits).map(|q| spread[rule_at(low_bits + q)]).collect::<Vec<_>>(),
        &mut z_high,
    );

    let mut alpha0 = Vec::with_capacity(d);
    let mut x_low = Vec::with_capacity(d);
    let mut x_high = Vec::with_capacity(d);
    for y in yp {
        alpha0.push((0..p).fold(0.0, |acc, i| acc + y[i] * lower[i]));
        let alpha: Vec<f64> = (0..p).map(|i| y[i] * spread[i]).collect();
        let mut lo_t = Vec::new();
        let mut hi_t = Vec::new();
        subset_sums(&(0..low_bits).map(|q| alpha[rule_at(q)]).collect::<Vec<_>>(), &mut lo_t);
        subset_sums(
            &(0..high_bits).map(|q| alpha[rule_at(low_bits + q)]).collect::<Vec<_>>(),
            &mut hi_t,
        );
        x_low.push(lo_t);
        x_high.push(hi_t);
    }

    let mut out = RowExtremes {
        min: vec![f64::INFINITY; d],
        max: vec![f64::NEG_INFINITY; d],
        argmin: vec![0; d],
        argmax: vec![0; d],
    };
    let mut x_base = vec![0.0; d];
    for (hi, &z_hi) in z_high.iter().enumerate() {
        let z_base = beta0 + z_hi;
        for di in 0..d {
            x_base[di] = alpha0[di] + x_high[di][hi];
        }
        let offset = hi << low_bits;
        for (lo, &z_lo) in z_low.iter().enumerate() {
            let denom = (z_base + z_lo) + FIRING_EPS;
            for di in 0..d {
                let y = (x_base[di] + x_low[di][lo]) / denom;
                if y < out.min[di] {
                    out.min[di] = y;
                    out.argmin[di] = offset | lo;
                }
                if y > out.max[di] {
                    out.max[di] = y;
                    out.argmax[di] = offset | lo;
                }
            }
        }
    }
    out
}

/// Enumeration type reduction with the attaining columns.
pub fn reduce_enum_indexed(
    f: &FiringStrengths,
    yp: &ConsequentOutputs,
    u: &SwitchMatrix,
) -> Result<EnumReduction> {
    let (lower, upper) = it2_firings(f)?;
    check_shapes(&lower, &upper, yp)?;
    let (b, p) = lower.dim();
    if u.rules() != p {
        return Err(FlsError::dimension("switch matrix", &[p], &[u.rules()]));
    }
    let d = yp.outputs();

    let rows: Vec<RowExtremes> = (0..b)
        .into_par_iter()
        .map(|bi| {
            let lo = lower.row(bi).to_vec();
            let hi = upper.row(bi).to_vec();
            let ys: Vec<Vec<f64>> = (0..d)
                .map(|di| yp.0.index_axis(Axis(0), bi).row(di).to_vec())
                .collect();
            enumerate_row(&lo, &hi, &ys)
        })
        .collect();

    let mut interval = TypeReducedInterval {
        lower: Array2::zeros((b, d)),
        upper: Array2::zeros((b, d)),
    };
    let mut argmin = Array2::zeros((b, d));
    let mut argmax = Array2::zeros((b, d));
    for (bi, row) in rows.into_iter().enumerate() {
        for di in 0..d {
            interval.lower[[bi, di]] = row.min[di];
            interval.upper[[bi, di]] = row.max[di];
            argmin[[bi, di]] = row.argmin[di];
            argmax[[bi, di]] = row.argmax[di];
        }
    }
    Ok(EnumReduction {
        interval,
        argmin,
        argmax,
    })
}

/// Type reduction by exhaustive evaluation of every switching vector.
pub fn reduce_enum(
    f: &FiringStrengths,
    yp: &ConsequentOutputs,
    u: &SwitchMatrix,
) -> Result<TypeReducedInterval> {
    reduce_enum_indexed(f, yp, u).map(|r| r.interval)
}

/// Enumeration reduction expressed as attaining switching vectors.
pub fn reduce_enum_traced(f: &FiringStrengths, yp: &ConsequentOutputs) -> Result<ReductionTrace> {
    let u = SwitchMatrix::new(f.rules())?;
    let r = reduce_enum_indexed(f, yp, &u)?;
    let (b, d) = r.argmin.dim();
    let p = u.rules();
    Ok(ReductionTrace {
        interval: r.interval,
        lower_switches: Array3::from_shape_fn((b, d, p), |(bi, di, pi)| {
            u.entry(pi, r.argmin[[bi, di]]) == 1
        }),
        upper_switches: Array3::from_shape_fn((b, d, p), |(bi, di, pi)| {
            u.entry(pi, r.argmax[[bi, di]]) == 1
        }),
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Bound {
    Lower,
    Upper,
}

/// Centroid when the first `k` sorted rules take one firing bound and the
/// rest take the other.
fn km_centroid(order: &[usize], y: &[f64], lower: &[f64], upper: &[f64], k: usize, bound: Bound) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (pos, &i) in order.iter().enumerate() {
        let use_upper = (pos < k) == (bound == Bound::Lower);
        let f = if use_upper { upper[i] } else { lower[i] };
        num += f * y[i];
        den += f;
    }
    num / (den + FIRING_EPS)
}

/// Number of sorted consequents `<= centroid`, clamped to `[1, P-1]`.
fn km_switch_point(order: &[usize], y: &[f64], centroid: f64) -> usize {
    let below = order.iter().take_while(|&&i| y[i] <= centroid).count();
    below.clamp(1, order.len() - 1)
}

fn km_endpoint(
    order: &[usize],
    y: &[f64],
    lower: &[f64],
    upper: &[f64],
    bound: Bound,
) -> Result<(f64, Vec<bool>)> {
    let p = order.len();
    let switches_for = |k: usize| {
        let mut s = vec![false; p];
        for (pos, &i) in order.iter().enumerate() {
            s[i] = (pos < k) == (bound == Bound::Lower);
        }
        s
    };
    if p == 1 {
        // Both candidate assignments of the single rule.
        let all_lower = km_centroid(order, y, lower, upper, 1, Bound::Upper);
        let all_upper = km_centroid(order, y, lower, upper, 1, Bound::Lower);
        let pick_upper = match bound {
            Bound::Lower => all_upper < all_lower,
            Bound::Upper => all_upper > all_lower,
        };
        let value = if pick_upper { all_upper } else { all_lower };
        return Ok((value, vec![pick_upper]));
    }

    let mut num = 0.0;
    let mut den = 0.0;
    for &i in order {
        let f = 0.5 * (lower[i] + upper[i]);
        num += f * y[i];
        den += f;
    }
    let mut k = km_switch_point(order, y, num / (den + FIRING_EPS));
    for _ in 0..KM_MAX_ITERATIONS {
        let centroid = km_centroid(order, y, lower, upper, k, bound);
        let next = km_switch_point(order, y, centroid);
        if next == k {
            return Ok((centroid, switches_for(k)));
        }
        k = next;
    }
    Err(FlsError::numeric(
        "karnik-mendel",
        format!("switch point did not settle within {KM_MAX_ITERATIONS} iterations"),
    ))
}

/// Karnik–Mendel reduction of one sample and output.
///
/// Returns `(y_lo, lower switches, y_hi, upper switches)`.
pub fn km_single(y: &[f64], lower: &[f64], upper: &[f64]) -> Result<(f64, Vec<bool>, f64, Vec<bool>)> {
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    let (lo, lo_sw) = km_endpoint(&order, y, lower, upper, Bound::Lower)?;
    let (hi, hi_sw) = km_endpoint(&order, y, lower, upper, Bound::Upper)?;
    Ok((lo, lo_sw, hi, hi_sw))
}

/// Karnik–Mendel reduction with the attaining switching vectors.
pub fn reduce_km_traced(f: &FiringStrengths, yp: &ConsequentOutputs) -> Result<ReductionTrace> {
    let (lower, upper) = it2_firings(f)?;
    check_shapes(&lower, &upper, yp)?;
    let (b, p) = lower.dim();
    let d = yp.outputs();
    let mut trace = ReductionTrace {
        interval: TypeReducedInterval {
            lower: Array2::zeros((b, d)),
            upper: Array2::zeros((b, d)),
        },
        lower_switches: Array3::from_elem((b, d, p), false),
        upper_switches: Array3::from_elem((b, d, p), false),
    };
    for bi in 0..b {
        let lo = lower.row(bi).to_vec();
        let hi = upper.row(bi).to_vec();
        for di in 0..d {
            let y = yp.0.index_axis(Axis(0), bi).row(di).to_vec();
            let (ylo, lo_sw, yhi, hi_sw) = km_single(&y, &lo, &hi)?;
            trace.interval.lower[[bi, di]] = ylo;
            trace.interval.upper[[bi, di]] = yhi;
            for pi in 0..p {
                trace.lower_switches[[bi, di, pi]] = lo_sw[pi];
                trace.upper_switches[[bi, di, pi]] = hi_sw[pi];
            }
        }
    }
    Ok(trace)
}

/// Type reduction by the iterative Karnik–Mendel algorithm.
pub fn reduce_km(f: &FiringStrengths, yp: &ConsequentOutputs) -> Result<TypeReducedInterval> {
    reduce_km_traced(f, yp).map(|t| t.interval)
}

/// Defuzzified output: the midpoint of the type-reduced interval.
pub fn it2_output(interval: &TypeReducedInterval) -> Array2<f64> {
    (&interval.lower + &interval.upper) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference_t1::t1_output;
    use ndarray::{array, s};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn worked_instance() -> (FiringStrengths, ConsequentOutputs) {
        (
            FiringStrengths::IT2 {
                lower: array![[0.2, 0.2]],
                upper: array![[0.8, 0.8]],
            },
            ConsequentOutputs(Array3::from_shape_vec((1, 1, 2), vec![0.0, 1.0]).unwrap()),
        )
    }

    fn random_instance(rng: &mut ChaCha8Rng, b: usize, d: usize, p: usize) -> (FiringStrengths, ConsequentOutputs) {
        let mut lower = Array2::zeros((b, p));
        let mut upper = Array2::zeros((b, p));
        for (l, u) in lower.iter_mut().zip(upper.iter_mut()) {
            let (x, y): (f64, f64) = (rng.gen(), rng.gen());
            *l = x.min(y);
            *u = x.max(y);
        }
        let yp = Array3::from_shape_fn((b, d, p), |_| rng.gen_range(-5.0..5.0));
        (FiringStrengths::IT2 { lower, upper }, ConsequentOutputs(yp))
    }

    /// Direct evaluation of every column with an explicit `u` matrix.
    fn brute_force(f: &FiringStrengths, yp: &ConsequentOutputs) -> (Array2<f64>, Array2<f64>) {
        let FiringStrengths::IT2 { lower, upper } = f else { unreachable!() };
        let (b, p) = lower.dim();
        let d = yp.outputs();
        let matrix = SwitchMatrix::new(p).unwrap();
        let columns: Vec<Vec<u8>> = (0..matrix.columns()).map(|j| matrix.column(j)).collect();
        let mut lo = Array2::from_elem((b, d), f64::INFINITY);
        let mut hi = Array2::from_elem((b, d), f64::NEG_INFINITY);
        for bi in 0..b {
            for di in 0..d {
                for u in &columns {
                    let mut x = 0.0;
                    let mut z = 0.0;
                    for pi in 0..p {
                        let fp = if u[pi] == 1 { upper[[bi, pi]] } else { lower[[bi, pi]] };
                        x += fp * yp.0[[bi, di, pi]];
                        z += fp;
                    }
                    let y = x / (z + FIRING_EPS);
                    lo[[bi, di]] = lo[[bi, di]].min(y);
                    hi[[bi, di]] = hi[[bi, di]].max(y);
                }
            }
        }
        (lo, hi)
    }

    #[test]
    fn switch_matrix_small() {
        assert_eq!(SwitchMatrix::new(1).unwrap().to_rows(), vec![vec![0, 1]]);
        let rows = SwitchMatrix::new(3).unwrap().to_rows();
        assert_eq!(
            rows,
            vec![
                vec![0, 0, 0, 0, 1, 1, 1, 1],
                vec![0, 0, 1, 1, 0, 0, 1, 1],
                vec![0, 1, 0, 1, 0, 1, 0, 1],
            ]
        );
    }

    #[test]
    fn switch_matrix_columns_distinct() {
        let u = SwitchMatrix::new(4).unwrap();
        let mut cols: Vec<Vec<u8>> = (0..u.columns()).map(|j| u.column(j)).collect();
        assert_eq!(cols.len(), 16);
        assert!(cols.iter().all(|c| c.iter().map(|&v| v as usize).sum::<usize>() <= 4));
        cols.sort();
        cols.dedup();
        assert_eq!(cols.len(), 16);
    }

    #[test]
    fn switch_matrix_capacity() {
        assert!(matches!(
            SwitchMatrix::new(21),
            Err(FlsError::Capacity { rules: 21, max: 20 })
        ));
        assert!(SwitchMatrix::new(0).is_err());
        assert_eq!(SwitchMatrix::new(20).unwrap().columns(), 1 << 20);
    }

    #[test]
    fn worked_instance_both_reducers() {
        let (f, yp) = worked_instance();
        let u = SwitchMatrix::new(2).unwrap();
        let e = reduce_enum_indexed(&f, &yp, &u).unwrap();
        assert!((e.interval.lower[[0, 0]] - 0.2).abs() < 1e-11);
        assert!((e.interval.upper[[0, 0]] - 0.8).abs() < 1e-11);
        // Column 2 is u = (1, 0); column 1 is u = (0, 1).
        assert_eq!(e.argmin[[0, 0]], 2);
        assert_eq!(e.argmax[[0, 0]], 1);
        let k = reduce_km(&f, &yp).unwrap();
        assert!((k.lower[[0, 0]] - 0.2).abs() < 1e-11);
        assert!((k.upper[[0, 0]] - 0.8).abs() < 1e-11);
        assert!((it2_output(&e.interval)[[0, 0]] - 0.5).abs() < 1e-11);
    }

    #[test]
    fn zero_width_interval_matches_t1() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (f, yp) = random_instance(&mut rng, 3, 2, 4);
        let FiringStrengths::IT2 { upper, .. } = &f else { unreachable!() };
        let same = FiringStrengths::IT2 {
            lower: upper.clone(),
            upper: upper.clone(),
        };
        let t1 = t1_output(upper.view(), &yp).unwrap();
        let e = reduce_enum(&same, &yp, &SwitchMatrix::new(4).unwrap()).unwrap();
        assert_eq!(e.lower, t1);
        assert_eq!(e.upper, t1);
        assert_eq!(it2_output(&e), t1);
        let k = reduce_km(&same, &yp).unwrap();
        for (a, b) in k.lower.iter().zip(t1.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_rule_returns_consequent() {
        let f = FiringStrengths::IT2 {
            lower: array![[0.3]],
            upper: array![[0.7]],
        };
        let yp = ConsequentOutputs(Array3::from_elem((1, 1, 1), 2.5));
        let k = reduce_km(&f, &yp).unwrap();
        let e = reduce_enum(&f, &yp, &SwitchMatrix::new(1).unwrap()).unwrap();
        for v in [k.lower[[0, 0]], k.upper[[0, 0]], e.lower[[0, 0]], e.upper[[0, 0]]] {
            assert!((v - 2.5).abs() < 1e-10);
        }
    }

    #[test]
    fn midpoint() {
        let interval = TypeReducedInterval {
            lower: array![[0.2, 3.0]],
            upper: array![[0.8, 3.0]],
        };
        let out = it2_output(&interval);
        assert!((out[[0, 0]] - 0.5).abs() < 1e-15);
        assert_eq!(out[[0, 1]], 3.0);
    }

    #[test]
    fn rejects_t1_firings_and_bad_shapes() {
        let yp = ConsequentOutputs(Array3::zeros((1, 1, 2)));
        let t1 = FiringStrengths::T1(array![[0.5, 0.5]]);
        assert!(reduce_km(&t1, &yp).is_err());
        let (f, _) = worked_instance();
        assert!(reduce_enum(&f, &yp, &SwitchMatrix::new(3).unwrap()).is_err());
        let wrong = ConsequentOutputs(Array3::zeros((2, 1, 2)));
        assert!(reduce_km(&f, &wrong).is_err());
    }

    #[test]
    fn enumeration_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in [1, 2, 5, 9, 11, 13] {
            let (f, yp) = random_instance(&mut rng, 3, 2, p);
            let e = reduce_enum(&f, &yp, &SwitchMatrix::new(p).unwrap()).unwrap();
            let (lo, hi) = brute_force(&f, &yp);
            for (a, b) in e.lower.iter().zip(lo.iter()).chain(e.upper.iter().zip(hi.iter())) {
                assert!((a - b).abs() < 1e-12, "P={p}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn oracle_equivalence_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..300 {
            let p = rng.gen_range(1..=10);
            let b = rng.gen_range(1..=8);
            let d = rng.gen_range(1..=2);
            let (f, yp) = random_instance(&mut rng, b, d, p);
            let e = reduce_enum(&f, &yp, &SwitchMatrix::new(p).unwrap()).unwrap();
            let k = reduce_km(&f, &yp).unwrap();
            for (a, c) in e.lower.iter().zip(k.lower.iter()).chain(e.upper.iter().zip(k.upper.iter())) {
                assert!((a - c).abs() <= 1e-9, "P={p}: {a} vs {c}");
            }
        }
    }

    #[test]
    fn bracketing_and_attained_indices() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = rng.gen_range(1..=8);
            let (f, yp) = random_instance(&mut rng, 4, 2, p);
            let u = SwitchMatrix::new(p).unwrap();
            let r = reduce_enum_indexed(&f, &yp, &u).unwrap();
            let FiringStrengths::IT2 { lower, upper } = &f else { unreachable!() };
            for bi in 0..4 {
                if lower.row(bi).sum() <= 1e-6 {
                    continue;
                }
                for di in 0..2 {
                    let ys = yp.0.slice(s![bi, di, ..]);
                    let min = ys.iter().cloned().fold(f64::INFINITY, f64::min);
                    let max = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let (lo, hi) = (r.interval.lower[[bi, di]], r.interval.upper[[bi, di]]);
                    assert!(lo <= hi);
                    assert!(lo >= min - 1e-9 && hi <= max + 1e-9);
                    // Re-evaluate the attaining columns directly.
                    for (j, want) in [(r.argmin[[bi, di]], lo), (r.argmax[[bi, di]], hi)] {
                        assert!(j < u.columns());
                        let (mut x, mut z) = (0.0, 0.0);
                        for pi in 0..p {
                            let fp = if u.entry(pi, j) == 1 { upper[[bi, pi]] } else { lower[[bi, pi]] };
                            x += fp * ys[pi];
                            z += fp;
                        }
                        assert!((x / (z + FIRING_EPS) - want).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn widening_lower_firing_never_shrinks_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let p = rng.gen_range(1..=7);
            let (f, yp) = random_instance(&mut rng, 3, 1, p);
            let FiringStrengths::IT2 { lower, upper } = &f else { unreachable!() };
            let shrunk = lower.mapv(|v| v * rng.gen_range(0.0..1.0));
            let g = FiringStrengths::IT2 {
                lower: shrunk,
                upper: upper.clone(),
            };
            let u = SwitchMatrix::new(p).unwrap();
            let a = reduce_enum(&f, &yp, &u).unwrap();
            let b = reduce_enum(&g, &yp, &u).unwrap();
            for i in 0..3 {
                assert!(b.lower[[i, 0]] <= a.lower[[i, 0]] + 1e-12);
                assert!(b.upper[[i, 0]] >= a.upper[[i, 0]] - 1e-12);
            }
        }
    }

    #[test]
    fn batch_equals_rowwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (f, yp) = random_instance(&mut rng, 6, 2, 6);
        let FiringStrengths::IT2 { lower, upper } = &f else { unreachable!() };
        let u = SwitchMatrix::new(6).unwrap();
        let all = reduce_enum(&f, &yp, &u).unwrap();
        for bi in 0..6 {
            let one = reduce_enum(
                &FiringStrengths::IT2 {
                    lower: lower.slice(s![bi..bi + 1, ..]).to_owned(),
                    upper: upper.slice(s![bi..bi + 1, ..]).to_owned(),
                },
                &ConsequentOutputs(yp.0.slice(s![bi..bi + 1, .., ..]).to_owned()),
                &u,
            )
            .unwrap();
            assert_eq!(one.lower.row(0), all.lower.row(bi));
            assert_eq!(one.upper.row(0), all.upper.row(bi));
        }
    }

    #[test]
    fn traced_switches_reproduce_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (f, yp) = random_instance(&mut rng, 4, 2, 5);
        let FiringStrengths::IT2 { lower, upper } = &f else { unreachable!() };
        for trace in [reduce_enum_traced(&f, &yp).unwrap(), reduce_km_traced(&f, &yp).unwrap()] {
            for bi in 0..4 {
                for di in 0..2 {
                    for (sw, want) in [
                        (&trace.lower_switches, trace.interval.lower[[bi, di]]),
                        (&trace.upper_switches, trace.interval.upper[[bi, di]]),
                    ] {
                        let (mut x, mut z) = (0.0, 0.0);
                        for pi in 0..5 {
                            let fp = if sw[[bi, di, pi]] { upper[[bi, pi]] } else { lower[[bi, pi]] };
                            x += fp * yp.0[[bi, di, pi]];
                            z += fp;
                        }
                        assert!((x / (z + FIRING_EPS) - want).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn all_zero_firings_are_defined() {
        let f = FiringStrengths::IT2 {
            lower: Array2::zeros((1, 3)),
            upper: Array2::zeros((1, 3)),
        };
        let yp = ConsequentOutputs(Array3::from_shape_vec((1, 1, 3), vec![1.0, 2.0, 3.0]).unwrap());
        let e = reduce_enum(&f, &yp, &SwitchMatrix::new(3).unwrap()).unwrap();
        let k = reduce_km(&f, &yp).unwrap();
        assert_eq!(e.lower[[0, 0]], 0.0);
        assert_eq!(k.upper[[0, 0]], 0.0);
    }

    #[test]
    fn large_rule_count_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (f, yp) = random_instance(&mut rng, 2, 1, 16);
        let e = reduce_enum(&f, &yp, &SwitchMatrix::new(16).unwrap()).unwrap();
        let k = reduce_km(&f, &yp).unwrap();
        for (a, c) in e.lower.iter().zip(k.lower.iter()).chain(e.upper.iter().zip(k.upper.iter())) {
            assert!((a - c).abs() <= 1e-9);
        }
    }
}
