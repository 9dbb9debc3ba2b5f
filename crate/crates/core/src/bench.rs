//! Timing of enumeration against Karnik–Mendel type reduction.

use std::io::Write;
use std::time::Instant;

use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{FlsError, Result};
use crate::inference_it2::{km_single, reduce_enum, SwitchMatrix, TypeReducedInterval};
use crate::inference_t1::ConsequentOutputs;
use crate::membership::FiringStrengths;

/// Maximum elementwise disagreement tolerated before timing.
pub const AGREEMENT_TOL: f64 = 1e-9;

pub const CSV_HEADER: &str = "P,B,t_enum_s,t_km_s,speedup,enum_threads,km_threads";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchConfig {
    pub rules: usize,
    /// Samples per enumeration call.
    pub batch: usize,
    /// Samples per timed repeat.
    pub samples: usize,
    pub repeats: usize,
    pub outputs: usize,
    pub seed: u64,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        SwitchMatrix::new(self.rules).map_err(|e| match e {
            FlsError::Parameter(msg) => FlsError::Config(msg),
            other => other,
        })?;
        for (name, v) in [
            ("batch", self.batch),
            ("samples", self.samples),
            ("repeats", self.repeats),
            ("outputs", self.outputs),
        ] {
            if v == 0 {
                return Err(FlsError::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// One type-reduction problem with `B` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub firings: FiringStrengths,
    pub consequents: ConsequentOutputs,
}

/// Random valid firing intervals `0 <= f̲ <= f̄ <= 1` and consequents in `[-5, 5]`.
pub fn random_instance<R: Rng>(rng: &mut R, rules: usize, batch: usize, outputs: usize) -> Instance {
    let upper = Array2::from_shape_fn((batch, rules), |_| rng.gen_range(0.05..1.0));
    let lower = upper.mapv(|u| u * rng.gen_range(0.0..1.0));
    let yp = Array3::from_shape_fn((batch, outputs, rules), |_| rng.gen_range(-5.0..5.0));
    Instance {
        firings: FiringStrengths::IT2 { lower, upper },
        consequents: ConsequentOutputs(yp),
    }
}

fn firing_views(f: &FiringStrengths) -> (&Array2<f64>, &Array2<f64>) {
    match f {
        FiringStrengths::IT2 { lower, upper } => (lower, upper),
        FiringStrengths::T1(_) => unreachable!("bench instances are interval type-2"),
    }
}

/// Sequential per-sample Karnik–Mendel loop.
pub fn km_loop(instance: &Instance) -> Result<TypeReducedInterval> {
    let (lower, upper) = firing_views(&instance.firings);
    let yp = &instance.consequents.0;
    let (b, d) = (yp.shape()[0], yp.shape()[1]);
    let mut out = TypeReducedInterval {
        lower: Array2::zeros((b, d)),
        upper: Array2::zeros((b, d)),
    };
    for bi in 0..b {
        let lo = lower.row(bi);
        let hi = upper.row(bi);
        let (lo, hi) = (lo.as_slice().expect("standard layout"), hi.as_slice().expect("standard layout"));
        for (di, y) in yp.index_axis(Axis(0), bi).outer_iter().enumerate() {
            let (ylo, _, yhi, _) = km_single(y.as_slice().expect("standard layout"), lo, hi)?;
            out.lower[[bi, di]] = ylo;
            out.upper[[bi, di]] = yhi;
        }
    }
    Ok(out)
}

fn max_gap(a: &TypeReducedInterval, b: &TypeReducedInterval) -> f64 {
    a.lower
        .iter()
        .zip(&b.lower)
        .chain(a.upper.iter().zip(&b.upper))
        .fold(0.0, |m: f64, (x, y)| {
            let d = (x - y).abs();
            if d.is_nan() || d > m {
                d
            } else {
                m
            }
        })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub rules: usize,
    pub batch: usize,
    pub t_enum_s: f64,
    pub t_km_s: f64,
    pub speedup: f64,
    pub enum_threads: usize,
    pub km_threads: usize,
    /// Largest endpoint disagreement seen during verification.
    pub max_abs_diff: f64,
}

impl BenchRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.9},{:.9},{:.6},{},{}",
            self.rules, self.batch, self.t_enum_s, self.t_km_s, self.speedup, self.enum_threads, self.km_threads
        )
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Verifies agreement on every instance, then times both reducers.
///
/// Each repeat reduces `samples` rows: enumeration in calls of `batch`
/// samples spread over the rayon pool, KM one sample at a time.
pub fn run_bench(config: &BenchConfig) -> Result<BenchRow> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut instances = Vec::new();
    let mut left = config.samples;
    while left > 0 {
        let b = left.min(config.batch);
        instances.push(random_instance(&mut rng, config.rules, b, config.outputs));
        left -= b;
    }
    let u = SwitchMatrix::new(config.rules)?;

    let mut worst: f64 = 0.0;
    for inst in &instances {
        let e = reduce_enum(&inst.firings, &inst.consequents, &u)?;
        let k = km_loop(inst)?;
        let gap = max_gap(&e, &k);
        if gap.is_nan() || gap > AGREEMENT_TOL {
            return Err(FlsError::numeric(
                "bench verification",
                format!("enumeration and Karnik-Mendel differ by {gap:e}"),
            ));
        }
        worst = worst.max(gap);
    }

    let mut t_enum = Vec::with_capacity(config.repeats);
    let mut t_km = Vec::with_capacity(config.repeats);
    for _ in 0..config.repeats {
        let start = Instant::now();
        for inst in &instances {
            std::hint::black_box(reduce_enum(&inst.firings, &inst.consequents, &u)?);
        }
        t_enum.push(start.elapsed().as_secs_f64());

        let start = Instant::now();
        for inst in &instances {
            std::hint::black_box(km_loop(inst)?);
        }
        t_km.push(start.elapsed().as_secs_f64());
    }
    let t_enum_s = median(t_enum).max(f64::MIN_POSITIVE);
    let t_km_s = median(t_km).max(f64::MIN_POSITIVE);
    Ok(BenchRow {
        rules: config.rules,
        batch: config.batch,
        t_enum_s,
        t_km_s,
        speedup: t_km_s / t_enum_s,
        enum_threads: rayon::current_num_threads(),
        km_threads: 1,
        max_abs_diff: worst,
    })
}

/// Writes the header and one line per row.
pub fn write_csv<W: Write>(mut out: W, rows: &[BenchRow]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.csv_line())?;
    }
    Ok(())
}
