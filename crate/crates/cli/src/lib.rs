//! Command implementations behind the `fls` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::ffi::OsString;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fls_core::bench::{run_bench, write_csv, BenchConfig};
use fls_core::data::{load_csv, split, ZScore, TRAIN_FRACTION};
use fls_core::training::train_with_hook;
use fls_core::{FlsError, Model, ModelConfig, ModelKind, Reducer, TrainConfig};

#[derive(Parser)]
#[command(name = "fls", version, about = "Train and benchmark TSK fuzzy logic systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a CSV file (70/30 split, z-scored).
    Train(TrainArgs),
    /// Time enumeration against Karnik-Mendel type reduction.
    Bench(BenchArgs),
    /// Report per-output RMSE of a saved model on a CSV file.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    T1,
    It2,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReducerArg {
    Enum,
    Km,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Number of trailing target columns.
    #[arg(long, default_value_t = 1)]
    targets: usize,
    #[arg(long, value_enum, default_value = "it2")]
    model: KindArg,
    #[arg(long, default_value_t = 5)]
    rules: usize,
    #[arg(long, value_enum, default_value = "enum")]
    reducer: ReducerArg,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the trained model JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write the training report JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Directory for train.csv and test.csv in original units.
    #[arg(long)]
    save_splits: Option<PathBuf>,
    /// Suppress per-epoch loss lines.
    #[arg(long)]
    quiet: bool,
}

#[derive(clap::Args)]
struct BenchArgs {
    /// Rule counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "10")]
    rules: Vec<usize>,
    #[arg(long, default_value_t = 512)]
    batch: usize,
    #[arg(long, default_value_t = 512)]
    samples: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    outputs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 1)]
    targets: usize,
}

#[derive(Serialize)]
struct ReportConfig {
    model: ModelKind,
    rules: usize,
    reducer: Reducer,
    inputs: usize,
    outputs: usize,
    batch: usize,
    lr: f64,
    seed: u64,
    train_rows: usize,
    test_rows: usize,
}

#[derive(Serialize)]
struct Report {
    dataset: String,
    config: ReportConfig,
    epochs: usize,
    losses: Vec<f64>,
    rmse_train: Vec<f64>,
    rmse_test: Vec<f64>,
    wall_time_s: f64,
}

fn exit_code(err: &FlsError) -> u8 {
    match err {
        FlsError::Io { .. } | FlsError::Data(_) | FlsError::InsufficientData { .. } => 1,
        FlsError::Parameter(_)
        | FlsError::Dimension { .. }
        | FlsError::Capacity { .. }
        | FlsError::Config(_)
        | FlsError::ModelFormat(_) => 2,
        FlsError::Numeric { .. } => 3,
        FlsError::TrainingAborted { source, .. } => exit_code(source),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), FlsError> {
    fs::write(path, contents).map_err(|source| FlsError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn cmd_train(args: TrainArgs) -> Result<(), FlsError> {
    let kind = match args.model {
        KindArg::T1 => ModelKind::T1,
        KindArg::It2 => ModelKind::IT2,
    };
    let reducer = match args.reducer {
        ReducerArg::Enum => Reducer::Enumeration,
        ReducerArg::Km => Reducer::KarnikMendel,
    };
    let tconfig = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        learning_rate: args.lr,
        seed: args.seed,
        ..TrainConfig::default()
    };
    tconfig.validate()?;

    let table = load_csv(&args.dataset, args.targets)?;
    let config = ModelConfig::new(kind, args.rules, table.inputs(), table.outputs(), reducer)?;
    let (train_raw, test_raw) = split(&table, TRAIN_FRACTION, args.seed)?;
    if let Some(dir) = &args.save_splits {
        fs::create_dir_all(dir).map_err(|source| FlsError::Io {
            path: dir.clone(),
            source,
        })?;
        train_raw.write_csv(&dir.join("train.csv"))?;
        test_raw.write_csv(&dir.join("test.csv"))?;
    }
    let z = ZScore::fit(&train_raw)?;
    let train = z.apply(&train_raw)?;
    let test = z.apply(&test_raw)?;

    let mut stdout = std::io::stdout().lock();
    let quiet = args.quiet;
    let (raw, report) = train_with_hook(&config, &tconfig, train.samples(), test.samples(), |epoch, loss| {
        if !quiet {
            let _ = writeln!(stdout, "epoch {epoch:>4}  loss {loss:.6}");
        }
    })?;
    drop(stdout);
    for (d, (tr, te)) in report.rmse_train.iter().zip(&report.rmse_test).enumerate() {
        println!("output {}  train rmse {tr:.6}  test rmse {te:.6}", d + 1);
    }
    println!("training time {:.3} s", report.wall_time_s);

    if let Some(path) = &args.out {
        Model::new(config, raw, z)?.save(path)?;
    }
    if let Some(path) = &args.report {
        let doc = Report {
            dataset: args.dataset.display().to_string(),
            config: ReportConfig {
                model: kind,
                rules: args.rules,
                reducer,
                inputs: config.inputs,
                outputs: config.outputs,
                batch: args.batch,
                lr: args.lr,
                seed: args.seed,
                train_rows: train.rows(),
                test_rows: test.rows(),
            },
            epochs: report.epochs,
            losses: report.losses,
            rmse_train: report.rmse_train,
            rmse_test: report.rmse_test,
            wall_time_s: report.wall_time_s,
        };
        write_file(path, &to_json(&doc))?;
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), FlsError> {
    let mut rows = Vec::new();
    for &rules in &args.rules {
        let row = run_bench(&BenchConfig {
            rules,
            batch: args.batch,
            samples: args.samples,
            repeats: args.repeats,
            outputs: args.outputs,
            seed: args.seed,
        })?;
        eprintln!(
            "P={rules}: enum {:.6} s, km {:.6} s, speedup {:.2}x ({} threads), max diff {:.1e}",
            row.t_enum_s, row.t_km_s, row.speedup, row.enum_threads, row.max_abs_diff
        );
        rows.push(row);
    }
    let mut buf = Vec::new();
    write_csv(&mut buf, &rows).expect("writing to memory");
    let text = String::from_utf8(buf).expect("ascii csv");
    match &args.out {
        Some(path) => write_file(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_eval(args: EvalArgs) -> Result<(), FlsError> {
    let model = Model::load(&args.model)?;
    let table = load_csv(&args.dataset, args.targets)?;
    let rmse = model.evaluate(&table)?;
    for (d, r) in rmse.iter().enumerate() {
        println!("output {}  rmse {r:?}", d + 1);
    }
    Ok(())
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&FlsError::Data("x".into())), 1);
        assert_eq!(exit_code(&FlsError::Capacity { rules: 21, max: 20 }), 2);
        assert_eq!(exit_code(&FlsError::ModelFormat("x".into())), 2);
        let numeric = FlsError::Numeric {
            stage: "loss",
            detail: "nan".into(),
        };
        assert_eq!(exit_code(&numeric), 3);
        let wrapped = FlsError::TrainingAborted {
            epoch: 2,
            batch: 1,
            source: Box::new(numeric),
        };
        assert_eq!(exit_code(&wrapped), 3);
    }

    #[test]
    fn usage_errors_and_help() {
        assert_eq!(run(["fls", "train"]), 2);
        assert_eq!(run(["fls", "frobnicate"]), 2);
        assert_eq!(run(["fls", "--help"]), 0);
    }
}
