//! `bench run <config>`, `bench gradcheck`, `bench summarize <dir>`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use neuroplastic::error::{Error, Result};
use neuroplastic::experiment::{run_experiment, ExperimentConfig, Overrides};
use neuroplastic::model::{grad_check, Mlp};
use neuroplastic::output::{self, emit_outputs};
use neuroplastic::rng::SplitMix64;
use neuroplastic::tensor::Tensor;

#[derive(Parser)]
#[command(name = "bench", about = "Optimizer benchmark runner", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (fraction, seed, optimizer, lr) cell of a config.
    Run(RunArgs),
    /// Finite-difference check of the MLP backward pass.
    Gradcheck(GradcheckArgs),
    /// Recompute summary.json and curves.svg from a results directory.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Comma-separated learning rates.
    #[arg(long, value_delimiter = ',')]
    lr: Option<Vec<f64>>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated training-set fractions.
    #[arg(long, value_delimiter = ',')]
    fraction: Option<Vec<f64>>,
    /// Comma-separated optimizer names to keep.
    #[arg(long, value_delimiter = ',')]
    optimizer: Option<Vec<String>>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Layer sizes, input first.
    #[arg(long, value_delimiter = ',', default_value = "20,16,10")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Probe at most this many coordinates per tensor.
    #[arg(long)]
    max_coords: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SummarizeArgs {
    dir: PathBuf,
    /// Optimizer to measure deltas against.
    #[arg(long)]
    reference: Option<String>,
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    cfg.apply(&Overrides {
        lrs: args.lr,
        seeds: args.seeds,
        fractions: args.fraction,
        optimizers: args.optimizer,
        epochs: args.epochs,
        out_dir: args.out,
    })?;
    cfg.validate()?;

    let config_dir = args.config.parent().map(Path::to_path_buf);
    let (train, test) = cfg.load_data(config_dir.as_deref())?;
    eprintln!(
        "{} runs: {} train / {} test examples, {} features, {} classes",
        cfg.run_count(),
        train.len(),
        test.len(),
        train.dim(),
        train.num_classes()
    );

    let start = Instant::now();
    let quiet = args.quiet;
    let records = run_experiment(&cfg, &train, &test, &|r| {
        if !quiet {
            let last = r.epochs.last();
            eprintln!(
                "[{:7.1}s] {:<40} {} acc={:.4}",
                start.elapsed().as_secs_f64(),
                r.run_id,
                r.status.as_str(),
                last.map_or(f64::NAN, |e| e.test_accuracy)
            );
        }
    })?;
    emit_outputs(&records, cfg.reference.as_deref(), &cfg.out_dir)?;
    if let Ok(table) = neuroplastic::summarize_seeds(&records, cfg.reference.as_deref()) {
        print_summary(&table);
    }
    eprintln!("wrote {}", cfg.out_dir.display());
    Ok(())
}

fn print_summary(table: &neuroplastic::SummaryTable) {
    println!(
        "{:<24} {:>10} {:>8} {:>6} {:>18} {:>18} {:>10}",
        "optimizer", "lr", "fraction", "seeds", "final acc", "best acc", "delta"
    );
    for r in &table.rows {
        println!(
            "{:<24} {:>10} {:>8} {:>6} {:>9.4} ± {:<6.4} {:>9.4} ± {:<6.4} {:>10}",
            r.optimizer,
            r.lr,
            r.data_fraction,
            r.seeds.len(),
            r.final_accuracy_mean,
            r.final_accuracy_std,
            r.best_accuracy_mean,
            r.best_accuracy_std,
            r.final_delta_vs_reference
                .map_or_else(|| "-".to_string(), |d| format!("{d:+.4}"))
        );
    }
}

fn gradcheck(args: GradcheckArgs) -> Result<bool> {
    let model = Mlp::new(&args.sizes, args.seed)?;
    let (dim, classes) = (model.input_dim(), model.num_classes());
    let mut rng = SplitMix64::new(args.seed ^ 0x9E37_79B9);
    let x = Tensor::new(
        (0..args.batch * dim).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        vec![args.batch, dim],
    )?;
    let y: Vec<usize> = (0..args.batch).map(|_| rng.below(classes as u64) as usize).collect();
    let report = grad_check(&model, &x, &y, args.h, args.tol, args.max_coords, args.seed)?;
    for p in &report.params {
        println!(
            "param {:>2}: {:>6} coords, max rel error {:.3e}",
            p.index, p.checked, p.max_rel_error
        );
    }
    println!(
        "max rel error {:.3e} (tol {:.0e}): {}",
        report.max_rel_error,
        report.tol,
        if report.passed { "PASS" } else { "FAIL" }
    );
    Ok(report.passed)
}

fn summarize(args: SummarizeArgs) -> Result<()> {
    let records = output::read_results(&args.dir)?;
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    emit_outputs(&records, args.reference.as_deref(), &args.dir)?;
    print_summary(&neuroplastic::summarize_seeds(&records, args.reference.as_deref())?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Gradcheck(a) => match gradcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(3),
            Err(e) => Err(e),
        },
        Command::Summarize(a) => summarize(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
