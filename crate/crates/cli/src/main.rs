//! `more`: verification suites, projection, training, sweeps, benchmarks and
//! checkpoint diagnostics for Monarch adapters.
//!
//! Exit codes: 0 success, 1 invariant violation or runtime failure, 2 bad
//! input or configuration.

mod overrides;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use more_core::harness::{format_records, sweep, train_with_model, weight_stats, SweepConfig, TrainConfig};
use more_core::monarch::{apply_flops, dense_flops, flop_ratio, Adapter};
use more_core::numerics::read_matrix;
use more_core::projection::project;
use more_core::verify::{self, Suite};
use more_core::{Checkpoint, DenseMatrix, Error, MonarchAdapter, MonarchConfig, DEFAULT_SEED};

#[derive(Parser)]
#[command(name = "more", version, about = "Monarch adapter toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded invariant suites; exit 1 on any violation.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: SuiteArg,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Project a dense matrix onto the Monarch class.
    Project {
        /// Matrix in text format.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        blocks: usize,
        #[arg(long)]
        block_rank: usize,
        /// Checkpoint output path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Recorded in the checkpoint.
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Train one adapter on a planted task.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// `key.path=value`, applied before validation.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Records file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Save the trained adapter.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train every point of a grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// FLOP model and wall time of apply against a dense mat-mul.
    Bench {
        #[arg(long, default_value_t = 1024)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        blocks: usize,
        #[arg(long, default_value_t = 8)]
        block_rank: usize,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Moments and histograms of a checkpoint's factors.
    Stats {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Core,
    Theory,
    Grad,
    Projection,
    All,
}

impl SuiteArg {
    fn suites(self) -> Vec<Suite> {
        match self {
            SuiteArg::Core => vec![Suite::Core],
            SuiteArg::Theory => vec![Suite::Theory],
            SuiteArg::Grad => vec![Suite::Grad],
            SuiteArg::Projection => vec![Suite::Projection],
            SuiteArg::All => Suite::ALL.to_vec(),
        }
    }
}

/// A failed command and its exit code.
#[derive(Debug)]
enum Failure {
    Input(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Verify { suite, seed, out } => cmd_verify(suite, seed, out.as_deref()),
        Command::Project {
            input,
            blocks,
            block_rank,
            out,
            seed,
        } => cmd_project(&input, blocks, block_rank, out.as_deref(), seed),
        Command::Train {
            config,
            seed,
            overrides,
            out,
            checkpoint,
        } => cmd_train(&config, seed, &overrides, out.as_deref(), checkpoint.as_deref()),
        Command::Sweep {
            config,
            seed,
            overrides,
            out,
        } => cmd_sweep(&config, seed, &overrides, out.as_deref()),
        Command::Bench {
            n,
            blocks,
            block_rank,
            batch,
            repeats,
            seed,
        } => cmd_bench(n, blocks, block_rank, batch, repeats, seed),
        Command::Stats { checkpoint } => cmd_stats(&checkpoint),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn cmd_verify(suite: SuiteArg, seed: u64, out: Option<&Path>) -> CmdResult {
    let report = verify::run(&suite.suites(), seed);
    println!("seed {seed}");
    for s in &report.suites {
        for c in &s.checks {
            println!(
                "{:<11} {:<30} runs {:>4}  violations {:>3}  {} {:.3e}",
                s.suite.name(),
                c.name,
                c.runs,
                c.violations,
                c.metric,
                c.worst
            );
        }
    }
    if let Some(path) = out {
        let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.to_string()))?;
        write_text(path, &(json + "\n"))?;
    }
    match report.first_failure() {
        None => {
            println!(
                "ok: {} checks, 0 violations",
                report.suites.iter().map(|s| s.checks.len()).sum::<usize>()
            );
            Ok(())
        }
        Some(first) => Err(Failure::Runtime(format!(
            "{} violations; first failure: {first}",
            report.violations()
        ))),
    }
}

fn cmd_project(input: &Path, blocks: usize, block_rank: usize, out: Option<&Path>, seed: u64) -> CmdResult {
    let a = read_matrix(input)?;
    if a.rows() != a.cols() {
        return Err(Failure::Input(format!(
            "input is {}x{}, expected square",
            a.rows(),
            a.cols()
        )));
    }
    let config = MonarchConfig::new(a.rows(), blocks, block_rank)?;
    let report = project(&a, &config)?;
    println!("error_sq {:.9e}", report.error_sq);
    println!("ratio {:.9}", report.ratio(&a));
    println!("k_out k_in residual_sq");
    for ((k_out, k_in), r) in &report.per_block_residuals {
        println!("{k_out:>5} {k_in:>4} {r:.9e}");
    }
    if let Some(path) = out {
        write_text(path, &Checkpoint::from_adapter(&report.adapter, seed).to_json())?;
    }
    Ok(())
}

fn load_config<T>(path: &Path, overrides: &[String], parse: fn(&str) -> more_core::Result<T>) -> Result<T, Failure>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let parsed = parse(&read_text(path)?)?;
    overrides::apply(parsed, overrides).map_err(Failure::Input)
}

fn summary(r: &more_core::harness::RunRecord) -> String {
    format!(
        "{} {} N={} r_blk={} params={} seed={} steps={} final_loss={:.6e} recovery_error={:.6e}",
        r.task, r.adapter, r.blocks, r.block_rank, r.params, r.seed, r.steps, r.final_loss, r.recovery_error
    )
}

fn cmd_train(
    path: &Path,
    seed: Option<u64>,
    overrides: &[String],
    out: Option<&Path>,
    checkpoint: Option<&Path>,
) -> CmdResult {
    let mut config = load_config(path, overrides, TrainConfig::from_json)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    config.validate()?;
    let outcome = train_with_model(&config)?;
    println!("{}", summary(&outcome.record));
    if let Some(path) = out {
        write_text(path, &format_records([&outcome.record]))?;
    }
    if let Some(path) = checkpoint {
        let adapter = match outcome.layer.adapter() {
            Adapter::Monarch(a) => a.clone(),
            // A rank-r LoRA pair is the single-block Monarch adapter with the
            // same factors.
            Adapter::Lora(l) => MonarchAdapter::from_factors(
                MonarchConfig::new(l.n(), 1, l.rank())?,
                l.down().data().to_vec(),
                l.up().data().to_vec(),
            )?,
        };
        write_text(path, &Checkpoint::from_adapter(&adapter, config.seed).to_json())?;
    }
    Ok(())
}

fn cmd_sweep(path: &Path, seed: Option<u64>, overrides: &[String], out: Option<&Path>) -> CmdResult {
    let mut config = load_config(path, overrides, SweepConfig::from_json)?;
    if let Some(seed) = seed {
        config.base.seed = seed;
    }
    config.base.validate()?;
    let entries = sweep(&config);
    let mut failed = None;
    for e in &entries {
        match &e.outcome {
            Ok(r) => println!("[{}] {}", e.index, summary(r)),
            Err(reason) => {
                println!("[{}] {:?}: {reason}", e.index, e.adapter);
                if !reason.starts_with("skipped") && failed.is_none() {
                    failed = Some(format!("grid point {}: {reason}", e.index));
                }
            }
        }
    }
    if let Some(path) = out {
        write_text(
            path,
            &format_records(entries.iter().filter_map(|e| e.outcome.as_ref().ok())),
        )?;
    }
    match failed {
        Some(msg) => Err(Failure::Runtime(msg)),
        None => Ok(()),
    }
}

fn median_micros(repeats: usize, mut f: impl FnMut()) -> f64 {
    let mut times: Vec<f64> = (0..repeats)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64() * 1e6
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    if times.len().is_multiple_of(2) {
        (times[mid - 1] + times[mid]) / 2.0
    } else {
        times[mid]
    }
}

fn cmd_bench(n: usize, blocks: usize, block_rank: usize, batch: usize, repeats: usize, seed: u64) -> CmdResult {
    if repeats == 0 || batch == 0 {
        return Err(Failure::Input("repeats and batch must be positive".into()));
    }
    let config = MonarchConfig::new(n, blocks, block_rank)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let adapter = MonarchAdapter::random_normal(config, 1.0, &mut rng)?;
    let dense = DenseMatrix::random_normal(n, n, 1.0, &mut rng);
    let x = DenseMatrix::random_normal(batch, n, 1.0, &mut rng);

    let (monarch_flops, full_flops) = (apply_flops(&config, batch), dense_flops(n, batch));
    let (num, den) = flop_ratio(&config);
    let t_monarch = median_micros(repeats, || {
        std::hint::black_box(adapter.apply(&x).expect("shape checked"));
    });
    let t_dense = median_micros(repeats, || {
        std::hint::black_box(x.matmul_transposed(&dense).expect("shape checked"));
    });
    let gflops = |flops: usize, us: f64| {
        if us > 0.0 {
            flops as f64 / us / 1e3
        } else {
            f64::INFINITY
        }
    };

    let mut table = String::new();
    let _ = writeln!(
        table,
        "n={n} blocks={blocks} block_rank={block_rank} batch={batch} repeats={repeats} seed={seed}"
    );
    let _ = writeln!(
        table,
        "{:<8} {:>14} {:>14} {:>10}",
        "kernel", "flops", "median_us", "gflop/s"
    );
    let _ = writeln!(
        table,
        "{:<8} {:>14} {:>14.1} {:>10.3}",
        "monarch",
        monarch_flops,
        t_monarch,
        gflops(monarch_flops, t_monarch)
    );
    let _ = writeln!(
        table,
        "{:<8} {:>14} {:>14.1} {:>10.3}",
        "dense",
        full_flops,
        t_dense,
        gflops(full_flops, t_dense)
    );
    let _ = writeln!(table, "flop ratio {num}/{den}");
    print!("{table}");
    Ok(())
}

fn cmd_stats(path: &Path) -> CmdResult {
    let checkpoint = Checkpoint::from_json(&read_text(path)?)?;
    let adapter = checkpoint.to_adapter()?;
    let c = adapter.config();
    println!(
        "n={} blocks={} block_rank={} seed={}",
        c.n, c.blocks, c.block_rank, checkpoint.seed
    );
    let stats = weight_stats(&adapter);
    for f in &stats.factors {
        println!(
            "{} count={} mean={} std={} excess_kurtosis={}",
            f.name, f.count, f.mean, f.std, f.excess_kurtosis
        );
        let counts: Vec<String> = f.histogram.counts.iter().map(usize::to_string).collect();
        println!(
            "  histogram [{}, {}] {}",
            f.histogram.min,
            f.histogram.max,
            counts.join(" ")
        );
    }
    println!("total {}", stats.total_count());
    Ok(())
}
