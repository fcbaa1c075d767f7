#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shortcut_uq::data::{self, build_mnist3, DatasetKind};
use shortcut_uq::exec::Execution;
use shortcut_uq::harness::{self, report, EvalSplit, ExperimentConfig, Variant};
use shortcut_uq::verify::{self, Fault};
use shortcut_uq::{Error, Result};

const DATA_DIR_ENV: &str = "SHORTCUT_UQ_DATA_DIR";

/// Deep-ensemble uncertainty decomposition on shortcut-infused 3-class MNIST.
///
/// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
#[derive(Debug, Parser)]
#[command(name = "shortcut-uq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build and validate one dataset variant and print its counts.
    Prepare(PrepareArgs),
    /// Train the ensemble grid and write accuracy, histogram and record CSVs.
    Train(Box<TrainArgs>),
    /// Recompute histograms.csv from the per-sample records of a finished run.
    Report(ReportArgs),
    /// Run the built-in property suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct PrepareArgs {
    #[arg(long, env = DATA_DIR_ENV, default_value = "data/mnist")]
    data_dir: PathBuf,
    #[arg(long, default_value = "mnist3")]
    dataset: DatasetKind,
    #[arg(long, default_value_t = 0)]
    strength: u32,
    /// Run seed (subsampling and shortcut placement).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    n_train: usize,
    /// Also write the training set to this binary cache file.
    #[arg(long)]
    cache: Option<PathBuf>,
}

/// Every flag overrides the field of the same name in `--config`.
#[derive(Debug, Args)]
struct TrainArgs {
    /// Flat TOML file with experiment-config keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<DatasetKind>,
    #[arg(long)]
    strength: Option<u32>,
    /// Grid of `name:strength` variants, comma separated.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<Variant>>,
    #[arg(long)]
    ensemble_size: Option<usize>,
    #[arg(long)]
    n_runs: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    checkpoint_epochs: Option<Vec<usize>>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    factor: Option<f64>,
    #[arg(long)]
    min_delta: Option<f64>,
    #[arg(long)]
    base_seed: Option<u64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    eval_splits: Option<Vec<EvalSplit>>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    n_bins: Option<usize>,
    #[arg(long)]
    write_records: Option<bool>,
    /// Train members one after another instead of in parallel.
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Output directory of `train` (or one variant subdirectory).
    #[arg(long = "in")]
    input: PathBuf,
    /// Where to write histograms.csv; defaults to the input directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    n_bins: Option<usize>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Add a deliberately broken fixture (`simplex`) to show a failing check.
    #[arg(long)]
    inject_fault: Option<Fault>,
}

macro_rules! apply {
    ($cfg:ident, $args:ident, $($field:ident),+) => {
        $(if let Some(v) = $args.$field.clone() { $cfg.$field = v; })+
    };
}

impl TrainArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        let args = self;
        apply!(
            cfg,
            args,
            dataset,
            strength,
            variants,
            ensemble_size,
            n_runs,
            epochs,
            batch_size,
            lr,
            weight_decay,
            patience,
            factor,
            min_delta,
            base_seed,
            n_train,
            data_dir,
            out_dir,
            eval_splits,
            fraction,
            n_bins,
            write_records
        );
        if let Some(c) = &self.checkpoint_epochs {
            cfg.checkpoint_epochs = Some(c.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn cmd_prepare(args: &PrepareArgs) -> Result<()> {
    let raw = data::load_raw(&args.data_dir)?;
    let variant = Variant::new(args.dataset, args.strength);
    let cfg = ExperimentConfig { n_train: args.n_train, base_seed: args.seed, ..Default::default() };
    let splits = harness::prepare_run(&cfg, &raw, variant, 0)?;
    for set in [&splits.test_ind, &splits.test_ood] {
        set.validate()?;
    }
    let c = splits.train.class_counts();
    println!(
        "{variant}: train {} images (class counts {} / {} / {}), {} with shortcut; test ind {} images; test ood {} images",
        splits.train.len(),
        c[0],
        c[1],
        c[2],
        splits.train.shortcut_count(),
        splits.test_ind.len(),
        splits.test_ood.len()
    );
    if let Some(path) = &args.cache {
        data::cache::write(&splits.train, path)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let raw = data::load_raw(&cfg.data_dir)?;
    // fail on an impossible sample size before any training starts
    build_mnist3(&raw, cfg.n_train, cfg.base_seed)?;
    let exec = if args.sequential { Execution::Sequential } else { Execution::default() };
    let epochs = cfg.epochs;
    let progress = move |v: Variant, p: &harness::EpochProgress| {
        eprintln!(
            "[{v}] run {} member {} epoch {}/{epochs} loss {:.6} lr {:.1e}",
            p.run, p.member, p.epoch, p.mean_loss, p.lr
        );
    };
    let out = harness::run_experiment(&cfg, &raw, exec, &progress)?;
    harness::write_outputs(&cfg, &out, &cfg.out_dir)?;
    for row in &out.accuracy {
        eprintln!(
            "[{}] M={} epoch {} accuracy {:.4} (stderr {:.4})",
            row.variant, row.ensemble_size, row.epoch, row.mean_accuracy, row.stderr
        );
    }
    eprintln!("wrote reports to {}", cfg.out_dir.display());
    Ok(())
}

fn copy_if_distinct(from: &Path, to: &Path) -> Result<()> {
    let same = matches!((from.canonicalize(), to.canonicalize()), (Ok(a), Ok(b)) if a == b);
    if !same && from.is_file() {
        std::fs::copy(from, to).map_err(|e| Error::io(format!("copying {}", from.display()), e))?;
    }
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    if let Some(f) = args.fraction {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!("fraction {f} must lie in (0, 1]")));
        }
    }
    if args.n_bins == Some(0) {
        return Err(Error::Config("n_bins must be positive".into()));
    }
    let out_dir = args.out.clone().unwrap_or_else(|| args.input.clone());
    let rows = harness::histograms_from_records(&args.input, args.fraction, args.n_bins)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    report::write_histograms_csv(&out_dir.join(harness::HISTOGRAMS_FILE), &rows)?;
    // accuracy needs labels, which records do not carry; pass it through
    let acc = harness::ACCURACY_FILE;
    copy_if_distinct(&args.input.join(acc), &out_dir.join(acc))?;
    eprintln!("wrote {} histogram rows to {}", rows.len(), out_dir.display());
    Ok(())
}

fn cmd_verify(args: &VerifyArgs) -> Result<bool> {
    let checks = verify::run_suite(args.inject_fault);
    for c in &checks {
        println!("{c}");
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        println!("all {} properties passed", checks.len());
    } else {
        println!("failed: {}", failed.join(", "));
    }
    Ok(failed.is_empty())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Prepare(a) => cmd_prepare(a).map(|()| true),
        Command::Train(a) => cmd_train(a).map(|()| true),
        Command::Report(a) => cmd_report(a).map(|()| true),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
