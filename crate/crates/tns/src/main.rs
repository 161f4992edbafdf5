//! Experiment CLI: dataset generation, training, sampling-strategy
//! sweeps, gradient verification, and checkpoint evaluation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tns::commands::{cmd_eval, cmd_gen, cmd_gradcheck, cmd_sweep, cmd_train, GradCheckOptions};
use tns::config::RunConfig;
use tns::error::Error;
use tns::sampler::Strategy;
use tns::training::SyntheticConfig;

#[derive(Parser)]
#[command(name = "tns", about = "Temporal graph learning with time-aware neighbor sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset CSV path.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Sampling strategy: recent | uniform | expanded:<r> | tns.
    #[arg(long)]
    strategy: Option<String>,
    /// Neighbor budget S.
    #[arg(long)]
    budget: Option<usize>,
    /// Aggregation layers (1 or 2).
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Learning-rate factor for the expansion-learning modules.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run output directory (defaults to TNS_OUT_ROOT or ./runs).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(data) = &self.data {
            cfg.dataset = Some(data.clone());
            cfg.synthetic = None;
        }
        if let Some(s) = &self.strategy {
            cfg.strategy = s.parse::<Strategy>()?;
        }
        if let Some(v) = self.budget {
            cfg.budget = v;
        }
        if let Some(v) = self.layers {
            cfg.layers = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = Some(v.clone());
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted-period synthetic dataset (CSV + meta sidecar).
    Gen {
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 250)]
        users: usize,
        #[arg(long, default_value_t = 100)]
        items: usize,
        #[arg(long, default_value_t = 50_000)]
        events: usize,
        #[arg(long, default_value_t = 8)]
        p_max: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train a model and write run artifacts.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train one model per fixed expansion rate plus a learned-rate model.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated fixed rates, e.g. 1,2,4,8.
        #[arg(long, value_delimiter = ',')]
        rates: Vec<f64>,
    },
    /// Compare analytic gradients against central differences.
    Gradcheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Flip one analytic gradient coordinate (harness self-test).
        #[arg(long)]
        corrupt: bool,
        /// Pin rates to an integer; index-path tensors get skipped.
        #[arg(long)]
        at_integral: bool,
    },
    /// Evaluate a saved run's checkpoint on the test split.
    Eval {
        /// Run directory containing config.toml and checkpoint.bin.
        #[arg(long)]
        run_dir: PathBuf,
        /// Evaluate on a different dataset than the one trained on.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Gen { out, users, items, events, p_max, seed } => {
            if events == 0 {
                return Err(Error::Data("0 events requested".into()));
            }
            let syn = SyntheticConfig { users, items, events, p_max, seed, ..Default::default() };
            let summary = cmd_gen(&syn, &out)?;
            println!("{summary}");
            Ok(0)
        }
        Command::Train { cfg } => {
            let cfg = cfg.resolve()?;
            let artifacts = cmd_train(&cfg)?;
            println!(
                "run {} | test accuracy {:.4} ap {:.4} auc {:.4} | rates mean {:.3}",
                artifacts.run_dir.display(),
                artifacts.metrics.test.accuracy,
                artifacts.metrics.test.average_precision,
                artifacts.metrics.test.auc,
                artifacts.metrics.final_rates.mean,
            );
            Ok(0)
        }
        Command::Sweep { cfg, rates } => {
            let cfg = cfg.resolve()?;
            let artifacts = cmd_sweep(&cfg, &rates)?;
            println!("rate,accuracy,ap,val_accuracy,val_ap");
            for row in &artifacts.rows {
                println!(
                    "{},{:.4},{:.4},{:.4},{:.4}",
                    row.rate,
                    row.accuracy,
                    row.average_precision,
                    row.val_accuracy,
                    row.val_average_precision
                );
            }
            println!("artifacts in {}", artifacts.run_dir.display());
            Ok(0)
        }
        Command::Gradcheck { cfg, corrupt, at_integral } => {
            let cfg = cfg.resolve()?;
            let report = cmd_gradcheck(&cfg, GradCheckOptions { corrupt, at_integral })?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(if report.pass { 0 } else { 2 })
        }
        Command::Eval { run_dir, data } => {
            let entry = cmd_eval(&run_dir, data.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&entry)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
