use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedsim::harness::{self, Arm, ExperimentConfig, HarnessError, SweepGrid};
use fedsim::metrics::{write_cost_csv, CostRow};

#[derive(Parser)]
#[command(
    name = "fedsim",
    version,
    about = "Federated distillation / augmentation simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    arm: Option<Arm>,
    /// Number of devices (M).
    #[arg(long)]
    devices: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the partition manifest only.
    Partition(Common),
    /// Run one experiment.
    Run(Common),
    /// Print per-device communication cost without training.
    Cost {
        /// Arm to cost; all four exchange arms when omitted.
        #[arg(long)]
        arm: Option<Arm>,
        #[arg(long, default_value_t = 16)]
        rounds: u64,
        #[arg(long, default_value_t = 10)]
        labels: u64,
        #[arg(long, default_value_t = 15)]
        seed_samples: u64,
        /// Reads `[accounting]` from this config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a grid of experiments and write `sweep.csv`.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Device counts, e.g. `2,4,6,8,10`.
        #[arg(long, value_delimiter = ',')]
        grid_devices: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        grid_redundant: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        grid_targets: Vec<usize>,
    },
}

fn load(c: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = Some(o.clone());
    }
    if let Some(a) = c.arm {
        cfg.arm = a;
    }
    if let Some(m) = c.devices {
        cfg.partition.num_devices = m;
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    if let Some(r) = c.repeats {
        cfg.repeats = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_summary(rows: &[harness::SummaryRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(std::io::stdout());
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Partition(c) => {
            let cfg = load(&c)?;
            let manifests = harness::partition_only(&cfg)?;
            let refs: Vec<_> = manifests.iter().collect();
            match &cfg.out_dir {
                Some(dir) => {
                    std::fs::create_dir_all(dir)?;
                    harness::write_manifests(&dir.join("partition_manifest.json"), &refs)?;
                }
                None => println!(
                    "{}",
                    serde_json::to_string_pretty(&refs).map_err(std::io::Error::from)?
                ),
            }
        }
        Command::Run(c) => {
            let cfg = load(&c)?;
            let result = harness::run_experiment(&cfg)?;
            print_summary(std::slice::from_ref(&result.summary))?;
        }
        Command::Cost {
            arm,
            rounds,
            labels,
            seed_samples,
            config,
            out,
        } => {
            let accounting = match config {
                Some(p) => ExperimentConfig::from_path(&p)?.accounting,
                None => Default::default(),
            };
            let arms = match arm {
                Some(a) => vec![a],
                None => vec![Arm::Fd, Arm::FdFaug, Arm::Fl, Arm::FlFaug],
            };
            let rows: Vec<CostRow> = arms
                .into_iter()
                .map(|a| {
                    let l = harness::cost_calculator(a, rounds, labels, &accounting, seed_samples);
                    CostRow::from_ledger(a.name(), &l)
                })
                .collect();
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    write_cost_csv(std::fs::File::create(dir.join("cost.csv"))?, &rows)?;
                }
                None => write_cost_csv(std::io::stdout(), &rows)?,
            }
        }
        Command::Sweep {
            common,
            grid_devices,
            grid_redundant,
            grid_targets,
        } => {
            let cfg = load(&common)?;
            let grid = SweepGrid {
                devices: grid_devices,
                redundant_counts: grid_redundant,
                target_counts: grid_targets,
            };
            let rows = harness::sweep(&cfg, &grid)?;
            print_summary(&rows)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else if e.is_divergence() {
                ExitCode::from(3)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
