use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pessim_drive::config::ExperimentConfig;
use pessim_drive::{plot, report, runner, sweep};
use pessim_drive_core::CoreError;

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;
const EXIT_BOUND_VIOLATION: u8 = 4;

#[derive(Parser)]
#[command(name = "pessim-drive", about = "Pessimistic multi-agent MBRL traffic experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunFlags {
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    d: Option<f64>,
    #[arg(long)]
    rollout_len: Option<usize>,
    #[arg(long, value_name = "best|avg|final")]
    pgd_select: Option<String>,
    #[arg(long)]
    pgd_iters: Option<usize>,
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value config file applied before the flags above
    #[arg(long)]
    config: Option<PathBuf>,
}

impl RunFlags {
    fn build(&self) -> Result<ExperimentConfig, CoreError> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)?;
            cfg.apply_file(&text)?;
        }
        if let Some(v) = &self.algo {
            cfg.apply("algo", v)?;
        }
        if let Some(v) = self.d {
            cfg.d = v;
        }
        if let Some(v) = self.rollout_len {
            cfg.rollout_len = v;
        }
        if let Some(v) = &self.pgd_select {
            cfg.apply("pgd_select", v)?;
        }
        if let Some(v) = self.pgd_iters {
            cfg.pgd_iters = v;
        }
        if let Some(v) = self.xi {
            cfg.xi = v;
        }
        if let Some(v) = self.episodes {
            cfg.episodes = v;
        }
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.out_dir = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train with one configuration and seed.
    Run(RunFlags),
    /// One run per (value, seed) for a single parameter, aggregated.
    Sweep {
        #[command(flatten)]
        flags: RunFlags,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long, value_delimiter = ',', default_values_t = sweep::DEFAULT_SEEDS)]
        seeds: Vec<u64>,
    },
    /// Render an SVG from a run or sweep CSV.
    Plot {
        #[arg(long, value_name = "CSV")]
        r#in: PathBuf,
        #[arg(long, value_name = "SVG")]
        out: PathBuf,
    },
    /// Lemma suite and PAC-bound evaluation on tabular instances.
    Boundlab {
        #[arg(long, default_value_t = 10)]
        grid: usize,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn thread_pool_init() {
    if let Ok(v) = std::env::var("PESSIM_DRIVE_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
}

fn exit_code_for(e: &CoreError) -> u8 {
    match e {
        CoreError::NonFinite(_) => EXIT_DIVERGENCE,
        _ => EXIT_CONFIG,
    }
}

fn main() -> ExitCode {
    thread_pool_init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(flags) => match flags.build().and_then(|cfg| runner::run(&cfg)) {
            Ok(art) => {
                println!("run complete: {} episodes -> {}", art.utilities.len(), art.out_dir.display());
                Ok(())
            }
            Err(e) => Err(e),
        },
        Command::Sweep {
            flags,
            param,
            values,
            seeds,
        } => match flags
            .build()
            .and_then(|cfg| sweep::sweep(&cfg, &param, &values, &seeds))
        {
            Ok(path) => {
                println!("sweep complete: {}", path.display());
                Ok(())
            }
            Err(e) => Err(e),
        },
        Command::Plot { r#in, out } => match plot::plot_csv(&r#in, &out) {
            Ok(()) => {
                println!("wrote {}", out.display());
                Ok(())
            }
            Err(e) => Err(e),
        },
        Command::Boundlab { grid, delta, out } => {
            match report::boundlab_report(&out, grid, delta) {
                Ok(outcome) => {
                    println!(
                        "boundlab report: {} (lemma failures {}, violation fraction {:.3})",
                        outcome.report_path.display(),
                        outcome.lemma_failures,
                        outcome.theorem_violation_fraction
                    );
                    if outcome.passed {
                        Ok(())
                    } else {
                        eprintln!("boundlab checks failed");
                        return ExitCode::from(EXIT_BOUND_VIOLATION);
                    }
                }
                Err(e) => Err(e),
            }
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
