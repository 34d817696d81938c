use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mcr2_precoding::checks::{grad_check, lemma1_check, lemma2_check};
use mcr2_precoding::harness::{
    mean_stderr, median, run_scenario, sphere_experiment, sweep, write_run, write_sphere, write_sweep, Scheme, ScenarioConfig, SphereConfig,
    SweepAxis,
};
use mcr2_precoding::instance::random_instance;
use mcr2_precoding::linalg::Field;
use mcr2_precoding::{seeds, Result};

/// Coding-rate-reduction precoding simulator.
#[derive(Parser)]
#[command(name = "mcr2-sim", version)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Restrict to these schemes (repeatable or comma separated).
    #[arg(long, value_delimiter = ',')]
    scheme: Vec<Scheme>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    p0_dbm: Option<f64>,
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long)]
    rx_antennas: Option<usize>,
    #[arg(long)]
    test_samples: Option<usize>,
    #[arg(long)]
    noise_trials: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
}

impl Common {
    fn scenario(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::from_json_file(p)?,
            None => ScenarioConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if !self.scheme.is_empty() {
            cfg.schemes = self.scheme.clone();
        }
        if let Some(v) = self.draws {
            cfg.channel_draws = v;
        }
        if let Some(v) = self.p0_dbm {
            cfg.p0_dbm = v;
        }
        if let Some(v) = self.slots {
            cfg.slots = v;
        }
        if let Some(v) = self.rx_antennas {
            cfg.rx_antennas = v;
        }
        if let Some(v) = self.test_samples {
            cfg.test_samples = v;
        }
        if let Some(v) = self.noise_trials {
            cfg.noise_trials = v;
        }
        if let Some(v) = self.eps {
            cfg.eps = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo run of one scenario.
    Run(Common),
    /// Repeat a scenario over values of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// power, slots or rx_antennas.
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        values: Vec<f64>,
    },
    /// Three-class sphere experiment on a real 3x3 channel.
    Sphere {
        /// Sphere config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        snr_db: Option<f64>,
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Check the log-det variational identities on random instances.
    LemmaCheck {
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare the analytic gradient with central differences.
    GradCheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(common) => {
            let cfg = common.scenario()?;
            let record = run_scenario(&cfg)?;
            write_run(&record, &common.out)?;
            for a in record.aggregates.iter().filter(|a| a.metric == "delta_r" || a.metric == "accuracy") {
                println!("{:<9} {:<9} {:.6e} ± {:.2e}", a.scheme, a.metric, a.mean, a.stderr);
            }
        }
        Command::Sweep { common, axis, values } => {
            let cfg = common.scenario()?;
            let points = sweep(&cfg, axis, &values)?;
            write_sweep(&points, axis, &common.out)?;
            for p in &points {
                for &s in &p.record.config.schemes {
                    let a = p.record.aggregate(s, "accuracy").expect("aggregated");
                    println!("{}={:<8} {:<9} accuracy {:.4} ± {:.4}", axis.name(), p.value, s, a.mean, a.stderr);
                }
            }
        }
        Command::Sphere { config, seed, out, snr_db, draws } => {
            let mut cfg: SphereConfig = match config {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => SphereConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(s) = snr_db {
                cfg.snr_db = s;
            }
            if let Some(d) = draws {
                cfg.channel_draws = d;
            }
            let record = sphere_experiment(&cfg)?;
            write_sphere(&record, &out)?;
            for s in [Scheme::Mcr2, Scheme::Identity] {
                let (m, e) = mean_stderr(&record.accuracies(s));
                println!("{s:<9} accuracy {m:.4} ± {e:.4}  median volume {:.4e}", median(&record.volumes(s)));
            }
        }
        Command::LemmaCheck { instances, seed } => {
            let mut rng = seeds::rng(seed);
            let (mut r1, mut r2, mut gain) = (0f64, 0f64, f64::NEG_INFINITY);
            for i in 0..instances {
                let a = lemma1_check(1 + i % 8, 5, &mut rng)?;
                let b = lemma2_check(1 + i % 6, 1 + (i / 6) % 5, 5, &mut rng)?;
                r1 = r1.max(a.residual);
                r2 = r2.max(b.residual);
                gain = gain.max(a.max_gain).max(b.max_gain);
            }
            println!("lemma 1 max residual {r1:.3e}\nlemma 2 max residual {r2:.3e}\nmax perturbation gain {gain:.3e}");
        }
        Command::GradCheck { instances, seed } => {
            let mut worst = 0f64;
            for i in 0..instances {
                let field = if i % 2 == 0 { Field::Complex } else { Field::Real };
                let inst = random_instance(field, 2, 2, 3, 1 + i % 2, seeds::derive(seed, i as u64));
                let mut rng = seeds::rng(seeds::derive_named(seeds::derive(seed, i as u64), "directions"));
                worst = worst.max(grad_check(&inst.v, &inst.chan, &inst.stats, &inst.params, 8, 1e-5, &mut rng)?);
            }
            println!("worst relative error {worst:.3e}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
