//! `cemd-bench`: experiment and verification harness.

mod commands;
mod config;

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{Failure, Report, Sabotage};
use config::Config;

#[derive(Parser)]
#[command(name = "cemd-bench", version, about = "Recovery experiments and oracle checks for the CEMD model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand)]
enum Command {
    /// Seeded recovery trials.
    ///
    /// CSV columns: trial,seed,h,w,s,B,m,algo,noise,iterations,error,threshold,success
    /// and wall_ms with --timing. success is error <= 1e-6 ||x|| without noise and
    /// error <= (1 + beta/(1-alpha)) ||e|| with noise.
    Recover,
    /// Success rate over the m_grid x b_grid sweep.
    ///
    /// CSV columns: m,B,trials,successes,success_rate
    Phase,
    /// Head and tail guarantees against brute-force enumeration.
    ///
    /// CSV columns: instance,norm,oracle,holds,value,optimum,emd,in_output_model,returned,witness.
    /// Exits 1 on any violation.
    OracleCheck {
        /// Deliberately break one oracle.
        #[arg(long, value_enum)]
        sabotage: Option<SabotageArg>,
    },
    /// Adversarial tail oracle that stalls plain model-IHT.
    ///
    /// CSV columns: trial,seed,n,m,norm_a_sq,threshold,condition_holds,tail_inequality_holds,
    /// iterates_stay_zero,adversarial_error,contrast_error. Exits 1 unless both rates reach 95%.
    Counterexample,
    /// Lower bound on the model-RIP constant of random operators.
    ///
    /// CSV columns: trial,seed,operator,norm,samples,delta_lower
    RipEstimate,
}

#[derive(Clone, Copy, ValueEnum)]
enum SabotageArg {
    Head,
    Tail,
}

#[derive(Args)]
struct Flags {
    /// Grid height.
    #[arg(long, global = true)]
    h: Option<usize>,
    /// Grid width.
    #[arg(long, global = true)]
    w: Option<usize>,
    /// Nonzeros per column.
    #[arg(long, global = true)]
    s: Option<usize>,
    /// EMD budget.
    #[arg(long = "B", global = true)]
    budget: Option<u64>,
    /// Number of measurements.
    #[arg(long, global = true)]
    m: Option<usize>,
    /// Noise level ||e|| / ||Ax||.
    #[arg(long, global = true)]
    noise: Option<f64>,
    /// am-iht, am-cosamp or am-iht-rip1.
    #[arg(long, global = true)]
    algo: Option<String>,
    /// Left degree of expander operators.
    #[arg(long, global = true)]
    d_deg: Option<usize>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Iteration cap of each recovery run.
    #[arg(long, global = true)]
    iters: Option<usize>,
    #[arg(long, global = true, env = "CEMD_SEED")]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// approx or exact.
    #[arg(long, global = true)]
    head: Option<String>,
    /// approx or exact.
    #[arg(long, global = true)]
    tail: Option<String>,
    /// Boosting rounds, or auto.
    #[arg(long, global = true)]
    boost: Option<String>,
    /// Tail EMD relaxation factor d.
    #[arg(long, global = true)]
    tail_d: Option<f64>,
    /// Tail search accuracy.
    #[arg(long, global = true)]
    tail_delta: Option<f64>,
    /// Comma-separated m values for phase.
    #[arg(long, global = true)]
    m_grid: Option<String>,
    /// Comma-separated B values for phase.
    #[arg(long, global = true)]
    b_grid: Option<String>,
    /// Ambient dimension of counterexample.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Tail approximation factor of counterexample.
    #[arg(long, global = true)]
    c: Option<f64>,
    /// Random supports per RIP estimate.
    #[arg(long, global = true)]
    rip_trials: Option<usize>,
    /// key=value file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Add a wall-time column (breaks byte-identical reruns).
    #[arg(long, global = true)]
    timing: bool,
    /// CSV destination; stdout when absent.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
}

impl Flags {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let pairs: [(&'static str, Option<String>); 22] = [
            ("h", self.h.map(|v| v.to_string())),
            ("w", self.w.map(|v| v.to_string())),
            ("s", self.s.map(|v| v.to_string())),
            ("B", self.budget.map(|v| v.to_string())),
            ("m", self.m.map(|v| v.to_string())),
            ("noise", self.noise.map(|v| v.to_string())),
            ("algo", self.algo.clone()),
            ("d_deg", self.d_deg.map(|v| v.to_string())),
            ("trials", self.trials.map(|v| v.to_string())),
            ("iters", self.iters.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("jobs", self.jobs.map(|v| v.to_string())),
            ("head", self.head.clone()),
            ("tail", self.tail.clone()),
            ("boost", self.boost.clone()),
            ("tail_d", self.tail_d.map(|v| v.to_string())),
            ("tail_delta", self.tail_delta.map(|v| v.to_string())),
            ("m_grid", self.m_grid.clone()),
            ("b_grid", self.b_grid.clone()),
            ("n", self.n.map(|v| v.to_string())),
            ("c", self.c.map(|v| v.to_string())),
            ("rip_trials", self.rip_trials.map(|v| v.to_string())),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k, v)))
            .collect()
    }

    fn resolve(&self) -> Result<Config, String> {
        let mut cfg = Config::default();
        if let Some(path) = &self.config {
            cfg.load(path)?;
        }
        for (key, value) in self.overrides() {
            cfg.set(key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: &Cli, cfg: &Config) -> Result<Report, Failure> {
    match &cli.command {
        Command::Recover => commands::recover(cfg, cli.flags.timing),
        Command::Phase => commands::phase(cfg),
        Command::OracleCheck { sabotage } => commands::oracle_check(
            cfg,
            sabotage.map(|s| match s {
                SabotageArg::Head => Sabotage::Head,
                SabotageArg::Tail => Sabotage::Tail,
            }),
        ),
        Command::Counterexample => commands::counterexample(cfg),
        Command::RipEstimate => commands::rip_estimate(cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match cli.flags.resolve() {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    if cli.flags.print_config {
        print!("{}", cfg.lines());
        return ExitCode::SUCCESS;
    }
    let report = match run(&cli, &cfg) {
        Ok(r) => r,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let written = match &cli.flags.output {
        Some(path) => fs::write(path, &report.csv),
        None => io::stdout().lock().write_all(report.csv.as_bytes()),
    };
    if let Err(e) = written {
        eprintln!("error: cannot write output: {e}");
        return ExitCode::from(2);
    }
    eprintln!("{}", report.summary);
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
