//! `tfnewton` command-line harness.
//!
//! Usage:
//!   tfnewton invert  --kappa 100 --orders 2,3 --out-dir out
//!   tfnewton linreg  --config linreg.cfg --seed 3
//!   tfnewton logreg  --eps 1e-2 --t-max 8
//!   tfnewton budget  --eps 1e-2 --mu 0.1 --kappa-f 11 --d 5
//!   tfnewton scan-decrease --grid 500
//!
//! Exit codes: 0 on success, 2 when a budget is insufficient or an
//! iteration fails to converge, 1 on usage or any other error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tfnewton::harness::{
    logistic_kappa, run_budget, run_invert_experiment, run_linreg_experiment, run_logreg_experiment, run_scan,
    ExperimentConfig, Task,
};
use tfnewton::Error;

#[derive(Parser)]
#[command(name = "tfnewton", version, about = "Newton iterations and the linear-attention models that emulate them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Residual traces of order-n inverse iterations on a random SPD matrix.
    Invert(ExperimentArgs),
    /// Constructed in-context least squares against Newton oracles.
    Linreg(ExperimentArgs),
    /// Constructed damped Newton steps on logistic regression.
    Logreg(ExperimentArgs),
    /// Width and depth budget of the logistic construction.
    Budget(BudgetArgs),
    /// Grid scan of the constant-decrease bound.
    ScanDecrease(ScanArgs),
}

/// Every field of the experiment config; flags override `--config`.
#[derive(Args)]
struct ExperimentArgs {
    /// Flat `key = value` file with the same keys as the flags (underscored).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    /// Comma-separated iteration orders, e.g. `2,3`.
    #[arg(long, value_delimiter = ',')]
    orders: Option<Vec<usize>>,
    #[arg(long)]
    t_max: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct BudgetArgs {
    #[arg(long, default_value_t = 1e-2)]
    eps: f64,
    #[arg(long, default_value_t = 0.1)]
    mu: f64,
    /// Defaults to `(1 + mu)/mu`.
    #[arg(long)]
    kappa_f: Option<f64>,
    #[arg(long, default_value_t = 5)]
    d: usize,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ScanArgs {
    #[arg(long, default_value_t = 500)]
    grid: usize,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

fn resolve(task: Task, args: ExperimentArgs) -> tfnewton::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::defaults(task);
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)?;
        cfg.apply_text(&text)?;
        if cfg.task != task {
            return Err(Error::Parse(format!("config is for task `{}`, subcommand is `{task}`", cfg.task)));
        }
    }
    macro_rules! flag {
        ($($field:ident),*) => {$(
            if let Some(v) = args.$field {
                cfg.$field = v;
            }
        )*};
    }
    flag!(d, n, kappa, noise_std, mu, eps, orders, t_max, seed, batch, out_dir);
    cfg.validate()?;
    Ok(cfg)
}

fn run(command: Command) -> tfnewton::Result<()> {
    let written = match command {
        Command::Invert(a) => run_invert_experiment(&resolve(Task::Invert, a)?)?,
        Command::Linreg(a) => run_linreg_experiment(&resolve(Task::Linreg, a)?)?,
        Command::Logreg(a) => run_logreg_experiment(&resolve(Task::Logreg, a)?)?,
        Command::Budget(a) => {
            let kappa_f = a.kappa_f.unwrap_or_else(|| logistic_kappa(a.mu));
            let budget = run_budget(&a.out_dir, a.eps, a.mu, kappa_f, a.d)?;
            println!("{}", budget.to_json());
            vec![a.out_dir.join("budget.json")]
        }
        Command::ScanDecrease(a) => {
            let report = run_scan(&a.out_dir, a.grid)?;
            println!(
                "max h = {:.6e} at (x, c, c') = ({:.6}, {:.6}, {:.1e}); {} anomalies",
                report.max_h,
                report.argmax.0,
                report.argmax.1,
                report.argmax.2,
                report.anomalies.len()
            );
            vec![a.out_dir.join("scan_decrease.csv"), a.out_dir.join("scan_anomalies.csv")]
        }
    };
    for path in written {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
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
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_budget_or_convergence() { 2 } else { 1 })
        }
    }
}
