use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ihoc_core::error::Error;
use ihoc_core::experiment::{resolve, write_result, ConfigFile, Overrides, Problem, RunResult};
use ihoc_core::io::parse_vector;

#[derive(Parser)]
#[command(name = "ihoc", version, about = "Infinite-horizon optimal control by terminal-set regularization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one of the registered experiments (1-4) end to end.
    Experiment {
        id: u32,
        #[command(flatten)]
        opts: Common,
    },
    /// Fixed-horizon sweep over T with composite rollouts and the surrogate baseline.
    Sweep(Common),
    /// Free-final-time solve: transfer into the terminal set, then regulate.
    Solve(Common),
    /// Closed-loop LQR from x0 with no transfer phase.
    Regulate(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// pendulum, cartpole or double_integrator
    #[arg(long)]
    model: Option<String>,
    /// Initial state, e.g. "0,3pi/4,0,0"
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    /// Terminal-set level; selected automatically when omitted
    #[arg(long = "M", allow_negative_numbers = true)]
    level: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    dt: Option<f64>,
    /// Total episode length in steps
    #[arg(long)]
    steps: Option<usize>,
    /// Longest transfer horizon tried by the free-final-time solve
    #[arg(long)]
    t_max: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write the composite trajectory for every swept horizon
    #[arg(long)]
    emit_trajectories: bool,
    #[arg(long)]
    no_warm_start: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse(_) | Error::InvalidArgument(_) => 2,
        Error::Io(_) => 4,
        Error::NumericalBlowup { .. }
        | Error::NonFinite(_)
        | Error::Singular(_)
        | Error::NoConvergence { .. } => 3,
    }
}

fn problem(id: Option<u32>, opts: &Common) -> Result<Problem, Error> {
    let config = opts.config.as_deref().map(ConfigFile::load).transpose()?;
    let x0 = opts
        .x0
        .as_deref()
        .map(parse_vector)
        .transpose()
        .map_err(|e| Error::Config(format!("--x0: {e}")))?;
    let cli = Overrides {
        id,
        model: opts.model.clone(),
        x0,
        level: opts.level,
        dt: opts.dt,
        total_steps: opts.steps,
        t_max: opts.t_max,
        warm_start: opts.no_warm_start.then_some(false),
        emit_trajectories: opts.emit_trajectories.then_some(true),
    };
    let spec = resolve(config.as_ref(), &cli)?;
    Problem::new(&spec)
}

fn out_dir(opts: &Common, default: &str) -> PathBuf {
    opts.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn report(result: &RunResult) {
    println!("model {} level M = {}", result.spec.model, result.level);
    if let Some(s) = &result.surrogate {
        println!("surrogate cost (T = {}): {:.6}", s.horizon, s.cost);
        let hits = result.records.iter().filter(|r| r.hit_omega).count();
        println!("swept {} horizons, {} hit the terminal set", result.records.len(), hits);
    }
    if let Some(s) = &result.solution {
        if s.hit {
            println!("T* = {}", s.t_star);
        } else {
            println!("terminal set not reached within t_max = {}", result.spec.t_max);
        }
        println!(
            "J_M = {:.6}  transfer = {:.6}  expected regulation = {:.6}  actual regulation = {:.6}",
            s.j_m, s.transfer_cost, s.expected_regulation_cost, s.actual_regulation_cost
        );
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Experiment { id, opts } => {
            let p = problem(Some(id), &opts)?;
            let result = p.run()?;
            write_result(&result, &out_dir(&opts, &format!("out/exp{id}")))?;
            report(&result);
        }
        Command::Sweep(opts) => {
            let result = problem(None, &opts)?.sweep()?;
            write_result(&result, &out_dir(&opts, "out/sweep"))?;
            report(&result);
        }
        Command::Solve(opts) => {
            let p = problem(None, &opts)?;
            let result = p.solve()?;
            write_result(&result, &out_dir(&opts, "out/solve"))?;
            report(&result);
            if !result.solution.as_ref().is_some_and(|s| s.hit) {
                return Err(Error::NoConvergence {
                    iterations: p.spec.t_max,
                    last_change: f64::NAN,
                });
            }
        }
        Command::Regulate(opts) => {
            let (result, diverged, final_error, cost) = problem(None, &opts)?.regulate()?;
            write_result(&result, &out_dir(&opts, "out/regulate"))?;
            report(&result);
            println!(
                "{} cost = {cost:.6}, final |x~| = {final_error:.3e}",
                if diverged { "diverged," } else { "regulated," }
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ihoc: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
