use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hexafault::allocation::{
    build_a, reconfigure, sphere_directions, worst_direction, AllocationMatrix, EnvelopeMethod, RotorLayout,
};
use hexafault::harness::{
    compare_runs, compute_metrics, emit, monte_carlo, run_scenario, write_key_values, HarnessError, ScenarioConfig,
};

#[derive(Parser)]
#[command(name = "hexafault", version, about = "Fault-tolerant hexarotor simulation")]
struct Cli {
    /// Directory for logs, plots and reports.
    #[arg(long, short, global = true, default_value = "out")]
    out: PathBuf,
    /// Override the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Increase log verbosity (-v info, -vv debug, -vvv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its log, metrics and plots.
    Run { config: PathBuf },
    /// Run a scenario twice, with and without GP compensation.
    Compare {
        config: PathBuf,
        #[arg(long, required = true)]
        toggle_gp: bool,
    },
    /// Sweep consecutive seeds and check the ultimate bounds.
    Montecarlo {
        config: PathBuf,
        #[arg(long, default_value_t = 50)]
        seeds: usize,
    },
    /// Worst-case torque envelope at hover for every single-rotor failure.
    Envelope {
        config: PathBuf,
        #[arg(long, default_value_t = 2000)]
        directions: usize,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, HarnessError> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config } => {
            let cfg = load(&config, cli.seed)?;
            let log = run_scenario(&cfg)?;
            let report = compute_metrics(&log);
            let files = emit(&log, &report, &cli.out)?;
            println!("wrote {} ({} rows)", files.log_csv.display(), log.rows.len());
            for (k, v) in report.key_values() {
                println!("{k}={v}");
            }
            if !log.is_completed() {
                return Err(HarnessError::Run(format!("{:?}", log.status)));
            }
        }
        Command::Compare { config, toggle_gp } => {
            debug_assert!(toggle_gp);
            let cfg = load(&config, cli.seed)?;
            let cmp = compare_runs(&cfg)?;
            emit(&cmp.with_log, &cmp.with_gp, &cli.out.join("on"))?;
            emit(&cmp.without_log, &cmp.without_gp, &cli.out.join("off"))?;
            write_key_values(&cli.out.join("comparison.txt"), &cmp.key_values())?;
            println!(
                "position MSE with GP {:.6} m², without {:.6} m², improvement {:.1}%",
                cmp.with_gp.position_mse_total, cmp.without_gp.position_mse_total, cmp.improvement_pct
            );
            println!(
                "PWM roughness with GP {:.5}, without {:.5}",
                cmp.with_gp.pwm_roughness, cmp.without_gp.pwm_roughness
            );
        }
        Command::Montecarlo { config, seeds } => {
            let cfg = load(&config, cli.seed)?;
            let report = monte_carlo(&cfg, seeds)?;
            write_key_values(&cli.out.join("montecarlo.txt"), &report.key_values())?;
            println!(
                "{} runs: ζ inside b_n in {:.1}%, η inside c_n in {:.1}% (δ = {})",
                report.outcomes.len(),
                100.0 * report.zeta_fraction,
                100.0 * report.eta_fraction,
                report.delta
            );
            let aborted = report.outcomes.iter().filter(|o| !o.completed).count();
            if aborted > 0 {
                return Err(HarnessError::Run(format!("{aborted} runs aborted")));
            }
        }
        Command::Envelope { config, directions } => {
            if directions == 0 {
                return Err(HarnessError::Config("--directions must be positive".into()));
            }
            let cfg = load(&config, cli.seed)?;
            let layout = cfg.layout()?;
            let params = cfg.inertia()?;
            let f_z = params.mass * params.gravity;
            let dirs = sphere_directions(directions);
            let env = |a: &AllocationMatrix, l: &RotorLayout| {
                worst_direction(a, l, f_z, &dirs, EnvelopeMethod::Exact).map_err(|e| HarnessError::Run(e.to_string()))
            };
            let mut kv = Vec::new();
            let (alpha, d) = env(&build_a(&layout), &layout)?;
            println!("nominal    α = {alpha:.4} N·m along [{:.3}, {:.3}, {:.3}]", d.x, d.y, d.z);
            kv.push(("nominal".to_string(), alpha.to_string()));
            for failed in 1..=6 {
                let (l, a) = reconfigure(&layout, failed).map_err(|e| HarnessError::Run(e.to_string()))?;
                let (alpha, d) = env(&a, &l)?;
                println!("rotor {} out α = {alpha:.4} N·m along [{:.3}, {:.3}, {:.3}]", failed, d.x, d.y, d.z);
                kv.push((format!("rotor{}_failed", failed), alpha.to_string()));
            }
            write_key_values(&cli.out.join("envelope.txt"), &kv)?;
        }
    }
    Ok(())
}

fn execute<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code() as u8;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code() as u8
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(execute(std::env::args_os()))
}
