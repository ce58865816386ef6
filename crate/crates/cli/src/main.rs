use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dmimo_core::experiment::{
    run_estimate, run_figure3, run_scaling_sweep, run_validation, sweep_classifications, Curve, EstimateQuery,
    Scenario, FIGURE_CSV, SCALING_CSV,
};
use dmimo_core::{ExperimentConfig, LoArchitecture};

#[derive(Parser, Debug)]
#[command(name = "dmimo", version, about = "Downlink spectral efficiency of distributed massive MIMO with impaired hardware")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration file; overrides --preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration: desk or large.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo trials for `validate`.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compare closed forms against the Monte Carlo oracle.
    Validate {
        /// Write the CSV header and config echo only.
        #[arg(long)]
        dry_run: bool,
    },
    /// Spectral efficiency against N for every hardware curve.
    Figure3 {
        #[arg(long)]
        drops: Option<usize>,
    },
    /// SINR trajectories under hardware scaling with trend verdicts.
    Scaling {
        /// Points of the doubling grid.
        #[arg(long)]
        points: Option<usize>,
    },
    /// Closed-form breakdown for one UE.
    Estimate {
        #[arg(long, default_value_t = 0)]
        drop: usize,
        #[arg(long)]
        antennas: usize,
        #[arg(long, default_value_t = 0)]
        cell: usize,
        #[arg(long, default_value_t = 0)]
        ue: usize,
        /// DL symbol time; defaults to the last DL symbol.
        #[arg(long)]
        t: Option<i64>,
        #[arg(long, default_value = "clo")]
        lo: String,
        /// Scenario JSON to evaluate instead of a fresh drop.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Save the evaluated scenario as JSON.
        #[arg(long)]
        save_scenario: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> dmimo_core::Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(&common.preset)?,
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(trials) = common.trials {
        config.trials = trials;
    }
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    Ok(config)
}

fn parse_lo(s: &str) -> dmimo_core::Result<LoArchitecture> {
    match s.to_ascii_lowercase().as_str() {
        "clo" => Ok(LoArchitecture::Clo),
        "slo" => Ok(LoArchitecture::Slo),
        other => Err(dmimo_core::Error::Config(format!("unknown LO architecture `{other}` (clo or slo)"))),
    }
}

fn run(cli: Cli) -> dmimo_core::Result<ExitCode> {
    let mut config = load_config(&cli.common)?;
    match cli.command {
        Command::Validate { dry_run } => {
            if dry_run {
                config.trials = 0;
            }
            let outcome = run_validation(&config)?;
            match outcome.passed {
                None => {
                    println!("dry run: wrote {}", outcome.csv_path.display());
                    Ok(ExitCode::SUCCESS)
                }
                Some(passed) => {
                    println!(
                        "{} trials, {} entries, {:.1}% within |z| <= {}: {}",
                        outcome.report.trials,
                        outcome.report.entries.len(),
                        100.0 * outcome.fraction_within,
                        config.validation.z_bound,
                        if passed { "PASS" } else { "FAIL" }
                    );
                    println!("wrote {}", outcome.csv_path.display());
                    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
                }
            }
        }
        Command::Figure3 { drops } => {
            if let Some(d) = drops {
                config.drops = d;
            }
            let result = run_figure3(&config)?;
            let last = *config.scenario.antennas.iter().max().unwrap_or(&0);
            for row in result.rows.iter().filter(|r| r.antennas == last) {
                let lo = if row.curve == Curve::Ideal { "any" } else { row.lo.as_str() };
                println!("N = {last:>5} {:<11} {lo:<3} {:.4} bit/s/Hz", row.curve.as_str(), row.spectral_efficiency);
            }
            println!("wrote {}", config.output_dir.join(FIGURE_CSV).display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Scaling { points } => {
            if let Some(p) = points {
                config.scaling.sweep_points = p;
            }
            let rows = run_scaling_sweep(&config)?;
            for (case, trend, holds) in sweep_classifications(&rows) {
                println!(
                    "{} z1={} z2={} z3={}: {} (law {})",
                    case.lo,
                    case.z1,
                    case.z2,
                    case.z3,
                    trend.as_str(),
                    if holds { "holds" } else { "violated" }
                );
            }
            println!("wrote {}", config.output_dir.join(SCALING_CSV).display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Estimate { drop, antennas, cell, ue, t, lo, scenario, save_scenario } => {
            let loaded = scenario.as_deref().map(Scenario::load_json).transpose()?;
            let query = EstimateQuery {
                drop,
                antennas,
                cell,
                ue,
                t: t.unwrap_or_else(|| config.frame.last_dl()),
                lo: parse_lo(&lo)?,
            };
            let outcome = run_estimate(&config, &query, loaded.as_ref())?;
            if let Some(path) = save_scenario {
                match &loaded {
                    Some(s) => s.save_json(&path)?,
                    None => dmimo_core::experiment::build_drop(&config, drop)?.save_json(&path)?,
                }
            }
            let p = &outcome.point;
            println!("signal       {:.6e}", p.signal);
            println!("interference {:.6e}", p.interference_total());
            println!("self term    {:.6e}", p.self_term);
            println!("noise        {:.6e}", p.noise);
            println!("sinr         {:.6e}", p.sinr);
            println!("rate         {:.6} bit/s/Hz", outcome.rate);
            println!("limit sinr   {:.6e}", outcome.asymptote.sinr);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
