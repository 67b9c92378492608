use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use credsim::harness::presets::{self, PRESETS};
use credsim::harness::{run_all, sweep, Format, Report, RunError, Scenario};

/// Credit scheduler theft-of-service simulator.
#[derive(Parser)]
#[command(name = "credsim", version)]
struct Cli {
    /// Base seed for every replica.
    #[arg(long, global = true, env = "SIM_SEED")]
    seed: Option<u64>,
    /// Replicas per scheduler configuration.
    #[arg(long, global = true)]
    replicas: Option<u32>,
    /// Virtual time per replica, e.g. `10s` or `500ms`.
    #[arg(long, global = true)]
    horizon: Option<String>,
    #[arg(long, global = true, default_value = "csv")]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run { scenario: PathBuf },
    /// Run a scenario once per value of a numeric parameter.
    Sweep {
        scenario: PathBuf,
        /// Dotted key such as `vm.0.spin` or `hogs`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Run a built-in experiment.
    Preset { name: String },
    /// Check a scenario file without running it.
    Validate { scenario: PathBuf },
    /// List built-in experiments.
    ListPresets,
}

enum Failure {
    Usage(String),
    Run(RunError),
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Failure::Run(e)
    }
}

impl From<credsim::harness::ScenarioError> for Failure {
    fn from(e: credsim::harness::ScenarioError) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn apply_overrides(cli: &Cli, sc: &mut Scenario) -> Result<(), Failure> {
    if let Some(seed) = cli.seed {
        sc.seed = seed;
    }
    if let Some(r) = cli.replicas {
        if r == 0 {
            return Err(Failure::Usage("--replicas must be at least 1".into()));
        }
        sc.replicas = r;
    }
    if let Some(h) = &cli.horizon {
        let h = credsim::harness::scenario::parse_duration(h).map_err(Failure::Usage)?;
        if h <= sc.warmup {
            return Err(Failure::Usage(format!("--horizon must exceed the {} warmup", sc.warmup)));
        }
        sc.horizon = h;
    }
    Ok(())
}

fn output(cli: &Cli, report: &Report) -> Result<(), Failure> {
    match &cli.out {
        Some(path) => report.emit(cli.format, path).map_err(|e| Failure::Usage(e.to_string())),
        None => {
            let text = report.render(cli.format).map_err(|e| Failure::Usage(e.to_string()))?;
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Run { scenario } => {
            let mut sc = Scenario::load(scenario)?;
            apply_overrides(cli, &mut sc)?;
            output(cli, &run_all(&[sc])?)
        }
        Command::Sweep { scenario, param, values } => {
            let mut sc = Scenario::load(scenario)?;
            apply_overrides(cli, &mut sc)?;
            output(cli, &sweep(&sc, param, values)?)
        }
        Command::Preset { name } => {
            let preset = presets::find(name).ok_or_else(|| {
                Failure::Usage(format!("unknown preset `{name}` (see `credsim list-presets`)"))
            })?;
            let mut scenarios = preset.scenarios();
            for sc in &mut scenarios {
                apply_overrides(cli, sc)?;
            }
            output(cli, &run_all(&scenarios)?)
        }
        Command::Validate { scenario } => {
            let sc = Scenario::load(scenario)?;
            println!(
                "{}: ok ({} vms on {} pcpus, {} scheduler(s), horizon {}, {} replicas)",
                sc.id,
                sc.vms.len(),
                sc.pcpus,
                sc.schedulers.len(),
                sc.horizon,
                sc.replicas
            );
            Ok(())
        }
        Command::ListPresets => {
            for p in PRESETS {
                println!("{:<16} {}", p.name, p.description);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
