use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use reframe_cli::commands::battery_table;
use reframe_cli::plot::{plotdata, Quantity};
use reframe_cli::trace::read_trace;
use reframe_cli::{
    cmd_analyze, cmd_gen_topology, cmd_run, cmd_verify, emit_config, exit, parse_config, CliError, RunOptions,
};
use reframe_core::verify::BatterySettings;
use reframe_core::TopologyKind;

#[derive(Parser)]
#[command(name = "reframe", version, about = "Simulate and verify reframing clock control on directed networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write its trace CSV and summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Write trace.csv, summary.json and config.json here instead of
        /// printing the trace to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        discrete: bool,
        #[arg(long)]
        continue_on_fault: bool,
        /// Turn parameter warnings into errors.
        #[arg(long)]
        strict: bool,
    },
    /// Closed-form predictions for a scenario, without simulating.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        strict: bool,
    },
    /// Run the verification battery. Exits 1 if any check fails.
    Verify {
        /// Battery settings (JSON); defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Turn a trace CSV into labeled plot series.
    Plotdata {
        trace: PathBuf,
        /// omega | beta-rel
        #[arg(long, default_value = "omega")]
        quantity: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a generated topology as an explicit-edge config fragment.
    GenTopology {
        #[arg(long)]
        kind: TopologyKind,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.3)]
        extra: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))
}

fn emit(out: &Option<PathBuf>, name: &str, contents: &str) -> Result<(), CliError> {
    match out {
        Some(dir) => write_file(dir, name, contents),
        None => {
            let mut stdout = std::io::stdout().lock();
            match stdout.write_all(contents.as_bytes()).and_then(|_| stdout.flush()) {
                // a closed pipe (`| head`) is the reader's choice, not an error
                Err(e) if e.kind() != ErrorKind::BrokenPipe => Err(CliError::io("<stdout>", e)),
                _ => Ok(()),
            }
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run { config, out, seed, discrete, continue_on_fault, strict } => {
            let cfg = parse_config(&config)?;
            let opts = RunOptions { discrete, continue_on_fault, strict, seed };
            let result = cmd_run(&cfg, opts)?;
            for w in &result.summary.warnings {
                eprintln!("warning: {w}");
            }
            emit(&out, "trace.csv", &result.csv)?;
            if let Some(dir) = &out {
                write_file(dir, "summary.json", &to_json(&result.summary))?;
                write_file(dir, "config.json", &(emit_config(&result.config) + "\n"))?;
            }
            let s = &result.summary;
            eprintln!(
                "{} samples to t = {}; reframe at {}; terminal |beta - beta_off| = {:.3e}",
                s.samples,
                s.horizon,
                s.reframe_time.map_or("never".to_string(), |t| t.to_string()),
                s.gaps.terminal_beta_vs_offsets
            );
            if let Some(d) = &s.discrete {
                eprintln!("{} buffer fault(s){}", d.faults.len(), if d.aborted { ", run aborted" } else { "" });
            }
            Ok(if result.failed() { exit::FAILED } else { exit::OK })
        }
        Command::Analyze { config, out, seed, strict } => {
            let cfg = parse_config(&config)?;
            let report = cmd_analyze(&cfg, strict, seed)?;
            emit(&out, "analysis.json", &to_json(&report))?;
            Ok(exit::OK)
        }
        Command::Verify { config, out, seed, count } => {
            let mut settings = match &config {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                    let de = &mut serde_json::Deserializer::from_str(&text);
                    serde_path_to_error::deserialize::<_, BatterySettings>(de)
                        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
                }
                None => BatterySettings::default(),
            };
            if let Some(seed) = seed {
                settings.seed = seed;
            }
            if let Some(count) = count {
                settings.count = count;
            }
            let report = cmd_verify(&settings)?;
            emit(&out, "report.json", &to_json(&report))?;
            eprint!("{}", battery_table(&report));
            Ok(if report.all_pass { exit::OK } else { exit::FAILED })
        }
        Command::Plotdata { trace, quantity, out } => {
            let quantity: Quantity = quantity.parse()?;
            let text = std::fs::read_to_string(&trace).map_err(|e| CliError::io(&trace, e))?;
            let data = plotdata(&read_trace(&text)?, quantity)?;
            let name = match quantity {
                Quantity::Omega => "omega.dat",
                Quantity::BetaRel => "beta_rel.dat",
            };
            emit(&out, name, &data)?;
            Ok(exit::OK)
        }
        Command::GenTopology { kind, n, seed, extra, out } => {
            let frag = cmd_gen_topology(kind, n, seed, extra)?;
            emit(&out, "topology.json", &to_json(&frag))?;
            Ok(exit::OK)
        }
    }
}

fn main() -> ExitCode {
    let code = match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
