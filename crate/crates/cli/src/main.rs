use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qlink_core::cli::output::FORMAT_VERSION;
use qlink_core::cli::presets::override_points;
use qlink_core::cli::{
    emit_results, preset_points, run_point, sweep_hash, ExperimentConfig, Format, Metadata,
    SweepPoint,
};
use qlink_core::purification::{round_spec, truth_table_csv, CircuitSpec, ErrorTarget, Scheme};
use qlink_core::sim_core::{run_trial_with, TrialOptions};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "qlink",
    version,
    about = "RuleSet-driven quantum link bootstrapping simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a figure preset or a single configuration.
    Run(RunArgs),
    /// Print exact reference tables.
    Oracle {
        #[command(subcommand)]
        what: OracleCmd,
    },
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Truth table of one purification circuit.
    Purification {
        #[arg(long)]
        scheme: String,
        /// Error type the primary stage detects first.
        #[arg(long, default_value = "x")]
        first: String,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct RunArgs {
    /// fig12 .. fig18
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a key, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Write the event trace and decision logs of trial 0 of each point.
    #[arg(long)]
    trace: bool,
}

enum Failure {
    Config(String),
    Runtime(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::Run(args) => run(args),
        Command::Oracle { what } => oracle(what),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn oracle(what: OracleCmd) -> Result<(), Failure> {
    match what {
        OracleCmd::Purification { scheme, first } => {
            let scheme = Scheme::parse(&scheme)
                .ok_or_else(|| Failure::Config(format!("unknown scheme `{scheme}`")))?;
            let spec = match first.to_ascii_lowercase().as_str() {
                "x" => round_spec(scheme, 0),
                "z" => CircuitSpec::new(scheme, ErrorTarget::ZFirst),
                other => {
                    return Err(Failure::Config(format!(
                        "--first must be x or z, got `{other}`"
                    )))
                }
            };
            print!("{}", truth_table_csv(&spec));
            Ok(())
        }
    }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let cfg_err = |e: &dyn std::fmt::Display| Failure::Config(e.to_string());
    let mut flags = Vec::new();
    if let Some(t) = args.trials {
        flags.push(format!("trials={t}"));
    }
    if let Some(s) = args.seed {
        flags.push(format!("seed_base={s}"));
    }
    flags.extend(args.set.iter().cloned());

    let (name, mut points) = match &args.preset {
        Some(p) => {
            let base = ExperimentConfig::default();
            (p.clone(), preset_points(p, &base).map_err(|e| cfg_err(&e))?)
        }
        None => {
            let cfg =
                ExperimentConfig::load(args.config.as_deref(), &flags).map_err(|e| cfg_err(&e))?;
            let label = cfg.protocol.label();
            let pt = SweepPoint {
                series: label,
                x_name: "length_km".into(),
                x: cfg.link.total_length_km,
                config: cfg,
            };
            ("run".to_string(), vec![pt])
        }
    };
    override_points(&mut points, &flags).map_err(|e| cfg_err(&e))?;

    let format = match args.format {
        FormatArg::Csv => Format::Csv,
        FormatArg::Json => Format::Json,
    };
    let meta = Metadata {
        version: FORMAT_VERSION.into(),
        config_hash: sweep_hash(&points),
        seed_base: points[0].config.seed_base,
    };

    let mut rows = Vec::with_capacity(points.len());
    for (i, pt) in points.iter().enumerate() {
        eprintln!(
            "[{}/{}] {} {}={} ({} trials)",
            i + 1,
            points.len(),
            pt.series,
            pt.x_name,
            pt.x,
            pt.config.trials
        );
        let (row, _) = run_point(&name, pt).map_err(|e| Failure::Runtime(e.to_string()))?;
        rows.push(row);
        if args.trace {
            write_trace(&args.out, &name, i, pt)?;
        }
    }

    let path = args.out.join(format!("{name}.{}", format.extension()));
    emit_results(&rows, &meta, format, &path).map_err(|e| Failure::Runtime(e.to_string()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn write_trace(
    out: &std::path::Path,
    name: &str,
    idx: usize,
    pt: &SweepPoint,
) -> Result<(), Failure> {
    let opts = TrialOptions {
        trace: true,
        decision_log: true,
    };
    let o = run_trial_with(&pt.config, pt.config.seed_base, opts)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let dir = out.join(format!("{name}-trace"));
    let io = |e: std::io::Error| Failure::Runtime(e.to_string());
    std::fs::create_dir_all(&dir).map_err(io)?;
    if let Some(t) = o.trace {
        std::fs::write(dir.join(format!("point{idx}.events")), t.join("\n") + "\n").map_err(io)?;
    }
    for (n, log) in o.decision_logs.iter().enumerate() {
        if let Some(l) = log {
            std::fs::write(
                dir.join(format!("point{idx}.node{n}.log")),
                l.join("\n") + "\n",
            )
            .map_err(io)?;
        }
    }
    Ok(())
}
